//! Shared annotation vocabulary: classes, boxes, sample records and the
//! invariants every emitted sample must satisfy.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Version written into every annotation record file.
pub const RECORD_SCHEMA: u32 = 1;

/// Attribute family of an annotated element (`data-pii`, `data-product`, `data-order`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Pii,
    Product,
    Order,
}

impl Kind {
    pub const ALL: [Kind; 3] = [Kind::Pii, Kind::Product, Kind::Order];

    pub fn as_str(self) -> &'static str {
        match self {
            Kind::Pii => "pii",
            Kind::Product => "product",
            Kind::Order => "order",
        }
    }

    /// The markup attribute carrying this family.
    pub fn attribute(self) -> &'static str {
        match self {
            Kind::Pii => "data-pii",
            Kind::Product => "data-product",
            Kind::Order => "data-order",
        }
    }

    pub fn from_attribute(name: &str) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.attribute() == name)
    }
}

impl FromStr for Kind {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Kind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| UnknownName(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown name `{0}`")]
pub struct UnknownName(pub String);

/// The nine fine-grained annotation classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FineLabel {
    Name,
    Address,
    Contact,
    Payment,
    OtherPii,
    ProductText,
    ProductImage,
    OrderInfo,
    InputField,
}

impl FineLabel {
    pub const ALL: [FineLabel; 9] = [
        FineLabel::Name,
        FineLabel::Address,
        FineLabel::Contact,
        FineLabel::Payment,
        FineLabel::OtherPii,
        FineLabel::ProductText,
        FineLabel::ProductImage,
        FineLabel::OrderInfo,
        FineLabel::InputField,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FineLabel::Name => "name",
            FineLabel::Address => "address",
            FineLabel::Contact => "contact",
            FineLabel::Payment => "payment",
            FineLabel::OtherPii => "other_pii",
            FineLabel::ProductText => "product_text",
            FineLabel::ProductImage => "product_image",
            FineLabel::OrderInfo => "order_info",
            FineLabel::InputField => "input_field",
        }
    }

    pub fn kind(self) -> Kind {
        match self {
            FineLabel::Name
            | FineLabel::Address
            | FineLabel::Contact
            | FineLabel::Payment
            | FineLabel::OtherPii
            | FineLabel::InputField => Kind::Pii,
            FineLabel::ProductText | FineLabel::ProductImage => Kind::Product,
            FineLabel::OrderInfo => Kind::Order,
        }
    }

    pub fn element_kind(self) -> ElementKind {
        match self {
            FineLabel::ProductImage => ElementKind::Image,
            FineLabel::InputField => ElementKind::Input,
            _ => ElementKind::Text,
        }
    }

    /// Accepts canonical names plus the aliases template authors tend to write.
    pub fn normalize(raw: &str) -> Option<FineLabel> {
        let key = raw.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        let label = match key.as_str() {
            "name" | "fullname" | "full_name" | "first_name" | "last_name" | "person" => {
                FineLabel::Name
            }
            "address" | "street" | "city" | "state" | "zip" | "postal_code" | "location" => {
                FineLabel::Address
            }
            "contact" | "email" | "phone" => FineLabel::Contact,
            "payment" | "card" | "card_number" | "cvv" | "expiry" => FineLabel::Payment,
            "other_pii" | "other" | "gift_message" | "security_code" | "instructions" => {
                FineLabel::OtherPii
            }
            "product_text" | "product_name" | "title" | "price" | "rating" | "quantity"
            | "brand" => FineLabel::ProductText,
            "product_image" | "image" => FineLabel::ProductImage,
            "order_info" | "order" | "order_id" | "tracking" | "total" | "date" => {
                FineLabel::OrderInfo
            }
            "input_field" | "input" | "field" => FineLabel::InputField,
            _ => return None,
        };
        Some(label)
    }
}

impl fmt::Display for FineLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FineLabel {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FineLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| UnknownName(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Text,
    Input,
    Image,
}

impl ElementKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ElementKind::Text => "text",
            ElementKind::Input => "input",
            ElementKind::Image => "image",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AnnotationClass {
    pub kind: Kind,
    pub fine_label: FineLabel,
    pub element_kind: ElementKind,
}

impl AnnotationClass {
    /// The consistent class for a fine label.
    pub fn of(label: FineLabel) -> Self {
        AnnotationClass {
            kind: label.kind(),
            fine_label: label,
            element_kind: label.element_kind(),
        }
    }

    pub fn is_consistent(&self) -> bool {
        *self == AnnotationClass::of(self.fine_label)
    }
}

/// Integer pixel box, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        BBox { x, y, w, h }
    }

    pub fn right(&self) -> u64 {
        self.x as u64 + self.w as u64
    }

    pub fn bottom(&self) -> u64 {
        self.y as u64 + self.h as u64
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn fits(&self, dims: Dims) -> bool {
        self.w > 0
            && self.h > 0
            && self.right() <= dims.width as u64
            && self.bottom() <= dims.height as u64
    }

    /// Scales every coordinate by an integer factor.
    pub fn scaled(&self, factor: u32) -> BBox {
        BBox::new(
            self.x * factor,
            self.y * factor,
            self.w * factor,
            self.h * factor,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub width: u32,
    pub height: u32,
}

impl Dims {
    pub fn new(width: u32, height: u32) -> Self {
        Dims { width, height }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Full,
    Clipped,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub cls: AnnotationClass,
    /// Config key the value came from; empty for input fields.
    pub source_key: String,
    pub line_index: u32,
    pub visibility: Visibility,
}

/// Form completion snapshot a sample was rendered in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FillTag {
    Empty,
    Partial(u32),
    Full,
}

impl FillTag {
    /// Grouping used by per-state breakdowns: `empty`, `partial` or `full`.
    pub fn group(&self) -> &'static str {
        match self {
            FillTag::Empty => "empty",
            FillTag::Partial(_) => "partial",
            FillTag::Full => "full",
        }
    }
}

impl fmt::Display for FillTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FillTag::Empty => f.write_str("empty"),
            FillTag::Partial(k) => write!(f, "partial_{k}"),
            FillTag::Full => f.write_str("full"),
        }
    }
}

impl FromStr for FillTag {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "empty" => Ok(FillTag::Empty),
            "full" => Ok(FillTag::Full),
            other => other
                .strip_prefix("partial_")
                .and_then(|k| k.parse::<u32>().ok())
                .filter(|k| *k >= 1)
                .map(FillTag::Partial)
                .ok_or_else(|| UnknownName(s.to_string())),
        }
    }
}

impl Serialize for FillTag {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FillTag {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

/// Identity of one rendered sample within a dataset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleId {
    pub layout_id: String,
    pub variant_index: u32,
    pub fill_tag: FillTag,
}

impl SampleId {
    pub fn new(layout_id: impl Into<String>, variant_index: u32, fill_tag: FillTag) -> Self {
        SampleId {
            layout_id: layout_id.into(),
            variant_index,
            fill_tag,
        }
    }

    /// Flat name usable as a file stem.
    pub fn file_stem(&self) -> String {
        format!(
            "{}__v{:03}__{}",
            self.layout_id, self.variant_index, self.fill_tag
        )
    }
}

impl fmt::Display for SampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}",
            self.layout_id, self.variant_index, self.fill_tag
        )
    }
}

impl FromStr for SampleId {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.rsplitn(3, '/');
        let (Some(fill), Some(variant), Some(layout)) = (parts.next(), parts.next(), parts.next())
        else {
            return Err(UnknownName(s.to_string()));
        };
        let variant_index = variant.parse().map_err(|_| UnknownName(s.to_string()))?;
        Ok(SampleId::new(layout, variant_index, fill.parse()?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSample {
    pub image_ref: String,
    pub layout_id: String,
    pub variant_index: u32,
    pub config_seed: u64,
    pub fill_state: FillTag,
    pub annotations: Vec<Annotation>,
    pub image_dims: Dims,
}

impl AnnotatedSample {
    pub fn id(&self) -> SampleId {
        SampleId::new(self.layout_id.clone(), self.variant_index, self.fill_state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Invariant {
    BoxBounds,
    ClassConsistency,
    LineIndexOnNonText,
    MissingSourceKey,
    DuplicateSlot,
}

impl fmt::Display for Invariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Invariant::BoxBounds => "box-bounds",
            Invariant::ClassConsistency => "class-consistency",
            Invariant::LineIndexOnNonText => "line-index-on-non-text",
            Invariant::MissingSourceKey => "missing-source-key",
            Invariant::DuplicateSlot => "duplicate-slot",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub invariant: Invariant,
    /// Index into `annotations` of the offending entry.
    pub annotation: usize,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} at annotation {}: {}",
            self.invariant, self.annotation, self.detail
        )
    }
}

/// Checks every sample invariant; never fails, returns the violations found.
///
/// Input annotations carry an empty source key by contract, so the
/// `(source_key, line_index)` uniqueness rule applies to the other kinds only.
pub fn validate_sample(sample: &AnnotatedSample) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut seen = HashSet::new();
    for (i, ann) in sample.annotations.iter().enumerate() {
        if !ann.bbox.fits(sample.image_dims) {
            violations.push(Violation {
                invariant: Invariant::BoxBounds,
                annotation: i,
                detail: format!(
                    "box {:?} outside {}x{} or degenerate",
                    ann.bbox, sample.image_dims.width, sample.image_dims.height
                ),
            });
        }
        if !ann.cls.is_consistent() {
            violations.push(Violation {
                invariant: Invariant::ClassConsistency,
                annotation: i,
                detail: format!(
                    "{} tagged {}/{}",
                    ann.cls.fine_label,
                    ann.cls.kind.as_str(),
                    ann.cls.element_kind.as_str()
                ),
            });
        }
        if ann.line_index > 0 && ann.cls.element_kind != ElementKind::Text {
            violations.push(Violation {
                invariant: Invariant::LineIndexOnNonText,
                annotation: i,
                detail: format!(
                    "line_index {} on {}",
                    ann.line_index,
                    ann.cls.element_kind.as_str()
                ),
            });
        }
        if ann.cls.element_kind != ElementKind::Input {
            if ann.source_key.is_empty() {
                violations.push(Violation {
                    invariant: Invariant::MissingSourceKey,
                    annotation: i,
                    detail: format!("{} annotation without source key", ann.cls.fine_label),
                });
            } else if !seen.insert((ann.source_key.as_str(), ann.line_index)) {
                violations.push(Violation {
                    invariant: Invariant::DuplicateSlot,
                    annotation: i,
                    detail: format!("({}, {}) repeated", ann.source_key, ann.line_index),
                });
            }
        }
    }
    violations
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("record i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("record syntax: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("record schema {found} not supported (expected {RECORD_SCHEMA})")]
    Schema { found: u32 },
}

#[derive(Serialize, Deserialize)]
struct RecordFile {
    schema: u32,
    #[serde(flatten)]
    sample: AnnotatedSample,
}

#[derive(Serialize)]
struct RecordFileRef<'a> {
    schema: u32,
    #[serde(flatten)]
    sample: &'a AnnotatedSample,
}

/// Serializes one sample as a versioned annotation record.
pub fn to_record(sample: &AnnotatedSample) -> String {
    let mut text = serde_json::to_string_pretty(&RecordFileRef {
        schema: RECORD_SCHEMA,
        sample,
    })
    .expect("annotation records always serialize");
    text.push('\n');
    text
}

pub fn from_record(text: &str) -> Result<AnnotatedSample, RecordError> {
    let probe: serde_json::Value = serde_json::from_str(text)?;
    let found = probe.get("schema").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != RECORD_SCHEMA {
        return Err(RecordError::Schema { found });
    }
    let record: RecordFile = serde_json::from_value(probe)?;
    Ok(record.sample)
}

pub fn read_record(path: &Path) -> Result<AnnotatedSample, RecordError> {
    from_record(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ann(label: FineLabel, key: &str, line: u32, bbox: BBox) -> Annotation {
        Annotation {
            bbox,
            cls: AnnotationClass::of(label),
            source_key: key.to_string(),
            line_index: line,
            visibility: Visibility::Full,
        }
    }

    fn sample(annotations: Vec<Annotation>) -> AnnotatedSample {
        AnnotatedSample {
            image_ref: "img.png".into(),
            layout_id: "L1".into(),
            variant_index: 0,
            config_seed: 42,
            fill_state: FillTag::Full,
            annotations,
            image_dims: Dims::new(800, 600),
        }
    }

    #[test]
    fn box_touching_right_edge_is_valid() {
        let s = sample(vec![ann(
            FineLabel::Name,
            "PII_FULLNAME",
            0,
            BBox::new(700, 0, 100, 20),
        )]);
        assert!(validate_sample(&s).is_empty());
    }

    #[test]
    fn duplicate_slot_reported_once() {
        let s = sample(vec![
            ann(FineLabel::Name, "PII_FULLNAME", 0, BBox::new(0, 0, 10, 10)),
            ann(FineLabel::Name, "PII_FULLNAME", 0, BBox::new(20, 0, 10, 10)),
        ]);
        let v = validate_sample(&s);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].invariant, Invariant::DuplicateSlot);
        assert_eq!(v[0].annotation, 1);
    }

    #[test]
    fn product_image_tagged_text_is_inconsistent() {
        let mut a = ann(
            FineLabel::ProductImage,
            "PRODUCT1_IMAGE",
            0,
            BBox::new(0, 0, 10, 10),
        );
        a.cls.element_kind = ElementKind::Text;
        let v = validate_sample(&sample(vec![a]));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].invariant, Invariant::ClassConsistency);
    }

    #[test]
    fn inputs_may_share_empty_key() {
        let s = sample(vec![
            ann(FineLabel::InputField, "", 0, BBox::new(0, 0, 10, 10)),
            ann(FineLabel::InputField, "", 0, BBox::new(0, 20, 10, 10)),
        ]);
        assert!(validate_sample(&s).is_empty());
    }

    #[test]
    fn line_index_on_image_flagged() {
        let s = sample(vec![ann(
            FineLabel::ProductImage,
            "PRODUCT1_IMAGE",
            1,
            BBox::new(0, 0, 10, 10),
        )]);
        assert_eq!(
            validate_sample(&s)[0].invariant,
            Invariant::LineIndexOnNonText
        );
    }

    #[test]
    fn every_label_has_one_kind_and_element_kind() {
        for label in FineLabel::ALL {
            let cls = AnnotationClass::of(label);
            assert!(cls.is_consistent());
            assert_eq!(label.as_str().parse::<FineLabel>().unwrap(), label);
        }
    }

    #[test]
    fn fill_tag_and_sample_id_text_forms() {
        assert_eq!("partial_3".parse::<FillTag>().unwrap(), FillTag::Partial(3));
        assert!("partial_0".parse::<FillTag>().is_err());
        let id = SampleId::new("amazon/cart_01", 4, FillTag::Partial(2));
        assert_eq!(id.to_string().parse::<SampleId>().unwrap(), id);
    }

    #[test]
    fn record_rejects_other_schema() {
        let text = to_record(&sample(vec![])).replace("\"schema\": 1", "\"schema\": 2");
        assert!(matches!(
            from_record(&text),
            Err(RecordError::Schema { found: 2 })
        ));
    }

    fn arb_sample() -> impl Strategy<Value = AnnotatedSample> {
        let ann = (
            0usize..9,
            "[A-Z_]{0,12}",
            0u32..4,
            0u32..500,
            0u32..500,
            1u32..300,
            1u32..100,
            any::<bool>(),
        )
            .prop_map(|(l, key, line, x, y, w, h, clipped)| Annotation {
                bbox: BBox::new(x, y, w, h),
                cls: AnnotationClass::of(FineLabel::ALL[l]),
                source_key: key,
                line_index: line,
                visibility: if clipped {
                    Visibility::Clipped
                } else {
                    Visibility::Full
                },
            });
        (
            proptest::collection::vec(ann, 0..8),
            any::<u64>(),
            0u32..25,
            prop_oneof![
                Just(FillTag::Empty),
                Just(FillTag::Full),
                (1u32..9).prop_map(FillTag::Partial)
            ],
        )
            .prop_map(|(annotations, seed, variant, fill)| AnnotatedSample {
                image_ref: "renders/x.png".into(),
                layout_id: "layout".into(),
                variant_index: variant,
                config_seed: seed,
                fill_state: fill,
                annotations,
                image_dims: Dims::new(1400, 900),
            })
    }

    proptest! {
        #[test]
        fn record_round_trip(s in arb_sample()) {
            prop_assert_eq!(from_record(&to_record(&s)).unwrap(), s);
        }
    }
}
