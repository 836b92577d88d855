//! Layout templates: static markup with `{{KEY}}` placeholders and annotation
//! attributes, plus a TOML meta file describing the page and its form fields.
//!
//! A bundle lives in `layouts/<layout_id>/` as `page.html` and `layout.meta`.
//!
//! Markup conventions:
//!
//! - `data-pii`, `data-product` or `data-order` with a fine label marks an
//!   element for extraction.
//! - `data-field="<field_id>"` binds an `<input>`, `<textarea>` or `<select>`
//!   to a field descriptor.
//! - `data-optional="<id>"` marks a subtree that a variant may drop.
//!
//! Instantiation adds `data-src` (the source keys, `+`-joined) and
//! `data-match` (the substituted text) to every annotated element, and
//! `data-fill-state` to every bound form element.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{has_generator, DataConfig, LayoutDataSpec, Value};
use crate::fill::{FieldFill, FieldSlot, FillState};
use crate::markup::{self, decode_entities, escape_text, Attr, Document, Element, Node};
use crate::model::{ElementKind, FineLabel, Kind};

pub const PAGE_FILE: &str = "page.html";
pub const META_FILE: &str = "layout.meta";

/// Default inclusion probability for optional ids the meta file does not list.
pub const DEFAULT_OPTIONAL_P: f64 = 0.5;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("{file}:{line}:{col}: {message}")]
    Parse {
        file: String,
        line: usize,
        col: usize,
        message: String,
    },
    #[error("{line}:{col}: unknown annotation attribute {attribute}=\"{value}\"")]
    UnknownAttribute {
        line: usize,
        col: usize,
        attribute: String,
        value: String,
    },
    #[error("fields `{first}` and `{second}` share fill_order {order}")]
    DuplicateFillOrder {
        order: u32,
        first: String,
        second: String,
    },
    #[error("config has no value for `{0}`")]
    MissingKey(String),
    #[error("fill state does not match the template's fields: {0}")]
    FillMismatch(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn parse_error(file: &str, line: usize, col: usize, message: impl Into<String>) -> TemplateError {
    TemplateError::Parse {
        file: file.to_string(),
        line,
        col,
        message: message.into(),
    }
}

/// Page categories a layout can belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageType {
    AccountDashboard,
    AccountSelection,
    OrderHistory,
    OrderTracking,
    OrderDetails,
    Receipt,
    Checkout,
    Cart,
    AddedToCart,
    BillingAddress,
    CustomerInfo,
    AddressValidator,
    DeliveryOptions,
    Payment,
    Gifting,
    StorePickup,
    Product,
    Review,
    SearchResults,
}

impl PageType {
    pub const ALL: [PageType; 19] = [
        PageType::AccountDashboard,
        PageType::AccountSelection,
        PageType::OrderHistory,
        PageType::OrderTracking,
        PageType::OrderDetails,
        PageType::Receipt,
        PageType::Checkout,
        PageType::Cart,
        PageType::AddedToCart,
        PageType::BillingAddress,
        PageType::CustomerInfo,
        PageType::AddressValidator,
        PageType::DeliveryOptions,
        PageType::Payment,
        PageType::Gifting,
        PageType::StorePickup,
        PageType::Product,
        PageType::Review,
        PageType::SearchResults,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PageType::AccountDashboard => "account_dashboard",
            PageType::AccountSelection => "account_selection",
            PageType::OrderHistory => "order_history",
            PageType::OrderTracking => "order_tracking",
            PageType::OrderDetails => "order_details",
            PageType::Receipt => "receipt",
            PageType::Checkout => "checkout",
            PageType::Cart => "cart",
            PageType::AddedToCart => "added_to_cart",
            PageType::BillingAddress => "billing_address",
            PageType::CustomerInfo => "customer_info",
            PageType::AddressValidator => "address_validator",
            PageType::DeliveryOptions => "delivery_options",
            PageType::Payment => "payment",
            PageType::Gifting => "gifting",
            PageType::StorePickup => "store_pickup",
            PageType::Product => "product",
            PageType::Review => "review",
            PageType::SearchResults => "search_results",
        }
    }
}

impl fmt::Display for PageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PageType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        PageType::ALL
            .into_iter()
            .find(|p| p.as_str() == key)
            .ok_or_else(|| format!("unknown page type `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    Text,
    Dropdown,
    Checkbox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldDescriptor {
    pub field_id: String,
    pub input_kind: InputKind,
    /// Config key whose value the field receives; may be empty for checkboxes.
    #[serde(default)]
    pub bound_key: String,
    #[serde(default)]
    pub placeholder_text: String,
    #[serde(default)]
    pub optional: bool,
    pub fill_order: u32,
}

/// The `layout.meta` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutMeta {
    pub brand: String,
    pub page_type: PageType,
    #[serde(default)]
    pub data: LayoutDataSpec,
    #[serde(default)]
    pub fields: Vec<FieldDescriptor>,
}

/// One element that will produce an annotation record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationSlot {
    pub label: FineLabel,
    pub keys: Vec<String>,
    pub field_id: Option<String>,
    /// Optional ids that must all be included for the slot to be rendered.
    pub requires: BTreeSet<String>,
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone)]
pub struct LayoutTemplate {
    pub layout_id: String,
    pub brand: String,
    pub page_type: PageType,
    pub markup: Document,
    /// Descriptors sorted by `fill_order`.
    pub fields: Vec<FieldDescriptor>,
    pub data_spec: LayoutDataSpec,
    pub slots: Vec<AnnotationSlot>,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{\s*([A-Za-z0-9_]+)\s*\}\}").unwrap())
}

/// Placeholder keys in `text`, in order.
pub fn placeholders(text: &str) -> Vec<String> {
    placeholder_re()
        .captures_iter(text)
        .map(|c| c[1].to_string())
        .collect()
}

fn annotation_attrs(el: &Element) -> Vec<(Kind, &str)> {
    [Kind::Pii, Kind::Product, Kind::Order]
        .into_iter()
        .filter_map(|k| el.attr(k.attribute()).map(|v| (k, v)))
        .collect()
}

/// The annotation label of an element, if it carries exactly one attribute.
pub fn element_label(el: &Element) -> Option<FineLabel> {
    match annotation_attrs(el).as_slice() {
        [(_, v)] => v.parse().ok(),
        _ => None,
    }
}

fn is_form_element(el: &Element) -> bool {
    matches!(el.name.as_str(), "input" | "select" | "textarea")
}

impl LayoutTemplate {
    pub fn field(&self, field_id: &str) -> Option<&FieldDescriptor> {
        self.fields.iter().find(|f| f.field_id == field_id)
    }

    /// Fields present in a variant, in fill order.
    pub fn included_fields<'a>(
        &'a self,
        config: &'a DataConfig,
    ) -> impl Iterator<Item = &'a FieldDescriptor> + 'a {
        self.fields
            .iter()
            .filter(|f| !f.optional || config.included_optional_fields.contains(&f.field_id))
    }

    /// Planner input for a variant.
    pub fn fill_slots(&self, config: &DataConfig) -> Result<Vec<FieldSlot>, TemplateError> {
        let mut out = Vec::new();
        for field in self.included_fields(config) {
            let value = field_value(field, config)?;
            out.push(FieldSlot {
                field_id: field.field_id.clone(),
                value,
                atomic: field.input_kind != InputKind::Text,
            });
        }
        Ok(out)
    }

    /// Annotation slots rendered for a variant.
    pub fn active_slots<'a>(
        &'a self,
        config: &'a DataConfig,
    ) -> impl Iterator<Item = &'a AnnotationSlot> + 'a {
        self.slots.iter().filter(|s| {
            s.requires
                .iter()
                .all(|id| config.included_optional_fields.contains(id))
        })
    }

    pub fn to_meta(&self) -> LayoutMeta {
        LayoutMeta {
            brand: self.brand.clone(),
            page_type: self.page_type,
            data: self.data_spec.clone(),
            fields: self.fields.clone(),
        }
    }
}

fn field_value(field: &FieldDescriptor, config: &DataConfig) -> Result<String, TemplateError> {
    if field.bound_key.is_empty() {
        return Ok("on".into());
    }
    config
        .values
        .get(&field.bound_key)
        .map(Value::display)
        .ok_or_else(|| TemplateError::MissingKey(field.bound_key.clone()))
}

/// Reads `layouts/<id>/page.html` and `layout.meta`.
pub fn load_template(dir: &Path) -> Result<LayoutTemplate, TemplateError> {
    let read = |name: &str| {
        let path = dir.join(name);
        std::fs::read_to_string(&path).map_err(|source| TemplateError::Io { path, source })
    };
    let layout_id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_template(&layout_id, &read(PAGE_FILE)?, &read(META_FILE)?)
}

/// Every template directory under `root`, sorted by layout id.
pub fn load_all(root: &Path) -> Result<Vec<LayoutTemplate>, TemplateError> {
    let entries = std::fs::read_dir(root).map_err(|source| TemplateError::Io {
        path: root.to_path_buf(),
        source,
    })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(PAGE_FILE).is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_template(d)).collect()
}

pub fn parse_template(
    layout_id: &str,
    page: &str,
    meta: &str,
) -> Result<LayoutTemplate, TemplateError> {
    let mut markup =
        markup::parse(page).map_err(|e| parse_error(PAGE_FILE, e.line, e.col, e.message))?;
    let meta: LayoutMeta = toml::from_str(meta).map_err(|e| {
        let (line, col) = e
            .span()
            .map(|span| line_col(meta, span.start))
            .unwrap_or((0, 0));
        parse_error(META_FILE, line, col, e.message())
    })?;

    // Normalize annotation vocabulary in place.
    let mut unknown = None;
    markup.visit_mut(&mut |el| {
        for kind in [Kind::Pii, Kind::Product, Kind::Order] {
            let Some(raw) = el.attr(kind.attribute()) else {
                continue;
            };
            match FineLabel::normalize(raw) {
                Some(label) if label.kind() == kind => {
                    el.set_attr(kind.attribute(), Some(label.as_str().to_string()));
                }
                _ => {
                    unknown.get_or_insert(TemplateError::UnknownAttribute {
                        line: el.pos.line,
                        col: el.pos.col,
                        attribute: kind.attribute().to_string(),
                        value: raw.to_string(),
                    });
                }
            }
        }
    });
    if let Some(e) = unknown {
        return Err(e);
    }

    let mut fields = meta.fields.clone();
    let mut seen_ids = BTreeSet::new();
    for f in &fields {
        if !seen_ids.insert(f.field_id.as_str()) {
            return Err(parse_error(
                META_FILE,
                0,
                0,
                format!("duplicate field id `{}`", f.field_id),
            ));
        }
        if f.input_kind == InputKind::Dropdown && f.placeholder_text.trim().is_empty() {
            return Err(parse_error(
                META_FILE,
                0,
                0,
                format!(
                    "dropdown `{}` needs placeholder_text for its unselected option",
                    f.field_id
                ),
            ));
        }
        if f.input_kind != InputKind::Checkbox && f.bound_key.is_empty() {
            return Err(parse_error(
                META_FILE,
                0,
                0,
                format!("field `{}` has no bound_key", f.field_id),
            ));
        }
    }
    let mut by_order: BTreeMap<u32, &str> = BTreeMap::new();
    for f in &meta.fields {
        if let Some(first) = by_order.insert(f.fill_order, &f.field_id) {
            return Err(TemplateError::DuplicateFillOrder {
                order: f.fill_order,
                first: first.to_string(),
                second: f.field_id.clone(),
            });
        }
    }
    if by_order.keys().copied().ne(1..=fields.len() as u32) {
        return Err(parse_error(
            META_FILE,
            0,
            0,
            format!(
                "fill_order values must be a permutation of 1..{}",
                fields.len()
            ),
        ));
    }
    fields.sort_by_key(|f| f.fill_order);

    // Bound elements.
    let mut bound: BTreeMap<String, Vec<(String, usize, usize)>> = BTreeMap::new();
    markup.visit(&mut |el, _| {
        if let Some(id) = el.attr("data-field") {
            bound.entry(id.to_string()).or_default().push((
                el.name.clone(),
                el.pos.line,
                el.pos.col,
            ));
        }
    });
    for (id, els) in &bound {
        let (name, line, col) = &els[0];
        let Some(field) = fields.iter().find(|f| &f.field_id == id) else {
            return Err(parse_error(
                PAGE_FILE,
                *line,
                *col,
                format!("data-field `{id}` has no descriptor"),
            ));
        };
        if els.len() > 1 {
            return Err(parse_error(
                PAGE_FILE,
                els[1].1,
                els[1].2,
                format!("field `{id}` bound twice"),
            ));
        }
        let ok = match field.input_kind {
            InputKind::Text => name == "input" || name == "textarea",
            InputKind::Dropdown => name == "select",
            InputKind::Checkbox => name == "input",
        };
        if !ok {
            return Err(parse_error(
                PAGE_FILE,
                *line,
                *col,
                format!(
                    "field `{id}` is {:?} but bound to <{name}>",
                    field.input_kind
                ),
            ));
        }
    }
    if let Some(f) = fields.iter().find(|f| !bound.contains_key(&f.field_id)) {
        return Err(parse_error(
            PAGE_FILE,
            0,
            0,
            format!("field `{}` has no data-field element", f.field_id),
        ));
    }

    let mut data_spec = meta.data.clone();
    let mut slots = Vec::new();
    collect_slots(&markup.nodes, &BTreeSet::new(), &fields, &mut slots);
    let mut optional_ids = BTreeSet::new();
    markup.visit(&mut |el, _| {
        if let Some(id) = el.attr("data-optional") {
            optional_ids.insert(id.to_string());
        }
        for attr in &el.attrs {
            if let Some(v) = &attr.value {
                data_spec.required_keys.extend(placeholders(v));
            }
        }
        for node in &el.children {
            if let Node::Text(t) = node {
                data_spec.required_keys.extend(placeholders(t));
            }
        }
    });
    for f in &fields {
        if !f.bound_key.is_empty() {
            data_spec.required_keys.insert(f.bound_key.clone());
        }
        if f.optional {
            optional_ids.insert(f.field_id.clone());
        }
    }
    for id in optional_ids {
        data_spec
            .optional_fields
            .entry(id)
            .or_insert(DEFAULT_OPTIONAL_P);
    }
    data_spec
        .validate()
        .map_err(|e| parse_error(META_FILE, 0, 0, e.to_string()))?;

    Ok(LayoutTemplate {
        layout_id: layout_id.to_string(),
        brand: meta.brand,
        page_type: meta.page_type,
        markup,
        fields,
        data_spec,
        slots,
    })
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// Placeholder keys owned by `el`: its attributes and text not inside a nested annotated element.
fn owned_keys(el: &Element) -> Vec<String> {
    fn go(nodes: &[Node], out: &mut Vec<String>) {
        for node in nodes {
            match node {
                Node::Text(t) => out.extend(placeholders(t)),
                Node::Element(e) if annotation_attrs(e).is_empty() => {
                    for a in &e.attrs {
                        if let Some(v) = &a.value {
                            out.extend(placeholders(v));
                        }
                    }
                    go(&e.children, out);
                }
                _ => {}
            }
        }
    }
    let mut out = Vec::new();
    for a in &el.attrs {
        if let Some(v) = &a.value {
            out.extend(placeholders(v));
        }
    }
    go(&el.children, &mut out);
    out
}

fn collect_slots(
    nodes: &[Node],
    requires: &BTreeSet<String>,
    fields: &[FieldDescriptor],
    out: &mut Vec<AnnotationSlot>,
) {
    for node in nodes {
        let Node::Element(el) = node else { continue };
        let mut req = requires.clone();
        if let Some(id) = el.attr("data-optional") {
            req.insert(id.to_string());
        }
        let field_id = el.attr("data-field").map(str::to_string);
        if let Some(id) = &field_id {
            if fields.iter().any(|f| &f.field_id == id && f.optional) {
                req.insert(id.clone());
            }
        }
        if let Some(label) = element_label(el) {
            let keys = if label == FineLabel::InputField {
                Vec::new()
            } else {
                owned_keys(el)
            };
            out.push(AnnotationSlot {
                label,
                keys,
                field_id,
                requires: req.clone(),
                line: el.pos.line,
                col: el.pos.col,
            });
        }
        collect_slots(&el.children, &req, fields, out);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    HardcodedPii,
    MissingAttribute,
    UnknownKey,
    HardcodedDropdown,
    MultipleAttributes,
    UnboundAnnotation,
    FormLabelMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub kind: IssueKind,
    pub line: usize,
    pub col: usize,
    pub detail: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}: {:?}: {}",
            self.line, self.col, self.kind, self.detail
        )
    }
}

fn pii_literal_patterns() -> &'static [(&'static str, Regex)] {
    static RE: OnceLock<Vec<(&'static str, Regex)>> = OnceLock::new();
    RE.get_or_init(|| {
        vec![
            (
                "email",
                Regex::new(r"[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}").unwrap(),
            ),
            (
                "phone",
                Regex::new(r"(?:\(\d{3}\)\s?|\b\d{3}[-.\s])\d{3}[-.\s]\d{4}\b").unwrap(),
            ),
            ("card", Regex::new(r"\b(?:\d[ -]?){12,18}\d\b").unwrap()),
            ("order id", Regex::new(r"\b\d{3}-\d{7}-\d{7}\b").unwrap()),
        ]
    })
}

fn hardcoded_pii(text: &str) -> Option<(&'static str, String)> {
    let stripped = placeholder_re().replace_all(text, " ");
    let decoded = decode_entities(&stripped);
    pii_literal_patterns()
        .iter()
        .find_map(|(name, re)| re.find(&decoded).map(|m| (*name, m.as_str().to_string())))
}

/// Authoring problems that do not stop parsing.
pub fn validate_template(t: &LayoutTemplate) -> Vec<Issue> {
    let mut issues = Vec::new();
    let mut push = |kind, el: &Element, detail: String| {
        issues.push(Issue {
            kind,
            line: el.pos.line,
            col: el.pos.col,
            detail,
        })
    };
    t.markup.visit(&mut |el, ancestors| {
        let attrs = annotation_attrs(el);
        if attrs.len() > 1 {
            push(
                IssueKind::MultipleAttributes,
                el,
                format!("<{}> carries {} annotation attributes", el.name, attrs.len()),
            );
        }
        let annotated = |e: &Element| !annotation_attrs(e).is_empty();
        let covered = annotated(el) || ancestors.iter().any(|a| annotated(a));
        if matches!(el.name.as_str(), "script" | "style") {
            return;
        }
        for node in &el.children {
            if let Node::Text(text) = node {
                for key in placeholders(text) {
                    if !covered {
                        push(IssueKind::MissingAttribute, el, format!("{{{{{key}}}}} has no enclosing annotation attribute"));
                    }
                }
                if let Some((what, literal)) = hardcoded_pii(text) {
                    push(IssueKind::HardcodedPii, el, format!("literal {what} `{literal}`"));
                }
            }
        }
        for Attr { name, value } in &el.attrs {
            let Some(value) = value else { continue };
            for key in placeholders(value) {
                if !annotated(el) {
                    push(
                        IssueKind::MissingAttribute,
                        el,
                        format!("{{{{{key}}}}} in `{name}` on an element without an annotation attribute"),
                    );
                }
            }
            if name == "value" {
                if let Some((what, literal)) = hardcoded_pii(value) {
                    push(IssueKind::HardcodedPii, el, format!("literal {what} `{literal}` in value"));
                }
            }
        }
        if let Some(label) = element_label(el) {
            let form = is_form_element(el);
            if form != (label.element_kind() == ElementKind::Input) {
                push(
                    IssueKind::FormLabelMismatch,
                    el,
                    format!("<{}> labelled `{label}`", el.name),
                );
            }
            if !form && owned_keys(el).is_empty() {
                push(IssueKind::UnboundAnnotation, el, format!("`{label}` element shows no placeholder"));
            }
        } else if el.has_attr("data-field") {
            push(IssueKind::MissingAttribute, el, "form field without an annotation attribute".into());
        }
        if el.name == "select" {
            if el.has_attr("value") {
                push(IssueKind::HardcodedDropdown, el, "select carries a value attribute".into());
            }
            for opt in el.child_elements().filter(|o| o.name == "option") {
                if opt.has_attr("selected") {
                    push(
                        IssueKind::HardcodedDropdown,
                        opt,
                        format!("option `{}` preselected", opt.text_content().trim()),
                    );
                }
            }
        }
        if el.name == "input" && el.has_attr("data-field") && (el.has_attr("checked") || el.has_attr("value")) {
            push(IssueKind::HardcodedDropdown, el, "form field initialized to a value".into());
        }
    });
    for key in &t.data_spec.required_keys {
        if !has_generator(key, &t.data_spec) {
            issues.push(Issue {
                kind: IssueKind::UnknownKey,
                line: 0,
                col: 0,
                detail: format!("no generator for `{key}`"),
            });
        }
    }
    issues.sort_by_key(|a| (a.line, a.col, a.kind));
    issues
}

fn file_url(path: &Path) -> String {
    let abs = std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf());
    format!("file://{}", abs.to_string_lossy())
}

struct Instantiator<'a> {
    t: &'a LayoutTemplate,
    config: &'a DataConfig,
    fill: &'a FillState,
    asset_root: &'a Path,
    src_counts: BTreeMap<String, u32>,
}

impl Instantiator<'_> {
    fn value(&self, key: &str) -> Result<&Value, TemplateError> {
        self.config
            .values
            .get(key)
            .ok_or_else(|| TemplateError::MissingKey(key.to_string()))
    }

    fn substitute_attr(&self, raw: &str) -> Result<String, TemplateError> {
        let mut out = String::new();
        let mut last = 0;
        for cap in placeholder_re().captures_iter(raw) {
            let m = cap.get(0).unwrap();
            out.push_str(&raw[last..m.start()]);
            match self.value(&cap[1])? {
                Value::ImageRef(rel) => out.push_str(&file_url(&self.asset_root.join(rel))),
                v => out.push_str(&escape_text(&v.display())),
            }
            last = m.end();
        }
        out.push_str(&raw[last..]);
        Ok(out)
    }

    /// Substitutes a text node; appends decoded text to `buf` and widens `span` over values.
    fn substitute_text(
        &self,
        raw: &str,
        buf: &mut String,
        span: &mut Option<(usize, usize)>,
        own: bool,
    ) -> Result<String, TemplateError> {
        let mut out = String::new();
        let mut last = 0;
        for cap in placeholder_re().captures_iter(raw) {
            let m = cap.get(0).unwrap();
            let literal = &raw[last..m.start()];
            out.push_str(literal);
            buf.push_str(&decode_entities(literal));
            let shown = self.value(&cap[1])?.display();
            out.push_str(&escape_text(&shown));
            let start = buf.len();
            buf.push_str(&shown);
            if own {
                let end = buf.len();
                *span = Some(span.map_or((start, end), |(s, _)| (s, end)));
            }
            last = m.end();
        }
        let tail = &raw[last..];
        out.push_str(tail);
        buf.push_str(&decode_entities(tail));
        Ok(out)
    }

    fn included(&self, el: &Element) -> bool {
        if let Some(id) = el.attr("data-optional") {
            if !self.config.included_optional_fields.contains(id) {
                return false;
            }
        }
        if let Some(f) = el.attr("data-field").and_then(|id| self.t.field(id)) {
            if f.optional && !self.config.included_optional_fields.contains(&f.field_id) {
                return false;
            }
        }
        true
    }

    fn nodes(
        &mut self,
        nodes: &[Node],
        buf: &mut String,
        span: &mut Option<(usize, usize)>,
        own: bool,
    ) -> Result<Vec<Node>, TemplateError> {
        let mut out = Vec::with_capacity(nodes.len());
        for node in nodes {
            match node {
                Node::Text(t) => out.push(Node::Text(self.substitute_text(t, buf, span, own)?)),
                Node::Element(el) => {
                    if !self.included(el) {
                        continue;
                    }
                    out.push(Node::Element(self.element(el, buf, span, own)?));
                }
                other => out.push(other.clone()),
            }
        }
        Ok(out)
    }

    fn element(
        &mut self,
        el: &Element,
        buf: &mut String,
        span: &mut Option<(usize, usize)>,
        own: bool,
    ) -> Result<Element, TemplateError> {
        let mut out = Element {
            name: el.name.clone(),
            attrs: Vec::with_capacity(el.attrs.len()),
            children: Vec::new(),
            pos: el.pos,
        };
        for a in &el.attrs {
            out.attrs.push(Attr {
                name: a.name.clone(),
                value: a
                    .value
                    .as_deref()
                    .map(|v| self.substitute_attr(v))
                    .transpose()?,
            });
        }
        let label = element_label(el);
        match label {
            Some(label) => {
                let mut inner_buf = String::new();
                let mut inner_span = None;
                out.children = self.nodes(&el.children, &mut inner_buf, &mut inner_span, true)?;
                buf.push_str(&inner_buf);
                if label == FineLabel::InputField {
                    out.set_attr("data-src", Some(String::new()));
                } else {
                    let keys = owned_keys(el);
                    let mut src = keys.join("+");
                    if !src.is_empty() {
                        let n = self.src_counts.entry(src.clone()).or_insert(0);
                        *n += 1;
                        if *n > 1 {
                            src = format!("{src}#{n}");
                        }
                    }
                    out.set_attr("data-src", Some(src));
                    if let Some((s, e)) = inner_span {
                        out.set_attr("data-match", Some(escape_text(&inner_buf[s..e])));
                    }
                }
            }
            None => {
                out.children = self.nodes(&el.children, buf, span, own)?;
            }
        }
        if let Some(field) = el.attr("data-field").and_then(|id| self.t.field(id)) {
            self.bind_field(field, &mut out)?;
        }
        Ok(out)
    }

    fn bind_field(&self, field: &FieldDescriptor, el: &mut Element) -> Result<(), TemplateError> {
        let value = field_value(field, self.config)?;
        let state = *self.fill.per_field.get(&field.field_id).ok_or_else(|| {
            TemplateError::FillMismatch(format!("no state for field `{}`", field.field_id))
        })?;
        let shown = self
            .fill
            .shown(&field.field_id, &value)
            .unwrap_or_default()
            .to_string();
        let tag = match state {
            FieldFill::Empty => "empty",
            FieldFill::Prefix(_) => "partial",
            FieldFill::Full => "full",
        };
        el.set_attr("data-fill-state", Some(tag.to_string()));
        match field.input_kind {
            InputKind::Text => {
                if !field.placeholder_text.is_empty() {
                    el.set_attr("placeholder", Some(escape_text(&field.placeholder_text)));
                }
                if el.name == "textarea" {
                    el.children = vec![Node::Text(escape_text(&shown))];
                } else if shown.is_empty() {
                    el.remove_attr("value");
                } else {
                    el.set_attr("value", Some(escape_text(&shown)));
                }
            }
            InputKind::Checkbox => {
                if state == FieldFill::Full {
                    el.set_attr("checked", None);
                } else {
                    el.remove_attr("checked");
                }
            }
            InputKind::Dropdown => {
                let mut options: Vec<Node> = el
                    .children
                    .iter()
                    .filter(|n| !matches!(n, Node::Element(o) if o.name == "option" && o.attr("value") == Some("")))
                    .cloned()
                    .collect();
                for n in options.iter_mut() {
                    if let Node::Element(o) = n {
                        o.remove_attr("selected");
                    }
                }
                let mut placeholder = Element::new("option");
                placeholder.set_attr("value", Some(String::new()));
                placeholder.children = vec![Node::Text(escape_text(&field.placeholder_text))];
                let full = state == FieldFill::Full;
                if !full {
                    placeholder.set_attr("selected", None);
                }
                options.insert(0, Node::Element(placeholder));
                if full {
                    let escaped = escape_text(&value);
                    let existing = options.iter_mut().find_map(|n| match n {
                        Node::Element(o)
                            if o.name == "option"
                                && o.attr("value").map(decode_entities) == Some(value.clone()) =>
                        {
                            Some(o)
                        }
                        _ => None,
                    });
                    match existing {
                        Some(o) => o.set_attr("selected", None),
                        None => {
                            let mut o = Element::new("option");
                            o.set_attr("value", Some(escaped.clone()));
                            o.set_attr("selected", None);
                            o.children = vec![Node::Text(escaped)];
                            options.push(Node::Element(o));
                        }
                    }
                }
                el.children = options;
            }
        }
        Ok(())
    }
}

/// Fills placeholders, drops excluded optional subtrees and bakes the fill state into form fields.
pub fn instantiate(
    t: &LayoutTemplate,
    config: &DataConfig,
    fill: &FillState,
    asset_root: &Path,
) -> Result<String, TemplateError> {
    let expected: BTreeSet<&str> = t
        .included_fields(config)
        .map(|f| f.field_id.as_str())
        .collect();
    let given: BTreeSet<&str> = fill.per_field.keys().map(String::as_str).collect();
    if expected != given {
        let unknown: Vec<&str> = given.difference(&expected).copied().collect();
        let missing: Vec<&str> = expected.difference(&given).copied().collect();
        return Err(TemplateError::FillMismatch(format!(
            "unknown {unknown:?}, missing {missing:?}"
        )));
    }
    let mut inst = Instantiator {
        t,
        config,
        fill,
        asset_root,
        src_counts: BTreeMap::new(),
    };
    let mut buf = String::new();
    let mut span = None;
    let nodes = inst.nodes(&t.markup.nodes, &mut buf, &mut span, false)?;
    Ok(Document { nodes }.to_html())
}

/// What a bound form field shows in an instantiated document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormReading {
    pub fill_state: String,
    pub shown: String,
}

/// Reads every `data-field` element back out of an instantiated document.
pub fn read_form(document: &str) -> Result<BTreeMap<String, FormReading>, TemplateError> {
    let doc =
        markup::parse(document).map_err(|e| parse_error("document", e.line, e.col, e.message))?;
    let mut out = BTreeMap::new();
    doc.visit(&mut |el, _| {
        let Some(id) = el.attr("data-field") else {
            return;
        };
        let shown = match el.name.as_str() {
            "textarea" => decode_entities(&el.text_content()),
            "select" => el
                .child_elements()
                .find(|o| o.has_attr("selected") && o.attr("value") != Some(""))
                .map(|o| decode_entities(o.attr("value").unwrap_or_default()))
                .unwrap_or_default(),
            _ if el.attr("type") == Some("checkbox") => {
                if el.has_attr("checked") {
                    "on".into()
                } else {
                    String::new()
                }
            }
            _ => decode_entities(el.attr("value").unwrap_or_default()),
        };
        out.insert(
            id.to_string(),
            FormReading {
                fill_state: el.attr("data-fill-state").unwrap_or_default().to_string(),
                shown,
            },
        );
    });
    Ok(out)
}
