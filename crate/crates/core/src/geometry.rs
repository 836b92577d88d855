//! Extractor payload schema and its conversion into finalized annotations.
//!
//! The payload is what an in-page extraction pass returns: one record per
//! annotated element, with fractional page-coordinate rects (one per rendered
//! line for text) and a visibility verdict from a 3×3 hit-test grid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Annotation, AnnotationClass, BBox, Dims, ElementKind, FineLabel, Kind, Visibility,
};

pub const EXTRACTOR_VERSION: u32 = 1;

/// Fraction of the smaller height two rects must share to sit on one line.
pub const LINE_OVERLAP: f64 = 0.5;

/// Cells per side of the visibility sampling grid.
pub const GRID: usize = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeometryError {
    #[error("payload schema {found} does not match extractor version {expected}")]
    SchemaMismatch { expected: u32, found: u32 },
    #[error("payload does not parse: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawRect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl RawRect {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        RawRect { x, y, w, h }
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn is_empty(&self) -> bool {
        !(self.w > 0.0 && self.h > 0.0)
    }

    pub fn union(&self, other: &RawRect) -> RawRect {
        let x = self.x.min(other.x);
        let y = self.y.min(other.y);
        RawRect::new(
            x,
            y,
            self.right().max(other.right()) - x,
            self.bottom().max(other.bottom()) - y,
        )
    }

    pub fn intersect(&self, other: &RawRect) -> Option<RawRect> {
        let x = self.x.max(other.x);
        let y = self.y.max(other.y);
        let r = self.right().min(other.right());
        let b = self.bottom().min(other.bottom());
        (r > x && b > y).then(|| RawRect::new(x, y, r - x, b - y))
    }

    pub fn vertical_overlap(&self, other: &RawRect) -> f64 {
        (self.bottom().min(other.bottom()) - self.y.max(other.y)).max(0.0)
    }
}

impl From<BBox> for RawRect {
    fn from(b: BBox) -> Self {
        RawRect::new(b.x as f64, b.y as f64, b.w as f64, b.h as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RawVisibility {
    Full,
    Clipped { rect: RawRect },
    Occluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub source_key: String,
    pub family: Kind,
    pub label: FineLabel,
    pub element_kind: ElementKind,
    pub rects: Vec<RawRect>,
    pub visibility: RawVisibility,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPayload {
    pub extractor: u32,
    pub records: Vec<RawRecord>,
}

impl RawPayload {
    pub fn new(records: Vec<RawRecord>) -> Self {
        RawPayload {
            extractor: EXTRACTOR_VERSION,
            records,
        }
    }

    pub fn parse(text: &str) -> Result<RawPayload, GeometryError> {
        #[derive(Deserialize)]
        struct Header {
            extractor: u32,
        }
        let header: Header =
            serde_json::from_str(text).map_err(|e| GeometryError::Malformed(e.to_string()))?;
        if header.extractor != EXTRACTOR_VERSION {
            return Err(GeometryError::SchemaMismatch {
                expected: EXTRACTOR_VERSION,
                found: header.extractor,
            });
        }
        serde_json::from_str(text).map_err(|e| GeometryError::Malformed(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("payloads always serialize")
    }
}

/// Groups per-fragment rects into line rects, ordered top to bottom.
///
/// A fragment joins a line when their vertical overlap is at least half the
/// smaller of the two heights.
pub fn line_boxes(rects: &[RawRect]) -> Vec<RawRect> {
    let mut lines: Vec<RawRect> = Vec::new();
    for r in rects.iter().filter(|r| !r.is_empty()) {
        let joined = lines
            .iter_mut()
            .find(|line| line.vertical_overlap(r) >= LINE_OVERLAP * line.h.min(r.h));
        match joined {
            Some(line) => *line = line.union(r),
            None => lines.push(*r),
        }
    }
    lines.sort_by(|a, b| a.y.total_cmp(&b.y).then(a.x.total_cmp(&b.x)));
    lines
}

/// Sample points at the centres of the grid cells over `rect`, row-major.
pub fn grid_points(rect: &RawRect) -> [(f64, f64); GRID * GRID] {
    let mut out = [(0.0, 0.0); GRID * GRID];
    for row in 0..GRID {
        for col in 0..GRID {
            out[row * GRID + col] = (
                rect.x + rect.w * (col as f64 + 0.5) / GRID as f64,
                rect.y + rect.h * (row as f64 + 0.5) / GRID as f64,
            );
        }
    }
    out
}

/// Visibility verdict from grid hits (row-major, as in [`grid_points`]).
///
/// The clip rect is the bounding box of the hit cells.
pub fn visibility_from_hits(rect: &RawRect, hits: &[bool; GRID * GRID]) -> RawVisibility {
    let count = hits.iter().filter(|h| **h).count();
    if count == 0 {
        return RawVisibility::Occluded;
    }
    if count == hits.len() {
        return RawVisibility::Full;
    }
    let (mut c0, mut c1, mut r0, mut r1) = (GRID, 0, GRID, 0);
    for (i, _) in hits.iter().enumerate().filter(|(_, h)| **h) {
        let (row, col) = (i / GRID, i % GRID);
        c0 = c0.min(col);
        c1 = c1.max(col);
        r0 = r0.min(row);
        r1 = r1.max(row);
    }
    let cw = rect.w / GRID as f64;
    let ch = rect.h / GRID as f64;
    RawVisibility::Clipped {
        rect: RawRect::new(
            rect.x + c0 as f64 * cw,
            rect.y + r0 as f64 * ch,
            (c1 - c0 + 1) as f64 * cw,
            (r1 - r0 + 1) as f64 * ch,
        ),
    }
}

/// A non-degenerate clipping rectangle in page pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipRegion(BBox);

impl ClipRegion {
    pub fn new(rect: BBox) -> Option<Self> {
        (rect.w > 0 && rect.h > 0).then_some(ClipRegion(rect))
    }

    pub fn rect(&self) -> BBox {
        self.0
    }
}

/// Exact intersection; `None` when the overlap has zero area.
pub fn clip_box(b: BBox, region: ClipRegion) -> Option<BBox> {
    let r = region.0;
    let x0 = b.x.max(r.x);
    let y0 = b.y.max(r.y);
    let x1 = b.right().min(r.right());
    let y1 = b.bottom().min(r.bottom());
    (x1 > x0 as u64 && y1 > y0 as u64)
        .then(|| BBox::new(x0, y0, (x1 - x0 as u64) as u32, (y1 - y0 as u64) as u32))
}

/// Clips to the image, rounds edges half away from zero and drops empty results.
fn snap(rect: &RawRect, dims: Dims) -> Option<(BBox, bool)> {
    let bounds = RawRect::new(0.0, 0.0, dims.width as f64, dims.height as f64);
    let inside = rect.intersect(&bounds)?;
    let clipped = inside != *rect;
    let x0 = inside.x.round();
    let y0 = inside.y.round();
    let x1 = inside.right().round().min(dims.width as f64);
    let y1 = inside.bottom().round().min(dims.height as f64);
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    Some((
        BBox::new(x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32),
        clipped,
    ))
}

/// Turns a raw payload into validated annotations for an image of `dims`.
///
/// Occluded and failed records are dropped; clipped records are cut to their
/// visible region; every box is cut to the image and rounded; empty boxes are
/// dropped; surviving text lines are numbered from 0; repeated `(source_key,
/// line_index)` slots keep their first box.
/// Output is sorted by `(y, x, source_key)`.
pub fn finalize(payload: &RawPayload, dims: Dims) -> Result<Vec<Annotation>, GeometryError> {
    if payload.extractor != EXTRACTOR_VERSION {
        return Err(GeometryError::SchemaMismatch {
            expected: EXTRACTOR_VERSION,
            found: payload.extractor,
        });
    }
    let mut out: Vec<Annotation> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for record in &payload.records {
        if record.error.is_some() {
            continue;
        }
        let clip = match record.visibility {
            RawVisibility::Occluded => continue,
            RawVisibility::Full => None,
            RawVisibility::Clipped { rect } => Some(rect),
        };
        let cls = AnnotationClass::of(record.label);
        let is_text = cls.element_kind == ElementKind::Text;
        let is_input = cls.element_kind == ElementKind::Input;
        let source_key = if is_input {
            String::new()
        } else {
            record.source_key.clone()
        };
        let mut lines = 0u32;
        for rect in &record.rects {
            let line_index = if is_text { lines } else { 0 };
            let visible = match clip {
                Some(c) => match rect.intersect(&c) {
                    Some(v) => v,
                    None => continue,
                },
                None => *rect,
            };
            let Some((bbox, cut)) = snap(&visible, dims) else {
                continue;
            };
            if !is_input && !seen.insert((source_key.clone(), line_index)) {
                continue;
            }
            lines += 1;
            out.push(Annotation {
                bbox,
                cls,
                source_key: source_key.clone(),
                line_index,
                visibility: if clip.is_some() || cut {
                    Visibility::Clipped
                } else {
                    Visibility::Full
                },
            });
            if !is_text {
                break;
            }
        }
    }
    out.sort_by(|a, b| {
        (a.bbox.y, a.bbox.x, &a.source_key).cmp(&(b.bbox.y, b.bbox.x, &b.source_key))
    });
    Ok(out)
}

/// Payload whose finalization reproduces `annotations`' geometry.
pub fn to_payload(annotations: &[Annotation]) -> RawPayload {
    let mut grouped: std::collections::BTreeMap<(String, AnnotationClass), Vec<&Annotation>> =
        Default::default();
    let mut inputs = Vec::new();
    for a in annotations {
        if a.cls.element_kind == ElementKind::Input {
            inputs.push(a);
        } else {
            grouped
                .entry((a.source_key.clone(), a.cls))
                .or_default()
                .push(a);
        }
    }
    let record = |key: &str, cls: AnnotationClass, rects: Vec<RawRect>| RawRecord {
        source_key: key.to_string(),
        family: cls.kind,
        label: cls.fine_label,
        element_kind: cls.element_kind,
        rects,
        visibility: RawVisibility::Full,
        error: None,
    };
    let mut records: Vec<RawRecord> = grouped
        .into_iter()
        .map(|((key, cls), mut lines)| {
            lines.sort_by_key(|a| a.line_index);
            record(&key, cls, lines.iter().map(|a| a.bbox.into()).collect())
        })
        .collect();
    records.extend(
        inputs
            .into_iter()
            .map(|a| record("", a.cls, vec![a.bbox.into()])),
    );
    RawPayload::new(records)
}
