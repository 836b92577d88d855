//! COCO and YOLO writers, a COCO reader, and the export manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{io_err, DatasetError, LeakageReport, Split, SplitAssignment};
use crate::model::{
    validate_sample, AnnotatedSample, Annotation, AnnotationClass, BBox, Dims, FillTag, FineLabel,
    Visibility,
};

pub const COCO_FILE: &str = "annotations.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CLASSES_FILE: &str = "classes.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    Coco,
    Yolo,
}

impl FromStr for ExportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coco" => Ok(ExportFormat::Coco),
            "yolo" => Ok(ExportFormat::Yolo),
            other => Err(format!("unknown format `{other}` (coco|yolo)")),
        }
    }
}

impl fmt::Display for ExportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExportFormat::Coco => "coco",
            ExportFormat::Yolo => "yolo",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassMode {
    Fine,
    Coarse,
}

impl FromStr for ClassMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fine" => Ok(ClassMode::Fine),
            "coarse" => Ok(ClassMode::Coarse),
            other => Err(format!("unknown class mode `{other}` (fine|coarse)")),
        }
    }
}

impl fmt::Display for ClassMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassMode::Fine => "fine",
            ClassMode::Coarse => "coarse",
        })
    }
}

/// Fine labels to exported class indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMap {
    pub mode: ClassMode,
}

impl ClassMap {
    pub const COARSE: [&'static str; 2] = ["text", "image"];

    pub fn new(mode: ClassMode) -> Self {
        ClassMap { mode }
    }

    /// Class names in index order.
    pub fn names(&self) -> Vec<&'static str> {
        match self.mode {
            ClassMode::Fine => FineLabel::ALL.iter().map(|l| l.as_str()).collect(),
            ClassMode::Coarse => Self::COARSE.to_vec(),
        }
    }

    /// Zero-based class index.
    pub fn index(&self, label: FineLabel) -> u32 {
        match self.mode {
            ClassMode::Fine => FineLabel::ALL
                .iter()
                .position(|l| *l == label)
                .expect("label listed") as u32,
            ClassMode::Coarse => u32::from(label == FineLabel::ProductImage),
        }
    }

    pub fn name(&self, label: FineLabel) -> &'static str {
        self.names()[self.index(label) as usize]
    }

    pub fn index_of_name(&self, name: &str) -> Option<u32> {
        self.names()
            .iter()
            .position(|n| *n == name)
            .map(|i| i as u32)
    }
}

/// A sample plus the image file it was rendered to.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportItem {
    pub sample: AnnotatedSample,
    pub image_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportOptions {
    pub format: ExportFormat,
    pub class_map: ClassMap,
    /// Extra manifest entries (seeds, pipeline config, gate report).
    pub manifest_extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub layouts: usize,
    pub images: usize,
    pub annotations: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub counts: BTreeMap<String, SplitCounts>,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    format: ExportFormat,
    class_mode: ClassMode,
    classes: Vec<&'static str>,
    strategy: String,
    split_seed: u64,
    counts: &'a BTreeMap<String, SplitCounts>,
    warnings: &'a [String],
    #[serde(flatten)]
    extra: &'a BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoFile {
    info: CocoInfo,
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoInfo {
    description: String,
    version: String,
    split: String,
    class_mode: ClassMode,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
    layout_id: String,
    variant_index: u32,
    fill_state: FillTag,
    config_seed: u64,
    image_ref: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u32,
    bbox: [u32; 4],
    area: u64,
    iscrowd: u8,
    fine_label: FineLabel,
    source_key: String,
    line_index: u32,
    visibility: Visibility,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoCategory {
    id: u32,
    name: String,
    supercategory: String,
}

/// One YOLO label line: class, then normalized centre and size at 6 decimals.
pub fn yolo_line(class: u32, bbox: BBox, dims: Dims) -> String {
    let (w, h) = (dims.width as f64, dims.height as f64);
    format!(
        "{} {:.6} {:.6} {:.6} {:.6}",
        class,
        (bbox.x as f64 + bbox.w as f64 / 2.0) / w,
        (bbox.y as f64 + bbox.h as f64 / 2.0) / h,
        bbox.w as f64 / w,
        bbox.h as f64 / h,
    )
}

/// Parses a YOLO label file back into pixel boxes.
pub fn parse_yolo_label(text: &str, dims: Dims) -> Result<Vec<(u32, BBox)>, String> {
    let (w, h) = (dims.width as f64, dims.height as f64);
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let parts: Vec<&str> = line.split_whitespace().collect();
            let [c, cx, cy, bw, bh] = parts.as_slice() else {
                return Err(format!("line {}: expected 5 fields", i + 1));
            };
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| format!("line {}: bad number `{s}`", i + 1))
            };
            let class = c
                .parse::<u32>()
                .map_err(|_| format!("line {}: bad class `{c}`", i + 1))?;
            let (cx, cy, bw, bh) = (num(cx)?, num(cy)?, num(bw)?, num(bh)?);
            let x0 = ((cx - bw / 2.0) * w).round().clamp(0.0, w);
            let y0 = ((cy - bh / 2.0) * h).round().clamp(0.0, h);
            let x1 = ((cx + bw / 2.0) * w).round().clamp(0.0, w);
            let y1 = ((cy + bh / 2.0) * h).round().clamp(0.0, h);
            Ok((
                class,
                BBox::new(x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32),
            ))
        })
        .collect()
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), DatasetError> {
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("export documents always serialize");
    s.push('\n');
    s
}

/// Writes `out/<split>/images/` plus labels or a COCO index, and `out/manifest.json`.
///
/// Existing `train/`, `test/` and manifest under `out_dir` are replaced.
pub fn export(
    items: &[ExportItem],
    assignment: &SplitAssignment,
    leakage: &LeakageReport,
    out_dir: &Path,
    opts: &ExportOptions,
) -> Result<ExportSummary, DatasetError> {
    if !leakage.is_clean() {
        return Err(DatasetError::LeakageUnresolved(leakage.findings.len()));
    }
    let mut by_split: BTreeMap<Split, Vec<&ExportItem>> = BTreeMap::new();
    for item in items {
        let violations = validate_sample(&item.sample);
        if !violations.is_empty() {
            return Err(DatasetError::UnvalidatedSample {
                sample: item.sample.id().to_string(),
                violations,
            });
        }
        let split = assignment
            .split_of(&item.sample.layout_id)
            .ok_or_else(|| DatasetError::UnassignedLayout(item.sample.layout_id.clone()))?;
        by_split.entry(split).or_default().push(item);
    }
    for split in Split::ALL {
        let dir = out_dir.join(split.as_str());
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
    }
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let class_map = opts.class_map;
    let mut summary = ExportSummary::default();
    for split in Split::ALL {
        let mut members: Vec<&ExportItem> = by_split.remove(&split).unwrap_or_default();
        members.sort_by_key(|i| i.sample.id());
        let split_dir = out_dir.join(split.as_str());
        let images_dir = split_dir.join("images");
        std::fs::create_dir_all(&images_dir).map_err(io_err(&images_dir))?;
        let labels_dir = split_dir.join("labels");
        if opts.format == ExportFormat::Yolo {
            std::fs::create_dir_all(&labels_dir).map_err(io_err(&labels_dir))?;
        }
        let mut coco = CocoFile {
            info: CocoInfo {
                description: "screenforge export".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                split: split.as_str().into(),
                class_mode: class_map.mode,
            },
            images: Vec::new(),
            annotations: Vec::new(),
            categories: class_map
                .names()
                .iter()
                .enumerate()
                .map(|(i, n)| CocoCategory {
                    id: i as u32 + 1,
                    name: n.to_string(),
                    supercategory: if *n == "image" || *n == "product_image" {
                        "image"
                    } else {
                        "text"
                    }
                    .into(),
                })
                .collect(),
        };
        let mut counts = SplitCounts::default();
        let mut layouts = BTreeSet::new();
        for item in &members {
            let s = &item.sample;
            let stem = s.id().file_stem();
            let file_name = format!("{stem}.png");
            let target = images_dir.join(&file_name);
            std::fs::copy(&item.image_path, &target).map_err(io_err(&item.image_path))?;
            layouts.insert(s.layout_id.clone());
            counts.images += 1;
            counts.annotations += s.annotations.len();
            match opts.format {
                ExportFormat::Yolo => {
                    let mut text = String::new();
                    for a in &s.annotations {
                        text.push_str(&yolo_line(
                            class_map.index(a.cls.fine_label),
                            a.bbox,
                            s.image_dims,
                        ));
                        text.push('\n');
                    }
                    write(&labels_dir.join(format!("{stem}.txt")), text)?;
                }
                ExportFormat::Coco => {
                    let image_id = coco.images.len() as u64 + 1;
                    coco.images.push(CocoImage {
                        id: image_id,
                        file_name,
                        width: s.image_dims.width,
                        height: s.image_dims.height,
                        layout_id: s.layout_id.clone(),
                        variant_index: s.variant_index,
                        fill_state: s.fill_state,
                        config_seed: s.config_seed,
                        image_ref: s.image_ref.clone(),
                    });
                    for a in &s.annotations {
                        coco.annotations.push(CocoAnnotation {
                            id: coco.annotations.len() as u64 + 1,
                            image_id,
                            category_id: class_map.index(a.cls.fine_label) + 1,
                            bbox: [a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h],
                            area: a.bbox.area(),
                            iscrowd: 0,
                            fine_label: a.cls.fine_label,
                            source_key: a.source_key.clone(),
                            line_index: a.line_index,
                            visibility: a.visibility,
                        });
                    }
                }
            }
        }
        if opts.format == ExportFormat::Coco {
            write(&split_dir.join(COCO_FILE), pretty(&coco))?;
        }
        counts.layouts = layouts.len();
        if counts.images == 0 {
            summary
                .warnings
                .push(format!("{} split is empty", split.as_str()));
        }
        summary.counts.insert(split.as_str().to_string(), counts);
    }
    if opts.format == ExportFormat::Yolo {
        let mut names = class_map.names().join("\n");
        names.push('\n');
        write(&out_dir.join(CLASSES_FILE), names)?;
    }
    let manifest = Manifest {
        tool: "screenforge",
        version: env!("CARGO_PKG_VERSION"),
        format: opts.format,
        class_mode: class_map.mode,
        classes: class_map.names(),
        strategy: assignment.strategy.to_string(),
        split_seed: assignment.seed,
        counts: &summary.counts,
        warnings: &summary.warnings,
        extra: &opts.manifest_extra,
    };
    write(&out_dir.join(MANIFEST_FILE), pretty(&manifest))?;
    Ok(summary)
}

/// Reads a COCO index written by [`export`] back into samples.
pub fn import_coco(path: &Path) -> Result<Vec<AnnotatedSample>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let coco: CocoFile = serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut samples: BTreeMap<u64, AnnotatedSample> = coco
        .images
        .into_iter()
        .map(|img| {
            (
                img.id,
                AnnotatedSample {
                    image_ref: img.image_ref,
                    layout_id: img.layout_id,
                    variant_index: img.variant_index,
                    config_seed: img.config_seed,
                    fill_state: img.fill_state,
                    annotations: Vec::new(),
                    image_dims: Dims::new(img.width, img.height),
                },
            )
        })
        .collect();
    for a in coco.annotations {
        let sample = samples
            .get_mut(&a.image_id)
            .ok_or_else(|| DatasetError::Parse {
                path: path.display().to_string(),
                message: format!(
                    "annotation {} references missing image {}",
                    a.id, a.image_id
                ),
            })?;
        let [x, y, w, h] = a.bbox;
        sample.annotations.push(Annotation {
            bbox: BBox::new(x, y, w, h),
            cls: AnnotationClass::of(a.fine_label),
            source_key: a.source_key,
            line_index: a.line_index,
            visibility: a.visibility,
        });
    }
    Ok(samples.into_values().collect())
}

/// Result of re-reading an export directory.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportCheck {
    pub images: usize,
    pub annotations: usize,
    pub problems: Vec<String>,
}

#[derive(Deserialize)]
struct ManifestHead {
    format: ExportFormat,
    classes: Vec<String>,
}

/// Re-reads an export written by [`export`]: every image decodes at its
/// recorded size, every label parses and every sample passes
/// [`validate_sample`].
pub fn validate_export(out_dir: &Path) -> Result<ExportCheck, DatasetError> {
    let manifest_path = out_dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let head: ManifestHead = serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
        path: manifest_path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut check = ExportCheck::default();
    for split in Split::ALL {
        let split_dir = out_dir.join(split.as_str());
        let images_dir = split_dir.join("images");
        match head.format {
            ExportFormat::Coco => {
                let index = split_dir.join(COCO_FILE);
                let text = std::fs::read_to_string(&index).map_err(io_err(&index))?;
                let coco: CocoFile =
                    serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
                        path: index.display().to_string(),
                        message: e.to_string(),
                    })?;
                for img in &coco.images {
                    let path = images_dir.join(&img.file_name);
                    match image::image_dimensions(&path) {
                        Ok(d) if d == (img.width, img.height) => {}
                        Ok(d) => check.problems.push(format!(
                            "{}: decodes as {}x{}, recorded {}x{}",
                            path.display(),
                            d.0,
                            d.1,
                            img.width,
                            img.height
                        )),
                        Err(e) => check.problems.push(format!("{}: {e}", path.display())),
                    }
                }
                for a in &coco.annotations {
                    if a.category_id == 0 || a.category_id as usize > head.classes.len() {
                        check.problems.push(format!(
                            "annotation {}: category {} out of range",
                            a.id, a.category_id
                        ));
                    }
                }
                for sample in import_coco(&index)? {
                    check.images += 1;
                    check.annotations += sample.annotations.len();
                    for v in validate_sample(&sample) {
                        check.problems.push(format!("{}: {v}", sample.id()));
                    }
                }
            }
            ExportFormat::Yolo => {
                let mut pngs: Vec<_> = std::fs::read_dir(&images_dir)
                    .map_err(io_err(&images_dir))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|e| e == "png"))
                    .collect();
                pngs.sort();
                for png in pngs {
                    check.images += 1;
                    let stem = png
                        .file_stem()
                        .unwrap_or_default()
                        .to_string_lossy()
                        .into_owned();
                    let label = split_dir.join("labels").join(format!("{stem}.txt"));
                    let dims = match image::image_dimensions(&png) {
                        Ok((w, h)) => Dims::new(w, h),
                        Err(e) => {
                            check.problems.push(format!("{}: {e}", png.display()));
                            continue;
                        }
                    };
                    let text = match std::fs::read_to_string(&label) {
                        Ok(t) => t,
                        Err(e) => {
                            check.problems.push(format!("{}: {e}", label.display()));
                            continue;
                        }
                    };
                    match parse_yolo_label(&text, dims) {
                        Ok(boxes) => {
                            check.annotations += boxes.len();
                            for (class, b) in boxes {
                                if class as usize >= head.classes.len() {
                                    check.problems.push(format!(
                                        "{}: class {class} out of range",
                                        label.display()
                                    ));
                                }
                                if b.w == 0 || b.h == 0 || !b.fits(dims) {
                                    check.problems.push(format!(
                                        "{}: box {b:?} outside {dims:?}",
                                        label.display()
                                    ));
                                }
                            }
                        }
                        Err(e) => check.problems.push(format!("{}: {e}", label.display())),
                    }
                }
            }
        }
    }
    Ok(check)
}
