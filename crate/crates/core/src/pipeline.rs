//! On-disk orchestration of the stages behind the `screenforge` binary.
//!
//! Work directory layout:
//!
//! ```text
//! <work>/split.json
//! <work>/configs/<layout>/<variant>.json
//! <work>/renders/<layout>/<variant>/<fill>.{html,png,json,done}
//! <out>/{train,test}/images/   <out>/{train,test}/{labels/|annotations.json}
//! <out>/manifest.json
//! ```
//!
//! A `.done` marker holds a digest of the rendered document, viewport and
//! engine; a sample is re-rendered only when its marker is missing or stale.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::OcrWord;
use crate::catalog::{Catalog, CatalogError};
use crate::config::{generate_config, ConfigError, DataConfig, GenerateOptions, Partition};
use crate::dataset::{
    self, check_leakage, ClassMap, ClassMode, DatasetError, ExportFormat, ExportItem,
    ExportOptions, ExportSummary, LayoutInfo, LeakageReport, Split, SplitAssignment, SplitStrategy,
};
use crate::fill::{plan_states, Density, FillError, FillPlan, FillState};
use crate::geometry::{finalize, GeometryError};
use crate::model::{
    read_record, to_record, validate_sample, AnnotatedSample, BBox, FillTag, RecordError, SampleId,
};
use crate::render::offline::Page;
use crate::render::{render_batch, RenderError, RenderJob, RenderResult, Renderer, Viewport};
use crate::rng::{stable_hash, sub_rng};
use crate::template::{
    instantiate, load_all, validate_template, Issue, LayoutTemplate, TemplateError,
};

pub const SPLIT_FILE: &str = "split.json";
pub const CONFIGS_DIR: &str = "configs";
pub const RENDERS_DIR: &str = "renders";
/// Render jobs handed to the batch runner at a time.
pub const CHUNK: usize = 64;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Fill(#[from] FillError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Missing(String),
    #[error("sample {sample}: {detail}")]
    InvalidSample { sample: String, detail: String },
}

fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.into();
    move |source| PipelineError::Io { path, source }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn read(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

/// Resolved run parameters, echoed into the export manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub layouts_dir: PathBuf,
    pub catalog: Option<PathBuf>,
    pub asset_root: PathBuf,
    pub work_dir: PathBuf,
    pub out_dir: PathBuf,
    pub master_seed: u64,
    pub variants: u32,
    pub density: Density,
    pub viewport: Viewport,
    pub full_page: bool,
    pub jobs: usize,
}

impl PipelineConfig {
    pub fn new(layouts_dir: impl Into<PathBuf>, work_dir: impl Into<PathBuf>) -> Self {
        let work_dir = work_dir.into();
        PipelineConfig {
            layouts_dir: layouts_dir.into(),
            catalog: None,
            asset_root: PathBuf::from("."),
            out_dir: work_dir.join("out"),
            work_dir,
            master_seed: 0,
            variants: crate::config::DEFAULT_VARIANTS,
            density: Density::All,
            viewport: Viewport::default(),
            full_page: true,
            jobs: 1,
        }
    }

    /// Path-free parameters, stable across work directories.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::json!({
            "master_seed": self.master_seed,
            "variants": self.variants,
            "partials": self.density.to_string(),
            "viewport": self.viewport.to_string(),
            "full_page": self.full_page,
        })
    }
}

/// One planned render: a sample id plus the document to load.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderTask {
    pub id: SampleId,
    pub config_seed: u64,
    pub document: String,
}

#[derive(Debug, Default)]
pub struct RenderSummary {
    pub rendered: usize,
    pub skipped: usize,
    pub failed: Vec<(SampleId, String)>,
    pub aborted: Option<RenderError>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSummary {
    pub layouts: usize,
    pub configs: usize,
    pub partitioned: bool,
}

/// Templates and catalog loaded for a run.
pub struct Workspace {
    pub cfg: PipelineConfig,
    pub templates: Vec<LayoutTemplate>,
    pub catalog: Catalog,
}

impl Workspace {
    pub fn open(cfg: PipelineConfig) -> Result<Self, PipelineError> {
        let templates = load_all(&cfg.layouts_dir)?;
        let catalog = match &cfg.catalog {
            Some(path) => Catalog::load(path, &cfg.asset_root)?,
            None => Catalog::default(),
        };
        Ok(Workspace {
            cfg,
            templates,
            catalog,
        })
    }

    pub fn template(&self, layout_id: &str) -> Option<&LayoutTemplate> {
        self.templates.iter().find(|t| t.layout_id == layout_id)
    }

    /// Authoring issues per layout; empty when every template is clean.
    pub fn validate(&self) -> BTreeMap<String, Vec<Issue>> {
        self.templates
            .iter()
            .map(|t| (t.layout_id.clone(), validate_template(t)))
            .filter(|(_, issues)| !issues.is_empty())
            .collect()
    }

    pub fn layout_infos(&self) -> Vec<LayoutInfo> {
        self.templates
            .iter()
            .map(|t| LayoutInfo {
                layout_id: t.layout_id.clone(),
                brand: t.brand.clone(),
                page_type: t.page_type.to_string(),
            })
            .collect()
    }

    fn split_path(&self) -> PathBuf {
        self.cfg.work_dir.join(SPLIT_FILE)
    }

    pub fn split(&self, strategy: &SplitStrategy) -> Result<SplitAssignment, PipelineError> {
        let assignment = dataset::split(&self.layout_infos(), strategy, self.cfg.master_seed)?;
        write(&self.split_path(), assignment.to_json())?;
        Ok(assignment)
    }

    pub fn read_split(&self) -> Result<Option<SplitAssignment>, PipelineError> {
        let path = self.split_path();
        if !path.exists() {
            return Ok(None);
        }
        let text = read(&path)?;
        serde_json::from_str(&text).map(Some).map_err(|e| {
            PipelineError::Dataset(DatasetError::Parse {
                path: path.display().to_string(),
                message: e.to_string(),
            })
        })
    }

    fn config_path(&self, layout_id: &str, variant: u32) -> PathBuf {
        self.cfg
            .work_dir
            .join(CONFIGS_DIR)
            .join(layout_id)
            .join(format!("{variant:03}.json"))
    }

    /// Writes `variants` configs per layout. With a split on disk, train and
    /// test layouts draw from disjoint value partitions.
    pub fn gen_configs(&self) -> Result<GenSummary, PipelineError> {
        let split = self.read_split()?;
        let mut configs = 0;
        for t in &self.templates {
            let partition = match &split {
                Some(a) => Some(match a.split_of(&t.layout_id) {
                    Some(Split::Train) => Partition { index: 0, count: 2 },
                    Some(Split::Test) => Partition { index: 1, count: 2 },
                    None => {
                        return Err(PipelineError::Missing(format!(
                            "layout `{}` is missing from {SPLIT_FILE}; re-run split",
                            t.layout_id
                        )))
                    }
                }),
                None => None,
            };
            for v in 0..self.cfg.variants {
                let opts = GenerateOptions {
                    master_seed: self.cfg.master_seed,
                    variant_index: v,
                    partition,
                };
                let config = generate_config(&t.layout_id, &t.data_spec, &self.catalog, &opts)?;
                write(&self.config_path(&t.layout_id, v), config.to_json())?;
                configs += 1;
            }
        }
        Ok(GenSummary {
            layouts: self.templates.len(),
            configs,
            partitioned: split.is_some(),
        })
    }

    pub fn load_configs(&self, layout_id: &str) -> Result<Vec<DataConfig>, PipelineError> {
        let mut out = Vec::new();
        for v in 0..self.cfg.variants {
            let path = self.config_path(layout_id, v);
            if !path.exists() {
                return Err(PipelineError::Missing(format!(
                    "{} not found; run gen-configs",
                    path.display()
                )));
            }
            out.push(serde_json::from_str(&read(&path)?).map_err(|e| {
                PipelineError::Dataset(DatasetError::Parse {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })
            })?);
        }
        Ok(out)
    }

    pub fn all_configs(&self) -> Result<BTreeMap<String, Vec<DataConfig>>, PipelineError> {
        self.templates
            .iter()
            .map(|t| Ok((t.layout_id.clone(), self.load_configs(&t.layout_id)?)))
            .collect()
    }

    /// The ordered fill states for one variant.
    pub fn fill_states(
        &self,
        t: &LayoutTemplate,
        config: &DataConfig,
    ) -> Result<(FillPlan, Vec<FillState>), PipelineError> {
        plan_fill_states(t, config, self.cfg.density)
    }

    /// Σ over layouts and variants of the plan length.
    pub fn expected_image_count(&self) -> Result<usize, PipelineError> {
        let mut total = 0;
        for t in &self.templates {
            for config in self.load_configs(&t.layout_id)? {
                total += crate::fill::state_count(t.fill_slots(&config)?.len(), self.cfg.density);
            }
        }
        Ok(total)
    }

    pub fn tasks_for(&self, t: &LayoutTemplate) -> Result<Vec<RenderTask>, PipelineError> {
        let mut tasks = Vec::new();
        for config in self.load_configs(&t.layout_id)? {
            tasks.extend(tasks_for_config(
                t,
                &config,
                self.cfg.density,
                &self.cfg.asset_root,
            )?);
        }
        Ok(tasks)
    }

    pub fn sample_dir(&self, id: &SampleId) -> PathBuf {
        self.cfg
            .work_dir
            .join(RENDERS_DIR)
            .join(&id.layout_id)
            .join(format!("{:03}", id.variant_index))
    }

    fn stamp(&self, task: &RenderTask, engine: &str) -> String {
        format!(
            "{:016x}\n",
            stable_hash(&[
                task.document.as_bytes(),
                self.cfg.viewport.to_string().as_bytes(),
                &[u8::from(self.cfg.full_page)],
                engine.as_bytes(),
            ])
        )
    }

    /// Renders every sample whose done marker is missing or stale.
    pub fn render<F>(&self, factory: F) -> Result<RenderSummary, PipelineError>
    where
        F: Fn() -> Result<Box<dyn Renderer>, RenderError> + Sync,
    {
        let engine = factory()?.describe();
        let mut pending = Vec::new();
        let mut summary = RenderSummary::default();
        for t in &self.templates {
            for task in self.tasks_for(t)? {
                let marker = self
                    .sample_dir(&task.id)
                    .join(format!("{}.done", task.id.fill_tag));
                let stamp = self.stamp(&task, &engine);
                if std::fs::read_to_string(&marker).is_ok_and(|s| s == stamp) {
                    summary.skipped += 1;
                } else {
                    pending.push((task, stamp));
                }
            }
        }
        for chunk in pending.chunks(CHUNK) {
            let jobs: Vec<RenderJob> = chunk
                .iter()
                .map(|(task, _)| RenderJob {
                    sample_id: task.id.clone(),
                    document: task.document.clone(),
                    viewport: self.cfg.viewport,
                    full_page: self.cfg.full_page,
                })
                .collect();
            let outcome = render_batch(&jobs, self.cfg.jobs, &factory);
            for ((task, stamp), result) in chunk.iter().zip(outcome.results) {
                match result {
                    Some(Ok(out)) => match self.store(task, &out, stamp) {
                        Ok(()) => summary.rendered += 1,
                        Err(e) => summary.failed.push((task.id.clone(), e.to_string())),
                    },
                    Some(Err(e)) => summary.failed.push((task.id.clone(), e.to_string())),
                    None => {}
                }
            }
            if let Some(e) = outcome.aborted {
                summary.aborted = Some(e);
                break;
            }
        }
        Ok(summary)
    }

    fn store(
        &self,
        task: &RenderTask,
        out: &RenderResult,
        stamp: &str,
    ) -> Result<(), PipelineError> {
        let sample = finalize_sample(task, out, &self.relative_image(&task.id))?;
        let dir = self.sample_dir(&task.id);
        let tag = task.id.fill_tag;
        let marker = dir.join(format!("{tag}.done"));
        if marker.exists() {
            std::fs::remove_file(&marker).map_err(io_err(&marker))?;
        }
        write(&dir.join(format!("{tag}.html")), &task.document)?;
        write(&dir.join(format!("{tag}.png")), &out.image)?;
        write(&dir.join(format!("{tag}.json")), to_record(&sample))?;
        write(&marker, stamp)
    }

    fn relative_image(&self, id: &SampleId) -> String {
        format!(
            "{RENDERS_DIR}/{}/{:03}/{}.png",
            id.layout_id, id.variant_index, id.fill_tag
        )
    }

    /// Every finished sample on disk, in sample-id order.
    pub fn load_samples(&self) -> Result<Vec<ExportItem>, PipelineError> {
        let mut items = Vec::new();
        for t in &self.templates {
            let root = self.cfg.work_dir.join(RENDERS_DIR).join(&t.layout_id);
            if !root.is_dir() {
                continue;
            }
            let mut records = Vec::new();
            for variant in std::fs::read_dir(&root).map_err(io_err(&root))? {
                let vdir = variant.map_err(io_err(&root))?.path();
                if !vdir.is_dir() {
                    continue;
                }
                for entry in std::fs::read_dir(&vdir).map_err(io_err(&vdir))? {
                    let p = entry.map_err(io_err(&vdir))?.path();
                    if p.extension().is_some_and(|e| e == "done") {
                        records.push(p.with_extension("json"));
                    }
                }
            }
            records.sort();
            for path in records {
                let sample = read_record(&path)?;
                let image_path = self.cfg.work_dir.join(&sample.image_ref);
                items.push(ExportItem { sample, image_path });
            }
        }
        items.sort_by_key(|i| i.sample.id());
        Ok(items)
    }

    pub fn leakage(&self, assignment: &SplitAssignment) -> Result<LeakageReport, PipelineError> {
        Ok(check_leakage(assignment, &self.all_configs()?))
    }

    /// Exports finished samples. `approved`, when given, restricts export to
    /// those layouts.
    pub fn export(
        &self,
        format: ExportFormat,
        classes: ClassMode,
        approved: Option<&BTreeSet<String>>,
        mut extra: BTreeMap<String, serde_json::Value>,
    ) -> Result<ExportSummary, PipelineError> {
        let assignment = self
            .read_split()?
            .ok_or_else(|| PipelineError::Missing(format!("{SPLIT_FILE} not found; run split")))?;
        let leakage = self.leakage(&assignment)?;
        let all = self.load_samples()?;
        let total = all.len();
        let items: Vec<ExportItem> = all
            .into_iter()
            .filter(|i| approved.is_none_or(|a| a.contains(&i.sample.layout_id)))
            .collect();
        extra.insert("pipeline".into(), self.cfg.echo());
        extra.insert(
            "expected_images".into(),
            self.expected_image_count()?.into(),
        );
        extra.insert("rendered_images".into(), total.into());
        extra.insert("gated_out_images".into(), (total - items.len()).into());
        let opts = ExportOptions {
            format,
            class_map: ClassMap::new(classes),
            manifest_extra: extra,
        };
        Ok(dataset::export(
            &items,
            &assignment,
            &leakage,
            &self.cfg.out_dir,
            &opts,
        )?)
    }
}

/// Word boxes for every finished sample, read off the offline layout of its
/// stored document. Stands in for an OCR engine when none is available.
pub fn simulated_ocr(ws: &Workspace) -> Result<Vec<OcrWord>, PipelineError> {
    let mut out = Vec::new();
    for item in ws.load_samples()? {
        let s = &item.sample;
        let id = s.id();
        let html = ws.sample_dir(&id).join(format!("{}.html", id.fill_tag));
        let page = Page::layout(&read(&html)?, ws.cfg.viewport, ws.cfg.full_page)?;
        for (text, r) in page.words() {
            let x = r.x.round().max(0.0) as u32;
            let y = r.y.round().max(0.0) as u32;
            let right = (r.right().round().max(0.0) as u32).min(s.image_dims.width);
            let bottom = (r.bottom().round().max(0.0) as u32).min(s.image_dims.height);
            if right <= x || bottom <= y {
                continue;
            }
            out.push(OcrWord {
                sample_id: id.clone(),
                text,
                bbox: BBox::new(x, y, right - x, bottom - y),
                confidence: 1.0,
            });
        }
    }
    Ok(out)
}

/// Plan plus resolved per-field targets for every state.
pub fn plan_fill_states(
    t: &LayoutTemplate,
    config: &DataConfig,
    density: Density,
) -> Result<(FillPlan, Vec<FillState>), PipelineError> {
    let slots = t.fill_slots(config)?;
    let plan = plan_states(slots.len(), density, &mut sub_rng(config.seed, "fill-plan"))?;
    let states = plan
        .states
        .iter()
        .map(|tag| {
            FillState::resolve(
                *tag,
                &slots,
                &mut sub_rng(config.seed, &format!("fill:{tag}")),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((plan, states))
}

/// Instantiated documents for every fill state of one config.
pub fn tasks_for_config(
    t: &LayoutTemplate,
    config: &DataConfig,
    density: Density,
    asset_root: &Path,
) -> Result<Vec<RenderTask>, PipelineError> {
    let (_, states) = plan_fill_states(t, config, density)?;
    states
        .iter()
        .map(|state| {
            Ok(RenderTask {
                id: SampleId::new(t.layout_id.clone(), config.variant_index, state.tag),
                config_seed: config.seed,
                document: instantiate(t, config, state, asset_root)?,
            })
        })
        .collect()
}

/// Finalizes a render into a validated sample.
pub fn finalize_sample(
    task: &RenderTask,
    out: &RenderResult,
    image_ref: &str,
) -> Result<AnnotatedSample, PipelineError> {
    let annotations = finalize(&out.raw_annotations, out.image_dims)?;
    let sample = AnnotatedSample {
        image_ref: image_ref.to_string(),
        layout_id: task.id.layout_id.clone(),
        variant_index: task.id.variant_index,
        config_seed: task.config_seed,
        fill_state: task.id.fill_tag,
        annotations,
        image_dims: out.image_dims,
    };
    let violations = validate_sample(&sample);
    if !violations.is_empty() {
        return Err(PipelineError::InvalidSample {
            sample: task.id.to_string(),
            detail: violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; "),
        });
    }
    Ok(sample)
}

/// Fill tags shown as review previews: empty, the middle partial stage and full.
pub fn preview_tags(plan: &FillPlan) -> Vec<FillTag> {
    let partials: Vec<FillTag> = plan
        .states
        .iter()
        .copied()
        .filter(|t| matches!(t, FillTag::Partial(_)))
        .collect();
    let mut tags = Vec::new();
    if plan.states.contains(&FillTag::Empty) {
        tags.push(FillTag::Empty);
    }
    if !partials.is_empty() {
        tags.push(partials[partials.len() / 2]);
    }
    tags.push(FillTag::Full);
    tags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::offline::OfflineRenderer;

    fn fixture(rel: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("fixtures")
            .join(rel)
    }

    fn workspace(work: &Path, variants: u32) -> Workspace {
        let mut cfg = PipelineConfig::new(fixture("layouts"), work);
        cfg.catalog = Some(fixture("catalog/products.ndjson"));
        cfg.asset_root = fixture("catalog");
        cfg.variants = variants;
        cfg.master_seed = 7;
        cfg.jobs = 2;
        Workspace::open(cfg).unwrap()
    }

    fn offline() -> Result<Box<dyn Renderer>, RenderError> {
        Ok(Box::new(OfflineRenderer::new()))
    }

    #[test]
    fn fixture_templates_are_clean() {
        let tmp = tempfile::tempdir().unwrap();
        let ws = workspace(tmp.path(), 1);
        assert_eq!(ws.templates.len(), 10);
        assert_eq!(ws.validate(), BTreeMap::new());
    }

    #[test]
    fn render_is_resumable_and_counts_match() {
        let tmp = tempfile::tempdir().unwrap();
        let ws = workspace(tmp.path(), 2);
        ws.split(&"cross-page:0.2".parse().unwrap()).unwrap();
        let gen = ws.gen_configs().unwrap();
        assert_eq!(gen.configs, 20);
        assert!(gen.partitioned);
        let first = ws.render(offline).unwrap();
        assert!(first.failed.is_empty(), "{:?}", first.failed);
        assert_eq!(first.rendered, ws.expected_image_count().unwrap());
        let again = ws.render(offline).unwrap();
        assert_eq!((again.rendered, again.skipped), (0, first.rendered));
        assert_eq!(ws.load_samples().unwrap().len(), first.rendered);
    }
}
