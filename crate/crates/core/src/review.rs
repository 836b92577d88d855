//! Layout review: an append-only decision ledger, a pending queue, preview
//! re-rendering, the export gate and a small HTTP API over all of it.
//!
//! Routes (JSON in and out):
//!
//! | method | path | body / reply |
//! |--------|------|--------------|
//! | GET | `/queue/next` | next pending [`ItemView`], or `{"done": true}` |
//! | GET | `/layout/{id}` | [`ItemView`] with previews and annotations |
//! | GET | `/layout/{id}/preview/{tag}.png` | preview image |
//! | POST | `/layout/{id}/decision` | [`DecisionRequest`] -> [`ItemView`] |
//! | POST | `/layout/{id}/rerender` | -> [`ItemView`] |
//! | GET | `/report` | [`GateReport`] |

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::config::{generate_config, GenerateOptions};
use crate::dataset::ExportItem;
use crate::model::{AnnotatedSample, FillTag};
use crate::pipeline::{
    finalize_sample, plan_fill_states, preview_tags, tasks_for_config, PipelineConfig,
    PipelineError,
};
use crate::render::{RenderError, RenderJob, Renderer};
use crate::template::{load_template, validate_template, TemplateError};

pub const REVIEW_DIR: &str = "review";
pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const PREVIEWS_DIR: &str = "previews";
/// Optional screenshot of the page a layout was built from.
pub const SOURCE_SCREENSHOT: &str = "source.png";

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown layout `{0}`")]
    UnknownLayout(String),
    #[error("ledger {path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> ReviewError {
    let path = path.into();
    move |source| ReviewError::Io { path, source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Decision {
    Pending,
    Approved,
    Flagged { note: String },
    Excluded,
    RenderFailed { error: String },
}

impl Decision {
    pub fn name(&self) -> &'static str {
        match self {
            Decision::Pending => "pending",
            Decision::Approved => "approved",
            Decision::Flagged { .. } => "flagged",
            Decision::Excluded => "excluded",
            Decision::RenderFailed { .. } => "render_failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Decided {
        decision: Decision,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        idempotency_key: Option<String>,
    },
    Rerendered,
    RenderFailed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub seq: u64,
    pub layout_id: String,
    pub at_ms: u64,
    #[serde(flatten)]
    pub event: Event,
}

/// Replayed state of one layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemState {
    pub layout_id: String,
    pub decision: Decision,
    pub iteration_count: u32,
    /// 0 until re-queued; then the sequence number of the re-queue.
    pub queue_pos: u64,
    pub history_len: usize,
}

impl ItemState {
    fn new(layout_id: &str) -> Self {
        ItemState {
            layout_id: layout_id.to_string(),
            decision: Decision::Pending,
            iteration_count: 0,
            queue_pos: 0,
            history_len: 0,
        }
    }

    fn apply(&mut self, entry: &LedgerEntry) {
        self.history_len += 1;
        match &entry.event {
            Event::Decided { decision, .. } => {
                if matches!(decision, Decision::Flagged { .. }) {
                    self.iteration_count += 1;
                }
                self.decision = decision.clone();
            }
            Event::Rerendered => {
                self.decision = Decision::Pending;
                self.queue_pos = entry.seq;
            }
            Event::RenderFailed { error } => {
                self.decision = Decision::RenderFailed {
                    error: error.clone(),
                };
            }
        }
    }
}

/// Append-only JSONL decision log. Every append is flushed to disk before
/// it returns.
pub struct Ledger {
    path: PathBuf,
    file: File,
    items: BTreeMap<String, ItemState>,
    keys: BTreeMap<String, u64>,
    next_seq: u64,
}

impl Ledger {
    /// Opens or creates the ledger and replays it. Every id in `layout_ids`
    /// gets an item; ids only present in the file are kept too. A torn final
    /// line (never acknowledged) is cut off.
    pub fn open(
        path: &Path,
        layout_ids: impl IntoIterator<Item = String>,
    ) -> Result<Ledger, ReviewError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let mut items: BTreeMap<String, ItemState> = layout_ids
            .into_iter()
            .map(|id| (id.clone(), ItemState::new(&id)))
            .collect();
        let mut keys = BTreeMap::new();
        let mut next_seq = 1;
        let mut good_len = 0u64;
        if path.exists() {
            let mut text = String::new();
            File::open(path)
                .and_then(|mut f| f.read_to_string(&mut text))
                .map_err(io_err(path))?;
            let mut offset = 0usize;
            for (i, line) in text.split_inclusive('\n').enumerate() {
                offset += line.len();
                let complete = line.ends_with('\n');
                if line.trim().is_empty() {
                    good_len = offset as u64;
                    continue;
                }
                if !complete {
                    break;
                }
                match serde_json::from_str::<LedgerEntry>(line.trim_end()) {
                    Ok(entry) => {
                        let item = items
                            .entry(entry.layout_id.clone())
                            .or_insert_with(|| ItemState::new(&entry.layout_id));
                        item.apply(&entry);
                        if let Event::Decided {
                            idempotency_key: Some(k),
                            ..
                        } = &entry.event
                        {
                            keys.insert(k.clone(), entry.seq);
                        }
                        next_seq = next_seq.max(entry.seq + 1);
                        good_len = offset as u64;
                    }
                    Err(e) => {
                        return Err(ReviewError::Corrupt {
                            path: path.to_path_buf(),
                            line: i + 1,
                            message: e.to_string(),
                        })
                    }
                }
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        if file.metadata().map_err(io_err(path))?.len() > good_len {
            file.set_len(good_len).map_err(io_err(path))?;
        }
        Ok(Ledger {
            path: path.to_path_buf(),
            file,
            items,
            keys,
            next_seq,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn append(&mut self, layout_id: &str, event: Event) -> Result<&ItemState, ReviewError> {
        if !self.items.contains_key(layout_id) {
            return Err(ReviewError::UnknownLayout(layout_id.to_string()));
        }
        let entry = LedgerEntry {
            seq: self.next_seq,
            layout_id: layout_id.to_string(),
            at_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_millis() as u64)
                .unwrap_or(0),
            event,
        };
        let mut line = serde_json::to_string(&entry).expect("ledger entry serializes");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.sync_data())
            .map_err(io_err(&self.path))?;
        self.next_seq += 1;
        if let Event::Decided {
            idempotency_key: Some(k),
            ..
        } = &entry.event
        {
            self.keys.insert(k.clone(), entry.seq);
        }
        let item = self.items.get_mut(layout_id).expect("checked above");
        item.apply(&entry);
        Ok(item)
    }

    /// Records a reviewer decision. A repeated idempotency key is acknowledged
    /// without appending.
    pub fn decide(
        &mut self,
        layout_id: &str,
        decision: Decision,
        idempotency_key: Option<String>,
    ) -> Result<&ItemState, ReviewError> {
        if let Some(k) = &idempotency_key {
            if self.keys.contains_key(k) {
                return self
                    .items
                    .get(layout_id)
                    .ok_or_else(|| ReviewError::UnknownLayout(layout_id.to_string()));
            }
        }
        self.append(
            layout_id,
            Event::Decided {
                decision,
                idempotency_key,
            },
        )
    }

    /// Back to pending at the tail of the queue.
    pub fn requeue(&mut self, layout_id: &str) -> Result<&ItemState, ReviewError> {
        self.append(layout_id, Event::Rerendered)
    }

    pub fn render_failed(
        &mut self,
        layout_id: &str,
        error: String,
    ) -> Result<&ItemState, ReviewError> {
        self.append(layout_id, Event::RenderFailed { error })
    }

    pub fn item(&self, layout_id: &str) -> Option<&ItemState> {
        self.items.get(layout_id)
    }

    pub fn items(&self) -> impl Iterator<Item = &ItemState> {
        self.items.values()
    }

    /// Pending items in serving order.
    pub fn pending(&self) -> Vec<&ItemState> {
        let mut out: Vec<&ItemState> = self
            .items
            .values()
            .filter(|i| i.decision == Decision::Pending)
            .collect();
        out.sort_by(|a, b| (a.queue_pos, &a.layout_id).cmp(&(b.queue_pos, &b.layout_id)));
        out
    }

    pub fn queue_next(&self) -> Option<&ItemState> {
        self.pending().into_iter().next()
    }

    /// Total entries replayed or appended.
    pub fn history_len(&self) -> usize {
        self.items.values().map(|i| i.history_len).sum()
    }

    pub fn approved(&self) -> BTreeSet<String> {
        self.items
            .values()
            .filter(|i| i.decision == Decision::Approved)
            .map(|i| i.layout_id.clone())
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    /// Layouts per latest decision.
    pub layouts: BTreeMap<String, usize>,
    pub passed_layouts: usize,
    pub passed_samples: usize,
    pub blocked_samples: usize,
    pub excluded: Vec<String>,
    pub flagged: Vec<String>,
    pub history_len: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Keeps only samples of layouts whose latest decision is `approved`.
pub fn export_gate(ledger: &Ledger, samples: Vec<ExportItem>) -> (Vec<ExportItem>, GateReport) {
    let approved = ledger.approved();
    let mut report = report(ledger);
    let (pass, block): (Vec<ExportItem>, Vec<ExportItem>) = samples
        .into_iter()
        .partition(|s| approved.contains(&s.sample.layout_id));
    report.passed_samples = pass.len();
    report.blocked_samples = block.len();
    if pass.is_empty() {
        report
            .warnings
            .push("export gate passed no samples: no layout is approved".to_string());
    }
    (pass, report)
}

pub fn report(ledger: &Ledger) -> GateReport {
    let mut r = GateReport {
        history_len: ledger.history_len(),
        ..GateReport::default()
    };
    for name in [
        "pending",
        "approved",
        "flagged",
        "excluded",
        "render_failed",
    ] {
        r.layouts.insert(name.to_string(), 0);
    }
    for item in ledger.items() {
        *r.layouts
            .entry(item.decision.name().to_string())
            .or_insert(0) += 1;
        match item.decision {
            Decision::Approved => r.passed_layouts += 1,
            Decision::Excluded => r.excluded.push(item.layout_id.clone()),
            Decision::Flagged { .. } => r.flagged.push(item.layout_id.clone()),
            _ => {}
        }
    }
    r
}

/// One rendered preview.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preview {
    pub fill_state: FillTag,
    /// Relative to the work directory.
    pub image: String,
    pub sample: AnnotatedSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Previews {
    pub layout_id: String,
    pub n_fields: usize,
    pub states: Vec<Preview>,
}

/// What a reviewer sees for one layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    #[serde(flatten)]
    pub state: ItemState,
    pub previews: Option<Previews>,
    pub source_screenshot: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRequest {
    /// `approved`, `flagged` or `excluded`.
    pub decision: String,
    #[serde(default)]
    pub note: Option<String>,
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

impl DecisionRequest {
    pub fn to_decision(&self) -> Result<Decision, ReviewError> {
        match self.decision.as_str() {
            "approved" | "approve" => Ok(Decision::Approved),
            "excluded" | "exclude" => Ok(Decision::Excluded),
            "flagged" | "flag" => Ok(Decision::Flagged {
                note: self.note.clone().unwrap_or_default(),
            }),
            other => Err(ReviewError::BadRequest(format!(
                "unknown decision `{other}`"
            ))),
        }
    }
}

pub type RendererFactory = Arc<dyn Fn() -> Result<Box<dyn Renderer>, RenderError> + Send + Sync>;

/// Ledger plus preview rendering. Shared across HTTP worker threads.
pub struct ReviewService {
    cfg: PipelineConfig,
    catalog: Catalog,
    ledger: Mutex<Ledger>,
    renderer: RendererFactory,
    /// Per-layout locks serializing re-renders.
    render_locks: Mutex<BTreeMap<String, Arc<Mutex<()>>>>,
}

impl ReviewService {
    pub fn open(cfg: PipelineConfig, renderer: RendererFactory) -> Result<Self, ReviewError> {
        let catalog = match &cfg.catalog {
            Some(path) => Catalog::load(path, &cfg.asset_root).map_err(PipelineError::from)?,
            None => Catalog::default(),
        };
        let ids = layout_ids(&cfg.layouts_dir)?;
        let ledger = Ledger::open(&cfg.work_dir.join(REVIEW_DIR).join(LEDGER_FILE), ids)?;
        Ok(ReviewService {
            cfg,
            catalog,
            ledger: Mutex::new(ledger),
            renderer,
            render_locks: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn with_ledger<T>(&self, f: impl FnOnce(&mut Ledger) -> T) -> T {
        f(&mut self.ledger.lock().unwrap_or_else(|e| e.into_inner()))
    }

    fn previews_dir(&self, layout_id: &str) -> PathBuf {
        self.cfg
            .work_dir
            .join(REVIEW_DIR)
            .join(PREVIEWS_DIR)
            .join(layout_id)
    }

    fn item(&self, layout_id: &str) -> Result<ItemState, ReviewError> {
        self.with_ledger(|l| l.item(layout_id).cloned())
            .ok_or_else(|| ReviewError::UnknownLayout(layout_id.to_string()))
    }

    pub fn view(&self, layout_id: &str) -> Result<ItemView, ReviewError> {
        let state = self.item(layout_id)?;
        let index = self.previews_dir(layout_id).join("previews.json");
        let previews = std::fs::read_to_string(&index)
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok());
        let source = self.cfg.layouts_dir.join(layout_id).join(SOURCE_SCREENSHOT);
        Ok(ItemView {
            state,
            previews,
            source_screenshot: source.is_file().then(|| source.display().to_string()),
        })
    }

    /// Renders empty, middle-partial and full previews of variant 0 from the
    /// template as it is on disk now.
    pub fn render_previews(&self, layout_id: &str) -> Result<Previews, ReviewError> {
        let lock = {
            let mut locks = self.render_locks.lock().unwrap_or_else(|e| e.into_inner());
            locks.entry(layout_id.to_string()).or_default().clone()
        };
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let t =
            load_template(&self.cfg.layouts_dir.join(layout_id)).map_err(PipelineError::from)?;
        if let Some(issue) = validate_template(&t).into_iter().next() {
            return Err(PipelineError::Template(TemplateError::Parse {
                file: layout_id.to_string(),
                line: issue.line,
                col: issue.col,
                message: issue.detail,
            })
            .into());
        }
        let opts = GenerateOptions {
            master_seed: self.cfg.master_seed,
            variant_index: 0,
            partition: None,
        };
        let config = generate_config(layout_id, &t.data_spec, &self.catalog, &opts)
            .map_err(PipelineError::from)?;
        let (plan, _) = plan_fill_states(&t, &config, self.cfg.density)?;
        let wanted = preview_tags(&plan);
        let tasks: Vec<_> = tasks_for_config(&t, &config, self.cfg.density, &self.cfg.asset_root)?
            .into_iter()
            .filter(|task| wanted.contains(&task.id.fill_tag))
            .collect();
        let mut renderer = (self.renderer)().map_err(PipelineError::from)?;
        let dir = self.previews_dir(layout_id);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut states = Vec::new();
        for task in &tasks {
            let job = RenderJob {
                sample_id: task.id.clone(),
                document: task.document.clone(),
                viewport: self.cfg.viewport,
                full_page: self.cfg.full_page,
            };
            let out = renderer.render(&job).map_err(PipelineError::from)?;
            let image = format!(
                "{REVIEW_DIR}/{PREVIEWS_DIR}/{layout_id}/{}.png",
                task.id.fill_tag
            );
            let sample = finalize_sample(task, &out, &image)?;
            let png = self.cfg.work_dir.join(&image);
            std::fs::write(&png, &out.image).map_err(io_err(&png))?;
            states.push(Preview {
                fill_state: task.id.fill_tag,
                image,
                sample,
            });
        }
        let previews = Previews {
            layout_id: layout_id.to_string(),
            n_fields: t.fill_slots(&config).map_err(PipelineError::from)?.len(),
            states,
        };
        let index = dir.join("previews.json");
        let json = serde_json::to_string_pretty(&previews).expect("previews serialize");
        std::fs::write(&index, json).map_err(io_err(&index))?;
        Ok(previews)
    }

    /// Re-renders previews and puts the layout back in the queue. A render
    /// failure marks the item `render_failed` and is returned as the view.
    pub fn rerender(&self, layout_id: &str) -> Result<ItemView, ReviewError> {
        self.item(layout_id)?;
        match self.render_previews(layout_id) {
            Ok(_) => {
                self.with_ledger(|l| l.requeue(layout_id).map(|_| ()))?;
            }
            Err(e) => {
                self.with_ledger(|l| l.render_failed(layout_id, e.to_string()).map(|_| ()))?;
            }
        }
        self.view(layout_id)
    }

    /// Next pending item, rendering its previews on first view. Items whose
    /// previews fail are marked `render_failed` and skipped.
    pub fn queue_next(&self) -> Result<Option<ItemView>, ReviewError> {
        loop {
            let Some(next) = self.with_ledger(|l| l.queue_next().map(|i| i.layout_id.clone()))
            else {
                return Ok(None);
            };
            let view = self.view(&next)?;
            if view.previews.is_some() {
                return Ok(Some(view));
            }
            match self.render_previews(&next) {
                Ok(_) => return self.view(&next).map(Some),
                Err(e) => {
                    self.with_ledger(|l| l.render_failed(&next, e.to_string()).map(|_| ()))?;
                }
            }
        }
    }

    pub fn decide(&self, layout_id: &str, req: &DecisionRequest) -> Result<ItemView, ReviewError> {
        let decision = req.to_decision()?;
        self.with_ledger(|l| {
            l.decide(layout_id, decision, req.idempotency_key.clone())
                .map(|_| ())
        })?;
        self.view(layout_id)
    }

    pub fn report(&self) -> GateReport {
        self.with_ledger(|l| report(l))
    }

    fn preview_png(&self, layout_id: &str, file: &str) -> Result<Vec<u8>, ReviewError> {
        self.item(layout_id)?;
        let tag = file
            .strip_suffix(".png")
            .and_then(|t| t.parse::<FillTag>().ok())
            .ok_or_else(|| ReviewError::BadRequest(format!("bad preview name `{file}`")))?;
        let path = self.previews_dir(layout_id).join(format!("{tag}.png"));
        std::fs::read(&path).map_err(io_err(path))
    }

    /// Routes one request. Returns status, content type and body.
    pub fn handle(&self, method: &str, url: &str, body: &[u8]) -> (u16, &'static str, Vec<u8>) {
        let path = url.split('?').next().unwrap_or_default();
        let parts: Vec<&str> = path.trim_matches('/').split('/').collect();
        let json = |v: Result<serde_json::Value, ReviewError>| match v {
            Ok(v) => (200, "application/json", v.to_string().into_bytes()),
            Err(e) => {
                let status = match e {
                    ReviewError::UnknownLayout(_) => 404,
                    ReviewError::BadRequest(_) => 400,
                    _ => 500,
                };
                (
                    status,
                    "application/json",
                    serde_json::json!({ "error": e.to_string() })
                        .to_string()
                        .into_bytes(),
                )
            }
        };
        let to_value = |v: ItemView| serde_json::to_value(v).expect("view serializes");
        match (method, parts.as_slice()) {
            ("GET", ["queue", "next"]) => json(self.queue_next().map(|v| match v {
                Some(v) => to_value(v),
                None => serde_json::json!({ "done": true }),
            })),
            ("GET", ["layout", id]) => json(self.view(id).map(to_value)),
            ("GET", ["layout", id, "preview", file]) => match self.preview_png(id, file) {
                Ok(bytes) => (200, "image/png", bytes),
                Err(e) => json(Err(e)),
            },
            ("POST", ["layout", id, "decision"]) => json(
                serde_json::from_slice::<DecisionRequest>(body)
                    .map_err(|e| ReviewError::BadRequest(e.to_string()))
                    .and_then(|req| self.decide(id, &req))
                    .map(to_value),
            ),
            ("POST", ["layout", id, "rerender"]) => json(self.rerender(id).map(to_value)),
            ("GET", ["report"]) => json(Ok(
                serde_json::to_value(self.report()).expect("report serializes")
            )),
            _ => (
                404,
                "application/json",
                serde_json::json!({ "error": format!("no route for {method} {path}") })
                    .to_string()
                    .into_bytes(),
            ),
        }
    }
}

fn layout_ids(root: &Path) -> Result<Vec<String>, ReviewError> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(root).map_err(io_err(root))? {
        let p = entry.map_err(io_err(root))?.path();
        if p.join(crate::template::PAGE_FILE).is_file() {
            if let Some(name) = p.file_name() {
                ids.push(name.to_string_lossy().into_owned());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// A bound HTTP server over a [`ReviewService`].
pub struct ReviewServer {
    server: Arc<tiny_http::Server>,
    service: Arc<ReviewService>,
}

impl ReviewServer {
    pub fn bind(addr: &str, service: Arc<ReviewService>) -> Result<Self, ReviewError> {
        let server = tiny_http::Server::http(addr).map_err(|e| ReviewError::Io {
            path: PathBuf::from(addr),
            source: std::io::Error::new(std::io::ErrorKind::AddrNotAvailable, e.to_string()),
        })?;
        Ok(ReviewServer {
            server: Arc::new(server),
            service,
        })
    }

    pub fn local_addr(&self) -> Option<std::net::SocketAddr> {
        self.server.server_addr().to_ip()
    }

    /// Serves until [`ReviewServer::unblock`] is called.
    pub fn serve(&self, workers: usize) {
        let threads: Vec<_> = (0..workers.max(1))
            .map(|_| {
                let server = self.server.clone();
                let service = self.service.clone();
                std::thread::spawn(move || {
                    for mut request in server.incoming_requests() {
                        let mut body = Vec::new();
                        let _ = request.as_reader().read_to_end(&mut body);
                        let method = request.method().as_str().to_ascii_uppercase();
                        let (status, ctype, bytes) = service.handle(&method, request.url(), &body);
                        let header = tiny_http::Header::from_bytes("Content-Type", ctype)
                            .expect("static header");
                        let response = tiny_http::Response::from_data(bytes)
                            .with_status_code(status)
                            .with_header(header);
                        let _ = request.respond(response);
                    }
                })
            })
            .collect();
        for t in threads {
            let _ = t.join();
        }
    }

    pub fn unblock(&self) {
        self.server.unblock();
    }

    pub fn handle(&self) -> ServerHandle {
        ServerHandle(self.server.clone())
    }
}

/// Stops a running [`ReviewServer`] from another thread.
#[derive(Clone)]
pub struct ServerHandle(Arc<tiny_http::Server>);

impl ServerHandle {
    pub fn stop(&self, workers: usize) {
        for _ in 0..workers.max(1) {
            self.0.unblock();
        }
    }
}

/// Reads ledger lines for inspection.
pub fn read_ledger(path: &Path) -> Result<Vec<LedgerEntry>, ReviewError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| ReviewError::Corrupt {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn queue_order_and_tail_requeue() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("l.jsonl");
        let mut l = Ledger::open(&path, ids(&["a", "b", "c"])).unwrap();
        assert_eq!(l.queue_next().unwrap().layout_id, "a");
        l.decide(
            "a",
            Decision::Flagged {
                note: "fix price".into(),
            },
            None,
        )
        .unwrap();
        assert_eq!(l.queue_next().unwrap().layout_id, "b");
        l.requeue("a").unwrap();
        let order: Vec<&str> = l.pending().iter().map(|i| i.layout_id.as_str()).collect();
        assert_eq!(order, ["b", "c", "a"]);
        assert_eq!(l.item("a").unwrap().iteration_count, 1);
        for id in ["a", "b", "c"] {
            l.decide(id, Decision::Approved, None).unwrap();
        }
        assert!(l.queue_next().is_none());
        assert!(matches!(
            l.decide("zz", Decision::Approved, None),
            Err(ReviewError::UnknownLayout(_))
        ));
    }

    #[test]
    fn survives_restart_and_torn_tail() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("l.jsonl");
        {
            let mut l = Ledger::open(&path, ids(&["a", "b"])).unwrap();
            l.decide("a", Decision::Excluded, Some("k1".into()))
                .unwrap();
            l.decide("a", Decision::Excluded, Some("k1".into()))
                .unwrap();
            assert_eq!(l.history_len(), 1);
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"seq":9,"layout_id":"b","at_"#).unwrap();
        drop(f);
        let mut l = Ledger::open(&path, ids(&["a", "b"])).unwrap();
        assert_eq!(l.item("a").unwrap().decision, Decision::Excluded);
        assert_eq!(l.item("b").unwrap().decision, Decision::Pending);
        l.decide("b", Decision::Approved, None).unwrap();
        assert_eq!(read_ledger(&path).unwrap().len(), 2);
    }

    #[test]
    fn gate_empty_ledger_is_loud() {
        let tmp = tempfile::tempdir().unwrap();
        let l = Ledger::open(&tmp.path().join("l.jsonl"), ids(&["a"])).unwrap();
        let (pass, report) = export_gate(&l, Vec::new());
        assert!(pass.is_empty());
        assert_eq!(report.passed_layouts, 0);
        assert_eq!(report.warnings.len(), 1);
        assert_eq!(report.layouts["pending"], 1);
    }
}
