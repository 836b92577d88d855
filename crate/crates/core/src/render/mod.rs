//! Render harness: turns instantiated documents into screenshots plus raw
//! extractor payloads.
//!
//! Two backends implement [`Renderer`]:
//!
//! - [`cdp::CdpRenderer`] drives a headless Chromium over the DevTools
//!   protocol and runs an external extraction script in the page.
//! - [`offline::OfflineRenderer`] lays pages out with a small deterministic
//!   box model (inline styles only, fixed font metrics) and extracts the same
//!   payload natively. It needs no browser.

pub mod cdp;
pub mod offline;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::RawPayload;
use crate::model::{Dims, SampleId};

pub const MIN_VIEWPORT_WIDTH: u32 = 320;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RenderError {
    #[error("navigation timed out after {0} ms")]
    NavigationTimeout(u64),
    #[error("extraction script failed: {0}")]
    ScriptError(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("browser crashed: {0}")]
    BrowserCrashed(String),
    #[error("could not launch browser: {0}")]
    Launch(String),
    #[error("invalid job: {0}")]
    InvalidJob(String),
    #[error("image encoding: {0}")]
    Image(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Viewport {
    pub width: u32,
    pub height: u32,
}

impl Default for Viewport {
    fn default() -> Self {
        Viewport {
            width: 1400,
            height: 900,
        }
    }
}

impl fmt::Display for Viewport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl FromStr for Viewport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected WxH, got `{s}`"))?;
        let width = w.trim().parse().map_err(|_| format!("bad width `{w}`"))?;
        let height = h.trim().parse().map_err(|_| format!("bad height `{h}`"))?;
        if width < MIN_VIEWPORT_WIDTH || height == 0 {
            return Err(format!(
                "viewport {width}x{height} below {MIN_VIEWPORT_WIDTH}x1"
            ));
        }
        Ok(Viewport { width, height })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderJob {
    pub sample_id: SampleId,
    pub document: String,
    pub viewport: Viewport,
    pub full_page: bool,
}

impl RenderJob {
    pub fn check(&self) -> Result<(), RenderError> {
        if self.viewport.width < MIN_VIEWPORT_WIDTH {
            return Err(RenderError::InvalidJob(format!(
                "viewport width {} below {MIN_VIEWPORT_WIDTH}",
                self.viewport.width
            )));
        }
        Ok(())
    }
}

/// Wall time per render phase, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub load_ms: f64,
    pub extract_ms: f64,
    pub capture_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderResult {
    /// PNG bytes.
    pub image: Vec<u8>,
    pub image_dims: Dims,
    pub raw_annotations: RawPayload,
    pub timings: Timings,
}

impl RenderResult {
    /// Dimensions read back from the encoded image.
    pub fn decoded_dims(&self) -> Result<Dims, RenderError> {
        let reader = image::ImageReader::with_format(
            std::io::Cursor::new(&self.image),
            image::ImageFormat::Png,
        );
        let (w, h) = reader
            .into_dimensions()
            .map_err(|e| RenderError::Image(e.to_string()))?;
        Ok(Dims::new(w, h))
    }
}

/// A page session owner. Each worker holds its own.
pub trait Renderer: Send {
    fn render(&mut self, job: &RenderJob) -> Result<RenderResult, RenderError>;

    /// Backend identifier recorded in manifests.
    fn describe(&self) -> String;
}

/// Outcome of [`render_batch`]: one slot per job, in job order.
#[derive(Debug)]
pub struct BatchOutcome {
    /// `None` for jobs that never ran because the batch was aborted.
    pub results: Vec<Option<Result<RenderResult, RenderError>>>,
    pub aborted: Option<RenderError>,
}

impl BatchOutcome {
    pub fn failures(&self) -> impl Iterator<Item = (usize, &RenderError)> {
        self.results
            .iter()
            .enumerate()
            .filter_map(|(i, r)| match r {
                Some(Err(e)) => Some((i, e)),
                _ => None,
            })
    }
}

/// Renders `jobs` on `parallelism` workers, each with a renderer from `factory`.
///
/// A failed job only fails its own slot. A crashed browser stops every
/// worker from taking further jobs; finished slots are kept.
pub fn render_batch<F>(jobs: &[RenderJob], parallelism: usize, factory: F) -> BatchOutcome
where
    F: Fn() -> Result<Box<dyn Renderer>, RenderError> + Sync,
{
    let workers = parallelism.max(1).min(jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Result<RenderResult, RenderError>)>();
    let mut results: Vec<Option<Result<RenderResult, RenderError>>> =
        (0..jobs.len()).map(|_| None).collect();
    let mut aborted = None;

    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, abort, factory) = (&next, &abort, &factory);
            scope.spawn(move || {
                let mut renderer = match factory() {
                    Ok(r) => r,
                    Err(e) => {
                        abort.store(true, Ordering::SeqCst);
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        if i < jobs.len() {
                            let _ = tx.send((i, Err(RenderError::BrowserCrashed(e.to_string()))));
                        }
                        return;
                    }
                };
                while !abort.load(Ordering::SeqCst) {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= jobs.len() {
                        break;
                    }
                    let out = jobs[i].check().and_then(|_| renderer.render(&jobs[i]));
                    if matches!(out, Err(RenderError::BrowserCrashed(_))) {
                        abort.store(true, Ordering::SeqCst);
                    }
                    if tx.send((i, out)).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);
        for (i, out) in rx {
            if let Err(e @ RenderError::BrowserCrashed(_)) = &out {
                aborted.get_or_insert_with(|| e.clone());
            }
            results[i] = Some(out);
        }
    });
    BatchOutcome { results, aborted }
}
