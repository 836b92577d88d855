//! Headless Chromium over the DevTools protocol.
//!
//! One browser process serves many jobs; every job gets its own target
//! (isolated page), and the process is relaunched after [`RECYCLE_EVERY`]
//! jobs. The in-page extraction script is supplied by the caller and must
//! evaluate to the payload JSON string.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader};
use std::net::TcpStream;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde_json::{json, Value};
use tungstenite::{Message, WebSocket};

use super::{RenderError, RenderJob, RenderResult, Renderer, Timings};
use crate::geometry::RawPayload;
use crate::model::Dims;

pub const BROWSER_ENV: &str = "SCREENFORGE_BROWSER";
pub const EXTRACTOR_ENV: &str = "SCREENFORGE_EXTRACTOR";
pub const RECYCLE_EVERY: usize = 50;
/// Epoch milliseconds every page sees as "now".
pub const FROZEN_NOW_MS: u64 = 1_700_000_000_000;

/// Injected before any page script runs.
pub const PAGE_PRELUDE: &str = r#"(() => {
  const fixed = 1700000000000;
  const Real = Date;
  class Frozen extends Real {
    constructor(...a) { if (a.length) { super(...a); } else { super(fixed); } }
    static now() { return fixed; }
  }
  window.Date = Frozen;
  const css = '*,*::before,*::after{animation:none!important;transition:none!important;' +
    'caret-color:transparent!important;font-family:"DejaVu Sans",Arial,sans-serif!important}';
  const inject = () => {
    const s = document.createElement('style');
    s.textContent = css;
    (document.head || document.documentElement).appendChild(s);
  };
  if (document.readyState === 'loading') {
    document.addEventListener('DOMContentLoaded', inject);
  } else {
    inject();
  }
})();"#;

#[derive(Debug, Clone)]
pub struct CdpConfig {
    pub browser: Option<PathBuf>,
    /// Source of the extraction script.
    pub extractor: String,
    pub navigation_timeout: Duration,
    pub call_timeout: Duration,
    pub recycle_every: usize,
}

impl CdpConfig {
    pub fn new(extractor: impl Into<String>) -> Self {
        CdpConfig {
            browser: None,
            extractor: extractor.into(),
            navigation_timeout: Duration::from_secs(30),
            call_timeout: Duration::from_secs(30),
            recycle_every: RECYCLE_EVERY,
        }
    }

    /// Reads the browser path and extractor script location from the environment.
    pub fn from_env() -> Result<Self, RenderError> {
        let browser = std::env::var_os(BROWSER_ENV)
            .map(PathBuf::from)
            .ok_or_else(|| RenderError::Launch(format!("{BROWSER_ENV} is not set")))?;
        let script_path = std::env::var_os(EXTRACTOR_ENV)
            .ok_or_else(|| RenderError::Launch(format!("{EXTRACTOR_ENV} is not set")))?;
        let extractor = std::fs::read_to_string(&script_path).map_err(|e| {
            RenderError::Launch(format!("{}: {e}", PathBuf::from(&script_path).display()))
        })?;
        Ok(CdpConfig {
            browser: Some(browser),
            ..CdpConfig::new(extractor)
        })
    }
}

fn ws_error(e: tungstenite::Error) -> RenderError {
    match e {
        tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed => {
            RenderError::BrowserCrashed("devtools connection closed".into())
        }
        tungstenite::Error::Io(io) => RenderError::BrowserCrashed(io.to_string()),
        tungstenite::Error::Protocol(p) => RenderError::BrowserCrashed(p.to_string()),
        other => RenderError::Protocol(other.to_string()),
    }
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut))
}

/// A DevTools websocket connection with command/response correlation.
pub struct CdpSession {
    socket: WebSocket<TcpStream>,
    next_id: u64,
    events: VecDeque<Value>,
}

impl CdpSession {
    pub fn connect(ws_url: &str) -> Result<Self, RenderError> {
        let rest = ws_url
            .strip_prefix("ws://")
            .ok_or_else(|| RenderError::Protocol(format!("unsupported endpoint `{ws_url}`")))?;
        let authority = rest.split('/').next().unwrap_or(rest);
        let stream = TcpStream::connect(authority)
            .map_err(|e| RenderError::Launch(format!("{authority}: {e}")))?;
        stream
            .set_read_timeout(Some(Duration::from_millis(100)))
            .map_err(|e| RenderError::Launch(e.to_string()))?;
        let (socket, _) = tungstenite::client(ws_url, stream)
            .map_err(|e| RenderError::Protocol(e.to_string()))?;
        Ok(CdpSession {
            socket,
            next_id: 1,
            events: VecDeque::new(),
        })
    }

    fn read(&mut self, deadline: Instant) -> Result<Option<Value>, RenderError> {
        loop {
            if Instant::now() >= deadline {
                return Ok(None);
            }
            match self.socket.read() {
                Ok(Message::Text(t)) => {
                    return serde_json::from_str(&t)
                        .map(Some)
                        .map_err(|e| RenderError::Protocol(format!("bad message: {e}")))
                }
                Ok(Message::Close(_)) => {
                    return Err(RenderError::BrowserCrashed(
                        "devtools connection closed".into(),
                    ))
                }
                Ok(_) => {}
                Err(e) if is_timeout(&e) => {}
                Err(e) => return Err(ws_error(e)),
            }
        }
    }

    /// Sends a command and waits for its response, buffering events seen meanwhile.
    pub fn call(
        &mut self,
        method: &str,
        params: Value,
        session: Option<&str>,
        timeout: Duration,
    ) -> Result<Value, RenderError> {
        let id = self.next_id;
        self.next_id += 1;
        let mut msg = json!({ "id": id, "method": method, "params": params });
        if let Some(s) = session {
            msg["sessionId"] = json!(s);
        }
        self.socket
            .send(Message::Text(msg.to_string()))
            .map_err(ws_error)?;
        let deadline = Instant::now() + timeout;
        loop {
            let Some(v) = self.read(deadline)? else {
                return Err(RenderError::Protocol(format!("{method} timed out")));
            };
            if v.get("id").and_then(Value::as_u64) == Some(id) {
                if let Some(err) = v.get("error") {
                    return Err(RenderError::Protocol(format!("{method}: {err}")));
                }
                return Ok(v.get("result").cloned().unwrap_or(Value::Null));
            }
            if v.get("method").is_some() {
                self.events.push_back(v);
            }
        }
    }

    /// Waits for an event by name on a session. `None` on timeout.
    pub fn wait_event(
        &mut self,
        method: &str,
        session: Option<&str>,
        timeout: Duration,
    ) -> Result<Option<Value>, RenderError> {
        let matches = |v: &Value| {
            v.get("method").and_then(Value::as_str) == Some(method)
                && session.is_none_or(|s| v.get("sessionId").and_then(Value::as_str) == Some(s))
        };
        if let Some(pos) = self.events.iter().position(matches) {
            return Ok(self.events.remove(pos));
        }
        let deadline = Instant::now() + timeout;
        while let Some(v) = self.read(deadline)? {
            if v.get("method").and_then(Value::as_str) == Some("Inspector.targetCrashed") {
                return Err(RenderError::BrowserCrashed("page target crashed".into()));
            }
            if matches(&v) {
                return Ok(Some(v));
            }
            if v.get("method").is_some() {
                self.events.push_back(v);
            }
        }
        Ok(None)
    }

    pub fn drain_events(&mut self) {
        self.events.clear();
    }
}

struct Browser {
    process: Option<Child>,
    session: CdpSession,
    jobs: usize,
    _profile: Option<tempfile::TempDir>,
}

impl Drop for Browser {
    fn drop(&mut self) {
        if let Some(p) = self.process.as_mut() {
            let _ = p.kill();
            let _ = p.wait();
        }
    }
}

fn launch(path: &PathBuf) -> Result<Browser, RenderError> {
    let profile = tempfile::tempdir().map_err(|e| RenderError::Launch(e.to_string()))?;
    let mut child = Command::new(path)
        .args([
            "--headless=new",
            "--remote-debugging-port=0",
            "--no-first-run",
            "--no-default-browser-check",
            "--disable-gpu",
            "--hide-scrollbars",
            "--font-render-hinting=none",
            "--allow-file-access-from-files",
        ])
        .arg(format!("--user-data-dir={}", profile.path().display()))
        .arg("about:blank")
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| RenderError::Launch(format!("{}: {e}", path.display())))?;
    let stderr = child.stderr.take().expect("piped stderr");
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for line in BufReader::new(stderr).lines().map_while(Result::ok) {
            if let Some(at) = line.find("ws://") {
                let _ = tx.send(line[at..].trim().to_string());
            }
        }
    });
    let url = rx.recv_timeout(Duration::from_secs(20)).map_err(|_| {
        let _ = child.kill();
        RenderError::Launch("browser did not report a devtools endpoint".into())
    })?;
    let session = CdpSession::connect(&url)?;
    Ok(Browser {
        process: Some(child),
        session,
        jobs: 0,
        _profile: Some(profile),
    })
}

pub struct CdpRenderer {
    config: CdpConfig,
    endpoint: Option<String>,
    browser: Option<Browser>,
}

impl CdpRenderer {
    /// Launches and owns a browser from `config.browser`.
    pub fn launch(config: CdpConfig) -> Result<Self, RenderError> {
        let path = config
            .browser
            .clone()
            .ok_or_else(|| RenderError::Launch("no browser path configured".into()))?;
        let browser = launch(&path)?;
        Ok(CdpRenderer {
            config,
            endpoint: None,
            browser: Some(browser),
        })
    }

    /// Attaches to an already running browser endpoint (`ws://host:port/...`).
    pub fn attach(ws_url: &str, config: CdpConfig) -> Result<Self, RenderError> {
        let session = CdpSession::connect(ws_url)?;
        Ok(CdpRenderer {
            config,
            endpoint: Some(ws_url.to_string()),
            browser: Some(Browser {
                process: None,
                session,
                jobs: 0,
                _profile: None,
            }),
        })
    }

    fn browser(&mut self) -> Result<&mut Browser, RenderError> {
        let stale = self
            .browser
            .as_ref()
            .is_none_or(|b| b.jobs >= self.config.recycle_every.max(1));
        if stale {
            self.browser = None;
            let fresh = match (&self.endpoint, &self.config.browser) {
                (Some(url), _) => Browser {
                    process: None,
                    session: CdpSession::connect(url)?,
                    jobs: 0,
                    _profile: None,
                },
                (None, Some(path)) => launch(path)?,
                (None, None) => {
                    return Err(RenderError::Launch("no browser path configured".into()))
                }
            };
            self.browser = Some(fresh);
        }
        Ok(self.browser.as_mut().expect("browser present"))
    }

    fn run_job(
        &mut self,
        job: &RenderJob,
        page_file: &std::path::Path,
    ) -> Result<RenderResult, RenderError> {
        let config = self.config.clone();
        let t = config.call_timeout;
        let b = self.browser()?;
        b.jobs += 1;
        let s = &mut b.session;
        s.drain_events();
        let target = s.call(
            "Target.createTarget",
            json!({ "url": "about:blank" }),
            None,
            t,
        )?;
        let target_id = target["targetId"].as_str().unwrap_or_default().to_string();
        let attached = s.call(
            "Target.attachToTarget",
            json!({ "targetId": target_id, "flatten": true }),
            None,
            t,
        )?;
        let sid = attached["sessionId"]
            .as_str()
            .ok_or_else(|| RenderError::Protocol("attachToTarget returned no session".into()))?
            .to_string();
        let sid = Some(sid.as_str());
        let result = (|| {
            s.call("Page.enable", json!({}), sid, t)?;
            s.call(
                "Emulation.setDeviceMetricsOverride",
                json!({
                    "width": job.viewport.width,
                    "height": job.viewport.height,
                    "deviceScaleFactor": 1,
                    "mobile": false
                }),
                sid,
                t,
            )?;
            s.call(
                "Page.addScriptToEvaluateOnNewDocument",
                json!({ "source": PAGE_PRELUDE }),
                sid,
                t,
            )?;
            let t0 = Instant::now();
            let url = format!("file://{}", page_file.display());
            let nav = s.call("Page.navigate", json!({ "url": url }), sid, t)?;
            if let Some(err) = nav.get("errorText").and_then(Value::as_str) {
                return Err(RenderError::Protocol(format!("navigation failed: {err}")));
            }
            if s.wait_event("Page.loadEventFired", sid, config.navigation_timeout)?
                .is_none()
            {
                return Err(RenderError::NavigationTimeout(
                    config.navigation_timeout.as_millis() as u64,
                ));
            }
            let t1 = Instant::now();
            let eval = s.call(
                "Runtime.evaluate",
                json!({ "expression": config.extractor, "returnByValue": true, "awaitPromise": true }),
                sid,
                t,
            )?;
            if let Some(ex) = eval.get("exceptionDetails") {
                let text = ex
                    .pointer("/exception/description")
                    .or_else(|| ex.get("text"))
                    .and_then(Value::as_str)
                    .unwrap_or("exception");
                return Err(RenderError::ScriptError(text.to_string()));
            }
            let payload_text = eval
                .pointer("/result/value")
                .and_then(Value::as_str)
                .ok_or_else(|| {
                    RenderError::ScriptError("extractor did not return a string".into())
                })?;
            let raw_annotations = RawPayload::parse(payload_text)
                .map_err(|e| RenderError::ScriptError(e.to_string()))?;
            let t2 = Instant::now();
            let metrics = s.call("Page.getLayoutMetrics", json!({}), sid, t)?;
            let content = metrics
                .get("cssContentSize")
                .or_else(|| metrics.get("contentSize"));
            let content_h = content.and_then(|c| c["height"].as_f64()).unwrap_or(0.0);
            let height = if job.full_page {
                (content_h.ceil() as u32).max(job.viewport.height)
            } else {
                job.viewport.height
            };
            let shot = s.call(
                "Page.captureScreenshot",
                json!({
                    "format": "png",
                    "captureBeyondViewport": job.full_page,
                    "clip": { "x": 0, "y": 0, "width": job.viewport.width, "height": height, "scale": 1 }
                }),
                sid,
                t,
            )?;
            let data = shot["data"].as_str().ok_or_else(|| {
                RenderError::Protocol("captureScreenshot returned no data".into())
            })?;
            let image = base64::engine::general_purpose::STANDARD
                .decode(data)
                .map_err(|e| RenderError::Image(e.to_string()))?;
            let t3 = Instant::now();
            let ms = |a: Instant, b: Instant| (b - a).as_secs_f64() * 1000.0;
            Ok(RenderResult {
                image,
                image_dims: Dims::new(job.viewport.width, height),
                raw_annotations,
                timings: Timings {
                    load_ms: ms(t0, t1),
                    extract_ms: ms(t1, t2),
                    capture_ms: ms(t2, t3),
                },
            })
        })();
        if !matches!(result, Err(RenderError::BrowserCrashed(_))) {
            let _ = s.call(
                "Target.closeTarget",
                json!({ "targetId": target_id }),
                None,
                t,
            );
        }
        result
    }
}

impl Renderer for CdpRenderer {
    fn render(&mut self, job: &RenderJob) -> Result<RenderResult, RenderError> {
        job.check()?;
        let dir = tempfile::tempdir().map_err(|e| RenderError::InvalidJob(e.to_string()))?;
        let page = dir
            .path()
            .join(format!("{}.html", job.sample_id.file_stem()));
        std::fs::write(&page, &job.document).map_err(|e| RenderError::InvalidJob(e.to_string()))?;
        let out = self.run_job(job, &page);
        if matches!(out, Err(RenderError::BrowserCrashed(_))) {
            self.browser = None;
        }
        let out = out?;
        let dims = out.decoded_dims()?;
        if dims != out.image_dims {
            return Err(RenderError::Image(format!(
                "screenshot is {}x{}, expected {}x{}",
                dims.width, dims.height, out.image_dims.width, out.image_dims.height
            )));
        }
        Ok(out)
    }

    fn describe(&self) -> String {
        match (&self.endpoint, &self.config.browser) {
            (Some(url), _) => format!("cdp:{url}"),
            (None, Some(p)) => format!("cdp:{}", p.display()),
            (None, None) => "cdp".into(),
        }
    }
}
