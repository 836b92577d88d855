//! `screenforge` command line.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error, 3 unresolved
//! leakage, 4 validation failure, 5 render failures, 6 export wrote an empty
//! split.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use screenforge::baseline::{run_baseline, write_ocr, ExternalClassifier, Rule, TEXT_CLASS};
use screenforge::dataset::{
    validate_export, ClassMap, ClassMode, ExportFormat, LayoutInfo, SplitStrategy,
};
use screenforge::eval::{
    bench_latency, evaluate, parse_detections, write_detections, DEFAULT_CONF,
};
use screenforge::fill::Density;
use screenforge::pipeline::{simulated_ocr, PipelineConfig, Workspace};
use screenforge::render::cdp::{CdpConfig, CdpRenderer, BROWSER_ENV};
use screenforge::render::offline::OfflineRenderer;
use screenforge::render::{RenderError, Renderer, Viewport};
use screenforge::review::{
    export_gate, Ledger, ReviewServer, ReviewService, LEDGER_FILE, REVIEW_DIR,
};

const EXIT_ERROR: u8 = 1;
const EXIT_LEAKAGE: u8 = 3;
const EXIT_INVALID: u8 = 4;
const EXIT_RENDER: u8 = 5;
const EXIT_EMPTY_SPLIT: u8 = 6;

#[derive(Parser)]
#[command(
    name = "screenforge",
    version,
    about = "Synthetic annotated UI screenshot datasets"
)]
struct Cli {
    #[command(flatten)]
    run: RunArgs,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Directory of layout bundles.
    #[arg(long, global = true, default_value = "layouts")]
    layouts: PathBuf,
    /// Product catalog (newline-delimited JSON).
    #[arg(long, global = true)]
    catalog: Option<PathBuf>,
    /// Root that catalog image paths are relative to.
    #[arg(long, global = true, default_value = ".")]
    assets: PathBuf,
    /// Working directory for configs, renders, split and review state.
    #[arg(long, global = true, default_value = "work")]
    work: PathBuf,
    /// Export directory; defaults to `<work>/out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value_t = screenforge::config::DEFAULT_VARIANTS)]
    variants: u32,
    /// Partial fill stages per variant: `all` or a count.
    #[arg(long, global = true, default_value = "all")]
    partials: Density,
    #[arg(long, global = true, default_value = "1400x900")]
    viewport: Viewport,
    /// Capture only the viewport instead of the full page.
    #[arg(long, global = true)]
    viewport_only: bool,
    #[arg(short = 'j', long = "jobs", global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, global = true, value_enum, default_value_t = Engine::Auto)]
    engine: Engine,
}

#[derive(Clone, Copy, ValueEnum)]
enum Engine {
    /// Browser when `SCREENFORGE_BROWSER` is set, offline otherwise.
    Auto,
    Offline,
    Cdp,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check templates, or an export directory with `--export`.
    Validate {
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Write seeded data configs for every layout and variant.
    GenConfigs,
    /// Render every sample whose done marker is missing or stale.
    Render,
    /// Assign layouts to train/test.
    Split {
        #[arg(long, default_value = "cross-page:0.2")]
        strategy: SplitStrategy,
        #[arg(long)]
        stratify_brand: bool,
    },
    /// Write a COCO or YOLO dataset.
    Export {
        #[arg(long, default_value = "coco")]
        format: ExportFormat,
        #[arg(long, default_value = "fine")]
        classes: ClassMode,
        /// Only export layouts approved in the review ledger.
        #[arg(long)]
        gated: bool,
    },
    /// Dataset composition report.
    Stats {
        #[arg(long)]
        json: bool,
    },
    /// Score detections against the rendered ground truth.
    Eval {
        /// Detections, one JSON object per line.
        #[arg(long)]
        detections: PathBuf,
        #[arg(long, default_value = "fine")]
        classes: ClassMode,
        #[arg(long, default_value_t = DEFAULT_CONF)]
        conf: f64,
        #[arg(long)]
        json: bool,
    },
    /// Run the OCR + pattern-rule text baseline.
    Baseline {
        /// OCR words, one JSON object per line; word boxes are read off the
        /// offline layout when omitted.
        #[arg(long)]
        ocr: Option<PathBuf>,
        /// Where to write detections; defaults to `<work>/baseline.ndjson`.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        rules: Vec<Rule>,
        /// External classifier argv after `--`; receives JSON on stdin.
        #[arg(last = true)]
        classifier: Vec<String>,
        #[arg(long, default_value_t = DEFAULT_CONF)]
        conf: f64,
    },
    /// Serve the review queue over HTTP.
    ReviewServe {
        #[arg(long, default_value = "127.0.0.1:8765")]
        listen: String,
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
    /// Time an external detector command per image.
    Bench {
        /// Detector argv after `--`; the image path is appended.
        #[arg(last = true, required = true)]
        runner: Vec<String>,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        #[arg(long, default_value_t = 20)]
        reps: usize,
    },
}

struct Failure(u8, String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(EXIT_ERROR, e.to_string())
    }
}

fn pipeline_config(a: &RunArgs) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(&a.layouts, &a.work);
    if let Some(out) = &a.out {
        cfg.out_dir = out.clone();
    }
    cfg.catalog = a.catalog.clone();
    cfg.asset_root = a.assets.clone();
    cfg.master_seed = a.seed;
    cfg.variants = a.variants;
    cfg.density = a.partials;
    cfg.viewport = a.viewport;
    cfg.full_page = !a.viewport_only;
    cfg.jobs = a.jobs.max(1);
    cfg
}

type Factory = Arc<dyn Fn() -> Result<Box<dyn Renderer>, RenderError> + Send + Sync>;

fn renderer_factory(engine: Engine) -> Factory {
    let cdp = match engine {
        Engine::Offline => false,
        Engine::Cdp => true,
        Engine::Auto => std::env::var_os(BROWSER_ENV).is_some(),
    };
    if cdp {
        Arc::new(|| Ok(Box::new(CdpRenderer::launch(CdpConfig::from_env()?)?) as Box<dyn Renderer>))
    } else {
        Arc::new(|| Ok(Box::new(OfflineRenderer::new()) as Box<dyn Renderer>))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = pipeline_config(&cli.run);
    match cli.cmd {
        Cmd::Validate { export: Some(dir) } => {
            let check = validate_export(&dir)?;
            for p in &check.problems {
                eprintln!("{p}");
            }
            println!(
                "{} images, {} annotations, {} problems",
                check.images,
                check.annotations,
                check.problems.len()
            );
            if !check.problems.is_empty() {
                return Err(Failure(EXIT_INVALID, "export failed validation".into()));
            }
        }
        Cmd::Validate { export: None } => {
            let ws = Workspace::open(cfg)?;
            let issues = ws.validate();
            for (layout, list) in &issues {
                for issue in list {
                    eprintln!("{layout}: {issue}");
                }
            }
            println!(
                "{} layouts, {} with issues",
                ws.templates.len(),
                issues.len()
            );
            if !issues.is_empty() {
                return Err(Failure(EXIT_INVALID, "template validation failed".into()));
            }
        }
        Cmd::GenConfigs => {
            let ws = Workspace::open(cfg)?;
            let s = ws.gen_configs()?;
            println!(
                "{} configs for {} layouts{}",
                s.configs,
                s.layouts,
                if s.partitioned {
                    " (split-partitioned pools)"
                } else {
                    ""
                }
            );
        }
        Cmd::Render => {
            let ws = Workspace::open(cfg)?;
            let factory = renderer_factory(cli.run.engine);
            let s = ws.render(|| factory())?;
            println!(
                "rendered {}, up to date {}, failed {}, expected total {}",
                s.rendered,
                s.skipped,
                s.failed.len(),
                ws.expected_image_count()?
            );
            for (id, e) in &s.failed {
                eprintln!("{id}: {e}");
            }
            if let Some(e) = &s.aborted {
                return Err(Failure(EXIT_RENDER, format!("render aborted: {e}")));
            }
            if !s.failed.is_empty() {
                return Err(Failure(
                    EXIT_RENDER,
                    format!("{} samples failed", s.failed.len()),
                ));
            }
        }
        Cmd::Split {
            mut strategy,
            stratify_brand,
        } => {
            if let SplitStrategy::CrossPage {
                stratify_brand: s, ..
            } = &mut strategy
            {
                *s = stratify_brand;
            }
            let ws = Workspace::open(cfg)?;
            let a = ws.split(&strategy)?;
            println!(
                "{strategy}: train {} layouts, test {} layouts",
                a.train.len(),
                a.test.len()
            );
        }
        Cmd::Export {
            format,
            classes,
            gated,
        } => {
            let ws = Workspace::open(cfg)?;
            let assignment = ws
                .read_split()?
                .ok_or_else(|| Failure(EXIT_ERROR, "no split on disk; run `split` first".into()))?;
            let leakage = ws.leakage(&assignment)?;
            if !leakage.is_clean() {
                eprintln!("{leakage}");
                return Err(Failure(
                    EXIT_LEAKAGE,
                    format!(
                        "{} leaked values; re-run gen-configs after split",
                        leakage.findings.len()
                    ),
                ));
            }
            let mut extra = std::collections::BTreeMap::new();
            let approved = if gated {
                let ids = ws.templates.iter().map(|t| t.layout_id.clone());
                let ledger =
                    Ledger::open(&ws.cfg.work_dir.join(REVIEW_DIR).join(LEDGER_FILE), ids)?;
                let (_, report) = export_gate(&ledger, ws.load_samples()?);
                for w in &report.warnings {
                    eprintln!("warning: {w}");
                }
                eprintln!(
                    "review gate: {} layouts approved, {} samples blocked",
                    report.passed_layouts, report.blocked_samples
                );
                extra.insert("review_gate".to_string(), serde_json::to_value(&report)?);
                Some(ledger.approved())
            } else {
                None
            };
            let summary = ws.export(format, classes, approved.as_ref(), extra)?;
            for (split, c) in &summary.counts {
                println!(
                    "{split}: {} layouts, {} images, {} annotations",
                    c.layouts, c.images, c.annotations
                );
            }
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            if !summary.warnings.is_empty() {
                return Err(Failure(
                    EXIT_EMPTY_SPLIT,
                    "export has an empty split".into(),
                ));
            }
        }
        Cmd::Stats { json } => {
            let ws = Workspace::open(cfg)?;
            let samples: Vec<_> = ws.load_samples()?.into_iter().map(|i| i.sample).collect();
            let infos: std::collections::BTreeMap<String, LayoutInfo> = ws
                .layout_infos()
                .into_iter()
                .map(|i| (i.layout_id.clone(), i))
                .collect();
            let report = screenforge::dataset::stats(&samples, &infos);
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{report}");
            }
        }
        Cmd::Eval {
            detections,
            classes,
            conf,
            json,
        } => {
            let ws = Workspace::open(cfg)?;
            let samples: Vec<_> = ws.load_samples()?.into_iter().map(|i| i.sample).collect();
            let text = std::fs::read_to_string(&detections)
                .map_err(|e| format!("{}: {e}", detections.display()))?;
            let dets = parse_detections(&text)?;
            let report = evaluate(&dets, &samples, ClassMap::new(classes), conf)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{report}");
            }
        }
        Cmd::Baseline {
            ocr,
            output,
            rules,
            classifier,
            conf,
        } => {
            let ws = Workspace::open(cfg)?;
            let ocr_text = match &ocr {
                Some(path) => {
                    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?
                }
                None => {
                    let words = simulated_ocr(&ws)?;
                    let path = ws.cfg.work_dir.join("ocr.ndjson");
                    std::fs::write(&path, write_ocr(&words))
                        .map_err(|e| format!("{}: {e}", path.display()))?;
                    write_ocr(&words)
                }
            };
            let rules = if rules.is_empty() {
                Rule::PATTERNS.to_vec()
            } else {
                rules
            };
            let external = (!classifier.is_empty()).then(|| ExternalClassifier::new(classifier));
            let dets = run_baseline(&ocr_text, &rules, external.as_ref())?;
            let out = output.unwrap_or_else(|| ws.cfg.work_dir.join("baseline.ndjson"));
            std::fs::write(&out, write_detections(&dets))
                .map_err(|e| format!("{}: {e}", out.display()))?;
            println!(
                "{} `{TEXT_CLASS}` detections written to {}",
                dets.len(),
                out.display()
            );
            let samples: Vec<_> = ws.load_samples()?.into_iter().map(|i| i.sample).collect();
            let report = evaluate(&dets, &samples, ClassMap::new(ClassMode::Coarse), conf)?;
            print!("{report}");
        }
        Cmd::ReviewServe { listen, workers } => {
            let service = Arc::new(ReviewService::open(cfg, renderer_factory(cli.run.engine))?);
            let server = ReviewServer::bind(&listen, service)?;
            let addr = server.local_addr().map(|a| a.to_string()).unwrap_or(listen);
            println!("review service on http://{addr}");
            server.serve(workers);
        }
        Cmd::Bench {
            runner,
            warmup,
            reps,
        } => {
            let ws = Workspace::open(cfg)?;
            let images: Vec<PathBuf> = ws
                .load_samples()?
                .into_iter()
                .map(|i| i.image_path)
                .collect();
            let stats = bench_latency(&runner, &images, warmup, reps)?;
            println!(
                "runs {}  median {:.2} ms  p95 {:.2} ms  min {:.2} ms  max {:.2} ms",
                stats.runs, stats.median_ms, stats.p95_ms, stats.min_ms, stats.max_ms
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, message)) => {
            eprintln!("error: {message}");
            ExitCode::from(code)
        }
    }
}
