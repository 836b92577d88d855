//! Reviews the fixture layouts through the service API, then applies the
//! export gate.

use std::path::Path;
use std::sync::Arc;

use screenforge::fill::Density;
use screenforge::pipeline::PipelineConfig;
use screenforge::render::offline::OfflineRenderer;
use screenforge::render::{RenderError, Renderer};
use screenforge::review::{DecisionRequest, ReviewService};

fn offline() -> Result<Box<dyn Renderer>, RenderError> {
    Ok(Box::new(OfflineRenderer::new()))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let work = tempfile::tempdir()?;
    let mut cfg = PipelineConfig::new(fixtures.join("layouts"), work.path());
    cfg.catalog = Some(fixtures.join("catalog/products.ndjson"));
    cfg.asset_root = fixtures.join("catalog");
    cfg.density = Density::All;
    let svc = ReviewService::open(cfg, Arc::new(offline))?;

    let verdicts = ["approved", "flagged", "approved", "excluded"];
    for verdict in verdicts {
        let Some(view) = svc.queue_next()? else { break };
        let previews = view.previews.as_ref().map_or(0, |p| p.states.len());
        let req = DecisionRequest {
            decision: verdict.into(),
            note: (verdict == "flagged").then(|| "price label boxed as PII".into()),
            idempotency_key: None,
        };
        svc.decide(&view.state.layout_id, &req)?;
        println!(
            "{:<22} {previews} previews -> {verdict}",
            view.state.layout_id
        );
    }
    let report = svc.report();
    println!("\n{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
