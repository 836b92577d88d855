//! Runs the whole pipeline on the fixture layouts in a temporary directory and
//! writes COCO and YOLO exports.

use std::collections::BTreeMap;
use std::path::Path;

use screenforge::dataset::{validate_export, ClassMode, ExportFormat};
use screenforge::fill::Density;
use screenforge::pipeline::{PipelineConfig, Workspace};
use screenforge::render::offline::OfflineRenderer;
use screenforge::render::{RenderError, Renderer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let work = tempfile::tempdir()?;
    let mut cfg = PipelineConfig::new(fixtures.join("layouts"), work.path());
    cfg.catalog = Some(fixtures.join("catalog/products.ndjson"));
    cfg.asset_root = fixtures.join("catalog");
    cfg.variants = 2;
    cfg.density = Density::All;
    let mut ws = Workspace::open(cfg)?;

    ws.split(&"cross-page:0.2".parse()?)?;
    let generated = ws.gen_configs()?;
    println!("configs: {generated:?}");
    let rendered = ws.render(|| -> Result<Box<dyn Renderer>, RenderError> {
        Ok(Box::new(OfflineRenderer::new()))
    })?;
    println!(
        "rendered {} images, {} failed",
        rendered.rendered,
        rendered.failed.len()
    );

    for (format, dir) in [(ExportFormat::Coco, "coco"), (ExportFormat::Yolo, "yolo")] {
        ws.cfg.out_dir = work.path().join(dir);
        ws.export(format, ClassMode::Coarse, None, BTreeMap::new())?;
        let check = validate_export(&ws.cfg.out_dir)?;
        println!(
            "{dir}: {} images, {} problems",
            check.images,
            check.problems.len()
        );
    }
    Ok(())
}
