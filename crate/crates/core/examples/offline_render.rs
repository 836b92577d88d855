//! Renders a page with the offline box renderer and prints the finalized
//! annotations, including what a modal hides.

use std::path::Path;

use screenforge::geometry::finalize;
use screenforge::render::offline::OfflineRenderer;
use screenforge::render::{RenderJob, Renderer, Viewport};
use screenforge::{FillTag, SampleId};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/geometry");
    for name in ["absolute.html", "modal.html", "overlay.html", "wrap.html"] {
        let job = RenderJob {
            sample_id: SampleId::new("demo", 0, FillTag::Full),
            document: std::fs::read_to_string(dir.join(name))?,
            viewport: Viewport {
                width: 800,
                height: 600,
            },
            full_page: true,
        };
        let out = OfflineRenderer::new().render(&job)?;
        println!(
            "{name}: {} raw records, image {}x{}",
            out.raw_annotations.records.len(),
            out.image_dims.width,
            out.image_dims.height
        );
        for a in finalize(&out.raw_annotations, out.image_dims)? {
            println!(
                "  {:<22} line {} {:?} at ({}, {}) {}x{}",
                a.source_key, a.line_index, a.visibility, a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h
            );
        }
    }
    Ok(())
}
