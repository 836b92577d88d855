#![allow(dead_code)]

use std::path::{Path, PathBuf};

use screenforge::catalog::Catalog;
use screenforge::fill::Density;
use screenforge::pipeline::{PipelineConfig, Workspace};
use screenforge::render::offline::OfflineRenderer;
use screenforge::render::{RenderError, Renderer};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(rel)
}

pub fn catalog() -> Catalog {
    Catalog::load(&fixture("catalog/products.ndjson"), &fixture("catalog")).unwrap()
}

pub fn config(work: &Path, seed: u64, variants: u32) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(fixture("layouts"), work);
    cfg.catalog = Some(fixture("catalog/products.ndjson"));
    cfg.asset_root = fixture("catalog");
    cfg.master_seed = seed;
    cfg.variants = variants;
    cfg.density = Density::All;
    cfg.jobs = 2;
    cfg
}

pub fn workspace(work: &Path, seed: u64, variants: u32) -> Workspace {
    Workspace::open(config(work, seed, variants)).unwrap()
}

pub fn offline() -> Result<Box<dyn Renderer>, RenderError> {
    Ok(Box::new(OfflineRenderer::new()))
}

/// Copies a directory tree.
pub fn copy_tree(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let dest = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &dest);
        } else {
            std::fs::copy(entry.path(), dest).unwrap();
        }
    }
}

/// Relative path -> bytes for every file below `root`.
pub fn tree_bytes(root: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
