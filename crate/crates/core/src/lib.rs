//! Synthetic, pixel-accurately labeled web-UI screenshot datasets for visual
//! PII detection.
//!
//! The crate turns annotated layout templates into rendered screenshots with
//! bounding-box annotations, then splits, exports, scores and reviews them:
//!
//! - [`model`]: annotation taxonomy, boxes, sample records and their checks
//! - [`catalog`]: product corpus ingest, similarity and sampling
//! - [`config`]: seeded data configurations, identifier formats, derived totals
//! - [`template`]: layout template parsing, validation and instantiation
//! - [`fill`]: progressive form-fill state planning
//! - [`render`]: headless browser harness plus an offline box renderer
//! - [`geometry`]: raw extractor payload to finalized annotations
//! - [`dataset`]: splits, leakage checks, COCO/YOLO export, statistics
//! - [`eval`]: IoU matching, AP/mAP@50, precision/recall, latency bench
//! - [`baseline`]: OCR word boxes + pattern rules text baseline
//! - [`review`]: layout review ledger, queue, HTTP service and export gate
//! - [`pipeline`]: on-disk orchestration used by the `screenforge` binary
//!
//! Runnable walkthroughs for each capability live in the crate's `examples/`.

pub mod baseline;
pub mod catalog;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod fill;
pub mod geometry;
pub mod markup;
pub mod model;
pub mod pipeline;
pub mod render;
pub mod review;
pub mod rng;
pub mod template;

pub use model::{AnnotatedSample, Annotation, AnnotationClass, BBox, Dims, FillTag, SampleId};
