//! Detection scoring: IoU, greedy one-to-one matching, 101-point interpolated
//! AP, mAP@50, precision/recall at an operating threshold, per-fill-state
//! breakdowns and a wall-clock latency harness for external detectors.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ClassMap;
use crate::model::{AnnotatedSample, BBox, SampleId};

pub const IOU_THRESHOLD: f64 = 0.5;
pub const DEFAULT_CONF: f64 = 0.25;
pub const RECALL_POINTS: u64 = 101;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("detection for unknown sample `{0}`")]
    UnknownSampleId(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("runner failed: {0}")]
    RunnerFailed(String),
    #[error("invalid detection: {0}")]
    InvalidDetection(String),
}

/// One predicted box. Wire form: `{"sample_id", "class", "x", "y", "w", "h", "confidence"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(with = "sample_id_text")]
    pub sample_id: SampleId,
    pub class: String,
    #[serde(flatten)]
    pub bbox: BBox,
    pub confidence: f64,
}

mod sample_id_text {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::model::SampleId;

    pub fn serialize<S: Serializer>(id: &SampleId, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(id)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SampleId, D::Error> {
        let raw = String::deserialize(d)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}

impl Detection {
    pub fn check(&self) -> Result<(), EvalError> {
        if !self.confidence.is_finite() || !(0.0..=1.0).contains(&self.confidence) {
            return Err(EvalError::InvalidDetection(format!(
                "confidence {}",
                self.confidence
            )));
        }
        if self.bbox.w == 0 || self.bbox.h == 0 {
            return Err(EvalError::InvalidDetection(format!(
                "degenerate box {:?}",
                self.bbox
            )));
        }
        Ok(())
    }
}

pub fn parse_detections(text: &str) -> Result<Vec<Detection>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let d: Detection = serde_json::from_str(line).map_err(|e| EvalError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        d.check().map_err(|e| EvalError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(d);
    }
    Ok(out)
}

pub fn write_detections(dets: &[Detection]) -> String {
    dets.iter()
        .map(|d| serde_json::to_string(d).expect("detections always serialize") + "\n")
        .collect()
}

/// A ground-truth box with its class name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GtBox {
    pub class: String,
    pub bbox: BBox,
}

pub fn iou(a: BBox, b: BBox) -> f64 {
    let ix = (a.right().min(b.right())).saturating_sub(a.x.max(b.x) as u64);
    let iy = (a.bottom().min(b.bottom())).saturating_sub(a.y.max(b.y) as u64);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatchOutcome {
    /// (detection index, ground-truth index)
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_dets: Vec<usize>,
    pub unmatched_gts: Vec<usize>,
}

/// Processing order: confidence descending, then class and box, then input index.
fn det_order(dets: &[(&str, BBox, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .2
            .total_cmp(&dets[a].2)
            .then_with(|| dets[a].0.cmp(dets[b].0))
            .then_with(|| dets[a].1.cmp(&dets[b].1))
            .then(a.cmp(&b))
    });
    order
}

/// Greedy one-to-one matching within one image.
///
/// Each detection, in confidence order, claims the unclaimed same-class
/// ground truth of highest IoU at or above `thr`; ties go to the lower
/// ground-truth index.
pub fn match_boxes(dets: &[(&str, BBox, f64)], gts: &[GtBox], thr: f64) -> MatchOutcome {
    let mut claimed = vec![false; gts.len()];
    let mut out = MatchOutcome::default();
    for d in det_order(dets) {
        let (class, bbox, _) = dets[d];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if claimed[g] || gt.class != class {
                continue;
            }
            let v = iou(bbox, gt.bbox);
            if v >= thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, _)) => {
                claimed[g] = true;
                out.pairs.push((d, g));
            }
            None => out.unmatched_dets.push(d),
        }
    }
    out.unmatched_gts = (0..gts.len()).filter(|g| !claimed[*g]).collect();
    out
}

/// 101-point interpolated AP from ranked (confidence, is-true-positive) pairs.
///
/// Pairs are ranked by confidence descending; equal confidences keep their
/// input order.
pub fn average_precision(scored: &[(f64, bool)], n_positives: usize) -> f64 {
    if n_positives == 0 || scored.is_empty() {
        return 0.0;
    }
    let mut ranked: Vec<&(f64, bool)> = scored.iter().collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    // (tp count, precision) at each rank
    let mut curve = Vec::with_capacity(ranked.len());
    let mut tp = 0u64;
    for (rank, (_, hit)) in ranked.iter().enumerate() {
        tp += u64::from(*hit);
        curve.push((tp, tp as f64 / (rank + 1) as f64));
    }
    // running max of precision from the tail
    let mut best_from = vec![0.0; curve.len() + 1];
    for i in (0..curve.len()).rev() {
        best_from[i] = f64::max(best_from[i + 1], curve[i].1);
    }
    let npos = n_positives as u64;
    let mut total = 0.0;
    let mut cursor = 0;
    for i in 0..RECALL_POINTS {
        // first rank whose recall tp/npos reaches i/100
        while cursor < curve.len() && curve[cursor].0 * 100 < i * npos {
            cursor += 1;
        }
        total += best_from[cursor];
    }
    total / RECALL_POINTS as f64
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub map50: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub conf_threshold: f64,
    pub per_class_ap: BTreeMap<String, f64>,
    pub map50: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub per_fill_state: BTreeMap<String, GroupMetrics>,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mAP@50     {:.4}", self.map50)?;
        writeln!(
            f,
            "precision  {:.4}  recall {:.4}  (conf >= {})",
            self.precision, self.recall, self.conf_threshold
        )?;
        writeln!(f, "TP {}  FP {}  FN {}", self.tp, self.fp, self.fn_)?;
        writeln!(f, "{:<16} {:>8}", "class", "AP@50")?;
        for (c, ap) in &self.per_class_ap {
            writeln!(f, "{c:<16} {ap:>8.4}")?;
        }
        writeln!(
            f,
            "{:<16} {:>8} {:>9} {:>8}",
            "fill state", "mAP@50", "precision", "recall"
        )?;
        for (g, m) in &self.per_fill_state {
            writeln!(
                f,
                "{g:<16} {:>8.4} {:>9.4} {:>8.4}",
                m.map50, m.precision, m.recall
            )?;
        }
        Ok(())
    }
}

struct Image<'a> {
    gts: Vec<GtBox>,
    dets: Vec<&'a Detection>,
}

fn score(images: &[&Image], conf: f64) -> (BTreeMap<String, f64>, GroupMetrics) {
    let mut scored: BTreeMap<String, Vec<(f64, bool)>> = BTreeMap::new();
    let mut npos: BTreeMap<String, usize> = BTreeMap::new();
    let mut m = GroupMetrics::default();
    for img in images {
        for g in &img.gts {
            *npos.entry(g.class.clone()).or_default() += 1;
        }
        let dets: Vec<(&str, BBox, f64)> = img
            .dets
            .iter()
            .map(|d| (d.class.as_str(), d.bbox, d.confidence))
            .collect();
        let outcome = match_boxes(&dets, &img.gts, IOU_THRESHOLD);
        let matched: BTreeSet<usize> = outcome.pairs.iter().map(|(d, _)| *d).collect();
        // ranked in matching order so equal confidences tie-break consistently
        for d in det_order(&dets) {
            let hit = matched.contains(&d);
            scored
                .entry(dets[d].0.to_string())
                .or_default()
                .push((dets[d].2, hit));
            if dets[d].2 >= conf {
                if hit {
                    m.tp += 1;
                } else {
                    m.fp += 1;
                }
            }
        }
    }
    let total_pos: usize = npos.values().sum();
    m.fn_ = total_pos - m.tp;
    m.precision = if m.tp + m.fp == 0 {
        0.0
    } else {
        m.tp as f64 / (m.tp + m.fp) as f64
    };
    m.recall = if total_pos == 0 {
        0.0
    } else {
        m.tp as f64 / total_pos as f64
    };
    let per_class: BTreeMap<String, f64> = npos
        .iter()
        .map(|(c, n)| {
            let s = scored.get(c).map(Vec::as_slice).unwrap_or(&[]);
            (c.clone(), average_precision(s, *n))
        })
        .collect();
    m.map50 = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().sum::<f64>() / per_class.len() as f64
    };
    (per_class, m)
}

/// Scores detections against samples' annotations under `class_map`.
pub fn evaluate(
    dets: &[Detection],
    samples: &[AnnotatedSample],
    class_map: ClassMap,
    conf: f64,
) -> Result<EvalReport, EvalError> {
    let mut images: BTreeMap<SampleId, Image> = samples
        .iter()
        .map(|s| {
            let gts = s
                .annotations
                .iter()
                .map(|a| GtBox {
                    class: class_map.name(a.cls.fine_label).to_string(),
                    bbox: a.bbox,
                })
                .collect();
            (
                s.id(),
                Image {
                    gts,
                    dets: Vec::new(),
                },
            )
        })
        .collect();
    for d in dets {
        d.check()?;
        images
            .get_mut(&d.sample_id)
            .ok_or_else(|| EvalError::UnknownSampleId(d.sample_id.to_string()))?
            .dets
            .push(d);
    }
    let all: Vec<&Image> = images.values().collect();
    let (per_class_ap, overall) = score(&all, conf);
    let mut groups: BTreeMap<&str, Vec<&Image>> = BTreeMap::new();
    for (id, img) in &images {
        groups.entry(id.fill_tag.group()).or_default().push(img);
    }
    let per_fill_state = groups
        .into_iter()
        .map(|(g, imgs)| (g.to_string(), score(&imgs, conf).1))
        .collect();
    Ok(EvalReport {
        iou_threshold: IOU_THRESHOLD,
        conf_threshold: conf,
        per_class_ap,
        map50: overall.map50,
        precision: overall.precision,
        recall: overall.recall,
        tp: overall.tp,
        fp: overall.fp,
        fn_: overall.fn_,
        per_fill_state,
    })
}

/// Ground truth rendered as perfect detections (confidence 1).
pub fn oracle_detections(samples: &[AnnotatedSample], class_map: ClassMap) -> Vec<Detection> {
    samples
        .iter()
        .flat_map(|s| {
            s.annotations.iter().map(move |a| Detection {
                sample_id: s.id(),
                class: class_map.name(a.cls.fine_label).to_string(),
                bbox: a.bbox,
                confidence: 1.0,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub runs: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    /// Every kept timing, in run order.
    pub timings_ms: Vec<f64>,
}

/// Median and nearest-rank p95 of `timings`.
pub fn latency_stats(timings: &[f64]) -> LatencyStats {
    let mut sorted = timings.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let pick = |q: f64| {
        if n == 0 {
            0.0
        } else {
            sorted[((q * n as f64).ceil() as usize).clamp(1, n) - 1]
        }
    };
    let median = match n {
        0 => 0.0,
        _ if n % 2 == 1 => sorted[n / 2],
        _ => (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0,
    };
    LatencyStats {
        runs: n,
        median_ms: median,
        p95_ms: pick(0.95),
        min_ms: sorted.first().copied().unwrap_or(0.0),
        max_ms: sorted.last().copied().unwrap_or(0.0),
        timings_ms: timings.to_vec(),
    }
}

/// Times `runner <image>` per image, discarding the first `warmup` runs.
///
/// `runner` is an argv; the image path is appended as the last argument.
/// Images are cycled when `warmup + reps` exceeds their count.
pub fn bench_latency(
    runner: &[String],
    images: &[PathBuf],
    warmup: usize,
    reps: usize,
) -> Result<LatencyStats, EvalError> {
    let (program, args) = runner
        .split_first()
        .ok_or_else(|| EvalError::RunnerFailed("empty runner command".into()))?;
    if images.is_empty() {
        return Err(EvalError::RunnerFailed("no images to run on".into()));
    }
    let mut kept = Vec::with_capacity(reps);
    for run in 0..warmup + reps {
        let image = &images[run % images.len()];
        let start = Instant::now();
        let status = Command::new(program)
            .args(args)
            .arg(image)
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map_err(|e| EvalError::RunnerFailed(format!("{program}: {e}")))?;
        let ms = start.elapsed().as_secs_f64() * 1000.0;
        if !status.success() {
            return Err(EvalError::RunnerFailed(format!(
                "{program} exited with {status} on {}",
                image.display()
            )));
        }
        if run >= warmup {
            kept.push(ms);
        }
    }
    Ok(latency_stats(&kept))
}

/// Detections grouped per sample, for callers assembling their own images.
pub fn by_sample(dets: &[Detection]) -> HashMap<&SampleId, Vec<&Detection>> {
    let mut map: HashMap<&SampleId, Vec<&Detection>> = HashMap::new();
    for d in dets {
        map.entry(&d.sample_id).or_default().push(d);
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ClassMode;
    use crate::model::{Annotation, AnnotationClass, Dims, FillTag, FineLabel, Visibility};

    fn gt(class: &str, x: u32) -> GtBox {
        GtBox {
            class: class.into(),
            bbox: BBox::new(x, 0, 10, 10),
        }
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0, 0, 10, 10);
        assert_eq!(iou(a, a), 1.0);
        assert_eq!(iou(a, BBox::new(20, 20, 5, 5)), 0.0);
        assert!((iou(a, BBox::new(5, 0, 10, 10)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn one_to_one() {
        let gts = vec![gt("text", 0)];
        let one = match_boxes(&[("text", BBox::new(0, 0, 10, 10), 0.9)], &gts, 0.5);
        assert_eq!(one.pairs, vec![(0, 0)]);
        let two = match_boxes(
            &[
                ("text", BBox::new(0, 0, 10, 10), 0.9),
                ("text", BBox::new(0, 0, 10, 10), 0.8),
            ],
            &gts,
            0.5,
        );
        assert_eq!(two.pairs.len(), 1);
        assert_eq!(two.unmatched_dets, vec![1]);
        let wrong_class = match_boxes(&[("image", BBox::new(0, 0, 10, 10), 0.9)], &gts, 0.5);
        assert!(wrong_class.pairs.is_empty());
    }

    #[test]
    fn hand_built_curve() {
        let ranked = [
            (0.9, true),
            (0.8, true),
            (0.7, false),
            (0.6, true),
            (0.5, true),
        ];
        assert!((average_precision(&ranked, 4) - 91.0 / 101.0).abs() < 1e-12);
        assert_eq!(average_precision(&[(1.0, true), (1.0, true)], 2), 1.0);
        assert_eq!(average_precision(&[], 3), 0.0);
    }

    fn sample(tag: FillTag, labels: &[(FineLabel, u32)]) -> AnnotatedSample {
        AnnotatedSample {
            image_ref: "x.png".into(),
            layout_id: "l".into(),
            variant_index: 0,
            config_seed: 0,
            fill_state: tag,
            annotations: labels
                .iter()
                .enumerate()
                .map(|(i, (l, x))| Annotation {
                    bbox: BBox::new(*x, 0, 10, 10),
                    cls: AnnotationClass::of(*l),
                    source_key: format!("K{i}"),
                    line_index: 0,
                    visibility: Visibility::Full,
                })
                .collect(),
            image_dims: Dims::new(100, 100),
        }
    }

    #[test]
    fn perfect_and_half_and_empty() {
        let map = ClassMap::new(ClassMode::Coarse);
        let samples = vec![
            sample(
                FillTag::Full,
                &[(FineLabel::Name, 0), (FineLabel::ProductImage, 20)],
            ),
            sample(FillTag::Empty, &[(FineLabel::InputField, 0)]),
        ];
        let perfect = evaluate(
            &oracle_detections(&samples, map),
            &samples,
            map,
            DEFAULT_CONF,
        )
        .unwrap();
        assert_eq!(
            (perfect.map50, perfect.precision, perfect.recall),
            (1.0, 1.0, 1.0)
        );
        assert_eq!(perfect.per_fill_state["empty"].map50, 1.0);

        let text_only: Vec<Detection> = oracle_detections(&samples, map)
            .into_iter()
            .filter(|d| d.class == "text")
            .collect();
        let half = evaluate(&text_only, &samples, map, DEFAULT_CONF).unwrap();
        assert_eq!(half.map50, half.per_class_ap["text"] / 2.0);

        let none = evaluate(&[], &samples, map, DEFAULT_CONF).unwrap();
        assert_eq!((none.map50, none.precision, none.recall), (0.0, 0.0, 0.0));

        let stray = Detection {
            sample_id: SampleId::new("nope", 0, FillTag::Full),
            class: "text".into(),
            bbox: BBox::new(0, 0, 1, 1),
            confidence: 0.5,
        };
        assert!(matches!(
            evaluate(&[stray], &samples, map, 0.25),
            Err(EvalError::UnknownSampleId(_))
        ));
    }

    #[test]
    fn detections_round_trip() {
        let d = Detection {
            sample_id: SampleId::new("checkout_a", 2, FillTag::Partial(3)),
            class: "text".into(),
            bbox: BBox::new(1, 2, 3, 4),
            confidence: 0.75,
        };
        let text = write_detections(std::slice::from_ref(&d));
        assert!(text.contains("\"sample_id\":\"checkout_a/2/partial_3\""));
        assert_eq!(parse_detections(&text).unwrap(), vec![d]);
    }

    #[test]
    fn warmup_discarded() {
        let s = latency_stats(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.median_ms, 2.5);
        assert_eq!(s.p95_ms, 4.0);
        let runner = vec!["true".to_string()];
        let out = bench_latency(&runner, &[PathBuf::from("/dev/null")], 3, 4).unwrap();
        assert_eq!(out.runs, 4);
        assert!(bench_latency(&["false".to_string()], &[PathBuf::from("x")], 0, 1).is_err());
    }
}
