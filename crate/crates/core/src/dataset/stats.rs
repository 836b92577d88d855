//! Dataset composition report.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::LayoutInfo;
use crate::model::AnnotatedSample;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub count: usize,
    pub median: f64,
    pub mean: f64,
    pub min: usize,
    pub max: usize,
}

impl Distribution {
    pub fn of(values: &[usize]) -> Distribution {
        if values.is_empty() {
            return Distribution::default();
        }
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2] as f64
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
        };
        Distribution {
            count: n,
            median,
            mean: sorted.iter().sum::<usize>() as f64 / n as f64,
            min: sorted[0],
            max: sorted[n - 1],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub images: usize,
    pub boxes: usize,
    pub boxes_per_image: Distribution,
    pub class_counts: BTreeMap<String, usize>,
    pub class_pct: BTreeMap<String, f64>,
    pub element_kind_counts: BTreeMap<String, usize>,
    pub element_kind_pct: BTreeMap<String, f64>,
    pub fill_state_counts: BTreeMap<String, usize>,
    pub fill_state_pct: BTreeMap<String, f64>,
    /// Images per brand.
    pub per_brand: BTreeMap<String, usize>,
    /// Images per page type.
    pub per_page_type: BTreeMap<String, usize>,
}

fn pct(counts: &BTreeMap<String, usize>, total: usize) -> BTreeMap<String, f64> {
    counts
        .iter()
        .map(|(k, c)| {
            (
                k.clone(),
                if total == 0 {
                    0.0
                } else {
                    *c as f64 * 100.0 / total as f64
                },
            )
        })
        .collect()
}

/// Composition report; layouts missing from `layouts` count as `unknown`.
pub fn stats(samples: &[AnnotatedSample], layouts: &BTreeMap<String, LayoutInfo>) -> StatsReport {
    let mut r = StatsReport {
        images: samples.len(),
        ..StatsReport::default()
    };
    let per_image: Vec<usize> = samples.iter().map(|s| s.annotations.len()).collect();
    r.boxes = per_image.iter().sum();
    r.boxes_per_image = Distribution::of(&per_image);
    for s in samples {
        for a in &s.annotations {
            *r.class_counts
                .entry(a.cls.fine_label.as_str().into())
                .or_default() += 1;
            *r.element_kind_counts
                .entry(a.cls.element_kind.as_str().into())
                .or_default() += 1;
        }
        *r.fill_state_counts
            .entry(s.fill_state.group().into())
            .or_default() += 1;
        let info = layouts.get(&s.layout_id);
        *r.per_brand
            .entry(info.map_or("unknown".into(), |l| l.brand.clone()))
            .or_default() += 1;
        *r.per_page_type
            .entry(info.map_or("unknown".into(), |l| l.page_type.clone()))
            .or_default() += 1;
    }
    r.class_pct = pct(&r.class_counts, r.boxes);
    r.element_kind_pct = pct(&r.element_kind_counts, r.boxes);
    r.fill_state_pct = pct(&r.fill_state_counts, r.images);
    r
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = &self.boxes_per_image;
        writeln!(f, "images  {}", self.images)?;
        writeln!(f, "boxes   {}", self.boxes)?;
        writeln!(
            f,
            "boxes/image  median {:.1}  mean {:.2}  min {}  max {}",
            d.median, d.mean, d.min, d.max
        )?;
        let section = |f: &mut fmt::Formatter<'_>,
                       title: &str,
                       counts: &BTreeMap<String, usize>,
                       pct: Option<&BTreeMap<String, f64>>| {
            writeln!(f, "{title}")?;
            for (k, c) in counts {
                match pct.and_then(|p| p.get(k)) {
                    Some(p) => writeln!(f, "  {k:<20} {c:>7}  {p:>6.2}%")?,
                    None => writeln!(f, "  {k:<20} {c:>7}")?,
                }
            }
            Ok(())
        };
        section(f, "class", &self.class_counts, Some(&self.class_pct))?;
        section(
            f,
            "element kind",
            &self.element_kind_counts,
            Some(&self.element_kind_pct),
        )?;
        section(
            f,
            "fill state",
            &self.fill_state_counts,
            Some(&self.fill_state_pct),
        )?;
        section(f, "brand", &self.per_brand, None)?;
        section(f, "page type", &self.per_page_type, None)
    }
}
