//! Dataset assembly: layout-level splits, cross-split leakage checks,
//! detection-format export and statistics.

mod export;
mod stats;

pub use export::{
    export, import_coco, parse_yolo_label, validate_export, yolo_line, ClassMap, ClassMode,
    ExportCheck, ExportFormat, ExportItem, ExportOptions, ExportSummary, SplitCounts, CLASSES_FILE,
    COCO_FILE, MANIFEST_FILE,
};
pub use stats::{stats, Distribution, StatsReport};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::DataConfig;
use crate::model::Violation;
use crate::rng::sub_rng;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no layout has brand `{0}`")]
    UnknownBrand(String),
    #[error("no layout has page type `{0}`")]
    UnknownPageType(String),
    #[error("hold-out fraction {0} outside [0, 1]")]
    BadFraction(f64),
    #[error("unrecognized split strategy `{0}`")]
    BadStrategy(String),
    #[error("sample {sample} fails validation: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    UnvalidatedSample {
        sample: String,
        violations: Vec<Violation>,
    },
    #[error("{0} leaked value(s) across the split; resolve before export")]
    LeakageUnresolved(usize),
    #[error("layout `{0}` is not part of the split assignment")]
    UnassignedLayout(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DatasetError {
    let path = path.into();
    move |source| DatasetError::Io { path, source }
}

/// What a split needs to know about a layout.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LayoutInfo {
    pub layout_id: String,
    pub brand: String,
    pub page_type: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitStrategy {
    CrossPage {
        fraction: f64,
        #[serde(default)]
        stratify_brand: bool,
    },
    CrossCompany {
        brand: String,
    },
    CrossType {
        page_type: String,
    },
}

impl fmt::Display for SplitStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitStrategy::CrossPage { fraction, .. } => write!(f, "cross-page:{fraction}"),
            SplitStrategy::CrossCompany { brand } => write!(f, "cross-company:{brand}"),
            SplitStrategy::CrossType { page_type } => write!(f, "cross-type:{page_type}"),
        }
    }
}

impl FromStr for SplitStrategy {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DatasetError::BadStrategy(s.to_string());
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        let arg = arg.trim();
        match kind.trim() {
            "cross-page" | "cross_page" => {
                let fraction: f64 = arg.parse().map_err(|_| bad())?;
                if !(0.0..=1.0).contains(&fraction) {
                    return Err(DatasetError::BadFraction(fraction));
                }
                Ok(SplitStrategy::CrossPage {
                    fraction,
                    stratify_brand: false,
                })
            }
            "cross-company" | "cross_company" if !arg.is_empty() => {
                Ok(SplitStrategy::CrossCompany { brand: arg.into() })
            }
            "cross-type" | "cross_type" if !arg.is_empty() => Ok(SplitStrategy::CrossType {
                page_type: arg.into(),
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Layout-granular train/test assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub strategy: SplitStrategy,
    pub seed: u64,
    pub train: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl SplitAssignment {
    pub fn split_of(&self, layout_id: &str) -> Option<Split> {
        if self.test.contains(layout_id) {
            Some(Split::Test)
        } else if self.train.contains(layout_id) {
            Some(Split::Train)
        } else {
            None
        }
    }

    pub fn layouts(&self, split: Split) -> &BTreeSet<String> {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("assignments always serialize");
        s.push('\n');
        s
    }
}

/// Test-set size for a cross-page hold-out over `n` layouts.
pub fn holdout_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Per-group quotas summing to `total`, by largest remainder.
fn apportion(
    groups: &BTreeMap<&str, Vec<&str>>,
    fraction: f64,
    total: usize,
) -> BTreeMap<String, usize> {
    let mut quotas: BTreeMap<String, usize> = BTreeMap::new();
    let mut remainders: Vec<(f64, &str)> = Vec::new();
    for (brand, members) in groups {
        let exact = fraction * members.len() as f64;
        let base = exact.floor() as usize;
        quotas.insert(brand.to_string(), base);
        remainders.push((exact - base as f64, brand));
    }
    let assigned: usize = quotas.values().sum();
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
    for (_, brand) in remainders.into_iter().take(total.saturating_sub(assigned)) {
        *quotas.get_mut(brand).unwrap() += 1;
    }
    quotas
}

pub fn split(
    layouts: &[LayoutInfo],
    strategy: &SplitStrategy,
    seed: u64,
) -> Result<SplitAssignment, DatasetError> {
    let all: BTreeSet<&str> = layouts.iter().map(|l| l.layout_id.as_str()).collect();
    let test: BTreeSet<String> = match strategy {
        SplitStrategy::CrossPage {
            fraction,
            stratify_brand,
        } => {
            if !(0.0..=1.0).contains(fraction) {
                return Err(DatasetError::BadFraction(*fraction));
            }
            let total = holdout_size(all.len(), *fraction);
            if *stratify_brand {
                let mut groups: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
                for l in layouts {
                    groups
                        .entry(l.brand.as_str())
                        .or_default()
                        .push(l.layout_id.as_str());
                }
                for members in groups.values_mut() {
                    members.sort_unstable();
                    members.dedup();
                }
                let quotas = apportion(&groups, *fraction, total);
                let mut picked = BTreeSet::new();
                for (brand, members) in &groups {
                    let mut rng = sub_rng(seed, &format!("split:{brand}"));
                    for i in sample_indices(&mut rng, members.len(), quotas[*brand]) {
                        picked.insert(members[i].to_string());
                    }
                }
                picked
            } else {
                let ordered: Vec<&str> = all.iter().copied().collect();
                let mut rng = sub_rng(seed, "split");
                sample_indices(&mut rng, ordered.len(), total)
                    .into_iter()
                    .map(|i| ordered[i].to_string())
                    .collect()
            }
        }
        SplitStrategy::CrossCompany { brand } => {
            let held: BTreeSet<String> = layouts
                .iter()
                .filter(|l| l.brand.eq_ignore_ascii_case(brand))
                .map(|l| l.layout_id.clone())
                .collect();
            if held.is_empty() {
                return Err(DatasetError::UnknownBrand(brand.clone()));
            }
            held
        }
        SplitStrategy::CrossType { page_type } => {
            let held: BTreeSet<String> = layouts
                .iter()
                .filter(|l| l.page_type.eq_ignore_ascii_case(page_type))
                .map(|l| l.layout_id.clone())
                .collect();
            if held.is_empty() {
                return Err(DatasetError::UnknownPageType(page_type.clone()));
            }
            held
        }
    };
    let train = all
        .iter()
        .filter(|id| !test.contains(**id))
        .map(|id| id.to_string())
        .collect();
    Ok(SplitAssignment {
        strategy: strategy.clone(),
        seed,
        train,
        test,
    })
}

/// A value injected on both sides of a split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakFinding {
    /// Normalized value.
    pub value: String,
    pub keys: BTreeSet<String>,
    pub train_layouts: BTreeSet<String>,
    pub test_layouts: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub findings: Vec<LeakFinding>,
}

impl LeakageReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

impl fmt::Display for LeakageReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.findings.is_empty() {
            return writeln!(f, "no leaked values");
        }
        for finding in &self.findings {
            writeln!(
                f,
                "`{}` ({}) in train [{}] and test [{}]",
                finding.value,
                finding.keys.iter().cloned().collect::<Vec<_>>().join(", "),
                finding
                    .train_layouts
                    .iter()
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(", "),
                finding
                    .test_layouts
                    .iter()
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(", "),
            )?;
        }
        Ok(())
    }
}

/// Every scoped value that occurs in a train-layout config and a test-layout config.
pub fn check_leakage(
    assignment: &SplitAssignment,
    configs_by_layout: &BTreeMap<String, Vec<DataConfig>>,
) -> LeakageReport {
    #[derive(Default)]
    struct Seen {
        keys: BTreeSet<String>,
        train: BTreeSet<String>,
        test: BTreeSet<String>,
    }
    let mut seen: BTreeMap<String, Seen> = BTreeMap::new();
    for (layout, configs) in configs_by_layout {
        let Some(side) = assignment.split_of(layout) else {
            continue;
        };
        for config in configs {
            for (key, value) in config.leak_scoped_values() {
                let entry = seen.entry(value).or_default();
                entry.keys.insert(key.to_string());
                match side {
                    Split::Train => entry.train.insert(layout.clone()),
                    Split::Test => entry.test.insert(layout.clone()),
                };
            }
        }
    }
    let findings = seen
        .into_iter()
        .filter(|(_, s)| !s.train.is_empty() && !s.test.is_empty())
        .map(|(value, s)| LeakFinding {
            value,
            keys: s.keys,
            train_layouts: s.train,
            test_layouts: s.test,
        })
        .collect();
    LeakageReport { findings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Provenance, Value};

    fn registry(
        n: usize,
        brand_of: impl Fn(usize) -> String,
        type_of: impl Fn(usize) -> String,
    ) -> Vec<LayoutInfo> {
        (0..n)
            .map(|i| LayoutInfo {
                layout_id: format!("layout_{i:03}"),
                brand: brand_of(i),
                page_type: type_of(i),
            })
            .collect()
    }

    #[test]
    fn cross_page_sizes() {
        let layouts = registry(408, |i| format!("b{}", i % 7), |_| "cart".into());
        let strategy: SplitStrategy = "cross-page:0.2".parse().unwrap();
        let a = split(&layouts, &strategy, 42).unwrap();
        assert_eq!(a.test.len(), 82);
        assert_eq!(a.train.len() + a.test.len(), 408);
        assert!(a.train.is_disjoint(&a.test));
        assert_eq!(a, split(&layouts, &strategy, 42).unwrap());
        assert_ne!(a.test, split(&layouts, &strategy, 43).unwrap().test);
        let strat = SplitStrategy::CrossPage {
            fraction: 0.2,
            stratify_brand: true,
        };
        assert_eq!(split(&layouts, &strat, 42).unwrap().test.len(), 82);
    }

    #[test]
    fn hold_out_by_attribute() {
        let layouts = registry(
            408,
            |i| {
                if i < 56 {
                    "amazon".into()
                } else {
                    format!("b{}", i % 9)
                }
            },
            |i| {
                if i % 20 == 0 && i < 400 {
                    "checkout".into()
                } else {
                    "cart".into()
                }
            },
        );
        let a = split(&layouts, &"cross-company:amazon".parse().unwrap(), 1).unwrap();
        assert_eq!(a.test.len(), 56);
        let t = split(&layouts, &"cross-type:checkout".parse().unwrap(), 1).unwrap();
        assert_eq!(t.test.len(), 20);
        assert!(matches!(
            split(&layouts, &"cross-company:nobody".parse().unwrap(), 1),
            Err(DatasetError::UnknownBrand(_))
        ));
        assert!(matches!(
            split(&layouts, &"cross-type:nothing".parse().unwrap(), 1),
            Err(DatasetError::UnknownPageType(_))
        ));
    }

    #[test]
    fn strategy_parsing() {
        assert!("cross-page:1.5".parse::<SplitStrategy>().is_err());
        assert!("sideways:1".parse::<SplitStrategy>().is_err());
        assert_eq!(
            "cross-company:Amazon"
                .parse::<SplitStrategy>()
                .unwrap()
                .to_string(),
            "cross-company:Amazon"
        );
    }

    fn config(layout: &str, name: &str) -> DataConfig {
        let mut c = DataConfig {
            layout_id: layout.into(),
            variant_index: 0,
            seed: 0,
            values: BTreeMap::new(),
            included_optional_fields: BTreeSet::new(),
            provenance: BTreeMap::new(),
        };
        c.values
            .insert("PII_FULL_NAME".into(), Value::Text(name.into()));
        c.provenance
            .insert("PII_FULL_NAME".into(), Provenance::SyntheticPii);
        c.values.insert("BRAND".into(), Value::Text("Acme".into()));
        c.provenance.insert("BRAND".into(), Provenance::Extracted);
        c
    }

    #[test]
    fn planted_collision_found_once() {
        let assignment = SplitAssignment {
            strategy: SplitStrategy::CrossCompany { brand: "x".into() },
            seed: 0,
            train: ["a".to_string()].into(),
            test: ["b".to_string()].into(),
        };
        let mut configs = BTreeMap::new();
        configs.insert("a".to_string(), vec![config("a", "Marc Arnold")]);
        configs.insert("b".to_string(), vec![config("b", "marc  ARNOLD")]);
        let report = check_leakage(&assignment, &configs);
        assert_eq!(report.findings.len(), 1);
        assert_eq!(report.findings[0].value, "marc arnold");
        assert!(report.findings[0].train_layouts.contains("a"));
        assert!(report.findings[0].test_layouts.contains("b"));

        configs.insert("b".to_string(), vec![config("b", "Jane Roe")]);
        assert!(check_leakage(&assignment, &configs).is_clean());
    }
}
