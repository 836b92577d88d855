//! Product corpus: ingest and cleaning, token-cosine similarity, seeded sampling.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::Cents;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("asset root {0} is not a readable directory")]
    AssetRootMissing(PathBuf),
    #[error("catalog line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("catalog i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("no eligible product{}", .0.as_ref().map(|c| format!(" in category `{c}`")).unwrap_or_default())]
    NoEligibleProduct(Option<String>),
}

/// One input line of the catalog file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RawProduct {
    pub id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brand: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price: Option<String>,
    /// Image path relative to the asset root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductRecord {
    pub id: String,
    pub title: String,
    pub description: String,
    pub brand: String,
    pub image_ref: Option<PathBuf>,
    pub price_hint: Option<Cents>,
    pub category: String,
}

impl ProductRecord {
    pub fn to_raw(&self) -> RawProduct {
        RawProduct {
            id: self.id.clone(),
            title: self.title.clone(),
            description: self.description.clone(),
            brand: (!self.brand.is_empty()).then(|| self.brand.clone()),
            category: (!self.category.is_empty()).then(|| self.category.clone()),
            price: self.price_hint.map(|c| c.to_string()),
            image: self
                .image_ref
                .as_ref()
                .map(|p| p.to_string_lossy().into_owned()),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Catalog {
    records: Vec<ProductRecord>,
    /// token -> (record index, occurrences)
    postings: BTreeMap<String, Vec<(usize, u32)>>,
    norms: Vec<f64>,
    asset_root: PathBuf,
}

fn asin_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\s*[\(\[]?\b(?:ASIN:?\s*)?B0[0-9A-Z]{8}\b[\)\]]?").unwrap())
}

fn site_prefix_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*(?:amazon\s+brand|amazonbasics|amazon\s+basics)\s*[-–:|]\s*").unwrap()
    })
}

/// Removes marketplace-specific identifiers (ASIN codes, house-brand prefixes).
pub fn clean_title(title: &str) -> String {
    let stripped = site_prefix_pattern().replace(title, "");
    let stripped = asin_pattern().replace_all(&stripped, "");
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Leading run of capitalized (or numeric) tokens before the first comma.
///
/// `"365 Everyday Value, Fragrance Free"` yields `"365 Everyday Value"`.
/// Titles without a comma, or whose first token is lowercase, yield `""`.
pub fn brand_from_title(title: &str) -> String {
    let Some((head, _)) = title.split_once(',') else {
        return String::new();
    };
    let mut run = Vec::new();
    for token in head.split_whitespace() {
        let first = token.chars().next().unwrap_or(' ');
        if first.is_uppercase() || first.is_ascii_digit() || token == "&" {
            run.push(token);
        } else {
            break;
        }
    }
    run.join(" ")
}

fn is_placeholder_image(path: &Path) -> bool {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    name.contains("placeholder")
        || name.contains("no_image")
        || name.contains("noimage")
        || name.contains("no-image")
}

pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

fn token_counts(record: &ProductRecord) -> BTreeMap<String, u32> {
    let mut counts = BTreeMap::new();
    for token in tokenize(&record.title).chain(tokenize(&record.description)) {
        *counts.entry(token).or_insert(0) += 1;
    }
    counts
}

fn norm(counts: &BTreeMap<String, u32>) -> f64 {
    counts
        .values()
        .map(|&c| (c as f64) * (c as f64))
        .sum::<f64>()
        .sqrt()
}

/// Cosine similarity of two records' lowercased title+description token multisets.
pub fn token_cosine(a: &ProductRecord, b: &ProductRecord) -> f64 {
    let (ca, cb) = (token_counts(a), token_counts(b));
    let (na, nb) = (norm(&ca), norm(&cb));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = ca
        .iter()
        .filter_map(|(t, &x)| cb.get(t).map(|&y| x as f64 * y as f64))
        .fold(0.0, |acc, v| acc + v);
    dot / (na * nb)
}

impl Catalog {
    /// Cleans raw records and builds the token index.
    ///
    /// Drops records with an empty title, no image, a placeholder image or an
    /// image file that does not exist under `asset_root`.
    pub fn ingest(
        raw_records: impl IntoIterator<Item = RawProduct>,
        asset_root: &Path,
    ) -> Result<Catalog, CatalogError> {
        if std::fs::read_dir(asset_root).is_err() {
            return Err(CatalogError::AssetRootMissing(asset_root.to_path_buf()));
        }
        let mut records = Vec::new();
        for raw in raw_records {
            let title = clean_title(&raw.title);
            if title.is_empty() {
                continue;
            }
            let Some(image) = raw.image.as_deref().filter(|s| !s.trim().is_empty()) else {
                continue;
            };
            let image_path = asset_root.join(image);
            if is_placeholder_image(&image_path) || !image_path.is_file() {
                continue;
            }
            let brand = raw
                .brand
                .map(|b| b.trim().to_string())
                .filter(|b| !b.is_empty())
                .unwrap_or_else(|| brand_from_title(&title));
            records.push(ProductRecord {
                id: raw.id,
                title,
                description: raw.description.trim().to_string(),
                brand,
                image_ref: Some(image_path),
                price_hint: raw
                    .price
                    .as_deref()
                    .and_then(|p| p.trim_start_matches('$').parse().ok()),
                category: raw.category.unwrap_or_default().trim().to_string(),
            });
        }
        let mut catalog = Catalog::from_records(records);
        catalog.asset_root = asset_root.to_path_buf();
        Ok(catalog)
    }

    /// Reads newline-delimited raw records and ingests them.
    pub fn load(path: &Path, asset_root: &Path) -> Result<Catalog, CatalogError> {
        let file = std::fs::File::open(path)?;
        let mut raw = Vec::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            raw.push(
                serde_json::from_str(&line).map_err(|source| CatalogError::Parse {
                    line: i + 1,
                    source,
                })?,
            );
        }
        Catalog::ingest(raw, asset_root)
    }

    fn from_records(records: Vec<ProductRecord>) -> Catalog {
        let mut postings: BTreeMap<String, Vec<(usize, u32)>> = BTreeMap::new();
        let mut norms = Vec::with_capacity(records.len());
        for (i, record) in records.iter().enumerate() {
            let counts = token_counts(record);
            norms.push(norm(&counts));
            for (token, count) in counts {
                postings.entry(token).or_default().push((i, count));
            }
        }
        Catalog {
            records,
            postings,
            norms,
            asset_root: PathBuf::new(),
        }
    }

    pub fn asset_root(&self) -> &Path {
        &self.asset_root
    }

    /// Image path of `record` relative to the asset root.
    pub fn relative_image(&self, record: &ProductRecord) -> Option<PathBuf> {
        let path = record.image_ref.as_ref()?;
        Some(
            path.strip_prefix(&self.asset_root)
                .unwrap_or(path)
                .to_path_buf(),
        )
    }

    pub fn records(&self) -> &[ProductRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ProductRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Number of indexed tokens; every retained record contributes its tokens.
    pub fn vocabulary_len(&self) -> usize {
        self.postings.len()
    }

    /// Top-`k` records by token cosine with `query`, excluding the query's id.
    /// Ties break by ascending id.
    pub fn similar(&self, query: &ProductRecord, k: usize) -> Vec<&ProductRecord> {
        let query_counts = token_counts(query);
        let query_norm = norm(&query_counts);
        let mut dots: HashMap<usize, f64> = HashMap::new();
        for (token, &qc) in &query_counts {
            if let Some(list) = self.postings.get(token) {
                for &(i, c) in list {
                    *dots.entry(i).or_insert(0.0) += qc as f64 * c as f64;
                }
            }
        }
        let mut scored: Vec<(f64, &ProductRecord)> = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.id != query.id)
            .map(|(i, r)| {
                let denom = query_norm * self.norms[i];
                let score = match dots.get(&i) {
                    Some(dot) if denom > 0.0 => dot / denom,
                    _ => 0.0,
                };
                (score, r)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.id.cmp(&b.1.id)));
        scored.into_iter().take(k).map(|(_, r)| r).collect()
    }

    /// Uniform draw among records matching the optional category.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        category: Option<&str>,
    ) -> Result<&ProductRecord, CatalogError> {
        let eligible: Vec<&ProductRecord> = self
            .records
            .iter()
            .filter(|r| category.is_none_or(|c| r.category.eq_ignore_ascii_case(c)))
            .collect();
        if eligible.is_empty() {
            return Err(CatalogError::NoEligibleProduct(
                category.map(str::to_string),
            ));
        }
        Ok(eligible[rng.gen_range(0..eligible.len())])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn rec(id: &str, title: &str, description: &str) -> ProductRecord {
        ProductRecord {
            id: id.into(),
            title: title.into(),
            description: description.into(),
            brand: String::new(),
            image_ref: None,
            price_hint: None,
            category: String::new(),
        }
    }

    fn toy() -> Catalog {
        Catalog::from_records(vec![
            rec("a", "red cotton shirt", "soft cotton"),
            rec("b", "blue cotton shirt", "cotton"),
            rec("c", "steel water bottle", "insulated steel"),
            rec("d", "red wool scarf", "warm wool"),
            rec("e", "cotton tote bag", "reusable"),
        ])
    }

    #[test]
    fn brand_heuristic() {
        assert_eq!(
            brand_from_title("365 Everyday Value, Fragrance Free Lotion"),
            "365 Everyday Value"
        );
        assert_eq!(
            brand_from_title("Stone & Beam Modern Sofa, Gray"),
            "Stone & Beam Modern Sofa"
        );
        assert_eq!(
            brand_from_title("Rivet Mid-Century chair, walnut"),
            "Rivet Mid-Century"
        );
        assert_eq!(brand_from_title("no comma here"), "");
        assert_eq!(brand_from_title("lowercase start, Foo"), "");
    }

    #[test]
    fn site_identifiers_stripped() {
        assert_eq!(
            clean_title("Amazon Brand - Solimo Coffee Pods B07XYZ1234"),
            "Solimo Coffee Pods"
        );
        assert_eq!(clean_title("Desk Lamp (ASIN: B01ABCDEF9)"), "Desk Lamp");
    }

    #[test]
    fn identical_query_ranks_first() {
        let cat = toy();
        let query = rec("zzz", "steel water bottle", "insulated steel");
        assert_eq!(cat.similar(&query, 1)[0].id, "c");
    }

    #[test]
    fn exhaustive_k_excludes_query() {
        let cat = toy();
        let query = cat.records()[0].clone();
        let got = cat.similar(&query, cat.len());
        assert_eq!(got.len(), cat.len() - 1);
        assert!(got.iter().all(|r| r.id != "a"));
    }

    #[test]
    fn ranking_matches_brute_force_cosine() {
        let cat = toy();
        for query in cat.records() {
            let mut expected: Vec<(f64, String)> = cat
                .records()
                .iter()
                .filter(|r| r.id != query.id)
                .map(|r| (token_cosine(query, r), r.id.clone()))
                .collect();
            expected.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
            let got: Vec<String> = cat
                .similar(query, 10)
                .into_iter()
                .map(|r| r.id.clone())
                .collect();
            let want: Vec<String> = expected.into_iter().map(|(_, id)| id).collect();
            assert_eq!(got, want, "query {}", query.id);
        }
    }

    #[test]
    fn cosine_is_symmetric() {
        let cat = toy();
        for a in cat.records() {
            for b in cat.records() {
                assert_eq!(token_cosine(a, b), token_cosine(b, a));
            }
        }
    }

    #[test]
    fn sampling_single_and_constrained() {
        let cat = Catalog::from_records(vec![rec("only", "thing", "")]);
        let mut rng = rng_from_seed(1);
        assert_eq!(cat.sample(&mut rng, None).unwrap().id, "only");
        assert!(matches!(
            cat.sample(&mut rng, Some("garden")),
            Err(CatalogError::NoEligibleProduct(Some(_)))
        ));
    }

    #[test]
    fn sampling_is_reproducible() {
        let cat = toy();
        let draw = || {
            let mut rng = rng_from_seed(99);
            let a = cat.sample(&mut rng, None).unwrap().id.clone();
            let b = cat.sample(&mut rng, None).unwrap().id.clone();
            (a, b)
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn sampling_is_uniform_within_three_sigma() {
        let cat = Catalog::from_records((0..4).map(|i| rec(&format!("p{i}"), "x", "")).collect());
        let mut rng = rng_from_seed(2024);
        let mut counts = [0u32; 4];
        for _ in 0..10_000 {
            let r = cat.sample(&mut rng, None).unwrap();
            counts[r.id[1..].parse::<usize>().unwrap()] += 1;
        }
        // Binomial(10000, 1/4): sigma = sqrt(10000 * 0.25 * 0.75) ~= 43.3
        let sigma = (10_000f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - 2500.0).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }
}
