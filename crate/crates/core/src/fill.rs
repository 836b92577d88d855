//! Progressive form-fill states: which fields are empty, mid-typing or complete
//! in each render of a layout.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

use crate::model::FillTag;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FillError {
    #[error("partial density must be at least 1, got {0}")]
    BadDensity(u32),
    #[error("cannot cut a prefix from an empty value")]
    EmptyValue,
    #[error("stage {k} is outside 1..{n}")]
    StageOutOfRange { k: u32, n: usize },
}

/// How many partial stages a plan contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Density {
    All,
    Sample(u32),
}

impl FromStr for Density {
    type Err = FillError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            return Ok(Density::All);
        }
        let n: u32 = s.parse().map_err(|_| FillError::BadDensity(0))?;
        if n < 1 {
            return Err(FillError::BadDensity(n));
        }
        Ok(Density::Sample(n))
    }
}

impl fmt::Display for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Density::All => f.write_str("all"),
            Density::Sample(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillPlan {
    pub states: Vec<FillTag>,
    pub density: Density,
}

impl FillPlan {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Number of states a plan over `n_fields` fields contains.
pub fn state_count(n_fields: usize, density: Density) -> usize {
    if n_fields == 0 {
        return 1;
    }
    let partials = match density {
        Density::All => n_fields - 1,
        Density::Sample(n) => (n as usize).min(n_fields - 1),
    };
    partials + 2
}

/// Ordered states: empty, partial stages ascending, full.
pub fn plan_states<R: Rng + ?Sized>(
    n_fields: usize,
    density: Density,
    rng: &mut R,
) -> Result<FillPlan, FillError> {
    if let Density::Sample(0) = density {
        return Err(FillError::BadDensity(0));
    }
    if n_fields == 0 {
        return Ok(FillPlan {
            states: vec![FillTag::Full],
            density,
        });
    }
    let stages = n_fields - 1;
    let mut ks: Vec<u32> = match density {
        Density::All => (1..=stages as u32).collect(),
        Density::Sample(n) => {
            let take = (n as usize).min(stages);
            sample_indices(rng, stages, take)
                .into_iter()
                .map(|i| i as u32 + 1)
                .collect()
        }
    };
    ks.sort_unstable();
    let mut states = vec![FillTag::Empty];
    states.extend(ks.into_iter().map(FillTag::Partial));
    states.push(FillTag::Full);
    Ok(FillPlan { states, density })
}

/// A mid-typing prefix of a value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prefix {
    pub text: String,
    /// Length in grapheme clusters.
    pub graphemes: usize,
    /// The value is a single grapheme, so the prefix equals it.
    pub degenerate: bool,
}

pub fn grapheme_len(value: &str) -> usize {
    value.graphemes(true).count()
}

/// First `n` grapheme clusters of `value`.
pub fn grapheme_prefix(value: &str, n: usize) -> &str {
    match value.grapheme_indices(true).nth(n) {
        Some((at, _)) => &value[..at],
        None => value,
    }
}

/// Strict non-empty prefix with a cut drawn uniformly from `1..len`.
pub fn partial_value<R: Rng + ?Sized>(full_value: &str, rng: &mut R) -> Result<Prefix, FillError> {
    let len = grapheme_len(full_value);
    match len {
        0 => Err(FillError::EmptyValue),
        1 => Ok(Prefix {
            text: full_value.to_string(),
            graphemes: 1,
            degenerate: true,
        }),
        _ => {
            let cut = rng.gen_range(1..len);
            Ok(Prefix {
                text: grapheme_prefix(full_value, cut).to_string(),
                graphemes: cut,
                degenerate: false,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "len", rename_all = "snake_case")]
pub enum FieldFill {
    Empty,
    /// Mid-typing, showing this many grapheme clusters.
    Prefix(usize),
    Full,
}

/// A form field as seen by the planner, in fill order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldSlot {
    pub field_id: String,
    pub value: String,
    /// Dropdowns and checkboxes are never typed partially.
    pub atomic: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FillState {
    pub tag: FillTag,
    pub per_field: BTreeMap<String, FieldFill>,
}

impl FillState {
    /// Resolves per-field targets for `tag` over `slots` (given in fill order).
    pub fn resolve<R: Rng + ?Sized>(
        tag: FillTag,
        slots: &[FieldSlot],
        rng: &mut R,
    ) -> Result<FillState, FillError> {
        let mut per_field = BTreeMap::new();
        for (i, slot) in slots.iter().enumerate() {
            let order = i as u32 + 1;
            let fill = match tag {
                FillTag::Empty => FieldFill::Empty,
                FillTag::Full => FieldFill::Full,
                FillTag::Partial(k) => {
                    if k == 0 || k as usize >= slots.len() {
                        return Err(FillError::StageOutOfRange { k, n: slots.len() });
                    }
                    match order.cmp(&k) {
                        std::cmp::Ordering::Less => FieldFill::Full,
                        std::cmp::Ordering::Greater => FieldFill::Empty,
                        std::cmp::Ordering::Equal if slot.atomic || slot.value.is_empty() => {
                            FieldFill::Full
                        }
                        std::cmp::Ordering::Equal => {
                            let p = partial_value(&slot.value, rng)?;
                            if p.degenerate {
                                FieldFill::Full
                            } else {
                                FieldFill::Prefix(p.graphemes)
                            }
                        }
                    }
                }
            };
            per_field.insert(slot.field_id.clone(), fill);
        }
        Ok(FillState { tag, per_field })
    }

    /// Text a field shows for this state.
    pub fn shown<'v>(&self, field_id: &str, value: &'v str) -> Option<&'v str> {
        match self.per_field.get(field_id)? {
            FieldFill::Empty => Some(""),
            FieldFill::Prefix(n) => Some(grapheme_prefix(value, *n)),
            FieldFill::Full => Some(value),
        }
    }
}
