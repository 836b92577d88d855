use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ConfigError;
use crate::rng::rng_from_seed;

/// Characters that may act as wildcards. A sigil without a charset is rejected.
pub const WILDCARD_SIGILS: &[char] = &['#', '@', '*', '?', '%', '^'];

/// Platform identifier shape such as `###-#######-#######`.
///
/// Default wildcards: `#` digit, `@` uppercase letter, `*` uppercase letter or
/// digit. Other sigils from [`WILDCARD_SIGILS`] need an explicit charset.
/// Everything else is copied literally.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "IdFormatRepr", into = "IdFormatRepr")]
pub struct IdFormatTemplate {
    pattern: String,
    charsets: BTreeMap<char, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum IdFormatRepr {
    Pattern(String),
    Full {
        pattern: String,
        #[serde(default)]
        charsets: BTreeMap<char, String>,
    },
}

impl TryFrom<IdFormatRepr> for IdFormatTemplate {
    type Error = ConfigError;

    fn try_from(repr: IdFormatRepr) -> Result<Self, Self::Error> {
        match repr {
            IdFormatRepr::Pattern(p) => IdFormatTemplate::new(&p),
            IdFormatRepr::Full { pattern, charsets } => {
                IdFormatTemplate::with_charsets(&pattern, charsets)
            }
        }
    }
}

impl From<IdFormatTemplate> for IdFormatRepr {
    fn from(t: IdFormatTemplate) -> Self {
        let defaults = default_charsets();
        let custom: BTreeMap<char, String> = t
            .charsets
            .into_iter()
            .filter(|(k, v)| defaults.get(k) != Some(v))
            .collect();
        if custom.is_empty() {
            IdFormatRepr::Pattern(t.pattern)
        } else {
            IdFormatRepr::Full {
                pattern: t.pattern,
                charsets: custom,
            }
        }
    }
}

fn default_charsets() -> BTreeMap<char, String> {
    BTreeMap::from([
        ('#', "0123456789".to_string()),
        ('@', "ABCDEFGHIJKLMNOPQRSTUVWXYZ".to_string()),
        ('*', "ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789".to_string()),
    ])
}

impl IdFormatTemplate {
    pub fn new(pattern: &str) -> Result<Self, ConfigError> {
        Self::with_charsets(pattern, BTreeMap::new())
    }

    pub fn with_charsets(
        pattern: &str,
        extra: BTreeMap<char, String>,
    ) -> Result<Self, ConfigError> {
        let bad = |why: String| ConfigError::BadPattern {
            pattern: pattern.to_string(),
            reason: why,
        };
        if pattern.is_empty() {
            return Err(bad("empty pattern".into()));
        }
        let mut charsets = default_charsets();
        for (sigil, set) in extra {
            if !WILDCARD_SIGILS.contains(&sigil) {
                return Err(bad(format!("`{sigil}` cannot be a wildcard")));
            }
            if set.is_empty() {
                return Err(bad(format!("empty charset for `{sigil}`")));
            }
            charsets.insert(sigil, set);
        }
        if let Some(c) = pattern
            .chars()
            .find(|c| WILDCARD_SIGILS.contains(c) && !charsets.contains_key(c))
        {
            return Err(bad(format!("unknown wildcard `{c}`")));
        }
        Ok(IdFormatTemplate {
            pattern: pattern.to_string(),
            charsets,
        })
    }

    pub fn pattern(&self) -> &str {
        &self.pattern
    }

    pub fn charset(&self, sigil: char) -> Option<&str> {
        self.charsets.get(&sigil).map(String::as_str)
    }
}

/// Expands every wildcard with a draw from a generator seeded by `seed`.
pub fn format_id(template: &IdFormatTemplate, seed: u64) -> String {
    let mut rng = rng_from_seed(seed);
    template
        .pattern
        .chars()
        .map(|c| match template.charsets.get(&c) {
            Some(set) => {
                let chars: Vec<char> = set.chars().collect();
                chars[rng.gen_range(0..chars.len())]
            }
            None => c,
        })
        .collect()
}
