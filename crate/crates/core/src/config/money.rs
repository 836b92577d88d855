use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{ConfigError, LayoutDataSpec, Provenance, Value};

pub const SUBTOTAL_KEY: &str = "ORDER_SUBTOTAL";
pub const TAX_KEY: &str = "ORDER_TAX";
pub const TOTAL_KEY: &str = "ORDER_TOTAL";
pub const SHIPPING_KEY: &str = "SHIPPING_COST";
pub const TAX_RATE_KEY: &str = "TAX_RATE";

/// Exact currency amount in integer cents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Cents(pub i64);

impl fmt::Display for Cents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl FromStr for Cents {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ConfigError::BadAmount(s.to_string());
        let trimmed = s.trim().trim_start_matches('$');
        let (negative, body) = match trimmed.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, trimmed),
        };
        let (whole, frac) = body.split_once('.').unwrap_or((body, ""));
        if whole.is_empty()
            || frac.len() > 2
            || !whole
                .chars()
                .chain(frac.chars())
                .all(|c| c.is_ascii_digit())
        {
            return Err(bad());
        }
        let whole: i64 = whole.parse().map_err(|_| bad())?;
        let frac: i64 = format!("{frac:0<2}").parse().map_err(|_| bad())?;
        let cents = whole
            .checked_mul(100)
            .and_then(|w| w.checked_add(frac))
            .ok_or_else(bad)?;
        Ok(Cents(if negative { -cents } else { cents }))
    }
}

impl Serialize for Cents {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Cents {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// A decimal rate held as an exact fraction `num / den`, with `den` a power of ten.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rate {
    pub num: i128,
    pub den: i128,
}

impl Rate {
    pub const ZERO: Rate = Rate { num: 0, den: 1 };

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Rendered as a percentage with trailing zeros trimmed, e.g. `8.25%`.
    pub fn percent_label(&self) -> String {
        let hundred = Rate {
            num: self.num * 100,
            den: self.den,
        };
        let whole = hundred.num / hundred.den;
        let mut frac = hundred.num % hundred.den;
        let mut digits = String::new();
        while frac != 0 && digits.len() < 6 {
            frac *= 10;
            digits.push(char::from(b'0' + (frac / hundred.den) as u8));
            frac %= hundred.den;
        }
        if digits.is_empty() {
            format!("{whole}%")
        } else {
            format!("{whole}.{digits}%")
        }
    }
}

impl FromStr for Rate {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ConfigError::BadAmount(s.to_string());
        let t = s.trim();
        let (negative, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        let (whole, frac) = body.split_once('.').unwrap_or((body, ""));
        if whole.is_empty() && frac.is_empty() || frac.len() > 12 {
            return Err(bad());
        }
        if !whole
            .chars()
            .chain(frac.chars())
            .all(|c| c.is_ascii_digit())
        {
            return Err(bad());
        }
        let den = 10i128.pow(frac.len() as u32);
        let whole: i128 = if whole.is_empty() {
            0
        } else {
            whole.parse().map_err(|_| bad())?
        };
        let frac: i128 = if frac.is_empty() {
            0
        } else {
            frac.parse().map_err(|_| bad())?
        };
        let num = whole * den + frac;
        Ok(Rate {
            num: if negative { -num } else { num },
            den,
        })
    }
}

/// `round(numerator / denominator)` with ties to even; `denominator > 0`.
pub fn div_round_half_even(numerator: i128, denominator: i128) -> i128 {
    let q = numerator.div_euclid(denominator);
    let r = numerator.rem_euclid(denominator);
    match (2 * r).cmp(&denominator) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => {
            if q % 2 == 0 {
                q
            } else {
                q + 1
            }
        }
    }
}

/// One cart line: unit price and quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LineItem {
    pub price: Cents,
    pub quantity: u32,
}

/// Cart lines found in `values`: every `PRODUCT<n>_PRICE`, with `PRODUCT<n>_QTY` (default 1).
pub fn line_items(values: &BTreeMap<String, Value>) -> Result<Vec<LineItem>, ConfigError> {
    let mut items = Vec::new();
    for (key, value) in values {
        let Some(index) = key
            .strip_prefix("PRODUCT")
            .and_then(|r| r.strip_suffix("_PRICE"))
        else {
            continue;
        };
        if index.is_empty() || !index.chars().all(|c| c.is_ascii_digit()) {
            continue;
        }
        let price = value
            .as_money()
            .ok_or_else(|| ConfigError::BadAmount(key.clone()))?;
        let quantity = match values.get(&format!("PRODUCT{index}_QTY")) {
            Some(v) => v
                .display()
                .trim()
                .parse::<u32>()
                .map_err(|_| ConfigError::BadAmount(format!("PRODUCT{index}_QTY")))?,
            None => 1,
        };
        items.push(LineItem { price, quantity });
    }
    Ok(items)
}

/// Recomputes subtotal, tax and total from the cart, shipping cost and tax rate.
///
/// Subtotal is the sum of price times quantity; tax is the subtotal times the
/// rate, rounded half-to-even to cents; total is subtotal + shipping + tax.
/// Shipping applies no tax. Idempotent.
pub fn derive_values(
    values: &BTreeMap<String, Value>,
    spec: &LayoutDataSpec,
) -> Result<BTreeMap<String, Value>, ConfigError> {
    let items = line_items(values)?;
    let shipping = match values.get(SHIPPING_KEY) {
        Some(v) => v
            .as_money()
            .ok_or_else(|| ConfigError::BadAmount(SHIPPING_KEY.into()))?,
        None => spec.shipping_cost()?,
    };
    let rate = spec.tax_rate()?;
    if shipping.0 < 0 {
        return Err(ConfigError::NegativeAmount(SHIPPING_KEY.into()));
    }
    if rate.num < 0 {
        return Err(ConfigError::NegativeAmount(TAX_RATE_KEY.into()));
    }
    let mut subtotal: i128 = 0;
    for item in &items {
        if item.price.0 < 0 {
            return Err(ConfigError::NegativeAmount("item price".into()));
        }
        subtotal += item.price.0 as i128 * item.quantity as i128;
    }
    let tax = div_round_half_even(subtotal * rate.num, rate.den);
    let total = subtotal + shipping.0 as i128 + tax;
    let to_cents = |v: i128| {
        i64::try_from(v)
            .map(Cents)
            .map_err(|_| ConfigError::BadAmount("overflow".into()))
    };

    let mut out = values.clone();
    out.insert(SUBTOTAL_KEY.into(), Value::Money(to_cents(subtotal)?));
    out.insert(TAX_KEY.into(), Value::Money(to_cents(tax)?));
    out.insert(TOTAL_KEY.into(), Value::Money(to_cents(total)?));
    Ok(out)
}

pub(crate) fn derived_provenance(provenance: &mut BTreeMap<String, Provenance>) {
    for key in [SUBTOTAL_KEY, TAX_KEY, TOTAL_KEY] {
        provenance.insert(key.into(), Provenance::Derived);
    }
}
