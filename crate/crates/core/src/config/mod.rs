//! Seeded data configurations: synthetic identities, catalog picks,
//! platform-formatted identifiers and render-time derived values.
//!
//! Key vocabulary (anything else is a `MissingGenerator` error):
//!
//! | keys | source |
//! |------|--------|
//! | `PII_FULLNAME`, `PII_FIRSTNAME`, `PII_LASTNAME`, `PII_EMAIL`, `PII_PHONE`, `PII_COMPANY` | shopper identity |
//! | `PII_STREET`, `PII_STREET2`, `PII_CITY`, `PII_STATE`, `PII_STATE_CODE`, `PII_ZIP`, `PII_CITY_STATE_ZIP` | shopper address |
//! | `PII_CARD_NUMBER`, `PII_CARD_LAST4`, `PII_CARD_EXPIRY`, `PII_CVV`, `PII_CARDHOLDER` | payment card |
//! | `PII_RECIPIENT_NAME`, `PII_GIFT_MESSAGE`, `PII_DELIVERY_INSTRUCTIONS`, `PII_STORE_LOCATION` | templated extras |
//! | `ORDER_DATE`, `ORDER_DELIVERY_DATE` | seeded dates, delivery strictly later |
//! | any key in `id_formats`, plus `ORDER_ID`, `ORDER_TRACKING`, `PII_SECURITY_CODE`, `PII_PO_NUMBER` | identifier templates |
//! | `PRODUCT<n>_{NAME,DESCRIPTION,BRAND,CATEGORY,IMAGE}`, `REC<n>_…` | catalog (`REC` = similar to product 1) |
//! | `PRODUCT<n>_{PRICE,QTY,RATING,REVIEWS}`, `REC<n>_{PRICE,RATING,REVIEWS}` | randomized |
//! | `SHIPPING_COST`, `TAX_RATE` and other constants | extracted from the source page |
//! | `ORDER_SUBTOTAL`, `ORDER_TAX`, `ORDER_TOTAL` | derived |

mod idfmt;
mod money;
pub mod pools;

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Days, NaiveDate};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, ProductRecord};
use crate::rng::{derive_seed, stable_hash, sub_rng, SeededRng};

pub use idfmt::{format_id, IdFormatTemplate, WILDCARD_SIGILS};
pub use money::{
    derive_values, div_round_half_even, line_items, Cents, LineItem, Rate, SHIPPING_KEY,
    SUBTOTAL_KEY, TAX_KEY, TAX_RATE_KEY, TOTAL_KEY,
};

/// Default number of data configurations rendered per layout.
pub const DEFAULT_VARIANTS: u32 = 25;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("no generation rule for key `{0}`")]
    MissingGenerator(String),
    #[error("bad id pattern `{pattern}`: {reason}")]
    BadPattern { pattern: String, reason: String },
    #[error("negative amount for {0}")]
    NegativeAmount(String),
    #[error("malformed amount `{0}`")]
    BadAmount(String),
    #[error("invalid data spec: {0}")]
    InvalidSpec(String),
    #[error("catalog: {0}")]
    Catalog(#[from] crate::catalog::CatalogError),
    #[error("could not draw a value for `{0}` inside the requested pool partition")]
    PartitionExhausted(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Value {
    Text(String),
    Money(Cents),
    Date(NaiveDate),
    ImageRef(String),
}

impl Value {
    /// Text shown on the page.
    pub fn display(&self) -> String {
        match self {
            Value::Text(s) | Value::ImageRef(s) => s.clone(),
            Value::Money(c) => c.to_string(),
            Value::Date(d) => d.format("%B %-d, %Y").to_string(),
        }
    }

    pub fn as_money(&self) -> Option<Cents> {
        match self {
            Value::Money(c) => Some(*c),
            Value::Text(s) => s.parse().ok(),
            _ => None,
        }
    }

    pub fn as_date(&self) -> Option<NaiveDate> {
        match self {
            Value::Date(d) => Some(*d),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    SyntheticPii,
    Catalog,
    Extracted,
    Randomized,
    Derived,
}

/// Per-layout data contract, read from the template's meta file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutDataSpec {
    #[serde(default)]
    pub required_keys: BTreeSet<String>,
    /// Optional field id -> inclusion probability.
    #[serde(default)]
    pub optional_fields: BTreeMap<String, f64>,
    /// Values read off the source page (shipping cost, tax rate, ...), as decimals.
    #[serde(default, rename = "constants")]
    pub extracted_constants: BTreeMap<String, String>,
    #[serde(default)]
    pub id_formats: BTreeMap<String, IdFormatTemplate>,
}

impl LayoutDataSpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (id, p) in &self.optional_fields {
            if !(0.0..=1.0).contains(p) {
                return Err(ConfigError::InvalidSpec(format!(
                    "inclusion probability {p} for `{id}`"
                )));
            }
        }
        for (key, raw) in &self.extracted_constants {
            let rate: Rate = raw.parse()?;
            if rate.num < 0 {
                return Err(ConfigError::NegativeAmount(key.clone()));
            }
        }
        let rate = self.tax_rate()?;
        if rate.num * 4 > rate.den {
            return Err(ConfigError::InvalidSpec(format!(
                "tax rate {} above 0.25",
                rate.as_f64()
            )));
        }
        Ok(())
    }

    pub fn tax_rate(&self) -> Result<Rate, ConfigError> {
        match self.extracted_constants.get(TAX_RATE_KEY) {
            Some(raw) => raw.parse(),
            None => Ok(Rate::ZERO),
        }
    }

    pub fn shipping_cost(&self) -> Result<Cents, ConfigError> {
        match self.extracted_constants.get(SHIPPING_KEY) {
            Some(raw) => raw.parse(),
            None => Ok(Cents(0)),
        }
    }
}

/// One seeded injection for one layout variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub layout_id: String,
    pub variant_index: u32,
    pub seed: u64,
    pub values: BTreeMap<String, Value>,
    pub included_optional_fields: BTreeSet<String>,
    pub provenance: BTreeMap<String, Provenance>,
}

impl DataConfig {
    pub fn get(&self, key: &str) -> Option<&Value> {
        self.values.get(key)
    }

    pub fn display(&self, key: &str) -> Option<String> {
        self.values.get(key).map(Value::display)
    }

    /// True when stored derived values equal a fresh recomputation.
    pub fn derived_fresh(&self, spec: &LayoutDataSpec) -> bool {
        derive_values(&self.values, spec).is_ok_and(|v| v == self.values)
    }

    /// Injected values that must never cross a train/test boundary, normalized.
    ///
    /// Covers text and image values from synthetic identities, the catalog and
    /// identifier templates; prices, dates, ratings and page constants are
    /// shared vocabulary and excluded.
    pub fn leak_scoped_values(&self) -> impl Iterator<Item = (&str, String)> {
        self.values.iter().filter_map(|(key, value)| {
            let provenance = self.provenance.get(key)?;
            let scoped = matches!(
                (provenance, value),
                (
                    Provenance::SyntheticPii | Provenance::Catalog | Provenance::Derived,
                    Value::Text(_)
                ) | (
                    Provenance::SyntheticPii | Provenance::Catalog,
                    Value::ImageRef(_)
                )
            );
            let normalized = normalize_value(&value.display());
            (scoped && !normalized.is_empty()).then_some((key.as_str(), normalized))
        })
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("configs always serialize");
        text.push('\n');
        text
    }
}

/// Case-folded, whitespace-collapsed form used for value comparisons.
pub fn normalize_value(value: &str) -> String {
    value
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// A disjoint slice of every value pool: value `v` belongs to partition
/// `hash(normalize(v)) mod count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub index: u32,
    pub count: u32,
}

impl Partition {
    pub fn owns(&self, value: &str) -> bool {
        self.count <= 1
            || stable_hash(&[normalize_value(value).as_bytes()]) % self.count as u64
                == self.index as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerateOptions {
    pub master_seed: u64,
    pub variant_index: u32,
    pub partition: Option<Partition>,
}

/// Stable per-(master seed, layout, variant) seed.
pub fn config_seed(master_seed: u64, layout_id: &str, variant_index: u32) -> u64 {
    stable_hash(&[
        &master_seed.to_le_bytes(),
        layout_id.as_bytes(),
        &variant_index.to_le_bytes(),
    ])
}

const MAX_DRAWS: usize = 4096;

fn draw<R: Rng>(
    rng: &mut R,
    partition: Option<Partition>,
    what: &str,
    mut gen: impl FnMut(&mut R) -> String,
) -> Result<String, ConfigError> {
    for _ in 0..MAX_DRAWS {
        let v = gen(rng);
        if partition.is_none_or(|p| p.owns(&v)) {
            return Ok(v);
        }
    }
    Err(ConfigError::PartitionExhausted(what.to_string()))
}

fn pick<'a, R: Rng>(rng: &mut R, list: &[&'a str]) -> &'a str {
    list[rng.gen_range(0..list.len())]
}

struct Person {
    first: String,
    last: String,
}

impl Person {
    fn full(&self) -> String {
        format!("{} {}", self.first, self.last)
    }

    fn draw(rng: &mut SeededRng, partition: Option<Partition>) -> Result<Person, ConfigError> {
        Ok(Person {
            first: draw(rng, partition, "first name", |r| {
                pick(r, pools::FIRST_NAMES).to_string()
            })?,
            last: draw(rng, partition, "last name", |r| {
                pick(r, pools::LAST_NAMES).to_string()
            })?,
        })
    }
}

struct Identity {
    person: Person,
    email: String,
    phone: String,
    company: String,
    street: String,
    street2: String,
    city: &'static str,
    state: &'static str,
    state_code: &'static str,
    zip: String,
    card: String,
    expiry: String,
    cvv: String,
}

fn luhn_check_digit(payload: &[u32]) -> u32 {
    let sum: u32 = payload
        .iter()
        .rev()
        .enumerate()
        .map(|(i, &d)| {
            if i % 2 == 0 {
                let x = d * 2;
                if x > 9 {
                    x - 9
                } else {
                    x
                }
            } else {
                d
            }
        })
        .sum();
    (10 - sum % 10) % 10
}

/// 16-digit Luhn-valid card number grouped in fours.
pub fn synthetic_card<R: Rng>(rng: &mut R) -> String {
    let prefix = pick(rng, &["4", "51", "52", "53", "54", "55"]);
    let mut digits: Vec<u32> = prefix.chars().map(|c| c.to_digit(10).unwrap()).collect();
    while digits.len() < 15 {
        digits.push(rng.gen_range(0..10));
    }
    digits.push(luhn_check_digit(&digits));
    let text: String = digits
        .iter()
        .map(|d| char::from_digit(*d, 10).unwrap())
        .collect();
    text.as_bytes()
        .chunks(4)
        .map(|c| std::str::from_utf8(c).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

impl Identity {
    fn draw(rng: &mut SeededRng, partition: Option<Partition>) -> Result<Identity, ConfigError> {
        let person = Person::draw(rng, partition)?;
        let &(city, state, state_code, zip3) = {
            let mut chosen = None;
            for _ in 0..MAX_DRAWS {
                let loc = &pools::LOCATIONS[rng.gen_range(0..pools::LOCATIONS.len())];
                if partition.is_none_or(|p| p.owns(loc.1)) {
                    chosen = Some(loc);
                    break;
                }
            }
            chosen.ok_or_else(|| ConfigError::PartitionExhausted("location".into()))?
        };
        let zip = format!("{zip3}{:02}", rng.gen_range(0..100));
        let street = draw(rng, partition, "street", |r| {
            let mut s = format!(
                "{} {} {}",
                r.gen_range(1..10_000),
                pick(r, pools::STREET_NAMES),
                pick(r, pools::STREET_SUFFIXES)
            );
            if r.gen_bool(0.3) {
                s.push_str(&format!(" Suite {}", r.gen_range(100..1000)));
            }
            s
        })?;
        let street2 = draw(rng, partition, "street2", |r| {
            format!(
                "{} {}",
                pick(r, &["Apt", "Unit", "Suite"]),
                r.gen_range(1..2000)
            )
        })?;
        let email = draw(rng, partition, "email", |r| {
            format!(
                "{}.{}{}@{}",
                person.first.to_lowercase(),
                person.last.to_lowercase(),
                r.gen_range(1..100),
                pick(r, pools::EMAIL_DOMAINS)
            )
        })?;
        let phone = draw(rng, partition, "phone", |r| {
            format!(
                "({}) {}-{:04}",
                pick(r, pools::AREA_CODES),
                r.gen_range(200..1000),
                r.gen_range(0..10_000)
            )
        })?;
        let company = draw(rng, partition, "company", |r| {
            format!("{} {}", person.last, pick(r, pools::COMPANY_SUFFIXES))
        })?;
        let card = draw(rng, partition, "card", synthetic_card)?;
        let expiry = format!("{:02}/{:02}", rng.gen_range(1..13), rng.gen_range(26..32));
        let cvv = format!("{:03}", rng.gen_range(0..1000));
        Ok(Identity {
            person,
            email,
            phone,
            company,
            street,
            street2,
            city,
            state,
            state_code,
            zip,
            card,
            expiry,
            cvv,
        })
    }
}

/// `PRODUCT<n>_FIELD` or `REC<n>_FIELD`.
fn product_key(key: &str) -> Option<(bool, usize, &str)> {
    let (rec, rest) = if let Some(r) = key.strip_prefix("PRODUCT") {
        (false, r)
    } else {
        let r = key.strip_prefix("REC")?;
        (true, r)
    };
    let digits = rest.chars().take_while(|c| c.is_ascii_digit()).count();
    let n: usize = rest[..digits].parse().ok()?;
    let field = rest[digits..].strip_prefix('_')?;
    (n >= 1).then_some((rec, n, field))
}

fn default_id_format(key: &str) -> Option<&'static str> {
    match key {
        "ORDER_ID" => Some("###-#######-#######"),
        "ORDER_TRACKING" => Some("1Z**************"),
        "PII_SECURITY_CODE" => Some("####"),
        "PII_PO_NUMBER" => Some("PO-######"),
        _ => None,
    }
}

/// True when `generate_config` knows how to produce `key` under `spec`.
pub fn has_generator(key: &str, spec: &LayoutDataSpec) -> bool {
    if spec.id_formats.contains_key(key) || spec.extracted_constants.contains_key(key) {
        return true;
    }
    if default_id_format(key).is_some() {
        return true;
    }
    if let Some((rec, _, field)) = product_key(key) {
        return matches!(
            field,
            "NAME"
                | "DESCRIPTION"
                | "BRAND"
                | "CATEGORY"
                | "IMAGE"
                | "PRICE"
                | "RATING"
                | "REVIEWS"
        ) || (!rec && field == "QTY");
    }
    matches!(
        key,
        "PII_FULLNAME"
            | "PII_FIRSTNAME"
            | "PII_LASTNAME"
            | "PII_EMAIL"
            | "PII_PHONE"
            | "PII_COMPANY"
            | "PII_STREET"
            | "PII_STREET2"
            | "PII_CITY"
            | "PII_STATE"
            | "PII_STATE_CODE"
            | "PII_ZIP"
            | "PII_CITY_STATE_ZIP"
            | "PII_CARD_NUMBER"
            | "PII_CARD_LAST4"
            | "PII_CARD_EXPIRY"
            | "PII_CVV"
            | "PII_CARDHOLDER"
            | "PII_RECIPIENT_NAME"
            | "PII_GIFT_MESSAGE"
            | "PII_DELIVERY_INSTRUCTIONS"
            | "PII_STORE_LOCATION"
            | "ORDER_DATE"
            | "ORDER_DELIVERY_DATE"
            | SUBTOTAL_KEY
            | TAX_KEY
            | TOTAL_KEY
            | SHIPPING_KEY
            | TAX_RATE_KEY
    )
}

fn brand_key(record: &ProductRecord) -> &str {
    if record.brand.is_empty() {
        &record.title
    } else {
        &record.brand
    }
}

fn thousands(n: u32) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn short_item(title: &str) -> String {
    let head = title.split(',').next().unwrap_or(title);
    head.split_whitespace()
        .take(4)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Builds variant `variant_index` of the data configuration for one layout.
pub fn generate_config(
    layout_id: &str,
    spec: &LayoutDataSpec,
    catalog: &Catalog,
    opts: &GenerateOptions,
) -> Result<DataConfig, ConfigError> {
    spec.validate()?;
    let seed = config_seed(opts.master_seed, layout_id, opts.variant_index);
    let partition = opts.partition;
    let mut values: BTreeMap<String, Value> = BTreeMap::new();
    let mut provenance: BTreeMap<String, Provenance> = BTreeMap::new();

    for key in &spec.required_keys {
        if !has_generator(key, spec) {
            return Err(ConfigError::MissingGenerator(key.clone()));
        }
    }

    for (key, raw) in &spec.extracted_constants {
        let value = if key == TAX_RATE_KEY {
            Value::Text(raw.parse::<Rate>()?.percent_label())
        } else {
            Value::Money(raw.parse()?)
        };
        values.insert(key.clone(), value);
        provenance.insert(key.clone(), Provenance::Extracted);
    }

    let mut identity_rng = sub_rng(seed, "identity");
    let shopper = Identity::draw(&mut identity_rng, partition)?;
    let mut recipient_rng = sub_rng(seed, "recipient");
    let recipient = {
        let mut found = None;
        for _ in 0..64 {
            let candidate = Person::draw(&mut recipient_rng, partition)?;
            if candidate.full() != shopper.person.full() {
                found = Some(candidate);
                break;
            }
        }
        found.ok_or_else(|| ConfigError::PartitionExhausted("recipient".into()))?
    };

    let mut date_rng = sub_rng(seed, "dates");
    let epoch = NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date");
    let order_date = epoch + Days::new(date_rng.gen_range(0..2190));
    let delivery_date = order_date + Days::new(date_rng.gen_range(2..=10));

    // Products: PRODUCT<n> distinct uniform picks, REC<n> ranked by similarity to PRODUCT1.
    let mut product_slots = BTreeSet::new();
    let mut rec_slots = BTreeSet::new();
    for key in &spec.required_keys {
        if let Some((rec, n, _)) = product_key(key) {
            if rec {
                rec_slots.insert(n);
            } else {
                product_slots.insert(n);
            }
        }
    }
    if !rec_slots.is_empty() {
        product_slots.insert(1);
    }
    let eligible: Vec<&ProductRecord> = catalog
        .records()
        .iter()
        .filter(|r| partition.is_none_or(|p| p.owns(brand_key(r))))
        .collect();
    let mut products: BTreeMap<usize, &ProductRecord> = BTreeMap::new();
    let mut recs: BTreeMap<usize, &ProductRecord> = BTreeMap::new();
    if !product_slots.is_empty() {
        let max_slot = *product_slots.iter().max().unwrap();
        if eligible.len() < max_slot {
            return Err(crate::catalog::CatalogError::NoEligibleProduct(None).into());
        }
        let mut product_rng = sub_rng(seed, "products");
        let picks = sample_indices(&mut product_rng, eligible.len(), max_slot);
        for (slot, idx) in (1..=max_slot).zip(picks) {
            products.insert(slot, eligible[idx]);
        }
        if let Some(max_rec) = rec_slots.iter().max().copied() {
            let anchor = products[&1];
            let taken: BTreeSet<&str> = products.values().map(|r| r.id.as_str()).collect();
            let ranked: Vec<&ProductRecord> = catalog
                .similar(anchor, catalog.len())
                .into_iter()
                .filter(|r| {
                    !taken.contains(r.id.as_str()) && partition.is_none_or(|p| p.owns(brand_key(r)))
                })
                .take(max_rec)
                .collect();
            if ranked.len() < max_rec {
                return Err(crate::catalog::CatalogError::NoEligibleProduct(None).into());
            }
            for (slot, record) in (1..=max_rec).zip(ranked) {
                recs.insert(slot, record);
            }
        }
        // Every shown product contributes a cart line to the derived totals.
        for &slot in &product_slots {
            for field in ["PRICE", "QTY"] {
                let key = format!("PRODUCT{slot}_{field}");
                if !spec.required_keys.contains(&key) {
                    let (v, p) = product_value(catalog, seed, false, slot, field, products[&slot])?;
                    values.insert(key.clone(), v);
                    provenance.insert(key, p);
                }
            }
        }
    }

    let mut extras_rng = sub_rng(seed, "extras");
    let item_name = products
        .get(&1)
        .map(|r| short_item(&r.title))
        .unwrap_or_else(|| "gift".to_string());

    for key in &spec.required_keys {
        if values.contains_key(key) && provenance.get(key) == Some(&Provenance::Extracted) {
            continue;
        }
        let (value, source) = if let Some((rec, n, field)) = product_key(key) {
            let record = if rec { recs[&n] } else { products[&n] };
            product_value(catalog, seed, rec, n, field, record)?
        } else if let Some(template) = spec.id_formats.get(key).cloned().or_else(|| {
            default_id_format(key)
                .map(|p| IdFormatTemplate::new(p).expect("built-in patterns are valid"))
        }) {
            let mut attempt = 0u64;
            let value = loop {
                let candidate =
                    format_id(&template, derive_seed(seed, &format!("id:{key}:{attempt}")));
                if partition.is_none_or(|p| p.owns(&candidate)) {
                    break candidate;
                }
                attempt += 1;
                if attempt as usize >= MAX_DRAWS {
                    return Err(ConfigError::PartitionExhausted(key.clone()));
                }
            };
            (Value::Text(value), Provenance::Derived)
        } else {
            let pii = |s: String| (Value::Text(s), Provenance::SyntheticPii);
            match key.as_str() {
                "PII_FULLNAME" | "PII_CARDHOLDER" => pii(shopper.person.full()),
                "PII_FIRSTNAME" => pii(shopper.person.first.clone()),
                "PII_LASTNAME" => pii(shopper.person.last.clone()),
                "PII_EMAIL" => pii(shopper.email.clone()),
                "PII_PHONE" => pii(shopper.phone.clone()),
                "PII_COMPANY" => pii(shopper.company.clone()),
                "PII_STREET" => pii(shopper.street.clone()),
                "PII_STREET2" => pii(shopper.street2.clone()),
                "PII_CITY" => pii(shopper.city.to_string()),
                "PII_STATE" => pii(shopper.state.to_string()),
                "PII_STATE_CODE" => pii(shopper.state_code.to_string()),
                "PII_ZIP" => pii(shopper.zip.clone()),
                "PII_CITY_STATE_ZIP" => pii(format!(
                    "{}, {} {}",
                    shopper.city, shopper.state_code, shopper.zip
                )),
                "PII_CARD_NUMBER" => pii(shopper.card.clone()),
                "PII_CARD_LAST4" => pii(shopper.card[shopper.card.len() - 4..].to_string()),
                "PII_CARD_EXPIRY" => pii(shopper.expiry.clone()),
                "PII_CVV" => pii(shopper.cvv.clone()),
                "PII_RECIPIENT_NAME" => pii(recipient.full()),
                "PII_GIFT_MESSAGE" => pii(pick(&mut extras_rng, pools::GIFT_MESSAGES)
                    .replace("{recipient}", &recipient.first)
                    .replace("{sender}", &shopper.person.first)
                    .replace("{item}", &item_name)),
                "PII_DELIVERY_INSTRUCTIONS" => {
                    let text = draw(&mut extras_rng, partition, key, |r| {
                        pick(r, pools::DELIVERY_INSTRUCTIONS)
                            .replace("{code}", &format!("{:04}", r.gen_range(0..10_000)))
                    })?;
                    pii(text)
                }
                "PII_STORE_LOCATION" => pii(format!(
                    "{} Store #{}",
                    shopper.city,
                    extras_rng.gen_range(100..1000)
                )),
                "ORDER_DATE" => (Value::Date(order_date), Provenance::SyntheticPii),
                "ORDER_DELIVERY_DATE" => (Value::Date(delivery_date), Provenance::SyntheticPii),
                SUBTOTAL_KEY | TAX_KEY | TOTAL_KEY => (Value::Money(Cents(0)), Provenance::Derived),
                SHIPPING_KEY => (Value::Money(spec.shipping_cost()?), Provenance::Extracted),
                TAX_RATE_KEY => (
                    Value::Text(spec.tax_rate()?.percent_label()),
                    Provenance::Extracted,
                ),
                other => return Err(ConfigError::MissingGenerator(other.to_string())),
            }
        };
        values.insert(key.clone(), value);
        provenance.insert(key.clone(), source);
    }

    let mut values = derive_values(&values, spec)?;
    money::derived_provenance(&mut provenance);
    if !spec.extracted_constants.contains_key(SHIPPING_KEY) && !values.contains_key(SHIPPING_KEY) {
        values.insert(SHIPPING_KEY.into(), Value::Money(Cents(0)));
        provenance.insert(SHIPPING_KEY.into(), Provenance::Extracted);
    }

    let mut optional_rng = sub_rng(seed, "optional");
    let included_optional_fields = spec
        .optional_fields
        .iter()
        .filter(|(_, &p)| optional_rng.gen_bool(p))
        .map(|(id, _)| id.clone())
        .collect();

    Ok(DataConfig {
        layout_id: layout_id.to_string(),
        variant_index: opts.variant_index,
        seed,
        values,
        included_optional_fields,
        provenance,
    })
}

fn product_value(
    catalog: &Catalog,
    seed: u64,
    rec: bool,
    slot: usize,
    field: &str,
    record: &ProductRecord,
) -> Result<(Value, Provenance), ConfigError> {
    let family = if rec { "rec" } else { "product" };
    let mut rng = sub_rng(seed, &format!("{family}-attrs:{slot}:{field}"));
    let out = match field {
        "NAME" => (Value::Text(record.title.clone()), Provenance::Catalog),
        "DESCRIPTION" => (Value::Text(record.description.clone()), Provenance::Catalog),
        "CATEGORY" => (Value::Text(record.category.clone()), Provenance::Catalog),
        "BRAND" => (Value::Text(record.brand.clone()), Provenance::Extracted),
        "IMAGE" => (
            Value::ImageRef(
                catalog
                    .relative_image(record)
                    .map(|p| p.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            ),
            Provenance::Catalog,
        ),
        "PRICE" => (
            Value::Money(Cents(rng.gen_range(100..=19_999))),
            Provenance::Randomized,
        ),
        "QTY" => (
            Value::Text(rng.gen_range(1..=3u32).to_string()),
            Provenance::Randomized,
        ),
        "RATING" => {
            let tenths = rng.gen_range(30..=50u32);
            (
                Value::Text(format!("{}.{}", tenths / 10, tenths % 10)),
                Provenance::Randomized,
            )
        }
        "REVIEWS" => (
            Value::Text(thousands(rng.gen_range(1..=50_000))),
            Provenance::Randomized,
        ),
        other => {
            return Err(ConfigError::MissingGenerator(format!(
                "{family}{slot}_{other}"
            )))
        }
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(keys: &[&str]) -> LayoutDataSpec {
        LayoutDataSpec {
            required_keys: keys.iter().map(|k| k.to_string()).collect(),
            ..Default::default()
        }
    }

    fn opts(seed: u64, variant: u32) -> GenerateOptions {
        GenerateOptions {
            master_seed: seed,
            variant_index: variant,
            partition: None,
        }
    }

    #[test]
    fn faker_shaped_values() {
        let s = spec(&[
            "PII_FULLNAME",
            "PII_STREET",
            "ORDER_DATE",
            "ORDER_DELIVERY_DATE",
        ]);
        let cfg = generate_config("L", &s, &Catalog::default(), &opts(42, 0)).unwrap();
        let name = cfg.display("PII_FULLNAME").unwrap();
        assert_eq!(name.split(' ').count(), 2);
        let street = cfg.display("PII_STREET").unwrap();
        assert!(
            regex::Regex::new(r"^\d{1,4} [A-Z][a-z]+ [A-Z][a-z]+( Suite \d{3})?$")
                .unwrap()
                .is_match(&street)
        );
        let date = cfg.display("ORDER_DATE").unwrap();
        assert!(regex::Regex::new(r"^[A-Z][a-z]+ \d{1,2}, \d{4}$")
            .unwrap()
            .is_match(&date));
        let order = cfg.get("ORDER_DATE").unwrap().as_date().unwrap();
        let delivery = cfg.get("ORDER_DELIVERY_DATE").unwrap().as_date().unwrap();
        assert!(delivery > order);
    }

    #[test]
    fn same_inputs_same_bytes() {
        let s = spec(&["PII_FULLNAME", "PII_CARD_NUMBER", "ORDER_ID"]);
        let a = generate_config("L", &s, &Catalog::default(), &opts(7, 3)).unwrap();
        let b = generate_config("L", &s, &Catalog::default(), &opts(7, 3)).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let c = generate_config("L", &s, &Catalog::default(), &opts(7, 4)).unwrap();
        assert_ne!(a.seed, c.seed);
    }

    #[test]
    fn unknown_key_has_no_generator() {
        let s = spec(&["PII_FAVORITE_COLOR"]);
        assert!(matches!(
            generate_config("L", &s, &Catalog::default(), &opts(1, 0)),
            Err(ConfigError::MissingGenerator(k)) if k == "PII_FAVORITE_COLOR"
        ));
    }

    #[test]
    fn cards_are_luhn_valid() {
        let mut rng = sub_rng(5, "cards");
        for _ in 0..200 {
            let card: Vec<u32> = synthetic_card(&mut rng)
                .chars()
                .filter_map(|c| c.to_digit(10))
                .collect();
            assert_eq!(luhn_check_digit(&card[..15]), card[15]);
        }
    }

    #[test]
    fn partitions_are_disjoint_for_scoped_values() {
        let s = spec(&[
            "PII_FULLNAME",
            "PII_STREET",
            "PII_CITY",
            "ORDER_ID",
            "PII_EMAIL",
        ]);
        let mut seen: [BTreeSet<String>; 2] = Default::default();
        for index in 0..2u32 {
            for v in 0..40 {
                let cfg = generate_config(
                    &format!("L{v}"),
                    &s,
                    &Catalog::default(),
                    &GenerateOptions {
                        master_seed: 9,
                        variant_index: v,
                        partition: Some(Partition { index, count: 2 }),
                    },
                )
                .unwrap();
                for (_, value) in cfg.leak_scoped_values() {
                    seen[index as usize].insert(value);
                }
            }
        }
        assert!(seen[0].is_disjoint(&seen[1]));
    }

    #[test]
    fn spec_rejects_high_tax() {
        let mut s = LayoutDataSpec::default();
        s.extracted_constants
            .insert(TAX_RATE_KEY.into(), "0.30".into());
        assert!(s.validate().is_err());
        s.extracted_constants
            .insert(TAX_RATE_KEY.into(), "0.25".into());
        assert!(s.validate().is_ok());
        s.extracted_constants
            .insert(SHIPPING_KEY.into(), "-1".into());
        assert!(matches!(s.validate(), Err(ConfigError::NegativeAmount(_))));
    }

    #[test]
    fn optional_inclusion_near_half() {
        let mut s = LayoutDataSpec::default();
        s.optional_fields.insert("gift".into(), 0.5);
        let n = 10_000u32;
        let included = (0..n)
            .filter(|&v| {
                generate_config("L", &s, &Catalog::default(), &opts(11, v))
                    .unwrap()
                    .included_optional_fields
                    .contains("gift")
            })
            .count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!(
            (included - n as f64 / 2.0).abs() <= 3.0 * sigma,
            "{included}"
        );
    }
}
