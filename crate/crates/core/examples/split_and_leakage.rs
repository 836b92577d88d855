//! Splits a registry of layouts three ways, then shows a leakage finding
//! caused by a value shared across the split.

use std::collections::BTreeMap;

use screenforge::config::{DataConfig, Provenance, Value};
use screenforge::dataset::{check_leakage, split, LayoutInfo, Split, SplitStrategy};

fn layout(i: usize) -> LayoutInfo {
    LayoutInfo {
        layout_id: format!("layout_{i:02}"),
        brand: ["acme", "globex", "initech"][i % 3].into(),
        page_type: ["cart", "checkout", "receipt", "gifting"][i % 4].into(),
    }
}

fn config(layout_id: &str, email: &str) -> DataConfig {
    DataConfig {
        layout_id: layout_id.into(),
        variant_index: 0,
        seed: 0,
        values: BTreeMap::from([("PII_EMAIL".into(), Value::Text(email.into()))]),
        provenance: BTreeMap::from([("PII_EMAIL".into(), Provenance::SyntheticPii)]),
        included_optional_fields: Default::default(),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let registry: Vec<LayoutInfo> = (0..24).map(layout).collect();
    for strategy in [
        "cross-page:0.25",
        "cross-company:acme",
        "cross-type:gifting",
    ] {
        let s: SplitStrategy = strategy.parse()?;
        let a = split(&registry, &s, 42)?;
        println!(
            "{strategy:<20} train {:>2}  test {:>2}",
            a.layouts(Split::Train).len(),
            a.layouts(Split::Test).len()
        );
    }

    let a = split(&registry, &"cross-page:0.25".parse()?, 42)?;
    let train = a.layouts(Split::Train).iter().next().unwrap();
    let test = a.layouts(Split::Test).iter().next().unwrap();
    let mut configs = BTreeMap::new();
    configs.insert(train.clone(), vec![config(train, "kim.ortega@example.net")]);
    configs.insert(test.clone(), vec![config(test, "Kim.Ortega@example.net ")]);
    println!("\n{}", check_leakage(&a, &configs));
    Ok(())
}
