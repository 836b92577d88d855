//! Generates a few seeded data configurations for one layout and shows the
//! derived order totals.

use std::path::Path;

use screenforge::catalog::Catalog;
use screenforge::config::{generate_config, GenerateOptions};
use screenforge::template::load_template;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let catalog = Catalog::load(
        &fixtures.join("catalog/products.ndjson"),
        &fixtures.join("catalog"),
    )?;
    let layout = load_template(&fixtures.join("layouts/northwind_checkout"))?;
    for variant_index in 0..3 {
        let opts = GenerateOptions {
            master_seed: 42,
            variant_index,
            partition: None,
        };
        let config = generate_config(&layout.layout_id, &layout.data_spec, &catalog, &opts)?;
        println!("variant {variant_index} (seed {:#018x})", config.seed);
        for (key, value) in &config.values {
            println!("  {key:<24} {}", value.display());
        }
        println!(
            "  derived totals fresh: {}",
            config.derived_fresh(&layout.data_spec)
        );
    }
    Ok(())
}
