//! Plans the progressive fill states for a checkout form and reads back what
//! each instantiated document shows.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use screenforge::catalog::Catalog;
use screenforge::config::{generate_config, GenerateOptions};
use screenforge::fill::{plan_states, Density, FillState};
use screenforge::template::{instantiate, load_template, read_form};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let assets = fixtures.join("catalog");
    let catalog = Catalog::load(&assets.join("products.ndjson"), &assets)?;
    let layout = load_template(&fixtures.join("layouts/northwind_checkout"))?;
    let opts = GenerateOptions {
        master_seed: 7,
        variant_index: 0,
        partition: None,
    };
    let config = generate_config(&layout.layout_id, &layout.data_spec, &catalog, &opts)?;
    let slots = layout.fill_slots(&config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let plan = plan_states(slots.len(), Density::All, &mut rng)?;
    println!("{} fields -> {} states", slots.len(), plan.len());
    for tag in &plan.states {
        let state = FillState::resolve(*tag, &slots, &mut rng)?;
        let form = read_form(&instantiate(&layout, &config, &state, &assets)?)?;
        let shown: Vec<String> = slots
            .iter()
            .map(|s| format!("{}={:?}", s.field_id, form[&s.field_id].shown))
            .collect();
        println!("{tag:<10} {}", shown.join(" "));
    }
    Ok(())
}
