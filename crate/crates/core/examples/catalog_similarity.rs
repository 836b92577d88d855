//! Loads the fixture product corpus and lists each product's nearest neighbours.

use std::path::Path;

use screenforge::catalog::{token_cosine, Catalog};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/catalog");
    let catalog = Catalog::load(&fixtures.join("products.ndjson"), &fixtures)?;
    println!(
        "{} products, {} distinct tokens",
        catalog.len(),
        catalog.vocabulary_len()
    );
    for record in catalog.records().iter().take(4) {
        println!("\n{} [{}] {}", record.id, record.brand, record.title);
        for other in catalog.similar(record, 3) {
            println!("  {:.3}  {}", token_cosine(record, other), other.title);
        }
    }
    Ok(())
}
