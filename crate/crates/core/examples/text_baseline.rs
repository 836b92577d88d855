//! Runs the pattern-rule text baseline over a few OCR lines.

use screenforge::baseline::{run_baseline, write_ocr, OcrWord, Rule};
use screenforge::{BBox, FillTag, SampleId};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let id = SampleId::new("demo", 0, FillTag::Full);
    let lines = [
        "Ship to Maria Gonzalez",
        "Email: maria.g@example.com",
        "Phone (555) 201-3344",
        "Card 4539 1488 0343 6467",
        "Add to cart   Price: $19.99",
    ];
    let mut words = Vec::new();
    for (row, line) in lines.iter().enumerate() {
        let mut x = 20;
        for text in line.split_whitespace() {
            let w = 9 * text.chars().count() as u32;
            words.push(OcrWord {
                sample_id: id.clone(),
                text: text.into(),
                bbox: BBox::new(x, 20 + 28 * row as u32, w, 18),
                confidence: 0.97,
            });
            x += w + 9;
        }
    }
    for d in run_baseline(&write_ocr(&words), &Rule::PATTERNS, None)? {
        println!("{:<10} {:?}", d.class, d.bbox);
    }
    Ok(())
}
