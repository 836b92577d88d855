//! Scores a handful of detections against ground truth and walks through the
//! 101-point average precision.

use screenforge::dataset::{ClassMap, ClassMode};
use screenforge::eval::{average_precision, evaluate, iou, Detection};
use screenforge::model::{Annotation, AnnotationClass, FineLabel, Visibility};
use screenforge::{AnnotatedSample, BBox, Dims, FillTag};

fn gt(label: FineLabel, bbox: BBox) -> Annotation {
    Annotation {
        bbox,
        cls: AnnotationClass::of(label),
        source_key: label.as_str().to_uppercase(),
        line_index: 0,
        visibility: Visibility::Full,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sample = AnnotatedSample {
        image_ref: "renders/demo.png".into(),
        layout_id: "demo".into(),
        variant_index: 0,
        config_seed: 1,
        fill_state: FillTag::Full,
        annotations: vec![
            gt(FineLabel::Name, BBox::new(40, 40, 200, 20)),
            gt(FineLabel::Address, BBox::new(40, 80, 320, 20)),
            gt(FineLabel::Contact, BBox::new(40, 120, 180, 20)),
        ],
        image_dims: Dims::new(800, 600),
    };
    let map = ClassMap::new(ClassMode::Fine);
    let det = |label: FineLabel, bbox: BBox, confidence: f64| Detection {
        sample_id: sample.id(),
        class: map.name(label).into(),
        bbox,
        confidence,
    };
    let dets = vec![
        det(FineLabel::Name, BBox::new(42, 41, 196, 20), 0.95),
        det(FineLabel::Address, BBox::new(40, 80, 150, 20), 0.80),
        det(FineLabel::Contact, BBox::new(44, 118, 180, 22), 0.60),
        det(FineLabel::Contact, BBox::new(500, 300, 80, 20), 0.30),
    ];
    for d in &dets {
        let best = sample
            .annotations
            .iter()
            .map(|a| iou(d.bbox, a.bbox))
            .fold(0.0, f64::max);
        println!(
            "{:<10} conf {:.2} best IoU {best:.3}",
            d.class, d.confidence
        );
    }
    let report = evaluate(&dets, std::slice::from_ref(&sample), map, 0.25)?;
    println!(
        "mAP@50 {:.4}  precision {:.3}  recall {:.3}",
        report.map50, report.precision, report.recall
    );

    let curve = [
        (0.9, true),
        (0.8, true),
        (0.7, false),
        (0.6, true),
        (0.5, true),
    ];
    println!(
        "hand-built curve AP {:.6} (= 91/101)",
        average_precision(&curve, 4)
    );
    Ok(())
}
