//! End-to-end acceptance run. Prints one `PASS`/`FAIL` line per criterion and
//! fails if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use screenforge::baseline::{run_baseline, write_ocr, OcrWord, Rule};
use screenforge::config::{
    derive_values, LayoutDataSpec, Provenance, Value, SHIPPING_KEY, SUBTOTAL_KEY, TAX_KEY,
    TOTAL_KEY,
};
use screenforge::dataset::{
    check_leakage, import_coco, parse_yolo_label, split, validate_export, ClassMap, ClassMode,
    ExportFormat, LayoutInfo, Split, SplitStrategy, COCO_FILE,
};
use screenforge::eval::{average_precision, evaluate, oracle_detections, Detection};
use screenforge::fill::{grapheme_len, plan_states, Density};
use screenforge::geometry::finalize;
use screenforge::model::{AnnotatedSample, Annotation, AnnotationClass, FineLabel, Visibility};
use screenforge::pipeline::{simulated_ocr, Workspace};
use screenforge::render::offline::OfflineRenderer;
use screenforge::render::{RenderJob, Renderer, Viewport};
use screenforge::template::read_form;
use screenforge::{BBox, Dims, FillTag, SampleId};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const GOLDEN_SEED: u64 = 42;
const GOLDEN_VARIANTS: u32 = 5;
const TIME_LIMIT: Duration = Duration::from_secs(300);

struct Golden {
    ws: Workspace,
    elapsed: Duration,
}

fn golden(root: &Path) -> Golden {
    let start = Instant::now();
    let mut ws = common::workspace(root, GOLDEN_SEED, GOLDEN_VARIANTS);
    ws.split(&"cross-page:0.2".parse().unwrap()).unwrap();
    ws.gen_configs().unwrap();
    let summary = ws.render(common::offline).unwrap();
    assert!(
        summary.failed.is_empty() && summary.aborted.is_none(),
        "{:?}",
        summary.failed
    );
    ws.cfg.out_dir = root.join("out_coco");
    ws.export(ExportFormat::Coco, ClassMode::Fine, None, BTreeMap::new())
        .unwrap();
    ws.cfg.out_dir = root.join("out_yolo");
    ws.export(ExportFormat::Yolo, ClassMode::Fine, None, BTreeMap::new())
        .unwrap();
    Golden {
        ws,
        elapsed: start.elapsed(),
    }
}

fn determinism(a: &Golden, b: &Golden) -> Outcome {
    let ta = common::tree_bytes(&a.ws.cfg.work_dir);
    let tb = common::tree_bytes(&b.ws.cfg.work_dir);
    let names_a: BTreeSet<&String> = ta.keys().collect();
    let names_b: BTreeSet<&String> = tb.keys().collect();
    ensure!(
        names_a == names_b,
        "file sets differ: {:?}",
        names_a
            .symmetric_difference(&names_b)
            .take(5)
            .collect::<Vec<_>>()
    );
    let differing: Vec<&String> = ta
        .iter()
        .filter(|(k, v)| tb[*k] != **v)
        .map(|(k, _)| k)
        .collect();
    ensure!(
        differing.is_empty(),
        "{} files differ, first {:?}",
        differing.len(),
        differing.first()
    );
    let count = |pred: &dyn Fn(&str) -> bool| ta.keys().filter(|k| pred(k)).count();
    let configs = count(&|k| k.starts_with("configs/"));
    let records = count(&|k| k.starts_with("renders/") && k.ends_with(".json"));
    let exports = count(&|k| k.starts_with("out_"));
    let manifests = count(&|k| k.ends_with("manifest.json"));
    ensure!(
        configs > 0 && records > 0 && manifests == 2,
        "nothing to compare"
    );
    for g in [a, b] {
        ensure!(g.elapsed < TIME_LIMIT, "run took {:?}", g.elapsed);
    }
    Ok(format!(
        "{configs} configs, {records} records, {exports} export files, {manifests} manifests byte-identical; runs {:.1}s / {:.1}s",
        a.elapsed.as_secs_f64(),
        b.elapsed.as_secs_f64()
    ))
}

fn count_identity(g: &Golden) -> Outcome {
    let ws = &g.ws;
    let samples = ws.load_samples().map_err(|e| e.to_string())?;
    let mut per_variant: BTreeMap<(String, u32), usize> = BTreeMap::new();
    for item in &samples {
        *per_variant
            .entry((item.sample.layout_id.clone(), item.sample.variant_index))
            .or_default() += 1;
    }
    let mut total = 0;
    let mut field_counts = BTreeSet::new();
    for t in &ws.templates {
        let configs = ws.load_configs(&t.layout_id).map_err(|e| e.to_string())?;
        ensure!(
            configs.len() == GOLDEN_VARIANTS as usize,
            "{}: {} configs",
            t.layout_id,
            configs.len()
        );
        for config in &configs {
            let n = t.fill_slots(config).map_err(|e| e.to_string())?.len();
            field_counts.insert(n);
            let expected = if n == 0 { 1 } else { n + 1 };
            let (plan, states) = ws.fill_states(t, config).map_err(|e| e.to_string())?;
            ensure!(
                plan.len() == expected && states.len() == expected,
                "{} v{}: plan {} for N={n}",
                t.layout_id,
                config.variant_index,
                plan.len()
            );
            let emitted = per_variant
                .get(&(t.layout_id.clone(), config.variant_index))
                .copied()
                .unwrap_or(0);
            ensure!(
                emitted == expected,
                "{} v{}: {emitted} samples, expected {expected}",
                t.layout_id,
                config.variant_index
            );
            total += expected;
        }
    }
    let predicted = ws.expected_image_count().map_err(|e| e.to_string())?;
    ensure!(
        total == samples.len() && predicted == total,
        "sum {total}, emitted {}, predicted {predicted}",
        samples.len()
    );
    let seven = plan_states(7, Density::All, &mut ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| e.to_string())?;
    ensure!(seven.len() == 8, "N=7 gives {} states", seven.len());
    Ok(format!(
        "{total} images = sum of variants x states over N in {field_counts:?}; N=7 -> 8 states"
    ))
}

fn cents_of(text: &str) -> i128 {
    let (whole, frac) = text.split_once('.').unwrap_or((text, ""));
    let frac = format!("{frac:0<2}");
    whole.parse::<i128>().unwrap() * 100 + frac[..2].parse::<i128>().unwrap()
}

/// Rounds `num / den` half to even for non-negative operands.
fn half_even(num: i128, den: i128) -> i128 {
    let (q, r) = (num / den, num % den);
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
    }
}

fn derived_values() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mut mismatches = Vec::new();
    let mut ties = 0;
    for cart in 0..1000 {
        let rate_units: u32 = rng.gen_range(0..=2500);
        let rate_text = format!("0.{rate_units:04}");
        let ship_text = format!("{}.{:02}", rng.gen_range(0..50), rng.gen_range(0..100));
        let mut spec = LayoutDataSpec::default();
        spec.extracted_constants
            .insert("TAX_RATE".into(), rate_text.clone());
        spec.extracted_constants
            .insert(SHIPPING_KEY.into(), ship_text.clone());
        let mut values = BTreeMap::new();
        let mut subtotal: i128 = 0;
        for i in 1..=rng.gen_range(1..=6) {
            let price_text = format!("{}.{:02}", rng.gen_range(0..10_000), rng.gen_range(0..100));
            let qty: i128 = rng.gen_range(1..=9);
            values.insert(
                format!("PRODUCT{i}_PRICE"),
                Value::Money(price_text.parse().unwrap()),
            );
            values.insert(format!("PRODUCT{i}_QTY"), Value::Text(qty.to_string()));
            subtotal += cents_of(&price_text) * qty;
        }
        let rate_num: i128 = rate_text.replace('.', "").parse().unwrap();
        let rate_den: i128 = 10i128.pow(rate_text.split_once('.').unwrap().1.len() as u32);
        if (2 * (subtotal * rate_num % rate_den)) == rate_den {
            ties += 1;
        }
        let tax = half_even(subtotal * rate_num, rate_den);
        let total = subtotal + cents_of(&ship_text) + tax;
        let out = derive_values(&values, &spec).map_err(|e| e.to_string())?;
        let got = |k: &str| out.get(k).and_then(Value::as_money).map(|c| c.0 as i128);
        if got(SUBTOTAL_KEY) != Some(subtotal)
            || got(TAX_KEY) != Some(tax)
            || got(TOTAL_KEY) != Some(total)
        {
            mismatches.push(cart);
        }
        let residue = got(TOTAL_KEY).unwrap_or(0)
            - got(SUBTOTAL_KEY).unwrap_or(0)
            - cents_of(&ship_text)
            - got(TAX_KEY).unwrap_or(0);
        ensure!(residue == 0, "cart {cart}: residue {residue}");
    }
    ensure!(
        mismatches.is_empty(),
        "{} discrepancies, first cart {:?}",
        mismatches.len(),
        mismatches.first()
    );
    Ok(format!(
        "1000 carts, 0 discrepancies, {ties} exact half-cent ties"
    ))
}

fn edges(b: BBox) -> [f64; 4] {
    [b.x as f64, b.y as f64, b.right() as f64, b.bottom() as f64]
}

fn raw_edges(v: &serde_json::Value) -> [f64; 4] {
    let n: Vec<f64> = v
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    [n[0], n[1], n[0] + n[2], n[1] + n[3]]
}

fn within(a: [f64; 4], b: [f64; 4], tol: [f64; 4]) -> bool {
    a.iter()
        .zip(b)
        .zip(tol)
        .all(|((x, y), t)| (x - y).abs() <= t + 1e-9)
}

fn render_fixture(name: &str) -> Vec<Annotation> {
    let doc = std::fs::read_to_string(common::fixture("geometry").join(name)).unwrap();
    let job = RenderJob {
        sample_id: SampleId::new("geometry", 0, FillTag::Full),
        document: doc,
        viewport: Viewport {
            width: 800,
            height: 600,
        },
        full_page: true,
    };
    let out = OfflineRenderer::new().render(&job).unwrap();
    finalize(&out.raw_annotations, out.image_dims).unwrap()
}

fn geometry() -> Outcome {
    let expected: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(common::fixture("geometry/expected.json")).unwrap(),
    )
    .unwrap();
    let by_key = |anns: &[Annotation]| {
        let mut m: BTreeMap<String, Vec<BBox>> = BTreeMap::new();
        for a in anns {
            m.entry(a.source_key.clone()).or_default().push(a.bbox);
        }
        m
    };
    let px = [1.0; 4];

    let abs = by_key(&render_fixture("absolute.html"));
    let mut checked = 0;
    for (key, truth) in expected["absolute.html"].as_object().unwrap() {
        let got = abs
            .get(key)
            .ok_or_else(|| format!("absolute: {key} missing"))?;
        ensure!(
            got.len() == 1 && within(edges(got[0]), raw_edges(truth), px),
            "absolute: {key} {:?} vs {truth}",
            got
        );
        checked += 1;
    }

    let modal = by_key(&render_fixture("modal.html"));
    ensure!(
        !modal.contains_key("PII_STREET"),
        "modal-covered element present"
    );
    let on_top = modal
        .get("ORDER_TRACKING")
        .ok_or("dialog content missing")?;
    ensure!(
        within(
            edges(on_top[0]),
            raw_edges(&expected["modal.html"]["ORDER_TRACKING"]),
            px
        ),
        "dialog box {:?}",
        on_top
    );

    let overlay = render_fixture("overlay.html");
    ensure!(overlay.len() == 1, "overlay: {} boxes", overlay.len());
    let visible = raw_edges(&expected["overlay.html"]["PII_RECIPIENT_NAME"]);
    let element = [100.0, 100.0, 300.0, 150.0];
    let cell = [
        (element[2] - element[0]) / 3.0,
        (element[3] - element[1]) / 3.0,
    ];
    let tol = [cell[0], cell[1], cell[0], cell[1]];
    ensure!(
        overlay[0].visibility == Visibility::Clipped,
        "overlay not marked clipped"
    );
    ensure!(
        within(edges(overlay[0].bbox), visible, tol),
        "overlay {:?} vs visible {visible:?}",
        overlay[0].bbox
    );

    let wrap = by_key(&render_fixture("wrap.html"));
    let lines = &wrap["PII_STREET"];
    let truth = expected["wrap.html"]["PII_STREET"].as_array().unwrap();
    ensure!(lines.len() == 3, "wrapped value gave {} boxes", lines.len());
    for (got, want) in lines.iter().zip(truth) {
        ensure!(
            within(edges(*got), raw_edges(want), px),
            "wrap line {got:?} vs {want}"
        );
    }
    Ok(format!(
        "{checked} absolute boxes within 1px; modal target absent; overlay box {}x{} vs visible 100x50 (cell {:.1}px); 3 wrap lines",
        overlay[0].bbox.w, overlay[0].bbox.h, cell[0]
    ))
}

fn fill_readback(g: &Golden) -> Outcome {
    let ws = &g.ws;
    let mut checked = 0;
    let mut atomic_stages = 0;
    let mut violations = Vec::new();
    for item in ws.load_samples().map_err(|e| e.to_string())? {
        let s = &item.sample;
        let t = ws.template(&s.layout_id).ok_or("unknown layout")?;
        let configs = ws.load_configs(&s.layout_id).map_err(|e| e.to_string())?;
        let config = &configs[s.variant_index as usize];
        let slots = t.fill_slots(config).map_err(|e| e.to_string())?;
        let doc = std::fs::read_to_string(
            ws.sample_dir(&s.id())
                .join(format!("{}.html", s.fill_state)),
        )
        .map_err(|e| e.to_string())?;
        let form = read_form(&doc).map_err(|e| e.to_string())?;
        for (i, slot) in slots.iter().enumerate() {
            let order = i as u32 + 1;
            let shown = form
                .get(&slot.field_id)
                .map(|r| r.shown.as_str())
                .ok_or("field missing from document")?;
            let ok = match s.fill_state {
                FillTag::Empty => shown.is_empty(),
                FillTag::Full => shown == slot.value,
                FillTag::Partial(k) if order < k => shown == slot.value,
                FillTag::Partial(k) if order > k => shown.is_empty(),
                FillTag::Partial(_) if slot.atomic => {
                    atomic_stages += 1;
                    shown == slot.value
                }
                FillTag::Partial(_) => {
                    !shown.is_empty()
                        && slot.value.starts_with(shown)
                        && grapheme_len(shown) < grapheme_len(&slot.value)
                }
            };
            if !ok {
                violations.push(format!(
                    "{} {}: `{shown}` vs `{}`",
                    s.id(),
                    slot.field_id,
                    slot.value
                ));
            }
        }
        if matches!(s.fill_state, FillTag::Partial(_)) {
            checked += 1;
        }
    }
    ensure!(checked > 0, "no partial samples");
    ensure!(
        violations.is_empty(),
        "{} violations, first {}",
        violations.len(),
        violations[0]
    );
    Ok(format!("{checked} partial samples read back, 0 violations ({atomic_stages} stage fields were dropdowns/checkboxes, shown whole)"))
}

fn registry() -> Vec<LayoutInfo> {
    let types = ["cart", "checkout", "receipt", "product", "payment"];
    (0..408)
        .map(|i| LayoutInfo {
            layout_id: format!("stub_{i:03}"),
            brand: if i < 56 {
                "acme".into()
            } else {
                format!("brand{:02}", i % 13)
            },
            page_type: if (200..220).contains(&i) {
                "gifting".into()
            } else {
                types[i % types.len()].into()
            },
        })
        .collect()
}

fn splits(g: &Golden) -> Outcome {
    let reg = registry();
    let sizes: Vec<usize> = [
        SplitStrategy::CrossPage {
            fraction: 0.2,
            stratify_brand: false,
        },
        SplitStrategy::CrossCompany {
            brand: "acme".into(),
        },
        SplitStrategy::CrossType {
            page_type: "gifting".into(),
        },
    ]
    .iter()
    .map(|s| split(&reg, s, 42).map(|a| a.layouts(Split::Test).len()))
    .collect::<Result<_, _>>()
    .map_err(|e| e.to_string())?;
    ensure!(sizes == [82, 56, 20], "test sizes {sizes:?}");

    let ws = &g.ws;
    let assignment = ws
        .read_split()
        .map_err(|e| e.to_string())?
        .ok_or("no split")?;
    let mut configs = ws.all_configs().map_err(|e| e.to_string())?;
    let clean = check_leakage(&assignment, &configs);
    ensure!(clean.is_clean(), "seed-partitioned pools leak: {clean}");

    let train_id = assignment
        .layouts(Split::Train)
        .iter()
        .next()
        .ok_or("empty train")?
        .clone();
    let test_id = assignment
        .layouts(Split::Test)
        .iter()
        .next()
        .ok_or("empty test")?
        .clone();
    let (key, value) = configs[&train_id][0]
        .leak_scoped_values()
        .find(|(k, _)| k.starts_with("PII_"))
        .map(|(k, _)| (k.to_string(), configs[&train_id][0].values[k].clone()))
        .ok_or("no scoped value")?;
    let target = &mut configs.get_mut(&test_id).unwrap()[0];
    target.values.insert("PLANTED".into(), value);
    target
        .provenance
        .insert("PLANTED".into(), Provenance::SyntheticPii);
    let planted = check_leakage(&assignment, &configs);
    ensure!(
        planted.findings.len() == 1,
        "planted collision gave {} findings",
        planted.findings.len()
    );
    Ok(format!(
        "408 stubs -> test 82 / 56 / 20; fixture pools clean; planted {key} found once"
    ))
}

/// Intersection and union pixel counts by enumeration.
fn pixel_overlap(a: BBox, b: BBox) -> (u64, u64) {
    let mut inter = 0;
    for x in a.x..a.x + a.w {
        for y in a.y..a.y + a.h {
            if x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h {
                inter += 1;
            }
        }
    }
    (inter, a.area() + b.area() - inter)
}

struct Reference {
    map50: f64,
    precision: f64,
    recall: f64,
}

/// Exact rational AP over 101 recall points, as (numerator, denominator) of the precision sum.
fn reference_ap(scored: &[(f64, bool)], npos: u64) -> f64 {
    let mut ranked = scored.to_vec();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut cutoffs = Vec::new();
    let mut tp = 0u64;
    for (j, (_, hit)) in ranked.iter().enumerate() {
        tp += u64::from(*hit);
        cutoffs.push((tp, j as u64 + 1));
    }
    let mut sum = 0.0;
    for i in 0..=100u64 {
        let best = cutoffs
            .iter()
            .filter(|(tp, _)| tp * 100 >= i * npos)
            .map(|(tp, n)| *tp as f64 / *n as f64)
            .fold(0.0, f64::max);
        sum += best;
    }
    sum / 101.0
}

fn reference(
    samples: &[AnnotatedSample],
    dets: &[Detection],
    map: ClassMap,
    conf: f64,
) -> Reference {
    let mut scored: BTreeMap<String, Vec<(f64, bool)>> = BTreeMap::new();
    let mut npos: BTreeMap<String, u64> = BTreeMap::new();
    let (mut tp, mut fp, mut total) = (0u64, 0u64, 0u64);
    for s in samples {
        let gts: Vec<(String, BBox)> = s
            .annotations
            .iter()
            .map(|a| (map.name(a.cls.fine_label).to_string(), a.bbox))
            .collect();
        for (c, _) in &gts {
            *npos.entry(c.clone()).or_default() += 1;
            total += 1;
        }
        let mut mine: Vec<&Detection> = dets.iter().filter(|d| d.sample_id == s.id()).collect();
        mine.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        let mut taken = vec![false; gts.len()];
        for d in mine {
            let mut best: Option<(usize, u64, u64)> = None;
            for (g, (c, b)) in gts.iter().enumerate() {
                if taken[g] || *c != d.class {
                    continue;
                }
                let (inter, union) = pixel_overlap(d.bbox, *b);
                if 2 * inter < union {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((_, bi, bu)) => inter as u128 * bu as u128 > bi as u128 * union as u128,
                };
                if better {
                    best = Some((g, inter, union));
                }
            }
            let hit = best.is_some();
            if let Some((g, _, _)) = best {
                taken[g] = true;
            }
            scored
                .entry(d.class.clone())
                .or_default()
                .push((d.confidence, hit));
            if d.confidence >= conf {
                if hit {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
    }
    let aps: Vec<f64> = npos
        .iter()
        .map(|(c, n)| reference_ap(scored.get(c).map(Vec::as_slice).unwrap_or(&[]), *n))
        .collect();
    Reference {
        map50: if aps.is_empty() {
            0.0
        } else {
            aps.iter().sum::<f64>() / aps.len() as f64
        },
        precision: if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        },
        recall: if total == 0 {
            0.0
        } else {
            tp as f64 / total as f64
        },
    }
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<AnnotatedSample>, Vec<Detection>) {
    let labels = [FineLabel::Name, FineLabel::Address, FineLabel::Contact];
    let map = ClassMap::new(ClassMode::Fine);
    let images = rng.gen_range(1..=3);
    let n_gt = rng.gen_range(0..=10);
    let n_det = rng.gen_range(0..=10);
    let mut samples: Vec<AnnotatedSample> = (0..images)
        .map(|i| AnnotatedSample {
            image_ref: format!("renders/{i}.png"),
            layout_id: "oracle".into(),
            variant_index: i,
            config_seed: 0,
            fill_state: FillTag::Full,
            annotations: Vec::new(),
            image_dims: Dims::new(48, 48),
        })
        .collect();
    let rand_box = |rng: &mut ChaCha8Rng| {
        BBox::new(
            rng.gen_range(0..30),
            rng.gen_range(0..30),
            rng.gen_range(1..14),
            rng.gen_range(1..14),
        )
    };
    for j in 0..n_gt {
        let img = rng.gen_range(0..images) as usize;
        samples[img].annotations.push(Annotation {
            bbox: rand_box(rng),
            cls: AnnotationClass::of(labels[rng.gen_range(0..labels.len())]),
            source_key: format!("K{j}"),
            line_index: 0,
            visibility: Visibility::Full,
        });
    }
    let mut confidences: Vec<u32> = (1..=n_det as u32).collect();
    confidences.shuffle(rng);
    let mut dets = Vec::new();
    for conf in confidences {
        let img = rng.gen_range(0..images) as usize;
        let anns = &samples[img].annotations;
        let (class, bbox) = if !anns.is_empty() && rng.gen_bool(0.6) {
            let a = &anns[rng.gen_range(0..anns.len())];
            let j = |v: u32, rng: &mut ChaCha8Rng| v.saturating_add_signed(rng.gen_range(-2..=2));
            let b = BBox::new(
                j(a.bbox.x, rng),
                j(a.bbox.y, rng),
                j(a.bbox.w, rng).max(1),
                j(a.bbox.h, rng).max(1),
            );
            let label = if rng.gen_bool(0.85) {
                a.cls.fine_label
            } else {
                labels[rng.gen_range(0..labels.len())]
            };
            (map.name(label).to_string(), b)
        } else {
            (
                map.name(labels[rng.gen_range(0..labels.len())]).to_string(),
                rand_box(rng),
            )
        };
        dets.push(Detection {
            sample_id: samples[img].id(),
            class,
            bbox,
            confidence: f64::from(conf) / 11.0,
        });
    }
    (samples, dets)
}

fn metric_oracle() -> Outcome {
    let map = ClassMap::new(ClassMode::Fine);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let (samples, dets) = random_instance(&mut rng);
        let got = evaluate(&dets, &samples, map, 0.25).map_err(|e| e.to_string())?;
        let want = reference(&samples, &dets, map, 0.25);
        for (a, b) in [
            (got.map50, want.map50),
            (got.precision, want.precision),
            (got.recall, want.recall),
        ] {
            worst = worst.max((a - b).abs());
            ensure!((a - b).abs() <= 1e-9, "case {case}: {a} vs reference {b}");
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (samples, _) = loop {
        let inst = random_instance(&mut rng);
        if inst.0.iter().any(|s| !s.annotations.is_empty()) {
            break inst;
        }
    };
    let perfect = evaluate(&oracle_detections(&samples, map), &samples, map, 0.25)
        .map_err(|e| e.to_string())?;
    ensure!(
        perfect.map50 == 1.0 && perfect.precision == 1.0 && perfect.recall == 1.0,
        "perfect gave {perfect:?}"
    );
    let empty = evaluate(&[], &samples, map, 0.25).map_err(|e| e.to_string())?;
    ensure!(
        empty.map50 == 0.0 && empty.precision == 0.0 && empty.recall == 0.0,
        "empty gave {empty:?}"
    );

    let curve = [
        (0.9, true),
        (0.8, true),
        (0.7, false),
        (0.6, true),
        (0.5, true),
    ];
    // recall 0..0.5 at precision 1 (51 points), 0.51..1.0 at 4/5 (50 points)
    let enumerated = (51.0 + 50.0 * 0.8) / 101.0;
    let got = average_precision(&curve, 4);
    ensure!(
        (reference_ap(&curve, 4) - enumerated).abs() < 1e-12 && (got - 91.0 / 101.0).abs() < 1e-12,
        "hand-built AP {got}"
    );
    Ok(format!("100 random instances, max deviation {worst:.1e}; perfect 1.0; empty 0.0; hand-built curve 91/101"))
}

fn word(sample: &SampleId, text: &str, x: u32, y: u32) -> OcrWord {
    OcrWord {
        sample_id: sample.clone(),
        text: text.into(),
        bbox: BBox::new(x, y, 8 * text.chars().count() as u32, 16),
        confidence: 1.0,
    }
}

fn luhn_valid(digits: &str) -> bool {
    let sum: u32 = digits
        .chars()
        .rev()
        .filter_map(|c| c.to_digit(10))
        .enumerate()
        .map(|(i, d)| {
            if i % 2 == 1 {
                [0, 2, 4, 6, 8, 1, 3, 5, 7, 9][d as usize]
            } else {
                d
            }
        })
        .sum();
    sum.is_multiple_of(10)
}

fn baseline(g: &Golden) -> Outcome {
    ensure!(
        luhn_valid("4539148803436467") && !luhn_valid("4539148803436468"),
        "planted card numbers mislabeled"
    );
    let id = SampleId::new("planted", 0, FillTag::Full);
    let lines: [&[&str]; 7] = [
        &["Email:", "jane.doe@example.com"],
        &["Call", "(555)", "201-3344"],
        &["Card", "4539", "1488", "0343", "6467"],
        &["Old", "card", "4539", "1488", "0343", "6468"],
        &["Add", "to", "cart"],
        &["Price:"],
        &["Checkout"],
    ];
    let mut words = Vec::new();
    for (row, line) in lines.iter().enumerate() {
        let mut x = 10;
        for w in *line {
            words.push(word(&id, w, x, 10 + 30 * row as u32));
            x += 8 * (w.chars().count() as u32 + 1);
        }
    }
    let dets =
        run_baseline(&write_ocr(&words), &Rule::PATTERNS, None).map_err(|e| e.to_string())?;
    let covered = |w: &OcrWord| {
        dets.iter()
            .any(|d| screenforge::eval::iou(d.bbox, w.bbox) > 0.0 || contains(d.bbox, w.bbox))
    };
    let find = |text: &str, row: u32| {
        words
            .iter()
            .find(|w| w.text == text && w.bbox.y == 10 + 30 * row)
            .unwrap()
    };
    for (text, row) in [
        ("jane.doe@example.com", 0),
        ("(555)", 1),
        ("201-3344", 1),
        ("4539", 2),
        ("6467", 2),
    ] {
        ensure!(covered(find(text, row)), "planted `{text}` not flagged");
    }
    for (text, row) in [
        ("6468", 3),
        ("Add", 4),
        ("to", 4),
        ("cart", 4),
        ("Price:", 5),
        ("Checkout", 6),
        ("Email:", 0),
    ] {
        ensure!(!covered(find(text, row)), "`{text}` flagged");
    }

    let ws = &g.ws;
    let samples: Vec<AnnotatedSample> = ws
        .load_samples()
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|i| i.sample)
        .collect();
    let ocr = simulated_ocr(ws).map_err(|e| e.to_string())?;
    let fixture_dets =
        run_baseline(&write_ocr(&ocr), &Rule::PATTERNS, None).map_err(|e| e.to_string())?;
    let coarse = ClassMap::new(ClassMode::Coarse);
    let report = evaluate(&fixture_dets, &samples, coarse, 0.25).map_err(|e| e.to_string())?;
    let upper = evaluate(&oracle_detections(&samples, coarse), &samples, coarse, 0.25)
        .map_err(|e| e.to_string())?;
    ensure!(upper.map50 == 1.0, "upper bound {}", upper.map50);
    ensure!(
        report.map50.is_finite() && report.map50 < upper.map50,
        "baseline mAP {}",
        report.map50
    );
    Ok(format!(
        "planted email/phone/card flagged, 0 UI labels flagged; fixture mAP@50 {:.4} < 1.0 ({} detections)",
        report.map50,
        fixture_dets.len()
    ))
}

fn contains(outer: BBox, inner: BBox) -> bool {
    inner.x >= outer.x
        && inner.y >= outer.y
        && inner.right() <= outer.right()
        && inner.bottom() <= outer.bottom()
}

fn export_conformance(g: &Golden) -> Outcome {
    let ws = &g.ws;
    let root = &ws.cfg.work_dir;
    let assignment = ws
        .read_split()
        .map_err(|e| e.to_string())?
        .ok_or("no split")?;
    let samples: Vec<AnnotatedSample> = ws
        .load_samples()
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|i| i.sample)
        .collect();
    let map = ClassMap::new(ClassMode::Fine);

    let mut lines = 0;
    let mut worst = 0i64;
    for s in &samples {
        let split = assignment
            .split_of(&s.layout_id)
            .ok_or("unassigned layout")?;
        let path = root
            .join("out_yolo")
            .join(split.as_str())
            .join("labels")
            .join(format!("{}.txt", s.id().file_stem()));
        let text =
            std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let parsed = parse_yolo_label(&text, s.image_dims)?;
        ensure!(
            parsed.len() == s.annotations.len(),
            "{}: {} lines for {} boxes",
            s.id(),
            parsed.len(),
            s.annotations.len()
        );
        for ((class, b), a) in parsed.iter().zip(&s.annotations) {
            ensure!(
                *class == map.index(a.cls.fine_label),
                "{}: class {class}",
                s.id()
            );
            for (x, y) in [
                (b.x, a.bbox.x),
                (b.y, a.bbox.y),
                (b.w, a.bbox.w),
                (b.h, a.bbox.h),
            ] {
                worst = worst.max((x as i64 - y as i64).abs());
            }
            lines += 1;
        }
        ensure!(
            text.lines().all(|l| l
                .split_whitespace()
                .skip(1)
                .all(|n| n.split_once('.').is_some_and(|(_, f)| f.len() == 6))),
            "not 6 decimals"
        );
    }
    ensure!(worst <= 1, "YOLO reparse off by {worst}px");

    let mut imported = Vec::new();
    for split in [Split::Train, Split::Test] {
        imported.extend(
            import_coco(&root.join("out_coco").join(split.as_str()).join(COCO_FILE))
                .map_err(|e| e.to_string())?,
        );
    }
    let key = |s: &AnnotatedSample| s.id();
    let mut expected = samples.clone();
    expected.sort_by_key(key);
    imported.sort_by_key(key);
    ensure!(
        imported.len() == expected.len(),
        "{} imported vs {}",
        imported.len(),
        expected.len()
    );
    for (a, b) in imported.iter().zip(&expected) {
        let mut a = a.clone();
        a.image_ref = b.image_ref.clone();
        ensure!(a == *b, "COCO round trip changed {}", b.id());
    }

    let mut problems = 0;
    let mut images = 0;
    for dir in ["out_coco", "out_yolo"] {
        let check = validate_export(&root.join(dir)).map_err(|e| e.to_string())?;
        problems += check.problems.len();
        images += check.images;
    }
    ensure!(problems == 0, "{problems} validation problems");
    Ok(format!("{lines} YOLO lines reparse within {worst}px; {} samples COCO-lossless; {images} exported images validate", expected.len()))
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        Err(e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    match &outcome {
        Ok(detail) => println!("PASS  {name}: {detail}"),
        Err(detail) => println!("FAIL  {name}: {detail}"),
    }
    outcome.is_ok()
}

fn main() {
    let a_dir = tempfile::tempdir().unwrap();
    let b_dir = tempfile::tempdir().unwrap();
    let a = golden(a_dir.path());
    let b = golden(b_dir.path());

    let results = [
        run("determinism golden run", || determinism(&a, &b)),
        run("count identity", || count_identity(&a)),
        run("derived-value exactness", derived_values),
        run("extraction geometry", geometry),
        run("fill-state readback", || fill_readback(&a)),
        run("split exactness and leakage", || splits(&a)),
        run("metric oracle equivalence", metric_oracle),
        run("baseline sanity", || baseline(&a)),
        run("export format conformance", || export_conformance(&a)),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!(
        "{} of {} criteria pass",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
