mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use screenforge::baseline::luhn_valid;
use screenforge::catalog::{token_cosine, Catalog, ProductRecord};
use screenforge::config::{
    generate_config, GenerateOptions, Value, SHIPPING_KEY, SUBTOTAL_KEY, TAX_KEY, TOTAL_KEY,
};
use screenforge::dataset::{split, LayoutInfo, Split, SplitStrategy};
use screenforge::dataset::{ClassMap, ClassMode};
use screenforge::eval::{average_precision, evaluate, iou, match_boxes, Detection, GtBox};
use screenforge::fill::{
    grapheme_len, plan_states, state_count, Density, FieldFill, FieldSlot, FillState,
};
use screenforge::geometry::{
    clip_box, finalize, to_payload, ClipRegion, RawPayload, RawRecord, RawRect, RawVisibility,
};
use screenforge::model::{
    validate_sample, AnnotatedSample, AnnotationClass, FineLabel, Visibility,
};
use screenforge::pipeline::plan_fill_states;
use screenforge::review::{read_ledger, Decision, Ledger};
use screenforge::template::{instantiate, load_all, read_form, LayoutTemplate};
use screenforge::{BBox, Dims, FillTag, SampleId};

fn templates() -> &'static Vec<LayoutTemplate> {
    static T: OnceLock<Vec<LayoutTemplate>> = OnceLock::new();
    T.get_or_init(|| load_all(&common::fixture("layouts")).unwrap())
}

fn catalog() -> &'static Catalog {
    static C: OnceLock<Catalog> = OnceLock::new();
    C.get_or_init(common::catalog)
}

fn opts(master_seed: u64, variant_index: u32) -> GenerateOptions {
    GenerateOptions {
        master_seed,
        variant_index,
        partition: None,
    }
}

fn money(values: &BTreeMap<String, Value>, key: &str) -> i64 {
    values
        .get(key)
        .and_then(Value::as_money)
        .map(|c| c.0)
        .unwrap_or(0)
}

fn arb_rect() -> impl Strategy<Value = RawRect> {
    (
        -40.0..460.0f64,
        -40.0..360.0f64,
        0.0..200.0f64,
        0.0..60.0f64,
    )
        .prop_map(|(x, y, w, h)| RawRect::new(x, y, w, h))
}

fn arb_record() -> impl Strategy<Value = RawRecord> {
    let vis = prop_oneof![
        3 => Just(None),
        1 => Just(Some(RawVisibility::Occluded)),
        1 => arb_rect().prop_map(|rect| Some(RawVisibility::Clipped { rect })),
    ];
    (
        0usize..FineLabel::ALL.len(),
        "[A-Z]{1,6}",
        proptest::collection::vec(arb_rect(), 1..4),
        vis,
    )
        .prop_map(|(l, key, rects, vis)| {
            let cls = AnnotationClass::of(FineLabel::ALL[l]);
            RawRecord {
                source_key: key,
                family: cls.kind,
                label: cls.fine_label,
                element_kind: cls.element_kind,
                rects,
                visibility: vis.unwrap_or(RawVisibility::Full),
                error: None,
            }
        })
}

fn sample_of(annotations: Vec<screenforge::Annotation>, dims: Dims) -> AnnotatedSample {
    AnnotatedSample {
        image_ref: "renders/p.png".into(),
        layout_id: "p".into(),
        variant_index: 0,
        config_seed: 1,
        fill_state: FillTag::Full,
        annotations,
        image_dims: dims,
    }
}

fn contains(outer: BBox, inner: BBox) -> bool {
    inner.x >= outer.x
        && inner.y >= outer.y
        && inner.right() <= outer.right()
        && inner.bottom() <= outer.bottom()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn finalized_payloads_validate(records in proptest::collection::vec(arb_record(), 0..10), w in 1u32..420, h in 1u32..320) {
        let dims = Dims::new(w, h);
        let anns = finalize(&RawPayload::new(records), dims).unwrap();
        prop_assert_eq!(validate_sample(&sample_of(anns, dims)), vec![]);
    }

    #[test]
    fn finalize_is_idempotent_on_its_geometry(records in proptest::collection::vec(arb_record(), 0..10)) {
        let dims = Dims::new(400, 300);
        let once = finalize(&RawPayload::new(records), dims).unwrap();
        let twice = finalize(&to_payload(&once), dims).unwrap();
        let geometry = |a: &[screenforge::Annotation]| {
            a.iter().map(|a| (a.bbox, a.cls, a.source_key.clone(), a.line_index)).collect::<BTreeSet<_>>()
        };
        prop_assert_eq!(geometry(&once), geometry(&twice));
    }

    #[test]
    fn shrinking_clip_never_grows_boxes(
        (bx, by, bw, bh) in (0u32..300, 0u32..300, 1u32..200, 1u32..200),
        (cx, cy, cw, ch) in (0u32..300, 0u32..300, 1u32..300, 1u32..300),
        (dl, dt, dr, db) in (0u32..50, 0u32..50, 0u32..50, 0u32..50),
    ) {
        let b = BBox::new(bx, by, bw, bh);
        let outer = ClipRegion::new(BBox::new(cx, cy, cw, ch)).unwrap();
        let (iw, ih) = (cw.saturating_sub(dl + dr), ch.saturating_sub(dt + db));
        prop_assume!(iw > 0 && ih > 0);
        let inner = ClipRegion::new(BBox::new(cx + dl, cy + dt, iw, ih)).unwrap();
        match (clip_box(b, outer), clip_box(b, inner)) {
            (_, None) => {}
            (None, Some(small)) => prop_assert!(false, "inner clip produced {:?}", small),
            (Some(big), Some(small)) => {
                prop_assert!(contains(big, small));
                prop_assert!(contains(b, big));
            }
        }
    }

    #[test]
    fn finalize_clip_monotone(rect in arb_rect(), clip in arb_rect(), shrink in 0.0..20.0f64) {
        let dims = Dims::new(400, 300);
        let rec = |vis: RawVisibility| RawRecord {
            source_key: "K".into(),
            family: AnnotationClass::of(FineLabel::Address).kind,
            label: FineLabel::Address,
            element_kind: AnnotationClass::of(FineLabel::Address).element_kind,
            rects: vec![rect],
            visibility: vis,
            error: None,
        };
        let inner = RawRect::new(clip.x + shrink, clip.y + shrink, (clip.w - 2.0 * shrink).max(0.0), (clip.h - 2.0 * shrink).max(0.0));
        let big = finalize(&RawPayload::new(vec![rec(RawVisibility::Clipped { rect: clip })]), dims).unwrap();
        let small = finalize(&RawPayload::new(vec![rec(RawVisibility::Clipped { rect: inner })]), dims).unwrap();
        if let Some(s) = small.first() {
            prop_assert!(big.first().is_some_and(|b| contains(b.bbox, s.bbox)), "{:?} vs {:?}", big, small);
            prop_assert_eq!(s.visibility, Visibility::Clipped);
        }
    }
}

fn arb_record_text() -> impl Strategy<Value = ProductRecord> {
    ("[a-c ]{0,12}", "[a-c ]{0,16}").prop_map(|(title, description)| ProductRecord {
        id: "x".into(),
        title,
        description,
        brand: String::new(),
        image_ref: None,
        price_hint: None,
        category: String::new(),
    })
}

proptest! {
    #[test]
    fn cosine_is_symmetric_and_bounded(a in arb_record_text(), b in arb_record_text()) {
        let (ab, ba) = (token_cosine(&a, &b), token_cosine(&b, &a));
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
    }
}

#[test]
fn ingest_is_idempotent_on_retained_records() {
    let first = catalog();
    let raw: Vec<_> = first.records().iter().map(ProductRecord::to_raw).collect();
    let second = Catalog::ingest(raw, first.asset_root()).unwrap();
    assert_eq!(second.records(), first.records());
    assert_eq!(second.vocabulary_len(), first.vocabulary_len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn configs_are_deterministic_dated_and_balanced(seed in any::<u64>(), variant in 0u32..100) {
        for t in templates() {
            let a = generate_config(&t.layout_id, &t.data_spec, catalog(), &opts(seed, variant)).unwrap();
            let b = generate_config(&t.layout_id, &t.data_spec, catalog(), &opts(seed, variant)).unwrap();
            prop_assert_eq!(a.to_json(), b.to_json());
            prop_assert!(a.derived_fresh(&t.data_spec));
            if let (Some(order), Some(delivery)) = (
                a.get("ORDER_DATE").and_then(Value::as_date),
                a.get("ORDER_DELIVERY_DATE").and_then(Value::as_date),
            ) {
                prop_assert!(order <= delivery);
            }
            if a.values.contains_key(TOTAL_KEY) {
                let residue = money(&a.values, TOTAL_KEY)
                    - money(&a.values, SUBTOTAL_KEY)
                    - money(&a.values, SHIPPING_KEY)
                    - money(&a.values, TAX_KEY);
                prop_assert_eq!(residue, 0);
            }
        }
    }

    #[test]
    fn instantiated_documents_are_complete(seed in any::<u64>(), variant in 0u32..25) {
        for t in templates() {
            let config = generate_config(&t.layout_id, &t.data_spec, catalog(), &opts(seed, variant)).unwrap();
            let (_, states) = plan_fill_states(t, &config, Density::All).unwrap();
            let included: BTreeSet<&str> = t.included_fields(&config).map(|f| f.field_id.as_str()).collect();
            for state in &states {
                let doc = instantiate(t, &config, state, catalog().asset_root()).unwrap();
                prop_assert!(!doc.contains("{{"), "{} {}", t.layout_id, state.tag);
                let form = read_form(&doc).unwrap();
                let shown: BTreeSet<&str> = form.keys().map(String::as_str).collect();
                prop_assert_eq!(&shown, &included);
            }
            for slot in t.active_slots(&config) {
                prop_assert!(slot.requires.is_subset(&config.included_optional_fields));
            }
        }
    }
}

#[test]
fn optional_inclusion_within_three_sigma_over_ten_thousand() {
    let t = templates()
        .iter()
        .find(|t| t.data_spec.optional_fields.values().any(|&p| p == 0.5))
        .expect("a fixture with p = 0.5");
    let (field, _) = t
        .data_spec
        .optional_fields
        .iter()
        .find(|(_, &p)| p == 0.5)
        .unwrap();
    let n = 10_000u32;
    let hits = (0..n)
        .filter(|&v| {
            generate_config(&t.layout_id, &t.data_spec, catalog(), &opts(3, v))
                .unwrap()
                .included_optional_fields
                .contains(field)
        })
        .count() as f64;
    let sigma = (n as f64 * 0.25).sqrt();
    assert!(
        (hits - n as f64 / 2.0).abs() <= 3.0 * sigma,
        "{hits} of {n}"
    );
}

fn arb_slots() -> impl Strategy<Value = Vec<FieldSlot>> {
    proptest::collection::vec(("[a-zé 😀]{0,9}", any::<bool>()), 0..9).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (value, atomic))| FieldSlot {
                field_id: format!("f{i:02}"),
                value,
                atomic,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn plans_have_the_promised_shape(n in 0usize..12, sample in proptest::option::of(1u32..8), seed in any::<u64>()) {
        let density = sample.map_or(Density::All, Density::Sample);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = plan_states(n, density, &mut rng).unwrap();
        prop_assert_eq!(plan.len(), state_count(n, density));
        prop_assert_eq!(plan.states.iter().filter(|t| **t == FillTag::Full).count(), 1);
        prop_assert_eq!(plan.states.iter().filter(|t| **t == FillTag::Empty).count(), usize::from(n >= 1));
        let ks: Vec<u32> = plan.states.iter().filter_map(|t| match t { FillTag::Partial(k) => Some(*k), _ => None }).collect();
        let distinct: BTreeSet<u32> = ks.iter().copied().collect();
        prop_assert_eq!(distinct.len(), ks.len());
        prop_assert!(ks.iter().all(|&k| k >= 1 && (k as usize) < n));
        let again = plan_states(n, density, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(again, plan);
    }

    #[test]
    fn resolved_states_respect_fill_order(slots in arb_slots(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plan = plan_states(slots.len(), Density::All, &mut rng).unwrap();
        let mut exposure: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for tag in &plan.states {
            let state = FillState::resolve(*tag, &slots, &mut rng).unwrap();
            for (i, slot) in slots.iter().enumerate() {
                let order = i as u32 + 1;
                let fill = state.per_field[&slot.field_id];
                let shown = state.shown(&slot.field_id, &slot.value).unwrap();
                match (*tag, fill) {
                    (FillTag::Empty, f) => prop_assert_eq!(f, FieldFill::Empty),
                    (FillTag::Full, f) => prop_assert_eq!(f, FieldFill::Full),
                    (FillTag::Partial(k), f) if order < k => prop_assert_eq!(f, FieldFill::Full),
                    (FillTag::Partial(k), f) if order > k => prop_assert_eq!(f, FieldFill::Empty),
                    (FillTag::Partial(_), FieldFill::Prefix(len)) => {
                        prop_assert!(!slot.atomic);
                        prop_assert!(len >= 1 && len < grapheme_len(&slot.value));
                        prop_assert!(slot.value.starts_with(shown));
                    }
                    (FillTag::Partial(_), f) => {
                        prop_assert_eq!(f, FieldFill::Full);
                        prop_assert!(slot.atomic || grapheme_len(&slot.value) <= 1);
                    }
                }
                let context = match fill {
                    FieldFill::Empty => "empty",
                    FieldFill::Prefix(_) => "prefix",
                    FieldFill::Full => "full",
                };
                exposure.entry(slot.field_id.as_str()).or_default().insert(context);
            }
        }
        for (i, slot) in slots.iter().enumerate() {
            let seen = &exposure[slot.field_id.as_str()];
            prop_assert!(seen.contains("empty") && seen.contains("full"));
            let typable = !slot.atomic && grapheme_len(&slot.value) > 1;
            if typable && i + 1 < slots.len() {
                prop_assert!(seen.contains("prefix"), "{} {:?}", slot.field_id, seen);
            }
        }
    }
}

fn arb_box() -> impl Strategy<Value = BBox> {
    (0u32..40, 0u32..40, 1u32..20, 1u32..20).prop_map(|(x, y, w, h)| BBox::new(x, y, w, h))
}

fn arb_image() -> impl Strategy<Value = (Vec<(BBox, u8)>, Vec<(BBox, u8, u8)>)> {
    (
        proptest::collection::vec((arb_box(), 0u8..2), 0..6),
        proptest::collection::vec((arb_box(), 0u8..2, 0u8..6), 0..8),
    )
}

fn class(c: u8) -> String {
    ["address", "name"][c as usize].to_string()
}

fn build(
    images: &[(Vec<(BBox, u8)>, Vec<(BBox, u8, u8)>)],
    factor: u32,
) -> (Vec<AnnotatedSample>, Vec<Detection>) {
    let label = |c: u8| [FineLabel::Address, FineLabel::Name][c as usize];
    let mut samples = Vec::new();
    let mut dets = Vec::new();
    for (i, (gts, ds)) in images.iter().enumerate() {
        let id = SampleId::new("l", i as u32, FillTag::Full);
        samples.push(AnnotatedSample {
            image_ref: format!("renders/{i}.png"),
            layout_id: "l".into(),
            variant_index: i as u32,
            config_seed: 0,
            fill_state: FillTag::Full,
            annotations: gts
                .iter()
                .enumerate()
                .map(|(j, (b, c))| screenforge::Annotation {
                    bbox: b.scaled(factor),
                    cls: AnnotationClass::of(label(*c)),
                    source_key: format!("K{j}"),
                    line_index: 0,
                    visibility: Visibility::Full,
                })
                .collect(),
            image_dims: Dims::new(64 * factor, 64 * factor),
        });
        for (b, c, conf) in ds {
            dets.push(Detection {
                sample_id: id.clone(),
                class: class(*c),
                bbox: b.scaled(factor),
                confidence: f64::from(*conf) / 5.0,
            });
        }
    }
    (samples, dets)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn metrics_are_scale_invariant(images in proptest::collection::vec(arb_image(), 1..4), factor in 2u32..5) {
        let map = ClassMap::new(ClassMode::Fine);
        let (s1, d1) = build(&images, 1);
        let (sk, dk) = build(&images, factor);
        let a = evaluate(&d1, &s1, map, 0.25).unwrap();
        let b = evaluate(&dk, &sk, map, 0.25).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn iou_is_scale_invariant(a in arb_box(), b in arb_box(), factor in 2u32..9) {
        prop_assert!((iou(a, b) - iou(a.scaled(factor), b.scaled(factor))).abs() < 1e-12);
    }

    #[test]
    fn matching_ignores_input_order_among_ties(
        (gts, dets) in arb_image(),
        perm_seed in any::<u64>(),
    ) {
        let gts: Vec<GtBox> = gts.iter().map(|(b, c)| GtBox { class: class(*c), bbox: *b }).collect();
        let names: Vec<String> = dets.iter().map(|(_, c, _)| class(*c)).collect();
        let dets: Vec<(&str, BBox, f64)> = dets.iter().zip(&names).map(|((b, _, conf), n)| (n.as_str(), *b, f64::from(*conf % 2))).collect();
        let mut order: Vec<usize> = (0..dets.len()).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let shuffled: Vec<(&str, BBox, f64)> = order.iter().map(|&i| dets[i]).collect();
        let canonical = |pairs: &[(usize, usize)], dets: &[(&str, BBox, f64)]| {
            let mut v: Vec<(String, BBox, u64, usize)> = pairs.iter().map(|&(d, g)| (dets[d].0.to_string(), dets[d].1, dets[d].2.to_bits(), g)).collect();
            v.sort();
            v
        };
        let a = match_boxes(&dets, &gts, 0.5);
        let b = match_boxes(&shuffled, &gts, 0.5);
        prop_assert_eq!(canonical(&a.pairs, &dets), canonical(&b.pairs, &shuffled));
        prop_assert_eq!(a.unmatched_gts, b.unmatched_gts);
    }

    #[test]
    fn adding_a_true_positive_never_lowers_ap(
        scored in proptest::collection::vec((0u32..1000, any::<bool>()), 0..30),
        extra in 0u32..1000,
        slack in 1usize..5,
    ) {
        let scored: Vec<(f64, bool)> = scored.into_iter().map(|(c, t)| (f64::from(c) / 1000.0, t)).collect();
        let tps = scored.iter().filter(|s| s.1).count();
        let npos = tps + slack;
        let before = average_precision(&scored, npos);
        let mut more = scored.clone();
        more.push((f64::from(extra) / 1000.0, true));
        let after = average_precision(&more, npos);
        prop_assert!(after + 1e-12 >= before, "{before} -> {after}");
        prop_assert!((0.0..=1.0).contains(&after));
    }
}

fn luhn_oracle(s: &str) -> bool {
    const DOUBLED: [u32; 10] = [0, 2, 4, 6, 8, 1, 3, 5, 7, 9];
    if s.is_empty() || !s.chars().all(|c| c.is_ascii_digit()) {
        return false;
    }
    let digits: Vec<u32> = s.chars().map(|c| c.to_digit(10).unwrap()).collect();
    let n = digits.len();
    let total: u32 = digits
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            if (n - i).is_multiple_of(2) {
                DOUBLED[d as usize]
            } else {
                d
            }
        })
        .sum();
    total.is_multiple_of(10)
}

#[test]
fn luhn_agrees_with_oracle_on_ten_thousand_strings() {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(0x1u64);
    let mut accepted = 0;
    for _ in 0..10_000 {
        let len = rng.gen_range(0..20);
        let s: String = (0..len)
            .map(|_| char::from(b'0' + rng.gen_range(0..10u8)))
            .collect();
        assert_eq!(luhn_valid(&s), luhn_oracle(&s), "{s:?}");
        accepted += usize::from(luhn_oracle(&s));
    }
    assert!(accepted > 500, "{accepted}");
    for s in ["4539 1488 0343 6467", "4539-1488", "12a4", ""] {
        assert_eq!(luhn_valid(s), luhn_oracle(s));
    }
}

fn arb_registry() -> impl Strategy<Value = Vec<LayoutInfo>> {
    proptest::collection::vec((0u8..4, 0u8..3), 1..60).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (b, p))| LayoutInfo {
                layout_id: format!("layout_{i:03}"),
                brand: format!("brand{b}"),
                page_type: ["cart", "checkout", "receipt"][p as usize].into(),
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn splits_partition_layouts(reg in arb_registry(), fraction in 0.0..=1.0f64, stratify in any::<bool>(), seed in any::<u64>(), pick in 0u8..3) {
        let strategies = [
            SplitStrategy::CrossPage { fraction, stratify_brand: stratify },
            SplitStrategy::CrossCompany { brand: format!("brand{}", pick) },
            SplitStrategy::CrossType { page_type: ["cart", "checkout", "receipt"][pick as usize].into() },
        ];
        let all: BTreeSet<String> = reg.iter().map(|l| l.layout_id.clone()).collect();
        for strategy in &strategies {
            let Ok(a) = split(&reg, strategy, seed) else { continue };
            let train = a.layouts(Split::Train);
            let test = a.layouts(Split::Test);
            prop_assert!(train.is_disjoint(test));
            prop_assert_eq!(&train.union(test).cloned().collect::<BTreeSet<_>>(), &all);
            prop_assert_eq!(split(&reg, strategy, seed).unwrap(), a.clone());
        }
    }

    #[test]
    fn ledger_history_only_grows(ops in proptest::collection::vec((0u8..3, 0u8..5, proptest::option::of(0u8..4)), 1..25)) {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("ledger.jsonl");
        let ids: Vec<String> = (0..3).map(|i| format!("l{i}")).collect();
        let mut ledger = Ledger::open(&path, ids.clone()).unwrap();
        let mut last_len = ledger.history_len();
        let mut last_bytes = Vec::new();
        for (who, what, key) in ops {
            let id = &ids[who as usize];
            let key = key.map(|k| format!("k{k}"));
            match what {
                0 => { ledger.decide(id, Decision::Approved, key).unwrap(); }
                1 => { ledger.decide(id, Decision::Flagged { note: "fix".into() }, key).unwrap(); }
                2 => { ledger.decide(id, Decision::Excluded, key).unwrap(); }
                3 => { ledger.requeue(id).unwrap(); }
                _ => { ledger.render_failed(id, "bad".into()).unwrap(); }
            }
            prop_assert!(ledger.history_len() >= last_len);
            last_len = ledger.history_len();
            let bytes = std::fs::read(&path).unwrap();
            prop_assert!(bytes.starts_with(&last_bytes));
            last_bytes = bytes;
        }
        prop_assert_eq!(read_ledger(&path).unwrap().len(), last_len);
        let reopened = Ledger::open(&path, ids.clone()).unwrap();
        prop_assert_eq!(reopened.history_len(), last_len);
        for id in &ids {
            prop_assert_eq!(reopened.item(id), ledger.item(id));
        }
    }
}
