mod common;

use common::*;
use proptest::prelude::*;
use smt_core::decoder::{FeatureVector, WeightVector};
use smt_core::mert::{line_search, pool_bleu, SentencePool};
use smt_core::metrics::{bleu, meteor_lite, ter, ter_without_shifts, BleuSmoothing, MeteorParams};

fn words(max: usize) -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec(proptest::sample::select(vec!["a", "b", "c", "d", "e"]).prop_map(String::from), 0..=max)
}

fn nonempty(max: usize) -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec(proptest::sample::select(vec!["a", "b", "c", "d", "e"]).prop_map(String::from), 1..=max)
}

fn features() -> impl Strategy<Value = FeatureVector> {
    proptest::array::uniform7(-3.0f64..3.0)
}

fn pools() -> impl Strategy<Value = Vec<SentencePool>> {
    proptest::collection::vec((nonempty(5), proptest::collection::vec((words(5), features()), 1..6)), 1..5).prop_map(
        |raw| {
            raw.into_iter()
                .map(|(reference, hyps)| {
                    let mut p = SentencePool::new(reference);
                    p.merge(hyps.iter().map(|(t, f)| (t.as_slice(), *f)));
                    p
                })
                .collect()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn shifts_never_hurt(h in words(8), r in nonempty(8)) {
        let with = ter(&h, &r).unwrap();
        let without = ter_without_shifts(&h, &r).unwrap();
        prop_assert!(with.score <= without + 1e-12);
        if with.edits.shifts == 0 {
            prop_assert!((with.score - without).abs() < 1e-12);
        }
        prop_assert!(with.score >= 0.0);
    }

    #[test]
    fn metric_ranges_and_identities(h in words(8), r in nonempty(8)) {
        let b = bleu(std::slice::from_ref(&h), std::slice::from_ref(&r), 4, BleuSmoothing::None).unwrap();
        prop_assert!((0.0..=1.0).contains(&b.score));
        prop_assert!(b.precisions.iter().all(|p| (0.0..=1.0).contains(p)));
        let m = meteor_lite(&h, &r, MeteorParams::default());
        prop_assert!((0.0..=1.0).contains(&m.score));
        prop_assert_eq!(bleu(std::slice::from_ref(&r), std::slice::from_ref(&r), 4, BleuSmoothing::None).unwrap().score, 1.0);
        prop_assert_eq!(ter(&r, &r).unwrap().score, 0.0);
    }

    #[test]
    fn meteor_matches_grow_with_a_shared_token(h in words(6), r in words(6)) {
        let before = meteor_lite(&h, &r, MeteorParams::default());
        let (mut h2, mut r2) = (h.clone(), r.clone());
        h2.push("z".into());
        r2.push("z".into());
        let after = meteor_lite(&h2, &r2, MeteorParams::default());
        prop_assert!(after.matches >= before.matches);
    }
}

fn crossings(pools: &[SentencePool], w: &WeightVector, d: &FeatureVector) -> Vec<f64> {
    let mut out = Vec::new();
    for p in pools {
        let lines: Vec<(f64, f64)> = p.entries.iter().map(|e| (w.dot(&e.features), WeightVector(*d).dot(&e.features))).collect();
        for (i, a) in lines.iter().enumerate() {
            for b in &lines[i + 1..] {
                if a.1 != b.1 {
                    out.push((a.0 - b.0) / (b.1 - a.1));
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn line_search_beats_dense_scan(p in pools(), w in features(), d in features(), add1 in any::<bool>()) {
        let smoothing = if add1 { BleuSmoothing::Add1 } else { BleuSmoothing::None };
        let w = WeightVector(w);
        let res = line_search(&p, &w, &d, smoothing);
        let reached = pool_bleu(&p, &w.step(&d, res.gamma), smoothing);
        prop_assert!((reached - res.bleu).abs() < 1e-12);
        let xs = crossings(&p, &w, &d);
        let lo = xs.iter().copied().fold(0.0f64, f64::min) - 1.0;
        let hi = xs.iter().copied().fold(0.0f64, f64::max) + 1.0;
        for k in 0..10_000 {
            let g = lo + (hi - lo) * k as f64 / 9_999.0;
            prop_assert!(pool_bleu(&p, &w.step(&d, g), smoothing) <= res.bleu + 1e-12);
        }
    }

    #[test]
    fn argmax_is_scale_invariant(p in pools(), w in features(), c in 0.01f64..100.0) {
        let w = WeightVector(w);
        for pool in &p {
            prop_assert_eq!(pool.best(&w), pool.best(&w.scaled(c)));
        }
    }
}

#[test]
fn golden_metric_values() {
    let one = |h: &str, r: &str, n| bleu(&[toks(h)], &[toks(r)], n, BleuSmoothing::None).unwrap();
    assert_eq!(one("the cat sat", "the cat sat", 4).score, 1.0);
    assert!((one("the cat sat", "the cat sat down", 2).score - (1.0f64 - 4.0 / 3.0).exp()).abs() < 1e-9);
    assert_eq!(one("the the the", "the cat", 1).precisions[0], 1.0 / 3.0);
    assert_eq!(ter(&toks("a b c"), &toks("a b c")).unwrap().score, 0.0);
    assert!((ter(&toks("a b c d e"), &toks("a b x d e")).unwrap().score - 0.2).abs() < 1e-12);
    assert!((ter(&toks("c a b"), &toks("a b c")).unwrap().score - 1.0 / 3.0).abs() < 1e-12);
    assert!((meteor_lite(&toks("a b"), &toks("a b"), MeteorParams::default()).score - 0.9375).abs() < 1e-12);
}
