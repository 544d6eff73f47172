mod common;

use common::*;
use proptest::prelude::*;
use smt_core::align::{align_corpus, symmetrize, train_model1, AlignmentMatrix, Model1Config, Symmetrization};
use smt_core::corpus::{Origin, ParallelCorpus, SentencePair};
use smt_core::lm::{train_lm, LmConfig, Smoothing};
use smt_core::phrase::{extract_corpus, score_table};

fn small_corpus() -> impl Strategy<Value = ParallelCorpus> {
    let side = || proptest::collection::vec(proptest::sample::select(vec!["a", "b", "c", "d", "e"]), 1..6);
    proptest::collection::vec((side(), side()), 1..8).prop_map(|pairs| {
        ParallelCorpus::new(
            pairs
                .into_iter()
                .map(|(s, t)| {
                    SentencePair::new(
                        s.iter().map(|w| w.to_string()).collect(),
                        t.iter().map(|w| w.to_uppercase()).collect(),
                        Origin::new("p", 1),
                    )
                })
                .collect(),
        )
    })
}

fn em(iterations: usize, use_null: bool) -> Model1Config {
    Model1Config {
        iterations,
        use_null,
        min_gain_per_pair: None,
    }
}

fn link_matrix(slen: usize, tlen: usize, bits: &[bool]) -> AlignmentMatrix {
    let links = (0..slen).flat_map(|i| (0..tlen).map(move |j| (i, j))).filter(|&(i, j)| bits[i * tlen + j]);
    AlignmentMatrix::new(slen, tlen, links).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn model1_rows_normalize_and_likelihood_rises(c in small_corpus(), iters in 1usize..8, use_null in any::<bool>()) {
        for k in 1..=iters {
            let m = train_model1(&c, &em(k, use_null)).unwrap();
            prop_assert!(m.table.max_normalization_error() < 1e-9);
            prop_assert_eq!(m.log_likelihood.len(), k);
        }
        let m = train_model1(&c, &em(iters, use_null)).unwrap();
        for w in m.log_likelihood.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9, "{:?}", m.log_likelihood);
        }
    }

    #[test]
    fn model1_ignores_word_order(c in small_corpus(), use_null in any::<bool>()) {
        let shuffled = ParallelCorpus::new(
            c.pairs
                .iter()
                .map(|p| {
                    let mut s = p.source.clone();
                    let mut t = p.target.clone();
                    s.reverse();
                    t.rotate_left(1);
                    SentencePair::new(s, t, p.origin.clone())
                })
                .collect(),
        );
        let a = train_model1(&c, &em(5, use_null)).unwrap().table;
        let b = train_model1(&shuffled, &em(5, use_null)).unwrap().table;
        for s in a.source_words() {
            for (t, p) in a.row(s).unwrap() {
                prop_assert!((p - b.prob(s, t)).abs() < 1e-12);
            }
        }
        prop_assert_eq!(a.len(), b.len());
    }

    #[test]
    fn model1_is_deterministic(c in small_corpus()) {
        let a = train_model1(&c, &em(5, true)).unwrap();
        let b = train_model1(&c, &em(5, true)).unwrap();
        prop_assert_eq!(a.table.to_text(), b.table.to_text());
        prop_assert_eq!(a.log_likelihood, b.log_likelihood);
    }

    #[test]
    fn grow_diag_lies_between_intersection_and_union(
        slen in 1usize..6,
        tlen in 1usize..6,
        f in proptest::collection::vec(any::<bool>(), 36),
        b in proptest::collection::vec(any::<bool>(), 36),
    ) {
        let fwd = link_matrix(slen, tlen, &f);
        let bwd = link_matrix(slen, tlen, &b);
        let inter = symmetrize(&fwd, &bwd, Symmetrization::Intersection).unwrap();
        let grow = symmetrize(&fwd, &bwd, Symmetrization::GrowDiag).unwrap();
        let union = symmetrize(&fwd, &bwd, Symmetrization::Union).unwrap();
        prop_assert!(inter.links().is_subset(grow.links()));
        prop_assert!(grow.links().is_subset(union.links()));
    }

    #[test]
    fn phrase_table_normalizes_and_cooccurs(c in small_corpus()) {
        let fwd = train_model1(&c, &em(5, true)).unwrap().table;
        let bwd = train_model1(&c.swapped(), &em(5, true)).unwrap().table;
        let alignments = align_corpus(&c, &fwd, &bwd, Symmetrization::GrowDiag);
        let extracted = extract_corpus(&c, &alignments, 7).unwrap();
        let table = score_table(&extracted, &fwd, &bwd);
        let contains = |hay: &[String], needle: &[String]| hay.windows(needle.len()).any(|w| w == needle);
        for src in table.sources() {
            let opts = table.get(src).unwrap();
            let total: f64 = opts.iter().map(|o| o.scores[0]).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            for o in opts {
                prop_assert!(c.pairs.iter().any(|p| contains(&p.source, src) && contains(&p.target, &o.target)));
                prop_assert!(o.scores.iter().all(|&s| s > 0.0 && s <= 1.0 + 1e-12));
            }
            for w in opts.windows(2) {
                prop_assert!(w[0].scores[0] > w[1].scores[0] || (w[0].scores[0] == w[1].scores[0] && w[0].target < w[1].target));
            }
        }
    }
}

fn lm_text() -> impl Strategy<Value = Vec<Vec<String>>> {
    let word = proptest::sample::select(vec!["w1", "w2", "w3", "w4", "w5", "w6"]).prop_map(String::from);
    proptest::collection::vec(proptest::collection::vec(word, 0..6), 1..10)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn add_k_distributions_sum_to_one(text in lm_text(), order in 1usize..4, k in 0.01f64..2.0, ctx in lm_text()) {
        let lm = train_lm(&text, &LmConfig::new(order, Smoothing::AddK(k))).unwrap();
        let vocab: Vec<String> = lm.vocab().filter(|w| *w != "<s>").map(String::from).collect();
        for context in ctx.iter().chain(std::iter::once(&Vec::new())) {
            let total: f64 = vocab.iter().map(|w| lm.prob(context, w)).sum();
            prop_assert!((total - 1.0).abs() < 1e-6, "sum {} over {:?}", total, vocab);
        }
    }

    #[test]
    fn sentence_score_decomposes(text in lm_text(), order in 1usize..4, probe in lm_text()) {
        let lm = train_lm(&text, &LmConfig::new(order, Smoothing::AddK(0.1))).unwrap();
        for s in &probe {
            let mut total = 0.0;
            for i in 0..s.len() {
                total += lm.score_continuation(&s[..i], &s[i]);
            }
            total += lm.score_continuation(s, "</s>");
            prop_assert!((total - lm.log_prob(s)).abs() < 1e-9);
        }
    }

    #[test]
    fn adding_a_sentence_never_lowers_counts(text in lm_text(), extra in lm_text(), order in 1usize..4) {
        let config = LmConfig::new(order, Smoothing::AddK(0.1));
        let before = train_lm(&text, &config).unwrap();
        let mut more = text.clone();
        more.push(extra[0].clone());
        let after = train_lm(&more, &config).unwrap();
        let padded: Vec<&str> = std::iter::repeat_n("<s>", order - 1)
            .chain(extra[0].iter().map(String::as_str))
            .chain(std::iter::once("</s>"))
            .collect();
        for n in 1..=order {
            for g in padded.windows(n) {
                prop_assert!(after.count(g) >= before.count(g));
                prop_assert!(after.count(g) >= 1 || g.iter().all(|w| *w == "<s>"));
            }
        }
    }
}

#[test]
fn toy_em_step_exact() {
    let c = corpus_of(&[("a b", "x y"), ("a c", "x z")]);
    let m = train_model1(&c, &em(1, false)).unwrap();
    assert!((m.table.prob("a", "x") - 0.5).abs() < 1e-12);
    assert!((m.table.prob("a", "y") - 0.25).abs() < 1e-12);
    assert!((m.table.prob("a", "z") - 0.25).abs() < 1e-12);
}
