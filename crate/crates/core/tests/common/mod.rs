//! Oracles and random instance builders shared by the integration tests and
//! the acceptance runner.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smt_core::align::{AlignmentMatrix, OOV_FLOOR};
use smt_core::corpus::{Origin, ParallelCorpus, SentencePair};
use smt_core::decoder::{derivation_features, AppliedPhrase, DecoderConfig, WeightVector, NUM_FEATURES};
use smt_core::lm::{train_lm, LmConfig, NGramModel, Smoothing};
use smt_core::phrase::{PhraseOption, PhrasePair, PhraseTable};

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

pub fn pair(s: &str, t: &str) -> SentencePair {
    SentencePair::new(toks(s), toks(t), Origin::new("test", 1))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A sentence pair of 1..=6 tokens per side with each cell linked with
/// probability 0.3.
pub fn random_linked_pair(rng: &mut ChaCha8Rng) -> (SentencePair, AlignmentMatrix) {
    let slen = rng.gen_range(1..=6);
    let tlen = rng.gen_range(1..=6);
    let source = (0..slen).map(|i| format!("s{}", i)).collect();
    let target = (0..tlen).map(|j| format!("t{}", j)).collect();
    let mut links = Vec::new();
    for i in 0..slen {
        for j in 0..tlen {
            if rng.gen_bool(0.3) {
                links.push((i, j));
            }
        }
    }
    let m = AlignmentMatrix::new(slen, tlen, links).unwrap();
    (SentencePair::new(source, target, Origin::new("random", 1)), m)
}

/// Every (source span, target span) rectangle checked for consistency
/// directly.
pub fn exhaustive_phrases(pair: &SentencePair, a: &AlignmentMatrix, max_len: usize) -> BTreeSet<PhrasePair> {
    let (slen, tlen) = (pair.source.len(), pair.target.len());
    let mut out = BTreeSet::new();
    for s0 in 0..slen {
        for s1 in s0 + 1..=slen {
            for t0 in 0..tlen {
                for t1 in t0 + 1..=tlen {
                    if s1 - s0 > max_len || t1 - t0 > max_len {
                        continue;
                    }
                    let mut inside = false;
                    let mut consistent = true;
                    for &(i, j) in a.links() {
                        let si = (s0..s1).contains(&i);
                        let tj = (t0..t1).contains(&j);
                        inside |= si && tj;
                        consistent &= si == tj;
                    }
                    if !(inside && consistent) {
                        continue;
                    }
                    let links = a
                        .links()
                        .iter()
                        .filter(|(i, _)| (s0..s1).contains(i))
                        .map(|&(i, j)| (i - s0, j - t0))
                        .collect();
                    out.insert(PhrasePair {
                        source_span: (s0, s1),
                        target_span: (t0, t1),
                        source: pair.source[s0..s1].to_vec(),
                        target: pair.target[t0..t1].to_vec(),
                        links,
                    });
                }
            }
        }
    }
    out
}

/// A small decoding problem.
pub struct DecodeInstance {
    pub sentence: Vec<String>,
    pub table: PhraseTable,
    pub lm: NGramModel,
    pub weights: WeightVector,
}

const SRC_WORDS: [&str; 4] = ["a", "b", "c", "d"];
const TGT_WORDS: [&str; 6] = ["p", "q", "r", "s", "t", "u"];

fn random_phrase(rng: &mut ChaCha8Rng, max: usize) -> Vec<String> {
    let n = rng.gen_range(1..=max);
    (0..n).map(|_| TGT_WORDS[rng.gen_range(0..TGT_WORDS.len())].to_string()).collect()
}

/// Up to 4 source tokens, up to 3 options per source phrase, random
/// positive scores, a bigram LM over random target text and random weights.
/// Some single tokens may lack options and go through as OOV.
pub fn random_decode_instance(rng: &mut ChaCha8Rng) -> DecodeInstance {
    let n = rng.gen_range(1..=4);
    let sentence: Vec<String> = (0..n).map(|_| SRC_WORDS[rng.gen_range(0..SRC_WORDS.len())].to_string()).collect();
    let mut entries = Vec::new();
    let mut seen: BTreeSet<Vec<String>> = BTreeSet::new();
    for i in 0..n {
        for j in i + 1..=n {
            let src = sentence[i..j].to_vec();
            if !seen.insert(src.clone()) {
                continue;
            }
            let k = if j - i == 1 { rng.gen_range(0..=3) } else { rng.gen_range(0..=2) };
            let mut targets: BTreeSet<Vec<String>> = BTreeSet::new();
            for _ in 0..k {
                targets.insert(random_phrase(rng, 2));
            }
            for target in targets {
                let mut scores = [0.0; 4];
                for s in scores.iter_mut() {
                    *s = rng.gen_range(0.01..=1.0);
                }
                entries.push((src.clone(), PhraseOption { target, scores }));
            }
        }
    }
    let lm_text: Vec<Vec<String>> = (0..8).map(|_| random_phrase(rng, 5)).collect();
    let lm = train_lm(&lm_text, &LmConfig::new(2, Smoothing::AddK(0.5))).unwrap();
    let mut w = [0.0; NUM_FEATURES];
    for x in w.iter_mut() {
        *x = rng.gen_range(-1.0..=1.0);
    }
    DecodeInstance {
        sentence,
        table: PhraseTable::from_entries(entries),
        lm,
        weights: WeightVector(w),
    }
}

fn options_for(inst: &DecodeInstance, start: usize, end: usize, config: &DecoderConfig) -> Vec<AppliedPhrase> {
    let mut opts: Vec<AppliedPhrase> = inst
        .table
        .lookup(&inst.sentence[start..end], config.top_k)
        .iter()
        .map(|o| AppliedPhrase {
            source_start: start,
            source_end: end,
            target: o.target.clone(),
            scores: o.scores,
        })
        .collect();
    if end - start == 1 && opts.is_empty() {
        opts.push(AppliedPhrase {
            source_start: start,
            source_end: end,
            target: vec![inst.sentence[start].clone()],
            scores: [OOV_FLOOR; 4],
        });
    }
    opts
}

/// Best model score over every segmentation, ordering and option choice,
/// scored from scratch.
pub fn brute_force_best(inst: &DecodeInstance, config: &DecoderConfig) -> Option<f64> {
    fn walk(
        inst: &DecodeInstance,
        config: &DecoderConfig,
        covered: &mut Vec<bool>,
        path: &mut Vec<AppliedPhrase>,
        best: &mut Option<f64>,
    ) {
        let n = covered.len();
        if covered.iter().all(|&c| c) {
            let score = inst.weights.dot(&derivation_features(path, &inst.lm));
            if best.is_none_or(|b| score > b) {
                *best = Some(score);
            }
            return;
        }
        for start in 0..n {
            for end in start + 1..=n.min(start + config.max_phrase_len) {
                if covered[end - 1] {
                    break;
                }
                if covered[start] {
                    continue;
                }
                if let Some(limit) = config.distortion_limit {
                    let last_end = path.last().map_or(0, |p| p.source_end);
                    if start.abs_diff(last_end) > limit {
                        continue;
                    }
                }
                for opt in options_for(inst, start, end, config) {
                    for c in &mut covered[start..end] {
                        *c = true;
                    }
                    path.push(opt);
                    walk(inst, config, covered, path, best);
                    path.pop();
                    for c in &mut covered[start..end] {
                        *c = false;
                    }
                }
            }
        }
    }
    let mut best = None;
    walk(inst, config, &mut vec![false; inst.sentence.len()], &mut Vec::new(), &mut best);
    best
}

pub fn corpus_of(pairs: &[(&str, &str)]) -> ParallelCorpus {
    ParallelCorpus::new(pairs.iter().map(|(s, t)| pair(s, t)).collect())
}
