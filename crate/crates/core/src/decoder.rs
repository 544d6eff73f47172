//! Phrase-based stack decoding under a seven-feature log-linear model.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::OOV_FLOOR;
use crate::corpus::{read_lines, CorpusError};
use crate::lm::NGramModel;
use crate::phrase::{PhraseScores, PhraseTable};

pub const NUM_FEATURES: usize = 7;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "phrase_fwd",
    "lex_fwd",
    "phrase_bwd",
    "lex_bwd",
    "lm",
    "word_penalty",
    "distortion",
];

pub const LM_FEATURE: usize = 4;
pub const WORD_FEATURE: usize = 5;
pub const DISTORTION_FEATURE: usize = 6;

/// Phrase scores are clamped here before taking logs.
const LOG_FLOOR: f64 = 1e-12;

/// Derivations examined per requested n-best entry before giving up on
/// finding more distinct targets.
const NBEST_EXPLORE_FACTOR: usize = 50;

pub type FeatureVector = [f64; NUM_FEATURES];

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("no complete translation; search stuck at coverage {coverage}")]
    Stuck { coverage: String },
    #[error("invalid decoder config: {0}")]
    InvalidConfig(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(pub FeatureVector);

impl Default for WeightVector {
    fn default() -> Self {
        WeightVector([0.2, 0.2, 0.2, 0.2, 0.5, 0.3, 0.3])
    }
}

impl WeightVector {
    pub fn new(weights: FeatureVector) -> Result<Self, DecodeError> {
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(DecodeError::InvalidWeights(format!("{} is not finite", FEATURE_NAMES[i])));
        }
        Ok(WeightVector(weights))
    }

    pub fn zeros() -> Self {
        WeightVector([0.0; NUM_FEATURES])
    }

    pub fn dot(&self, features: &FeatureVector) -> f64 {
        let mut s = 0.0;
        for i in 0..NUM_FEATURES {
            s += self.0[i] * features[i];
        }
        s
    }

    /// `self + gamma * direction`
    pub fn step(&self, direction: &FeatureVector, gamma: f64) -> WeightVector {
        let mut w = self.0;
        for i in 0..NUM_FEATURES {
            w[i] += gamma * direction[i];
        }
        WeightVector(w)
    }

    pub fn scaled(&self, c: f64) -> WeightVector {
        WeightVector(self.0.map(|w| w * c))
    }

    /// `name<TAB>value` per feature.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, w) in FEATURE_NAMES.iter().zip(self.0) {
            let _ = writeln!(out, "{}\t{}", name, w);
        }
        out
    }

    /// Parses `name<TAB>value` lines; every feature must appear exactly once.
    pub fn parse(text: &str) -> Result<Self, DecodeError> {
        let mut w = [f64::NAN; NUM_FEATURES];
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |m: &str| DecodeError::InvalidWeights(format!("line {}: {}", n + 1, m));
            let (name, value) = line
                .split_once(['\t', ' '])
                .ok_or_else(|| bad("expected name and value"))?;
            let idx = FEATURE_NAMES
                .iter()
                .position(|f| *f == name.trim())
                .ok_or_else(|| bad(&format!("unknown feature {}", name)))?;
            if !w[idx].is_nan() {
                return Err(bad(&format!("duplicate feature {}", name)));
            }
            w[idx] = value.trim().parse().map_err(|_| bad("bad number"))?;
        }
        if let Some(i) = w.iter().position(|v| v.is_nan()) {
            return Err(DecodeError::InvalidWeights(format!("missing feature {}", FEATURE_NAMES[i])));
        }
        WeightVector::new(w)
    }

    pub fn write(&self, path: &Path) -> Result<(), DecodeError> {
        std::fs::write(path, self.to_text()).map_err(|e| CorpusError::io(path, e).into())
    }

    pub fn load(path: &Path) -> Result<Self, DecodeError> {
        let text = std::fs::read_to_string(path).map_err(|e| DecodeError::from(CorpusError::io(path, e)))?;
        WeightVector::parse(&text)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    /// Hypotheses kept per stack.
    pub beam_size: usize,
    /// Maximum jump; `None` allows any reordering. Written as -1 in
    /// config files.
    #[serde(with = "limit_serde")]
    pub distortion_limit: Option<usize>,
    pub max_phrase_len: usize,
    /// Options considered per source phrase.
    pub top_k: usize,
}

mod limit_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i64(v.map_or(-1, |d| d as i64))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        let v = i64::deserialize(d)?;
        Ok(usize::try_from(v).ok())
    }
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            beam_size: 100,
            distortion_limit: Some(6),
            max_phrase_len: crate::phrase::DEFAULT_MAX_PHRASE_LEN,
            top_k: 20,
        }
    }
}

impl DecoderConfig {
    /// Exhaustive search: no beam pruning and no distortion limit.
    pub fn unlimited() -> Self {
        DecoderConfig {
            beam_size: usize::MAX,
            distortion_limit: None,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.beam_size == 0 {
            return Err(DecodeError::InvalidConfig("beam_size must be at least 1".into()));
        }
        if self.max_phrase_len == 0 || self.top_k == 0 {
            return Err(DecodeError::InvalidConfig("max_phrase_len and top_k must be positive".into()));
        }
        Ok(())
    }
}

/// One phrase application in a derivation.
#[derive(Clone, Debug, PartialEq)]
pub struct AppliedPhrase {
    /// Half-open source span.
    pub source_start: usize,
    pub source_end: usize,
    pub target: Vec<String>,
    pub scores: PhraseScores,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Translation {
    pub target: Vec<String>,
    pub features: FeatureVector,
    pub score: f64,
    /// Phrases in target order.
    pub derivation: Vec<AppliedPhrase>,
}

fn ln_clamped(x: f64) -> f64 {
    x.max(LOG_FLOOR).ln()
}

/// Recomputes all seven features of a derivation from scratch.
pub fn derivation_features(derivation: &[AppliedPhrase], lm: &NGramModel) -> FeatureVector {
    let mut f = [0.0; NUM_FEATURES];
    let mut target: Vec<&str> = Vec::new();
    let mut last_end: i64 = -1;
    for step in derivation {
        for k in 0..4 {
            f[k] += ln_clamped(step.scores[k]);
        }
        f[WORD_FEATURE] += step.target.len() as f64;
        f[DISTORTION_FEATURE] -= (step.source_start as i64 - (last_end + 1)).abs() as f64;
        last_end = step.source_end as i64 - 1;
        target.extend(step.target.iter().map(String::as_str));
    }
    f[LM_FEATURE] = lm.log_prob(&target);
    f
}

#[derive(Clone, Debug)]
struct PreparedOption {
    start: usize,
    end: usize,
    target: Vec<String>,
    ids: Vec<u32>,
    scores: PhraseScores,
    /// Log phrase features and word count; LM and distortion come later.
    local: FeatureVector,
    local_score: f64,
}

/// Translation options per span, indexed `[start][len - 1]`. A token with no
/// single-word entry gets an identity option with floor scores.
fn prepare_options<S: AsRef<str>>(
    sentence: &[S],
    table: &PhraseTable,
    lm: &NGramModel,
    weights: &WeightVector,
    config: &DecoderConfig,
) -> Vec<Vec<Vec<PreparedOption>>> {
    let n = sentence.len();
    let make = |start: usize, end: usize, target: Vec<String>, scores: PhraseScores| {
        let mut local = [0.0; NUM_FEATURES];
        for k in 0..4 {
            local[k] = ln_clamped(scores[k]);
        }
        local[WORD_FEATURE] = target.len() as f64;
        PreparedOption {
            start,
            end,
            ids: target.iter().map(|w| lm.word_id(w)).collect(),
            target,
            scores,
            local_score: weights.dot(&local),
            local,
        }
    };
    (0..n)
        .map(|i| {
            let max_len = config.max_phrase_len.min(n - i);
            (1..=max_len)
                .map(|len| {
                    let mut opts: Vec<PreparedOption> = table
                        .lookup(&sentence[i..i + len], config.top_k)
                        .iter()
                        .map(|o| make(i, i + len, o.target.clone(), o.scores))
                        .collect();
                    if len == 1 && opts.is_empty() {
                        opts.push(make(i, i + 1, vec![sentence[i].as_ref().to_string()], [OOV_FLOOR; 4]));
                    }
                    opts
                })
                .collect()
        })
        .collect()
}

/// Optimistic score of translating each source span, ignoring reordering
/// and LM context across phrase boundaries. Higher is better.
#[derive(Clone, Debug, PartialEq)]
pub struct FutureCost {
    n: usize,
    table: Vec<f64>,
}

impl FutureCost {
    /// Estimate for the half-open span `start..end`.
    pub fn span(&self, start: usize, end: usize) -> f64 {
        if start >= end {
            return 0.0;
        }
        self.table[start * (self.n + 1) + end]
    }

    /// Sum of span estimates over the maximal uncovered gaps.
    fn uncovered(&self, coverage: &Coverage) -> f64 {
        let mut total = 0.0;
        let mut i = 0;
        while i < self.n {
            if coverage.get(i) {
                i += 1;
                continue;
            }
            let start = i;
            while i < self.n && !coverage.get(i) {
                i += 1;
            }
            total += self.span(start, i);
        }
        total
    }
}

fn future_cost_from(n: usize, options: &[Vec<Vec<PreparedOption>>], lm: &NGramModel, weights: &WeightVector) -> FutureCost {
    let mut table = vec![f64::NEG_INFINITY; (n + 1) * (n + 1)];
    let w_lm = weights.0[LM_FEATURE];
    for len in 1..=n {
        for start in 0..=n - len {
            let end = start + len;
            let mut best = f64::NEG_INFINITY;
            if let Some(opts) = options[start].get(len - 1) {
                for o in opts {
                    best = best.max(o.local_score + w_lm * lm.score_phrase_no_context(&o.ids));
                }
            }
            for split in start + 1..end {
                best = best.max(table[start * (n + 1) + split] + table[split * (n + 1) + end]);
            }
            table[start * (n + 1) + end] = best;
        }
    }
    FutureCost { n, table }
}

/// Per-span future cost estimates for `sentence`.
pub fn future_cost<S: AsRef<str>>(
    sentence: &[S],
    table: &PhraseTable,
    lm: &NGramModel,
    weights: &WeightVector,
    config: &DecoderConfig,
) -> FutureCost {
    let options = prepare_options(sentence, table, lm, weights, config);
    future_cost_from(sentence.len(), &options, lm, weights)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct Coverage(Vec<u64>);

impl Coverage {
    fn new(n: usize) -> Self {
        Coverage(vec![0; n.div_ceil(64).max(1)])
    }

    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }

    fn set_range(&mut self, start: usize, end: usize) {
        for i in start..end {
            self.0[i / 64] |= 1 << (i % 64);
        }
    }

    fn render(&self, n: usize) -> String {
        (0..n).map(|i| if self.get(i) { '1' } else { '0' }).collect()
    }
}

#[derive(Clone, Debug)]
struct Arc {
    prev: usize,
    /// `(start, len - 1, option index)`, or `None` for arcs into the goal.
    option: Option<(usize, usize, usize)>,
    delta_score: f64,
}

#[derive(Debug)]
struct Node {
    coverage: Coverage,
    covered: usize,
    state: Vec<u32>,
    last_end: i64,
    score: f64,
    future: f64,
    arcs: Vec<Arc>,
}

type NodeKey = (Coverage, Vec<u32>, i64);

/// The search graph: node 0 is the empty hypothesis, the last node is a goal
/// joined to every complete hypothesis.
struct SearchGraph {
    nodes: Vec<Node>,
    goal: usize,
}

fn search<S: AsRef<str>>(
    sentence: &[S],
    options: &[Vec<Vec<PreparedOption>>],
    lm: &NGramModel,
    weights: &WeightVector,
    config: &DecoderConfig,
) -> Result<SearchGraph, DecodeError> {
    let n = sentence.len();
    let fc = future_cost_from(n, options, lm, weights);
    let mut nodes = vec![Node {
        coverage: Coverage::new(n),
        covered: 0,
        state: lm.start_state(),
        last_end: -1,
        score: 0.0,
        future: fc.span(0, n),
        arcs: Vec::new(),
    }];
    let mut index: HashMap<NodeKey, usize> = HashMap::new();
    let mut stacks: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
    stacks[0].push(0);

    for k in 0..n {
        let mut stack = std::mem::take(&mut stacks[k]);
        if stack.len() > config.beam_size {
            stack.sort_by(|&a, &b| {
                let (sa, sb) = (nodes[a].score + nodes[a].future, nodes[b].score + nodes[b].future);
                sb.total_cmp(&sa).then(a.cmp(&b))
            });
            stack.truncate(config.beam_size);
        }
        for &v in &stack {
            for start in 0..n {
                if nodes[v].coverage.get(start) {
                    continue;
                }
                let jump = start as i64 - (nodes[v].last_end + 1);
                if config.distortion_limit.is_some_and(|d| jump.unsigned_abs() > d as u64) {
                    continue;
                }
                for (len_idx, opts) in options[start].iter().enumerate() {
                    let end = start + len_idx + 1;
                    if nodes[v].coverage.get(end - 1) {
                        break;
                    }
                    let complete = nodes[v].covered + len_idx + 1 == n;
                    for (oi, opt) in opts.iter().enumerate() {
                        let mut state = nodes[v].state.clone();
                        let mut lm_score = 0.0;
                        for &w in &opt.ids {
                            lm_score += lm.score_id(&state, w);
                            state = lm.advance(&state, w);
                        }
                        if complete {
                            lm_score += lm.score_id(&state, lm.eos_id());
                        }
                        let mut delta = opt.local;
                        delta[LM_FEATURE] = lm_score;
                        delta[DISTORTION_FEATURE] = -(jump.abs() as f64);
                        let delta_score = weights.dot(&delta);
                        let score = nodes[v].score + delta_score;

                        let mut coverage = nodes[v].coverage.clone();
                        coverage.set_range(start, end);
                        let key = (coverage, state, end as i64 - 1);
                        let arc = Arc {
                            prev: v,
                            option: Some((start, len_idx, oi)),
                            delta_score,
                        };
                        match index.get(&key) {
                            Some(&u) => {
                                let node = &mut nodes[u];
                                if score > node.score {
                                    node.score = score;
                                }
                                node.arcs.push(arc);
                            }
                            None => {
                                let future = fc.uncovered(&key.0);
                                let covered = nodes[v].covered + len_idx + 1;
                                let u = nodes.len();
                                nodes.push(Node {
                                    coverage: key.0.clone(),
                                    covered,
                                    state: key.1.clone(),
                                    last_end: key.2,
                                    score,
                                    future,
                                    arcs: vec![arc],
                                });
                                index.insert(key, u);
                                stacks[covered].push(u);
                            }
                        }
                    }
                }
            }
        }
        stacks[k] = stack;
    }

    let finals = std::mem::take(&mut stacks[n]);
    if finals.is_empty() {
        let stuck = stacks
            .iter()
            .rev()
            .find_map(|s| {
                s.iter()
                    .copied()
                    .max_by(|&a, &b| nodes[a].score.total_cmp(&nodes[b].score).then(b.cmp(&a)))
            })
            .unwrap_or(0);
        return Err(DecodeError::Stuck {
            coverage: nodes[stuck].coverage.render(n),
        });
    }
    let goal = nodes.len();
    let arcs = finals
        .iter()
        .map(|&u| Arc {
            prev: u,
            option: None,
            delta_score: 0.0,
        })
        .collect();
    let best = finals.iter().map(|&u| nodes[u].score).fold(f64::NEG_INFINITY, f64::max);
    nodes.push(Node {
        coverage: Coverage::new(n),
        covered: n,
        state: Vec::new(),
        last_end: n as i64 - 1,
        score: best,
        future: 0.0,
        arcs,
    });
    Ok(SearchGraph { nodes, goal })
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    score: f64,
    arc: usize,
    rank: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    /// Max-heap on score; among equal scores lower arc then lower rank first.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then(other.arc.cmp(&self.arc))
            .then(other.rank.cmp(&self.rank))
    }
}

/// Lazy enumeration of derivations in descending score order; each node's
/// k-th best derivation is built from its arcs' predecessors on demand.
struct KBest<'g> {
    graph: &'g SearchGraph,
    derivs: Vec<Vec<Candidate>>,
    heaps: Vec<Option<BinaryHeap<Candidate>>>,
}

impl<'g> KBest<'g> {
    fn new(graph: &'g SearchGraph) -> Self {
        let n = graph.nodes.len();
        KBest {
            graph,
            derivs: vec![Vec::new(); n],
            heaps: vec![None; n],
        }
    }

    fn get(&mut self, v: usize, k: usize) -> Option<f64> {
        if v == 0 {
            return (k == 0).then_some(0.0);
        }
        if self.heaps[v].is_none() {
            let mut heap = BinaryHeap::new();
            for (a, arc) in self.graph.nodes[v].arcs.iter().enumerate() {
                if let Some(s) = self.get(arc.prev, 0) {
                    heap.push(Candidate {
                        score: s + arc.delta_score,
                        arc: a,
                        rank: 0,
                    });
                }
            }
            self.heaps[v] = Some(heap);
        }
        while self.derivs[v].len() <= k {
            let Some(c) = self.heaps[v].as_mut().and_then(BinaryHeap::pop) else {
                return None;
            };
            self.derivs[v].push(c);
            let arc = &self.graph.nodes[v].arcs[c.arc];
            if let Some(s) = self.get(arc.prev, c.rank + 1) {
                let next = Candidate {
                    score: s + arc.delta_score,
                    arc: c.arc,
                    rank: c.rank + 1,
                };
                self.heaps[v].as_mut().expect("initialized above").push(next);
            }
        }
        Some(self.derivs[v][k].score)
    }

    /// The options along the k-th derivation of `v`, in application order.
    fn path(&self, mut v: usize, mut k: usize) -> Vec<(usize, usize, usize)> {
        let mut steps = Vec::new();
        while v != 0 {
            let c = self.derivs[v][k];
            let arc = &self.graph.nodes[v].arcs[c.arc];
            if let Some(o) = arc.option {
                steps.push(o);
            }
            v = arc.prev;
            k = c.rank;
        }
        steps.reverse();
        steps
    }
}

fn tie_break(a: &Translation, b: &Translation) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.target.len().cmp(&b.target.len()))
        .then_with(|| a.target.cmp(&b.target))
}

/// Up to `n` distinct translations, best first. Ties on score go to the
/// shorter, then lexicographically smaller, target.
pub fn nbest<S: AsRef<str>>(
    sentence: &[S],
    table: &PhraseTable,
    lm: &NGramModel,
    weights: &WeightVector,
    config: &DecoderConfig,
    n: usize,
) -> Result<Vec<Translation>, DecodeError> {
    config.validate()?;
    if n == 0 {
        return Ok(Vec::new());
    }
    if sentence.is_empty() {
        let features = derivation_features(&[], lm);
        return Ok(vec![Translation {
            target: Vec::new(),
            score: weights.dot(&features),
            features,
            derivation: Vec::new(),
        }]);
    }
    let options = prepare_options(sentence, table, lm, weights, config);
    let graph = search(sentence, &options, lm, weights, config)?;
    let mut kbest = KBest::new(&graph);

    let budget = n.saturating_mul(NBEST_EXPLORE_FACTOR).saturating_add(1000);
    let mut seen: HashSet<Vec<String>> = HashSet::new();
    let mut found: Vec<Translation> = Vec::new();
    let mut cutoff: Option<f64> = None;
    for k in 0..budget {
        let Some(score) = kbest.get(graph.goal, k) else {
            break;
        };
        if cutoff.is_some_and(|c| score < c) {
            break;
        }
        let derivation: Vec<AppliedPhrase> = kbest
            .path(graph.goal, k)
            .into_iter()
            .map(|(start, len_idx, oi)| {
                let o = &options[start][len_idx][oi];
                AppliedPhrase {
                    source_start: o.start,
                    source_end: o.end,
                    target: o.target.clone(),
                    scores: o.scores,
                }
            })
            .collect();
        let target: Vec<String> = derivation.iter().flat_map(|p| p.target.iter().cloned()).collect();
        if seen.insert(target.clone()) {
            found.push(Translation {
                features: derivation_features(&derivation, lm),
                target,
                score,
                derivation,
            });
            if found.len() == n && cutoff.is_none() {
                cutoff = Some(score);
            }
        }
    }
    found.sort_by(tie_break);
    found.truncate(n);
    Ok(found)
}

/// The single best translation; identical to the head of [`nbest`].
pub fn decode<S: AsRef<str>>(
    sentence: &[S],
    table: &PhraseTable,
    lm: &NGramModel,
    weights: &WeightVector,
    config: &DecoderConfig,
) -> Result<Translation, DecodeError> {
    let mut list = nbest(sentence, table, lm, weights, config, 1)?;
    Ok(list.remove(0))
}

/// Decodes sentences in parallel; results keep input order.
pub fn nbest_corpus(
    sentences: &[Vec<String>],
    table: &PhraseTable,
    lm: &NGramModel,
    weights: &WeightVector,
    config: &DecoderConfig,
    n: usize,
) -> Vec<Result<Vec<Translation>, DecodeError>> {
    sentences
        .par_iter()
        .map(|s| nbest(s, table, lm, weights, config, n))
        .collect()
}

pub fn decode_corpus(
    sentences: &[Vec<String>],
    table: &PhraseTable,
    lm: &NGramModel,
    weights: &WeightVector,
    config: &DecoderConfig,
) -> Vec<Result<Translation, DecodeError>> {
    sentences
        .par_iter()
        .map(|s| decode(s, table, lm, weights, config))
        .collect()
}

/// `id ||| target ||| f1 … f7 ||| score` per entry.
pub fn format_nbest(sentence_id: usize, list: &[Translation]) -> String {
    let mut out = String::new();
    for t in list {
        let feats: Vec<String> = t.features.iter().map(|f| f.to_string()).collect();
        let _ = writeln!(
            out,
            "{} ||| {} ||| {} ||| {}",
            sentence_id,
            t.target.join(" "),
            feats.join(" "),
            t.score
        );
    }
    out
}

/// One parsed n-best line: sentence id, target, features, score.
pub type NbestEntry = (usize, Vec<String>, FeatureVector, f64);

pub fn parse_nbest_line(line: &str) -> Option<NbestEntry> {
    let parts: Vec<&str> = line.split(" ||| ").collect();
    if parts.len() != 4 {
        return None;
    }
    let id = parts[0].trim().parse().ok()?;
    let target = parts[1].split_whitespace().map(String::from).collect();
    let values: Vec<f64> = parts[2].split_whitespace().map(str::parse).collect::<Result<_, _>>().ok()?;
    let features: FeatureVector = values.try_into().ok()?;
    let score = parts[3].trim().parse().ok()?;
    Some((id, target, features, score))
}

pub fn load_nbest(path: &Path) -> Result<Vec<NbestEntry>, DecodeError> {
    let lines = read_lines(path)?;
    lines
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_nbest_line(l).ok_or_else(|| {
                DecodeError::InvalidConfig(format!("{}: malformed n-best line {}", path.display(), i + 1))
            })
        })
        .collect()
}
