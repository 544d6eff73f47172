//! Minimum error rate training: exact line search over n-best pools.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusError;
use crate::decoder::{DecodeError, FeatureVector, Translation, WeightVector, FEATURE_NAMES, NUM_FEATURES};
use crate::metrics::{BleuSmoothing, BleuStats};

pub const TUNE_BLEU_ORDER: usize = 4;

#[derive(Debug, Error)]
pub enum MertError {
    #[error("development set is empty")]
    EmptyDevSet,
    #[error("every development sentence failed to decode")]
    AllFailed,
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoolEntry {
    pub target: Vec<String>,
    pub features: FeatureVector,
    pub stats: BleuStats,
}

/// Accumulated distinct hypotheses for one development sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct SentencePool {
    pub reference: Vec<String>,
    pub entries: Vec<PoolEntry>,
}

impl SentencePool {
    pub fn new(reference: Vec<String>) -> Self {
        SentencePool {
            reference,
            entries: Vec::new(),
        }
    }

    /// Adds hypotheses with unseen targets; returns how many were added.
    pub fn merge<'a, I>(&mut self, hypotheses: I) -> usize
    where
        I: IntoIterator<Item = (&'a [String], FeatureVector)>,
    {
        let mut added = 0;
        for (target, features) in hypotheses {
            if self.entries.iter().any(|e| e.target == target) {
                continue;
            }
            self.entries.push(PoolEntry {
                stats: BleuStats::sentence(target, &self.reference, TUNE_BLEU_ORDER),
                target: target.to_vec(),
                features,
            });
            added += 1;
        }
        added
    }

    pub fn merge_translations(&mut self, list: &[Translation]) -> usize {
        self.merge(list.iter().map(|t| (t.target.as_slice(), t.features)))
    }

    /// Highest-scoring entry under `weights`; ties go to the earlier entry.
    pub fn best(&self, weights: &WeightVector) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in self.entries.iter().enumerate() {
            let s = weights.dot(&e.features);
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((i, s));
            }
        }
        best.map(|(i, _)| i)
    }
}

/// Corpus BLEU of the per-sentence argmax hypotheses. Empty pools are
/// skipped.
pub fn pool_bleu(pools: &[SentencePool], weights: &WeightVector, smoothing: BleuSmoothing) -> f64 {
    let mut total = BleuStats::zero(TUNE_BLEU_ORDER);
    for pool in pools {
        if let Some(i) = pool.best(weights) {
            total.add(&pool.entries[i].stats);
        }
    }
    total.score(smoothing).score
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearchResult {
    pub gamma: f64,
    pub bleu: f64,
}

/// Upper envelope of lines `intercept + slope·γ`: the winning entry index
/// and the γ where it starts winning, left to right.
fn upper_envelope(lines: &[(f64, f64)]) -> Vec<(f64, usize)> {
    let mut order: Vec<usize> = (0..lines.len()).collect();
    // Slope ascending; among equal slopes the higher intercept, then the
    // earlier entry, comes first and shadows the rest.
    order.sort_by(|&a, &b| {
        lines[a]
            .1
            .total_cmp(&lines[b].1)
            .then(lines[b].0.total_cmp(&lines[a].0))
            .then(a.cmp(&b))
    });
    let mut hull: Vec<(f64, usize)> = Vec::new();
    let mut last_slope: Option<f64> = None;
    for i in order {
        let (a, b) = lines[i];
        if last_slope == Some(b) {
            continue;
        }
        last_slope = Some(b);
        loop {
            let Some(&(x0, top)) = hull.last() else {
                hull.push((f64::NEG_INFINITY, i));
                break;
            };
            let (ta, tb) = lines[top];
            let x = (ta - a) / (b - tb);
            if x <= x0 {
                hull.pop();
                continue;
            }
            hull.push((x, i));
            break;
        }
    }
    hull
}

fn representative(lo: f64, hi: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (false, false) => 0.0,
        (false, true) => {
            if hi > 0.0 {
                0.0
            } else {
                hi - 1.0
            }
        }
        (true, false) => {
            if lo < 0.0 {
                0.0
            } else {
                lo + 1.0
            }
        }
        (true, true) => 0.5 * (lo + hi),
    }
}

/// Exact search for the step along `direction` maximizing pool BLEU.
///
/// Corpus BLEU is piecewise constant in γ; every interval between envelope
/// breakpoints is scored and the best one's midpoint returned, preferring
/// the smallest |γ| on ties.
pub fn line_search(
    pools: &[SentencePool],
    weights: &WeightVector,
    direction: &FeatureVector,
    smoothing: BleuSmoothing,
) -> LineSearchResult {
    let envelopes: Vec<Vec<(f64, usize)>> = pools
        .par_iter()
        .map(|pool| {
            let lines: Vec<(f64, f64)> = pool
                .entries
                .iter()
                .map(|e| {
                    let slope = direction.iter().zip(&e.features).map(|(d, f)| d * f).sum();
                    (weights.dot(&e.features), slope)
                })
                .collect();
            upper_envelope(&lines)
        })
        .collect();

    let mut stats = BleuStats::zero(TUNE_BLEU_ORDER);
    // (γ, pool, entry leaving, entry arriving)
    let mut events: Vec<(f64, usize, usize, usize)> = Vec::new();
    for (p, env) in envelopes.iter().enumerate() {
        if let Some(&(_, first)) = env.first() {
            stats.add(&pools[p].entries[first].stats);
        }
        for w in env.windows(2) {
            events.push((w[1].0, p, w[0].1, w[1].1));
        }
    }
    events.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut best = LineSearchResult {
        gamma: 0.0,
        bleu: f64::NEG_INFINITY,
    };
    let mut consider = |lo: f64, hi: f64, bleu: f64| {
        let gamma = representative(lo, hi);
        if bleu > best.bleu || (bleu == best.bleu && gamma.abs() < best.gamma.abs()) {
            best = LineSearchResult { gamma, bleu };
        }
    };
    let mut lo = f64::NEG_INFINITY;
    let mut k = 0;
    while k < events.len() {
        let x = events[k].0;
        consider(lo, x, stats.score(smoothing).score);
        while k < events.len() && events[k].0 == x {
            let (_, p, from, to) = events[k];
            stats.sub(&pools[p].entries[from].stats);
            stats.add(&pools[p].entries[to].stats);
            k += 1;
        }
        lo = x;
    }
    consider(lo, f64::INFINITY, stats.score(smoothing).score);
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    pub outer_iters: usize,
    pub nbest: usize,
    /// Random search directions per iteration, on top of the coordinate axes.
    pub random_directions: usize,
    pub seed: u64,
    /// An iteration gaining less pool BLEU than this ends tuning.
    pub min_gain: f64,
    /// Accepted line-search steps per iteration.
    pub max_steps_per_iter: usize,
    /// Extra random starting points per iteration; the current and earlier
    /// weights are always tried as well.
    pub random_restarts: usize,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            outer_iters: 10,
            nbest: 100,
            random_directions: 8,
            seed: 1,
            min_gain: 1e-4,
            max_steps_per_iter: 20,
            random_restarts: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuningState {
    pub weights: WeightVector,
    pub pools: Vec<SentencePool>,
    /// Pool BLEU after each completed outer iteration.
    pub history: Vec<f64>,
    /// Weights after each completed outer iteration.
    pub weight_history: Vec<WeightVector>,
    /// Decode failures summed over iterations.
    pub failures: usize,
}

impl TuningState {
    /// `iter<TAB>pool_bleu<TAB>w1<TAB>…<TAB>w7` per completed iteration.
    pub fn log_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# iter\tpool_bleu\t{}", FEATURE_NAMES.join("\t"));
        for (i, (b, w)) in self.history.iter().zip(&self.weight_history).enumerate() {
            let ws: Vec<String> = w.0.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "{}\t{}\t{}", i + 1, b, ws.join("\t"));
        }
        out
    }

    pub fn write_log(&self, path: &Path) -> Result<(), MertError> {
        std::fs::write(path, self.log_text()).map_err(|e| MertError::Decode(CorpusError::io(path, e).into()))
    }
}

fn directions(rng: &mut ChaCha8Rng, random: usize) -> Vec<FeatureVector> {
    let mut dirs = Vec::with_capacity(NUM_FEATURES + random);
    for k in 0..NUM_FEATURES {
        let mut d = [0.0; NUM_FEATURES];
        d[k] = 1.0;
        dirs.push(d);
    }
    for _ in 0..random {
        let mut d = [0.0; NUM_FEATURES];
        for x in d.iter_mut() {
            *x = rng.gen_range(-1.0..=1.0);
        }
        dirs.push(d);
    }
    dirs
}

/// Repeated line searches until none improves pool BLEU. Returns the new
/// weights and their pool BLEU.
pub fn optimize_pools(
    pools: &[SentencePool],
    init: WeightVector,
    rng: &mut ChaCha8Rng,
    config: &TuneConfig,
) -> (WeightVector, f64) {
    let mut weights = init;
    let mut current = pool_bleu(pools, &weights, BleuSmoothing::Add1);
    for _ in 0..config.max_steps_per_iter {
        let dirs = directions(rng, config.random_directions);
        let mut best: Option<(f64, WeightVector)> = None;
        for d in &dirs {
            let r = line_search(pools, &weights, d, BleuSmoothing::Add1);
            if r.gamma != 0.0 && r.bleu > current && best.is_none_or(|(b, _)| r.bleu > b) {
                best = Some((r.bleu, weights.step(d, r.gamma)));
            }
        }
        match best {
            Some((b, w)) => {
                // guard against an envelope/argmax disagreement at a tie
                let actual = pool_bleu(pools, &w, BleuSmoothing::Add1);
                if actual <= current {
                    break;
                }
                log::debug!("line search step: pool BLEU {:.6} -> {:.6} (envelope {:.6})", current, actual, b);
                weights = w;
                current = actual;
            }
            None => break,
        }
    }
    (weights, current)
}

/// Development pair: source tokens and reference tokens.
pub type DevPair = (Vec<String>, Vec<String>);

/// MERT over a development set. `decode_nbest(source, weights, n)` supplies
/// n-best lists; sentences it fails on are left out and counted.
pub fn tune<F>(dev: &[DevPair], decode_nbest: F, init: WeightVector, config: &TuneConfig) -> Result<(WeightVector, TuningState), MertError>
where
    F: Fn(&[String], &WeightVector, usize) -> Result<Vec<Translation>, DecodeError> + Sync,
{
    if dev.is_empty() {
        return Err(MertError::EmptyDevSet);
    }
    let mut state = TuningState {
        weights: init,
        pools: dev.iter().map(|(_, r)| SentencePool::new(r.clone())).collect(),
        history: Vec::new(),
        weight_history: Vec::new(),
        failures: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for iter in 0..config.outer_iters {
        let lists: Vec<Result<Vec<Translation>, DecodeError>> = dev
            .par_iter()
            .map(|(src, _)| decode_nbest(src, &state.weights, config.nbest))
            .collect();
        let mut added = 0;
        let mut failed = 0;
        for (pool, list) in state.pools.iter_mut().zip(&lists) {
            match list {
                Ok(list) => added += pool.merge_translations(list),
                Err(e) => {
                    failed += 1;
                    log::debug!("dev sentence skipped: {}", e);
                }
            }
        }
        if failed > 0 {
            log::warn!("tuning iteration {}: {} dev sentences failed to decode", iter + 1, failed);
        }
        state.failures += failed;
        if state.pools.iter().all(|p| p.entries.is_empty()) {
            return Err(MertError::AllFailed);
        }

        let before = pool_bleu(&state.pools, &state.weights, BleuSmoothing::Add1);
        let mut starts = vec![state.weights];
        for w in state.weight_history.iter().rev() {
            if !starts.contains(w) {
                starts.push(*w);
            }
        }
        for _ in 0..config.random_restarts {
            let mut w = [0.0; NUM_FEATURES];
            for x in w.iter_mut() {
                *x = rng.gen_range(-1.0..=1.0);
            }
            starts.push(WeightVector(w));
        }
        // earlier starts win ties, so optimal current weights are kept
        let mut best: Option<(WeightVector, f64)> = None;
        for start in starts {
            let (w, b) = optimize_pools(&state.pools, start, &mut rng, config);
            if best.is_none_or(|(_, bb)| b > bb) {
                best = Some((w, b));
            }
        }
        let (weights, after) = best.expect("at least the current weights are tried");
        state.weights = weights;
        state.history.push(after);
        state.weight_history.push(weights);
        log::info!(
            "tuning iteration {}: {} new hypotheses, pool BLEU {:.4} -> {:.4}",
            iter + 1,
            added,
            before,
            after
        );
        if after - before < config.min_gain {
            break;
        }
    }
    Ok((state.weights, state))
}
