//! BLEU, TER and an exact-match METEOR variant.
//!
//! All metrics work on tokenized, case-sensitive text with a single
//! reference per hypothesis.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::corpus::{read_lines, CorpusError};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("{hyps} hypotheses but {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("empty reference at sentence {0}")]
    EmptyReference(usize),
    #[error("max_n must be at least 1")]
    InvalidOrder,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BleuSmoothing {
    None,
    /// Add one to numerator and denominator for orders 2 and up.
    Add1,
}

/// Sufficient statistics for corpus BLEU; sums of per-sentence stats give
/// the corpus stats.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    /// Clipped n-gram matches, index n-1.
    pub matches: Vec<u64>,
    /// Hypothesis n-gram counts.
    pub hyp_ngrams: Vec<u64>,
    /// Reference n-gram counts.
    pub ref_ngrams: Vec<u64>,
    pub hyp_len: u64,
    pub ref_len: u64,
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

impl BleuStats {
    pub fn zero(max_n: usize) -> Self {
        BleuStats {
            matches: vec![0; max_n],
            hyp_ngrams: vec![0; max_n],
            ref_ngrams: vec![0; max_n],
            hyp_len: 0,
            ref_len: 0,
        }
    }

    pub fn sentence<S: AsRef<str>, R: AsRef<str>>(hyp: &[S], reference: &[R], max_n: usize) -> Self {
        let mut stats = BleuStats::zero(max_n);
        stats.hyp_len = hyp.len() as u64;
        stats.ref_len = reference.len() as u64;
        for n in 1..=max_n {
            let h = ngram_counts(hyp, n);
            let r = ngram_counts(reference, n);
            stats.matches[n - 1] = h.iter().map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0))).sum();
            stats.hyp_ngrams[n - 1] = hyp.len().saturating_sub(n - 1) as u64;
            stats.ref_ngrams[n - 1] = reference.len().saturating_sub(n - 1) as u64;
        }
        stats
    }

    pub fn max_n(&self) -> usize {
        self.matches.len()
    }

    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..self.max_n() {
            self.matches[n] += other.matches[n];
            self.hyp_ngrams[n] += other.hyp_ngrams[n];
            self.ref_ngrams[n] += other.ref_ngrams[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    pub fn sub(&mut self, other: &BleuStats) {
        for n in 0..self.max_n() {
            self.matches[n] -= other.matches[n];
            self.hyp_ngrams[n] -= other.hyp_ngrams[n];
            self.ref_ngrams[n] -= other.ref_ngrams[n];
        }
        self.hyp_len -= other.hyp_len;
        self.ref_len -= other.ref_len;
    }

    /// Orders for which neither side has any n-gram (every sentence shorter
    /// than n) are left out of the geometric mean.
    pub fn score(&self, smoothing: BleuSmoothing) -> BleuScore {
        let (c, r) = (self.hyp_len as f64, self.ref_len as f64);
        let brevity_penalty = if self.hyp_len == 0 {
            0.0
        } else if c < r {
            (1.0 - r / c).exp()
        } else {
            1.0
        };
        let mut precisions = Vec::with_capacity(self.max_n());
        let mut log_sum = 0.0;
        let mut used = 0usize;
        let mut zero = false;
        for n in 0..self.max_n() {
            let (m, t) = (self.matches[n] as f64, self.hyp_ngrams[n] as f64);
            let p = match smoothing {
                BleuSmoothing::Add1 if n > 0 => (m + 1.0) / (t + 1.0),
                _ if t == 0.0 => 0.0,
                _ => m / t,
            };
            precisions.push(p);
            if self.hyp_ngrams[n] == 0 && self.ref_ngrams[n] == 0 {
                continue;
            }
            used += 1;
            if p == 0.0 {
                zero = true;
            } else {
                log_sum += p.ln();
            }
        }
        let score = if zero || used == 0 {
            0.0
        } else {
            brevity_penalty * (log_sum / used as f64).exp()
        };
        BleuScore {
            score,
            precisions,
            brevity_penalty,
            hyp_len: self.hyp_len,
            ref_len: self.ref_len,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BleuScore {
    /// In [0, 1].
    pub score: f64,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
}

/// Corpus-level BLEU with n-gram statistics pooled over all sentences.
pub fn bleu<S: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[Vec<S>],
    references: &[Vec<R>],
    max_n: usize,
    smoothing: BleuSmoothing,
) -> Result<BleuScore, MetricError> {
    if hypotheses.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            hyps: hypotheses.len(),
            refs: references.len(),
        });
    }
    if max_n == 0 {
        return Err(MetricError::InvalidOrder);
    }
    let mut total = BleuStats::zero(max_n);
    for (h, r) in hypotheses.iter().zip(references) {
        total.add(&BleuStats::sentence(h, r, max_n));
    }
    Ok(total.score(smoothing))
}

const TER_MAX_SHIFT_LEN: usize = 10;
const TER_MAX_SHIFTS: usize = 50;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TerEdits {
    /// Hypothesis words with no reference counterpart.
    pub insertions: usize,
    /// Reference words missing from the hypothesis.
    pub deletions: usize,
    pub substitutions: usize,
    pub shifts: usize,
}

impl TerEdits {
    pub fn total(&self) -> usize {
        self.insertions + self.deletions + self.substitutions + self.shifts
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TerResult {
    pub edits: TerEdits,
    pub ref_len: usize,
    /// edits / reference length
    pub score: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Op {
    Match,
    Sub,
    Ins,
    Del,
}

/// Word-level Levenshtein distance with the edit path, from hypothesis to
/// reference.
fn edit_path<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> (usize, Vec<Op>) {
    let (n, m) = (hyp.len(), reference.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let same = hyp[i - 1].as_ref() == reference[j - 1].as_ref();
            d[i][j] = (d[i - 1][j - 1] + usize::from(!same))
                .min(d[i - 1][j] + 1)
                .min(d[i][j - 1] + 1);
        }
    }
    let mut ops = Vec::with_capacity(n.max(m));
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 {
            let same = hyp[i - 1].as_ref() == reference[j - 1].as_ref();
            if d[i][j] == d[i - 1][j - 1] + usize::from(!same) {
                ops.push(if same { Op::Match } else { Op::Sub });
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if i > 0 && d[i][j] == d[i - 1][j] + 1 {
            ops.push(Op::Ins);
            i -= 1;
        } else {
            ops.push(Op::Del);
            j -= 1;
        }
    }
    ops.reverse();
    (d[n][m], ops)
}

fn edit_distance<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> usize {
    let m = reference.len();
    let mut prev: Vec<usize> = (0..=m).collect();
    let mut cur = vec![0usize; m + 1];
    for (i, h) in hyp.iter().enumerate() {
        cur[0] = i + 1;
        for j in 1..=m {
            let same = h.as_ref() == reference[j - 1].as_ref();
            cur[j] = (prev[j - 1] + usize::from(!same)).min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[m]
}

/// For each reference position, the hypothesis index it is aligned with (or
/// would be inserted before) under the edit path.
fn ref_to_hyp(ops: &[Op]) -> Vec<usize> {
    let mut map = Vec::new();
    let mut h = 0;
    for op in ops {
        match op {
            Op::Match | Op::Sub => {
                map.push(h);
                h += 1;
            }
            Op::Ins => h += 1,
            Op::Del => map.push(h),
        }
    }
    map
}

fn shifted<'a>(h: &[&'a str], start: usize, len: usize, dest: usize) -> Vec<&'a str> {
    let mut rest: Vec<&str> = Vec::with_capacity(h.len());
    rest.extend_from_slice(&h[..start]);
    rest.extend_from_slice(&h[start + len..]);
    let mut out = Vec::with_capacity(h.len());
    out.extend_from_slice(&rest[..dest]);
    out.extend_from_slice(&h[start..start + len]);
    out.extend_from_slice(&rest[dest..]);
    out
}

/// Translation edit rate with greedy block shifts.
///
/// A shift moves a hypothesis block that occurs verbatim in the reference to
/// where that reference occurrence sits. The shift that lowers the edit
/// distance most is applied until none helps; each shift costs one edit.
pub fn ter<S: AsRef<str>, R: AsRef<str>>(hypothesis: &[S], reference: &[R]) -> Result<TerResult, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference(0));
    }
    let reference: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let mut hyp: Vec<&str> = hypothesis.iter().map(AsRef::as_ref).collect();
    let mut shifts = 0;
    let (mut dist, mut ops) = edit_path(&hyp, &reference);

    while shifts < TER_MAX_SHIFTS && dist > 0 {
        let anchors = ref_to_hyp(&ops);
        let mut best: Option<(usize, Vec<&str>)> = None;
        for len in (1..=TER_MAX_SHIFT_LEN.min(hyp.len())).rev() {
            for start in 0..=hyp.len() - len {
                let block = &hyp[start..start + len];
                if len > reference.len() {
                    continue;
                }
                for j in 0..=reference.len() - len {
                    if &reference[j..j + len] != block {
                        continue;
                    }
                    let anchor = anchors[j];
                    let aligned = if anchor > start { anchor.saturating_sub(len).max(start) } else { anchor };
                    let mut dests = vec![j.min(hyp.len() - len), aligned.min(hyp.len() - len)];
                    dests.dedup();
                    for dest in dests {
                        if dest == start {
                            continue;
                        }
                        let cand = shifted(&hyp, start, len, dest);
                        let d = edit_distance(&cand, &reference);
                        if d < dist && best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                            best = Some((d, cand));
                        }
                    }
                }
            }
        }
        match best {
            Some((_, cand)) => {
                hyp = cand;
                shifts += 1;
                (dist, ops) = edit_path(&hyp, &reference);
            }
            None => break,
        }
    }

    let mut edits = TerEdits {
        shifts,
        ..Default::default()
    };
    for op in ops {
        match op {
            Op::Match => {}
            Op::Sub => edits.substitutions += 1,
            Op::Ins => edits.insertions += 1,
            Op::Del => edits.deletions += 1,
        }
    }
    Ok(TerResult {
        score: edits.total() as f64 / reference.len() as f64,
        edits,
        ref_len: reference.len(),
    })
}

/// TER with shifts disabled: plain edit distance over reference length.
pub fn ter_without_shifts<S: AsRef<str>, R: AsRef<str>>(hypothesis: &[S], reference: &[R]) -> Result<f64, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference(0));
    }
    let h: Vec<&str> = hypothesis.iter().map(AsRef::as_ref).collect();
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    Ok(edit_distance(&h, &r) as f64 / r.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeteorParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for MeteorParams {
    fn default() -> Self {
        MeteorParams {
            alpha: 0.9,
            beta: 3.0,
            gamma: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeteorResult {
    pub score: f64,
    pub precision: f64,
    pub recall: f64,
    pub fmean: f64,
    pub penalty: f64,
    pub chunks: usize,
    pub matches: usize,
}

/// Search budget for the chunk-minimizing alignment; past it the best
/// alignment found so far is used.
const METEOR_SEARCH_BUDGET: usize = 200_000;

struct ChunkSearch<'a> {
    hyp: &'a [&'a str],
    ref_positions: HashMap<&'a str, Vec<usize>>,
    ref_used: Vec<bool>,
    /// Hypothesis tokens of each word that must stay unmatched.
    skips_left: HashMap<&'a str, usize>,
    best: usize,
    nodes: usize,
}

impl ChunkSearch<'_> {
    /// `prev` is the reference position matched by hypothesis token `i - 1`.
    fn search(&mut self, i: usize, prev: Option<usize>, chunks: usize) {
        self.nodes += 1;
        if chunks >= self.best || (self.nodes > METEOR_SEARCH_BUDGET && self.best != usize::MAX) {
            return;
        }
        if i == self.hyp.len() {
            self.best = chunks;
            return;
        }
        let word = self.hyp[i];
        let candidates: Vec<usize> = match self.ref_positions.get(word) {
            Some(ps) => {
                let mut free: Vec<usize> = ps.iter().copied().filter(|&p| !self.ref_used[p]).collect();
                // continuing the current chunk first finds good bounds early
                if let Some(next) = prev.map(|p| p + 1) {
                    if let Some(k) = free.iter().position(|&p| p == next) {
                        free.swap(0, k);
                    }
                }
                free
            }
            None => Vec::new(),
        };
        let must_skip = candidates.is_empty();
        if !must_skip {
            for r in candidates {
                let extends = prev.is_some_and(|p| p + 1 == r);
                self.ref_used[r] = true;
                self.search(i + 1, Some(r), chunks + usize::from(!extends));
                self.ref_used[r] = false;
            }
        }
        let skips = self.skips_left.get(word).copied().unwrap_or(0);
        if must_skip || skips > 0 {
            if !must_skip {
                self.skips_left.insert(word, skips - 1);
            }
            self.search(i + 1, None, chunks);
            if !must_skip {
                self.skips_left.insert(word, skips);
            }
        }
    }
}

/// Exact unigram matching with a fragmentation penalty.
pub fn meteor_lite<S: AsRef<str>, R: AsRef<str>>(
    hypothesis: &[S],
    reference: &[R],
    params: MeteorParams,
) -> MeteorResult {
    let hyp: Vec<&str> = hypothesis.iter().map(AsRef::as_ref).collect();
    let reference: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let mut hyp_counts: HashMap<&str, usize> = HashMap::new();
    for w in &hyp {
        *hyp_counts.entry(w).or_insert(0) += 1;
    }
    let mut ref_positions: HashMap<&str, Vec<usize>> = HashMap::new();
    for (j, w) in reference.iter().enumerate() {
        ref_positions.entry(w).or_default().push(j);
    }
    let mut matches = 0;
    let mut skips_left = HashMap::new();
    for (w, &hc) in &hyp_counts {
        let rc = ref_positions.get(w).map_or(0, Vec::len);
        matches += hc.min(rc);
        if rc > 0 {
            skips_left.insert(*w, hc.saturating_sub(rc));
        }
    }
    if matches == 0 {
        return MeteorResult {
            score: 0.0,
            precision: 0.0,
            recall: 0.0,
            fmean: 0.0,
            penalty: 0.0,
            chunks: 0,
            matches: 0,
        };
    }

    let mut search = ChunkSearch {
        hyp: &hyp,
        ref_positions,
        ref_used: vec![false; reference.len()],
        skips_left,
        best: usize::MAX,
        nodes: 0,
    };
    search.search(0, None, 0);
    let chunks = search.best;

    let m = matches as f64;
    let precision = m / hyp.len() as f64;
    let recall = m / reference.len() as f64;
    let fmean = precision * recall / (params.alpha * precision + (1.0 - params.alpha) * recall);
    let penalty = params.gamma * (chunks as f64 / m).powf(params.beta);
    MeteorResult {
        score: fmean * (1.0 - penalty),
        precision,
        recall,
        fmean,
        penalty,
        chunks,
        matches,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceEval {
    pub bleu: BleuStats,
    pub meteor: MeteorResult,
    pub ter: TerResult,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Corpus BLEU, unsmoothed, up to 4-grams.
    pub bleu: BleuScore,
    /// Mean sentence METEOR.
    pub meteor: f64,
    /// Total edits over total reference words.
    pub ter: f64,
    pub total_edits: usize,
    pub total_ref_len: usize,
    pub sentences: Vec<SentenceEval>,
}

impl EvalReport {
    pub fn bleu100(&self) -> f64 {
        self.bleu.score * 100.0
    }

    pub fn ter100(&self) -> f64 {
        self.ter * 100.0
    }

    /// `metric<TAB>value` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "bleu\t{}", self.bleu100());
        let _ = writeln!(out, "meteor\t{}", self.meteor);
        let _ = writeln!(out, "ter\t{}", self.ter100());
        let _ = writeln!(out, "brevity_penalty\t{}", self.bleu.brevity_penalty);
        for (n, p) in self.bleu.precisions.iter().enumerate() {
            let _ = writeln!(out, "precision_{}\t{}", n + 1, p);
        }
        let _ = writeln!(out, "hyp_len\t{}", self.bleu.hyp_len);
        let _ = writeln!(out, "ref_len\t{}", self.bleu.ref_len);
        let _ = writeln!(out, "edits\t{}", self.total_edits);
        let _ = writeln!(out, "sentences\t{}", self.sentences.len());
        out
    }
}

pub const EVAL_BLEU_ORDER: usize = 4;

/// Scores tokenized hypotheses against references with all three metrics.
pub fn evaluate<S: AsRef<str>, R: AsRef<str>>(hypotheses: &[Vec<S>], references: &[Vec<R>]) -> Result<EvalReport, MetricError> {
    if hypotheses.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            hyps: hypotheses.len(),
            refs: references.len(),
        });
    }
    let mut sentences = Vec::with_capacity(hypotheses.len());
    let mut total = BleuStats::zero(EVAL_BLEU_ORDER);
    let (mut edits, mut ref_len, mut meteor_sum) = (0, 0, 0.0);
    for (i, (h, r)) in hypotheses.iter().zip(references).enumerate() {
        let ter = ter(h, r).map_err(|_| MetricError::EmptyReference(i + 1))?;
        let stats = BleuStats::sentence(h, r, EVAL_BLEU_ORDER);
        total.add(&stats);
        edits += ter.edits.total();
        ref_len += ter.ref_len;
        let meteor = meteor_lite(h, r, MeteorParams::default());
        meteor_sum += meteor.score;
        sentences.push(SentenceEval { bleu: stats, meteor, ter });
    }
    let n = sentences.len().max(1) as f64;
    Ok(EvalReport {
        bleu: total.score(BleuSmoothing::None),
        meteor: meteor_sum / n,
        ter: if ref_len == 0 { 0.0 } else { edits as f64 / ref_len as f64 },
        total_edits: edits,
        total_ref_len: ref_len,
        sentences,
    })
}

/// Reads two line-aligned files of whitespace-tokenized text and scores them.
pub fn evaluate_corpus(hyp_path: &Path, ref_path: &Path) -> Result<EvalReport, MetricError> {
    let split = |lines: Vec<String>| -> Vec<Vec<String>> {
        lines
            .iter()
            .map(|l| l.split_whitespace().map(String::from).collect())
            .collect()
    };
    let hyps = split(read_lines(hyp_path)?);
    let refs = split(read_lines(ref_path)?);
    evaluate(&hyps, &refs)
}

/// One row of a system comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub system: String,
    pub tuned: bool,
    /// `(BLEU×100, METEOR, TER×100)` or the reason the row failed.
    pub scores: Result<(f64, f64, f64), String>,
}

/// Text table with one row per system and BLEU / METEOR / TER columns.
pub fn format_report(rows: &[ReportRow]) -> String {
    let width = rows.iter().map(|r| r.system.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:<14}  {:>10}  {:>7}  {:>7}",
        "System", "Tuning", "BLEU score", "METEOR", "TER",
        width = width
    );
    for row in rows {
        let tuning = if row.tuned { "With Tuning" } else { "Without Tuning" };
        match &row.scores {
            Ok((b, m, t)) => {
                let _ = writeln!(
                    out,
                    "{:<width$}  {:<14}  {:>10.2}  {:>7.3}  {:>7.2}",
                    row.system,
                    tuning,
                    b,
                    m,
                    t,
                    width = width
                );
            }
            Err(e) => {
                let _ = writeln!(out, "{:<width$}  {:<14}  FAILED: {}", row.system, tuning, e, width = width);
            }
        }
    }
    out
}
