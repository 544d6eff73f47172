//! IBM Model 1 lexical translation training and word alignment.
//!
//! The table stores `t(target | source)`, normalized over target words for
//! each source word. A reserved `NULL` source word absorbs target tokens with
//! no good source counterpart.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{read_lines, CorpusError, ParallelCorpus, SentencePair};

pub const NULL_WORD: &str = "NULL";

/// Probability used for pairs the table has never seen.
pub const OOV_FLOOR: f64 = 1e-7;

/// Pairs per E-step shard. Fixed so that the floating point summation order
/// does not depend on the thread count.
const SHARD_SIZE: usize = 256;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("no clean sentence pairs to train on")]
    EmptyCorpus,
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error("alignment dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("link {0}-{1} out of bounds for {2}x{3} alignment")]
    OutOfBounds(usize, usize, usize, usize),
    #[error("malformed {what} at line {line}: {text}")]
    Parse {
        what: &'static str,
        line: usize,
        text: String,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TranslationTable {
    /// source word -> target word -> t(target | source)
    probs: HashMap<String, HashMap<String, f64>>,
    has_null: bool,
}

impl TranslationTable {
    /// Builds a table from explicit `(source, target, probability)` triples.
    pub fn from_entries<I, S, T>(entries: I, has_null: bool) -> Self
    where
        I: IntoIterator<Item = (S, T, f64)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut probs: HashMap<String, HashMap<String, f64>> = HashMap::new();
        for (s, t, p) in entries {
            probs.entry(s.into()).or_default().insert(t.into(), p);
        }
        TranslationTable { probs, has_null }
    }

    pub fn has_null(&self) -> bool {
        self.has_null
    }

    /// `t(target | source)`, or `None` if the pair was never seen.
    pub fn get(&self, source: &str, target: &str) -> Option<f64> {
        self.probs.get(source)?.get(target).copied()
    }

    /// `t(target | source)` with [`OOV_FLOOR`] for unseen pairs.
    pub fn prob(&self, source: &str, target: &str) -> f64 {
        self.get(source, target).unwrap_or(OOV_FLOOR)
    }

    pub fn source_words(&self) -> impl Iterator<Item = &str> {
        self.probs.keys().map(String::as_str)
    }

    /// Distribution over targets for one source word.
    pub fn row(&self, source: &str) -> Option<&HashMap<String, f64>> {
        self.probs.get(source)
    }

    pub fn len(&self) -> usize {
        self.probs.values().map(HashMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Largest deviation from 1 of any per-source distribution.
    pub fn max_normalization_error(&self) -> f64 {
        self.probs
            .values()
            .map(|row| {
                let mut keys: Vec<_> = row.keys().collect();
                keys.sort();
                (keys.iter().map(|k| row[*k]).sum::<f64>() - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// `source<TAB>target<TAB>probability`, sorted by source word then by
    /// descending probability (ties by target word).
    pub fn to_text(&self) -> String {
        let mut sources: Vec<&String> = self.probs.keys().collect();
        sources.sort();
        let mut out = String::new();
        for s in sources {
            let mut row: Vec<(&String, f64)> = self.probs[s].iter().map(|(t, p)| (t, *p)).collect();
            row.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            for (t, p) in row {
                let _ = writeln!(out, "{}\t{}\t{}", s, t, p);
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), AlignError> {
        fs::write(path, self.to_text()).map_err(|e| CorpusError::io(path, e).into())
    }

    pub fn load(path: &Path) -> Result<Self, AlignError> {
        let mut entries = Vec::new();
        let mut has_null = false;
        for (i, line) in read_lines(path)?.into_iter().enumerate() {
            if line.is_empty() {
                continue;
            }
            let parse_err = || AlignError::Parse {
                what: "translation table entry",
                line: i + 1,
                text: line.clone(),
            };
            let mut cols = line.split('\t');
            let (Some(s), Some(t), Some(p), None) = (cols.next(), cols.next(), cols.next(), cols.next()) else {
                return Err(parse_err());
            };
            let p: f64 = p.parse().map_err(|_| parse_err())?;
            has_null |= s == NULL_WORD;
            entries.push((s.to_string(), t.to_string(), p));
        }
        Ok(TranslationTable::from_entries(entries, has_null))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model1Config {
    pub iterations: usize,
    pub use_null: bool,
    /// Stop once the per-pair log-likelihood gain drops below this.
    pub min_gain_per_pair: Option<f64>,
}

impl Default for Model1Config {
    fn default() -> Self {
        Model1Config {
            iterations: 10,
            use_null: true,
            min_gain_per_pair: Some(1e-6),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model1 {
    pub table: TranslationTable,
    /// Corpus log-likelihood under the table produced by each iteration.
    pub log_likelihood: Vec<f64>,
}

struct Interned {
    source_words: Vec<String>,
    target_words: Vec<String>,
    /// (source ids with NULL first if enabled, target ids)
    pairs: Vec<(Vec<u32>, Vec<u32>)>,
}

fn intern(corpus: &ParallelCorpus, use_null: bool) -> Interned {
    let mut source_words = Vec::new();
    let mut target_words = Vec::new();
    let mut source_ids: HashMap<&str, u32> = HashMap::new();
    let mut target_ids: HashMap<&str, u32> = HashMap::new();
    if use_null {
        source_words.push(NULL_WORD.to_string());
        source_ids.insert(NULL_WORD, 0);
    }
    let mut pairs = Vec::new();
    for pair in corpus.clean_pairs() {
        if pair.target.is_empty() || (pair.source.is_empty() && !use_null) {
            continue;
        }
        let mut src: Vec<u32> = Vec::with_capacity(pair.source.len() + 1);
        if use_null {
            src.push(0);
        }
        for w in &pair.source {
            let id = *source_ids.entry(w.as_str()).or_insert_with(|| {
                source_words.push(w.clone());
                (source_words.len() - 1) as u32
            });
            src.push(id);
        }
        let tgt = pair
            .target
            .iter()
            .map(|w| {
                *target_ids.entry(w.as_str()).or_insert_with(|| {
                    target_words.push(w.clone());
                    (target_words.len() - 1) as u32
                })
            })
            .collect();
        pairs.push((src, tgt));
    }
    Interned {
        source_words,
        target_words,
        pairs,
    }
}

type Probs = HashMap<(u32, u32), f64>;

fn log_likelihood(pairs: &[(Vec<u32>, Vec<u32>)], t: &Probs) -> f64 {
    pairs
        .par_chunks(SHARD_SIZE)
        .map(|shard| {
            let mut ll = 0.0;
            for (src, tgt) in shard {
                let norm = (src.len() as f64).ln();
                for &f in tgt {
                    let z: f64 = src.iter().map(|&e| t[&(e, f)]).sum();
                    ll += z.ln() - norm;
                }
            }
            ll
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}

fn expected_counts(shard: &[(Vec<u32>, Vec<u32>)], t: &Probs) -> Vec<((u32, u32), f64)> {
    let mut counts: HashMap<(u32, u32), f64> = HashMap::new();
    let mut order: Vec<(u32, u32)> = Vec::new();
    for (src, tgt) in shard {
        for &f in tgt {
            let z: f64 = src.iter().map(|&e| t[&(e, f)]).sum();
            for &e in src {
                let c = t[&(e, f)] / z;
                counts
                    .entry((e, f))
                    .and_modify(|v| *v += c)
                    .or_insert_with(|| {
                        order.push((e, f));
                        c
                    });
            }
        }
    }
    order.into_iter().map(|k| (k, counts[&k])).collect()
}

/// Trains Model 1 by EM over the clean pairs of `corpus`.
pub fn train_model1(corpus: &ParallelCorpus, config: &Model1Config) -> Result<Model1, AlignError> {
    if config.iterations == 0 {
        return Err(AlignError::NoIterations);
    }
    let data = intern(corpus, config.use_null);
    if data.pairs.is_empty() {
        return Err(AlignError::EmptyCorpus);
    }

    // uniform start over cooccurring pairs
    let init = 1.0 / data.target_words.len() as f64;
    let mut t: Probs = HashMap::new();
    for (src, tgt) in &data.pairs {
        for &e in src {
            for &f in tgt {
                t.insert((e, f), init);
            }
        }
    }

    let n_pairs = data.pairs.len() as f64;
    let mut history: Vec<f64> = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let shards: Vec<Vec<((u32, u32), f64)>> = data
            .pairs
            .par_chunks(SHARD_SIZE)
            .map(|shard| expected_counts(shard, &t))
            .collect();

        let mut counts: Probs = HashMap::with_capacity(t.len());
        let mut totals = vec![0.0f64; data.source_words.len()];
        for shard in shards {
            for ((e, f), c) in shard {
                *counts.entry((e, f)).or_insert(0.0) += c;
                totals[e as usize] += c;
            }
        }
        for ((e, _), c) in counts.iter_mut() {
            *c /= totals[*e as usize];
        }
        t = counts;

        let ll = log_likelihood(&data.pairs, &t);
        let converged = match (history.last(), config.min_gain_per_pair) {
            (Some(prev), Some(min_gain)) => (ll - prev) / n_pairs < min_gain,
            _ => false,
        };
        history.push(ll);
        if converged {
            break;
        }
    }

    let mut probs: HashMap<String, HashMap<String, f64>> = HashMap::new();
    for ((e, f), p) in t {
        probs
            .entry(data.source_words[e as usize].clone())
            .or_default()
            .insert(data.target_words[f as usize].clone(), p);
    }
    Ok(Model1 {
        table: TranslationTable {
            probs,
            has_null: config.use_null,
        },
        log_likelihood: history,
    })
}

/// Word links for one sentence pair as `(source_index, target_index)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AlignmentMatrix {
    source_len: usize,
    target_len: usize,
    links: BTreeSet<(usize, usize)>,
}

impl AlignmentMatrix {
    pub fn new<I>(source_len: usize, target_len: usize, links: I) -> Result<Self, AlignError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let links: BTreeSet<(usize, usize)> = links.into_iter().collect();
        if let Some(&(i, j)) = links.iter().find(|(i, j)| *i >= source_len || *j >= target_len) {
            return Err(AlignError::OutOfBounds(i, j, source_len, target_len));
        }
        Ok(AlignmentMatrix {
            source_len,
            target_len,
            links,
        })
    }

    pub fn empty(source_len: usize, target_len: usize) -> Self {
        AlignmentMatrix {
            source_len,
            target_len,
            links: BTreeSet::new(),
        }
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }

    pub fn links(&self) -> &BTreeSet<(usize, usize)> {
        &self.links
    }

    pub fn contains(&self, source: usize, target: usize) -> bool {
        self.links.contains(&(source, target))
    }

    /// Swaps the roles of source and target.
    pub fn transposed(&self) -> AlignmentMatrix {
        AlignmentMatrix {
            source_len: self.target_len,
            target_len: self.source_len,
            links: self.links.iter().map(|&(i, j)| (j, i)).collect(),
        }
    }

    /// `i-j` pairs separated by spaces.
    pub fn to_line(&self) -> String {
        self.links
            .iter()
            .map(|(i, j)| format!("{}-{}", i, j))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse_line(line: &str, source_len: usize, target_len: usize) -> Result<Self, AlignError> {
        let parse_err = || AlignError::Parse {
            what: "alignment",
            line: 0,
            text: line.to_string(),
        };
        let mut links = Vec::new();
        for item in line.split_whitespace() {
            let (i, j) = item.split_once('-').ok_or_else(parse_err)?;
            links.push((
                i.parse().map_err(|_| parse_err())?,
                j.parse().map_err(|_| parse_err())?,
            ));
        }
        AlignmentMatrix::new(source_len, target_len, links)
    }

    fn same_shape(&self, other: &AlignmentMatrix) -> Result<(), AlignError> {
        if self.source_len != other.source_len || self.target_len != other.target_len {
            return Err(AlignError::DimensionMismatch(
                self.source_len,
                self.target_len,
                other.source_len,
                other.target_len,
            ));
        }
        Ok(())
    }
}

/// Links each target token to its most probable source token. NULL wins only
/// when strictly more probable than every real word; among real words the
/// lowest index wins ties.
pub fn viterbi_align(pair: &SentencePair, table: &TranslationTable) -> AlignmentMatrix {
    let mut links = BTreeSet::new();
    for (j, f) in pair.target.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (i, e) in pair.source.iter().enumerate() {
            let p = table.prob(e, f);
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((i, p));
            }
        }
        if let Some((i, p)) = best {
            let null_better = table.has_null() && table.prob(NULL_WORD, f) > p;
            if !null_better {
                links.insert((i, j));
            }
        }
    }
    AlignmentMatrix {
        source_len: pair.source.len(),
        target_len: pair.target.len(),
        links,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetrization {
    Intersection,
    Union,
    GrowDiag,
}

const NEIGHBORS: [(isize, isize); 8] = [
    (-1, 0),
    (0, -1),
    (1, 0),
    (0, 1),
    (-1, -1),
    (-1, 1),
    (1, -1),
    (1, 1),
];

/// Combines a source-to-target and a target-to-source alignment. `backward`
/// must already be transposed into the forward orientation.
pub fn symmetrize(
    forward: &AlignmentMatrix,
    backward: &AlignmentMatrix,
    heuristic: Symmetrization,
) -> Result<AlignmentMatrix, AlignError> {
    forward.same_shape(backward)?;
    let inter: BTreeSet<_> = forward.links.intersection(&backward.links).copied().collect();
    let union: BTreeSet<_> = forward.links.union(&backward.links).copied().collect();
    let links = match heuristic {
        Symmetrization::Intersection => inter,
        Symmetrization::Union => union,
        Symmetrization::GrowDiag => grow_diag(forward.source_len, forward.target_len, inter, &union),
    };
    Ok(AlignmentMatrix {
        source_len: forward.source_len,
        target_len: forward.target_len,
        links,
    })
}

fn grow_diag(
    source_len: usize,
    target_len: usize,
    mut links: BTreeSet<(usize, usize)>,
    union: &BTreeSet<(usize, usize)>,
) -> BTreeSet<(usize, usize)> {
    let mut source_linked = vec![false; source_len];
    let mut target_linked = vec![false; target_len];
    for &(i, j) in &links {
        source_linked[i] = true;
        target_linked[j] = true;
    }
    loop {
        let mut added = false;
        for i in 0..source_len {
            for j in 0..target_len {
                if !links.contains(&(i, j)) {
                    continue;
                }
                for (di, dj) in NEIGHBORS {
                    let (Some(ni), Some(nj)) = (i.checked_add_signed(di), j.checked_add_signed(dj)) else {
                        continue;
                    };
                    if ni >= source_len || nj >= target_len {
                        continue;
                    }
                    if union.contains(&(ni, nj))
                        && !links.contains(&(ni, nj))
                        && (!source_linked[ni] || !target_linked[nj])
                    {
                        links.insert((ni, nj));
                        source_linked[ni] = true;
                        target_linked[nj] = true;
                        added = true;
                    }
                }
            }
        }
        if !added {
            return links;
        }
    }
}

/// Symmetrized alignments for every clean pair, in corpus order.
pub fn align_corpus(
    corpus: &ParallelCorpus,
    forward: &TranslationTable,
    backward: &TranslationTable,
    heuristic: Symmetrization,
) -> Vec<AlignmentMatrix> {
    let pairs: Vec<&SentencePair> = corpus.clean_pairs().collect();
    pairs
        .par_iter()
        .map(|pair| {
            let fwd = viterbi_align(pair, forward);
            let bwd = viterbi_align(&pair.swapped(), backward).transposed();
            symmetrize(&fwd, &bwd, heuristic).expect("both directions share the pair's shape")
        })
        .collect()
}
