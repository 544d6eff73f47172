//! Alignment-consistent phrase extraction and the scored phrase table.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::align::{AlignmentMatrix, TranslationTable, NULL_WORD};
use crate::corpus::{read_lines, CorpusError, ParallelCorpus, SentencePair};

pub const DEFAULT_MAX_PHRASE_LEN: usize = 7;

#[derive(Debug, Error)]
pub enum PhraseError {
    #[error("alignment is {0}x{1} but sentence pair is {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("{0} alignments for {1} clean sentence pairs")]
    AlignmentCount(usize, usize),
    #[error("malformed phrase table line {line}: {text}")]
    Parse { line: usize, text: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// A phrase pair together with where it was found and the links inside it.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PhrasePair {
    /// Half-open token range in the source sentence.
    pub source_span: (usize, usize),
    pub target_span: (usize, usize),
    pub source: Vec<String>,
    pub target: Vec<String>,
    /// Links relative to the span starts.
    pub links: Vec<(usize, usize)>,
}

/// All phrase pairs consistent with `alignment`: no link leaves the
/// rectangle, at least one link lies inside, and both sides are at most
/// `max_len` tokens. Unaligned target words at the edges are absorbed in
/// every combination.
pub fn extract_phrases(
    pair: &SentencePair,
    alignment: &AlignmentMatrix,
    max_len: usize,
) -> Result<BTreeSet<PhrasePair>, PhraseError> {
    let (slen, tlen) = (pair.source.len(), pair.target.len());
    if alignment.source_len() != slen || alignment.target_len() != tlen {
        return Err(PhraseError::DimensionMismatch(
            alignment.source_len(),
            alignment.target_len(),
            slen,
            tlen,
        ));
    }
    let mut target_aligned = vec![false; tlen];
    for &(_, j) in alignment.links() {
        target_aligned[j] = true;
    }

    let mut out = BTreeSet::new();
    for s_start in 0..slen {
        for s_end in s_start..slen.min(s_start + max_len) {
            let inside = alignment
                .links()
                .iter()
                .filter(|(i, _)| (s_start..=s_end).contains(i));
            let Some((t_min, t_max)) = inside.fold(None, |acc: Option<(usize, usize)>, &(_, j)| {
                Some(acc.map_or((j, j), |(lo, hi)| (lo.min(j), hi.max(j))))
            }) else {
                continue;
            };
            if t_max - t_min + 1 > max_len {
                continue;
            }
            let leaks = alignment
                .links()
                .iter()
                .any(|&(i, j)| (t_min..=t_max).contains(&j) && !(s_start..=s_end).contains(&i));
            if leaks {
                continue;
            }

            let mut t_start = t_min;
            loop {
                let mut t_end = t_max;
                loop {
                    if t_end - t_start < max_len {
                        out.insert(make_pair(pair, alignment, (s_start, s_end + 1), (t_start, t_end + 1)));
                    }
                    t_end += 1;
                    if t_end == tlen || target_aligned[t_end] {
                        break;
                    }
                }
                if t_start == 0 || target_aligned[t_start - 1] {
                    break;
                }
                t_start -= 1;
            }
        }
    }
    Ok(out)
}

fn make_pair(
    pair: &SentencePair,
    alignment: &AlignmentMatrix,
    source_span: (usize, usize),
    target_span: (usize, usize),
) -> PhrasePair {
    let links = alignment
        .links()
        .iter()
        .filter(|(i, j)| {
            (source_span.0..source_span.1).contains(i) && (target_span.0..target_span.1).contains(j)
        })
        .map(|&(i, j)| (i - source_span.0, j - target_span.0))
        .collect();
    PhrasePair {
        source_span,
        target_span,
        source: pair.source[source_span.0..source_span.1].to_vec(),
        target: pair.target[target_span.0..target_span.1].to_vec(),
        links,
    }
}

/// Extracts from every clean pair; `alignments` lines up with the clean
/// pairs in order.
pub fn extract_corpus(
    corpus: &ParallelCorpus,
    alignments: &[AlignmentMatrix],
    max_len: usize,
) -> Result<Vec<PhrasePair>, PhraseError> {
    let pairs: Vec<&SentencePair> = corpus.clean_pairs().collect();
    if pairs.len() != alignments.len() {
        return Err(PhraseError::AlignmentCount(alignments.len(), pairs.len()));
    }
    let per_pair: Vec<BTreeSet<PhrasePair>> = pairs
        .par_iter()
        .zip(alignments.par_iter())
        .map(|(p, a)| extract_phrases(p, a, max_len))
        .collect::<Result<_, _>>()?;
    Ok(per_pair.into_iter().flatten().collect())
}

/// `[φ(t|s), lex(t|s), φ(s|t), lex(s|t)]`
pub type PhraseScores = [f64; 4];

#[derive(Clone, Debug, PartialEq)]
pub struct PhraseOption {
    pub target: Vec<String>,
    pub scores: PhraseScores,
}

/// Source phrase to its translation options, options sorted by φ(t|s)
/// descending then target lexicographically.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PhraseTable {
    entries: HashMap<Vec<String>, Vec<PhraseOption>>,
}

fn option_order(a: &PhraseOption, b: &PhraseOption) -> std::cmp::Ordering {
    b.scores[0].total_cmp(&a.scores[0]).then_with(|| a.target.cmp(&b.target))
}

impl PhraseTable {
    pub fn from_entries<I>(entries: I) -> Self
    where
        I: IntoIterator<Item = (Vec<String>, PhraseOption)>,
    {
        let mut map: HashMap<Vec<String>, Vec<PhraseOption>> = HashMap::new();
        for (src, opt) in entries {
            map.entry(src).or_default().push(opt);
        }
        for opts in map.values_mut() {
            opts.sort_by(option_order);
        }
        PhraseTable { entries: map }
    }

    /// Up to `top_k` options for `source`, best first.
    pub fn lookup<S: AsRef<str>>(&self, source: &[S], top_k: usize) -> &[PhraseOption] {
        let key: Vec<String> = source.iter().map(|s| s.as_ref().to_string()).collect();
        match self.entries.get(&key) {
            Some(opts) => &opts[..opts.len().min(top_k)],
            None => &[],
        }
    }

    pub fn get(&self, source: &[String]) -> Option<&[PhraseOption]> {
        self.entries.get(source).map(Vec::as_slice)
    }

    pub fn sources(&self) -> impl Iterator<Item = &Vec<String>> {
        self.entries.keys()
    }

    /// Number of distinct source phrases.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_source_len(&self) -> usize {
        self.entries.keys().map(Vec::len).max().unwrap_or(0)
    }

    /// `source ||| target ||| φ(t|s) lex(t|s) φ(s|t) lex(s|t)` per option,
    /// source phrases in lexicographic order.
    pub fn to_text(&self) -> String {
        let mut sources: Vec<&Vec<String>> = self.entries.keys().collect();
        sources.sort();
        let mut out = String::new();
        for src in sources {
            for opt in &self.entries[src] {
                let [a, b, c, d] = opt.scores;
                let _ = writeln!(
                    out,
                    "{} ||| {} ||| {} {} {} {}",
                    src.join(" "),
                    opt.target.join(" "),
                    a,
                    b,
                    c,
                    d
                );
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), PhraseError> {
        fs::write(path, self.to_text()).map_err(|e| CorpusError::io(path, e).into())
    }

    pub fn load(path: &Path) -> Result<Self, PhraseError> {
        let mut entries = Vec::new();
        for (i, line) in read_lines(path)?.into_iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = || PhraseError::Parse {
                line: i + 1,
                text: line.clone(),
            };
            let fields: Vec<&str> = line.split("|||").map(str::trim).collect();
            let [src, tgt, scores] = fields[..] else {
                return Err(parse_err());
            };
            let scores: Vec<f64> = scores
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|_| parse_err())?;
            let scores: PhraseScores = scores.try_into().map_err(|_| parse_err())?;
            let words = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
            if src.is_empty() || tgt.is_empty() {
                return Err(parse_err());
            }
            entries.push((words(src), PhraseOption { target: words(tgt), scores }));
        }
        Ok(PhraseTable::from_entries(entries))
    }
}

/// Lexical weight of `target` given `source` under `table`, where the table
/// holds `t(target word | source word)` and `links` are (source, target)
/// indices within the phrase.
pub fn lexical_weight(source: &[String], target: &[String], links: &[(usize, usize)], table: &TranslationTable) -> f64 {
    let mut weight = 1.0;
    for (j, t) in target.iter().enumerate() {
        let linked: Vec<usize> = links.iter().filter(|l| l.1 == j).map(|l| l.0).collect();
        let p = if linked.is_empty() {
            table.prob(NULL_WORD, t)
        } else {
            linked.iter().map(|&i| table.prob(&source[i], t)).sum::<f64>() / linked.len() as f64
        };
        weight *= p;
    }
    weight
}

/// Relative-frequency and lexical scoring over every extracted occurrence.
///
/// `forward` holds `t(target | source)` and `backward` holds
/// `t(source | target)`. When a phrase pair was extracted with different
/// internal alignments the highest lexical weight is kept.
pub fn score_table(extracted: &[PhrasePair], forward: &TranslationTable, backward: &TranslationTable) -> PhraseTable {
    #[derive(Default)]
    struct Acc {
        count: usize,
        lex_fwd: f64,
        lex_bwd: f64,
    }
    let mut pair_acc: HashMap<(&[String], &[String]), Acc> = HashMap::new();
    let mut source_count: HashMap<&[String], usize> = HashMap::new();
    let mut target_count: HashMap<&[String], usize> = HashMap::new();

    for pp in extracted {
        *source_count.entry(&pp.source).or_insert(0) += 1;
        *target_count.entry(&pp.target).or_insert(0) += 1;
        let acc = pair_acc.entry((&pp.source, &pp.target)).or_default();
        acc.count += 1;
        let fwd = lexical_weight(&pp.source, &pp.target, &pp.links, forward);
        let flipped: Vec<(usize, usize)> = pp.links.iter().map(|&(i, j)| (j, i)).collect();
        let bwd = lexical_weight(&pp.target, &pp.source, &flipped, backward);
        acc.lex_fwd = acc.lex_fwd.max(fwd);
        acc.lex_bwd = acc.lex_bwd.max(bwd);
    }

    let entries = pair_acc.into_iter().map(|((s, t), acc)| {
        let n = acc.count as f64;
        let scores = [
            n / source_count[s] as f64,
            acc.lex_fwd,
            n / target_count[t] as f64,
            acc.lex_bwd,
        ];
        (s.to_vec(), PhraseOption { target: t.to_vec(), scores })
    });
    PhraseTable::from_entries(entries)
}
