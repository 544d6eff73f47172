//! Parallel corpus loading, tokenization and mechanical cleaning.
//!
//! Cleaning never deletes a pair. Pairs that break a rule are marked
//! [`PairStatus::Flagged`] and the clean view is exposed separately, so the
//! flag report always accounts for every input line.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: invalid UTF-8 at byte offset {offset}")]
    Decode { path: PathBuf, offset: usize },
    #[error("line count mismatch: source has {source_lines} lines, target has {target_lines}")]
    LineCountMismatch {
        source_lines: usize,
        target_lines: usize,
    },
    #[error("invalid cleaning rules: {0}")]
    InvalidRules(String),
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Which side of a parallel corpus an operation applies to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Source,
    Target,
}

/// Where a sentence pair came from.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Origin {
    pub file: String,
    /// 1-based line number.
    pub line: usize,
}

impl Origin {
    pub fn new(file: impl Into<String>, line: usize) -> Self {
        assert!(line >= 1, "origin line numbers are 1-based");
        Origin {
            file: file.into(),
            line,
        }
    }
}

/// Cleaning rules in the order they are checked.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FlagReason {
    Empty,
    Length,
    Ratio,
    Script,
    Duplicate,
}

impl FlagReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FlagReason::Empty => "empty",
            FlagReason::Length => "length",
            FlagReason::Ratio => "ratio",
            FlagReason::Script => "script",
            FlagReason::Duplicate => "duplicate",
        }
    }
}

impl fmt::Display for FlagReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PairStatus {
    Clean,
    Flagged(FlagReason),
}

impl PairStatus {
    pub fn is_clean(self) -> bool {
        matches!(self, PairStatus::Clean)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub origin: Origin,
    pub status: PairStatus,
}

impl SentencePair {
    pub fn new(source: Vec<String>, target: Vec<String>, origin: Origin) -> Self {
        debug_assert!(source.iter().chain(&target).all(|t| valid_token(t)));
        SentencePair {
            source,
            target,
            origin,
            status: PairStatus::Clean,
        }
    }

    /// Builds a pair from whitespace-separated strings, running them through
    /// [`tokenize`].
    pub fn from_text(source: &str, target: &str, origin: Origin) -> Self {
        SentencePair::new(
            tokenize(source, Side::Source),
            tokenize(target, Side::Target),
            origin,
        )
    }

    pub fn side(&self, side: Side) -> &[String] {
        match side {
            Side::Source => &self.source,
            Side::Target => &self.target,
        }
    }

    pub(crate) fn side_mut(&mut self, side: Side) -> &mut Vec<String> {
        match side {
            Side::Source => &mut self.source,
            Side::Target => &mut self.target,
        }
    }

    pub fn is_clean(&self) -> bool {
        self.status.is_clean()
    }

    /// The same pair with source and target exchanged.
    pub fn swapped(&self) -> SentencePair {
        SentencePair {
            source: self.target.clone(),
            target: self.source.clone(),
            origin: self.origin.clone(),
            status: self.status,
        }
    }
}

fn valid_token(t: &str) -> bool {
    !t.is_empty() && !t.chars().any(char::is_whitespace)
}

/// Token frequencies, ordered by token for stable output.
pub type Vocab = BTreeMap<String, usize>;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<SentencePair>) -> Self {
        ParallelCorpus { pairs }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clean_pairs(&self) -> impl Iterator<Item = &SentencePair> {
        self.pairs.iter().filter(|p| p.is_clean())
    }

    pub fn flagged_pairs(&self) -> impl Iterator<Item = &SentencePair> {
        self.pairs.iter().filter(|p| !p.is_clean())
    }

    /// A corpus holding only the clean pairs, in their original order.
    pub fn clean_view(&self) -> ParallelCorpus {
        ParallelCorpus::new(self.clean_pairs().cloned().collect())
    }

    /// Token frequencies over clean pairs on one side.
    pub fn vocab(&self, side: Side) -> Vocab {
        let mut vocab = Vocab::new();
        for pair in self.clean_pairs() {
            for tok in pair.side(side) {
                *vocab.entry(tok.clone()).or_insert(0) += 1;
            }
        }
        vocab
    }

    pub fn source_vocab(&self) -> Vocab {
        self.vocab(Side::Source)
    }

    pub fn target_vocab(&self) -> Vocab {
        self.vocab(Side::Target)
    }

    /// Source and target exchanged on every pair.
    pub fn swapped(&self) -> ParallelCorpus {
        ParallelCorpus::new(self.pairs.iter().map(SentencePair::swapped).collect())
    }

    /// Writes the corpus as two line-aligned files, tokens joined by single
    /// spaces. Statuses are not persisted.
    pub fn write(&self, source_path: &Path, target_path: &Path) -> Result<(), CorpusError> {
        write_side(self, Side::Source, source_path)?;
        write_side(self, Side::Target, target_path)
    }

    /// Writes `line<TAB>reason<TAB>source<TAB>target` for each flagged pair.
    pub fn write_flag_report<W: Write>(&self, mut out: W) -> io::Result<()> {
        for pair in self.flagged_pairs() {
            if let PairStatus::Flagged(reason) = pair.status {
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}",
                    pair.origin.line,
                    reason,
                    pair.source.join(" "),
                    pair.target.join(" ")
                )?;
            }
        }
        Ok(())
    }
}

fn write_side(corpus: &ParallelCorpus, side: Side, path: &Path) -> Result<(), CorpusError> {
    let mut buf = String::new();
    for pair in &corpus.pairs {
        buf.push_str(&pair.side(side).join(" "));
        buf.push('\n');
    }
    fs::write(path, buf).map_err(|e| CorpusError::io(path, e))
}

const TERMINAL_PUNCT: [char; 5] = ['.', ',', '?', '!', '।'];

/// Whitespace tokenization with trailing punctuation split off.
///
/// Each of `. , ? ! ।` at the end of a whitespace token becomes its own token;
/// the Devanagari danda is normalized to `.`. The same rules apply to both
/// sides, the `side` argument exists so callers can tokenize per side without
/// caring whether that ever diverges.
pub fn tokenize(line: &str, _side: Side) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in line.split_whitespace() {
        let mut body = word;
        let mut trailing = Vec::new();
        while let Some(c) = body.chars().next_back().filter(|c| TERMINAL_PUNCT.contains(c)) {
            trailing.push(if c == '।' { '.' } else { c });
            body = &body[..body.len() - c.len_utf8()];
        }
        if !body.is_empty() {
            tokens.push(body.to_string());
        }
        tokens.extend(trailing.into_iter().rev().map(String::from));
    }
    tokens
}

fn read_utf8(path: &Path) -> Result<String, CorpusError> {
    let bytes = fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| CorpusError::Decode {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
    })
}

/// Reads a UTF-8 text file and returns its lines (without terminators).
pub(crate) fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    Ok(read_utf8(path)?.lines().map(str::to_string).collect())
}

/// Pairs line `i` of `source_path` with line `i` of `target_path`.
pub fn load_corpus(source_path: &Path, target_path: &Path) -> Result<ParallelCorpus, CorpusError> {
    let source_lines = read_lines(source_path)?;
    let target_lines = read_lines(target_path)?;
    if source_lines.len() != target_lines.len() {
        return Err(CorpusError::LineCountMismatch {
            source_lines: source_lines.len(),
            target_lines: target_lines.len(),
        });
    }
    let file = source_path.display().to_string();
    let pairs = source_lines
        .iter()
        .zip(&target_lines)
        .enumerate()
        .map(|(i, (s, t))| SentencePair::from_text(s, t, Origin::new(file.clone(), i + 1)))
        .collect();
    Ok(ParallelCorpus::new(pairs))
}

/// Mechanical cleaning thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct CleaningRuleSet {
    pub max_length_ratio: f64,
    pub max_tokens: usize,
    /// Allowed ranges for alphabetic characters; empty means any script.
    pub source_script: Vec<RangeInclusive<char>>,
    pub target_script: Vec<RangeInclusive<char>>,
    pub drop_empty: bool,
    pub drop_duplicates: bool,
}

impl Default for CleaningRuleSet {
    fn default() -> Self {
        CleaningRuleSet {
            max_length_ratio: 3.0,
            max_tokens: 80,
            source_script: Vec::new(),
            target_script: Vec::new(),
            drop_empty: true,
            drop_duplicates: true,
        }
    }
}

impl CleaningRuleSet {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if !(self.max_length_ratio >= 1.0) {
            return Err(CorpusError::InvalidRules(format!(
                "max_length_ratio must be >= 1, got {}",
                self.max_length_ratio
            )));
        }
        if self.max_tokens == 0 {
            return Err(CorpusError::InvalidRules("max_tokens must be >= 1".into()));
        }
        Ok(())
    }

    fn script_ok(ranges: &[RangeInclusive<char>], tokens: &[String]) -> bool {
        ranges.is_empty()
            || tokens
                .iter()
                .flat_map(|t| t.chars())
                .filter(|c| c.is_alphabetic())
                .all(|c| ranges.iter().any(|r| r.contains(&c)))
    }

    fn first_violation(&self, pair: &SentencePair) -> Option<FlagReason> {
        let (s, t) = (pair.source.len(), pair.target.len());
        if self.drop_empty && (s == 0 || t == 0) {
            return Some(FlagReason::Empty);
        }
        if s > self.max_tokens || t > self.max_tokens {
            return Some(FlagReason::Length);
        }
        if s > 0 && t > 0 {
            let ratio = s.max(t) as f64 / s.min(t) as f64;
            if ratio > self.max_length_ratio {
                return Some(FlagReason::Ratio);
            }
        }
        if !Self::script_ok(&self.source_script, &pair.source)
            || !Self::script_ok(&self.target_script, &pair.target)
        {
            return Some(FlagReason::Script);
        }
        None
    }
}

/// Named character ranges accepted in config files.
pub fn script_ranges(name: &str) -> Option<Vec<RangeInclusive<char>>> {
    match name {
        "any" | "" => Some(Vec::new()),
        "latin" => Some(vec!['A'..='Z', 'a'..='z', '\u{C0}'..='\u{24F}']),
        "devanagari" => Some(vec!['\u{900}'..='\u{97F}', '\u{A8E0}'..='\u{A8FF}']),
        _ => None,
    }
}

/// Re-evaluates every pair against `rules`. Statuses are recomputed from
/// scratch, so cleaning is idempotent and never changes pair order or count.
pub fn clean(corpus: &ParallelCorpus, rules: &CleaningRuleSet) -> Result<ParallelCorpus, CorpusError> {
    rules.validate()?;
    let mut seen: HashSet<(&[String], &[String])> = HashSet::new();
    let mut pairs = Vec::with_capacity(corpus.len());
    for pair in &corpus.pairs {
        let mut reason = rules.first_violation(pair);
        if reason.is_none() && rules.drop_duplicates && !seen.insert((&pair.source, &pair.target)) {
            reason = Some(FlagReason::Duplicate);
        }
        let mut out = pair.clone();
        out.status = reason.map_or(PairStatus::Clean, PairStatus::Flagged);
        pairs.push(out);
    }
    Ok(ParallelCorpus::new(pairs))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub total_pairs: usize,
    pub clean_pairs: usize,
    pub flagged_pairs: usize,
    pub flagged_by_reason: BTreeMap<FlagReason, usize>,
    /// Token counts over clean pairs.
    pub source_tokens: usize,
    pub target_tokens: usize,
    pub source_vocab_size: usize,
    pub target_vocab_size: usize,
    /// Sentence length (tokens) to number of clean pairs.
    pub source_length_histogram: BTreeMap<usize, usize>,
    pub target_length_histogram: BTreeMap<usize, usize>,
}

pub fn corpus_stats(corpus: &ParallelCorpus) -> CorpusStats {
    let mut stats = CorpusStats {
        total_pairs: corpus.len(),
        ..Default::default()
    };
    for pair in &corpus.pairs {
        match pair.status {
            PairStatus::Clean => {
                stats.clean_pairs += 1;
                stats.source_tokens += pair.source.len();
                stats.target_tokens += pair.target.len();
                *stats.source_length_histogram.entry(pair.source.len()).or_insert(0) += 1;
                *stats.target_length_histogram.entry(pair.target.len()).or_insert(0) += 1;
            }
            PairStatus::Flagged(reason) => {
                stats.flagged_pairs += 1;
                *stats.flagged_by_reason.entry(reason).or_insert(0) += 1;
            }
        }
    }
    stats.source_vocab_size = corpus.source_vocab().len();
    stats.target_vocab_size = corpus.target_vocab().len();
    stats
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "pairs\t{}", self.total_pairs)?;
        writeln!(f, "clean\t{}", self.clean_pairs)?;
        writeln!(f, "flagged\t{}", self.flagged_pairs)?;
        for (reason, n) in &self.flagged_by_reason {
            writeln!(f, "flagged.{}\t{}", reason, n)?;
        }
        writeln!(f, "source_tokens\t{}", self.source_tokens)?;
        writeln!(f, "target_tokens\t{}", self.target_tokens)?;
        writeln!(f, "source_vocab\t{}", self.source_vocab_size)?;
        write!(f, "target_vocab\t{}", self.target_vocab_size)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn pair(s: &str, t: &str, line: usize) -> SentencePair {
        SentencePair::new(toks(s), toks(t), Origin::new("t", line))
    }

    #[test]
    fn tokenize_detaches_terminal_punctuation() {
        assert_eq!(tokenize("the cat.", Side::Source), toks("the cat ."));
        assert!(tokenize("", Side::Source).is_empty());
        assert!(tokenize("  \t ", Side::Target).is_empty());
        assert_eq!(tokenize("wow?!", Side::Source), toks("wow ? !"));
        assert_eq!(tokenize("a, b", Side::Source), toks("a , b"));
    }

    #[test]
    fn tokenize_normalizes_danda() {
        let t = tokenize("भूख न लगना।", Side::Target);
        assert_eq!(t, vec!["भूख", "न", "लगना", "."]);
        let t = tokenize("भूख न लगना.", Side::Target);
        assert_eq!(t.len(), 4);
        assert_eq!(tokenize("।", Side::Target), vec!["."]);
    }

    #[test]
    fn tokenize_keeps_devanagari_words_whole() {
        let t = tokenize("गर्मी से लू लगने से", Side::Target);
        assert_eq!(t, vec!["गर्मी", "से", "लू", "लगने", "से"]);
    }

    #[test]
    fn flag_order_is_fixed() {
        let rules = CleaningRuleSet::default();
        let c = ParallelCorpus::new(vec![
            pair("a b", "", 1),
            pair(&"x ".repeat(81), &"y ".repeat(81), 2),
            pair("a b c d e f g h i j k l", "x y z", 3),
            pair("a b c", "x y z", 4),
            pair("a b c", "x y z", 5),
        ]);
        let out = clean(&c, &rules).unwrap();
        let statuses: Vec<_> = out.pairs.iter().map(|p| p.status).collect();
        assert_eq!(
            statuses,
            vec![
                PairStatus::Flagged(FlagReason::Empty),
                PairStatus::Flagged(FlagReason::Length),
                PairStatus::Flagged(FlagReason::Ratio),
                PairStatus::Clean,
                PairStatus::Flagged(FlagReason::Duplicate),
            ]
        );
    }

    #[test]
    fn ratio_boundary_is_inclusive() {
        let c = ParallelCorpus::new(vec![pair("a b c d e f", "x y", 1)]);
        let out = clean(&c, &CleaningRuleSet::default()).unwrap();
        assert!(out.pairs[0].is_clean());
    }

    #[test]
    fn script_rule_flags_foreign_letters() {
        let rules = CleaningRuleSet {
            target_script: script_ranges("devanagari").unwrap(),
            ..Default::default()
        };
        let c = ParallelCorpus::new(vec![
            pair("heat", "गर्मी .", 1),
            pair("heat", "गर्मी abc", 2),
        ]);
        let out = clean(&c, &rules).unwrap();
        assert!(out.pairs[0].is_clean());
        assert_eq!(out.pairs[1].status, PairStatus::Flagged(FlagReason::Script));
    }

    #[test]
    fn plausible_mistranslation_stays_clean() {
        let c = ParallelCorpus::new(vec![SentencePair::from_text(
            "गर्मी से लू लगने से सिर दर्द तथा भूख न लगना.",
            "Summer headache and lack of appetite",
            Origin::new("t", 1),
        )]);
        let out = clean(&c, &CleaningRuleSet::default()).unwrap();
        assert!(out.pairs[0].is_clean());
    }

    #[test]
    fn invalid_rules_rejected() {
        let c = ParallelCorpus::default();
        let bad = CleaningRuleSet {
            max_length_ratio: 0.5,
            ..Default::default()
        };
        assert!(clean(&c, &bad).is_err());
        let bad = CleaningRuleSet {
            max_tokens: 0,
            ..Default::default()
        };
        assert!(clean(&c, &bad).is_err());
    }

    #[test]
    fn stats_count_pairs_and_tokens() {
        assert_eq!(corpus_stats(&ParallelCorpus::default()), CorpusStats::default());

        let mut c = ParallelCorpus::new(vec![
            pair("the cat the", "x", 1),
            pair("the dog", "y", 2),
            pair("the end the", "z", 3),
            pair("the the", "w", 4),
        ]);
        c.pairs[3].status = PairStatus::Flagged(FlagReason::Duplicate);
        let s = corpus_stats(&c);
        assert_eq!((s.total_pairs, s.clean_pairs, s.flagged_pairs), (4, 3, 1));
        assert_eq!(c.source_vocab()["the"], 5);
        assert_eq!(s.source_tokens, 8);
        assert_eq!(s.source_tokens, c.source_vocab().values().sum::<usize>());
        assert_eq!(s.flagged_by_reason[&FlagReason::Duplicate], 1);
    }

    #[test]
    fn flag_report_format() {
        let c = ParallelCorpus::new(vec![pair("a", "", 7)]);
        let c = clean(&c, &CleaningRuleSet::default()).unwrap();
        let mut out = Vec::new();
        c.write_flag_report(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "7\tempty\ta\t\n");
    }
}
