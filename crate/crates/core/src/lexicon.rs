//! Lexical resources (synsets, function words, verb phrases) and suffix
//! splitting.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

use crate::corpus::{read_lines, tokenize, CorpusError, Origin, ParallelCorpus, SentencePair, Side};

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("synset record for '{0}' has no synonyms")]
    EmptySynset(String),
    #[error("invalid suffix inventory: {0}")]
    InvalidInventory(String),
    #[error("repeat must be at least 1")]
    InvalidRepeat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceKind {
    Synset,
    FunctionWord,
    VerbPhrase,
}

impl ResourceKind {
    pub const ALL: [ResourceKind; 3] = [
        ResourceKind::Synset,
        ResourceKind::FunctionWord,
        ResourceKind::VerbPhrase,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResourceKind::Synset => "synset",
            ResourceKind::FunctionWord => "function_word",
            ResourceKind::VerbPhrase => "verb_phrase",
        }
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LexiconEntry {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub category: ResourceKind,
}

impl LexiconEntry {
    pub fn new(source: Vec<String>, target: Vec<String>, category: ResourceKind) -> Self {
        debug_assert!(!source.is_empty() && !target.is_empty());
        LexiconEntry {
            source,
            target,
            category,
        }
    }
}

/// One headword with its target-language synonyms. Synonyms may be
/// underscore-joined compounds; they are split into tokens on expansion.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynsetRecord {
    pub headword: Vec<String>,
    pub synonyms: Vec<Vec<String>>,
}

impl SynsetRecord {
    pub fn new(headword: Vec<String>, synonyms: Vec<Vec<String>>) -> Self {
        let mut deduped: Vec<Vec<String>> = Vec::with_capacity(synonyms.len());
        for syn in synonyms {
            if !deduped.contains(&syn) {
                deduped.push(syn);
            }
        }
        SynsetRecord {
            headword,
            synonyms: deduped,
        }
    }
}

fn split_underscores(tokens: &[String]) -> Vec<String> {
    tokens
        .iter()
        .flat_map(|t| t.split('_'))
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

/// One entry per distinct (headword, synonym) across all records, headwords in
/// order of first appearance.
pub fn expand_synsets(records: &[SynsetRecord]) -> Result<Vec<LexiconEntry>, LexiconError> {
    let mut order: Vec<Vec<String>> = Vec::new();
    let mut by_head: HashMap<Vec<String>, Vec<Vec<String>>> = HashMap::new();
    for rec in records {
        let head = split_underscores(&rec.headword);
        if rec.synonyms.is_empty() || head.is_empty() {
            return Err(LexiconError::EmptySynset(rec.headword.join(" ")));
        }
        let syns = by_head.entry(head.clone()).or_insert_with(|| {
            order.push(head.clone());
            Vec::new()
        });
        for syn in &rec.synonyms {
            let syn = split_underscores(syn);
            if !syn.is_empty() && !syns.contains(&syn) {
                syns.push(syn);
            }
        }
    }
    let mut entries = Vec::new();
    for head in order {
        for syn in by_head.remove(&head).unwrap_or_default() {
            entries.push(LexiconEntry::new(head.clone(), syn, ResourceKind::Synset));
        }
    }
    Ok(entries)
}

/// Suffixes tried longest-first; ties in length are broken lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuffixInventory {
    suffixes: Vec<String>,
    min_stem_length: usize,
}

impl SuffixInventory {
    pub fn new<I, S>(suffixes: I, min_stem_length: usize) -> Result<Self, LexiconError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        if min_stem_length == 0 {
            return Err(LexiconError::InvalidInventory("min_stem_length must be >= 1".into()));
        }
        let mut suffixes: Vec<String> = suffixes.into_iter().map(Into::into).collect();
        if let Some(bad) = suffixes.iter().find(|s| s.is_empty() || s.chars().any(char::is_whitespace)) {
            return Err(LexiconError::InvalidInventory(format!("bad suffix {:?}", bad)));
        }
        suffixes.sort_by(|a, b| b.chars().count().cmp(&a.chars().count()).then_with(|| a.cmp(b)));
        suffixes.dedup();
        Ok(SuffixInventory {
            suffixes,
            min_stem_length,
        })
    }

    pub fn suffixes(&self) -> &[String] {
        &self.suffixes
    }

    pub fn min_stem_length(&self) -> usize {
        self.min_stem_length
    }

    pub fn contains(&self, token: &str) -> bool {
        self.suffixes.iter().any(|s| s == token)
    }

    /// Splits one token into (stem, suffix) if any suffix matches with a long
    /// enough stem.
    pub fn split_token<'a>(&self, token: &'a str) -> Option<(&'a str, &'a str)> {
        self.suffixes.iter().find_map(|suffix| {
            let stem = token.strip_suffix(suffix.as_str())?;
            (stem.graphemes(true).count() >= self.min_stem_length)
                .then(|| (stem, &token[stem.len()..]))
        })
    }

    /// Reattaches any token that is exactly an inventory suffix to the token
    /// before it. Inverse of [`split_suffixes`] on text it produced.
    pub fn join_suffixes(&self, tokens: &[String]) -> Vec<String> {
        let mut out: Vec<String> = Vec::with_capacity(tokens.len());
        for tok in tokens {
            match out.last_mut() {
                Some(prev) if self.contains(tok) => prev.push_str(tok),
                _ => out.push(tok.clone()),
            }
        }
        out
    }
}

/// Hindi plural/oblique endings. A starting point only; real use should
/// supply an inventory built for the language pair.
pub const EXAMPLE_HINDI_SUFFIXES: [&str; 4] = ["ओं", "याँ", "एं", "ों"];

/// Applies at most one suffix split per token on `side`.
pub fn split_suffixes(corpus: &ParallelCorpus, inv: &SuffixInventory, side: Side) -> ParallelCorpus {
    let mut out = corpus.clone();
    for pair in &mut out.pairs {
        let tokens = pair.side_mut(side);
        *tokens = split_tokens(tokens, inv);
    }
    out
}

/// Splits every token of a plain token sequence.
pub fn split_tokens(tokens: &[String], inv: &SuffixInventory) -> Vec<String> {
    let mut out = Vec::with_capacity(tokens.len());
    for tok in tokens {
        match inv.split_token(tok) {
            Some((stem, suffix)) => {
                out.push(stem.to_string());
                out.push(suffix.to_string());
            }
            None => out.push(tok.clone()),
        }
    }
    out
}

/// Appends each entry `repeat` times as a sentence pair after the corpus.
pub fn inject(
    corpus: &ParallelCorpus,
    entries: &[LexiconEntry],
    repeat: usize,
) -> Result<ParallelCorpus, LexiconError> {
    if repeat == 0 {
        return Err(LexiconError::InvalidRepeat);
    }
    let mut pairs = corpus.pairs.clone();
    pairs.reserve(entries.len() * repeat);
    for (i, entry) in entries.iter().enumerate() {
        for _ in 0..repeat {
            pairs.push(SentencePair::new(
                entry.source.clone(),
                entry.target.clone(),
                Origin::new(format!("lexicon:{}", entry.category), i + 1),
            ));
        }
    }
    Ok(ParallelCorpus::new(pairs))
}

fn content_lines(path: &Path) -> Result<Vec<(usize, String)>, LexiconError> {
    Ok(read_lines(path)?
        .into_iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i + 1, l))
        .collect())
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> LexiconError {
    LexiconError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads `source<TAB>target` lines; `#` lines and blank lines are skipped.
pub fn load_lexicon(path: &Path, category: ResourceKind) -> Result<Vec<LexiconEntry>, LexiconError> {
    let mut entries = Vec::new();
    for (line_no, line) in content_lines(path)? {
        let (src, tgt) = line
            .split_once('\t')
            .ok_or_else(|| parse_error(path, line_no, "expected source<TAB>target"))?;
        let source = tokenize(src, Side::Source);
        let target = tokenize(tgt, Side::Target);
        if source.is_empty() || target.is_empty() {
            return Err(parse_error(path, line_no, "empty side"));
        }
        entries.push(LexiconEntry::new(source, target, category));
    }
    Ok(entries)
}

/// Reads `headword<TAB>syn1,syn2,...` lines.
pub fn load_synsets(path: &Path) -> Result<Vec<SynsetRecord>, LexiconError> {
    let mut records = Vec::new();
    for (line_no, line) in content_lines(path)? {
        let (head, syns) = line
            .split_once('\t')
            .ok_or_else(|| parse_error(path, line_no, "expected headword<TAB>synonyms"))?;
        let headword = tokenize(head, Side::Source);
        let synonyms: Vec<Vec<String>> = syns
            .split(',')
            .map(|s| tokenize(s, Side::Target))
            .filter(|s| !s.is_empty())
            .collect();
        if headword.is_empty() {
            return Err(parse_error(path, line_no, "empty headword"));
        }
        if synonyms.is_empty() {
            return Err(parse_error(path, line_no, "no synonyms"));
        }
        records.push(SynsetRecord::new(headword, synonyms));
    }
    Ok(records)
}

/// Reads one suffix per line. Order in the file does not matter.
pub fn load_suffixes(path: &Path, min_stem_length: usize) -> Result<SuffixInventory, LexiconError> {
    let suffixes = content_lines(path)?.into_iter().map(|(_, l)| l.trim().to_string());
    SuffixInventory::new(suffixes, min_stem_length)
}
