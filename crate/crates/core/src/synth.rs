//! Deterministic toy bilingual corpora with a known lexicon.
//!
//! Source sentences follow a subject/verb/object template over words like
//! `d3`, `a7`, `n12`, `v4`. Targets are word-for-word images through a
//! bijective lexicon of invented syllabic words, then reordered.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Origin, ParallelCorpus, SentencePair};
use crate::lexicon::{LexiconEntry, ResourceKind, SynsetRecord};

const CONSONANTS: &[u8] = b"bdgklmnprst";
const VOWELS: &[u8] = b"aeiou";
/// Target plural suffixes; target words end in a vowel so these never occur
/// naturally.
pub const TARGET_SUFFIXES: [&str; 2] = ["oj", "ej"];
const SOURCE_PLURAL: &str = "s";
/// Letters used for unreadable noise targets.
const NOISE_LETTERS: &[char] = &['α', 'β', 'γ', 'δ', 'ε', 'ζ', 'η', 'θ', 'κ', 'λ'];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("split fractions sum to {0}, expected 1")]
    FractionSum(f64),
    #[error("split fractions must be non-negative")]
    NegativeFraction,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordOrder {
    Monotone,
    Reversed,
    /// The verb moves to the end of the target sentence.
    SvoToSov,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub word_order: WordOrder,
    /// Probability that a noun is pluralized.
    pub inflection_rate: f64,
    /// Fraction of content words withheld from training data.
    pub oov_holdout: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            vocab_size: 200,
            min_len: 3,
            max_len: 8,
            word_order: WordOrder::Monotone,
            inflection_rate: 0.0,
            oov_holdout: 0.0,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.into()));
        if self.vocab_size < 8 {
            return bad("vocab_size must be at least 8");
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            return bad("sentence length range must satisfy 2 <= min_len <= max_len");
        }
        for (name, p) in [("inflection_rate", self.inflection_rate), ("oov_holdout", self.oov_holdout)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{} must lie in [0, 1]", name));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WordClass {
    Det,
    Adj,
    Noun,
    Verb,
}

impl WordClass {
    pub fn as_str(self) -> &'static str {
        match self {
            WordClass::Det => "det",
            WordClass::Adj => "adj",
            WordClass::Noun => "noun",
            WordClass::Verb => "verb",
        }
    }

    fn prefix(self) -> &'static str {
        match self {
            WordClass::Det => "d",
            WordClass::Adj => "a",
            WordClass::Noun => "n",
            WordClass::Verb => "v",
        }
    }

    /// Which augmentation resource carries words of this class.
    pub fn resource(self) -> ResourceKind {
        match self {
            WordClass::Det => ResourceKind::FunctionWord,
            WordClass::Verb => ResourceKind::VerbPhrase,
            WordClass::Adj | WordClass::Noun => ResourceKind::Synset,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthWord {
    pub source: String,
    pub target: String,
    pub class: WordClass,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub corpus: ParallelCorpus,
    pub lexicon: Vec<SynthWord>,
    /// Source forms (base and plural) of withheld words.
    pub holdout: BTreeSet<String>,
}

fn syllable(rng: &mut ChaCha8Rng) -> [char; 2] {
    [
        CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char,
        VOWELS[rng.gen_range(0..VOWELS.len())] as char,
    ]
}

fn class_sizes(vocab: usize) -> [(WordClass, usize); 4] {
    let det = (vocab / 20).max(2);
    let adj = (vocab / 5).max(1);
    let verb = (vocab / 5).max(1);
    let noun = vocab - det - adj - verb;
    [
        (WordClass::Det, det),
        (WordClass::Adj, adj),
        (WordClass::Noun, noun),
        (WordClass::Verb, verb),
    ]
}

fn build_lexicon(vocab: usize, rng: &mut ChaCha8Rng) -> Vec<SynthWord> {
    let mut used = HashSet::new();
    let mut lexicon = Vec::with_capacity(vocab);
    for (class, count) in class_sizes(vocab) {
        for i in 0..count {
            let target = loop {
                let syllables = rng.gen_range(2..=3);
                let word: String = (0..syllables).flat_map(|_| syllable(rng)).collect();
                if used.insert(word.clone()) {
                    break word;
                }
            };
            lexicon.push(SynthWord {
                source: format!("{}{}", class.prefix(), i),
                target,
                class,
            });
        }
    }
    lexicon
}

fn plural_suffix(noun_index: usize) -> &'static str {
    TARGET_SUFFIXES[noun_index % 2]
}

struct Token {
    source: String,
    target: String,
    is_verb: bool,
}

/// Generates `n_pairs` sentence pairs; a pure function of its arguments.
pub fn generate(spec: &SynthSpec, n_pairs: usize) -> Result<SynthCorpus, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lexicon = build_lexicon(spec.vocab_size, &mut rng);
    let of_class = |c: WordClass| -> Vec<usize> { (0..lexicon.len()).filter(|&i| lexicon[i].class == c).collect() };
    let (dets, adjs, nouns, verbs) = (
        of_class(WordClass::Det),
        of_class(WordClass::Adj),
        of_class(WordClass::Noun),
        of_class(WordClass::Verb),
    );

    let mut content: Vec<usize> = adjs.iter().chain(&nouns).chain(&verbs).copied().collect();
    content.shuffle(&mut rng);
    let n_hold = (spec.oov_holdout * content.len() as f64).round() as usize;
    let mut holdout = BTreeSet::new();
    for &i in &content[..n_hold] {
        holdout.insert(lexicon[i].source.clone());
        if lexicon[i].class == WordClass::Noun {
            holdout.insert(format!("{}{}", lexicon[i].source, SOURCE_PLURAL));
        }
    }

    let word = |i: usize| Token {
        source: lexicon[i].source.clone(),
        target: lexicon[i].target.clone(),
        is_verb: lexicon[i].class == WordClass::Verb,
    };
    let noun_phrase = |len: usize, rng: &mut ChaCha8Rng| -> Vec<Token> {
        let mut np = Vec::with_capacity(len);
        if len >= 2 {
            np.push(word(*dets.choose(rng).expect("non-empty class")));
        }
        for _ in 2..len {
            np.push(word(*adjs.choose(rng).expect("non-empty class")));
        }
        let k = rng.gen_range(0..nouns.len());
        let mut noun = word(nouns[k]);
        if spec.inflection_rate > 0.0 && rng.gen_bool(spec.inflection_rate) {
            noun.source.push_str(SOURCE_PLURAL);
            noun.target.push_str(plural_suffix(k));
        }
        np.push(noun);
        np
    };

    let mut pairs = Vec::with_capacity(n_pairs);
    for line in 0..n_pairs {
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let (subj, obj) = if len == 2 {
            (1, 0)
        } else {
            let s = rng.gen_range(1..=len - 2);
            (s, len - 1 - s)
        };
        let mut tokens = noun_phrase(subj, &mut rng);
        tokens.push(word(*verbs.choose(&mut rng).expect("non-empty class")));
        if obj > 0 {
            tokens.extend(noun_phrase(obj, &mut rng));
        }
        let source: Vec<String> = tokens.iter().map(|t| t.source.clone()).collect();
        let target: Vec<String> = match spec.word_order {
            WordOrder::Monotone => tokens.iter().map(|t| t.target.clone()).collect(),
            WordOrder::Reversed => tokens.iter().rev().map(|t| t.target.clone()).collect(),
            WordOrder::SvoToSov => tokens
                .iter()
                .filter(|t| !t.is_verb)
                .chain(tokens.iter().filter(|t| t.is_verb))
                .map(|t| t.target.clone())
                .collect(),
        };
        pairs.push(SentencePair::new(source, target, Origin::new("synthetic", line + 1)));
    }
    Ok(SynthCorpus {
        corpus: ParallelCorpus::new(pairs),
        lexicon,
        holdout,
    })
}

impl SynthCorpus {
    /// Pairs whose source side contains no withheld word.
    pub fn without_holdout(&self, corpus: &ParallelCorpus) -> ParallelCorpus {
        ParallelCorpus::new(
            corpus
                .pairs
                .iter()
                .filter(|p| !p.source.iter().any(|w| self.holdout.contains(w)))
                .cloned()
                .collect(),
        )
    }

    /// Lexicon entries carried by the given resource.
    pub fn lexicon_entries(&self, kind: ResourceKind) -> Vec<LexiconEntry> {
        self.lexicon
            .iter()
            .filter(|w| w.class.resource() == kind)
            .map(|w| LexiconEntry::new(vec![w.source.clone()], vec![w.target.clone()], kind))
            .collect()
    }

    /// One synset record per noun and adjective, each with its single true
    /// translation.
    pub fn synset_records(&self) -> Vec<SynsetRecord> {
        self.lexicon
            .iter()
            .filter(|w| w.class.resource() == ResourceKind::Synset)
            .map(|w| SynsetRecord::new(vec![w.source.clone()], vec![vec![w.target.clone()]]))
            .collect()
    }

    /// `source<TAB>target<TAB>class` per lexicon word.
    pub fn lexicon_tsv(&self) -> String {
        let mut out = String::new();
        for w in &self.lexicon {
            let _ = writeln!(out, "{}\t{}\t{}", w.source, w.target, w.class.as_str());
        }
        out
    }

    /// Writes `lexicon.tsv` plus one resource file per augmentation kind:
    /// `synsets.txt`, `function_words.txt`, `verb_phrases.txt`.
    pub fn write_resources(&self, dir: &Path) -> Result<(), SynthError> {
        std::fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
        let write = |name: &str, text: String| -> Result<(), SynthError> {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| SynthError::from(CorpusError::io(&path, e)))
        };
        write("lexicon.tsv", self.lexicon_tsv())?;
        let mut synsets = String::new();
        for r in self.synset_records() {
            let syns: Vec<String> = r.synonyms.iter().map(|s| s.join("_")).collect();
            let _ = writeln!(synsets, "{}\t{}", r.headword.join(" "), syns.join(","));
        }
        write("synsets.txt", synsets)?;
        for (kind, name) in [
            (ResourceKind::FunctionWord, "function_words.txt"),
            (ResourceKind::VerbPhrase, "verb_phrases.txt"),
        ] {
            let mut text = String::new();
            for e in self.lexicon_entries(kind) {
                let _ = writeln!(text, "{}\t{}", e.source.join(" "), e.target.join(" "));
            }
            write(name, text)?;
        }
        Ok(())
    }
}

/// Appends `round(rate × len)` noisy pairs of the kinds a cleaning pass is
/// meant to catch: targets in a foreign script, targets cut to one word,
/// and empty targets. Each noisy pair reuses a real source sentence.
pub fn add_noise(corpus: &ParallelCorpus, rate: f64, seed: u64) -> ParallelCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = corpus.pairs.clone();
    let n = (rate * corpus.len() as f64).round() as usize;
    if corpus.is_empty() {
        return ParallelCorpus::new(pairs);
    }
    // a small garbage vocabulary, so the noise is frequent enough to compete
    let garbage: Vec<String> = (0..30)
        .map(|_| (0..3).map(|_| *NOISE_LETTERS.choose(&mut rng).expect("non-empty")).collect())
        .collect();
    for i in 0..n {
        let base = &corpus.pairs[rng.gen_range(0..corpus.len())];
        let other = &corpus.pairs[rng.gen_range(0..corpus.len())];
        let kind = rng.gen_range(0..3);
        let target: Vec<String> = match kind {
            0 => base.source.iter().map(|_| garbage.choose(&mut rng).expect("non-empty").clone()).collect(),
            1 if base.source.len() > 3 && !other.target.is_empty() => vec![other.target[0].clone()],
            1 => base.source.iter().map(|_| garbage.choose(&mut rng).expect("non-empty").clone()).collect(),
            _ => Vec::new(),
        };
        pairs.push(SentencePair::new(base.source.clone(), target, Origin::new("noise", i + 1)));
    }
    pairs.shuffle(&mut rng);
    ParallelCorpus::new(pairs)
}

/// Deterministic disjoint partition into train/dev/test. Each part keeps the
/// original relative order.
pub fn split(corpus: &ParallelCorpus, fractions: [f64; 3], seed: u64) -> Result<[ParallelCorpus; 3], SynthError> {
    if fractions.iter().any(|f| *f < 0.0 || !f.is_finite()) {
        return Err(SynthError::NegativeFraction);
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SynthError::FractionSum(sum));
    }
    let n = corpus.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_dev = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let bounds = [0, n_train, n_train + n_dev, n];
    let parts: Vec<ParallelCorpus> = (0..3)
        .map(|k| {
            let mut part = idx[bounds[k]..bounds[k + 1]].to_vec();
            part.sort_unstable();
            ParallelCorpus::new(part.into_iter().map(|i| corpus.pairs[i].clone()).collect())
        })
        .collect();
    let [a, b, c]: [ParallelCorpus; 3] = parts.try_into().expect("three parts");
    Ok([a, b, c])
}
