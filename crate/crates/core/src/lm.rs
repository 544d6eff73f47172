//! Interpolated n-gram language model over target-side tokens.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::corpus::{read_lines, CorpusError};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

const BOS_ID: u32 = 0;
const EOS_ID: u32 = 1;
const UNK_ID: u32 = 2;

/// Lower bound on returned probabilities. Only reachable with MLE
/// estimates, which can assign zero mass to unseen events.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("cannot train a language model on an empty corpus")]
    EmptyCorpus,
    #[error("invalid language model config: {0}")]
    InvalidConfig(String),
    #[error("malformed model file line {line}: {text}")]
    Parse { line: usize, text: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Smoothing {
    Mle,
    AddK(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmConfig {
    pub order: usize,
    pub smoothing: Smoothing,
    /// Mixture weight per order, unigram first. Must sum to 1.
    pub interpolation: Vec<f64>,
    /// Words seen at most this many times are replaced by `<unk>`.
    pub unk_threshold: Option<usize>,
}

impl LmConfig {
    /// Interpolated model with weights doubling per order, so the highest
    /// order carries about half the mass.
    pub fn new(order: usize, smoothing: Smoothing) -> Self {
        let raw: Vec<f64> = (0..order).map(|n| 2f64.powi(n as i32)).collect();
        let total: f64 = raw.iter().sum();
        LmConfig {
            order,
            smoothing,
            interpolation: raw.iter().map(|w| w / total).collect(),
            unk_threshold: None,
        }
    }

    /// All weight on the highest order.
    pub fn highest_order_only(order: usize, smoothing: Smoothing) -> Self {
        let mut interpolation = vec![0.0; order];
        if let Some(last) = interpolation.last_mut() {
            *last = 1.0;
        }
        LmConfig {
            order,
            smoothing,
            interpolation,
            unk_threshold: None,
        }
    }

    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |m: String| Err(LmError::InvalidConfig(m));
        if self.order == 0 {
            return bad("order must be >= 1".into());
        }
        if let Smoothing::AddK(k) = self.smoothing {
            if !(k > 0.0 && k.is_finite()) {
                return bad(format!("add-k constant must be positive, got {}", k));
            }
        }
        if self.interpolation.len() != self.order {
            return bad(format!(
                "{} interpolation weights for order {}",
                self.interpolation.len(),
                self.order
            ));
        }
        if self.interpolation.iter().any(|w| !(*w >= 0.0)) {
            return bad("interpolation weights must be non-negative".into());
        }
        let sum: f64 = self.interpolation.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("interpolation weights sum to {}", sum));
        }
        Ok(())
    }
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig::new(3, Smoothing::AddK(0.1))
    }
}

#[derive(Clone, Debug)]
pub struct NGramModel {
    config: LmConfig,
    words: Vec<String>,
    ids: HashMap<String, u32>,
    /// `counts[n - 1]` maps n-grams to their counts.
    counts: Vec<HashMap<Vec<u32>, u64>>,
    /// `context_counts[n - 1]` maps (n-1)-token histories to how often they
    /// were followed by any word.
    context_counts: Vec<HashMap<Vec<u32>, u64>>,
    /// Size of the predicted vocabulary: every word except `<s>`.
    vocab_size: usize,
}

impl NGramModel {
    fn empty(config: LmConfig) -> Self {
        let words: Vec<String> = [BOS, EOS, UNK].iter().map(|s| s.to_string()).collect();
        let ids = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        let order = config.order;
        NGramModel {
            config,
            words,
            ids,
            counts: vec![HashMap::new(); order],
            context_counts: vec![HashMap::new(); order],
            vocab_size: 2,
        }
    }

    fn intern(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.ids.get(word) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(word.to_string());
        self.ids.insert(word.to_string(), id);
        self.vocab_size += 1;
        id
    }

    fn add_ngram(&mut self, gram: &[u32], count: u64) {
        let n = gram.len();
        *self.counts[n - 1].entry(gram.to_vec()).or_insert(0) += count;
        *self.context_counts[n - 1].entry(gram[..n - 1].to_vec()).or_insert(0) += count;
    }

    pub fn order(&self) -> usize {
        self.config.order
    }

    pub fn config(&self) -> &LmConfig {
        &self.config
    }

    /// Predictable words: every known word plus `</s>` and `<unk>`.
    pub fn vocab(&self) -> impl Iterator<Item = &str> {
        self.words.iter().skip(1).map(String::as_str)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Id for `word`, with unknown words mapped to `<unk>`.
    pub fn word_id(&self, word: &str) -> u32 {
        self.ids.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn eos_id(&self) -> u32 {
        EOS_ID
    }

    pub fn count(&self, ngram: &[&str]) -> u64 {
        if ngram.is_empty() || ngram.len() > self.config.order {
            return 0;
        }
        let Some(ids) = ngram.iter().map(|w| self.ids.get(*w).copied()).collect::<Option<Vec<u32>>>() else {
            return 0;
        };
        self.counts[ids.len() - 1].get(&ids).copied().unwrap_or(0)
    }

    /// The state before the first word: `order - 1` copies of `<s>`.
    pub fn start_state(&self) -> Vec<u32> {
        vec![BOS_ID; self.config.order - 1]
    }

    /// Shifts `word` into a state of length `order - 1`.
    pub fn advance(&self, state: &[u32], word: u32) -> Vec<u32> {
        let keep = self.config.order - 1;
        let mut next: Vec<u32> = state.iter().copied().chain(std::iter::once(word)).collect();
        let drop = next.len().saturating_sub(keep);
        next.drain(..drop);
        next
    }

    fn estimate(&self, n: usize, history: &[u32], word: u32) -> f64 {
        let mut key: Vec<u32> = Vec::with_capacity(n);
        key.extend_from_slice(history);
        key.push(word);
        let c = self.counts[n - 1].get(&key).copied().unwrap_or(0) as f64;
        let ctx = self.context_counts[n - 1].get(history).copied().unwrap_or(0) as f64;
        match self.config.smoothing {
            Smoothing::Mle => {
                if ctx == 0.0 {
                    0.0
                } else {
                    c / ctx
                }
            }
            Smoothing::AddK(k) => (c + k) / (ctx + k * self.vocab_size as f64),
        }
    }

    /// Interpolated probability using at most `max_order` orders; weights of
    /// the orders used are renormalized when `max_order` is below the model
    /// order. `history` may be longer than needed.
    fn prob_limited(&self, history: &[u32], word: u32, max_order: usize) -> f64 {
        let max_order = max_order.min(self.config.order);
        let weights = &self.config.interpolation[..max_order];
        let mass: f64 = weights.iter().sum();
        if mass == 0.0 {
            let h = &history[history.len() + 1 - max_order..];
            return self.estimate(max_order, h, word).clamp(PROB_FLOOR, 1.0);
        }
        let mut p = 0.0;
        for (i, &lambda) in weights.iter().enumerate() {
            if lambda == 0.0 {
                continue;
            }
            let n = i + 1;
            let h = &history[history.len() + 1 - n..];
            p += lambda * self.estimate(n, h, word);
        }
        if mass > 0.0 && mass < 1.0 {
            p /= mass;
        }
        p.clamp(PROB_FLOOR, 1.0)
    }

    /// Probability of `word` after a full state of `order - 1` ids.
    pub fn prob_id(&self, state: &[u32], word: u32) -> f64 {
        debug_assert_eq!(state.len(), self.config.order - 1);
        self.prob_limited(state, word, self.config.order)
    }

    /// Natural-log probability of `word` after a full state.
    pub fn score_id(&self, state: &[u32], word: u32) -> f64 {
        self.prob_id(state, word).ln()
    }

    /// Log-probability of a phrase with no knowledge of what precedes it:
    /// each word is scored using only the phrase-internal history.
    pub fn score_phrase_no_context(&self, phrase: &[u32]) -> f64 {
        phrase
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let max_order = (i + 1).min(self.config.order);
                let history = &phrase[i + 1 - max_order..i];
                self.prob_limited(history, w, max_order).ln()
            })
            .sum()
    }

    fn padded_state<S: AsRef<str>>(&self, context: &[S]) -> Vec<u32> {
        let keep = self.config.order - 1;
        let mut state = vec![BOS_ID; keep.saturating_sub(context.len())];
        let skip = context.len().saturating_sub(keep);
        state.extend(context[skip..].iter().map(|w| self.word_id(w.as_ref())));
        state
    }

    /// `p(word | context)` where `context` is the sentence prefix before
    /// `word`; it is left-padded with `<s>` and truncated to `order - 1`.
    pub fn prob<S: AsRef<str>>(&self, context: &[S], word: &str) -> f64 {
        self.prob_id(&self.padded_state(context), self.word_id(word))
    }

    /// Natural-log contribution of `word` after `context`.
    pub fn score_continuation<S: AsRef<str>>(&self, context: &[S], word: &str) -> f64 {
        self.prob(context, word).ln()
    }

    /// Natural-log probability of a whole sentence including `</s>`.
    pub fn log_prob<S: AsRef<str>>(&self, sentence: &[S]) -> f64 {
        let mut state = self.start_state();
        let mut total = 0.0;
        for w in sentence.iter().map(|w| self.word_id(w.as_ref())).chain(std::iter::once(EOS_ID)) {
            total += self.score_id(&state, w);
            state = self.advance(&state, w);
        }
        total
    }

    fn sorted_ngrams(&self, n: usize) -> Vec<(Vec<&str>, u64)> {
        let mut grams: Vec<(Vec<&str>, u64)> = self.counts[n - 1]
            .iter()
            .map(|(g, c)| (g.iter().map(|&id| self.words[id as usize].as_str()).collect(), *c))
            .collect();
        grams.sort();
        grams
    }

    /// Back-off style text dump: a header with n-gram counts per order, then
    /// `log10prob<TAB>n-gram` lines per order.
    pub fn to_arpa(&self) -> String {
        let mut out = String::from("\\data\\\n");
        for n in 1..=self.config.order {
            let _ = writeln!(out, "ngram {}={}", n, self.counts[n - 1].len());
        }
        for n in 1..=self.config.order {
            let _ = write!(out, "\n\\{}-grams:\n", n);
            for (gram, _) in self.sorted_ngrams(n) {
                let ids: Vec<u32> = gram.iter().map(|w| self.word_id(w)).collect();
                let p = self.prob_limited(&ids[..n - 1], ids[n - 1], n);
                let _ = writeln!(out, "{:.6}\t{}", p.log10(), gram.join(" "));
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }

    /// Raw counts plus configuration, enough to rebuild the model exactly.
    pub fn to_counts_text(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let _ = writeln!(out, "order\t{}", c.order);
        match c.smoothing {
            Smoothing::Mle => out.push_str("smoothing\tmle\n"),
            Smoothing::AddK(k) => {
                let _ = writeln!(out, "smoothing\tadd_k\t{}", k);
            }
        }
        let weights: Vec<String> = c.interpolation.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "interpolation\t{}", weights.join(" "));
        match c.unk_threshold {
            Some(t) => {
                let _ = writeln!(out, "unk_threshold\t{}", t);
            }
            None => out.push_str("unk_threshold\tnone\n"),
        }
        for n in 1..=c.order {
            for (gram, count) in self.sorted_ngrams(n) {
                let _ = writeln!(out, "{}\t{}\t{}", n, count, gram.join(" "));
            }
        }
        out
    }

    pub fn write(&self, counts_path: &Path, arpa_path: &Path) -> Result<(), LmError> {
        fs::write(counts_path, self.to_counts_text()).map_err(|e| CorpusError::io(counts_path, e))?;
        fs::write(arpa_path, self.to_arpa()).map_err(|e| CorpusError::io(arpa_path, e))?;
        Ok(())
    }

    /// Reads the format written by [`NGramModel::to_counts_text`].
    pub fn load(path: &Path) -> Result<Self, LmError> {
        let lines = read_lines(path)?;
        let err = |i: usize| LmError::Parse {
            line: i + 1,
            text: lines[i].clone(),
        };
        let field = |i: usize, key: &str| -> Result<Vec<&str>, LmError> {
            let line = lines.get(i).ok_or(LmError::Parse { line: i + 1, text: String::new() })?;
            let mut cols = line.split('\t');
            if cols.next() != Some(key) {
                return Err(err(i));
            }
            Ok(cols.collect())
        };
        let order: usize = field(0, "order")?.first().and_then(|v| v.parse().ok()).ok_or_else(|| err(0))?;
        let smoothing = match field(1, "smoothing")?.as_slice() {
            ["mle"] => Smoothing::Mle,
            ["add_k", k] => Smoothing::AddK(k.parse().map_err(|_| err(1))?),
            _ => return Err(err(1)),
        };
        let interpolation: Vec<f64> = field(2, "interpolation")?
            .first()
            .ok_or_else(|| err(2))?
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| err(2))?;
        let unk_threshold = match field(3, "unk_threshold")?.as_slice() {
            ["none"] => None,
            [t] => Some(t.parse().map_err(|_| err(3))?),
            _ => return Err(err(3)),
        };
        let config = LmConfig {
            order,
            smoothing,
            interpolation,
            unk_threshold,
        };
        config.validate()?;
        let mut model = NGramModel::empty(config);
        for (i, line) in lines.iter().enumerate().skip(4) {
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(n), Some(count), Some(gram), None) = (cols.next(), cols.next(), cols.next(), cols.next()) else {
                return Err(err(i));
            };
            let n: usize = n.parse().map_err(|_| err(i))?;
            let count: u64 = count.parse().map_err(|_| err(i))?;
            let ids: Vec<u32> = gram.split(' ').map(|w| model.intern(w)).collect();
            if ids.len() != n || n == 0 || n > order {
                return Err(err(i));
            }
            model.add_ngram(&ids, count);
        }
        Ok(model)
    }
}

/// Counts every n-gram up to `config.order` with `<s>` padding and a final
/// `</s>` per sentence.
pub fn train_lm<S: AsRef<str>>(sentences: &[Vec<S>], config: &LmConfig) -> Result<NGramModel, LmError> {
    config.validate()?;
    if sentences.is_empty() {
        return Err(LmError::EmptyCorpus);
    }
    let rare: std::collections::HashSet<&str> = match config.unk_threshold {
        Some(threshold) => {
            let mut freq: HashMap<&str, usize> = HashMap::new();
            for w in sentences.iter().flatten() {
                *freq.entry(w.as_ref()).or_insert(0) += 1;
            }
            freq.into_iter().filter(|(_, c)| *c <= threshold).map(|(w, _)| w).collect()
        }
        None => Default::default(),
    };

    let mut model = NGramModel::empty(config.clone());
    let order = config.order;
    for sentence in sentences {
        let mut ids: Vec<u32> = vec![BOS_ID; order - 1];
        for w in sentence {
            let w = w.as_ref();
            ids.push(if rare.contains(w) { UNK_ID } else { model.intern(w) });
        }
        ids.push(EOS_ID);
        for pos in order - 1..ids.len() {
            for n in 1..=order {
                model.add_ngram(&ids[pos + 1 - n..=pos], 1);
            }
        }
    }
    Ok(model)
}
