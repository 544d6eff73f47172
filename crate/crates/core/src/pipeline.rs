//! Stage orchestration: every stage reads and writes plain text files under
//! `<output_dir>/<name>/<stage>/` and leaves a manifest of its inputs,
//! settings and content hashes.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::align::{align_corpus, train_model1, AlignError, AlignmentMatrix, Model1Config, Symmetrization, TranslationTable};
use crate::corpus::{
    clean, corpus_stats, load_corpus, read_lines, script_ranges, tokenize, CleaningRuleSet, CorpusError, ParallelCorpus,
    Side,
};
use crate::decoder::{decode_corpus, nbest, DecodeError, DecoderConfig, WeightVector};
use crate::lexicon::{
    expand_synsets, inject, load_lexicon, load_suffixes, load_synsets, split_suffixes, split_tokens, LexiconEntry,
    LexiconError, ResourceKind, SuffixInventory,
};
use crate::lm::{train_lm, LmConfig, LmError, NGramModel, Smoothing};
use crate::mert::{tune, MertError, TuneConfig};
use crate::metrics::{evaluate, format_report, EvalReport, MetricError, ReportRow};
use crate::phrase::{extract_corpus, score_table, PhraseError, PhraseTable};
use crate::synth::{self, SynthError, SynthSpec};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing {path} (produced by the `{stage}` stage)")]
    MissingArtifact { path: PathBuf, stage: Stage },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("cannot read config {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Phrase(#[from] PhraseError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Tune(#[from] MertError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Clean,
    Augment,
    Align,
    Phrases,
    Lm,
    Tune,
    Translate,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Clean,
        Stage::Augment,
        Stage::Align,
        Stage::Phrases,
        Stage::Lm,
        Stage::Tune,
        Stage::Translate,
        Stage::Evaluate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Clean => "clean",
            Stage::Augment => "augment",
            Stage::Align => "align",
            Stage::Phrases => "phrases",
            Stage::Lm => "lm",
            Stage::Tune => "tune",
            Stage::Translate => "translate",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage {}", s))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusPaths {
    pub train_source: PathBuf,
    pub train_target: PathBuf,
    pub dev_source: PathBuf,
    pub dev_target: PathBuf,
    pub test_source: PathBuf,
    pub test_target: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningSection {
    pub enabled: bool,
    pub max_length_ratio: f64,
    pub max_tokens: usize,
    /// `any`, `latin` or `devanagari`.
    pub source_script: String,
    pub target_script: String,
    pub drop_empty: bool,
    pub drop_duplicates: bool,
}

impl Default for CleaningSection {
    fn default() -> Self {
        let rules = CleaningRuleSet::default();
        CleaningSection {
            enabled: true,
            max_length_ratio: rules.max_length_ratio,
            max_tokens: rules.max_tokens,
            source_script: "any".into(),
            target_script: "any".into(),
            drop_empty: rules.drop_empty,
            drop_duplicates: rules.drop_duplicates,
        }
    }
}

impl CleaningSection {
    pub fn rules(&self) -> Result<CleaningRuleSet> {
        let script = |name: &str| {
            script_ranges(name).ok_or_else(|| PipelineError::InvalidConfig(format!("unknown script {}", name)))
        };
        Ok(CleaningRuleSet {
            max_length_ratio: self.max_length_ratio,
            max_tokens: self.max_tokens,
            source_script: script(&self.source_script)?,
            target_script: script(&self.target_script)?,
            drop_empty: self.drop_empty,
            drop_duplicates: self.drop_duplicates,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    /// Split inflectional suffixes off target-side tokens.
    pub suffix_split: bool,
    pub suffix_file: Option<PathBuf>,
    pub min_stem_length: Option<usize>,
    pub resources: Vec<ResourceKind>,
    pub synset_file: Option<PathBuf>,
    pub function_word_file: Option<PathBuf>,
    pub verb_phrase_file: Option<PathBuf>,
    /// Copies of each lexicon entry appended to the training data.
    pub repeat: Option<usize>,
}

impl AugmentSection {
    fn resource_file(&self, kind: ResourceKind) -> Option<&PathBuf> {
        match kind {
            ResourceKind::Synset => self.synset_file.as_ref(),
            ResourceKind::FunctionWord => self.function_word_file.as_ref(),
            ResourceKind::VerbPhrase => self.verb_phrase_file.as_ref(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignSection {
    pub iterations: usize,
    pub use_null: bool,
    /// 0 disables early stopping.
    pub min_gain_per_pair: f64,
    pub symmetrization: Symmetrization,
}

impl Default for AlignSection {
    fn default() -> Self {
        let m = Model1Config::default();
        AlignSection {
            iterations: m.iterations,
            use_null: m.use_null,
            min_gain_per_pair: m.min_gain_per_pair.unwrap_or(0.0),
            symmetrization: Symmetrization::GrowDiag,
        }
    }
}

impl AlignSection {
    fn model1(&self) -> Model1Config {
        Model1Config {
            iterations: self.iterations,
            use_null: self.use_null,
            min_gain_per_pair: (self.min_gain_per_pair > 0.0).then_some(self.min_gain_per_pair),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhraseSection {
    pub max_phrase_len: usize,
}

impl Default for PhraseSection {
    fn default() -> Self {
        PhraseSection {
            max_phrase_len: crate::phrase::DEFAULT_MAX_PHRASE_LEN,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSection {
    pub order: usize,
    /// `add_k` or `mle`.
    pub smoothing: String,
    pub add_k: f64,
    /// Words seen at most this often become `<unk>`; 0 keeps every word.
    pub unk_threshold: usize,
}

impl Default for LmSection {
    fn default() -> Self {
        LmSection {
            order: 3,
            smoothing: "add_k".into(),
            add_k: 0.1,
            unk_threshold: 0,
        }
    }
}

impl LmSection {
    fn config(&self) -> Result<LmConfig> {
        let smoothing = match self.smoothing.as_str() {
            "add_k" => Smoothing::AddK(self.add_k),
            "mle" => Smoothing::Mle,
            other => return Err(PipelineError::InvalidConfig(format!("unknown smoothing {}", other))),
        };
        let mut config = LmConfig::new(self.order, smoothing);
        config.unk_threshold = (self.unk_threshold > 0).then_some(self.unk_threshold);
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsSection {
    pub phrase_fwd: f64,
    pub lex_fwd: f64,
    pub phrase_bwd: f64,
    pub lex_bwd: f64,
    pub lm: f64,
    pub word_penalty: f64,
    pub distortion: f64,
}

impl Default for WeightsSection {
    fn default() -> Self {
        let w = WeightVector::default().0;
        WeightsSection {
            phrase_fwd: w[0],
            lex_fwd: w[1],
            phrase_bwd: w[2],
            lex_bwd: w[3],
            lm: w[4],
            word_penalty: w[5],
            distortion: w[6],
        }
    }
}

impl WeightsSection {
    pub fn vector(&self) -> Result<WeightVector> {
        Ok(WeightVector::new([
            self.phrase_fwd,
            self.lex_fwd,
            self.phrase_bwd,
            self.lex_bwd,
            self.lm,
            self.word_penalty,
            self.distortion,
        ])?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningSection {
    pub enabled: bool,
    pub outer_iters: usize,
    pub nbest: usize,
    pub random_directions: usize,
    pub seed: u64,
    pub min_gain: f64,
    pub max_steps_per_iter: usize,
    pub random_restarts: usize,
}

impl Default for TuningSection {
    fn default() -> Self {
        let t = TuneConfig::default();
        TuningSection {
            enabled: true,
            outer_iters: t.outer_iters,
            nbest: t.nbest,
            random_directions: t.random_directions,
            seed: t.seed,
            min_gain: t.min_gain,
            max_steps_per_iter: t.max_steps_per_iter,
            random_restarts: t.random_restarts,
        }
    }
}

impl TuningSection {
    pub fn config(&self) -> TuneConfig {
        TuneConfig {
            outer_iters: self.outer_iters,
            nbest: self.nbest,
            random_directions: self.random_directions,
            seed: self.seed,
            min_gain: self.min_gain,
            max_steps_per_iter: self.max_steps_per_iter,
            random_restarts: self.random_restarts,
        }
    }
}

/// One experiment: a corpus, the processing switches and module settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub corpus: CorpusPaths,
    #[serde(default)]
    pub cleaning: CleaningSection,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub align: AlignSection,
    #[serde(default)]
    pub phrases: PhraseSection,
    #[serde(default)]
    pub lm: LmSection,
    #[serde(default)]
    pub decoder: DecoderConfig,
    #[serde(default)]
    pub weights: WeightsSection,
    #[serde(default)]
    pub tuning: TuningSection,
}

fn apply_override(table: &mut toml::Table, spec: &str) -> std::result::Result<(), String> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override {:?} is not of the form key=value", spec))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw)) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| format!("empty key in override {:?}", spec))?;
    let mut cur = table;
    for part in parts {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| format!("{:?} in override {:?} is not a section", part, spec))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    /// Parses a config file; relative paths are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_overrides(path, &[])
    }

    /// Like [`ExperimentConfig::load`], then applies `section.key=value`
    /// overrides. Values are read as TOML literals, falling back to a
    /// plain string.
    pub fn load_with_overrides(path: &Path, overrides: &[String]) -> Result<Self> {
        let parse_err = |message: String| PipelineError::ConfigParse {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o).map_err(parse_err)?;
        }
        let mut config: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| parse_err(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.rebase_paths(base);
        Ok(config)
    }

    pub fn rebase_paths(&mut self, base: &Path) {
        rebase(base, &mut self.output_dir);
        let c = &mut self.corpus;
        for p in [
            &mut c.train_source,
            &mut c.train_target,
            &mut c.dev_source,
            &mut c.dev_target,
            &mut c.test_source,
            &mut c.test_target,
        ] {
            rebase(base, p);
        }
        let a = &mut self.augment;
        for p in [
            &mut a.suffix_file,
            &mut a.synset_file,
            &mut a.function_word_file,
            &mut a.verb_phrase_file,
        ]
        .into_iter()
        .flatten()
        {
            rebase(base, p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == "." || self.name == ".." {
            return bad(format!("name {:?} must be a plain directory name", self.name));
        }
        self.cleaning.rules()?.validate()?;
        if self.augment.suffix_split {
            match &self.augment.suffix_file {
                None => return bad("suffix_split requires suffix_file".into()),
                Some(p) if !p.exists() => return bad(format!("suffix file {} does not exist", p.display())),
                _ => {}
            }
        }
        for kind in &self.augment.resources {
            match self.augment.resource_file(*kind) {
                None => return bad(format!("resource {} is enabled but has no file", kind)),
                Some(p) if !p.exists() => return bad(format!("{} file {} does not exist", kind, p.display())),
                _ => {}
            }
        }
        if self.augment.repeat == Some(0) {
            return bad("repeat must be at least 1".into());
        }
        if self.align.iterations == 0 {
            return bad("align.iterations must be at least 1".into());
        }
        if self.phrases.max_phrase_len == 0 {
            return bad("phrases.max_phrase_len must be at least 1".into());
        }
        self.lm.config()?;
        self.decoder.validate()?;
        self.weights.vector()?;
        if self.tuning.enabled && self.tuning.nbest == 0 {
            return bad("tuning.nbest must be at least 1".into());
        }
        Ok(())
    }

    /// Directory holding every stage of this experiment.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.name)
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.run_dir().join(stage.as_str())
    }

    fn artifact(&self, stage: Stage, file: &str) -> PathBuf {
        self.stage_dir(stage).join(file)
    }

    fn suffix_inventory(&self) -> Result<Option<SuffixInventory>> {
        if !self.augment.suffix_split {
            return Ok(None);
        }
        let path = self
            .augment
            .suffix_file
            .as_ref()
            .ok_or_else(|| PipelineError::InvalidConfig("suffix_split requires suffix_file".into()))?;
        Ok(Some(load_suffixes(path, self.augment.min_stem_length.unwrap_or(1))?))
    }
}

pub const TRAIN_SRC: &str = "train.src";
pub const TRAIN_TGT: &str = "train.tgt";
pub const DEV_SRC: &str = "dev.src";
pub const DEV_TGT: &str = "dev.tgt";
pub const FLAG_REPORT: &str = "flags.tsv";
pub const STATS: &str = "stats.tsv";
pub const FORWARD_TABLE: &str = "forward.t";
pub const BACKWARD_TABLE: &str = "backward.t";
pub const ALIGNMENTS: &str = "alignments.txt";
pub const LOG_LIKELIHOOD: &str = "log_likelihood.tsv";
pub const PHRASE_TABLE: &str = "phrase_table.txt";
pub const LM_COUNTS: &str = "lm.counts";
pub const LM_ARPA: &str = "lm.arpa";
pub const WEIGHTS: &str = "weights.txt";
pub const TUNING_LOG: &str = "tuning_log.tsv";
pub const UNTUNED_HYP: &str = "untuned.hyp";
pub const TUNED_HYP: &str = "tuned.hyp";
pub const UNTUNED_EVAL: &str = "untuned.tsv";
pub const TUNED_EVAL: &str = "tuned.tsv";
pub const REPORT: &str = "report.txt";
pub const MANIFEST: &str = "manifest.tsv";

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// What a stage consumed and produced.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub stage: Stage,
    pub settings: String,
    pub inputs: Vec<(PathBuf, String)>,
    pub outputs: Vec<(PathBuf, String)>,
}

impl Manifest {
    fn build(stage: Stage, settings: String, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<Self> {
        let hash_all = |paths: &[PathBuf]| -> Result<Vec<(PathBuf, String)>> {
            paths.iter().map(|p| Ok((p.clone(), sha256_file(p)?))).collect()
        };
        Ok(Manifest {
            stage,
            settings,
            inputs: hash_all(inputs)?,
            outputs: hash_all(outputs)?,
        })
    }

    /// `stage`, `setting`, `input` and `output` records, tab-separated.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "stage\t{}", self.stage);
        for line in self.settings.lines().filter(|l| !l.trim().is_empty()) {
            let _ = writeln!(out, "setting\t{}", line);
        }
        for (p, h) in &self.inputs {
            let _ = writeln!(out, "input\t{}\t{}", p.display(), h);
        }
        for (p, h) in &self.outputs {
            let _ = writeln!(out, "output\t{}\t{}", p.display(), h);
        }
        out
    }
}

fn require(path: PathBuf, stage: Stage) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::MissingArtifact { path, stage })
    }
}

fn settings_of<T: Serialize>(section: &str, value: &T) -> String {
    let mut table = toml::Table::new();
    if let Ok(v) = toml::Value::try_from(value) {
        table.insert(section.to_string(), v);
    }
    toml::to_string(&table).unwrap_or_default()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CorpusError::io(path, e).into())
}

fn finish(config: &ExperimentConfig, stage: Stage, settings: String, inputs: &[PathBuf], outputs: Vec<PathBuf>) -> Result<Vec<PathBuf>> {
    let manifest = Manifest::build(stage, settings, inputs, &outputs)?;
    let path = config.artifact(stage, MANIFEST);
    write_text(&path, &manifest.to_text())?;
    let mut all = outputs;
    all.push(path);
    Ok(all)
}

fn prepare_dir(config: &ExperimentConfig, stage: Stage) -> Result<PathBuf> {
    let dir = config.stage_dir(stage);
    std::fs::create_dir_all(&dir).map_err(|e| CorpusError::io(&dir, e))?;
    Ok(dir)
}

fn load_tokenized(path: &Path, side: Side) -> Result<Vec<Vec<String>>> {
    Ok(read_lines(path)?.iter().map(|l| tokenize(l, side)).collect())
}

fn load_pair(config: &ExperimentConfig, stage: Stage, src: &str, tgt: &str) -> Result<(ParallelCorpus, Vec<PathBuf>)> {
    let s = require(config.artifact(stage, src), stage)?;
    let t = require(config.artifact(stage, tgt), stage)?;
    let corpus = load_corpus(&s, &t)?;
    Ok((corpus, vec![s, t]))
}

fn stage_clean(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let c = &config.corpus;
    let inputs = vec![c.train_source.clone(), c.train_target.clone()];
    let corpus = load_corpus(&c.train_source, &c.train_target)?;
    let processed = if config.cleaning.enabled {
        clean(&corpus, &config.cleaning.rules()?)?
    } else {
        corpus
    };
    prepare_dir(config, Stage::Clean)?;
    let (src, tgt) = (config.artifact(Stage::Clean, TRAIN_SRC), config.artifact(Stage::Clean, TRAIN_TGT));
    processed.clean_view().write(&src, &tgt)?;
    let flags = config.artifact(Stage::Clean, FLAG_REPORT);
    let mut report = Vec::new();
    processed.write_flag_report(&mut report).map_err(|e| CorpusError::io(&flags, e))?;
    std::fs::write(&flags, report).map_err(|e| CorpusError::io(&flags, e))?;
    let stats = config.artifact(Stage::Clean, STATS);
    write_text(&stats, &corpus_stats(&processed).to_string())?;
    log::info!(
        "[{}] clean: {} pairs, {} kept",
        config.name,
        processed.len(),
        processed.clean_pairs().count()
    );
    finish(
        config,
        Stage::Clean,
        settings_of("cleaning", &config.cleaning),
        &inputs,
        vec![src, tgt, flags, stats],
    )
}

fn resource_entries(config: &ExperimentConfig, inputs: &mut Vec<PathBuf>) -> Result<Vec<LexiconEntry>> {
    let mut entries = Vec::new();
    for kind in ResourceKind::ALL {
        if !config.augment.resources.contains(&kind) {
            continue;
        }
        let path = config
            .augment
            .resource_file(kind)
            .ok_or_else(|| PipelineError::InvalidConfig(format!("resource {} has no file", kind)))?
            .clone();
        let loaded = match kind {
            ResourceKind::Synset => expand_synsets(&load_synsets(&path)?)?,
            _ => load_lexicon(&path, kind)?,
        };
        entries.extend(loaded);
        inputs.push(path);
    }
    Ok(entries)
}

fn stage_augment(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let (mut train, mut inputs) = load_pair(config, Stage::Clean, TRAIN_SRC, TRAIN_TGT)?;
    let c = &config.corpus;
    let mut dev = load_corpus(&c.dev_source, &c.dev_target)?;
    inputs.extend([c.dev_source.clone(), c.dev_target.clone()]);
    let mut entries = resource_entries(config, &mut inputs)?;
    if let Some(inv) = config.suffix_inventory()? {
        inputs.extend(config.augment.suffix_file.clone());
        train = split_suffixes(&train, &inv, Side::Target);
        dev = split_suffixes(&dev, &inv, Side::Target);
        for e in &mut entries {
            e.target = split_tokens(&e.target, &inv);
        }
    }
    if !entries.is_empty() {
        train = inject(&train, &entries, config.augment.repeat.unwrap_or(1))?;
    }
    prepare_dir(config, Stage::Augment)?;
    let outputs = vec![
        config.artifact(Stage::Augment, TRAIN_SRC),
        config.artifact(Stage::Augment, TRAIN_TGT),
        config.artifact(Stage::Augment, DEV_SRC),
        config.artifact(Stage::Augment, DEV_TGT),
    ];
    train.write(&outputs[0], &outputs[1])?;
    dev.write(&outputs[2], &outputs[3])?;
    log::info!("[{}] augment: {} training pairs ({} injected)", config.name, train.len(), entries.len());
    finish(config, Stage::Augment, settings_of("augment", &config.augment), &inputs, outputs)
}

fn stage_align(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let (train, inputs) = load_pair(config, Stage::Augment, TRAIN_SRC, TRAIN_TGT)?;
    let m1 = config.align.model1();
    let forward = train_model1(&train, &m1)?;
    let backward = train_model1(&train.swapped(), &m1)?;
    let alignments = align_corpus(&train, &forward.table, &backward.table, config.align.symmetrization);

    prepare_dir(config, Stage::Align)?;
    let outputs = vec![
        config.artifact(Stage::Align, FORWARD_TABLE),
        config.artifact(Stage::Align, BACKWARD_TABLE),
        config.artifact(Stage::Align, ALIGNMENTS),
        config.artifact(Stage::Align, LOG_LIKELIHOOD),
    ];
    forward.table.write(&outputs[0])?;
    backward.table.write(&outputs[1])?;
    let mut text = String::new();
    for a in &alignments {
        let _ = writeln!(text, "{}", a.to_line());
    }
    write_text(&outputs[2], &text)?;
    let mut ll = String::from("iteration\tforward\tbackward\n");
    for i in 0..forward.log_likelihood.len().max(backward.log_likelihood.len()) {
        let show = |v: &[f64]| v.get(i).map_or(String::from("-"), |x| x.to_string());
        let _ = writeln!(ll, "{}\t{}\t{}", i + 1, show(&forward.log_likelihood), show(&backward.log_likelihood));
    }
    write_text(&outputs[3], &ll)?;
    log::info!("[{}] align: {} pairs aligned", config.name, alignments.len());
    finish(config, Stage::Align, settings_of("align", &config.align), &inputs, outputs)
}

fn stage_phrases(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let (train, mut inputs) = load_pair(config, Stage::Augment, TRAIN_SRC, TRAIN_TGT)?;
    let fwd_path = require(config.artifact(Stage::Align, FORWARD_TABLE), Stage::Align)?;
    let bwd_path = require(config.artifact(Stage::Align, BACKWARD_TABLE), Stage::Align)?;
    let al_path = require(config.artifact(Stage::Align, ALIGNMENTS), Stage::Align)?;
    let forward = TranslationTable::load(&fwd_path)?;
    let backward = TranslationTable::load(&bwd_path)?;
    let lines = read_lines(&al_path)?;
    let pairs: Vec<_> = train.clean_pairs().collect();
    if lines.len() != pairs.len() {
        return Err(PhraseError::AlignmentCount(lines.len(), pairs.len()).into());
    }
    let alignments: Vec<AlignmentMatrix> = lines
        .iter()
        .zip(&pairs)
        .map(|(l, p)| AlignmentMatrix::parse_line(l, p.source.len(), p.target.len()))
        .collect::<std::result::Result<_, _>>()?;
    inputs.extend([fwd_path, bwd_path, al_path]);

    let extracted = extract_corpus(&train, &alignments, config.phrases.max_phrase_len)?;
    let table = score_table(&extracted, &forward, &backward);
    prepare_dir(config, Stage::Phrases)?;
    let out = config.artifact(Stage::Phrases, PHRASE_TABLE);
    table.write(&out)?;
    log::info!("[{}] phrases: {} source phrases", config.name, table.len());
    finish(config, Stage::Phrases, settings_of("phrases", &config.phrases), &inputs, vec![out])
}

fn stage_lm(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let (train, inputs) = load_pair(config, Stage::Augment, TRAIN_SRC, TRAIN_TGT)?;
    let sentences: Vec<Vec<String>> = train.clean_pairs().map(|p| p.target.clone()).collect();
    let model = train_lm(&sentences, &config.lm.config()?)?;
    prepare_dir(config, Stage::Lm)?;
    let outputs = vec![config.artifact(Stage::Lm, LM_COUNTS), config.artifact(Stage::Lm, LM_ARPA)];
    model.write(&outputs[0], &outputs[1])?;
    log::info!("[{}] lm: order {}, {} words", config.name, model.order(), model.vocab_size());
    finish(config, Stage::Lm, settings_of("lm", &config.lm), &inputs, outputs)
}

fn load_models(config: &ExperimentConfig, inputs: &mut Vec<PathBuf>) -> Result<(PhraseTable, NGramModel)> {
    let table_path = require(config.artifact(Stage::Phrases, PHRASE_TABLE), Stage::Phrases)?;
    let lm_path = require(config.artifact(Stage::Lm, LM_COUNTS), Stage::Lm)?;
    let table = PhraseTable::load(&table_path)?;
    let lm = NGramModel::load(&lm_path)?;
    inputs.extend([table_path, lm_path]);
    Ok((table, lm))
}

fn stage_tune(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let mut inputs = Vec::new();
    let (table, lm) = load_models(config, &mut inputs)?;
    let (dev, dev_inputs) = load_pair(config, Stage::Augment, DEV_SRC, DEV_TGT)?;
    inputs.extend(dev_inputs);
    let dev: Vec<(Vec<String>, Vec<String>)> = dev.pairs.into_iter().map(|p| (p.source, p.target)).collect();
    let decoder = &config.decoder;
    let (weights, state) = tune(
        &dev,
        |src: &[String], w: &WeightVector, n| nbest(src, &table, &lm, w, decoder, n),
        config.weights.vector()?,
        &config.tuning.config(),
    )?;
    prepare_dir(config, Stage::Tune)?;
    let outputs = vec![config.artifact(Stage::Tune, WEIGHTS), config.artifact(Stage::Tune, TUNING_LOG)];
    weights.write(&outputs[0])?;
    state.write_log(&outputs[1])?;
    log::info!(
        "[{}] tune: {} iterations, pool BLEU {:?}, {} decode failures",
        config.name,
        state.history.len(),
        state.history.last(),
        state.failures
    );
    let settings = settings_of("tuning", &config.tuning) + &settings_of("decoder", &config.decoder) + &settings_of("weights", &config.weights);
    finish(config, Stage::Tune, settings, &inputs, outputs)
}

fn translate_with(
    config: &ExperimentConfig,
    sources: &[Vec<String>],
    table: &PhraseTable,
    lm: &NGramModel,
    weights: &WeightVector,
    inventory: Option<&SuffixInventory>,
) -> String {
    let mut out = String::new();
    let mut failed = 0;
    for result in decode_corpus(sources, table, lm, weights, &config.decoder) {
        let tokens = match result {
            Ok(t) => t.target,
            Err(e) => {
                failed += 1;
                log::debug!("[{}] decode failed: {}", config.name, e);
                Vec::new()
            }
        };
        let tokens = match inventory {
            Some(inv) => inv.join_suffixes(&tokens),
            None => tokens,
        };
        let _ = writeln!(out, "{}", tokens.join(" "));
    }
    if failed > 0 {
        log::warn!("[{}] {} test sentences failed to decode and were left empty", config.name, failed);
    }
    out
}

fn stage_translate(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let mut inputs = Vec::new();
    let (table, lm) = load_models(config, &mut inputs)?;
    let tuned_weights = if config.tuning.enabled {
        let path = require(config.artifact(Stage::Tune, WEIGHTS), Stage::Tune)?;
        let w = WeightVector::load(&path)?;
        inputs.push(path);
        Some(w)
    } else {
        None
    };
    let sources = load_tokenized(&config.corpus.test_source, Side::Source)?;
    inputs.push(config.corpus.test_source.clone());
    let inventory = config.suffix_inventory()?;

    prepare_dir(config, Stage::Translate)?;
    let untuned = config.artifact(Stage::Translate, UNTUNED_HYP);
    let text = translate_with(config, &sources, &table, &lm, &config.weights.vector()?, inventory.as_ref());
    write_text(&untuned, &text)?;
    let mut outputs = vec![untuned];
    if let Some(w) = tuned_weights {
        let tuned = config.artifact(Stage::Translate, TUNED_HYP);
        write_text(&tuned, &translate_with(config, &sources, &table, &lm, &w, inventory.as_ref()))?;
        outputs.push(tuned);
    }
    log::info!("[{}] translate: {} sentences", config.name, sources.len());
    let settings = settings_of("decoder", &config.decoder) + &settings_of("weights", &config.weights);
    finish(config, Stage::Translate, settings, &inputs, outputs)
}

/// Untuned and (when tuning is on) tuned scores on the test set.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigOutcome {
    pub untuned: EvalReport,
    pub tuned: Option<EvalReport>,
}

fn score_hypotheses(config: &ExperimentConfig, inputs: &mut Vec<PathBuf>) -> Result<ConfigOutcome> {
    let refs = load_tokenized(&config.corpus.test_target, Side::Target)?;
    inputs.push(config.corpus.test_target.clone());
    let mut score = |file: &str| -> Result<EvalReport> {
        let path = require(config.artifact(Stage::Translate, file), Stage::Translate)?;
        let hyps: Vec<Vec<String>> = read_lines(&path)?
            .iter()
            .map(|l| l.split_whitespace().map(String::from).collect())
            .collect();
        inputs.push(path);
        Ok(evaluate(&hyps, &refs)?)
    };
    let untuned = score(UNTUNED_HYP)?;
    let tuned = if config.tuning.enabled { Some(score(TUNED_HYP)?) } else { None };
    Ok(ConfigOutcome { untuned, tuned })
}

fn outcome_rows(name: &str, tuning: bool, outcome: &std::result::Result<ConfigOutcome, String>) -> Vec<ReportRow> {
    let triple = |r: &EvalReport| (r.bleu100(), r.meteor, r.ter100());
    let mut rows = vec![ReportRow {
        system: name.to_string(),
        tuned: false,
        scores: outcome.as_ref().map(|o| triple(&o.untuned)).map_err(Clone::clone),
    }];
    if tuning {
        rows.push(ReportRow {
            system: name.to_string(),
            tuned: true,
            scores: match outcome {
                Ok(o) => o.tuned.as_ref().map(triple).ok_or_else(|| "no tuned output".to_string()),
                Err(e) => Err(e.clone()),
            },
        });
    }
    rows
}

fn stage_evaluate(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let mut inputs = Vec::new();
    let outcome = score_hypotheses(config, &mut inputs)?;
    prepare_dir(config, Stage::Evaluate)?;
    let mut outputs = vec![config.artifact(Stage::Evaluate, UNTUNED_EVAL)];
    write_text(&outputs[0], &outcome.untuned.to_tsv())?;
    if let Some(t) = &outcome.tuned {
        let path = config.artifact(Stage::Evaluate, TUNED_EVAL);
        write_text(&path, &t.to_tsv())?;
        outputs.push(path);
    }
    let report = config.artifact(Stage::Evaluate, REPORT);
    write_text(
        &report,
        &format_report(&outcome_rows(&config.name, config.tuning.enabled, &Ok(outcome.clone()))),
    )?;
    outputs.push(report);
    finish(config, Stage::Evaluate, String::new(), &inputs, outputs)
}

/// Runs one stage; returns the files it wrote, manifest last.
pub fn run_stage(stage: Stage, config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    match stage {
        Stage::Clean => stage_clean(config),
        Stage::Augment => stage_augment(config),
        Stage::Align => stage_align(config),
        Stage::Phrases => stage_phrases(config),
        Stage::Lm => stage_lm(config),
        Stage::Tune => stage_tune(config),
        Stage::Translate => stage_translate(config),
        Stage::Evaluate => stage_evaluate(config),
    }
}

/// Every stage in order; tuning is skipped when disabled.
pub fn run_config(config: &ExperimentConfig) -> Result<ConfigOutcome> {
    config.validate()?;
    for stage in Stage::ALL {
        if stage == Stage::Tune && !config.tuning.enabled {
            continue;
        }
        run_stage(stage, config)?;
    }
    let mut inputs = Vec::new();
    score_hypotheses(config, &mut inputs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixReport {
    pub rows: Vec<ReportRow>,
}

impl MatrixReport {
    pub fn to_table(&self) -> String {
        format_report(&self.rows)
    }

    /// `system<TAB>tuning<TAB>bleu<TAB>meteor<TAB>ter` with failures as
    /// `FAILED<TAB>reason`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("system\ttuning\tbleu\tmeteor\tter\n");
        for r in &self.rows {
            let tuning = if r.tuned { "tuned" } else { "untuned" };
            match &r.scores {
                Ok((b, m, t)) => {
                    let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", r.system, tuning, b, m, t);
                }
                Err(e) => {
                    let _ = writeln!(out, "{}\t{}\tFAILED\t{}", r.system, tuning, e.replace(['\t', '\n'], " "));
                }
            }
        }
        out
    }
}

/// Runs every configuration end to end, one after another. A failing
/// configuration yields failed rows; the others still run.
pub fn run_matrix(configs: &[ExperimentConfig]) -> MatrixReport {
    let mut rows = Vec::new();
    for config in configs {
        let outcome = run_config(config).map_err(|e| e.to_string());
        if let Err(e) = &outcome {
            log::error!("[{}] failed: {}", config.name, e);
        }
        rows.extend(outcome_rows(&config.name, config.tuning.enabled, &outcome));
    }
    MatrixReport { rows }
}

/// The six-system ladder, each step adding one treatment to the previous:
/// uncleaned, cleaned, synset words, suffix splitting, function words and
/// verb phrases.
pub fn default_ladder(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let mut ladder = Vec::with_capacity(6);
    let mut cfg = base.clone();
    cfg.augment.suffix_split = false;
    cfg.augment.resources.clear();

    let mut push = |name: &str, cfg: &ExperimentConfig| {
        let mut c = cfg.clone();
        c.name = format!("{}_{}", base.name, name);
        ladder.push(c);
    };
    cfg.cleaning.enabled = false;
    push("uncleaned", &cfg);
    cfg.cleaning.enabled = true;
    push("cleaned", &cfg);
    cfg.augment.resources.push(ResourceKind::Synset);
    push("synsets", &cfg);
    cfg.augment.suffix_split = true;
    push("suffix_split", &cfg);
    cfg.augment.resources.push(ResourceKind::FunctionWord);
    push("function_words", &cfg);
    cfg.augment.resources.push(ResourceKind::VerbPhrase);
    push("verb_phrases", &cfg);
    ladder
}

/// Sizes and noise for a generated experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthLayout {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// Noisy pairs added to training, as a fraction of its size.
    pub noise_rate: f64,
}

impl Default for SynthLayout {
    fn default() -> Self {
        SynthLayout {
            train: 2000,
            dev: 200,
            test: 200,
            noise_rate: 0.0,
        }
    }
}

/// Generates a synthetic corpus, writes its train/dev/test files, lexicon
/// resources, a suffix file and `config.toml` into `dir`, and returns the
/// matching config. Held-out words are removed from training only.
pub fn write_synthetic_experiment(dir: &Path, name: &str, spec: &SynthSpec, layout: &SynthLayout) -> Result<ExperimentConfig> {
    let total = layout.train + layout.dev + layout.test;
    if total == 0 {
        return Err(PipelineError::InvalidConfig("synthetic corpus must have at least one pair".into()));
    }
    let generated = synth::generate(spec, total)?;
    let f = |n: usize| n as f64 / total as f64;
    let [train, dev, test] = synth::split(
        &generated.corpus,
        [f(layout.train), f(layout.dev), 1.0 - f(layout.train) - f(layout.dev)],
        spec.seed,
    )?;
    let train = generated.without_holdout(&train);
    let train = synth::add_noise(&train, layout.noise_rate, spec.seed.wrapping_add(1));

    let data = dir.join("data");
    std::fs::create_dir_all(&data).map_err(|e| CorpusError::io(&data, e))?;
    train.write(&data.join("train.src"), &data.join("train.tgt"))?;
    dev.write(&data.join("dev.src"), &data.join("dev.tgt"))?;
    test.write(&data.join("test.src"), &data.join("test.tgt"))?;
    generated.write_resources(&data)?;
    let mut suffixes = String::new();
    for s in synth::TARGET_SUFFIXES {
        let _ = writeln!(suffixes, "{}", s);
    }
    write_text(&data.join("suffixes.txt"), &suffixes)?;

    let config = ExperimentConfig {
        name: name.to_string(),
        output_dir: PathBuf::from("runs"),
        corpus: CorpusPaths {
            train_source: "data/train.src".into(),
            train_target: "data/train.tgt".into(),
            dev_source: "data/dev.src".into(),
            dev_target: "data/dev.tgt".into(),
            test_source: "data/test.src".into(),
            test_target: "data/test.tgt".into(),
        },
        cleaning: CleaningSection {
            target_script: "latin".into(),
            ..Default::default()
        },
        augment: AugmentSection {
            suffix_file: Some("data/suffixes.txt".into()),
            min_stem_length: Some(2),
            synset_file: Some("data/synsets.txt".into()),
            function_word_file: Some("data/function_words.txt".into()),
            verb_phrase_file: Some("data/verb_phrases.txt".into()),
            ..Default::default()
        },
        align: AlignSection::default(),
        phrases: PhraseSection::default(),
        lm: LmSection::default(),
        decoder: DecoderConfig::default(),
        weights: WeightsSection::default(),
        tuning: TuningSection::default(),
    };
    let path = dir.join("config.toml");
    write_text(&path, &config.to_toml())?;
    ExperimentConfig::load(&path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(dir: &Path) -> ExperimentConfig {
        let spec = SynthSpec {
            vocab_size: 40,
            ..Default::default()
        };
        let layout = SynthLayout {
            train: 150,
            dev: 10,
            test: 10,
            noise_rate: 0.2,
        };
        let mut c = write_synthetic_experiment(dir, "toy", &spec, &layout).unwrap();
        c.tuning.outer_iters = 2;
        c.tuning.nbest = 10;
        c
    }

    #[test]
    fn config_round_trips_through_toml() {
        let dir = tempfile::tempdir().unwrap();
        let c = synthetic(dir.path());
        let text = c.to_toml();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        assert!(text.contains("[cleaning]") && text.contains("[decoder]"));
    }

    #[test]
    fn overrides_replace_values() {
        let dir = tempfile::tempdir().unwrap();
        synthetic(dir.path());
        let path = dir.path().join("config.toml");
        let c = ExperimentConfig::load_with_overrides(
            &path,
            &["decoder.beam_size=7".into(), "name=other".into(), "tuning.enabled=false".into()],
        )
        .unwrap();
        assert_eq!(c.decoder.beam_size, 7);
        assert_eq!(c.name, "other");
        assert!(!c.tuning.enabled);
        assert!(ExperimentConfig::load_with_overrides(&path, &["decoder.nope=1".into()]).is_err());
        assert!(ExperimentConfig::load_with_overrides(&path, &["beam".into()]).is_err());
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let text = r#"
name = "demo"
output_dir = "out"

[corpus]
train_source = "a.src"
train_target = "a.tgt"
dev_source = "d.src"
dev_target = "d.tgt"
test_source = "t.src"
test_target = "t.tgt"

[decoder]
beam_size = 10
"#;
        let c: ExperimentConfig = toml::from_str(text).unwrap();
        assert_eq!(c.decoder.beam_size, 10);
        assert_eq!(c.decoder.distortion_limit, Some(6));
        assert!(c.cleaning.enabled && c.tuning.enabled);
        assert!(toml::from_str::<ExperimentConfig>(&text.replace("beam_size", "bogus")).is_err());
    }

    #[test]
    fn missing_upstream_names_producer() {
        let dir = tempfile::tempdir().unwrap();
        let c = synthetic(dir.path());
        match run_stage(Stage::Translate, &c) {
            Err(PipelineError::MissingArtifact { stage, path }) => {
                assert_eq!(stage, Stage::Phrases);
                assert!(path.ends_with(PHRASE_TABLE));
            }
            other => panic!("expected missing artifact, got {:?}", other),
        }
        let err = run_stage(Stage::Translate, &c).unwrap_err().to_string();
        assert!(err.contains("`phrases` stage"));
    }

    #[test]
    fn resources_must_exist() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = synthetic(dir.path());
        c.augment.resources = vec![ResourceKind::VerbPhrase];
        c.augment.verb_phrase_file = Some(dir.path().join("nope.txt"));
        assert!(matches!(c.validate(), Err(PipelineError::InvalidConfig(_))));
        c.augment.verb_phrase_file = None;
        assert!(c.validate().is_err());
    }

    #[test]
    fn clean_stage_writes_report_and_view() {
        let dir = tempfile::tempdir().unwrap();
        let c = synthetic(dir.path());
        let outputs = run_stage(Stage::Clean, &c).unwrap();
        assert!(outputs.last().unwrap().ends_with(MANIFEST));
        let flags = std::fs::read_to_string(c.artifact(Stage::Clean, FLAG_REPORT)).unwrap();
        assert!(!flags.is_empty());
        let kept = read_lines(&c.artifact(Stage::Clean, TRAIN_SRC)).unwrap().len();
        let raw = read_lines(&c.corpus.train_source).unwrap().len();
        assert!(kept < raw);
    }

    #[test]
    fn ladder_has_six_systems() {
        let dir = tempfile::tempdir().unwrap();
        let c = synthetic(dir.path());
        let ladder = default_ladder(&c);
        assert_eq!(ladder.len(), 6);
        assert!(!ladder[0].cleaning.enabled);
        assert!(ladder[1].cleaning.enabled && ladder[1].augment.resources.is_empty());
        assert_eq!(ladder[5].augment.resources.len(), 3);
        assert!(ladder[3].augment.suffix_split);
        for l in &ladder {
            l.validate().unwrap();
        }
    }

    #[test]
    fn matrix_records_failures_per_row() {
        let dir = tempfile::tempdir().unwrap();
        let good = synthetic(dir.path());
        let mut bad = good.clone();
        bad.name = "broken".into();
        bad.corpus.train_source = dir.path().join("missing.src");
        let report = run_matrix(&[bad, good]);
        assert_eq!(report.rows.len(), 4);
        assert!(report.rows[0].scores.is_err() && report.rows[1].scores.is_err());
        assert!(report.rows[2].scores.is_ok() && report.rows[3].scores.is_ok());
        assert!(report.to_table().contains("FAILED"));
    }
}
