//! Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any
//! fails.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use rand::Rng;
use smt_core::align::{train_model1, Model1Config};
use smt_core::corpus::{Origin, ParallelCorpus, SentencePair, Side};
use smt_core::decoder::{decode, nbest, DecodeError, DecoderConfig, Translation, WeightVector, NUM_FEATURES};
use smt_core::lexicon::{inject, split_suffixes, split_tokens, LexiconEntry, ResourceKind, SuffixInventory};
use smt_core::lm::{train_lm, LmConfig, Smoothing};
use smt_core::mert::{pool_bleu, tune, DevPair, TuneConfig};
use smt_core::metrics::{bleu, meteor_lite, ter, BleuSmoothing, MeteorParams};
use smt_core::phrase::extract_phrases;
use smt_core::pipeline::{
    default_ladder, run_config, run_matrix, run_stage, write_synthetic_experiment, ExperimentConfig, Stage,
    SynthLayout, TUNING_LOG,
};
use smt_core::synth::{SynthSpec, WordOrder};

const EM_TOL: f64 = 1e-12;
const LL_TOL: f64 = 1e-9;
const PHRASE_INSTANCES: usize = 500;
const DECODE_INSTANCES: usize = 200;
const DECODE_TOL: f64 = 1e-6;
const GOLDEN_TOL: f64 = 1e-9;
const E2E_MIN_BLEU: f64 = 0.90;
const LADDER_SEEDS: [u64; 3] = [1, 2, 3];
const LADDER_MIN_HOLDING: usize = 2;
const LADDER_NOISE: f64 = 0.3;
const LADDER_OOV: f64 = 0.1;
const INVARIANT_INSTANCES: usize = 200;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn em_toy() -> Check {
    let c = corpus_of(&[("a b", "x y"), ("a c", "x z")]);
    let cfg = |iterations| Model1Config {
        iterations,
        use_null: false,
        min_gain_per_pair: None,
    };
    let t = train_model1(&c, &cfg(1)).map_err(|e| e.to_string())?.table;
    for (w, want) in [("x", 0.5), ("y", 0.25), ("z", 0.25)] {
        let got = t.prob("a", w);
        ensure((got - want).abs() <= EM_TOL, || format!("t({}|a) = {} expected {}", w, got, want))?;
    }
    let ll = train_model1(&c, &cfg(10)).map_err(|e| e.to_string())?.log_likelihood;
    ensure(ll.len() == 10, || format!("{} iterations recorded", ll.len()))?;
    for w in ll.windows(2) {
        ensure(w[1] >= w[0] - LL_TOL, || format!("log-likelihood fell: {:?}", ll))?;
    }
    Ok(format!("t(x|a)=.5 t(y|a)=t(z|a)=.25, log-likelihood {:.6} -> {:.6}", ll[0], ll[9]))
}

fn phrase_oracle() -> Check {
    let mut r = rng(11);
    let mut total = 0;
    for k in 0..PHRASE_INSTANCES {
        let (pair, a) = random_linked_pair(&mut r);
        let max_len = r.gen_range(1..=7);
        let got = extract_phrases(&pair, &a, max_len).map_err(|e| e.to_string())?;
        let want = exhaustive_phrases(&pair, &a, max_len);
        ensure(got == want, || format!("instance {} differs: {} vs {} pairs", k, got.len(), want.len()))?;
        total += want.len();
    }
    Ok(format!("{} instances, {} phrase pairs, 0 mismatches", PHRASE_INSTANCES, total))
}

fn decoder_oracle() -> Check {
    let mut r = rng(12);
    let config = DecoderConfig::unlimited();
    let mut worst = 0.0f64;
    for k in 0..DECODE_INSTANCES {
        let inst = random_decode_instance(&mut r);
        let got = decode(&inst.sentence, &inst.table, &inst.lm, &inst.weights, &config).map_err(|e| e.to_string())?;
        let want = brute_force_best(&inst, &config).ok_or("brute force found nothing")?;
        let diff = (got.score - want).abs();
        ensure(diff <= DECODE_TOL, || format!("instance {}: decoder {} brute force {}", k, got.score, want))?;
        worst = worst.max(diff);
    }
    Ok(format!("{} instances, max |diff| {:.2e}", DECODE_INSTANCES, worst))
}

fn golden_metrics() -> Check {
    let b = |h: &str, r: &str, n| bleu(&[toks(h)], &[toks(r)], n, BleuSmoothing::None).map_err(|e| e.to_string());
    let t = |h: &str, r: &str| ter(&toks(h), &toks(r)).map(|x| x.score).map_err(|e| e.to_string());
    let checks = [
        ("BLEU identity", b("the cat sat on the mat", "the cat sat on the mat", 4)?.score, 1.0, 0.0),
        (
            "BLEU brevity",
            b("the cat sat", "the cat sat down", 2)?.score,
            (1.0f64 - 4.0 / 3.0).exp(),
            GOLDEN_TOL,
        ),
        ("clipped p1", b("the the the", "the cat", 1)?.precisions[0], 1.0 / 3.0, 0.0),
        ("TER identity", t("a b c d e", "a b c d e")?, 0.0, 0.0),
        ("TER substitution", t("a b c d e", "a b x d e")?, 0.2, GOLDEN_TOL),
        ("TER shift", t("c a b", "a b c")?, 1.0 / 3.0, GOLDEN_TOL),
        (
            "METEOR identity",
            meteor_lite(&toks("a b"), &toks("a b"), MeteorParams::default()).score,
            0.9375,
            GOLDEN_TOL,
        ),
    ];
    for (name, got, want, tol) in checks {
        ensure((got - want).abs() <= tol, || format!("{} = {} expected {}", name, got, want))?;
    }
    Ok(format!("{} golden values", checks.len()))
}

fn flip_example() -> Result<f64, String> {
    let feat = |x: f64| {
        let mut f = [0.0; NUM_FEATURES];
        f[0] = x;
        f
    };
    let dev: Vec<DevPair> = vec![(toks("s1"), toks("good one")), (toks("s2"), toks("fine two"))];
    let decode = |src: &[String], w: &WeightVector, _n: usize| -> Result<Vec<Translation>, DecodeError> {
        let (good, bad) = if src[0] == "s1" { ("good one", "bad one") } else { ("fine two", "poor two") };
        let mut list: Vec<Translation> = [(good, feat(-1.0)), (bad, feat(1.0))]
            .into_iter()
            .map(|(t, f)| Translation {
                target: toks(t),
                features: f,
                score: w.dot(&f),
                derivation: Vec::new(),
            })
            .collect();
        list.sort_by(|a, b| b.score.total_cmp(&a.score));
        Ok(list)
    };
    let (w, state) = tune(&dev, decode, WeightVector(feat(1.0)), &TuneConfig::default()).map_err(|e| e.to_string())?;
    Ok(pool_bleu(&state.pools, &w, BleuSmoothing::None))
}

fn history_of(config: &ExperimentConfig) -> Result<Vec<f64>, String> {
    let path = config.stage_dir(Stage::Tune).join(TUNING_LOG);
    let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {}", path.display(), e))?;
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split('\t').nth(1).and_then(|v| v.parse().ok()).ok_or(format!("bad log line {:?}", l)))
        .collect()
}

fn tuning(work: &Path) -> Check {
    let flip = flip_example()?;
    ensure(flip == 1.0, || format!("flip example reached pool BLEU {}", flip))?;
    let sets = [
        ("monotone", WordOrder::Monotone, 0.0, 1),
        ("svo_to_sov", WordOrder::SvoToSov, 0.0, 1),
        ("svo_to_sov+inflection", WordOrder::SvoToSov, 0.2, 5),
    ];
    let mut notes = Vec::new();
    let mut falls = 0;
    for (name, word_order, inflection_rate, seed) in sets {
        let spec = SynthSpec {
            word_order,
            inflection_rate,
            seed,
            ..Default::default()
        };
        let dir = work.join("tuning").join(name.replace('+', "_"));
        let config = write_synthetic_experiment(&dir, "tuning", &spec, &SynthLayout::default()).map_err(|e| e.to_string())?;
        for stage in [Stage::Clean, Stage::Augment, Stage::Align, Stage::Phrases, Stage::Lm, Stage::Tune] {
            run_stage(stage, &config).map_err(|e| e.to_string())?;
        }
        let h = history_of(&config)?;
        let fell = h.windows(2).any(|w| w[1] < w[0]);
        falls += fell as usize;
        let shown: Vec<String> = h.iter().map(|x| format!("{:.4}", x)).collect();
        notes.push(format!("{} {}[{}]", name, if fell { "FELL " } else { "" }, shown.join(" ")));
    }
    let summary = format!("flip example BLEU 1.0; dev pool BLEU histories: {}", notes.join("; "));
    ensure(falls == 0, || summary.clone())?;
    Ok(summary)
}

fn end_to_end(work: &Path) -> Check {
    let spec = SynthSpec::default();
    let config = write_synthetic_experiment(&work.join("e2e"), "e2e", &spec, &SynthLayout::default()).map_err(|e| e.to_string())?;
    let outcome = run_config(&config).map_err(|e| e.to_string())?;
    let tuned = outcome.tuned.ok_or("no tuned output")?;
    ensure(tuned.bleu.score >= E2E_MIN_BLEU, || format!("tuned test BLEU {:.4}", tuned.bleu.score))?;
    Ok(format!(
        "untuned BLEU {:.4}, tuned BLEU {:.4}, tuned TER {:.4}",
        outcome.untuned.bleu.score, tuned.bleu.score, tuned.ter
    ))
}

fn ladder(work: &Path) -> Check {
    let mut holding = 0;
    let mut notes = Vec::new();
    for seed in LADDER_SEEDS {
        let spec = SynthSpec {
            word_order: WordOrder::SvoToSov,
            oov_holdout: LADDER_OOV,
            seed,
            ..Default::default()
        };
        let layout = SynthLayout {
            noise_rate: LADDER_NOISE,
            ..Default::default()
        };
        let name = format!("ladder{}", seed);
        let base = write_synthetic_experiment(&work.join(&name), &name, &spec, &layout).map_err(|e| e.to_string())?;
        let full = default_ladder(&base);
        // uncleaned with noise, cleaned, cleaned plus every lexicon resource
        let systems = [full[0].clone(), full[1].clone(), full[5].clone()];
        let report = run_matrix(&systems);
        println!("seed {}\n{}", seed, report.to_table().trim_end());
        let untuned: Vec<(f64, f64)> = report
            .rows
            .iter()
            .filter(|r| !r.tuned)
            .map(|r| r.scores.clone().map(|(b, _, t)| (b, t)))
            .collect::<Result<_, _>>()?;
        let ok = untuned.windows(2).all(|w| w[1].0 > w[0].0 && w[1].1 < w[0].1);
        holding += ok as usize;
        let shown: Vec<String> = untuned.iter().map(|(b, t)| format!("{:.2}/{:.2}", b, t)).collect();
        notes.push(format!("seed {} {} [{}]", seed, if ok { "holds" } else { "breaks" }, shown.join(" ")));
    }
    let summary = format!("{}/{} seeds ordered (BLEU/TER untuned): {}", holding, LADDER_SEEDS.len(), notes.join("; "));
    ensure(holding >= LADDER_MIN_HOLDING, || summary.clone())?;
    Ok(summary)
}

fn random_corpus(r: &mut impl Rng, words: &[&str]) -> ParallelCorpus {
    let n = r.gen_range(1..8);
    let side = |r: &mut dyn rand::RngCore| -> Vec<String> {
        let len = r.gen_range(1..6);
        (0..len).map(|_| words[r.gen_range(0..words.len())].to_string()).collect()
    };
    ParallelCorpus::new(
        (0..n)
            .map(|i| {
                let s = side(r);
                let t: Vec<String> = side(r).iter().map(|w| w.to_uppercase()).collect();
                SentencePair::new(s, t, Origin::new("inv", i + 1))
            })
            .collect(),
    )
}

fn invariants(work: &Path) -> Check {
    let mut r = rng(13);
    let words = ["ab", "bes", "cd", "des", "es", "s"];
    let inv = SuffixInventory::new(["es", "s"], 2).map_err(|e| e.to_string())?;
    for k in 0..INVARIANT_INSTANCES {
        let c = random_corpus(&mut r, &words);
        let m = train_model1(
            &c,
            &Model1Config {
                iterations: 5,
                use_null: true,
                min_gain_per_pair: None,
            },
        )
        .map_err(|e| e.to_string())?;
        let err = m.table.max_normalization_error();
        ensure(err < 1e-9, || format!("align normalization off by {} (instance {})", err, k))?;

        let text: Vec<Vec<String>> = c.pairs.iter().map(|p| p.target.clone()).collect();
        let lm = train_lm(&text, &LmConfig::new(3, Smoothing::AddK(0.1))).map_err(|e| e.to_string())?;
        let vocab: Vec<&str> = lm.vocab().filter(|w| *w != "<s>").collect();
        for ctx in text.iter().chain(std::iter::once(&Vec::new())) {
            let total: f64 = vocab.iter().map(|w| lm.prob(ctx, w)).sum();
            ensure((total - 1.0).abs() < 1e-6, || format!("lm distribution sums to {}", total))?;
        }

        let entries: Vec<LexiconEntry> = (0..3)
            .map(|i| LexiconEntry::new(vec![format!("lex{}", i)], vec![format!("LEX{}{}", k, i)], ResourceKind::Synset))
            .collect();
        let out = inject(&c, &entries, 1).map_err(|e| e.to_string())?;
        for side in [Side::Source, Side::Target] {
            let (before, after) = (c.vocab(side), out.vocab(side));
            ensure(before.keys().all(|w| after.contains_key(w)), || "inject lost a word".into())?;
        }
        ensure(
            entries.iter().all(|e| out.vocab(Side::Target).contains_key(&e.target[0])),
            || "inject missed a lexicon word".into(),
        )?;

        let split = split_suffixes(&c.swapped(), &inv, Side::Target);
        for (a, b) in split.pairs.iter().zip(&c.pairs) {
            ensure(a.target.len() >= b.source.len() && a.source == b.target, || "split touched the wrong side".into())?;
            for tok in &b.source {
                ensure(split_tokens(std::slice::from_ref(tok), &inv).concat() == *tok, || format!("{} not restored", tok))?;
            }
        }

        let d = random_decode_instance(&mut r);
        let list = nbest(&d.sentence, &d.table, &d.lm, &d.weights, &DecoderConfig::default(), 10).map_err(|e| e.to_string())?;
        let distinct: BTreeSet<&Vec<String>> = list.iter().map(|t| &t.target).collect();
        ensure(distinct.len() == list.len(), || "duplicate n-best target".into())?;
        ensure(list.windows(2).all(|w| w[0].score >= w[1].score), || "n-best out of order".into())?;
    }

    let spec = SynthSpec {
        vocab_size: 40,
        ..Default::default()
    };
    let layout = SynthLayout {
        train: 200,
        dev: 15,
        test: 15,
        noise_rate: 0.2,
    };
    let mut config = write_synthetic_experiment(&work.join("manifest"), "manifest", &spec, &layout).map_err(|e| e.to_string())?;
    config.tuning.outer_iters = 2;
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        run_config(&config).map_err(|e| e.to_string())?;
        let mut files = Vec::new();
        for stage in Stage::ALL {
            let mut entries: Vec<_> = std::fs::read_dir(config.stage_dir(stage))
                .map_err(|e| e.to_string())?
                .map(|e| e.map(|e| e.path()))
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            entries.sort();
            for p in entries {
                let bytes = std::fs::read(&p).map_err(|e| e.to_string())?;
                files.push((p, bytes));
            }
        }
        snapshots.push(files);
    }
    ensure(snapshots[0] == snapshots[1], || "stage artifacts differ between runs".into())?;
    Ok(format!(
        "{} random instances per suite, {} artifacts byte-identical across reruns",
        INVARIANT_INSTANCES,
        snapshots[0].len()
    ))
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let w = work.path();
    let criteria: Vec<(&str, Duration, Box<dyn Fn() -> Check + '_>)> = vec![
        ("EM toy corpus", Duration::from_secs(1), Box::new(em_toy)),
        ("phrase extraction oracle", Duration::from_secs(10), Box::new(phrase_oracle)),
        ("decoder brute-force oracle", Duration::from_secs(30), Box::new(decoder_oracle)),
        ("metric golden values", Duration::MAX, Box::new(golden_metrics)),
        ("tuning monotonicity and flip example", Duration::MAX, Box::new(|| tuning(w))),
        ("end-to-end monotone corpus", Duration::from_secs(120), Box::new(|| end_to_end(w))),
        ("directional ladder", Duration::from_secs(600), Box::new(|| ladder(w))),
        ("invariant suites", Duration::MAX, Box::new(|| invariants(w))),
    ];
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let result = match result {
            Ok(msg) if took > *limit => Err(format!("{} but took longer than {:?}", msg, limit)),
            other => other,
        };
        match result {
            Ok(msg) => println!("PASS {} {} ({:.2}s): {}", i + 1, name, took.as_secs_f64(), msg),
            Err(msg) => {
                failed += 1;
                println!("FAIL {} {} ({:.2}s): {}", i + 1, name, took.as_secs_f64(), msg);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
