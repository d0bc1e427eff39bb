//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

mod common;

use std::fs;
use std::io::Write;
use std::time::Instant;

use epireader::autodiff::{FaultInjection, Tape};
use epireader::cli::{run, CHECKPOINT_FILE, METRICS_FILE};
use epireader::config::{Preset, TrainConfig};
use epireader::data::{
    build_vocab, generate_synthetic, parse_cbt, parse_cnn, render_cbt_corpus, Prepared, RawCloze, SyntheticSpec,
    SyntheticTask,
};
use epireader::extractor::aggregate_word_probs;
use epireader::micro::{micro_instance, MICRO_DIMS, MICRO_TOLERANCE};
use epireader::model::{combine_probabilities, EpiReader, Evidence};
use epireader::train::{evaluate, EvalOptions, EvalReport, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, ok: String, bad: String) -> Outcome {
    if cond {
        Ok(ok)
    } else {
        Err(bad)
    }
}

fn micro_gradients() -> Outcome {
    let start = Instant::now();
    let micro = micro_instance(0).map_err(|e| e.to_string())?;
    let report = micro.check(FaultInjection::None).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<_> = report.failures().map(|t| t.name.clone()).collect();
    check(
        failed.is_empty() && secs < 60.0,
        format!(
            "{} tensors, max rel err {:.2e} <= {MICRO_TOLERANCE:e}, {secs:.1}s",
            report.tensors.len(),
            report.max_rel_err()
        ),
        format!("failed {failed:?}, {secs:.1}s"),
    )
}

fn is_distribution(p: &[f64]) -> bool {
    !p.is_empty() && p.iter().all(|&x| (0.0..=1.0 + 1e-9).contains(&x)) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-9
}

fn probability_invariants() -> Outcome {
    const TRIALS: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut bad = Vec::new();

    for _ in 0..TRIALS {
        let n = rng.gen_range(1..40);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let mut tape = Tape::new();
        let v = tape.constant(&[n], x).unwrap();
        let p = tape.softmax(v, None).unwrap();
        if !is_distribution(tape.value(p)) {
            bad.push("softmax");
        }
    }

    for _ in 0..TRIALS {
        let n = rng.gen_range(1..60);
        let ids: Vec<usize> = (0..n).map(|_| rng.gen_range(0..12)).collect();
        let s: Vec<f64> = vec![1.0 / n as f64; n];
        let wp = aggregate_word_probs(&s, &ids, None).unwrap();
        let mut seen = Vec::new();
        for &w in &ids {
            if seen.contains(&w) {
                continue;
            }
            seen.push(w);
            let mut total = 0.0;
            for (i, &v) in ids.iter().enumerate() {
                if v == w {
                    total += s[i];
                }
            }
            if wp.get(w).map(|e| e.prob.to_bits()) != Some(total.to_bits()) {
                bad.push("aggregation");
            }
        }
        if wp.entries.len() != seen.len() || (wp.total() - 1.0).abs() > 1e-9 {
            bad.push("aggregation");
        }
    }

    for _ in 0..TRIALS {
        let k = rng.gen_range(1..12);
        let e: Vec<f64> = (0..k).map(|_| rng.gen_range(1e-6..1.0)).collect();
        let ze: f64 = e.iter().sum();
        let e: Vec<f64> = e.iter().map(|x| x / ze).collect();
        let p: Vec<f64> = (0..k).map(|_| rng.gen_range(1e-6..1.0) / k as f64).collect();
        if !combine_probabilities(&e, &p).is_ok_and(|pi| is_distribution(&pi)) {
            bad.push("combination");
        }
    }

    let corpus = generate_synthetic(&SyntheticSpec::new(SyntheticTask::Alternation, TRIALS, 17)).unwrap();
    let all: Vec<RawCloze> = corpus
        .train
        .into_iter()
        .chain(corpus.valid)
        .chain(corpus.test)
        .collect();
    let vocab = build_vocab(&all, 1);
    let (reader, params) = EpiReader::new(MICRO_DIMS, vocab.len(), 17);
    for raw in &all {
        let ex = vocab.encode(raw).unwrap();
        let pred = reader.predict(&params, &ex, Evidence::Reasoner, true).unwrap();
        let c = pred.combined.unwrap();
        if !is_distribution(&c.e) {
            bad.push("reasoner softmax");
        }
        if !is_distribution(&c.pi) {
            bad.push("combination on model output");
        }
    }
    bad.dedup();
    check(
        bad.is_empty(),
        format!("{TRIALS} trials each of softmax, aggregation, reasoner softmax, combination"),
        format!("violations in {bad:?}"),
    )
}

fn locate_data(n: usize, seed: u64) -> Prepared {
    generate_synthetic(&SyntheticSpec::new(SyntheticTask::Locate, n, seed))
        .unwrap()
        .prepare()
        .unwrap()
}

fn uniform_evidence_reduces_to_extractor() -> Outcome {
    let data = locate_data(5000, 23);
    let fixture = &data.train[..500];
    let mut config = TrainConfig::from_preset(Preset::Toy);
    config.lambda = 0.0;
    config.max_epochs = 1;
    let (reader, params) = EpiReader::new(config.dims, data.vocab.len(), 23);
    let outcome = Trainer::new(&reader, &config, params)
        .fit(fixture, &data.valid, |_| Ok(()))
        .map_err(|e| e.to_string())?;
    let opts = EvalOptions {
        full: true,
        evidence: Evidence::Uniform,
        workers: 1,
    };
    let r = evaluate(&reader, &outcome.params, fixture, opts).map_err(|e| e.to_string())?;
    let same = r
        .predictions
        .iter()
        .filter(|p| p.combined.as_ref().map(|c| c.answer) == p.extractor)
        .count();
    check(
        same == fixture.len(),
        format!("{same}/{} argmax agreement", fixture.len()),
        format!("only {same}/{} agree", fixture.len()),
    )
}

fn slate_recall(r: &EvalReport) -> f64 {
    r.predictions
        .iter()
        .filter(|p| p.combined.as_ref().is_some_and(|c| c.slate.contains(&p.gold)))
        .count() as f64
        / r.examples.max(1) as f64
}

struct Trained {
    report: EvalReport,
    epochs: usize,
    secs: f64,
}

fn train_toy(task: SyntheticTask, seed: u64) -> Result<Trained, String> {
    let start = Instant::now();
    let data = generate_synthetic(&SyntheticSpec::new(task, 5000, seed))
        .and_then(|c| c.prepare())
        .map_err(|e| e.to_string())?;
    let mut config = TrainConfig::from_preset(Preset::Toy);
    config.seed = seed;
    let (reader, params) = EpiReader::new(config.dims, data.vocab.len(), seed);
    let outcome = Trainer::new(&reader, &config, params)
        .fit(&data.train, &data.valid, |_| Ok(()))
        .map_err(|e| e.to_string())?;
    let opts = EvalOptions {
        full: true,
        evidence: Evidence::Reasoner,
        workers: 1,
    };
    let report = evaluate(&reader, &outcome.params, &data.test, opts).map_err(|e| e.to_string())?;
    Ok(Trained {
        report,
        epochs: outcome.metrics.len(),
        secs: start.elapsed().as_secs_f64(),
    })
}

fn alternation_gap(t: &Trained) -> Outcome {
    let full = t.report.acc_full.unwrap_or(0.0);
    let ex = t.report.acc_extractor;
    let gap = 100.0 * (full - ex);
    check(
        gap >= 5.0,
        format!("full {full:.4} vs extractor {ex:.4}: +{gap:.1} points"),
        format!("full {full:.4} vs extractor {ex:.4}: {gap:+.1} points"),
    )
}

fn format_fidelity() -> Outcome {
    let text = common::cbt_fixture(100, 29);
    let corpus = parse_cbt(text.as_bytes()).map_err(|e| e.to_string())?;
    if corpus.examples.len() != 100 || render_cbt_corpus(&corpus.examples) != text {
        return Err("CBT round trip is lossy".into());
    }
    parse_cnn(common::CNN_STORY.as_bytes()).map_err(|e| format!("conforming CNN story rejected: {e}"))?;
    for (what, story, kind) in common::cnn_mutations() {
        match parse_cnn(story.as_bytes()) {
            Err(e) if e.parse_kind() == Some(kind) => {}
            Err(e) => return Err(format!("{what}: wrong class {e}")),
            Ok(_) => return Err(format!("{what}: accepted")),
        }
    }
    Ok("100 CBT blocks round-trip, CNN fixture accepted, 5 mutations rejected".into())
}

fn cli(args: &[&str]) -> Result<String, String> {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run(
        std::iter::once("epireader").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    if code != 0 {
        return Err(format!("exit {code}: {}", String::from_utf8_lossy(&err)));
    }
    Ok(String::from_utf8_lossy(&out).into_owned())
}

fn metrics_without_wallclock(path: &std::path::Path) -> Result<Vec<serde_json::Value>, String> {
    let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
    text.lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).map_err(|e| e.to_string())?;
            v.as_object_mut().unwrap().remove("wallclock_s");
            Ok(v)
        })
        .collect()
}

fn reproducible_training() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = dir.path();
    let data = d.join("data");
    cli(&[
        "gen-data",
        "--task",
        "locate",
        "--examples",
        "400",
        "--seed",
        "7",
        "--out",
        data.to_str().unwrap(),
    ])?;
    let train = data.join("train.txt");
    let valid = data.join("valid.txt");
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let out = d.join(name);
        cli(&[
            "train",
            "--preset",
            "toy",
            "--seed",
            "7",
            "--epochs",
            "3",
            "--train",
            train.to_str().unwrap(),
            "--valid",
            valid.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])?;
        let ck = fs::read(out.join(CHECKPOINT_FILE)).map_err(|e| e.to_string())?;
        runs.push((metrics_without_wallclock(&out.join(METRICS_FILE))?, ck));
    }
    check(
        runs[0] == runs[1],
        format!(
            "{} epochs, checkpoints of {} bytes identical",
            runs[0].0.len(),
            runs[0].1.len()
        ),
        "runs differ".into(),
    )
}

fn presets() -> Outcome {
    let expected = [
        (Preset::CbtNe, (300, 128, 5, 3, 16, 32)),
        (Preset::CbtCn, (300, 128, 5, 3, 32, 32)),
        (Preset::Cnn, (384, 256, 10, 3, 32, 32)),
    ];
    for (p, (de, dh, k, m, nf, ds)) in expected {
        let c = TrainConfig::from_preset(p);
        let d = c.dims;
        if (d.embed_dim, d.hidden, d.k, d.width, d.filters, d.agg_hidden) != (de, dh, k, m, nf, ds) {
            return Err(format!("{p:?} dims {d:?}"));
        }
        let shared = (c.learning_rate, c.batch_size, c.patience, c.lambda, c.gamma, c.l2);
        if shared != (0.001, 32, 2, 50.0, 0.04, 0.001) {
            return Err(format!("{p:?} shared constants {shared:?}"));
        }
    }
    Ok("CBT-NE, CBT-CN and CNN presets match".into())
}

fn main() {
    let mut lines: Vec<(usize, Outcome)> = Vec::new();
    let mut report = |n: usize, o: Outcome| {
        let line = match &o {
            Ok(msg) => format!("PASS criterion {n}: {msg}"),
            Err(msg) => format!("FAIL criterion {n}: {msg}"),
        };
        println!("{line}");
        std::io::stdout().flush().unwrap();
        lines.push((n, o));
    };

    report(1, micro_gradients());
    report(2, probability_invariants());
    report(3, uniform_evidence_reduces_to_extractor());

    match train_toy(SyntheticTask::Locate, 31) {
        Ok(t) => {
            let acc = t.report.acc_full.unwrap_or(0.0);
            report(
                4,
                check(
                    acc >= 0.95 && t.epochs <= 20 && t.secs < 600.0,
                    format!("test accuracy {acc:.4} after {} epochs, {:.0}s", t.epochs, t.secs),
                    format!("test accuracy {acc:.4} after {} epochs, {:.0}s", t.epochs, t.secs),
                ),
            );
            let recall = slate_recall(&t.report);
            report(
                6,
                check(
                    recall >= 0.99,
                    format!("top-5 slate recall {recall:.4}"),
                    format!("top-5 slate recall {recall:.4}"),
                ),
            );
        }
        Err(e) => {
            report(4, Err(e.clone()));
            report(6, Err(e));
        }
    }

    report(
        5,
        train_toy(SyntheticTask::Alternation, 37).and_then(|t| alternation_gap(&t)),
    );
    report(7, format_fidelity());
    report(8, reproducible_training());
    report(9, presets());

    let failed: Vec<usize> = lines.iter().filter(|(_, o)| o.is_err()).map(|(n, _)| *n).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
