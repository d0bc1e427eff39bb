//! Trains the toy preset on the synthetic locate task and reports held-out
//! accuracy and slate recall.
//!
//! cargo run --release --example locate_task -- [num_examples] [seed]

use epireader::config::{Preset, TrainConfig};
use epireader::data::{generate_synthetic, SyntheticSpec, SyntheticTask};
use epireader::model::{EpiReader, Evidence};
use epireader::train::{evaluate, EvalOptions, Trainer};

fn main() -> epireader::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let n = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);

    let corpus = generate_synthetic(&SyntheticSpec::new(SyntheticTask::Locate, n, seed))?;
    let data = corpus.prepare()?;
    let mut config = TrainConfig::from_preset(Preset::Toy);
    config.seed = seed;
    let (reader, params) = EpiReader::new(config.dims, data.vocab.len(), seed);
    let outcome = Trainer::new(&reader, &config, params).fit(&data.train, &data.valid, |_| Ok(()))?;

    let opts = EvalOptions {
        full: true,
        evidence: Evidence::Reasoner,
        workers: 4,
    };
    let report = evaluate(&reader, &outcome.params, &data.test, opts)?;
    let recall = report
        .predictions
        .iter()
        .filter(|p| p.combined.as_ref().is_some_and(|c| c.slate.contains(&p.gold)))
        .count() as f64
        / report.examples as f64;
    println!(
        "best epoch {}  test extractor {:.4}  full {:.4}  top-{} recall {:.4}",
        outcome.best_epoch,
        report.acc_extractor,
        report.acc_full.unwrap_or(0.0),
        config.dims.k,
        recall
    );
    Ok(())
}
