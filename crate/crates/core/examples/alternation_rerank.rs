//! Trains on the synthetic alternation task, where summed pointer mass
//! cannot tell the answer from its distractors, and compares extractor
//! accuracy with the reranked full model.
//!
//! cargo run --release --example alternation_rerank -- [num_examples] [seed] [max_epochs] [patience]

use epireader::config::{Preset, TrainConfig};
use epireader::data::{generate_synthetic, SyntheticSpec, SyntheticTask};
use epireader::model::{EpiReader, Evidence};
use epireader::train::{evaluate, EvalOptions, Trainer};

fn main() -> epireader::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let n = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);

    let corpus = generate_synthetic(&SyntheticSpec::new(SyntheticTask::Alternation, n, seed))?;
    let data = corpus.prepare()?;
    let mut config = TrainConfig::from_preset(Preset::Toy);
    config.seed = seed;
    if let Some(e) = args.get(3).and_then(|s| s.parse().ok()) {
        config.max_epochs = e;
    }
    if let Some(p) = args.get(4).and_then(|s| s.parse().ok()) {
        config.patience = p;
    }
    let (reader, params) = EpiReader::new(config.dims, data.vocab.len(), seed);
    let outcome = Trainer::new(&reader, &config, params).fit(&data.train, &data.valid, |_| Ok(()))?;

    let opts = EvalOptions {
        full: true,
        evidence: Evidence::Reasoner,
        workers: 4,
    };
    let report = evaluate(&reader, &outcome.params, &data.test, opts)?;
    let full = report.acc_full.unwrap_or(0.0);
    println!(
        "best epoch {}  test extractor {:.4}  full {:.4}  gap {:+.1} points",
        outcome.best_epoch,
        report.acc_extractor,
        full,
        100.0 * (full - report.acc_extractor)
    );
    Ok(())
}
