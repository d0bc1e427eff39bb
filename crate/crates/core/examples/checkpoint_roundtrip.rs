//! Trains for one epoch, saves a checkpoint, reloads it against the
//! vocabulary hash and confirms that evaluation is unchanged. A checkpoint
//! checked against the wrong vocabulary is refused.
//!
//! cargo run --release --example checkpoint_roundtrip -- [num_examples]

use epireader::checkpoint::Checkpoint;
use epireader::config::{Preset, TrainConfig};
use epireader::data::{generate_synthetic, SyntheticSpec, SyntheticTask};
use epireader::model::{EpiReader, Evidence};
use epireader::train::{evaluate, EvalOptions, Trainer};

fn main() -> epireader::Result<()> {
    let n = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(500);
    let data = generate_synthetic(&SyntheticSpec::new(SyntheticTask::Locate, n, 5))?.prepare()?;
    let mut config = TrainConfig::from_preset(Preset::Toy);
    config.max_epochs = 1;
    let (reader, params) = EpiReader::new(config.dims, data.vocab.len(), config.seed);
    let outcome = Trainer::new(&reader, &config, params).fit(&data.train, &data.valid, |_| Ok(()))?;

    let ck = Checkpoint {
        config: config.clone(),
        vocab_size: data.vocab.len(),
        vocab_hash: data.vocab.hash(),
        params: outcome.params,
        optimizer: outcome.optimizer,
    };
    let dir = std::env::temp_dir().join(format!("epireader-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.epir");
    ck.save(&path)?;
    println!("saved {} bytes to {}", std::fs::metadata(&path)?.len(), path.display());

    let loaded = Checkpoint::load(&path, Some(data.vocab.hash()))?;
    let opts = EvalOptions {
        full: true,
        evidence: Evidence::Reasoner,
        workers: 1,
    };
    let before = evaluate(&reader, &ck.params, &data.test, opts)?;
    let after = evaluate(&loaded.reader(), &loaded.params, &data.test, opts)?;
    println!(
        "test accuracy before save {:.4}, after load {:.4}",
        before.acc_full.unwrap_or(0.0),
        after.acc_full.unwrap_or(0.0)
    );
    assert_eq!(before, after);

    match Checkpoint::load(&path, Some(data.vocab.hash() ^ 1)) {
        Err(e) => println!("wrong vocabulary refused: {e}"),
        Ok(_) => println!("wrong vocabulary was accepted"),
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
