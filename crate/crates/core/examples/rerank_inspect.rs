//! Trains briefly on the alternation task and prints, for a few test
//! examples, how the reasoner's evidence reorders the extractor's slate.
//!
//! cargo run --release --example rerank_inspect -- [num_examples] [seed] [shown]

use epireader::config::{Preset, TrainConfig};
use epireader::data::{generate_synthetic, SyntheticSpec, SyntheticTask};
use epireader::model::{EpiReader, Evidence};
use epireader::train::Trainer;

fn main() -> epireader::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let seed = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let shown = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(3);

    let corpus = generate_synthetic(&SyntheticSpec::new(SyntheticTask::Alternation, n, seed))?;
    let data = corpus.prepare()?;
    let mut config = TrainConfig::from_preset(Preset::Toy);
    config.seed = seed;
    let (reader, params) = EpiReader::new(config.dims, data.vocab.len(), seed);
    let outcome = Trainer::new(&reader, &config, params).fit(&data.train, &data.valid, |m| {
        println!(
            "epoch {}: valid extractor {:.3} full {:.3}",
            m.epoch, m.valid_acc_extractor, m.valid_acc_full
        );
        Ok(())
    })?;

    for (raw, ex) in corpus.test.iter().zip(&data.test).take(shown) {
        println!();
        for s in raw.sentences() {
            println!("  {}", s.join(" "));
        }
        println!("  Q: {}   gold: {}", raw.question.join(" "), raw.answer);
        let pred = reader.predict(&outcome.params, ex, Evidence::Reasoner, true)?;
        let Some(c) = pred.combined else { continue };
        println!("  {:<10} {:>7} {:>7} {:>7}", "candidate", "p", "e", "pi");
        for i in 0..c.slate.len() {
            println!(
                "  {:<10} {:>7.3} {:>7.3} {:>7.3}",
                data.vocab.token(c.slate[i])?,
                c.p[i],
                c.e[i],
                c.pi[i]
            );
        }
    }
    Ok(())
}
