//! Parses CBT and CNN files, prints corpus statistics and the first
//! example, and reports how the vocabulary encodes it.
//!
//! cargo run --release --example parse_corpora -- <file.txt | story.question | dir> [cbt|cnn]

use std::path::PathBuf;

use epireader::data::{build_vocab, load_corpus, CorpusFormat};

fn main() -> epireader::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(path) = args.next().map(PathBuf::from) else {
        eprintln!("usage: parse_corpora <path> [cbt|cnn]");
        std::process::exit(1);
    };
    let format = match args.next().as_deref() {
        Some("cnn") => CorpusFormat::Cnn,
        Some("cbt") => CorpusFormat::Cbt,
        _ if path.is_dir() || path.extension().is_some_and(|e| e == "question") => CorpusFormat::Cnn,
        _ => CorpusFormat::Cbt,
    };
    let examples = load_corpus(&path, format)?;
    let vocab = build_vocab(&examples, 1);
    let unsupported = examples.iter().filter(|e| !e.has_support()).count();
    let mean_len = examples.iter().map(|e| e.text.len()).sum::<usize>() as f64 / examples.len().max(1) as f64;
    println!("examples:            {}", examples.len());
    println!("vocabulary:          {}", vocab.len());
    println!("mean passage tokens: {mean_len:.1}");
    println!("answer not in text:  {unsupported}");

    if let Some(first) = examples.first() {
        let ex = vocab.encode(first)?;
        println!("\nfirst example ({}):", first.source);
        println!("  sentences:  {}", first.sentences().len());
        println!("  question:   {}", first.question.join(" "));
        println!("  answer:     {}", first.answer);
        println!("  candidates: {}", first.candidates.join(" "));
        println!("  placeholder at question position {}", ex.placeholder_pos);
    }
    Ok(())
}
