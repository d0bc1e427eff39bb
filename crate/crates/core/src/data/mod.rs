//! Corpus parsing, vocabularies, batching and synthetic task generation.

pub mod batch;
pub mod cbt;
pub mod cnn;
pub mod synthetic;
pub mod vocab;

use std::path::Path;

pub use batch::{make_batches, Batch};
pub use cbt::{parse_cbt, render_cbt, render_cbt_corpus, CbtCorpus};
pub use cnn::{parse_cnn, CNN_PLACEHOLDER};
pub use synthetic::{generate_synthetic, SyntheticCorpus, SyntheticSpec, SyntheticTask};
pub use vocab::{build_vocab, Vocabulary, PAD_ID, PLACEHOLDER_ID, UNK_ID};

use crate::error::Result;
use crate::reasoner::{split_sentences, SentenceSplit};

/// A parsed example in token-string form.
///
/// The question carries [`vocab::PLACEHOLDER_TOKEN`] at the blank,
/// whatever marker the source format used.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCloze {
    pub source: String,
    pub text: Vec<String>,
    /// Sentence start offsets when the format defines them (CBT lines).
    pub sentence_starts: Option<Vec<usize>>,
    pub question: Vec<String>,
    pub answer: String,
    pub candidates: Vec<String>,
    /// CNN `@entityN` → surface string. Kept for inspection only.
    pub entity_map: Vec<(String, String)>,
}

impl RawCloze {
    pub fn has_support(&self) -> bool {
        self.text.contains(&self.answer)
    }

    pub fn sentences(&self) -> Vec<&[String]> {
        let starts = self.sentence_starts.clone().unwrap_or_else(|| vec![0]);
        let mut out = Vec::with_capacity(starts.len());
        for (i, &s) in starts.iter().enumerate() {
            let e = starts.get(i + 1).copied().unwrap_or(self.text.len());
            out.push(&self.text[s..e]);
        }
        out
    }
}

/// One `(question, text, answer, candidates)` tuple in id form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClozeExample {
    pub source: String,
    pub text: Vec<usize>,
    pub sentence_starts: Vec<usize>,
    pub question: Vec<usize>,
    pub placeholder_pos: usize,
    pub answer: usize,
    pub candidates: Vec<usize>,
}

impl ClozeExample {
    /// Whether the answer occurs in the text at all.
    pub fn has_support(&self) -> bool {
        self.text.contains(&self.answer)
    }

    pub fn sentences(&self) -> SentenceSplit {
        split_sentences(&self.text, Some(&self.sentence_starts), &[])
    }

    /// Question tokens with the placeholder removed.
    pub fn question_context(&self) -> Vec<usize> {
        self.question
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != self.placeholder_pos)
            .map(|(_, &t)| t)
            .collect()
    }
}

/// Layout of a corpus file on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Cbt,
    Cnn,
}

/// Reads a CBT file, or a CNN story file / directory of `.question` files.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<RawCloze>> {
    match format {
        CorpusFormat::Cbt => {
            let f = std::fs::File::open(path)?;
            let corpus = parse_cbt(std::io::BufReader::new(f))?;
            if corpus.rejected_multiword > 0 {
                log::warn!(
                    "{}: skipped {} blocks with multi-word candidates",
                    path.display(),
                    corpus.rejected_multiword
                );
            }
            Ok(corpus.examples)
        }
        CorpusFormat::Cnn => {
            let mut files = Vec::new();
            if path.is_dir() {
                for entry in std::fs::read_dir(path)? {
                    let p = entry?.path();
                    if p.extension().is_some_and(|e| e == "question") {
                        files.push(p);
                    }
                }
                files.sort();
            } else {
                files.push(path.to_path_buf());
            }
            files
                .iter()
                .map(|p| {
                    let f = std::fs::File::open(p)?;
                    let mut ex = parse_cnn(std::io::BufReader::new(f))?;
                    ex.source = p.display().to_string();
                    Ok(ex)
                })
                .collect()
        }
    }
}

/// Maps every example of a split through `vocab`.
pub fn encode_all(vocab: &Vocabulary, raws: &[RawCloze]) -> Result<Vec<ClozeExample>> {
    raws.iter().map(|r| vocab.encode(r)).collect()
}

/// Train/valid/test splits sharing one vocabulary.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vocab: Vocabulary,
    pub train: Vec<ClozeExample>,
    pub valid: Vec<ClozeExample>,
    pub test: Vec<ClozeExample>,
}

/// Builds the vocabulary over all given splits and encodes each of them.
pub fn prepare(train: &[RawCloze], valid: &[RawCloze], test: &[RawCloze], min_count: usize) -> Result<Prepared> {
    let all: Vec<RawCloze> = train.iter().chain(valid).chain(test).cloned().collect();
    let vocab = build_vocab(&all, min_count);
    Ok(Prepared {
        train: encode_all(&vocab, train)?,
        valid: encode_all(&vocab, valid)?,
        test: encode_all(&vocab, test)?,
        vocab,
    })
}

impl SyntheticCorpus {
    pub fn prepare(&self) -> Result<Prepared> {
        prepare(&self.train, &self.valid, &self.test, 1)
    }
}
