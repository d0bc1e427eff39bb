use std::collections::HashMap;
use std::io::{BufRead, Write};

use sha2::{Digest, Sha256};

use super::{ClozeExample, RawCloze};
use crate::error::{Error, Result};
use crate::reasoner::split_sentences;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const PLACEHOLDER_TOKEN: &str = "<placeholder>";

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PLACEHOLDER_ID: usize = 2;

/// Tokens that end a sentence when the corpus gives no line structure.
pub const SENTENCE_TERMINATORS: [&str; 3] = [".", "!", "?"];

/// Dense bidirectional token/id map with three reserved ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    hash: u64,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3
            || tokens[PAD_ID] != PAD_TOKEN
            || tokens[UNK_ID] != UNK_TOKEN
            || tokens[PLACEHOLDER_ID] != PLACEHOLDER_TOKEN
        {
            return Err(Error::Config("vocabulary must start with the reserved tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token {t:?}")));
            }
        }
        let mut hasher = Sha256::new();
        for t in &tokens {
            hasher.update(t.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        let hash = u64::from_le_bytes(digest[..8].try_into().unwrap());
        Ok(Vocabulary { tokens, index, hash })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn hash(&self) -> u64 {
        self.hash
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens.get(id).map(String::as_str).ok_or(Error::Vocabulary {
            id,
            size: self.tokens.len(),
        })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn terminator_ids(&self) -> Vec<usize> {
        SENTENCE_TERMINATORS.iter().filter_map(|t| self.get(t)).collect()
    }

    pub fn encode_tokens(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Maps a parsed example to ids, computing sentence boundaries from
    /// terminators when the source has none.
    pub fn encode(&self, raw: &RawCloze) -> Result<ClozeExample> {
        let text = self.encode_tokens(&raw.text);
        let question = self.encode_tokens(&raw.question);
        let placeholder_pos = crate::reasoner::placeholder_position(&question, PLACEHOLDER_ID)?;
        let sentence_starts = match &raw.sentence_starts {
            Some(s) => s.clone(),
            None => split_sentences(&text, None, &self.terminator_ids()).starts(),
        };
        Ok(ClozeExample {
            source: raw.source.clone(),
            text,
            sentence_starts,
            question,
            placeholder_pos,
            answer: self.id(&raw.answer),
            candidates: self.encode_tokens(&raw.candidates),
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let tokens = r.lines().collect::<std::io::Result<Vec<_>>>()?;
        Self::from_tokens(tokens)
    }
}

/// Counts every token of the corpus; tokens seen fewer than `min_count`
/// times map to unknown. Ordering is by descending frequency, then
/// lexicographic, so the result is independent of example order.
pub fn build_vocab(examples: &[RawCloze], min_count: usize) -> Vocabulary {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for ex in examples {
        let words = ex
            .text
            .iter()
            .chain(&ex.question)
            .chain(std::iter::once(&ex.answer))
            .chain(&ex.candidates);
        for w in words {
            *counts.entry(w.as_str()).or_default() += 1;
        }
    }
    for reserved in [PAD_TOKEN, UNK_TOKEN, PLACEHOLDER_TOKEN] {
        counts.remove(reserved);
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let tokens = [PAD_TOKEN, UNK_TOKEN, PLACEHOLDER_TOKEN]
        .into_iter()
        .chain(kept.into_iter().map(|(t, _)| t))
        .map(str::to_string)
        .collect();
    Vocabulary::from_tokens(tokens).expect("reserved tokens are unique")
}
