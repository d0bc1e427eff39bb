use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::vocab::PAD_ID;
use super::ClozeExample;

/// Right-padded id matrices for a group of examples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    /// Positions of these examples in the source slice.
    pub indices: Vec<usize>,
    pub texts: Vec<Vec<usize>>,
    pub text_mask: Vec<Vec<bool>>,
    pub questions: Vec<Vec<usize>>,
    pub question_mask: Vec<Vec<bool>>,
    pub sentence_starts: Vec<Vec<usize>>,
    pub placeholder_pos: Vec<usize>,
    pub answers: Vec<usize>,
    pub candidates: Vec<Vec<usize>>,
    pub sources: Vec<String>,
}

fn pad_rows(rows: Vec<&[usize]>) -> (Vec<Vec<usize>>, Vec<Vec<bool>>) {
    let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    rows.into_iter()
        .map(|r| {
            let mut ids = r.to_vec();
            let mut mask = vec![true; r.len()];
            ids.resize(width, PAD_ID);
            mask.resize(width, false);
            (ids, mask)
        })
        .unzip()
}

impl Batch {
    fn from_examples(examples: &[ClozeExample], indices: Vec<usize>) -> Self {
        let picked: Vec<&ClozeExample> = indices.iter().map(|&i| &examples[i]).collect();
        let (texts, text_mask) = pad_rows(picked.iter().map(|e| e.text.as_slice()).collect());
        let (questions, question_mask) = pad_rows(picked.iter().map(|e| e.question.as_slice()).collect());
        Batch {
            texts,
            text_mask,
            questions,
            question_mask,
            sentence_starts: picked.iter().map(|e| e.sentence_starts.clone()).collect(),
            placeholder_pos: picked.iter().map(|e| e.placeholder_pos).collect(),
            answers: picked.iter().map(|e| e.answer).collect(),
            candidates: picked.iter().map(|e| e.candidates.clone()).collect(),
            sources: picked.iter().map(|e| e.source.clone()).collect(),
            indices,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Recovers example `i` by trimming its padding.
    pub fn example(&self, i: usize) -> ClozeExample {
        let trim = |ids: &[usize], mask: &[bool]| -> Vec<usize> {
            ids.iter().zip(mask).filter(|(_, &m)| m).map(|(&t, _)| t).collect()
        };
        ClozeExample {
            source: self.sources[i].clone(),
            text: trim(&self.texts[i], &self.text_mask[i]),
            sentence_starts: self.sentence_starts[i].clone(),
            question: trim(&self.questions[i], &self.question_mask[i]),
            placeholder_pos: self.placeholder_pos[i],
            answer: self.answers[i],
            candidates: self.candidates[i].clone(),
        }
    }
}

/// Splits `examples` into batches of `batch_size` (last one partial),
/// optionally in a seeded random order.
pub fn make_batches(examples: &[ClozeExample], batch_size: usize, seed: u64, shuffle: bool) -> Vec<Batch> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order
        .chunks(batch_size.max(1))
        .map(|chunk| Batch::from_examples(examples, chunk.to_vec()))
        .collect()
}
