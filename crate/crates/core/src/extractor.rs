//! Pointer-sum answer proposal.
//!
//! Each text position gets `s_i ∝ exp(f(t_i) · g(Q))`; the probability of
//! a word is the total mass over its occurrences, and the `K` most
//! probable words form the candidate slate handed to the reasoner.

use std::collections::HashMap;

use crate::autodiff::{Tape, Var};
use crate::encoders::BiGruEncoding;
use crate::error::{Error, Result};

/// Attention over text positions, masked beyond the encoding's length.
pub fn pointer_scores(tape: &mut Tape, text: &BiGruEncoding, q_vec: Var) -> Result<Var> {
    let logits = tape.matvec(text.rows, q_vec)?;
    if text.len == text.positions {
        tape.softmax(logits, None)
    } else {
        let mask: Vec<bool> = (0..text.positions).map(|i| i < text.len).collect();
        tape.softmax(logits, Some(&mask))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordProb {
    pub word: usize,
    pub prob: f64,
    pub positions: Vec<usize>,
}

impl WordProb {
    pub fn first_position(&self) -> usize {
        self.positions[0]
    }
}

/// Per-word pointer mass, in order of first occurrence in the text.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WordProbs {
    pub entries: Vec<WordProb>,
    /// Requested candidates that never occur in the text.
    pub zero_support: Vec<usize>,
}

impl WordProbs {
    pub fn get(&self, word: usize) -> Option<&WordProb> {
        self.entries.iter().find(|e| e.word == word)
    }

    pub fn prob(&self, word: usize) -> f64 {
        self.get(word).map_or(0.0, |e| e.prob)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.prob).sum()
    }

    /// The highest-mass word, ties to the earliest first occurrence.
    pub fn argmax(&self) -> Option<usize> {
        self.entries
            .iter()
            .fold(None::<&WordProb>, |best, e| match best {
                Some(b) if b.prob >= e.prob => Some(b),
                _ => Some(e),
            })
            .map(|e| e.word)
    }
}

/// Sums `s` over the occurrences of each unique word of `token_ids`.
///
/// With `candidates`, only those words are kept and the result is not
/// renormalised; candidates absent from the text are listed in
/// `zero_support` instead.
pub fn aggregate_word_probs(s: &[f64], token_ids: &[usize], candidates: Option<&[usize]>) -> Result<WordProbs> {
    if s.len() < token_ids.len() {
        return Err(Error::dim("aggregate_word_probs", &[s.len()], &[token_ids.len()]));
    }
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut entries: Vec<WordProb> = Vec::new();
    for (i, &w) in token_ids.iter().enumerate() {
        let k = *slot.entry(w).or_insert_with(|| {
            entries.push(WordProb {
                word: w,
                prob: 0.0,
                positions: Vec::new(),
            });
            entries.len() - 1
        });
        entries[k].prob += s[i];
        entries[k].positions.push(i);
    }
    let Some(cands) = candidates else {
        return Ok(WordProbs {
            entries,
            zero_support: Vec::new(),
        });
    };
    let zero_support = cands.iter().copied().filter(|c| !slot.contains_key(c)).collect();
    entries.retain(|e| cands.contains(&e.word));
    Ok(WordProbs { entries, zero_support })
}

/// The extractor's proposal: `K` distinct words with their pointer mass.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSlate {
    pub answers: Vec<usize>,
    pub probs: Vec<f64>,
    /// Text positions of each answer, for the differentiable gather.
    pub positions: Vec<Vec<usize>>,
    pub gold_forced: bool,
    pub gold_index: Option<usize>,
}

impl CandidateSlate {
    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    /// Slate probabilities as a differentiable function of `s`.
    pub fn gather(&self, tape: &mut Tape, s: Var) -> Result<Var> {
        tape.index_sum(s, self.positions.clone())
    }
}

/// Picks the `min(K, #words)` most probable words, ties to the earliest
/// first occurrence. In training mode a missing `gold` replaces the last
/// (least probable) entry.
pub fn select_top_k(word_probs: &WordProbs, k: usize, gold: Option<usize>, training: bool) -> Result<CandidateSlate> {
    if k < 1 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if word_probs.entries.is_empty() {
        return Err(Error::degenerate("select_top_k", "no words to select from"));
    }
    let mut order: Vec<&WordProb> = word_probs.entries.iter().collect();
    // stable sort keeps first-occurrence order among equal masses
    order.sort_by(|a, b| {
        b.prob
            .partial_cmp(&a.prob)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.first_position().cmp(&b.first_position()))
    });
    order.truncate(k);
    let mut slate = CandidateSlate {
        answers: order.iter().map(|e| e.word).collect(),
        probs: order.iter().map(|e| e.prob).collect(),
        positions: order.iter().map(|e| e.positions.clone()).collect(),
        gold_forced: false,
        gold_index: None,
    };
    if let Some(g) = gold {
        slate.gold_index = slate.answers.iter().position(|&a| a == g);
        if training && slate.gold_index.is_none() {
            if let Some(entry) = word_probs.get(g) {
                let last = slate.len() - 1;
                slate.answers[last] = g;
                slate.probs[last] = entry.prob;
                slate.positions[last] = entry.positions.clone();
                slate.gold_forced = true;
                slate.gold_index = Some(last);
            }
        }
    }
    Ok(slate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn probs(pairs: &[(usize, f64)]) -> WordProbs {
        WordProbs {
            entries: pairs
                .iter()
                .enumerate()
                .map(|(i, &(word, prob))| WordProb {
                    word,
                    prob,
                    positions: vec![i],
                })
                .collect(),
            zero_support: vec![],
        }
    }

    #[test]
    fn identical_encodings_give_uniform_attention() {
        let mut tape = Tape::new();
        let rows = tape.leaf(&Tensor::from_rows(&[vec![0.3, 1.0], vec![0.3, 1.0], vec![0.3, 1.0]]).unwrap());
        let enc = BiGruEncoding {
            rows,
            len: 3,
            positions: 3,
        };
        let q = tape.leaf(&Tensor::vector(vec![2.0, -1.0]).unwrap());
        let s = pointer_scores(&mut tape, &enc, q).unwrap();
        for v in tape.value(s) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn pointer_direct_arithmetic() {
        let mut tape = Tape::new();
        let rows = tape.leaf(&Tensor::from_rows(&[vec![3f64.ln()], vec![0.0]]).unwrap());
        let enc = BiGruEncoding {
            rows,
            len: 2,
            positions: 2,
        };
        let q = tape.leaf(&Tensor::vector(vec![1.0]).unwrap());
        let s = pointer_scores(&mut tape, &enc, q).unwrap();
        let v = tape.value(s);
        assert!((v[0] - 0.75).abs() < 1e-15 && (v[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn pointer_dimension_mismatch() {
        let mut tape = Tape::new();
        let rows = tape.leaf(&Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let enc = BiGruEncoding {
            rows,
            len: 1,
            positions: 1,
        };
        let q = tape.leaf(&Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap());
        assert!(pointer_scores(&mut tape, &enc, q).is_err());
    }

    #[test]
    fn sums_over_repeats() {
        let wp = aggregate_word_probs(&[0.2, 0.3, 0.5], &[7, 8, 7], None).unwrap();
        assert_eq!(wp.entries.len(), 2);
        assert!((wp.prob(7) - 0.7).abs() < 1e-15);
        assert!((wp.prob(8) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn unique_tokens_reproduce_attention() {
        let s = [0.1, 0.2, 0.3, 0.4];
        let wp = aggregate_word_probs(&s, &[4, 3, 2, 1], None).unwrap();
        let got: Vec<f64> = wp.entries.iter().map(|e| e.prob).collect();
        assert_eq!(got, s);
    }

    #[test]
    fn candidate_restriction_flags_missing_words() {
        let wp = aggregate_word_probs(&[0.2, 0.3, 0.5], &[7, 8, 7], Some(&[8, 9])).unwrap();
        assert_eq!(wp.entries.len(), 1);
        assert_eq!(wp.prob(8), 0.3);
        assert_eq!(wp.zero_support, vec![9]);
    }

    #[test]
    fn top_k_examples() {
        let wp = probs(&[(0, 0.5), (1, 0.3), (2, 0.2)]);
        let slate = select_top_k(&wp, 2, None, false).unwrap();
        assert_eq!(slate.answers, vec![0, 1]);
        assert_eq!(slate.probs, vec![0.5, 0.3]);

        let slate = select_top_k(&wp, 2, Some(2), true).unwrap();
        assert_eq!(slate.answers, vec![0, 2]);
        assert_eq!(slate.probs, vec![0.5, 0.2]);
        assert!(slate.gold_forced);
        assert_eq!(slate.gold_index, Some(1));

        let slate = select_top_k(&wp, 2, Some(2), false).unwrap();
        assert_eq!(slate.answers, vec![0, 1]);
        assert!(!slate.gold_forced);
        assert_eq!(slate.gold_index, None);
    }

    #[test]
    fn ties_go_to_earliest_occurrence() {
        let wp = probs(&[(10, 0.4), (11, 0.4)]);
        let slate = select_top_k(&wp, 1, None, false).unwrap();
        assert_eq!(slate.answers, vec![10]);
        assert_eq!(wp.argmax(), Some(10));
    }

    #[test]
    fn k_zero_is_config_error() {
        let wp = probs(&[(0, 1.0)]);
        assert!(matches!(select_top_k(&wp, 0, None, false), Err(Error::Config(_))));
    }
}
