//! The assembled reader: pointer-sum extractor, hypothesis reasoner, their
//! multiplicative combination, and the joint training objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::config::ModelDims;
use crate::data::vocab::PAD_ID;
use crate::data::ClozeExample;
use crate::encoders::{embed_lookup, encode_question, encode_text, BiGruParams, EmbeddingTable};
use crate::error::{Error, Result};
use crate::extractor::{aggregate_word_probs, pointer_scores, select_top_k, CandidateSlate, WordProbs};
use crate::reasoner::{form_hypotheses, score_hypotheses, ReasonerInput, ReasonerParams};
use crate::tensor::{ParamId, ParamSet};

/// Parameter layout of one reader. The values live in a separate
/// [`ParamSet`] so the same layout can score perturbed copies.
#[derive(Debug, Clone)]
pub struct EpiReader {
    pub dims: ModelDims,
    pub vocab_size: usize,
    pub embedding: EmbeddingTable,
    pub text_encoder: BiGruParams,
    pub question_encoder: BiGruParams,
    pub reasoner: ReasonerParams,
}

/// Loss knobs that vary between runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub gamma: f64,
    pub stop_margin_grad: bool,
}

/// Where the per-hypothesis evidence comes from at prediction time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Evidence {
    Reasoner,
    /// `e_k = 1/K`, reducing the combination to the extractor's ranking.
    Uniform,
}

/// Result of one training forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ExampleLoss {
    pub loss: Var,
    pub l_e: f64,
    pub l_r: f64,
    pub gold_forced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CombinedPrediction {
    pub slate: Vec<usize>,
    pub p: Vec<f64>,
    pub e: Vec<f64>,
    pub pi: Vec<f64>,
    pub answer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub source: String,
    pub gold: usize,
    pub zero_support: bool,
    /// Highest-mass candidate, or `None` when no candidate occurs in the text.
    pub extractor: Option<usize>,
    pub combined: Option<CombinedPrediction>,
}

impl EpiReader {
    /// Registers every tensor with a fresh seeded initialisation.
    pub fn new(dims: ModelDims, vocab_size: usize, seed: u64) -> (Self, ParamSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let embedding =
            EmbeddingTable::register(&mut params, "embedding", dims.embed_dim, vocab_size, PAD_ID, &mut rng);
        let text_encoder = BiGruParams::register(&mut params, "text", dims.embed_dim, dims.hidden, &mut rng);
        let question_encoder = BiGruParams::register(&mut params, "question", dims.embed_dim, dims.hidden, &mut rng);
        let reasoner = ReasonerParams::register(
            &mut params,
            dims.embed_dim,
            dims.width,
            dims.filters,
            dims.agg_hidden,
            &mut rng,
        );
        let reader = EpiReader {
            dims,
            vocab_size,
            embedding,
            text_encoder,
            question_encoder,
            reasoner,
        };
        (reader, params)
    }

    /// Ids of every extractor-side tensor (embedding and both encoders).
    pub fn extractor_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embedding.id];
        for enc in [&self.text_encoder, &self.question_encoder] {
            ids.extend(enc.forward.ids());
            ids.extend(enc.backward.ids());
        }
        ids
    }

    fn extract(&self, tape: &mut Tape, params: &ParamSet, ex: &ClozeExample) -> Result<(Var, WordProbs)> {
        let text_vars = self.text_encoder.load(tape, params);
        let question_vars = self.question_encoder.load(tape, params);
        let t_emb = embed_lookup(tape, params, &self.embedding, &ex.text)?;
        let text = encode_text(tape, &text_vars, t_emb, ex.text.len())?;
        let q_emb = embed_lookup(tape, params, &self.embedding, &ex.question)?;
        let q = encode_question(tape, &question_vars, q_emb, ex.question.len())?;
        let s = pointer_scores(tape, &text, q)?;
        let cands = (!ex.candidates.is_empty()).then_some(ex.candidates.as_slice());
        let wp = aggregate_word_probs(tape.value(s), &ex.text, cands)?;
        Ok((s, wp))
    }

    fn evidence(&self, tape: &mut Tape, params: &ParamSet, ex: &ClozeExample, slate: &CandidateSlate) -> Result<Var> {
        let hypotheses = form_hypotheses(&ex.question, ex.question[ex.placeholder_pos], slate)?;
        let sentences = ex.sentences();
        let context = ex.question_context();
        let vars = self.reasoner.load(tape, params);
        let input = ReasonerInput {
            sentences: &sentences,
            question_context: &context,
            hypotheses: &hypotheses,
        };
        Ok(score_hypotheses(tape, params, &self.embedding, &vars, &input)?.e)
    }

    /// Builds `L_E + lambda * L_R` for one example. Returns `None` when the
    /// gold answer never occurs in the text.
    pub fn training_loss(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        ex: &ClozeExample,
        w: &LossWeights,
    ) -> Result<Option<ExampleLoss>> {
        let gold_positions: Vec<usize> = (0..ex.text.len()).filter(|&i| ex.text[i] == ex.answer).collect();
        if gold_positions.is_empty() {
            return Ok(None);
        }
        let (s, wp) = self.extract(tape, params, ex)?;
        let p_gold = tape.index_sum(s, vec![gold_positions])?;
        let log_p = tape.log(p_gold)?;
        let l_e = tape.scale(log_p, -1.0)?;
        let l_e_value = tape.scalar(l_e);
        if w.lambda == 0.0 {
            return Ok(Some(ExampleLoss {
                loss: l_e,
                l_e: l_e_value,
                l_r: 0.0,
                gold_forced: false,
            }));
        }
        let slate = select_top_k(&wp, self.dims.k, Some(ex.answer), true)?;
        let gold = slate
            .gold_index
            .ok_or_else(|| Error::Invariant(format!("{}: gold answer missing from the training slate", ex.source)))?;
        if slate.len() < 2 {
            return Ok(Some(ExampleLoss {
                loss: l_e,
                l_e: l_e_value,
                l_r: 0.0,
                gold_forced: slate.gold_forced,
            }));
        }
        let mut p = slate.gather(tape, s)?;
        if w.stop_margin_grad {
            p = tape.detach(p);
        }
        let e = self.evidence(tape, params, ex, &slate)?;
        let pi = combine_on_tape(tape, e, p)?;
        let l_r = margin_loss(tape, pi, gold, w.gamma)?;
        let l_r_value = tape.scalar(l_r);
        let weighted = tape.scale(l_r, w.lambda)?;
        let loss = tape.add(l_e, weighted)?;
        Ok(Some(ExampleLoss {
            loss,
            l_e: l_e_value,
            l_r: l_r_value,
            gold_forced: slate.gold_forced,
        }))
    }

    /// Evaluation-mode forward pass. The gold answer is only used for
    /// bookkeeping and never enters the slate.
    pub fn predict(&self, params: &ParamSet, ex: &ClozeExample, evidence: Evidence, full: bool) -> Result<Prediction> {
        let mut tape = Tape::new();
        let (s, wp) = self.extract(&mut tape, params, ex)?;
        let mut pred = Prediction {
            source: ex.source.clone(),
            gold: ex.answer,
            zero_support: !ex.has_support(),
            extractor: wp.argmax(),
            combined: None,
        };
        if !full || wp.entries.is_empty() {
            return Ok(pred);
        }
        let slate = select_top_k(&wp, self.dims.k, Some(ex.answer), false)?;
        if slate.gold_forced {
            return Err(Error::Invariant("gold answer inserted outside training".into()));
        }
        let p_var = slate.gather(&mut tape, s)?;
        let p = tape.value(p_var).to_vec();
        let e = match evidence {
            Evidence::Uniform => vec![1.0 / slate.len() as f64; slate.len()],
            Evidence::Reasoner => {
                let e = self.evidence(&mut tape, params, ex, &slate)?;
                tape.value(e).to_vec()
            }
        };
        let pi = combine_probabilities(&e, &p)?;
        let best = argmax(&pi);
        pred.combined = Some(CombinedPrediction {
            answer: slate.answers[best],
            slate: slate.answers,
            p,
            e,
            pi,
        });
        Ok(pred)
    }
}

/// First index of the maximum.
pub fn argmax(x: &[f64]) -> usize {
    x.iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > x[best] { i } else { best })
}

/// `pi = normalize(e * p)` on the tape.
pub fn combine_on_tape(tape: &mut Tape, e: Var, p: Var) -> Result<Var> {
    let prod = tape.mul(e, p)?;
    tape.normalize(prod)
}

/// `sum over j != gold of relu(gamma - pi[gold] + pi[j])`.
pub fn margin_loss(tape: &mut Tape, pi: Var, gold: usize, gamma: f64) -> Result<Var> {
    let n = tape.shape(pi).iter().product::<usize>();
    if gold >= n {
        return Err(Error::Invariant(format!("gold index {gold} outside a slate of {n}")));
    }
    let star = tape.select(pi, gold)?;
    let mut terms = Vec::with_capacity(n.saturating_sub(1));
    for j in (0..n).filter(|&j| j != gold) {
        let other = tape.select(pi, j)?;
        let diff = tape.sub(other, star)?;
        let shifted = tape.add_scalar(diff, gamma)?;
        terms.push(tape.relu(shifted)?);
    }
    if terms.is_empty() {
        return Ok(tape.zeros(&[1]));
    }
    let all = tape.concat(&terms)?;
    tape.sum(all)
}

/// Whether a parameter name denotes a bias, which carries no penalty.
pub fn is_bias(name: &str) -> bool {
    let last = name.rsplit('.').next().unwrap_or(name);
    last.starts_with("b_") || last == "out_b"
}

/// `coef * sum of squared weights`, skipping biases and the padding column.
pub fn l2_penalty(tape: &mut Tape, params: &ParamSet, reader: &EpiReader, coef: f64) -> Result<Var> {
    let mut terms = Vec::new();
    for (id, name, _) in params.iter() {
        if is_bias(name) {
            continue;
        }
        let v = tape.param(params, id);
        let keep = (id == reader.embedding.id).then(|| reader.embedding.non_pad_mask());
        terms.push(tape.sum_squares(v, keep)?);
    }
    let all = tape.concat(&terms)?;
    let total = tape.sum(all)?;
    tape.scale(total, coef)
}

/// `pi_k = e_k p_k / sum_j e_j p_j`.
pub fn combine_probabilities(e: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    if e.len() != p.len() {
        return Err(Error::dim("combine_probabilities", &[e.len()], &[p.len()]));
    }
    let mut tape = Tape::new();
    let ev = tape.constant(&[e.len()], e.to_vec())?;
    let pv = tape.constant(&[p.len()], p.to_vec())?;
    let pi = combine_on_tape(&mut tape, ev, pv)?;
    Ok(tape.value(pi).to_vec())
}

/// Mean negative log-likelihood of the gold answers' probabilities.
pub fn loss_extractor(gold_probs: &[f64]) -> Result<f64> {
    if gold_probs.is_empty() {
        return Err(Error::degenerate("loss_extractor", "empty batch"));
    }
    if let Some(bad) = gold_probs.iter().find(|&&p| p <= 0.0) {
        return Err(Error::degenerate(
            "loss_extractor",
            format!("gold probability {bad} has no support"),
        ));
    }
    Ok(gold_probs.iter().map(|p| -p.ln()).sum::<f64>() / gold_probs.len() as f64)
}

/// Hinge margin of the gold entry over every competitor.
pub fn loss_reasoner(pi: &[f64], gold: usize, gamma: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(&[pi.len()], pi.to_vec())?;
    let l = margin_loss(&mut tape, v, gold, gamma)?;
    Ok(tape.scalar(l))
}

pub fn loss_total(l_e: f64, l_r: f64, lambda: f64, l2_term: f64) -> f64 {
    l_e + lambda * l_r + l2_term
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn combination_examples() {
        assert!(close(
            &combine_probabilities(&[0.5, 0.5], &[0.2, 0.8]).unwrap(),
            &[0.2, 0.8]
        ));
        assert!(close(
            &combine_probabilities(&[0.7, 0.3], &[0.5, 0.5]).unwrap(),
            &[0.7, 0.3]
        ));
        assert!(close(
            &combine_probabilities(&[0.6, 0.4], &[0.25, 0.75]).unwrap(),
            &[1.0 / 3.0, 2.0 / 3.0]
        ));
        assert!(matches!(
            combine_probabilities(&[1.0, 0.0], &[0.0, 1.0]),
            Err(Error::Degenerate { .. })
        ));
    }

    #[test]
    fn loss_examples() {
        assert!((loss_extractor(&[0.5]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert_eq!(loss_extractor(&[1.0]).unwrap(), 0.0);
        assert!((loss_extractor(&[0.5, 1.0]).unwrap() - 0.346_573_590_279_972_6).abs() < 1e-12);
        assert!((loss_reasoner(&[0.5, 0.3, 0.48], 0, 0.04).unwrap() - 0.02).abs() < 1e-12);
        assert_eq!(loss_reasoner(&[0.9, 0.05, 0.05], 0, 0.04).unwrap(), 0.0);
        assert!((loss_reasoner(&[0.5, 0.5], 0, 0.04).unwrap() - 0.04).abs() < 1e-12);
        assert!(matches!(loss_reasoner(&[0.5, 0.5], 2, 0.04), Err(Error::Invariant(_))));
        assert!((loss_total(1.0, 0.02, 50.0, 0.0) - 2.0).abs() < 1e-12);
        assert_eq!(loss_total(1.3, 0.7, 0.0, 0.0), 1.3);
    }

    #[test]
    fn single_weight_penalty() {
        let dims = ModelDims {
            embed_dim: 2,
            hidden: 2,
            k: 2,
            width: 1,
            filters: 1,
            agg_hidden: 1,
        };
        let (reader, mut params) = EpiReader::new(dims, 4, 0);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            params.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        params.get_mut(reader.reasoner.r).data_mut()[0] = 2.0;
        // biases and the padding column are exempt
        params.get_mut(reader.reasoner.out_b).data_mut()[0] = 5.0;
        params.get_mut(reader.embedding.id).data_mut()[PAD_ID] = 7.0;
        let mut tape = Tape::new();
        let pen = l2_penalty(&mut tape, &params, &reader, 0.001).unwrap();
        assert!((tape.scalar(pen) - 0.004).abs() < 1e-15);
    }

    #[test]
    fn bias_names() {
        assert!(is_bias("text.fwd.b_z"));
        assert!(is_bias("reasoner.out_b"));
        assert!(is_bias("reasoner.b_s"));
        assert!(!is_bias("reasoner.out_w"));
        assert!(!is_bias("embedding"));
        assert!(!is_bias("reasoner.agg.u_h"));
    }
}
