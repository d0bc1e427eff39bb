//! A tiny fixed instance of the full model for finite-difference checks of
//! the complete training objective.

use crate::autodiff::{grad_check_params, FaultInjection, GradCheckOptions, GradCheckReport, Tape, Var};
use crate::config::ModelDims;
use crate::data::vocab::PLACEHOLDER_TOKEN;
use crate::data::{build_vocab, ClozeExample, RawCloze, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{l2_penalty, EpiReader, LossWeights};
use crate::tensor::ParamSet;

pub const MICRO_DIMS: ModelDims = ModelDims {
    embed_dim: 6,
    hidden: 4,
    k: 2,
    width: 3,
    filters: 3,
    agg_hidden: 3,
};

pub const MICRO_TOLERANCE: f64 = 1e-4;
pub const MICRO_EPSILON: f64 = 1e-4;

pub struct MicroInstance {
    pub vocab: Vocabulary,
    pub example: ClozeExample,
    pub reader: EpiReader,
    pub params: ParamSet,
    pub weights: LossWeights,
    pub l2: f64,
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Two sentences, two candidates, every sentence at least the filter width.
/// The gold word is the rarer one, so the margin term is active.
pub fn micro_instance(seed: u64) -> Result<MicroInstance> {
    let raw = RawCloze {
        source: "micro".into(),
        text: words("the cat sat on a mat . a dog saw the cat ."),
        sentence_starts: Some(vec![0, 7]),
        question: words(&format!("a {PLACEHOLDER_TOKEN} saw the cat")),
        answer: "dog".into(),
        candidates: words("cat dog"),
        entity_map: Vec::new(),
    };
    let vocab = build_vocab(std::slice::from_ref(&raw), 1);
    let example = vocab.encode(&raw)?;
    let (reader, params) = EpiReader::new(MICRO_DIMS, vocab.len(), seed);
    Ok(MicroInstance {
        vocab,
        example,
        reader,
        params,
        weights: LossWeights {
            lambda: 50.0,
            gamma: 0.04,
            stop_margin_grad: false,
        },
        l2: 0.001,
    })
}

impl MicroInstance {
    /// The full objective `L_E + lambda L_R + l2 penalty` on `tape`.
    pub fn objective(&self, params: &ParamSet, tape: &mut Tape) -> Result<Var> {
        let el = self
            .reader
            .training_loss(tape, params, &self.example, &self.weights)?
            .ok_or_else(|| Error::Invariant("micro example lost its support".into()))?;
        let pen = l2_penalty(tape, params, &self.reader, self.l2)?;
        tape.add(el.loss, pen)
    }

    pub fn check(&self, fault: FaultInjection) -> Result<GradCheckReport> {
        let opts = GradCheckOptions {
            epsilon: MICRO_EPSILON,
            tolerance: MICRO_TOLERANCE,
            fault,
        };
        grad_check_params(&self.params, opts, |p, tape| self.objective(p, tape))
    }
}
