//! Hypothesis reranking by sentence-level entailment evidence.
//!
//! Every candidate is substituted into the question to form a hypothesis.
//! Each text sentence, augmented with two word-match feature rows, and the
//! hypothesis are encoded by convolution + ReLU + max-pooling; a bilinear
//! form scores their similarity, and a GRU over sentences accumulates the
//! per-sentence evidence into one scalar per hypothesis.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::encoders::{embed_lookup, gru_step, EmbeddingTable, GruParams, GruVars, INIT_RANGE};
use crate::error::{Error, Result};
use crate::extractor::CandidateSlate;
use crate::tensor::{ParamId, ParamSet, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub candidate: usize,
    pub slate_index: usize,
}

/// Position of the single placeholder in `question`.
pub fn placeholder_position(question: &[usize], placeholder: usize) -> Result<usize> {
    let mut hits = question.iter().enumerate().filter(|(_, &t)| t == placeholder);
    match (hits.next(), hits.next()) {
        (Some((i, _)), None) => Ok(i),
        (None, _) => Err(Error::MalformedQuestion("no placeholder in question".into())),
        (Some(_), Some(_)) => Err(Error::MalformedQuestion("more than one placeholder in question".into())),
    }
}

/// Substitutes each slate answer for the placeholder, in slate order.
pub fn form_hypotheses(question: &[usize], placeholder: usize, slate: &CandidateSlate) -> Result<Vec<Hypothesis>> {
    let pos = placeholder_position(question, placeholder)?;
    Ok(slate
        .answers
        .iter()
        .enumerate()
        .map(|(k, &cand)| {
            let mut tokens = question.to_vec();
            tokens[pos] = cand;
            Hypothesis {
                tokens,
                candidate: cand,
                slate_index: k,
            }
        })
        .collect())
}

/// The text reorganised into consecutive non-empty sentences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceSplit {
    pub sentences: Vec<Vec<usize>>,
}

impl SentenceSplit {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Start offset of every sentence in the original text.
    pub fn starts(&self) -> Vec<usize> {
        let mut off = 0;
        self.sentences
            .iter()
            .map(|s| {
                let start = off;
                off += s.len();
                start
            })
            .collect()
    }
}

/// Splits `text` at the given sentence start offsets when available,
/// otherwise after every token in `terminators`. Trailing tokens without
/// a terminator form a final sentence.
pub fn split_sentences(text: &[usize], starts: Option<&[usize]>, terminators: &[usize]) -> SentenceSplit {
    let mut sentences = Vec::new();
    match starts {
        Some(starts) => {
            let mut bounds: Vec<usize> = starts.iter().copied().filter(|&s| s < text.len()).collect();
            bounds.push(text.len());
            bounds.sort_unstable();
            bounds.dedup();
            if bounds[0] != 0 {
                bounds.insert(0, 0);
            }
            for w in bounds.windows(2) {
                if w[1] > w[0] {
                    sentences.push(text[w[0]..w[1]].to_vec());
                }
            }
        }
        None => {
            let mut cur = Vec::new();
            for &t in text {
                cur.push(t);
                if terminators.contains(&t) {
                    sentences.push(std::mem::take(&mut cur));
                }
            }
            if !cur.is_empty() {
                sentences.push(cur);
            }
        }
    }
    SentenceSplit { sentences }
}

/// Right-pads `ids` with `pad` up to `width` tokens.
pub fn pad_to_width(ids: &[usize], width: usize, pad: usize) -> Vec<usize> {
    let mut v = ids.to_vec();
    while v.len() < width {
        v.push(pad);
    }
    v
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReasonerParams {
    pub f_s: ParamId,
    pub b_s: ParamId,
    pub f_h: ParamId,
    pub b_h: ParamId,
    pub r: ParamId,
    pub agg: GruParams,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub embed_dim: usize,
    pub width: usize,
    pub filters: usize,
    pub agg_hidden: usize,
}

impl ReasonerParams {
    pub fn register<R: Rng + ?Sized>(
        params: &mut ParamSet,
        embed_dim: usize,
        width: usize,
        filters: usize,
        agg_hidden: usize,
        rng: &mut R,
    ) -> Self {
        let mut u = |name: &str, shape: &[usize], rng: &mut R| {
            params.insert(name, Tensor::uniform(shape, -INIT_RANGE, INIT_RANGE, rng))
        };
        let f_s = u("reasoner.f_s", &[embed_dim + 2, width, filters], rng);
        let f_h = u("reasoner.f_h", &[embed_dim, width, filters], rng);
        let r = u("reasoner.r", &[filters, filters], rng);
        let out_w = u("reasoner.out_w", &[1, agg_hidden], rng);
        let b_s = params.insert("reasoner.b_s", Tensor::zeros(&[filters]));
        let b_h = params.insert("reasoner.b_h", Tensor::zeros(&[filters]));
        let out_b = params.insert("reasoner.out_b", Tensor::zeros(&[1]));
        let agg = GruParams::register(params, "reasoner.agg", 2 * filters + 1, agg_hidden, rng);
        ReasonerParams {
            f_s,
            b_s,
            f_h,
            b_h,
            r,
            agg,
            out_w,
            out_b,
            embed_dim,
            width,
            filters,
            agg_hidden,
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = vec![self.f_s, self.b_s, self.f_h, self.b_h, self.r, self.out_w, self.out_b];
        v.extend(self.agg.ids());
        v
    }

    /// Scalar count of a single forward-direction aggregation design.
    pub fn expected_num_scalars(embed_dim: usize, width: usize, filters: usize, agg_hidden: usize) -> usize {
        let conv_s = (embed_dim + 2) * width * filters + filters;
        let conv_h = embed_dim * width * filters + filters;
        let bilinear = filters * filters;
        let input = 2 * filters + 1;
        let gru = 3 * (agg_hidden * input + agg_hidden * agg_hidden + agg_hidden);
        conv_s + conv_h + bilinear + gru + agg_hidden + 1
    }

    pub fn load(&self, tape: &mut Tape, params: &ParamSet) -> ReasonerVars {
        ReasonerVars {
            f_s: tape.param(params, self.f_s),
            b_s: tape.param(params, self.b_s),
            f_h: tape.param(params, self.f_h),
            b_h: tape.param(params, self.b_h),
            r: tape.param(params, self.r),
            agg: self.agg.load(tape, params),
            out_w: tape.param(params, self.out_w),
            out_b: tape.param(params, self.out_b),
            width: self.width,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ReasonerVars {
    f_s: Var,
    b_s: Var,
    f_h: Var,
    b_h: Var,
    r: Var,
    agg: GruVars,
    out_w: Var,
    out_b: Var,
    pub width: usize,
}

/// Two feature rows per sentence word: its inner product with the
/// candidate, and its largest inner product with any question word.
pub fn word_match_features(tape: &mut Tape, sentence: Var, candidate: Var, question: Var) -> Result<Var> {
    let row2 = question_match_row(tape, sentence, question)?;
    candidate_match(tape, sentence, candidate, row2)
}

/// Second feature row; independent of the candidate, so computed once per
/// sentence.
fn question_match_row(tape: &mut Tape, sentence: Var, question: Var) -> Result<Var> {
    let (d, l) = match tape.shape(sentence) {
        &[d, l] => (d, l),
        other => return Err(Error::dim("word_match_features", other, &[0, 0])),
    };
    match tape.shape(question) {
        &[qd, nq] if qd == d && nq >= 1 => {}
        &[_, 0] => return Err(Error::degenerate("word_match_features", "empty question")),
        other => return Err(Error::dim("word_match_features", &[d, l], other)),
    }
    let st = tape.transpose(sentence)?;
    let inner = tape.matmul(st, question)?;
    let row = tape.maxpool_over_time(inner)?;
    tape.reshape(row, &[1, l])
}

fn candidate_match(tape: &mut Tape, sentence: Var, candidate: Var, row2: Var) -> Result<Var> {
    let l = tape.shape(sentence)[1];
    let row1 = tape.mat_t_vec(sentence, candidate)?;
    let row1 = tape.reshape(row1, &[1, l])?;
    tape.vstack(&[row1, row2])
}

/// `maxpool(relu(conv(input, F^S) + b))` for an augmented sentence.
pub fn encode_sentence(tape: &mut Tape, vars: &ReasonerVars, augmented: Var) -> Result<Var> {
    let c = tape.conv1d_valid(augmented, vars.f_s, vars.b_s)?;
    let c = tape.relu(c)?;
    tape.maxpool_over_time(c)
}

/// `maxpool(relu(conv(H, F^H) + b))` for a hypothesis embedding.
pub fn encode_hypothesis(tape: &mut Tape, vars: &ReasonerVars, hypothesis: Var) -> Result<Var> {
    let c = tape.conv1d_valid(hypothesis, vars.f_h, vars.b_h)?;
    let c = tape.relu(c)?;
    tape.maxpool_over_time(c)
}

/// `r_S^T R r_H`
pub fn bilinear_score(tape: &mut Tape, r_s: Var, r_h: Var, r: Var) -> Result<Var> {
    let rh = tape.matvec(r, r_h)?;
    tape.dot(r_s, rh)
}

/// Runs the aggregation GRU over per-sentence inputs `x_1k..x_Nk` and
/// projects the final state to the scalar evidence `y_k`.
pub fn aggregate_evidence(tape: &mut Tape, vars: &ReasonerVars, inputs: &[Var]) -> Result<Var> {
    if inputs.is_empty() {
        return Err(Error::degenerate("aggregate_evidence", "no sentences"));
    }
    let mut h = tape.zeros(&[vars.agg.hidden]);
    for &x in inputs {
        h = gru_step(tape, &vars.agg, x, h)?;
    }
    let y = tape.matvec(vars.out_w, h)?;
    tape.add(y, vars.out_b)
}

/// Raw and normalised per-hypothesis evidence.
#[derive(Debug, Clone, Copy)]
pub struct EvidenceScores {
    pub y: Var,
    pub e: Var,
}

/// Token-level inputs for one reasoner pass.
#[derive(Debug, Clone)]
pub struct ReasonerInput<'a> {
    pub sentences: &'a SentenceSplit,
    /// Question tokens with the placeholder removed.
    pub question_context: &'a [usize],
    pub hypotheses: &'a [Hypothesis],
}

/// Scores every hypothesis against every sentence and normalises the
/// evidence with a softmax over hypotheses.
pub fn score_hypotheses(
    tape: &mut Tape,
    params: &ParamSet,
    table: &EmbeddingTable,
    vars: &ReasonerVars,
    input: &ReasonerInput<'_>,
) -> Result<EvidenceScores> {
    if input.hypotheses.is_empty() {
        return Err(Error::degenerate("reasoner", "no hypotheses"));
    }
    if input.sentences.is_empty() {
        return Err(Error::degenerate("reasoner", "no sentences"));
    }
    if input.question_context.is_empty() {
        return Err(Error::degenerate(
            "word_match_features",
            "question is empty once the placeholder is excluded",
        ));
    }
    let m = vars.width;
    let q = embed_lookup(tape, params, table, input.question_context)?;

    let mut sentence_embs = Vec::with_capacity(input.sentences.len());
    for s in &input.sentences.sentences {
        let ids = pad_to_width(s, m, table.pad);
        let emb = embed_lookup(tape, params, table, &ids)?;
        let row2 = question_match_row(tape, emb, q)?;
        sentence_embs.push((emb, row2));
    }

    let mut ys = Vec::with_capacity(input.hypotheses.len());
    for h in input.hypotheses {
        let h_ids = pad_to_width(&h.tokens, m, table.pad);
        let h_emb = embed_lookup(tape, params, table, &h_ids)?;
        let r_h = encode_hypothesis(tape, vars, h_emb)?;
        let rr_h = tape.matvec(vars.r, r_h)?;
        let cand = embed_lookup(tape, params, table, &[h.candidate])?;
        let cand = tape.reshape(cand, &[table.dim])?;
        let mut xs = Vec::with_capacity(sentence_embs.len());
        for &(emb, row2) in &sentence_embs {
            let mfeat = candidate_match(tape, emb, cand, row2)?;
            let aug = tape.vstack(&[emb, mfeat])?;
            let r_s = encode_sentence(tape, vars, aug)?;
            let score = tape.dot(r_s, rr_h)?;
            xs.push(tape.concat(&[score, r_s, r_h])?);
        }
        ys.push(aggregate_evidence(tape, vars, &xs)?);
    }
    let y = tape.concat(&ys)?;
    let e = tape.softmax(y, None)?;
    Ok(EvidenceScores { y, e })
}
