//! Mini-batch training with early stopping, and evaluation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::config::{Precision, TrainConfig};
use crate::data::{make_batches, ClozeExample};
use crate::error::{Error, Result};
use crate::model::{l2_penalty, EpiReader, Evidence, LossWeights, Prediction};
use crate::optim::Adam;
use crate::tensor::ParamSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(rename = "L_E")]
    pub l_e: f64,
    #[serde(rename = "L_R")]
    pub l_r: f64,
    pub valid_acc_extractor: f64,
    pub valid_acc_full: f64,
    pub wallclock_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best validation score; stops after `patience` epochs
/// without strict improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        if self.best.is_none_or(|b| score > b) {
            self.best = Some(score);
            self.best_epoch = epoch;
            self.stale = 0;
            StopDecision::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamSet,
    pub optimizer: Adam,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub dropped_zero_support: usize,
}

/// Mutable training state for one run.
pub struct Trainer<'a> {
    pub reader: &'a EpiReader,
    pub config: &'a TrainConfig,
    pub params: ParamSet,
    pub optimizer: Adam,
}

#[derive(Debug, Clone, Copy, Default)]
struct BatchStats {
    loss: f64,
    l_e: f64,
    l_r: f64,
    used: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(reader: &'a EpiReader, config: &'a TrainConfig, mut params: ParamSet) -> Self {
        if config.precision == Precision::F32 {
            params.round_to_f32();
        }
        let optimizer = Adam::new(&params, config.learning_rate);
        Trainer {
            reader,
            config,
            params,
            optimizer,
        }
    }

    fn weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.config.lambda,
            gamma: self.config.gamma,
            stop_margin_grad: self.config.stop_margin_grad,
        }
    }

    /// One optimizer step on the mean loss of `batch`.
    fn step(&mut self, batch: &[&ClozeExample]) -> Result<BatchStats> {
        self.params.zero_grads();
        let w = self.weights();
        let inv = 1.0 / batch.len() as f64;
        let mut stats = BatchStats::default();
        for ex in batch {
            let mut tape = Tape::new();
            let Some(el) = self.reader.training_loss(&mut tape, &self.params, ex, &w)? else {
                continue;
            };
            let scaled = tape.scale(el.loss, inv)?;
            tape.backward(scaled)?.accumulate_into(&mut self.params);
            stats.loss += tape.scalar(el.loss) * inv;
            stats.l_e += el.l_e;
            stats.l_r += el.l_r;
            stats.used += 1;
        }
        if self.config.l2 > 0.0 {
            let mut tape = Tape::new();
            let pen = l2_penalty(&mut tape, &self.params, self.reader, self.config.l2)?;
            tape.backward(pen)?.accumulate_into(&mut self.params);
            stats.loss += tape.scalar(pen);
        }
        self.optimizer.step(&mut self.params)?;
        if self.config.precision == Precision::F32 {
            self.params.round_to_f32();
        }
        Ok(stats)
    }

    /// Runs training to completion and returns the best-validation state.
    /// `on_epoch` sees each epoch's metrics as soon as they exist.
    pub fn fit(
        mut self,
        train: &[ClozeExample],
        valid: &[ClozeExample],
        mut on_epoch: impl FnMut(&EpochMetrics) -> Result<()>,
    ) -> Result<TrainOutcome> {
        if valid.is_empty() {
            return Err(Error::Config("validation set is empty".into()));
        }
        let usable: Vec<ClozeExample> = train.iter().filter(|e| e.has_support()).cloned().collect();
        let dropped = train.len() - usable.len();
        if dropped > 0 {
            log::warn!("dropped {dropped} training examples whose answer never occurs in the text");
        }
        if usable.is_empty() {
            return Err(Error::Config("no usable training examples".into()));
        }
        let start = Instant::now();
        let mut stopper = EarlyStopping::new(self.config.patience);
        let mut best = (self.params.clone(), self.optimizer.clone());
        let mut metrics = Vec::new();
        for epoch in 1..=self.config.max_epochs {
            let seed = self.config.seed.wrapping_add(epoch as u64);
            let batches = make_batches(&usable, self.config.batch_size, seed, true);
            let mut totals = BatchStats::default();
            let mut nonempty = 0;
            for b in &batches {
                let group: Vec<&ClozeExample> = b.indices.iter().map(|&i| &usable[i]).collect();
                let s = self.step(&group)?;
                if s.used == 0 {
                    log::warn!("epoch {epoch}: batch with no usable examples");
                    continue;
                }
                nonempty += 1;
                totals.loss += s.loss;
                totals.l_e += s.l_e;
                totals.l_r += s.l_r;
                totals.used += s.used;
            }
            let report = evaluate(
                self.reader,
                &self.params,
                valid,
                EvalOptions {
                    full: true,
                    evidence: Evidence::Reasoner,
                    workers: 1,
                },
            )?;
            let m = EpochMetrics {
                epoch,
                train_loss: totals.loss / nonempty.max(1) as f64,
                l_e: totals.l_e / totals.used.max(1) as f64,
                l_r: totals.l_r / totals.used.max(1) as f64,
                valid_acc_extractor: report.acc_extractor,
                valid_acc_full: report.acc_full.unwrap_or(0.0),
                wallclock_s: start.elapsed().as_secs_f64(),
            };
            log::info!(
                "epoch {epoch}: loss {:.4} L_E {:.4} L_R {:.4} valid extractor {:.4} full {:.4}",
                m.train_loss,
                m.l_e,
                m.l_r,
                m.valid_acc_extractor,
                m.valid_acc_full
            );
            on_epoch(&m)?;
            let decision = stopper.observe(epoch, m.valid_acc_full);
            metrics.push(m);
            match decision {
                StopDecision::Improved => best = (self.params.clone(), self.optimizer.clone()),
                StopDecision::Continue => {}
                StopDecision::Stop => break,
            }
        }
        Ok(TrainOutcome {
            params: best.0,
            optimizer: best.1,
            metrics,
            best_epoch: stopper.best_epoch,
            dropped_zero_support: dropped,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    /// Also run the reasoner and rank by the combined probability.
    pub full: bool,
    pub evidence: Evidence,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub examples: usize,
    pub zero_support: usize,
    pub acc_extractor: f64,
    pub acc_full: Option<f64>,
    pub predictions: Vec<Prediction>,
}

/// Scores every example against a read-only parameter snapshot,
/// optionally spread over `workers` threads. Results do not depend on the
/// worker count.
pub fn evaluate(
    reader: &EpiReader,
    params: &ParamSet,
    examples: &[ClozeExample],
    opts: EvalOptions,
) -> Result<EvalReport> {
    let run = |chunk: &[ClozeExample]| -> Result<Vec<Prediction>> {
        chunk
            .iter()
            .map(|ex| reader.predict(params, ex, opts.evidence, opts.full))
            .collect()
    };
    let workers = opts.workers.clamp(1, examples.len().max(1));
    let predictions: Vec<Prediction> = if workers == 1 {
        run(examples)?
    } else {
        let size = examples.len().div_ceil(workers);
        let parts: Vec<Result<Vec<Prediction>>> = std::thread::scope(|scope| {
            let handles: Vec<_> = examples.chunks(size).map(|c| scope.spawn(move || run(c))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        });
        let mut all = Vec::with_capacity(examples.len());
        for p in parts {
            all.extend(p?);
        }
        all
    };
    let n = predictions.len().max(1) as f64;
    let hits_ex = predictions.iter().filter(|p| p.extractor == Some(p.gold)).count();
    let acc_full = opts.full.then(|| {
        predictions
            .iter()
            .filter(|p| p.combined.as_ref().is_some_and(|c| c.answer == p.gold))
            .count() as f64
            / n
    });
    Ok(EvalReport {
        examples: predictions.len(),
        zero_support: predictions.iter().filter(|p| p.zero_support).count(),
        acc_extractor: hits_ex as f64 / n,
        acc_full,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_rule_trace() {
        let mut s = EarlyStopping::new(2);
        let d: Vec<_> = [0.5, 0.6, 0.58, 0.59]
            .iter()
            .enumerate()
            .map(|(i, &a)| s.observe(i + 1, a))
            .collect();
        assert_eq!(
            d,
            vec![
                StopDecision::Improved,
                StopDecision::Improved,
                StopDecision::Continue,
                StopDecision::Stop
            ]
        );
        assert_eq!(s.best_epoch, 2);
    }

    #[test]
    fn ties_do_not_count_as_improvement() {
        let mut s = EarlyStopping::new(1);
        s.observe(1, 0.5);
        assert_eq!(s.observe(2, 0.5), StopDecision::Stop);
        assert_eq!(s.best_epoch, 1);
    }
}
