//! Hyperparameters and named presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer sizes of one model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Word embedding size `D`.
    pub embed_dim: usize,
    /// Hidden size `d` of each GRU direction in the text/question encoders.
    pub hidden: usize,
    /// Slate size `K`.
    pub k: usize,
    /// Convolution width `m`.
    pub width: usize,
    /// Number of convolution filters `N_F`.
    pub filters: usize,
    /// Hidden size `d_S` of the evidence-aggregation GRU.
    pub agg_hidden: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    CbtNe,
    CbtCn,
    Cnn,
    Toy,
}

impl Preset {
    pub fn dims(self) -> ModelDims {
        let (embed_dim, hidden, k, width, filters, agg_hidden) = match self {
            Preset::CbtNe => (300, 128, 5, 3, 16, 32),
            Preset::CbtCn => (300, 128, 5, 3, 32, 32),
            Preset::Cnn => (384, 256, 10, 3, 32, 32),
            Preset::Toy => (32, 32, 5, 3, 8, 16),
        };
        ModelDims {
            embed_dim,
            hidden,
            k,
            width,
            filters,
            agg_hidden,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// Parameters are kept at `f32` resolution between updates.
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub preset: Option<Preset>,
    pub dims: ModelDims,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub l2: f64,
    pub seed: u64,
    pub max_epochs: usize,
    pub precision: Precision,
    /// Block the margin loss from reaching the extractor through `p`.
    pub stop_margin_grad: bool,
    /// Vocabulary frequency threshold.
    pub min_count: usize,
}

impl TrainConfig {
    pub fn from_preset(preset: Preset) -> Self {
        TrainConfig {
            preset: Some(preset),
            dims: preset.dims(),
            learning_rate: 0.001,
            batch_size: 32,
            patience: 2,
            lambda: 50.0,
            gamma: 0.04,
            l2: 0.001,
            seed: 0,
            max_epochs: if preset == Preset::Toy { 20 } else { 50 },
            precision: Precision::F32,
            stop_margin_grad: false,
            min_count: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dims;
        let fields = [
            ("D", d.embed_dim),
            ("d", d.hidden),
            ("K", d.k),
            ("m", d.width),
            ("N_F", d.filters),
            ("d_S", d.agg_hidden),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        if self.lambda > 0.0 && d.k < 2 {
            return Err(Error::Config(
                "K must be at least 2 when the margin loss is enabled".into(),
            ));
        }
        if self.gamma.is_nan() || self.gamma <= 0.0 {
            return Err(Error::Config("gamma must be positive".into()));
        }
        if self.l2.is_nan() || self.l2 < 0.0 {
            return Err(Error::Config("l2 must be non-negative".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}
