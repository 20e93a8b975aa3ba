//! End-to-end workflow: model layout over a corpus, the joint training
//! objective, the training loop with checkpoints, reverse sampling and the
//! gradient check.

mod gradcheck;
mod sample;
mod train;

use std::path::PathBuf;

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{impute_and_scale, CorpusStats, TimeSeriesSample};
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::gaussian::{loss_numerical, loss_numerical_grad, q_sample, NumericMatrix};
use crate::multinomial::{loss_discrete_with_grad, one_hot_encode, q_marginal_probs, sample_categorical, OneHotSequence};
use crate::nn::{AdamConfig, ParamStore};
use crate::schedule::DiffusionSchedule;
use crate::{Error, Result};

pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport, GroupCheck, MAX_GRADCHECK_PARAMS};
pub use sample::Model;
pub use train::Trainer;

/// How discrete channels (categories and missingness masks) are modelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiscreteMode {
    /// Multinomial diffusion on one-hot channels.
    #[default]
    Multinomial,
    /// Ablation: each discrete channel becomes a numerical channel
    /// `c / (K - 1)` under Gaussian diffusion and is rounded after sampling.
    GaussianRounding,
}

impl DiscreteMode {
    pub(crate) fn code(self) -> u64 {
        match self {
            DiscreteMode::Multinomial => 0,
            DiscreteMode::GaussianRounding => 1,
        }
    }

    pub(crate) fn from_code(code: u64) -> Result<Self> {
        match code {
            0 => Ok(DiscreteMode::Multinomial),
            1 => Ok(DiscreteMode::GaussianRounding),
            _ => Err(Error::Checkpoint(format!("unknown discrete mode {code}"))),
        }
    }
}

/// Maps corpus samples to denoiser channels and back.
///
/// Model discrete channels are the categorical channels followed by one
/// two-state mask channel per numerical channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelLayout {
    pub numeric_channels: usize,
    pub categories: Vec<usize>,
    pub len: usize,
    pub mode: DiscreteMode,
}

/// A training sample in model space.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoded {
    pub x0: NumericMatrix,
    pub c0: OneHotSequence,
}

impl ModelLayout {
    pub fn discrete_categories(&self) -> Vec<usize> {
        let mut k = self.categories.clone();
        k.extend(std::iter::repeat_n(2, self.numeric_channels));
        k
    }

    pub fn model_numeric(&self) -> usize {
        match self.mode {
            DiscreteMode::Multinomial => self.numeric_channels,
            DiscreteMode::GaussianRounding => 2 * self.numeric_channels + self.categories.len(),
        }
    }

    pub fn model_categories(&self) -> Vec<usize> {
        match self.mode {
            DiscreteMode::Multinomial => self.discrete_categories(),
            DiscreteMode::GaussianRounding => vec![],
        }
    }

    pub fn denoiser_config(&self, config: &TrainConfig) -> DenoiserConfig {
        let mut cfg = DenoiserConfig::new(self.model_numeric(), self.model_categories());
        let hidden = config.hidden_multiple * cfg.io_width();
        cfg.hidden = hidden + hidden % 2;
        cfg.embed_dim = config.embed_dim;
        cfg.layers = config.layers;
        cfg
    }

    fn discrete_matrix(&self, s: &TimeSeriesSample) -> Array2<usize> {
        let pd = self.categories.len();
        let mut d = Array2::zeros((pd + self.numeric_channels, self.len));
        for ((p, l), v) in s.c.indexed_iter() {
            d[[p, l]] = *v;
        }
        for ((p, l), v) in s.m.indexed_iter() {
            d[[pd + p, l]] = usize::from(*v);
        }
        d
    }

    pub fn encode(&self, s: &TimeSeriesSample, stats: &CorpusStats) -> Result<Encoded> {
        let x = impute_and_scale(&s.x, &s.m, stats)?;
        let disc = self.discrete_matrix(s);
        let kinds = self.discrete_categories();
        match self.mode {
            DiscreteMode::Multinomial => Ok(Encoded {
                x0: x,
                c0: one_hot_encode(&disc, &kinds)?,
            }),
            DiscreteMode::GaussianRounding => {
                let pr = self.numeric_channels;
                let mut x0 = Array2::zeros((self.model_numeric(), self.len));
                x0.slice_mut(ndarray::s![..pr, ..]).assign(&x.0);
                for ((p, l), &v) in disc.indexed_iter() {
                    x0[[pr + p, l]] = v as f64 / (kinds[p] - 1) as f64;
                }
                Ok(Encoded {
                    x0: NumericMatrix(x0),
                    c0: one_hot_encode(&Array2::zeros((0, self.len)), &[])?,
                })
            }
        }
    }

    /// Clips numerical output to [0, 1], de-normalizes it and blanks values
    /// whose generated mask says "missing".
    pub fn decode(&self, x: &NumericMatrix, c: &OneHotSequence, stats: &CorpusStats) -> TimeSeriesSample {
        let pr = self.numeric_channels;
        let kinds = self.discrete_categories();
        let disc = match self.mode {
            DiscreteMode::Multinomial => crate::multinomial::one_hot_decode(c),
            DiscreteMode::GaussianRounding => Array2::from_shape_fn((kinds.len(), self.len), |(p, l)| {
                let top = (kinds[p] - 1) as f64;
                (x.0[[pr + p, l]].clamp(0.0, 1.0) * top).round() as usize
            }),
        };
        let pd = self.categories.len();
        let m = disc.slice(ndarray::s![pd.., ..]).mapv(|v| v as u8);
        let mut raw = Array2::zeros((pr, self.len));
        for ((p, l), v) in raw.indexed_iter_mut() {
            *v = if m[[p, l]] == 1 {
                f64::NAN
            } else {
                stats.descale_value(p, x.0[[p, l]].clamp(0.0, 1.0))
            };
        }
        TimeSeriesSample {
            x: raw,
            c: disc.slice(ndarray::s![..pd, ..]).to_owned(),
            m,
        }
    }
}

/// Training hyperparameters. Serialized as flat `key=value` text whose keys
/// are the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub corpus: PathBuf,
    pub checkpoint: PathBuf,
    pub diffusion_steps: usize,
    pub lambda: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub ema_decay: f64,
    pub accumulation: usize,
    pub batch: usize,
    pub layers: usize,
    pub hidden_multiple: usize,
    pub embed_dim: usize,
    /// Optimizer steps.
    pub steps: u64,
    pub seed: u64,
    /// Optimizer steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub log_every: u64,
    /// Library-only switch for the rounding ablation.
    #[serde(skip)]
    pub discrete_mode: DiscreteMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus.csv"),
            checkpoint: PathBuf::from("model.ckpt"),
            diffusion_steps: 1000,
            lambda: 0.01,
            lr: 8e-5,
            beta1: 0.9,
            beta2: 0.99,
            ema_decay: 0.995,
            accumulation: 2,
            batch: 32,
            layers: 2,
            hidden_multiple: 4,
            embed_dim: 128,
            steps: 20_000,
            seed: 0,
            checkpoint_every: 1000,
            log_every: 100,
            discrete_mode: DiscreteMode::Multinomial,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if self.diffusion_steps < 2 {
            return bad(format!("diffusion_steps must be >= 2, got {}", self.diffusion_steps));
        }
        if self.batch == 0 || self.accumulation == 0 || self.layers == 0 || self.hidden_multiple == 0 {
            return bad("batch, accumulation, layers and hidden_multiple must be >= 1".into());
        }
        if self.embed_dim == 0 || self.embed_dim % 2 == 1 {
            return bad(format!("embed_dim must be even and positive, got {}", self.embed_dim));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("lr must be > 0 and beta1, beta2 in [0, 1)".into());
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay must lie in [0, 1], got {}", self.ema_decay));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }

    /// Parses `key=value` lines over the defaults. Blank lines and `#`
    /// comments are ignored; unknown keys are an error.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut map = serde_json::to_value(Self::default())
            .expect("config serializes")
            .as_object()
            .cloned()
            .expect("object");
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("config line {}: expected key=value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let old = map
                .get(k)
                .ok_or_else(|| Error::invalid(format!("config line {}: unknown key {k:?}", i + 1)))?;
            let value = if old.is_string() {
                serde_json::Value::String(v.to_string())
            } else {
                serde_json::from_str(v)
                    .map_err(|_| Error::invalid(format!("config line {}: bad value {v:?} for {k}", i + 1)))?
            };
            map.insert(k.to_string(), value);
        }
        serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    pub fn to_kv(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for (k, v) in v.as_object().expect("object") {
            match v {
                serde_json::Value::String(s) => out.push_str(&format!("{k}={s}\n")),
                other => out.push_str(&format!("{k}={other}\n")),
            }
        }
        out
    }
}

/// Noised inputs of one micro-batch, fixed so the objective is a
/// deterministic function of the parameters.
#[derive(Debug, Clone)]
pub(crate) struct NoisedBatch {
    pub steps: Vec<usize>,
    pub eps: Vec<NumericMatrix>,
    pub x_t: Vec<NumericMatrix>,
    pub c0: Vec<OneHotSequence>,
    pub c_t: Vec<OneHotSequence>,
}

pub(crate) fn noise_batch<R: Rng + ?Sized>(
    samples: &[&Encoded],
    steps: Vec<usize>,
    schedule: &DiffusionSchedule,
    gauss: &mut R,
    cat: &mut R,
) -> Result<NoisedBatch> {
    let mut eps = Vec::with_capacity(samples.len());
    let mut x_t = Vec::with_capacity(samples.len());
    let mut c_t = Vec::with_capacity(samples.len());
    for (s, &t) in samples.iter().zip(&steps) {
        let e = NumericMatrix(Array2::from_shape_simple_fn(s.x0.0.dim(), || StandardNormal.sample(gauss)));
        x_t.push(q_sample(&s.x0, t, &e, schedule)?);
        eps.push(e);
        c_t.push(sample_categorical(&q_marginal_probs(&s.c0, t, schedule)?, cat));
    }
    Ok(NoisedBatch {
        steps,
        eps,
        x_t,
        c0: samples.iter().map(|s| s.c0.clone()).collect(),
        c_t,
    })
}

/// Batch means of the two loss terms and of the weighted total
/// `L_N + lambda * T * KL`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub total: f64,
    pub numerical: f64,
    pub discrete: f64,
}

pub(crate) fn objective(
    denoiser: &Denoiser,
    params: &ParamStore,
    schedule: &DiffusionSchedule,
    batch: &NoisedBatch,
    lambda: f64,
    want_grad: bool,
) -> Result<(LossParts, Option<ParamStore>)> {
    let pairs: Vec<_> = batch.x_t.iter().zip(&batch.c_t).collect();
    let input = denoiser.assemble_input(&pairs)?;
    let (out, cache) = denoiser.forward(params, input.view(), &batch.steps)?;
    let nb = batch.steps.len();
    let inv_b = 1.0 / nb as f64;
    let weight = lambda * schedule.total_steps() as f64;
    let pr = denoiser.config().numeric_channels;
    let mut d_out = Array3::zeros(out.dim());
    let mut parts = LossParts::default();
    for b in 0..nb {
        let o = denoiser.split_output(out.view(), b);
        let t = batch.steps[b];
        let ln = loss_numerical(&batch.eps[b], &o.eps_pred)?;
        let need_kl_grad = want_grad && weight > 0.0;
        let (kl, g) = loss_discrete_with_grad(&batch.c0[b], &batch.c_t[b], &o.logits, t, schedule, need_kl_grad)?;
        parts.numerical += ln * inv_b;
        parts.discrete += kl * inv_b;
        parts.total += (ln + weight * kl) * inv_b;
        if want_grad {
            let gn = loss_numerical_grad(&batch.eps[b], &o.eps_pred);
            for ((p, l), v) in gn.indexed_iter() {
                d_out[[l, b, p]] = v * inv_b;
            }
            let mut col = pr;
            for gc in &g {
                for ((l, k), v) in gc.indexed_iter() {
                    d_out[[l, b, col + k]] = v * weight * inv_b;
                }
                col += gc.ncols();
            }
        }
    }
    if !parts.total.is_finite() {
        return Ok((parts, None));
    }
    let grads = if want_grad {
        Some(denoiser.backward(params, &cache, d_out.view())?)
    } else {
        None
    };
    Ok((parts, grads))
}
