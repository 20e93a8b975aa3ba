//! Post-hoc fidelity and privacy metrics for synthetic corpora:
//! discriminative score, predictive score and nearest-neighbour
//! adversarial accuracy (NNAA).
//!
//! Every metric works on per-step feature vectors
//! `[scaled numerical | category / (K - 1) | missing masks]`, with numerical
//! channels imputed and scaled by the real training split's statistics.

mod gru;
mod nnaa;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{impute_and_scale, Corpus, CorpusStats};
use crate::denoiser::layers::sigmoid;
use crate::nn::{Adam, AdamConfig, RngStreams, Stream};
use crate::{Error, Result};
use gru::GruNet;

pub use nnaa::{column_moments, nn_distances, nnaa, standardize, NnaaReport};

/// Feature tensor `(n, L, F)` with `F = 2 P_r + P_d`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub data: Array3<f64>,
    pub numeric_channels: usize,
    pub discrete_channels: usize,
}

impl FeatureSet {
    pub fn from_corpus(corpus: &Corpus, stats: &CorpusStats) -> Result<Self> {
        let (pr, pd, len) = (corpus.numeric_channels, corpus.categories.len(), corpus.len);
        let width = 2 * pr + pd;
        let mut data = Array3::zeros((corpus.n(), len, width));
        for (i, s) in corpus.samples.iter().enumerate() {
            let x = impute_and_scale(&s.x, &s.m, stats)?;
            for l in 0..len {
                for p in 0..pr {
                    data[[i, l, p]] = x.0[[p, l]];
                    data[[i, l, pr + pd + p]] = f64::from(s.m[[p, l]]);
                }
                for (p, &k) in corpus.categories.iter().enumerate() {
                    data[[i, l, pr + p]] = s.c[[p, l]] as f64 / (k - 1) as f64;
                }
            }
        }
        Ok(Self {
            data,
            numeric_channels: pr,
            discrete_channels: pd,
        })
    }

    pub fn n(&self) -> usize {
        self.data.dim().0
    }

    pub fn len(&self) -> usize {
        self.data.dim().1
    }

    pub fn is_empty(&self) -> bool {
        self.n() == 0
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn head(&self, n: usize) -> Self {
        Self {
            data: self.data.slice(s![..n.min(self.n()), .., ..]).to_owned(),
            ..*self
        }
    }

    /// `(n, L * F)` rows for distance computations.
    pub fn flatten(&self) -> Array2<f64> {
        let (n, l, f) = self.data.dim();
        self.data.to_owned().into_shape_with_order((n, l * f)).expect("contiguous")
    }

    /// Per-feature moments over all samples and steps.
    pub fn feature_moments(&self) -> (Vec<f64>, Vec<f64>) {
        let (n, l, f) = self.data.dim();
        let flat = self.data.to_owned().into_shape_with_order((n * l, f)).expect("contiguous");
        column_moments(flat.view())
    }

    /// Batch `(L * B, F)` for the given samples and step range.
    fn batch(&self, idx: &[usize], steps: std::ops::Range<usize>, mean: &[f64], sd: &[f64]) -> Array2<f64> {
        let nb = idx.len();
        let f = self.width();
        let mut out = Array2::zeros((steps.len() * nb, f));
        for (li, l) in steps.enumerate() {
            for (b, &i) in idx.iter().enumerate() {
                for k in 0..f {
                    out[[li * nb + b, k]] = (self.data[[i, l, k]] - mean[k]) / sd[k];
                }
            }
        }
        out
    }
}

/// Training settings shared by the metric models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricConfig {
    pub steps: usize,
    pub batch: usize,
    /// GRU width as a multiple of the feature width.
    pub hidden_multiple: usize,
    pub lr: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 128,
            hidden_multiple: 4,
            lr: 1e-3,
        }
    }
}

impl MetricConfig {
    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

const MIN_PER_SIDE: usize = 20;

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    v
}

/// Trains a GRU classifier (real = 1, synthetic = 0) on 80% of each set and
/// returns `|0.5 - accuracy|` on the held-out 20%. Inputs are standardized
/// with the real set's per-feature moments.
pub fn discriminative_score(real: &FeatureSet, synth: &FeatureSet, cfg: &MetricConfig, seed: u64) -> Result<f64> {
    if real.n() < MIN_PER_SIDE || synth.n() < MIN_PER_SIDE {
        return Err(Error::invalid(format!(
            "discriminative score needs at least {MIN_PER_SIDE} samples per side, got {} real and {} synthetic",
            real.n(),
            synth.n()
        )));
    }
    if real.len() != synth.len() || real.width() != synth.width() {
        return Err(Error::invalid("real and synthetic features have different shapes"));
    }
    let mut rng = RngStreams::new(seed).stream(Stream::Eval);
    let (len, f) = (real.len(), real.width());
    let (mean, sd) = real.feature_moments();
    let split = |n: usize, rng: &mut ChaCha8Rng| {
        let idx = shuffled(n, rng);
        let cut = (n * 4) / 5;
        (idx[..cut].to_vec(), idx[cut..].to_vec())
    };
    let (real_train, real_test) = split(real.n(), &mut rng);
    let (synth_train, synth_test) = split(synth.n(), &mut rng);

    let net = GruNet::new(f, cfg.hidden_multiple * f, 1);
    let mut params = net.init(&mut rng);
    let mut adam = Adam::new(cfg.adam(), &params);
    let half = (cfg.batch / 2).max(1);
    for _ in 0..cfg.steps {
        let r: Vec<usize> = (0..half).map(|_| real_train[rng.random_range(0..real_train.len())]).collect();
        let q: Vec<usize> = (0..half).map(|_| synth_train[rng.random_range(0..synth_train.len())]).collect();
        let nb = 2 * half;
        let mut x = Array2::zeros((len * nb, f));
        let xr = real.batch(&r, 0..len, &mean, &sd);
        let xs = synth.batch(&q, 0..len, &mean, &sd);
        for l in 0..len {
            x.slice_mut(s![l * nb..l * nb + half, ..]).assign(&xr.slice(s![l * half..(l + 1) * half, ..]));
            x.slice_mut(s![l * nb + half..(l + 1) * nb, ..]).assign(&xs.slice(s![l * half..(l + 1) * half, ..]));
        }
        let (trace, out) = net.forward(&params, x.view(), len, nb);
        // Mean BCE on the last step's logit.
        let mut d_out = Array2::zeros(out.dim());
        for b in 0..nb {
            let row = (len - 1) * nb + b;
            let y = if b < half { 1.0 } else { 0.0 };
            d_out[[row, 0]] = (sigmoid(out[[row, 0]]) - y) / nb as f64;
        }
        let grads = net.backward(&params, x.view(), &trace, d_out.view());
        adam.apply(&mut params, &grads)?;
    }

    let mut correct = 0usize;
    for (set, idx, label) in [(real, &real_test, true), (synth, &synth_test, false)] {
        let x = set.batch(idx, 0..len, &mean, &sd);
        let (_, out) = net.forward(&params, x.view(), len, idx.len());
        let last = out.slice(s![(len - 1) * idx.len().., 0]);
        correct += last.iter().filter(|&&v| (v > 0.0) == label).count();
    }
    let accuracy = correct as f64 / (real_test.len() + synth_test.len()) as f64;
    Ok((0.5 - accuracy).abs())
}

/// Mean absolute error over entries where `mask` is 0.
pub fn masked_mae(pred: ArrayView2<f64>, target: ArrayView2<f64>, mask: ArrayView2<f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for ((p, t), m) in pred.iter().zip(target.iter()).zip(mask.iter()) {
        if *m == 0.0 {
            sum += (p - t).abs();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Trains a GRU next-step predictor of the numerical channels on `train`
/// and returns its mean absolute error on `test`. Targets that are missing
/// (mask 1) are left out of both the loss and the error.
pub fn predictive_score(train: &FeatureSet, test: &FeatureSet, cfg: &MetricConfig, seed: u64) -> Result<f64> {
    let len = train.len();
    if len < 2 {
        return Err(Error::invalid("predictive score needs sequences of length >= 2"));
    }
    if train.len() != test.len() || train.width() != test.width() || train.numeric_channels != test.numeric_channels {
        return Err(Error::invalid("train and test features have different shapes"));
    }
    if train.is_empty() || test.is_empty() || train.numeric_channels == 0 {
        return Err(Error::invalid("predictive score needs samples and numerical channels"));
    }
    let mut rng = RngStreams::new(seed).stream(Stream::Eval);
    let (f, pr, pd) = (train.width(), train.numeric_channels, train.discrete_channels);
    let ident = (vec![0.0; f], vec![1.0; f]);
    let net = GruNet::new(f, cfg.hidden_multiple * f, pr);
    let mut params = net.init(&mut rng);
    let mut adam = Adam::new(cfg.adam(), &params);
    let targets = |set: &FeatureSet, idx: &[usize]| {
        let nb = idx.len();
        let mut y = Array2::zeros(((len - 1) * nb, pr));
        let mut m = Array2::zeros(((len - 1) * nb, pr));
        for l in 1..len {
            for (b, &i) in idx.iter().enumerate() {
                for p in 0..pr {
                    y[[(l - 1) * nb + b, p]] = set.data[[i, l, p]];
                    m[[(l - 1) * nb + b, p]] = set.data[[i, l, pr + pd + p]];
                }
            }
        }
        (y, m)
    };
    for _ in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..train.n())).collect();
        let x = train.batch(&idx, 0..len - 1, &ident.0, &ident.1);
        let (y, m) = targets(train, &idx);
        let (trace, out) = net.forward(&params, x.view(), len - 1, idx.len());
        let observed = m.iter().filter(|&&v| v == 0.0).count().max(1) as f64;
        let d_out = ndarray::Zip::from(&out)
            .and(&y)
            .and(&m)
            .map_collect(|&o, &t, &mk| if mk == 0.0 { (o - t).signum() / observed } else { 0.0 });
        let grads = net.backward(&params, x.view(), &trace, d_out.view());
        adam.apply(&mut params, &grads)?;
    }

    let mut sum = 0.0;
    let mut count = 0usize;
    let all: Vec<usize> = (0..test.n()).collect();
    for chunk in all.chunks(512) {
        let x = test.batch(chunk, 0..len - 1, &ident.0, &ident.1);
        let (y, m) = targets(test, chunk);
        let (_, out) = net.forward(&params, x.view(), len - 1, chunk.len());
        let observed = m.iter().filter(|&&v| v == 0.0).count();
        sum += masked_mae(out.view(), y.view(), m.view()) * observed as f64;
        count += observed;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Mean and sample standard deviation of repeated metric runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub sd: f64,
    pub reruns: usize,
    pub seeds: Vec<u64>,
    pub scores: Vec<f64>,
}

impl MetricSummary {
    pub fn from_scores(scores: Vec<f64>, seeds: Vec<u64>) -> Self {
        let n = scores.len();
        let mean = scores.iter().sum::<f64>() / n.max(1) as f64;
        let sd = if n > 1 {
            (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            sd,
            reruns: n,
            seeds,
            scores,
        }
    }
}

/// Seed of rerun `i` under `master`.
pub fn rerun_seed(master: u64, i: usize) -> u64 {
    RngStreams::new(master).indexed(Stream::Eval, 1 + i as u64).random()
}

/// Runs `metric` with `reruns` derived seeds. Runs are independent, so the
/// order of evaluation does not affect the summary.
pub fn rerun(reruns: usize, master: u64, mut metric: impl FnMut(u64) -> Result<f64>) -> Result<MetricSummary> {
    let seeds: Vec<u64> = (0..reruns).map(|i| rerun_seed(master, i)).collect();
    let scores = seeds.iter().map(|&s| metric(s)).collect::<Result<Vec<_>>>()?;
    Ok(MetricSummary::from_scores(scores, seeds))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NnaaSummary {
    pub aa_test: f64,
    pub aa_train: f64,
    pub nnaa: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub reruns: usize,
    pub seed: u64,
    pub metric: MetricConfig,
    /// Also train the predictor on real training data for reference.
    pub baseline: bool,
    /// Cap on the number of points per NNAA set.
    pub nnaa_max: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            reruns: 10,
            seed: 0,
            metric: MetricConfig::default(),
            baseline: true,
            nnaa_max: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub discriminative: MetricSummary,
    pub predictive: MetricSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predictive_baseline: Option<MetricSummary>,
    pub nnaa: NnaaSummary,
    pub metric_config: MetricConfig,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// All metrics for one synthetic corpus. Scaling statistics come from
/// `real_train`.
pub fn evaluate(real_train: &Corpus, real_test: &Corpus, synth: &Corpus, cfg: &EvalConfig) -> Result<EvalReport> {
    if !real_train.same_layout(real_test) || !real_train.same_layout(synth) {
        return Err(Error::invalid("real train, real test and synthetic corpora must share one layout"));
    }
    let stats = CorpusStats::from_corpus(real_train);
    let train = FeatureSet::from_corpus(real_train, &stats)?;
    let test = FeatureSet::from_corpus(real_test, &stats)?;
    let syn = FeatureSet::from_corpus(synth, &stats)?;

    let m = train.n().min(syn.n());
    let (disc_real, disc_synth) = (train.head(m), syn.head(m));
    let discriminative = rerun(cfg.reruns, cfg.seed, |s| {
        discriminative_score(&disc_real, &disc_synth, &cfg.metric, s)
    })?;
    let predictive = rerun(cfg.reruns, cfg.seed ^ 0x5052_4544, |s| predictive_score(&syn, &test, &cfg.metric, s))?;
    let predictive_baseline = if cfg.baseline {
        Some(rerun(cfg.reruns, cfg.seed ^ 0x5052_4544, |s| {
            predictive_score(&train, &test, &cfg.metric, s)
        })?)
    } else {
        None
    };

    let n = train.n().min(test.n()).min(syn.n()).min(cfg.nnaa_max);
    let flat_train = train.head(n).flatten();
    let (mean, sd) = column_moments(flat_train.view());
    let z = |f: &FeatureSet| standardize(f.head(n).flatten().view(), &mean, &sd);
    let r = nnaa(z(&train).view(), z(&test).view(), z(&syn).view())?;
    let mut warnings = Vec::new();
    if r.aa_train == 0.0 {
        warnings.push("overfit: aa_train is 0, synthetic samples coincide with training samples".to_string());
    }
    Ok(EvalReport {
        discriminative,
        predictive,
        predictive_baseline,
        nnaa: NnaaSummary {
            aa_test: r.aa_test,
            aa_train: r.aa_train,
            nnaa: r.nnaa,
            n,
        },
        metric_config: cfg.metric,
        warnings,
    })
}

/// Mean lag-1 autocorrelation of the observed numerical values, averaged
/// over samples and channels (sequences with no variance are skipped).
pub fn mean_lag1_autocorrelation(corpus: &Corpus) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in &corpus.samples {
        for row in s.x.axis_iter(Axis(0)) {
            let v: Vec<f64> = row.iter().copied().filter(|x| x.is_finite()).collect();
            if v.len() < 3 {
                continue;
            }
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let var: f64 = v.iter().map(|x| (x - mean).powi(2)).sum();
            if var <= 0.0 {
                continue;
            }
            let cov: f64 = v.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
            total += cov / var;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}
