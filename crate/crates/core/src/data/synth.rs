//! Desk-scale stand-ins for clinical corpora: noisy sinusoids for
//! numerical channels, sticky Markov chains for categorical channels and an
//! MCAR missingness mask.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Corpus, TimeSeriesSample};
use crate::nn::{RngStreams, Stream};
use crate::{Error, Result};

const NOISE_SD: f64 = 0.02;
const SELF_TRANSITION: f64 = 0.8;

/// `A sin(2 pi f l + phi) + noise` per channel. The frequency is drawn once
/// per sample from `U[0.5/L, 4/L]`; phase and amplitude per channel.
pub fn make_sine_corpus(n: usize, channels: usize, len: usize, seed: u64) -> Result<Corpus> {
    if channels == 0 || len == 0 {
        return Err(Error::invalid("sine corpus needs at least one channel and one step"));
    }
    let mut rng = RngStreams::new(seed).indexed(Stream::Corpus, 0);
    let noise = Normal::new(0.0, NOISE_SD).expect("valid normal");
    let lf = len as f64;
    let samples = (0..n)
        .map(|_| {
            let freq = rng.random_range(0.5 / lf..4.0 / lf);
            let mut x = Array2::zeros((channels, len));
            for p in 0..channels {
                let phase = rng.random_range(0.0..2.0 * PI);
                let amp = rng.random_range(0.4..1.0);
                for l in 0..len {
                    x[[p, l]] = amp * (2.0 * PI * freq * l as f64 + phase).sin() + noise.sample(&mut rng);
                }
            }
            TimeSeriesSample {
                x,
                c: Array2::zeros((0, len)),
                m: Array2::zeros((channels, len)),
            }
        })
        .collect();
    Corpus::new(samples, channels, vec![], len)
}

/// Categorical channels and MCAR masks for `n` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovCorpus {
    /// `[P_d, L]` per sample.
    pub categories: Vec<Array2<usize>>,
    /// `[mask_channels, L]` per sample.
    pub masks: Vec<Array2<u8>>,
}

/// Each channel is a `K`-state chain that keeps its state with probability
/// 0.8 and otherwise jumps uniformly to one of the other states; the first
/// state is uniform. Masks are i.i.d. Bernoulli(`missing_rate`).
pub fn make_markov_corpus(
    n: usize,
    channels: usize,
    len: usize,
    k: usize,
    mask_channels: usize,
    missing_rate: f64,
    seed: u64,
) -> Result<MarkovCorpus> {
    if k < 2 {
        return Err(Error::invalid(format!("Markov corpus needs K >= 2, got {k}")));
    }
    if !(0.0..=1.0).contains(&missing_rate) {
        return Err(Error::invalid(format!("missing rate {missing_rate} outside [0, 1]")));
    }
    let mut chain_rng = RngStreams::new(seed).indexed(Stream::Corpus, 1);
    let mut mask_rng = RngStreams::new(seed).indexed(Stream::Corpus, 2);
    let mut categories = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    for _ in 0..n {
        let mut c = Array2::zeros((channels, len));
        for p in 0..channels {
            let mut state = chain_rng.random_range(0..k);
            for l in 0..len {
                if l > 0 && !chain_rng.random_bool(SELF_TRANSITION) {
                    let jump = chain_rng.random_range(0..k - 1);
                    state = if jump >= state { jump + 1 } else { jump };
                }
                c[[p, l]] = state;
            }
        }
        categories.push(c);
        masks.push(Array2::from_shape_fn((mask_channels, len), |_| {
            u8::from(mask_rng.random::<f64>() < missing_rate)
        }));
    }
    Ok(MarkovCorpus { categories, masks })
}

/// Sine numerical channels paired with Markov categorical channels; the
/// MCAR mask removes numerical values.
#[allow(clippy::too_many_arguments)]
pub fn make_sine_markov_corpus(
    n: usize,
    numeric_channels: usize,
    discrete_channels: usize,
    k: usize,
    len: usize,
    missing_rate: f64,
    seed: u64,
) -> Result<Corpus> {
    let sine = make_sine_corpus(n, numeric_channels, len, seed)?;
    let markov = make_markov_corpus(n, discrete_channels, len, k, numeric_channels, missing_rate, seed)?;
    let samples = sine
        .samples
        .into_iter()
        .zip(markov.categories)
        .zip(markov.masks)
        .map(|((mut s, c), m)| {
            for (v, &miss) in s.x.iter_mut().zip(m.iter()) {
                if miss == 1 {
                    *v = f64::NAN;
                }
            }
            s.c = c;
            s.m = m;
            s
        })
        .collect();
    Corpus::new(samples, numeric_channels, vec![k; discrete_channels], len)
}
