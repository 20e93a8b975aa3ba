//! Corpus representation, missing-value masks, imputation and scaling,
//! synthetic desk-scale corpora and CSV ingestion.

mod io;
mod synth;

use ndarray::Array2;

pub use io::{read_corpus, read_stats, write_corpus, write_stats};
pub use synth::{make_markov_corpus, make_sine_corpus, make_sine_markov_corpus, MarkovCorpus};

use crate::gaussian::NumericMatrix;
use crate::{Error, Result};

/// One subject: raw numerical channels (NaN where missing), categorical
/// channels and the missing-value mask of the numerical channels.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesSample {
    /// `[P_r, L]`, NaN marks a missing value.
    pub x: Array2<f64>,
    /// `[P_d, L]`.
    pub c: Array2<usize>,
    /// `[P_r, L]`, 1 where the matching `x` entry is missing.
    pub m: Array2<u8>,
}

impl TimeSeriesSample {
    /// Builds a sample from raw values, deriving the mask from NaNs.
    pub fn from_raw(x: Array2<f64>, c: Array2<usize>) -> Self {
        let m = derive_mask(&x).mask;
        Self { x, c, m }
    }

    pub fn len(&self) -> usize {
        self.x.ncols().max(self.c.ncols())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub samples: Vec<TimeSeriesSample>,
    pub numeric_channels: usize,
    /// Category count per categorical channel.
    pub categories: Vec<usize>,
    pub len: usize,
}

impl Corpus {
    pub fn new(samples: Vec<TimeSeriesSample>, numeric_channels: usize, categories: Vec<usize>, len: usize) -> Result<Self> {
        for (i, s) in samples.iter().enumerate() {
            let ok = s.x.dim() == (numeric_channels, len)
                && s.m.dim() == (numeric_channels, len)
                && s.c.dim() == (categories.len(), len);
            if !ok {
                return Err(Error::invalid(format!("sample {i} does not match the corpus layout")));
            }
            for (p, row) in s.c.rows().into_iter().enumerate() {
                if let Some(&bad) = row.iter().find(|&&v| v >= categories[p]) {
                    return Err(Error::invalid(format!(
                        "sample {i}: category {bad} outside 0..{} in channel {p}",
                        categories[p]
                    )));
                }
            }
        }
        Ok(Self {
            samples,
            numeric_channels,
            categories,
            len,
        })
    }

    pub fn empty(numeric_channels: usize, categories: Vec<usize>, len: usize) -> Self {
        Self {
            samples: Vec::new(),
            numeric_channels,
            categories,
            len,
        }
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    /// Equality that treats missing (NaN) values as equal to each other;
    /// numbers are compared bit for bit.
    pub fn identical(&self, other: &Corpus) -> bool {
        self.same_layout(other)
            && self.n() == other.n()
            && self.samples.iter().zip(&other.samples).all(|(a, b)| {
                a.c == b.c
                    && a.m == b.m
                    && a.x.iter().zip(b.x.iter()).all(|(x, y)| x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()))
            })
    }

    pub fn same_layout(&self, other: &Corpus) -> bool {
        self.numeric_channels == other.numeric_channels && self.categories == other.categories && self.len == other.len
    }

    /// First `n` samples and the remainder.
    pub fn split_at(&self, n: usize) -> (Corpus, Corpus) {
        let n = n.min(self.samples.len());
        let mk = |s: &[TimeSeriesSample]| Corpus {
            samples: s.to_vec(),
            numeric_channels: self.numeric_channels,
            categories: self.categories.clone(),
            len: self.len,
        };
        (mk(&self.samples[..n]), mk(&self.samples[n..]))
    }

    pub fn head(&self, n: usize) -> Corpus {
        self.split_at(n).0
    }
}

/// Result of scanning a raw matrix for missing values.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedMatrix {
    /// 0 where present, 1 where missing.
    pub mask: Array2<u8>,
    /// Copy of the input with every missing entry as NaN.
    pub observed: Array2<f64>,
    /// Channels with no observed value at all.
    pub empty_channels: Vec<usize>,
}

/// `M = 0` where a value is present and `1` where it is missing (NaN).
pub fn derive_mask(raw: &Array2<f64>) -> MaskedMatrix {
    let mask = raw.mapv(|v| u8::from(v.is_nan()));
    let empty_channels: Vec<usize> = mask
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(_, r)| !r.is_empty() && r.iter().all(|&m| m == 1))
        .map(|(p, _)| p)
        .collect();
    for p in &empty_channels {
        log::warn!("numerical channel {p} has no observed values");
    }
    MaskedMatrix {
        mask,
        observed: raw.clone(),
        empty_channels,
    }
}

/// Per-channel min, max and mean over observed entries of a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub mean: Vec<f64>,
}

impl CorpusStats {
    /// Channels without any observed value get min = max = mean = 0.
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let p = corpus.numeric_channels;
        let mut min = vec![f64::INFINITY; p];
        let mut max = vec![f64::NEG_INFINITY; p];
        let mut sum = vec![0.0; p];
        let mut count = vec![0usize; p];
        for s in &corpus.samples {
            for ((ch, &v), &m) in s.x.indexed_iter().zip(s.m.iter()) {
                if m == 0 && v.is_finite() {
                    let c = ch.0;
                    min[c] = min[c].min(v);
                    max[c] = max[c].max(v);
                    sum[c] += v;
                    count[c] += 1;
                }
            }
        }
        let mut mean = vec![0.0; p];
        for c in 0..p {
            if count[c] == 0 {
                min[c] = 0.0;
                max[c] = 0.0;
            } else {
                mean[c] = sum[c] / count[c] as f64;
            }
        }
        Self { min, max, mean }
    }

    pub fn channels(&self) -> usize {
        self.min.len()
    }

    fn scale_value(&self, p: usize, v: f64) -> f64 {
        let range = self.max[p] - self.min[p];
        if range > 0.0 {
            (v - self.min[p]) / range
        } else {
            0.5
        }
    }

    /// Inverse of the min-max map; constant channels return their value.
    pub fn descale_value(&self, p: usize, v: f64) -> f64 {
        let range = self.max[p] - self.min[p];
        if range > 0.0 {
            self.min[p] + v * range
        } else {
            self.min[p]
        }
    }

    pub fn descale(&self, x: &NumericMatrix) -> Array2<f64> {
        let mut out = x.0.clone();
        for ((p, _), v) in out.indexed_iter_mut() {
            *v = self.descale_value(p, *v);
        }
        out
    }
}

/// Replaces masked entries by the channel mean, then maps each channel with
/// `(x - min) / (max - min)`; constant channels map to 0.5. Values outside
/// the training range are not clipped.
pub fn impute_and_scale(raw: &Array2<f64>, mask: &Array2<u8>, stats: &CorpusStats) -> Result<NumericMatrix> {
    if raw.dim() != mask.dim() || raw.nrows() != stats.channels() {
        return Err(Error::invalid(format!(
            "raw {:?}, mask {:?} and {} stats channels disagree",
            raw.dim(),
            mask.dim(),
            stats.channels()
        )));
    }
    let mut out = raw.clone();
    for (((p, _), v), &m) in out.indexed_iter_mut().zip(mask.iter()) {
        let filled = if m == 1 || !v.is_finite() { stats.mean[p] } else { *v };
        *v = stats.scale_value(p, filled);
    }
    Ok(NumericMatrix(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn corpus_of(x: Array2<f64>) -> Corpus {
        let p = x.nrows();
        let l = x.ncols();
        let s = TimeSeriesSample::from_raw(x, Array2::zeros((0, l)));
        Corpus::new(vec![s], p, vec![], l).unwrap()
    }

    #[test]
    fn mask_marks_missing_entries() {
        let m = derive_mask(&array![[1.0, f64::NAN, 3.0]]);
        assert_eq!(m.mask, array![[0, 1, 0]]);
        assert!(m.empty_channels.is_empty());
        let full = derive_mask(&array![[1.0, 2.0], [3.0, 4.0]]);
        assert!(full.mask.iter().all(|&v| v == 0));
        let dead = derive_mask(&array![[1.0, 2.0], [f64::NAN, f64::NAN]]);
        assert_eq!(dead.mask.row(1).to_vec(), vec![1, 1]);
        assert_eq!(dead.empty_channels, vec![1]);
    }

    #[test]
    fn impute_and_scale_hand_case() {
        let raw = array![[2.0, f64::NAN, 4.0]];
        let c = corpus_of(raw.clone());
        let stats = CorpusStats::from_corpus(&c);
        assert_eq!((stats.min[0], stats.max[0], stats.mean[0]), (2.0, 4.0, 3.0));
        let out = impute_and_scale(&raw, &c.samples[0].m, &stats).unwrap();
        assert_eq!(out.0, array![[0.0, 0.5, 1.0]]);
    }

    #[test]
    fn constant_channel_maps_to_half() {
        let raw = array![[7.0, 7.0, 7.0]];
        let c = corpus_of(raw.clone());
        let stats = CorpusStats::from_corpus(&c);
        let out = impute_and_scale(&raw, &c.samples[0].m, &stats).unwrap();
        assert!(out.0.iter().all(|&v| v == 0.5));
        assert_eq!(stats.descale_value(0, 0.5), 7.0);
    }

    #[test]
    fn test_split_values_are_not_clipped() {
        let train = corpus_of(array![[0.0, 10.0]]);
        let stats = CorpusStats::from_corpus(&train);
        let out = impute_and_scale(&array![[20.0, -5.0]], &array![[0, 0]], &stats).unwrap();
        assert_eq!(out.0, array![[2.0, -0.5]]);
    }

    proptest! {
        #[test]
        fn mask_agrees_with_brute_force_scan(
            vals in proptest::collection::vec(-5.0f64..5.0, 12),
            missing in proptest::collection::vec(any::<bool>(), 12),
        ) {
            let raw = Array2::from_shape_fn((3, 4), |(i, j)| {
                if missing[i * 4 + j] { f64::NAN } else { vals[i * 4 + j] }
            });
            let m = derive_mask(&raw);
            for i in 0..3 {
                for j in 0..4 {
                    prop_assert_eq!(m.mask[[i, j]] == 1, missing[i * 4 + j]);
                }
            }
        }

        #[test]
        fn scaling_round_trips_observed_values(
            vals in proptest::collection::vec(-50.0f64..50.0, 8),
        ) {
            let raw = Array2::from_shape_vec((2, 4), vals).unwrap();
            let c = corpus_of(raw.clone());
            let stats = CorpusStats::from_corpus(&c);
            let scaled = impute_and_scale(&raw, &c.samples[0].m, &stats).unwrap();
            prop_assert!(scaled.0.iter().all(|v| (0.0..=1.0).contains(v)));
            let back = stats.descale(&scaled);
            for (a, b) in back.iter().zip(raw.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }
    }
}
