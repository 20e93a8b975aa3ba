use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DiscreteMode, ModelLayout, TrainConfig, Trainer};
use crate::checkpoint::Checkpoint;
use crate::data::{Corpus, CorpusStats};
use crate::denoiser::Denoiser;
use crate::gaussian::{p_sample_step, NumericMatrix};
use crate::multinomial::{p_sample_step_discrete, OneHotSequence};
use crate::nn::{ParamStore, RngStreams, Stream};
use crate::schedule::DiffusionSchedule;
use crate::{Error, Result};

/// Sequences generated per reverse-chain batch.
const SAMPLE_BATCH: usize = 250;

/// Everything needed to generate: layout, scaling statistics, schedule and
/// the (EMA) denoiser weights.
pub struct Model {
    pub layout: ModelLayout,
    pub stats: CorpusStats,
    pub schedule: DiffusionSchedule,
    pub denoiser: Denoiser,
    pub params: ParamStore,
}

impl Model {
    /// Snapshot of a trainer using its EMA weights.
    pub fn from_trainer(t: &Trainer) -> Self {
        Self {
            layout: t.layout.clone(),
            stats: t.stats.clone(),
            schedule: t.schedule.clone(),
            denoiser: t.denoiser.clone(),
            params: t.ema.shadow.clone(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = TrainConfig::from_kv(&ck.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let layout = ModelLayout {
            numeric_channels: ck.scalar("layout.numeric")? as usize,
            categories: ck.record("layout.categories")?.iter().map(|&k| k as usize).collect(),
            len: ck.scalar("layout.len")? as usize,
            mode: DiscreteMode::from_code(ck.scalar("mode")?)?,
        };
        let stats = CorpusStats {
            min: ck.tensor("stats.min")?.to_vec(),
            max: ck.tensor("stats.max")?.to_vec(),
            mean: ck.tensor("stats.mean")?.to_vec(),
        };
        if stats.channels() != layout.numeric_channels || stats.max.len() != stats.min.len() {
            return Err(Error::Checkpoint("stats do not match the layout".into()));
        }
        let schedule = DiffusionSchedule::cosine(config.diffusion_steps).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let stored = ck.tensor("schedule.beta")?;
        let same = stored.len() == schedule.beta.len()
            && stored.iter().zip(&schedule.beta).all(|(a, b)| a.to_bits() == b.to_bits());
        if !same {
            return Err(Error::Checkpoint("stored schedule does not match diffusion_steps".into()));
        }
        let denoiser = Denoiser::new(layout.denoiser_config(&config)).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut params = denoiser.zero_params();
        for spec in params.specs().to_vec() {
            let src = ck.tensor(&format!("ema.{}", spec.name))?;
            if src.len() != spec.len() {
                return Err(Error::Checkpoint(format!("tensor {} has the wrong size", spec.name)));
            }
            let id = params.find(&spec.name).expect("own tensor");
            params.slice_mut(id).copy_from_slice(src);
        }
        Ok(Self {
            layout,
            stats,
            schedule,
            denoiser,
            params,
        })
    }

    /// Runs the full reverse chain for `n` sequences. Batches use their own
    /// random sub-streams, so output depends only on `seed` and `n`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Corpus> {
        let streams = RngStreams::new(seed);
        let mut out = Vec::with_capacity(n);
        for (chunk, start) in (0..n).step_by(SAMPLE_BATCH).enumerate() {
            let count = SAMPLE_BATCH.min(n - start);
            let mut gauss = streams.indexed(Stream::Gaussian, chunk as u64);
            let mut cat = streams.indexed(Stream::Categorical, chunk as u64);
            out.extend(self.sample_batch(count, &mut gauss, &mut cat)?);
        }
        Corpus::new(out, self.layout.numeric_channels, self.layout.categories.clone(), self.layout.len)
    }

    fn sample_batch<R: Rng>(
        &self,
        count: usize,
        gauss: &mut R,
        cat: &mut R,
    ) -> Result<Vec<crate::data::TimeSeriesSample>> {
        let len = self.layout.len;
        let pr = self.layout.model_numeric();
        let kinds = self.layout.model_categories();
        let normal = |rng: &mut R| NumericMatrix(Array2::from_shape_simple_fn((pr, len), || StandardNormal.sample(rng)));
        let mut xs: Vec<NumericMatrix> = (0..count).map(|_| normal(gauss)).collect();
        let mut cs: Vec<OneHotSequence> = (0..count)
            .map(|_| OneHotSequence {
                channels: kinds
                    .iter()
                    .map(|&k| {
                        let mut m = Array2::zeros((len, k));
                        for l in 0..len {
                            m[[l, cat.random_range(0..k)]] = 1.0;
                        }
                        m
                    })
                    .collect(),
                hard: true,
            })
            .collect();
        for t in (1..=self.schedule.total_steps()).rev() {
            let pairs: Vec<_> = xs.iter().zip(&cs).collect();
            let input = self.denoiser.assemble_input(&pairs)?;
            let (y, _) = self.denoiser.forward(&self.params, input.view(), &vec![t; count])?;
            for b in 0..count {
                let o = self.denoiser.split_output(y.view(), b);
                let z = if t > 1 {
                    normal(gauss)
                } else {
                    NumericMatrix::zeros(pr, len)
                };
                xs[b] = p_sample_step(&xs[b], &o.eps_pred, t, &z, &self.schedule)?;
                cs[b] = p_sample_step_discrete(&cs[b], &o.logits, t, &self.schedule, cat)?;
            }
        }
        if let Some(bad) = xs.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!("sample {bad} diverged during the reverse chain")));
        }
        Ok(xs
            .iter()
            .zip(&cs)
            .map(|(x, c)| self.layout.decode(x, c, &self.stats))
            .collect())
    }
}
