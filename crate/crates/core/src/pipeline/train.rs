use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{noise_batch, objective, DiscreteMode, Encoded, LossParts, ModelLayout, TrainConfig};
use crate::checkpoint::Checkpoint;
use crate::data::{Corpus, CorpusStats};
use crate::denoiser::Denoiser;
use crate::nn::{Adam, Ema, GradAccumulator, ParamStore, RngStreams, Stream, StreamState};
use crate::schedule::DiffusionSchedule;
use crate::{Error, Result};

const RNG_NAMES: [&str; 4] = ["data", "timestep", "gaussian", "categorical"];

/// Training state: raw and EMA parameters, optimizer, accumulator and the
/// four random streams that drive batching and noising.
pub struct Trainer {
    pub config: TrainConfig,
    pub layout: ModelLayout,
    pub stats: CorpusStats,
    pub schedule: DiffusionSchedule,
    pub denoiser: Denoiser,
    pub params: ParamStore,
    pub ema: Ema,
    pub adam: Adam,
    accum: GradAccumulator,
    data: Vec<Encoded>,
    rngs: [ChaCha8Rng; 4],
    /// Completed optimizer steps.
    pub step: u64,
    /// Mean loss of each optimizer step's micro-batches.
    pub losses: Vec<f64>,
}

impl Trainer {
    /// Fresh state; scaling statistics come from `corpus`, the training split.
    pub fn new(config: TrainConfig, corpus: &Corpus) -> Result<Self> {
        config.validate()?;
        if corpus.n() == 0 {
            return Err(Error::invalid("training corpus is empty"));
        }
        let layout = ModelLayout {
            numeric_channels: corpus.numeric_channels,
            categories: corpus.categories.clone(),
            len: corpus.len,
            mode: config.discrete_mode,
        };
        let stats = CorpusStats::from_corpus(corpus);
        let data = corpus
            .samples
            .iter()
            .map(|s| layout.encode(s, &stats))
            .collect::<Result<Vec<_>>>()?;
        let schedule = DiffusionSchedule::cosine(config.diffusion_steps)?;
        let denoiser = Denoiser::new(layout.denoiser_config(&config))?;
        let streams = RngStreams::new(config.seed);
        let params = denoiser.init_params(&mut streams.stream(Stream::Init));
        let ema = Ema::new(config.ema_decay, &params);
        let adam = Adam::new(config.adam(), &params);
        let accum = GradAccumulator::new(config.accumulation, &params)?;
        let rngs = [Stream::Data, Stream::Timestep, Stream::Gaussian, Stream::Categorical].map(|s| streams.stream(s));
        Ok(Self {
            config,
            layout,
            stats,
            schedule,
            denoiser,
            params,
            ema,
            adam,
            accum,
            data,
            rngs,
            step: 0,
            losses: Vec::new(),
        })
    }

    /// One micro-batch: per-sample steps, noising, loss and gradient.
    fn micro_batch(&mut self) -> Result<(LossParts, ParamStore)> {
        let n = self.data.len();
        let nb = self.config.batch;
        let idx: Vec<usize> = (0..nb).map(|_| self.rngs[0].random_range(0..n)).collect();
        let total = self.schedule.total_steps();
        let steps: Vec<usize> = (0..nb).map(|_| self.rngs[1].random_range(1..=total)).collect();
        let samples: Vec<&Encoded> = idx.iter().map(|&i| &self.data[i]).collect();
        let [_, _, gauss, cat] = &mut self.rngs;
        let batch = noise_batch(&samples, steps, &self.schedule, gauss, cat)?;
        let (parts, grads) = objective(&self.denoiser, &self.params, &self.schedule, &batch, self.config.lambda, true)?;
        match grads {
            Some(g) if parts.total.is_finite() => Ok((parts, g)),
            _ => Err(Error::Numerical(format!(
                "non-finite loss at optimizer step {} (numerical {}, discrete {})",
                self.step + 1,
                parts.numerical,
                parts.discrete
            ))),
        }
    }

    /// Runs `accumulation` micro-batches and one optimizer + EMA update.
    pub fn train_step(&mut self) -> Result<LossParts> {
        let mut mean = LossParts::default();
        let k = self.config.accumulation as f64;
        loop {
            let (parts, grads) = self.micro_batch()?;
            mean.total += parts.total / k;
            mean.numerical += parts.numerical / k;
            mean.discrete += parts.discrete / k;
            let stepped = self
                .accum
                .push(&grads, &mut self.adam, &mut self.params)
                .map_err(|e| match e {
                    Error::Numerical(m) => Error::Numerical(format!("optimizer step {}: {m}", self.step + 1)),
                    other => other,
                })?;
            if stepped {
                break;
            }
        }
        self.ema.update(&self.params);
        self.step += 1;
        self.losses.push(mean.total);
        Ok(mean)
    }

    /// Trains until `self.step == until`, checkpointing every
    /// `checkpoint_every` steps (and at the end) when `path` is given. A
    /// failed step leaves the last written checkpoint in place.
    pub fn train_until(&mut self, until: u64, path: Option<&Path>) -> Result<()> {
        while self.step < until {
            let parts = self.train_step()?;
            let every = self.config.log_every;
            if every > 0 && self.step.is_multiple_of(every) {
                log::info!(
                    "step {}: loss {:.5} (numerical {:.5}, discrete {:.5})",
                    self.step,
                    parts.total,
                    parts.numerical,
                    parts.discrete
                );
            }
            if let Some(p) = path {
                let every = self.config.checkpoint_every;
                if every > 0 && self.step.is_multiple_of(every) && self.step < until {
                    self.checkpoint().save(p)?;
                }
            }
        }
        if let Some(p) = path {
            self.checkpoint().save(p)?;
        }
        Ok(())
    }

    pub fn train(&mut self, path: Option<&Path>) -> Result<()> {
        self.train_until(self.config.steps, path)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint {
            config: self.config.to_kv(),
            ..Default::default()
        };
        ck.put_record("mode", &[self.layout.mode.code()]);
        ck.put_record("layout.numeric", &[self.layout.numeric_channels as u64]);
        ck.put_record(
            "layout.categories",
            &self.layout.categories.iter().map(|&k| k as u64).collect::<Vec<_>>(),
        );
        ck.put_record("layout.len", &[self.layout.len as u64]);
        ck.put_record("step", &[self.step]);
        ck.put_record("adam.step", &[self.adam.step]);
        for (name, rng) in RNG_NAMES.iter().zip(&self.rngs) {
            let s = StreamState::capture(self.config.seed, rng);
            ck.put_record(
                format!("rng.{name}"),
                &[s.seed, s.stream, s.word_pos as u64, (s.word_pos >> 64) as u64],
            );
        }
        ck.put_tensor("schedule.beta", &self.schedule.beta);
        ck.put_tensor("stats.min", &self.stats.min);
        ck.put_tensor("stats.max", &self.stats.max);
        ck.put_tensor("stats.mean", &self.stats.mean);
        for spec in self.params.specs() {
            let id = self.params.find(&spec.name).expect("own tensor");
            ck.put_tensor(format!("param.{}", spec.name), self.params.slice(id));
            ck.put_tensor(format!("ema.{}", spec.name), self.ema.shadow.slice(id));
        }
        ck.put_tensor("adam.m", &self.adam.m);
        ck.put_tensor("adam.v", &self.adam.v);
        ck.put_tensor("losses", &self.losses);
        ck
    }

    /// Restores a checkpoint over the same training corpus.
    pub fn resume(ck: &Checkpoint, corpus: &Corpus) -> Result<Self> {
        let mut config = TrainConfig::from_kv(&ck.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
        config.discrete_mode = DiscreteMode::from_code(ck.scalar("mode")?)?;
        Self::resume_with(ck, corpus, config)
    }

    /// [`Trainer::resume`] with an overridden configuration (for example a
    /// larger step budget). Shape-determining fields must be unchanged.
    pub fn resume_with(ck: &Checkpoint, corpus: &Corpus, config: TrainConfig) -> Result<Self> {
        let saved = TrainConfig::from_kv(&ck.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let same_shape = saved.diffusion_steps == config.diffusion_steps
            && saved.layers == config.layers
            && saved.hidden_multiple == config.hidden_multiple
            && saved.embed_dim == config.embed_dim
            && saved.accumulation == config.accumulation
            && saved.seed == config.seed;
        if !same_shape {
            return Err(Error::invalid(
                "resume cannot change diffusion_steps, layers, hidden_multiple, embed_dim, accumulation or seed",
            ));
        }
        let mut t = Self::new(config, corpus)?;
        if t.layout.mode.code() != ck.scalar("mode")? {
            return Err(Error::invalid("checkpoint was trained with a different discrete mode"));
        }
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        let same_stats = bits(ck.tensor("stats.min")?) == bits(&t.stats.min)
            && bits(ck.tensor("stats.max")?) == bits(&t.stats.max)
            && bits(ck.tensor("stats.mean")?) == bits(&t.stats.mean);
        if !same_stats || bits(ck.tensor("schedule.beta")?) != bits(&t.schedule.beta) {
            return Err(Error::invalid("corpus or schedule differs from the one the checkpoint was trained on"));
        }
        for spec in t.params.specs().to_vec() {
            let id = t.params.find(&spec.name).expect("own tensor");
            let p = ck.tensor(&format!("param.{}", spec.name))?;
            let e = ck.tensor(&format!("ema.{}", spec.name))?;
            if p.len() != spec.len() || e.len() != spec.len() {
                return Err(Error::Checkpoint(format!("tensor {} has the wrong size", spec.name)));
            }
            t.params.slice_mut(id).copy_from_slice(p);
            t.ema.shadow.slice_mut(id).copy_from_slice(e);
        }
        let m = ck.tensor("adam.m")?;
        let v = ck.tensor("adam.v")?;
        if m.len() != t.adam.m.len() || v.len() != t.adam.v.len() {
            return Err(Error::Checkpoint("optimizer state has the wrong size".into()));
        }
        t.adam.m.copy_from_slice(m);
        t.adam.v.copy_from_slice(v);
        t.adam.step = ck.scalar("adam.step")?;
        t.step = ck.scalar("step")?;
        t.losses = ck.tensor("losses")?.to_vec();
        for (name, rng) in RNG_NAMES.iter().zip(t.rngs.iter_mut()) {
            let r = ck.record(&format!("rng.{name}"))?;
            let [seed, stream, lo, hi] = r else {
                return Err(Error::Checkpoint(format!("rng.{name} must hold 4 values")));
            };
            *rng = StreamState {
                seed: *seed,
                stream: *stream,
                word_pos: (*lo as u128) | ((*hi as u128) << 64),
            }
            .restore();
        }
        Ok(t)
    }
}
