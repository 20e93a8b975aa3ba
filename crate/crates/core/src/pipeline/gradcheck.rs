use ndarray::Array2;
use rand::Rng;

use super::{noise_batch, objective, Encoded, ModelLayout};
use crate::denoiser::{Denoiser, DenoiserConfig};
use crate::gaussian::NumericMatrix;
use crate::multinomial::one_hot_encode;
use crate::nn::{ParamStore, RngStreams, Stream};
use crate::schedule::DiffusionSchedule;
use crate::{Error, Result};

/// Refuse finite-difference checks above this many parameters.
pub const MAX_GRADCHECK_PARAMS: usize = 20_000;

const STEP: f64 = 1e-5;
/// Denominator floor so parameters with (near-)zero gradient are compared
/// absolutely.
const REL_FLOOR: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub numeric_channels: usize,
    pub categories: Vec<usize>,
    pub len: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub layers: usize,
    pub batch: usize,
    pub diffusion_steps: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Test hook: perturbs the analytic gradient of this group.
    pub corrupt: Option<String>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            numeric_channels: 1,
            categories: vec![2],
            len: 3,
            hidden: 8,
            embed_dim: 8,
            layers: 2,
            batch: 2,
            diffusion_steps: 1000,
            lambda: 0.01,
            seed: 0,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCheck {
    pub group: String,
    pub params: usize,
    pub max_rel_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub groups: Vec<GroupCheck>,
    pub param_count: usize,
}

impl GradcheckReport {
    pub fn pass(&self) -> bool {
        self.groups.iter().all(|g| g.pass)
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<24} {:>7} {:>12}  verdict\n", "group", "params", "max rel err");
        for g in &self.groups {
            s.push_str(&format!(
                "{:<24} {:>7} {:>12.3e}  {}\n",
                g.group,
                g.params,
                g.max_rel_error,
                if g.pass { "PASS" } else { "FAIL" }
            ));
        }
        s
    }
}

/// Compares the analytic gradient of the full training objective
/// (`L_N + lambda * T * KL` on one noised micro-batch) with central
/// differences, parameter group by parameter group.
pub fn gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let layout = ModelLayout {
        numeric_channels: cfg.numeric_channels,
        categories: cfg.categories.clone(),
        len: cfg.len,
        mode: super::DiscreteMode::Multinomial,
    };
    let dcfg = DenoiserConfig {
        numeric_channels: layout.model_numeric(),
        categories: layout.model_categories(),
        hidden: cfg.hidden,
        embed_dim: cfg.embed_dim,
        layers: cfg.layers,
    };
    let denoiser = Denoiser::new(dcfg)?;
    let count = denoiser.param_count();
    if count >= MAX_GRADCHECK_PARAMS {
        return Err(Error::invalid(format!(
            "model has {count} parameters; gradcheck is limited to {MAX_GRADCHECK_PARAMS}. \
             Use smaller hidden/embed sizes or fewer channels"
        )));
    }
    if cfg.batch == 0 || cfg.len == 0 {
        return Err(Error::invalid("gradcheck needs batch >= 1 and len >= 1"));
    }
    let schedule = DiffusionSchedule::cosine(cfg.diffusion_steps)?;
    let streams = RngStreams::new(cfg.seed);
    let mut rng = streams.stream(Stream::Init);
    let params = denoiser.init_params(&mut rng);

    let kinds = layout.model_categories();
    let samples = (0..cfg.batch)
        .map(|_| {
            let x0 = NumericMatrix(Array2::from_shape_simple_fn((layout.model_numeric(), cfg.len), || {
                rng.random::<f64>()
            }));
            let c = Array2::from_shape_fn((kinds.len(), cfg.len), |(p, _)| rng.random_range(0..kinds[p]));
            Ok(Encoded {
                x0,
                c0: one_hot_encode(&c, &kinds)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Encoded> = samples.iter().collect();
    let steps = (0..cfg.batch).map(|_| rng.random_range(1..=cfg.diffusion_steps)).collect();
    let mut gauss = streams.stream(Stream::Gaussian);
    let mut cat = streams.stream(Stream::Categorical);
    let batch = noise_batch(&refs, steps, &schedule, &mut gauss, &mut cat)?;

    let loss = |p: &ParamStore| -> Result<f64> { Ok(objective(&denoiser, p, &schedule, &batch, cfg.lambda, false)?.0.total) };
    let (_, grads) = objective(&denoiser, &params, &schedule, &batch, cfg.lambda, true)?;
    let mut grads = grads.ok_or_else(|| Error::Numerical("non-finite loss during gradcheck".into()))?;

    let mut groups = Vec::new();
    for (group, names) in denoiser.param_groups() {
        if cfg.corrupt.as_deref() == Some(group.as_str()) {
            for name in &names {
                let id = grads.find(name).expect("layout tensor");
                grads.slice_mut(id).iter_mut().for_each(|g| *g = *g * 1.1 + 1e-3);
            }
        }
        let mut worst: f64 = 0.0;
        let mut n = 0;
        for name in &names {
            let id = params.find(name).expect("layout tensor");
            let offset = params.spec(id).offset;
            for i in 0..params.spec(id).len() {
                let mut p = params.clone();
                p.data_mut()[offset + i] += STEP;
                let up = loss(&p)?;
                p.data_mut()[offset + i] -= 2.0 * STEP;
                let dn = loss(&p)?;
                let fd = (up - dn) / (2.0 * STEP);
                let a = grads.data()[offset + i];
                worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()).max(REL_FLOOR));
                n += 1;
            }
        }
        groups.push(GroupCheck {
            group,
            params: n,
            max_rel_error: worst,
            pass: worst < TOLERANCE,
        });
    }
    Ok(GradcheckReport {
        groups,
        param_count: count,
    })
}
