//! Gaussian diffusion on numerical channels: forward noising, the reverse
//! mean, ancestral sampling steps and the epsilon-prediction loss.

use ndarray::{Array2, Zip};

use crate::schedule::DiffusionSchedule;
use crate::{Error, Result};

/// Numerical channels of one sample, shaped `[channels, length]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericMatrix(pub Array2<f64>);

impl NumericMatrix {
    pub fn zeros(channels: usize, len: usize) -> Self {
        Self(Array2::zeros((channels, len)))
    }

    pub fn channels(&self) -> usize {
        self.0.nrows()
    }

    pub fn len(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Array2<f64>> for NumericMatrix {
    fn from(a: Array2<f64>) -> Self {
        Self(a)
    }
}

fn same_shape(a: &NumericMatrix, b: &NumericMatrix, what: &str) -> Result<()> {
    if a.0.dim() != b.0.dim() {
        return Err(Error::invalid(format!(
            "{what}: shape {:?} vs {:?}",
            a.0.dim(),
            b.0.dim()
        )));
    }
    Ok(())
}

/// Closed-form marginal `sqrt(abar) x0 + sqrt(1 - abar) eps`.
pub fn q_sample(
    x0: &NumericMatrix,
    t: usize,
    eps: &NumericMatrix,
    schedule: &DiffusionSchedule,
) -> Result<NumericMatrix> {
    same_shape(x0, eps, "q_sample")?;
    schedule.check_step(t)?;
    let abar = schedule.alpha_bar(t);
    let (a, b) = (abar.sqrt(), (1.0 - abar).sqrt());
    Ok(NumericMatrix(Zip::from(&x0.0).and(&eps.0).map_collect(|&x, &e| a * x + b * e)))
}

/// Reverse-process mean given the predicted noise.
pub fn posterior_mean(
    xt: &NumericMatrix,
    predicted_eps: &NumericMatrix,
    t: usize,
    schedule: &DiffusionSchedule,
) -> Result<NumericMatrix> {
    same_shape(xt, predicted_eps, "posterior_mean")?;
    schedule.check_step(t)?;
    let inv_sqrt_alpha = 1.0 / schedule.alpha(t).sqrt();
    let coef = schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt();
    Ok(NumericMatrix(
        Zip::from(&xt.0)
            .and(&predicted_eps.0)
            .map_collect(|&x, &e| inv_sqrt_alpha * (x - coef * e)),
    ))
}

/// One ancestral step: `posterior_mean + sqrt(posterior_var) * z`.
/// Callers pass `z = 0` at `t = 1`; the variance there is zero anyway.
pub fn p_sample_step(
    xt: &NumericMatrix,
    predicted_eps: &NumericMatrix,
    t: usize,
    z: &NumericMatrix,
    schedule: &DiffusionSchedule,
) -> Result<NumericMatrix> {
    same_shape(xt, z, "p_sample_step")?;
    let mut mean = posterior_mean(xt, predicted_eps, t, schedule)?;
    let sigma = schedule.posterior_var(t).sqrt();
    mean.0.zip_mut_with(&z.0, |m, &zz| *m += sigma * zz);
    Ok(mean)
}

/// Mean squared error between the injected and predicted noise.
pub fn loss_numerical(eps: &NumericMatrix, predicted_eps: &NumericMatrix) -> Result<f64> {
    same_shape(eps, predicted_eps, "loss_numerical")?;
    if eps.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = Zip::from(&eps.0)
        .and(&predicted_eps.0)
        .fold(0.0, |acc, &e, &p| acc + (e - p) * (e - p));
    Ok(sum / eps.0.len() as f64)
}

/// Gradient of [`loss_numerical`] with respect to the prediction.
pub fn loss_numerical_grad(eps: &NumericMatrix, predicted_eps: &NumericMatrix) -> Array2<f64> {
    let n = eps.0.len().max(1) as f64;
    Zip::from(&eps.0)
        .and(&predicted_eps.0)
        .map_collect(|&e, &p| 2.0 * (p - e) / n)
}
