//! Variance schedule shared by the Gaussian and multinomial branches.
//!
//! Steps are 1-based in the math (`t = 1..=T`) and stored 0-based. The
//! accessors take the 1-based step and treat `alpha_bar(0) == 1`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;
const IDENTITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub posterior_var: Vec<f64>,
}

/// One failed schedule invariant. Indices are 0-based storage positions.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    LengthMismatch,
    BetaOutOfRange { index: usize, value: f64 },
    AlphaMismatch { index: usize },
    CumulativeProduct { index: usize, stored: f64, expected: f64 },
    NotDecreasing { index: usize },
    PosteriorExceedsBeta { index: usize },
    PosteriorFirstNonZero { value: f64 },
    FinalAlphaBarTooLarge { value: f64 },
}

impl DiffusionSchedule {
    /// Cosine schedule with offset `s = 0.008` and betas clipped at 0.999.
    pub fn cosine(total_steps: usize) -> Result<Self> {
        if total_steps < 2 {
            return Err(Error::invalid(format!(
                "diffusion steps must be >= 2, got {total_steps}"
            )));
        }
        let t_max = total_steps as f64;
        let f = |t: f64| {
            let angle = ((t / t_max + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)) * std::f64::consts::FRAC_PI_2;
            angle.cos().powi(2)
        };
        let f0 = f(0.0);
        let beta: Vec<f64> = (1..=total_steps)
            .map(|t| {
                let prev = f((t - 1) as f64) / f0;
                let cur = f(t as f64) / f0;
                (1.0 - cur / prev).min(MAX_BETA)
            })
            .collect();
        Ok(Self::from_betas(beta))
    }

    /// Derives every table from a beta sequence. No validation is done here.
    pub fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let posterior_var = (0..beta.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
                (1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i]
            })
            .collect();
        Self {
            beta,
            alpha,
            alpha_bar,
            posterior_var,
        }
    }

    pub fn total_steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `alpha_bar(0) == 1` by convention.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn posterior_var(&self, t: usize) -> f64 {
        self.posterior_var[t - 1]
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.total_steps() {
            return Err(Error::invalid(format!(
                "step {t} outside 1..={}",
                self.total_steps()
            )));
        }
        Ok(())
    }

    /// Lists every broken invariant; an empty list means the schedule is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let n = self.beta.len();
        let mut out = Vec::new();
        if n == 0
            || self.alpha.len() != n
            || self.alpha_bar.len() != n
            || self.posterior_var.len() != n
        {
            out.push(Violation::LengthMismatch);
            return out;
        }
        for (i, (&b, &a)) in self.beta.iter().zip(&self.alpha).enumerate() {
            if !(b > 0.0 && b < 1.0) {
                out.push(Violation::BetaOutOfRange { index: i, value: b });
            } else if (a - (1.0 - b)).abs() > f64::EPSILON {
                out.push(Violation::AlphaMismatch { index: i });
            }
        }
        // Brute-force product so a single bad entry is reported once.
        let mut product = 1.0;
        for i in 0..n {
            product *= self.alpha[i];
            let stored = self.alpha_bar[i];
            if (stored - product).abs() > IDENTITY_TOL * product.abs() {
                out.push(Violation::CumulativeProduct {
                    index: i,
                    stored,
                    expected: product,
                });
            }
            let prev = if i == 0 { 1.0 } else { self.alpha_bar[i - 1] };
            if !(stored < prev) {
                out.push(Violation::NotDecreasing { index: i });
            }
            if self.posterior_var[i] > self.beta[i] {
                out.push(Violation::PosteriorExceedsBeta { index: i });
            }
        }
        if self.posterior_var[0] != 0.0 {
            out.push(Violation::PosteriorFirstNonZero {
                value: self.posterior_var[0],
            });
        }
        let last = self.alpha_bar[n - 1];
        if n >= 100 && last >= 0.01 {
            out.push(Violation::FinalAlphaBarTooLarge { value: last });
        }
        out
    }
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::LengthMismatch => write!(f, "table lengths differ"),
            Violation::BetaOutOfRange { index, value } => {
                write!(f, "beta[{index}] = {value} outside (0, 1)")
            }
            Violation::AlphaMismatch { index } => write!(f, "alpha[{index}] != 1 - beta[{index}]"),
            Violation::CumulativeProduct {
                index,
                stored,
                expected,
            } => write!(f, "alpha_bar[{index}] = {stored}, product of alphas = {expected}"),
            Violation::NotDecreasing { index } => write!(f, "alpha_bar not decreasing at {index}"),
            Violation::PosteriorExceedsBeta { index } => {
                write!(f, "posterior_var[{index}] exceeds beta[{index}]")
            }
            Violation::PosteriorFirstNonZero { value } => {
                write!(f, "posterior_var[0] = {value}, expected 0")
            }
            Violation::FinalAlphaBarTooLarge { value } => {
                write!(f, "final alpha_bar = {value} is not below 0.01")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_short_schedules() {
        assert!(DiffusionSchedule::cosine(1).is_err());
        assert!(DiffusionSchedule::cosine(0).is_err());
    }

    #[test]
    fn thousand_steps() {
        let s = DiffusionSchedule::cosine(1000).unwrap();
        assert_eq!(s.total_steps(), 1000);
        assert!(s.validate().is_empty());
        assert!(s.alpha_bar(1000) < 1e-4);
        assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn two_steps_clip() {
        let s = DiffusionSchedule::cosine(2).unwrap();
        assert!(s.beta(2) <= 0.999);
        assert_eq!(s.beta(2), 0.999);
    }

    #[test]
    fn first_posterior_variance_is_zero() {
        let s = DiffusionSchedule::cosine(10).unwrap();
        assert_eq!(s.posterior_var(1), 0.0);
    }

    #[test]
    fn hundred_steps_self_validates() {
        assert!(DiffusionSchedule::cosine(100).unwrap().validate().is_empty());
    }

    #[test]
    fn beta_out_of_range_reported_once() {
        let mut s = DiffusionSchedule::cosine(100).unwrap();
        s.beta[3] = 1.5;
        let v = s.validate();
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(matches!(v[0], Violation::BetaOutOfRange { index: 3, .. }));
    }

    #[test]
    fn perturbed_alpha_bar_is_flagged_at_its_index() {
        let mut s = DiffusionSchedule::cosine(100).unwrap();
        s.alpha_bar[5] += 1e-6;
        let v = s.validate();
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(matches!(v[0], Violation::CumulativeProduct { index: 5, .. }));
    }

    #[test]
    fn cumulative_product_brute_force() {
        let s = DiffusionSchedule::cosine(1000).unwrap();
        for t in 1..=1000 {
            let brute: f64 = s.alpha[..t].iter().product();
            let rel = (brute - s.alpha_bar(t)).abs() / brute;
            assert!(rel <= 1e-12, "t={t} rel={rel}");
        }
    }

    #[test]
    fn posterior_ratio_in_unit_interval() {
        let s = DiffusionSchedule::cosine(500).unwrap();
        for t in 1..=500 {
            let ratio = s.posterior_var(t) / s.beta(t);
            assert!((0.0..=1.0).contains(&ratio), "t={t}");
        }
    }

    #[test]
    fn alpha_bar_follows_cosine_before_clipping() {
        let s = DiffusionSchedule::cosine(50).unwrap();
        let f = |t: f64| (((t / 50.0 + 0.008) / 1.008) * std::f64::consts::FRAC_PI_2).cos().powi(2);
        for t in 1..40 {
            let expect = f(t as f64) / f(0.0);
            assert!((s.alpha_bar(t) - expect).abs() < 1e-12, "t={t}");
        }
    }
}
