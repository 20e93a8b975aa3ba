//! WebAssembly bindings for the diffusion demo page (`www/index.html`).
//! Every export returns a flat `Float64Array`; the page slices it.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use seqdiff::gaussian::{q_sample, NumericMatrix};
use seqdiff::multinomial::{q_marginal_probs, q_posterior, OneHotSequence};
use seqdiff::nn::{RngStreams, Stream};
use seqdiff::DiffusionSchedule;
use wasm_bindgen::prelude::*;

fn js(e: seqdiff::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// `[alpha_bar(1..=T) | beta(1..=T) | posterior_var(1..=T)]`.
pub fn curves(total_steps: usize) -> seqdiff::Result<Vec<f64>> {
    let s = DiffusionSchedule::cosine(total_steps)?;
    let steps = 1..=total_steps;
    let mut out: Vec<f64> = steps.clone().map(|t| s.alpha_bar(t)).collect();
    out.extend(steps.clone().map(|t| s.beta(t)));
    out.extend(steps.map(|t| s.posterior_var(t)));
    Ok(out)
}

/// `[x0 | x_t]` for a scaled sine of `len` steps noised to step `t`.
pub fn noised_sine(total_steps: usize, t: usize, len: usize, seed: u64) -> seqdiff::Result<Vec<f64>> {
    let s = DiffusionSchedule::cosine(total_steps)?;
    let x0 = Array2::from_shape_fn((1, len), |(_, l)| {
        0.5 + 0.4 * (2.0 * std::f64::consts::PI * 2.0 * l as f64 / len.max(1) as f64).sin()
    });
    let mut rng = RngStreams::new(seed).stream(Stream::Gaussian);
    let eps = Array2::from_shape_simple_fn((1, len), || StandardNormal.sample(&mut rng));
    let x_t = q_sample(&NumericMatrix(x0.clone()), t, &NumericMatrix(eps), &s)?;
    Ok(x0.iter().chain(x_t.0.iter()).copied().collect())
}

fn one_hot(k: usize, c: usize) -> seqdiff::Result<OneHotSequence> {
    if c >= k {
        return Err(seqdiff::Error::invalid(format!("category {c} outside 0..{k}")));
    }
    let mut m = Array2::zeros((1, k));
    m[[0, c]] = 1.0;
    Ok(OneHotSequence {
        channels: vec![m],
        hard: true,
    })
}

/// `[q(c_t | c0) | q(c_{t-1} | c_t, c0)]` for one position with `k` categories.
pub fn category_probs(total_steps: usize, t: usize, k: usize, c0: usize, c_t: usize) -> seqdiff::Result<Vec<f64>> {
    let s = DiffusionSchedule::cosine(total_steps)?;
    let (start, now) = (one_hot(k, c0)?, one_hot(k, c_t)?);
    let marginal = q_marginal_probs(&start, t, &s)?;
    let post = q_posterior(&now, &start, t, &s)?;
    Ok(marginal.channels[0].iter().chain(post.normalized[0].iter()).copied().collect())
}

#[wasm_bindgen]
pub fn schedule_curves(total_steps: usize) -> Result<Vec<f64>, JsError> {
    curves(total_steps).map_err(js)
}

#[wasm_bindgen]
pub fn noise_sine(total_steps: usize, t: usize, len: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    noised_sine(total_steps, t, len, seed).map_err(js)
}

#[wasm_bindgen]
pub fn multinomial_probs(total_steps: usize, t: usize, k: usize, c0: usize, c_t: usize) -> Result<Vec<f64>, JsError> {
    category_probs(total_steps, t, k, c0, c_t).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_are_laid_out_in_thirds() {
        let c = curves(50).unwrap();
        assert_eq!(c.len(), 150);
        assert!(c[..50].windows(2).all(|w| w[1] < w[0]));
        assert_eq!(c[100], 0.0);
        assert!(curves(1).is_err());
    }

    #[test]
    fn early_steps_keep_the_signal() {
        let v = noised_sine(1000, 1, 32, 3).unwrap();
        let (x0, xt) = v.split_at(32);
        assert!(x0.iter().zip(xt).all(|(a, b)| (a - b).abs() < 0.1));
        assert_eq!(v, noised_sine(1000, 1, 32, 3).unwrap());
        assert!(noised_sine(1000, 1001, 32, 3).is_err());
    }

    #[test]
    fn category_probabilities_are_distributions() {
        let p = category_probs(100, 40, 3, 1, 2).unwrap();
        assert_eq!(p.len(), 6);
        for half in p.chunks(3) {
            assert!((half.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // At t = 1 the posterior is the clean category.
        assert_eq!(category_probs(100, 1, 3, 1, 2).unwrap()[3..], [0.0, 1.0, 0.0]);
        assert!(category_probs(100, 5, 3, 3, 0).is_err());
    }
}
