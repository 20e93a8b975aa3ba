//! Multinomial diffusion on discrete channels.
//!
//! Each discrete channel `p` has its own category count `K_p`; a channel is
//! stored as an `[L, K_p]` matrix whose rows are one-hot vectors or points on
//! the probability simplex. The forward kernel mixes the current state with
//! the uniform distribution, `(1 - beta) c + beta / K`.

use ndarray::{Array2, ArrayView1, ArrayViewMut1};
use rand::Rng;

use crate::schedule::DiffusionSchedule;
use crate::{Error, Result};

/// Floor added inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct OneHotSequence {
    /// One `[L, K_p]` matrix per discrete channel.
    pub channels: Vec<Array2<f64>>,
    /// True when every row is an exact basis vector.
    pub hard: bool,
}

/// Forward-process posterior `q(c^(t-1) | c^(t), c^(0))`.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalPosterior {
    pub phi: Vec<Array2<f64>>,
    pub normalized: Vec<Array2<f64>>,
}

impl OneHotSequence {
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, |c| c.nrows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn categories(&self) -> Vec<usize> {
        self.channels.iter().map(|c| c.ncols()).collect()
    }

    /// Largest deviation of any row sum from 1.
    pub fn max_simplex_error(&self) -> f64 {
        self.channels
            .iter()
            .flat_map(|c| c.rows().into_iter().map(|r| (r.sum() - 1.0).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }

    fn same_layout(&self, other: &OneHotSequence, what: &str) -> Result<()> {
        let same = self.channels.len() == other.channels.len()
            && self
                .channels
                .iter()
                .zip(&other.channels)
                .all(|(a, b)| a.dim() == b.dim());
        if !same {
            return Err(Error::invalid(format!("{what}: one-hot layouts differ")));
        }
        Ok(())
    }

    fn map_rows(&self, mut f: impl FnMut(ArrayView1<f64>, ArrayViewMut1<f64>)) -> OneHotSequence {
        let channels = self
            .channels
            .iter()
            .map(|c| {
                let mut out = Array2::zeros(c.dim());
                for (src, dst) in c.rows().into_iter().zip(out.rows_mut()) {
                    f(src, dst);
                }
                out
            })
            .collect();
        OneHotSequence {
            channels,
            hard: false,
        }
    }
}

/// Encodes a `[P_d, L]` category matrix using `categories[p]` classes for row `p`.
pub fn one_hot_encode(c: &Array2<usize>, categories: &[usize]) -> Result<OneHotSequence> {
    if c.nrows() != categories.len() {
        return Err(Error::invalid(format!(
            "{} discrete rows but {} category counts",
            c.nrows(),
            categories.len()
        )));
    }
    let mut channels = Vec::with_capacity(c.nrows());
    for (p, (row, &k)) in c.rows().into_iter().zip(categories).enumerate() {
        let mut m = Array2::zeros((row.len(), k));
        for (l, &v) in row.iter().enumerate() {
            if v >= k {
                return Err(Error::invalid(format!(
                    "category {v} at channel {p}, step {l} is outside 0..{k}"
                )));
            }
            m[[l, v]] = 1.0;
        }
        channels.push(m);
    }
    Ok(OneHotSequence {
        channels,
        hard: true,
    })
}

/// Row-wise argmax back to category indices, `[P_d, L]`.
pub fn one_hot_decode(seq: &OneHotSequence) -> Array2<usize> {
    let len = seq.len();
    let mut out = Array2::zeros((seq.channels.len(), len));
    for (p, ch) in seq.channels.iter().enumerate() {
        for (l, row) in ch.rows().into_iter().enumerate() {
            out[[p, l]] = argmax(row.as_slice().expect("contiguous row"));
        }
    }
    out
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// One forward step in probability form: `(1 - beta_t) c + beta_t / K`.
pub fn q_forward_step_probs(
    c_prev: &OneHotSequence,
    t: usize,
    schedule: &DiffusionSchedule,
) -> Result<OneHotSequence> {
    schedule.check_step(t)?;
    let beta = schedule.beta(t);
    Ok(c_prev.map_rows(|src, mut dst| {
        let k = src.len() as f64;
        for (d, &s) in dst.iter_mut().zip(src.iter()) {
            *d = (1.0 - beta) * s + beta / k;
        }
    }))
}

/// Closed-form marginal `abar_t c0 + (1 - abar_t) / K`; `t = 0` returns `c0`.
pub fn q_marginal_probs(
    c0: &OneHotSequence,
    t: usize,
    schedule: &DiffusionSchedule,
) -> Result<OneHotSequence> {
    if t > schedule.total_steps() {
        return Err(Error::invalid(format!("step {t} beyond schedule")));
    }
    let abar = schedule.alpha_bar(t);
    Ok(c0.map_rows(|src, mut dst| {
        let k = src.len() as f64;
        for (d, &s) in dst.iter_mut().zip(src.iter()) {
            *d = abar * s + (1.0 - abar) / k;
        }
    }))
}

/// Unnormalized posterior weights for one slice, written into `phi`.
/// Returns their sum.
pub(crate) fn posterior_slice(
    c_t: &[f64],
    c0: &[f64],
    alpha_t: f64,
    abar_prev: f64,
    phi: &mut [f64],
) -> f64 {
    let k = c_t.len() as f64;
    let mut sum = 0.0;
    for ((p, &ct), &c0) in phi.iter_mut().zip(c_t).zip(c0) {
        *p = (alpha_t * ct + (1.0 - alpha_t) / k) * (abar_prev * c0 + (1.0 - abar_prev) / k);
        sum += *p;
    }
    sum
}

/// Posterior `phi / sum(phi)` with `phi = (a c_t + (1-a)/K) * (abar' c0 + (1-abar')/K)`.
pub fn q_posterior(
    c_t: &OneHotSequence,
    c0_est: &OneHotSequence,
    t: usize,
    schedule: &DiffusionSchedule,
) -> Result<CategoricalPosterior> {
    c_t.same_layout(c0_est, "q_posterior")?;
    schedule.check_step(t)?;
    let alpha_t = schedule.alpha(t);
    let abar_prev = schedule.alpha_bar(t - 1);
    let mut phi = Vec::with_capacity(c_t.channels.len());
    let mut normalized = Vec::with_capacity(c_t.channels.len());
    for (ct, c0) in c_t.channels.iter().zip(&c0_est.channels) {
        let mut ph = Array2::zeros(ct.dim());
        let mut nm = Array2::zeros(ct.dim());
        for l in 0..ct.nrows() {
            let row_t = ct.row(l);
            let row_0 = c0.row(l);
            let mut row_phi = ph.row_mut(l);
            let slice = row_phi.as_slice_mut().expect("contiguous row");
            let sum = posterior_slice(
                row_t.as_slice().expect("contiguous row"),
                row_0.as_slice().expect("contiguous row"),
                alpha_t,
                abar_prev,
                slice,
            );
            if !(sum > 0.0) || !sum.is_finite() {
                return Err(Error::Numerical(format!(
                    "posterior weights sum to {sum} at step {t}, position {l}"
                )));
            }
            for (n, &p) in nm.row_mut(l).iter_mut().zip(slice.iter()) {
                *n = p / sum;
            }
        }
        phi.push(ph);
        normalized.push(nm);
    }
    Ok(CategoricalPosterior { phi, normalized })
}

/// Numerically stable softmax of `logits` into `out`.
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Index drawn from a probability vector.
pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Draws a hard one-hot sequence from row-wise probabilities.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &OneHotSequence, rng: &mut R) -> OneHotSequence {
    let channels = probs
        .channels
        .iter()
        .map(|c| {
            let mut out = Array2::zeros(c.dim());
            for (l, row) in c.rows().into_iter().enumerate() {
                let k = sample_index(row.as_slice().expect("contiguous row"), rng);
                out[[l, k]] = 1.0;
            }
            out
        })
        .collect();
    OneHotSequence {
        channels,
        hard: true,
    }
}

fn check_logits(c_t: &OneHotSequence, logits: &[Array2<f64>]) -> Result<()> {
    let ok = logits.len() == c_t.channels.len()
        && logits.iter().zip(&c_t.channels).all(|(a, b)| a.dim() == b.dim());
    if !ok {
        return Err(Error::invalid("logit layout does not match the one-hot layout"));
    }
    if logits.iter().any(|l| l.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("non-finite denoiser logits"));
    }
    Ok(())
}

/// One reverse step for discrete channels. `softmax(logits)` is the estimate
/// of `c0`; a category is drawn from the posterior, except at `t = 1` where
/// the posterior's argmax is taken.
pub fn p_sample_step_discrete<R: Rng + ?Sized>(
    c_t: &OneHotSequence,
    logits: &[Array2<f64>],
    t: usize,
    schedule: &DiffusionSchedule,
    rng: &mut R,
) -> Result<OneHotSequence> {
    check_logits(c_t, logits)?;
    schedule.check_step(t)?;
    let alpha_t = schedule.alpha(t);
    let abar_prev = schedule.alpha_bar(t - 1);
    let mut channels = Vec::with_capacity(c_t.channels.len());
    for (ct, lg) in c_t.channels.iter().zip(logits) {
        let k = ct.ncols();
        let mut probs = vec![0.0; k];
        let mut phi = vec![0.0; k];
        let mut out = Array2::zeros(ct.dim());
        for l in 0..ct.nrows() {
            softmax_into(lg.row(l).as_slice().expect("contiguous row"), &mut probs);
            posterior_slice(
                ct.row(l).as_slice().expect("contiguous row"),
                &probs,
                alpha_t,
                abar_prev,
                &mut phi,
            );
            let pick = if t == 1 {
                argmax(&phi)
            } else {
                sample_index(&phi, rng)
            };
            out[[l, pick]] = 1.0;
        }
        channels.push(out);
    }
    Ok(OneHotSequence {
        channels,
        hard: true,
    })
}

/// KL between the true posterior (`q_post`, already normalized) and the model
/// posterior built from `logits`, for one slice. When `grad` is given the
/// derivative with respect to the logits is written into it (scaled by
/// `weight`).
pub(crate) fn kl_slice(
    q_post: &[f64],
    c_t: &[f64],
    logits: &[f64],
    alpha_t: f64,
    abar_prev: f64,
    grad: Option<(&mut [f64], f64)>,
) -> f64 {
    let k = logits.len();
    let mut s = vec![0.0; k];
    softmax_into(logits, &mut s);
    let mut phi = vec![0.0; k];
    let sum = posterior_slice(c_t, &s, alpha_t, abar_prev, &mut phi);
    let mut kl = 0.0;
    for j in 0..k {
        let p = phi[j] / sum;
        kl += q_post[j] * ((q_post[j] + LOG_FLOOR).ln() - (p + LOG_FLOOR).ln());
    }
    if let Some((grad, weight)) = grad {
        let kf = k as f64;
        // dL/dp, then through the normalization, the mixing and the softmax.
        let g: Vec<f64> = (0..k).map(|j| -q_post[j] / (phi[j] / sum + LOG_FLOOR)).collect();
        let gp: f64 = (0..k).map(|j| g[j] * phi[j] / sum).sum();
        let ds: Vec<f64> = (0..k)
            .map(|j| {
                let dphi = (g[j] - gp) / sum;
                dphi * (alpha_t * c_t[j] + (1.0 - alpha_t) / kf) * abar_prev
            })
            .collect();
        let sds: f64 = (0..k).map(|j| s[j] * ds[j]).sum();
        for j in 0..k {
            grad[j] = weight * s[j] * (ds[j] - sds);
        }
    }
    kl
}

/// Mean over all `(channel, position)` slices of
/// `KL(q(c^(t-1) | c^(t), c^(0)) || p_theta(c^(t-1) | c^(t)))`. At `t = 1`
/// the true posterior is the one-hot `c0`, so this reduces to
/// `-log p_theta(c0 | c1)`.
pub fn loss_discrete(
    c0: &OneHotSequence,
    c_t: &OneHotSequence,
    logits: &[Array2<f64>],
    t: usize,
    schedule: &DiffusionSchedule,
) -> Result<f64> {
    Ok(loss_discrete_with_grad(c0, c_t, logits, t, schedule, false)?.0)
}

/// [`loss_discrete`] plus its gradient with respect to every logit.
pub fn loss_discrete_with_grad(
    c0: &OneHotSequence,
    c_t: &OneHotSequence,
    logits: &[Array2<f64>],
    t: usize,
    schedule: &DiffusionSchedule,
    want_grad: bool,
) -> Result<(f64, Vec<Array2<f64>>)> {
    c0.same_layout(c_t, "loss_discrete")?;
    check_logits(c_t, logits)?;
    schedule.check_step(t)?;
    let truth = q_posterior(c_t, c0, t, schedule)?;
    let alpha_t = schedule.alpha(t);
    let abar_prev = schedule.alpha_bar(t - 1);
    let slices: usize = c_t.channels.iter().map(|c| c.nrows()).sum();
    if slices == 0 {
        return Ok((0.0, logits.iter().map(|l| Array2::zeros(l.dim())).collect()));
    }
    let weight = 1.0 / slices as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for ((q, ct), lg) in truth.normalized.iter().zip(&c_t.channels).zip(logits) {
        let mut g = Array2::zeros(lg.dim());
        for l in 0..ct.nrows() {
            let mut grow = g.row_mut(l);
            let grad = if want_grad {
                Some((grow.as_slice_mut().expect("contiguous row"), weight))
            } else {
                None
            };
            total += kl_slice(
                q.row(l).as_slice().expect("contiguous row"),
                ct.row(l).as_slice().expect("contiguous row"),
                lg.row(l).as_slice().expect("contiguous row"),
                alpha_t,
                abar_prev,
                grad,
            );
        }
        grads.push(g);
    }
    Ok((total * weight, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hard(c: Array2<usize>, k: usize) -> OneHotSequence {
        let ks = vec![k; c.nrows()];
        one_hot_encode(&c, &ks).unwrap()
    }

    /// Row-vector times the step transition matrix `(1-b) I + b/K 11^T`.
    fn step_matrix(beta: f64, k: usize) -> Vec<Vec<f64>> {
        (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| if i == j { 1.0 - beta } else { 0.0 } + beta / k as f64)
                    .collect()
            })
            .collect()
    }

    fn vec_mat(v: &[f64], m: &[Vec<f64>]) -> Vec<f64> {
        (0..v.len())
            .map(|j| (0..v.len()).map(|i| v[i] * m[i][j]).sum())
            .collect()
    }

    fn chain(c0: &[f64], t: usize, s: &DiffusionSchedule) -> Vec<f64> {
        let mut v = c0.to_vec();
        for step in 1..=t {
            v = vec_mat(&v, &step_matrix(s.beta(step), c0.len()));
        }
        v
    }

    #[test]
    fn encodes_footnote_example() {
        let oh = hard(array![[0, 1, 2]], 3);
        assert_eq!(oh.channels[0], array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(oh.hard);
        assert_eq!(one_hot_decode(&oh), array![[0, 1, 2]]);
    }

    #[test]
    fn constant_series_and_range_error() {
        let oh = hard(array![[0, 0, 0, 0]], 4);
        for row in oh.channels[0].rows() {
            assert_eq!(row.to_vec(), vec![1.0, 0.0, 0.0, 0.0]);
        }
        assert!(one_hot_encode(&array![[0, 3]], &[3]).is_err());
    }

    #[test]
    fn forward_step_cases() {
        let c = hard(array![[0]], 2);
        let s = DiffusionSchedule::from_betas(vec![0.0, 1.0, 0.4]);
        assert_eq!(q_forward_step_probs(&c, 1, &s).unwrap().channels[0], c.channels[0]);
        assert_eq!(q_forward_step_probs(&c, 2, &s).unwrap().channels[0], array![[0.5, 0.5]]);
        let out = q_forward_step_probs(&c, 3, &s).unwrap();
        assert!((out.channels[0][[0, 0]] - 0.8).abs() < 1e-15);
        assert!((out.channels[0][[0, 1]] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn marginal_matches_transition_chain() {
        let s = DiffusionSchedule::cosine(10).unwrap();
        for k in 2..=4 {
            for cat in 0..k {
                let c0 = hard(array![[cat]], k);
                assert_eq!(q_marginal_probs(&c0, 0, &s).unwrap().channels[0], c0.channels[0]);
                for t in 1..=10 {
                    let closed = q_marginal_probs(&c0, t, &s).unwrap();
                    let brute = chain(c0.channels[0].row(0).as_slice().unwrap(), t, &s);
                    for j in 0..k {
                        assert!((closed.channels[0][[0, j]] - brute[j]).abs() < 1e-12);
                    }
                    assert!(closed.max_simplex_error() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn marginal_becomes_uniform() {
        let s = DiffusionSchedule::cosine(1000).unwrap();
        let out = q_marginal_probs(&hard(array![[1]], 3), 1000, &s).unwrap();
        for v in out.channels[0].iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn hand_evaluated_posterior() {
        // alpha_2 = 0.9 and alpha_bar_1 = 0.8.
        let s = DiffusionSchedule::from_betas(vec![0.2, 0.1]);
        let ct = hard(array![[0]], 2);
        let c0 = hard(array![[1]], 2);
        let post = q_posterior(&ct, &c0, 2, &s).unwrap();
        assert!((post.phi[0][[0, 0]] - 0.095).abs() < 1e-12);
        assert!((post.phi[0][[0, 1]] - 0.045).abs() < 1e-12);
        assert!((post.normalized[0][[0, 0]] - 0.095 / 0.14).abs() < 1e-12);
        assert!((post.normalized[0][[0, 1]] - 0.045 / 0.14).abs() < 1e-12);
    }

    #[test]
    fn posterior_at_first_step_collapses_to_c0() {
        let s = DiffusionSchedule::cosine(10).unwrap();
        let ct = hard(array![[0, 2, 1]], 3);
        let c0 = hard(array![[1, 2, 0]], 3);
        let post = q_posterior(&ct, &c0, 1, &s).unwrap();
        assert_eq!(post.normalized[0], c0.channels[0]);
    }

    #[test]
    fn posterior_equals_bayes_inversion() {
        let s = DiffusionSchedule::cosine(10).unwrap();
        for k in 2..=4 {
            for t in 2..=10 {
                for i in 0..k {
                    for c in 0..k {
                        let ct = hard(array![[i]], k);
                        let c0 = hard(array![[c]], k);
                        let post = q_posterior(&ct, &c0, t, &s).unwrap();
                        let prior = chain(c0.channels[0].row(0).as_slice().unwrap(), t - 1, &s);
                        let step = step_matrix(s.beta(t), k);
                        let joint: Vec<f64> = (0..k).map(|j| prior[j] * step[j][i]).collect();
                        let z: f64 = joint.iter().sum();
                        for j in 0..k {
                            let d = (post.normalized[0][[0, j]] - joint[j] / z).abs();
                            assert!(d < 1e-10, "k={k} t={t} i={i} c={c} j={j} d={d}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn peaked_logits_at_first_step_pick_the_peak() {
        let s = DiffusionSchedule::cosine(10).unwrap();
        let ct = hard(array![[0, 1, 2]], 3);
        let logits = vec![array![[0.0, 0.0, 40.0], [40.0, 0.0, 0.0], [0.0, 40.0, 0.0]]];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = p_sample_step_discrete(&ct, &logits, 1, &s, &mut rng).unwrap();
        assert_eq!(one_hot_decode(&out), array![[2, 0, 1]]);
    }

    #[test]
    fn zero_beta_preserves_state() {
        let s = DiffusionSchedule::from_betas(vec![0.1, 0.0, 0.3]);
        let ct = hard(array![[0, 1, 2, 1]], 3);
        let logits = vec![Array2::zeros((4, 3))];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let out = p_sample_step_discrete(&ct, &logits, 2, &s, &mut rng).unwrap();
            assert_eq!(out.channels[0], ct.channels[0]);
        }
    }

    #[test]
    fn non_finite_logits_rejected() {
        let s = DiffusionSchedule::cosine(10).unwrap();
        let ct = hard(array![[0]], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bad = vec![array![[f64::NAN, 0.0]]];
        assert!(p_sample_step_discrete(&ct, &bad, 3, &s, &mut rng).is_err());
    }

    #[test]
    fn sampling_frequencies_follow_posterior() {
        let s = DiffusionSchedule::cosine(10).unwrap();
        let ct = hard(array![[1]], 3);
        let logits = vec![array![[0.3, -1.0, 0.8]]];
        let t = 6;
        let mut probs = [0.0; 3];
        softmax_into(&[0.3, -1.0, 0.8], &mut probs);
        let mut phi = [0.0; 3];
        let sum = posterior_slice(&[0.0, 1.0, 0.0], &probs, s.alpha(t), s.alpha_bar(t - 1), &mut phi);
        let mut counts = [0usize; 3];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 100_000;
        for _ in 0..n {
            let out = p_sample_step_discrete(&ct, &logits, t, &s, &mut rng).unwrap();
            counts[one_hot_decode(&out)[[0, 0]]] += 1;
        }
        for j in 0..3 {
            let p = phi[j] / sum;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let f = counts[j] as f64 / n as f64;
            assert!((f - p).abs() < 4.0 * se, "j={j} f={f} p={p}");
        }
    }

    #[test]
    fn kl_hand_case() {
        let s = DiffusionSchedule::from_betas(vec![0.2, 0.1]);
        let ct = hard(array![[0]], 2);
        let c0 = hard(array![[1]], 2);
        // q: phi = [0.095, 0.045]. p with c0_est = [0.5, 0.5]:
        // [0.95 * 0.5, 0.05 * 0.5] -> [0.95, 0.05].
        let q: [f64; 2] = [0.095 / 0.14, 0.045 / 0.14];
        let p = [0.95, 0.05];
        let want: f64 = (0..2).map(|k| q[k] * (q[k] / p[k]).ln()).sum();
        let got = loss_discrete(&c0, &ct, &[array![[0.0, 0.0]]], 2, &s).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }

    #[test]
    fn kl_vanishes_for_matching_logits() {
        let s = DiffusionSchedule::cosine(10).unwrap();
        let ct = hard(array![[0, 1]], 2);
        let c0 = hard(array![[1, 1]], 2);
        let logits = vec![array![[-40.0, 40.0], [-40.0, 40.0]]];
        assert!(loss_discrete(&c0, &ct, &logits, 5, &s).unwrap() < 1e-9);
    }

    #[test]
    fn first_step_loss_is_negative_log_likelihood() {
        let s = DiffusionSchedule::cosine(10).unwrap();
        let ct = hard(array![[0]], 3);
        let c0 = hard(array![[2]], 3);
        let z = [0.1, 0.4, -0.2];
        let mut sm = [0.0; 3];
        softmax_into(&z, &mut sm);
        let a = s.alpha(1);
        let w: Vec<f64> = (0..3)
            .map(|k| (a * if k == 0 { 1.0 } else { 0.0 } + (1.0 - a) / 3.0) * sm[k])
            .collect();
        let want = -(w[2] / w.iter().sum::<f64>()).ln();
        let got = loss_discrete(&c0, &ct, &[array![[0.1, 0.4, -0.2]]], 1, &s).unwrap();
        assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let s = DiffusionSchedule::cosine(10).unwrap();
        let ct = hard(array![[0, 2], [1, 1]], 3);
        let c0 = hard(array![[1, 2], [0, 1]], 3);
        let logits = vec![array![[0.3, -0.4, 1.1], [0.0, 0.2, -0.9]], array![[1.5, -0.5, 0.25], [-1.0, 0.7, 0.1]]];
        for t in [1, 2, 7] {
            let (_, g) = loss_discrete_with_grad(&c0, &ct, &logits, t, &s, true).unwrap();
            let h = 1e-6;
            for p in 0..2 {
                for l in 0..2 {
                    for k in 0..3 {
                        let mut up = logits.clone();
                        up[p][[l, k]] += h;
                        let mut dn = logits.clone();
                        dn[p][[l, k]] -= h;
                        let fd = (loss_discrete(&c0, &ct, &up, t, &s).unwrap()
                            - loss_discrete(&c0, &ct, &dn, t, &s).unwrap())
                            / (2.0 * h);
                        assert!((fd - g[p][[l, k]]).abs() < 1e-7, "t={t} {fd} vs {}", g[p][[l, k]]);
                    }
                }
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn kl_is_nonnegative_and_outputs_on_simplex(
                logits in proptest::collection::vec(-8.0f64..8.0, 8),
                cats in proptest::collection::vec(0usize..4, 4),
                t in 1usize..=10,
            ) {
                let s = DiffusionSchedule::cosine(10).unwrap();
                let c0 = one_hot_encode(&Array2::from_shape_vec((1, 2), cats[..2].to_vec()).unwrap(), &[4]).unwrap();
                let ct = one_hot_encode(&Array2::from_shape_vec((1, 2), cats[2..].to_vec()).unwrap(), &[4]).unwrap();
                let lg = vec![Array2::from_shape_vec((2, 4), logits).unwrap()];
                let kl = loss_discrete(&c0, &ct, &lg, t, &s).unwrap();
                prop_assert!(kl >= -1e-12);
                let post = q_posterior(&ct, &c0, t, &s).unwrap();
                let seq = OneHotSequence { channels: post.normalized, hard: false };
                prop_assert!(seq.max_simplex_error() < 1e-9);
                prop_assert!(q_forward_step_probs(&ct, t, &s).unwrap().max_simplex_error() < 1e-9);
                prop_assert!(q_marginal_probs(&c0, t, &s).unwrap().max_simplex_error() < 1e-9);
                if t >= 2 {
                    for row in post.phi[0].rows() {
                        prop_assert!(row.iter().all(|&v| v > 0.0));
                    }
                }
            }
        }
    }
}
