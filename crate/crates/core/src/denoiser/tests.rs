use super::*;
use crate::multinomial::one_hot_encode;
use ndarray::array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn tiny() -> (Denoiser, ParamStore) {
    let cfg = DenoiserConfig {
        numeric_channels: 1,
        categories: vec![2],
        hidden: 8,
        embed_dim: 8,
        layers: 2,
    };
    let d = Denoiser::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = d.init_params(&mut rng);
    (d, p)
}

fn random_input(d: &Denoiser, len: usize, batch: usize, seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_fn((len, batch, d.config().io_width()), |_| StandardNormal.sample(&mut rng))
}

#[test]
fn sinusoid_cases() {
    let e = sinusoidal_embed(0.0, 6).unwrap();
    assert_eq!(e, vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    let e = sinusoidal_embed(1.0, 4).unwrap();
    let want = [1f64.sin(), 0.01f64.sin(), 1f64.cos(), 0.01f64.cos()];
    for (a, b) in e.iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!(sinusoidal_embed(3.0, 5).is_err());
    for t in [0.0, 1.0, 17.0, 999.0] {
        assert!(sinusoidal_embed(t, 128).unwrap().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}

#[test]
fn output_shapes() {
    let cfg = DenoiserConfig::new(2, vec![3]);
    assert_eq!(cfg.hidden, 20);
    let d = Denoiser::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = d.init_params(&mut rng);
    let x = NumericMatrix::zeros(2, 24);
    let c = one_hot_encode(&Array2::zeros((1, 24)), &[3]).unwrap();
    let out = d.predict(&p, &x, &c, 10).unwrap();
    assert_eq!(out.eps_pred.0.dim(), (2, 24));
    assert_eq!(out.logits.len(), 1);
    assert_eq!(out.logits[0].dim(), (24, 3));
}

#[test]
fn layout_mismatch_is_rejected() {
    let (d, p) = tiny();
    let x = NumericMatrix::zeros(2, 3);
    let c = one_hot_encode(&array![[0, 1, 0]], &[2]).unwrap();
    assert!(d.predict(&p, &x, &c, 1).is_err());
    let other = Denoiser::new(DenoiserConfig::new(3, vec![2])).unwrap();
    let x = NumericMatrix::zeros(1, 3);
    assert!(other.predict(&p, &x, &c, 1).is_err());
}

#[test]
fn forward_is_deterministic_and_step_dependent() {
    let (d, p) = tiny();
    let input = random_input(&d, 3, 1, 2);
    let (a, _) = d.forward(&p, input.view(), &[4]).unwrap();
    let (b, _) = d.forward(&p, input.view(), &[4]).unwrap();
    assert_eq!(a, b);
    let (c, _) = d.forward(&p, input.view(), &[400]).unwrap();
    let diff = (&a - &c).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
    assert!(diff > 0.0);
}

#[test]
fn zero_step_embedding_is_identity_conditioning() {
    let (d, mut p) = tiny();
    for id in [d.ids.fc3.0, d.ids.fc3.1] {
        p.slice_mut(id).fill(0.0);
    }
    let input = random_input(&d, 3, 2, 3);
    let (a, cache) = d.forward(&p, input.view(), &[1, 50]).unwrap();
    let (b, _) = d.forward(&p, input.view(), &[700, 2]).unwrap();
    assert_eq!(a, b);
    // With scale = shift = 0 the conditioned states equal the normalized ones.
    assert_eq!(cache.film, cache.normed);
}

#[test]
fn recurrence_is_bidirectional() {
    let (d, p) = tiny();
    let input = random_input(&d, 5, 1, 4);
    let (out, _) = d.forward(&p, input.view(), &[9]).unwrap();
    let mut reversed = input.clone();
    reversed.invert_axis(Axis(0));
    let (mut out_rev, _) = d.forward(&p, reversed.view(), &[9]).unwrap();
    out_rev.invert_axis(Axis(0));
    let diff = (&out - &out_rev).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
    assert!(diff > 1e-6, "reversal symmetry should not hold, diff={diff}");

    // Changing the last input must affect the first output (backward direction).
    let mut late = input.clone();
    late[[4, 0, 0]] += 1.0;
    let (out_late, _) = d.forward(&p, late.view(), &[9]).unwrap();
    assert!((out_late[[0, 0, 0]] - out[[0, 0, 0]]).abs() > 0.0);
}

#[test]
fn zero_upstream_gradient_gives_zero_gradients() {
    let (d, p) = tiny();
    let input = random_input(&d, 3, 2, 6);
    let (out, cache) = d.forward(&p, input.view(), &[3, 8]).unwrap();
    let g = d.backward(&p, &cache, Array3::zeros(out.dim()).view()).unwrap();
    assert!(g.data().iter().all(|&v| v == 0.0));
}

#[test]
fn mismatched_gradient_is_a_contract_violation() {
    let (d, p) = tiny();
    let input = random_input(&d, 3, 2, 6);
    let (_, cache) = d.forward(&p, input.view(), &[3, 8]).unwrap();
    let err = d.backward(&p, &cache, Array3::zeros((3, 1, 3)).view()).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn duplicated_batch_gradient_matches_single() {
    let (d, p) = tiny();
    let single = random_input(&d, 3, 1, 7);
    let weights = random_input(&d, 3, 1, 8);
    let (_, cache) = d.forward(&p, single.view(), &[5]).unwrap();
    let g1 = d.backward(&p, &cache, weights.view()).unwrap();

    let mut double = Array3::zeros((3, 2, 3));
    let mut dw = Array3::zeros((3, 2, 3));
    for b in 0..2 {
        double.slice_mut(s![.., b, ..]).assign(&single.slice(s![.., 0, ..]));
        dw.slice_mut(s![.., b, ..]).assign(&(&weights.slice(s![.., 0, ..]) * 0.5));
    }
    let (_, cache) = d.forward(&p, double.view(), &[5, 5]).unwrap();
    let g2 = d.backward(&p, &cache, dw.view()).unwrap();
    for (a, b) in g1.data().iter().zip(g2.data()) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
    }
}

#[test]
fn gradients_match_finite_differences() {
    let (d, p) = tiny();
    let input = random_input(&d, 3, 2, 9);
    let weights = random_input(&d, 3, 2, 10);
    let steps = [2, 30];
    let loss = |params: &ParamStore| {
        let (out, _) = d.forward(params, input.view(), &steps).unwrap();
        (&out * &weights).sum()
    };
    let (_, cache) = d.forward(&p, input.view(), &steps).unwrap();
    let g = d.backward(&p, &cache, weights.view()).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let mut up = p.clone();
        up.data_mut()[i] += h;
        let mut dn = p.clone();
        dn.data_mut()[i] -= h;
        let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
        let a = g.data()[i];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn parameter_count_depends_only_on_shape() {
    let a = Denoiser::new(DenoiserConfig::new(2, vec![2, 3])).unwrap();
    let b = Denoiser::new(DenoiserConfig::new(2, vec![2, 3])).unwrap();
    assert_eq!(a.param_count(), b.param_count());
    let groups = a.param_groups();
    let named: usize = groups.iter().map(|(_, n)| n.len()).sum();
    assert_eq!(named, a.zero_params().specs().len());
}
