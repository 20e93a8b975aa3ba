use ndarray::Array2;
use proptest::prelude::*;

use seqdiff::checkpoint::Checkpoint;
use seqdiff::data::{make_sine_markov_corpus, read_corpus, write_corpus};
use seqdiff::denoiser::sinusoidal_embed;
use seqdiff::eval::{nn_distances, nnaa};
use seqdiff::gaussian::{posterior_mean, q_sample, NumericMatrix};
use seqdiff::DiffusionSchedule;

fn matrix(rows: usize, cols: usize, v: Vec<f64>) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), v).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cosine_schedules_are_valid(total in 2usize..600) {
        let s = DiffusionSchedule::cosine(total).unwrap();
        prop_assert!(s.validate().is_empty());
        prop_assert_eq!(s.posterior_var(1), 0.0);
        for t in 1..=total {
            prop_assert!(s.beta(t) > 0.0 && s.beta(t) <= 0.999);
            prop_assert!(s.posterior_var(t) <= s.beta(t));
            if t > 1 {
                prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            }
        }
    }

    /// With the true noise, the reverse mean equals the posterior mean of
    /// q(x_{t-1} | x_t, x_0) written in terms of x_0 and x_t.
    #[test]
    fn reverse_mean_matches_posterior_in_x0_form(
        x0 in proptest::collection::vec(-1.0f64..2.0, 6),
        eps in proptest::collection::vec(-3.0f64..3.0, 6),
        t in 2usize..=1000,
    ) {
        let s = DiffusionSchedule::cosine(1000).unwrap();
        let x0 = NumericMatrix(matrix(2, 3, x0));
        let eps = NumericMatrix(matrix(2, 3, eps));
        let xt = q_sample(&x0, t, &eps, &s).unwrap();
        let mean = posterior_mean(&xt, &eps, t, &s).unwrap();
        let (ab, ab_prev, a, b) = (s.alpha_bar(t), s.alpha_bar(t - 1), s.alpha(t), s.beta(t));
        let c0 = ab_prev.sqrt() * b / (1.0 - ab);
        let ct = a.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        for ((m, x), y) in mean.0.iter().zip(x0.0.iter()).zip(xt.0.iter()) {
            let expected = c0 * x + ct * y;
            prop_assert!((m - expected).abs() <= 1e-9 * (1.0 + expected.abs()), "{} vs {}", m, expected);
        }
    }

    #[test]
    fn checkpoint_bytes_round_trip(
        values in proptest::collection::vec(any::<f64>(), 0..20),
        words in proptest::collection::vec(any::<u64>(), 0..5),
        config in "[a-z_ =0-9\n]{0,40}",
    ) {
        let mut ck = Checkpoint { config, ..Checkpoint::default() };
        ck.put_tensor("w", &values);
        ck.put_record("r", &words);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        let bits: Vec<u64> = back.tensor("w").unwrap().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(bits, values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn embedding_entries_are_bounded(t in 0.0f64..5000.0, half in 1usize..64) {
        let v = sinusoidal_embed(t, 2 * half).unwrap();
        prop_assert!(v.iter().all(|x| (-1.0..=1.0).contains(x)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn nnaa_symmetries(pts in proptest::collection::vec(-2.0f64..2.0, 3 * 8 * 2), perm_seed in 0usize..8) {
        let a = matrix(8, 2, pts[..16].to_vec());
        let b = matrix(8, 2, pts[16..32].to_vec());
        let s = matrix(8, 2, pts[32..].to_vec());
        let r = nnaa(a.view(), b.view(), s.view()).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.aa_test) && (0.0..=1.0).contains(&r.aa_train));
        let swapped = nnaa(b.view(), a.view(), s.view()).unwrap();
        prop_assert_eq!((r.aa_test, r.aa_train), (swapped.aa_train, swapped.aa_test));
        // Reordering the reference set leaves nearest distances unchanged.
        let order: Vec<usize> = (0..8).map(|i| (i * 3 + perm_seed) % 8).collect();
        let shuffled = s.select(ndarray::Axis(0), &order);
        prop_assert_eq!(
            nn_distances(a.view(), s.view(), false).unwrap(),
            nn_distances(a.view(), shuffled.view(), false).unwrap()
        );
    }

    #[test]
    fn corpus_csv_round_trip(n in 0usize..6, len in 1usize..6, k in 2usize..5, rate in 0.0f64..0.6, seed in any::<u64>()) {
        let c = make_sine_markov_corpus(n, 2, 1, k, len, rate, seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        write_corpus(&path, &c).unwrap();
        let back = read_corpus(&path).unwrap();
        prop_assert_eq!(back.n(), c.n());
        for (a, b) in back.samples.iter().zip(&c.samples) {
            prop_assert_eq!(&a.c, &b.c);
            prop_assert_eq!(&a.m, &b.m);
            for (x, y) in a.x.iter().zip(b.x.iter()) {
                prop_assert!((x.is_nan() && y.is_nan()) || x.to_bits() == y.to_bits());
            }
        }
    }
}
