use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::{Error, Result};

/// Nearest-neighbour adversarial accuracy between real train (T), real test
/// (E) and synthetic (S) point sets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NnaaReport {
    pub aa_test: f64,
    pub aa_train: f64,
    pub nnaa: f64,
    pub d_ts: Vec<f64>,
    pub d_st: Vec<f64>,
    pub d_es: Vec<f64>,
    pub d_se: Vec<f64>,
    pub d_tt: Vec<f64>,
    pub d_ss: Vec<f64>,
    pub d_ee: Vec<f64>,
}

/// For each row of `a`, the Euclidean distance to its nearest row of `b`.
/// With `exclude_self` the sets are the same and `j = i` is skipped.
pub fn nn_distances(a: ArrayView2<f64>, b: ArrayView2<f64>, exclude_self: bool) -> Result<Vec<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::invalid(format!("point dimensions differ: {} vs {}", a.ncols(), b.ncols())));
    }
    if exclude_self && (a.nrows() != b.nrows() || a.nrows() < 2) {
        return Err(Error::invalid("self-distances need one set of at least two points"));
    }
    if b.nrows() == 0 || b.ncols() == 0 {
        return Err(Error::invalid("reference set is empty"));
    }
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let a = a.as_slice().expect("standard layout");
    let b_s = b.as_slice().expect("standard layout");
    let d = b.ncols();
    Ok(a.chunks_exact(d)
        .enumerate()
        .map(|(i, p)| {
            let mut best = f64::INFINITY;
            for (j, q) in b_s.chunks_exact(d).enumerate() {
                if exclude_self && i == j {
                    continue;
                }
                let s: f64 = p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum();
                if s < best {
                    best = s;
                }
            }
            best.sqrt()
        })
        .collect())
}

fn frac_greater(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x > y).count() as f64 / a.len() as f64
}

/// `AA_X = (mean 1{d_XS > d_XX} + mean 1{d_SX > d_SS}) / 2` for X = test and
/// train; `nnaa = |AA_test - AA_train|`. Inputs must already be standardized
/// and of equal size.
pub fn nnaa(train: ArrayView2<f64>, test: ArrayView2<f64>, synth: ArrayView2<f64>) -> Result<NnaaReport> {
    let n = train.nrows();
    if test.nrows() != n || synth.nrows() != n {
        return Err(Error::invalid(format!(
            "NNAA needs equal set sizes, got train {n}, test {}, synth {}",
            test.nrows(),
            synth.nrows()
        )));
    }
    let d_ts = nn_distances(train, synth, false)?;
    let d_st = nn_distances(synth, train, false)?;
    let d_es = nn_distances(test, synth, false)?;
    let d_se = nn_distances(synth, test, false)?;
    let d_tt = nn_distances(train, train, true)?;
    let d_ss = nn_distances(synth, synth, true)?;
    let d_ee = nn_distances(test, test, true)?;
    let aa_test = 0.5 * (frac_greater(&d_es, &d_ee) + frac_greater(&d_se, &d_ss));
    let aa_train = 0.5 * (frac_greater(&d_ts, &d_tt) + frac_greater(&d_st, &d_ss));
    Ok(NnaaReport {
        aa_test,
        aa_train,
        nnaa: (aa_test - aa_train).abs(),
        d_ts,
        d_st,
        d_es,
        d_se,
        d_tt,
        d_ss,
        d_ee,
    })
}

/// Per-column mean and standard deviation of `reference`; zero deviations
/// are replaced by 1.
pub fn column_moments(reference: ArrayView2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = reference.nrows().max(1) as f64;
    let mean: Vec<f64> = reference.columns().into_iter().map(|c| c.sum() / n).collect();
    let sd = reference
        .columns()
        .into_iter()
        .zip(&mean)
        .map(|(c, m)| {
            let v = c.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            if v > 0.0 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, sd)
}

pub fn standardize(x: ArrayView2<f64>, mean: &[f64], sd: &[f64]) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        for ((v, m), s) in row.iter_mut().zip(mean).zip(sd) {
            *v = (*v - m) / s;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn hand_distances() {
        let a = array![[0.0, 0.0], [3.0, 4.0]];
        assert_eq!(nn_distances(a.view(), a.view(), true).unwrap(), vec![5.0, 5.0]);
        assert_eq!(nn_distances(a.view(), a.view(), false).unwrap(), vec![0.0, 0.0]);
        assert!(nn_distances(a.slice(ndarray::s![..1, ..]), a.slice(ndarray::s![..1, ..]), true).is_err());
    }

    #[test]
    fn moving_one_point_only_changes_its_distance() {
        let a = array![[0.0], [1.0], [10.0]];
        let b = array![[0.1], [1.2], [9.0]];
        let before = nn_distances(a.view(), b.view(), false).unwrap();
        let mut a2 = a.clone();
        a2[[2, 0]] = 20.0;
        let after = nn_distances(a2.view(), b.view(), false).unwrap();
        assert_eq!(before[..2], after[..2]);
        assert!(after[2] > before[2]);
    }

    #[test]
    fn identical_synth_gives_zero_train_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut draw = || Array2::from_shape_simple_fn((50, 4), || StandardNormal.sample(&mut rng));
        let train = draw();
        let test = draw();
        let r = nnaa(train.view(), test.view(), train.view()).unwrap();
        assert_eq!(r.aa_train, 0.0);
        assert_eq!(r.nnaa, r.aa_test);
        assert!(nnaa(train.view(), test.slice(ndarray::s![..10, ..]), train.view()).is_err());
    }

    #[test]
    fn swapping_real_sets_swaps_accuracies() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut draw = || Array2::from_shape_simple_fn((40, 3), || StandardNormal.sample(&mut rng));
        let (a, b, s) = (draw(), draw(), draw());
        let r1 = nnaa(a.view(), b.view(), s.view()).unwrap();
        let r2 = nnaa(b.view(), a.view(), s.view()).unwrap();
        assert_eq!((r1.aa_test, r1.aa_train), (r2.aa_train, r2.aa_test));
    }

    #[test]
    fn standardization_uses_reference_moments() {
        let r = array![[1.0, 5.0], [3.0, 5.0]];
        let (m, s) = column_moments(r.view());
        assert_eq!((m, s.clone()), (vec![2.0, 5.0], vec![1.0, 1.0]));
        let z = standardize(array![[4.0, 6.0]].view(), &[2.0, 5.0], &s);
        assert_eq!(z, array![[2.0, 1.0]]);
    }
}
