//! Dense matrix primitives, similarity and softmax kernels, the SGD optimizer
//! and a central finite-difference gradient oracle.

mod gradcheck;
mod matrix;
mod optim;

pub use gradcheck::{finite_diff_grad, relative_error, DEFAULT_FD_STEP};
pub use matrix::{dot, norm, Matrix, MIN_NORM};
pub use optim::{cosine_lr, sgd_step, OptimState};

use crate::error::{shape_err, Error, Result};

/// Pairwise cosine similarities between the rows of `a` (n×d) and `b` (m×d).
pub fn cosine_similarity_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(shape_err(format!(
            "cosine similarity between {}-dim and {}-dim rows",
            a.cols(),
            b.cols()
        )));
    }
    let (an, _) = a.l2_normalize_rows()?;
    let (bn, _) = b.l2_normalize_rows()?;
    let mut sim = an.matmul_t(&bn)?;
    // rounding can push |cos| a hair past 1
    sim.data_mut()
        .iter_mut()
        .for_each(|v| *v = v.clamp(-1.0, 1.0));
    Ok(sim)
}

/// Row-wise softmax of `m / tau` with the row max subtracted first.
pub fn softmax_rows(m: &Matrix, tau: f64) -> Result<Matrix> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::NonPositiveTemperature(tau));
    }
    let mut out = m.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r), tau);
    }
    Ok(out)
}

/// Softmax of `row / tau` in place; an empty row is left untouched.
pub(crate) fn softmax_in_place(row: &mut [f64], tau: f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return;
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = ((*v - max) / tau).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// `log(sum(exp(row)))` computed around the row max.
pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn cosine_trivial_cases() {
        let a = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.0, 1.0]]).unwrap();
        assert_eq!(cosine_similarity_matrix(&a, &a).unwrap().data(), &[1.0]);
        assert_eq!(cosine_similarity_matrix(&a, &b).unwrap().data(), &[0.0]);
    }

    #[test]
    fn cosine_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(5, 3, &mut rng);
        let b = random(4, 3, &mut rng);
        let sim = cosine_similarity_matrix(&a, &b).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let (x, y) = (a.row(i), b.row(j));
                let mut d = 0.0;
                let mut nx = 0.0;
                let mut ny = 0.0;
                for k in 0..3 {
                    d += x[k] * y[k];
                    nx += x[k] * x[k];
                    ny += y[k] * y[k];
                }
                let expect = d / (nx.sqrt() * ny.sqrt());
                assert!((sim.get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cosine_errors() {
        let a = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            cosine_similarity_matrix(&a, &a),
            Err(Error::ZeroNormRow { row: 1, .. })
        ));
        assert!(matches!(
            cosine_similarity_matrix(&a, &b),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn softmax_examples() {
        let m = Matrix::from_rows(&[[2.5, 2.5, 2.5]]).unwrap();
        for tau in [0.01, 1.0, 30.0] {
            let s = softmax_rows(&m, tau).unwrap();
            for &v in s.data() {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        let s = softmax_rows(&Matrix::from_rows(&[[1.0, 0.0]]).unwrap(), 1.0).unwrap();
        assert!((s.get(0, 0) - 0.7310585786300049).abs() < 1e-12);
        assert!((s.get(0, 1) - 0.2689414213699951).abs() < 1e-12);
        let s = softmax_rows(&Matrix::from_rows(&[[8.0, 2.0]]).unwrap(), 1.0).unwrap();
        assert!((s.get(0, 0) - 0.9975273768433653).abs() < 1e-12);
        assert!((s.get(0, 1) - 0.0024726231566347).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        let m = Matrix::zeros(1, 2);
        for tau in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                softmax_rows(&m, tau),
                Err(Error::NonPositiveTemperature(_))
            ));
        }
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one_and_ignore_shifts(
            row in prop::collection::vec(-20.0f64..20.0, 1..12),
            shift in -50.0f64..50.0,
            tau in 0.05f64..5.0,
        ) {
            let m = Matrix::from_rows(&[row.clone()]).unwrap();
            let shifted = Matrix::from_rows(&[row.iter().map(|v| v + shift).collect::<Vec<_>>()]).unwrap();
            let a = softmax_rows(&m, tau).unwrap();
            let b = softmax_rows(&shifted, tau).unwrap();
            prop_assert!((a.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(a.max_abs_diff(&b) < 1e-12);
        }

        #[test]
        fn self_cosine_has_unit_diagonal(seed in any::<u64>(), n in 1usize..8, d in 1usize..10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(n, d, &mut rng);
            prop_assume!(a.row_norms().iter().all(|&x| x > 1e-6));
            let s = cosine_similarity_matrix(&a, &a).unwrap();
            for i in 0..n {
                prop_assert!((s.get(i, i) - 1.0).abs() < 1e-12);
            }
            prop_assert!(s.data().iter().all(|v| v.abs() <= 1.0));
        }
    }
}
