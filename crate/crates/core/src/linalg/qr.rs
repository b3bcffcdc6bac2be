//! Householder QR with a positive-diagonal post-pass.

use alloc::vec::Vec;

use super::Matrix;
use crate::error::{Error, Result};

/// `|R_ii|` below this makes the factorization (and hence the retraction)
/// ill-posed.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Thin QR factorization `m = q·r` of a tall matrix.
///
/// `q` is `rows × cols` with orthonormal columns and `r` is `cols × cols`
/// upper triangular with a strictly positive diagonal. The sign convention
/// makes the factorization unique, so `qf` leaves a matrix with orthonormal
/// columns unchanged.
pub fn qr_positive(m: &Matrix) -> Result<(Matrix, Matrix)> {
    let (rows, cols) = m.shape();
    if rows < cols || cols == 0 {
        return Err(Error::shape("qr_positive", m.shape(), (cols, cols)));
    }

    let mut work = m.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(cols);
    let mut diag = Vec::with_capacity(cols);

    for j in 0..cols {
        let norm = libm::sqrt((j..rows).map(|i| work[(i, j)] * work[(i, j)]).sum::<f64>());
        let head = work[(j, j)];
        let alpha = if head >= 0.0 { -norm } else { norm };
        if norm < RANK_TOLERANCE {
            return Err(Error::RankDeficient {
                column: j,
                diag: norm,
                step_norm: None,
            });
        }

        // v = x - alpha e1, normalized
        let mut v: Vec<f64> = (j..rows).map(|i| work[(i, j)]).collect();
        v[0] -= alpha;
        let v_norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        for x in &mut v {
            *x /= v_norm;
        }

        work[(j, j)] = alpha;
        for i in j + 1..rows {
            work[(i, j)] = 0.0;
        }
        for c in j + 1..cols {
            let dot: f64 = v.iter().enumerate().map(|(o, vi)| vi * work[(j + o, c)]).sum();
            for (o, vi) in v.iter().enumerate() {
                work[(j + o, c)] -= 2.0 * vi * dot;
            }
        }
        diag.push(alpha);
        reflectors.push(v);
    }

    // Q = H_0 H_1 ... H_{n-1} applied to the first `cols` columns of I.
    let mut q = Matrix::zeros(rows, cols);
    for j in 0..cols {
        q[(j, j)] = 1.0;
    }
    for j in (0..cols).rev() {
        let v = &reflectors[j];
        for c in 0..cols {
            let dot: f64 = v.iter().enumerate().map(|(o, vi)| vi * q[(j + o, c)]).sum();
            if dot == 0.0 {
                continue;
            }
            for (o, vi) in v.iter().enumerate() {
                q[(j + o, c)] -= 2.0 * vi * dot;
            }
        }
    }

    let mut r = Matrix::zeros(cols, cols);
    for i in 0..cols {
        for j in i..cols {
            r[(i, j)] = work[(i, j)];
        }
    }

    for (i, &d) in diag.iter().enumerate() {
        if d < 0.0 {
            for j in i..cols {
                r[(i, j)] = -r[(i, j)];
            }
            for row in 0..rows {
                q[(row, i)] = -q[(row, i)];
            }
        }
    }

    Ok((q, r))
}

/// The orthonormal factor of [`qr_positive`].
pub fn qf(m: &Matrix) -> Result<Matrix> {
    qr_positive(m).map(|(q, _)| q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{frobenius_norm, gaussian_matrix, matmul, matmul_tn};
    use crate::rng::RngState;
    use proptest::prelude::*;

    fn ortho_residual(q: &Matrix) -> f64 {
        let g = matmul_tn(q, q).unwrap();
        frobenius_norm(&g.sub(&Matrix::identity(q.cols())).unwrap())
    }

    #[test]
    fn identity_and_diagonal() {
        let (q, r) = qr_positive(&Matrix::identity(3)).unwrap();
        assert_eq!(q, Matrix::identity(3));
        assert_eq!(r, Matrix::identity(3));

        let (q, r) = qr_positive(&Matrix::diag(&[2.0, 3.0])).unwrap();
        assert_eq!(q, Matrix::identity(2));
        assert_eq!(r, Matrix::diag(&[2.0, 3.0]));
    }

    #[test]
    fn qf_examples() {
        let swap = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let q = qf(&swap).unwrap();
        for (x, y) in q.as_slice().iter().zip(swap.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }

        let q = qf(&Matrix::column_vector(&[3.0, 4.0])).unwrap();
        assert!((q[(0, 0)] - 0.6).abs() < 1e-15);
        assert!((q[(1, 0)] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn orthonormal_input_is_fixed_point() {
        let b = qf(&gaussian_matrix(7, 3, &mut RngState::new(5))).unwrap();
        let again = qf(&b).unwrap();
        for (x, y) in again.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() <= 1e-14);
        }
    }

    #[test]
    fn rank_deficiency_reports_column() {
        let m = Matrix::from_rows(&[[1.0, 2.0, 0.0], [2.0, 4.0, 1.0], [0.0, 0.0, 1.0], [1.0, 2.0, 3.0]])
            .unwrap();
        match qr_positive(&m) {
            Err(Error::RankDeficient { column, .. }) => assert_eq!(column, 1),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
        assert!(matches!(
            qr_positive(&Matrix::zeros(3, 2)),
            Err(Error::RankDeficient { column: 0, .. })
        ));
    }

    #[test]
    fn wide_input_is_a_shape_error() {
        assert!(matches!(qr_positive(&Matrix::zeros(2, 3)), Err(Error::Shape { .. })));
    }

    proptest! {
        #[test]
        fn factorization_properties(seed in any::<u64>(), rows in 1usize..12, extra in 0usize..6) {
            let cols = rows.saturating_sub(extra).max(1);
            let m = gaussian_matrix(rows, cols, &mut RngState::new(seed));
            let (q, r) = qr_positive(&m).unwrap();
            prop_assert!(ortho_residual(&q) < 1e-12);
            let recon = matmul(&q, &r).unwrap();
            prop_assert!(frobenius_norm(&recon.sub(&m).unwrap()) / frobenius_norm(&m) < 1e-12);
            for i in 0..cols {
                prop_assert!(r[(i, i)] > 0.0);
                for j in 0..i {
                    prop_assert_eq!(r[(i, j)], 0.0);
                }
            }
            let q2 = qf(&q).unwrap();
            prop_assert!(frobenius_norm(&q2.sub(&q).unwrap()) < 1e-12);
        }
    }
}
