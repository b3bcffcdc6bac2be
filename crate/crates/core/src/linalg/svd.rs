//! Singular values by one-sided (Hestenes) Jacobi rotations.

use alloc::vec::Vec;

use super::Matrix;

const MAX_SWEEPS: usize = 80;
/// Rotate a column pair while `|aᵢ·aⱼ| > TOL·‖aᵢ‖‖aⱼ‖`.
const ORTHOGONALITY_TOL: f64 = 1e-15;

/// All `min(rows, cols)` singular values of `m`, non-negative and sorted
/// descending.
///
/// Columns are orthogonalized pairwise until every Gram off-diagonal is
/// negligible relative to the column norms; the singular values are then the
/// column norms. Small singular values keep high relative accuracy, which
/// matters for the entropy in [`crate::effective_rank`].
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    // Work on the orientation with fewer columns; singular values are
    // invariant under transposition.
    let tall = if m.rows() >= m.cols() { m.clone() } else { m.transpose() };
    let (rows, n) = tall.shape();

    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| tall.column(j)).collect();
    let mut norms: Vec<f64> = cols.iter().map(|c| dot(c, c)).collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(&cols[p], &cols[q]);
                if gamma.abs() <= ORTHOGONALITY_TOL * libm::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                let (cp, cq) = (&mut left[p], &mut right[0]);
                for i in 0..rows {
                    let x = cp[i];
                    let y = cq[i];
                    cp[i] = c * x - s * y;
                    cq[i] = s * x + c * y;
                }
                norms[p] = dot(&cols[p], &cols[p]);
                norms[q] = dot(&cols[q], &cols[q]);
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sv: Vec<f64> = norms.into_iter().map(libm::sqrt).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
