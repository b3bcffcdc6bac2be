//! Spectral-entropy effective rank, column cosine similarity and the
//! per-step metrics record built from them.

use alloc::format;
use alloc::vec::Vec;

use crate::adapters::LoraAdapter;
use crate::error::{Error, Result};
use crate::linalg::{singular_values, Matrix};
use crate::manifold::ortho_error;

/// Singular values at or below this are treated as zero.
pub const EFFECTIVE_RANK_EPS: f64 = 1e-9;

/// Column norms below this make cosine similarity undefined.
const COLUMN_NORM_FLOOR: f64 = 1e-300;

/// `exp(H(p))` where `p` is the singular-value distribution of `m`
/// restricted to values above `eps`.
///
/// Returns 0 when no singular value exceeds `eps` or their sum is below it.
pub fn effective_rank(m: &Matrix, eps: f64) -> f64 {
    let positive: Vec<f64> = singular_values(m).into_iter().filter(|&s| s > eps).collect();
    if positive.is_empty() {
        return 0.0;
    }
    let total: f64 = positive.iter().sum();
    if total < eps {
        return 0.0;
    }
    let entropy: f64 = positive
        .iter()
        .map(|s| s / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * libm::log(p))
        .sum();
    libm::exp(entropy)
}

fn unit_columns(b: &Matrix) -> Result<Vec<Vec<f64>>> {
    b.column_norms()
        .iter()
        .enumerate()
        .map(|(j, &norm)| {
            if norm.is_nan() || norm < COLUMN_NORM_FLOOR {
                return Err(Error::DegenerateColumn { column: j, norm });
            }
            Ok(b.column(j).into_iter().map(|x| x / norm).collect())
        })
        .collect()
}

fn cosine(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0)
}

/// Population mean and standard deviation of the cosine similarity over all
/// unordered column pairs `i < j`.
pub fn cosine_stats(b: &Matrix) -> Result<(f64, f64)> {
    if b.cols() < 2 {
        return Err(Error::Config(format!(
            "cosine statistics need at least two columns, got {}",
            b.cols()
        )));
    }
    let cols = unit_columns(b)?;
    let mut values = Vec::with_capacity(cols.len() * (cols.len() - 1) / 2);
    for i in 0..cols.len() {
        for j in i + 1..cols.len() {
            values.push(cosine(&cols[i], &cols[j]));
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;
    Ok((mean, libm::sqrt(var)))
}

/// Full `r × r` matrix of column cosines, symmetric with unit diagonal.
pub fn cosine_matrix(b: &Matrix) -> Result<Matrix> {
    let cols = unit_columns(b)?;
    let r = cols.len();
    let mut out = Matrix::identity(r);
    for i in 0..r {
        for j in i + 1..r {
            let c = cosine(&cols[i], &cols[j]);
            out[(i, j)] = c;
            out[(j, i)] = c;
        }
    }
    Ok(out)
}

/// One row of the metrics timeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub layer_index: usize,
    pub loss: f64,
    pub ortho_error_b: f64,
    pub eff_rank_b: f64,
    pub eff_rank_a: f64,
    /// Effective rank of `ΔW = s·B·A`.
    pub eff_rank_dw: f64,
    pub cos_mean: f64,
    pub cos_std: f64,
}

/// Measures an adapter without modifying it.
///
/// With a single column there are no pairs; the cosine statistics are then
/// reported as 0.
pub fn snapshot(adapter: &LoraAdapter, step: u64, loss: f64, layer_index: usize) -> Result<MetricsRecord> {
    let b = adapter.b().matrix();
    let (cos_mean, cos_std) = if b.cols() < 2 { (0.0, 0.0) } else { cosine_stats(b)? };
    Ok(MetricsRecord {
        step,
        layer_index,
        loss,
        ortho_error_b: ortho_error(b),
        eff_rank_b: effective_rank(b, EFFECTIVE_RANK_EPS),
        eff_rank_a: effective_rank(adapter.a(), EFFECTIVE_RANK_EPS),
        eff_rank_dw: effective_rank(&adapter.delta_w(), EFFECTIVE_RANK_EPS),
        cos_mean,
        cos_std,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{AdapterInit, BMode, ScalingRule, Variant};
    use crate::linalg::{gaussian_matrix, matmul};
    use crate::manifold::random_stiefel;
    use crate::rng::RngState;
    use proptest::prelude::*;

    #[test]
    fn effective_rank_examples() {
        for n in [1usize, 3, 7] {
            assert!((effective_rank(&Matrix::identity(n), EFFECTIVE_RANK_EPS) - n as f64).abs() < 1e-12);
        }
        let u = Matrix::column_vector(&[1.0, -2.0, 0.5]);
        let v = Matrix::from_rows(&[[3.0, 1.0, 4.0, 1.0]]).unwrap();
        let outer = matmul(&u, &v).unwrap();
        assert!((effective_rank(&outer, EFFECTIVE_RANK_EPS) - 1.0).abs() < 1e-12);
        assert_eq!(effective_rank(&Matrix::zeros(4, 3), EFFECTIVE_RANK_EPS), 0.0);
        // p = (1/2, 1/4, 1/4) ⇒ H = 1.5 ln 2
        let r = effective_rank(&Matrix::diag(&[2.0, 1.0, 1.0]), EFFECTIVE_RANK_EPS);
        assert!((r - 2.0f64.powf(1.5)).abs() < 1e-10);
    }

    #[test]
    fn tiny_singular_values_are_filtered() {
        assert!((effective_rank(&Matrix::diag(&[1.0, 1e-10]), EFFECTIVE_RANK_EPS) - 1.0).abs() < 1e-15);
        assert_eq!(effective_rank(&Matrix::diag(&[5e-10, 5e-10]), EFFECTIVE_RANK_EPS), 0.0);
    }

    #[test]
    fn cosine_examples() {
        let b = random_stiefel(8, 4, &mut RngState::new(0)).unwrap();
        let (mean, std) = cosine_stats(b.value()).unwrap();
        assert!(mean.abs() < 1e-10 && std < 1e-10);

        let dup = Matrix::from_rows(&[[1.0, 1.0], [2.0, 2.0]]).unwrap();
        let (mean, std) = cosine_stats(&dup).unwrap();
        assert!((mean - 1.0).abs() < 1e-15);
        assert!(std < 1e-15);

        let b = Matrix::from_rows(&[[1.0, 1.0], [0.0, 1.0]]).unwrap();
        let (mean, std) = cosine_stats(&b).unwrap();
        assert!((mean - core::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(std, 0.0);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(cosine_stats(&Matrix::column_vector(&[1.0, 2.0, 3.0])), Err(Error::Config(_))));
        let b = Matrix::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        assert!(matches!(cosine_stats(&b), Err(Error::DegenerateColumn { column: 1, .. })));
    }

    #[test]
    fn cosine_matrix_shape() {
        let b = gaussian_matrix(6, 3, &mut RngState::new(1));
        let c = cosine_matrix(&b).unwrap();
        assert_eq!(c, c.transpose());
        for i in 0..3 {
            assert_eq!(c[(i, i)], 1.0);
        }
    }

    #[test]
    fn fresh_stiefel_snapshot() {
        let mut rng = RngState::new(4);
        let w0 = gaussian_matrix(12, 10, &mut rng);
        let init = AdapterInit {
            rank: 4,
            alpha: 8.0,
            mode: BMode::Stiefel,
            variant: Variant::Lora,
            train_a: true,
            scaling_rule: ScalingRule::Standard,
        };
        let ad = LoraAdapter::init(w0, &init, &mut rng).unwrap();
        let rec = snapshot(&ad, 0, 0.0, 0).unwrap();
        assert!(rec.ortho_error_b < 1e-10);
        assert!((rec.eff_rank_b - 4.0).abs() < 1e-9);
        assert_eq!(rec.eff_rank_dw, 0.0);
        assert_eq!(rec.eff_rank_a, 0.0);
    }

    proptest! {
        #[test]
        fn scale_invariance(seed in any::<u64>(), rows in 1usize..8, cols in 1usize..8, c in 1e-3f64..1e3) {
            let m = gaussian_matrix(rows, cols, &mut RngState::new(seed));
            let a = effective_rank(&m, EFFECTIVE_RANK_EPS);
            let b = effective_rank(&m.scale(c), EFFECTIVE_RANK_EPS);
            prop_assert!((a - b).abs() < 1e-10);
            prop_assert!(a <= rows.min(cols) as f64 + 1e-12);
        }

        #[test]
        fn bounded_by_count_with_equality_for_flat_spectra(values in proptest::collection::vec(0.01f64..10.0, 1..8), flat in any::<bool>()) {
            let spectrum: Vec<f64> = if flat { alloc::vec![values[0]; values.len()] } else { values.clone() };
            let r = effective_rank(&Matrix::diag(&spectrum), EFFECTIVE_RANK_EPS);
            let n = spectrum.len() as f64;
            prop_assert!(r <= n + 1e-12);
            let max = spectrum.iter().cloned().fold(f64::MIN, f64::max);
            let min = spectrum.iter().cloned().fold(f64::MAX, f64::min);
            if flat {
                prop_assert!((r - n).abs() < 1e-12);
            } else if max / min > 1.01 {
                prop_assert!(r < n);
            }
        }
    }
}
