//! Geometry of the Stiefel manifold `St(d, r) = {B ∈ ℝ^{d×r} : BᵀB = I_r}`.
//!
//! Tangent vectors at `B` are the `ξ` with `Bᵀξ` skew-symmetric. Ambient
//! directions are mapped onto the tangent space with the Euclidean-metric
//! projection `ξ = M − B·sym(BᵀM)`, and steps are mapped back onto the
//! manifold with the QR retraction `R_B(Δ) = qf(B + Δ)`.

use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, gaussian_matrix, matmul, matmul_tn, qf, sym, Matrix};
use crate::rng::RngState;

/// Tolerance on `‖BᵀB − I‖_F` for accepting a matrix as a manifold point.
pub const MANIFOLD_TOLERANCE: f64 = 1e-10;

/// A `d × r` matrix (`d ≥ r`) with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint(Matrix);

impl StiefelPoint {
    /// Validates orthonormality to within [`MANIFOLD_TOLERANCE`].
    pub fn new(value: Matrix) -> Result<Self> {
        if value.rows() < value.cols() {
            return Err(Error::shape("StiefelPoint::new", value.shape(), (value.cols(), value.cols())));
        }
        let error = ortho_error(&value);
        if error.is_nan() || error > MANIFOLD_TOLERANCE {
            return Err(Error::NotOnManifold { error });
        }
        Ok(StiefelPoint(value))
    }

    pub fn value(&self) -> &Matrix {
        &self.0
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }
}

/// A direction in the tangent space at `at`.
#[derive(Debug, Clone)]
pub struct TangentVector<'a> {
    pub at: &'a StiefelPoint,
    pub direction: Matrix,
}

impl TangentVector<'_> {
    /// `‖Bᵀξ + ξᵀB‖_F`, zero for an exact tangent vector.
    pub fn skew_residual(&self) -> f64 {
        let bt_xi = matmul_tn(self.at.value(), &self.direction).expect("tangent shape");
        frobenius_norm(&bt_xi.add(&bt_xi.transpose()).expect("square"))
    }
}

/// `qf` of a `d × r` standard Gaussian matrix.
pub fn random_stiefel(d: usize, r: usize, rng: &mut RngState) -> Result<StiefelPoint> {
    if d < r || r == 0 {
        return Err(Error::shape("random_stiefel", (d, r), (r, r)));
    }
    let q = qf(&gaussian_matrix(d, r, rng))?;
    Ok(StiefelPoint(q))
}

/// `‖bᵀb − I‖_F`.
pub fn ortho_error(b: &Matrix) -> f64 {
    let mut gram = matmul_tn(b, b).expect("bᵀb is always defined");
    for i in 0..gram.rows() {
        gram[(i, i)] -= 1.0;
    }
    frobenius_norm(&gram)
}

/// Euclidean-metric projection of `ambient` onto the tangent space at `b`.
pub fn project_tangent<'a>(b: &'a StiefelPoint, ambient: &Matrix) -> Result<TangentVector<'a>> {
    if ambient.shape() != b.shape() {
        return Err(Error::shape("project_tangent", b.shape(), ambient.shape()));
    }
    let s = sym(&matmul_tn(b.value(), ambient)?)?;
    let direction = ambient.sub(&matmul(b.value(), &s)?)?;
    Ok(TangentVector { at: b, direction })
}

/// QR retraction `qf(b + step)`.
///
/// The caller picks the sign and scale of `step`; the descent step of the
/// Stiefel optimizer is `−lr·ξ`.
pub fn retract_qr(b: &StiefelPoint, step: &Matrix) -> Result<StiefelPoint> {
    if step.shape() != b.shape() {
        return Err(Error::shape("retract_qr", b.shape(), step.shape()));
    }
    let moved = b.value().add(step)?;
    match qf(&moved) {
        Ok(q) => Ok(StiefelPoint(q)),
        Err(Error::RankDeficient { column, diag, .. }) => Err(Error::RankDeficient {
            column,
            diag,
            step_norm: Some(frobenius_norm(step)),
        }),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn random_points_are_orthonormal() {
        let mut rng = RngState::new(1);
        let square = random_stiefel(6, 6, &mut rng).unwrap();
        assert!(ortho_error(square.value()) < 1e-12);

        let v = random_stiefel(2, 1, &mut rng).unwrap();
        let n = v.value()[(0, 0)].hypot(v.value()[(1, 0)]);
        assert!((n - 1.0).abs() < 1e-15);

        let a = random_stiefel(5, 2, &mut RngState::new(9)).unwrap();
        let b = random_stiefel(5, 2, &mut RngState::new(9)).unwrap();
        assert_eq!(a, b);

        assert!(matches!(random_stiefel(2, 3, &mut rng), Err(Error::Shape { .. })));
    }

    #[test]
    fn ortho_error_examples() {
        let dup = Matrix::from_rows(&[[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]]).unwrap();
        assert!((ortho_error(&dup) - 2f64.sqrt()).abs() < 1e-15);
        assert!((ortho_error(&Matrix::zeros(5, 3)) - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn construction_rejects_off_manifold() {
        assert!(matches!(
            StiefelPoint::new(Matrix::zeros(3, 2)),
            Err(Error::NotOnManifold { .. })
        ));
        assert!(StiefelPoint::new(Matrix::identity(3)).is_ok());
    }

    #[test]
    fn projecting_the_point_itself_gives_zero() {
        let b = random_stiefel(7, 3, &mut RngState::new(4)).unwrap();
        let xi = project_tangent(&b, b.value()).unwrap();
        assert!(frobenius_norm(&xi.direction) < 1e-14);
    }

    #[test]
    fn projection_shape_mismatch() {
        let b = random_stiefel(4, 2, &mut RngState::new(4)).unwrap();
        assert!(matches!(
            project_tangent(&b, &Matrix::zeros(4, 3)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn unit_circle_retraction() {
        let b = StiefelPoint::new(Matrix::column_vector(&[1.0, 0.0])).unwrap();
        for t in [0.1, -0.7, 3.0] {
            let out = retract_qr(&b, &Matrix::column_vector(&[0.0, t])).unwrap();
            let n = (1.0 + t * t).sqrt();
            assert!((out.value()[(0, 0)] - 1.0 / n).abs() < 1e-15);
            assert!((out.value()[(1, 0)] - t / n).abs() < 1e-15);
        }
    }

    #[test]
    fn rank_deficient_step_reports_norm() {
        let b = StiefelPoint::new(Matrix::column_vector(&[1.0, 0.0])).unwrap();
        let err = retract_qr(&b, &Matrix::column_vector(&[-1.0, 0.0])).unwrap_err();
        match err {
            Error::RankDeficient { column: 0, step_norm: Some(n), .. } => assert_eq!(n, 1.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn projection_properties(seed in any::<u64>(), d in 2usize..9, r in 1usize..5) {
            let r = r.min(d);
            let mut rng = RngState::new(seed);
            let b = random_stiefel(d, r, &mut rng).unwrap();
            let ambient = gaussian_matrix(d, r, &mut rng);
            let xi = project_tangent(&b, &ambient).unwrap();
            prop_assert!(xi.skew_residual() < 1e-12);

            let again = project_tangent(&b, &xi.direction).unwrap();
            prop_assert!(frobenius_norm(&again.direction.sub(&xi.direction).unwrap()) < 1e-12);

            // the residual is normal to every tangent vector
            let residual = ambient.sub(&xi.direction).unwrap();
            let probe = project_tangent(&b, &gaussian_matrix(d, r, &mut rng)).unwrap();
            prop_assert!(residual.inner(&probe.direction).unwrap().abs() < 1e-10);
        }

        #[test]
        fn retraction_stays_on_manifold(seed in any::<u64>(), d in 2usize..9, r in 1usize..5, scale in 0.0f64..50.0) {
            let r = r.min(d);
            let mut rng = RngState::new(seed);
            let b = random_stiefel(d, r, &mut rng).unwrap();
            let step = gaussian_matrix(d, r, &mut rng).scale(scale);
            if let Ok(next) = retract_qr(&b, &step) {
                prop_assert!(ortho_error(next.value()) < 1e-10);
            }
        }
    }
}
