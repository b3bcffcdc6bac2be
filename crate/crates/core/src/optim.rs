//! Adam, AdamW and Stiefel-Adam parameter updates.
//!
//! All steps are functional: they take the current state and return the
//! updated parameter together with the next state.

use alloc::format;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::manifold::{project_tangent, retract_qr, StiefelPoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay; only [`adamw_step`] reads it.
    pub weight_decay: f64,
}

impl AdamHyper {
    pub fn new(lr: f64) -> Self {
        AdamHyper {
            lr,
            ..Self::default()
        }
    }

    pub fn with_weight_decay(self, weight_decay: f64) -> Self {
        AdamHyper {
            weight_decay,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("lr", self.lr),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("eps", self.eps),
            ("weight_decay", self.weight_decay),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Config(format!("{name} must be finite")));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {beta}")));
            }
        }
        if self.eps <= 0.0 {
            return Err(Error::Config(format!("eps must be > 0, got {}", self.eps)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

impl Default for AdamHyper {
    /// lr 1e-4 with the conventional Adam moments (0.9, 0.999, 1e-8).
    fn default() -> Self {
        AdamHyper {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moments plus the step counter for one parameter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Matrix,
    pub v: Matrix,
    pub t: u64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        AdamState {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            t: 0,
        }
    }

    pub fn for_param(param: &Matrix) -> Self {
        Self::new(param.rows(), param.cols())
    }
}

/// Moment update followed by the bias-corrected direction `m̂ / (√v̂ + ε)`.
fn preconditioned(state: &AdamState, param_shape: (usize, usize), grad: &Matrix, h: &AdamHyper) -> Result<(Matrix, AdamState)> {
    if state.m.shape() != param_shape || state.v.shape() != param_shape {
        return Err(Error::shape("adam state", state.m.shape(), param_shape));
    }
    if grad.shape() != param_shape {
        return Err(Error::shape("adam gradient", param_shape, grad.shape()));
    }
    let t = state.t + 1;
    if let Some((row, col)) = grad.first_non_finite() {
        return Err(Error::NonFiniteGradient { step: t, row, col });
    }

    let m = state.m.zip_map(grad, |m, g| h.beta1 * m + (1.0 - h.beta1) * g)?;
    let v = state.v.zip_map(grad, |v, g| h.beta2 * v + (1.0 - h.beta2) * g * g)?;
    let bias1 = 1.0 - libm::pow(h.beta1, t as f64);
    let bias2 = 1.0 - libm::pow(h.beta2, t as f64);
    let direction = m.zip_map(&v, |m, v| {
        let m_hat = m / bias1;
        let v_hat = v / bias2;
        m_hat / (libm::sqrt(v_hat) + h.eps)
    })?;
    Ok((direction, AdamState { m, v, t }))
}

/// One Adam step with bias correction.
pub fn adam_step(state: &AdamState, param: &Matrix, grad: &Matrix, h: &AdamHyper) -> Result<(Matrix, AdamState)> {
    let (direction, next) = preconditioned(state, param.shape(), grad, h)?;
    let updated = param.zip_map(&direction, |p, d| p - h.lr * d)?;
    Ok((updated, next))
}

/// Adam followed by decoupled weight decay `− lr·λ·param` on the pre-step value.
pub fn adamw_step(state: &AdamState, param: &Matrix, grad: &Matrix, h: &AdamHyper) -> Result<(Matrix, AdamState)> {
    let (stepped, next) = adam_step(state, param, grad, h)?;
    if h.weight_decay == 0.0 {
        return Ok((stepped, next));
    }
    let decay = h.lr * h.weight_decay;
    let updated = stepped.zip_map(param, |s, p| s - decay * p)?;
    Ok((updated, next))
}

/// Adam on the Stiefel manifold.
///
/// Moments are accumulated in the ambient space from the Euclidean gradient.
/// The preconditioned direction `M' = m̂/(√v̂ + ε)` is projected onto the
/// tangent space at `b`, and the point moves to `qf(b − lr·ξ)`.
pub fn stiefel_adam_step(state: &AdamState, b: &StiefelPoint, grad: &Matrix, h: &AdamHyper) -> Result<(StiefelPoint, AdamState)> {
    if h.weight_decay != 0.0 {
        return Err(Error::Config(format!(
            "weight decay is not defined on the Stiefel manifold (got {})",
            h.weight_decay
        )));
    }
    let (direction, next) = preconditioned(state, b.shape(), grad, h)?;
    let xi = project_tangent(b, &direction)?;
    let updated = retract_qr(b, &xi.direction.scale(-h.lr)).map_err(|e| e.at_step(next.t))?;
    Ok((updated, next))
}
