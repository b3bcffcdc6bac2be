//! LoRA and DoRA adapters over a frozen base weight.
//!
//! The adapted weight is `W = W0 + s·B·A` with `W0 ∈ ℝ^{d×k}` frozen,
//! `B ∈ ℝ^{d×r}` and `A ∈ ℝ^{r×k}`. DoRA rescales every column of `W` to a
//! fixed per-column magnitude. In Stiefel mode `B` keeps orthonormal columns,
//! so the adapter starts from a random orthonormal `B` and `A = 0`; that keeps
//! `ΔW = 0` at initialization while staying on the manifold.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{gaussian_matrix, matmul, matmul_nt, matmul_tn, Matrix};
use crate::manifold::{random_stiefel, StiefelPoint};
use crate::rng::RngState;

/// Column norms below this make the DoRA direction undefined.
pub const DORA_NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Lora,
    Dora,
}

/// How `scaling` is derived from `alpha` and the rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScalingRule {
    /// `alpha / r`
    #[default]
    Standard,
    /// `alpha / √r`
    RankStabilized,
}

impl ScalingRule {
    pub fn scaling(self, alpha: f64, rank: usize) -> f64 {
        match self {
            ScalingRule::Standard => alpha / rank as f64,
            ScalingRule::RankStabilized => alpha / libm::sqrt(rank as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BMode {
    Stiefel,
    Euclidean,
}

/// The `B` factor, either constrained to the manifold or free.
#[derive(Debug, Clone, PartialEq)]
pub enum BFactor {
    Stiefel(StiefelPoint),
    Euclidean(Matrix),
}

impl BFactor {
    pub fn matrix(&self) -> &Matrix {
        match self {
            BFactor::Stiefel(p) => p.value(),
            BFactor::Euclidean(m) => m,
        }
    }

    pub fn mode(&self) -> BMode {
        match self {
            BFactor::Stiefel(_) => BMode::Stiefel,
            BFactor::Euclidean(_) => BMode::Euclidean,
        }
    }
}

/// Construction parameters shared by every layer of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdapterInit {
    pub rank: usize,
    pub alpha: f64,
    pub mode: BMode,
    pub variant: Variant,
    pub train_a: bool,
    pub scaling_rule: ScalingRule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    w0: Matrix,
    a: Matrix,
    b: BFactor,
    alpha: f64,
    rank: usize,
    scaling: f64,
    scaling_rule: ScalingRule,
    train_a: bool,
    variant: Variant,
    dora_magnitude: Option<Vec<f64>>,
}

impl LoraAdapter {
    /// Fresh adapter on top of `w0`.
    ///
    /// Stiefel mode draws `B` uniformly from `St(d, r)`; Euclidean mode draws
    /// `B ~ N(0, 1/d)`. `A` is zero unless `train_a` is false (static-A), in
    /// which case `A ~ N(0, 1/r)` and is never updated.
    pub fn init(w0: Matrix, init: &AdapterInit, rng: &mut RngState) -> Result<Self> {
        let (d, k) = w0.shape();
        check_rank(init.rank, d, k)?;
        let r = init.rank;
        let b = match init.mode {
            BMode::Stiefel => BFactor::Stiefel(random_stiefel(d, r, rng)?),
            BMode::Euclidean => BFactor::Euclidean(gaussian_matrix(d, r, rng).scale(1.0 / libm::sqrt(d as f64))),
        };
        let a = if init.train_a {
            Matrix::zeros(r, k)
        } else {
            gaussian_matrix(r, k, rng).scale(1.0 / libm::sqrt(r as f64))
        };
        let dora_magnitude = match init.variant {
            Variant::Lora => None,
            Variant::Dora => Some(w0.column_norms()),
        };
        Self::from_parts(w0, a, b, init.alpha, init.scaling_rule, init.train_a, init.variant, dora_magnitude)
    }

    /// Reassembles an adapter from its stored factors (checkpoint loading).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        w0: Matrix,
        a: Matrix,
        b: BFactor,
        alpha: f64,
        scaling_rule: ScalingRule,
        train_a: bool,
        variant: Variant,
        dora_magnitude: Option<Vec<f64>>,
    ) -> Result<Self> {
        let (d, k) = w0.shape();
        let rank = a.rows();
        check_rank(rank, d, k)?;
        if a.cols() != k {
            return Err(Error::shape("adapter A", (rank, k), a.shape()));
        }
        if b.matrix().shape() != (d, rank) {
            return Err(Error::shape("adapter B", (d, rank), b.matrix().shape()));
        }
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::Config(format!("alpha must be finite and > 0, got {alpha}")));
        }
        match (variant, &dora_magnitude) {
            (Variant::Lora, None) => {}
            (Variant::Dora, Some(mag)) if mag.len() == k => {}
            (Variant::Dora, Some(mag)) => return Err(Error::shape("dora magnitude", (k, 1), (mag.len(), 1))),
            (Variant::Dora, None) => return Err(Error::Config("dora adapter needs a magnitude vector".into())),
            (Variant::Lora, Some(_)) => return Err(Error::Config("lora adapter cannot carry a magnitude vector".into())),
        }
        Ok(LoraAdapter {
            w0,
            a,
            b,
            alpha,
            rank,
            scaling: scaling_rule.scaling(alpha, rank),
            scaling_rule,
            train_a,
            variant,
            dora_magnitude,
        })
    }

    pub fn w0(&self) -> &Matrix {
        &self.w0
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &BFactor {
        &self.b
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn scaling(&self) -> f64 {
        self.scaling
    }

    pub fn scaling_rule(&self) -> ScalingRule {
        self.scaling_rule
    }

    pub fn train_a(&self) -> bool {
        self.train_a
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn dora_magnitude(&self) -> Option<&[f64]> {
        self.dora_magnitude.as_deref()
    }

    pub fn input_dim(&self) -> usize {
        self.w0.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w0.rows()
    }

    pub(crate) fn set_a(&mut self, a: Matrix) {
        debug_assert_eq!(a.shape(), self.a.shape());
        self.a = a;
    }

    pub(crate) fn set_b(&mut self, b: BFactor) {
        debug_assert_eq!(b.matrix().shape(), self.b.matrix().shape());
        self.b = b;
    }

    /// `ΔW = s·B·A`.
    pub fn delta_w(&self) -> Matrix {
        matmul(self.b.matrix(), &self.a).expect("adapter shapes").scale(self.scaling)
    }

    /// `W0 + s·B·A`, before any DoRA normalization.
    fn merged(&self) -> Matrix {
        self.w0.add(&self.delta_w()).expect("adapter shapes")
    }

    fn dora_norms(&self, merged: &Matrix) -> Result<Vec<f64>> {
        let norms = merged.column_norms();
        if let Some((column, &norm)) = norms.iter().enumerate().find(|(_, &n)| n.is_nan() || n < DORA_NORM_FLOOR) {
            return Err(Error::DegenerateColumn { column, norm });
        }
        Ok(norms)
    }

    /// The dense weight the layer applies: `W0 + s·B·A` for LoRA, and that
    /// matrix with column `j` rescaled to norm `magnitude[j]` for DoRA.
    pub fn dense_effective_weight(&self) -> Result<Matrix> {
        let merged = self.merged();
        match &self.dora_magnitude {
            None => Ok(merged),
            Some(mag) => {
                let norms = self.dora_norms(&merged)?;
                let factors: Vec<f64> = mag.iter().zip(&norms).map(|(m, n)| m / n).collect();
                merged.scale_columns(&factors)
            }
        }
    }

    /// Layer output for a batch `x` of shape `k × N`.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.input_dim() {
            return Err(Error::shape("forward", self.w0.shape(), x.shape()));
        }
        matmul(&self.dense_effective_weight()?, x)
    }

    /// Euclidean gradients `(∂L/∂A, ∂L/∂B)` given `upstream = ∂L/∂output`.
    ///
    /// In static-A mode the `A` gradient is an all-zero placeholder.
    pub fn gradients(&self, x: &Matrix, upstream: &Matrix) -> Result<(Matrix, Matrix)> {
        let (d, k) = self.w0.shape();
        if x.rows() != k {
            return Err(Error::shape("gradients input", (k, upstream.cols()), x.shape()));
        }
        if upstream.shape() != (d, x.cols()) {
            return Err(Error::shape("gradients upstream", (d, x.cols()), upstream.shape()));
        }
        // gradient w.r.t. the weight the layer applies
        let g_eff = matmul_nt(upstream, x)?;
        let g_merged = match &self.dora_magnitude {
            None => g_eff,
            Some(mag) => {
                let merged = self.merged();
                let norms = self.dora_norms(&merged)?;
                dora_backward(&merged, &norms, mag, &g_eff)
            }
        };
        let grad_b = matmul_nt(&g_merged, &self.a)?.scale(self.scaling);
        let grad_a = if self.train_a {
            matmul_tn(self.b.matrix(), &g_merged)?.scale(self.scaling)
        } else {
            Matrix::zeros(self.a.rows(), self.a.cols())
        };
        Ok((grad_a, grad_b))
    }

    /// `∂L/∂x = Wᵀ·upstream`, for chaining layers.
    pub fn input_gradient(&self, upstream: &Matrix) -> Result<Matrix> {
        matmul_tn(&self.dense_effective_weight()?, upstream)
    }
}

/// Pulls a gradient on `V·diag(m/‖v_j‖)` back to `V`:
/// `∂L/∂v_j = (m_j/‖v_j‖)·(g_j − (v_jᵀg_j/‖v_j‖²)·v_j)`.
fn dora_backward(merged: &Matrix, norms: &[f64], magnitude: &[f64], g: &Matrix) -> Matrix {
    let (rows, cols) = merged.shape();
    let mut proj = alloc::vec![0.0; cols];
    for i in 0..rows {
        for j in 0..cols {
            proj[j] += merged[(i, j)] * g[(i, j)];
        }
    }
    let mut out = Matrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let n = norms[j];
            out[(i, j)] = magnitude[j] / n * (g[(i, j)] - proj[j] / (n * n) * merged[(i, j)]);
        }
    }
    out
}

fn check_rank(rank: usize, d: usize, k: usize) -> Result<()> {
    if rank == 0 || rank > d.min(k) {
        return Err(Error::Config(format!(
            "rank {rank} must be in 1..={} for a {d}x{k} base weight",
            d.min(k)
        )));
    }
    Ok(())
}
