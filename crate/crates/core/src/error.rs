use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("rank-deficient QR at column {column}: |R[{column},{column}]| = {diag:e}{}", step_norm.map(|n| alloc::format!(" (step norm {n:e})")).unwrap_or_default())]
    RankDeficient {
        column: usize,
        diag: f64,
        step_norm: Option<f64>,
    },

    #[error("non-finite gradient entry at ({row}, {col}) on optimizer step {step}")]
    NonFiniteGradient { step: u64, row: usize, col: usize },

    #[error("non-finite loss")]
    NonFiniteLoss,

    #[error("degenerate column {column}: norm {norm:e}")]
    DegenerateColumn { column: usize, norm: f64 },

    #[error("matrix is not on the Stiefel manifold: ||BᵀB - I||_F = {error:e}")]
    NotOnManifold { error: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("step {step}: {source}")]
    AtStep {
        step: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Numerical failures (as opposed to shape or configuration problems).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::RankDeficient { .. }
            | Error::NonFiniteGradient { .. }
            | Error::NonFiniteLoss
            | Error::DegenerateColumn { .. }
            | Error::NotOnManifold { .. } => true,
            Error::AtStep { source, .. } => source.is_numerical(),
            Error::Shape { .. } | Error::Config(_) => false,
        }
    }

    pub(crate) fn at_step(self, step: u64) -> Self {
        match self {
            e @ Error::AtStep { .. } => e,
            e => Error::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: (usize, usize), rhs: (usize, usize)) -> Self {
        Error::Shape { op, lhs, rhs }
    }
}
