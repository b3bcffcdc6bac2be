//! Synthetic teacher-student fine-tuning runs.
//!
//! A teacher network `W*_l = W0_l + ΔW*_l` with a known-rank update produces
//! targets for fresh Gaussian batches; a student with the same frozen `W0_l`
//! learns the update through LoRA adapters. Layers are chained with `tanh`
//! (the last layer is linear), layer 0 maps `k → d` and deeper layers `d → d`.
//!
//! Randomness is split into independent streams derived from the seed, so
//! runs that differ only in their optimizer see the same teacher and the
//! same batch sequence.

use alloc::format;
use alloc::vec::Vec;

use crate::adapters::{AdapterInit, BFactor, BMode, LoraAdapter, ScalingRule, Variant};
use crate::diagnostics::{snapshot, MetricsRecord};
use crate::error::{Error, Result};
use crate::linalg::{gaussian_matrix, matmul, Matrix};
use crate::manifold::{ortho_error, random_stiefel};
use crate::optim::{adam_step, adamw_step, stiefel_adam_step, AdamHyper, AdamState};
use crate::rng::RngState;

const TEACHER_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const BATCH_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Adam on `A`, Stiefel-Adam with QR retraction on `B`.
    Stiefel,
    /// Adam on both factors.
    Adam,
    /// AdamW on both factors.
    AdamW,
}

impl OptimizerKind {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Stiefel => "stiefel",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamW => "adamw",
        }
    }

    /// Default `(lr_b, lr_a, weight_decay)`.
    pub fn default_rates(self) -> (f64, f64, f64) {
        match self {
            OptimizerKind::Stiefel => (0.3, 1e-3, 0.0),
            OptimizerKind::Adam => (1e-4, 1e-4, 0.0),
            OptimizerKind::AdamW => (1e-4, 1e-4, 0.01),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Linear decay from `lr` towards zero over the run.
    Linear,
}

impl LrSchedule {
    /// Multiplier for 1-based step `step` of `total`.
    pub fn factor(self, step: u64, total: u64) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Linear => 1.0 - (step - 1) as f64 / total as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub d: usize,
    pub k: usize,
    pub r: usize,
    pub r_star: usize,
    pub alpha: f64,
    pub optimizer: OptimizerKind,
    /// Learning rate for `B` (the manifold step size under Stiefel).
    pub lr: f64,
    /// Learning rate for `A`.
    pub lr_a: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub variant: Variant,
    pub train_a: bool,
    pub lr_schedule: LrSchedule,
    pub metrics_every: u64,
    pub depth: usize,
    /// Singular value of every direction of the teacher update.
    pub teacher_magnitude: f64,
    pub scaling_rule: ScalingRule,
}

impl Default for RunConfig {
    fn default() -> Self {
        let optimizer = OptimizerKind::Stiefel;
        let (lr, lr_a, weight_decay) = optimizer.default_rates();
        RunConfig {
            d: 64,
            k: 32,
            r: 8,
            r_star: 8,
            alpha: 16.0,
            optimizer,
            lr,
            lr_a,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            steps: 2000,
            batch_size: 32,
            seed: 0,
            variant: Variant::Lora,
            train_a: true,
            lr_schedule: LrSchedule::Constant,
            metrics_every: 10,
            depth: 1,
            teacher_magnitude: 1.0,
            scaling_rule: ScalingRule::Standard,
        }
    }
}

impl RunConfig {
    /// Same task and seed under another optimizer. Switching optimizer
    /// replaces the learning rates and weight decay with the new optimizer's
    /// defaults; everything else is kept.
    pub fn with_optimizer(&self, optimizer: OptimizerKind) -> RunConfig {
        if optimizer == self.optimizer {
            return self.clone();
        }
        let (lr, lr_a, weight_decay) = optimizer.default_rates();
        RunConfig {
            optimizer,
            lr,
            lr_a,
            weight_decay,
            ..self.clone()
        }
    }

    /// Same run at another adapter rank, keeping `alpha / r` fixed.
    pub fn with_rank(&self, r: usize) -> RunConfig {
        RunConfig {
            r,
            alpha: self.alpha * r as f64 / self.r as f64,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> RunConfig {
        RunConfig { seed, ..self.clone() }
    }

    fn hyper_b(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    fn hyper_a(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr_a,
            ..self.hyper_b()
        }
    }

    fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.k
        } else {
            self.d
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |msg: alloc::string::String| Err(Error::Config(msg));
        if self.d == 0 || self.k == 0 {
            return cfg(format!("d and k must be >= 1 (d={}, k={})", self.d, self.k));
        }
        let max_rank = self.d.min(self.k);
        if self.r == 0 || self.r > max_rank {
            return cfg(format!("r must be in 1..={max_rank}, got {}", self.r));
        }
        if self.r_star > max_rank {
            return cfg(format!("r_star must be <= {max_rank}, got {}", self.r_star));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return cfg(format!("alpha must be finite and > 0, got {}", self.alpha));
        }
        if self.steps == 0 {
            return cfg("steps must be >= 1".into());
        }
        if self.batch_size == 0 {
            return cfg("batch_size must be >= 1".into());
        }
        if self.metrics_every == 0 {
            return cfg("metrics_every must be >= 1".into());
        }
        if self.depth == 0 {
            return cfg("depth must be >= 1".into());
        }
        if !(self.teacher_magnitude.is_finite() && self.teacher_magnitude >= 0.0) {
            return cfg(format!("teacher_magnitude must be finite and >= 0, got {}", self.teacher_magnitude));
        }
        self.hyper_b().validate()?;
        self.hyper_a().validate().map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{msg} (lr_a)")),
            e => e,
        })?;
        match self.optimizer {
            OptimizerKind::Stiefel | OptimizerKind::Adam if self.weight_decay != 0.0 => cfg(format!(
                "weight_decay is only supported by adamw, got {} with {}",
                self.weight_decay,
                self.optimizer.name()
            )),
            _ => Ok(()),
        }
    }
}

/// Frozen base weight plus a known-rank target update for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherTask {
    pub w0: Matrix,
    pub delta_star: Matrix,
    pub r_star: usize,
}

impl TeacherTask {
    pub fn w_star(&self) -> Matrix {
        self.w0.add(&self.delta_star).expect("teacher shapes")
    }

    pub fn input_dim(&self) -> usize {
        self.w0.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w0.rows()
    }
}

/// `W0 ~ N(0, 1/k)` and `ΔW* = magnitude·U·Vᵀ` with `U ∈ St(d, r*)`,
/// `V ∈ St(k, r*)`, so `ΔW*` has exactly `r*` singular values, all equal to
/// `magnitude`.
pub fn make_teacher(d: usize, k: usize, r_star: usize, magnitude: f64, rng: &mut RngState) -> Result<TeacherTask> {
    if r_star > d.min(k) {
        return Err(Error::Config(format!(
            "r_star {r_star} exceeds min(d, k) = {}",
            d.min(k)
        )));
    }
    if r_star > 0 && (magnitude.is_nan() || magnitude <= 0.0) {
        return Err(Error::Config(format!("teacher magnitude must be > 0 for r_star > 0, got {magnitude}")));
    }
    let w0 = gaussian_matrix(d, k, rng).scale(1.0 / libm::sqrt(k as f64));
    let delta_star = if r_star == 0 {
        Matrix::zeros(d, k)
    } else {
        let u = random_stiefel(d, r_star, rng)?;
        let v = random_stiefel(k, r_star, rng)?;
        crate::linalg::matmul_nt(u.value(), v.value())?.scale(magnitude)
    };
    Ok(TeacherTask { w0, delta_star, r_star })
}

/// Mean-squared-error loss `‖pred − target‖²_F / (2N)` and its gradient
/// `(pred − target)/N`.
pub fn loss_and_upstream(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("loss", pred.shape(), target.shape()));
    }
    let n = pred.cols() as f64;
    let diff = pred.sub(target)?;
    let loss = diff.as_slice().iter().map(|x| x * x).sum::<f64>() / (2.0 * n);
    Ok((loss, diff.scale(1.0 / n)))
}

/// Records ordered by strictly increasing `(step, layer)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTimeline {
    records: Vec<MetricsRecord>,
}

impl MetricsTimeline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: MetricsRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if (record.step, record.layer_index) <= (last.step, last.layer_index) {
                return Err(Error::Config(format!(
                    "timeline order violated: ({}, {}) after ({}, {})",
                    record.step, record.layer_index, last.step, last.layer_index
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[MetricsRecord] {
        &self.records
    }

    /// All layers' records at the last recorded step.
    pub fn final_records(&self) -> &[MetricsRecord] {
        let Some(last) = self.records.last() else {
            return &[];
        };
        let start = self.records.iter().position(|r| r.step == last.step).unwrap_or(0);
        &self.records[start..]
    }

    /// Layer-averaged value of `field` at the last recorded step.
    pub fn final_mean(&self, field: impl Fn(&MetricsRecord) -> f64) -> f64 {
        let fin = self.final_records();
        fin.iter().map(field).sum::<f64>() / fin.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub adapters: Vec<LoraAdapter>,
    pub teachers: Vec<TeacherTask>,
    pub timeline: MetricsTimeline,
    /// Largest `‖BᵀB − I‖_F` seen after any step, on any layer.
    pub max_ortho_error: f64,
    pub final_loss: f64,
}

struct Moments {
    a: AdamState,
    b: AdamState,
}

fn forward_teacher(weights: &[Matrix], x: &Matrix) -> Result<Matrix> {
    let mut h = x.clone();
    for (l, w) in weights.iter().enumerate() {
        h = matmul(w, &h)?;
        if l + 1 < weights.len() {
            h = h.map(libm::tanh);
        }
    }
    Ok(h)
}

/// Runs the training loop described by `config`.
///
/// Every step draws a fresh batch, evaluates the loss against the teacher,
/// backpropagates through the adapter stack and updates `A` (unless static)
/// and `B`. Metrics are recorded every `metrics_every` steps and always at
/// the final step; a record's loss is the minibatch loss of that step,
/// evaluated before the update, while the other fields describe the adapter
/// after the update.
pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    train_observed(config, |_, _| {})
}

/// [`train`], calling `observe(step, adapters)` after every update.
pub fn train_observed(config: &RunConfig, mut observe: impl FnMut(u64, &[LoraAdapter])) -> Result<TrainOutcome> {
    config.validate()?;
    let mut teacher_rng = RngState::with_stream(config.seed, TEACHER_STREAM);
    let mut init_rng = RngState::with_stream(config.seed, INIT_STREAM);
    let mut batch_rng = RngState::with_stream(config.seed, BATCH_STREAM);

    let mode = match config.optimizer {
        OptimizerKind::Stiefel => BMode::Stiefel,
        OptimizerKind::Adam | OptimizerKind::AdamW => BMode::Euclidean,
    };
    let init = AdapterInit {
        rank: config.r,
        alpha: config.alpha,
        mode,
        variant: config.variant,
        train_a: config.train_a,
        scaling_rule: config.scaling_rule,
    };

    let mut teachers = Vec::with_capacity(config.depth);
    let mut adapters = Vec::with_capacity(config.depth);
    let mut moments = Vec::with_capacity(config.depth);
    for l in 0..config.depth {
        let in_dim = config.layer_input_dim(l);
        if config.r > config.d.min(in_dim) || config.r_star > config.d.min(in_dim) {
            return Err(Error::Config(format!("rank too large for layer {l} ({}x{in_dim})", config.d)));
        }
        let teacher = make_teacher(config.d, in_dim, config.r_star, config.teacher_magnitude, &mut teacher_rng)?;
        let adapter = LoraAdapter::init(teacher.w0.clone(), &init, &mut init_rng)?;
        moments.push(Moments {
            a: AdamState::for_param(adapter.a()),
            b: AdamState::for_param(adapter.b().matrix()),
        });
        adapters.push(adapter);
        teachers.push(teacher);
    }
    let teacher_weights: Vec<Matrix> = teachers.iter().map(TeacherTask::w_star).collect();

    let hyper_a = config.hyper_a();
    let hyper_b = config.hyper_b();
    let mut timeline = MetricsTimeline::new();
    let mut max_ortho_error = 0.0f64;
    let mut final_loss = f64::NAN;

    for step in 1..=config.steps {
        let x = gaussian_matrix(config.k, config.batch_size, &mut batch_rng);
        let target = forward_teacher(&teacher_weights, &x)?;

        // inputs[l] is the input of layer l
        let mut inputs = Vec::with_capacity(config.depth);
        let mut h = x;
        for (l, adapter) in adapters.iter().enumerate() {
            let out = adapter.forward(&h).map_err(|e| e.at_step(step))?;
            inputs.push(h);
            h = if l + 1 < adapters.len() { out.map(libm::tanh) } else { out };
        }
        let (loss, mut upstream) = loss_and_upstream(&h, &target)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss.at_step(step));
        }
        final_loss = loss;

        let mut grads = Vec::with_capacity(config.depth);
        for l in (0..adapters.len()).rev() {
            let adapter = &adapters[l];
            grads.push(adapter.gradients(&inputs[l], &upstream).map_err(|e| e.at_step(step))?);
            if l > 0 {
                let back = adapter.input_gradient(&upstream).map_err(|e| e.at_step(step))?;
                upstream = back.zip_map(&inputs[l], |g, a| g * (1.0 - a * a))?;
            }
        }
        grads.reverse();

        let factor = config.lr_schedule.factor(step, config.steps);
        let h_a = AdamHyper { lr: hyper_a.lr * factor, ..hyper_a };
        let h_b = AdamHyper { lr: hyper_b.lr * factor, ..hyper_b };

        for ((adapter, state), (grad_a, grad_b)) in adapters.iter_mut().zip(&mut moments).zip(grads) {
            update_layer(adapter, state, config.optimizer, &grad_a, &grad_b, &h_a, &h_b)
                .map_err(|e| e.at_step(step))?;
            if mode == BMode::Stiefel {
                max_ortho_error = max_ortho_error.max(ortho_error(adapter.b().matrix()));
            }
        }

        if step % config.metrics_every == 0 || step == config.steps {
            for (l, adapter) in adapters.iter().enumerate() {
                let record = snapshot(adapter, step, loss, l).map_err(|e| e.at_step(step))?;
                timeline.push(record)?;
            }
        }
        observe(step, &adapters);
    }

    if mode == BMode::Euclidean {
        max_ortho_error = timeline
            .records()
            .iter()
            .map(|r| r.ortho_error_b)
            .fold(0.0, f64::max);
    }

    Ok(TrainOutcome {
        adapters,
        teachers,
        timeline,
        max_ortho_error,
        final_loss,
    })
}

fn update_layer(
    adapter: &mut LoraAdapter,
    state: &mut Moments,
    optimizer: OptimizerKind,
    grad_a: &Matrix,
    grad_b: &Matrix,
    h_a: &AdamHyper,
    h_b: &AdamHyper,
) -> Result<()> {
    if adapter.train_a() {
        let step = match optimizer {
            OptimizerKind::AdamW => adamw_step,
            OptimizerKind::Stiefel | OptimizerKind::Adam => adam_step,
        };
        let (a, next) = step(&state.a, adapter.a(), grad_a, h_a)?;
        adapter.set_a(a);
        state.a = next;
    }
    let (b, next) = match (optimizer, adapter.b()) {
        (OptimizerKind::Stiefel, BFactor::Stiefel(point)) => {
            let (b, next) = stiefel_adam_step(&state.b, point, grad_b, h_b)?;
            (BFactor::Stiefel(b), next)
        }
        (OptimizerKind::Adam, BFactor::Euclidean(b)) => {
            let (b, next) = adam_step(&state.b, b, grad_b, h_b)?;
            (BFactor::Euclidean(b), next)
        }
        (OptimizerKind::AdamW, BFactor::Euclidean(b)) => {
            let (b, next) = adamw_step(&state.b, b, grad_b, h_b)?;
            (BFactor::Euclidean(b), next)
        }
        (kind, factor) => {
            return Err(Error::Config(format!(
                "optimizer {} cannot update a {:?} B factor",
                kind.name(),
                factor.mode()
            )))
        }
    };
    adapter.set_b(b);
    state.b = next;
    Ok(())
}

/// Stiefel and AdamW runs on the same teacher and batch stream.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub stiefel: TrainOutcome,
    pub adamw: TrainOutcome,
}

impl Comparison {
    /// Timelines labeled by optimizer name.
    pub fn timelines(&self) -> [(&'static str, &MetricsTimeline); 2] {
        [
            (OptimizerKind::Stiefel.name(), &self.stiefel.timeline),
            (OptimizerKind::AdamW.name(), &self.adamw.timeline),
        ]
    }
}

/// Trains `config` once with the Stiefel optimizer and once with AdamW.
/// See [`RunConfig::with_optimizer`] for how the hyperparameters are chosen.
pub fn compare(config: &RunConfig) -> Result<Comparison> {
    let stiefel = config.with_optimizer(OptimizerKind::Stiefel);
    let adamw = config.with_optimizer(OptimizerKind::AdamW);
    stiefel.validate()?;
    adamw.validate()?;
    Ok(Comparison {
        stiefel: train(&stiefel)?,
        adamw: train(&adamw)?,
    })
}

/// Final layer-averaged `eff_rank_dw` for both optimizers at one (rank, seed).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub rank: usize,
    pub seed: u64,
    pub stiefel_eff_rank_dw: f64,
    pub adamw_eff_rank_dw: f64,
}

pub fn sweep_cell(config: &RunConfig, rank: usize, seed: u64) -> Result<SweepCell> {
    let cmp = compare(&config.with_rank(rank).with_seed(seed))?;
    Ok(SweepCell {
        rank,
        seed,
        stiefel_eff_rank_dw: cmp.stiefel.timeline.final_mean(|r| r.eff_rank_dw),
        adamw_eff_rank_dw: cmp.adamw.timeline.final_mean(|r| r.eff_rank_dw),
    })
}
