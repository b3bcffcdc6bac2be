//! The four subcommands. Each one resolves and validates its inputs before
//! touching the output directory.

use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use stiefel_lora_core::harness::{sweep_cell, SweepCell};
use stiefel_lora_core::{compare, cosine_matrix, snapshot, train, MetricsRecord, MetricsTimeline, OptimizerKind};

use crate::checkpoint;
use crate::config::{ConfigFile, Experiment};
use crate::error::{CliError, Result};
use crate::matrix_io::{self, fmt_f64};
use crate::metrics_csv;

/// Final-step metrics, averaged over layers.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct FinalMetrics {
    pub loss: f64,
    pub ortho_error_b: f64,
    pub eff_rank_b: f64,
    pub eff_rank_a: f64,
    pub eff_rank_dw: f64,
    pub cos_mean: f64,
    pub cos_std: f64,
}

impl FinalMetrics {
    fn from_records(records: &[MetricsRecord]) -> Self {
        let mean = |f: fn(&MetricsRecord) -> f64| records.iter().map(f).sum::<f64>() / records.len() as f64;
        FinalMetrics {
            loss: mean(|r| r.loss),
            ortho_error_b: mean(|r| r.ortho_error_b),
            eff_rank_b: mean(|r| r.eff_rank_b),
            eff_rank_a: mean(|r| r.eff_rank_a),
            eff_rank_dw: mean(|r| r.eff_rank_dw),
            cos_mean: mean(|r| r.cos_mean),
            cos_std: mean(|r| r.cos_std),
        }
    }

    fn of(timeline: &MetricsTimeline) -> Self {
        Self::from_records(timeline.final_records())
    }
}

#[derive(Debug, Serialize)]
struct Summary {
    optimizer: &'static str,
    steps: u64,
    depth: usize,
    final_loss: f64,
    final_eff_rank_b: f64,
    final_eff_rank_a: f64,
    final_eff_rank_dw: f64,
    final_cos_mean: f64,
    final_cos_std: f64,
    max_ortho_error: f64,
    wall_time_s: f64,
}

#[derive(Debug, Serialize)]
struct Gap {
    eff_rank_dw: f64,
    cos_std: f64,
    loss: f64,
}

impl Gap {
    fn between(stiefel: &FinalMetrics, adamw: &FinalMetrics) -> Self {
        Gap {
            eff_rank_dw: stiefel.eff_rank_dw - adamw.eff_rank_dw,
            cos_std: stiefel.cos_std - adamw.cos_std,
            loss: stiefel.loss - adamw.loss,
        }
    }
}

#[derive(Debug, Serialize)]
struct LayerComparison {
    layer: usize,
    stiefel: FinalMetrics,
    adamw: FinalMetrics,
    gap: Gap,
}

/// Gaps are `stiefel − adamw`. Top-level metrics average over layers;
/// `layers` keeps the per-layer values.
#[derive(Debug, Serialize)]
struct ComparisonReport {
    steps: u64,
    stiefel: FinalMetrics,
    adamw: FinalMetrics,
    gap: Gap,
    stiefel_max_ortho_error: f64,
    layers: Vec<LayerComparison>,
}

fn load(config_path: &Path, seed: Option<u64>) -> Result<Experiment> {
    ConfigFile::load(config_path)?.resolve(seed)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let json = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, json + "\n").map_err(|e| CliError::io(path, e))
}

pub fn run_train(config_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let exp = load(config_path, seed)?;
    train_experiment(&exp, out_dir)
}

pub fn train_experiment(exp: &Experiment, out_dir: &Path) -> Result<()> {
    let start = Instant::now();
    let outcome = train(&exp.run)?;
    let wall_time_s = start.elapsed().as_secs_f64();

    create_dir(out_dir)?;
    metrics_csv::write(&out_dir.join("metrics.csv"), outcome.timeline.records())?;
    let fin = FinalMetrics::of(&outcome.timeline);
    let summary = Summary {
        optimizer: exp.run.optimizer.name(),
        steps: exp.run.steps,
        depth: exp.run.depth,
        final_loss: outcome.final_loss,
        final_eff_rank_b: fin.eff_rank_b,
        final_eff_rank_a: fin.eff_rank_a,
        final_eff_rank_dw: fin.eff_rank_dw,
        final_cos_mean: fin.cos_mean,
        final_cos_std: fin.cos_std,
        max_ortho_error: outcome.max_ortho_error,
        wall_time_s,
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    checkpoint::write_stack(&out_dir.join("adapter"), &outcome.adapters, exp.run.steps, outcome.final_loss)
}

pub fn run_compare(config_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let exp = load(config_path, seed)?;
    compare_experiment(&exp, out_dir)
}

pub fn compare_experiment(exp: &Experiment, out_dir: &Path) -> Result<()> {
    let cmp = compare(&exp.run)?;
    create_dir(out_dir)?;
    for (name, timeline) in cmp.timelines() {
        metrics_csv::write(&out_dir.join(format!("metrics_{name}.csv")), timeline.records())?;
    }

    let stiefel = FinalMetrics::of(&cmp.stiefel.timeline);
    let adamw = FinalMetrics::of(&cmp.adamw.timeline);
    let layers = cmp
        .stiefel
        .timeline
        .final_records()
        .iter()
        .zip(cmp.adamw.timeline.final_records())
        .enumerate()
        .map(|(layer, (s, a))| {
            let s = FinalMetrics::from_records(std::slice::from_ref(s));
            let a = FinalMetrics::from_records(std::slice::from_ref(a));
            LayerComparison {
                layer,
                gap: Gap::between(&s, &a),
                stiefel: s,
                adamw: a,
            }
        })
        .collect();
    let report = ComparisonReport {
        steps: exp.run.steps,
        gap: Gap::between(&stiefel, &adamw),
        stiefel,
        adamw,
        stiefel_max_ortho_error: cmp.stiefel.max_ortho_error,
        layers,
    };
    write_json(&out_dir.join("comparison.json"), &report)
}

pub fn run_sweep_rank(config_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let exp = load(config_path, seed)?;
    sweep_experiment(&exp, out_dir)
}

/// Runs the (rank, seed) grid in parallel; results come back in grid order.
pub fn sweep(exp: &Experiment) -> Result<Vec<SweepCell>> {
    if exp.ranks.is_empty() {
        return Err(CliError::Config("sweep-rank needs a non-empty `ranks` list".into()));
    }
    let grid: Vec<(usize, u64)> = exp
        .ranks
        .iter()
        .flat_map(|&r| exp.seeds.iter().map(move |&s| (r, s)))
        .collect();
    grid.par_iter()
        .map(|&(rank, seed)| sweep_cell(&exp.run, rank, seed).map_err(CliError::from))
        .collect()
}

pub fn sweep_experiment(exp: &Experiment, out_dir: &Path) -> Result<()> {
    let cells = sweep(exp)?;
    create_dir(out_dir)?;

    let optimizers = [OptimizerKind::Stiefel, OptimizerKind::AdamW];
    let value = |c: &SweepCell, kind: OptimizerKind| match kind {
        OptimizerKind::Stiefel => c.stiefel_eff_rank_dw,
        _ => c.adamw_eff_rank_dw,
    };

    let mut summary = String::from("rank,optimizer,eff_rank_dw_mean\n");
    for &rank in &exp.ranks {
        let of_rank: Vec<&SweepCell> = cells.iter().filter(|c| c.rank == rank).collect();
        for kind in optimizers {
            let mean = of_rank.iter().map(|c| value(c, kind)).sum::<f64>() / of_rank.len() as f64;
            summary.push_str(&format!("{rank},{},{}\n", kind.name(), fmt_f64(mean)));
        }
    }
    let path = out_dir.join("rank_sweep.csv");
    fs::write(&path, summary).map_err(|e| CliError::io(path, e))?;

    let mut per_seed = String::from("rank,seed,optimizer,eff_rank_dw\n");
    for c in &cells {
        for kind in optimizers {
            per_seed.push_str(&format!("{},{},{},{}\n", c.rank, c.seed, kind.name(), fmt_f64(value(c, kind))));
        }
    }
    let path = out_dir.join("rank_sweep_seeds.csv");
    fs::write(&path, per_seed).map_err(|e| CliError::io(path, e))
}

pub fn run_diagnose(checkpoint_dir: &Path, out_dir: &Path) -> Result<()> {
    let layers = checkpoint::read_stack(checkpoint_dir)?;
    let mut records = Vec::with_capacity(layers.len());
    let mut cosines = Vec::with_capacity(layers.len());
    for (l, (adapter, meta)) in layers.iter().enumerate() {
        records.push(snapshot(adapter, meta.step.unwrap_or(0), meta.loss.unwrap_or(f64::NAN), l)?);
        cosines.push(cosine_matrix(adapter.b().matrix())?);
    }

    create_dir(out_dir)?;
    metrics_csv::write(&out_dir.join("metrics.csv"), &records)?;
    if let [single] = &cosines[..] {
        matrix_io::write(&out_dir.join("cosine_b.txt"), single)?;
    } else {
        for (l, c) in cosines.iter().enumerate() {
            matrix_io::write(&out_dir.join(format!("cosine_b_layer{l}.txt")), c)?;
        }
    }
    Ok(())
}
