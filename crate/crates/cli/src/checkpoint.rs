//! Adapter checkpoints: `w0.txt`, `a.txt`, `b.txt` in the matrix text format
//! plus `meta.json`. Multi-layer runs store one such directory per layer as
//! `layer_<i>/`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stiefel_lora_core::{BFactor, LoraAdapter, ScalingRule, StiefelPoint, Variant};

use crate::error::{CliError, Result};
use crate::matrix_io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub rank: usize,
    pub alpha: f64,
    /// `stiefel` or `euclidean`
    pub mode: String,
    /// `lora` or `dora`
    pub variant: String,
    pub train_a: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dora_magnitude: Option<Vec<f64>>,
    /// `standard` (alpha/r) or `rank_stabilized` (alpha/√r)
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling_rule: Option<String>,
    /// Training step the checkpoint was taken after.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
    /// Minibatch loss recorded at that step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
}

impl Meta {
    pub fn describe(adapter: &LoraAdapter, step: Option<u64>, loss: Option<f64>) -> Self {
        Meta {
            rank: adapter.rank(),
            alpha: adapter.alpha(),
            mode: match adapter.b() {
                BFactor::Stiefel(_) => "stiefel",
                BFactor::Euclidean(_) => "euclidean",
            }
            .into(),
            variant: match adapter.variant() {
                Variant::Lora => "lora",
                Variant::Dora => "dora",
            }
            .into(),
            train_a: adapter.train_a(),
            dora_magnitude: adapter.dora_magnitude().map(<[f64]>::to_vec),
            scaling_rule: Some(
                match adapter.scaling_rule() {
                    ScalingRule::Standard => "standard",
                    ScalingRule::RankStabilized => "rank_stabilized",
                }
                .into(),
            ),
            step,
            loss,
        }
    }
}

pub fn write(dir: &Path, adapter: &LoraAdapter, step: Option<u64>, loss: Option<f64>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    matrix_io::write(&dir.join("w0.txt"), adapter.w0())?;
    matrix_io::write(&dir.join("a.txt"), adapter.a())?;
    matrix_io::write(&dir.join("b.txt"), adapter.b().matrix())?;
    let meta = Meta::describe(adapter, step, loss);
    let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
    let path = dir.join("meta.json");
    fs::write(&path, json + "\n").map_err(|e| CliError::io(path, e))
}

pub fn read(dir: &Path) -> Result<(LoraAdapter, Meta)> {
    let meta_path = dir.join("meta.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| CliError::io(&meta_path, e))?;
    let meta: Meta = serde_json::from_str(&text).map_err(|e| CliError::format(&meta_path, e.to_string()))?;

    let w0 = matrix_io::read(&dir.join("w0.txt"))?;
    let a = matrix_io::read(&dir.join("a.txt"))?;
    let b = matrix_io::read(&dir.join("b.txt"))?;
    let bad = |msg: String| CliError::format(dir, msg);

    if a.rows() != meta.rank {
        return Err(bad(format!("meta rank {} but a.txt has {} rows", meta.rank, a.rows())));
    }
    let b = match meta.mode.as_str() {
        "stiefel" => BFactor::Stiefel(StiefelPoint::new(b).map_err(|e| bad(format!("b.txt: {e}")))?),
        "euclidean" => BFactor::Euclidean(b),
        other => return Err(bad(format!("unknown mode {other:?}"))),
    };
    let variant = match meta.variant.as_str() {
        "lora" => Variant::Lora,
        "dora" => Variant::Dora,
        other => return Err(bad(format!("unknown variant {other:?}"))),
    };
    let scaling_rule = match meta.scaling_rule.as_deref() {
        None | Some("standard") => ScalingRule::Standard,
        Some("rank_stabilized") => ScalingRule::RankStabilized,
        Some(other) => return Err(bad(format!("unknown scaling_rule {other:?}"))),
    };
    let adapter = LoraAdapter::from_parts(
        w0,
        a,
        b,
        meta.alpha,
        scaling_rule,
        meta.train_a,
        variant,
        meta.dora_magnitude.clone(),
    )
    .map_err(|e| bad(e.to_string()))?;
    Ok((adapter, meta))
}

fn layer_dir(dir: &Path, layer: usize) -> PathBuf {
    dir.join(format!("layer_{layer}"))
}

/// Writes a single adapter directly into `dir`, several into `dir/layer_<i>`.
pub fn write_stack(dir: &Path, adapters: &[LoraAdapter], step: u64, loss: f64) -> Result<()> {
    match adapters {
        [single] => write(dir, single, Some(step), Some(loss)),
        _ => adapters
            .iter()
            .enumerate()
            .try_for_each(|(l, ad)| write(&layer_dir(dir, l), ad, Some(step), Some(loss))),
    }
}

/// Reads whatever [`write_stack`] produced.
pub fn read_stack(dir: &Path) -> Result<Vec<(LoraAdapter, Meta)>> {
    if dir.join("meta.json").is_file() {
        return Ok(vec![read(dir)?]);
    }
    let mut layers = Vec::new();
    while layer_dir(dir, layers.len()).is_dir() {
        layers.push(read(&layer_dir(dir, layers.len()))?);
    }
    if layers.is_empty() {
        return Err(CliError::format(dir, "no meta.json or layer_0/ found"));
    }
    Ok(layers)
}
