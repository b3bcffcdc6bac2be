//! Metrics CSV: one row per record, floats at 17 significant digits.

use std::fs;
use std::path::Path;

use stiefel_lora_core::MetricsRecord;

use crate::error::{CliError, Result};
use crate::matrix_io::fmt_f64;

pub const HEADER: &str = "step,layer,loss,ortho_error_b,eff_rank_b,eff_rank_a,eff_rank_dw,cos_mean,cos_std";

pub fn to_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::with_capacity(64 + records.len() * 200);
    out.push_str(HEADER);
    out.push('\n');
    for r in records {
        let fields = [
            r.loss,
            r.ortho_error_b,
            r.eff_rank_b,
            r.eff_rank_a,
            r.eff_rank_dw,
            r.cos_mean,
            r.cos_std,
        ];
        out.push_str(&format!("{},{}", r.step, r.layer_index));
        for f in fields {
            out.push(',');
            out.push_str(&fmt_f64(f));
        }
        out.push('\n');
    }
    out
}

pub fn parse(text: &str) -> std::result::Result<Vec<MetricsRecord>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == HEADER => {}
        other => return Err(format!("unexpected header {other:?}")),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 9 {
                return Err(format!("line {}: expected 9 fields, got {}", i + 2, cols.len()));
            }
            let float = |j: usize| cols[j].parse::<f64>().map_err(|e| format!("line {}: field {j}: {e}", i + 2));
            Ok(MetricsRecord {
                step: cols[0].parse().map_err(|e| format!("line {}: step: {e}", i + 2))?,
                layer_index: cols[1].parse().map_err(|e| format!("line {}: layer: {e}", i + 2))?,
                loss: float(2)?,
                ortho_error_b: float(3)?,
                eff_rank_b: float(4)?,
                eff_rank_a: float(5)?,
                eff_rank_dw: float(6)?,
                cos_mean: float(7)?,
                cos_std: float(8)?,
            })
        })
        .collect()
}

pub fn write(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    fs::write(path, to_csv(records)).map_err(|e| CliError::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text).map_err(|m| CliError::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn any_finite() -> impl Strategy<Value = f64> {
        prop_oneof![any::<f64>().prop_filter("finite", |x| x.is_finite()), Just(0.0), Just(1e-300)]
    }

    #[test]
    fn header_and_layout() {
        let rec = MetricsRecord {
            step: 10,
            layer_index: 0,
            loss: 0.5,
            ortho_error_b: 0.0,
            eff_rank_b: 8.0,
            eff_rank_a: 7.5,
            eff_rank_dw: 7.5,
            cos_mean: 0.0,
            cos_std: 0.0,
        };
        let csv = to_csv(&[rec]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], HEADER);
        assert!(lines[1].starts_with("10,0,5.0000000000000000e-1,"));
        assert!(!lines[1].ends_with(','));
        assert!(csv.ends_with('\n') && !csv.contains('\r'));
    }

    proptest! {
        #[test]
        fn round_trip_is_lossless(step in any::<u64>(), layer in 0usize..100, v in proptest::collection::vec(any_finite(), 7)) {
            let rec = MetricsRecord {
                step,
                layer_index: layer,
                loss: v[0],
                ortho_error_b: v[1],
                eff_rank_b: v[2],
                eff_rank_a: v[3],
                eff_rank_dw: v[4],
                cos_mean: v[5],
                cos_std: v[6],
            };
            let back = parse(&to_csv(&[rec])).unwrap();
            prop_assert_eq!(back, vec![rec]);
        }
    }
}
