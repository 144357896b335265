//! Variant grid runs: pre-train every variant under shared seeds, evaluate
//! each on one downstream task and tabulate mean ± std.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::downstream::{evaluate_once, MetricsReport, TaskKind, TaskSpec};
use crate::encoder::EncoderConfig;
use crate::series::Dataset;
use crate::trainer::{pretrain, TrainConfig, Variant};
use crate::{Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub task: TaskKind,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

/// Pre-trains and evaluates each variant once per seed. The seed drives the
/// encoder initialization, the training shuffle/sampling streams and the
/// evaluation masks, so seed `k` of one variant is paired with seed `k` of
/// every other. `on_row` sees each finished row.
pub fn run_ablation<S: Scalar>(
    dataset: &Dataset<S>,
    encoder: &EncoderConfig,
    train: &TrainConfig,
    task: &TaskSpec,
    variants: &[Variant],
    seeds: &[u64],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<AblationTable> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one variant and one seed".into()));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for &variant in variants {
        let mut results = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let enc = EncoderConfig { seed, ..encoder.clone() };
            let cfg = TrainConfig {
                variant,
                seed,
                ..train.clone()
            };
            let (state, _) = pretrain(dataset, enc, &cfg)?;
            results.push(evaluate_once(&state.model, dataset, task, seed)?);
        }
        let echo = serde_json::json!({
            "variant": variant,
            "seeds": seeds,
            "encoder": encoder,
            "train": cfg_echo(train, variant),
            "task": task,
        });
        let row = AblationRow {
            variant,
            report: MetricsReport::from_results(task.kind, &results, echo)?,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(AblationTable {
        task: task.kind,
        seeds: seeds.to_vec(),
        rows,
    })
}

fn cfg_echo(train: &TrainConfig, variant: Variant) -> serde_json::Value {
    serde_json::to_value(TrainConfig {
        variant,
        ..train.clone()
    })
    .unwrap_or(serde_json::Value::Null)
}

impl AblationTable {
    /// Metric names shared by every row, sorted.
    pub fn metric_names(&self) -> Vec<String> {
        self.rows
            .first()
            .map(|r| r.report.metrics.keys().cloned().collect())
            .unwrap_or_default()
    }

    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    /// `variant,<m>_mean,<m>_std,...` with one line per variant.
    pub fn to_csv(&self) -> String {
        let names = self.metric_names();
        let mut out = String::from("variant");
        for n in &names {
            let _ = write!(out, ",{n}_mean,{n}_std");
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.variant.to_string());
            for n in &names {
                let m = &row.report.metrics[n];
                let _ = write!(out, ",{:e},{:e}", m.mean, m.std);
            }
            out.push('\n');
        }
        out
    }

    /// Aligned text table, `mean ± std` per cell.
    pub fn to_text(&self) -> String {
        let names = self.metric_names();
        let mut cells: Vec<Vec<String>> = vec![std::iter::once("variant".to_string())
            .chain(names.iter().cloned())
            .collect()];
        for row in &self.rows {
            let mut line = vec![row.variant.to_string()];
            for n in &names {
                let m = &row.report.metrics[n];
                line.push(format!("{:.6} ± {:.6}", m.mean, m.std));
            }
            cells.push(line);
        }
        let mut widths = vec![0; names.len() + 1];
        for line in &cells {
            for (w, c) in widths.iter_mut().zip(line) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        for line in &cells {
            let padded: Vec<String> = line
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            out.push_str(padded.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    /// Per-seed values of `metric` keyed by variant.
    pub fn per_seed(&self, metric: &str) -> BTreeMap<String, Vec<f64>> {
        self.rows
            .iter()
            .filter_map(|r| {
                r.report
                    .metrics
                    .get(metric)
                    .map(|m| (r.variant.to_string(), m.per_seed.clone()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{generate_synthetic, normalize_min_max, split, SynthConfig};

    fn setup() -> (Dataset<f64>, EncoderConfig, TrainConfig) {
        let data = generate_synthetic::<f64>(&SynthConfig {
            n_instances: 16,
            t_max: 10,
            n_vars: 2,
            missing_rate: 0.4,
            n_classes: 2,
            seed: 2,
            ..Default::default()
        })
        .unwrap();
        let data = normalize_min_max(&split(&data, (0.5, 0.25, 0.25), 2).unwrap()).unwrap();
        let enc = EncoderConfig {
            tau: 3,
            d_model: 4,
            time_embed_dim: 2,
            hidden_dim: 4,
            n_heads: 1,
            n_vars: 2,
            time_scale: 1.0,
            seed: 0,
        };
        let train = TrainConfig {
            epochs: 1,
            batch_size: 4,
            ..Default::default()
        };
        (data, enc, train)
    }

    #[test]
    fn two_variant_table() {
        let (data, enc, train) = setup();
        let task = TaskSpec::default();
        let mut seen = 0;
        let table = run_ablation(
            &data,
            &enc,
            &train,
            &task,
            &[Variant::Baseline, Variant::Full],
            &[0, 1],
            |_| seen += 1,
        )
        .unwrap();
        assert_eq!(seen, 2);
        assert_eq!(table.rows.len(), 2);
        let csv = table.to_csv();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("variant,mae_mean,mae_std,mse_mean,mse_std"));
        let text = table.to_text();
        assert!(text.lines().nth(2).unwrap().starts_with("full"));
        assert_eq!(table.per_seed("mse")["baseline"].len(), 2);
    }

    #[test]
    fn empty_grid_rejected() {
        let (data, enc, train) = setup();
        let r = run_ablation(&data, &enc, &train, &TaskSpec::default(), &[], &[0], |_| {});
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
