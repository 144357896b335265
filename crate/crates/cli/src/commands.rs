use std::fs;
use std::path::{Path, PathBuf};

use ists_core::ablation::run_ablation;
use ists_core::checkpoint::{load_checkpoint, params_checksum, save_checkpoint};
use ists_core::downstream::evaluate;
use ists_core::series::{
    generate_synthetic, load_long_format, normalize_min_max, split, write_long_format,
};
use ists_core::trainer::{train, ModelState};
use ists_core::{Checkpoint, Dataset, Error};

use crate::config::RunConfig;

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out_dir.join(name)
}

/// Loads, splits (seeded by the generator seed so every command agrees) and
/// min-max normalizes the configured data file.
fn load_data(cfg: &RunConfig) -> anyhow::Result<Dataset> {
    let path = cfg.data_path();
    let raw: Dataset = load_long_format(path)?;
    let [a, b, c] = cfg.split;
    let data = split(&raw, (a, b, c), cfg.synth.seed)?;
    Ok(normalize_min_max(&data)?)
}

pub fn generate(cfg: &RunConfig) -> anyhow::Result<Vec<PathBuf>> {
    let data: Dataset = generate_synthetic(&cfg.synth)?;
    let path = cfg.data_path().to_path_buf();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    write_long_format(&data, &path)?;
    let sidecar = path.with_extension("json");
    write_json(
        &sidecar,
        &serde_json::json!({
            "generator": cfg.synth,
            "seed": cfg.synth.seed,
            "instances": data.len(),
            "config": cfg.echo(),
        }),
    )?;
    Ok(vec![path, sidecar])
}

pub fn pretrain(cfg: &mut RunConfig) -> anyhow::Result<Vec<PathBuf>> {
    let data = load_data(cfg)?;
    cfg.encoder.n_vars = data.n_vars();
    cfg.validate()?;
    let echo = cfg.echo();
    let ckpt_path = cfg.checkpoint_path().to_path_buf();
    let mut state: Checkpoint = if cfg.resume {
        let s: Checkpoint = load_checkpoint(&ckpt_path)?;
        if s.model.config != cfg.encoder {
            anyhow::bail!(Error::Config(format!(
                "checkpoint {} was trained with a different encoder configuration",
                ckpt_path.display()
            )));
        }
        s
    } else {
        ModelState::init(cfg.encoder.clone(), &cfg.train)?
    };
    state.config_echo = echo.to_string();
    let history = train(&data, &mut state, &cfg.train, |_, _| Ok(()))?;

    if let Some(dir) = ckpt_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    save_checkpoint(&state, &ckpt_path)?;
    let loss_path = out_path(cfg, "loss.csv");
    let mut csv = Vec::new();
    history.write_csv(&mut csv)?;
    write_file(&loss_path, csv)?;
    let run_path = out_path(cfg, "run.json");
    write_json(
        &run_path,
        &serde_json::json!({
            "steps": state.step,
            "recorded_steps": history.len(),
            "final_loss": history.entries.last().map(|(_, r)| r.total),
            "params_sha256": params_checksum(&state.model.params),
            "checkpoint": ckpt_path,
            "loss_csv": loss_path,
            "config": echo,
        }),
    )?;
    Ok(vec![ckpt_path, loss_path, run_path])
}

pub fn evaluate_cmd(cfg: &RunConfig) -> anyhow::Result<(String, Vec<PathBuf>)> {
    cfg.validate()?;
    let ckpt_path = cfg.checkpoint_path();
    let ckpt: Checkpoint = load_checkpoint(ckpt_path)?;
    let data = load_data(cfg)?;
    if ckpt.model.config.n_vars != data.n_vars() {
        anyhow::bail!(Error::Task(format!(
            "checkpoint {} expects {} variables but the data has {}",
            ckpt_path.display(),
            ckpt.model.config.n_vars,
            data.n_vars()
        )));
    }
    let echo = serde_json::json!({
        "config": cfg.echo(),
        "checkpoint": ckpt_path,
        "params_sha256": params_checksum(&ckpt.model.params),
    });
    let report = evaluate(&ckpt.model, &data, &cfg.task, &cfg.eval_seeds(), echo)?;
    let path = out_path(cfg, "metrics.json");
    write_json(&path, &serde_json::to_value(&report)?)?;
    Ok((report.summary_line(), vec![path]))
}

pub fn ablate(cfg: &mut RunConfig) -> anyhow::Result<(String, Vec<PathBuf>)> {
    let data = load_data(cfg)?;
    cfg.encoder.n_vars = data.n_vars();
    cfg.validate()?;
    let seeds = cfg.eval_seeds();
    let table = run_ablation(
        &data,
        &cfg.encoder,
        &cfg.train,
        &cfg.task,
        &cfg.variants,
        &seeds,
        |row| eprintln!("{:>12}  {}", row.variant.to_string(), row.report.summary_line()),
    )?;
    let text = table.to_text();
    let csv_path = out_path(cfg, "ablation.csv");
    let txt_path = out_path(cfg, "ablation.txt");
    let json_path = out_path(cfg, "ablation.json");
    write_file(&csv_path, table.to_csv())?;
    write_file(&txt_path, &text)?;
    write_json(
        &json_path,
        &serde_json::json!({ "table": table, "config": cfg.echo() }),
    )?;
    Ok((text, vec![csv_path, txt_path, json_path]))
}
