use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use ists_core::downstream::TaskSpec;
use ists_core::encoder::EncoderConfig;
use ists_core::series::SynthConfig;
use ists_core::trainer::{TrainConfig, Variant};

/// Everything a run needs. Flags override file keys override defaults; the
/// merged value is what gets echoed into artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, replaces the seed of every section below.
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    /// Long-format data file, `<out_dir>/data.csv` when unset.
    pub data: Option<PathBuf>,
    /// Checkpoint file, `<out_dir>/checkpoint.bin` when unset.
    pub checkpoint: Option<PathBuf>,
    /// `pretrain` continues from the existing checkpoint instead of a fresh
    /// initialization.
    pub resume: bool,
    /// Train / valid / test ratios.
    pub split: [f64; 3],
    /// Number of evaluation seeds, counted up from the task seed.
    pub seeds: u64,
    /// Variants run by `ablate`.
    pub variants: Vec<Variant>,
    pub synth: SynthConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub task: TaskSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out_dir: PathBuf::from("out"),
            data: None,
            checkpoint: None,
            resume: false,
            split: [0.8, 0.1, 0.1],
            seeds: 1,
            variants: Variant::grid(),
            synth: SynthConfig::default(),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            task: TaskSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| ists_core::Error::Io { path: path.display().to_string(), source: e })?;
        let cfg = toml::from_str(&text).with_context(|| format!("reading config {}", path.display()))?;
        Ok(cfg)
    }

    /// Fills derived fields. Call after all overrides are applied.
    pub fn resolve(mut self) -> Self {
        if let Some(s) = self.seed {
            self.synth.seed = s;
            self.encoder.seed = s;
            self.train.seed = s;
            self.task.seed = s;
        }
        if self.data.is_none() {
            self.data = Some(self.out_dir.join("data.csv"));
        }
        if self.checkpoint.is_none() {
            self.checkpoint = Some(self.out_dir.join("checkpoint.bin"));
        }
        self
    }

    pub fn data_path(&self) -> &Path {
        self.data.as_deref().expect("resolved config")
    }

    pub fn checkpoint_path(&self) -> &Path {
        self.checkpoint.as_deref().expect("resolved config")
    }

    pub fn eval_seeds(&self) -> Vec<u64> {
        (0..self.seeds).map(|k| self.task.seed + k).collect()
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.split.iter().any(|r| r.is_nan() || *r < 0.0) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            anyhow::bail!(ists_core::Error::Config(format!(
                "split ratios must be nonnegative and sum to 1, got {:?}",
                self.split
            )));
        }
        if self.seeds == 0 {
            anyhow::bail!(ists_core::Error::Config("seeds must be >= 1".into()));
        }
        if self.variants.is_empty() {
            anyhow::bail!(ists_core::Error::Config("variants must not be empty".into()));
        }
        self.encoder.validate()?;
        self.train.validate()?;
        self.task.validate()?;
        Ok(())
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        let cfg: RunConfig = toml::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
        assert!(toml::from_str::<RunConfig>("[train]\nbogus = 1").is_err());
    }

    #[test]
    fn nested_sections_parse() {
        let cfg: RunConfig = toml::from_str(
            "seed = 4\nvariants = [\"baseline\", \"mave(5)\"]\n[train]\nepochs = 2\n[train.loss]\nbeta_c = 0.1\n[task]\nkind = \"forecasting\"\n",
        )
        .unwrap();
        let cfg = cfg.resolve();
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.train.loss.beta_c, 0.1);
        assert_eq!(cfg.variants, vec![Variant::Baseline, Variant::Mave(5)]);
        assert_eq!((cfg.synth.seed, cfg.train.seed, cfg.task.seed), (4, 4, 4));
        assert_eq!(cfg.data_path(), Path::new("out/data.csv"));
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::default().resolve();
        let back: RunConfig = serde_json::from_value(cfg.echo()).unwrap();
        assert_eq!(back, cfg);
    }
}
