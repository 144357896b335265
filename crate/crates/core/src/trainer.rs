//! Pre-training loop: reconstruct, update error statistics, synthesize the
//! pseudo series, reconstruct it with the shared encoder, and take one
//! optimizer step on the combined loss.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::encoder::{decode, encode, EncoderConfig, Model, ModelParams};
use crate::error::{Error, Result};
use crate::losses::{
    contrastive_loss, masked_reconstruction_loss, total_loss, wasserstein2_gaussian, LossConfig, LossReport,
    LossTerms, PseudoLossMask,
};
use crate::pseudo_obs::{
    compute_batch_error_stats, compute_pseudo_error_stats, synthesize_pseudo, AlphaMode, AnchorStrategy,
    ErrorStats, PseudoFill, StatsMode,
};
use crate::scalar::Scalar;
use crate::series::{Dataset, IrregularSeries, SplitTag};

/// Pseudo-observation strategy or loss ablation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Variant {
    #[default]
    Full,
    /// Pseudo cells drawn from `uniform(0, 1)`.
    Random,
    /// Pseudo cells set to the variable's observed mean.
    Constant,
    /// Mixing ratio forced to 0, so pseudo cells are pure sampled error.
    OnlyError,
    Zero,
    Mean,
    Mave(usize),
    NoW,
    NoContrast,
    /// Only the original reconstruction loss.
    Baseline,
}

impl Variant {
    /// The ablation grid, baseline first and the full method last.
    pub fn grid() -> Vec<Variant> {
        vec![
            Variant::Baseline,
            Variant::Random,
            Variant::Constant,
            Variant::OnlyError,
            Variant::Zero,
            Variant::Mean,
            Variant::Mave(5),
            Variant::NoW,
            Variant::NoContrast,
            Variant::Full,
        ]
    }

    pub fn uses_pseudo(self) -> bool {
        self != Variant::Baseline
    }

    /// How this variant fills unobserved cells, given the configured
    /// mixing ratio and anchor.
    pub fn fill(self, alpha: AlphaMode, anchor: AnchorStrategy) -> PseudoFill {
        match self {
            Variant::Random => PseudoFill::Uniform,
            Variant::Constant => PseudoFill::ConstantMean,
            Variant::OnlyError => PseudoFill::Mixup {
                alpha: AlphaMode::Constant(0.0),
                anchor,
            },
            Variant::Zero => PseudoFill::Mixup {
                alpha,
                anchor: AnchorStrategy::Zero,
            },
            Variant::Mean => PseudoFill::Mixup {
                alpha,
                anchor: AnchorStrategy::GlobalMean,
            },
            Variant::Mave(w) => PseudoFill::Mixup {
                alpha,
                anchor: AnchorStrategy::MovingAverage(w),
            },
            Variant::Full | Variant::NoW | Variant::NoContrast | Variant::Baseline => {
                PseudoFill::Mixup { alpha, anchor }
            }
        }
    }

    /// `base` with the terms this variant switches off disabled.
    pub fn loss_config(self, base: &LossConfig) -> LossConfig {
        let mut cfg = base.clone();
        match self {
            Variant::NoW => cfg.enable_w = false,
            Variant::NoContrast => cfg.enable_contrast = false,
            Variant::Baseline => {
                cfg.enable_w = false;
                cfg.enable_contrast = false;
            }
            _ => {}
        }
        cfg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Full => f.write_str("full"),
            Variant::Random => f.write_str("random"),
            Variant::Constant => f.write_str("constant"),
            Variant::OnlyError => f.write_str("only_error"),
            Variant::Zero => f.write_str("zero"),
            Variant::Mean => f.write_str("mean"),
            Variant::Mave(w) => write!(f, "mave({w})"),
            Variant::NoW => f.write_str("no_w"),
            Variant::NoContrast => f.write_str("no_contrast"),
            Variant::Baseline => f.write_str("baseline"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Ok(match s {
            "full" => Variant::Full,
            "random" => Variant::Random,
            "constant" => Variant::Constant,
            "only_error" => Variant::OnlyError,
            "zero" => Variant::Zero,
            "mean" => Variant::Mean,
            "mave" => Variant::Mave(5),
            "no_w" => Variant::NoW,
            "no_contrast" => Variant::NoContrast,
            "baseline" => Variant::Baseline,
            _ => {
                let w = s
                    .strip_prefix("mave(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|w| w.trim().parse::<usize>().ok())
                    .filter(|&w| w > 0)
                    .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))?;
                Variant::Mave(w)
            }
        })
    }
}

impl TryFrom<String> for Variant {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Variant> for String {
    fn from(v: Variant) -> String {
        v.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Momentum coefficient of the error statistics.
    pub rho: f64,
    /// Mixing ratio between anchor and sampled error.
    pub alpha: AlphaMode,
    pub anchor: AnchorStrategy,
    pub variant: Variant,
    pub stats_mode: StatsMode,
    pub loss: LossConfig,
    pub seed: u64,
    /// Hard cap on the total number of optimizer steps.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 50,
            learning_rate: 1e-3,
            rho: 0.9,
            alpha: AlphaMode::Constant(0.5),
            anchor: AnchorStrategy::LastObs,
            variant: Variant::Full,
            stats_mode: StatsMode::PerVariable,
            loss: LossConfig::default(),
            seed: 0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho must lie in [0, 1], got {}", self.rho)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let AnchorStrategy::MovingAverage(0) = self.anchor {
            return Err(Error::Config("moving average window must be >= 1".into()));
        }
        self.alpha.validate()?;
        self.loss.validate()
    }
}

/// Adam with `beta1 = 0.9`, `beta2 = 0.999`, `eps = 1e-8`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<S> {
    pub m: ModelParams<S>,
    pub v: ModelParams<S>,
    pub t: u64,
}

impl<S: Scalar> Adam<S> {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(params: &ModelParams<S>) -> Self {
        let zeros = ModelParams::from_map(
            params
                .iter()
                .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
                .collect(),
        );
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One update; `grads` must be keyed like `params`.
    pub fn step(&mut self, params: &mut ModelParams<S>, grads: &ModelParams<S>, lr: f64) -> Result<()> {
        self.t += 1;
        let b1 = S::lit(Self::BETA1);
        let b2 = S::lit(Self::BETA2);
        let one = S::one();
        let bias1 = one - b1.powi(self.t.min(i32::MAX as u64) as i32);
        let bias2 = one - b2.powi(self.t.min(i32::MAX as u64) as i32);
        let lr = S::lit(lr);
        let eps = S::lit(Self::EPS);
        for (name, p) in params.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Contract(format!("no gradient for {name}")))?;
            let m = self.m.get_mut(name).expect("moment buffers mirror params");
            if g.shape() != p.shape() {
                return Err(Error::shape("adam", p.shape(), g.shape()));
            }
            for (mi, &gi) in m.data_mut().iter_mut().zip(g.data()) {
                *mi = b1 * *mi + (one - b1) * gi;
            }
            let v = self.v.get_mut(name).expect("moment buffers mirror params");
            for (vi, &gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = b2 * *vi + (one - b2) * gi * gi;
            }
            let m = self.m.get(name).unwrap();
            let v = self.v.get(name).unwrap();
            for ((pi, &mi), &vi) in p.data_mut().iter_mut().zip(m.data()).zip(v.data()) {
                let m_hat = mi / bias1;
                let v_hat = vi / bias2;
                *pi = *pi - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Everything needed to continue training bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<S> {
    pub model: Model<S>,
    pub optimizer: Adam<S>,
    pub stats: ErrorStats<S>,
    /// Optimizer steps taken so far.
    pub step: u64,
    pub rng: ChaCha8Rng,
    /// Effective run configuration as JSON, echoed into checkpoints.
    pub config_echo: String,
}

/// A checkpoint is the full training state.
pub type Checkpoint<S> = ModelState<S>;

impl<S: Scalar> ModelState<S> {
    /// Freshly initialized model, zeroed optimizer, prior statistics.
    pub fn init(encoder: EncoderConfig, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(encoder)?;
        let optimizer = Adam::new(&model.params);
        let stats = ErrorStats::new(model.config.n_vars, config.rho)?;
        Ok(Self {
            optimizer,
            stats,
            step: 0,
            rng: sampling_rng(config.seed),
            config_echo: String::new(),
            model,
        })
    }
}

fn sampling_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    rng
}

/// Order in which epoch `epoch` visits `n` training instances; depends only
/// on `(epoch, seed)`.
pub fn epoch_permutation(n: usize, epoch: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// One training step on `batch`. On success the state advances; on a
/// non-finite loss the state is left untouched and a diagnostic is returned.
pub fn pretrain_step<S: Scalar>(
    state: &mut ModelState<S>,
    batch: &[&IrregularSeries<S>],
    config: &TrainConfig,
    batch_id: usize,
) -> Result<LossReport> {
    if batch.is_empty() {
        return Err(Error::Contract("pretrain_step needs a nonempty batch".into()));
    }
    let cfg = &state.model.config;
    if let Some(s) = batch.iter().find(|s| s.n_vars() != cfg.n_vars) {
        return Err(Error::shape("pretrain_step", &[s.n_vars()], &[cfg.n_vars]));
    }
    let loss_cfg = config.variant.loss_config(&config.loss);
    let tape = Tape::new();
    let bound = state.model.params.bind(&tape, true);

    // Original branch.
    let mut reps = Vec::with_capacity(batch.len());
    let mut recons = Vec::with_capacity(batch.len());
    for s in batch {
        let r = encode(&tape, &bound, cfg, &s.view())?;
        recons.push(decode(&tape, &bound, cfg, r, s.timestamps())?);
        reps.push(r);
    }
    let orig_items: Vec<_> = batch
        .iter()
        .zip(&recons)
        .map(|(s, &r)| (s.values(), r, s.mask()))
        .collect();
    let l_orig = masked_reconstruction_loss(&tape, &orig_items, loss_cfg.reconstruction_form)?.value;

    // Error statistics from this batch, folded into the running ones.
    let recon_values: Vec<Tensor<S>> = recons.iter().map(|r| r.value().clone()).collect();
    let stats = match compute_batch_error_stats(batch, &recon_values, config.stats_mode) {
        Ok(moments) => state.stats.apply(&moments)?,
        Err(Error::Stats(_)) => state.stats.clone(),
        Err(e) => return Err(e),
    };

    let mut rng = state.rng.clone();
    let mut terms = LossTerms {
        l_w: None,
        l_contrast: None,
        l_orig_rec: l_orig,
        l_pseudo_rec: None,
    };
    if config.variant.uses_pseudo() {
        let fill = config.variant.fill(config.alpha, config.anchor);
        let pseudo = batch
            .iter()
            .map(|s| synthesize_pseudo(s, &stats, fill, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mut pseudo_reps = Vec::with_capacity(batch.len());
        let mut pseudo_recons = Vec::with_capacity(batch.len());
        for p in &pseudo {
            let r = encode(&tape, &bound, cfg, &p.view())?;
            pseudo_recons.push(decode(&tape, &bound, cfg, r, &p.timestamps)?);
            pseudo_reps.push(r);
        }

        if loss_cfg.enable_w {
            let refs: Vec<_> = pseudo.iter().collect();
            if let Some(ps) = compute_pseudo_error_stats(&tape, &refs, &pseudo_recons, config.stats_mode)? {
                let mu_r = ps.groups.iter().map(|&g| stats.mu[g]).collect();
                let sigma_r = ps.groups.iter().map(|&g| stats.sigma[g]).collect();
                let mu_r = tape.constant(Tensor::vector(mu_r));
                let sigma_r = tape.constant(Tensor::vector(sigma_r));
                terms.l_w = Some(wasserstein2_gaussian(mu_r, sigma_r, ps.mu, ps.sigma)?);
            }
        }
        if loss_cfg.enable_contrast {
            terms.l_contrast = Some(contrastive_loss(&reps, &pseudo_reps, &loss_cfg)?);
        }
        let masks: Vec<Vec<bool>> = pseudo
            .iter()
            .map(|p| match loss_cfg.pseudo_loss_mask {
                PseudoLossMask::Observed => p.source_mask.clone(),
                PseudoLossMask::Complement => p.source_mask.iter().map(|&m| !m).collect(),
            })
            .collect();
        let pseudo_items: Vec<_> = pseudo
            .iter()
            .zip(&pseudo_recons)
            .zip(&masks)
            .map(|((p, &r), m)| (p.values.data(), r, m.as_slice()))
            .collect();
        terms.l_pseudo_rec =
            Some(masked_reconstruction_loss(&tape, &pseudo_items, loss_cfg.reconstruction_form)?.value);
    }

    let (total, report) = total_loss(&terms, &loss_cfg)?;
    if !report.is_finite() {
        return Err(Error::NonFinite {
            step: state.step,
            batch: batch_id,
            report: report.to_string(),
        });
    }
    let grads = total.backward()?;
    let grads = ModelParams::from_map(bound.iter().map(|(k, v)| (k.clone(), grads.wrt(v))).collect());
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            step: state.step,
            batch: batch_id,
            report: format!("{report} (non-finite gradient)"),
        });
    }
    let mut params = state.model.params.clone();
    let mut optimizer = state.optimizer.clone();
    optimizer.step(&mut params, &grads, config.learning_rate)?;

    state.model.params = params;
    state.optimizer = optimizer;
    state.stats = stats;
    state.rng = rng;
    state.step += 1;
    Ok(report)
}

/// Loss values per optimizer step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossHistory {
    pub entries: Vec<(u64, LossReport)>,
}

impl LossHistory {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.entries.iter().map(|(_, r)| r.total).collect()
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "{}", LossReport::CSV_HEADER)?;
        for (step, r) in &self.entries {
            writeln!(out, "{}", r.csv_row(*step))?;
        }
        Ok(())
    }
}

/// Number of batches per epoch for `n` training instances.
pub fn steps_per_epoch(n: usize, batch_size: usize) -> u64 {
    n.div_ceil(batch_size) as u64
}

/// Trains `state` on the train split until `config.epochs` epochs (or
/// `config.max_steps` steps) have been taken in total, resuming from
/// `state.step`. `on_epoch` runs after each completed epoch.
pub fn train<S: Scalar>(
    dataset: &Dataset<S>,
    state: &mut ModelState<S>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &ModelState<S>) -> Result<()>,
) -> Result<LossHistory> {
    config.validate()?;
    let train_idx = dataset.indices(SplitTag::Train);
    if train_idx.is_empty() {
        return Err(Error::Contract("pre-training needs a nonempty train split".into()));
    }
    if dataset.n_vars() != state.model.config.n_vars {
        return Err(Error::shape(
            "train",
            &[dataset.n_vars()],
            &[state.model.config.n_vars],
        ));
    }
    let per_epoch = steps_per_epoch(train_idx.len(), config.batch_size);
    let mut last = per_epoch.saturating_mul(config.epochs as u64);
    if let Some(cap) = config.max_steps {
        last = last.min(cap);
    }
    let mut history = LossHistory::default();
    while state.step < last {
        let epoch = (state.step / per_epoch) as usize;
        let order = epoch_permutation(train_idx.len(), epoch, config.seed);
        let b = (state.step % per_epoch) as usize;
        let lo = b * config.batch_size;
        let hi = (lo + config.batch_size).min(order.len());
        let batch: Vec<&IrregularSeries<S>> = order[lo..hi]
            .iter()
            .map(|&k| &dataset.instances()[train_idx[k]])
            .collect();
        let step = state.step;
        let report = pretrain_step(state, &batch, config, b)?;
        history.entries.push((step, report));
        if state.step.is_multiple_of(per_epoch) {
            on_epoch(epoch, state)?;
        }
    }
    Ok(history)
}

/// Initializes a model and trains it from scratch.
pub fn pretrain<S: Scalar>(
    dataset: &Dataset<S>,
    encoder: EncoderConfig,
    config: &TrainConfig,
) -> Result<(Checkpoint<S>, LossHistory)> {
    let mut state = ModelState::init(encoder, config)?;
    let history = train(dataset, &mut state, config, |_, _| Ok(()))?;
    Ok((state, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{generate_synthetic, SynthConfig};

    fn tiny_encoder() -> EncoderConfig {
        EncoderConfig {
            tau: 4,
            d_model: 6,
            time_embed_dim: 4,
            hidden_dim: 6,
            n_heads: 2,
            n_vars: 2,
            time_scale: 1.0,
            seed: 3,
        }
    }

    fn tiny_data() -> Dataset<f64> {
        generate_synthetic(&SynthConfig {
            n_instances: 12,
            t_max: 10,
            n_vars: 2,
            missing_rate: 0.5,
            n_classes: 2,
            seed: 1,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn variant_strings_round_trip() {
        for v in Variant::grid() {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("mave(3)".parse::<Variant>().unwrap(), Variant::Mave(3));
        assert!("mave(0)".parse::<Variant>().is_err());
        assert!("bogus".parse::<Variant>().is_err());
        assert_eq!(Variant::grid().len(), 10);
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let model = Model::<f64>::new(tiny_encoder()).unwrap();
        let mut params = model.params.clone();
        let mut adam = Adam::new(&params);
        let zeros = Adam::new(&params).m;
        adam.step(&mut params, &zeros, 1e-3).unwrap();
        assert_eq!(params, model.params);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut params = ModelParams::<f64>::from_map([("w".to_string(), Tensor::vector(vec![1.0, -2.0]))].into());
        let grads = ModelParams::from_map([("w".to_string(), Tensor::vector(vec![0.3, -5.0]))].into());
        let mut adam = Adam::new(&params);
        adam.step(&mut params, &grads, 0.1).unwrap();
        let w = params.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 1.9).abs() < 1e-6, "{w:?}");
    }

    #[test]
    fn baseline_reports_only_original_loss() {
        let data = tiny_data();
        let cfg = TrainConfig {
            variant: Variant::Baseline,
            batch_size: 4,
            max_steps: Some(2),
            ..Default::default()
        };
        let (_, history) = pretrain(&data, tiny_encoder(), &cfg).unwrap();
        assert_eq!(history.len(), 2);
        for (_, r) in &history.entries {
            assert_eq!((r.l_w, r.l_contrast, r.l_pseudo_rec), (0.0, 0.0, 0.0));
            assert!(r.l_orig_rec > 0.0);
        }
    }

    #[test]
    fn same_seed_same_history() {
        let data = tiny_data();
        let cfg = TrainConfig {
            batch_size: 5,
            epochs: 2,
            ..Default::default()
        };
        let (a, ha) = pretrain(&data, tiny_encoder(), &cfg).unwrap();
        let (b, hb) = pretrain(&data, tiny_encoder(), &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a, b);
        assert_eq!(ha.len(), 6);
    }

    #[test]
    fn zero_epochs_is_initial_state() {
        let data = tiny_data();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let (state, history) = pretrain(&data, tiny_encoder(), &cfg).unwrap();
        assert!(history.is_empty());
        assert_eq!(state, ModelState::init(tiny_encoder(), &cfg).unwrap());
    }

    #[test]
    fn shuffling_is_pure() {
        assert_eq!(epoch_permutation(30, 2, 9), epoch_permutation(30, 2, 9));
        assert_ne!(epoch_permutation(30, 2, 9), epoch_permutation(30, 3, 9));
        let mut p = epoch_permutation(30, 0, 1);
        p.sort_unstable();
        assert_eq!(p, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let data = tiny_data();
        let cfg = TrainConfig {
            batch_size: 5,
            epochs: 3,
            ..Default::default()
        };
        let (full, _) = pretrain(&data, tiny_encoder(), &cfg).unwrap();
        let half = TrainConfig {
            max_steps: Some(4),
            ..cfg.clone()
        };
        let (mut state, _) = pretrain(&data, tiny_encoder(), &half).unwrap();
        assert_eq!(state.step, 4);
        train(&data, &mut state, &cfg, |_, _| Ok(())).unwrap();
        assert_eq!(state, full);
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = TrainConfig { rho: 1.5, ..Default::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { learning_rate: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_toml_like_round_trip_through_json() {
        let cfg = TrainConfig {
            variant: Variant::Mave(7),
            anchor: AnchorStrategy::MovingAverage(3),
            ..Default::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"mave(7)\""));
        let back: TrainConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
