//! Reconstruction-error statistics with momentum, anchor selection, and
//! synthesis of pseudo-observations at unobserved cells.
//!
//! A pseudo cell is `alpha * anchor + (1 - alpha) * eps` with
//! `eps ~ N(mu_c, sigma_c^2)` drawn from the running error statistics of its
//! variable. Observed cells are carried over unchanged.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{gaussian_sample, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::series::{IrregularSeries, SeriesView};

/// Whether error statistics are kept per variable or pooled over variables.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsMode {
    #[default]
    PerVariable,
    Pooled,
}

/// Running Gaussian statistics of the reconstruction error.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorStats<S> {
    pub mu: Vec<S>,
    pub sigma: Vec<S>,
    pub rho: S,
    pub initialized: bool,
}

fn check_rho(rho: f64) -> Result<()> {
    if (0.0..=1.0).contains(&rho) {
        Ok(())
    } else {
        Err(Error::Config(format!("momentum rho must lie in [0, 1], got {rho}")))
    }
}

impl<S: Scalar> ErrorStats<S> {
    /// Uninitialized statistics with the `N(0, 1)` prior.
    pub fn new(n_vars: usize, rho: f64) -> Result<Self> {
        check_rho(rho)?;
        Ok(Self {
            mu: vec![S::zero(); n_vars],
            sigma: vec![S::one(); n_vars],
            rho: S::lit(rho),
            initialized: false,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.mu.len()
    }

    /// `mu <- rho * mu + (1 - rho) * mu_new`, likewise for sigma. The first
    /// update copies the batch statistics.
    pub fn momentum_update(&self, mu_new: &[S], sigma_new: &[S]) -> Result<Self> {
        let present = vec![true; mu_new.len()];
        self.momentum_update_partial(mu_new, sigma_new, &present)
    }

    /// Momentum update that leaves variables with `present[c] == false`
    /// untouched.
    pub fn momentum_update_partial(&self, mu_new: &[S], sigma_new: &[S], present: &[bool]) -> Result<Self> {
        check_rho(self.rho.as_f64())?;
        let n = self.n_vars();
        if mu_new.len() != n || sigma_new.len() != n || present.len() != n {
            return Err(Error::shape(
                "momentum_update",
                &[n],
                &[mu_new.len(), sigma_new.len(), present.len()],
            ));
        }
        if sigma_new.iter().any(|&s| s < S::zero()) {
            return Err(Error::Domain {
                op: "momentum_update",
                detail: "negative sigma".into(),
            });
        }
        let mut out = self.clone();
        let keep = self.rho;
        let take = S::one() - self.rho;
        for c in 0..n {
            if !present[c] {
                continue;
            }
            if self.initialized {
                out.mu[c] = keep * self.mu[c] + take * mu_new[c];
                out.sigma[c] = keep * self.sigma[c] + take * sigma_new[c];
            } else {
                out.mu[c] = mu_new[c];
                out.sigma[c] = sigma_new[c];
            }
        }
        out.initialized = self.initialized || present.iter().any(|&p| p);
        Ok(out)
    }

    /// Applies batch moments, skipping variables the batch did not cover.
    pub fn apply(&self, moments: &ErrorMoments<S>) -> Result<Self> {
        self.momentum_update_partial(&moments.mu, &moments.sigma, &moments.present)
    }
}

/// Per-variable mean and population standard deviation of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMoments<S> {
    pub mu: Vec<S>,
    pub sigma: Vec<S>,
    /// Whether the batch had any eligible cell for the variable.
    pub present: Vec<bool>,
}

fn mean_and_std<S: Scalar>(xs: &[S]) -> (S, S) {
    let n = S::from_usize(xs.len()).unwrap();
    let mean = xs.iter().copied().sum::<S>() / n;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / n;
    (mean, var.sqrt())
}

/// Mean and population std of `x - x_hat` over observed cells, per variable
/// (or pooled). Variables with no observed cell are marked absent.
pub fn compute_batch_error_stats<S: Scalar>(
    batch: &[&IrregularSeries<S>],
    reconstructions: &[Tensor<S>],
    mode: StatsMode,
) -> Result<ErrorMoments<S>> {
    if batch.len() != reconstructions.len() {
        return Err(Error::shape(
            "compute_batch_error_stats",
            &[batch.len()],
            &[reconstructions.len()],
        ));
    }
    let n_vars = batch.first().map_or(0, |s| s.n_vars());
    let groups = match mode {
        StatsMode::PerVariable => n_vars,
        StatsMode::Pooled => 1,
    };
    let mut errors: Vec<Vec<S>> = vec![Vec::new(); groups];
    for (s, r) in batch.iter().zip(reconstructions) {
        if r.shape() != [s.len(), s.n_vars()] || s.n_vars() != n_vars {
            return Err(Error::shape(
                "compute_batch_error_stats",
                &[s.len(), s.n_vars()],
                r.shape(),
            ));
        }
        for t in 0..s.len() {
            for c in 0..n_vars {
                if s.is_observed(t, c) {
                    let g = if groups == 1 { 0 } else { c };
                    errors[g].push(s.value(t, c) - r.at(t, c));
                }
            }
        }
    }
    if errors.iter().all(Vec::is_empty) {
        return Err(Error::Stats("batch has no observed cells".into()));
    }
    let mut moments = ErrorMoments {
        mu: vec![S::zero(); n_vars],
        sigma: vec![S::one(); n_vars],
        present: vec![false; n_vars],
    };
    for (g, errs) in errors.iter().enumerate() {
        if errs.is_empty() {
            continue;
        }
        let (m, sd) = mean_and_std(errs);
        let targets: Vec<usize> = if groups == 1 { (0..n_vars).collect() } else { vec![g] };
        for c in targets {
            moments.mu[c] = m;
            moments.sigma[c] = sd;
            moments.present[c] = true;
        }
    }
    Ok(moments)
}

/// Contextual base value `x_bar` for a pseudo-observation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AnchorStrategy {
    /// Most recent observation at or before the cell.
    #[default]
    LastObs,
    Zero,
    /// Mean of the variable's observed values in the instance.
    GlobalMean,
    /// Mean of the last `w` observations at or before the cell.
    MovingAverage(usize),
}

impl fmt::Display for AnchorStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AnchorStrategy::LastObs => f.write_str("last_obs"),
            AnchorStrategy::Zero => f.write_str("zero"),
            AnchorStrategy::GlobalMean => f.write_str("global_mean"),
            AnchorStrategy::MovingAverage(w) => write!(f, "moving_average({w})"),
        }
    }
}

impl FromStr for AnchorStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last_obs" => Ok(Self::LastObs),
            "zero" => Ok(Self::Zero),
            "global_mean" | "mean" => Ok(Self::GlobalMean),
            _ => {
                let inner = s
                    .strip_prefix("moving_average(")
                    .and_then(|r| r.strip_suffix(')'))
                    .or_else(|| s.strip_prefix("mave"))
                    .ok_or_else(|| Error::Config(format!("unknown anchor strategy {s:?}")))?;
                let w = inner
                    .trim_start_matches(['(', ':'])
                    .trim_end_matches(')')
                    .parse()
                    .map_err(|_| Error::Config(format!("bad moving-average window in {s:?}")))?;
                Ok(Self::MovingAverage(w))
            }
        }
    }
}

impl TryFrom<String> for AnchorStrategy {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AnchorStrategy> for String {
    fn from(a: AnchorStrategy) -> String {
        a.to_string()
    }
}

/// Per-variable observed means; variables without observations get 0.
fn observed_means<S: Scalar>(series: &IrregularSeries<S>) -> Vec<S> {
    (0..series.n_vars())
        .map(|c| {
            let obs: Vec<S> = (0..series.len())
                .filter(|&t| series.is_observed(t, c))
                .map(|t| series.value(t, c))
                .collect();
            if obs.is_empty() {
                S::zero()
            } else {
                obs.iter().copied().sum::<S>() / S::from_usize(obs.len()).unwrap()
            }
        })
        .collect()
}

/// `T x C` anchors for every cell. Cells before a variable's first
/// observation fall back to its observed mean.
pub fn anchor_values<S: Scalar>(series: &IrregularSeries<S>, strategy: AnchorStrategy) -> Result<Tensor<S>> {
    let (t_n, c_n) = (series.len(), series.n_vars());
    let mut out = vec![S::zero(); t_n * c_n];
    match strategy {
        AnchorStrategy::Zero => {}
        AnchorStrategy::GlobalMean => {
            let means = observed_means(series);
            for t in 0..t_n {
                out[t * c_n..(t + 1) * c_n].copy_from_slice(&means);
            }
        }
        AnchorStrategy::LastObs | AnchorStrategy::MovingAverage(_) => {
            let window = match strategy {
                AnchorStrategy::MovingAverage(0) => {
                    return Err(Error::Config("moving-average window must be at least 1".into()))
                }
                AnchorStrategy::MovingAverage(w) => w,
                _ => 1,
            };
            let means = observed_means(series);
            for c in 0..c_n {
                let mut recent: Vec<S> = Vec::new();
                for t in 0..t_n {
                    if series.is_observed(t, c) {
                        recent.push(series.value(t, c));
                    }
                    out[t * c_n + c] = if recent.is_empty() {
                        means[c]
                    } else {
                        let tail = &recent[recent.len().saturating_sub(window)..];
                        tail.iter().copied().sum::<S>() / S::from_usize(tail.len()).unwrap()
                    };
                }
            }
        }
    }
    Tensor::new(&[t_n, c_n], out)
}

/// Mixing ratio: one constant, or a fresh uniform draw per pseudo cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AlphaMode {
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
}

impl Default for AlphaMode {
    fn default() -> Self {
        AlphaMode::Constant(0.5)
    }
}

impl AlphaMode {
    pub fn validate(&self) -> Result<()> {
        let ok = |a: f64| (0.0..=1.0).contains(&a);
        match *self {
            AlphaMode::Constant(a) if ok(a) => Ok(()),
            AlphaMode::Uniform { lo, hi } if ok(lo) && ok(hi) && lo <= hi => Ok(()),
            other => Err(Error::Config(format!("mixing ratio must lie in [0, 1], got {other}"))),
        }
    }
}

impl fmt::Display for AlphaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlphaMode::Constant(a) => write!(f, "{a}"),
            AlphaMode::Uniform { lo, hi } => write!(f, "uniform({lo},{hi})"),
        }
    }
}

impl FromStr for AlphaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse mixing ratio {s:?}"));
        if let Some(inner) = s.strip_prefix("uniform(").and_then(|r| r.strip_suffix(')')) {
            let (lo, hi) = inner.split_once(',').ok_or_else(bad)?;
            let mode = AlphaMode::Uniform {
                lo: lo.trim().parse().map_err(|_| bad())?,
                hi: hi.trim().parse().map_err(|_| bad())?,
            };
            mode.validate()?;
            return Ok(mode);
        }
        let mode = AlphaMode::Constant(s.parse().map_err(|_| bad())?);
        mode.validate()?;
        Ok(mode)
    }
}

impl TryFrom<String> for AlphaMode {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<AlphaMode> for String {
    fn from(a: AlphaMode) -> String {
        a.to_string()
    }
}

/// How unobserved cells of the pseudo series are filled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PseudoFill {
    /// `alpha * anchor + (1 - alpha) * eps`, `eps ~ N(mu_c, sigma_c^2)`.
    Mixup { alpha: AlphaMode, anchor: AnchorStrategy },
    /// Independent `uniform(0, 1)` draws.
    Uniform,
    /// The variable's observed mean, no sampled error.
    ConstantMean,
}

/// A series whose unobserved cells hold pseudo-observations, plus the trace
/// of how each one was built.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoSeries<S> {
    pub timestamps: Vec<S>,
    pub values: Tensor<S>,
    pub source_mask: Vec<bool>,
    pub anchors: Tensor<S>,
    pub sampled_errors: Tensor<S>,
    pub alphas: Tensor<S>,
    complete_mask: Vec<bool>,
}

impl<S: Scalar> PseudoSeries<S> {
    pub fn n_vars(&self) -> usize {
        self.values.cols()
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// View with every cell marked observed, as fed to the encoder.
    pub fn view(&self) -> SeriesView<'_, S> {
        SeriesView {
            timestamps: &self.timestamps,
            values: self.values.data(),
            mask: &self.complete_mask,
            n_vars: self.n_vars(),
        }
    }

    /// Writes `t,c,anchor,sampled_error,alpha` for every pseudo cell.
    pub fn write_trace<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "t,c,anchor,sampled_error,alpha")?;
        let c_n = self.n_vars();
        for (k, &observed) in self.source_mask.iter().enumerate() {
            if observed {
                continue;
            }
            let (t, c) = (k / c_n, k % c_n);
            writeln!(
                out,
                "{},{c},{},{},{}",
                self.timestamps[t].as_f64(),
                self.anchors.data()[k].as_f64(),
                self.sampled_errors.data()[k].as_f64(),
                self.alphas.data()[k].as_f64()
            )?;
        }
        Ok(())
    }

    /// The pseudo-complete series as an ordinary fully observed series.
    pub fn to_series(&self, label: Option<usize>) -> Result<IrregularSeries<S>> {
        IrregularSeries::new(
            self.timestamps.clone(),
            self.values.data().to_vec(),
            self.complete_mask.clone(),
            self.n_vars(),
            label,
        )
    }
}

/// Builds the pseudo-complete series: observed cells are copied exactly and
/// every unobserved cell is filled per `fill`.
pub fn synthesize_pseudo<S: Scalar, R: Rng + ?Sized>(
    series: &IrregularSeries<S>,
    stats: &ErrorStats<S>,
    fill: PseudoFill,
    rng: &mut R,
) -> Result<PseudoSeries<S>> {
    let (t_n, c_n) = (series.len(), series.n_vars());
    if stats.n_vars() != c_n {
        return Err(Error::shape("synthesize_pseudo", &[c_n], &[stats.n_vars()]));
    }
    let hidden: Vec<usize> = (0..t_n * c_n).filter(|&k| !series.mask()[k]).collect();
    let shape = [t_n, c_n];
    let mut values = series.values().to_vec();
    let mut sampled = vec![S::zero(); t_n * c_n];
    let mut alphas = vec![S::one(); t_n * c_n];

    let anchors = match fill {
        PseudoFill::Mixup { alpha, anchor } => {
            alpha.validate()?;
            let anchors = anchor_values(series, anchor)?;
            let cell_alpha: Vec<S> = match alpha {
                AlphaMode::Constant(a) => vec![S::lit(a); hidden.len()],
                AlphaMode::Uniform { lo, hi } => hidden
                    .iter()
                    .map(|_| S::lit(if lo < hi { rng.random_range(lo..hi) } else { lo }))
                    .collect(),
            };
            let mean = Tensor::vector(hidden.iter().map(|&k| stats.mu[k % c_n]).collect());
            let std = Tensor::vector(hidden.iter().map(|&k| stats.sigma[k % c_n]).collect());
            let eps = gaussian_sample(&mean, &std, rng)?;
            for ((&k, &a), &e) in hidden.iter().zip(&cell_alpha).zip(eps.data()) {
                values[k] = a * anchors.data()[k] + (S::one() - a) * e;
                sampled[k] = e;
                alphas[k] = a;
            }
            anchors
        }
        PseudoFill::Uniform => {
            let mut anchors = Tensor::zeros(&shape);
            for &k in &hidden {
                let u = S::lit(rng.random::<f64>());
                anchors.data_mut()[k] = u;
                values[k] = u;
            }
            anchors
        }
        PseudoFill::ConstantMean => {
            let anchors = anchor_values(series, AnchorStrategy::GlobalMean)?;
            for &k in &hidden {
                values[k] = anchors.data()[k];
            }
            anchors
        }
    };

    Ok(PseudoSeries {
        timestamps: series.timestamps().to_vec(),
        values: Tensor::new(&shape, values)?,
        source_mask: series.mask().to_vec(),
        anchors,
        sampled_errors: Tensor::new(&shape, sampled)?,
        alphas: Tensor::new(&shape, alphas)?,
        complete_mask: vec![true; t_n * c_n],
    })
}

/// Tape-connected pseudo-region error statistics.
pub struct PseudoErrorStats<'t, S> {
    /// Variable index represented by each entry (pooled mode uses `[0]`).
    pub groups: Vec<usize>,
    pub mu: Var<'t, S>,
    pub sigma: Var<'t, S>,
}

/// Mean and population std of `x_tilde - x_hat_p` over cells that were
/// unobserved in the source, kept on the tape so gradients reach the
/// reconstructions. Variables without such cells are left out; `None` when
/// no cell qualifies at all.
pub fn compute_pseudo_error_stats<'t, S: Scalar>(
    tape: &'t Tape<S>,
    pseudo: &[&PseudoSeries<S>],
    reconstructions: &[Var<'t, S>],
    mode: StatsMode,
) -> Result<Option<PseudoErrorStats<'t, S>>> {
    if pseudo.len() != reconstructions.len() {
        return Err(Error::shape(
            "compute_pseudo_error_stats",
            &[pseudo.len()],
            &[reconstructions.len()],
        ));
    }
    let n_vars = pseudo.first().map_or(0, |p| p.n_vars());
    let n_groups = match mode {
        StatsMode::PerVariable => n_vars,
        StatsMode::Pooled => 1,
    };
    let mut parts: Vec<Vec<Var<'t, S>>> = vec![Vec::new(); n_groups];
    for (p, recon) in pseudo.iter().zip(reconstructions) {
        let shape = recon.shape();
        if shape != p.values.shape() {
            return Err(Error::shape("compute_pseudo_error_stats", p.values.shape(), &shape));
        }
        let target = tape.constant(p.values.clone());
        let diff = target.sub(recon)?;
        for (g, group_parts) in parts.iter_mut().enumerate() {
            let select: Vec<bool> = p
                .source_mask
                .iter()
                .enumerate()
                .map(|(k, &m)| !m && (n_groups == 1 || k % n_vars == g))
                .collect();
            if select.iter().any(|&b| b) {
                group_parts.push(diff.masked_select(&select)?);
            }
        }
    }
    let mut groups = Vec::new();
    let mut mus = Vec::new();
    let mut sigmas = Vec::new();
    for (g, group_parts) in parts.iter().enumerate() {
        if group_parts.is_empty() {
            continue;
        }
        let errors = tape.concat(group_parts, 0)?;
        let n = errors.shape()[0];
        let mean = errors.mean()?;
        let centered = errors.sub(&mean.broadcast(&[n])?)?;
        let sigma = centered.square().mean()?.sqrt()?;
        groups.push(g);
        mus.push(mean);
        sigmas.push(sigma);
    }
    if groups.is_empty() {
        return Ok(None);
    }
    Ok(Some(PseudoErrorStats {
        groups,
        mu: tape.concat(&mus, 0)?,
        sigma: tape.concat(&sigmas, 0)?,
    }))
}
