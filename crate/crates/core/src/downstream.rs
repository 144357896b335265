//! Evaluation protocols on top of a pre-trained encoder (classification,
//! interpolation, forecasting) and the metrics they report.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::encoder::{encode, Model, ModelParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::series::{Dataset, IrregularSeries, SeriesView, SplitTag};
use crate::trainer::Adam;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    #[default]
    Interpolation,
    Forecasting,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Classification => "classification",
            TaskKind::Interpolation => "interpolation",
            TaskKind::Forecasting => "forecasting",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "classification" => Ok(TaskKind::Classification),
            "interpolation" => Ok(TaskKind::Interpolation),
            "forecasting" => Ok(TaskKind::Forecasting),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneMode {
    /// Frozen encoder, linear head on standardized pooled features.
    #[default]
    LinearProbe,
    /// Encoder and head trained together.
    FullFinetune,
}

impl FromStr for FinetuneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "linear_probe" => Ok(FinetuneMode::LinearProbe),
            "full_finetune" => Ok(FinetuneMode::FullFinetune),
            other => Err(Error::Config(format!("unknown fine-tune mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Fraction of observed cells hidden for interpolation.
    pub mask_fraction: f64,
    /// Forecast split as a fraction of each instance's time range.
    pub split_point: f64,
    pub finetune: FinetuneMode,
    /// Split the metrics are computed on.
    pub eval_split: SplitTag,
    pub seed: u64,
    pub head_epochs: usize,
    pub head_learning_rate: f64,
    pub head_weight_decay: f64,
    /// Encoder learning rate under full fine-tuning.
    pub finetune_learning_rate: f64,
    pub finetune_batch_size: usize,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::Interpolation,
            mask_fraction: 0.3,
            split_point: 0.5,
            finetune: FinetuneMode::LinearProbe,
            eval_split: SplitTag::Test,
            seed: 0,
            head_epochs: 300,
            head_learning_rate: 0.05,
            head_weight_decay: 1e-4,
            finetune_learning_rate: 1e-3,
            finetune_batch_size: 50,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.mask_fraction > 0.0 && self.mask_fraction < 1.0) {
            return Err(Error::Config(format!(
                "mask fraction must lie in (0, 1), got {}",
                self.mask_fraction
            )));
        }
        if !(self.split_point > 0.0 && self.split_point < 1.0) {
            return Err(Error::Config(format!(
                "split point must lie in (0, 1), got {}",
                self.split_point
            )));
        }
        if !(self.head_learning_rate > 0.0 && self.finetune_learning_rate > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.finetune_batch_size == 0 {
            return Err(Error::Config("finetune_batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- metrics

fn check_binary(scores: &[f64], labels: &[bool], op: &str) -> Result<(usize, usize)> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::Metric(format!(
            "{op}: {} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Metric(format!("{op}: non-finite score")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Metric(format!("{op} needs both classes present")));
    }
    Ok((pos, neg))
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half. Computed from midranks.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_binary(scores, labels, "auroc")?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: sum over distinct thresholds of the recall increment
/// times the precision at that threshold. Tied scores enter together.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, _) = check_binary(scores, labels, "auprc")?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut area, mut last_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        tp += order[i..=j].iter().filter(|&&k| labels[k]).count();
        seen += j - i + 1;
        let recall = tp as f64 / pos as f64;
        area += (recall - last_recall) * tp as f64 / seen as f64;
        last_recall = recall;
        i = j + 1;
    }
    Ok(area)
}

fn check_preds(preds: &[usize], labels: &[usize]) -> Result<()> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::Metric(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_preds(preds, labels)?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Per-class (precision, recall, f1); an undefined ratio counts as 0.
fn per_class(preds: &[usize], labels: &[usize], class: usize) -> (f64, f64, f64) {
    let tp = preds.iter().zip(labels).filter(|&(&p, &l)| p == class && l == class).count() as f64;
    let predicted = preds.iter().filter(|&&p| p == class).count() as f64;
    let actual = labels.iter().filter(|&&l| l == class).count() as f64;
    let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
    let recall = if actual > 0.0 { tp / actual } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1)
}

/// Classes scored: class 1 alone for binary problems, otherwise every class
/// appearing in labels or predictions (macro average).
fn scored_classes(preds: &[usize], labels: &[usize], n_classes: usize) -> Vec<usize> {
    if n_classes <= 2 {
        return vec![1];
    }
    let mut classes: Vec<usize> = preds.iter().chain(labels).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    classes
}

fn averaged(preds: &[usize], labels: &[usize], n_classes: usize, pick: fn((f64, f64, f64)) -> f64) -> Result<f64> {
    check_preds(preds, labels)?;
    let classes = scored_classes(preds, labels, n_classes);
    let total: f64 = classes.iter().map(|&c| pick(per_class(preds, labels, c))).sum();
    Ok(total / classes.len() as f64)
}

pub fn precision(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<f64> {
    averaged(preds, labels, n_classes, |m| m.0)
}

pub fn recall(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<f64> {
    averaged(preds, labels, n_classes, |m| m.1)
}

pub fn f1(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<f64> {
    averaged(preds, labels, n_classes, |m| m.2)
}

fn support_pairs<'a>(
    preds: &'a [f64],
    targets: &'a [f64],
    support: &'a [bool],
) -> Result<impl Iterator<Item = (f64, f64)> + 'a> {
    if preds.len() != targets.len() || preds.len() != support.len() {
        return Err(Error::Metric(format!(
            "{} predictions, {} targets, {} support flags",
            preds.len(),
            targets.len(),
            support.len()
        )));
    }
    if !support.iter().any(|&s| s) {
        return Err(Error::Metric("empty support".into()));
    }
    Ok(preds
        .iter()
        .zip(targets)
        .zip(support)
        .filter(|(_, &s)| s)
        .map(|((&p, &t), _)| (p, t)))
}

/// Mean squared error over cells with `support` set.
pub fn mse(preds: &[f64], targets: &[f64], support: &[bool]) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, t) in support_pairs(preds, targets, support)? {
        sum += (p - t) * (p - t);
        n += 1;
    }
    Ok(sum / n as f64)
}

/// Mean absolute error over cells with `support` set.
pub fn mae(preds: &[f64], targets: &[f64], support: &[bool]) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, t) in support_pairs(preds, targets, support)? {
        sum += (p - t).abs();
        n += 1;
    }
    Ok(sum / n as f64)
}

// ---------------------------------------------------------------- predictors

/// Anything that can fill a series at given timestamps from visible cells.
pub trait Imputer<S: Scalar> {
    /// Predicts a `targets.len() x C` tensor from the visible cells of `view`.
    fn predict(&self, view: &SeriesView<'_, S>, targets: &[S]) -> Result<Tensor<S>>;
}

impl<S: Scalar> Imputer<S> for Model<S> {
    fn predict(&self, view: &SeriesView<'_, S>, targets: &[S]) -> Result<Tensor<S>> {
        self.reconstruct(view, targets)
    }
}

fn visible_means<S: Scalar>(view: &SeriesView<'_, S>) -> Vec<S> {
    let c_n = view.n_vars;
    (0..c_n)
        .map(|c| {
            let obs: Vec<S> = (0..view.timestamps.len())
                .filter(|&t| view.mask[t * c_n + c])
                .map(|t| view.values[t * c_n + c])
                .collect();
            if obs.is_empty() {
                S::zero()
            } else {
                obs.iter().copied().sum::<S>() / S::from_usize(obs.len()).unwrap()
            }
        })
        .collect()
}

/// Predicts each variable's mean over visible cells (0 if none).
#[derive(Clone, Copy, Debug, Default)]
pub struct VisibleMean;

impl<S: Scalar> Imputer<S> for VisibleMean {
    fn predict(&self, view: &SeriesView<'_, S>, targets: &[S]) -> Result<Tensor<S>> {
        let means = visible_means(view);
        let data = targets.iter().flat_map(|_| means.iter().copied()).collect();
        Tensor::new(&[targets.len(), view.n_vars], data)
    }
}

/// Last visible observation at or before each target time; the visible
/// mean before the first one.
#[derive(Clone, Copy, Debug, Default)]
pub struct Locf;

impl<S: Scalar> Imputer<S> for Locf {
    fn predict(&self, view: &SeriesView<'_, S>, targets: &[S]) -> Result<Tensor<S>> {
        let c_n = view.n_vars;
        let means = visible_means(view);
        let mut data = Vec::with_capacity(targets.len() * c_n);
        for &target in targets {
            for (c, &mean) in means.iter().enumerate() {
                let last = (0..view.timestamps.len())
                    .rev()
                    .find(|&t| view.timestamps[t] <= target && view.mask[t * c_n + c]);
                data.push(last.map_or(mean, |t| view.values[t * c_n + c]));
            }
        }
        Tensor::new(&[targets.len(), c_n], data)
    }
}

// ---------------------------------------------------------------- harnesses

/// Metrics for one seed plus the number of instances left out.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TaskResult {
    pub metrics: BTreeMap<String, f64>,
    pub excluded: usize,
}

/// Number of cells hidden out of `observed`: `round(fraction * observed)`,
/// at least 1.
pub fn hidden_count(observed: usize, fraction: f64) -> usize {
    ((fraction * observed as f64).round() as usize).max(1)
}

/// Observed cells hidden for interpolation; depends only on the series,
/// `seed` and `instance`.
pub fn select_hidden<S: Scalar>(series: &IrregularSeries<S>, fraction: f64, seed: u64, instance: u64) -> Vec<usize> {
    let observed: Vec<usize> = (0..series.mask().len()).filter(|&k| series.mask()[k]).collect();
    let k = hidden_count(observed.len(), fraction).min(observed.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(instance);
    let mut picked: Vec<usize> = sample(&mut rng, observed.len(), k).into_iter().map(|i| observed[i]).collect();
    picked.sort_unstable();
    picked
}

/// Accumulates prediction/target pairs and cross-checks the metric
/// primitives against a direct sum.
#[derive(Default)]
struct ErrorPool {
    preds: Vec<f64>,
    targets: Vec<f64>,
}

impl ErrorPool {
    fn push(&mut self, pred: f64, target: f64) {
        self.preds.push(pred);
        self.targets.push(target);
    }

    fn finish(self, excluded: usize) -> Result<TaskResult> {
        if self.preds.is_empty() {
            return Err(Error::Task("no instance could be evaluated".into()));
        }
        let support = vec![true; self.preds.len()];
        let m = mse(&self.preds, &self.targets, &support)?;
        let a = mae(&self.preds, &self.targets, &support)?;
        let n = self.preds.len() as f64;
        let direct: f64 = self.preds.iter().zip(&self.targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n;
        if (direct - m).abs() > 1e-12 * direct.abs().max(1.0) {
            return Err(Error::Metric(format!("mse cross-check failed: {m} vs {direct}")));
        }
        Ok(TaskResult {
            metrics: BTreeMap::from([("mae".to_string(), a), ("mse".to_string(), m)]),
            excluded,
        })
    }
}

fn eval_instances<S: Scalar>(dataset: &Dataset<S>, split: SplitTag) -> Vec<(usize, &IrregularSeries<S>)> {
    dataset
        .indices(split)
        .into_iter()
        .map(|i| (i, &dataset.instances()[i]))
        .collect()
}

/// Hides a seeded fraction of observed cells, reconstructs at every
/// timestamp and scores the hidden cells. Instances with fewer than 4
/// observed cells are excluded.
pub fn eval_interpolation<S: Scalar>(
    predictor: &dyn Imputer<S>,
    dataset: &Dataset<S>,
    spec: &TaskSpec,
) -> Result<TaskResult> {
    spec.validate()?;
    let mut pool = ErrorPool::default();
    let mut excluded = 0;
    for (index, series) in eval_instances(dataset, spec.eval_split) {
        if series.observed_count() < 4 {
            excluded += 1;
            continue;
        }
        let hidden = select_hidden(series, spec.mask_fraction, spec.seed, index as u64);
        let mut mask = series.mask().to_vec();
        for &k in &hidden {
            mask[k] = false;
        }
        let view = SeriesView { mask: &mask, ..series.view() };
        let pred = predictor.predict(&view, series.timestamps())?;
        if pred.shape() != [series.len(), series.n_vars()] {
            return Err(Error::shape("eval_interpolation", pred.shape(), &[series.len(), series.n_vars()]));
        }
        for &k in &hidden {
            pool.push(pred.data()[k].as_f64(), series.values()[k].as_f64());
        }
    }
    pool.finish(excluded)
}

/// Absolute split time of `series` at `fraction` of its time range.
pub fn split_time<S: Scalar>(series: &IrregularSeries<S>, fraction: f64) -> f64 {
    let ts = series.timestamps();
    let (t0, t1) = (ts[0].as_f64(), ts[ts.len() - 1].as_f64());
    t0 + fraction * (t1 - t0)
}

/// Encoder-visible mask for forecasting: observed cells at or before the
/// split time.
pub fn forecast_input_mask<S: Scalar>(series: &IrregularSeries<S>, split: f64) -> Vec<bool> {
    let c_n = series.n_vars();
    series
        .mask()
        .iter()
        .enumerate()
        .map(|(k, &m)| m && series.timestamps()[k / c_n].as_f64() <= split)
        .collect()
}

/// Encodes the observations up to the split point and predicts the observed
/// cells after it. Instances with nothing on either side are excluded.
pub fn eval_forecasting<S: Scalar>(
    predictor: &dyn Imputer<S>,
    dataset: &Dataset<S>,
    spec: &TaskSpec,
) -> Result<TaskResult> {
    spec.validate()?;
    let mut pool = ErrorPool::default();
    let mut excluded = 0;
    for (_, series) in eval_instances(dataset, spec.eval_split) {
        let c_n = series.n_vars();
        let split = split_time(series, spec.split_point);
        let input = forecast_input_mask(series, split);
        let horizon: Vec<usize> = (0..series.len())
            .filter(|&t| series.timestamps()[t].as_f64() > split && (0..c_n).any(|c| series.is_observed(t, c)))
            .collect();
        if !input.iter().any(|&m| m) || horizon.is_empty() {
            excluded += 1;
            continue;
        }
        let view = SeriesView { mask: &input, ..series.view() };
        let targets: Vec<S> = horizon.iter().map(|&t| series.timestamps()[t]).collect();
        let pred = predictor.predict(&view, &targets)?;
        for (row, &t) in horizon.iter().enumerate() {
            for c in 0..c_n {
                if series.is_observed(t, c) {
                    pool.push(pred.at(row, c).as_f64(), series.value(t, c).as_f64());
                }
            }
        }
    }
    pool.finish(excluded)
}

/// Mean over the reference axis of the `tau x D` representation.
pub fn pooled_features<S: Scalar>(model: &Model<S>, series: &IrregularSeries<S>) -> Result<Vec<f64>> {
    let r = model.encode(&series.view())?;
    let (rows, cols) = (r.rows(), r.cols());
    Ok((0..cols)
        .map(|j| (0..rows).map(|i| r.at(i, j).as_f64()).sum::<f64>() / rows as f64)
        .collect())
}

fn labels_of<S: Scalar>(items: &[&IrregularSeries<S>]) -> Result<Vec<usize>> {
    items
        .iter()
        .map(|s| s.label().ok_or_else(|| Error::Task("labels required for classification".into())))
        .collect()
}

/// Row-wise softmax of `x @ w + b`.
fn head_probs(x: &[Vec<f64>], w: &[Vec<f64>], b: &[f64]) -> Vec<Vec<f64>> {
    x.iter()
        .map(|row| {
            let logits: Vec<f64> = (0..b.len())
                .map(|k| b[k] + row.iter().zip(w).map(|(xi, wi)| xi * wi[k]).sum::<f64>())
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / z).collect()
        })
        .collect()
}

/// Full-batch softmax regression trained with Adam on the cross-entropy.
fn train_linear_head(x: &[Vec<f64>], y: &[usize], n_classes: usize, spec: &TaskSpec) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = x[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut w: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..n_classes).map(|_| 0.01 * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let mut b = vec![0.0; n_classes];
    let n_params = d * n_classes + n_classes;
    let (mut m, mut v) = (vec![0.0; n_params], vec![0.0; n_params]);
    let n = x.len() as f64;
    for epoch in 1..=spec.head_epochs {
        let probs = head_probs(x, &w, &b);
        let mut grad = vec![0.0; n_params];
        for ((row, p), &label) in x.iter().zip(&probs).zip(y) {
            for k in 0..n_classes {
                let delta = (p[k] - if k == label { 1.0 } else { 0.0 }) / n;
                for (j, &xj) in row.iter().enumerate() {
                    grad[j * n_classes + k] += delta * xj;
                }
                grad[d * n_classes + k] += delta;
            }
        }
        for j in 0..d {
            for k in 0..n_classes {
                grad[j * n_classes + k] += spec.head_weight_decay * w[j][k];
            }
        }
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let c1 = 1.0 - f64::powi(b1, epoch as i32);
        let c2 = 1.0 - f64::powi(b2, epoch as i32);
        for (i, &g) in grad.iter().enumerate() {
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let update = spec.head_learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            if i < d * n_classes {
                w[i / n_classes][i % n_classes] -= update;
            } else {
                b[i - d * n_classes] -= update;
            }
        }
    }
    (w, b)
}

/// Classification metrics from class probabilities.
pub fn classification_metrics(probs: &[Vec<f64>], labels: &[usize], n_classes: usize) -> Result<BTreeMap<String, f64>> {
    let preds: Vec<usize> = probs
        .iter()
        .map(|p| {
            p.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                .0
        })
        .collect();
    let one_vs_rest: Vec<usize> = if n_classes <= 2 {
        vec![1]
    } else {
        (0..n_classes).filter(|&c| labels.contains(&c) && labels.iter().any(|&l| l != c)).collect()
    };
    if one_vs_rest.is_empty() {
        return Err(Error::Metric("evaluation labels contain a single class".into()));
    }
    let (mut roc, mut pr) = (0.0, 0.0);
    for &c in &one_vs_rest {
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let truth: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        roc += auroc(&scores, &truth)?;
        pr += auprc(&scores, &truth)?;
    }
    let k = one_vs_rest.len() as f64;
    Ok(BTreeMap::from([
        ("accuracy".to_string(), accuracy(&preds, labels)?),
        ("auprc".to_string(), pr / k),
        ("auroc".to_string(), roc / k),
        ("f1".to_string(), f1(&preds, labels, n_classes)?),
        ("precision".to_string(), precision(&preds, labels, n_classes)?),
        ("recall".to_string(), recall(&preds, labels, n_classes)?),
    ]))
}

fn standardize(train: &mut [Vec<f64>], test: &mut [Vec<f64>]) {
    let d = train[0].len();
    let n = train.len() as f64;
    for j in 0..d {
        let mean = train.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = train.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let scale = if var > 1e-24 { var.sqrt() } else { 1.0 };
        for row in train.iter_mut().chain(test.iter_mut()) {
            row[j] = (row[j] - mean) / scale;
        }
    }
}

/// Mean-pooled encoder features and a softmax head trained on the train
/// split; metrics on `spec.eval_split`.
pub fn eval_classification<S: Scalar>(model: &Model<S>, dataset: &Dataset<S>, spec: &TaskSpec) -> Result<TaskResult> {
    spec.validate()?;
    if !dataset.is_labeled() {
        return Err(Error::Task("labels required for classification".into()));
    }
    if dataset.n_vars() != model.config.n_vars {
        return Err(Error::Task(format!(
            "checkpoint expects {} variables, dataset has {}",
            model.config.n_vars,
            dataset.n_vars()
        )));
    }
    let train = dataset.subset(SplitTag::Train);
    let test = dataset.subset(spec.eval_split);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Task("classification needs nonempty train and evaluation splits".into()));
    }
    let y_train = labels_of(&train)?;
    let y_test = labels_of(&test)?;
    let n_classes = y_train.iter().chain(&y_test).max().unwrap() + 1;
    if y_train.iter().all(|&l| l == y_train[0]) {
        return Err(Error::Task("training split contains a single class".into()));
    }
    let probs = match spec.finetune {
        FinetuneMode::LinearProbe => {
            let mut x_train = train.iter().map(|s| pooled_features(model, s)).collect::<Result<Vec<_>>>()?;
            let mut x_test = test.iter().map(|s| pooled_features(model, s)).collect::<Result<Vec<_>>>()?;
            standardize(&mut x_train, &mut x_test);
            let (w, b) = train_linear_head(&x_train, &y_train, n_classes, spec);
            head_probs(&x_test, &w, &b)
        }
        FinetuneMode::FullFinetune => finetune(model, &train, &y_train, &test, n_classes, spec)?,
    };
    Ok(TaskResult {
        metrics: classification_metrics(&probs, &y_test, n_classes)?,
        excluded: 0,
    })
}

/// Trains encoder and a linear head on mean-pooled representations with
/// minibatch Adam, then returns class probabilities for `test`.
fn finetune<S: Scalar>(
    model: &Model<S>,
    train: &[&IrregularSeries<S>],
    y_train: &[usize],
    test: &[&IrregularSeries<S>],
    n_classes: usize,
    spec: &TaskSpec,
) -> Result<Vec<Vec<f64>>> {
    let d = model.config.d_model;
    let tau = model.config.tau;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let w: Vec<S> = (0..d * n_classes)
        .map(|_| S::lit(0.01 * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let mut params = model.params.clone();
    let mut head = ModelParams::from_map(BTreeMap::from([
        ("head.w".to_string(), Tensor::new(&[d, n_classes], w)?),
        ("head.b".to_string(), Tensor::zeros(&[1, n_classes])),
    ]));
    let mut opt = Adam::new(&params);
    let mut head_opt = Adam::new(&head);
    let inv_tau = S::lit(1.0 / tau as f64);

    let n = train.len();
    for epoch in 0..spec.head_epochs.min(50) {
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        shuffle_rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(spec.finetune_batch_size) {
            let tape = Tape::new();
            let bound = params.bind(&tape, true);
            let hb = head.bind(&tape, true);
            let mut total = tape.scalar(S::zero());
            for &i in chunk {
                let r = encode(&tape, &bound, &model.config, &train[i].view())?;
                let pooled = r.sum_cols().scale(inv_tau);
                let logits = pooled.matmul(&hb.get("head.w")?)?.add_row(&hb.get("head.b")?)?;
                let p = logits.softmax_rows();
                let mut onehot = Tensor::zeros(&[1, n_classes]);
                onehot.data_mut()[y_train[i]] = S::one();
                let nll = p.mul(&tape.constant(onehot))?.sum().log_clamped().scale(-S::one());
                total = total.add(&nll)?;
            }
            let loss = total.scale(S::one() / S::from_usize(chunk.len()).unwrap());
            let grads = loss.backward()?;
            let g_enc = ModelParams::from_map(bound.iter().map(|(k, v)| (k.clone(), grads.wrt(v))).collect());
            let g_head = ModelParams::from_map(hb.iter().map(|(k, v)| (k.clone(), grads.wrt(v))).collect());
            opt.step(&mut params, &g_enc, spec.finetune_learning_rate)?;
            head_opt.step(&mut head, &g_head, spec.head_learning_rate)?;
        }
    }
    let tuned = Model::from_parts(model.config.clone(), params)?;
    let w = head.get("head.w").unwrap();
    let b = head.get("head.b").unwrap();
    let w_rows: Vec<Vec<f64>> = (0..d).map(|j| (0..n_classes).map(|k| w.at(j, k).as_f64()).collect()).collect();
    let b_row: Vec<f64> = (0..n_classes).map(|k| b.data()[k].as_f64()).collect();
    let x_test = test.iter().map(|s| pooled_features(&tuned, s)).collect::<Result<Vec<_>>>()?;
    Ok(head_probs(&x_test, &w_rows, &b_row))
}

/// Runs one task for one seed (the seed replaces `spec.seed`).
pub fn evaluate_once<S: Scalar>(model: &Model<S>, dataset: &Dataset<S>, spec: &TaskSpec, seed: u64) -> Result<TaskResult> {
    let spec = TaskSpec { seed, ..spec.clone() };
    if dataset.n_vars() != model.config.n_vars {
        return Err(Error::Task(format!(
            "checkpoint expects {} variables, dataset has {}",
            model.config.n_vars,
            dataset.n_vars()
        )));
    }
    match spec.kind {
        TaskKind::Classification => eval_classification(model, dataset, &spec),
        TaskKind::Interpolation => eval_interpolation(model, dataset, &spec),
        TaskKind::Forecasting => eval_forecasting(model, dataset, &spec),
    }
}

/// Mean, sample standard deviation and raw per-seed values of one metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std,
            per_seed: values,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: TaskKind,
    pub metrics: BTreeMap<String, MetricSummary>,
    /// Instances left out of the evaluation, per seed.
    pub excluded: Vec<usize>,
    pub config_echo: serde_json::Value,
}

impl MetricsReport {
    pub fn from_results(task: TaskKind, results: &[TaskResult], config_echo: serde_json::Value) -> Result<Self> {
        if results.is_empty() {
            return Err(Error::Task("no evaluation seeds".into()));
        }
        let mut metrics = BTreeMap::new();
        for name in results[0].metrics.keys() {
            let values = results.iter().map(|r| r.metrics[name]).collect();
            metrics.insert(name.clone(), MetricSummary::from_values(values));
        }
        Ok(Self {
            task,
            metrics,
            excluded: results.iter().map(|r| r.excluded).collect(),
            config_echo,
        })
    }

    /// One line: `task metric=mean±std ...`.
    pub fn summary_line(&self) -> String {
        let parts: Vec<String> = self
            .metrics
            .iter()
            .map(|(k, m)| format!("{k}={:.6}±{:.6}", m.mean, m.std))
            .collect();
        format!("{} {}", self.task, parts.join(" "))
    }
}

/// Evaluates `model` under every seed and aggregates.
pub fn evaluate<S: Scalar>(
    model: &Model<S>,
    dataset: &Dataset<S>,
    spec: &TaskSpec,
    seeds: &[u64],
    config_echo: serde_json::Value,
) -> Result<MetricsReport> {
    let results = seeds
        .iter()
        .map(|&seed| evaluate_once(model, dataset, spec, seed))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_results(spec.kind, &results, config_echo)
}
