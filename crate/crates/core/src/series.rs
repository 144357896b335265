//! Irregularly sampled series, datasets, long-format ingestion, the synthetic
//! generator, min-max normalization, and instance-level splits.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One instance: a `T x C` value grid, its observation mask, and timestamps.
///
/// Values at unobserved cells are stored as zero.
#[derive(Clone, Debug, PartialEq)]
pub struct IrregularSeries<S> {
    timestamps: Vec<S>,
    values: Vec<S>,
    mask: Vec<bool>,
    n_vars: usize,
    label: Option<usize>,
}

impl<S: Scalar> IrregularSeries<S> {
    /// Builds a series from row-major `values`/`mask` of shape
    /// `timestamps.len() x n_vars`. Unobserved values are overwritten with 0.
    pub fn new(
        timestamps: Vec<S>,
        mut values: Vec<S>,
        mask: Vec<bool>,
        n_vars: usize,
        label: Option<usize>,
    ) -> Result<Self> {
        let t = timestamps.len();
        if t == 0 || n_vars == 0 {
            return Err(Error::Validation(format!(
                "series needs T >= 1 and C >= 1, got T={t} C={n_vars}"
            )));
        }
        if values.len() != t * n_vars || mask.len() != t * n_vars {
            return Err(Error::shape(
                "IrregularSeries::new",
                &[t, n_vars],
                &[values.len(), mask.len()],
            ));
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Validation(format!(
                "timestamps must strictly increase (index {})",
                i + 1
            )));
        }
        if timestamps.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("non-finite timestamp".into()));
        }
        for (v, &m) in values.iter_mut().zip(&mask) {
            if !m {
                *v = S::zero();
            } else if !v.is_finite() {
                return Err(Error::Validation("non-finite observed value".into()));
            }
        }
        Ok(Self {
            timestamps,
            values,
            mask,
            n_vars,
            label,
        })
    }

    /// Number of timestamps `T`.
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn timestamps(&self) -> &[S] {
        &self.timestamps
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn label(&self) -> Option<usize> {
        self.label
    }

    pub fn value(&self, t: usize, c: usize) -> S {
        self.values[t * self.n_vars + c]
    }

    pub fn is_observed(&self, t: usize, c: usize) -> bool {
        self.mask[t * self.n_vars + c]
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn observed_in_var(&self, c: usize) -> usize {
        (0..self.len()).filter(|&t| self.is_observed(t, c)).count()
    }

    /// Copy with a new mask; newly hidden cells are zeroed.
    pub fn with_mask(&self, mask: Vec<bool>) -> Result<Self> {
        Self::new(
            self.timestamps.clone(),
            self.values.clone(),
            mask,
            self.n_vars,
            self.label,
        )
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    pub fn view(&self) -> SeriesView<'_, S> {
        SeriesView {
            timestamps: &self.timestamps,
            values: &self.values,
            mask: &self.mask,
            n_vars: self.n_vars,
        }
    }

    fn check_invariants(&self) -> bool {
        self.timestamps.windows(2).all(|w| w[0] < w[1])
            && self.values.len() == self.mask.len()
            && self.mask.len() == self.len() * self.n_vars
    }
}

/// Borrowed `(timestamps, values, mask)` triple fed to the encoder.
#[derive(Clone, Copy, Debug)]
pub struct SeriesView<'a, S> {
    pub timestamps: &'a [S],
    pub values: &'a [S],
    pub mask: &'a [bool],
    pub n_vars: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Valid,
    Test,
}

/// Ordered collection of series sharing one variable count.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<S> {
    instances: Vec<IrregularSeries<S>>,
    ids: Vec<String>,
    n_vars: usize,
    normalization: Option<Vec<(S, S)>>,
    splits: Vec<SplitTag>,
}

impl<S: Scalar> Dataset<S> {
    /// New dataset with every instance tagged `Train`.
    pub fn new(instances: Vec<IrregularSeries<S>>, ids: Vec<String>) -> Result<Self> {
        if ids.len() != instances.len() {
            return Err(Error::Validation(format!(
                "{} ids for {} instances",
                ids.len(),
                instances.len()
            )));
        }
        let n_vars = instances.first().map_or(0, IrregularSeries::n_vars);
        if let Some(i) = instances.iter().position(|s| s.n_vars() != n_vars) {
            return Err(Error::Validation(format!(
                "instance {} has {} variables, expected {n_vars}",
                ids[i],
                instances[i].n_vars()
            )));
        }
        let splits = vec![SplitTag::Train; instances.len()];
        Ok(Self {
            instances,
            ids,
            n_vars,
            normalization: None,
            splits,
        })
    }

    /// Dataset with ids `0..n`.
    pub fn from_instances(instances: Vec<IrregularSeries<S>>) -> Result<Self> {
        let ids = (0..instances.len()).map(|i| i.to_string()).collect();
        Self::new(instances, ids)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn instances(&self) -> &[IrregularSeries<S>] {
        &self.instances
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn normalization(&self) -> Option<&[(S, S)]> {
        self.normalization.as_deref()
    }

    pub fn split_tags(&self) -> &[SplitTag] {
        &self.splits
    }

    /// Indices of instances carrying `tag`, in dataset order.
    pub fn indices(&self, tag: SplitTag) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter_map(|(i, &t)| (t == tag).then_some(i))
            .collect()
    }

    pub fn subset(&self, tag: SplitTag) -> Vec<&IrregularSeries<S>> {
        self.indices(tag)
            .into_iter()
            .map(|i| &self.instances[i])
            .collect()
    }

    pub fn is_labeled(&self) -> bool {
        !self.instances.is_empty() && self.instances.iter().all(|s| s.label().is_some())
    }

    /// Replaces labels, keeping everything else.
    pub fn with_labels(mut self, labels: &[usize]) -> Result<Self> {
        if labels.len() != self.instances.len() {
            return Err(Error::Validation("label count mismatch".into()));
        }
        for (s, &l) in self.instances.iter_mut().zip(labels) {
            s.label = Some(l);
        }
        Ok(self)
    }

    /// Maps a normalized value of variable `c` back to the original scale.
    pub fn denormalize(&self, c: usize, value: S) -> S {
        match &self.normalization {
            Some(params) => {
                let (lo, hi) = params[c];
                if hi == lo {
                    lo
                } else {
                    lo + value * (hi - lo)
                }
            }
            None => value,
        }
    }

    /// Checks the series invariants on every instance.
    pub fn validate(&self) -> bool {
        self.instances
            .iter()
            .all(|s| s.check_invariants() && s.n_vars() == self.n_vars)
    }
}

const HEADER: [&str; 4] = ["instance_id", "timestamp", "variable", "value"];

fn csv_line(err: &csv::Error) -> u64 {
    err.position().map_or(0, csv::Position::line)
}

/// Reads the long format `instance_id,timestamp,variable,value[,label]`.
pub fn load_long_format<S: Scalar>(path: impl AsRef<Path>) -> Result<Dataset<S>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_long_format(file)
}

pub fn read_long_format<S: Scalar, R: Read>(reader: R) -> Result<Dataset<S>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse {
        line: csv_line(&e).max(1),
        detail: e.to_string(),
    })?;
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Dataset::new(Vec::new(), Vec::new());
    }
    let has_label = match header.len() {
        4 => false,
        5 if &header[4] == "label" => true,
        _ => {
            return Err(Error::Parse {
                line: 1,
                detail: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
            })
        }
    };
    if header.iter().take(4).ne(HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            detail: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }

    struct Rows {
        cells: Vec<(f64, usize, f64)>,
        label: Option<usize>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<String, Rows> = HashMap::new();
    let mut seen: HashMap<(String, u64, usize), u64> = HashMap::new();
    let mut n_vars = 0usize;

    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: csv_line(&e),
            detail: e.to_string(),
        })?;
        let line = record.position().map_or(0, csv::Position::line);
        let parse_err = |what: &str, raw: &str| Error::Parse {
            line,
            detail: format!("invalid {what} {raw:?}"),
        };
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(parse_err("instance_id", ""));
        }
        let timestamp: f64 = record[1]
            .parse()
            .map_err(|_| parse_err("timestamp", &record[1]))?;
        let variable: usize = record[2]
            .parse()
            .map_err(|_| parse_err("variable", &record[2]))?;
        let value: f64 = record[3]
            .parse()
            .map_err(|_| parse_err("value", &record[3]))?;
        if !timestamp.is_finite() {
            return Err(Error::Validation(format!(
                "line {line}: non-finite timestamp {timestamp}"
            )));
        }
        if !value.is_finite() {
            return Err(Error::Validation(format!(
                "line {line}: non-finite value {value}"
            )));
        }
        let label = if has_label && !record[4].is_empty() {
            Some(
                record[4]
                    .parse::<usize>()
                    .map_err(|_| parse_err("label", &record[4]))?,
            )
        } else {
            None
        };
        // -0.0 and 0.0 are the same timestamp.
        let key = (id.clone(), (timestamp + 0.0).to_bits(), variable);
        if let Some(prev) = seen.insert(key, line) {
            return Err(Error::Conflict(format!(
                "line {line}: instance {id} already has variable {variable} at timestamp {timestamp} (line {prev})"
            )));
        }
        n_vars = n_vars.max(variable + 1);
        let rows = by_id.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Rows {
                cells: Vec::new(),
                label,
            }
        });
        if rows.label != label {
            return Err(Error::Conflict(format!(
                "line {line}: instance {id} has inconsistent labels"
            )));
        }
        rows.cells.push((timestamp, variable, value));
    }

    let mut instances = Vec::with_capacity(order.len());
    for id in &order {
        let rows = &by_id[id];
        let mut times: Vec<f64> = rows.cells.iter().map(|c| c.0 + 0.0).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let t = times.len();
        let mut values = vec![S::zero(); t * n_vars];
        let mut mask = vec![false; t * n_vars];
        for &(ts, var, v) in &rows.cells {
            let row = times
                .binary_search_by(|x| x.total_cmp(&(ts + 0.0)))
                .expect("timestamp collected above");
            values[row * n_vars + var] = S::lit(v);
            mask[row * n_vars + var] = true;
        }
        let timestamps = times.into_iter().map(S::lit).collect();
        instances.push(IrregularSeries::new(
            timestamps, values, mask, n_vars, rows.label,
        )?);
    }
    Dataset::new(instances, order)
}

/// Writes the observed cells of every instance in long format.
pub fn write_long_format<S: Scalar>(dataset: &Dataset<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_long_format_to(dataset, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_long_format_to<S: Scalar, W: Write>(
    dataset: &Dataset<S>,
    out: &mut W,
) -> std::io::Result<()> {
    let labeled = dataset.instances().iter().any(|s| s.label().is_some());
    let header = HEADER.join(",");
    if labeled {
        writeln!(out, "{header},label")?;
    } else {
        writeln!(out, "{header}")?;
    }
    for (id, s) in dataset.ids().iter().zip(dataset.instances()) {
        for t in 0..s.len() {
            for c in 0..s.n_vars() {
                if !s.is_observed(t, c) {
                    continue;
                }
                let ts = s.timestamps()[t].as_f64();
                let v = s.value(t, c).as_f64();
                if labeled {
                    let label = s.label().map(|l| l.to_string()).unwrap_or_default();
                    writeln!(out, "{id},{ts},{c},{v},{label}")?;
                } else {
                    writeln!(out, "{id},{ts},{c},{v}")?;
                }
            }
        }
    }
    Ok(())
}

/// Parameters of the synthetic class-conditioned generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_instances: usize,
    pub t_max: usize,
    pub n_vars: usize,
    pub missing_rate: f64,
    pub n_classes: usize,
    pub seed: u64,
    /// Standard deviation of additive observation noise.
    pub noise_std: f64,
    /// Gap, in cycles over the unit window, between neighbouring class
    /// base frequencies.
    pub class_spacing: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_instances: 1000,
            t_max: 48,
            n_vars: 4,
            missing_rate: 0.6,
            n_classes: 2,
            seed: 0,
            noise_std: 0.05,
            class_spacing: 1.0,
        }
    }
}

/// Base frequency, in cycles over the unit time window, of class `k`.
pub fn class_frequency(k: usize, spacing: f64) -> f64 {
    1.0 + spacing * k as f64
}

/// Draws a dataset of class-conditioned sinusoid mixtures on a jittered
/// irregular time grid in `[0, 1]`, observed cell by cell with probability
/// `1 - missing_rate`.
///
/// Every instance keeps all `t_max` timestamps (rows may be empty) and at
/// least one observation per variable. Labels cycle through the classes.
pub fn generate_synthetic<S: Scalar>(config: &SynthConfig) -> Result<Dataset<S>> {
    if !(0.0..1.0).contains(&config.missing_rate) {
        return Err(Error::Config(format!(
            "missing_rate must lie in [0, 1), got {}",
            config.missing_rate
        )));
    }
    if config.t_max == 0 || config.n_vars == 0 || config.n_classes == 0 {
        return Err(Error::Config(
            "t_max, n_vars and n_classes must be positive".into(),
        ));
    }
    if config.noise_std.is_nan() || config.noise_std < 0.0 {
        return Err(Error::Config("noise_std must be nonnegative".into()));
    }
    if config.class_spacing <= 0.0 || !config.class_spacing.is_finite() {
        return Err(Error::Config("class_spacing must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (t_max, c_n) = (config.t_max, config.n_vars);
    let observe_p = 1.0 - config.missing_rate;
    let tau = std::f64::consts::TAU;
    let mut instances = Vec::with_capacity(config.n_instances);

    for i in 0..config.n_instances {
        let class = i % config.n_classes;
        let base = class_frequency(class, config.class_spacing);
        let timestamps: Vec<f64> = (0..t_max)
            .map(|k| (k as f64 + rng.random_range(0.1..0.9)) / t_max as f64)
            .collect();
        let mut values = vec![0.0; t_max * c_n];
        for c in 0..c_n {
            let freq = base * (1.0 + 0.1 * c as f64);
            let amp: f64 = rng.random_range(0.8..1.2);
            let phase: f64 = rng.random_range(0.0..tau);
            let phase2: f64 = rng.random_range(0.0..tau);
            let offset = 0.2 * c as f64;
            for (t, &ts) in timestamps.iter().enumerate() {
                let z: f64 = rng.sample(StandardNormal);
                values[t * c_n + c] = amp * (tau * freq * ts + phase).sin()
                    + 0.3 * amp * (0.5 * tau * freq * ts + phase2).sin()
                    + offset
                    + config.noise_std * z;
            }
        }
        let mut mask = vec![false; t_max * c_n];
        for c in 0..c_n {
            loop {
                let mut any = false;
                for t in 0..t_max {
                    let m = rng.random::<f64>() < observe_p;
                    mask[t * c_n + c] = m;
                    any |= m;
                }
                if any {
                    break;
                }
            }
        }
        instances.push(IrregularSeries::new(
            timestamps.into_iter().map(S::lit).collect(),
            values.into_iter().map(S::lit).collect(),
            mask,
            c_n,
            Some(class),
        )?);
    }
    Dataset::from_instances(instances)
}

/// Min-max scales every observed value using per-variable bounds taken from
/// the observed cells of the training split. Constant variables map to 0.5.
pub fn normalize_min_max<S: Scalar>(dataset: &Dataset<S>) -> Result<Dataset<S>> {
    let c_n = dataset.n_vars();
    let mut bounds: Vec<Option<(S, S)>> = vec![None; c_n];
    for i in dataset.indices(SplitTag::Train) {
        let s = &dataset.instances[i];
        for t in 0..s.len() {
            for (c, b) in bounds.iter_mut().enumerate() {
                if !s.is_observed(t, c) {
                    continue;
                }
                let v = s.value(t, c);
                *b = Some(match *b {
                    None => (v, v),
                    Some((lo, hi)) => (lo.min(v), hi.max(v)),
                });
            }
        }
    }
    let bounds: Vec<(S, S)> = bounds
        .into_iter()
        .enumerate()
        .map(|(c, b)| {
            b.ok_or_else(|| {
                Error::Validation(format!(
                    "variable {c} has no observed values in the training split"
                ))
            })
        })
        .collect::<Result<_>>()?;

    let half = S::lit(0.5);
    let mut out = dataset.clone();
    for s in &mut out.instances {
        for t in 0..s.len() {
            for (c, &(lo, hi)) in bounds.iter().enumerate() {
                let k = t * c_n + c;
                if !s.mask[k] {
                    continue;
                }
                s.values[k] = if hi == lo {
                    half
                } else {
                    (s.values[k] - lo) / (hi - lo)
                };
            }
        }
    }
    out.normalization = Some(bounds);
    Ok(out)
}

/// Seeded instance-level partition. Sizes are `floor(ratio * N)` with the
/// remainder going to train.
pub fn split<S: Scalar>(dataset: &Dataset<S>, ratios: (f64, f64, f64), seed: u64) -> Result<Dataset<S>> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| *r < 0.0 || !r.is_finite()) {
        return Err(Error::Split(format!("ratios must be nonnegative, got {ratios:?}")));
    }
    if ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!("ratios must sum to 1, got {ratios:?}")));
    }
    let n = dataset.len();
    if n < 3 && tr > 0.0 && va > 0.0 && te > 0.0 {
        return Err(Error::Split(format!(
            "{n} instances cannot fill three nonempty splits"
        )));
    }
    let n_valid = (va * n as f64).floor() as usize;
    let n_test = (te * n as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = dataset.clone();
    for (rank, &i) in order.iter().enumerate() {
        out.splits[i] = if rank < n_valid {
            SplitTag::Valid
        } else if rank < n_valid + n_test {
            SplitTag::Test
        } else {
            SplitTag::Train
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(ts: &[f64], vals: &[f64], mask: &[bool], c: usize) -> IrregularSeries<f64> {
        IrregularSeries::new(ts.to_vec(), vals.to_vec(), mask.to_vec(), c, None).unwrap()
    }

    #[test]
    fn construction_zeroes_unobserved_and_checks_invariants() {
        let s = series(&[0.0, 1.0], &[1.0, 9.0, 2.0, 7.0], &[true, false, true, true], 2);
        assert_eq!(s.values(), &[1.0, 0.0, 2.0, 7.0]);
        assert!(IrregularSeries::<f64>::new(vec![1.0, 1.0], vec![0.0; 2], vec![true; 2], 1, None).is_err());
        assert!(IrregularSeries::<f64>::new(vec![], vec![], vec![], 1, None).is_err());
        assert!(IrregularSeries::<f64>::new(vec![0.0], vec![0.0; 3], vec![true; 2], 2, None).is_err());
    }

    #[test]
    fn load_two_rows() {
        let csv = "instance_id,timestamp,variable,value\ni0,0.0,0,1.5\ni0,2.0,1,3.0\n";
        let d: Dataset<f64> = read_long_format(csv.as_bytes()).unwrap();
        assert_eq!(d.len(), 1);
        let s = &d.instances()[0];
        assert_eq!(s.len(), 2);
        assert!(s.n_vars() >= 2);
        assert_eq!(s.observed_count(), 2);
        assert_eq!(s.value(1, 1), 3.0);
    }

    #[test]
    fn load_empty_inputs() {
        let d: Dataset<f64> = read_long_format("".as_bytes()).unwrap();
        assert!(d.is_empty());
        let d: Dataset<f64> = read_long_format("instance_id,timestamp,variable,value\n".as_bytes()).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn load_errors() {
        let bad = "instance_id,timestamp,variable,value\ni0,0.0,0,1.5\ni0,x,1,3.0\n";
        match read_long_format::<f64, _>(bad.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let dup = "instance_id,timestamp,variable,value\ni0,0.0,0,1.5\ni0,0.0,0,2.0\n";
        assert!(matches!(read_long_format::<f64, _>(dup.as_bytes()), Err(Error::Conflict(_))));
        let nan = "instance_id,timestamp,variable,value\ni0,0.0,0,NaN\n";
        assert!(matches!(read_long_format::<f64, _>(nan.as_bytes()), Err(Error::Validation(_))));
        let short = "instance_id,timestamp,variable,value\ni0,0.0,0\n";
        assert!(matches!(read_long_format::<f64, _>(short.as_bytes()), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn labels_must_be_constant() {
        let csv = "instance_id,timestamp,variable,value,label\na,0,0,1,1\na,1,0,1,0\n";
        assert!(matches!(read_long_format::<f64, _>(csv.as_bytes()), Err(Error::Conflict(_))));
    }

    #[test]
    fn zero_missing_rate_observes_everything() {
        let cfg = SynthConfig { n_instances: 5, t_max: 10, n_vars: 3, missing_rate: 0.0, ..Default::default() };
        let d: Dataset<f64> = generate_synthetic(&cfg).unwrap();
        assert!(d.instances().iter().all(|s| s.mask().iter().all(|&m| m)));
    }

    #[test]
    fn generator_rejects_bad_missing_rate() {
        for rate in [1.0, -0.1, 1.5] {
            let cfg = SynthConfig { missing_rate: rate, ..Default::default() };
            assert!(matches!(generate_synthetic::<f64>(&cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn generator_keeps_every_variable_observed() {
        let cfg = SynthConfig { n_instances: 200, t_max: 5, n_vars: 3, missing_rate: 0.95, ..Default::default() };
        let d: Dataset<f64> = generate_synthetic(&cfg).unwrap();
        for s in d.instances() {
            for c in 0..3 {
                assert!(s.observed_in_var(c) >= 1);
            }
        }
    }

    #[test]
    fn normalization_examples() {
        let s = series(&[0.0, 1.0, 2.0], &[0.0, 7.0, 5.0, 7.0, 10.0, 0.0], &[true, true, true, true, true, false], 2);
        let d = Dataset::from_instances(vec![s]).unwrap();
        let n = normalize_min_max(&d).unwrap();
        let s = &n.instances()[0];
        assert_eq!([s.value(0, 0), s.value(1, 0), s.value(2, 0)], [0.0, 0.5, 1.0]);
        assert_eq!([s.value(0, 1), s.value(1, 1)], [0.5, 0.5]);
        assert_eq!(n.denormalize(0, 0.5), 5.0);
        assert_eq!(n.denormalize(1, 0.5), 7.0);
    }

    #[test]
    fn normalization_needs_training_observations() {
        let s = series(&[0.0], &[1.0, 0.0], &[true, false], 2);
        let d = Dataset::from_instances(vec![s]).unwrap();
        match normalize_min_max(&d) {
            Err(Error::Validation(msg)) => assert!(msg.contains("variable 1")),
            other => panic!("{other:?}"),
        }
    }

    fn sizes(d: &Dataset<f64>) -> (usize, usize, usize) {
        (
            d.indices(SplitTag::Train).len(),
            d.indices(SplitTag::Valid).len(),
            d.indices(SplitTag::Test).len(),
        )
    }

    fn dummy(n: usize) -> Dataset<f64> {
        let s = series(&[0.0], &[1.0], &[true], 1);
        Dataset::from_instances(vec![s; n]).unwrap()
    }

    #[test]
    fn split_sizes() {
        assert_eq!(sizes(&split(&dummy(10), (0.6, 0.2, 0.2), 1).unwrap()), (6, 2, 2));
        assert_eq!(sizes(&split(&dummy(7), (0.6, 0.2, 0.2), 1).unwrap()), (5, 1, 1));
        assert_eq!(sizes(&split(&dummy(7), (1.0, 0.0, 0.0), 1).unwrap()), (7, 0, 0));
        assert!(matches!(split(&dummy(2), (0.6, 0.2, 0.2), 1), Err(Error::Split(_))));
        assert!(matches!(split(&dummy(10), (0.6, 0.2, 0.3), 1), Err(Error::Split(_))));
    }

    #[test]
    fn split_is_seeded() {
        let d = dummy(50);
        assert_eq!(split(&d, (0.6, 0.2, 0.2), 3).unwrap(), split(&d, (0.6, 0.2, 0.2), 3).unwrap());
        assert_ne!(
            split(&d, (0.6, 0.2, 0.2), 3).unwrap().split_tags(),
            split(&d, (0.6, 0.2, 0.2), 4).unwrap().split_tags()
        );
    }
}
