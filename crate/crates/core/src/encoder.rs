//! Masked-attention encoder and time-conditioned decoder.
//!
//! The encoder turns every observed `(timestamp, variable, value)` cell into
//! a token. `tau` reference points sit at fixed times `(k + 0.5) / tau` of
//! the time window; each attention head scores a token by a learned content
//! match minus `gamma_j * (t - r_k)^2`, so heads with different `gamma_j`
//! smooth the series at different bandwidths around every reference point.
//! A two-layer feedforward maps the concatenated head contexts to `tau x D`.
//! Unobserved cells never become tokens, which is the same as masking their
//! attention logits to `-inf`.
//!
//! The decoder embeds each target timestamp, attends over the `tau`
//! representation rows with the same kind of distance penalty, and projects
//! to `C` values.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::series::SeriesView;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Number of reference points (rows of the representation).
    pub tau: usize,
    /// Representation width `D`.
    pub d_model: usize,
    pub time_embed_dim: usize,
    pub hidden_dim: usize,
    /// Attention heads from the reference queries over the tokens.
    pub n_heads: usize,
    pub n_vars: usize,
    /// Length of the time window. Timestamps are divided by it before the
    /// sinusoidal features and reference distances are computed.
    pub time_scale: f64,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            tau: 16,
            d_model: 32,
            time_embed_dim: 16,
            hidden_dim: 32,
            n_heads: 4,
            n_vars: 4,
            time_scale: 1.0,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("tau", self.tau),
            ("d_model", self.d_model),
            ("time_embed_dim", self.time_embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("n_heads", self.n_heads),
            ("n_vars", self.n_vars),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if !(self.time_scale > 0.0 && self.time_scale.is_finite()) {
            return Err(Error::Config("time_scale must be positive".into()));
        }
        Ok(())
    }

    /// Names and shapes of every parameter tensor.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (e, c, h, d, tau) = (
            self.time_embed_dim,
            self.n_vars,
            self.hidden_dim,
            self.d_model,
            self.tau,
        );
        let mut shapes: Vec<(String, Vec<usize>)> = vec![
            ("enc.w_in".into(), vec![e + c + 1, h]),
            ("enc.b_in".into(), vec![1, h]),
        ];
        for j in 0..self.n_heads {
            shapes.push((format!("enc.log_sharp.{j}"), vec![1, 1]));
            shapes.push((format!("enc.w_key.{j}"), vec![h, h]));
            shapes.push((format!("enc.w_value.{j}"), vec![h, h]));
            shapes.push((format!("enc.queries.{j}"), vec![tau, h]));
        }
        let tail = [
            ("enc.w_ff1", vec![self.n_heads * h, h]),
            ("enc.b_ff1", vec![1, h]),
            ("enc.w_ff2", vec![h, d]),
            ("enc.b_ff2", vec![1, d]),
            ("dec.log_sharp", vec![1, 1]),
            ("dec.w_query", vec![e, d]),
            ("dec.w_ctx", vec![d, h]),
            ("dec.w_time", vec![e, h]),
            ("dec.b_hidden", vec![1, h]),
            ("dec.w_out", vec![h, c]),
            ("dec.b_out", vec![1, c]),
        ];
        shapes.extend(tail.into_iter().map(|(n, s)| (n.to_string(), s)));
        shapes
    }
}

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    tensors: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> ModelParams<S> {
    pub fn from_map(tensors: BTreeMap<String, Tensor<S>>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<S>)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    /// Checks names and shapes against `config`.
    pub fn check(&self, config: &EncoderConfig) -> Result<()> {
        let shapes = config.param_shapes();
        if shapes.len() != self.tensors.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter tensors, found {}",
                shapes.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in shapes {
            match self.tensors.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => return Err(Error::shape("ModelParams::check", &shape, t.shape())),
                None => return Err(Error::Contract(format!("missing parameter {name}"))),
            }
        }
        Ok(())
    }

    /// Places every tensor on `tape`, trainable or constant.
    pub fn bind<'t>(&self, tape: &'t Tape<S>, trainable: bool) -> BoundParams<'t, S> {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let var = if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), var)
            })
            .collect();
        BoundParams { vars }
    }
}

/// Parameters placed on a tape.
pub struct BoundParams<'t, S> {
    vars: BTreeMap<String, Var<'t, S>>,
}

impl<'t, S: Scalar> BoundParams<'t, S> {
    pub fn get(&self, name: &str) -> Result<Var<'t, S>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var<'t, S>)> {
        self.vars.iter()
    }
}

/// Fixed reference times `(k + 0.5) / tau` in window units.
pub fn reference_times(tau: usize) -> Vec<f64> {
    (0..tau).map(|k| (k as f64 + 0.5) / tau as f64).collect()
}

/// Starting kernel width, in window units, of a log-sharpness parameter:
/// half a reference spacing times `3^j` for encoder head `j`, one spacing for
/// the decoder.
fn initial_bandwidth(name: &str, config: &EncoderConfig) -> Option<f64> {
    let spacing = 1.0 / config.tau as f64;
    if name == "dec.log_sharp" {
        return Some(spacing);
    }
    let j: i32 = name.strip_prefix("enc.log_sharp.")?.parse().ok()?;
    Some(0.5 * spacing * 3f64.powi(j))
}

/// `[times.len(), refs.len()]` matrix of `(t / scale - r)^2`.
fn squared_distances<S: Scalar>(times: &[S], refs: &[f64], scale: f64) -> Tensor<S> {
    let data = times
        .iter()
        .flat_map(|&t| {
            let t = t.as_f64() / scale;
            refs.iter().map(move |&r| S::lit((t - r) * (t - r)))
        })
        .collect();
    Tensor::new(&[times.len(), refs.len()], data).expect("distance shape")
}

/// Glorot-uniform weights with bound `sqrt(6 / (fan_in + fan_out))`, zero
/// biases, and log-sharpness parameters set to `ln(1 / (2 sigma^2))` for the
/// starting kernel width `sigma`. Draws happen in parameter-name order from a
/// generator seeded by `config.seed`.
pub fn init_params<S: Scalar>(config: &EncoderConfig) -> Result<ModelParams<S>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut shapes = config.param_shapes();
    shapes.sort_by(|a, b| a.0.cmp(&b.0));
    let mut tensors = BTreeMap::new();
    for (name, shape) in shapes {
        let numel = shape[0] * shape[1];
        let is_bias = name.rsplit('.').next().is_some_and(|n| n.starts_with("b_"));
        let data = if let Some(sigma) = initial_bandwidth(&name, config) {
            vec![S::lit((0.5 / (sigma * sigma)).ln())]
        } else if is_bias {
            vec![S::zero(); numel]
        } else {
            let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            (0..numel)
                .map(|_| S::lit(rng.random_range(-bound..bound)))
                .collect()
        };
        tensors.insert(name.to_string(), Tensor::new(&shape, data)?);
    }
    Ok(ModelParams { tensors })
}

/// Continuous time features: `t / scale` followed by alternating
/// `sin(w_k t)`, `cos(w_k t)` with `w_k = 2 pi (k + 1) / scale`.
pub fn time_features<S: Scalar>(timestamps: &[S], dim: usize, scale: f64) -> Tensor<S> {
    let mut data = Vec::with_capacity(timestamps.len() * dim);
    for &t in timestamps {
        let t = t.as_f64() / scale;
        data.push(S::lit(t));
        for j in 1..dim {
            let k = (j - 1) / 2;
            let arg = std::f64::consts::TAU * (k + 1) as f64 * t;
            data.push(S::lit(if j % 2 == 1 { arg.sin() } else { arg.cos() }));
        }
    }
    Tensor::new(&[timestamps.len(), dim], data).expect("time feature shape")
}

/// Token features `[time features | one-hot variable | value]` for every
/// observed cell, in row-major cell order.
pub fn token_features<S: Scalar>(view: &SeriesView<'_, S>, config: &EncoderConfig) -> Tensor<S> {
    let (e, c) = (config.time_embed_dim, view.n_vars);
    let width = e + c + 1;
    let times = time_features(view.timestamps, e, config.time_scale);
    let mut data = Vec::new();
    let mut n = 0;
    for t in 0..view.timestamps.len() {
        for var in 0..c {
            let k = t * c + var;
            if !view.mask[k] {
                continue;
            }
            data.extend_from_slice(&times.data()[t * e..(t + 1) * e]);
            data.extend((0..c).map(|j| if j == var { S::one() } else { S::zero() }));
            data.push(view.values[k]);
            n += 1;
        }
    }
    Tensor::new(&[n, width], data).expect("token feature shape")
}

/// Timestamp of every token, in the order of [`token_features`].
pub fn token_times<S: Scalar>(view: &SeriesView<'_, S>) -> Vec<S> {
    let c = view.n_vars;
    (0..view.timestamps.len() * c)
        .filter(|&k| view.mask[k])
        .map(|k| view.timestamps[k / c])
        .collect()
}

/// Encodes from precomputed token features (see [`token_features`]) and
/// their timestamps.
pub fn encode_tokens<'t, S: Scalar>(
    params: &BoundParams<'t, S>,
    config: &EncoderConfig,
    tokens: Var<'t, S>,
    times: &[S],
) -> Result<Var<'t, S>> {
    let tape = tokens.tape();
    let h_dim = config.hidden_dim;
    let n_tokens = tokens.shape()[0];
    let context = if n_tokens == 0 {
        tape.constant(Tensor::zeros(&[config.tau, config.n_heads * h_dim]))
    } else {
        let h = tokens
            .matmul(&params.get("enc.w_in")?)?
            .add_row(&params.get("enc.b_in")?)?
            .tanh();
        if times.len() != n_tokens {
            return Err(Error::shape("encode_tokens", &[n_tokens], &[times.len()]));
        }
        let dist = tape.constant(squared_distances(
            times,
            &reference_times(config.tau),
            config.time_scale,
        ));
        let dist = dist.transpose();
        let heads = (0..config.n_heads)
            .map(|j| {
                let gamma = params.get(&format!("enc.log_sharp.{j}"))?.exp();
                let penalty = gamma.broadcast(&[config.tau, n_tokens])?.mul(&dist)?;
                let keys = h.matmul(&params.get(&format!("enc.w_key.{j}"))?)?;
                let values = h.matmul(&params.get(&format!("enc.w_value.{j}"))?)?;
                let logits = params
                    .get(&format!("enc.queries.{j}"))?
                    .matmul(&keys.transpose())?
                    .scale(S::lit(1.0 / (h_dim as f64).sqrt()))
                    .sub(&penalty)?;
                logits.softmax_rows().matmul(&values)
            })
            .collect::<Result<Vec<_>>>()?;
        tape.concat(&heads, 1)?
    };
    let hidden = context
        .matmul(&params.get("enc.w_ff1")?)?
        .add_row(&params.get("enc.b_ff1")?)?
        .relu();
    hidden
        .matmul(&params.get("enc.w_ff2")?)?
        .add_row(&params.get("enc.b_ff2")?)
}

/// `R = f(X)`: a `tau x D` representation built from observed cells only.
pub fn encode<'t, S: Scalar>(
    tape: &'t Tape<S>,
    params: &BoundParams<'t, S>,
    config: &EncoderConfig,
    view: &SeriesView<'_, S>,
) -> Result<Var<'t, S>> {
    if view.n_vars != config.n_vars {
        return Err(Error::shape(
            "encode",
            &[view.timestamps.len(), view.n_vars],
            &[config.n_vars],
        ));
    }
    let tokens = tape.constant(token_features(view, config));
    encode_tokens(params, config, tokens, &token_times(view))
}

/// `X_hat = g(R)` evaluated at `target_timestamps`: a `T x C` reconstruction.
pub fn decode<'t, S: Scalar>(
    tape: &'t Tape<S>,
    params: &BoundParams<'t, S>,
    config: &EncoderConfig,
    representation: Var<'t, S>,
    target_timestamps: &[S],
) -> Result<Var<'t, S>> {
    let shape = representation.shape();
    if shape != [config.tau, config.d_model] {
        return Err(Error::shape("decode", &shape, &[config.tau, config.d_model]));
    }
    let times = tape.constant(time_features(
        target_timestamps,
        config.time_embed_dim,
        config.time_scale,
    ));
    let query = times.matmul(&params.get("dec.w_query")?)?;
    let n = target_timestamps.len();
    let dist = tape.constant(squared_distances(
        target_timestamps,
        &reference_times(config.tau),
        config.time_scale,
    ));
    let penalty = params
        .get("dec.log_sharp")?
        .exp()
        .broadcast(&[n, config.tau])?
        .mul(&dist)?;
    let attention = query
        .matmul(&representation.transpose())?
        .scale(S::lit(1.0 / (config.d_model as f64).sqrt()))
        .sub(&penalty)?
        .softmax_rows();
    let context = attention.matmul(&representation)?;
    let hidden = context
        .matmul(&params.get("dec.w_ctx")?)?
        .add(&times.matmul(&params.get("dec.w_time")?)?)?
        .add_row(&params.get("dec.b_hidden")?)?
        .tanh();
    hidden
        .matmul(&params.get("dec.w_out")?)?
        .add_row(&params.get("dec.b_out")?)
}

/// Configuration plus parameters, with tape-free evaluation helpers.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<S> {
    pub config: EncoderConfig,
    pub params: ModelParams<S>,
}

impl<S: Scalar> Model<S> {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        let params = init_params(&config)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: EncoderConfig, params: ModelParams<S>) -> Result<Self> {
        config.validate()?;
        params.check(&config)?;
        Ok(Self { config, params })
    }

    pub fn encode(&self, view: &SeriesView<'_, S>) -> Result<Tensor<S>> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape, false);
        let r = encode(&tape, &bound, &self.config, view)?;
        let out = r.value().clone();
        Ok(out)
    }

    pub fn decode(&self, representation: &Tensor<S>, target_timestamps: &[S]) -> Result<Tensor<S>> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape, false);
        let r = tape.constant(representation.clone());
        let out = decode(&tape, &bound, &self.config, r, target_timestamps)?;
        let value = out.value().clone();
        Ok(value)
    }

    /// Encodes `view` and decodes at `target_timestamps`.
    pub fn reconstruct(&self, view: &SeriesView<'_, S>, target_timestamps: &[S]) -> Result<Tensor<S>> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape, false);
        let r = encode(&tape, &bound, &self.config, view)?;
        let out = decode(&tape, &bound, &self.config, r, target_timestamps)?;
        let value = out.value().clone();
        Ok(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::IrregularSeries;

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            tau: 4,
            d_model: 8,
            time_embed_dim: 6,
            hidden_dim: 10,
            n_heads: 2,
            n_vars: 3,
            time_scale: 1.0,
            seed: 11,
        }
    }

    fn sample_series(mask: Vec<bool>, noise: f64) -> IrregularSeries<f64> {
        let t = mask.len() / 3;
        let ts: Vec<f64> = (0..t).map(|i| 0.1 + 0.13 * i as f64).collect();
        let values = (0..t * 3)
            .map(|k| if mask[k] { (k as f64 * 0.37).sin() } else { noise * k as f64 })
            .collect();
        IrregularSeries::new(ts, values, mask, 3, None).unwrap()
    }

    #[test]
    fn output_shapes() {
        let model = Model::<f64>::new(small_config()).unwrap();
        let s = sample_series(vec![true, false, true, true, true, false, false, true, true, true, true, true, true, false, true], 0.0);
        let r = model.encode(&s.view()).unwrap();
        assert_eq!(r.shape(), &[4, 8]);
        let out = model.decode(&r, s.timestamps()).unwrap();
        assert_eq!(out.shape(), &[5, 3]);
        assert!(out.is_finite());
    }

    #[test]
    fn encode_is_deterministic_and_mask_gated() {
        let model = Model::<f64>::new(small_config()).unwrap();
        let mut mask = vec![false; 12];
        mask[4] = true;
        let a = sample_series(mask.clone(), 0.0);
        // Bypass the zeroing constructor to plant garbage at unobserved cells.
        let mut noisy_values = a.values().to_vec();
        for (k, v) in noisy_values.iter_mut().enumerate() {
            if !mask[k] {
                *v = 1e3 * (k as f64 + 1.0);
            }
        }
        let view = SeriesView {
            timestamps: a.timestamps(),
            values: &noisy_values,
            mask: &mask,
            n_vars: 3,
        };
        let ra = model.encode(&a.view()).unwrap();
        let rb = model.encode(&view).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(ra, model.encode(&a.view()).unwrap());
    }

    #[test]
    fn identical_target_timestamps_decode_identically() {
        let model = Model::<f64>::new(small_config()).unwrap();
        let s = sample_series(vec![true; 9], 0.0);
        let r = model.encode(&s.view()).unwrap();
        let out = model.decode(&r, &[0.2, 0.7, 0.2]).unwrap();
        assert_eq!(out.data()[0..3], out.data()[6..9]);
    }

    #[test]
    fn variable_count_mismatch_is_a_shape_error() {
        let model = Model::<f64>::new(small_config()).unwrap();
        let s = IrregularSeries::new(vec![0.0], vec![1.0, 2.0], vec![true, true], 2, None).unwrap();
        assert!(matches!(model.encode(&s.view()), Err(Error::Shape { .. })));
        let bad = Tensor::zeros(&[3, 8]);
        assert!(matches!(model.decode(&bad, &[0.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn init_is_seeded_with_zero_biases() {
        let a = init_params::<f64>(&small_config()).unwrap();
        let b = init_params::<f64>(&small_config()).unwrap();
        assert_eq!(a, b);
        for (name, t) in a.iter() {
            if name.contains(".b_") {
                assert!(t.data().iter().all(|&x| x == 0.0), "{name}");
            }
        }
        a.check(&small_config()).unwrap();
    }

    #[test]
    fn init_variance_matches_uniform() {
        let cfg = EncoderConfig { hidden_dim: 64, ..small_config() };
        let p = init_params::<f64>(&cfg).unwrap();
        let w = p.get("enc.w_key.0").unwrap();
        assert_eq!(w.shape(), &[64, 64]);
        let n = w.numel() as f64;
        let mean = w.data().iter().sum::<f64>() / n;
        let var = w.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let bound2 = 6.0 / 128.0;
        let analytic = bound2 / 3.0;
        assert!((var / analytic - 1.0).abs() < 0.2, "var {var} analytic {analytic}");
    }

    #[test]
    fn zero_config_dimension_rejected() {
        let cfg = EncoderConfig { tau: 0, ..small_config() };
        assert!(matches!(init_params::<f64>(&cfg), Err(Error::Config(_))));
    }
}
