//! Per-operation checks against independent brute-force computations.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ists_core::autodiff::Tensor;
use ists_core::checkpoint::{decode_checkpoint, encode_checkpoint};
use ists_core::downstream::{
    auroc, eval_classification, eval_forecasting, eval_interpolation, select_hidden, split_time, FinetuneMode, Locf,
    TaskKind, TaskSpec, VisibleMean,
};
use ists_core::encoder::EncoderConfig;
use ists_core::pseudo_obs::{compute_batch_error_stats, StatsMode};
use ists_core::series::{generate_synthetic, normalize_min_max, read_long_format, split, Dataset, SplitTag, SynthConfig};
use ists_core::trainer::{pretrain, train, ModelState, TrainConfig, Variant};

fn tiny_encoder(n_vars: usize, seed: u64) -> EncoderConfig {
    EncoderConfig { tau: 4, d_model: 8, time_embed_dim: 4, hidden_dim: 8, n_heads: 1, n_vars, seed, ..Default::default() }
}

fn synth(n: usize, missing: f64, seed: u64) -> Dataset<f64> {
    let raw = generate_synthetic(&SynthConfig { n_instances: n, t_max: 24, n_vars: 3, missing_rate: missing, seed, ..Default::default() })
        .unwrap();
    normalize_min_max(&split(&raw, (0.6, 0.2, 0.2), seed).unwrap()).unwrap()
}

#[test]
fn long_format_mask_sums_match_row_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut csv = String::from("instance_id,timestamp,variable,value\n");
    for id in ["a", "b", "c"] {
        for k in 0..10 {
            csv.push_str(&format!("{id},{},{},{}\n", k as f64 * 0.5, rng.random_range(0..3), rng.random::<f64>()));
        }
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for line in csv.lines().skip(1) {
        *counts.entry(line.split(',').next().unwrap()).or_default() += 1;
    }
    let data: Dataset<f64> = read_long_format(csv.as_bytes()).unwrap();
    assert_eq!(data.len(), 3);
    for (id, s) in data.ids().iter().zip(data.instances()) {
        assert_eq!(s.observed_count(), counts[id.as_str()], "instance {id}");
    }
}

#[test]
fn generator_density_and_determinism() {
    let cfg = SynthConfig { n_instances: 1000, t_max: 48, n_vars: 4, missing_rate: 0.9, seed: 5, ..Default::default() };
    let a: Dataset<f64> = generate_synthetic(&cfg).unwrap();
    let b: Dataset<f64> = generate_synthetic(&cfg).unwrap();
    assert_eq!(a, b);
    let observed: usize = a.instances().iter().map(|s| s.observed_count()).sum();
    let frac = observed as f64 / (1000 * 48 * 4) as f64;
    assert!((frac - 0.10).abs() <= 0.01, "observed fraction {frac}");
}

#[test]
fn normalization_inverts() {
    let data = synth(20, 0.5, 2);
    let raw: Dataset<f64> = generate_synthetic(&SynthConfig { n_instances: 20, t_max: 24, n_vars: 3, missing_rate: 0.5, seed: 2, ..Default::default() }).unwrap();
    let raw = split(&raw, (0.6, 0.2, 0.2), 2).unwrap();
    for (s, r) in data.instances().iter().zip(raw.instances()) {
        for t in 0..s.len() {
            for c in 0..s.n_vars() {
                if s.is_observed(t, c) {
                    assert!((data.denormalize(c, s.value(t, c)) - r.value(t, c)).abs() <= 1e-9);
                }
            }
        }
    }
}

#[test]
fn batch_error_stats_match_flat_loop() {
    let data = synth(8, 0.5, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let batch: Vec<_> = data.instances().iter().collect();
    let recons: Vec<Tensor<f64>> = batch
        .iter()
        .map(|s| {
            let v = (0..s.len() * s.n_vars()).map(|_| rng.random_range(-1.0..1.0)).collect();
            Tensor::new(&[s.len(), s.n_vars()], v).unwrap()
        })
        .collect();
    let got = compute_batch_error_stats(&batch, &recons, StatsMode::PerVariable).unwrap();
    for c in 0..3 {
        let mut errs = Vec::new();
        for (s, r) in batch.iter().zip(&recons) {
            for t in 0..s.len() {
                if s.mask()[t * 3 + c] {
                    errs.push(s.values()[t * 3 + c] - r.data()[t * 3 + c]);
                }
            }
        }
        let n = errs.len() as f64;
        let mu = errs.iter().sum::<f64>() / n;
        let sd = (errs.iter().map(|e| (e - mu) * (e - mu)).sum::<f64>() / n).sqrt();
        assert!((got.mu[c] - mu).abs() <= 1e-12);
        assert!((got.sigma[c] - sd).abs() <= 1e-12);
    }
}

#[test]
fn full_variant_loss_descends() {
    let data = synth(60, 0.5, 4);
    let cfg = TrainConfig { variant: Variant::Full, epochs: 1000, max_steps: Some(200), batch_size: 12, learning_rate: 1e-2, seed: 4, ..Default::default() };
    let (_, history) = pretrain(&data, tiny_encoder(3, 4), &cfg).unwrap();
    let totals = history.totals();
    assert_eq!(totals.len(), 200);
    let head = totals[..20].iter().sum::<f64>() / 20.0;
    let tail = totals[180..].iter().sum::<f64>() / 20.0;
    assert!(tail < head, "first 20 {head}, last 20 {tail}");
}

#[test]
fn checkpointed_resume_matches_single_run() {
    let data = synth(30, 0.5, 6);
    let cfg = TrainConfig { epochs: 1000, max_steps: Some(200), batch_size: 8, seed: 6, ..Default::default() };
    let (whole, _) = pretrain(&data, tiny_encoder(3, 6), &cfg).unwrap();
    let half = TrainConfig { max_steps: Some(100), ..cfg.clone() };
    let (first, _) = pretrain(&data, tiny_encoder(3, 6), &half).unwrap();
    let mut state: ModelState<f64> = decode_checkpoint(&encode_checkpoint(&first).unwrap()).unwrap();
    assert_eq!(state.step, 100);
    train(&data, &mut state, &cfg, |_, _| Ok(())).unwrap();
    assert_eq!(state, whole);
}

#[test]
fn separable_classes_are_recovered() {
    let raw: Dataset<f64> = generate_synthetic(&SynthConfig {
        n_instances: 300,
        t_max: 32,
        n_vars: 2,
        missing_rate: 0.0,
        class_spacing: 5.0,
        seed: 7,
        ..Default::default()
    })
    .unwrap();
    let data = normalize_min_max(&split(&raw, (0.6, 0.2, 0.2), 7).unwrap()).unwrap();
    let cfg = TrainConfig { epochs: 1000, max_steps: Some(150), batch_size: 30, learning_rate: 1e-2, seed: 7, ..Default::default() };
    let (state, _) = pretrain(&data, EncoderConfig { tau: 8, ..tiny_encoder(2, 7) }, &cfg).unwrap();
    let spec = TaskSpec { kind: TaskKind::Classification, finetune: FinetuneMode::FullFinetune, seed: 7, ..Default::default() };
    let got = eval_classification(&state.model, &data, &spec).unwrap().metrics["auroc"];
    assert!(got >= 0.99, "auroc {got}");
}

#[test]
fn random_labels_score_at_chance() {
    let raw: Dataset<f64> = generate_synthetic(&SynthConfig { n_instances: 4000, t_max: 12, n_vars: 2, seed: 8, ..Default::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let labels: Vec<usize> = (0..raw.len()).map(|_| rng.random_range(0..2)).collect();
    let data = normalize_min_max(&split(&raw.with_labels(&labels).unwrap(), (0.5, 0.0, 0.5), 8).unwrap()).unwrap();
    let state = ModelState::init(tiny_encoder(2, 8), &TrainConfig::default()).unwrap();
    let spec = TaskSpec { kind: TaskKind::Classification, head_epochs: 100, seed: 8, ..Default::default() };
    let got = eval_classification(&state.model, &data, &spec).unwrap().metrics["auroc"];
    assert!((got - 0.5).abs() <= 0.05, "auroc {got}");
}

#[test]
fn visible_mean_interpolation_matches_flat_loop() {
    let data = synth(50, 0.4, 9);
    let spec = TaskSpec { kind: TaskKind::Interpolation, seed: 9, ..Default::default() };
    let got = eval_interpolation(&VisibleMean, &data, &spec).unwrap().metrics["mse"];

    let (mut sum, mut n) = (0.0, 0usize);
    for i in data.indices(SplitTag::Test) {
        let s = &data.instances()[i];
        if s.observed_count() < 4 {
            continue;
        }
        let hidden = select_hidden(s, 0.3, 9, i as u64);
        let c_n = s.n_vars();
        for &k in &hidden {
            let c = k % c_n;
            let visible: Vec<f64> =
                (0..s.len()).map(|t| t * c_n + c).filter(|j| s.mask()[*j] && !hidden.contains(j)).map(|j| s.values()[j]).collect();
            let pred = if visible.is_empty() { 0.0 } else { visible.iter().sum::<f64>() / visible.len() as f64 };
            sum += (pred - s.values()[k]).powi(2);
            n += 1;
        }
    }
    assert!((got - sum / n as f64).abs() <= 1e-12);
}

#[test]
fn locf_forecast_matches_flat_loop() {
    let data = synth(50, 0.4, 10);
    let spec = TaskSpec { kind: TaskKind::Forecasting, seed: 10, ..Default::default() };
    let got = eval_forecasting(&Locf, &data, &spec).unwrap().metrics["mse"];

    let (mut sum, mut n) = (0.0, 0usize);
    for s in data.subset(SplitTag::Test) {
        let cut = split_time(s, 0.5);
        let ts = s.timestamps();
        let before = |t: usize| ts[t] <= cut;
        let any_input = (0..s.len()).any(|t| before(t) && (0..s.n_vars()).any(|c| s.is_observed(t, c)));
        let any_horizon = (0..s.len()).any(|t| !before(t) && (0..s.n_vars()).any(|c| s.is_observed(t, c)));
        if !any_input || !any_horizon {
            continue;
        }
        for c in 0..s.n_vars() {
            let past: Vec<usize> = (0..s.len()).filter(|&t| before(t) && s.is_observed(t, c)).collect();
            let mean = if past.is_empty() { 0.0 } else { past.iter().map(|&t| s.value(t, c)).sum::<f64>() / past.len() as f64 };
            let pred = past.last().map_or(mean, |&t| s.value(t, c));
            for t in (0..s.len()).filter(|&t| !before(t) && s.is_observed(t, c)) {
                sum += (pred - s.value(t, c)).powi(2);
                n += 1;
            }
        }
    }
    assert!((got - sum / n as f64).abs() <= 1e-12);
}

#[test]
fn auroc_matches_pair_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let scores: Vec<f64> = (0..50).map(|_| (rng.random::<f64>() * 10.0).round() / 10.0).collect();
    let mut labels: Vec<bool> = (0..50).map(|_| rng.random_bool(0.4)).collect();
    labels[0] = true;
    labels[1] = false;
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..50 {
        for j in 0..50 {
            if labels[i] && !labels[j] {
                pairs += 1.0;
                wins += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
            }
        }
    }
    assert!((auroc(&scores, &labels).unwrap() - wins / pairs).abs() <= 1e-12);
}
