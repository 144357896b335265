//! Training objectives: Gaussian 2-Wasserstein alignment, the contrastive
//! loss between original and pseudo representations, masked reconstruction,
//! and the weighted total.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Reading of the contrastive denominator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveForm {
    /// InfoNCE: every similarity is exponentiated.
    #[default]
    ExpForm,
    /// Raw similarities in the denominator with the positive pair counted
    /// once per batch member, clamped below at 1e-12.
    LiteralForm,
}

/// Normalization of the masked reconstruction loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructionForm {
    /// Squared error summed over eligible cells, divided by their count.
    #[default]
    Mean,
    /// Plain sum of squared errors.
    Sum,
}

/// Which mask the pseudo-series reconstruction loss applies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PseudoLossMask {
    /// The source observation mask `M`.
    #[default]
    Observed,
    /// Its complement `1 - M`.
    Complement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the Wasserstein term.
    pub alpha_w: f64,
    /// Weight of the contrastive term.
    pub beta_c: f64,
    pub temperature: f64,
    pub contrastive_form: ContrastiveForm,
    pub enable_w: bool,
    pub enable_contrast: bool,
    pub reconstruction_form: ReconstructionForm,
    pub pseudo_loss_mask: PseudoLossMask,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha_w: 1.0,
            beta_c: 0.5,
            temperature: 0.5,
            contrastive_form: ContrastiveForm::ExpForm,
            enable_w: true,
            enable_contrast: true,
            reconstruction_form: ReconstructionForm::Mean,
            pseudo_loss_mask: PseudoLossMask::Observed,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        for (name, w) in [("alpha_w", self.alpha_w), ("beta_c", self.beta_c)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

/// `sum_c (mu_r - mu_p)^2 + (sigma_r - sigma_p)^2`, the squared
/// 2-Wasserstein distance between diagonal Gaussians.
pub fn wasserstein2_gaussian<'t, S: Scalar>(
    mu_r: Var<'t, S>,
    sigma_r: Var<'t, S>,
    mu_p: Var<'t, S>,
    sigma_p: Var<'t, S>,
) -> Result<Var<'t, S>> {
    let n = mu_r.shape();
    for other in [sigma_r, mu_p, sigma_p] {
        if other.shape() != n {
            return Err(Error::shape("wasserstein2_gaussian", &n, &other.shape()));
        }
    }
    for sigma in [sigma_r, sigma_p] {
        if sigma.value().data().iter().any(|&s| s < S::zero()) {
            return Err(Error::Domain {
                op: "wasserstein2_gaussian",
                detail: "negative standard deviation".into(),
            });
        }
    }
    let mean_gap = mu_r.sub(&mu_p)?.square().sum();
    let std_gap = sigma_r.sub(&sigma_p)?.square().sum();
    mean_gap.add(&std_gap)
}

/// Plain-number form of [`wasserstein2_gaussian`].
pub fn wasserstein2_gaussian_value<S: Scalar>(mu_r: &[S], sigma_r: &[S], mu_p: &[S], sigma_p: &[S]) -> Result<S> {
    let tape = Tape::new();
    let v = |x: &[S]| tape.constant(Tensor::vector(x.to_vec()));
    let out = wasserstein2_gaussian(v(mu_r), v(sigma_r), v(mu_p), v(sigma_p))?;
    Ok(out.item())
}

/// Flattens a representation into a `[1, n]` row of unit L2 norm.
fn unit_row<'t, S: Scalar>(r: &Var<'t, S>) -> Result<Var<'t, S>> {
    let n = r.value().numel();
    let flat = r.reshape(&[1, n])?;
    let norm = flat.square().sum().sqrt()?;
    flat.div(&norm.broadcast(&[1, n])?)
}

/// Contrastive loss between paired representations, summed over the batch.
///
/// Representations are flattened and L2-normalized; similarities are dot
/// products divided by the temperature. In [`ContrastiveForm::ExpForm`] the
/// `i`-th term is `-log(exp(s_ii~) / (exp(s_ii~) + sum_{j != i} exp(s_ij)))`
/// where `s_ii~` pairs `R_i` with `R~_i` and `s_ij` pairs `R_i` with `R_j`.
pub fn contrastive_loss<'t, S: Scalar>(
    originals: &[Var<'t, S>],
    pseudos: &[Var<'t, S>],
    config: &LossConfig,
) -> Result<Var<'t, S>> {
    if originals.is_empty() {
        return Err(Error::Contract("contrastive loss needs a nonempty batch".into()));
    }
    if originals.len() != pseudos.len() {
        return Err(Error::shape("contrastive_loss", &[originals.len()], &[pseudos.len()]));
    }
    config.validate()?;
    let tape = originals[0].tape();
    let b = originals.len();
    let inv_temp = S::lit(1.0 / config.temperature);

    let z = tape.concat(&originals.iter().map(unit_row).collect::<Result<Vec<_>>>()?, 0)?;
    let z_tilde = tape.concat(&pseudos.iter().map(unit_row).collect::<Result<Vec<_>>>()?, 0)?;
    if z.shape() != z_tilde.shape() {
        return Err(Error::shape("contrastive_loss", &z.shape(), &z_tilde.shape()));
    }
    let positive = z.mul(&z_tilde)?.sum_rows();
    let gram = z.matmul(&z.transpose())?;

    let mut eye = Tensor::zeros(&[b, b]);
    let mut off = Tensor::full(&[b, b], S::one());
    for i in 0..b {
        eye.data_mut()[i * b + i] = S::one();
        off.data_mut()[i * b + i] = S::zero();
    }
    let eye = tape.constant(eye);
    let off = tape.constant(off);
    let negatives = gram.mul(&off)?;

    match config.contrastive_form {
        ContrastiveForm::ExpForm => {
            let ones = tape.constant(Tensor::full(&[1, b], S::one()));
            let positive_diag = positive.matmul(&ones)?.mul(&eye)?;
            let logits = negatives.add(&positive_diag)?.scale(inv_temp);
            let p_positive = logits.softmax_rows().mul(&eye)?.sum_rows();
            Ok(p_positive.log_clamped().sum().scale(-S::one()))
        }
        ContrastiveForm::LiteralForm => {
            let b_s = S::from_usize(b).unwrap();
            let denominator = positive
                .scale(b_s)
                .add(&negatives.sum_rows())?
                .scale(inv_temp);
            let per_item = denominator.log_clamped().sub(&positive.scale(inv_temp))?;
            Ok(per_item.sum())
        }
    }
}

/// Reconstruction loss plus a flag raised when no cell was eligible.
pub struct ReconstructionLoss<'t, S> {
    pub value: Var<'t, S>,
    pub empty: bool,
}

/// Squared error between `target` and `reconstruction` over cells where
/// `mask` is true, pooled across the batch. Mean form divides by the number
/// of eligible cells; no eligible cell yields 0 with `empty` set.
pub fn masked_reconstruction_loss<'t, S: Scalar>(
    tape: &'t Tape<S>,
    items: &[(&[S], Var<'t, S>, &[bool])],
    form: ReconstructionForm,
) -> Result<ReconstructionLoss<'t, S>> {
    let mut parts = Vec::with_capacity(items.len());
    let mut count = 0usize;
    for (target, recon, mask) in items {
        let shape = recon.shape();
        let numel: usize = shape.iter().product();
        if target.len() != numel || mask.len() != numel {
            return Err(Error::shape(
                "masked_reconstruction_loss",
                &shape,
                &[target.len(), mask.len()],
            ));
        }
        let eligible = mask.iter().filter(|&&m| m).count();
        if eligible == 0 {
            continue;
        }
        let target = tape.constant(Tensor::new(&shape, target.to_vec())?);
        parts.push(recon.sub(&target)?.masked_select(mask)?);
        count += eligible;
    }
    if count == 0 {
        return Ok(ReconstructionLoss {
            value: tape.scalar(S::zero()),
            empty: true,
        });
    }
    let sse = tape.concat(&parts, 0)?.square().sum();
    let value = match form {
        ReconstructionForm::Mean => sse.scale(S::one() / S::from_usize(count).unwrap()),
        ReconstructionForm::Sum => sse,
    };
    Ok(ReconstructionLoss { value, empty: false })
}

/// Per-step loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_w: f64,
    pub l_contrast: f64,
    pub l_orig_rec: f64,
    pub l_pseudo_rec: f64,
    pub total: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,l_w,l_contrast,l_orig_rec,l_pseudo_rec,total";

    /// Weighted total from component values; disabled components count as 0.
    pub fn combine(l_w: f64, l_contrast: f64, l_orig_rec: f64, l_pseudo_rec: f64, config: &LossConfig) -> Self {
        let l_w = if config.enable_w { l_w } else { 0.0 };
        let l_contrast = if config.enable_contrast { l_contrast } else { 0.0 };
        let total = config.alpha_w * l_w + config.beta_c * l_contrast + 0.5 * (l_orig_rec + l_pseudo_rec);
        Self {
            l_w,
            l_contrast,
            l_orig_rec,
            l_pseudo_rec,
            total,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_w, self.l_contrast, self.l_orig_rec, self.l_pseudo_rec, self.total]
            .iter()
            .all(|x| x.is_finite())
    }

    pub fn csv_row(&self, step: u64) -> String {
        format!(
            "{step},{},{},{},{},{}",
            self.l_w, self.l_contrast, self.l_orig_rec, self.l_pseudo_rec, self.total
        )
    }
}

impl fmt::Display for LossReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "l_w={} l_contrast={} l_orig_rec={} l_pseudo_rec={} total={}",
            self.l_w, self.l_contrast, self.l_orig_rec, self.l_pseudo_rec, self.total
        )
    }
}

/// Tape-connected loss components; `None` means not computed this step.
pub struct LossTerms<'t, S> {
    pub l_w: Option<Var<'t, S>>,
    pub l_contrast: Option<Var<'t, S>>,
    pub l_orig_rec: Var<'t, S>,
    pub l_pseudo_rec: Option<Var<'t, S>>,
}

/// `alpha_w * L_W + beta_c * L_contrast + 0.5 * (L_orig_rec + L_pseudo_rec)`.
///
/// Disabled or missing terms are left off the tape entirely, so they
/// contribute exactly zero to both the value and the gradient.
pub fn total_loss<'t, S: Scalar>(terms: &LossTerms<'t, S>, config: &LossConfig) -> Result<(Var<'t, S>, LossReport)> {
    let tape = terms.l_orig_rec.tape();
    let l_w = terms.l_w.filter(|_| config.enable_w);
    let l_contrast = terms.l_contrast.filter(|_| config.enable_contrast);
    let l_pseudo = terms.l_pseudo_rec.unwrap_or_else(|| tape.scalar(S::zero()));

    let zero = || tape.scalar(S::zero());
    let weighted_w = l_w.map_or_else(zero, |v| v.scale(S::lit(config.alpha_w)));
    let weighted_c = l_contrast.map_or_else(zero, |v| v.scale(S::lit(config.beta_c)));
    let reconstruction = terms.l_orig_rec.add(&l_pseudo)?.scale(S::lit(0.5));
    let total = weighted_w.add(&weighted_c)?.add(&reconstruction)?;

    let value = |v: Option<Var<'t, S>>| v.map_or(0.0, |v| v.item().as_f64());
    let report = LossReport {
        l_w: value(l_w),
        l_contrast: value(l_contrast),
        l_orig_rec: terms.l_orig_rec.item().as_f64(),
        l_pseudo_rec: l_pseudo.item().as_f64(),
        total: total.item().as_f64(),
    };
    Ok((total, report))
}
