//! Loss terms for both training stages.
//!
//! The building blocks are the KL divergence to a standard normal prior, the
//! Manhattan distance used for every reconstruction term, the
//! distribution-alignment loss (2-Wasserstein distance between the two
//! modalities' diagonal Gaussian posteriors), and the cross-reconstruction
//! loss (each modality decoded from the other's latent code). The combined
//! stage-1 objective is
//!
//! ```text
//! total = vae_semantic + vae_visual + eta * alignment + delta * cross
//! ```
//!
//! where each VAE term is `l1(recon, x) + beta * kl(posterior)`. Stage 2
//! minimizes `l1(target, recon) + beta * kl(latent posterior)` for the
//! conditional VAE. This module also owns the full stage-1 forward/backward
//! graph; the reparameterization noise is passed in explicitly so every loss
//! is a deterministic function of the parameters, which is what the
//! finite-difference gradient checks require.

use thiserror::Error;

use crate::nn::{reparameterize_with, GaussianParams, MlpGrads, MlpNet, NnError};

/// Errors raised by loss evaluation.
#[derive(Debug, Error)]
pub enum LossError {
    #[error("vector length mismatch in {context}: {left} vs {right}")]
    LengthMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },
    #[error("loss weight must be non-negative, got {0}")]
    NegativeWeight(f64),
    #[error("warm-up end epoch {end} precedes start epoch {start}")]
    BadWarmup { start: u32, end: u32 },
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// A non-negative loss weight with an optional linear warm-up.
///
/// With a warm-up `(start, end)` the weight is 0 before `start`, ramps
/// linearly, and holds its target value from `end` on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSchedule {
    target: f64,
    warmup: Option<(u32, u32)>,
}

impl WeightSchedule {
    pub fn constant(target: f64) -> Result<Self, LossError> {
        if target < 0.0 {
            return Err(LossError::NegativeWeight(target));
        }
        Ok(Self {
            target,
            warmup: None,
        })
    }

    pub fn warmup(target: f64, start: u32, end: u32) -> Result<Self, LossError> {
        if target < 0.0 {
            return Err(LossError::NegativeWeight(target));
        }
        if end < start {
            return Err(LossError::BadWarmup { start, end });
        }
        Ok(Self {
            target,
            warmup: Some((start, end)),
        })
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    /// Effective weight at the given epoch.
    pub fn value(&self, epoch: u32) -> f64 {
        match self.warmup {
            None => self.target,
            Some((start, end)) => {
                if epoch >= end {
                    self.target
                } else if epoch <= start {
                    if start == end {
                        self.target
                    } else {
                        0.0
                    }
                } else {
                    self.target * (epoch - start) as f64 / (end - start) as f64
                }
            }
        }
    }
}

/// The three stage-1 weights: KL (per-modality VAE term), distribution
/// alignment, and cross reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AfgLossWeights {
    pub kl: WeightSchedule,
    pub alignment: WeightSchedule,
    pub cross: WeightSchedule,
}

impl Default for AfgLossWeights {
    fn default() -> Self {
        Self {
            kl: WeightSchedule::constant(0.5).expect("non-negative"),
            alignment: WeightSchedule::constant(5.0).expect("non-negative"),
            cross: WeightSchedule::constant(2.0).expect("non-negative"),
        }
    }
}

/// A loss value with its components and the weights in effect when it was
/// evaluated, so `total == reconstruction + kl_weight*kl + alignment_weight
/// * alignment + cross_weight*cross` is checkable on every record.
///
/// The `*_parts` arrays split a component by modality, `[semantic, visual]`
/// for the stage-1 loss. Single-modality losses fill index 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub alignment: f64,
    pub cross: f64,
    pub kl_weight: f64,
    pub alignment_weight: f64,
    pub cross_weight: f64,
    pub reconstruction_parts: [f64; 2],
    pub kl_parts: [f64; 2],
    pub cross_parts: [f64; 2],
}

impl LossBreakdown {
    fn zero(kl_weight: f64, alignment_weight: f64, cross_weight: f64) -> Self {
        Self {
            total: 0.0,
            reconstruction: 0.0,
            kl: 0.0,
            alignment: 0.0,
            cross: 0.0,
            kl_weight,
            alignment_weight,
            cross_weight,
            reconstruction_parts: [0.0; 2],
            kl_parts: [0.0; 2],
            cross_parts: [0.0; 2],
        }
    }

    /// Recomputes the total from components and weights.
    pub fn weighted_sum(&self) -> f64 {
        self.reconstruction
            + self.kl_weight * self.kl
            + self.alignment_weight * self.alignment
            + self.cross_weight * self.cross
    }

    /// True when the recorded total matches the weighted component sum
    /// within `rel_tol` relative error.
    pub fn recomposes(&self, rel_tol: f64) -> bool {
        let expect = self.weighted_sum();
        let scale = self.total.abs().max(expect.abs()).max(1e-12);
        (self.total - expect).abs() / scale <= rel_tol
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.reconstruction.is_finite()
            && self.kl.is_finite()
            && self.alignment.is_finite()
            && self.cross.is_finite()
    }

    fn add(&mut self, other: &LossBreakdown, scale: f64) {
        self.total += other.total * scale;
        self.reconstruction += other.reconstruction * scale;
        self.kl += other.kl * scale;
        self.alignment += other.alignment * scale;
        self.cross += other.cross * scale;
        for k in 0..2 {
            self.reconstruction_parts[k] += other.reconstruction_parts[k] * scale;
            self.kl_parts[k] += other.kl_parts[k] * scale;
            self.cross_parts[k] += other.cross_parts[k] * scale;
        }
    }

    /// Sample-count-weighted mean of several breakdowns (used for per-epoch
    /// histories). Returns `None` for an empty input.
    pub fn mean_of(entries: &[(LossBreakdown, usize)]) -> Option<LossBreakdown> {
        let total_n: usize = entries.iter().map(|(_, n)| n).sum();
        if total_n == 0 {
            return None;
        }
        let first = entries.first()?.0;
        let mut acc = LossBreakdown::zero(
            first.kl_weight,
            first.alignment_weight,
            first.cross_weight,
        );
        for (b, n) in entries {
            acc.add(b, *n as f64 / total_n as f64);
        }
        Some(acc)
    }
}

/// KL divergence from `g` to the standard normal prior:
/// `0.5 * sum(mean^2 + var - log var - 1)`.
pub fn kl_to_standard_normal(g: &GaussianParams) -> f64 {
    g.mean()
        .iter()
        .zip(g.log_var())
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - lv - 1.0))
        .sum()
}

/// Gradients of [`kl_to_standard_normal`]: `d/dmean = mean`,
/// `d/dlog_var = 0.5 (var - 1)`. Accumulates `upstream *` gradients.
pub(crate) fn kl_gradients_into(
    g: &GaussianParams,
    upstream: f64,
    d_mean: &mut [f64],
    d_log_var: &mut [f64],
) {
    for i in 0..g.dim() {
        d_mean[i] += upstream * g.mean()[i];
        d_log_var[i] += upstream * 0.5 * (g.log_var()[i].exp() - 1.0);
    }
}

/// Manhattan distance `sum |a_i - b_i|`.
pub fn l1_distance(a: &[f64], b: &[f64]) -> Result<f64, LossError> {
    if a.len() != b.len() {
        return Err(LossError::LengthMismatch {
            context: "l1 distance",
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
}

/// Subgradient of [`l1_distance`] w.r.t. `a`: `sign(a_i - b_i)`, zero at
/// ties.
pub fn l1_subgradient(a: &[f64], b: &[f64]) -> Result<Vec<f64>, LossError> {
    if a.len() != b.len() {
        return Err(LossError::LengthMismatch {
            context: "l1 subgradient",
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| {
            if x > y {
                1.0
            } else if x < y {
                -1.0
            } else {
                0.0
            }
        })
        .collect())
}

/// Single-modality VAE loss: `l1(recon, target) + kl_weight * kl(g)`.
///
/// The reconstruction log-likelihood is realized as negative L1, matching
/// the metric used by the cross-reconstruction term; the minimized quantity
/// is what the breakdown reports.
pub fn vae_loss(
    recon: &[f64],
    target: &[f64],
    g: &GaussianParams,
    kl_weight: f64,
) -> Result<LossBreakdown, LossError> {
    if kl_weight < 0.0 {
        return Err(LossError::NegativeWeight(kl_weight));
    }
    let recon_term = l1_distance(recon, target)?;
    let kl_term = kl_to_standard_normal(g);
    let mut out = LossBreakdown::zero(kl_weight, 0.0, 0.0);
    out.reconstruction = recon_term;
    out.reconstruction_parts[0] = recon_term;
    out.kl = kl_term;
    out.kl_parts[0] = kl_term;
    out.total = recon_term + kl_weight * kl_term;
    Ok(out)
}

/// 2-Wasserstein distance between two diagonal Gaussians:
/// `sqrt(||mean1 - mean2||^2 + ||std1 - std2||^2)`.
///
/// Symmetric, non-negative, and zero exactly when the parameters coincide.
pub fn distribution_alignment_loss(
    g1: &GaussianParams,
    g2: &GaussianParams,
) -> Result<f64, LossError> {
    if g1.dim() != g2.dim() {
        return Err(LossError::LengthMismatch {
            context: "distribution alignment",
            left: g1.dim(),
            right: g2.dim(),
        });
    }
    let mut sq = 0.0;
    for i in 0..g1.dim() {
        let dm = g1.mean()[i] - g2.mean()[i];
        let ds = (0.5 * g1.log_var()[i]).exp() - (0.5 * g2.log_var()[i]).exp();
        sq += dm * dm + ds * ds;
    }
    Ok(sq.sqrt())
}

/// Gradients of [`distribution_alignment_loss`], accumulated with an
/// `upstream` factor. At a zero distance the subgradient 0 is used.
pub(crate) fn distribution_alignment_gradients_into(
    g1: &GaussianParams,
    g2: &GaussianParams,
    upstream: f64,
    d_mean1: &mut [f64],
    d_log_var1: &mut [f64],
    d_mean2: &mut [f64],
    d_log_var2: &mut [f64],
) -> Result<(), LossError> {
    let dist = distribution_alignment_loss(g1, g2)?;
    if dist == 0.0 {
        return Ok(());
    }
    let inv = upstream / dist;
    for i in 0..g1.dim() {
        let dm = g1.mean()[i] - g2.mean()[i];
        d_mean1[i] += inv * dm;
        d_mean2[i] -= inv * dm;
        let s1 = (0.5 * g1.log_var()[i]).exp();
        let s2 = (0.5 * g2.log_var()[i]).exp();
        let ds = s1 - s2;
        // d std / d log_var = 0.5 * std
        d_log_var1[i] += inv * ds * 0.5 * s1;
        d_log_var2[i] -= inv * ds * 0.5 * s2;
    }
    Ok(())
}

/// Cross-reconstruction loss: each modality decoded from the other's latent
/// code, `l1(x1, d1(z2)) + l1(x2, d2(z1))`.
pub fn cross_reconstruction_loss(
    x1: &[f64],
    x2: &[f64],
    z1: &[f64],
    z2: &[f64],
    d1: &MlpNet,
    d2: &MlpNet,
) -> Result<f64, LossError> {
    let (recon1, _) = d1.forward(z2)?;
    let (recon2, _) = d2.forward(z1)?;
    Ok(l1_distance(x1, &recon1)? + l1_distance(x2, &recon2)?)
}

/// Conditional-VAE loss: `l1(target, recon) + kl_weight * kl(g)`.
pub fn cvae_loss(
    target: &[f64],
    recon: &[f64],
    g: &GaussianParams,
    kl_weight: f64,
) -> Result<LossBreakdown, LossError> {
    if kl_weight < 0.0 {
        return Err(LossError::NegativeWeight(kl_weight));
    }
    let recon_term = l1_distance(target, recon)?;
    let kl_term = kl_to_standard_normal(g);
    let mut out = LossBreakdown::zero(kl_weight, 0.0, 0.0);
    out.reconstruction = recon_term;
    out.reconstruction_parts[0] = recon_term;
    out.kl = kl_term;
    out.kl_parts[0] = kl_term;
    out.total = recon_term + kl_weight * kl_term;
    Ok(out)
}

/// Borrowed view of the four stage-1 networks.
#[derive(Debug, Clone, Copy)]
pub struct AfgNets<'a> {
    pub encoder_semantic: &'a MlpNet,
    pub decoder_semantic: &'a MlpNet,
    pub encoder_visual: &'a MlpNet,
    pub decoder_visual: &'a MlpNet,
}

/// One (semantic embedding, visual feature) training pair.
#[derive(Debug, Clone, Copy)]
pub struct AfgPair<'a> {
    pub semantic: &'a [f32],
    pub visual: &'a [f32],
}

/// Reparameterization noise for one pair, one vector per modality, each of
/// the aligned dimension.
#[derive(Debug, Clone)]
pub struct AfgNoise {
    pub semantic: Vec<f64>,
    pub visual: Vec<f64>,
}

/// Parameter gradients for the four stage-1 networks.
#[derive(Debug, Clone)]
pub struct AfgGradients {
    pub encoder_semantic: MlpGrads,
    pub decoder_semantic: MlpGrads,
    pub encoder_visual: MlpGrads,
    pub decoder_visual: MlpGrads,
}

pub(crate) fn lift(xs: &[f32]) -> Vec<f64> {
    xs.iter().map(|&x| x as f64).collect()
}

/// Stage-1 loss over a batch: per-sample
/// `vae_sem + vae_vis + eta*alignment + delta*cross`, averaged.
///
/// `noise` must hold one entry per pair; holding it fixed makes the loss a
/// deterministic function of the network parameters.
pub fn afg_loss(
    nets: &AfgNets,
    batch: &[AfgPair],
    noise: &[AfgNoise],
    weights: &AfgLossWeights,
    epoch: u32,
) -> Result<LossBreakdown, LossError> {
    afg_batch(nets, batch, noise, weights, epoch, None)
}

/// [`afg_loss`] plus parameter gradients for all four networks, averaged
/// over the batch.
pub fn afg_loss_with_gradients(
    nets: &AfgNets,
    batch: &[AfgPair],
    noise: &[AfgNoise],
    weights: &AfgLossWeights,
    epoch: u32,
) -> Result<(LossBreakdown, AfgGradients), LossError> {
    let mut grads = AfgGradients {
        encoder_semantic: MlpGrads::zeros(nets.encoder_semantic.param_count()),
        decoder_semantic: MlpGrads::zeros(nets.decoder_semantic.param_count()),
        encoder_visual: MlpGrads::zeros(nets.encoder_visual.param_count()),
        decoder_visual: MlpGrads::zeros(nets.decoder_visual.param_count()),
    };
    let breakdown = afg_batch(nets, batch, noise, weights, epoch, Some(&mut grads))?;
    Ok((breakdown, grads))
}

fn afg_batch(
    nets: &AfgNets,
    batch: &[AfgPair],
    noise: &[AfgNoise],
    weights: &AfgLossWeights,
    epoch: u32,
    mut grads: Option<&mut AfgGradients>,
) -> Result<LossBreakdown, LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    if batch.len() != noise.len() {
        return Err(LossError::LengthMismatch {
            context: "afg batch noise",
            left: batch.len(),
            right: noise.len(),
        });
    }
    let kl_w = weights.kl.value(epoch);
    let align_w = weights.alignment.value(epoch);
    let cross_w = weights.cross.value(epoch);
    let scale = 1.0 / batch.len() as f64;
    let mut acc = LossBreakdown::zero(kl_w, align_w, cross_w);

    for (pair, eps) in batch.iter().zip(noise) {
        let semantic = lift(pair.semantic);
        let visual = lift(pair.visual);

        // Forward: encode both modalities, sample, decode each latent with
        // both decoders (own reconstruction + cross reconstruction).
        let (enc_sem_out, enc_sem_trace) = nets.encoder_semantic.forward(&semantic)?;
        let (g_sem, clamp_sem) = GaussianParams::from_encoder_output(&enc_sem_out)?;
        let z_sem = reparameterize_with(&g_sem, &eps.semantic);

        let (enc_vis_out, enc_vis_trace) = nets.encoder_visual.forward(&visual)?;
        let (g_vis, clamp_vis) = GaussianParams::from_encoder_output(&enc_vis_out)?;
        let z_vis = reparameterize_with(&g_vis, &eps.visual);

        let (recon_sem, dec_sem_trace) = nets.decoder_semantic.forward(&z_sem)?;
        let (recon_vis, dec_vis_trace) = nets.decoder_visual.forward(&z_vis)?;
        let (cross_sem, dec_sem_cross_trace) = nets.decoder_semantic.forward(&z_vis)?;
        let (cross_vis, dec_vis_cross_trace) = nets.decoder_visual.forward(&z_sem)?;

        let recon_sem_term = l1_distance(&recon_sem, &semantic)?;
        let recon_vis_term = l1_distance(&recon_vis, &visual)?;
        let kl_sem_term = kl_to_standard_normal(&g_sem);
        let kl_vis_term = kl_to_standard_normal(&g_vis);
        let align_term = distribution_alignment_loss(&g_sem, &g_vis)?;
        let cross_sem_term = l1_distance(&semantic, &cross_sem)?;
        let cross_vis_term = l1_distance(&visual, &cross_vis)?;

        let sample_total = recon_sem_term
            + recon_vis_term
            + kl_w * (kl_sem_term + kl_vis_term)
            + align_w * align_term
            + cross_w * (cross_sem_term + cross_vis_term);

        acc.total += scale * sample_total;
        acc.reconstruction += scale * (recon_sem_term + recon_vis_term);
        acc.reconstruction_parts[0] += scale * recon_sem_term;
        acc.reconstruction_parts[1] += scale * recon_vis_term;
        acc.kl += scale * (kl_sem_term + kl_vis_term);
        acc.kl_parts[0] += scale * kl_sem_term;
        acc.kl_parts[1] += scale * kl_vis_term;
        acc.alignment += scale * align_term;
        acc.cross += scale * (cross_sem_term + cross_vis_term);
        acc.cross_parts[0] += scale * cross_sem_term;
        acc.cross_parts[1] += scale * cross_vis_term;

        let Some(g) = grads.as_deref_mut() else {
            continue;
        };

        let dim = g_sem.dim();
        let mut d_mean_sem = vec![0.0f64; dim];
        let mut d_log_var_sem = vec![0.0f64; dim];
        let mut d_mean_vis = vec![0.0f64; dim];
        let mut d_log_var_vis = vec![0.0f64; dim];
        let mut d_z_sem = vec![0.0f64; dim];
        let mut d_z_vis = vec![0.0f64; dim];

        // Own reconstructions.
        let d_recon_sem = l1_subgradient(&recon_sem, &semantic)?;
        let dz = nets
            .decoder_semantic
            .backward_into(&dec_sem_trace, &d_recon_sem, &mut g.decoder_semantic, scale)?;
        add_into(&mut d_z_sem, &dz, 1.0 / scale);

        let d_recon_vis = l1_subgradient(&recon_vis, &visual)?;
        let dz = nets
            .decoder_visual
            .backward_into(&dec_vis_trace, &d_recon_vis, &mut g.decoder_visual, scale)?;
        add_into(&mut d_z_vis, &dz, 1.0 / scale);

        // Cross reconstructions: semantic decoded from the visual latent and
        // vice versa, each weighted by the cross coefficient.
        let mut d_cross_sem = l1_subgradient(&cross_sem, &semantic)?;
        for v in &mut d_cross_sem {
            *v *= cross_w;
        }
        let dz = nets.decoder_semantic.backward_into(
            &dec_sem_cross_trace,
            &d_cross_sem,
            &mut g.decoder_semantic,
            scale,
        )?;
        add_into(&mut d_z_vis, &dz, 1.0 / scale);

        let mut d_cross_vis = l1_subgradient(&cross_vis, &visual)?;
        for v in &mut d_cross_vis {
            *v *= cross_w;
        }
        let dz = nets.decoder_visual.backward_into(
            &dec_vis_cross_trace,
            &d_cross_vis,
            &mut g.decoder_visual,
            scale,
        )?;
        add_into(&mut d_z_sem, &dz, 1.0 / scale);

        // Through the reparameterization into the posterior parameters.
        crate::nn::reparameterize_backward(
            &g_sem,
            &eps.semantic,
            &d_z_sem,
            &mut d_mean_sem,
            &mut d_log_var_sem,
        );
        crate::nn::reparameterize_backward(
            &g_vis,
            &eps.visual,
            &d_z_vis,
            &mut d_mean_vis,
            &mut d_log_var_vis,
        );

        // Direct KL and alignment contributions.
        kl_gradients_into(&g_sem, kl_w, &mut d_mean_sem, &mut d_log_var_sem);
        kl_gradients_into(&g_vis, kl_w, &mut d_mean_vis, &mut d_log_var_vis);
        distribution_alignment_gradients_into(
            &g_sem,
            &g_vis,
            align_w,
            &mut d_mean_sem,
            &mut d_log_var_sem,
            &mut d_mean_vis,
            &mut d_log_var_vis,
        )?;

        // Into the encoders; clamped log-variance coordinates carry no
        // gradient.
        let upstream_sem = encoder_upstream(&d_mean_sem, &d_log_var_sem, &clamp_sem);
        nets.encoder_semantic.backward_into(
            &enc_sem_trace,
            &upstream_sem,
            &mut g.encoder_semantic,
            scale,
        )?;
        let upstream_vis = encoder_upstream(&d_mean_vis, &d_log_var_vis, &clamp_vis);
        nets.encoder_visual.backward_into(
            &enc_vis_trace,
            &upstream_vis,
            &mut g.encoder_visual,
            scale,
        )?;
    }

    Ok(acc)
}

fn add_into(acc: &mut [f64], src: &[f64], scale: f64) {
    for (a, s) in acc.iter_mut().zip(src) {
        *a += s * scale;
    }
}

pub(crate) fn encoder_upstream(
    d_mean: &[f64],
    d_log_var: &[f64],
    clamp_mask: &[bool],
) -> Vec<f64> {
    let mut upstream = Vec::with_capacity(d_mean.len() * 2);
    upstream.extend_from_slice(d_mean);
    for (dlv, &clamped) in d_log_var.iter().zip(clamp_mask) {
        upstream.push(if clamped { 0.0 } else { *dlv });
    }
    upstream
}
