//! Stage 2: the synthetic feature generator.
//!
//! A conditional VAE over the aligned space. For each seen-class sample the
//! encoder sees the class condition concatenated with the sample's aligned
//! visual feature and produces a latent posterior; the decoder reconstructs
//! the aligned visual feature from the sampled latent concatenated with the
//! same condition. The aligned feature generator is frozen throughout: it is
//! only ever borrowed immutably, and gradients stop at the encoder input.
//!
//! The sample-specific visual information that a class embedding cannot
//! carry ends up in the latent, which is what makes decoded noise diverse at
//! inference time.

use thiserror::Error;

use crate::afg::{AfgModel, TrainError};
use crate::data::GzslData;
use crate::losses::{
    cvae_loss, encoder_upstream, kl_gradients_into, l1_subgradient, lift, LossBreakdown,
    LossError,
};
use crate::nn::{
    reparameterize_backward, reparameterize_with, AdamState, GaussianParams, MlpGrads, MlpNet,
    NnError, RngStream,
};

const TAG_INIT: u64 = 11;
const TAG_TRAIN: u64 = 12;

/// How the per-class condition is built during stage-2 training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConditionMode {
    /// The raw semantic embedding itself.
    RawSemantic,
    /// A sample from the aligned semantic posterior; stochastic, so the
    /// condition varies between visits to the same class.
    SampledAligned,
    /// The aligned semantic posterior mean; deterministic per class. The
    /// default, and the strongest setting in the condition ablation.
    #[default]
    MeanAligned,
}

impl ConditionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConditionMode::RawSemantic => "raw",
            ConditionMode::SampledAligned => "sampled",
            ConditionMode::MeanAligned => "mean",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "raw" => Some(ConditionMode::RawSemantic),
            "sampled" => Some(ConditionMode::SampledAligned),
            "mean" => Some(ConditionMode::MeanAligned),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum SfgError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Stage-2 configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SfgConfig {
    /// Latent dimension; defaults to the aligned dimension when `None`.
    pub latent_dim: Option<usize>,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    /// KL weight of the conditional VAE.
    pub kl_weight: f64,
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub condition_mode: ConditionMode,
    pub seed: u64,
}

impl SfgConfig {
    /// Small networks sized for the synthetic benchmark.
    pub fn desk_scale() -> Self {
        Self {
            latent_dim: None,
            encoder_hidden: vec![64],
            decoder_hidden: vec![64],
            kl_weight: 0.6,
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            condition_mode: ConditionMode::MeanAligned,
            seed: 0,
        }
    }

    /// Published full-scale setting: one hidden layer of 1990 (encoder) and
    /// 1560 (decoder) units.
    pub fn paper_scale() -> Self {
        Self {
            latent_dim: None,
            encoder_hidden: vec![1990],
            decoder_hidden: vec![1560],
            kl_weight: 0.6,
            epochs: 100,
            batch_size: 64,
            learning_rate: crate::nn::DEFAULT_LEARNING_RATE,
            condition_mode: ConditionMode::MeanAligned,
            seed: 0,
        }
    }
}

impl Default for SfgConfig {
    fn default() -> Self {
        Self::desk_scale()
    }
}

/// Trained conditional VAE.
#[derive(Debug, Clone)]
pub struct SfgModel {
    encoder: MlpNet,
    decoder: MlpNet,
    latent_dim: usize,
    aligned_dim: usize,
    condition_dim: usize,
    condition_mode: ConditionMode,
    history: Vec<LossBreakdown>,
}

impl SfgModel {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        encoder: MlpNet,
        decoder: MlpNet,
        latent_dim: usize,
        aligned_dim: usize,
        condition_dim: usize,
        condition_mode: ConditionMode,
        history: Vec<LossBreakdown>,
    ) -> Result<Self, TrainError> {
        if encoder.input_dim() != condition_dim + aligned_dim
            || encoder.output_dim() != 2 * latent_dim
            || decoder.input_dim() != latent_dim + condition_dim
            || decoder.output_dim() != aligned_dim
        {
            return Err(TrainError::Incompatible(
                "conditional VAE dimensions do not chain".into(),
            ));
        }
        Ok(Self {
            encoder,
            decoder,
            latent_dim,
            aligned_dim,
            condition_dim,
            condition_mode,
            history,
        })
    }

    pub fn encoder(&self) -> &MlpNet {
        &self.encoder
    }

    pub fn decoder(&self) -> &MlpNet {
        &self.decoder
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn aligned_dim(&self) -> usize {
        self.aligned_dim
    }

    pub fn condition_dim(&self) -> usize {
        self.condition_dim
    }

    pub fn condition_mode(&self) -> ConditionMode {
        self.condition_mode
    }

    pub fn history(&self) -> &[LossBreakdown] {
        &self.history
    }

    pub fn params_concat(&self) -> Vec<f32> {
        let mut out = Vec::new();
        out.extend_from_slice(self.encoder.params());
        out.extend_from_slice(self.decoder.params());
        out
    }

    /// Encode-sample-decode round trip: reconstructs an aligned visual
    /// feature from `(condition, target)`. Stochastic unless the stream is
    /// fixed.
    pub fn reconstruct(
        &self,
        condition: &[f64],
        target: &[f64],
        rng: &mut RngStream,
    ) -> Result<Vec<f64>, SfgError> {
        if condition.len() != self.condition_dim {
            return Err(SfgError::Nn(NnError::DimMismatch {
                context: "cvae condition",
                expected: self.condition_dim,
                got: condition.len(),
            }));
        }
        if target.len() != self.aligned_dim {
            return Err(SfgError::Nn(NnError::DimMismatch {
                context: "cvae target",
                expected: self.aligned_dim,
                got: target.len(),
            }));
        }
        let mut enc_in = condition.to_vec();
        enc_in.extend_from_slice(target);
        let (enc_out, _) = self.encoder.forward(&enc_in)?;
        let (g, _) = GaussianParams::from_encoder_output(&enc_out)?;
        let latent = crate::nn::reparameterize(&g, rng);
        self.decode(&latent, condition)
    }

    /// Decodes a latent vector under a condition: the inference-time path
    /// for unseen classes.
    pub fn decode(&self, latent: &[f64], condition: &[f64]) -> Result<Vec<f64>, SfgError> {
        if latent.len() != self.latent_dim {
            return Err(SfgError::Nn(NnError::DimMismatch {
                context: "cvae latent",
                expected: self.latent_dim,
                got: latent.len(),
            }));
        }
        let mut dec_in = latent.to_vec();
        dec_in.extend_from_slice(condition);
        let (out, _) = self.decoder.forward(&dec_in)?;
        Ok(out)
    }
}

/// Borrowed view of the conditional VAE networks.
#[derive(Debug, Clone, Copy)]
pub struct CvaeNets<'a> {
    pub encoder: &'a MlpNet,
    pub decoder: &'a MlpNet,
}

/// One conditional-VAE training item with fixed reparameterization noise.
#[derive(Debug, Clone)]
pub struct CvaeSample {
    pub condition: Vec<f64>,
    /// Aligned visual feature to reconstruct.
    pub target: Vec<f64>,
    /// Latent noise, of the latent dimension.
    pub noise: Vec<f64>,
}

/// Parameter gradients for the conditional VAE.
#[derive(Debug, Clone)]
pub struct CvaeGradients {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
}

/// Conditional-VAE loss over a batch, averaged.
pub fn cvae_batch_loss(
    nets: &CvaeNets,
    batch: &[CvaeSample],
    kl_weight: f64,
) -> Result<LossBreakdown, LossError> {
    cvae_batch(nets, batch, kl_weight, None)
}

/// [`cvae_batch_loss`] plus parameter gradients for encoder and decoder.
pub fn cvae_batch_loss_with_gradients(
    nets: &CvaeNets,
    batch: &[CvaeSample],
    kl_weight: f64,
) -> Result<(LossBreakdown, CvaeGradients), LossError> {
    let mut grads = CvaeGradients {
        encoder: MlpGrads::zeros(nets.encoder.param_count()),
        decoder: MlpGrads::zeros(nets.decoder.param_count()),
    };
    let breakdown = cvae_batch(nets, batch, kl_weight, Some(&mut grads))?;
    Ok((breakdown, grads))
}

fn cvae_batch(
    nets: &CvaeNets,
    batch: &[CvaeSample],
    kl_weight: f64,
    mut grads: Option<&mut CvaeGradients>,
) -> Result<LossBreakdown, LossError> {
    if batch.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut acc: Option<LossBreakdown> = None;

    for sample in batch {
        let mut enc_in = sample.condition.clone();
        enc_in.extend_from_slice(&sample.target);
        let (enc_out, enc_trace) = nets.encoder.forward(&enc_in)?;
        let (g, clamp) = GaussianParams::from_encoder_output(&enc_out)?;
        let latent = reparameterize_with(&g, &sample.noise);
        let mut dec_in = latent.clone();
        dec_in.extend_from_slice(&sample.condition);
        let (recon, dec_trace) = nets.decoder.forward(&dec_in)?;

        let breakdown = cvae_loss(&sample.target, &recon, &g, kl_weight)?;
        match &mut acc {
            None => {
                let mut first = breakdown;
                scale_breakdown(&mut first, scale);
                acc = Some(first);
            }
            Some(total) => {
                let mut next = breakdown;
                scale_breakdown(&mut next, scale);
                add_breakdown(total, &next);
            }
        }

        let Some(g_out) = grads.as_deref_mut() else {
            continue;
        };

        // d/d recon of l1(target, recon) = sign(recon - target).
        let d_recon = l1_subgradient(&recon, &sample.target)?;
        let d_dec_in = nets
            .decoder
            .backward_into(&dec_trace, &d_recon, &mut g_out.decoder, scale)?;
        // Only the latent slice propagates; the condition is a constant
        // input (the aligned generator is frozen).
        let latent_dim = latent.len();
        let mut d_mean = vec![0.0f64; latent_dim];
        let mut d_log_var = vec![0.0f64; latent_dim];
        let d_latent: Vec<f64> = d_dec_in[..latent_dim]
            .iter()
            .map(|v| v / scale)
            .collect();
        reparameterize_backward(&g, &sample.noise, &d_latent, &mut d_mean, &mut d_log_var);
        kl_gradients_into(&g, kl_weight, &mut d_mean, &mut d_log_var);
        let upstream = encoder_upstream(&d_mean, &d_log_var, &clamp);
        nets.encoder
            .backward_into(&enc_trace, &upstream, &mut g_out.encoder, scale)?;
    }

    Ok(acc.expect("non-empty batch"))
}

fn scale_breakdown(b: &mut LossBreakdown, scale: f64) {
    b.total *= scale;
    b.reconstruction *= scale;
    b.kl *= scale;
    b.alignment *= scale;
    b.cross *= scale;
    for k in 0..2 {
        b.reconstruction_parts[k] *= scale;
        b.kl_parts[k] *= scale;
        b.cross_parts[k] *= scale;
    }
}

fn add_breakdown(acc: &mut LossBreakdown, other: &LossBreakdown) {
    acc.total += other.total;
    acc.reconstruction += other.reconstruction;
    acc.kl += other.kl;
    acc.alignment += other.alignment;
    acc.cross += other.cross;
    for k in 0..2 {
        acc.reconstruction_parts[k] += other.reconstruction_parts[k];
        acc.kl_parts[k] += other.kl_parts[k];
        acc.cross_parts[k] += other.cross_parts[k];
    }
}

/// Builds the training condition for one class under the configured mode.
pub(crate) fn training_condition(
    afg: &AfgModel,
    data: &dyn GzslData,
    class: crate::data::ClassId,
    mode: ConditionMode,
    rng: &mut RngStream,
) -> Result<Vec<f64>, NnError> {
    let semantic = data.semantic(class);
    match mode {
        ConditionMode::RawSemantic => Ok(lift(semantic)),
        ConditionMode::MeanAligned => {
            Ok(afg.encode_semantic(semantic)?.mean().to_vec())
        }
        ConditionMode::SampledAligned => {
            let g = afg.encode_semantic(semantic)?;
            Ok(crate::nn::reparameterize(&g, rng))
        }
    }
}

/// Trains the conditional VAE on seen-class training samples, with the
/// aligned feature generator frozen.
///
/// Per sample: the condition is built per `condition_mode`, the target is a
/// reparameterized draw from the visual posterior, and the loss is the
/// conditional-VAE objective. With `epochs = 0` the returned model is
/// exactly its seeded initialization.
pub fn train_sfg(
    data: &dyn GzslData,
    afg: &AfgModel,
    config: &SfgConfig,
) -> Result<SfgModel, TrainError> {
    if afg.semantic_dim() != data.semantic_dim() || afg.visual_dim() != data.visual_dim() {
        return Err(TrainError::Incompatible(format!(
            "aligned generator expects {}d semantic / {}d visual, dataset has {}d / {}d",
            afg.semantic_dim(),
            afg.visual_dim(),
            data.semantic_dim(),
            data.visual_dim()
        )));
    }
    if config.batch_size == 0 {
        return Err(TrainError::Incompatible("batch size must be positive".into()));
    }
    let train = crate::data::dataset_train_indices(data);
    if train.is_empty() {
        return Err(TrainError::EmptySeenSet);
    }

    let aligned = afg.aligned_dim();
    let latent = config.latent_dim.unwrap_or(aligned);
    let condition_dim = match config.condition_mode {
        ConditionMode::RawSemantic => data.semantic_dim(),
        _ => aligned,
    };

    let root = RngStream::new(config.seed);
    let init = root.fork(TAG_INIT);
    let mut sizes = vec![condition_dim + aligned];
    sizes.extend(&config.encoder_hidden);
    sizes.push(2 * latent);
    let encoder = MlpNet::new(&sizes, &mut init.fork(0))?;
    let mut sizes = vec![latent + condition_dim];
    sizes.extend(&config.decoder_hidden);
    sizes.push(aligned);
    let decoder = MlpNet::new(&sizes, &mut init.fork(1))?;

    let mut model = SfgModel::from_parts(
        encoder,
        decoder,
        latent,
        aligned,
        condition_dim,
        config.condition_mode,
        Vec::new(),
    )?;

    let mut opt_enc = AdamState::new(model.encoder.param_count(), config.learning_rate);
    let mut opt_dec = AdamState::new(model.decoder.param_count(), config.learning_rate);
    let mut train_rng = root.fork(TAG_TRAIN);
    let mut order = train;

    for epoch in 0..config.epochs {
        train_rng.shuffle(&mut order);
        let mut epoch_entries: Vec<(LossBreakdown, usize)> = Vec::new();
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let condition = training_condition(
                    afg,
                    data,
                    data.label(i),
                    config.condition_mode,
                    &mut train_rng,
                )?;
                let g_vis = afg.encode_visual(data.visual(i))?;
                let eps_vis = train_rng.standard_normal_vec(aligned);
                let target = reparameterize_with(&g_vis, &eps_vis);
                let noise = train_rng.standard_normal_vec(latent);
                batch.push(CvaeSample {
                    condition,
                    target,
                    noise,
                });
            }
            let nets = CvaeNets {
                encoder: &model.encoder,
                decoder: &model.decoder,
            };
            let (breakdown, grads) =
                cvae_batch_loss_with_gradients(&nets, &batch, config.kl_weight)?;
            if !breakdown.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    stage: "sfg",
                    epoch,
                    batch: batch_idx,
                });
            }
            opt_enc.step(model.encoder.params_mut(), grads.encoder.as_slice())?;
            opt_dec.step(model.decoder.params_mut(), grads.decoder.as_slice())?;
            epoch_entries.push((breakdown, chunk.len()));
        }
        let epoch_mean =
            LossBreakdown::mean_of(&epoch_entries).expect("non-empty training split");
        model.history.push(epoch_mean);
    }

    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::afg::{train_afg, AfgConfig};
    use crate::data::{generate_synthetic_benchmark, SyntheticBenchmarkSpec};

    fn fixtures() -> (crate::data::FeatureDataset, AfgModel) {
        let data = generate_synthetic_benchmark(&SyntheticBenchmarkSpec {
            seen_classes: 4,
            unseen_classes: 2,
            samples_per_class: 20,
            visual_dim: 16,
            semantic_dim: 8,
            seed: 9,
            ..Default::default()
        })
        .unwrap();
        let afg = train_afg(
            &data,
            &AfgConfig {
                aligned_dim: 8,
                encoder_semantic_hidden: vec![32],
                decoder_semantic_hidden: vec![32],
                encoder_visual_hidden: vec![32],
                decoder_visual_hidden: vec![32],
                epochs: 30,
                batch_size: 16,
                ..AfgConfig::desk_scale()
            },
        )
        .unwrap();
        (data, afg)
    }

    fn small_config(epochs: u32) -> SfgConfig {
        SfgConfig {
            encoder_hidden: vec![32],
            decoder_hidden: vec![32],
            epochs,
            batch_size: 16,
            ..SfgConfig::desk_scale()
        }
    }

    #[test]
    fn zero_epochs_returns_seeded_initialization() {
        let (data, afg) = fixtures();
        let a = train_sfg(&data, &afg, &small_config(0)).unwrap();
        let b = train_sfg(&data, &afg, &small_config(0)).unwrap();
        assert!(a.history().is_empty());
        assert_eq!(a.params_concat(), b.params_concat());
    }

    #[test]
    fn afg_parameters_are_bitwise_unchanged_by_stage_two() {
        let (data, afg) = fixtures();
        let before = afg.params_concat();
        let _sfg = train_sfg(&data, &afg, &small_config(10)).unwrap();
        assert_eq!(afg.params_concat(), before);
    }

    #[test]
    fn loss_decreases_over_training() {
        let (data, afg) = fixtures();
        let model = train_sfg(&data, &afg, &small_config(60)).unwrap();
        let first = model.history().first().unwrap().total;
        let last = model.history().last().unwrap().total;
        assert!(last < first, "first {first}, last {last}");
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let (data, afg) = fixtures();
        let a = train_sfg(&data, &afg, &small_config(5)).unwrap();
        let b = train_sfg(&data, &afg, &small_config(5)).unwrap();
        assert_eq!(a.params_concat(), b.params_concat());
    }

    #[test]
    fn reconstruct_is_reproducible_under_fixed_seed() {
        let (data, afg) = fixtures();
        let model = train_sfg(&data, &afg, &small_config(5)).unwrap();
        let condition = vec![0.1; model.condition_dim()];
        let target = vec![0.2; model.aligned_dim()];
        let mut r1 = RngStream::new(5);
        let mut r2 = RngStream::new(5);
        let a = model.reconstruct(&condition, &target, &mut r1).unwrap();
        let b = model.reconstruct(&condition, &target, &mut r2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), model.aligned_dim());
        let _ = data;
    }

    #[test]
    fn training_improves_held_out_reconstruction() {
        let (data, afg) = fixtures();
        let untrained = train_sfg(&data, &afg, &small_config(0)).unwrap();
        let trained = train_sfg(&data, &afg, &small_config(60)).unwrap();

        // Held-out pairs: seen-class test-split samples.
        let held_out: Vec<usize> = (0..data.num_samples())
            .filter(|&i| {
                data.split(i) == crate::data::Split::Test
                    && data.seen_classes().contains(&data.label(i))
            })
            .collect();
        assert!(!held_out.is_empty());

        let mean_err = |model: &SfgModel| {
            let mut rng = RngStream::new(1234);
            let mut acc = 0.0;
            for &i in &held_out {
                let condition = afg
                    .encode_semantic(data.semantic(data.label(i)))
                    .unwrap()
                    .mean()
                    .to_vec();
                let g_vis = afg.encode_visual(data.visual(i)).unwrap();
                let target = crate::nn::reparameterize(&g_vis, &mut rng);
                let recon = model.reconstruct(&condition, &target, &mut rng).unwrap();
                acc += crate::losses::l1_distance(&target, &recon).unwrap();
            }
            acc / held_out.len() as f64
        };
        assert!(mean_err(&trained) < mean_err(&untrained));
    }

    #[test]
    fn condition_mode_contract() {
        let (data, afg) = fixtures();
        let mut rng = RngStream::new(0);
        // Mean mode: identical conditions for the same class.
        let a = training_condition(&afg, &data, 0, ConditionMode::MeanAligned, &mut rng).unwrap();
        let b = training_condition(&afg, &data, 0, ConditionMode::MeanAligned, &mut rng).unwrap();
        assert_eq!(a, b);
        // Sampled mode: conditions generally differ across >= 100 draws.
        let mut distinct = 0;
        let first =
            training_condition(&afg, &data, 0, ConditionMode::SampledAligned, &mut rng).unwrap();
        for _ in 0..100 {
            let next =
                training_condition(&afg, &data, 0, ConditionMode::SampledAligned, &mut rng)
                    .unwrap();
            if next != first {
                distinct += 1;
            }
        }
        assert!(distinct > 90);
        // Raw mode: the semantic vector itself.
        let raw =
            training_condition(&afg, &data, 2, ConditionMode::RawSemantic, &mut rng).unwrap();
        assert_eq!(raw, lift(data.semantic(2)));
    }

    #[test]
    fn incompatible_dataset_is_rejected() {
        let (_, afg) = fixtures();
        let other = generate_synthetic_benchmark(&SyntheticBenchmarkSpec {
            seen_classes: 3,
            unseen_classes: 1,
            samples_per_class: 5,
            visual_dim: 10,
            semantic_dim: 4,
            seed: 0,
            ..Default::default()
        })
        .unwrap();
        assert!(matches!(
            train_sfg(&other, &afg, &small_config(1)),
            Err(TrainError::Incompatible(_))
        ));
    }

    #[test]
    fn history_recomposes() {
        let (data, afg) = fixtures();
        let model = train_sfg(&data, &afg, &small_config(5)).unwrap();
        for entry in model.history() {
            assert!(entry.recomposes(1e-6));
        }
    }
}
