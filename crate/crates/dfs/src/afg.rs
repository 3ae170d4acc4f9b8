//! Stage 1: the aligned feature generator.
//!
//! Two VAEs — one per modality — are trained jointly on seen-class
//! (semantic embedding, visual feature) pairs. The distribution-alignment
//! and cross-reconstruction penalties force both encoders to place the same
//! class in the same region of the aligned space, so that afterwards a
//! semantic embedding alone is a usable handle on a class's visual
//! distribution.

use thiserror::Error;

use crate::data::{ClassId, GzslData};
use crate::losses::{
    afg_loss_with_gradients, AfgLossWeights, AfgNets, AfgNoise, AfgPair, LossBreakdown, LossError,
};
use crate::nn::{AdamState, GaussianParams, MlpNet, NnError, RngStream};

const TAG_INIT: u64 = 1;
const TAG_TRAIN: u64 = 2;

/// Errors raised by the training stages.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset has no seen-class training samples")]
    EmptySeenSet,
    #[error("seen class {class} has no training samples")]
    ClassWithoutSamples { class: ClassId },
    #[error("non-finite loss in {stage} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        stage: &'static str,
        epoch: u32,
        batch: usize,
    },
    #[error("model/dataset mismatch: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Stage-1 configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AfgConfig {
    /// Dimension of the aligned space.
    pub aligned_dim: usize,
    pub encoder_semantic_hidden: Vec<usize>,
    pub decoder_semantic_hidden: Vec<usize>,
    pub encoder_visual_hidden: Vec<usize>,
    pub decoder_visual_hidden: Vec<usize>,
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weights: AfgLossWeights,
    pub seed: u64,
}

impl AfgConfig {
    /// Small networks sized for the synthetic benchmark; seconds per run.
    pub fn desk_scale() -> Self {
        Self {
            aligned_dim: 16,
            encoder_semantic_hidden: vec![64],
            decoder_semantic_hidden: vec![64],
            encoder_visual_hidden: vec![64],
            decoder_visual_hidden: vec![64],
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            weights: AfgLossWeights::default(),
            seed: 0,
        }
    }

    /// The published full-scale setting for fine-grained datasets: aligned
    /// dimension 256 with 6240/4980 hidden units for the semantic
    /// encoder/decoder and 3600/1330 for the visual pair.
    pub fn paper_scale() -> Self {
        Self {
            aligned_dim: 256,
            encoder_semantic_hidden: vec![6240],
            decoder_semantic_hidden: vec![4980],
            encoder_visual_hidden: vec![3600],
            decoder_visual_hidden: vec![1330],
            epochs: 100,
            batch_size: 64,
            learning_rate: crate::nn::DEFAULT_LEARNING_RATE,
            weights: AfgLossWeights::default(),
            seed: 0,
        }
    }
}

impl Default for AfgConfig {
    fn default() -> Self {
        Self::desk_scale()
    }
}

/// Trained stage-1 model: both encoder/decoder pairs plus the per-epoch
/// loss history.
#[derive(Debug, Clone)]
pub struct AfgModel {
    encoder_semantic: MlpNet,
    decoder_semantic: MlpNet,
    encoder_visual: MlpNet,
    decoder_visual: MlpNet,
    aligned_dim: usize,
    history: Vec<LossBreakdown>,
}

impl AfgModel {
    pub(crate) fn from_parts(
        encoder_semantic: MlpNet,
        decoder_semantic: MlpNet,
        encoder_visual: MlpNet,
        decoder_visual: MlpNet,
        aligned_dim: usize,
        history: Vec<LossBreakdown>,
    ) -> Result<Self, TrainError> {
        if encoder_semantic.output_dim() != 2 * aligned_dim
            || encoder_visual.output_dim() != 2 * aligned_dim
            || decoder_semantic.input_dim() != aligned_dim
            || decoder_visual.input_dim() != aligned_dim
            || decoder_semantic.output_dim() != encoder_semantic.input_dim()
            || decoder_visual.output_dim() != encoder_visual.input_dim()
        {
            return Err(TrainError::Incompatible(
                "encoder/decoder dimensions do not chain over the aligned space".into(),
            ));
        }
        Ok(Self {
            encoder_semantic,
            decoder_semantic,
            encoder_visual,
            decoder_visual,
            aligned_dim,
            history,
        })
    }

    pub fn aligned_dim(&self) -> usize {
        self.aligned_dim
    }

    pub fn semantic_dim(&self) -> usize {
        self.encoder_semantic.input_dim()
    }

    pub fn visual_dim(&self) -> usize {
        self.encoder_visual.input_dim()
    }

    pub fn encoder_semantic(&self) -> &MlpNet {
        &self.encoder_semantic
    }

    pub fn decoder_semantic(&self) -> &MlpNet {
        &self.decoder_semantic
    }

    pub fn encoder_visual(&self) -> &MlpNet {
        &self.encoder_visual
    }

    pub fn decoder_visual(&self) -> &MlpNet {
        &self.decoder_visual
    }

    /// Per-epoch mean loss breakdowns, one entry per trained epoch.
    pub fn history(&self) -> &[LossBreakdown] {
        &self.history
    }

    pub fn nets(&self) -> AfgNets<'_> {
        AfgNets {
            encoder_semantic: &self.encoder_semantic,
            decoder_semantic: &self.decoder_semantic,
            encoder_visual: &self.encoder_visual,
            decoder_visual: &self.decoder_visual,
        }
    }

    /// All parameters of the four networks, concatenated. Used for
    /// frozen-stage and determinism assertions.
    pub fn params_concat(&self) -> Vec<f32> {
        let mut out = Vec::new();
        out.extend_from_slice(self.encoder_semantic.params());
        out.extend_from_slice(self.decoder_semantic.params());
        out.extend_from_slice(self.encoder_visual.params());
        out.extend_from_slice(self.decoder_visual.params());
        out
    }

    /// Deterministic aligned-space posterior of a semantic embedding.
    pub fn encode_semantic(&self, semantic: &[f32]) -> Result<GaussianParams, NnError> {
        encode(&self.encoder_semantic, semantic)
    }

    /// Deterministic aligned-space posterior of a visual feature.
    pub fn encode_visual(&self, visual: &[f32]) -> Result<GaussianParams, NnError> {
        encode(&self.encoder_visual, visual)
    }
}

fn encode(net: &MlpNet, input: &[f32]) -> Result<GaussianParams, NnError> {
    let lifted: Vec<f64> = input.iter().map(|&v| v as f64).collect();
    let (out, _) = net.forward(&lifted)?;
    let (g, _) = GaussianParams::from_encoder_output(&out)?;
    Ok(g)
}

/// Trains the aligned feature generator on the dataset's training split.
///
/// Only seen-class training samples are read. With `epochs = 0` the
/// returned model is exactly its seeded initialization.
pub fn train_afg(data: &dyn GzslData, config: &AfgConfig) -> Result<AfgModel, TrainError> {
    let train = crate::data::dataset_train_indices(data);
    if train.is_empty() {
        return Err(TrainError::EmptySeenSet);
    }
    if config.batch_size == 0 {
        return Err(TrainError::Incompatible("batch size must be positive".into()));
    }

    let root = RngStream::new(config.seed);
    let init = root.fork(TAG_INIT);
    let d = config.aligned_dim;
    let mut sizes = vec![data.semantic_dim()];
    sizes.extend(&config.encoder_semantic_hidden);
    sizes.push(2 * d);
    let encoder_semantic = MlpNet::new(&sizes, &mut init.fork(0))?;
    let mut sizes = vec![d];
    sizes.extend(&config.decoder_semantic_hidden);
    sizes.push(data.semantic_dim());
    let decoder_semantic = MlpNet::new(&sizes, &mut init.fork(1))?;
    let mut sizes = vec![data.visual_dim()];
    sizes.extend(&config.encoder_visual_hidden);
    sizes.push(2 * d);
    let encoder_visual = MlpNet::new(&sizes, &mut init.fork(2))?;
    let mut sizes = vec![d];
    sizes.extend(&config.decoder_visual_hidden);
    sizes.push(data.visual_dim());
    let decoder_visual = MlpNet::new(&sizes, &mut init.fork(3))?;

    let mut model = AfgModel::from_parts(
        encoder_semantic,
        decoder_semantic,
        encoder_visual,
        decoder_visual,
        d,
        Vec::new(),
    )?;

    let mut opt_enc_sem = AdamState::new(model.encoder_semantic.param_count(), config.learning_rate);
    let mut opt_dec_sem = AdamState::new(model.decoder_semantic.param_count(), config.learning_rate);
    let mut opt_enc_vis = AdamState::new(model.encoder_visual.param_count(), config.learning_rate);
    let mut opt_dec_vis = AdamState::new(model.decoder_visual.param_count(), config.learning_rate);

    let mut train_rng = root.fork(TAG_TRAIN);
    let mut order = train;

    for epoch in 0..config.epochs {
        train_rng.shuffle(&mut order);
        let mut epoch_entries: Vec<(LossBreakdown, usize)> = Vec::new();
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let pairs: Vec<AfgPair> = chunk
                .iter()
                .map(|&i| AfgPair {
                    semantic: data.semantic(data.label(i)),
                    visual: data.visual(i),
                })
                .collect();
            let noise: Vec<AfgNoise> = chunk
                .iter()
                .map(|_| AfgNoise {
                    semantic: train_rng.standard_normal_vec(d),
                    visual: train_rng.standard_normal_vec(d),
                })
                .collect();
            let (breakdown, grads) =
                afg_loss_with_gradients(&model.nets(), &pairs, &noise, &config.weights, epoch)?;
            if !breakdown.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    stage: "afg",
                    epoch,
                    batch: batch_idx,
                });
            }
            opt_enc_sem.step(
                model.encoder_semantic.params_mut(),
                grads.encoder_semantic.as_slice(),
            )?;
            opt_dec_sem.step(
                model.decoder_semantic.params_mut(),
                grads.decoder_semantic.as_slice(),
            )?;
            opt_enc_vis.step(
                model.encoder_visual.params_mut(),
                grads.encoder_visual.as_slice(),
            )?;
            opt_dec_vis.step(
                model.decoder_visual.params_mut(),
                grads.decoder_visual.as_slice(),
            )?;
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
    use crate::data::{generate_synthetic_benchmark, SyntheticBenchmarkSpec};
    use crate::losses::distribution_alignment_loss;

    fn small_benchmark(seed: u64) -> crate::data::FeatureDataset {
        generate_synthetic_benchmark(&SyntheticBenchmarkSpec {
            seen_classes: 4,
            unseen_classes: 2,
            samples_per_class: 20,
            visual_dim: 16,
            semantic_dim: 8,
            seed,
            ..Default::default()
        })
        .unwrap()
    }

    fn small_config(epochs: u32) -> AfgConfig {
        AfgConfig {
            aligned_dim: 8,
            encoder_semantic_hidden: vec![32],
            decoder_semantic_hidden: vec![32],
            encoder_visual_hidden: vec![32],
            decoder_visual_hidden: vec![32],
            epochs,
            batch_size: 16,
            ..AfgConfig::desk_scale()
        }
    }

    #[test]
    fn zero_epochs_returns_seeded_initialization() {
        let data = small_benchmark(1);
        let config = small_config(0);
        let a = train_afg(&data, &config).unwrap();
        let b = train_afg(&data, &config).unwrap();
        assert!(a.history().is_empty());
        assert_eq!(a.params_concat(), b.params_concat());
    }

    #[test]
    fn training_is_deterministic_under_seed() {
        let data = small_benchmark(2);
        let config = small_config(3);
        let a = train_afg(&data, &config).unwrap();
        let b = train_afg(&data, &config).unwrap();
        assert_eq!(a.params_concat(), b.params_concat());
        assert_eq!(a.history().len(), 3);
    }

    #[test]
    fn loss_decreases_over_training() {
        let data = small_benchmark(3);
        let config = small_config(40);
        let model = train_afg(&data, &config).unwrap();
        let first = model.history().first().unwrap().total;
        let last = model.history().last().unwrap().total;
        assert!(
            last < first,
            "loss should improve: first {first}, last {last}"
        );
    }

    #[test]
    fn history_recomposes() {
        let data = small_benchmark(4);
        let model = train_afg(&data, &small_config(5)).unwrap();
        for entry in model.history() {
            assert!(entry.recomposes(1e-6));
        }
    }

    #[test]
    fn encoders_separate_distinct_classes_after_training() {
        let data = small_benchmark(5);
        let model = train_afg(&data, &small_config(30)).unwrap();
        let g0 = model.encode_semantic(data.semantic(0)).unwrap();
        let g1 = model.encode_semantic(data.semantic(1)).unwrap();
        let dist: f64 = g0
            .mean()
            .iter()
            .zip(g1.mean())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(dist > 0.0);
    }

    #[test]
    fn training_tightens_modality_alignment() {
        let data = small_benchmark(6);
        let before = train_afg(&data, &small_config(0)).unwrap();
        let after = train_afg(&data, &small_config(40)).unwrap();
        let mean_alignment = |model: &AfgModel| {
            let idx = crate::data::dataset_train_indices(&data);
            let mut acc = 0.0;
            for &i in &idx {
                let g_sem = model.encode_semantic(data.semantic(data.label(i))).unwrap();
                let g_vis = model.encode_visual(data.visual(i)).unwrap();
                acc += distribution_alignment_loss(&g_sem, &g_vis).unwrap();
            }
            acc / idx.len() as f64
        };
        assert!(mean_alignment(&after) < mean_alignment(&before));
    }

    #[test]
    fn zero_weight_encoder_mean_is_bias_slice() {
        let mut model = train_afg(&small_benchmark(7), &small_config(0)).unwrap();
        // Zero the encoder weights; the posterior mean must equal the mean
        // half of the output bias regardless of the input.
        let sizes = model.encoder_semantic.layer_sizes().to_vec();
        let mut layers = Vec::new();
        for w in sizes.windows(2) {
            layers.push((vec![0.0f32; w[0] * w[1]], vec![0.0f32; w[1]]));
        }
        let last = layers.len() - 1;
        for (o, b) in layers[last].1.iter_mut().enumerate() {
            *b = o as f32 * 0.5 - 1.0;
        }
        model.encoder_semantic = MlpNet::from_parts(&sizes, &layers).unwrap();
        let g = model.encode_semantic(&vec![0.7; 8]).unwrap();
        for (i, m) in g.mean().iter().enumerate() {
            assert_eq!(*m, i as f64 * 0.5 - 1.0);
        }
        let g2 = model.encode_semantic(&vec![-3.0; 8]).unwrap();
        assert_eq!(g.mean(), g2.mean());
    }

    #[test]
    fn empty_training_split_is_rejected() {
        // All samples in the test split.
        let ds = crate::data::FeatureDataset::new(
            vec![0.0; 4],
            2,
            vec![0, 1],
            vec![0.0; 4],
            2,
            vec![0],
            vec![1],
            vec![crate::data::Split::Test, crate::data::Split::Test],
        )
        .unwrap();
        assert!(matches!(
            train_afg(&ds, &small_config(1)),
            Err(TrainError::EmptySeenSet)
        ));
    }
}
