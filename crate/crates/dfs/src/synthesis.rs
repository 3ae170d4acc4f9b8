//! Inference-time feature production in the aligned space.
//!
//! Seen classes are refreshed by re-encoding real training features and
//! sampling their posteriors. Unseen classes get decoded noise: the frozen
//! conditional-VAE decoder is fed standard-normal latents concatenated with
//! the class's aligned semantic embedding. A baseline generator — sampling
//! the aligned semantic posterior directly, which is all stage 1 alone can
//! offer — is included for paired comparisons.
//!
//! Every class draws from its own substream forked from `(seed, class id)`,
//! so per-class output is independent of how many other classes exist.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::afg::AfgModel;
use crate::data::{train_indices_of_class, ClassId, GzslData};
use crate::nn::{reparameterize, NnError, RngStream};
use crate::sfg::{SfgError, SfgModel};

/// Per-class synthesis counts and the synthesis seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthesisPlan {
    pub per_seen_class: usize,
    pub per_unseen_class: usize,
    pub seed: u64,
}

impl Default for SynthesisPlan {
    fn default() -> Self {
        Self {
            per_seen_class: 200,
            per_unseen_class: 400,
            seed: 0,
        }
    }
}

/// How a synthesized row was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    /// Reparameterized draw from a real visual feature's posterior.
    SeenPosterior,
    /// Decoded from noise plus an aligned semantic condition.
    UnseenDecoded,
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("class {class} has no visual training samples to synthesize from")]
    EmptyClass { class: ClassId },
    #[error("plan counts must be at least 1")]
    EmptyPlan,
    #[error("feature dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("class {class} has fewer than 2 rows; diversity is undefined")]
    TooFewRows { class: ClassId },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sfg(#[from] SfgError),
}

/// A labeled matrix of synthesized aligned features with per-row provenance.
#[derive(Debug, Clone)]
pub struct SynthesizedSet {
    features: Vec<f32>,
    dim: usize,
    labels: Vec<ClassId>,
    provenance: Vec<Provenance>,
}

impl SynthesizedSet {
    /// An empty set of the given feature dimension.
    pub fn new(dim: usize) -> Self {
        Self::with_capacity(dim, 0)
    }

    fn with_capacity(dim: usize, rows: usize) -> Self {
        Self {
            features: Vec::with_capacity(rows * dim),
            dim,
            labels: Vec::with_capacity(rows),
            provenance: Vec::with_capacity(rows),
        }
    }

    /// Appends one row, rounding to the storage precision.
    pub fn push_row(&mut self, row: &[f64], label: ClassId, provenance: Provenance) {
        assert_eq!(row.len(), self.dim, "row length must equal the set's dim");
        self.features.extend(row.iter().map(|&v| v as f32));
        self.labels.push(label);
        self.provenance.push(provenance);
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature(&self, row: usize) -> &[f32] {
        &self.features[row * self.dim..(row + 1) * self.dim]
    }

    pub fn features_flat(&self) -> &[f32] {
        &self.features
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    /// Distinct labels present, ascending.
    pub fn classes(&self) -> Vec<ClassId> {
        let mut out: Vec<ClassId> = self.labels.clone();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Draws `plan.per_seen_class` aligned features per seen class by encoding a
/// uniformly chosen real training feature of that class and sampling its
/// posterior.
pub fn synthesize_seen(
    afg: &AfgModel,
    data: &dyn GzslData,
    plan: &SynthesisPlan,
) -> Result<SynthesizedSet, SynthesisError> {
    if plan.per_seen_class == 0 {
        return Err(SynthesisError::EmptyPlan);
    }
    let root = RngStream::new(plan.seed);
    let mut out = SynthesizedSet::with_capacity(
        afg.aligned_dim(),
        data.seen_classes().len() * plan.per_seen_class,
    );
    for &class in data.seen_classes() {
        let pool = train_indices_of_class(data, class);
        if pool.is_empty() {
            return Err(SynthesisError::EmptyClass { class });
        }
        let mut rng = root.fork(class as u64);
        for _ in 0..plan.per_seen_class {
            let sample = pool[rng.index(pool.len())];
            let g = afg.encode_visual(data.visual(sample))?;
            let z = reparameterize(&g, &mut rng);
            out.push_row(&z, class, Provenance::SeenPosterior);
        }
    }
    Ok(out)
}

/// Decodes `plan.per_unseen_class` noise vectors per unseen class through
/// the conditional-VAE decoder, conditioned on the class's aligned semantic
/// embedding. No unseen visual feature is touched.
///
/// The condition is the aligned posterior mean (or the raw semantic vector
/// when the generator was trained in raw mode).
pub fn synthesize_unseen(
    afg: &AfgModel,
    sfg: &SfgModel,
    data: &dyn GzslData,
    plan: &SynthesisPlan,
) -> Result<SynthesizedSet, SynthesisError> {
    if plan.per_unseen_class == 0 {
        return Err(SynthesisError::EmptyPlan);
    }
    if sfg.aligned_dim() != afg.aligned_dim() {
        return Err(SynthesisError::DimMismatch {
            left: sfg.aligned_dim(),
            right: afg.aligned_dim(),
        });
    }
    let root = RngStream::new(plan.seed);
    let mut out = SynthesizedSet::with_capacity(
        afg.aligned_dim(),
        data.unseen_classes().len() * plan.per_unseen_class,
    );
    for &class in data.unseen_classes() {
        let condition = inference_condition(afg, sfg, data.semantic(class))?;
        let mut rng = root.fork(class as u64);
        for _ in 0..plan.per_unseen_class {
            let noise = rng.standard_normal_vec(sfg.latent_dim());
            let row = sfg.decode(&noise, &condition)?;
            out.push_row(&row, class, Provenance::UnseenDecoded);
        }
    }
    Ok(out)
}

fn inference_condition(
    afg: &AfgModel,
    sfg: &SfgModel,
    semantic: &[f32],
) -> Result<Vec<f64>, SynthesisError> {
    match sfg.condition_mode() {
        crate::sfg::ConditionMode::RawSemantic => {
            Ok(semantic.iter().map(|&v| v as f64).collect())
        }
        _ => Ok(afg.encode_semantic(semantic)?.mean().to_vec()),
    }
}

/// The baseline generator: per unseen class, samples the aligned semantic
/// posterior directly — what stage 1 alone provides. Used as the comparison
/// arm in paired evaluations.
pub fn synthesize_unseen_baseline(
    afg: &AfgModel,
    data: &dyn GzslData,
    plan: &SynthesisPlan,
) -> Result<SynthesizedSet, SynthesisError> {
    if plan.per_unseen_class == 0 {
        return Err(SynthesisError::EmptyPlan);
    }
    let root = RngStream::new(plan.seed);
    let mut out = SynthesizedSet::with_capacity(
        afg.aligned_dim(),
        data.unseen_classes().len() * plan.per_unseen_class,
    );
    for &class in data.unseen_classes() {
        let g = afg.encode_semantic(data.semantic(class))?;
        let mut rng = root.fork(class as u64);
        for _ in 0..plan.per_unseen_class {
            let z = reparameterize(&g, &mut rng);
            out.push_row(&z, class, Provenance::UnseenDecoded);
        }
    }
    Ok(out)
}

/// Per-class trace of the unbiased sample covariance: the scalar spread of
/// each class's synthesized features. Requires at least 2 rows per class.
pub fn diversity_score(
    set: &SynthesizedSet,
) -> Result<BTreeMap<ClassId, f64>, SynthesisError> {
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (row, &label) in set.labels().iter().enumerate() {
        by_class.entry(label).or_default().push(row);
    }
    let mut scores = BTreeMap::new();
    for (class, rows) in by_class {
        if rows.len() < 2 {
            return Err(SynthesisError::TooFewRows { class });
        }
        let n = rows.len() as f64;
        let dim = set.dim();
        let mut mean = vec![0.0f64; dim];
        for &r in &rows {
            for (m, &v) in mean.iter_mut().zip(set.feature(r)) {
                *m += v as f64;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut trace = 0.0;
        for &r in &rows {
            for (m, &v) in mean.iter().zip(set.feature(r)) {
                let d = v as f64 - m;
                trace += d * d;
            }
        }
        scores.insert(class, trace / (n - 1.0));
    }
    Ok(scores)
}

/// Concatenates the seen block then the unseen block into one training set,
/// preserving labels and provenance row-for-row.
pub fn build_classifier_trainset(
    seen: &SynthesizedSet,
    unseen: &SynthesizedSet,
) -> Result<SynthesizedSet, SynthesisError> {
    if seen.rows() > 0 && unseen.rows() > 0 && seen.dim() != unseen.dim() {
        return Err(SynthesisError::DimMismatch {
            left: seen.dim(),
            right: unseen.dim(),
        });
    }
    let dim = if seen.rows() > 0 { seen.dim() } else { unseen.dim() };
    let mut out = SynthesizedSet::with_capacity(dim, seen.rows() + unseen.rows());
    out.features.extend_from_slice(&seen.features);
    out.labels.extend_from_slice(&seen.labels);
    out.provenance.extend_from_slice(&seen.provenance);
    out.features.extend_from_slice(&unseen.features);
    out.labels.extend_from_slice(&unseen.labels);
    out.provenance.extend_from_slice(&unseen.provenance);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::afg::{train_afg, AfgConfig};
    use crate::data::{generate_synthetic_benchmark, FeatureDataset, SyntheticBenchmarkSpec};
    use crate::nn::MlpNet;
    use crate::sfg::{train_sfg, SfgConfig};

    fn fixtures() -> (FeatureDataset, AfgModel, SfgModel) {
        let data = generate_synthetic_benchmark(&SyntheticBenchmarkSpec {
            seen_classes: 3,
            unseen_classes: 2,
            samples_per_class: 15,
            visual_dim: 12,
            semantic_dim: 6,
            seed: 11,
            ..Default::default()
        })
        .unwrap();
        let afg = train_afg(
            &data,
            &AfgConfig {
                aligned_dim: 6,
                encoder_semantic_hidden: vec![24],
                decoder_semantic_hidden: vec![24],
                encoder_visual_hidden: vec![24],
                decoder_visual_hidden: vec![24],
                epochs: 10,
                batch_size: 16,
                ..AfgConfig::desk_scale()
            },
        )
        .unwrap();
        let sfg = train_sfg(
            &data,
            &afg,
            &SfgConfig {
                encoder_hidden: vec![24],
                decoder_hidden: vec![24],
                epochs: 10,
                batch_size: 16,
                ..SfgConfig::desk_scale()
            },
        )
        .unwrap();
        (data, afg, sfg)
    }

    #[test]
    fn seen_synthesis_shape_and_provenance() {
        let (data, afg, _) = fixtures();
        let plan = SynthesisPlan {
            per_seen_class: 1,
            per_unseen_class: 1,
            seed: 0,
        };
        let set = synthesize_seen(&afg, &data, &plan).unwrap();
        assert_eq!(set.rows(), data.seen_classes().len());
        assert_eq!(set.dim(), afg.aligned_dim());
        assert!(set
            .provenance()
            .iter()
            .all(|p| *p == Provenance::SeenPosterior));
    }

    #[test]
    fn seen_synthesis_is_deterministic_under_seed() {
        let (data, afg, _) = fixtures();
        let plan = SynthesisPlan {
            per_seen_class: 7,
            per_unseen_class: 1,
            seed: 42,
        };
        let a = synthesize_seen(&afg, &data, &plan).unwrap();
        let b = synthesize_seen(&afg, &data, &plan).unwrap();
        assert_eq!(a.features_flat(), b.features_flat());
        assert_eq!(a.labels(), b.labels());
    }

    #[test]
    fn seen_synthesis_zero_variance_limit_returns_posterior_means() {
        let (data, mut afg, _) = fixtures();
        // Force the visual encoder's log-variance output to -20: zero
        // weights everywhere, mean biases arbitrary, log-var biases -20.
        let sizes = afg.encoder_visual().layer_sizes().to_vec();
        let aligned = afg.aligned_dim();
        let mut layers = Vec::new();
        for w in sizes.windows(2) {
            layers.push((vec![0.0f32; w[0] * w[1]], vec![0.0f32; w[1]]));
        }
        let last = layers.len() - 1;
        for (o, b) in layers[last].1.iter_mut().enumerate() {
            *b = if o < aligned { (o as f32) * 0.3 - 1.0 } else { -20.0 };
        }
        let forced = MlpNet::from_parts(&sizes, &layers).unwrap();
        afg = AfgModel::from_parts(
            afg.encoder_semantic().clone(),
            afg.decoder_semantic().clone(),
            forced,
            afg.decoder_visual().clone(),
            aligned,
            Vec::new(),
        )
        .unwrap();
        let plan = SynthesisPlan {
            per_seen_class: 1,
            per_unseen_class: 1,
            seed: 1,
        };
        let set = synthesize_seen(&afg, &data, &plan).unwrap();
        assert_eq!(set.rows(), data.seen_classes().len());
        for row in 0..set.rows() {
            for (i, v) in set.feature(row).iter().enumerate() {
                let expected = (i as f64) * 0.3 - 1.0;
                assert!(
                    (*v as f64 - expected).abs() < 1e-4,
                    "row {row} coord {i}: {v} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn unseen_synthesis_constant_decoder_emits_bias() {
        let (data, afg, sfg) = fixtures();
        // Replace the decoder with zero weights and a fixed bias.
        let sizes = sfg.decoder().layer_sizes().to_vec();
        let mut layers = Vec::new();
        for w in sizes.windows(2) {
            layers.push((vec![0.0f32; w[0] * w[1]], vec![0.0f32; w[1]]));
        }
        let last = layers.len() - 1;
        for (o, b) in layers[last].1.iter_mut().enumerate() {
            *b = o as f32 + 0.5;
        }
        let constant_decoder = MlpNet::from_parts(&sizes, &layers).unwrap();
        let sfg = SfgModel::from_parts(
            sfg.encoder().clone(),
            constant_decoder,
            sfg.latent_dim(),
            sfg.aligned_dim(),
            sfg.condition_dim(),
            sfg.condition_mode(),
            Vec::new(),
        )
        .unwrap();
        let plan = SynthesisPlan {
            per_seen_class: 1,
            per_unseen_class: 4,
            seed: 3,
        };
        let set = synthesize_unseen(&afg, &sfg, &data, &plan).unwrap();
        assert_eq!(set.rows(), data.unseen_classes().len() * 4);
        for row in 0..set.rows() {
            for (i, v) in set.feature(row).iter().enumerate() {
                assert_eq!(*v, i as f32 + 0.5);
            }
        }
        assert!(set
            .provenance()
            .iter()
            .all(|p| *p == Provenance::UnseenDecoded));
    }

    #[test]
    fn unseen_synthesis_is_deterministic_under_seed() {
        let (data, afg, sfg) = fixtures();
        let plan = SynthesisPlan {
            per_seen_class: 1,
            per_unseen_class: 9,
            seed: 8,
        };
        let a = synthesize_unseen(&afg, &sfg, &data, &plan).unwrap();
        let b = synthesize_unseen(&afg, &sfg, &data, &plan).unwrap();
        assert_eq!(a.features_flat(), b.features_flat());

        let ba = synthesize_unseen_baseline(&afg, &data, &plan).unwrap();
        let bb = synthesize_unseen_baseline(&afg, &data, &plan).unwrap();
        assert_eq!(ba.features_flat(), bb.features_flat());
    }

    #[test]
    fn diversity_score_examples() {
        // All rows identical: zero.
        let mut constant = SynthesizedSet::with_capacity(2, 3);
        for _ in 0..3 {
            constant.push_row(&[1.0, -2.0], 0, Provenance::SeenPosterior);
        }
        let scores = diversity_score(&constant).unwrap();
        assert_eq!(scores[&0], 0.0);

        // Hand-computed unbiased covariance trace.
        let mut pair = SynthesizedSet::with_capacity(2, 2);
        pair.push_row(&[0.0, 0.0], 1, Provenance::UnseenDecoded);
        pair.push_row(&[2.0, 0.0], 1, Provenance::UnseenDecoded);
        let scores = diversity_score(&pair).unwrap();
        assert!((scores[&1] - 2.0).abs() < 1e-12);

        // Permutation invariance.
        let mut swapped = SynthesizedSet::with_capacity(2, 2);
        swapped.push_row(&[2.0, 0.0], 1, Provenance::UnseenDecoded);
        swapped.push_row(&[0.0, 0.0], 1, Provenance::UnseenDecoded);
        assert_eq!(
            diversity_score(&swapped).unwrap()[&1],
            scores[&1]
        );
    }

    #[test]
    fn diversity_rejects_singleton_class() {
        let mut set = SynthesizedSet::with_capacity(2, 1);
        set.push_row(&[0.0, 0.0], 5, Provenance::UnseenDecoded);
        assert!(matches!(
            diversity_score(&set),
            Err(SynthesisError::TooFewRows { class: 5 })
        ));
    }

    #[test]
    fn trainset_concatenation_preserves_labels() {
        let (data, afg, sfg) = fixtures();
        let plan = SynthesisPlan {
            per_seen_class: 3,
            per_unseen_class: 2,
            seed: 0,
        };
        let seen = synthesize_seen(&afg, &data, &plan).unwrap();
        let unseen = synthesize_unseen(&afg, &sfg, &data, &plan).unwrap();
        let combined = build_classifier_trainset(&seen, &unseen).unwrap();
        assert_eq!(combined.rows(), seen.rows() + unseen.rows());
        let mut expected: Vec<ClassId> = seen
            .labels()
            .iter()
            .chain(unseen.labels())
            .copied()
            .collect();
        let mut got = combined.labels().to_vec();
        expected.sort_unstable();
        got.sort_unstable();
        assert_eq!(expected, got);

        // Empty unseen block: output equals the seen set.
        let empty = SynthesizedSet::with_capacity(seen.dim(), 0);
        let only_seen = build_classifier_trainset(&seen, &empty).unwrap();
        assert_eq!(only_seen.features_flat(), seen.features_flat());
        assert_eq!(only_seen.labels(), seen.labels());
    }
}
