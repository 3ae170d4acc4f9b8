//! Linear classification in the aligned space and the GZSL metrics.
//!
//! The classifier is a single affine layer trained with softmax
//! cross-entropy by the same optimizer as the generators. Accuracy is
//! averaged per class, not per sample, so rare classes count as much as
//! common ones, and the headline number is the harmonic mean of the
//! seen-group and unseen-group accuracies.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::afg::{AfgModel, TrainError};
use crate::data::{ClassId, GzslData, Split};
use crate::nn::{AdamState, MlpNet, NnError, RngStream};
use crate::sfg::SfgModel;
use crate::synthesis::{
    build_classifier_trainset, diversity_score, synthesize_seen, synthesize_unseen,
    synthesize_unseen_baseline, SynthesisError, SynthesisPlan, SynthesizedSet,
};

const TAG_INIT: u64 = 21;
const TAG_TRAIN: u64 = 22;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("classifier needs at least 2 classes, got {0}")]
    SingleClass(usize),
    #[error("class {class} has no samples in the evaluated subset")]
    ClassWithoutSamples { class: ClassId },
    #[error("label {label} is outside the classifier's class list")]
    UnknownLabel { label: ClassId },
    #[error("accuracy arguments must lie in [0, 1], got {0}")]
    OutOfRange(f64),
    #[error("test set has no {group} samples")]
    MissingGroup { group: &'static str },
    #[error("feature matrix length {got} is not a multiple of dim {dim}")]
    RaggedMatrix { got: usize, dim: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
}

/// Classifier hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 1e-3,
            batch_size: 128,
            seed: 0,
        }
    }
}

/// A linear softmax classifier over an explicit, ascending class list.
#[derive(Debug, Clone)]
pub struct LinearClassifier {
    net: MlpNet,
    classes: Vec<ClassId>,
}

impl LinearClassifier {
    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn feature_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// Weight matrix, row-major `(num_classes, feature_dim)`.
    pub fn weights(&self) -> &[f32] {
        self.net.layer_weights(0)
    }

    pub fn biases(&self) -> &[f32] {
        self.net.layer_biases(0)
    }

    pub fn params(&self) -> &[f32] {
        self.net.params()
    }

    pub fn logits(&self, feature: &[f64]) -> Result<Vec<f64>, EvalError> {
        let (out, _) = self.net.forward(feature)?;
        Ok(out)
    }

    /// Argmax prediction; ties break toward the lowest class id.
    pub fn predict(&self, feature: &[f64]) -> Result<ClassId, EvalError> {
        let logits = self.logits(feature)?;
        let mut best = 0usize;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        Ok(self.classes[best])
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|v| v - log_sum).collect()
}

/// Trains the linear classifier with softmax cross-entropy on a synthesized
/// training set. Deterministic under `config.seed`; `epochs = 0` returns
/// the seeded initialization.
pub fn train_linear_classifier(
    trainset: &SynthesizedSet,
    config: &ClassifierConfig,
) -> Result<LinearClassifier, EvalError> {
    let classes = trainset.classes();
    if classes.len() < 2 {
        return Err(EvalError::SingleClass(classes.len()));
    }
    let class_row: BTreeMap<ClassId, usize> = classes
        .iter()
        .enumerate()
        .map(|(row, &c)| (c, row))
        .collect();
    let dim = trainset.dim();

    let root = RngStream::new(config.seed);
    let mut net = MlpNet::new(&[dim, classes.len()], &mut root.fork(TAG_INIT))?;
    let mut opt = AdamState::new(net.param_count(), config.learning_rate);
    let mut train_rng = root.fork(TAG_TRAIN);
    let mut order: Vec<usize> = (0..trainset.rows()).collect();
    let batch_size = config.batch_size.max(1);

    for _epoch in 0..config.epochs {
        train_rng.shuffle(&mut order);
        for chunk in order.chunks(batch_size) {
            let scale = 1.0 / chunk.len() as f64;
            let mut grads = crate::nn::MlpGrads::zeros(net.param_count());
            for &row in chunk {
                let feature: Vec<f64> =
                    trainset.feature(row).iter().map(|&v| v as f64).collect();
                let (logits, trace) = net.forward(&feature)?;
                let log_probs = log_softmax(&logits);
                let target_row = class_row[&trainset.labels()[row]];
                let upstream: Vec<f64> = log_probs
                    .iter()
                    .enumerate()
                    .map(|(i, lp)| lp.exp() - if i == target_row { 1.0 } else { 0.0 })
                    .collect();
                net.backward_into(&trace, &upstream, &mut grads, scale)?;
            }
            opt.step(net.params_mut(), grads.as_slice())?;
        }
    }

    Ok(LinearClassifier { net, classes })
}

/// Per-class accuracy from precomputed predictions: for each class in
/// `subset`, the fraction of its samples predicted correctly; the mean is
/// unweighted over classes.
pub fn per_class_accuracy_of_predictions(
    predictions: &[ClassId],
    labels: &[ClassId],
    subset: &[ClassId],
) -> Result<(f64, BTreeMap<ClassId, f64>), EvalError> {
    assert_eq!(predictions.len(), labels.len());
    let mut correct: BTreeMap<ClassId, u64> = subset.iter().map(|&c| (c, 0)).collect();
    let mut counts: BTreeMap<ClassId, u64> = subset.iter().map(|&c| (c, 0)).collect();
    for (&pred, &label) in predictions.iter().zip(labels) {
        if let Some(count) = counts.get_mut(&label) {
            *count += 1;
            if pred == label {
                *correct.get_mut(&label).expect("same keys") += 1;
            }
        }
    }
    let mut per_class = BTreeMap::new();
    let mut sum = 0.0;
    for &class in subset {
        let n = counts[&class];
        if n == 0 {
            return Err(EvalError::ClassWithoutSamples { class });
        }
        let acc = correct[&class] as f64 / n as f64;
        per_class.insert(class, acc);
        sum += acc;
    }
    Ok((sum / subset.len() as f64, per_class))
}

/// Per-class accuracy of a classifier over a flat row-major feature matrix.
pub fn per_class_accuracy(
    clf: &LinearClassifier,
    features: &[f64],
    labels: &[ClassId],
    subset: &[ClassId],
) -> Result<(f64, BTreeMap<ClassId, f64>), EvalError> {
    let dim = clf.feature_dim();
    if features.len() != labels.len() * dim {
        return Err(EvalError::RaggedMatrix {
            got: features.len(),
            dim,
        });
    }
    let mut predictions = Vec::with_capacity(labels.len());
    for row in 0..labels.len() {
        predictions.push(clf.predict(&features[row * dim..(row + 1) * dim])?);
    }
    per_class_accuracy_of_predictions(&predictions, labels, subset)
}

/// Harmonic mean `2ab / (a + b)`, 0 when both accuracies are 0.
pub fn harmonic_mean(acc_seen: f64, acc_unseen: f64) -> Result<f64, EvalError> {
    for v in [acc_seen, acc_unseen] {
        if !(0.0..=1.0).contains(&v) {
            return Err(EvalError::OutOfRange(v));
        }
    }
    if acc_seen + acc_unseen == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * acc_seen * acc_unseen / (acc_seen + acc_unseen))
}

/// Evaluation results: group accuracies, their harmonic mean, per-class
/// accuracy, and the per-class diversity of the synthesized training set.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub acc_seen: f64,
    pub acc_unseen: f64,
    pub acc_harmonic: f64,
    pub per_class: BTreeMap<ClassId, f64>,
    pub diversity: BTreeMap<ClassId, f64>,
    pub config_fingerprint: String,
}

impl EvalReport {
    /// Line-oriented `key=value` rendering.
    pub fn to_key_value_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("format_version={}\n", crate::data::FORMAT_VERSION));
        out.push_str(&format!("acc_seen={:.6}\n", self.acc_seen));
        out.push_str(&format!("acc_unseen={:.6}\n", self.acc_unseen));
        out.push_str(&format!("acc_harmonic={:.6}\n", self.acc_harmonic));
        let mean_div = |keys: &BTreeMap<ClassId, f64>| -> Option<f64> {
            if keys.is_empty() {
                None
            } else {
                Some(keys.values().sum::<f64>() / keys.len() as f64)
            }
        };
        if let Some(v) = mean_div(&self.diversity) {
            out.push_str(&format!("mean_diversity={v:.6}\n"));
        }
        out.push_str(&format!("config_fingerprint={}\n", self.config_fingerprint));
        out
    }

    /// Comma-separated per-class table with a header row.
    pub fn per_class_csv(&self, seen: &[ClassId]) -> String {
        let mut out = String::from("class,group,accuracy,diversity\n");
        for (&class, &acc) in &self.per_class {
            let group = if seen.contains(&class) { "seen" } else { "unseen" };
            match self.diversity.get(&class) {
                Some(d) => out.push_str(&format!("{class},{group},{acc:.6},{d:.6}\n")),
                None => out.push_str(&format!("{class},{group},{acc:.6},\n")),
            }
        }
        out
    }
}

/// Maps every test-split visual feature to the aligned space via the
/// posterior mean (deterministic; no sampling at test time) and scores the
/// classifier with per-class accuracy per group and their harmonic mean.
pub fn evaluate_gzsl(
    clf: &LinearClassifier,
    afg: &AfgModel,
    test_visual: &[f32],
    test_labels: &[ClassId],
    seen_classes: &[ClassId],
    unseen_classes: &[ClassId],
) -> Result<EvalReport, EvalError> {
    let dim = afg.visual_dim();
    if test_visual.len() != test_labels.len() * dim {
        return Err(EvalError::RaggedMatrix {
            got: test_visual.len(),
            dim,
        });
    }
    for &label in test_labels {
        if !clf.classes().contains(&label) {
            return Err(EvalError::UnknownLabel { label });
        }
    }
    let has_seen = test_labels.iter().any(|l| seen_classes.contains(l));
    let has_unseen = test_labels.iter().any(|l| unseen_classes.contains(l));
    if !has_seen {
        return Err(EvalError::MissingGroup { group: "seen" });
    }
    if !has_unseen {
        return Err(EvalError::MissingGroup { group: "unseen" });
    }

    let mut predictions = Vec::with_capacity(test_labels.len());
    for row in 0..test_labels.len() {
        let visual = &test_visual[row * dim..(row + 1) * dim];
        let aligned = afg.encode_visual(visual)?.mean().to_vec();
        predictions.push(clf.predict(&aligned)?);
    }

    let (acc_seen, per_seen) =
        per_class_accuracy_of_predictions(&predictions, test_labels, seen_classes)?;
    let (acc_unseen, per_unseen) =
        per_class_accuracy_of_predictions(&predictions, test_labels, unseen_classes)?;
    let mut per_class = per_seen;
    per_class.extend(per_unseen);

    Ok(EvalReport {
        acc_seen,
        acc_unseen,
        acc_harmonic: harmonic_mean(acc_seen, acc_unseen)?,
        per_class,
        diversity: BTreeMap::new(),
        config_fingerprint: String::new(),
    })
}

/// Which unseen-class generator the pipeline uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthesisRoute {
    /// Conditional-VAE decoding of noise (the full pipeline).
    Dfs,
    /// Direct sampling of the aligned semantic posterior (stage 1 alone).
    Baseline,
}

/// Synthesize, train the classifier, evaluate on the test split, and attach
/// per-class diversity of the synthesized training set.
///
/// With `SynthesisRoute::Baseline` the unseen features come from the
/// baseline generator instead of the conditional VAE; everything else,
/// including all seeds, is identical, making paired comparisons meaningful.
pub fn run_gzsl_pipeline(
    data: &dyn GzslData,
    afg: &AfgModel,
    sfg: &SfgModel,
    plan: &SynthesisPlan,
    clf_config: &ClassifierConfig,
    route: SynthesisRoute,
) -> Result<(EvalReport, SynthesizedSet), EvalError> {
    let seen_set = synthesize_seen(afg, data, plan)?;
    let unseen_set = match route {
        SynthesisRoute::Dfs => synthesize_unseen(afg, sfg, data, plan)?,
        SynthesisRoute::Baseline => synthesize_unseen_baseline(afg, data, plan)?,
    };
    let trainset = build_classifier_trainset(&seen_set, &unseen_set)?;
    let clf = train_linear_classifier(&trainset, clf_config)?;

    let mut test_visual = Vec::new();
    let mut test_labels = Vec::new();
    for i in 0..data.num_samples() {
        if data.split(i) == Split::Test {
            test_visual.extend_from_slice(data.visual(i));
            test_labels.push(data.label(i));
        }
    }
    let mut report = evaluate_gzsl(
        &clf,
        afg,
        &test_visual,
        &test_labels,
        data.seen_classes(),
        data.unseen_classes(),
    )?;
    report.diversity = diversity_score(&trainset)?;
    Ok((report, trainset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::Provenance;

    /// Two well-separated Gaussian blobs in 8 dimensions.
    fn separable_blobs(per_class: usize, seed: u64) -> SynthesizedSet {
        let dim = 8;
        let mut rng = RngStream::new(seed);
        let mut set = SynthesizedSet::new(dim);
        for class in 0..2usize {
            // Means at ±2.5 per coordinate, unit noise: 5-sigma margin.
            let center = if class == 0 { -2.5 } else { 2.5 };
            for _ in 0..per_class {
                let row: Vec<f64> = (0..dim)
                    .map(|_| center + rng.standard_normal() * 0.5)
                    .collect();
                set.push_row(&row, class, Provenance::SeenPosterior);
            }
        }
        set
    }

    #[test]
    fn separable_blobs_reach_perfect_training_accuracy() {
        let set = separable_blobs(100, 7);
        let clf = train_linear_classifier(&set, &ClassifierConfig::default()).unwrap();
        let features: Vec<f64> = set.features_flat().iter().map(|&v| v as f64).collect();
        let (mean, _) = per_class_accuracy(&clf, &features, set.labels(), &[0, 1]).unwrap();
        assert_eq!(mean, 1.0);
    }

    #[test]
    fn zero_epochs_returns_initialization_and_is_deterministic() {
        let set = separable_blobs(10, 3);
        let config = ClassifierConfig {
            epochs: 0,
            ..Default::default()
        };
        let a = train_linear_classifier(&set, &config).unwrap();
        let b = train_linear_classifier(&set, &config).unwrap();
        assert_eq!(a.params(), b.params());

        let trained = train_linear_classifier(&set, &ClassifierConfig::default()).unwrap();
        let trained2 = train_linear_classifier(&set, &ClassifierConfig::default()).unwrap();
        assert_eq!(trained.params(), trained2.params());
    }

    #[test]
    fn single_class_trainset_is_rejected() {
        let mut set = SynthesizedSet::new(2);
        set.push_row(&[0.0, 1.0], 3, Provenance::SeenPosterior);
        set.push_row(&[1.0, 0.0], 3, Provenance::SeenPosterior);
        assert!(matches!(
            train_linear_classifier(&set, &ClassifierConfig::default()),
            Err(EvalError::SingleClass(1))
        ));
    }

    #[test]
    fn per_class_accuracy_is_count_independent() {
        // Class 0: 2 of 4 correct (0.5); class 1: 1 of 1 correct (1.0).
        let predictions = vec![0, 0, 1, 1, 1];
        let labels = vec![0, 0, 0, 0, 1];
        let (mean, per_class) =
            per_class_accuracy_of_predictions(&predictions, &labels, &[0, 1]).unwrap();
        assert_eq!(per_class[&0], 0.5);
        assert_eq!(per_class[&1], 1.0);
        assert_eq!(mean, 0.75);
    }

    #[test]
    fn perfect_and_constant_predictors() {
        let labels = vec![0, 1, 2, 0, 1, 2];
        let (mean, _) =
            per_class_accuracy_of_predictions(&labels.clone(), &labels, &[0, 1, 2]).unwrap();
        assert_eq!(mean, 1.0);

        let constant = vec![1; 6];
        let (_, per_class) =
            per_class_accuracy_of_predictions(&constant, &labels, &[0, 1, 2]).unwrap();
        assert_eq!(per_class[&1], 1.0);
        assert_eq!(per_class[&0], 0.0);
        assert_eq!(per_class[&2], 0.0);
    }

    #[test]
    fn per_class_accuracy_rejects_empty_class() {
        let err =
            per_class_accuracy_of_predictions(&[0], &[0], &[0, 9]).unwrap_err();
        assert!(matches!(err, EvalError::ClassWithoutSamples { class: 9 }));
    }

    #[test]
    fn duplication_invariance() {
        // Duplicating one class's samples k-fold must not move the mean.
        let predictions = vec![0, 1, 1, 2];
        let labels = vec![0, 1, 0, 2];
        let (mean, _) =
            per_class_accuracy_of_predictions(&predictions, &labels, &[0, 1, 2]).unwrap();
        let k = 7;
        let mut dup_preds = predictions.clone();
        let mut dup_labels = labels.clone();
        for _ in 1..k {
            // Duplicate class 0's rows.
            for (p, l) in predictions.iter().zip(&labels) {
                if *l == 0 {
                    dup_preds.push(*p);
                    dup_labels.push(*l);
                }
            }
        }
        let (dup_mean, _) =
            per_class_accuracy_of_predictions(&dup_preds, &dup_labels, &[0, 1, 2]).unwrap();
        assert!((mean - dup_mean).abs() <= 1e-12);
    }

    #[test]
    fn harmonic_mean_table_row_and_identities() {
        let h = harmonic_mean(0.750, 0.558).unwrap();
        assert!((h - 2.0 * 0.750 * 0.558 / (0.750 + 0.558)).abs() < 1e-15);
        assert!((h - 0.639).abs() < 1e-3);

        for x in [0.0, 0.25, 0.5, 1.0] {
            assert!((harmonic_mean(x, x).unwrap() - x).abs() < 1e-15);
            assert_eq!(harmonic_mean(x, 0.0).unwrap(), 0.0);
        }
        assert!(harmonic_mean(1.2, 0.5).is_err());
        assert!(harmonic_mean(0.5, -0.1).is_err());
    }

    #[test]
    fn argmax_ties_break_to_lowest_class_id() {
        // Zero classifier: all logits equal; prediction must be class 0.
        let net = MlpNet::from_parts(&[2, 3], &[(vec![0.0; 6], vec![0.0; 3])]).unwrap();
        let clf = LinearClassifier {
            net,
            classes: vec![0, 4, 9],
        };
        assert_eq!(clf.predict(&[1.0, -1.0]).unwrap(), 0);
    }
}
