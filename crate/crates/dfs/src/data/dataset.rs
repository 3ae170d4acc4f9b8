//! The validated GZSL dataset container and its on-disk form.

use std::path::Path;

use super::format::{read_blob_f32, write_blob_f32, Manifest};
use super::DataError;
use crate::synthesis::SynthesizedSet;

/// Class identifier; also the row index into the semantic matrix.
pub type ClassId = usize;

/// Per-sample split assignment. Training must only ever touch `Train`
/// samples; evaluation uses `Test`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Read-only access to a GZSL dataset.
///
/// Trainers and synthesizers take `&dyn GzslData` instead of the concrete
/// container so tests can interpose access-logging doubles and prove that
/// unseen visual features are never read.
pub trait GzslData {
    fn num_samples(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn visual_dim(&self) -> usize;
    fn semantic_dim(&self) -> usize;
    /// Visual feature row of one sample.
    fn visual(&self, sample: usize) -> &[f32];
    fn label(&self, sample: usize) -> ClassId;
    fn split(&self, sample: usize) -> Split;
    /// Semantic embedding row of one class.
    fn semantic(&self, class: ClassId) -> &[f32];
    /// Ascending ids of classes with visual training data.
    fn seen_classes(&self) -> &[ClassId];
    /// Ascending ids of classes known only through semantic embeddings.
    fn unseen_classes(&self) -> &[ClassId];
}

/// Indices of all `Train` samples.
pub(crate) fn train_indices(data: &dyn GzslData) -> Vec<usize> {
    (0..data.num_samples())
        .filter(|&i| data.split(i) == Split::Train)
        .collect()
}

/// Indices of `Train` samples belonging to one class.
pub(crate) fn train_indices_of_class(data: &dyn GzslData, class: ClassId) -> Vec<usize> {
    (0..data.num_samples())
        .filter(|&i| data.split(i) == Split::Train && data.label(i) == class)
        .collect()
}

/// A visual feature matrix with labels, per-class semantic embeddings, a
/// seen/unseen class partition, and a train/test split.
#[derive(Debug, Clone)]
pub struct FeatureDataset {
    visual: Vec<f32>,
    visual_dim: usize,
    labels: Vec<ClassId>,
    semantic: Vec<f32>,
    semantic_dim: usize,
    seen: Vec<ClassId>,
    unseen: Vec<ClassId>,
    split: Vec<Split>,
}

impl FeatureDataset {
    /// Builds and validates a dataset. Every invariant violation maps to a
    /// distinct [`DataError`] variant.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        visual: Vec<f32>,
        visual_dim: usize,
        labels: Vec<ClassId>,
        semantic: Vec<f32>,
        semantic_dim: usize,
        seen: Vec<ClassId>,
        unseen: Vec<ClassId>,
        split: Vec<Split>,
    ) -> Result<Self, DataError> {
        if visual_dim == 0 || semantic_dim == 0 {
            return Err(DataError::InvalidSpec(
                "feature dimensions must be positive".into(),
            ));
        }
        if visual.len() % visual_dim != 0 {
            return Err(DataError::ShapeMismatch {
                what: "visual matrix".into(),
                expected: (visual.len() / visual_dim) * visual_dim,
                got: visual.len(),
            });
        }
        let n = visual.len() / visual_dim;
        if labels.len() != n {
            return Err(DataError::ShapeMismatch {
                what: "labels".into(),
                expected: n,
                got: labels.len(),
            });
        }
        if split.len() != n {
            return Err(DataError::ShapeMismatch {
                what: "split".into(),
                expected: n,
                got: split.len(),
            });
        }
        if semantic.len() % semantic_dim != 0 {
            return Err(DataError::ShapeMismatch {
                what: "semantic matrix".into(),
                expected: (semantic.len() / semantic_dim) * semantic_dim,
                got: semantic.len(),
            });
        }
        let num_classes = semantic.len() / semantic_dim;

        let mut seen = seen;
        let mut unseen = unseen;
        seen.sort_unstable();
        seen.dedup();
        unseen.sort_unstable();
        unseen.dedup();
        if let Some(&c) = seen.iter().find(|c| unseen.contains(c)) {
            return Err(DataError::OverlappingClassSets { class: c });
        }
        for class in 0..num_classes {
            if !seen.contains(&class) && !unseen.contains(&class) {
                return Err(DataError::UnassignedClass { class });
            }
        }
        if let Some(&c) = seen.iter().chain(unseen.iter()).find(|&&c| c >= num_classes) {
            return Err(DataError::LabelOutOfRange {
                sample: usize::MAX,
                label: c,
            });
        }

        for (i, &label) in labels.iter().enumerate() {
            if label >= num_classes {
                return Err(DataError::LabelOutOfRange { sample: i, label });
            }
            // Inductive setting: no unseen-class sample may be marked Train.
            if split[i] == Split::Train && unseen.contains(&label) {
                return Err(DataError::TrainLeakage { sample: i, label });
            }
        }

        if let Some(idx) = visual.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFiniteValue {
                what: "visual matrix".into(),
                index: idx,
            });
        }
        if let Some(idx) = semantic.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFiniteValue {
                what: "semantic matrix".into(),
                index: idx,
            });
        }

        Ok(Self {
            visual,
            visual_dim,
            labels,
            semantic,
            semantic_dim,
            seen,
            unseen,
            split,
        })
    }

    /// Indices of all test-split samples.
    pub fn test_indices(&self) -> Vec<usize> {
        (0..self.num_samples())
            .filter(|&i| self.split[i] == Split::Test)
            .collect()
    }
}

impl GzslData for FeatureDataset {
    fn num_samples(&self) -> usize {
        self.labels.len()
    }

    fn num_classes(&self) -> usize {
        self.semantic.len() / self.semantic_dim
    }

    fn visual_dim(&self) -> usize {
        self.visual_dim
    }

    fn semantic_dim(&self) -> usize {
        self.semantic_dim
    }

    fn visual(&self, sample: usize) -> &[f32] {
        let start = sample * self.visual_dim;
        &self.visual[start..start + self.visual_dim]
    }

    fn label(&self, sample: usize) -> ClassId {
        self.labels[sample]
    }

    fn split(&self, sample: usize) -> Split {
        self.split[sample]
    }

    fn semantic(&self, class: ClassId) -> &[f32] {
        let start = class * self.semantic_dim;
        &self.semantic[start..start + self.semantic_dim]
    }

    fn seen_classes(&self) -> &[ClassId] {
        &self.seen
    }

    fn unseen_classes(&self) -> &[ClassId] {
        &self.unseen
    }
}

const BLOBS: [&str; 6] = ["visual", "semantic", "labels", "split", "seen", "unseen"];

/// Writes the manifest and one blob per matrix next to `manifest_path`.
pub fn save_dataset(dataset: &FeatureDataset, manifest_path: &Path) -> Result<(), DataError> {
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| DataError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let n = dataset.num_samples();
    let mut m = Manifest::new("dataset");
    m.push("samples", n.to_string());
    m.push("classes", dataset.num_classes().to_string());
    m.push("visual_dim", dataset.visual_dim.to_string());
    m.push("semantic_dim", dataset.semantic_dim.to_string());
    m.push("seen_count", dataset.seen.len().to_string());
    m.push("unseen_count", dataset.unseen.len().to_string());
    for name in BLOBS {
        m.push(&format!("{name}_blob"), format!("{name}.bin"));
    }
    m.write(manifest_path)?;

    write_blob_f32(&dir.join("visual.bin"), &dataset.visual)?;
    write_blob_f32(&dir.join("semantic.bin"), &dataset.semantic)?;
    let labels: Vec<f32> = dataset.labels.iter().map(|&l| l as f32).collect();
    write_blob_f32(&dir.join("labels.bin"), &labels)?;
    let split: Vec<f32> = dataset
        .split
        .iter()
        .map(|s| match s {
            Split::Train => 0.0,
            Split::Test => 1.0,
        })
        .collect();
    write_blob_f32(&dir.join("split.bin"), &split)?;
    let seen: Vec<f32> = dataset.seen.iter().map(|&c| c as f32).collect();
    write_blob_f32(&dir.join("seen.bin"), &seen)?;
    let unseen: Vec<f32> = dataset.unseen.iter().map(|&c| c as f32).collect();
    write_blob_f32(&dir.join("unseen.bin"), &unseen)?;
    Ok(())
}

fn class_list_from_blob(values: &[f32], what: &str) -> Result<Vec<ClassId>, DataError> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
                Err(DataError::NonFiniteValue {
                    what: what.to_string(),
                    index: i,
                })
            } else {
                Ok(v as ClassId)
            }
        })
        .collect()
}

/// Loads and validates a dataset; blobs are resolved relative to the
/// manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<FeatureDataset, DataError> {
    let m = Manifest::read(manifest_path)?;
    m.expect_kind("dataset")?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let n = m.get_usize("samples")?;
    let classes = m.get_usize("classes")?;
    let visual_dim = m.get_usize("visual_dim")?;
    let semantic_dim = m.get_usize("semantic_dim")?;
    let seen_count = m.get_usize("seen_count")?;
    let unseen_count = m.get_usize("unseen_count")?;

    let blob = |name: &str, len: usize| -> Result<Vec<f32>, DataError> {
        let file = m.get(&format!("{name}_blob"))?;
        read_blob_f32(&dir.join(file), len)
    };
    let visual = blob("visual", n * visual_dim)?;
    let semantic = blob("semantic", classes * semantic_dim)?;
    let labels_raw = blob("labels", n)?;
    let split_raw = blob("split", n)?;
    let seen = class_list_from_blob(&blob("seen", seen_count)?, "seen ids")?;
    let unseen = class_list_from_blob(&blob("unseen", unseen_count)?, "unseen ids")?;

    let labels = class_list_from_blob(&labels_raw, "labels")?;
    let split = split_raw
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v == 0.0 {
                Ok(Split::Train)
            } else if v == 1.0 {
                Ok(Split::Test)
            } else {
                Err(DataError::NonFiniteValue {
                    what: "split flags".into(),
                    index: i,
                })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;

    FeatureDataset::new(
        visual,
        visual_dim,
        labels,
        semantic,
        semantic_dim,
        seen,
        unseen,
        split,
    )
}

/// Exports a synthesized set in the dataset blob format with an extra
/// provenance blob (0 = seen posterior sample, 1 = decoded unseen sample).
pub fn save_synthesized_set(set: &SynthesizedSet, manifest_path: &Path) -> Result<(), DataError> {
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| DataError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    let mut m = Manifest::new("synthesized");
    m.push("samples", set.rows().to_string());
    m.push("feature_dim", set.dim().to_string());
    m.push("features_blob", "features.bin");
    m.push("labels_blob", "labels.bin");
    m.push("provenance_blob", "provenance.bin");
    m.write(manifest_path)?;
    write_blob_f32(&dir.join("features.bin"), set.features_flat())?;
    let labels: Vec<f32> = set.labels().iter().map(|&l| l as f32).collect();
    write_blob_f32(&dir.join("labels.bin"), &labels)?;
    let provenance: Vec<f32> = set
        .provenance()
        .iter()
        .map(|p| match p {
            crate::synthesis::Provenance::SeenPosterior => 0.0,
            crate::synthesis::Provenance::UnseenDecoded => 1.0,
        })
        .collect();
    write_blob_f32(&dir.join("provenance.bin"), &provenance)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_dataset() -> FeatureDataset {
        // 1 seen class (0), 1 unseen class (1), 2 samples.
        FeatureDataset::new(
            vec![0.1, 0.2, 0.3, 0.4],
            2,
            vec![0, 1],
            vec![1.0, 0.0, 0.0, 1.0],
            2,
            vec![0],
            vec![1],
            vec![Split::Train, Split::Test],
        )
        .unwrap()
    }

    #[test]
    fn minimal_dataset_loads_and_validates() {
        let ds = minimal_dataset();
        assert_eq!(ds.num_samples(), 2);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.seen_classes(), &[0]);
        assert_eq!(ds.unseen_classes(), &[1]);
        assert_eq!(ds.visual(1), &[0.3, 0.4]);
        assert_eq!(ds.semantic(1), &[0.0, 1.0]);
    }

    #[test]
    fn train_sample_with_unseen_label_is_rejected() {
        let err = FeatureDataset::new(
            vec![0.1, 0.2, 0.3, 0.4],
            2,
            vec![0, 1],
            vec![1.0, 0.0, 0.0, 1.0],
            2,
            vec![0],
            vec![1],
            vec![Split::Train, Split::Train],
        )
        .unwrap_err();
        assert!(matches!(
            err,
            DataError::TrainLeakage {
                sample: 1,
                label: 1
            }
        ));
    }

    #[test]
    fn overlapping_class_sets_are_rejected() {
        let err = FeatureDataset::new(
            vec![0.0; 4],
            2,
            vec![0, 0],
            vec![0.0; 4],
            2,
            vec![0, 1],
            vec![1],
            vec![Split::Train, Split::Test],
        )
        .unwrap_err();
        assert!(matches!(err, DataError::OverlappingClassSets { class: 1 }));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let err = FeatureDataset::new(
            vec![0.0, f32::NAN, 0.0, 0.0],
            2,
            vec![0, 0],
            vec![0.0; 4],
            2,
            vec![0],
            vec![1],
            vec![Split::Train, Split::Test],
        )
        .unwrap_err();
        assert!(matches!(err, DataError::NonFiniteValue { index: 1, .. }));
    }

    #[test]
    fn save_load_round_trip_is_bitwise() {
        let ds = minimal_dataset();
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("dataset.manifest");
        save_dataset(&ds, &manifest).unwrap();
        let back = load_dataset(&manifest).unwrap();
        assert_eq!(ds.visual, back.visual);
        assert_eq!(ds.semantic, back.semantic);
        assert_eq!(ds.labels, back.labels);
        assert_eq!(ds.split, back.split);
        assert_eq!(ds.seen, back.seen);
        assert_eq!(ds.unseen, back.unseen);
    }

    #[test]
    fn loader_rejects_leaky_manifest() {
        // Hand-craft files where a train sample carries the unseen label.
        let dir = tempfile::tempdir().unwrap();
        let ds = minimal_dataset();
        let manifest = dir.path().join("dataset.manifest");
        save_dataset(&ds, &manifest).unwrap();
        // Flip the test sample (unseen label) to the train split on disk.
        write_blob_f32(&dir.path().join("split.bin"), &[0.0, 0.0]).unwrap();
        let err = load_dataset(&manifest).unwrap_err();
        assert!(matches!(err, DataError::TrainLeakage { .. }));
    }
}
