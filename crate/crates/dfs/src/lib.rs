//! Diverse feature synthesis for generalized zero-shot learning.
//!
//! The pipeline recognizes classes that have no visual training samples by
//! synthesizing features for them and training an ordinary classifier on the
//! mix. It runs in three stages:
//!
//! 1. **Aligned feature generator** ([`afg`]): a pair of VAEs embeds per-class
//!    semantic vectors and per-sample visual features into one shared latent
//!    space, tied together by a distribution-alignment penalty (the
//!    2-Wasserstein distance between the two posteriors) and a
//!    cross-reconstruction penalty (each modality decoded from the other's
//!    latent code).
//! 2. **Synthetic feature generator** ([`sfg`]): a conditional VAE trained on
//!    aligned features of seen classes. At inference its decoder turns
//!    Gaussian noise plus an aligned class embedding into diverse aligned
//!    features for unseen classes.
//! 3. **Classifier and metrics** ([`synthesis`], [`eval`]): a linear softmax
//!    classifier is trained on synthesized features of both groups and scored
//!    with per-class accuracy and the harmonic mean over seen/unseen groups.
//!
//! All randomness flows through seeded [`nn::RngStream`]s, so training,
//! synthesis, and evaluation are bitwise reproducible. [`data`] provides a
//! bit-exact feature file format and a synthetic benchmark generator that
//! exercises the full pipeline in seconds.

pub mod afg;
pub mod cli;
pub mod data;
pub mod eval;
pub mod gradsuite;
pub mod losses;
pub mod nn;
pub mod sfg;
pub mod synthesis;

pub use afg::{train_afg, AfgConfig, AfgModel, TrainError};
pub use data::{
    generate_synthetic_benchmark, load_dataset, save_dataset, ClassId, DataError, FeatureDataset,
    GzslData, Split, SyntheticBenchmarkSpec,
};
pub use eval::{
    evaluate_gzsl, harmonic_mean, per_class_accuracy, train_linear_classifier, ClassifierConfig,
    EvalError, EvalReport, LinearClassifier,
};
pub use losses::{
    afg_loss, cross_reconstruction_loss, cvae_loss, distribution_alignment_loss,
    kl_to_standard_normal, l1_distance, vae_loss, AfgLossWeights, LossBreakdown, LossError,
    WeightSchedule,
};
pub use nn::{
    grad_check, reparameterize, AdamState, GaussianParams, GradCheckReport, MlpGrads, MlpNet,
    MlpTrace, NnError, RngStream,
};
pub use sfg::{train_sfg, ConditionMode, SfgConfig, SfgModel};
pub use synthesis::{
    build_classifier_trainset, diversity_score, synthesize_seen, synthesize_unseen,
    synthesize_unseen_baseline, Provenance, SynthesisError, SynthesisPlan, SynthesizedSet,
};
