//! Command-line surface: `bench`, `train`, `eval`, and `gradcheck`.
//!
//! Every command is reproducible: the same flags and seed produce
//! byte-identical output files. Exit codes: 0 success, 2 data/validation
//! error, 3 numeric failure, 4 usage error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::afg::{train_afg, AfgConfig, TrainError};
use crate::data::{
    fingerprint64, generate_synthetic_benchmark, load_checkpoint, load_dataset, save_checkpoint,
    save_dataset, save_synthesized_set, DataError, FeatureDataset, GzslData,
    SyntheticBenchmarkSpec,
};
use crate::eval::{
    run_gzsl_pipeline, ClassifierConfig, EvalError, EvalReport, SynthesisRoute,
};
use crate::losses::{AfgLossWeights, LossBreakdown, LossError, WeightSchedule};
use crate::nn::NnError;
use crate::sfg::{train_sfg, ConditionMode, SfgConfig};
use crate::synthesis::{SynthesisError, SynthesisPlan};

const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_USAGE: u8 = 4;

#[derive(Debug)]
enum CliFailure {
    Data(String),
    Numeric(String),
    Usage(String),
}

impl CliFailure {
    fn code(&self) -> u8 {
        match self {
            CliFailure::Data(_) => EXIT_DATA,
            CliFailure::Numeric(_) => EXIT_NUMERIC,
            CliFailure::Usage(_) => EXIT_USAGE,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliFailure::Data(m) | CliFailure::Numeric(m) | CliFailure::Usage(m) => m,
        }
    }
}

impl From<DataError> for CliFailure {
    fn from(e: DataError) -> Self {
        CliFailure::Data(e.to_string())
    }
}

impl From<TrainError> for CliFailure {
    fn from(e: TrainError) -> Self {
        match &e {
            TrainError::NonFiniteLoss { .. } => CliFailure::Numeric(e.to_string()),
            TrainError::Nn(NnError::NonFiniteGradient { .. }) => {
                CliFailure::Numeric(e.to_string())
            }
            _ => CliFailure::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliFailure {
    fn from(e: EvalError) -> Self {
        match &e {
            EvalError::Nn(NnError::NonFiniteGradient { .. })
            | EvalError::Nn(NnError::NonFinite { .. }) => CliFailure::Numeric(e.to_string()),
            EvalError::Train(TrainError::NonFiniteLoss { .. }) => {
                CliFailure::Numeric(e.to_string())
            }
            _ => CliFailure::Data(e.to_string()),
        }
    }
}

impl From<SynthesisError> for CliFailure {
    fn from(e: SynthesisError) -> Self {
        CliFailure::Data(e.to_string())
    }
}

impl From<LossError> for CliFailure {
    fn from(e: LossError) -> Self {
        CliFailure::Usage(e.to_string())
    }
}

impl From<std::io::Error> for CliFailure {
    fn from(e: std::io::Error) -> Self {
        CliFailure::Data(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "dfs",
    about = "Diverse feature synthesis for generalized zero-shot learning",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic benchmark dataset on disk.
    Bench(BenchArgs),
    /// Train both generator stages and write a checkpoint.
    Train(TrainArgs),
    /// Synthesize features, train the classifier, and write reports.
    Eval(EvalArgs),
    /// Verify analytic gradients of every loss against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Output directory for the manifest and blobs.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    classes_seen: usize,
    #[arg(long, default_value_t = 4)]
    classes_unseen: usize,
    #[arg(long, default_value_t = 32)]
    visual_dim: usize,
    #[arg(long, default_value_t = 12)]
    semantic_dim: usize,
    #[arg(long, default_value_t = 60)]
    samples_per_class: usize,
    /// Standard deviation of samples around their class mean.
    #[arg(long, default_value_t = 0.6)]
    within_class_scale: f64,
    /// Noise on the semantic-to-visual class-mean map.
    #[arg(long, default_value_t = 0.15)]
    semantic_map_noise: f64,
    /// Fraction of each seen class placed in the train split.
    #[arg(long, default_value_t = 0.75)]
    train_fraction: f64,
}

impl BenchArgs {
    fn spec(&self) -> SyntheticBenchmarkSpec {
        SyntheticBenchmarkSpec {
            seen_classes: self.classes_seen,
            unseen_classes: self.classes_unseen,
            visual_dim: self.visual_dim,
            semantic_dim: self.semantic_dim,
            samples_per_class: self.samples_per_class,
            within_class_scale: self.within_class_scale,
            semantic_map_noise: self.semantic_map_noise,
            train_fraction: self.train_fraction,
            seed: self.seed,
        }
    }
}

#[derive(Args, Debug)]
struct DataSource {
    /// Path to a dataset manifest.
    #[arg(long, conflicts_with = "bench")]
    dataset: Option<PathBuf>,
    /// Use the default synthetic benchmark (in memory).
    #[arg(long)]
    bench: bool,
    /// Seed for the in-memory benchmark.
    #[arg(long, default_value_t = 0)]
    bench_seed: u64,
}

impl DataSource {
    fn load(&self) -> Result<(FeatureDataset, bool), CliFailure> {
        match (&self.dataset, self.bench) {
            (Some(path), false) => Ok((load_dataset(path)?, false)),
            (None, true) => {
                let spec = SyntheticBenchmarkSpec {
                    seed: self.bench_seed,
                    ..Default::default()
                };
                Ok((generate_synthetic_benchmark(&spec)?, true))
            }
            _ => Err(CliFailure::Usage(
                "exactly one of --dataset or --bench must be given".into(),
            )),
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataSource,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Aligned-space dimension (default: 16 for --bench, 256 for --dataset).
    #[arg(long)]
    aligned_dim: Option<usize>,
    /// Conditional-VAE latent dimension (default: aligned dimension).
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long, default_value_t = 100)]
    epochs_afg: u32,
    #[arg(long, default_value_t = 100)]
    epochs_sfg: u32,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// KL weight of the stage-1 VAE terms.
    #[arg(long, default_value_t = 0.5)]
    kl_weight: f64,
    /// Distribution-alignment weight.
    #[arg(long, default_value_t = 5.0)]
    align_weight: f64,
    /// Cross-reconstruction weight.
    #[arg(long, default_value_t = 2.0)]
    cross_weight: f64,
    /// KL weight of the stage-2 conditional VAE.
    #[arg(long, default_value_t = 0.6)]
    sfg_kl_weight: f64,
    /// Linear warm-up for the stage-1 KL weight, as `start:end` epochs.
    #[arg(long)]
    kl_warmup: Option<String>,
    #[arg(long)]
    align_warmup: Option<String>,
    #[arg(long)]
    cross_warmup: Option<String>,
    /// Condition used by the stage-2 generator.
    #[arg(long, default_value = "mean", value_parser = ["raw", "sampled", "mean"])]
    condition: String,
    /// Hidden width for all four stage-1 networks (default: preset).
    #[arg(long)]
    hidden_afg: Option<usize>,
    /// Hidden width for the stage-2 networks (default: preset).
    #[arg(long)]
    hidden_sfg: Option<usize>,
}

fn parse_warmup(
    target: f64,
    warmup: &Option<String>,
) -> Result<WeightSchedule, CliFailure> {
    match warmup {
        None => Ok(WeightSchedule::constant(target)?),
        Some(text) => {
            let (start, end) = text.split_once(':').ok_or_else(|| {
                CliFailure::Usage(format!("warm-up must be `start:end`, got `{text}`"))
            })?;
            let start: u32 = start
                .parse()
                .map_err(|_| CliFailure::Usage(format!("bad warm-up start `{start}`")))?;
            let end: u32 = end
                .parse()
                .map_err(|_| CliFailure::Usage(format!("bad warm-up end `{end}`")))?;
            Ok(WeightSchedule::warmup(target, start, end)?)
        }
    }
}

struct ResolvedTrain {
    afg: AfgConfig,
    sfg: SfgConfig,
}

impl TrainArgs {
    fn resolve(&self, bench_mode: bool) -> Result<ResolvedTrain, CliFailure> {
        let mut afg = if bench_mode {
            AfgConfig::desk_scale()
        } else {
            AfgConfig::paper_scale()
        };
        let mut sfg = if bench_mode {
            SfgConfig::desk_scale()
        } else {
            SfgConfig::paper_scale()
        };
        if let Some(d) = self.aligned_dim {
            afg.aligned_dim = d;
        }
        if let Some(width) = self.hidden_afg {
            afg.encoder_semantic_hidden = vec![width];
            afg.decoder_semantic_hidden = vec![width];
            afg.encoder_visual_hidden = vec![width];
            afg.decoder_visual_hidden = vec![width];
        }
        if let Some(width) = self.hidden_sfg {
            sfg.encoder_hidden = vec![width];
            sfg.decoder_hidden = vec![width];
        }
        afg.epochs = self.epochs_afg;
        sfg.epochs = self.epochs_sfg;
        if let Some(b) = self.batch_size {
            afg.batch_size = b;
            sfg.batch_size = b;
        }
        if let Some(lr) = self.lr {
            afg.learning_rate = lr;
            sfg.learning_rate = lr;
        }
        afg.weights = AfgLossWeights {
            kl: parse_warmup(self.kl_weight, &self.kl_warmup)?,
            alignment: parse_warmup(self.align_weight, &self.align_warmup)?,
            cross: parse_warmup(self.cross_weight, &self.cross_warmup)?,
        };
        afg.seed = self.seed;
        sfg.seed = self.seed;
        sfg.latent_dim = self.latent_dim;
        sfg.kl_weight = self.sfg_kl_weight;
        sfg.condition_mode = ConditionMode::parse(&self.condition)
            .ok_or_else(|| CliFailure::Usage(format!("bad condition `{}`", self.condition)))?;
        Ok(ResolvedTrain { afg, sfg })
    }

    fn canonical_text(&self, resolved: &ResolvedTrain) -> String {
        format!(
            "seed={} afg={:?} sfg={:?}",
            self.seed, resolved.afg, resolved.sfg
        )
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataSource,
    #[arg(long)]
    out_dir: PathBuf,
    /// Seed for synthesis and classifier training.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Synthesized features per seen class.
    #[arg(long, default_value_t = 200)]
    seen_count: usize,
    /// Synthesized features per unseen class.
    #[arg(long, default_value_t = 400)]
    unseen_count: usize,
    #[arg(long, default_value_t = 200)]
    clf_epochs: u32,
    #[arg(long, default_value_t = 1e-3)]
    clf_lr: f64,
    #[arg(long, default_value_t = 128)]
    clf_batch: usize,
    /// Also run the baseline generator with identical seeds and write a
    /// paired report.
    #[arg(long)]
    compare_baseline: bool,
    /// Test-only shortcut: score the true labels as predictions.
    #[arg(long)]
    oracle_labels: bool,
    /// Export the synthesized classifier training set.
    #[arg(long)]
    export_synthesized: bool,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Harness self-test: flip one analytic gradient sign and expect a
    /// failure.
    #[arg(long, hide = true)]
    inject_sign_flip: bool,
}

/// Parses arguments and runs one command, mapping failures to exit codes.
pub fn run() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Bench(args) => cmd_bench(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Gradcheck(args) => cmd_gradcheck(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}

fn cmd_bench(args: &BenchArgs) -> Result<(), CliFailure> {
    let dataset = generate_synthetic_benchmark(&args.spec())?;
    let manifest = args.out_dir.join("dataset.manifest");
    save_dataset(&dataset, &manifest)?;
    println!(
        "wrote {} ({} samples, {} seen / {} unseen classes)",
        manifest.display(),
        dataset.num_samples(),
        dataset.seen_classes().len(),
        dataset.unseen_classes().len()
    );
    Ok(())
}

fn loss_history_csv(afg: &[LossBreakdown], sfg: &[LossBreakdown]) -> String {
    let mut out = String::from(
        "stage,epoch,total,reconstruction,kl,alignment,cross,kl_weight,alignment_weight,cross_weight\n",
    );
    for (stage, history) in [("afg", afg), ("sfg", sfg)] {
        for (epoch, b) in history.iter().enumerate() {
            let _ = writeln!(
                out,
                "{stage},{epoch},{},{},{},{},{},{},{},{}",
                b.total,
                b.reconstruction,
                b.kl,
                b.alignment,
                b.cross,
                b.kl_weight,
                b.alignment_weight,
                b.cross_weight
            );
        }
    }
    out
}

fn cmd_train(args: &TrainArgs) -> Result<(), CliFailure> {
    let (dataset, bench_mode) = args.data.load()?;
    let resolved = args.resolve(bench_mode)?;
    std::fs::create_dir_all(&args.out_dir)?;

    let afg = train_afg(&dataset, &resolved.afg)?;
    let sfg = train_sfg(&dataset, &afg, &resolved.sfg)?;

    let fingerprint = fingerprint64(&args.canonical_text(&resolved));
    let checkpoint = args.out_dir.join("checkpoint.manifest");
    save_checkpoint(&afg, &sfg, &fingerprint, &checkpoint)?;
    let history = loss_history_csv(afg.history(), sfg.history());
    std::fs::write(args.out_dir.join("loss_history.csv"), history)?;
    println!(
        "wrote {} (stage-1 {} epochs, stage-2 {} epochs, fingerprint {})",
        checkpoint.display(),
        afg.history().len(),
        sfg.history().len(),
        fingerprint
    );
    Ok(())
}

fn oracle_report(dataset: &FeatureDataset) -> Result<EvalReport, CliFailure> {
    let test = dataset.test_indices();
    let labels: Vec<_> = test.iter().map(|&i| dataset.label(i)).collect();
    let (acc_seen, per_seen) = crate::eval::per_class_accuracy_of_predictions(
        &labels,
        &labels,
        dataset.seen_classes(),
    )?;
    let (acc_unseen, per_unseen) = crate::eval::per_class_accuracy_of_predictions(
        &labels,
        &labels,
        dataset.unseen_classes(),
    )?;
    let mut per_class = per_seen;
    per_class.extend(per_unseen);
    Ok(EvalReport {
        acc_seen,
        acc_unseen,
        acc_harmonic: crate::eval::harmonic_mean(acc_seen, acc_unseen)?,
        per_class,
        diversity: Default::default(),
        config_fingerprint: "oracle".into(),
    })
}

fn write_report(
    out_dir: &Path,
    stem: &str,
    report: &EvalReport,
    dataset: &FeatureDataset,
) -> Result<(), CliFailure> {
    std::fs::write(
        out_dir.join(format!("{stem}.txt")),
        report.to_key_value_text(),
    )?;
    std::fs::write(
        out_dir.join(format!("per_class_{stem}.csv")),
        report.per_class_csv(dataset.seen_classes()),
    )?;
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliFailure> {
    let (dataset, _) = args.data.load()?;
    std::fs::create_dir_all(&args.out_dir)?;

    if args.oracle_labels {
        let report = oracle_report(&dataset)?;
        write_report(&args.out_dir, "report", &report, &dataset)?;
        println!(
            "oracle: acc_seen={:.4} acc_unseen={:.4} acc_harmonic={:.4}",
            report.acc_seen, report.acc_unseen, report.acc_harmonic
        );
        return Ok(());
    }

    let checkpoint = load_checkpoint(&args.checkpoint)?;
    if checkpoint.afg.visual_dim() != dataset.visual_dim()
        || checkpoint.afg.semantic_dim() != dataset.semantic_dim()
    {
        return Err(CliFailure::Data(format!(
            "checkpoint expects {}d visual / {}d semantic, dataset has {}d / {}d",
            checkpoint.afg.visual_dim(),
            checkpoint.afg.semantic_dim(),
            dataset.visual_dim(),
            dataset.semantic_dim()
        )));
    }

    let plan = SynthesisPlan {
        per_seen_class: args.seen_count,
        per_unseen_class: args.unseen_count,
        seed: args.seed,
    };
    let clf_config = ClassifierConfig {
        epochs: args.clf_epochs,
        learning_rate: args.clf_lr,
        batch_size: args.clf_batch,
        seed: args.seed,
    };
    let eval_fingerprint = fingerprint64(&format!(
        "checkpoint={} plan={:?} clf={:?}",
        checkpoint.fingerprint, plan, clf_config
    ));

    let (mut report, trainset) = run_gzsl_pipeline(
        &dataset,
        &checkpoint.afg,
        &checkpoint.sfg,
        &plan,
        &clf_config,
        SynthesisRoute::Dfs,
    )?;
    report.config_fingerprint = eval_fingerprint.clone();
    write_report(&args.out_dir, "report", &report, &dataset)?;
    println!(
        "dfs: acc_seen={:.4} acc_unseen={:.4} acc_harmonic={:.4}",
        report.acc_seen, report.acc_unseen, report.acc_harmonic
    );

    if args.export_synthesized {
        save_synthesized_set(&trainset, &args.out_dir.join("synthesized.manifest"))?;
    }

    if args.compare_baseline {
        let (mut baseline, _) = run_gzsl_pipeline(
            &dataset,
            &checkpoint.afg,
            &checkpoint.sfg,
            &plan,
            &clf_config,
            SynthesisRoute::Baseline,
        )?;
        baseline.config_fingerprint = eval_fingerprint;
        write_report(&args.out_dir, "report_baseline", &baseline, &dataset)?;
        println!(
            "baseline: acc_seen={:.4} acc_unseen={:.4} acc_harmonic={:.4}",
            baseline.acc_seen, baseline.acc_unseen, baseline.acc_harmonic
        );
    }
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<(), CliFailure> {
    let entries = crate::gradsuite::run_suite(args.seed, args.tolerance, args.inject_sign_flip);
    let mut skipped_total = 0usize;
    for e in &entries {
        println!(
            "{:<44} max_rel_error={:>12.3e} checked={:<4} skipped={:<3} {}",
            e.name,
            e.report.max_rel_error,
            e.report.params_checked,
            e.report.params_skipped,
            if e.report.passed { "pass" } else { "FAIL" }
        );
        skipped_total += e.report.params_skipped;
    }
    if skipped_total > 0 {
        println!(
            "note: {skipped_total} coordinate(s) within {:.0} steps of an L1 tie were excluded; \
             the L1 subgradient is set-valued at ties (sign(0) = 0 by convention), so central \
             differences are not applicable there",
            16.0
        );
    }
    if crate::gradsuite::all_passed(&entries) {
        Ok(())
    } else {
        Err(CliFailure::Numeric(
            "gradient check failed for at least one loss".into(),
        ))
    }
}
