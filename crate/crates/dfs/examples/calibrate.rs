// Dev probe: end-to-end orderings across seeds with the default settings.
use dfs::afg::{train_afg, AfgConfig};
use dfs::data::{generate_synthetic_benchmark, GzslData, SyntheticBenchmarkSpec};
use dfs::eval::{run_gzsl_pipeline, ClassifierConfig, SynthesisRoute};
use dfs::sfg::{train_sfg, ConditionMode, SfgConfig};
use dfs::synthesis::SynthesisPlan;

fn main() {
    let mut dfs_wins = 0;
    let mut div_wins = 0;
    let mut mean_wins_over_sampled = (0.0f64, 0.0f64);
    let start = std::time::Instant::now();
    for seed in 0..10u64 {
        let data = generate_synthetic_benchmark(&SyntheticBenchmarkSpec {
            seed,
            ..Default::default()
        })
        .unwrap();
        let afg_config = AfgConfig {
            seed,
            ..AfgConfig::desk_scale()
        };
        let afg = train_afg(&data, &afg_config).unwrap();
        let sfg = train_sfg(
            &data,
            &afg,
            &SfgConfig {
                seed,
                ..SfgConfig::desk_scale()
            },
        )
        .unwrap();
        let plan = SynthesisPlan {
            seed,
            ..Default::default()
        };
        let clf = ClassifierConfig {
            seed,
            ..Default::default()
        };
        let (dfs_report, _) =
            run_gzsl_pipeline(&data, &afg, &sfg, &plan, &clf, SynthesisRoute::Dfs).unwrap();
        let (base_report, _) =
            run_gzsl_pipeline(&data, &afg, &sfg, &plan, &clf, SynthesisRoute::Baseline).unwrap();

        let unseen_div = |r: &dfs::eval::EvalReport| -> f64 {
            let unseen = data.unseen_classes();
            let vals: Vec<f64> = r
                .diversity
                .iter()
                .filter(|(c, _)| unseen.contains(c))
                .map(|(_, v)| *v)
                .collect();
            vals.iter().sum::<f64>() / vals.len() as f64
        };
        let dd = unseen_div(&dfs_report);
        let bd = unseen_div(&base_report);
        if dfs_report.acc_harmonic > base_report.acc_harmonic {
            dfs_wins += 1;
        }
        if dd > bd {
            div_wins += 1;
        }

        // Condition ablation: mean vs sampled.
        let sfg_sampled = train_sfg(
            &data,
            &afg,
            &SfgConfig {
                seed,
                condition_mode: ConditionMode::SampledAligned,
                ..SfgConfig::desk_scale()
            },
        )
        .unwrap();
        let (sampled_report, _) = run_gzsl_pipeline(
            &data,
            &afg,
            &sfg_sampled,
            &plan,
            &clf,
            SynthesisRoute::Dfs,
        )
        .unwrap();
        mean_wins_over_sampled.0 += dfs_report.acc_harmonic;
        mean_wins_over_sampled.1 += sampled_report.acc_harmonic;

        println!(
            "seed {seed}: dfs h={:.4} (s={:.3} u={:.3}) base h={:.4} (s={:.3} u={:.3}) | div {:.3} vs {:.3} | sampled h={:.4}",
            dfs_report.acc_harmonic,
            dfs_report.acc_seen,
            dfs_report.acc_unseen,
            base_report.acc_harmonic,
            base_report.acc_seen,
            base_report.acc_unseen,
            dd,
            bd,
            sampled_report.acc_harmonic,
        );
    }
    println!(
        "dfs acc_h wins: {dfs_wins}/10 (need >=8), diversity wins: {div_wins}/10 (need >=9)"
    );
    println!(
        "mean acc_h: mean-condition {:.4} vs sampled-condition {:.4} (need >=)",
        mean_wins_over_sampled.0 / 10.0,
        mean_wins_over_sampled.1 / 10.0
    );
    println!("elapsed: {:.1?}", start.elapsed());
}
