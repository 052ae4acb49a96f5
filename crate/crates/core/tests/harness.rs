use std::path::Path;

use plasticity_core::diagnostics::tail_mean;
use plasticity_core::harness::{
    analyze, plot, run_experiment, run_seed, sweep, ExperimentConfig, HarnessError, PlotKind,
    RunArchive, SeedRun, BASELINE_METHOD, SUMMARY_DIR,
};
use plasticity_core::diagnostics::Metric;
use plasticity_core::interventions::{InterventionConfig, InterventionKind};

fn smoke_in(dir: &Path, rounds: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::smoke();
    c.protocol.n_rounds = rounds;
    c.output_dir = dir.to_path_buf();
    c.threads = 1;
    c
}

#[test]
fn smoke_archive_has_one_record_per_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let c = smoke_in(tmp.path(), 2);
    let (archives, _) = run_experiment(&c).unwrap();
    let epochs_per_round = c.iterations_per_round * c.ppo.n_slots / c.ppo.buffer_size;
    assert_eq!(archives.len(), c.interventions.len());
    for a in &archives {
        let loaded = RunArchive::load(&a.dir).unwrap();
        assert_eq!(&loaded, a);
        let records: usize = loaded.seeds.iter().map(|s| s.metrics.len()).sum();
        assert_eq!(records, c.n_seeds * c.protocol.n_rounds * epochs_per_round);
        for s in &loaded.seeds {
            assert_eq!(s.rounds.len(), 2);
            assert!(s.metrics.iter().all(|m| m.is_finite()));
        }
    }
    assert!(tmp.path().join(SUMMARY_DIR).join("methods.csv").exists());
}

#[test]
fn single_round_warm_start_equals_reset_all() {
    let c = smoke_in(Path::new("unused"), 1);
    let warm = run_seed(&c, &InterventionConfig::new(InterventionKind::WarmStart), 0, None).unwrap();
    let reset = run_seed(&c, &InterventionConfig::new(InterventionKind::ResetAll), 0, None).unwrap();
    assert_eq!(warm, reset);
}

#[test]
fn archived_config_reproduces_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = smoke_in(tmp.path(), 2);
    c.interventions = vec![InterventionConfig::new(InterventionKind::SoftShrinkPerturb)];
    let (archives, _) = run_experiment(&c).unwrap();
    let loaded = RunArchive::load(&archives[0].dir).unwrap();
    for s in &loaded.seeds {
        let again = run_seed(&loaded.config, &loaded.config.interventions[0], s.seed, None).unwrap();
        assert_eq!(&again, s);
    }
}

#[test]
fn summary_matches_recomputation_from_episode_streams() {
    let tmp = tempfile::tempdir().unwrap();
    let c = smoke_in(tmp.path(), 3);
    let (archives, summary) = run_experiment(&c).unwrap();
    for a in &archives {
        let m = summary.method(&a.method()).unwrap();
        for round in 0..3 {
            let per_seed: Vec<f64> = a
                .seeds
                .iter()
                .map(|s| {
                    let round_mean = |r: usize| {
                        let rets: Vec<f64> = s.episodes.iter().filter(|e| e.round == r).map(|e| e.ret).collect();
                        tail_mean(&rets, c.diagnostics.tail_episodes).unwrap()
                    };
                    round_mean(round) - round_mean(0)
                })
                .collect();
            let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
            assert!((m.round_train_mean[round] - mean).abs() < 1e-12);
        }
    }
    let own = summary
        .ttests
        .iter()
        .find(|t| t.method == BASELINE_METHOD && t.split == "test")
        .unwrap();
    assert_eq!(own.result.as_ref().unwrap().t, 0.0);
}

fn clone_seed(s: &SeedRun, seed: usize) -> SeedRun {
    SeedRun { seed, ..s.clone() }
}

#[test]
fn identical_seeds_have_zero_standard_error() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = smoke_in(tmp.path(), 2);
    c.n_seeds = 1;
    c.interventions.truncate(1);
    let (mut archives, _) = run_experiment(&c).unwrap();
    let s = archives[0].seeds[0].clone();
    archives[0].seeds = (0..3).map(|i| clone_seed(&s, i)).collect();
    let summary = analyze(&archives).unwrap();
    let m = &summary.methods[0];
    assert_eq!((m.train_se, m.test_se), (0.0, 0.0));
}

#[test]
fn plots_are_structured_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let c = smoke_in(&tmp.path().join("runs"), 3);
    let (archives, _) = run_experiment(&c).unwrap();
    assert_eq!(archives.len(), 2);

    let out = tmp.path().join("fig");
    let files = plot(&archives, PlotKind::RoundCurve, &[], &out).unwrap();
    assert_eq!(files.len(), 2);
    let svg = std::fs::read_to_string(&files[0]).unwrap();
    let series: Vec<&str> = svg.lines().filter(|l| l.contains(r#"class="series""#)).collect();
    assert_eq!(series.len(), 2);
    for line in series {
        let points = line.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(points.split_whitespace().count(), 3);
    }

    let again = tmp.path().join("fig2");
    let files2 = plot(&archives, PlotKind::RoundCurve, &[], &again).unwrap();
    for (a, b) in files.iter().zip(&files2) {
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    for kind in [PlotKind::EpochCurve, PlotKind::MetricCurve, PlotKind::CorrelationScatter] {
        let files = plot(&archives, kind, &Metric::ALL, &out).unwrap();
        assert!(!files.is_empty());
    }
}

#[test]
fn empty_metric_selection_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let c = smoke_in(&tmp.path().join("runs"), 2);
    let (archives, _) = run_experiment(&c).unwrap();
    let out = tmp.path().join("fig");
    for kind in [PlotKind::MetricCurve, PlotKind::CorrelationScatter] {
        assert!(matches!(plot(&archives, kind, &[], &out), Err(HarnessError::Config(_))));
    }
    assert!(!out.exists());
    assert!(plot(&[], PlotKind::EpochCurve, &[], &out).is_err());
}

#[test]
fn sweep_writes_one_experiment_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = smoke_in(tmp.path(), 2);
    c.n_seeds = 1;
    c.interventions = vec![InterventionConfig::new(InterventionKind::SoftShrinkPerturb)];
    let points = sweep(&c, "interventions.soft_beta", &["1e-6".into(), "1e-3".into()]).unwrap();
    assert_eq!(points.len(), 2);
    for v in ["1e-6", "1e-3"] {
        let dir = tmp.path().join(format!("interventions.soft_beta={v}"));
        assert!(dir.join("soft_shrink_perturb").join("config.snapshot").exists());
    }
    assert!(sweep(&c, "no.such.param", &["1".into()]).is_err());
}

#[test]
fn invalid_config_is_a_config_error() {
    let mut c = ExperimentConfig::smoke();
    c.n_seeds = 0;
    let e = run_experiment(&c).unwrap_err();
    assert_eq!(e.exit_code(), 1);
}
