use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::diagnostics::{evaluate_test, tail_mean};
use crate::interventions::{InterventionConfig, InterventionHooks};
use crate::ppo::{Agent, Trainer};
use crate::rng::{self, Stream};
use crate::shift::RoundPlan;

use super::archive::{SeedWriter, CONFIG_FILE};
use super::{
    analyze, EpisodeRecord, ExperimentConfig, HarnessError, RoundSummary, RunArchive, SeedRun,
    Summary,
};

/// Trains one seed of one method through every round. Records are appended
/// under `archive_dir/seed_<seed>` after each round when a directory is
/// given.
pub fn run_seed(
    config: &ExperimentConfig,
    method: &InterventionConfig,
    seed: usize,
    archive_dir: Option<&Path>,
) -> Result<SeedRun, HarnessError> {
    let master = config.master_seed;
    let rep = seed as u64;
    let p = &config.protocol;
    let plan = RoundPlan::new(
        p.kind,
        p.n_rounds,
        p.k,
        p.n_test,
        config.env.clone(),
        rng::derive_seed(master, rep, Stream::Plan, 0),
    )?;
    let spec = method.network_spec(&config.network);
    let mut agent = Agent::new(spec, config.ppo.adam(), &mut rng::stream(master, rep, Stream::Init, 0))?;
    let mut trainer = Trainer::new(config.ppo.clone(), master, rep)?;
    let mut hooks = InterventionHooks::new(method.clone(), master, rep);
    let mut eval_rng = rng::stream(master, rep, Stream::Evaluation, 0);
    let test = plan.test_instances();
    let diag = &config.diagnostics;
    let mut writer = archive_dir.map(|d| SeedWriter::create(d, seed)).transpose()?;

    let mut run = SeedRun {
        seed,
        ..SeedRun::default()
    };
    let mut first: Option<(Option<f64>, f64)> = None;
    for round in 0..p.n_rounds {
        let instances = plan.active_instances(round)?;
        let perm = plan.permutation(round)?;
        let mut observer = |a: &Agent,
                            rec: &mut crate::diagnostics::MetricsRecord|
         -> Result<(), crate::ppo::PpoError> {
            if diag.eval_every > 0 && rec.epoch % diag.eval_every == 0 {
                rec.test_reward = Some(evaluate_test(
                    &a.spec,
                    &a.params,
                    &test,
                    perm,
                    diag.test_episodes,
                    &mut eval_rng,
                )?);
            }
            Ok(())
        };
        let mut outcome = trainer.train_round_observed(
            &mut agent,
            &instances,
            perm,
            round,
            config.iterations_per_round,
            &mut hooks,
            &mut observer,
        )?;
        let test_reward = evaluate_test(
            &agent.spec,
            &agent.params,
            &test,
            perm,
            diag.test_episodes,
            &mut eval_rng,
        )?;
        if let Some(last) = outcome.records.last_mut() {
            last.test_reward = Some(test_reward);
        }
        if let Some(bad) = outcome.records.iter().find(|r| !r.is_finite()) {
            return Err(HarnessError::Numerical(format!(
                "non-finite metrics at epoch {} of seed {seed}",
                bad.epoch
            )));
        }
        let train_reward = tail_mean(&outcome.episode_returns, diag.tail_episodes);
        let (t0, s0) = *first.get_or_insert((train_reward, test_reward));
        let summary = RoundSummary {
            round,
            epochs: outcome.records.len(),
            episodes: outcome.episode_returns.len(),
            train_reward,
            test_reward,
            normalized_train: train_reward.zip(t0).map(|(a, b)| a - b),
            normalized_test: test_reward - s0,
        };
        log::info!(
            "{} seed {seed} round {round}: train {:?} test {test_reward:.3} ({} epochs)",
            method.label(),
            train_reward,
            summary.epochs
        );
        let episodes: Vec<EpisodeRecord> = outcome
            .episode_returns
            .iter()
            .map(|&ret| EpisodeRecord { round, ret })
            .collect();
        if let Some(w) = writer.as_mut() {
            w.append_round(&outcome.records, &outcome.events, &summary, &episodes)?;
        }
        run.metrics.append(&mut outcome.records);
        run.events.append(&mut outcome.events);
        run.episodes.extend(episodes);
        run.rounds.push(summary);

        if round + 1 < p.n_rounds {
            if let Some(ev) = hooks.on_round_boundary(&mut agent, trainer.epochs_completed(), round)? {
                if let Some(w) = writer.as_mut() {
                    w.append_events(std::slice::from_ref(&ev))?;
                }
                run.events.push(ev);
            }
        }
    }
    Ok(run)
}

fn prepare_archive_dir(dir: &Path, config: &ExperimentConfig) -> Result<(), HarnessError> {
    if dir.join(CONFIG_FILE).exists() {
        // replace a previous run of the same method
        fs::remove_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, config.to_toml_string()).map_err(|e| HarnessError::io(&path, e))
}

/// Runs every listed method for every seed. Each method is archived under
/// `output_dir/<method>`; a cross-method summary is written to
/// `output_dir/summary`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(Vec<RunArchive>, Summary), HarnessError> {
    config.validate()?;
    let out = &config.output_dir;
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let methods: Vec<(ExperimentConfig, PathBuf)> = config
        .interventions
        .iter()
        .map(|m| (config.for_method(m), out.join(m.label())))
        .collect();
    for (c, dir) in &methods {
        prepare_archive_dir(dir, c)?;
    }
    let jobs: Vec<(usize, usize)> = (0..methods.len())
        .flat_map(|m| (0..config.n_seeds).map(move |s| (m, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<SeedRun, HarnessError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(m, s)| {
                let (c, dir) = &methods[m];
                run_seed(c, &c.interventions[0], s, Some(dir))
            })
            .collect()
    });
    let mut archives: Vec<RunArchive> = methods
        .into_iter()
        .map(|(config, dir)| RunArchive {
            dir,
            config,
            seeds: Vec::new(),
        })
        .collect();
    for (&(m, _), r) in jobs.iter().zip(results) {
        archives[m].seeds.push(r?);
    }
    let summary = analyze(&archives)?;
    summary.write(&out.join(super::SUMMARY_DIR))?;
    Ok((archives, summary))
}

/// Final-round results of one sweep value.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: String,
    pub summary: Summary,
}

/// Runs the experiment once per value of `param`, each into
/// `output_dir/<param>=<value>`.
pub fn sweep(
    config: &ExperimentConfig,
    param: &str,
    values: &[String],
) -> Result<Vec<SweepPoint>, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one value".into()));
    }
    let mut points = Vec::with_capacity(values.len());
    for v in values {
        let mut c = config.clone();
        c.set_param(param, v)?;
        c.output_dir = config.output_dir.join(format!("{param}={v}"));
        let (_, summary) = run_experiment(&c)?;
        points.push(SweepPoint {
            value: v.clone(),
            summary,
        });
    }
    Ok(points)
}
