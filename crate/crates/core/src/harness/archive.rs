//! On-disk layout of one method's run:
//!
//! ```text
//! <dir>/config.snapshot          TOML, exactly the config that produced it
//! <dir>/seed_<i>/metrics.ldj     one MetricsRecord per epoch
//! <dir>/seed_<i>/events.ldj      one HookEvent per intervention firing
//! <dir>/seed_<i>/rounds.ldj      one RoundSummary per round
//! <dir>/seed_<i>/episodes.ldj    one EpisodeRecord per finished episode
//! ```
//!
//! Every `.ldj` file holds one JSON object per line, appended as the run
//! progresses.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::diagnostics::MetricsRecord;
use crate::ppo::HookEvent;

use super::{ExperimentConfig, HarnessError};

pub(crate) const CONFIG_FILE: &str = "config.snapshot";
const METRICS_FILE: &str = "metrics.ldj";
const EVENTS_FILE: &str = "events.ldj";
const ROUNDS_FILE: &str = "rounds.ldj";
const EPISODES_FILE: &str = "episodes.ldj";

/// Round-level results of one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub epochs: usize,
    pub episodes: usize,
    /// Mean return over the round's final training episodes.
    pub train_reward: Option<f64>,
    /// Held-out mean return at the end of the round.
    pub test_reward: f64,
    /// `train_reward` minus the first round's value.
    pub normalized_train: Option<f64>,
    pub normalized_test: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub round: usize,
    #[serde(rename = "return")]
    pub ret: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeedRun {
    pub seed: usize,
    pub metrics: Vec<MetricsRecord>,
    pub events: Vec<HookEvent>,
    pub rounds: Vec<RoundSummary>,
    pub episodes: Vec<EpisodeRecord>,
}

impl SeedRun {
    /// Last metrics record of `round`, if that round completed an epoch.
    pub fn last_record_of(&self, round: usize) -> Option<&MetricsRecord> {
        self.metrics.iter().rev().find(|r| r.round == round)
    }
}

/// One method's archive: its config snapshot and every seed's streams.
#[derive(Clone, Debug, PartialEq)]
pub struct RunArchive {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedRun>,
}

impl RunArchive {
    pub fn method(&self) -> String {
        self.config
            .interventions
            .first()
            .map(|i| i.label())
            .unwrap_or_else(|| "unknown".into())
    }

    pub fn load(dir: &Path) -> Result<Self, HarnessError> {
        let cfg_path = dir.join(CONFIG_FILE);
        let text = fs::read_to_string(&cfg_path).map_err(|e| HarnessError::io(&cfg_path, e))?;
        let config: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| HarnessError::Archive(format!("{}: {e}", cfg_path.display())))?;
        if config.interventions.len() != 1 {
            return Err(HarnessError::Archive(format!(
                "{} describes {} methods; an archive holds exactly one",
                cfg_path.display(),
                config.interventions.len()
            )));
        }
        let mut seed_dirs: Vec<(usize, PathBuf)> = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))? {
            let entry = entry.map_err(|e| HarnessError::io(dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(i) = name.strip_prefix("seed_").and_then(|s| s.parse().ok()) {
                seed_dirs.push((i, entry.path()));
            }
        }
        seed_dirs.sort();
        let mut seeds = Vec::with_capacity(seed_dirs.len());
        for (seed, path) in seed_dirs {
            seeds.push(SeedRun {
                seed,
                metrics: read_ldj(&path.join(METRICS_FILE))?,
                events: read_ldj(&path.join(EVENTS_FILE))?,
                rounds: read_ldj(&path.join(ROUNDS_FILE))?,
                episodes: read_ldj(&path.join(EPISODES_FILE))?,
            });
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            seeds,
        })
    }
}

fn read_ldj<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let f = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            HarnessError::Archive(format!("{} line {}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}

/// Append-only writer for one seed's streams.
pub(crate) struct SeedWriter {
    dir: PathBuf,
    metrics: BufWriter<File>,
    events: BufWriter<File>,
    rounds: BufWriter<File>,
    episodes: BufWriter<File>,
}

impl SeedWriter {
    pub(crate) fn create(archive_dir: &Path, seed: usize) -> Result<Self, HarnessError> {
        let dir = archive_dir.join(format!("seed_{seed}"));
        fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        let open = |name: &str| -> Result<BufWriter<File>, HarnessError> {
            let p = dir.join(name);
            OpenOptions::new()
                .create(true)
                .write(true)
                .truncate(true)
                .open(&p)
                .map(BufWriter::new)
                .map_err(|e| HarnessError::io(&p, e))
        };
        Ok(Self {
            metrics: open(METRICS_FILE)?,
            events: open(EVENTS_FILE)?,
            rounds: open(ROUNDS_FILE)?,
            episodes: open(EPISODES_FILE)?,
            dir,
        })
    }

    /// Appends one round's worth of records and flushes them to disk.
    pub(crate) fn append_round(
        &mut self,
        metrics: &[MetricsRecord],
        events: &[HookEvent],
        round: &RoundSummary,
        episodes: &[EpisodeRecord],
    ) -> Result<(), HarnessError> {
        let dir = self.dir.clone();
        let err = |e: std::io::Error| HarnessError::io(&dir, e);
        write_lines(&mut self.metrics, metrics).map_err(err)?;
        write_lines(&mut self.events, events).map_err(err)?;
        write_lines(&mut self.rounds, std::slice::from_ref(round)).map_err(err)?;
        write_lines(&mut self.episodes, episodes).map_err(err)?;
        for w in [&mut self.metrics, &mut self.events, &mut self.rounds, &mut self.episodes] {
            w.flush().map_err(err)?;
        }
        Ok(())
    }

    pub(crate) fn append_events(&mut self, events: &[HookEvent]) -> Result<(), HarnessError> {
        let dir = self.dir.clone();
        let err = |e: std::io::Error| HarnessError::io(&dir, e);
        write_lines(&mut self.events, events).map_err(err)?;
        self.events.flush().map_err(err)
    }
}

fn write_lines<T: Serialize>(w: &mut impl Write, items: &[T]) -> std::io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *w, item).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
