use std::fs;
use std::path::Path;

use crate::diagnostics::{normalize_to_baseline, Metric};
use crate::stats::{
    glm_gaussian, mean, pearson_r, std_error, welch_t_test, Correlation, Design, GlmFit, Table,
    TTest,
};

use super::{HarnessError, RunArchive, BASELINE_METHOD};

pub const SUMMARY_DIR: &str = "summary";

/// Per-method normalized rewards, final round and per round.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    /// Final-round normalized train reward of each seed.
    pub final_train: Vec<f64>,
    pub final_test: Vec<f64>,
    pub train_mean: f64,
    pub train_se: f64,
    pub test_mean: f64,
    pub test_se: f64,
    pub round_train_mean: Vec<f64>,
    pub round_train_se: Vec<f64>,
    pub round_test_mean: Vec<f64>,
    pub round_test_se: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestRow {
    pub method: String,
    /// `train` or `test`.
    pub split: &'static str,
    pub result: Result<TTest, String>,
}

/// One (method, seed) pair's final-round outcome and end-of-run metrics,
/// each metric relative to its first recorded value.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub method: String,
    pub seed: usize,
    pub train: f64,
    pub test: f64,
    pub metrics: Vec<(Metric, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub methods: Vec<MethodSummary>,
    /// Each method against the reset-all baseline, when it is present.
    pub ttests: Vec<TestRow>,
    pub observations: Vec<Observation>,
    pub correlations: Vec<(Metric, Result<Correlation, String>)>,
    pub glm_train: Result<GlmFit, String>,
    pub glm_test: Result<GlmFit, String>,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (mean(v), std_error(v))
    }
}

fn summarize_method(a: &RunArchive) -> MethodSummary {
    let method = a.method();
    let n_rounds = a.config.protocol.n_rounds;
    let per_round = |r: usize, train: bool| -> Vec<f64> {
        a.seeds
            .iter()
            .filter_map(|s| s.rounds.get(r))
            .filter_map(|rs| if train { rs.normalized_train } else { Some(rs.normalized_test) })
            .collect()
    };
    let mut s = MethodSummary {
        method,
        final_train: per_round(n_rounds - 1, true),
        final_test: per_round(n_rounds - 1, false),
        train_mean: 0.0,
        train_se: 0.0,
        test_mean: 0.0,
        test_se: 0.0,
        round_train_mean: Vec::new(),
        round_train_se: Vec::new(),
        round_test_mean: Vec::new(),
        round_test_se: Vec::new(),
    };
    (s.train_mean, s.train_se) = mean_se(&s.final_train);
    (s.test_mean, s.test_se) = mean_se(&s.final_test);
    for r in 0..n_rounds {
        let (m, se) = mean_se(&per_round(r, true));
        s.round_train_mean.push(m);
        s.round_train_se.push(se);
        let (m, se) = mean_se(&per_round(r, false));
        s.round_test_mean.push(m);
        s.round_test_se.push(se);
    }
    s
}

fn observations(a: &RunArchive) -> Vec<Observation> {
    let last_round = a.config.protocol.n_rounds - 1;
    let mode = a.config.diagnostics.baseline;
    a.seeds
        .iter()
        .filter_map(|s| {
            let first = s.metrics.first()?;
            let last = s.last_record_of(last_round)?;
            let rs = s.rounds.get(last_round)?;
            Some(Observation {
                method: a.method(),
                seed: s.seed,
                train: rs.normalized_train?,
                test: rs.normalized_test,
                metrics: Metric::ALL
                    .iter()
                    .map(|&m| (m, normalize_to_baseline(last.metric(m), first.metric(m), mode)))
                    .collect(),
            })
        })
        .collect()
}

fn fit_glm(obs: &[Observation], train: bool) -> Result<GlmFit, String> {
    let y: Vec<f64> = obs.iter().map(|o| if train { o.train } else { o.test }).collect();
    let cols: Vec<(Metric, Vec<f64>)> = Metric::ALL
        .iter()
        .enumerate()
        .map(|(j, &m)| (m, obs.iter().map(|o| o.metrics[j].1).collect::<Vec<f64>>()))
        // a constant regressor duplicates the intercept
        .filter(|(_, v)| v.iter().any(|x| *x != v[0]))
        .collect();
    let named: Vec<(&str, &[f64])> = cols.iter().map(|(m, v)| (m.name(), v.as_slice())).collect();
    let design = Design::with_intercept(&named).map_err(|e| e.to_string())?;
    let design = if named.is_empty() {
        Design::new(vec!["const".into()], vec![vec![1.0]; y.len()]).map_err(|e| e.to_string())?
    } else {
        design
    };
    glm_gaussian(&design, &y).map_err(|e| e.to_string())
}

/// Cross-method analysis of the given archives.
pub fn analyze(archives: &[RunArchive]) -> Result<Summary, HarnessError> {
    if archives.is_empty() {
        return Err(HarnessError::Config("no archives to analyze".into()));
    }
    // order by method so results do not depend on how the archives were listed
    let mut archives: Vec<&RunArchive> = archives.iter().collect();
    archives.sort_by_key(|a| a.method());
    let methods: Vec<MethodSummary> = archives.iter().map(|a| summarize_method(a)).collect();
    let mut ttests = Vec::new();
    if let Some(base) = methods.iter().find(|m| m.method == BASELINE_METHOD) {
        for m in &methods {
            for (split, a, b) in [
                ("train", &m.final_train, &base.final_train),
                ("test", &m.final_test, &base.final_test),
            ] {
                ttests.push(TestRow {
                    method: m.method.clone(),
                    split,
                    result: welch_t_test(a, b).map_err(|e| e.to_string()),
                });
            }
        }
    }
    let observations: Vec<Observation> = archives.iter().flat_map(|a| observations(a)).collect();
    let y: Vec<f64> = observations.iter().map(|o| o.train).collect();
    let correlations = Metric::ALL
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let x: Vec<f64> = observations.iter().map(|o| o.metrics[j].1).collect();
            (m, pearson_r(&x, &y).map_err(|e| e.to_string()))
        })
        .collect();
    Ok(Summary {
        methods,
        ttests,
        glm_train: fit_glm(&observations, true),
        glm_test: fit_glm(&observations, false),
        observations,
        correlations,
    })
}

fn f(v: f64) -> String {
    format!("{v:.4}")
}

impl Summary {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn tables(&self) -> Vec<(&'static str, Table)> {
        let mut methods = Table::new(
            "Normalized final-round reward (mean and standard error over seeds)",
            &["method", "seeds", "train", "train se", "test", "test se"],
        );
        for m in &self.methods {
            methods.push(vec![
                m.method.clone(),
                m.final_train.len().to_string(),
                f(m.train_mean),
                f(m.train_se),
                f(m.test_mean),
                f(m.test_se),
            ]);
        }
        let mut rounds = Table::new(
            "Normalized reward per round",
            &["method", "round", "train", "train se", "test", "test se"],
        );
        for m in &self.methods {
            for r in 0..m.round_train_mean.len() {
                rounds.push(vec![
                    m.method.clone(),
                    r.to_string(),
                    f(m.round_train_mean[r]),
                    f(m.round_train_se[r]),
                    f(m.round_test_mean[r]),
                    f(m.round_test_se[r]),
                ]);
            }
        }
        let mut tt = Table::new(
            &format!("Welch t-tests against {BASELINE_METHOD}"),
            &["method", "split", "mean diff", "t", "df", "p", "p (lower)"],
        );
        for row in &self.ttests {
            let cells = match &row.result {
                Ok(t) => vec![
                    f(t.mean_diff),
                    format!("{:.3}", t.t),
                    format!("{:.2}", t.df),
                    format!("{:.4}", t.p_two_sided),
                    format!("{:.4}", t.p_less()),
                ],
                Err(e) => vec![e.clone(), String::new(), String::new(), String::new(), String::new()],
            };
            let mut r = vec![row.method.clone(), row.split.to_string()];
            r.extend(cells);
            tt.push(r);
        }
        let mut corr = Table::new(
            "Pearson correlation of final metrics with normalized train reward",
            &["metric", "n", "r", "p"],
        );
        for (m, c) in &self.correlations {
            corr.push(match c {
                Ok(c) => vec![m.name().into(), c.n.to_string(), f(c.r), f(c.p)],
                Err(e) => vec![m.name().into(), self.observations.len().to_string(), e.clone(), String::new()],
            });
        }
        let glm = |fit: &Result<GlmFit, String>, title: &str| match fit {
            Ok(g) => g.table(title),
            Err(e) => {
                let mut t = Table::new(title, &["error"]);
                t.push(vec![e.clone()]);
                t
            }
        };
        vec![
            ("methods", methods),
            ("rounds", rounds),
            ("ttests", tt),
            ("correlations", corr),
            ("glm_train", glm(&self.glm_train, "GLM (Gaussian): normalized train reward ~ metrics")),
            ("glm_test", glm(&self.glm_test, "GLM (Gaussian): normalized test reward ~ metrics")),
        ]
    }

    pub fn to_text(&self) -> String {
        self.tables()
            .iter()
            .map(|(_, t)| t.to_text())
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Writes every table as `<name>.csv` and `<name>.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        for (name, t) in self.tables() {
            for (ext, body) in [("csv", t.to_csv()), ("txt", t.to_text())] {
                let p = dir.join(format!("{name}.{ext}"));
                fs::write(&p, body).map_err(|e| HarnessError::io(&p, e))?;
            }
        }
        Ok(())
    }
}
