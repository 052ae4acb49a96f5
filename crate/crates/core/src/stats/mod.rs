//! Two-sample tests, correlations and Gaussian GLM fits, plus table output.

mod glm;
pub mod special;
mod table;

use serde::{Deserialize, Serialize};

pub use glm::{glm_gaussian, Design, GlmFit};
pub use table::Table;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} observations, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("zero variance: {0}")]
    ZeroVariance(String),
    #[error("design matrix is rank deficient: {0}")]
    RankDeficient(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite input in {0}")]
    NonFinite(String),
}

/// Labelled per-seed values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub label: String,
    pub values: Vec<f64>,
}

impl SampleSet {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            values,
        }
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Standard error of the mean; zero for a single observation.
pub fn std_error(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    (variance(x) / x.len() as f64).sqrt()
}

fn check_finite(x: &[f64], what: &str) -> Result<(), StatsError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite(what.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Welch-Satterthwaite degrees of freedom.
    pub df: f64,
    pub p_two_sided: f64,
    /// `mean(a) - mean(b)`
    pub mean_diff: f64,
}

impl TTest {
    /// p-value for the alternative `mean(a) < mean(b)`.
    pub fn p_less(&self) -> f64 {
        special::student_t_cdf(self.t, self.df)
    }

    /// p-value for the alternative `mean(a) > mean(b)`.
    pub fn p_greater(&self) -> f64 {
        1.0 - special::student_t_cdf(self.t, self.df)
    }
}

/// Welch's unequal-variance two-sample t-test.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest, StatsError> {
    for x in [a, b] {
        if x.len() < 2 {
            return Err(StatsError::TooFewSamples {
                needed: 2,
                got: x.len(),
            });
        }
        check_finite(x, "t-test sample")?;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a) / na, variance(b) / nb);
    let se2 = va + vb;
    let mean_diff = mean(a) - mean(b);
    if se2 <= 0.0 {
        if mean_diff == 0.0 {
            // two identical constant samples: no evidence of a difference
            return Ok(TTest {
                t: 0.0,
                df: na + nb - 2.0,
                p_two_sided: 1.0,
                mean_diff,
            });
        }
        return Err(StatsError::ZeroVariance("both samples are constant".into()));
    }
    let t = mean_diff / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Ok(TTest {
        t,
        df,
        p_two_sided: special::student_t_two_sided(t, df),
        mean_diff,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    /// Two-sided p-value from `t = r * sqrt((n - 2) / (1 - r^2))`.
    pub p: f64,
    pub n: usize,
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<Correlation, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::Shape(format!("{} x values, {} y values", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFewSamples { needed: 3, got: n });
    }
    check_finite(x, "x")?;
    check_finite(y, "y")?;
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance(
            if sxx == 0.0 { "x is constant" } else { "y is constant" }.into(),
        ));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        special::student_t_two_sided(r * (df / (1.0 - r * r)).sqrt(), df)
    };
    Ok(Correlation { r, p, n })
}

/// Ranks starting at 1; ties share their average rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson on average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation, StatsError> {
    check_finite(x, "x")?;
    check_finite(y, "y")?;
    pearson_r(&ranks(x), &ranks(y))
}
