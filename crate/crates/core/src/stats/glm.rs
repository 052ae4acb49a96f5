//! Gaussian family, identity link: least squares with normal-theory
//! (z) inference on the coefficients.

use serde::{Deserialize, Serialize};

use super::special::{normal_two_sided, Z_975};
use super::{StatsError, Table};

/// Column-named design matrix, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    pub names: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Design {
    pub fn new(names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self, StatsError> {
        if let Some(bad) = rows.iter().find(|r| r.len() != names.len()) {
            return Err(StatsError::Shape(format!(
                "row of length {} for {} columns",
                bad.len(),
                names.len()
            )));
        }
        Ok(Self { names, rows })
    }

    /// Intercept column `const` followed by the given named columns.
    pub fn with_intercept(columns: &[(&str, &[f64])]) -> Result<Self, StatsError> {
        let n = columns.first().map_or(0, |c| c.1.len());
        if let Some((name, c)) = columns.iter().find(|c| c.1.len() != n) {
            return Err(StatsError::Shape(format!("column `{name}` has {} values, expected {n}", c.len())));
        }
        let mut names = vec!["const".to_string()];
        names.extend(columns.iter().map(|c| c.0.to_string()));
        let rows = (0..n)
            .map(|i| std::iter::once(1.0).chain(columns.iter().map(|c| c.1[i])).collect())
            .collect();
        Self::new(names, rows)
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub std_err: Vec<f64>,
    pub z: Vec<f64>,
    pub p: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub n_obs: usize,
    pub df_resid: usize,
    /// Residual sum of squares.
    pub deviance: f64,
    pub null_deviance: f64,
    /// `deviance / df_resid`
    pub scale: f64,
    pub log_likelihood: f64,
    /// Cox-Snell pseudo R-squared.
    pub pseudo_r2: f64,
}

impl GlmFit {
    pub fn table(&self, title: &str) -> Table {
        let mut t = Table::new(
            title,
            &["term", "coef", "std err", "z", "P>|z|", "[0.025", "0.975]"],
        );
        for i in 0..self.names.len() {
            t.push(vec![
                self.names[i].clone(),
                format!("{:.4}", self.coef[i]),
                format!("{:.4}", self.std_err[i]),
                format!("{:.3}", self.z[i]),
                format!("{:.3}", self.p[i]),
                format!("{:.4}", self.ci_low[i]),
                format!("{:.4}", self.ci_high[i]),
            ]);
        }
        t.note(format!(
            "No. Observations: {}  Df Residuals: {}  Scale: {:.5}  Log-Likelihood: {:.3}  Deviance: {:.5}  Pseudo R-squ. (CS): {:.4}",
            self.n_obs, self.df_resid, self.scale, self.log_likelihood, self.deviance, self.pseudo_r2
        ));
        t
    }
}

/// Householder QR of the `n x p` design (column-major copy). Returns the
/// packed `R` (upper triangle), and `Q^T y`.
fn householder(design: &Design, y: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let (n, p) = (design.n_rows(), design.n_cols());
    let mut cols: Vec<Vec<f64>> = (0..p)
        .map(|j| design.rows.iter().map(|r| r[j]).collect())
        .collect();
    let norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut qty = y.to_vec();
    for k in 0..p {
        let alpha = {
            let s: f64 = cols[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
            if cols[k][k] > 0.0 {
                -s
            } else {
                s
            }
        };
        let mut v: Vec<f64> = cols[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        let reflect = |c: &mut [f64]| {
            let dot: f64 = c[k..].iter().zip(&v).map(|(a, b)| a * b).sum();
            let f = 2.0 * dot / vnorm2;
            for (ci, vi) in c[k..].iter_mut().zip(&v) {
                *ci -= f * vi;
            }
        };
        for col in cols.iter_mut().skip(k) {
            reflect(col);
        }
        reflect(&mut qty);
        debug_assert!(n >= p);
    }
    (cols, qty, norms)
}

/// Fits `y ~ X b` by least squares with Gaussian inference.
pub fn glm_gaussian(design: &Design, y: &[f64]) -> Result<GlmFit, StatsError> {
    let (n, p) = (design.n_rows(), design.n_cols());
    if y.len() != n {
        return Err(StatsError::Shape(format!("{n} design rows, {} responses", y.len())));
    }
    if n <= p {
        return Err(StatsError::TooFewSamples {
            needed: p + 1,
            got: n,
        });
    }
    if y.iter().chain(design.rows.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite("design or response".into()));
    }
    let (r, qty, norms) = householder(design, y);
    // r[j][i] holds R[i][j] for i <= j
    for j in 0..p {
        if r[j][j].abs() <= 1e-10 * norms[j] {
            let earlier: Vec<&str> = design.names[..j].iter().map(String::as_str).collect();
            return Err(StatsError::RankDeficient(if norms[j] == 0.0 {
                format!("column `{}` is identically zero", design.names[j])
            } else {
                format!(
                    "column `{}` is a linear combination of [{}]",
                    design.names[j],
                    earlier.join(", ")
                )
            }));
        }
    }
    // back substitution R b = (Q^T y)[..p]
    let mut coef = vec![0.0; p];
    for i in (0..p).rev() {
        let mut s = qty[i];
        for j in i + 1..p {
            s -= r[j][i] * coef[j];
        }
        coef[i] = s / r[i][i];
    }
    // R^{-1}, upper triangular
    let mut rinv = vec![vec![0.0; p]; p];
    for c in 0..p {
        for i in (0..=c).rev() {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for j in i + 1..=c {
                s -= r[j][i] * rinv[j][c];
            }
            rinv[i][c] = s / r[i][i];
        }
    }
    let deviance: f64 = design
        .rows
        .iter()
        .zip(y)
        .map(|(row, yi)| {
            let fit: f64 = row.iter().zip(&coef).map(|(a, b)| a * b).sum();
            (yi - fit) * (yi - fit)
        })
        .sum();
    let df_resid = n - p;
    let scale = deviance / df_resid as f64;
    let mut std_err = vec![0.0; p];
    for (i, se) in std_err.iter_mut().enumerate() {
        // diag of (R^T R)^{-1} = row norms of R^{-1}
        let d: f64 = rinv[i].iter().map(|v| v * v).sum();
        *se = (scale * d).sqrt();
    }
    let z: Vec<f64> = coef
        .iter()
        .zip(&std_err)
        .map(|(c, s)| if *s > 0.0 { c / s } else { 0.0 })
        .collect();
    let pv: Vec<f64> = z
        .iter()
        .zip(&std_err)
        .map(|(z, s)| if *s > 0.0 { normal_two_sided(*z) } else { f64::NAN })
        .collect();
    let nf = n as f64;
    let ybar = y.iter().sum::<f64>() / nf;
    let null_deviance: f64 = y.iter().map(|v| (v - ybar) * (v - ybar)).sum();
    let llf_of = |dev: f64| -nf / 2.0 * ((2.0 * std::f64::consts::PI * dev / nf).ln() + 1.0);
    let log_likelihood = llf_of(deviance);
    let pseudo_r2 = if null_deviance > 0.0 {
        1.0 - (deviance / null_deviance)
    } else {
        0.0
    };
    Ok(GlmFit {
        names: design.names.clone(),
        ci_low: coef.iter().zip(&std_err).map(|(c, s)| c - Z_975 * s).collect(),
        ci_high: coef.iter().zip(&std_err).map(|(c, s)| c + Z_975 * s).collect(),
        coef,
        std_err,
        z,
        p: pv,
        n_obs: n,
        df_resid,
        deviance,
        null_deviance,
        scale,
        log_likelihood,
        pseudo_r2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_through_origin() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let d = Design::with_intercept(&[("x", &x)]).unwrap();
        let f = glm_gaussian(&d, &y).unwrap();
        assert!(f.coef[0].abs() < 1e-12);
        assert!((f.coef[1] - 2.0).abs() < 1e-12);
        assert!(f.deviance < 1e-20);
    }

    #[test]
    fn intercept_only_is_mean() {
        let y = [1.0, 4.0, 2.5, 7.0];
        let d = Design::new(vec!["const".into()], vec![vec![1.0]; 4]).unwrap();
        let f = glm_gaussian(&d, &y).unwrap();
        assert!((f.coef[0] - 3.625).abs() < 1e-14);
        assert!((f.pseudo_r2).abs() < 1e-12);
    }

    #[test]
    fn collinear_column_named() {
        let a = [1.0, 2.0, 3.0, 5.0, 8.0];
        let b: Vec<f64> = a.iter().map(|v| 3.0 * v).collect();
        let d = Design::with_intercept(&[("a", &a), ("b", &b)]).unwrap();
        match glm_gaussian(&d, &[1.0, 0.0, 2.0, 1.0, 3.0]) {
            Err(StatsError::RankDeficient(msg)) => assert!(msg.contains("`b`"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }
}
