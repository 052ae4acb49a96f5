//! Static SVG figures drawn from run archives. Output is deterministic: the
//! same archives always produce byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::diagnostics::Metric;

use super::{analyze, HarnessError, RunArchive};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// Train reward per epoch, mean over seeds, one line per method.
    EpochCurve,
    /// Normalized train and test reward per round with standard-error bands.
    RoundCurve,
    /// Each selected metric per epoch, mean over seeds.
    MetricCurve,
    /// Final normalized metric against final normalized train reward, one
    /// point per (method, seed).
    CorrelationScatter,
}

impl PlotKind {
    pub const ALL: [PlotKind; 4] = [
        PlotKind::EpochCurve,
        PlotKind::RoundCurve,
        PlotKind::MetricCurve,
        PlotKind::CorrelationScatter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::EpochCurve => "epoch_curve",
            PlotKind::RoundCurve => "round_curve",
            PlotKind::MetricCurve => "metric_curve",
            PlotKind::CorrelationScatter => "correlation_scatter",
        }
    }
}

impl std::str::FromStr for PlotKind {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.replace('-', "_");
        PlotKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| {
                HarnessError::Config(format!(
                    "unknown plot kind `{s}` (expected epoch_curve, round_curve, metric_curve or correlation_scatter)"
                ))
            })
    }
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 48.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
    /// Standard error per point, drawn as a band.
    band: Option<Vec<f64>>,
}

struct Figure {
    title: String,
    x_label: String,
    y_label: String,
    series: Vec<Series>,
    scatter: bool,
    /// Dotted vertical lines (round boundaries).
    vlines: Vec<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

impl Figure {
    fn render(&self) -> String {
        let all = || {
            self.series.iter().flat_map(|s| {
                s.points.iter().enumerate().map(move |(i, &(x, y))| {
                    let e = s.band.as_ref().map_or(0.0, |b| b[i]);
                    (x, y, if e.is_finite() { e } else { 0.0 })
                })
            })
        };
        let (x0, x1) = bounds(all().map(|p| p.0).chain(self.vlines.iter().copied()));
        let (y0, y1) = bounds(all().flat_map(|(_, y, e)| [y - e, y + e]));
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
            LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect class="frame" x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                sx(xv),
                TOP + ph + 16.0,
                tick(xv)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                sy(yv) + 4.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            H - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for &v in &self.vlines {
            let _ = writeln!(
                s,
                r#"<line class="boundary" x1="{:.2}" y1="{TOP}" x2="{:.2}" y2="{:.1}" stroke="gray" stroke-dasharray="2,3"/>"#,
                sx(v),
                sx(v),
                TOP + ph
            );
        }
        for (i, ser) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let label = escape(&ser.label);
            let finite: Vec<(usize, (f64, f64))> = ser
                .points
                .iter()
                .copied()
                .enumerate()
                .filter(|(_, (x, y))| x.is_finite() && y.is_finite())
                .collect();
            if let Some(band) = &ser.band {
                let upper = finite.iter().map(|&(j, (x, y))| (x, y + band[j].max(0.0)));
                let lower = finite.iter().rev().map(|&(j, (x, y))| (x, y - band[j].max(0.0)));
                let pts = fmt_points(upper.chain(lower), &sx, &sy);
                let _ = writeln!(
                    s,
                    r#"<polygon class="band" data-label="{label}" points="{pts}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#
                );
            }
            if self.scatter {
                for &(_, (x, y)) in &finite {
                    let _ = writeln!(
                        s,
                        r#"<circle class="point" data-label="{label}" cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#,
                        sx(x),
                        sy(y)
                    );
                }
            } else {
                let pts = fmt_points(finite.iter().map(|p| p.1), &sx, &sy);
                let _ = writeln!(
                    s,
                    r#"<polyline class="series" data-label="{label}" points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>"#
                );
            }
            let ly = TOP + 12.0 + 16.0 * i as f64;
            let lx = W - RIGHT + 12.0;
            let _ = writeln!(
                s,
                r#"<rect x="{lx}" y="{:.1}" width="12" height="4" fill="{color}"/><text x="{:.1}" y="{ly:.1}">{label}</text>"#,
                ly - 5.0,
                lx + 16.0
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

fn fmt_points(
    pts: impl Iterator<Item = (f64, f64)>,
    sx: &impl Fn(f64) -> f64,
    sy: &impl Fn(f64) -> f64,
) -> String {
    pts.map(|(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Mean over seeds of `value(record)` at each epoch index, skipping seeds
/// with no value at that epoch.
fn epoch_means(a: &RunArchive, value: impl Fn(&crate::diagnostics::MetricsRecord) -> Option<f64>) -> Vec<(f64, f64)> {
    let n = a.seeds.iter().map(|s| s.metrics.len()).max().unwrap_or(0);
    (0..n)
        .filter_map(|i| {
            let vals: Vec<f64> = a
                .seeds
                .iter()
                .filter_map(|s| s.metrics.get(i))
                .filter_map(&value)
                .collect();
            let epoch = a.seeds.iter().find_map(|s| s.metrics.get(i))?.epoch as f64;
            (!vals.is_empty()).then(|| (epoch, vals.iter().sum::<f64>() / vals.len() as f64))
        })
        .collect()
}

/// Epochs after which a new round starts, read from the first seed.
fn round_boundaries(a: &RunArchive) -> Vec<f64> {
    let Some(s) = a.seeds.first() else {
        return Vec::new();
    };
    s.metrics
        .windows(2)
        .filter(|w| w[0].round != w[1].round)
        .map(|w| w[0].epoch as f64 + 0.5)
        .collect()
}

/// Draws `kind` from `archives` into `out_dir` and returns the files written.
pub fn plot(
    archives: &[RunArchive],
    kind: PlotKind,
    metrics: &[Metric],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    if archives.is_empty() {
        return Err(HarnessError::Config("no archives to plot".into()));
    }
    if metrics.is_empty() && matches!(kind, PlotKind::MetricCurve | PlotKind::CorrelationScatter) {
        return Err(HarnessError::Config(format!(
            "{} needs at least one metric",
            kind.name()
        )));
    }
    let vlines = round_boundaries(&archives[0]);
    let mut figures: Vec<(String, Figure)> = Vec::new();
    match kind {
        PlotKind::EpochCurve => figures.push((
            "epoch_curve".into(),
            Figure {
                title: "Train reward per epoch".into(),
                x_label: "epoch".into(),
                y_label: "mean episode return".into(),
                series: archives
                    .iter()
                    .map(|a| Series {
                        label: a.method(),
                        points: epoch_means(a, |r| r.train_reward),
                        band: None,
                    })
                    .collect(),
                scatter: false,
                vlines,
            },
        )),
        PlotKind::RoundCurve => {
            let summary = analyze(archives)?;
            for train in [true, false] {
                let split = if train { "train" } else { "test" };
                figures.push((
                    format!("round_curve_{split}"),
                    Figure {
                        title: format!("Normalized {split} reward per round"),
                        x_label: "round".into(),
                        y_label: format!("{split} reward minus round 0"),
                        series: summary
                            .methods
                            .iter()
                            .map(|m| {
                                let (mean, se) = if train {
                                    (&m.round_train_mean, &m.round_train_se)
                                } else {
                                    (&m.round_test_mean, &m.round_test_se)
                                };
                                Series {
                                    label: m.method.clone(),
                                    points: mean.iter().enumerate().map(|(r, &y)| (r as f64, y)).collect(),
                                    band: Some(se.clone()),
                                }
                            })
                            .collect(),
                        scatter: false,
                        vlines: Vec::new(),
                    },
                ));
            }
        }
        PlotKind::MetricCurve => {
            for &m in metrics {
                figures.push((
                    format!("metric_{}", m.name()),
                    Figure {
                        title: format!("{} per epoch", m.name()),
                        x_label: "epoch".into(),
                        y_label: m.name().into(),
                        series: archives
                            .iter()
                            .map(|a| Series {
                                label: a.method(),
                                points: epoch_means(a, |r| Some(r.metric(m))),
                                band: None,
                            })
                            .collect(),
                        scatter: false,
                        vlines: vlines.clone(),
                    },
                ));
            }
        }
        PlotKind::CorrelationScatter => {
            let summary = analyze(archives)?;
            for &m in metrics {
                let j = Metric::ALL.iter().position(|&x| x == m).expect("metric listed in ALL");
                let r = summary
                    .correlations
                    .iter()
                    .find(|(x, _)| *x == m)
                    .and_then(|(_, c)| c.as_ref().ok())
                    .map_or_else(|| "r undefined".to_string(), |c| format!("r = {:.3}", c.r));
                figures.push((
                    format!("correlation_{}", m.name()),
                    Figure {
                        title: format!("Final {} against normalized train reward ({r})", m.name()),
                        x_label: format!("{} relative to first epoch", m.name()),
                        y_label: "normalized train reward".into(),
                        series: summary
                            .methods
                            .iter()
                            .map(|ms| Series {
                                label: ms.method.clone(),
                                points: summary
                                    .observations
                                    .iter()
                                    .filter(|o| o.method == ms.method)
                                    .map(|o| (o.metrics[j].1, o.train))
                                    .collect(),
                                band: None,
                            })
                            .collect(),
                        scatter: true,
                        vlines: Vec::new(),
                    },
                ));
            }
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let mut written = Vec::with_capacity(figures.len());
    for (name, fig) in figures {
        let path = out_dir.join(format!("{name}.svg"));
        fs::write(&path, fig.render()).map_err(|e| HarnessError::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in PlotKind::ALL {
            assert_eq!(k.name().parse::<PlotKind>().unwrap(), k);
        }
        assert_eq!("round-curve".parse::<PlotKind>().unwrap(), PlotKind::RoundCurve);
        assert!("histogram".parse::<PlotKind>().is_err());
    }

    #[test]
    fn labels_are_escaped() {
        assert_eq!(escape("a<b>&\"c\""), "a&lt;b&gt;&amp;&quot;c&quot;");
    }

    #[test]
    fn flat_range_is_widened() {
        assert_eq!(bounds([2.0, 2.0].into_iter()), (1.5, 2.5));
        assert_eq!(bounds(std::iter::empty()), (0.0, 1.0));
    }
}
