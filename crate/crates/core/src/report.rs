//! Stage statistics aggregation and logarithmic curve fitting over
//! checkpoint metrics.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::StageStats;
use crate::error::{Error, Result};

/// Checkpoint metric points with strictly increasing positive x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    points: Vec<(f64, f64)>,
}

impl MetricSeries {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        for (i, &(x, y)) in points.iter().enumerate() {
            if !(x.is_finite() && x > 0.0) || !y.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "point {i} ({x}, {y}) needs finite y and positive x"
                )));
            }
            if i > 0 && x <= points[i - 1].0 {
                return Err(Error::InvalidConfig(format!(
                    "x must be strictly increasing at point {i}"
                )));
            }
        }
        Ok(MetricSeries { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Splits into the first `n` points and the rest.
    pub fn split_at(&self, n: usize) -> (&[(f64, f64)], &[(f64, f64)]) {
        self.points.split_at(n.min(self.points.len()))
    }

    /// Two numeric columns (tokens, metric); a non-numeric first line is
    /// taken as a header.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed = match fields.as_slice() {
                [x, y] => x.parse::<f64>().ok().zip(y.parse::<f64>().ok()),
                _ => None,
            };
            match parsed {
                Some(p) => points.push(p),
                None if i == 0 => continue,
                None => {
                    return Err(Error::Parse {
                        path: "<csv>".into(),
                        line: i + 1,
                        message: format!("expected two numbers, got {line:?}"),
                    })
                }
            }
        }
        MetricSeries::new(points)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        MetricSeries::from_csv(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other,
        })
    }
}

/// `y = a + b ln(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogFit {
    pub a: f64,
    pub b: f64,
    pub rss: f64,
}

impl LogFit {
    pub fn eval(&self, x: f64) -> Result<f64> {
        extrapolate(self, x)
    }
}

/// Ordinary least squares in `ln x`, solved in closed form on centered
/// data.
pub fn fit_log_curve(points: &[(f64, f64)]) -> Result<LogFit> {
    if points.len() < 2 {
        return Err(Error::DegenerateFit(format!(
            "{} point(s); need at least 2",
            points.len()
        )));
    }
    if let Some(&(x, _)) = points.iter().find(|(x, _)| !(*x > 0.0)) {
        return Err(Error::Domain(x));
    }
    let n = points.len() as f64;
    let u: Vec<f64> = points.iter().map(|(x, _)| x.ln()).collect();
    let u_mean = u.iter().sum::<f64>() / n;
    let y_mean = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (ui, (_, y)) in u.iter().zip(points) {
        sxx += (ui - u_mean) * (ui - u_mean);
        sxy += (ui - u_mean) * (y - y_mean);
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all x values are equal".into()));
    }
    let b = sxy / sxx;
    let a = y_mean - b * u_mean;
    let rss = u
        .iter()
        .zip(points)
        .map(|(ui, (_, y))| (y - a - b * ui).powi(2))
        .sum();
    Ok(LogFit { a, b, rss })
}

pub fn fit_series(series: &MetricSeries) -> Result<LogFit> {
    fit_log_curve(series.points())
}

pub fn extrapolate(fit: &LogFit, x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(x));
    }
    Ok(fit.a + fit.b * x.ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub stages: Vec<StageStats>,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub cumulative_survival: f64,
    pub cumulative_removal: f64,
}

/// Chains per-stage stats; each stage must receive exactly the tokens its
/// predecessor emitted.
pub fn aggregate_stats(stages: &[StageStats]) -> Result<PipelineReport> {
    for w in stages.windows(2) {
        if w[0].tokens_out != w[1].tokens_in {
            return Err(Error::InconsistentStats {
                from: w[0].stage.clone(),
                to: w[1].stage.clone(),
                tokens_out: w[0].tokens_out,
                tokens_in: w[1].tokens_in,
            });
        }
    }
    let survival: f64 = stages.iter().map(StageStats::survival_fraction).product();
    Ok(PipelineReport {
        stages: stages.to_vec(),
        tokens_in: stages.first().map_or(0, |s| s.tokens_in),
        tokens_out: stages.last().map_or(0, |s| s.tokens_out),
        cumulative_survival: survival,
        cumulative_removal: 1.0 - survival,
    })
}

impl PipelineReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>10} {:>10} {:>14} {:>14} {:>9}",
            "stage", "docs_in", "docs_out", "tokens_in", "tokens_out", "removed"
        );
        for s in &self.stages {
            let _ = writeln!(
                out,
                "{:<16} {:>10} {:>10} {:>14} {:>14} {:>8.2}%",
                s.stage,
                s.docs_in,
                s.docs_out,
                s.tokens_in,
                s.tokens_out,
                100.0 * s.removal_fraction
            );
        }
        let _ = writeln!(
            out,
            "{:<16} {:>10} {:>10} {:>14} {:>14} {:>8.2}%",
            "total",
            "",
            "",
            self.tokens_in,
            self.tokens_out,
            100.0 * self.cumulative_removal
        );
        out
    }
}
