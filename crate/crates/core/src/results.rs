//! Experiment records and their CSV form.

use std::io::Write;

use crate::error::{Error, Result};

pub const RESULT_HEADER: [&str; 8] = [
    "ratio",
    "gamma",
    "metric",
    "empirical_mean",
    "empirical_stderr",
    "theory",
    "trials",
    "status",
];

/// Row status when everything succeeded.
pub const STATUS_OK: &str = "ok";

/// One sweep point of one metric.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub ratio: f64,
    pub gamma: f64,
    pub metric: String,
    pub empirical_mean: Option<f64>,
    pub empirical_stderr: Option<f64>,
    /// `None` when the closed form is singular or not defined here.
    pub theory: Option<f64>,
    /// Number of trials that contributed to the empirical statistics.
    pub trials: usize,
    pub status: String,
}

impl ResultRow {
    /// Absolute gap between the empirical mean and the theory, when both exist.
    pub fn deviation(&self) -> Option<f64> {
        Some((self.empirical_mean? - self.theory?).abs())
    }
}

/// Formats with nine significant digits; empty for missing values.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.8e}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_sig9).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io { path: "<csv>".into(), source: e.into() }
}

pub fn write_rows<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            fmt_sig9(r.ratio),
            fmt_sig9(r.gamma),
            r.metric.clone(),
            fmt_opt(r.empirical_mean),
            fmt_opt(r.empirical_stderr),
            fmt_opt(r.theory),
            r.trials.to_string(),
            r.status.clone(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Io { path: "<csv>".into(), source: e })
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
