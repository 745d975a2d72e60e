//! Runs one experiment per `κD` and fits log-log growth rates.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::harness::experiment::{run_experiment, Report};

pub const COLUMNS: [&str; 10] = ["kappa_D", "N", "T_c", "T_m", "T_p", "T_t", "M_Q", "M_m", "nnz", "eps_a"];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    #[serde(rename = "kappa_D")]
    pub kappa_d: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T_c")]
    pub t_c: f64,
    #[serde(rename = "T_m")]
    pub t_m: f64,
    #[serde(rename = "T_p")]
    pub t_p: f64,
    #[serde(rename = "T_t")]
    pub t_t: f64,
    #[serde(rename = "M_Q")]
    pub m_q: usize,
    #[serde(rename = "M_m")]
    pub m_m: usize,
    pub nnz: usize,
    pub eps_a: f64,
}

impl From<&Report> for SweepRow {
    fn from(r: &Report) -> Self {
        Self {
            kappa_d: r.config.kappa_d,
            n: r.n,
            t_c: r.t_c,
            t_m: r.t_m,
            t_p: r.t_p,
            t_t: r.t_t,
            m_q: r.m_q,
            m_m: r.m_m,
            nnz: r.nnz,
            eps_a: r.eps_a,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    pub reports: Vec<Report>,
    /// `(κD, message)` of runs that failed.
    pub failures: Vec<(f64, String)>,
    pub nnz_slope: f64,
    pub t_m_slope: f64,
}

/// Least-squares slope of `ln y` against `ln x`; NaN with fewer than two
/// distinct abscissae.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        f64::NAN
    } else {
        sxy / sxx
    }
}

/// One run per entry of `kappa_ds`; a failing run is recorded and the
/// sweep moves on.
pub fn sweep(base: &ExperimentConfig, kappa_ds: &[f64]) -> Sweep {
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for &kd in kappa_ds {
        let cfg = ExperimentConfig {
            kappa_d: kd,
            output: None,
            ..base.clone()
        };
        match run_experiment(&cfg) {
            Ok(r) => reports.push(r),
            Err(e) => failures.push((kd, e.to_string())),
        }
    }
    let rows: Vec<SweepRow> = reports.iter().map(SweepRow::from).collect();
    let n: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let nnz: Vec<f64> = rows.iter().map(|r| r.nnz as f64).collect();
    let t_m: Vec<f64> = rows.iter().map(|r| r.t_m).collect();
    Sweep {
        nnz_slope: loglog_slope(&n, &nnz),
        t_m_slope: loglog_slope(&n, &t_m),
        rows,
        reports,
        failures,
    }
}

impl Sweep {
    /// Header and one row per successful run, followed by `#` lines with
    /// the fitted slopes and any failures.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(COLUMNS)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        let mut out = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
        writeln!(out, "# nnz_slope,{}", self.nnz_slope)?;
        writeln!(out, "# T_m_slope,{}", self.t_m_slope)?;
        for (kd, msg) in &self.failures {
            writeln!(out, "# failed,{kd},{}", msg.replace('\n', " "))?;
        }
        Ok(())
    }
}
