//! Chain records, autocorrelation, effective sample size and the
//! per-method efficiency summary.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::SolveCounts;
use crate::prior::Coefficients;
use crate::samplers::{SamplerConfig, Transition};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("series has {0} values; need at least 2")]
    TooShort(usize),
    #[error("series has zero variance")]
    Degenerate,
    #[error("series contains a non-finite value at {0}")]
    NonFinite(usize),
    #[error("baseline {0:?} is not among the summarised methods")]
    MissingBaseline(String),
    #[error("no records to summarise")]
    Empty,
    #[error("no samples were kept for {0}")]
    NoSamples(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Everything recorded about one chain. Per-iteration vectors cover all
/// iterations, burn-in included; `samples` holds post-burn-in states only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainRecord {
    pub label: String,
    pub config: SamplerConfig,
    pub seed: u64,
    pub burn_in: usize,
    pub misfit: Vec<f64>,
    pub accepted: Vec<bool>,
    pub accept_prob: Vec<f64>,
    pub solver_failed: Vec<bool>,
    pub leapfrog_steps: Vec<usize>,
    pub samples: Vec<Vec<f64>>,
    /// Step in force after burn-in (differs from the configured one when
    /// adapted).
    pub final_step: f64,
    pub solve_counts: SolveCounts,
    pub burn_in_seconds: f64,
    pub sampling_seconds: f64,
}

impl ChainRecord {
    pub fn new(label: String, config: SamplerConfig, seed: u64, burn_in: usize) -> Self {
        Self {
            label,
            config,
            seed,
            burn_in,
            misfit: Vec::new(),
            accepted: Vec::new(),
            accept_prob: Vec::new(),
            solver_failed: Vec::new(),
            leapfrog_steps: Vec::new(),
            samples: Vec::new(),
            final_step: config.step,
            solve_counts: SolveCounts::default(),
            burn_in_seconds: 0.0,
            sampling_seconds: 0.0,
        }
    }

    pub fn reserve(&mut self, n: usize) {
        self.misfit.reserve(n);
        self.accepted.reserve(n);
        self.accept_prob.reserve(n);
        self.solver_failed.reserve(n);
        self.leapfrog_steps.reserve(n);
    }

    pub fn push(&mut self, misfit: f64, t: &Transition, state: Option<&Coefficients>) {
        self.misfit.push(misfit);
        self.accepted.push(t.accepted);
        self.accept_prob.push(t.accept_probability());
        self.solver_failed.push(t.solver_failed);
        self.leapfrog_steps.push(t.leapfrog_steps);
        if let Some(u) = state {
            self.samples.push(u.as_slice().to_vec());
        }
    }

    pub fn iterations(&self) -> usize {
        self.accepted.len()
    }

    /// Post-burn-in iterations.
    pub fn kept(&self) -> usize {
        self.iterations().saturating_sub(self.burn_in)
    }

    /// Fraction of post-burn-in proposals accepted.
    pub fn acceptance_rate(&self) -> f64 {
        let kept = &self.accepted[self.burn_in.min(self.accepted.len())..];
        if kept.is_empty() {
            return f64::NAN;
        }
        kept.iter().filter(|&&a| a).count() as f64 / kept.len() as f64
    }

    pub fn failures(&self) -> usize {
        self.solver_failed.iter().filter(|&&f| f).count()
    }

    pub fn sec_per_iter(&self) -> f64 {
        self.sampling_seconds / self.kept() as f64
    }

    /// Post-burn-in series of coordinate `j`.
    pub fn component(&self, j: usize) -> Vec<f64> {
        self.samples.iter().map(|u| u[j]).collect()
    }

    /// Writes `iter,misfit,accepted,accept_prob,leapfrog_steps,solver_failed`.
    /// Contains no timing, so identical seeds give identical files.
    pub fn write_trace<W: Write>(&self, out: W) -> Result<(), DiagnosticsError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "iter",
            "misfit",
            "accepted",
            "accept_prob",
            "leapfrog_steps",
            "solver_failed",
        ])?;
        for t in 0..self.iterations() {
            w.write_record([
                (t + 1).to_string(),
                format!("{:e}", self.misfit[t]),
                u8::from(self.accepted[t]).to_string(),
                format!("{:e}", self.accept_prob[t]),
                self.leapfrog_steps[t].to_string(),
                u8::from(self.solver_failed[t]).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes post-burn-in states, one row per iteration, `u_0..u_{n−1}`.
    pub fn write_samples<W: Write>(&self, out: W) -> Result<(), DiagnosticsError> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.samples.first().map_or(0, Vec::len);
        let mut header = vec!["iter".to_string()];
        header.extend((0..n).map(|j| format!("u_{j}")));
        w.write_record(&header)?;
        for (k, u) in self.samples.iter().enumerate() {
            let mut row = vec![(self.burn_in + k + 1).to_string()];
            row.extend(u.iter().map(|v| format!("{v:e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn centred(series: &[f64]) -> Result<(Vec<f64>, f64), DiagnosticsError> {
    if series.len() < 2 {
        return Err(DiagnosticsError::TooShort(series.len()));
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(DiagnosticsError::NonFinite(i));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let c: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let var = c.iter().map(|v| v * v).sum::<f64>() / n;
    let scale = mean.abs().max(1.0);
    if var <= (f64::EPSILON * scale).powi(2) {
        return Err(DiagnosticsError::Degenerate);
    }
    Ok((c, var))
}

fn acf_lag(c: &[f64], var: f64, k: usize) -> f64 {
    let n = c.len();
    let s: f64 = c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum();
    s / (n as f64 * var)
}

/// Biased sample autocorrelation `ρ̂_0..=ρ̂_max_lag` (normalised by `N`).
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>, DiagnosticsError> {
    if max_lag >= series.len() {
        return Err(DiagnosticsError::TooShort(series.len()));
    }
    let (c, var) = centred(series)?;
    Ok((0..=max_lag).map(|k| acf_lag(&c, var, k)).collect())
}

/// Effective sample size with Geyer's initial positive sequence estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ess {
    pub ess: f64,
    /// Integrated autocorrelation time `τ = −1 + 2 Σ_k (ρ̂_{2k} + ρ̂_{2k+1})`.
    pub tau: f64,
    /// Number of pairs summed.
    pub pairs: usize,
}

impl Ess {
    /// Antithetic chains can give `ESS > N`; reported as is, but flagged.
    pub fn super_efficient(&self, n: usize) -> bool {
        self.ess > n as f64
    }
}

pub fn ess(series: &[f64]) -> Result<Ess, DiagnosticsError> {
    let (c, var) = centred(series)?;
    let n = c.len();
    let mut sum = 0.0;
    let mut pairs = 0;
    let mut k = 0;
    while k + 1 < n {
        let gamma = acf_lag(&c, var, k) + acf_lag(&c, var, k + 1);
        if gamma <= 0.0 {
            break;
        }
        sum += gamma;
        pairs += 1;
        k += 2;
    }
    // A single pair sum never goes below ρ̂_0 + ρ̂_1 ≥ 0; keep τ positive.
    let tau = (2.0 * sum - 1.0).max(1.0 / n as f64);
    Ok(Ess {
        ess: n as f64 / tau,
        tau,
        pairs,
    })
}

/// One summary row per chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub ap: f64,
    pub sec_per_iter: f64,
    pub ess_min: f64,
    pub ess_med: f64,
    pub ess_max: f64,
    pub min_ess_per_sec: f64,
    pub speedup: f64,
    pub pde_solves: u64,
}

/// ESS of every coordinate; degenerate coordinates (the chain never moved)
/// count as zero.
pub fn component_ess(record: &ChainRecord) -> Result<Vec<f64>, DiagnosticsError> {
    if record.samples.is_empty() {
        return Err(DiagnosticsError::NoSamples(record.label.clone()));
    }
    let n = record.samples[0].len();
    (0..n)
        .map(|j| match ess(&record.component(j)) {
            Ok(e) => Ok(e.ess),
            Err(DiagnosticsError::Degenerate) => {
                log::warn!("{}: coordinate {j} never moved", record.label);
                Ok(0.0)
            }
            Err(e) => Err(e),
        })
        .collect()
}

/// What the summary needs from one chain; small enough to store next to the
/// traces so that `summarize` can be rerun without the samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub label: String,
    pub seed: u64,
    pub ap: f64,
    pub kept: usize,
    pub failures: usize,
    pub final_step: f64,
    pub ess: Vec<f64>,
    pub solve_counts: SolveCounts,
    /// Wall-clock timing; the only non-reproducible fields.
    pub burn_in_seconds: f64,
    pub sampling_seconds: f64,
}

impl ChainStats {
    pub fn from_record(record: &ChainRecord) -> Result<Self, DiagnosticsError> {
        Ok(Self {
            label: record.label.clone(),
            seed: record.seed,
            ap: record.acceptance_rate(),
            kept: record.kept(),
            failures: record.failures(),
            final_step: record.final_step,
            ess: component_ess(record)?,
            solve_counts: record.solve_counts,
            burn_in_seconds: record.burn_in_seconds,
            sampling_seconds: record.sampling_seconds,
        })
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Builds the table; `speedup` is each row's `min_ess_per_sec` over that of
/// the row labelled `baseline`.
pub fn summarize(records: &[ChainRecord], baseline: &str) -> Result<Vec<SummaryRow>, DiagnosticsError> {
    let stats = records
        .iter()
        .map(ChainStats::from_record)
        .collect::<Result<Vec<_>, _>>()?;
    summarize_stats(&stats, baseline)
}

pub fn summarize_stats(stats: &[ChainStats], baseline: &str) -> Result<Vec<SummaryRow>, DiagnosticsError> {
    if stats.is_empty() {
        return Err(DiagnosticsError::Empty);
    }
    if !stats.iter().any(|r| r.label == baseline) {
        return Err(DiagnosticsError::MissingBaseline(baseline.into()));
    }
    let mut rows = Vec::with_capacity(stats.len());
    for r in stats {
        if r.ess.is_empty() {
            return Err(DiagnosticsError::NoSamples(r.label.clone()));
        }
        let mut e = r.ess.clone();
        e.sort_by(|a, b| a.total_cmp(b));
        let ess_min = e[0];
        rows.push(SummaryRow {
            method: r.label.clone(),
            ap: r.ap,
            sec_per_iter: r.sampling_seconds / r.kept as f64,
            ess_min,
            ess_med: median(&e),
            ess_max: e[e.len() - 1],
            min_ess_per_sec: ess_min / r.sampling_seconds,
            speedup: f64::NAN,
            pde_solves: r.solve_counts.total(),
        });
    }
    let base = rows
        .iter()
        .find(|r| r.method == baseline)
        .map_or(f64::NAN, |r| r.min_ess_per_sec);
    for row in &mut rows {
        row.speedup = if row.method == baseline {
            1.0
        } else {
            row.min_ess_per_sec / base
        };
    }
    Ok(rows)
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<(), DiagnosticsError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `summary.csv` and its JSON mirror `summary.json` into `dir`.
pub fn write_summary(rows: &[SummaryRow], dir: &Path) -> Result<(), DiagnosticsError> {
    write_summary_csv(rows, std::fs::File::create(dir.join("summary.csv"))?)?;
    let json = serde_json::to_string_pretty(rows)?;
    std::fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn acf_of_alternating_series() {
        let x: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = autocorrelation(&x, 2).unwrap();
        assert_eq!(r[0], 1.0);
        assert!((r[1] + 0.999).abs() < 1e-12);
        assert!((r[2] - 0.998).abs() < 1e-12);
    }

    #[test]
    fn constant_series_is_degenerate() {
        assert!(matches!(ess(&[2.0; 50]), Err(DiagnosticsError::Degenerate)));
        assert!(matches!(ess(&[1.0]), Err(DiagnosticsError::TooShort(1))));
        assert!(matches!(ess(&[1.0, f64::NAN]), Err(DiagnosticsError::NonFinite(1))));
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[1.0, 2.0, 4.0]), 2.0);
        assert_eq!(median(&[1.0, 2.0, 4.0, 8.0]), 3.0);
    }
}
