//! Sweeps over one configuration axis, optionally replicated over seeds.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

use super::config::{SweepAxis, SweepConfig, SweepPoint};
use super::format_number;
use super::run::{self, RunReport};

pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    /// `None` when the run could not even be set up.
    pub report: Option<RunReport>,
    pub error: Option<String>,
    pub failed_iteration: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub rows: Vec<SweepRow>,
    pub metric_columns: Vec<String>,
}

/// Mean and half-width of the two-sided 95% Student-t interval.
pub fn mean_ci95(values: &[f64]) -> Option<(f64, f64)> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).ok()?.inverse_cdf(0.975);
    Some((mean, t * (var / n as f64).sqrt()))
}

fn point_dir(root: &Path, axis: SweepAxis, p: &SweepPoint) -> PathBuf {
    match axis {
        SweepAxis::Seed => root.join(format!("seed_{}", p.seed)),
        _ => root.join(format!("{}_{}_seed_{}", axis.column(), format_number(p.value), p.seed)),
    }
}

fn execute_point(cfg: &SweepConfig, root: &Path, p: &SweepPoint) -> SweepRow {
    let mut run_cfg = p.config.clone();
    let dir = point_dir(root, cfg.sweep.sweep_axis, p);
    run_cfg.output = dir.to_string_lossy().into_owned();
    let outcome = run::execute(&run_cfg).and_then(|r| r.write(&dir).map(|_| r));
    match outcome {
        Ok(report) => SweepRow {
            value: p.value,
            seed: p.seed,
            error: report.error.as_ref().map(|e| e.message.clone()),
            failed_iteration: report.error.as_ref().and_then(|e| e.iteration),
            report: Some(report),
        },
        Err(e) => SweepRow {
            value: p.value,
            seed: p.seed,
            report: None,
            error: Some(e.to_string()),
            failed_iteration: e.iteration(),
        },
    }
}

/// Runs every sweep point, `jobs` at a time, and writes `sweep.csv` plus the
/// per-run directories below the base configuration's output directory.
/// Failed points are recorded and do not stop the sweep.
pub fn run_sweep(cfg: &SweepConfig, jobs: usize) -> Result<SweepReport> {
    let root = PathBuf::from(&cfg.base.output);
    std::fs::create_dir_all(&root)?;
    let points = cfg.points();
    let rows: Vec<SweepRow> = if jobs <= 1 {
        points.iter().map(|p| execute_point(cfg, &root, p)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Parameter(format!("cannot start {jobs} workers: {e}")))?;
        pool.install(|| points.par_iter().map(|p| execute_point(cfg, &root, p)).collect())
    };
    let mut metric_columns: Vec<String> = Vec::new();
    for row in &rows {
        if let Some(r) = &row.report {
            for (name, _) in r.final_scalars() {
                if !metric_columns.contains(&name) {
                    metric_columns.push(name);
                }
            }
        }
    }
    let report = SweepReport {
        config: cfg.clone(),
        rows,
        metric_columns,
    };
    report.write(&root.join(SWEEP_FILE))?;
    Ok(report)
}

impl SweepReport {
    pub fn aggregated(&self) -> bool {
        self.config.replicates() > 1
    }

    pub fn header(&self) -> Vec<String> {
        let axis = self.config.sweep.sweep_axis;
        let mut h = Vec::new();
        if axis != SweepAxis::Seed {
            h.push(axis.column().to_string());
        }
        h.extend(["seed", "status", "failed_iteration", "error"].map(String::from));
        h.extend(self.metric_columns.iter().cloned());
        if self.aggregated() {
            for c in &self.metric_columns {
                h.push(format!("{c}_mean"));
                h.push(format!("{c}_ci95"));
            }
        }
        h
    }

    fn group(&self, value: f64) -> Vec<&SweepRow> {
        let by_seed = self.config.sweep.sweep_axis == SweepAxis::Seed;
        self.rows
            .iter()
            .filter(|r| by_seed || r.value.to_bits() == value.to_bits())
            .collect()
    }

    /// Final value of `column` for each successful run at this axis value.
    pub fn successful_values(&self, value: f64, column: &str) -> Vec<f64> {
        self.group(value)
            .into_iter()
            .filter(|r| r.error.is_none())
            .filter_map(|r| r.report.as_ref()?.final_value(column))
            .collect()
    }

    pub fn records(&self) -> Vec<Vec<String>> {
        let axis = self.config.sweep.sweep_axis;
        self.rows
            .iter()
            .map(|row| {
                let mut rec = Vec::new();
                if axis != SweepAxis::Seed {
                    rec.push(format_number(row.value));
                }
                rec.push(row.seed.to_string());
                rec.push(if row.error.is_none() { "completed" } else { "failed" }.to_string());
                rec.push(row.failed_iteration.map(|i| i.to_string()).unwrap_or_default());
                rec.push(row.error.clone().unwrap_or_default());
                for c in &self.metric_columns {
                    let v = row.report.as_ref().and_then(|r| r.final_value(c));
                    rec.push(v.map(format_number).unwrap_or_default());
                }
                if self.aggregated() {
                    for c in &self.metric_columns {
                        match mean_ci95(&self.successful_values(row.value, c)) {
                            Some((m, ci)) => {
                                rec.push(format_number(m));
                                rec.push(format_number(ci));
                            }
                            None => {
                                rec.push(String::new());
                                rec.push(String::new());
                            }
                        }
                    }
                }
                rec
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.header())?;
        for rec in self.records() {
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn all_succeeded(&self) -> bool {
        self.rows.iter().all(|r| r.error.is_none())
    }
}

#[cfg(test)]
mod tests {
    use super::mean_ci95;

    #[test]
    fn ci_matches_t_table() {
        // t_{0.975, 4} = 2.776445
        let (m, ci) = mean_ci95(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(m, 3.0);
        assert!((ci - 2.776445 * (2.5f64 / 5.0).sqrt()).abs() < 1e-5);
        assert!(mean_ci95(&[1.0]).is_none());
    }
}
