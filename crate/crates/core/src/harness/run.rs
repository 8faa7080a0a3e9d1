//! Single seeded runs: problem assembly, metric logging and artifacts.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::dynamics::StepSchedule;
use crate::dynamics::{self, AdaptiveParams, Method, MethodConfig, Monitor, RunOptions, RunRecord, ScheduleKind};
use crate::ensemble::{sample_gaussian, Ensemble, ScoreModel};
use crate::error::{Error, Result};
use crate::kernels::{median_heuristic, KernelSpec};
use crate::metrics;
use crate::rng::Rng;
use crate::targets::{self, GaussianMixture, GpProblemSpec, InverseProblem, OdeProblemSpec};

use super::config::{BandwidthPolicy, InitPolicy, MethodName, MetricName, Preset, RunConfig};
use super::format_number;

/// Size of the exact reference sample for `w1_1d`.
pub const W1_REFERENCE_SIZE: usize = 100_000;

/// Mixed into the run seed to obtain the problem/reference stream when
/// `reference_seed` is not set, so initial particles and reference draws
/// are independent.
pub const REFERENCE_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

pub const TRACE_FILE: &str = "trace.csv";
pub const PARTICLES_FILE: &str = "final_particles.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// A target together with everything the metrics need.
pub struct Problem {
    pub model: ScoreModel,
    pub dim: usize,
    /// Standard deviations of the independent zero-mean initial Gaussian.
    pub init_sds: Vec<f64>,
    /// Sorted exact sample for the 1D Wasserstein distance.
    pub w1_reference: Option<Vec<f64>>,
    /// Diagonal target precision for the χ² statistic.
    pub chi2_precision: Option<Vec<f64>>,
    pub inverse: Option<InverseProblem>,
}

impl Problem {
    pub fn target_marginal_variances(&self) -> Option<Vec<f64>> {
        self.model.gaussian_info().map(|g| g.covariance.diagonal())
    }

    pub fn target_cov_trace(&self) -> Option<f64> {
        self.model.gaussian_info().map(|g| g.covariance.trace())
    }
}

pub fn reference_rng(cfg: &RunConfig) -> Rng {
    Rng::new(cfg.reference_seed.unwrap_or(cfg.seed ^ REFERENCE_STREAM))
}

pub fn build_problem(cfg: &RunConfig) -> Result<Problem> {
    let mut rrng = reference_rng(cfg);
    let d = cfg.dimension();
    let (model, w1_reference, chi2_precision, inverse) = match cfg.preset {
        Preset::Mixture1d => {
            let gm = GaussianMixture::two_component();
            let reference = cfg
                .metrics
                .contains(&MetricName::W1_1d)
                .then(|| metrics::sorted(&gm.sample(&mut rrng, W1_REFERENCE_SIZE)));
            (ScoreModel::new(gm, "mixture1d"), reference, None, None)
        }
        Preset::GaussDiag => {
            let decay = cfg.variance_decay.unwrap_or_default();
            let model = targets::diag_gaussian_target(d, decay)?;
            let precision = targets::scaling_variances(d, decay).iter().map(|v| 1.0 / v).collect();
            (model, None, Some(precision), None)
        }
        Preset::OdeInverse => {
            let spec = OdeProblemSpec {
                mesh_exponent: cfg.mesh_exponent.unwrap_or(8),
                n_obs: cfg.n_obs.unwrap_or(256),
                n_x: d,
                ..OdeProblemSpec::default()
            };
            let prob = targets::build_ode_problem(&spec, &mut rrng)?;
            let model = prob.problem.clone().into_model(format!("ode-inverse(n_x={d})"))?;
            (model, None, None, Some(prob))
        }
        Preset::GpInfer => {
            let spec = GpProblemSpec {
                n_x: d,
                n_y: cfg.n_y.unwrap_or(64),
                ..GpProblemSpec::default()
            };
            let prob = targets::build_gp_problem(&spec, &mut rrng)?;
            let model = prob.problem.clone().into_model(format!("gp-infer({d},{})", spec.n_y))?;
            (model, None, None, Some(prob))
        }
    };
    let init_sds = match cfg.init {
        InitPolicy::StandardNormal => vec![1.0; d],
        InitPolicy::InverseDim => vec![(1.0 / d as f64).sqrt(); d],
        InitPolicy::Prior => match &inverse {
            Some(p) => p.problem.prior_var().iter().map(|v| v.sqrt()).collect(),
            None => {
                return Err(Error::Config(vec![format!(
                    "init = \"prior\" needs an inverse problem; preset {} has no prior",
                    cfg.preset.name()
                )]))
            }
        },
    };
    Ok(Problem {
        model,
        dim: d,
        init_sds,
        w1_reference,
        chi2_precision,
        inverse,
    })
}

pub fn initial_ensemble(cfg: &RunConfig, problem: &Problem, rng: &mut Rng) -> Result<Ensemble> {
    sample_gaussian(rng, cfg.particles, &vec![0.0; problem.dim], &problem.init_sds)
}

pub fn initial_kernel(cfg: &RunConfig, ens: &Ensemble) -> Result<KernelSpec> {
    let d = ens.d();
    match &cfg.bandwidth {
        BandwidthPolicy::Median => {
            let h = median_heuristic(ens, cfg.p, cfg.median_norm.unwrap_or_default())?;
            KernelSpec::uniform(cfg.kernel, d, cfg.p, h)
        }
        BandwidthPolicy::Fixed(h) => KernelSpec::uniform(cfg.kernel, d, cfg.p, *h),
        BandwidthPolicy::Vector(hs) => KernelSpec::product(cfg.p, hs),
    }
}

pub fn method_config(cfg: &RunConfig) -> MethodConfig {
    let method = match cfg.method {
        MethodName::Fixed => Method::FixedBandwidth,
        MethodName::Median => Method::MedianHeuristic {
            refresh_every: cfg.median_refresh_every.unwrap_or(1),
            norm: cfg.median_norm.unwrap_or_default(),
        },
        MethodName::Adaptive => {
            let defaults = AdaptiveParams::default();
            Method::Adaptive(AdaptiveParams {
                step: cfg.ksd_step.unwrap_or(defaults.step),
                nstepstheta: cfg.nstepstheta.unwrap_or(defaults.nstepstheta),
                paramupdate_every: cfg.paramupdate_every.unwrap_or(defaults.paramupdate_every),
                param_space: cfg.param_space.unwrap_or_default(),
                subsample: cfg.subsample,
            })
        }
    };
    MethodConfig {
        method,
        estimator: cfg.estimator,
        exec: cfg.exec,
    }
}

pub fn step_schedule(cfg: &RunConfig) -> Result<StepSchedule> {
    match cfg.schedule {
        ScheduleKind::Fixed => StepSchedule::fixed(cfg.gamma),
        ScheduleKind::AdaGrad => StepSchedule::adagrad(
            cfg.gamma,
            cfg.adagrad_alpha.unwrap_or(dynamics::DEFAULT_ADAGRAD_ALPHA),
            cfg.adagrad_fudge.unwrap_or(dynamics::DEFAULT_ADAGRAD_FUDGE),
        ),
    }
}

/// Evaluates the configured particle metrics on logged iterations.
pub struct MetricMonitor<'a> {
    problem: &'a Problem,
    metrics: Vec<MetricName>,
}

impl<'a> MetricMonitor<'a> {
    pub fn new(problem: &'a Problem, metrics: &[MetricName]) -> Self {
        Self {
            problem,
            metrics: metrics.to_vec(),
        }
    }

    fn wants(&self, m: MetricName) -> bool {
        self.metrics.contains(&m)
    }
}

impl Monitor for MetricMonitor<'_> {
    fn columns(&self) -> Vec<String> {
        let mut cols = Vec::new();
        for m in [
            MetricName::W1_1d,
            MetricName::BuresW2,
            MetricName::Chi2,
            MetricName::CovTrace,
        ] {
            if self.wants(m) {
                cols.push(m.name().to_string());
            }
        }
        if self.wants(MetricName::MarginalVar) {
            cols.extend((1..=self.problem.dim).map(|i| format!("var_{i}")));
        }
        cols
    }

    fn evaluate(&mut self, ens: &Ensemble, _spec: &KernelSpec) -> Result<Vec<f64>> {
        let needs_moments = [MetricName::BuresW2, MetricName::CovTrace, MetricName::MarginalVar]
            .iter()
            .any(|m| self.wants(*m));
        let moments = if needs_moments {
            Some(metrics::moment_summary(ens)?)
        } else {
            None
        };
        let mut out = Vec::new();
        if self.wants(MetricName::W1_1d) {
            let reference = self
                .problem
                .w1_reference
                .as_ref()
                .ok_or_else(|| Error::Parameter("w1_1d needs a reference sample".into()))?;
            out.push(metrics::wasserstein1_1d(&metrics::sorted(&ens.column(0)), reference)?);
        }
        if self.wants(MetricName::BuresW2) {
            let g = self
                .problem
                .model
                .gaussian_info()
                .ok_or_else(|| Error::Parameter("bures_w2 needs a Gaussian target".into()))?;
            let m = moments.as_ref().expect("moments computed");
            out.push(metrics::bures_w2(&m.mean, &m.covariance, &g.mean, &g.covariance)?);
        }
        if self.wants(MetricName::Chi2) {
            let prec = self
                .problem
                .chi2_precision
                .as_ref()
                .ok_or_else(|| Error::Parameter("chi2 needs a diagonal Gaussian target".into()))?;
            out.push(metrics::chi2_statistic(ens, prec)?);
        }
        if self.wants(MetricName::CovTrace) {
            out.push(moments.as_ref().expect("moments computed").trace);
        }
        if self.wants(MetricName::MarginalVar) {
            out.extend_from_slice(&moments.as_ref().expect("moments computed").marginal_variances);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunError {
    pub message: String,
    pub iteration: Option<usize>,
}

/// Everything a run produced, before it is written anywhere.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: RunConfig,
    pub record: RunRecord,
    /// Final ensemble, or the last finite one if the run failed.
    pub ensemble: Option<Ensemble>,
    pub bandwidths: Vec<f64>,
    pub error: Option<RunError>,
    pub wall_time_ms: f64,
    pub target_marginal_var: Option<Vec<f64>>,
    pub target_cov_trace: Option<f64>,
    trace_header: Vec<String>,
}

impl RunReport {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }

    pub fn trace_header(&self) -> &[String] {
        &self.trace_header
    }

    pub fn particles_header(&self) -> Vec<String> {
        (1..=self.config.dimension()).map(|i| format!("x_{i}")).collect()
    }

    /// Trace rows as numbers, aligned with [`RunReport::trace_header`].
    pub fn trace_rows(&self) -> Vec<Vec<f64>> {
        let cfg = &self.config;
        let want_ksd = cfg.metrics.contains(&MetricName::Ksd2);
        let want_h = cfg.metrics.contains(&MetricName::Bandwidths);
        self.record
            .rows
            .iter()
            .map(|r| {
                let mut row = vec![r.iteration as f64];
                if want_ksd {
                    row.push(r.ksd2.unwrap_or(f64::NAN));
                }
                if !cfg.max_ksd_scales.is_empty() {
                    row.push(r.max_ksd2.unwrap_or(f64::NAN));
                }
                if want_h {
                    row.extend_from_slice(&r.bandwidths);
                }
                row.extend_from_slice(&r.metrics);
                if cfg.trace_wall_time {
                    row.push(r.wall_ms);
                }
                row
            })
            .collect()
    }

    /// Metric values at the last logged iteration, by trace column name.
    pub fn final_value(&self, column: &str) -> Option<f64> {
        let idx = self.trace_header.iter().position(|c| c == column)?;
        self.trace_rows().last().map(|r| r[idx])
    }

    /// Final scalar metrics in trace-column order (iteration and wall time excluded).
    pub fn final_scalars(&self) -> Vec<(String, f64)> {
        let rows = self.trace_rows();
        let Some(last) = rows.last() else {
            return Vec::new();
        };
        self.trace_header
            .iter()
            .zip(last)
            .filter(|(c, _)| c.as_str() != "iteration" && c.as_str() != "wall_ms")
            .map(|(c, v)| (c.clone(), *v))
            .collect()
    }

    pub fn final_marginal_variances(&self) -> Option<Vec<f64>> {
        (1..=self.config.dimension())
            .map(|i| self.final_value(&format!("var_{i}")))
            .collect()
    }

    pub fn summary_json(&self) -> Value {
        let mut finals = Map::new();
        for (name, v) in self.final_scalars() {
            finals.insert(name, json_number(v));
        }
        let mut reference = Map::new();
        if let Some(v) = &self.target_marginal_var {
            reference.insert(
                "target_marginal_var".into(),
                Value::Array(v.iter().map(|x| json_number(*x)).collect()),
            );
        }
        if let Some(t) = self.target_cov_trace {
            reference.insert("target_cov_trace".into(), json_number(t));
        }
        let last_iteration = self.record.rows.last().map(|r| r.iteration);
        json!({
            "status": if self.succeeded() { "completed" } else { "failed" },
            "error": self.error,
            "seed": self.config.seed,
            "wall_time_ms": self.wall_time_ms,
            "last_logged_iteration": last_iteration,
            "final_metrics": finals,
            "final_bandwidths": self.bandwidths.iter().map(|x| json_number(*x)).collect::<Vec<_>>(),
            "reference": reference,
            "columns": {
                TRACE_FILE: self.trace_header,
                PARTICLES_FILE: self.particles_header(),
            },
            "config": serde_json::to_value(&self.config).expect("config serializes"),
            "config_toml": self.config.to_toml(),
        })
    }

    /// Writes `trace.csv`, `final_particles.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(TRACE_FILE))?;
        w.write_record(&self.trace_header)?;
        for row in self.trace_rows() {
            w.write_record(row.iter().enumerate().map(|(i, v)| {
                if i == 0 {
                    format!("{}", *v as u64)
                } else {
                    format_number(*v)
                }
            }))?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join(PARTICLES_FILE))?;
        w.write_record(self.particles_header())?;
        if let Some(ens) = &self.ensemble {
            for x in ens.particles() {
                w.write_record(x.iter().map(|v| format_number(*v)))?;
            }
        }
        w.flush()?;

        let text = serde_json::to_string_pretty(&self.summary_json())?;
        fs::write(dir.join(SUMMARY_FILE), text + "\n")?;
        Ok(())
    }
}

fn json_number(v: f64) -> Value {
    serde_json::Number::from_f64(v)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

fn trace_header(cfg: &RunConfig, monitor_columns: &[String], n_params: usize) -> Vec<String> {
    let mut h = vec!["iteration".to_string()];
    if cfg.metrics.contains(&MetricName::Ksd2) {
        h.push("ksd2".into());
    }
    if !cfg.max_ksd_scales.is_empty() {
        h.push("max_ksd2".into());
    }
    if cfg.metrics.contains(&MetricName::Bandwidths) {
        h.extend((1..=n_params).map(|i| format!("h_{i}")));
    }
    h.extend(monitor_columns.iter().cloned());
    if cfg.trace_wall_time {
        h.push("wall_ms".into());
    }
    h
}

/// Runs `cfg` without touching the file system. Setup problems are reported
/// as errors; failures during the iteration are recorded in the report.
pub fn execute(cfg: &RunConfig) -> Result<RunReport> {
    let errs = cfg.semantic_errors();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let started = Instant::now();
    let problem = build_problem(cfg)?;
    execute_with(cfg, &problem, started)
}

/// [`execute`] on an already assembled problem.
pub fn execute_with(cfg: &RunConfig, problem: &Problem, started: Instant) -> Result<RunReport> {
    let mut rng = Rng::new(cfg.seed);
    let ens0 = initial_ensemble(cfg, problem, &mut rng)?;
    let spec0 = initial_kernel(cfg, &ens0)?;
    let method = method_config(cfg);
    let schedule = step_schedule(cfg)?;
    let opts = RunOptions {
        nsteps: cfg.nsteps,
        log_every: cfg.log_every,
        log_ksd: cfg.metrics.contains(&MetricName::Ksd2),
        max_ksd_scales: cfg.max_ksd_scales.clone(),
    };
    let mut monitor = MetricMonitor::new(problem, &cfg.metrics);
    let header = trace_header(cfg, &monitor.columns(), spec0.n_params());
    let outcome = dynamics::run_svgd(
        &ens0,
        &spec0,
        &problem.model,
        &method,
        &schedule,
        &opts,
        &mut rng,
        &mut monitor,
    );
    let (record, ensemble, spec, error) = match outcome {
        Ok(o) => (o.record, o.ensemble, o.spec, None),
        Err(f) => {
            let err = RunError {
                iteration: f.error.iteration(),
                message: f.error.to_string(),
            };
            (f.record, f.ensemble, f.spec, Some(err))
        }
    };
    Ok(RunReport {
        config: cfg.clone(),
        record,
        ensemble: Some(ensemble),
        bandwidths: spec.bandwidths(),
        error,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        target_marginal_var: problem.target_marginal_variances(),
        target_cov_trace: problem.target_cov_trace(),
        trace_header: header,
    })
}

/// Executes `cfg` and writes its artifacts to `cfg.output`.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    let report = execute(cfg)?;
    report.write(Path::new(&cfg.output))?;
    Ok(report)
}
