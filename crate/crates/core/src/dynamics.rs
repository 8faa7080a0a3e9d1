//! Particle transport: SVGD steps, step-size control and the run loops for
//! fixed-bandwidth, median-heuristic and KSD-adaptive (Ad-SVGD) kernels.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ensemble::{Ensemble, ScoreModel};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::kernels::{median_heuristic, KernelSpec, MedianNorm};
use crate::rng::Rng;
use crate::stein::{self, Estimator, ParamSpace, ScoreCache, SteinOptions};

pub const DEFAULT_ADAGRAD_ALPHA: f64 = 0.9;
pub const DEFAULT_ADAGRAD_FUDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Fixed,
    AdaGrad,
}

#[derive(Debug, Clone, PartialEq)]
struct AdaGradState {
    alpha: f64,
    fudge: f64,
    accumulator: Option<Vec<f64>>,
}

/// Particle step size: a constant `γ`, or `γ / (ε + √acc)` per coordinate with
/// the decayed squared-direction accumulator
/// `acc ← α acc + (1 - α) φ²` (initialised to `φ²` on the first call).
#[derive(Debug, Clone, PartialEq)]
pub struct StepSchedule {
    gamma: f64,
    adagrad: Option<AdaGradState>,
}

impl StepSchedule {
    pub fn fixed(gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(Self { gamma, adagrad: None })
    }

    pub fn adagrad(gamma: f64, alpha: f64, fudge: f64) -> Result<Self> {
        check_gamma(gamma)?;
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::param(format!("AdaGrad decay must lie in (0, 1], got {alpha}")));
        }
        if !(fudge > 0.0) || !fudge.is_finite() {
            return Err(Error::param(format!(
                "AdaGrad fudge factor must be positive, got {fudge}"
            )));
        }
        Ok(Self {
            gamma,
            adagrad: Some(AdaGradState {
                alpha,
                fudge,
                accumulator: None,
            }),
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        if self.adagrad.is_some() {
            ScheduleKind::AdaGrad
        } else {
            ScheduleKind::Fixed
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn accumulator(&self) -> Option<&[f64]> {
        self.adagrad.as_ref()?.accumulator.as_deref()
    }

    /// Updates the accumulator with `direction` and returns the elementwise
    /// step sizes.
    pub fn adagrad_scale(&mut self, direction: &[f64]) -> Result<Vec<f64>> {
        let gamma = self.gamma;
        let state = self
            .adagrad
            .as_mut()
            .ok_or_else(|| Error::param("adagrad_scale called on a fixed step schedule"))?;
        match &mut state.accumulator {
            Some(acc) => {
                if acc.len() != direction.len() {
                    return Err(Error::param("AdaGrad accumulator shape changed between calls"));
                }
                for (a, g) in acc.iter_mut().zip(direction) {
                    *a = state.alpha * *a + (1.0 - state.alpha) * g * g;
                }
            }
            None => state.accumulator = Some(direction.iter().map(|g| g * g).collect()),
        }
        let acc = state.accumulator.as_ref().expect("accumulator initialised above");
        Ok(acc.iter().map(|a| gamma / (state.fudge + a.sqrt())).collect())
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::param(format!("step size must be non-negative, got {gamma}")));
    }
    Ok(())
}

/// Parameters of the KSD-ascent bandwidth update.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveParams {
    /// Ascent step `s`.
    pub step: f64,
    pub nstepstheta: usize,
    /// Bandwidths are updated on iterations `n` with `n % paramupdate_every == 0`.
    pub paramupdate_every: usize,
    pub param_space: ParamSpace,
    /// Particles used per KSD estimate; `None` uses all.
    pub subsample: Option<usize>,
}

impl Default for AdaptiveParams {
    fn default() -> Self {
        Self {
            step: 1e-3,
            nstepstheta: 1,
            paramupdate_every: 1,
            param_space: ParamSpace::Log,
            subsample: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    /// The initial kernel is used throughout.
    FixedBandwidth,
    /// `h = med^p / log(M - 1)`, recomputed every `refresh_every` iterations.
    MedianHeuristic { refresh_every: usize, norm: MedianNorm },
    /// Gradient ascent on `KSD²` in the kernel parameters before particle updates.
    Adaptive(AdaptiveParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodConfig {
    pub method: Method,
    /// Estimator for the bandwidth gradient and the logged `KSD²`.
    pub estimator: Estimator,
    pub exec: ExecMode,
}

impl MethodConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            estimator: Estimator::U,
            exec: ExecMode::Deterministic,
        }
    }

    pub fn median() -> Self {
        Self::new(Method::MedianHeuristic {
            refresh_every: 1,
            norm: MedianNorm::default(),
        })
    }

    pub fn adaptive(params: AdaptiveParams) -> Self {
        Self::new(Method::Adaptive(params))
    }

    fn stein_options(&self) -> SteinOptions {
        let param_space = match &self.method {
            Method::Adaptive(a) => a.param_space,
            _ => ParamSpace::Log,
        };
        SteinOptions {
            variant: self.estimator,
            param_space,
            exec: self.exec,
        }
    }

    pub fn validate(&self, particles: usize) -> Result<()> {
        match &self.method {
            Method::FixedBandwidth => Ok(()),
            Method::MedianHeuristic { refresh_every, .. } => {
                if *refresh_every == 0 {
                    return Err(Error::param("median_refresh_every must be at least 1"));
                }
                if particles < 3 {
                    return Err(Error::param(format!(
                        "median heuristic needs at least 3 particles, got {particles}"
                    )));
                }
                Ok(())
            }
            Method::Adaptive(a) => {
                if !(a.step >= 0.0) || !a.step.is_finite() {
                    return Err(Error::param(format!(
                        "KSD ascent step must be non-negative, got {}",
                        a.step
                    )));
                }
                if a.nstepstheta == 0 || a.paramupdate_every == 0 {
                    return Err(Error::param("nstepstheta and paramupdate_every must be at least 1"));
                }
                if self.estimator == Estimator::U && a.subsample.unwrap_or(particles) < 2 {
                    return Err(Error::param("U-statistic KSD needs at least 2 particles"));
                }
                Ok(())
            }
        }
    }
}

/// SVGD direction `φ(X^i) = (1/M) Σ_j k(X^i, X^j) s_j + ∇_{X^j} k(X^i, X^j)`
/// for every particle, row-major `M × d`.
///
/// The sum over `j` runs in canonical particle order. The deterministic mode
/// visits each unordered pair once; the parallel mode evaluates full rows.
/// Both accumulate the same summands in the same order.
pub fn svgd_direction(ens: &Ensemble, spec: &KernelSpec, scores: &ScoreCache, exec: ExecMode) -> Result<Vec<f64>> {
    let (m, d) = (ens.m(), ens.d());
    if spec.dim() != d || scores.d() != d || scores.m() != m {
        return Err(Error::param("ensemble, kernel and scores disagree in shape"));
    }
    let order = ens.canonical_order();
    let mut xs = Vec::with_capacity(m * d);
    let mut ss = Vec::with_capacity(m * d);
    for &i in &order {
        xs.extend_from_slice(ens.particle(i));
        ss.extend_from_slice(scores.row(i));
    }
    let view = spec.view();
    let row = |i: usize| &xs[i * d..(i + 1) * d];
    let srow = |i: usize| &ss[i * d..(i + 1) * d];

    let sorted_phi: Vec<f64> = match exec {
        ExecMode::Deterministic => {
            let mut phi = vec![0.0; m * d];
            let mut rep = vec![0.0; d];
            for a in 0..m {
                let k = view.svgd_pair(row(a), row(a), &mut rep);
                for c in 0..d {
                    phi[a * d + c] += k * srow(a)[c] + rep[c];
                }
                for b in (a + 1)..m {
                    let k = view.svgd_pair(row(a), row(b), &mut rep);
                    let (sa, sb) = (srow(a), srow(b));
                    for c in 0..d {
                        phi[a * d + c] += k * sb[c] + rep[c];
                        phi[b * d + c] += k * sa[c] + -rep[c];
                    }
                }
            }
            phi
        }
        ExecMode::Parallel => exec
            .map_rows(m, |a| {
                let mut acc = vec![0.0; d];
                let mut rep = vec![0.0; d];
                for b in 0..m {
                    let k = view.svgd_pair(row(a), row(b), &mut rep);
                    for c in 0..d {
                        acc[c] += k * srow(b)[c] + rep[c];
                    }
                }
                acc
            })
            .concat(),
    };

    let mut phi = vec![0.0; m * d];
    let m_f = m as f64;
    for (pos, &i) in order.iter().enumerate() {
        for c in 0..d {
            phi[i * d + c] = sorted_phi[pos * d + c] / m_f;
        }
    }
    Ok(phi)
}

/// One simultaneous SVGD update of every particle from precomputed scores.
pub fn svgd_step_with_scores(
    ens: &Ensemble,
    spec: &KernelSpec,
    scores: &ScoreCache,
    schedule: &mut StepSchedule,
    exec: ExecMode,
) -> Result<Ensemble> {
    let d = ens.d();
    let phi = svgd_direction(ens, spec, scores, exec)?;
    if let Some(pos) = phi.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteDirection { index: pos / d });
    }
    let data: Vec<f64> = match schedule.kind() {
        ScheduleKind::Fixed => {
            let gamma = schedule.gamma();
            ens.as_slice().iter().zip(&phi).map(|(x, p)| x + gamma * p).collect()
        }
        ScheduleKind::AdaGrad => {
            let scale = schedule.adagrad_scale(&phi)?;
            ens.as_slice()
                .iter()
                .zip(&phi)
                .zip(&scale)
                .map(|((x, p), s)| x + s * p)
                .collect()
        }
    };
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteDirection { index: pos / d });
    }
    Ensemble::new(ens.m(), d, data)
}

/// One SVGD update with scores evaluated at the current particles.
pub fn svgd_step(
    ens: &Ensemble,
    spec: &KernelSpec,
    model: &ScoreModel,
    schedule: &mut StepSchedule,
) -> Result<Ensemble> {
    let scores = ScoreCache::build(model, ens)?;
    svgd_step_with_scores(ens, spec, &scores, schedule, ExecMode::Deterministic)
}

/// Per-logged-iteration metrics supplied by the caller.
pub trait Monitor {
    fn columns(&self) -> Vec<String>;
    fn evaluate(&mut self, ens: &Ensemble, spec: &KernelSpec) -> Result<Vec<f64>>;
}

/// A monitor that records nothing.
pub struct NoMetrics;

impl Monitor for NoMetrics {
    fn columns(&self) -> Vec<String> {
        Vec::new()
    }

    fn evaluate(&mut self, _: &Ensemble, _: &KernelSpec) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    /// Number of completed particle updates.
    pub iteration: usize,
    /// `KSD²` under the kernel used at this iteration, when logged.
    pub ksd2: Option<f64>,
    pub max_ksd2: Option<f64>,
    pub bandwidths: Vec<f64>,
    pub metrics: Vec<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunRecord {
    pub metric_columns: Vec<String>,
    pub rows: Vec<RunRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub nsteps: usize,
    pub log_every: usize,
    pub log_ksd: bool,
    /// Bandwidth multipliers for the max-`KSD²` diagnostic; empty disables it.
    pub max_ksd_scales: Vec<f64>,
}

impl RunOptions {
    pub fn new(nsteps: usize, log_every: usize) -> Self {
        Self {
            nsteps,
            log_every,
            log_ksd: false,
            max_ksd_scales: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub ensemble: Ensemble,
    pub spec: KernelSpec,
    pub schedule: StepSchedule,
    pub record: RunRecord,
}

/// A failed run: the error (tagged with its iteration) plus everything
/// logged before it.
#[derive(Debug, Clone)]
pub struct RunFailure {
    pub error: Error,
    pub ensemble: Ensemble,
    pub spec: KernelSpec,
    pub record: RunRecord,
}

struct Logger<'a> {
    started: Instant,
    opts: &'a RunOptions,
    stein: SteinOptions,
    monitor: &'a mut dyn Monitor,
    record: RunRecord,
}

impl Logger<'_> {
    fn log(&mut self, iteration: usize, ens: &Ensemble, spec: &KernelSpec, scores: &ScoreCache) -> Result<()> {
        let ksd2 = if self.opts.log_ksd && ens.m() >= 2 {
            Some(stein::ksd_squared_with(spec, ens, scores, &self.stein, None)?.ksd2)
        } else {
            None
        };
        let max_ksd2 = if self.opts.max_ksd_scales.is_empty() || ens.m() < 2 {
            None
        } else {
            Some(stein::max_ksd_over_scales(
                spec,
                ens,
                scores,
                &self.opts.max_ksd_scales,
                &self.stein,
            )?)
        };
        let metrics = self.monitor.evaluate(ens, spec)?;
        self.record.rows.push(RunRow {
            iteration,
            ksd2,
            max_ksd2,
            bandwidths: spec.bandwidths(),
            metrics,
            wall_ms: self.started.elapsed().as_secs_f64() * 1e3,
        });
        Ok(())
    }
}

/// Runs `opts.nsteps` SVGD iterations from `ens0`.
///
/// Each iteration evaluates the scores once, updates the kernel according
/// to `method` (adaptive ascent steps reuse those scores), optionally logs,
/// and then moves every particle.
#[allow(clippy::too_many_arguments)]
pub fn run_svgd(
    ens0: &Ensemble,
    spec0: &KernelSpec,
    model: &ScoreModel,
    method: &MethodConfig,
    schedule: &StepSchedule,
    opts: &RunOptions,
    rng: &mut Rng,
    monitor: &mut dyn Monitor,
) -> std::result::Result<RunOutcome, RunFailure> {
    let mut ens = ens0.clone();
    let mut spec = spec0.clone();
    let mut schedule = schedule.clone();
    let mut logger = Logger {
        started: Instant::now(),
        opts,
        stein: method.stein_options(),
        record: RunRecord {
            metric_columns: monitor.columns(),
            rows: Vec::new(),
        },
        monitor,
    };

    let setup = (|| {
        if model.dim() != ens.d() || spec.dim() != ens.d() {
            return Err(Error::param(format!(
                "dimensions disagree: model {}, kernel {}, ensemble {}",
                model.dim(),
                spec.dim(),
                ens.d()
            )));
        }
        if opts.log_every == 0 {
            return Err(Error::param("log_every must be at least 1"));
        }
        method.validate(ens.m())
    })();
    if let Err(error) = setup {
        return Err(RunFailure {
            error: error.at_iteration(0),
            ensemble: ens,
            spec,
            record: logger.record,
        });
    }

    let stein_opts = method.stein_options();
    let mut iterate = |n: usize, ens: &Ensemble, spec: &mut KernelSpec, logger: &mut Logger| -> Result<Ensemble> {
        let scores = ScoreCache::build(model, ens)?;
        match &method.method {
            Method::FixedBandwidth => {}
            Method::MedianHeuristic { refresh_every, norm } => {
                if n % refresh_every == 0 {
                    let h = median_heuristic(ens, spec.p(), *norm)?;
                    *spec = spec.with_uniform_bandwidth(h)?;
                }
            }
            Method::Adaptive(params) => {
                if n % params.paramupdate_every == 0 {
                    for _ in 0..params.nstepstheta {
                        let sub = params.subsample.map(|count| (count, &mut *rng));
                        let (next, _) = stein::ksd_ascent_step_with(spec, ens, &scores, params.step, &stein_opts, sub)?;
                        *spec = next;
                    }
                }
            }
        }
        if n % opts.log_every == 0 {
            logger.log(n, ens, spec, &scores)?;
        }
        svgd_step_with_scores(ens, spec, &scores, &mut schedule, method.exec)
    };

    for n in 0..opts.nsteps {
        match iterate(n, &ens, &mut spec, &mut logger) {
            Ok(next) => ens = next,
            Err(error) => {
                return Err(RunFailure {
                    error: error.at_iteration(n),
                    ensemble: ens,
                    spec,
                    record: logger.record,
                })
            }
        }
    }

    let final_log = ScoreCache::build(model, &ens).and_then(|scores| logger.log(opts.nsteps, &ens, &spec, &scores));
    if let Err(error) = final_log {
        return Err(RunFailure {
            error: error.at_iteration(opts.nsteps),
            ensemble: ens,
            spec,
            record: logger.record,
        });
    }
    Ok(RunOutcome {
        ensemble: ens,
        spec,
        schedule,
        record: logger.record,
    })
}
