//! Flat TOML run and sweep configurations.
//!
//! Every key is optional; omitted keys take the preset's defaults. The
//! normalized form ([`RunConfig::to_toml`]) lists every effective value and
//! parses back to the same configuration.

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::dynamics::{ScheduleKind, DEFAULT_ADAGRAD_ALPHA, DEFAULT_ADAGRAD_FUDGE};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::kernels::{KernelFamily, MedianNorm};
use crate::stein::{Estimator, ParamSpace};
use crate::targets::VarianceDecay;

/// Steps are divided by this factor under `--desk`.
pub const DESK_FACTOR: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "mixture1d")]
    Mixture1d,
    #[serde(rename = "gauss-diag")]
    GaussDiag,
    #[serde(rename = "ode-inverse")]
    OdeInverse,
    #[serde(rename = "gp-infer")]
    GpInfer,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::Mixture1d,
        Preset::GaussDiag,
        Preset::OdeInverse,
        Preset::GpInfer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Mixture1d => "mixture1d",
            Preset::GaussDiag => "gauss-diag",
            Preset::OdeInverse => "ode-inverse",
            Preset::GpInfer => "gp-infer",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            Preset::Mixture1d => "1D mixture (1/3) N(-2,1) + (2/3) N(2,1); W1 against a 10^5-point exact sample",
            Preset::GaussDiag => "N(0, diag(1/i^2)) in `dim` dimensions, started from N(0, 1/d)",
            Preset::OdeInverse => "source recovery for -f'' + f = u from 2^r-grid observations, 16 sine modes",
            Preset::GpInfer => "GP coefficients from n_y noisy point values, prior k^-2",
        }
    }

    fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Fixed,
    Median,
    Adaptive,
}

/// Distribution of the initial particles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    /// `N(0, I)`.
    StandardNormal,
    /// `N(0, I / d)`.
    InverseDim,
    /// The prior of an inverse problem.
    Prior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Ksd2,
    W1_1d,
    BuresW2,
    Chi2,
    MarginalVar,
    CovTrace,
    Bandwidths,
}

impl MetricName {
    pub const ALL: [MetricName; 7] = [
        MetricName::Ksd2,
        MetricName::W1_1d,
        MetricName::BuresW2,
        MetricName::Chi2,
        MetricName::MarginalVar,
        MetricName::CovTrace,
        MetricName::Bandwidths,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricName::Ksd2 => "ksd2",
            MetricName::W1_1d => "w1_1d",
            MetricName::BuresW2 => "bures_w2",
            MetricName::Chi2 => "chi2",
            MetricName::MarginalVar => "marginal_var",
            MetricName::CovTrace => "cov_trace",
            MetricName::Bandwidths => "bandwidths",
        }
    }

    fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

/// Initial kernel bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub enum BandwidthPolicy {
    /// Median heuristic on the initial particles.
    Median,
    Fixed(f64),
    /// One bandwidth per coordinate (product kernels).
    Vector(Vec<f64>),
}

impl Serialize for BandwidthPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BandwidthPolicy::Median => s.serialize_str("median"),
            BandwidthPolicy::Fixed(h) => s.serialize_f64(*h),
            BandwidthPolicy::Vector(hs) => hs.serialize(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Bandwidth,
    Particles,
    Dimension,
    Seed,
}

impl SweepAxis {
    pub fn column(self) -> &'static str {
        match self {
            SweepAxis::Bandwidth => "h",
            SweepAxis::Particles => "particles",
            SweepAxis::Dimension => "dim",
            SweepAxis::Seed => "seed",
        }
    }
}

/// A fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub preset: Preset,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance_decay: Option<VarianceDecay>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_x: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_y: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mesh_exponent: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_obs: Option<usize>,
    /// Seed of the problem data and reference samples; derived from `seed`
    /// when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_seed: Option<u64>,

    pub particles: usize,
    pub nsteps: usize,
    pub seed: u64,
    pub log_every: usize,
    pub init: InitPolicy,

    pub kernel: KernelFamily,
    pub p: f64,
    pub bandwidth: BandwidthPolicy,

    pub method: MethodName,
    pub estimator: Estimator,
    pub exec: ExecMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_refresh_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub median_norm: Option<MedianNorm>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ksd_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nstepstheta: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paramupdate_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub param_space: Option<ParamSpace>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsample: Option<usize>,

    pub schedule: ScheduleKind,
    pub gamma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adagrad_alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adagrad_fudge: Option<f64>,

    pub metrics: Vec<MetricName>,
    pub max_ksd_scales: Vec<f64>,
    pub trace_wall_time: bool,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    pub sweep_axis: SweepAxis,
    pub sweep_values: Vec<f64>,
    /// Replicate seeds per axis value; empty means the base seed only.
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub base: RunConfig,
    pub sweep: SweepSpec,
}

/// Command-line adjustments applied before defaults are resolved.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<String>,
    pub desk: bool,
}

const RUN_KEYS: &[&str] = &[
    "preset",
    "dim",
    "variance_decay",
    "n_x",
    "n_y",
    "mesh_exponent",
    "n_obs",
    "reference_seed",
    "particles",
    "nsteps",
    "seed",
    "log_every",
    "init",
    "kernel",
    "p",
    "bandwidth",
    "method",
    "estimator",
    "exec",
    "median_refresh_every",
    "median_norm",
    "ksd_step",
    "nstepstheta",
    "paramupdate_every",
    "param_space",
    "subsample",
    "schedule",
    "gamma",
    "adagrad_alpha",
    "adagrad_fudge",
    "metrics",
    "max_ksd_scales",
    "trace_wall_time",
    "output",
];

const SWEEP_KEYS: &[&str] = &["sweep_axis", "sweep_values", "seeds"];

/// Typed field extraction that records every problem instead of stopping at
/// the first.
struct Fields<'a> {
    table: &'a Table,
    errors: Vec<String>,
}

impl<'a> Fields<'a> {
    fn raw(&self, key: &str) -> Option<&'a Value> {
        self.table.get(key)
    }

    fn enumerated<T: for<'de> Deserialize<'de>>(&mut self, key: &str, choices: &str) -> Option<T> {
        let v = self.raw(key)?;
        match v.clone().try_into::<T>() {
            Ok(t) => Some(t),
            Err(_) => {
                self.errors.push(format!("`{key}` must be one of {choices}, got {v}"));
                None
            }
        }
    }

    fn float(&mut self, key: &str) -> Option<f64> {
        match self.raw(key)? {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            v => {
                self.errors.push(format!("`{key}` must be a number, got {v}"));
                None
            }
        }
    }

    fn count(&mut self, key: &str) -> Option<usize> {
        match self.raw(key)? {
            Value::Integer(i) if *i >= 0 => Some(*i as usize),
            v => {
                self.errors
                    .push(format!("`{key}` must be a non-negative integer, got {v}"));
                None
            }
        }
    }

    fn seed(&mut self, key: &str) -> Option<u64> {
        self.count(key).map(|v| v as u64)
    }

    fn boolean(&mut self, key: &str) -> Option<bool> {
        match self.raw(key)? {
            Value::Boolean(b) => Some(*b),
            v => {
                self.errors.push(format!("`{key}` must be true or false, got {v}"));
                None
            }
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.raw(key)? {
            Value::String(s) => Some(s.clone()),
            v => {
                self.errors.push(format!("`{key}` must be a string, got {v}"));
                None
            }
        }
    }

    fn float_list(&mut self, key: &str) -> Option<Vec<f64>> {
        let v = self.raw(key)?;
        let parsed = v.as_array().and_then(|items| {
            items
                .iter()
                .map(|item| match item {
                    Value::Float(f) => Some(*f),
                    Value::Integer(i) => Some(*i as f64),
                    _ => None,
                })
                .collect::<Option<Vec<f64>>>()
        });
        if parsed.is_none() {
            self.errors
                .push(format!("`{key}` must be an array of numbers, got {v}"));
        }
        parsed
    }

    fn seed_list(&mut self, key: &str) -> Option<Vec<u64>> {
        let v = self.raw(key)?;
        let parsed = v.as_array().and_then(|items| {
            items
                .iter()
                .map(|item| item.as_integer().filter(|i| *i >= 0).map(|i| i as u64))
                .collect::<Option<Vec<u64>>>()
        });
        if parsed.is_none() {
            self.errors
                .push(format!("`{key}` must be an array of non-negative integers, got {v}"));
        }
        parsed
    }
}

/// The defaults a preset pins before user keys are applied.
struct PresetDefaults {
    particles: usize,
    nsteps: usize,
    init: InitPolicy,
    kernel: KernelFamily,
    p: f64,
    method: MethodName,
    schedule: ScheduleKind,
    gamma: f64,
    ksd_step: f64,
    paramupdate_every: usize,
    param_space: ParamSpace,
    bandwidth: BandwidthPolicy,
    metrics: Vec<MetricName>,
}

fn preset_defaults(preset: Preset) -> PresetDefaults {
    use MetricName::*;
    match preset {
        Preset::Mixture1d => PresetDefaults {
            particles: 500,
            nsteps: 10_000,
            init: InitPolicy::StandardNormal,
            kernel: KernelFamily::Isotropic,
            p: 1.0,
            method: MethodName::Median,
            schedule: ScheduleKind::Fixed,
            gamma: 1.0,
            ksd_step: 1e-2,
            paramupdate_every: 1,
            param_space: ParamSpace::Log,
            bandwidth: BandwidthPolicy::Median,
            metrics: vec![Ksd2, W1_1d, Bandwidths],
        },
        Preset::GaussDiag => PresetDefaults {
            particles: 200,
            nsteps: 10_000,
            init: InitPolicy::InverseDim,
            kernel: KernelFamily::Product,
            p: 1.0,
            method: MethodName::Adaptive,
            schedule: ScheduleKind::Fixed,
            gamma: 0.02,
            ksd_step: 1e-3,
            paramupdate_every: 1,
            param_space: ParamSpace::Log,
            bandwidth: BandwidthPolicy::Fixed(10.0),
            metrics: vec![Ksd2, BuresW2, Chi2, MarginalVar, Bandwidths],
        },
        Preset::OdeInverse => PresetDefaults {
            particles: 50,
            nsteps: 400_000,
            init: InitPolicy::Prior,
            kernel: KernelFamily::Product,
            p: 1.0,
            method: MethodName::Adaptive,
            schedule: ScheduleKind::AdaGrad,
            gamma: 1e-3,
            ksd_step: 1e-5,
            paramupdate_every: 100,
            param_space: ParamSpace::Linear,
            bandwidth: BandwidthPolicy::Median,
            metrics: vec![Ksd2, BuresW2, MarginalVar, CovTrace, Bandwidths],
        },
        Preset::GpInfer => PresetDefaults {
            particles: 100,
            nsteps: 10_000,
            init: InitPolicy::Prior,
            kernel: KernelFamily::Product,
            p: 1.0,
            method: MethodName::Adaptive,
            schedule: ScheduleKind::AdaGrad,
            gamma: 1e-2,
            ksd_step: 1e-4,
            paramupdate_every: 1,
            param_space: ParamSpace::Log,
            bandwidth: BandwidthPolicy::Fixed(10.0),
            metrics: vec![BuresW2, MarginalVar, CovTrace, Bandwidths],
        },
    }
}

/// `ceil(nsteps / 1000)`, at least 1.
pub fn default_log_every(nsteps: usize) -> usize {
    nsteps.div_ceil(1000).max(1)
}

impl RunConfig {
    /// Preset defaults with nothing overridden.
    pub fn preset(preset: Preset) -> Self {
        let table = Table::from_iter([("preset".to_string(), Value::String(preset.name().into()))]);
        Self::from_table(&table, &Overrides::default()).expect("preset defaults validate")
    }

    pub fn from_toml_str(text: &str, overrides: &Overrides) -> Result<Self> {
        let table = parse_table(text)?;
        let mut errors = unknown_keys(&table, &[RUN_KEYS, SWEEP_KEYS]);
        match Self::from_table(&table, overrides) {
            Ok(cfg) if errors.is_empty() => Ok(cfg),
            Ok(_) => Err(Error::Config(errors)),
            Err(Error::Config(more)) => {
                errors.extend(more);
                Err(Error::Config(errors))
            }
            Err(e) => Err(e),
        }
    }

    fn from_table(table: &Table, overrides: &Overrides) -> Result<Self> {
        let mut f = Fields {
            table,
            errors: Vec::new(),
        };
        let preset = match f.string("preset") {
            Some(name) => match Preset::parse(&name) {
                Some(p) => p,
                None => {
                    f.errors.push(format!(
                        "unknown preset `{name}`; expected one of {}",
                        Preset::ALL.map(Preset::name).join(", ")
                    ));
                    return Err(Error::Config(f.errors));
                }
            },
            None => {
                if !f.errors.is_empty() {
                    return Err(Error::Config(f.errors));
                }
                return Err(Error::Config(vec!["missing required key `preset`".into()]));
            }
        };
        let defaults = preset_defaults(preset);

        let only_for = |f: &mut Fields, key: &str, allowed: &[Preset]| {
            if f.raw(key).is_some() && !allowed.contains(&preset) {
                f.errors
                    .push(format!("`{key}` does not apply to preset {}", preset.name()));
            }
        };
        only_for(&mut f, "dim", &[Preset::GaussDiag]);
        only_for(&mut f, "variance_decay", &[Preset::GaussDiag]);
        only_for(&mut f, "n_x", &[Preset::OdeInverse, Preset::GpInfer]);
        only_for(&mut f, "n_y", &[Preset::GpInfer]);
        only_for(&mut f, "mesh_exponent", &[Preset::OdeInverse]);
        only_for(&mut f, "n_obs", &[Preset::OdeInverse]);

        let is = |p: Preset| preset == p;
        let dim = is(Preset::GaussDiag).then(|| f.count("dim").unwrap_or(8));
        let variance_decay = is(Preset::GaussDiag).then(|| {
            f.enumerated("variance_decay", "inverse_square, inverse")
                .unwrap_or_default()
        });
        let n_x = (is(Preset::OdeInverse) || is(Preset::GpInfer)).then(|| f.count("n_x").unwrap_or(16));
        let n_y = is(Preset::GpInfer).then(|| f.count("n_y").unwrap_or(64));
        let mesh_exponent = is(Preset::OdeInverse).then(|| f.count("mesh_exponent").unwrap_or(8) as u32);
        let n_obs = is(Preset::OdeInverse).then(|| f.count("n_obs").unwrap_or(256));
        let reference_seed = f.seed("reference_seed");

        let particles = f.count("particles").unwrap_or(defaults.particles);
        let mut nsteps = f.count("nsteps").unwrap_or(defaults.nsteps);
        if overrides.desk {
            nsteps /= DESK_FACTOR;
        }
        let seed = overrides.seed.or_else(|| f.seed("seed")).unwrap_or(0);
        let log_every = f.count("log_every").unwrap_or_else(|| default_log_every(nsteps));
        let init = f
            .enumerated("init", "standard_normal, inverse_dim, prior")
            .unwrap_or(defaults.init);

        let kernel = f.enumerated("kernel", "isotropic, product").unwrap_or(defaults.kernel);
        let p = f.float("p").unwrap_or(defaults.p);
        let bandwidth = match f.raw("bandwidth") {
            None => defaults.bandwidth.clone(),
            Some(Value::String(s)) if s == "median" => BandwidthPolicy::Median,
            Some(Value::Float(_) | Value::Integer(_)) => BandwidthPolicy::Fixed(f.float("bandwidth").unwrap_or(1.0)),
            Some(Value::Array(_)) => BandwidthPolicy::Vector(f.float_list("bandwidth").unwrap_or_default()),
            Some(v) => {
                f.errors.push(format!(
                    "`bandwidth` must be \"median\", a number or an array of numbers, got {v}"
                ));
                BandwidthPolicy::Median
            }
        };

        let method = f
            .enumerated("method", "fixed, median, adaptive")
            .unwrap_or(defaults.method);
        let estimator = f.enumerated("estimator", "U, V").unwrap_or_default();
        let exec = f.enumerated("exec", "deterministic, parallel").unwrap_or_default();

        let median = method == MethodName::Median;
        let adaptive = method == MethodName::Adaptive;
        for key in ["median_refresh_every", "median_norm"] {
            if f.raw(key).is_some() && !median {
                f.errors.push(format!("`{key}` only applies to method = \"median\""));
            }
        }
        for key in [
            "ksd_step",
            "nstepstheta",
            "paramupdate_every",
            "param_space",
            "subsample",
        ] {
            if f.raw(key).is_some() && !adaptive {
                f.errors.push(format!("`{key}` only applies to method = \"adaptive\""));
            }
        }
        let median_refresh_every = median.then(|| f.count("median_refresh_every").unwrap_or(1));
        let median_norm = median.then(|| f.enumerated("median_norm", "euclidean, p").unwrap_or_default());
        let ksd_step = adaptive.then(|| f.float("ksd_step").unwrap_or(defaults.ksd_step));
        let nstepstheta = adaptive.then(|| f.count("nstepstheta").unwrap_or(1));
        let paramupdate_every = adaptive.then(|| f.count("paramupdate_every").unwrap_or(defaults.paramupdate_every));
        let param_space = adaptive.then(|| {
            f.enumerated("param_space", "log, linear")
                .unwrap_or(defaults.param_space)
        });
        let subsample = if adaptive { f.count("subsample") } else { None };

        let schedule = f.enumerated("schedule", "fixed, ada_grad").unwrap_or(defaults.schedule);
        let gamma = f.float("gamma").unwrap_or(defaults.gamma);
        let adagrad = schedule == ScheduleKind::AdaGrad;
        for key in ["adagrad_alpha", "adagrad_fudge"] {
            if f.raw(key).is_some() && !adagrad {
                f.errors
                    .push(format!("`{key}` only applies to schedule = \"ada_grad\""));
            }
        }
        let adagrad_alpha = adagrad.then(|| f.float("adagrad_alpha").unwrap_or(DEFAULT_ADAGRAD_ALPHA));
        let adagrad_fudge = adagrad.then(|| f.float("adagrad_fudge").unwrap_or(DEFAULT_ADAGRAD_FUDGE));

        let metrics = match f.raw("metrics") {
            None => defaults.metrics,
            Some(Value::Array(items)) => {
                let mut out = Vec::new();
                for item in items {
                    match item.as_str().and_then(MetricName::parse) {
                        Some(m) if !out.contains(&m) => out.push(m),
                        Some(_) => {}
                        None => f.errors.push(format!(
                            "unknown metric {item}; expected one of {}",
                            MetricName::ALL.map(MetricName::name).join(", ")
                        )),
                    }
                }
                out.sort();
                out
            }
            Some(v) => {
                f.errors
                    .push(format!("`metrics` must be an array of metric names, got {v}"));
                Vec::new()
            }
        };
        let max_ksd_scales = f.float_list("max_ksd_scales").unwrap_or_default();
        let trace_wall_time = f.boolean("trace_wall_time").unwrap_or(false);
        let output = overrides
            .output
            .clone()
            .or_else(|| f.string("output"))
            .unwrap_or_else(|| format!("out/{}", preset.name()));

        let cfg = RunConfig {
            preset,
            dim,
            variance_decay,
            n_x,
            n_y,
            mesh_exponent,
            n_obs,
            reference_seed,
            particles,
            nsteps,
            seed,
            log_every,
            init,
            kernel,
            p,
            bandwidth,
            method,
            estimator,
            exec,
            median_refresh_every,
            median_norm,
            ksd_step,
            nstepstheta,
            paramupdate_every,
            param_space,
            subsample,
            schedule,
            gamma,
            adagrad_alpha,
            adagrad_fudge,
            metrics,
            max_ksd_scales,
            trace_wall_time,
            output,
        };
        let mut errors = f.errors;
        errors.extend(cfg.semantic_errors());
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors))
        }
    }

    /// Dimension of the particles.
    pub fn dimension(&self) -> usize {
        match self.preset {
            Preset::Mixture1d => 1,
            Preset::GaussDiag => self.dim.unwrap_or(8),
            Preset::OdeInverse | Preset::GpInfer => self.n_x.unwrap_or(16),
        }
    }

    /// Cross-field checks; empty when the configuration is runnable.
    pub fn semantic_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let d = self.dimension();
        if d == 0 {
            errs.push("dimension (`dim` / `n_x`) must be at least 1".into());
        }
        if self.n_y == Some(0) {
            errs.push("`n_y` must be at least 1".into());
        }
        if let (Some(r), Some(n_obs)) = (self.mesh_exponent, self.n_obs) {
            if r == 0 || r > 20 {
                errs.push(format!("`mesh_exponent` must lie in 1..=20, got {r}"));
            } else if n_obs == 0 || (1usize << r) % n_obs != 0 {
                errs.push(format!("`n_obs` = {n_obs} must divide the grid size 2^{r}"));
            }
        }
        if self.particles == 0 {
            errs.push("`particles` must be at least 1".into());
        }
        if self.log_every == 0 {
            errs.push("`log_every` must be at least 1".into());
        }
        if !(self.p >= 1.0) || !self.p.is_finite() {
            errs.push(format!("`p` must be a finite exponent >= 1, got {}", self.p));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            errs.push(format!("`gamma` must be non-negative, got {}", self.gamma));
        }
        match &self.bandwidth {
            BandwidthPolicy::Median => {}
            BandwidthPolicy::Fixed(h) => {
                if !(*h > 0.0) || !h.is_finite() {
                    errs.push(format!("`bandwidth` must be positive, got {h}"));
                }
            }
            BandwidthPolicy::Vector(hs) => {
                if self.kernel != KernelFamily::Product {
                    errs.push("a `bandwidth` array requires kernel = \"product\"".into());
                } else if hs.len() != d {
                    errs.push(format!(
                        "`bandwidth` has {} entries, the problem has dimension {d}",
                        hs.len()
                    ));
                }
                if hs.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
                    errs.push("`bandwidth` entries must be positive".into());
                }
            }
        }
        let needs_median = self.method == MethodName::Median || matches!(self.bandwidth, BandwidthPolicy::Median);
        if needs_median && self.particles < 3 {
            errs.push(format!(
                "the median heuristic needs at least 3 particles, got particles = {}",
                self.particles
            ));
        }
        if self.estimator == Estimator::V && self.p != 2.0 {
            errs.push(format!(
                "estimator = \"V\" is only defined for p = 2, got p = {}",
                self.p
            ));
        }
        let ksd_particles = self.subsample.unwrap_or(self.particles);
        let uses_ksd = self.method == MethodName::Adaptive
            || self.metrics.contains(&MetricName::Ksd2)
            || !self.max_ksd_scales.is_empty();
        if uses_ksd && self.estimator == Estimator::U && ksd_particles < 2 {
            errs.push("the U-statistic KSD needs at least 2 particles".into());
        }
        if self.median_refresh_every == Some(0) {
            errs.push("`median_refresh_every` must be at least 1".into());
        }
        if let Some(s) = self.ksd_step {
            if !(s >= 0.0) || !s.is_finite() {
                errs.push(format!("`ksd_step` must be non-negative, got {s}"));
            }
        }
        if self.nstepstheta == Some(0) {
            errs.push("`nstepstheta` must be at least 1".into());
        }
        if self.paramupdate_every == Some(0) {
            errs.push("`paramupdate_every` must be at least 1".into());
        }
        if let Some(n) = self.subsample {
            if n > self.particles {
                errs.push(format!("`subsample` = {n} exceeds particles = {}", self.particles));
            }
        }
        if let Some(a) = self.adagrad_alpha {
            if !(a > 0.0 && a <= 1.0) {
                errs.push(format!("`adagrad_alpha` must lie in (0, 1], got {a}"));
            }
        }
        if let Some(e) = self.adagrad_fudge {
            if !(e > 0.0) || !e.is_finite() {
                errs.push(format!("`adagrad_fudge` must be positive, got {e}"));
            }
        }
        if self.max_ksd_scales.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
            errs.push("`max_ksd_scales` entries must be positive".into());
        }
        if self.init == InitPolicy::Prior && !matches!(self.preset, Preset::OdeInverse | Preset::GpInfer) {
            errs.push(format!(
                "init = \"prior\" needs an inverse problem; preset {} has no prior",
                self.preset.name()
            ));
        }
        for m in &self.metrics {
            match m {
                MetricName::W1_1d if self.preset != Preset::Mixture1d => errs.push(format!(
                    "metric `w1_1d` needs a one-dimensional target with an exact sampler; preset {} has none",
                    self.preset.name()
                )),
                MetricName::BuresW2 | MetricName::CovTrace | MetricName::MarginalVar if self.particles < 2 => {
                    errs.push(format!("metric `{}` needs at least 2 particles", m.name()))
                }
                MetricName::BuresW2 if self.preset == Preset::Mixture1d => {
                    errs.push("metric `bures_w2` needs a Gaussian target; preset mixture1d is not Gaussian".into())
                }
                MetricName::Chi2 if self.preset != Preset::GaussDiag => errs.push(format!(
                    "metric `chi2` needs a zero-mean diagonal Gaussian target; preset {} is not one",
                    self.preset.name()
                )),
                _ => {}
            }
        }
        errs
    }

    /// Normalized TOML listing every effective setting.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs serialize")
    }
}

impl SweepConfig {
    pub fn from_toml_str(text: &str, overrides: &Overrides) -> Result<Self> {
        let table = parse_table(text)?;
        let mut errors = unknown_keys(&table, &[RUN_KEYS, SWEEP_KEYS]);
        let base = RunConfig::from_table(&table, overrides);
        if let Err(Error::Config(more)) = &base {
            errors.extend(more.iter().cloned());
        }
        let mut f = Fields {
            table: &table,
            errors: Vec::new(),
        };
        let axis: Option<SweepAxis> = f.enumerated("sweep_axis", "bandwidth, particles, dimension, seed");
        let values = f.float_list("sweep_values");
        let seeds = f.seed_list("seeds").unwrap_or_default();
        errors.append(&mut f.errors);
        if table.get("sweep_axis").is_none() {
            errors.push("a sweep needs exactly one `sweep_axis`".into());
        }
        if table.get("sweep_values").is_none() {
            errors.push("a sweep needs `sweep_values`".into());
        }
        if let (Some(axis), Some(values)) = (axis, &values) {
            if values.is_empty() {
                errors.push("`sweep_values` must not be empty".into());
            }
            let integral = |v: &f64| *v >= 0.0 && v.fract() == 0.0 && v.is_finite();
            match axis {
                SweepAxis::Bandwidth => {
                    if values.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
                        errors.push("bandwidth sweep values must be positive".into());
                    }
                }
                SweepAxis::Particles | SweepAxis::Seed => {
                    if !values.iter().all(integral) {
                        errors.push(format!("{} sweep values must be non-negative integers", axis.column()));
                    }
                }
                SweepAxis::Dimension => {
                    if !values.iter().all(|v| integral(v) && *v >= 1.0) {
                        errors.push("dimension sweep values must be positive integers".into());
                    }
                    if let Ok(b) = &base {
                        if b.preset != Preset::GaussDiag {
                            errors.push(format!(
                                "a dimension sweep needs preset gauss-diag, got {}",
                                b.preset.name()
                            ));
                        }
                    }
                }
            }
            if axis == SweepAxis::Seed && !seeds.is_empty() {
                errors.push("`seeds` cannot be combined with sweep_axis = \"seed\"".into());
            }
        }
        match (base, errors.is_empty()) {
            (Ok(base), true) => {
                let sweep = SweepSpec {
                    sweep_axis: axis.expect("checked above"),
                    sweep_values: values.expect("checked above"),
                    seeds,
                };
                let cfg = SweepConfig { base, sweep };
                let mut errs = Vec::new();
                for point in cfg.points() {
                    for e in point.config.semantic_errors() {
                        if !errs.contains(&e) {
                            errs.push(e);
                        }
                    }
                }
                if errs.is_empty() {
                    Ok(cfg)
                } else {
                    Err(Error::Config(errs))
                }
            }
            _ => Err(Error::Config(errors)),
        }
    }

    /// One run per `(axis value, seed)`, axis-major.
    pub fn points(&self) -> Vec<SweepPoint> {
        let seeds = if self.sweep.seeds.is_empty() || self.sweep.sweep_axis == SweepAxis::Seed {
            vec![self.base.seed]
        } else {
            self.sweep.seeds.clone()
        };
        let mut points = Vec::new();
        for &value in &self.sweep.sweep_values {
            for &seed in &seeds {
                let mut cfg = self.base.clone();
                cfg.seed = seed;
                match self.sweep.sweep_axis {
                    SweepAxis::Bandwidth => cfg.bandwidth = BandwidthPolicy::Fixed(value),
                    SweepAxis::Particles => cfg.particles = value as usize,
                    SweepAxis::Dimension => cfg.dim = Some(value as usize),
                    SweepAxis::Seed => cfg.seed = value as u64,
                }
                points.push(SweepPoint {
                    value,
                    seed: cfg.seed,
                    config: cfg,
                });
            }
        }
        points
    }

    /// Number of replicate seeds per axis value.
    pub fn replicates(&self) -> usize {
        if self.sweep.sweep_axis == SweepAxis::Seed {
            self.sweep.sweep_values.len()
        } else {
            self.sweep.seeds.len().max(1)
        }
    }

    pub fn to_toml(&self) -> String {
        let mut text = self.base.to_toml();
        text.push_str(&toml::to_string(&self.sweep).expect("sweep specs serialize"));
        text
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub seed: u64,
    pub config: RunConfig,
}

fn parse_table(text: &str) -> Result<Table> {
    text.parse::<Table>()
        .map_err(|e| Error::Config(vec![format!("not a valid TOML table: {}", e.message())]))
}

fn unknown_keys(table: &Table, known: &[&[&str]]) -> Vec<String> {
    table
        .keys()
        .filter(|k| !known.iter().any(|set| set.contains(&k.as_str())))
        .map(|k| format!("unknown key `{k}`"))
        .collect()
}
