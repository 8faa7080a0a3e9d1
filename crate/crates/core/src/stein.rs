//! Kernelized Stein discrepancy.
//!
//! For a kernel `k` and target score `s = ∇ log π`, the Stein kernel is
//!
//! ```text
//! u(x, y) = k(x, y) s(x)·s(y) + s(y)·∇_x k + s(x)·∇_y k + Tr(∇_x ∇_y k)
//! ```
//!
//! and `KSD²(μ | π)` is its double integral under `μ ⊗ μ`. For an empirical
//! measure the double sum is estimated either without the diagonal
//! (U-statistic, the default) or with it (V-statistic, only for `p = 2` where
//! the diagonal is smooth).
//!
//! Sums run over particles in [`Ensemble::canonical_order`], one partial sum
//! per row over the strictly-upper pairs, rows combined in order. `u` is
//! exactly symmetric in floating point, so each off-diagonal pair is
//! evaluated once and counted twice.

use serde::{Deserialize, Serialize};

use crate::ensemble::{Ensemble, ScoreModel};
use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::kernels::KernelSpec;
use crate::rng::Rng;

/// Smallest bandwidth reachable by a linear-space ascent step.
pub const LINEAR_MIN_BANDWIDTH: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Estimator {
    /// `1 / (M (M - 1)) Σ_{i ≠ j} u(X^i, X^j)`
    #[default]
    U,
    /// `1 / M² Σ_{i, j} u(X^i, X^j)`
    V,
}

/// Coordinates in which kernel parameters are differentiated and updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSpace {
    /// `θ = log h`
    #[default]
    Log,
    /// `θ = h`, clamped below at [`LINEAR_MIN_BANDWIDTH`].
    Linear,
}

/// Scores `∇ log π(X^i)` of every particle, row-major `M × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCache {
    m: usize,
    d: usize,
    data: Vec<f64>,
}

impl ScoreCache {
    pub fn build(model: &ScoreModel, ens: &Ensemble) -> Result<Self> {
        if model.dim() != ens.d() {
            return Err(Error::param(format!(
                "score model has dimension {}, ensemble {}",
                model.dim(),
                ens.d()
            )));
        }
        let d = ens.d();
        let mut data = vec![0.0; ens.m() * d];
        for (i, (x, out)) in ens.particles().zip(data.chunks_exact_mut(d)).enumerate() {
            model.score_into(x, out);
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("non-finite score at particle {i}")));
            }
        }
        Ok(Self { m: ens.m(), d, data })
    }

    pub fn from_raw(m: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != m * d {
            return Err(Error::param("score cache shape mismatch"));
        }
        Ok(Self { m, d, data })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteinEstimate {
    pub ksd2: f64,
    /// Gradient of `ksd2` in the requested [`ParamSpace`], one entry per
    /// kernel parameter.
    pub grad_theta: Vec<f64>,
    pub variant: Estimator,
    /// Number of ordered `(i, j)` pairs entering the average.
    pub pairs_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SteinOptions {
    pub variant: Estimator,
    pub param_space: ParamSpace,
    pub exec: ExecMode,
}

impl SteinOptions {
    pub fn with_variant(variant: Estimator) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }
}

fn check_point_dims(spec: &KernelSpec, vs: [&[f64]; 4]) -> Result<()> {
    if vs.iter().any(|v| v.len() != spec.dim()) {
        return Err(Error::param(format!(
            "Stein kernel inputs must all have dimension {}",
            spec.dim()
        )));
    }
    Ok(())
}

/// Stein kernel `u(x, y)` for scores `score_x`, `score_y`.
pub fn stein_kernel_u(spec: &KernelSpec, x: &[f64], y: &[f64], score_x: &[f64], score_y: &[f64]) -> Result<f64> {
    check_point_dims(spec, [x, y, score_x, score_y])?;
    Ok(spec.view().stein_pair(x, y, score_x, score_y, None))
}

/// Stein kernel together with `∂u / ∂log h_j` for every kernel parameter.
pub fn stein_kernel_u_with_grad(
    spec: &KernelSpec,
    x: &[f64],
    y: &[f64],
    score_x: &[f64],
    score_y: &[f64],
) -> Result<(f64, Vec<f64>)> {
    check_point_dims(spec, [x, y, score_x, score_y])?;
    let mut grad = vec![0.0; spec.n_params()];
    let u = spec.view().stein_pair(x, y, score_x, score_y, Some(&mut grad));
    Ok((u, grad))
}

/// Empirical `KSD²` with default options (log-space gradient, deterministic).
pub fn ksd_squared(
    spec: &KernelSpec,
    ens: &Ensemble,
    scores: &ScoreCache,
    variant: Estimator,
    subsample: Option<(usize, &mut Rng)>,
) -> Result<SteinEstimate> {
    ksd_squared_with(spec, ens, scores, &SteinOptions::with_variant(variant), subsample)
}

/// Empirical `KSD²` and its gradient with respect to the kernel parameters.
///
/// With `subsample = Some((n, rng))`, `n` particles are drawn uniformly
/// without replacement and the estimator is applied to them alone.
pub fn ksd_squared_with(
    spec: &KernelSpec,
    ens: &Ensemble,
    scores: &ScoreCache,
    opts: &SteinOptions,
    subsample: Option<(usize, &mut Rng)>,
) -> Result<SteinEstimate> {
    if ens.d() != spec.dim() || scores.d() != spec.dim() || scores.m() != ens.m() {
        return Err(Error::param(format!(
            "KSD inputs disagree: kernel dim {}, ensemble {}x{}, scores {}x{}",
            spec.dim(),
            ens.m(),
            ens.d(),
            scores.m(),
            scores.d()
        )));
    }
    if opts.variant == Estimator::V && spec.p() != 2.0 {
        return Err(Error::param(format!(
            "V-statistic KSD is only defined for p = 2 kernels (got p = {})",
            spec.p()
        )));
    }

    let order = ens.canonical_order();
    let indices: Vec<usize> = match subsample {
        Some((count, rng)) => {
            if count == 0 {
                return Err(Error::param("subsample size must be positive"));
            }
            rng.sample_without_replacement(order.len(), count)
                .into_iter()
                .map(|pos| order[pos])
                .collect()
        }
        None => order,
    };
    let n = indices.len();
    if opts.variant == Estimator::U && n < 2 {
        return Err(Error::param(format!(
            "U-statistic KSD needs at least 2 particles, got {n}"
        )));
    }

    let d = spec.dim();
    let mut xs = Vec::with_capacity(n * d);
    let mut ss = Vec::with_capacity(n * d);
    for &i in &indices {
        xs.extend_from_slice(ens.particle(i));
        ss.extend_from_slice(scores.row(i));
    }
    let view = spec.view();
    let n_params = spec.n_params();
    let with_diag = opts.variant == Estimator::V;

    let rows = opts.exec.map_rows(n, |r| {
        let xr = &xs[r * d..(r + 1) * d];
        let sr = &ss[r * d..(r + 1) * d];
        let mut grad = vec![0.0; n_params];
        let mut off = 0.0;
        for c in (r + 1)..n {
            off += view.stein_pair(
                xr,
                &xs[c * d..(c + 1) * d],
                sr,
                &ss[c * d..(c + 1) * d],
                Some(&mut grad),
            );
        }
        let mut total = 2.0 * off;
        for g in grad.iter_mut() {
            *g *= 2.0;
        }
        if with_diag {
            total += view.stein_pair(xr, xr, sr, sr, Some(&mut grad));
        }
        (total, grad)
    });

    let mut sum = 0.0;
    let mut grad = vec![0.0; n_params];
    for (s, g) in rows {
        sum += s;
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
    let pairs_used = if with_diag { n * n } else { n * (n - 1) };
    let norm = 1.0 / pairs_used as f64;
    let ksd2 = sum * norm;
    let bandwidths = spec.bandwidths();
    let grad_theta = grad
        .iter()
        .zip(&bandwidths)
        .map(|(g, h)| match opts.param_space {
            ParamSpace::Log => g * norm,
            ParamSpace::Linear => g * norm / h,
        })
        .collect();
    Ok(SteinEstimate {
        ksd2,
        grad_theta,
        variant: opts.variant,
        pairs_used,
    })
}

/// One gradient-ascent step `θ ← θ + s ∇_θ KSD²` on the kernel parameters,
/// in log space.
pub fn ksd_ascent_step(
    spec: &KernelSpec,
    ens: &Ensemble,
    scores: &ScoreCache,
    step: f64,
    variant: Estimator,
) -> Result<KernelSpec> {
    ksd_ascent_step_with(spec, ens, scores, step, &SteinOptions::with_variant(variant), None).map(|(spec, _)| spec)
}

/// Ascent step with explicit options. Also returns the estimate at the
/// pre-step parameters.
pub fn ksd_ascent_step_with(
    spec: &KernelSpec,
    ens: &Ensemble,
    scores: &ScoreCache,
    step: f64,
    opts: &SteinOptions,
    subsample: Option<(usize, &mut Rng)>,
) -> Result<(KernelSpec, SteinEstimate)> {
    if !(step >= 0.0) || !step.is_finite() {
        return Err(Error::param(format!(
            "KSD ascent step must be non-negative, got {step}"
        )));
    }
    let est = ksd_squared_with(spec, ens, scores, opts, subsample)?;
    if let Some(index) = est.grad_theta.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    let logs: Vec<f64> = match opts.param_space {
        ParamSpace::Log => spec
            .log_bandwidths()
            .iter()
            .zip(&est.grad_theta)
            .map(|(t, g)| t + step * g)
            .collect(),
        ParamSpace::Linear => spec
            .bandwidths()
            .iter()
            .zip(&est.grad_theta)
            .map(|(h, g)| (h + step * g).max(LINEAR_MIN_BANDWIDTH).ln())
            .collect(),
    };
    if let Some(index) = logs.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    // Keep the exact parameters when the step is a no-op.
    let next = if step == 0.0 {
        spec.clone()
    } else {
        spec.with_log_bandwidths(logs)?
    };
    Ok((next, est))
}

/// Largest `KSD²` over the kernels obtained by multiplying every bandwidth
/// of `spec` by each factor in `scales`.
pub fn max_ksd_over_scales(
    spec: &KernelSpec,
    ens: &Ensemble,
    scores: &ScoreCache,
    scales: &[f64],
    opts: &SteinOptions,
) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for &scale in scales {
        if !(scale > 0.0) {
            return Err(Error::param(format!("bandwidth scale must be positive, got {scale}")));
        }
        let shifted: Vec<f64> = spec.log_bandwidths().iter().map(|t| t + scale.ln()).collect();
        let est = ksd_squared_with(&spec.with_log_bandwidths(shifted)?, ens, scores, opts, None)?;
        best = best.max(est.ksd2);
    }
    Ok(best)
}
