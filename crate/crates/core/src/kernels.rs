//! Translation-invariant kernels `k(x, y) = exp(-Σ_i |x_i - y_i|^p / h_i)`.
//!
//! The isotropic family shares one bandwidth across all coordinates
//! (`exp(-‖x - y‖_p^p / h)`), the product family carries one bandwidth per
//! coordinate. Bandwidths are stored as logarithms, so every parameter
//! gradient produced here is with respect to `log h`.
//!
//! Writing `δ = x - y`, `w_i = 1 / h_i`, `g_i = -w_i p |δ_i|^{p-1} sign(δ_i)`
//! and `c_i = w_i p (p - 1) |δ_i|^{p-2}`:
//!
//! * `∇_x k = k g`, `∇_y k = -k g`
//! * `Tr(∇_x ∇_y k) = k Σ_i (c_i - g_i²)`
//!
//! For `p = 1`, `sign(0) = 0` and `c_i = 0`; the distributional diagonal term
//! of the Laplace kernel is never represented.

use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Isotropic,
    Product,
}

/// Distance used by the median heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MedianNorm {
    /// Euclidean pairwise distance, raised to the `p`-th power afterwards.
    Euclidean,
    /// `‖x - y‖_p`, raised to the `p`-th power afterwards. Matches the
    /// kernel's own distance, so it is the default.
    #[default]
    P,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Power {
    One,
    Two,
    General(f64),
}

impl Power {
    fn new(p: f64) -> Self {
        if p == 1.0 {
            Power::One
        } else if p == 2.0 {
            Power::Two
        } else {
            Power::General(p)
        }
    }

    /// `|δ|^p`
    #[inline(always)]
    fn pow(self, delta: f64) -> f64 {
        match self {
            Power::One => delta.abs(),
            Power::Two => delta * delta,
            Power::General(p) => delta.abs().powf(p),
        }
    }

    /// `p |δ|^{p-1} sign(δ)`, zero at `δ = 0`.
    #[inline(always)]
    fn dpow(self, delta: f64) -> f64 {
        match self {
            Power::One => {
                if delta > 0.0 {
                    1.0
                } else if delta < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Power::Two => 2.0 * delta,
            Power::General(p) => {
                if delta == 0.0 {
                    0.0
                } else {
                    p * delta.abs().powf(p - 1.0) * delta.signum()
                }
            }
        }
    }

    /// `p (p - 1) |δ|^{p-2}`; zero at `δ = 0` when `p < 2`.
    #[inline(always)]
    fn d2pow(self, delta: f64) -> f64 {
        match self {
            Power::One => 0.0,
            Power::Two => 2.0,
            Power::General(p) => {
                if delta == 0.0 && p < 2.0 {
                    0.0
                } else {
                    p * (p - 1.0) * delta.abs().powf(p - 2.0)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    dim: usize,
    p: f64,
    log_bandwidths: Vec<f64>,
}

impl KernelSpec {
    pub fn isotropic(dim: usize, p: f64, bandwidth: f64) -> Result<Self> {
        check_bandwidth(0, bandwidth)?;
        Self::from_log_bandwidths(KernelFamily::Isotropic, dim, p, vec![bandwidth.ln()])
    }

    pub fn product(p: f64, bandwidths: &[f64]) -> Result<Self> {
        for (i, &h) in bandwidths.iter().enumerate() {
            check_bandwidth(i, h)?;
        }
        Self::from_log_bandwidths(
            KernelFamily::Product,
            bandwidths.len(),
            p,
            bandwidths.iter().map(|h| h.ln()).collect(),
        )
    }

    /// Kernel of `family` with every bandwidth equal to `bandwidth`.
    pub fn uniform(family: KernelFamily, dim: usize, p: f64, bandwidth: f64) -> Result<Self> {
        match family {
            KernelFamily::Isotropic => Self::isotropic(dim, p, bandwidth),
            KernelFamily::Product => Self::product(p, &vec![bandwidth; dim]),
        }
    }

    pub fn from_log_bandwidths(family: KernelFamily, dim: usize, p: f64, log_bandwidths: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("kernel dimension must be at least 1"));
        }
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::param(format!("kernel exponent must satisfy p >= 1, got {p}")));
        }
        let expected = match family {
            KernelFamily::Isotropic => 1,
            KernelFamily::Product => dim,
        };
        if log_bandwidths.len() != expected {
            return Err(Error::param(format!(
                "{family:?} kernel in dimension {dim} takes {expected} bandwidth(s), got {}",
                log_bandwidths.len()
            )));
        }
        if let Some(i) = log_bandwidths.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(format!("log-bandwidth {i} is not finite")));
        }
        Ok(Self {
            family,
            dim,
            p,
            log_bandwidths,
        })
    }

    pub fn with_log_bandwidths(&self, log_bandwidths: Vec<f64>) -> Result<Self> {
        Self::from_log_bandwidths(self.family, self.dim, self.p, log_bandwidths)
    }

    /// Same family and exponent with every bandwidth set to `bandwidth`.
    pub fn with_uniform_bandwidth(&self, bandwidth: f64) -> Result<Self> {
        Self::uniform(self.family, self.dim, self.p, bandwidth)
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn n_params(&self) -> usize {
        self.log_bandwidths.len()
    }

    pub fn log_bandwidths(&self) -> &[f64] {
        &self.log_bandwidths
    }

    pub fn bandwidths(&self) -> Vec<f64> {
        self.log_bandwidths.iter().map(|v| v.exp()).collect()
    }

    /// Bandwidth acting on each coordinate (length `dim`).
    pub fn coordinate_bandwidths(&self) -> Vec<f64> {
        match self.family {
            KernelFamily::Isotropic => vec![self.log_bandwidths[0].exp(); self.dim],
            KernelFamily::Product => self.bandwidths(),
        }
    }

    pub(crate) fn view(&self) -> KernelView {
        KernelView {
            family: self.family,
            power: Power::new(self.p),
            inv_bw: self.coordinate_bandwidths().iter().map(|h| 1.0 / h).collect(),
        }
    }
}

fn check_bandwidth(i: usize, h: f64) -> Result<()> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::param(format!(
            "bandwidth {i} must be positive and finite, got {h}"
        )));
    }
    Ok(())
}

/// Derivatives of each [`KernelEval`] field with respect to every
/// log-bandwidth. Outer index is the parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParamGrads {
    pub value: Vec<f64>,
    pub grad_x: Vec<Vec<f64>>,
    pub grad_y: Vec<Vec<f64>>,
    pub trace_xy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelEval {
    pub value: f64,
    pub grad_x: Vec<f64>,
    pub grad_y: Vec<f64>,
    pub trace_xy: f64,
    pub dtheta: Option<KernelParamGrads>,
}

fn check_dims(spec: &KernelSpec, what: &str, v: &[f64]) -> Result<()> {
    if v.len() != spec.dim {
        return Err(Error::param(format!(
            "{what} has dimension {}, kernel expects {}",
            v.len(),
            spec.dim
        )));
    }
    Ok(())
}

/// Closed-form value and derivatives of the kernel at `(x, y)`.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64], with_param_grads: bool) -> Result<KernelEval> {
    check_dims(spec, "x", x)?;
    check_dims(spec, "y", y)?;
    let view = spec.view();
    let d = spec.dim;
    let mut a = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut c = vec![0.0; d];
    let mut exponent = 0.0;
    for i in 0..d {
        let delta = x[i] - y[i];
        let w = view.inv_bw[i];
        a[i] = w * view.power.pow(delta);
        g[i] = -w * view.power.dpow(delta);
        c[i] = w * view.power.d2pow(delta);
        exponent += a[i];
    }
    let value = (-exponent).exp();
    let grad_x: Vec<f64> = g.iter().map(|gi| value * gi).collect();
    let grad_y: Vec<f64> = grad_x.iter().map(|v| -v).collect();
    let trace_xy = value * (0..d).map(|i| c[i] - g[i] * g[i]).sum::<f64>();

    let dtheta = with_param_grads.then(|| {
        let n = spec.n_params();
        let mut out = KernelParamGrads {
            value: vec![0.0; n],
            grad_x: vec![vec![0.0; d]; n],
            grad_y: vec![vec![0.0; d]; n],
            trace_xy: vec![0.0; n],
        };
        for j in 0..n {
            let owns = |i: usize| match spec.family {
                KernelFamily::Isotropic => true,
                KernelFamily::Product => i == j,
            };
            let a_j: f64 = (0..d).filter(|&i| owns(i)).map(|i| a[i]).sum();
            out.value[j] = value * a_j;
            for i in 0..d {
                let own = if owns(i) { 1.0 } else { 0.0 };
                out.grad_x[j][i] = value * g[i] * (a_j - own);
                out.grad_y[j][i] = -out.grad_x[j][i];
            }
            let local: f64 = (0..d).filter(|&i| owns(i)).map(|i| 2.0 * g[i] * g[i] - c[i]).sum();
            out.trace_xy[j] = a_j * trace_xy + value * local;
        }
        out
    });

    Ok(KernelEval {
        value,
        grad_x,
        grad_y,
        trace_xy,
        dtheta,
    })
}

/// `k(x_i, x_j) · score_j + ∇_{x_j} k(x_i, x_j)`, one summand of the SVGD
/// update direction at `x_i`.
pub fn svgd_direction_terms(spec: &KernelSpec, x_i: &[f64], x_j: &[f64], score_j: &[f64]) -> Result<Vec<f64>> {
    check_dims(spec, "x_i", x_i)?;
    check_dims(spec, "x_j", x_j)?;
    check_dims(spec, "score_j", score_j)?;
    let view = spec.view();
    let mut repulsion = vec![0.0; spec.dim];
    let k = view.svgd_pair(x_i, x_j, &mut repulsion);
    Ok(score_j.iter().zip(&repulsion).map(|(s, r)| k * s + r).collect())
}

/// Flattened per-coordinate kernel parameters for the hot pairwise loops.
#[derive(Debug, Clone)]
pub(crate) struct KernelView {
    family: KernelFamily,
    power: Power,
    inv_bw: Vec<f64>,
}

impl KernelView {
    /// Returns `k(x_i, x_j)` and writes `∇_{x_j} k(x_i, x_j)` into `repulsion`.
    #[inline]
    pub(crate) fn svgd_pair(&self, x_i: &[f64], x_j: &[f64], repulsion: &mut [f64]) -> f64 {
        let mut exponent = 0.0;
        for c in 0..x_i.len() {
            let delta = x_i[c] - x_j[c];
            let w = self.inv_bw[c];
            exponent += w * self.power.pow(delta);
            repulsion[c] = w * self.power.dpow(delta);
        }
        let k = (-exponent).exp();
        for r in repulsion.iter_mut() {
            *r *= k;
        }
        k
    }

    /// Stein kernel `u(x, y)`. When `grad` is given, `∂u/∂log h_j` is added
    /// into `grad[j]`.
    #[inline]
    pub(crate) fn stein_pair(&self, x: &[f64], y: &[f64], sx: &[f64], sy: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let d = x.len();
        let mut exponent = 0.0;
        let mut score_dot = 0.0;
        let mut cross = 0.0;
        let mut curvature = 0.0;
        for c in 0..d {
            let delta = x[c] - y[c];
            let w = self.inv_bw[c];
            exponent += w * self.power.pow(delta);
            let g = -w * self.power.dpow(delta);
            score_dot += sx[c] * sy[c];
            cross += g * (sy[c] - sx[c]);
            curvature += w * self.power.d2pow(delta) - g * g;
        }
        let k = (-exponent).exp();
        let u = k * (score_dot + cross) + k * curvature;

        if let Some(grad) = grad {
            match self.family {
                KernelFamily::Isotropic => {
                    let mut local = 0.0;
                    for c in 0..d {
                        let delta = x[c] - y[c];
                        let w = self.inv_bw[c];
                        let g = -w * self.power.dpow(delta);
                        local += 2.0 * g * g - w * self.power.d2pow(delta) - g * (sy[c] - sx[c]);
                    }
                    grad[0] += exponent * u + k * local;
                }
                KernelFamily::Product => {
                    for c in 0..d {
                        let delta = x[c] - y[c];
                        let w = self.inv_bw[c];
                        let a = w * self.power.pow(delta);
                        let g = -w * self.power.dpow(delta);
                        let local = 2.0 * g * g - w * self.power.d2pow(delta) - g * (sy[c] - sx[c]);
                        grad[c] += a * u + k * local;
                    }
                }
            }
        }
        u
    }
}

/// Median heuristic bandwidth `med^p / log(M - 1)`, where `med` is the lower
/// median of the `M(M-1)/2` pairwise distances between distinct particles.
pub fn median_heuristic(ens: &Ensemble, p: f64, norm: MedianNorm) -> Result<f64> {
    let m = ens.m();
    if m < 3 {
        return Err(Error::param(format!(
            "median heuristic needs at least 3 particles, got {m}"
        )));
    }
    let power = Power::new(p);
    let mut distances = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        let xi = ens.particle(i);
        for j in (i + 1)..m {
            let xj = ens.particle(j);
            let dist = match norm {
                MedianNorm::Euclidean => xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
                MedianNorm::P => {
                    let s: f64 = xi.iter().zip(xj).map(|(a, b)| power.pow(a - b)).sum();
                    match power {
                        Power::One => s,
                        Power::Two => s.sqrt(),
                        Power::General(p) => s.powf(1.0 / p),
                    }
                }
            };
            distances.push(dist);
        }
    }
    let mid = (distances.len() - 1) / 2;
    let (_, med, _) = distances.select_nth_unstable_by(mid, f64::total_cmp);
    let med = *med;
    if med == 0.0 {
        return Err(Error::Degenerate("median pairwise distance is zero".to_string()));
    }
    Ok(med.powf(p) / ((m - 1) as f64).ln())
}
