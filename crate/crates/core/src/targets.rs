//! Target distributions: a 1D Gaussian mixture, diagonal Gaussians of
//! growing dimension, and two linear-Gaussian inverse problems whose
//! unknowns are the coefficients of a truncated sine expansion
//! `u(s) = Σ_k x_k √2 sin(π k s)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ensemble::{GaussianInfo, Score, ScoreModel};
use crate::error::{Error, Result};
use crate::linalg::{self, SymMatrix};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != variances.len() {
            return Err(Error::param("mixture needs equally many weights, means and variances"));
        }
        if weights.iter().any(|&w| !(w > 0.0)) || variances.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::param("mixture weights and variances must be positive"));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::param("mixture means must be finite"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::param(format!("mixture weights sum to {total}, expected 1")));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    /// `(1/3) N(-2, 1) + (2/3) N(2, 1)`.
    pub fn two_component() -> Self {
        Self::new(vec![1.0 / 3.0, 2.0 / 3.0], vec![-2.0, 2.0], vec![1.0, 1.0]).expect("valid mixture")
    }

    /// Log of each weighted component density at `x`.
    fn component_logs(&self, x: f64) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), v)| w.ln() - 0.5 * (2.0 * std::f64::consts::PI * v).ln() - 0.5 * (x - m) * (x - m) / v)
            .collect()
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        let logs = self.component_logs(x);
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
    }

    pub fn score(&self, x: f64) -> f64 {
        let logs = self.component_logs(x);
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let resp: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let norm: f64 = resp.iter().sum();
        resp.iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((r, m), v)| r / norm * (-(x - m) / v))
            .sum()
    }

    /// Exact i.i.d. draws: a component by weight, then a normal variate.
    pub fn sample(&self, rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let u = rng.uniform();
                let mut acc = 0.0;
                let mut k = self.weights.len() - 1;
                for (i, w) in self.weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                self.means[k] + self.variances[k].sqrt() * rng.standard_normal()
            })
            .collect()
    }
}

/// `∇ log π(x)` for a 1D mixture: responsibility-weighted component scores.
pub fn mixture_score(gm: &GaussianMixture, x: f64) -> f64 {
    gm.score(x)
}

impl Score for GaussianMixture {
    fn dim(&self) -> usize {
        1
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.score(x[0]);
    }

    fn log_density(&self, x: &[f64]) -> Option<f64> {
        Some(self.log_pdf(x[0]))
    }
}

/// Zero-mean Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    precisions: Vec<f64>,
}

impl Score for DiagGaussian {
    fn dim(&self) -> usize {
        self.precisions.len()
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, xi), p) in out.iter_mut().zip(x).zip(&self.precisions) {
            *o = -p * xi;
        }
    }

    fn log_density(&self, x: &[f64]) -> Option<f64> {
        Some(-0.5 * x.iter().zip(&self.precisions).map(|(v, p)| p * v * v).sum::<f64>())
    }
}

pub fn diag_gaussian_model(variances: &[f64], description: impl Into<String>) -> Result<ScoreModel> {
    if variances.is_empty() || variances.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::param("diagonal Gaussian needs positive finite variances"));
    }
    let score = DiagGaussian {
        precisions: variances.iter().map(|v| 1.0 / v).collect(),
    };
    ScoreModel::new(score, description).with_gaussian(GaussianInfo {
        mean: vec![0.0; variances.len()],
        covariance: SymMatrix::from_diagonal(variances),
    })
}

/// How the marginal variances of the scaling-dimension Gaussian decay with
/// the coordinate index `i = 1..d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceDecay {
    /// `1 / i²`, i.e. `(1, 0.25, 0.1111, …)`.
    #[default]
    InverseSquare,
    /// `1 / i`, i.e. `(1, 1/2, 1/3, …)`.
    Inverse,
}

pub fn scaling_variances(d: usize, decay: VarianceDecay) -> Vec<f64> {
    (1..=d)
        .map(|i| match decay {
            VarianceDecay::InverseSquare => 1.0 / (i * i) as f64,
            VarianceDecay::Inverse => 1.0 / i as f64,
        })
        .collect()
}

/// `N(0, Σ_d)` with diagonal `Σ_d` from [`scaling_variances`].
pub fn diag_gaussian_target(d: usize, decay: VarianceDecay) -> Result<ScoreModel> {
    if d == 0 {
        return Err(Error::param("dimension must be at least 1"));
    }
    diag_gaussian_model(&scaling_variances(d, decay), format!("gauss-diag({d})"))
}

/// `y = F x + ε`, `ε ~ N(0, diag(noise_var))`, prior `x ~ N(0, diag(prior_var))`.
///
/// The posterior precision `P = Fᵀ Γ⁻¹ F + Γ₀⁻¹` and `b = Fᵀ Γ⁻¹ y` are formed
/// once; the score is then `b - P x`.
#[derive(Debug, Clone)]
pub struct LinearGaussianInverse {
    forward: DMatrix<f64>,
    noise_var: Vec<f64>,
    prior_var: Vec<f64>,
    y: Vec<f64>,
    precision: DMatrix<f64>,
    data_term: Vec<f64>,
}

impl LinearGaussianInverse {
    pub fn new(forward: DMatrix<f64>, noise_var: Vec<f64>, prior_var: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let (n_obs, n_x) = forward.shape();
        if noise_var.len() != n_obs || y.len() != n_obs || prior_var.len() != n_x {
            return Err(Error::param(format!(
                "inverse problem shapes disagree: F {n_obs}x{n_x}, noise {}, prior {}, y {}",
                noise_var.len(),
                prior_var.len(),
                y.len()
            )));
        }
        if noise_var
            .iter()
            .chain(&prior_var)
            .any(|&v| !(v > 0.0) || !v.is_finite())
        {
            return Err(Error::param("noise and prior variances must be positive"));
        }
        let weighted = DMatrix::from_fn(n_obs, n_x, |i, j| forward[(i, j)] / noise_var[i]);
        let mut precision = forward.transpose() * &weighted;
        for j in 0..n_x {
            precision[(j, j)] += 1.0 / prior_var[j];
        }
        let precision = SymMatrix::from_matrix(precision)?.into_matrix();
        let data_term = (weighted.transpose() * DVector::from_column_slice(&y))
            .iter()
            .copied()
            .collect();
        Ok(Self {
            forward,
            noise_var,
            prior_var,
            y,
            precision,
            data_term,
        })
    }

    /// Same operator and covariances with a different observation.
    pub fn with_observation(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(self.forward.clone(), self.noise_var.clone(), self.prior_var.clone(), y)
    }

    pub fn forward(&self) -> &DMatrix<f64> {
        &self.forward
    }

    pub fn noise_var(&self) -> &[f64] {
        &self.noise_var
    }

    pub fn prior_var(&self) -> &[f64] {
        &self.prior_var
    }

    pub fn observation(&self) -> &[f64] {
        &self.y
    }

    pub fn n_x(&self) -> usize {
        self.forward.ncols()
    }

    pub fn n_obs(&self) -> usize {
        self.forward.nrows()
    }

    /// `∇ log π(x) = Fᵀ Γ⁻¹ (y - F x) - Γ₀⁻¹ x`, evaluated as `b - P x`.
    pub fn linear_gaussian_score(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_x()];
        self.score_into(x, &mut out);
        out
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        let fx = &self.forward * DVector::from_column_slice(x);
        let misfit: f64 = (0..self.n_obs())
            .map(|i| (self.y[i] - fx[i]).powi(2) / self.noise_var[i])
            .sum();
        let prior: f64 = x.iter().zip(&self.prior_var).map(|(v, p)| v * v / p).sum();
        -0.5 * (misfit + prior)
    }

    /// Posterior `N(μ_π, Σ_π)` with `Σ_π = P⁻¹`, `μ_π = Σ_π b`.
    pub fn exact_posterior(&self) -> Result<(Vec<f64>, SymMatrix)> {
        let precision = SymMatrix::from_matrix(self.precision.clone())?;
        let mean = linalg::solve_spd(&precision, &self.data_term)?;
        let cov = linalg::inverse_spd(&precision)?;
        Ok((mean, cov))
    }

    pub fn into_model(self, description: impl Into<String>) -> Result<ScoreModel> {
        let (mean, covariance) = self.exact_posterior()?;
        ScoreModel::new(self, description).with_gaussian(GaussianInfo { mean, covariance })
    }
}

impl Score for LinearGaussianInverse {
    fn dim(&self) -> usize {
        self.n_x()
    }

    fn score_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.n_x();
        for (i, o) in out.iter_mut().enumerate().take(n) {
            let mut acc = self.data_term[i];
            for j in 0..n {
                acc -= self.precision[(i, j)] * x[j];
            }
            *o = acc;
        }
    }

    fn log_density(&self, x: &[f64]) -> Option<f64> {
        Some(self.log_pdf(x))
    }
}

/// Sine basis function `√2 sin(π k s)`.
pub fn sine_basis(k: usize, s: f64) -> f64 {
    std::f64::consts::SQRT_2 * (std::f64::consts::PI * k as f64 * s).sin()
}

/// An inverse problem together with the reference draw used to build its data.
#[derive(Debug, Clone)]
pub struct InverseProblem {
    pub problem: LinearGaussianInverse,
    pub x_ref: Vec<f64>,
    pub y_ref: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdeProblemSpec {
    /// Grid of `2^r` cells on `[0, 1]`.
    pub mesh_exponent: u32,
    pub n_obs: usize,
    pub n_x: usize,
    /// Prior variances are `prior_scale · k^{-2}`.
    pub prior_scale: f64,
    pub noise_var: f64,
    pub reference_seed: u64,
}

impl Default for OdeProblemSpec {
    fn default() -> Self {
        Self {
            mesh_exponent: 8,
            n_obs: 256,
            n_x: 16,
            prior_scale: 50.0,
            noise_var: 1e-3,
            reference_seed: 0,
        }
    }
}

impl OdeProblemSpec {
    pub fn validate(&self) -> Result<()> {
        let cells = self.cells()?;
        let mut errs = Vec::new();
        if self.n_obs == 0 || self.n_obs > cells || cells % self.n_obs != 0 {
            errs.push(format!(
                "ode n_obs = {} must divide the grid size 2^{} = {cells}",
                self.n_obs, self.mesh_exponent
            ));
        }
        if self.n_x == 0 {
            errs.push("ode n_x must be at least 1".to_string());
        }
        if !(self.prior_scale > 0.0) || !(self.noise_var > 0.0) {
            errs.push("ode prior_scale and noise_var must be positive".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::param(errs.join("; ")))
        }
    }

    fn cells(&self) -> Result<usize> {
        if self.mesh_exponent == 0 || self.mesh_exponent > 20 {
            return Err(Error::param(format!(
                "mesh exponent must lie in 1..=20, got {}",
                self.mesh_exponent
            )));
        }
        Ok(1usize << self.mesh_exponent)
    }

    pub fn prior_variances(&self) -> Vec<f64> {
        (1..=self.n_x).map(|k| self.prior_scale / (k * k) as f64).collect()
    }
}

/// Solves `-f'' + f = u`, `f(0) = f(1) = 0` on `2^r` uniform cells with central
/// differences. `u` and the result hold the `2^r - 1` interior node values.
pub fn solve_ode_interior(mesh_exponent: u32, u: &[f64]) -> Result<Vec<f64>> {
    let cells = 1usize << mesh_exponent;
    let n = cells - 1;
    if u.len() != n {
        return Err(Error::param(format!(
            "right-hand side has {} values, grid has {n} interior nodes",
            u.len()
        )));
    }
    let inv_dx2 = (cells * cells) as f64;
    let off = vec![-inv_dx2; n.saturating_sub(1)];
    let diag = vec![2.0 * inv_dx2 + 1.0; n];
    linalg::solve_tridiag(&off, &diag, &off, u)
}

/// Linear inverse problem for the right-hand side of `-f'' + f = u`.
///
/// `F = O ∘ H⁻¹ ∘ A` is assembled column by column: column `k` is the
/// discrete solution for `u = ψ_k`, read at `s_i = i / n_obs`. The point
/// `s = 1` sits on the boundary and reads zero. The reference draw is
/// `x̄ ~ N(0, Γ₀)` and `ȳ = F x̄` without noise.
pub fn build_ode_problem(spec: &OdeProblemSpec, rng: &mut Rng) -> Result<InverseProblem> {
    spec.validate()?;
    let cells = spec.cells()?;
    let n_interior = cells - 1;
    let stride = cells / spec.n_obs;
    let mut forward = DMatrix::zeros(spec.n_obs, spec.n_x);
    for k in 1..=spec.n_x {
        let u: Vec<f64> = (1..=n_interior)
            .map(|j| sine_basis(k, j as f64 / cells as f64))
            .collect();
        let f = solve_ode_interior(spec.mesh_exponent, &u)?;
        for i in 1..=spec.n_obs {
            let node = i * stride;
            forward[(i - 1, k - 1)] = if node == cells { 0.0 } else { f[node - 1] };
        }
    }
    let prior_var = spec.prior_variances();
    finish_problem(forward, vec![spec.noise_var; spec.n_obs], prior_var, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpProblemSpec {
    pub n_x: usize,
    pub n_y: usize,
    pub reference_seed: u64,
}

impl Default for GpProblemSpec {
    fn default() -> Self {
        Self {
            n_x: 16,
            n_y: 64,
            reference_seed: 0,
        }
    }
}

/// GP regression with `A[i, k] = ψ_k(i / n_y)`, prior variances `k^{-2}`,
/// unit noise, `x̄ ~ N(0, Σ)` and `ȳ = A x̄`.
pub fn build_gp_problem(spec: &GpProblemSpec, rng: &mut Rng) -> Result<InverseProblem> {
    if spec.n_x == 0 || spec.n_y == 0 {
        return Err(Error::param("gp problem needs n_x >= 1 and n_y >= 1"));
    }
    let forward = DMatrix::from_fn(spec.n_y, spec.n_x, |i, k| {
        sine_basis(k + 1, (i + 1) as f64 / spec.n_y as f64)
    });
    let prior_var = (1..=spec.n_x).map(|k| 1.0 / (k * k) as f64).collect();
    finish_problem(forward, vec![1.0; spec.n_y], prior_var, rng)
}

fn finish_problem(
    forward: DMatrix<f64>,
    noise_var: Vec<f64>,
    prior_var: Vec<f64>,
    rng: &mut Rng,
) -> Result<InverseProblem> {
    let x_ref: Vec<f64> = prior_var.iter().map(|v| v.sqrt() * rng.standard_normal()).collect();
    let y_ref: Vec<f64> = (&forward * DVector::from_column_slice(&x_ref))
        .iter()
        .copied()
        .collect();
    let problem = LinearGaussianInverse::new(forward, noise_var, prior_var, y_ref.clone())?;
    Ok(InverseProblem { problem, x_ref, y_ref })
}
