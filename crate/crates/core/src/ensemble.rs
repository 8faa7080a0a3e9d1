//! Particle ensembles and the score-function interface to target distributions.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::rng::Rng;

/// `M` particles in `R^d`, stored row-major. All coordinates are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    m: usize,
    d: usize,
    data: Vec<f64>,
}

impl Ensemble {
    pub fn new(m: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if m == 0 || d == 0 {
            return Err(Error::param(format!(
                "ensemble needs at least one particle and one dimension (got m={m}, d={d})"
            )));
        }
        if data.len() != m * d {
            return Err(Error::param(format!(
                "ensemble data has {} entries, expected {m}x{d}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(format!(
                "particle {} has a non-finite coordinate",
                pos / d
            )));
        }
        Ok(Self { m, d, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::param("ensemble rows have differing lengths"));
        }
        Self::new(m, d, rows.concat())
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn particles(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.particles().map(|p| p[j]).collect()
    }

    /// A new ensemble whose particle `i` is `self.particle(perm[i])`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.m {
            return Err(Error::param("permutation length does not match ensemble"));
        }
        let mut data = Vec::with_capacity(self.data.len());
        for &i in perm {
            if i >= self.m {
                return Err(Error::param("permutation index out of range"));
            }
            data.extend_from_slice(self.particle(i));
        }
        Ok(Self {
            m: self.m,
            d: self.d,
            data,
        })
    }

    /// Particle indices sorted lexicographically by coordinates.
    ///
    /// Pairwise sums are evaluated in this order so that results do not
    /// depend on how the particles happen to be indexed.
    pub fn canonical_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.m).collect();
        order.sort_by(|&a, &b| {
            self.particle(a)
                .iter()
                .zip(self.particle(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        order
    }
}

/// Draws `m` particles from `N(mean, diag(diag_sqrt_cov)²)`.
pub fn sample_gaussian(rng: &mut Rng, m: usize, mean: &[f64], diag_sqrt_cov: &[f64]) -> Result<Ensemble> {
    if mean.len() != diag_sqrt_cov.len() {
        return Err(Error::param("mean and standard deviation lengths differ"));
    }
    if let Some(i) = diag_sqrt_cov.iter().position(|&s| !(s >= 0.0) || !s.is_finite()) {
        return Err(Error::param(format!(
            "standard deviation {i} must be finite and non-negative, got {}",
            diag_sqrt_cov[i]
        )));
    }
    let d = mean.len();
    let mut data = Vec::with_capacity(m * d);
    for _ in 0..m {
        for (mu, sd) in mean.iter().zip(diag_sqrt_cov) {
            data.push(mu + sd * rng.standard_normal());
        }
    }
    Ensemble::new(m, d, data)
}

/// A target density accessed through its score `∇ log π`.
pub trait Score: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes `∇ log π(x)` into `out` (both of length `dim()`).
    fn score_into(&self, x: &[f64], out: &mut [f64]);

    /// Unnormalized log-density, when available in closed form.
    fn log_density(&self, _x: &[f64]) -> Option<f64> {
        None
    }
}

/// Mean and covariance of a target known to be Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianInfo {
    pub mean: Vec<f64>,
    pub covariance: SymMatrix,
}

#[derive(Clone)]
pub struct ScoreModel {
    score: Arc<dyn Score>,
    description: String,
    gaussian: Option<GaussianInfo>,
}

impl fmt::Debug for ScoreModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScoreModel")
            .field("dim", &self.dim())
            .field("description", &self.description)
            .field("gaussian", &self.gaussian.is_some())
            .finish()
    }
}

impl ScoreModel {
    pub fn new(score: impl Score + 'static, description: impl Into<String>) -> Self {
        Self {
            score: Arc::new(score),
            description: description.into(),
            gaussian: None,
        }
    }

    pub fn with_gaussian(mut self, info: GaussianInfo) -> Result<Self> {
        if info.mean.len() != self.dim() || info.covariance.n() != self.dim() {
            return Err(Error::param("gaussian info dimension does not match the score model"));
        }
        self.gaussian = Some(info);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.score.dim()
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn gaussian_info(&self) -> Option<&GaussianInfo> {
        self.gaussian.as_ref()
    }

    pub fn score_into(&self, x: &[f64], out: &mut [f64]) {
        self.score.score_into(x, out);
    }

    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.score.score_into(x, &mut out);
        out
    }

    pub fn log_density(&self, x: &[f64]) -> Option<f64> {
        self.score.log_density(x)
    }

    /// Largest relative discrepancy between `score(x)` and `-Σ⁻¹(x - μ)` over
    /// `probes` points drawn from `N(μ, diag Σ)`. `None` for non-Gaussian models.
    pub fn gaussian_consistency(&self, rng: &mut Rng, probes: usize) -> Result<Option<f64>> {
        let Some(info) = &self.gaussian else {
            return Ok(None);
        };
        let d = self.dim();
        let precision = crate::linalg::inverse_spd(&info.covariance)?;
        let sds: Vec<f64> = info.covariance.diagonal().iter().map(|v| v.sqrt()).collect();
        let mut worst = 0.0_f64;
        for _ in 0..probes {
            let x: Vec<f64> = (0..d)
                .map(|i| info.mean[i] + sds[i] * (1.0 + rng.standard_normal()))
                .collect();
            let centered: Vec<f64> = x.iter().zip(&info.mean).map(|(a, b)| a - b).collect();
            let want: Vec<f64> = precision.mul_vec(&centered).iter().map(|v| -v).collect();
            let got = self.score(&x);
            let scale = want.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
            let err = got.iter().zip(&want).fold(0.0_f64, |a, (g, w)| a.max((g - w).abs()));
            worst = worst.max(err / scale);
        }
        Ok(Some(worst))
    }
}
