//! Sample-quality diagnostics.

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::linalg::{sym_sqrt, SymMatrix};

/// Exact `∫ |F_a(x) - F_b(x)| dx` between the empirical CDFs of two sorted
/// samples, integrated over the merged breakpoints.
pub fn wasserstein1_1d(sample_a: &[f64], sample_b: &[f64]) -> Result<f64> {
    for (name, s) in [("first", sample_a), ("second", sample_b)] {
        if s.is_empty() {
            return Err(Error::param(format!("{name} sample is empty")));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::param(format!("{name} sample has non-finite values")));
        }
        if s.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::param(format!("{name} sample is not sorted")));
        }
    }
    let (na, nb) = (sample_a.len(), sample_b.len());
    if na == nb {
        let total: f64 = sample_a.iter().zip(sample_b).map(|(a, b)| (a - b).abs()).sum();
        return Ok(total / na as f64);
    }
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = sample_a[0].min(sample_b[0]);
    let mut total = 0.0;
    while i < na || j < nb {
        let next = match (sample_a.get(i), sample_b.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        let fa = i as f64 / na as f64;
        let fb = j as f64 / nb as f64;
        total += (fa - fb).abs() * (next - prev);
        while i < na && sample_a[i] == next {
            i += 1;
        }
        while j < nb && sample_b[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

/// Sorted copy of `values`.
pub fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Wasserstein-2 distance between `N(mu1, sigma1)` and `N(mu2, sigma2)`:
///
/// `W₂² = ‖μ₁ - μ₂‖² + Tr(Σ₁ + Σ₂ - 2 (Σ₁^{1/2} Σ₂ Σ₁^{1/2})^{1/2})`
pub fn bures_w2(mu1: &[f64], sigma1: &SymMatrix, mu2: &[f64], sigma2: &SymMatrix) -> Result<f64> {
    let d = mu1.len();
    if mu2.len() != d || sigma1.n() != d || sigma2.n() != d {
        return Err(Error::param("Bures-Wasserstein arguments have mismatched dimensions"));
    }
    let mean_term: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b) * (a - b)).sum();
    let root1 = sym_sqrt(sigma1)?;
    let inner = root1.as_matrix() * sigma2.as_matrix() * root1.as_matrix();
    let cross = sym_sqrt(&SymMatrix::from_matrix(inner)?)?;
    let cov_term = sigma1.trace() + sigma2.trace() - 2.0 * cross.trace();
    Ok((mean_term + cov_term).max(0.0).sqrt())
}

/// Mean over particles of `Σ_i x_i² · precision_i`.
pub fn chi2_statistic(ens: &Ensemble, sigma_inv_diag: &[f64]) -> Result<f64> {
    if sigma_inv_diag.len() != ens.d() {
        return Err(Error::param(
            "precision vector length does not match ensemble dimension",
        ));
    }
    let total: f64 = ens
        .particles()
        .map(|x| x.iter().zip(sigma_inv_diag).map(|(v, p)| v * v * p).sum::<f64>())
        .sum();
    Ok(total / ens.m() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSummary {
    pub mean: Vec<f64>,
    /// Unbiased sample covariance (divisor `M - 1`).
    pub covariance: SymMatrix,
    pub marginal_variances: Vec<f64>,
    pub trace: f64,
}

pub fn moment_summary(ens: &Ensemble) -> Result<MomentSummary> {
    let (m, d) = (ens.m(), ens.d());
    if m < 2 {
        return Err(Error::param(format!(
            "moment summary needs at least 2 particles, got {m}"
        )));
    }
    let mut mean = vec![0.0; d];
    for x in ens.particles() {
        for (acc, v) in mean.iter_mut().zip(x) {
            *acc += v;
        }
    }
    for v in mean.iter_mut() {
        *v /= m as f64;
    }
    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for x in ens.particles() {
        for (c, (v, mu)) in centered.iter_mut().zip(x.iter().zip(&mean)) {
            *c = v - mu;
        }
        for a in 0..d {
            for b in a..d {
                cov[a * d + b] += centered[a] * centered[b];
            }
        }
    }
    let denom = (m - 1) as f64;
    for a in 0..d {
        for b in a..d {
            let v = cov[a * d + b] / denom;
            cov[a * d + b] = v;
            cov[b * d + a] = v;
        }
    }
    let covariance = SymMatrix::from_row_major(d, &cov)?;
    let marginal_variances = covariance.diagonal();
    let trace = marginal_variances.iter().sum();
    Ok(MomentSummary {
        mean,
        covariance,
        marginal_variances,
        trace,
    })
}

/// Divides coordinate `i` of every particle by `target_marginal_sds[i]`.
pub fn normalized_marginals(ens: &Ensemble, target_marginal_sds: &[f64]) -> Result<Ensemble> {
    if target_marginal_sds.len() != ens.d() {
        return Err(Error::param("standard deviation vector length does not match ensemble"));
    }
    if let Some(i) = target_marginal_sds.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::param(format!(
            "marginal standard deviation {i} must be positive"
        )));
    }
    let data = ens
        .particles()
        .flat_map(|x| x.iter().zip(target_marginal_sds).map(|(v, s)| v / s))
        .collect();
    Ensemble::new(ens.m(), ens.d(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn w1_basic_cases() {
        assert_eq!(wasserstein1_1d(&[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(wasserstein1_1d(&[0.0], &[3.0]).unwrap(), 3.0);
        // Half of the mass moves by 1 between {0, 1} and {1}.
        assert!((wasserstein1_1d(&[0.0, 1.0], &[1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(wasserstein1_1d(&[], &[1.0]).is_err());
        assert!(wasserstein1_1d(&[1.0, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn w1_unequal_sizes_agree_with_replicated_equal_sizes() {
        let mut rng = Rng::new(4);
        let a = sorted(&(0..3).map(|_| rng.standard_normal()).collect::<Vec<_>>());
        let b = sorted(&(0..2).map(|_| rng.standard_normal()).collect::<Vec<_>>());
        let rep = |s: &[f64], k: usize| sorted(&s.iter().flat_map(|&v| std::iter::repeat_n(v, k)).collect::<Vec<_>>());
        let direct = wasserstein1_1d(&a, &b).unwrap();
        let replicated = wasserstein1_1d(&rep(&a, 2), &rep(&b, 3)).unwrap();
        assert!((direct - replicated).abs() < 1e-12);
    }

    #[test]
    fn bures_cases() {
        let i1 = SymMatrix::identity(1);
        assert_eq!(bures_w2(&[0.0], &i1, &[0.0], &i1).unwrap(), 0.0);
        assert!((bures_w2(&[0.0], &i1, &[3.0], &i1).unwrap() - 3.0).abs() < 1e-12);
        let a = SymMatrix::from_diagonal(&[4.0, 1.0]);
        let b = SymMatrix::identity(2);
        assert!((bures_w2(&[0.0, 0.0], &a, &[0.0, 0.0], &b).unwrap() - 1.0).abs() < 1e-12);
        let bad = SymMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(matches!(
            bures_w2(&[0.0, 0.0], &bad, &[0.0, 0.0], &b),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn chi2_cases() {
        let origin = Ensemble::new(1, 3, vec![0.0; 3]).unwrap();
        assert_eq!(chi2_statistic(&origin, &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        // ±2 e_1 and ±e_2 with precisions (1, 4): (4 + 4 + 4 + 4) / 4 = 4.
        let e = Ensemble::from_rows(&[vec![2.0, 0.0], vec![-2.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap();
        assert_eq!(chi2_statistic(&e, &[1.0, 4.0]).unwrap(), 4.0);
    }

    #[test]
    fn moments_cases() {
        let e = Ensemble::new(2, 1, vec![0.0, 2.0]).unwrap();
        let s = moment_summary(&e).unwrap();
        assert_eq!(s.mean, vec![1.0]);
        assert_eq!(s.marginal_variances, vec![2.0]);

        let same = Ensemble::from_rows(&vec![vec![1.0, 2.0]; 5]).unwrap();
        let s = moment_summary(&same).unwrap();
        assert!(s.covariance.max_abs() == 0.0);
        assert!(moment_summary(&Ensemble::new(1, 1, vec![0.0]).unwrap()).is_err());
    }

    #[test]
    fn normalized_marginal_cases() {
        let e = Ensemble::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
        assert_eq!(normalized_marginals(&e, &[1.0, 1.0]).unwrap(), e);
        // sd_i = 1/i multiplies coordinate i by i.
        let n = normalized_marginals(&e, &[1.0, 0.5]).unwrap();
        assert_eq!(n.particle(0), &[1.0, 4.0]);
        // sd_i = 1/√i multiplies coordinate i by √i.
        let r = normalized_marginals(&e, &[1.0, 1.0 / 2f64.sqrt()]).unwrap();
        assert!((r.particle(0)[1] - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!(normalized_marginals(&e, &[1.0, 0.0]).is_err());
        let single = Ensemble::new(1, 1, vec![2.0]).unwrap();
        assert_eq!(normalized_marginals(&single, &[4.0]).unwrap().as_slice(), &[0.5]);
    }
}
