//! Independent reference implementations used as test oracles. Nothing here
//! calls into the kernel or Stein code under test; kernels are described only
//! by their exponent and per-coordinate bandwidths.

#![allow(dead_code)]

use steinflow::Rng;

/// `k(x, y) = exp(-Σ_i |x_i - y_i|^p / h_i)`.
#[derive(Debug, Clone)]
pub struct RefKernel {
    pub p: f64,
    pub h: Vec<f64>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl RefKernel {
    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut e = 0.0;
        for i in 0..x.len() {
            e += (x[i] - y[i]).abs().powf(self.p) / self.h[i];
        }
        (-e).exp()
    }

    /// `∂k/∂x_c`.
    pub fn dx(&self, x: &[f64], y: &[f64], c: usize) -> f64 {
        let d = x[c] - y[c];
        -self.value(x, y) * self.p * d.abs().powf(self.p - 1.0) * sign(d) / self.h[c]
    }

    /// `∂k/∂y_c`.
    pub fn dy(&self, x: &[f64], y: &[f64], c: usize) -> f64 {
        let d = x[c] - y[c];
        self.value(x, y) * self.p * d.abs().powf(self.p - 1.0) * sign(d) / self.h[c]
    }

    /// `Σ_c ∂²k/∂x_c∂y_c`.
    pub fn trace_xy(&self, x: &[f64], y: &[f64]) -> f64 {
        let k = self.value(x, y);
        let mut t = 0.0;
        for c in 0..x.len() {
            let d = (x[c] - y[c]).abs();
            let w = 1.0 / self.h[c];
            let first = self.p * d.powf(self.p - 1.0) * w;
            // Second derivative of |d|^p, dropped for p = 1 where it is a point mass.
            let second = if self.p == 1.0 {
                0.0
            } else {
                self.p * (self.p - 1.0) * d.powf(self.p - 2.0) * w
            };
            t += k * (second - first * first);
        }
        t
    }

    pub fn stein(&self, x: &[f64], y: &[f64], sx: &[f64], sy: &[f64]) -> f64 {
        let n = x.len();
        let k = self.value(x, y);
        let mut u = 0.0;
        for c in 0..n {
            u += k * sx[c] * sy[c];
            u += sy[c] * self.dx(x, y, c);
            u += sx[c] * self.dy(x, y, c);
        }
        u + self.trace_xy(x, y)
    }
}

pub fn ksd_u_oracle(k: &RefKernel, xs: &[Vec<f64>], ss: &[Vec<f64>]) -> f64 {
    let m = xs.len();
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                total += k.stein(&xs[i], &xs[j], &ss[i], &ss[j]);
            }
        }
    }
    total / (m * (m - 1)) as f64
}

pub fn ksd_v_oracle(k: &RefKernel, xs: &[Vec<f64>], ss: &[Vec<f64>]) -> f64 {
    let m = xs.len();
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            total += k.stein(&xs[i], &xs[j], &ss[i], &ss[j]);
        }
    }
    total / (m * m) as f64
}

/// `x_i + γ/M Σ_j [k(x_j, x_i) s_j + ∇_{x_j} k(x_j, x_i)]`, one coordinate at a time.
pub fn svgd_step_oracle(k: &RefKernel, xs: &[Vec<f64>], ss: &[Vec<f64>], gamma: f64) -> Vec<Vec<f64>> {
    let m = xs.len();
    let d = xs[0].len();
    let mut out = xs.to_vec();
    for i in 0..m {
        for c in 0..d {
            let mut phi = 0.0;
            for j in 0..m {
                phi += k.value(&xs[j], &xs[i]) * ss[j][c] + k.dx(&xs[j], &xs[i], c);
            }
            out[i][c] += gamma * phi / m as f64;
        }
    }
    out
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials).
pub fn assignment_cost(cost: &[Vec<f64>]) -> f64 {
    let n = cost.len();
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost[p[j] - 1][j - 1]).sum()
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// W1 between two uniform empirical measures: replicate atoms to a common
/// count and solve the resulting assignment problem with cost `|a - b|`.
pub fn w1_assignment_oracle(a: &[f64], b: &[f64]) -> f64 {
    let l = a.len() / gcd(a.len(), b.len()) * b.len();
    let ra: Vec<f64> = a.iter().flat_map(|&x| std::iter::repeat(x).take(l / a.len())).collect();
    let rb: Vec<f64> = b.iter().flat_map(|&x| std::iter::repeat(x).take(l / b.len())).collect();
    let cost: Vec<Vec<f64>> = ra.iter().map(|x| rb.iter().map(|y| (x - y).abs()).collect()).collect();
    assignment_cost(&cost) / l as f64
}

/// Smallest mean `|a_i - b_σ(i)|` over all permutations σ.
pub fn w1_permutation_oracle(a: &[f64], b: &[f64]) -> f64 {
    fn rec(a: &[f64], b: &[f64], used: &mut Vec<bool>, i: usize, acc: f64, best: &mut f64) {
        if i == a.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                rec(a, b, used, i + 1, acc + (a[i] - b[j]).abs(), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    rec(a, b, &mut vec![false; b.len()], 0, 0.0, &mut best);
    best / a.len() as f64
}

/// Two-pass mean and unbiased covariance.
pub fn moments_oracle(xs: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = xs.len();
    let d = xs[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|c| xs.iter().map(|x| x[c]).sum::<f64>() / m as f64)
        .collect();
    let cov = (0..d)
        .map(|a| {
            (0..d)
                .map(|b| xs.iter().map(|x| (x[a] - mean[a]) * (x[b] - mean[b])).sum::<f64>() / (m - 1) as f64)
                .collect()
        })
        .collect();
    (mean, cov)
}

pub fn normal_rows(rng: &mut Rng, m: usize, d: usize, sd: f64) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| (0..d).map(|_| sd * rng.standard_normal()).collect())
        .collect()
}

/// Log-uniform draw in `[lo, hi]`.
pub fn log_uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.uniform() * (hi.ln() - lo.ln())).exp()
}

/// `‖a - b‖_∞ / max(‖b‖_∞, tiny)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    diff / scale.max(1e-300)
}

/// Central difference of `f` along coordinate `c` of `x` with step `step`.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], c: usize, step: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[c] += step;
    xm[c] -= step;
    (f(&xp) - f(&xm)) / (2.0 * step)
}

/// Random point pairs whose coordinates differ by at least `gap` everywhere,
/// so steps of `1e-5` never cross the `p = 1` kink.
pub fn untied_pair(rng: &mut Rng, d: usize, gap: f64) -> (Vec<f64>, Vec<f64>) {
    loop {
        let x: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        if x.iter().zip(&y).all(|(a, b)| (a - b).abs() > gap) {
            return (x, y);
        }
    }
}

/// Random ensemble with all pairwise coordinate gaps above `gap`.
pub fn untied_rows(rng: &mut Rng, m: usize, d: usize, gap: f64) -> Vec<Vec<f64>> {
    loop {
        let xs = normal_rows(rng, m, d, 1.0);
        let ok = (0..m).all(|i| (i + 1..m).all(|j| (0..d).all(|c| (xs[i][c] - xs[j][c]).abs() > gap)));
        if ok {
            return xs;
        }
    }
}
