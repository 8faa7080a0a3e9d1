//! Invariants checked over randomly generated instances.

mod common;

use common::*;
use proptest::prelude::*;
use steinflow::dynamics::{run_svgd, AdaptiveParams, Method, MethodConfig, NoMetrics, RunOptions};
use steinflow::metrics::{bures_w2, chi2_statistic, moment_summary, sorted, wasserstein1_1d};
use steinflow::targets::diag_gaussian_model;
use steinflow::{
    kernel_eval, ksd_ascent_step, ksd_squared, median_heuristic, sample_gaussian, Ensemble, Estimator, KernelFamily,
    KernelSpec, MedianNorm, Rng, ScoreCache, StepSchedule, SymMatrix,
};

fn product_spec(rng: &mut Rng, d: usize, p: f64) -> KernelSpec {
    let hs: Vec<f64> = (0..d).map(|_| log_uniform(rng, 0.2, 5.0)).collect();
    KernelSpec::product(p, &hs).unwrap()
}

fn random_perm(rng: &mut Rng, m: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..m).collect();
    for i in (1..m).rev() {
        perm.swap(i, rng.below(i + 1));
    }
    perm
}

fn permute_rows(rows: &[Vec<f64>], perm: &[usize]) -> Vec<Vec<f64>> {
    perm.iter().map(|&i| rows[i].clone()).collect()
}

fn cache(ss: &[Vec<f64>]) -> ScoreCache {
    ScoreCache::from_raw(ss.len(), ss[0].len(), ss.concat()).unwrap()
}

proptest! {
    #[test]
    fn kernel_is_symmetric_bounded_and_antisymmetric_in_gradients(seed in any::<u64>(), d in 1usize..6, p2 in any::<bool>()) {
        let mut rng = Rng::new(seed);
        let p = if p2 { 2.0 } else { 1.0 };
        let spec = product_spec(&mut rng, d, p);
        let x: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let a = kernel_eval(&spec, &x, &y, false).unwrap();
        let b = kernel_eval(&spec, &y, &x, false).unwrap();
        prop_assert_eq!(a.value, b.value);
        prop_assert_eq!(a.trace_xy, b.trace_xy);
        prop_assert!(a.value > 0.0 && a.value <= 1.0);
        prop_assert!(a.value < 1.0);
        for c in 0..d {
            prop_assert_eq!(a.grad_x[c], -a.grad_y[c]);
        }
        prop_assert_eq!(kernel_eval(&spec, &x, &x, false).unwrap().value, 1.0);
    }

    #[test]
    fn isotropic_and_product_coincide_for_laplace_kernels(seed in any::<u64>(), d in 1usize..6) {
        let mut rng = Rng::new(seed);
        let h = log_uniform(&mut rng, 0.2, 5.0);
        let iso = KernelSpec::isotropic(d, 1.0, h).unwrap();
        let prod = KernelSpec::product(1.0, &vec![h; d]).unwrap();
        let x: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let a = kernel_eval(&iso, &x, &y, false).unwrap();
        let b = kernel_eval(&prod, &x, &y, false).unwrap();
        prop_assert!((a.value - b.value).abs() <= 1e-12);
        prop_assert!((a.trace_xy - b.trace_xy).abs() <= 1e-12);
        prop_assert!(rel_err(&a.grad_x, &b.grad_x) <= 1e-12);
    }

    #[test]
    fn ksd_is_permutation_invariant(seed in any::<u64>(), m in 2usize..12, d in 1usize..4, p2 in any::<bool>()) {
        let mut rng = Rng::new(seed);
        let p = if p2 { 2.0 } else { 1.0 };
        let spec = product_spec(&mut rng, d, p);
        let xs = normal_rows(&mut rng, m, d, 1.0);
        let ss = normal_rows(&mut rng, m, d, 1.0);
        let perm = random_perm(&mut rng, m);
        let variants = if p2 { vec![Estimator::U, Estimator::V] } else { vec![Estimator::U] };
        for variant in variants {
            let a = ksd_squared(&spec, &Ensemble::from_rows(&xs).unwrap(), &cache(&ss), variant, None).unwrap();
            let b = ksd_squared(
                &spec,
                &Ensemble::from_rows(&permute_rows(&xs, &perm)).unwrap(),
                &cache(&permute_rows(&ss, &perm)),
                variant,
                None,
            )
            .unwrap();
            prop_assert_eq!(a.ksd2, b.ksd2);
            prop_assert_eq!(a.grad_theta, b.grad_theta);
        }
    }

    #[test]
    fn v_statistic_is_nonnegative_for_gaussian_kernels(seed in any::<u64>(), m in 1usize..15, d in 1usize..5) {
        let mut rng = Rng::new(seed);
        let spec = product_spec(&mut rng, d, 2.0);
        let xs = normal_rows(&mut rng, m, d, 1.5);
        let ss = normal_rows(&mut rng, m, d, 2.0);
        let v = ksd_squared(&spec, &Ensemble::from_rows(&xs).unwrap(), &cache(&ss), Estimator::V, None).unwrap();
        prop_assert!(v.ksd2 >= -1e-12, "{}", v.ksd2);
    }

    #[test]
    fn trajectories_are_permutation_equivariant(seed in any::<u64>(), m in 3usize..8, which in 0usize..4) {
        let mut rng = Rng::new(seed);
        let d = 2;
        let model = diag_gaussian_model(&[1.0, 0.25], "test").unwrap();
        let ens = sample_gaussian(&mut rng, m, &[0.5, -0.5], &[1.0, 1.0]).unwrap();
        let perm = random_perm(&mut rng, m);
        let spec = product_spec(&mut rng, d, 2.0);
        let (method, schedule) = match which {
            0 => (MethodConfig::new(Method::FixedBandwidth), StepSchedule::fixed(0.1).unwrap()),
            1 => (MethodConfig::median(), StepSchedule::fixed(0.1).unwrap()),
            2 => (
                MethodConfig::adaptive(AdaptiveParams { step: 1e-2, ..AdaptiveParams::default() }),
                StepSchedule::fixed(0.1).unwrap(),
            ),
            _ => (MethodConfig::new(Method::FixedBandwidth), StepSchedule::adagrad(0.05, 0.9, 1e-6).unwrap()),
        };
        let opts = RunOptions::new(30, 10);
        let a = run_svgd(&ens, &spec, &model, &method, &schedule, &opts, &mut Rng::new(1), &mut NoMetrics).unwrap();
        let b = run_svgd(&ens.permuted(&perm).unwrap(), &spec, &model, &method, &schedule, &opts, &mut Rng::new(1), &mut NoMetrics)
            .unwrap();
        prop_assert_eq!(a.ensemble.permuted(&perm).unwrap(), b.ensemble);
        prop_assert_eq!(a.spec, b.spec);
    }

    #[test]
    fn median_heuristic_is_permutation_invariant_and_scale_covariant(seed in any::<u64>(), m in 3usize..20, d in 1usize..4, p2 in any::<bool>()) {
        let mut rng = Rng::new(seed);
        let p = if p2 { 2.0 } else { 1.0 };
        let xs = normal_rows(&mut rng, m, d, 1.0);
        let c = log_uniform(&mut rng, 0.1, 10.0);
        let perm = random_perm(&mut rng, m);
        for norm in [MedianNorm::Euclidean, MedianNorm::P] {
            let h = median_heuristic(&Ensemble::from_rows(&xs).unwrap(), p, norm).unwrap();
            let hp = median_heuristic(&Ensemble::from_rows(&permute_rows(&xs, &perm)).unwrap(), p, norm).unwrap();
            prop_assert_eq!(h, hp);
            let scaled: Vec<Vec<f64>> = xs.iter().map(|x| x.iter().map(|v| c * v).collect()).collect();
            let hs = median_heuristic(&Ensemble::from_rows(&scaled).unwrap(), p, norm).unwrap();
            prop_assert!((hs - c.powf(p) * h).abs() <= 1e-12 * hs);
        }
    }

    #[test]
    fn w1_is_symmetric_and_satisfies_triangle_inequality(seed in any::<u64>(), na in 1usize..9, nb in 1usize..9, nc in 1usize..9) {
        let mut rng = Rng::new(seed);
        let mut draw = |n: usize| sorted(&(0..n).map(|_| rng.standard_normal()).collect::<Vec<_>>());
        let (a, b, c) = (draw(na), draw(nb), draw(nc));
        let ab = wasserstein1_1d(&a, &b).unwrap();
        prop_assert_eq!(ab, wasserstein1_1d(&b, &a).unwrap());
        let ac = wasserstein1_1d(&a, &c).unwrap();
        let cb = wasserstein1_1d(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
        prop_assert_eq!(wasserstein1_1d(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn bures_is_symmetric_and_vanishes_on_equal_gaussians(seed in any::<u64>(), d in 1usize..5) {
        let mut rng = Rng::new(seed);
        let gaussian = |rng: &mut Rng| {
            let g = normal_rows(rng, d + 3, d, 1.0);
            let ms = moment_summary(&Ensemble::from_rows(&g).unwrap()).unwrap();
            (ms.mean, ms.covariance)
        };
        let (m1, s1) = gaussian(&mut rng);
        let (m2, s2) = gaussian(&mut rng);
        let ab = bures_w2(&m1, &s1, &m2, &s2).unwrap();
        let ba = bures_w2(&m2, &s2, &m1, &s1).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-10 * ab.max(1.0));
        prop_assert!(bures_w2(&m1, &s1, &m1, &s1).unwrap() <= 1e-6);
    }

    #[test]
    fn chi2_is_permutation_invariant_and_quadratic_in_scale(seed in any::<u64>(), m in 1usize..20, d in 1usize..5) {
        let mut rng = Rng::new(seed);
        let xs = normal_rows(&mut rng, m, d, 1.0);
        let w: Vec<f64> = (0..d).map(|_| log_uniform(&mut rng, 0.5, 5.0)).collect();
        let perm = random_perm(&mut rng, m);
        let base = chi2_statistic(&Ensemble::from_rows(&xs).unwrap(), &w).unwrap();
        let permuted = chi2_statistic(&Ensemble::from_rows(&permute_rows(&xs, &perm)).unwrap(), &w).unwrap();
        prop_assert!((base - permuted).abs() <= 1e-12 * base.max(1.0));
        let scaled: Vec<Vec<f64>> = xs.iter().map(|x| x.iter().map(|v| 3.0 * v).collect()).collect();
        let s = chi2_statistic(&Ensemble::from_rows(&scaled).unwrap(), &w).unwrap();
        prop_assert!((s - 9.0 * base).abs() <= 1e-12 * s.max(1.0));
    }

    #[test]
    fn moments_are_translation_equivariant(seed in any::<u64>(), m in 2usize..20, d in 1usize..5) {
        let mut rng = Rng::new(seed);
        let xs = normal_rows(&mut rng, m, d, 1.0);
        let shift: Vec<f64> = (0..d).map(|_| 5.0 * rng.standard_normal()).collect();
        let moved: Vec<Vec<f64>> = xs.iter().map(|x| x.iter().zip(&shift).map(|(v, s)| v + s).collect()).collect();
        let a = moment_summary(&Ensemble::from_rows(&xs).unwrap()).unwrap();
        let b = moment_summary(&Ensemble::from_rows(&moved).unwrap()).unwrap();
        for i in 0..d {
            prop_assert!((b.mean[i] - a.mean[i] - shift[i]).abs() <= 1e-12 * shift[i].abs().max(1.0));
            for j in 0..d {
                prop_assert!((b.covariance.get(i, j) - a.covariance.get(i, j)).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn adagrad_accumulator_stays_nonnegative(seed in any::<u64>(), calls in 1usize..20) {
        let mut rng = Rng::new(seed);
        let mut schedule = StepSchedule::adagrad(0.1, 0.9, 1e-6).unwrap();
        for _ in 0..calls {
            let dir: Vec<f64> = (0..6).map(|_| rng.standard_normal()).collect();
            let scale = schedule.adagrad_scale(&dir).unwrap();
            prop_assert!(scale.iter().all(|s| *s > 0.0 && *s <= 0.1 / 1e-6));
            prop_assert!(schedule.accumulator().unwrap().iter().all(|a| *a >= 0.0));
        }
    }
}

#[test]
fn ascent_step_never_decreases_ksd() {
    let mut rng = Rng::new(31);
    for _ in 0..200 {
        let m = 3 + rng.below(8);
        let d = 1 + rng.below(3);
        let spec = product_spec(&mut rng, d, 2.0);
        let xs = normal_rows(&mut rng, m, d, 1.0);
        let ss = normal_rows(&mut rng, m, d, 1.0);
        let ens = Ensemble::from_rows(&xs).unwrap();
        let before = ksd_squared(&spec, &ens, &cache(&ss), Estimator::U, None).unwrap().ksd2;
        let next = ksd_ascent_step(&spec, &ens, &cache(&ss), 1e-6, Estimator::U).unwrap();
        let after = ksd_squared(&next, &ens, &cache(&ss), Estimator::U, None).unwrap().ksd2;
        assert!(after - before >= -1e-12, "{before} -> {after}");
    }
}

#[test]
fn ascent_direction_points_toward_grid_argmax() {
    let mut rng = Rng::new(32);
    for _ in 0..50 {
        let xs = vec![vec![rng.standard_normal()], vec![rng.standard_normal()]];
        let ss = vec![vec![-xs[0][0]], vec![-xs[1][0]]];
        let ens = Ensemble::from_rows(&xs).unwrap();
        let h0 = log_uniform(&mut rng, 0.1, 10.0);
        let spec = KernelSpec::isotropic(1, 2.0, h0).unwrap();
        let ksd_at = |h: f64| {
            ksd_squared(
                &KernelSpec::isotropic(1, 2.0, h).unwrap(),
                &ens,
                &cache(&ss),
                Estimator::U,
                None,
            )
            .unwrap()
            .ksd2
        };
        // Dense log-spaced grid around h0; the local argmax decides the sign.
        let grid: Vec<f64> = (-200..=200).map(|k| h0 * (k as f64 * 1e-4).exp()).collect();
        let best = grid.iter().copied().fold((h0, ksd_at(h0)), |acc, h| {
            let v = ksd_at(h);
            if v > acc.1 {
                (h, v)
            } else {
                acc
            }
        });
        if best.0 == h0 {
            continue;
        }
        let next = ksd_ascent_step(&spec, &ens, &cache(&ss), 1e-3, Estimator::U).unwrap();
        let moved = next.bandwidths()[0] - h0;
        assert_eq!(
            moved.signum(),
            (best.0 - h0).signum(),
            "h0 {h0}, grid argmax {}",
            best.0
        );
    }
}

#[test]
fn u_statistic_is_centred_on_exact_samples() {
    let spec = KernelSpec::isotropic(1, 2.0, 2.0).unwrap();
    let mut rng = Rng::new(33);
    let mut magnitudes = vec![];
    for m in [100usize, 1000] {
        let reps = 20;
        let mut values = vec![];
        for _ in 0..reps {
            let xs = normal_rows(&mut rng, m, 1, 1.0);
            let ss: Vec<Vec<f64>> = xs.iter().map(|x| vec![-x[0]]).collect();
            let ens = Ensemble::from_rows(&xs).unwrap();
            values.push(ksd_squared(&spec, &ens, &cache(&ss), Estimator::U, None).unwrap().ksd2);
        }
        let mean = values.iter().sum::<f64>() / reps as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        // Replicate spread estimates the sampling sd of a single statistic.
        let sd = var.sqrt();
        assert!(values[0].abs() <= 5.0 * sd, "m={m}: {} vs sd {sd}", values[0]);
        magnitudes.push(values.iter().map(|v| v.abs()).sum::<f64>() / reps as f64);
    }
    assert!(magnitudes[1] < magnitudes[0], "{magnitudes:?}");
}

#[test]
fn chi2_of_exact_sample_is_near_dimension() {
    let mut rng = Rng::new(34);
    let d = 8;
    let sds: Vec<f64> = (1..=d).map(|i| 1.0 / i as f64).collect();
    let ens = sample_gaussian(&mut rng, 100_000, &vec![0.0; d], &sds).unwrap();
    let inv: Vec<f64> = sds.iter().map(|s| 1.0 / (s * s)).collect();
    let chi2 = chi2_statistic(&ens, &inv).unwrap();
    assert!((chi2 - 8.0).abs() <= 0.03 * 8.0, "{chi2}");
}

#[test]
fn bures_reduces_to_diagonal_formula() {
    let a = SymMatrix::from_diagonal(&[4.0, 1.0, 9.0]);
    let b = SymMatrix::from_diagonal(&[1.0, 1.0, 4.0]);
    let w = bures_w2(&[0.0; 3], &a, &[0.0; 3], &b).unwrap();
    assert!((w - 2.0f64.sqrt()).abs() <= 1e-12);
}

#[test]
fn identical_particles_never_separate() {
    let model = diag_gaussian_model(&[1.0, 2.0], "test").unwrap();
    let ens = Ensemble::from_rows(&[vec![1.0, -1.0], vec![1.0, -1.0], vec![0.0, 0.5]]).unwrap();
    for family in [KernelFamily::Isotropic, KernelFamily::Product] {
        for p in [1.0, 2.0] {
            let spec = KernelSpec::uniform(family, 2, p, 1.0).unwrap();
            let method = MethodConfig::new(Method::FixedBandwidth);
            let out = run_svgd(
                &ens,
                &spec,
                &model,
                &method,
                &StepSchedule::fixed(0.05).unwrap(),
                &RunOptions::new(500, 100),
                &mut Rng::new(0),
                &mut NoMetrics,
            )
            .unwrap();
            assert_eq!(out.ensemble.particle(0), out.ensemble.particle(1));
        }
    }
}
