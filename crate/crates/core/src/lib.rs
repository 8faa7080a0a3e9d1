//! Particle-based variational inference with Stein variational gradient
//! descent (SVGD) and kernel bandwidths chosen by gradient ascent on the
//! kernelized Stein discrepancy (KSD).
//!
//! The crate is organised bottom-up:
//!
//! | module | contents |
//! |--------|----------|
//! | [`rng`], [`linalg`], [`ensemble`] | seeded randomness, small dense linear algebra, particle sets and score models |
//! | [`kernels`] | isotropic and per-dimension `exp(-|x-y|^p / h)` kernels with all derivatives, median heuristic |
//! | [`stein`] | Stein kernel, U/V-statistic KSD² estimators and their bandwidth gradients |
//! | [`dynamics`] | SVGD steps, AdaGrad step control, the fixed / median / adaptive run loops |
//! | [`targets`] | Gaussian mixture, diagonal Gaussians, ODE and GP linear-Gaussian inverse problems |
//! | [`metrics`] | 1D Wasserstein-1, Bures–Wasserstein-2, χ² statistic, moment summaries |
//! | [`harness`] | config parsing, presets, runs and sweeps writing CSV/JSON artifacts |

pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod exec;
pub mod harness;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod stein;
pub mod targets;

pub use dynamics::{run_svgd, svgd_step, Method, MethodConfig, RunRecord, StepSchedule};
pub use ensemble::{sample_gaussian, Ensemble, GaussianInfo, Score, ScoreModel};
pub use error::{Error, Result};
pub use exec::ExecMode;
pub use kernels::{kernel_eval, median_heuristic, KernelFamily, KernelSpec, MedianNorm};
pub use linalg::SymMatrix;
pub use rng::Rng;
pub use stein::{ksd_ascent_step, ksd_squared, Estimator, ParamSpace, ScoreCache, SteinEstimate};
