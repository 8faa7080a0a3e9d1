//! Config-driven experiment runner behind the `steinflow` binary.
//!
//! A run writes three files into its output directory:
//!
//! * `trace.csv`: one row per logged iteration. Columns are `iteration`,
//!   then `ksd2`, `max_ksd2`, `h_1..h_n`, `w1_1d`, `bures_w2`, `chi2`,
//!   `cov_trace`, `var_1..var_d` and `wall_ms`, each present only when
//!   configured.
//! * `final_particles.csv`: `x_1..x_d`, one row per particle.
//! * `summary.json`: status, error with iteration, final metrics and
//!   bandwidths, target reference values, column lists and the normalized
//!   configuration.
//!
//! A sweep writes one such directory per `(axis value, seed)` plus
//! `sweep.csv`.

pub mod config;
pub mod run;
pub mod sweep;

pub use config::{
    BandwidthPolicy, InitPolicy, MethodName, MetricName, Overrides, Preset, RunConfig, SweepAxis, SweepConfig,
};
pub use run::{execute, run, RunReport};
pub use sweep::{run_sweep, SweepReport};

/// Shortest round-trip decimal form; exponent notation outside `[1e-4, 1e15)`.
pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}
