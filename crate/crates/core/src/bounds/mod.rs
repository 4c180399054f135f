//! Bound components: flatness, trajectory terms under sub-Gaussian, bounded
//! and clipped assumptions, quadrature for the step-size factors, divergence
//! utilities, and the per-epoch trace observer.

pub mod divergence;
pub mod flatness;
pub mod gradstats;
pub mod quad;
pub mod rate;
pub mod trace;
pub mod trajectory;

pub use divergence::{
    kl_gaussian, kl_gaussian_1d, lemma1_check, lemma1_grid, pinsker_grid, tv_gaussian_1d, Lemma1Result, LinearGaussian,
    PinskerCase,
};
pub use flatness::{flatness_estimate, flatness_t1pm, hutchinson_trace, BatchObjective, Estimate, Linear, Objective, Quadratic};
pub use gradstats::{batch_grad_stats, grad_variance_trace, GradStats, GradVarianceAccumulator};
pub use quad::{adaptive_simpson, delta_s, zeta_s, QuadResult, QuadratureSpec};
pub use rate::{least_squares_slope, rate_sweep, RateModel, RatePoint, RateSweep};
pub use trace::{BoundFamily, BoundObserver, BoundOptions, BoundRecord, BoundTrace};
pub use trajectory::{
    bounded_increment, clipped_bounded_bound, clipped_bounded_increment, clipped_subgaussian_bound,
    clipped_subgaussian_increment, subgaussian_increment, subgaussian_trajectory, traj_bounded_bound,
    traj_subgaussian_bound, traj_subgaussian_general, CompensatedSum, ScheduleStep, SubGaussianStep,
};
