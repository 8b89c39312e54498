//! Trajectory sampling and empirical verification of the limit theorems.

mod clt;
mod gaussian;
mod oracle;
mod rng;
mod sampling;

pub use clt::{
    clt_statistic, clt_verify, lln_verify, CltReport, CltTarget, CltThresholds, GGap, LlnReport, TestFunction,
};
pub use gaussian::{gauss_hermite, ks_distance, normal_cdf, GaussHermite};
pub use oracle::{cdf_sup_gap, exact_sn_distribution, ENUMERATION_LIMIT};
pub use rng::RngPolicy;
pub use sampling::{
    particle_system, sample_batch, sample_trajectory, ParticleRun, SamplingMode, StepKernels, TrajectoryBatch,
};
