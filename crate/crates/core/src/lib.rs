//! Finite-state nonlinear Markov chains.
//!
//! A nonlinear chain moves from state `x` according to row `x` of a kernel
//! `P^μ` that depends on the chain's current law `μ`. The law itself evolves
//! deterministically, `μ_{k+1} = μ_k P^{μ_k}`. This crate computes that flow
//! and its fixed point, checks the ergodicity hypotheses needed for a central
//! limit theorem (uniform minorization, exponential convergence), computes the
//! asymptotic variance of the stationary copy exactly, and verifies the CLT by
//! Monte Carlo and by exact path enumeration.
//!
//! All numerics are generic over [`Scalar`] (`f64` and `f32`); the aliases
//! below fix the common double-precision case.
//!
//! ```
//! use nlmc_core::{asymptotic_variance, find_invariant, Kernel, Matrix, Observable, StateSpace};
//! # fn main() -> Result<(), Box<dyn std::error::Error>> {
//! let a = Matrix::from_rows(vec![vec![0.9, 0.1], vec![0.2, 0.8]])?;
//! let k = Kernel::constant(StateSpace::new(2)?, a)?;
//! let inv = find_invariant(&k, 1e-14, 10_000, &[])?;
//! let f = Observable::new("f", vec![0.0, 1.0])?;
//! let var = asymptotic_variance(&k.evaluate(&inv.pi)?, &inv.pi, &f, 1e-12, 10_000)?;
//! assert!((var.sigma2 - 34.0 / 27.0).abs() < 1e-10);
//! # Ok(())
//! # }
//! ```

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod flow;
pub mod kernel;
pub mod measure;
pub mod montecarlo;
pub mod scalar;
pub mod stationary;

pub use error::{Error, Result};
pub use flow::{
    find_invariant, find_invariant_with, fit_rate, iterate_law, k_step_kernel, kernel_ratio_bounds, law_step,
    InvariantError, InvariantOptions, InvariantResult, LawFlow, RateFit, RatioBoundReport,
};
pub use kernel::{
    dobrushin_coefficient, minorization_bound, KernelFamily, MinorizationReport, NonlinearKernel, PolynomialBlock,
    StochasticMatrix,
};
pub use measure::{push_forward, tv_distance, MeasureVector, StateSpace};
pub use scalar::Scalar;
pub use stationary::{
    asymptotic_variance, beta_mixing_profile, ibragimov_linnik_check, stationary_mean, IbragimovLinnikReport,
    MixingProfile, ObservableF, VarianceError, VarianceReport,
};

pub type Measure = MeasureVector<f64>;
pub type Matrix = StochasticMatrix<f64>;
pub type Kernel = NonlinearKernel<f64>;
pub type Flow = LawFlow<f64>;
pub type Observable = ObservableF<f64>;

pub type Measure32 = MeasureVector<f32>;
pub type Matrix32 = StochasticMatrix<f32>;
pub type Kernel32 = NonlinearKernel<f32>;
pub type Flow32 = LawFlow<f32>;
pub type Observable32 = ObservableF<f32>;
