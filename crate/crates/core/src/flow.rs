//! The deterministic law flow `μ_{k+1} = μ_k P^{μ_k}` and what is measured along it.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::kernel::{NonlinearKernel, StochasticMatrix};
use crate::measure::{push_forward, MeasureVector};
use crate::scalar::{linear_fit, Scalar};

/// Absolute slack for the kernel-ratio check; ratios of equal matrices are
/// only zero up to round-off.
pub const RATIO_ROUNDOFF: f64 = 1e-12;

/// The sequence of laws `μ_0, .., μ_n` generated by a kernel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LawFlow<T> {
    pub measures: Vec<MeasureVector<T>>,
    pub kernel_id: u64,
    pub tv_to_invariant: Option<Vec<T>>,
}

impl<T: Scalar> LawFlow<T> {
    pub fn len(&self) -> usize {
        self.measures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measures.is_empty()
    }

    pub fn initial(&self) -> &MeasureVector<T> {
        &self.measures[0]
    }

    /// Fills `tv_to_invariant` with `‖μ_k − π‖_TV` for every step.
    pub fn with_invariant(mut self, pi: &MeasureVector<T>) -> Result<Self> {
        let tv = self
            .measures
            .iter()
            .map(|m| m.tv_distance(pi))
            .collect::<Result<Vec<_>>>()?;
        self.tv_to_invariant = Some(tv);
        Ok(self)
    }
}

/// One application of the nonlinear law map.
pub fn law_step<T: Scalar>(kernel: &NonlinearKernel<T>, mu: &MeasureVector<T>) -> Result<MeasureVector<T>> {
    push_forward(mu, &kernel.evaluate(mu)?)
}

pub fn iterate_law<T: Scalar>(kernel: &NonlinearKernel<T>, mu0: &MeasureVector<T>, n: usize) -> Result<LawFlow<T>> {
    let mut measures = Vec::with_capacity(n + 1);
    measures.push(mu0.clone());
    for k in 0..n {
        let next = law_step(kernel, &measures[k])?;
        measures.push(next);
    }
    Ok(LawFlow {
        measures,
        kernel_id: kernel.id(),
        tv_to_invariant: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartOutcome<T> {
    pub start: MeasureVector<T>,
    pub limit: MeasureVector<T>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantResult<T> {
    pub pi: MeasureVector<T>,
    pub residual: T,
    pub iterations: usize,
    pub starts: Vec<StartOutcome<T>>,
    pub unique_within_tolerance: bool,
    pub converged: bool,
}

#[derive(Debug, Error)]
pub enum InvariantError<T: std::fmt::Debug> {
    #[error(transparent)]
    Kernel(#[from] Error),
    #[error("fixed-point iteration did not converge from every start")]
    NotConverged(Box<InvariantResult<T>>),
}

#[derive(Debug, Clone)]
pub struct InvariantOptions<T> {
    pub tolerance: T,
    pub max_iters: usize,
    /// Empty means the simplex vertices plus the barycenter.
    pub starts: Vec<MeasureVector<T>>,
    /// `θ ∈ (0, 1]`; the update is `μ ← (1−θ)μ + θ μP^μ`.
    pub damping: T,
}

impl<T: Scalar> InvariantOptions<T> {
    pub fn new(tolerance: T, max_iters: usize) -> Self {
        Self {
            tolerance,
            max_iters,
            starts: Vec::new(),
            damping: T::one(),
        }
    }
}

/// Multi-start fixed-point search for `π = π P^π`.
///
/// `π` is the limit from the barycenter start (which is always run). A start
/// that fails to settle within `max_iters` yields
/// [`InvariantError::NotConverged`] carrying every outcome computed so far.
/// Distinct limits are not an error: they clear `unique_within_tolerance`.
pub fn find_invariant<T: Scalar>(
    kernel: &NonlinearKernel<T>,
    tolerance: T,
    max_iters: usize,
    starts: &[MeasureVector<T>],
) -> Result<InvariantResult<T>, InvariantError<T>> {
    let mut opts = InvariantOptions::new(tolerance, max_iters);
    opts.starts = starts.to_vec();
    find_invariant_with(kernel, &opts)
}

pub fn find_invariant_with<T: Scalar>(
    kernel: &NonlinearKernel<T>,
    opts: &InvariantOptions<T>,
) -> Result<InvariantResult<T>, InvariantError<T>> {
    if !(opts.tolerance > T::zero()) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()).into());
    }
    if !(opts.damping > T::zero() && opts.damping <= T::one()) {
        return Err(Error::InvalidParameter("damping must lie in (0, 1]".into()).into());
    }
    let n = kernel.size();
    let barycenter = MeasureVector::uniform(n);
    let mut starts = if opts.starts.is_empty() {
        let mut s: Vec<_> = (0..n).map(|v| MeasureVector::vertex(n, v)).collect();
        s.push(barycenter.clone());
        s
    } else {
        opts.starts.clone()
    };
    let bary_tol = T::lit(T::REST_TOL);
    let bary_idx = match starts
        .iter()
        .position(|s| s.tv_distance(&barycenter).map(|d| d <= bary_tol).unwrap_or(false))
    {
        Some(i) => i,
        None => {
            starts.push(barycenter);
            starts.len() - 1
        }
    };

    let outcomes: Vec<StartOutcome<T>> = starts
        .par_iter()
        .map(|s| settle(kernel, s, opts))
        .collect::<Result<_>>()?;

    let unique_tol = T::lit(T::UNIQUE_TOL);
    let mut unique = true;
    'outer: for (i, a) in outcomes.iter().enumerate() {
        for b in &outcomes[i + 1..] {
            if a.limit.tv_distance(&b.limit)? > unique_tol {
                unique = false;
                break 'outer;
            }
        }
    }
    let pi = outcomes[bary_idx].limit.clone();
    let residual = pi.tv_distance(&law_step(kernel, &pi)?)?;
    let converged = outcomes.iter().all(|o| o.converged);
    let result = InvariantResult {
        pi,
        residual,
        iterations: outcomes[bary_idx].iterations,
        starts: outcomes,
        unique_within_tolerance: unique,
        converged,
    };
    if converged {
        Ok(result)
    } else {
        Err(InvariantError::NotConverged(Box::new(result)))
    }
}

fn settle<T: Scalar>(
    kernel: &NonlinearKernel<T>,
    start: &MeasureVector<T>,
    opts: &InvariantOptions<T>,
) -> Result<StartOutcome<T>> {
    let mut mu = start.clone();
    for it in 1..=opts.max_iters {
        let mapped = law_step(kernel, &mu)?;
        let next = if opts.damping < T::one() {
            mu.mix(&mapped, opts.damping)?
        } else {
            mapped
        };
        let gap = mu.tv_distance(&next)?;
        mu = next;
        if gap < opts.tolerance {
            return Ok(StartOutcome {
                start: start.clone(),
                limit: mu,
                iterations: it,
                converged: true,
            });
        }
    }
    Ok(StartOutcome {
        start: start.clone(),
        limit: mu,
        iterations: opts.max_iters,
        converged: false,
    })
}

/// Exponential fit `‖μ_k − π‖_TV ≈ exp(lnK − C k)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "lnK")]
    pub ln_k: f64,
    pub r_squared: f64,
    pub window: (usize, usize),
}

impl RateFit {
    /// Envelope value `exp(lnK − C k)`.
    pub fn envelope(&self, k: usize) -> f64 {
        (self.ln_k - self.c * k as f64).exp()
    }

    /// Intercept for the kernel-ratio bound: `|P^μ − P^π| ≤ ‖μ − π‖_TV` for the
    /// affine families, so dividing by the smallest entry of `P^π` turns the TV
    /// envelope (with a factor-2 slack for regression residuals) into a ratio envelope.
    pub fn kernel_ratio_intercept(&self, min_invariant_entry: f64) -> f64 {
        self.ln_k + std::f64::consts::LN_2 - min_invariant_entry.ln()
    }
}

/// Largest log-residual from the pilot line still counted as the exponential regime.
const TRANSIENT_LOG_GAP: f64 = 0.5 * std::f64::consts::LN_2;

/// Least-squares fit of `ln ‖μ_k − π‖_TV` against `k`.
///
/// Usable steps are the leading run whose distance stays above the scalar's
/// TV floor. A pilot line through the second half of that run locates the
/// exponential regime; leading steps that stray from it by more than
/// `ln 2 / 2` are a transient and are dropped before the final fit. Fewer
/// than four usable points, or a non-negative slope, is
/// [`Error::InsufficientDecay`].
pub fn fit_rate<T: Scalar>(flow: &LawFlow<T>, pi: &MeasureVector<T>) -> Result<RateFit> {
    let mut ys = Vec::new();
    for m in &flow.measures {
        let tv = m.tv_distance(pi)?.as_f64();
        if tv <= T::TV_FLOOR {
            break;
        }
        ys.push(tv.ln());
    }
    let len = ys.len();
    if len < 4 {
        return Err(Error::InsufficientDecay { usable: len });
    }
    let xs: Vec<f64> = (0..len).map(|k| k as f64).collect();
    let tail = if len >= 8 { len / 2 } else { 0 };
    let (slope, intercept, _) = linear_fit(&xs[tail..], &ys[tail..]);
    let mut start = len;
    while start > 0 && (ys[start - 1] - (intercept + slope * xs[start - 1])).abs() <= TRANSIENT_LOG_GAP {
        start -= 1;
    }
    let start = start.min(len - 4);
    let (slope, intercept, r2) = linear_fit(&xs[start..], &ys[start..]);
    if slope >= 0.0 {
        return Err(Error::InsufficientDecay { usable: len });
    }
    Ok(RateFit {
        c: -slope,
        ln_k: intercept,
        r_squared: r2,
        window: (start, len - 1),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioStep {
    pub step: usize,
    pub ratio_gap: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatioBoundReport {
    pub ln_k: f64,
    pub c: f64,
    pub steps: Vec<RatioStep>,
    pub first_violation: Option<usize>,
    pub violations: usize,
}

/// Checks `max_{x,y} |P^{μ_n}_{x,y} / P^π_{x,y} − 1| ≤ exp(lnK − C n)` along a flow.
pub fn kernel_ratio_bounds<T: Scalar>(
    kernel: &NonlinearKernel<T>,
    flow: &LawFlow<T>,
    pi: &MeasureVector<T>,
    c: f64,
    ln_k: f64,
) -> Result<RatioBoundReport> {
    if flow.kernel_id != kernel.id() {
        return Err(Error::KernelMismatch);
    }
    let p_pi = kernel.evaluate(pi)?;
    let n = kernel.size();
    for i in 0..n {
        for j in 0..n {
            if p_pi.get(i, j) <= T::zero() {
                return Err(Error::ZeroInvariantEntry { row: i, col: j });
            }
        }
    }
    let mut steps = Vec::with_capacity(flow.len());
    for (k, mu) in flow.measures.iter().enumerate() {
        let p = kernel.evaluate(mu)?;
        let mut gap = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let r = (p.get(i, j) / p_pi.get(i, j) - T::one()).abs().as_f64();
                gap = gap.max(r);
            }
        }
        let bound = (ln_k - c * k as f64).exp();
        steps.push(RatioStep {
            step: k,
            ratio_gap: gap,
            bound,
            holds: gap <= bound + RATIO_ROUNDOFF,
        });
    }
    let first_violation = steps.iter().find(|s| !s.holds).map(|s| s.step);
    let violations = steps.iter().filter(|s| !s.holds).count();
    Ok(RatioBoundReport {
        ln_k,
        c,
        steps,
        first_violation,
        violations,
    })
}

/// The `k`-step kernel `P^{μ_0} P^{μ_1} ··· P^{μ_{k−1}}` along the exact flow.
pub fn k_step_kernel<T: Scalar>(
    kernel: &NonlinearKernel<T>,
    mu0: &MeasureVector<T>,
    k: usize,
) -> Result<StochasticMatrix<T>> {
    if k < 1 {
        return Err(Error::InvalidParameter("k must be >= 1".into()));
    }
    let mut mu = mu0.clone();
    let mut p = kernel.evaluate(&mu)?;
    let mut acc = p.clone();
    for _ in 1..k {
        mu = push_forward(&mu, &p)?;
        p = kernel.evaluate(&mu)?;
        acc = acc.matmul(&p)?;
    }
    Ok(acc)
}
