//! Exact analysis of the stationary copy: the classical chain with kernel `P^π`
//! started from `π`.

use serde::Serialize;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::kernel::StochasticMatrix;
use crate::measure::{check_dim, push_forward, MeasureVector};
use crate::scalar::{compensated_sum, dot, linear_fit, Scalar};

/// Number of trailing covariances used for the geometric tail envelope.
const ENVELOPE_POINTS: usize = 5;

/// `σ²` below this is reported as degenerate.
pub const DEGENERATE_SIGMA2: f64 = 1e-12;

/// A real function on the state space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservableF<T> {
    pub name: String,
    values: Vec<T>,
    sup_norm: T,
}

impl<T: Scalar> ObservableF<T> {
    pub fn new(name: impl Into<String>, values: Vec<T>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("observable value {v} is not finite")));
        }
        let sup_norm = values.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        Ok(Self {
            name: name.into(),
            values,
            sup_norm,
        })
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn value(&self, state: usize) -> T {
        self.values[state]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sup_norm(&self) -> T {
        self.sup_norm
    }

    pub fn scaled(&self, c: T) -> Self {
        Self::new(self.name.clone(), self.values.iter().map(|&v| c * v).collect()).expect("finite")
    }

    pub fn shifted(&self, c: T) -> Self {
        Self::new(self.name.clone(), self.values.iter().map(|&v| v + c).collect()).expect("finite")
    }

    fn centered(&self, center: T) -> Vec<T> {
        self.values.iter().map(|&v| v - center).collect()
    }
}

/// `E_π f`, computed as `f(0) + E_π[f − f(0)]` so constants come out exact.
pub fn stationary_mean<T: Scalar>(pi: &MeasureVector<T>, f: &ObservableF<T>) -> Result<T> {
    check_dim(pi.len(), f.len())?;
    let base = f.value(0);
    Ok(base + dot(pi.weights(), &f.centered(base)))
}

fn invariance_tol<T: Scalar>() -> f64 {
    (10.0 * T::REST_TOL).max(1e-10)
}

fn check_invariant<T: Scalar>(p: &StochasticMatrix<T>, pi: &MeasureVector<T>) -> Result<()> {
    check_dim(p.size(), pi.len())?;
    let residual = pi.tv_distance(&push_forward(pi, p)?)?.as_f64();
    if residual > invariance_tol::<T>() {
        return Err(Error::NotInvariant { residual });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport<T> {
    pub sigma2: T,
    pub mean: T,
    pub var0: T,
    /// `Cov_π(f(X_0), f(X_k))` for `k = 1..=k_max`.
    pub covariances: Vec<T>,
    pub k_max: usize,
    /// Bound on `|σ² − truncated sum|` from the fitted geometric envelope.
    pub tail_bound: f64,
    pub degenerate: bool,
}

#[derive(Debug, Error)]
pub enum VarianceError<T: std::fmt::Debug> {
    #[error(transparent)]
    Invalid(#[from] Error),
    /// The covariance series did not settle into a geometric tail before
    /// `k_cap`; the report holds the truncated value and a crude tail bound.
    #[error("covariance tail is not geometric within the cap")]
    TailNotGeometric(Box<VarianceReport<T>>),
}

/// Asymptotic variance `σ² = Var_π f + 2 Σ_{k≥1} Cov_π(f(X_0), f(X_k))`.
///
/// Covariances come from iterated products `P^k f̄`. The series stops at the
/// first `k` where a geometric envelope fitted to the last five `|cov|`
/// values bounds twice the remaining tail by `tail_tolerance`, or once the
/// trailing values are pure round-off.
pub fn asymptotic_variance<T: Scalar>(
    p_pi: &StochasticMatrix<T>,
    pi: &MeasureVector<T>,
    f: &ObservableF<T>,
    tail_tolerance: f64,
    k_cap: usize,
) -> Result<VarianceReport<T>, VarianceError<T>> {
    check_dim(pi.len(), f.len())?;
    check_invariant(p_pi, pi)?;
    if !(tail_tolerance > 0.0) {
        return Err(Error::InvalidParameter("tail_tolerance must be positive".into()).into());
    }
    let mean = stationary_mean(pi, f)?;
    let fbar = f.centered(mean);
    let weighted: Vec<T> = pi.weights().iter().zip(&fbar).map(|(&p, &v)| p * v).collect();
    let var0 = dot(&weighted, &fbar);
    // Centering leaves an O(eps·‖f‖) offset whose square never decays.
    let eps = T::epsilon().as_f64();
    let scale = f.sup_norm().as_f64();
    let noise = 64.0 * eps * var0.as_f64().max(eps * scale * scale).max(f64::MIN_POSITIVE);

    let mut covs: Vec<T> = Vec::new();
    let mut g = fbar.clone();
    let mut tail = None;
    for k in 1..=k_cap {
        g = p_pi.right_mul(&g);
        covs.push(dot(&weighted, &g));
        if k >= ENVELOPE_POINTS {
            if let Some(t) = tail_estimate(&covs, noise) {
                if t <= tail_tolerance {
                    tail = Some(t);
                    break;
                }
            }
        }
    }

    let sum = compensated_sum(covs.iter().copied());
    let raw = var0 + T::lit(2.0) * sum;
    let sigma2 = raw.max(T::zero());
    let mut report = VarianceReport {
        sigma2,
        mean,
        var0,
        k_max: covs.len(),
        tail_bound: 0.0,
        degenerate: sigma2.as_f64() < DEGENERATE_SIGMA2,
        covariances: covs,
    };
    match tail {
        Some(t) => {
            report.tail_bound = t;
            Ok(report)
        }
        None => {
            let last = report.covariances.last().map_or(0.0, |c| c.abs().as_f64());
            report.tail_bound = last * k_cap as f64;
            Err(VarianceError::TailNotGeometric(Box::new(report)))
        }
    }
}

/// Bound on `2 Σ_{j>k} |cov_j|` from the trailing window, or `None` when the
/// window does not decay geometrically.
fn tail_estimate<T: Scalar>(covs: &[T], noise: f64) -> Option<f64> {
    let k = covs.len();
    let window = &covs[k - ENVELOPE_POINTS..];
    let abs: Vec<f64> = window.iter().map(|c| c.abs().as_f64()).collect();
    let peak = abs.iter().cloned().fold(0.0, f64::max);
    if peak <= noise {
        return Some(2.0 * peak);
    }
    let xs: Vec<f64> = (k + 1 - ENVELOPE_POINTS..=k).map(|j| j as f64).collect();
    let ys: Vec<f64> = abs.iter().map(|a| a.max(noise).ln()).collect();
    let (slope, _, _) = linear_fit(&xs, &ys);
    let ratio = slope.exp();
    if !(ratio < 1.0) {
        return None;
    }
    // Smallest amplitude whose envelope dominates every window point.
    let amp = xs
        .iter()
        .zip(&abs)
        .map(|(&j, &a)| a / ratio.powf(j))
        .fold(0.0, f64::max);
    Some(2.0 * amp * ratio.powf(k as f64 + 1.0) / (1.0 - ratio))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingProfile<T> {
    pub pi: MeasureVector<T>,
    /// `β(n)` for `n = 1..=n_max`.
    pub beta: Vec<T>,
    /// Upper bound on the α-mixing coefficients (`α ≤ β`).
    pub alpha_upper: Vec<T>,
    pub zeta: f64,
    /// Partial sums of `α(m)^{ζ/(2+ζ)}`.
    pub il_partial_sums: Vec<f64>,
    pub fitted_ratio: Option<f64>,
    pub r_squared: Option<f64>,
    pub summable_diagnostic: bool,
}

/// Exact β-mixing coefficients `β(n) = Σ_x π(x) ‖P^n(x,·) − π‖_TV` of the stationary copy.
pub fn beta_mixing_profile<T: Scalar>(
    p_pi: &StochasticMatrix<T>,
    pi: &MeasureVector<T>,
    n_max: usize,
    zeta: f64,
) -> Result<MixingProfile<T>> {
    if n_max < 1 {
        return Err(Error::InvalidParameter("n_max must be >= 1".into()));
    }
    if !(zeta > 0.0) {
        return Err(Error::InvalidParameter("zeta must be positive".into()));
    }
    check_invariant(p_pi, pi)?;
    let half = T::lit(0.5);
    let mut beta: Vec<T> = Vec::with_capacity(n_max);
    let mut pn = p_pi.clone();
    for _ in 0..n_max {
        let b = compensated_sum(pn.rows().zip(pi.weights()).map(|(row, &w)| {
            let tv = compensated_sum(row.iter().zip(pi.weights()).map(|(&a, &b)| (a - b).abs())) * half;
            w * tv
        }));
        // β is non-increasing; the running minimum strips round-off upticks.
        let b = match beta.last() {
            Some(&prev) => b.min(prev),
            None => b,
        };
        beta.push(b.max(T::zero()).min(T::one()));
        pn = pn.matmul(p_pi)?;
    }

    let exponent = zeta / (2.0 + zeta);
    let mut acc = 0.0;
    let il_partial_sums = beta
        .iter()
        .map(|b| {
            acc += b.as_f64().powf(exponent);
            acc
        })
        .collect();

    let floor = T::TV_FLOOR;
    let usable: Vec<(f64, f64)> = beta
        .iter()
        .enumerate()
        .map(|(i, b)| ((i + 1) as f64, b.as_f64()))
        .take_while(|&(_, b)| b > floor)
        .collect();
    let (fitted_ratio, r_squared, summable) = if usable.len() < 3 {
        // Decayed to round-off almost at once: finitely many nonzero terms.
        let decayed = beta.last().is_some_and(|b| b.as_f64() <= floor);
        (decayed.then_some(0.0), None, decayed)
    } else {
        let xs: Vec<f64> = usable.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = usable.iter().map(|p| p.1.ln()).collect();
        let (slope, _, r2) = linear_fit(&xs, &ys);
        let ratio = slope.exp();
        (Some(ratio), Some(r2), r2 >= 0.99 && ratio < 1.0)
    };

    Ok(MixingProfile {
        pi: pi.clone(),
        alpha_upper: beta.clone(),
        beta,
        zeta,
        il_partial_sums,
        fitted_ratio,
        r_squared,
        summable_diagnostic: summable,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IbragimovLinnikReport {
    /// Always true on a finite state space with a finite observable.
    pub moment_finite: bool,
    /// `E_π |f − E_π f|^{2+ζ}`.
    pub moment_value: f64,
    pub summable: bool,
    pub fitted_ratio: Option<f64>,
    pub partial_sum: f64,
    pub holds: bool,
}

/// Moment and mixing-rate conditions under which the stationary CLT holds.
pub fn ibragimov_linnik_check<T: Scalar>(
    profile: &MixingProfile<T>,
    f: &ObservableF<T>,
) -> Result<IbragimovLinnikReport> {
    let pi = &profile.pi;
    let mean = stationary_mean(pi, f)?;
    let p = 2.0 + profile.zeta;
    let moment_value: f64 = pi
        .weights()
        .iter()
        .zip(f.values())
        .map(|(&w, &v)| w.as_f64() * (v - mean).abs().as_f64().powf(p))
        .sum();
    let moment_finite = moment_value.is_finite();
    let summable = profile.summable_diagnostic && profile.fitted_ratio.is_some_and(|r| r < 1.0);
    Ok(IbragimovLinnikReport {
        moment_finite,
        moment_value,
        summable,
        fitted_ratio: profile.fitted_ratio,
        partial_sum: profile.il_partial_sums.last().copied().unwrap_or(0.0),
        holds: moment_finite && summable,
    })
}
