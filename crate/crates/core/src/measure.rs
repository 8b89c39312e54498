//! Probability vectors on a finite state space and total-variation geometry.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::StochasticMatrix;
use crate::scalar::{compensated_sum, Scalar};

/// A finite state space `{0, .., size-1}` with optional display labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpace {
    size: usize,
    labels: Option<Vec<String>>,
}

impl StateSpace {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidStateSpace(format!("need at least 2 states, got {size}")));
        }
        Ok(Self { size, labels: None })
    }

    pub fn with_labels(labels: Vec<String>) -> Result<Self> {
        let mut space = Self::new(labels.len())?;
        let mut sorted: Vec<&String> = labels.iter().collect();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidStateSpace("state labels must be distinct".into()));
        }
        space.labels = Some(labels);
        Ok(space)
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// Label of state `i`, falling back to its index.
    pub fn label(&self, i: usize) -> String {
        match &self.labels {
            Some(l) => l[i].clone(),
            None => i.to_string(),
        }
    }
}

/// A point on the probability simplex. Immutable once validated.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct MeasureVector<T> {
    weights: Vec<T>,
}

impl<T: Scalar> MeasureVector<T> {
    /// Validates raw weights against `space`.
    ///
    /// Entries in `[-tolerance, 0)` are clamped to zero; the result is always
    /// renormalized so that it sums to one up to round-off.
    pub fn validate(space: &StateSpace, raw: &[T], tolerance: f64) -> Result<Self> {
        if raw.len() != space.size() {
            return Err(Error::DimensionMismatch {
                expected: space.size(),
                found: raw.len(),
            });
        }
        Self::normalize(raw, tolerance)
    }

    /// Validates raw weights at the ingestion tolerance; the dimension is taken from `raw`.
    pub fn new(raw: &[T]) -> Result<Self> {
        if raw.len() < 2 {
            return Err(Error::InvalidStateSpace(format!(
                "need at least 2 states, got {}",
                raw.len()
            )));
        }
        Self::normalize(raw, T::INGEST_TOL)
    }

    fn normalize(raw: &[T], tolerance: f64) -> Result<Self> {
        let tol = T::lit(tolerance);
        let mut weights = Vec::with_capacity(raw.len());
        for (index, &w) in raw.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::NotNormalized { sum: f64::NAN });
            }
            if w < -tol {
                return Err(Error::NegativeMass {
                    index,
                    value: w.as_f64(),
                });
            }
            weights.push(w.max(T::zero()));
        }
        let sum = compensated_sum(raw.iter().copied());
        if (sum - T::one()).abs() > tol {
            return Err(Error::NotNormalized { sum: sum.as_f64() });
        }
        let clamped = compensated_sum(weights.iter().copied());
        if clamped <= T::zero() {
            return Err(Error::NotNormalized { sum: sum.as_f64() });
        }
        for w in &mut weights {
            *w = *w / clamped;
        }
        Ok(Self { weights })
    }

    pub(crate) fn from_trusted(weights: Vec<T>) -> Self {
        Self { weights }
    }

    pub fn uniform(size: usize) -> Self {
        let w = T::one() / T::from_usize_lossy(size);
        Self { weights: vec![w; size] }
    }

    /// The point mass at `state`.
    pub fn vertex(size: usize, state: usize) -> Self {
        let mut weights = vec![T::zero(); size];
        weights[state] = T::one();
        Self { weights }
    }

    /// A draw from the uniform distribution on the simplex (Dirichlet(1, .., 1)).
    pub fn random<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Self {
        let exps: Vec<f64> = (0..size).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let total: f64 = exps.iter().sum();
        Self {
            weights: exps.iter().map(|e| T::lit(e / total)).collect(),
        }
    }

    #[inline]
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> T {
        self.weights[i]
    }

    /// Total variation distance `½ Σ |μ(x) − ν(x)|`, in `[0, 1]`.
    pub fn tv_distance(&self, other: &Self) -> Result<T> {
        tv_distance(self, other)
    }

    /// Convex combination `(1 − θ)·self + θ·other`.
    pub fn mix(&self, other: &Self, theta: T) -> Result<Self> {
        check_dim(self.len(), other.len())?;
        let w = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(&a, &b)| (T::one() - theta) * a + theta * b)
            .collect();
        Ok(Self { weights: w })
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.as_f64()).collect()
    }
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Total variation distance `½ Σ_x |μ(x) − ν(x)|`.
pub fn tv_distance<T: Scalar>(mu: &MeasureVector<T>, nu: &MeasureVector<T>) -> Result<T> {
    check_dim(mu.len(), nu.len())?;
    let s = compensated_sum(mu.weights.iter().zip(&nu.weights).map(|(&a, &b)| (a - b).abs()));
    Ok((s * T::lit(0.5)).min(T::one()))
}

/// One step of a fixed kernel acting on a law: the row vector `μM`.
pub fn push_forward<T: Scalar>(mu: &MeasureVector<T>, m: &StochasticMatrix<T>) -> Result<MeasureVector<T>> {
    check_dim(m.size(), mu.len())?;
    let raw = m.left_mul(mu.weights());
    MeasureVector::normalize(&raw, T::INGEST_TOL)
}

/// All compositions of `resolution` into `size` non-negative parts, scaled to the simplex.
pub fn simplex_grid<T: Scalar>(size: usize, resolution: usize) -> Vec<MeasureVector<T>> {
    let mut out = Vec::new();
    let mut parts = vec![0usize; size];
    fill_compositions(&mut parts, 0, resolution, &mut |p| {
        let r = T::from_usize_lossy(resolution);
        out.push(MeasureVector::from_trusted(
            p.iter().map(|&k| T::from_usize_lossy(k) / r).collect(),
        ));
    });
    out
}

fn fill_compositions(parts: &mut [usize], pos: usize, remaining: usize, emit: &mut dyn FnMut(&[usize])) {
    if pos + 1 == parts.len() {
        parts[pos] = remaining;
        emit(parts);
        return;
    }
    for k in (0..=remaining).rev() {
        parts[pos] = k;
        fill_compositions(parts, pos + 1, remaining - k, emit);
    }
}
