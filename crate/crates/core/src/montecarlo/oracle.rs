//! Brute-force distribution of `S_n/√n` by enumerating every state path.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::flow::iterate_law;
use crate::kernel::{NonlinearKernel, StochasticMatrix};
use crate::measure::{check_dim, MeasureVector};
use crate::scalar::Scalar;
use crate::stationary::ObservableF;

/// Largest number of paths `|E|^n` the enumeration accepts.
pub const ENUMERATION_LIMIT: f64 = 1e7;

/// Exact law of `S_n/√n` over paths `X_0..X_{n−1}`, as sorted `(value, probability)` atoms.
///
/// Path probabilities are `μ_0(x_0) Π P^{μ_k}(x_k, x_{k+1})` along the exact
/// flow. `S_n` depends on a path only through its occupation counts, which
/// key the aggregation.
pub fn exact_sn_distribution<T: Scalar>(
    kernel: &NonlinearKernel<T>,
    mu0: &MeasureVector<T>,
    f: &ObservableF<T>,
    center: f64,
    n: usize,
) -> Result<Vec<(f64, f64)>> {
    let size = kernel.size();
    check_dim(size, f.len())?;
    if n == 0 {
        return Err(Error::EmptyTrajectory);
    }
    let paths = (size as f64).powi(n as i32);
    if paths > ENUMERATION_LIMIT {
        return Err(Error::TooLarge {
            paths,
            limit: ENUMERATION_LIMIT,
        });
    }
    let flow = iterate_law(kernel, mu0, n - 1)?;
    let steps: Vec<StochasticMatrix<T>> = flow.measures[..n - 1]
        .iter()
        .map(|m| kernel.evaluate(m))
        .collect::<Result<_>>()?;

    let mut by_counts: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    let mut counts = vec![0u32; size];
    for x0 in 0..size {
        let p = mu0.get(x0).as_f64();
        if p > 0.0 {
            counts[x0] += 1;
            descend(&steps, 0, x0, p, &mut counts, &mut by_counts);
            counts[x0] -= 1;
        }
    }

    let centered: Vec<f64> = f.values().iter().map(|v| v.as_f64() - center).collect();
    let root_n = (n as f64).sqrt();
    let mut atoms: Vec<(f64, f64)> = by_counts
        .into_iter()
        .map(|(c, p)| {
            let s: f64 = c.iter().zip(&centered).map(|(&k, &v)| k as f64 * v).sum();
            (s / root_n, p)
        })
        .collect();
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    for (v, p) in atoms {
        match merged.last_mut() {
            Some(last) if (v - last.0).abs() <= 1e-12 * (1.0 + v.abs()) => last.1 += p,
            _ => merged.push((v, p)),
        }
    }
    Ok(merged)
}

fn descend<T: Scalar>(
    steps: &[StochasticMatrix<T>],
    k: usize,
    x: usize,
    prob: f64,
    counts: &mut Vec<u32>,
    out: &mut BTreeMap<Vec<u32>, f64>,
) {
    if k == steps.len() {
        *out.entry(counts.clone()).or_insert(0.0) += prob;
        return;
    }
    for (y, &p) in steps[k].row(x).iter().enumerate() {
        let p = p.as_f64();
        if p > 0.0 {
            counts[y] += 1;
            descend(steps, k + 1, y, prob * p, counts, out);
            counts[y] -= 1;
        }
    }
}

/// Sup distance between the empirical CDF of `samples` and a discrete
/// distribution given as sorted atoms. Sample values are matched to atoms up
/// to a relative `1e-9` to absorb summation-order round-off.
pub fn cdf_sup_gap(samples: &[f64], atoms: &[(f64, f64)]) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_unstable_by(f64::total_cmp);
    let m = xs.len() as f64;
    let slack = |v: f64| 1e-9 * (1.0 + v.abs());
    let count_le = |v: f64| xs.partition_point(|&s| s <= v + slack(v)) as f64 / m;
    let count_lt = |v: f64| xs.partition_point(|&s| s < v - slack(v)) as f64 / m;
    let mut exact = 0.0;
    let mut gap = 0.0f64;
    for &(v, p) in atoms {
        // Left limit at v against the exact CDF just below it.
        gap = gap.max((count_lt(v) - exact).abs());
        exact += p;
        gap = gap.max((count_le(v) - exact).abs());
    }
    gap.max((1.0 - exact).abs())
}
