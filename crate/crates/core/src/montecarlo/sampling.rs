use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::rng::RngPolicy;
use crate::error::{Error, Result};
use crate::flow::{iterate_law, LawFlow};
use crate::kernel::{NonlinearKernel, StochasticMatrix};
use crate::measure::MeasureVector;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    ExactFlow,
    Particle,
}

/// `M` trajectories of `n + 1` states each, stored trajectory-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryBatch {
    pub states: Vec<u32>,
    pub trajectories: usize,
    pub steps: usize,
    pub kernel_id: u64,
    pub mu0: Vec<f64>,
    pub mode: SamplingMode,
    pub particle_count: Option<usize>,
}

impl TrajectoryBatch {
    pub fn trajectory(&self, i: usize) -> &[u32] {
        let w = self.steps + 1;
        &self.states[i * w..(i + 1) * w]
    }
}

/// Inverse-CDF table for one distribution.
#[derive(Debug, Clone)]
struct Cdf {
    cumulative: Vec<f64>,
    last_positive: usize,
}

impl Cdf {
    fn new<T: Scalar>(probs: &[T]) -> Self {
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p.as_f64();
                acc
            })
            .collect();
        let last_positive = probs.iter().rposition(|p| *p > T::zero()).unwrap_or(0);
        Self {
            cumulative,
            last_positive,
        }
    }

    #[inline]
    fn draw(&self, u: f64) -> usize {
        match self.cumulative.iter().position(|&c| u < c) {
            Some(j) if j <= self.last_positive => j,
            _ => self.last_positive,
        }
    }
}

/// Per-step transition tables `P^{μ_k}` along an exact law flow.
#[derive(Debug, Clone)]
pub struct StepKernels {
    initial: Cdf,
    steps: Vec<Vec<Cdf>>,
    kernel_id: u64,
    mu0: Vec<f64>,
}

impl StepKernels {
    /// Tables for `n` transitions; `flow` must come from `kernel` and hold at least `n + 1` laws.
    pub fn new<T: Scalar>(kernel: &NonlinearKernel<T>, flow: &LawFlow<T>, n: usize) -> Result<Self> {
        if flow.kernel_id != kernel.id() {
            return Err(Error::KernelMismatch);
        }
        if flow.len() < n + 1 {
            return Err(Error::FlowTooShort {
                needed: n + 1,
                found: flow.len(),
            });
        }
        let steps = flow.measures[..n]
            .par_iter()
            .map(|mu| kernel.evaluate(mu).map(|p| tables(&p)))
            .collect::<Result<_>>()?;
        Ok(Self {
            initial: Cdf::new(flow.initial().weights()),
            steps,
            kernel_id: kernel.id(),
            mu0: flow.initial().to_f64(),
        })
    }

    pub fn transitions(&self) -> usize {
        self.steps.len()
    }

    /// Walks `len` states (`len − 1` transitions), handing each state to `visit`.
    pub fn walk<R: Rng + ?Sized>(&self, rng: &mut R, len: usize, mut visit: impl FnMut(usize)) {
        assert!(len <= self.steps.len() + 1, "walk longer than the prepared flow");
        if len == 0 {
            return;
        }
        let mut x = self.initial.draw(rng.random());
        visit(x);
        for table in &self.steps[..len - 1] {
            x = table[x].draw(rng.random());
            visit(x);
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        self.walk(rng, self.steps.len() + 1, |x| out.push(x as u32));
        out
    }
}

fn tables<T: Scalar>(p: &StochasticMatrix<T>) -> Vec<Cdf> {
    p.rows().map(Cdf::new).collect()
}

/// One trajectory `X_0, .., X_n` driven by the deterministic law flow:
/// `X_0 ~ μ_0`, `X_{k+1} ~ P^{μ_k}(X_k, ·)`.
pub fn sample_trajectory<T: Scalar, R: Rng + ?Sized>(
    kernel: &NonlinearKernel<T>,
    flow: &LawFlow<T>,
    n: usize,
    rng: &mut R,
) -> Result<Vec<u32>> {
    Ok(StepKernels::new(kernel, flow, n)?.sample(rng))
}

/// `m` independent exact-flow trajectories, trajectory `i` on stream `i`.
pub fn sample_batch<T: Scalar>(
    kernel: &NonlinearKernel<T>,
    mu0: &MeasureVector<T>,
    n: usize,
    m: usize,
    policy: &RngPolicy,
) -> Result<TrajectoryBatch> {
    let flow = iterate_law(kernel, mu0, n)?;
    let tables = StepKernels::new(kernel, &flow, n)?;
    let states: Vec<u32> = (0..m)
        .into_par_iter()
        .flat_map_iter(|i| tables.sample(&mut policy.stream(i as u64)))
        .collect();
    Ok(TrajectoryBatch {
        states,
        trajectories: m,
        steps: n,
        kernel_id: tables.kernel_id,
        mu0: tables.mu0,
        mode: SamplingMode::ExactFlow,
        particle_count: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticleRun<T> {
    /// Empirical measure of the ensemble at each step.
    pub empirical: Vec<MeasureVector<T>>,
    pub batch: TrajectoryBatch,
}

/// Mean-field `N`-particle approximation: at every step the kernel is
/// evaluated at the ensemble's empirical measure instead of the exact law.
pub fn particle_system<T: Scalar, R: Rng + ?Sized>(
    kernel: &NonlinearKernel<T>,
    mu0: &MeasureVector<T>,
    particles: usize,
    n: usize,
    rng: &mut R,
) -> Result<ParticleRun<T>> {
    if particles < 1 {
        return Err(Error::InvalidParameter("particle count must be >= 1".into()));
    }
    let size = kernel.size();
    let init = Cdf::new(mu0.weights());
    let mut current: Vec<usize> = (0..particles).map(|_| init.draw(rng.random())).collect();
    let width = n + 1;
    let mut states = vec![0u32; particles * width];
    let mut empirical = Vec::with_capacity(width);
    let total = T::from_usize_lossy(particles);
    for k in 0..=n {
        let mut counts = vec![0usize; size];
        for (p, &x) in current.iter().enumerate() {
            states[p * width + k] = x as u32;
            counts[x] += 1;
        }
        let nu = MeasureVector::from_trusted(counts.iter().map(|&c| T::from_usize_lossy(c) / total).collect());
        if k < n {
            let rows = tables(&kernel.evaluate(&nu)?);
            for x in current.iter_mut() {
                *x = rows[*x].draw(rng.random());
            }
        }
        empirical.push(nu);
    }
    Ok(ParticleRun {
        empirical,
        batch: TrajectoryBatch {
            states,
            trajectories: particles,
            steps: n,
            kernel_id: kernel.id(),
            mu0: mu0.to_f64(),
            mode: SamplingMode::Particle,
            particle_count: Some(particles),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::StateSpace;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two() -> StateSpace {
        StateSpace::new(2).unwrap()
    }

    fn mat(rows: &[&[f64]]) -> StochasticMatrix<f64> {
        StochasticMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn cdf_skips_zero_mass_tail() {
        let c = Cdf::new(&[0.5f64, 0.5, 0.0]);
        assert_eq!(c.draw(0.0), 0);
        assert_eq!(c.draw(0.5), 1);
        assert_eq!(c.draw(1.0 - 1e-17), 1);
        let c = Cdf::new(&[0.0f64, 1.0]);
        assert_eq!(c.draw(0.0), 1);
    }

    #[test]
    fn identity_kernel_freezes_trajectories() {
        let k = NonlinearKernel::constant(two(), StochasticMatrix::<f64>::identity(2)).unwrap();
        let mu0 = MeasureVector::uniform(2);
        let b = sample_batch(&k, &mu0, 20, 50, &RngPolicy::new(1)).unwrap();
        for i in 0..50 {
            let t = b.trajectory(i);
            assert!(t.iter().all(|&s| s == t[0]));
        }
    }

    #[test]
    fn deterministic_jump() {
        let k = NonlinearKernel::constant(
            StateSpace::new(3).unwrap(),
            mat(&[&[0., 0., 1.], &[0., 0., 1.], &[0., 0., 1.]]),
        )
        .unwrap();
        let flow = iterate_law(&k, &MeasureVector::uniform(3), 10).unwrap();
        let t = sample_trajectory(&k, &flow, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert!(t[1..].iter().all(|&s| s == 2));
    }

    #[test]
    fn flow_checks() {
        let k = NonlinearKernel::constant(two(), StochasticMatrix::<f64>::identity(2)).unwrap();
        let other = NonlinearKernel::constant(two(), mat(&[&[0.5, 0.5], &[0.5, 0.5]])).unwrap();
        let flow = iterate_law(&k, &MeasureVector::uniform(2), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_trajectory(&k, &flow, 5, &mut rng),
            Err(Error::FlowTooShort { needed: 6, found: 4 })
        ));
        assert!(matches!(
            sample_trajectory(&other, &flow, 2, &mut rng),
            Err(Error::KernelMismatch)
        ));
    }

    #[test]
    fn one_step_frequencies_match_kernel() {
        // Binomial oracle: each empirical transition frequency within 3 standard errors.
        let a = mat(&[&[0.9, 0.1], &[0.2, 0.8]]);
        let k = NonlinearKernel::constant(two(), a.clone()).unwrap();
        let m = 100_000;
        let b = sample_batch(&k, &MeasureVector::uniform(2), 1, m, &RngPolicy::new(11)).unwrap();
        let mut counts = [[0usize; 2]; 2];
        for i in 0..m {
            let t = b.trajectory(i);
            counts[t[0] as usize][t[1] as usize] += 1;
        }
        for x in 0..2 {
            let row_total = (counts[x][0] + counts[x][1]) as f64;
            for y in 0..2 {
                let p = a.get(x, y);
                let se = (p * (1.0 - p) / row_total).sqrt();
                let freq = counts[x][y] as f64 / row_total;
                assert!((freq - p).abs() < 3.0 * se, "({x},{y}): {freq} vs {p}");
            }
        }
    }

    #[test]
    fn batch_is_reproducible() {
        let k = NonlinearKernel::affine_mixture(
            two(),
            mat(&[&[0.7, 0.3], &[0.4, 0.6]]),
            mat(&[&[0.2, 0.8], &[0.6, 0.4]]),
            0.4,
        )
        .unwrap();
        let mu0 = MeasureVector::vertex(2, 0);
        let a = sample_batch(&k, &mu0, 30, 200, &RngPolicy::new(5)).unwrap();
        let b = sample_batch(&k, &mu0, 30, 200, &RngPolicy::new(5)).unwrap();
        assert_eq!(a, b);
        let c = sample_batch(&k, &mu0, 30, 200, &RngPolicy::new(6)).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn single_particle_stays_put_under_frozen_kernel() {
        let k = NonlinearKernel::affine_mixture(
            two(),
            mat(&[&[0.9, 0.1], &[0.2, 0.8]]),
            StochasticMatrix::identity(2),
            1.0,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let run = particle_system(&k, &MeasureVector::uniform(2), 1, 25, &mut rng).unwrap();
        let t = run.batch.trajectory(0);
        assert!(t.iter().all(|&s| s == t[0]));
        assert!(run
            .empirical
            .iter()
            .all(|e| *e == MeasureVector::vertex(2, t[0] as usize)));
    }

    #[test]
    fn particle_mode_matches_exact_for_constant_kernel() {
        // Kernel ignores μ, so particle and exact-flow one-step laws coincide.
        let a = mat(&[&[0.9, 0.1], &[0.2, 0.8]]);
        let k = NonlinearKernel::constant(two(), a).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let run = particle_system(&k, &MeasureVector::vertex(2, 0), 200_000, 1, &mut rng).unwrap();
        assert!((run.empirical[1].get(0) - 0.9).abs() < 4.0 * (0.09f64 / 200_000.0).sqrt());
    }
}
