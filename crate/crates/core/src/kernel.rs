//! Measure-dependent transition kernels and the hypotheses checked on them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{check_dim, simplex_grid, MeasureVector, StateSpace};
use crate::scalar::{compensated_sum, Scalar};

/// A square row-stochastic matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticMatrix<T> {
    size: usize,
    data: Vec<T>,
}

impl<T: Scalar> StochasticMatrix<T> {
    /// Builds a matrix from external rows, checked at the ingestion tolerance.
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let size = rows.len();
        let mut data = Vec::with_capacity(size * size);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != size {
                return Err(Error::RowNotStochastic {
                    row: i,
                    reason: format!("has {} entries, expected {size}", row.len()),
                });
            }
            data.extend(row);
        }
        Self::checked(size, data, T::INGEST_TOL)
    }

    /// Validates a flat row-major buffer: entries below `-tol` or a row sum off
    /// by more than `tol` are errors; small negatives are clamped and rows renormalized.
    pub(crate) fn checked(size: usize, mut data: Vec<T>, tol: f64) -> Result<Self> {
        if size == 0 || data.len() != size * size {
            return Err(Error::DimensionMismatch {
                expected: size * size,
                found: data.len(),
            });
        }
        let t = T::lit(tol);
        for (i, row) in data.chunks_mut(size).enumerate() {
            if let Some((j, &v)) = row.iter().enumerate().find(|(_, v)| !v.is_finite() || **v < -t) {
                return Err(Error::RowNotStochastic {
                    row: i,
                    reason: format!("entry {j} is {v}"),
                });
            }
            let sum = compensated_sum(row.iter().copied());
            if (sum - T::one()).abs() > t {
                return Err(Error::RowNotStochastic {
                    row: i,
                    reason: format!("sums to {sum}"),
                });
            }
            for v in row.iter_mut() {
                *v = v.max(T::zero());
            }
            let clamped = compensated_sum(row.iter().copied());
            for v in row.iter_mut() {
                *v = *v / clamped;
            }
        }
        Ok(Self { size, data })
    }

    fn from_trusted(size: usize, data: Vec<T>) -> Self {
        Self { size, data }
    }

    pub fn identity(size: usize) -> Self {
        let mut data = vec![T::zero(); size * size];
        for i in 0..size {
            data[i * size + i] = T::one();
        }
        Self { size, data }
    }

    /// The rank-one matrix whose rows all equal `row`.
    pub fn repeated_row(row: &MeasureVector<T>) -> Self {
        let size = row.len();
        let mut data = Vec::with_capacity(size * size);
        for _ in 0..size {
            data.extend_from_slice(row.weights());
        }
        Self { size, data }
    }

    #[inline]
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.size + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.size..(i + 1) * self.size]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.size)
    }

    /// Smallest entry and its position (first in row-major order on ties).
    pub fn min_entry(&self) -> (T, (usize, usize)) {
        let mut best = (self.data[0], (0, 0));
        for (k, &v) in self.data.iter().enumerate() {
            if v < best.0 {
                best = (v, (k / self.size, k % self.size));
            }
        }
        best
    }

    /// Row vector times matrix: `v M`.
    pub fn left_mul(&self, v: &[T]) -> Vec<T> {
        (0..self.size)
            .map(|j| compensated_sum((0..self.size).map(|i| v[i] * self.get(i, j))))
            .collect()
    }

    /// Matrix times column vector: `M v`.
    pub fn right_mul(&self, v: &[T]) -> Vec<T> {
        self.rows()
            .map(|r| compensated_sum(r.iter().zip(v).map(|(&a, &b)| a * b)))
            .collect()
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        check_dim(self.size, other.size)?;
        let n = self.size;
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                data[i * n + j] = compensated_sum((0..n).map(|k| self.get(i, k) * other.get(k, j)));
            }
        }
        Ok(Self::from_trusted(n, data))
    }

    pub fn pow(&self, k: usize) -> Self {
        let mut out = Self::identity(self.size);
        for _ in 0..k {
            out = out.matmul(self).expect("same size");
        }
        out
    }

    /// Dobrushin ergodicity coefficient `½ max_{x,x'} Σ_y |M(x,y) − M(x',y)|`.
    pub fn dobrushin_coefficient(&self) -> T {
        let mut best = T::zero();
        for a in 0..self.size {
            for b in (a + 1)..self.size {
                let s = compensated_sum(self.row(a).iter().zip(self.row(b)).map(|(&x, &y)| (x - y).abs()));
                best = best.max(s * T::lit(0.5));
            }
        }
        best.min(T::one())
    }

    pub fn to_rows_f64(&self) -> Vec<Vec<f64>> {
        self.rows().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect()
    }
}

/// Dobrushin ergodicity coefficient of a stochastic matrix.
pub fn dobrushin_coefficient<T: Scalar>(m: &StochasticMatrix<T>) -> T {
    m.dobrushin_coefficient()
}

/// One block `Σ_{z_1..z_d} c_{x,y,z_1..z_d} μ(z_1)···μ(z_d)` of a polynomial kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialBlock<T> {
    pub degree: usize,
    /// Row-major over `(x, y, z_1, .., z_d)`; length `n^(2+degree)`.
    pub coefficients: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelFamily<T> {
    /// `P(μ) = A`: a classical chain.
    Constant(StochasticMatrix<T>),
    /// `P(μ) = (1−λ)A + λ 𝟙⊗(μQ)`.
    AffineMixture {
        base: StochasticMatrix<T>,
        feedback: StochasticMatrix<T>,
        lambda: T,
    },
    /// `P(μ)_{x,y} = c⁰_{x,y} + Σ_blocks ...`.
    Polynomial {
        constant: Vec<T>,
        blocks: Vec<PolynomialBlock<T>>,
    },
}

impl<T> KernelFamily<T> {
    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Constant(_) => "constant",
            KernelFamily::AffineMixture { .. } => "affine_mixture",
            KernelFamily::Polynomial { .. } => "polynomial",
        }
    }
}

/// A transition kernel `μ ↦ P^μ` on a finite state space.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearKernel<T> {
    space: StateSpace,
    family: KernelFamily<T>,
    id: u64,
}

impl<T: Scalar> NonlinearKernel<T> {
    pub fn constant(space: StateSpace, a: StochasticMatrix<T>) -> Result<Self> {
        check_dim(space.size(), a.size())?;
        Self::build(space, KernelFamily::Constant(a))
    }

    pub fn affine_mixture(
        space: StateSpace,
        base: StochasticMatrix<T>,
        feedback: StochasticMatrix<T>,
        lambda: T,
    ) -> Result<Self> {
        check_dim(space.size(), base.size())?;
        check_dim(space.size(), feedback.size())?;
        if !(lambda >= T::zero() && lambda <= T::one()) {
            return Err(Error::InvalidParameter(format!("lambda {lambda} outside [0, 1]")));
        }
        Self::build(space, KernelFamily::AffineMixture { base, feedback, lambda })
    }

    pub fn polynomial(space: StateSpace, constant: Vec<T>, blocks: Vec<PolynomialBlock<T>>) -> Result<Self> {
        let n = space.size();
        check_dim(n * n, constant.len())?;
        for b in &blocks {
            if b.degree == 0 {
                return Err(Error::InvalidParameter("polynomial block degree must be >= 1".into()));
            }
            check_dim(n.pow(2 + b.degree as u32), b.coefficients.len())?;
        }
        Self::build(space, KernelFamily::Polynomial { constant, blocks })
    }

    fn build(space: StateSpace, family: KernelFamily<T>) -> Result<Self> {
        let id = fingerprint(&family);
        let kernel = Self { space, family, id };
        let n = kernel.space.size();
        for v in 0..n {
            kernel.evaluate(&MeasureVector::vertex(n, v))?;
        }
        kernel.evaluate(&MeasureVector::uniform(n))?;
        Ok(kernel)
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    pub fn size(&self) -> usize {
        self.space.size()
    }

    pub fn family(&self) -> &KernelFamily<T> {
        &self.family
    }

    /// Content hash of the family and its coefficients.
    pub fn id(&self) -> u64 {
        self.id
    }

    /// Entries are affine in μ, so extrema over the simplex sit at its vertices.
    pub fn is_affine_in_measure(&self) -> bool {
        !matches!(self.family, KernelFamily::Polynomial { .. })
    }

    /// The transition matrix `P^μ`.
    pub fn evaluate(&self, mu: &MeasureVector<T>) -> Result<StochasticMatrix<T>> {
        let n = self.size();
        check_dim(n, mu.len())?;
        match &self.family {
            KernelFamily::Constant(a) => Ok(a.clone()),
            KernelFamily::AffineMixture { base, feedback, lambda } => {
                let target = feedback.left_mul(mu.weights());
                let keep = T::one() - *lambda;
                let mut data = Vec::with_capacity(n * n);
                for i in 0..n {
                    for j in 0..n {
                        data.push(keep * base.get(i, j) + *lambda * target[j]);
                    }
                }
                StochasticMatrix::checked(n, data, T::REST_TOL)
            }
            KernelFamily::Polynomial { constant, blocks } => {
                let mut data = constant.clone();
                for block in blocks {
                    let mono = monomials(mu.weights(), block.degree);
                    let width = mono.len();
                    for (cell, value) in data.iter_mut().enumerate() {
                        let coeffs = &block.coefficients[cell * width..(cell + 1) * width];
                        *value = *value + compensated_sum(coeffs.iter().zip(&mono).map(|(&c, &m)| c * m));
                    }
                }
                StochasticMatrix::checked(n, data, T::REST_TOL)
            }
        }
    }
}

/// Tensor power `μ^{⊗d}` flattened row-major.
fn monomials<T: Scalar>(mu: &[T], degree: usize) -> Vec<T> {
    let mut out = vec![T::one()];
    for _ in 0..degree {
        out = out.iter().flat_map(|&a| mu.iter().map(move |&b| a * b)).collect();
    }
    out
}

fn fingerprint<T: Scalar>(family: &KernelFamily<T>) -> u64 {
    // FNV-1a over the family tag and coefficient bit patterns.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |x: u64| {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    let eat_all = |vals: &[T], eat: &mut dyn FnMut(u64)| {
        for v in vals {
            eat(v.as_f64().to_bits());
        }
    };
    match family {
        KernelFamily::Constant(a) => {
            eat(1);
            eat_all(&a.data, &mut eat);
        }
        KernelFamily::AffineMixture { base, feedback, lambda } => {
            eat(2);
            eat_all(&base.data, &mut eat);
            eat_all(&feedback.data, &mut eat);
            eat(lambda.as_f64().to_bits());
        }
        KernelFamily::Polynomial { constant, blocks } => {
            eat(3);
            eat_all(constant, &mut eat);
            for b in blocks {
                eat(b.degree as u64);
                eat_all(&b.coefficients, &mut eat);
            }
        }
    }
    h
}

/// Estimate of `inf_μ min_{x,y} P^μ_{x,y}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinorizationReport<T> {
    pub lower_bound_estimate: T,
    pub argmin_measure: MeasureVector<T>,
    pub argmin_entry: (usize, usize),
    pub grid_resolution: usize,
    pub samples: usize,
    pub exact: bool,
}

/// Sweeps the simplex for the smallest kernel entry.
///
/// Affine families are evaluated on the vertices only, which is exact.
/// Polynomial families are evaluated on the regular grid of the given
/// resolution plus `extra_samples` seeded uniform simplex points. The sweep
/// doubles as a well-posedness check: any point where the kernel is not
/// stochastic is returned as an error.
pub fn minorization_bound<T: Scalar>(
    kernel: &NonlinearKernel<T>,
    grid_resolution: usize,
    extra_samples: usize,
    seed: u64,
) -> Result<MinorizationReport<T>> {
    if grid_resolution < 1 {
        return Err(Error::InvalidParameter("grid_resolution must be >= 1".into()));
    }
    let n = kernel.size();
    let exact = kernel.is_affine_in_measure();
    let points: Vec<MeasureVector<T>> = if exact {
        (0..n).map(|v| MeasureVector::vertex(n, v)).collect()
    } else {
        let mut pts = simplex_grid(n, grid_resolution);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        pts.extend((0..extra_samples).map(|_| MeasureVector::random(n, &mut rng)));
        pts
    };
    let minima: Vec<(T, (usize, usize))> = points
        .par_iter()
        .map(|p| kernel.evaluate(p).map(|m| m.min_entry()))
        .collect::<Result<_>>()?;
    let mut best_idx = 0;
    for (i, m) in minima.iter().enumerate().skip(1) {
        if m.0 < minima[best_idx].0 {
            best_idx = i;
        }
    }
    let (value, entry) = minima[best_idx];
    Ok(MinorizationReport {
        lower_bound_estimate: value.max(T::zero()).min(T::one()),
        argmin_measure: points[best_idx].clone(),
        argmin_entry: entry,
        grid_resolution,
        samples: points.len(),
        exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> StochasticMatrix<f64> {
        StochasticMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn two() -> StateSpace {
        StateSpace::new(2).unwrap()
    }

    #[test]
    fn rejects_bad_rows() {
        let e = StochasticMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.49]]);
        assert!(matches!(e, Err(Error::RowNotStochastic { row: 1, .. })));
        let e = StochasticMatrix::from_rows(vec![vec![1.2, -0.2], vec![0.5, 0.5]]);
        assert!(matches!(e, Err(Error::RowNotStochastic { row: 0, .. })));
    }

    #[test]
    fn evaluate_examples() {
        let a = mat(&[&[0.9, 0.1], &[0.2, 0.8]]);
        let k = NonlinearKernel::constant(two(), a.clone()).unwrap();
        let mu = MeasureVector::new(&[0.4, 0.6]).unwrap();
        assert_eq!(k.evaluate(&mu).unwrap(), a);

        let k = NonlinearKernel::affine_mixture(two(), a, StochasticMatrix::identity(2), 1.0).unwrap();
        let mu = MeasureVector::new(&[0.2, 0.8]).unwrap();
        let p = k.evaluate(&mu).unwrap();
        for r in p.rows() {
            assert!((r[0] - 0.2).abs() < 1e-15 && (r[1] - 0.8).abs() < 1e-15);
        }

        let half = mat(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let k = NonlinearKernel::affine_mixture(two(), half, StochasticMatrix::identity(2), 0.5).unwrap();
        let p = k.evaluate(&MeasureVector::vertex(2, 0)).unwrap();
        for r in p.rows() {
            assert_eq!(r, &[0.75, 0.25]);
        }
    }

    #[test]
    fn lambda_out_of_range() {
        let a = StochasticMatrix::<f64>::identity(2);
        let e = NonlinearKernel::affine_mixture(two(), a.clone(), a, 1.5);
        assert!(matches!(e, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn dobrushin_examples() {
        assert_eq!(StochasticMatrix::<f64>::identity(2).dobrushin_coefficient(), 1.0);
        assert_eq!(mat(&[&[0.3, 0.7], &[0.3, 0.7]]).dobrushin_coefficient(), 0.0);
        let d = mat(&[&[0.3, 0.7], &[0.6, 0.4]]).dobrushin_coefficient();
        assert!((d - 0.3).abs() < 1e-15);
    }

    #[test]
    fn minorization_examples() {
        let k = NonlinearKernel::constant(two(), mat(&[&[0.9, 0.1], &[0.2, 0.8]])).unwrap();
        let r = minorization_bound(&k, 10, 0, 0).unwrap();
        assert_eq!(r.lower_bound_estimate, 0.1);
        assert_eq!(r.argmin_entry, (0, 1));
        assert!(r.exact);

        let id = StochasticMatrix::identity(2);
        let k = NonlinearKernel::affine_mixture(two(), mat(&[&[0.9, 0.1], &[0.2, 0.8]]), id.clone(), 1.0).unwrap();
        let r = minorization_bound(&k, 10, 0, 0).unwrap();
        assert_eq!(r.lower_bound_estimate, 0.0);
        assert!(r.exact);

        let half = mat(&[&[0.5, 0.5], &[0.5, 0.5]]);
        let k = NonlinearKernel::affine_mixture(two(), half, id, 0.5).unwrap();
        let r = minorization_bound(&k, 10, 0, 0).unwrap();
        // Brute force over both vertices: rows (0.75, 0.25) and (0.25, 0.75).
        let brute = (0..2)
            .map(|v| k.evaluate(&MeasureVector::vertex(2, v)).unwrap().min_entry().0)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(brute, 0.25);
        assert_eq!(r.lower_bound_estimate, brute);
    }

    #[test]
    fn polynomial_kernel_sweep() {
        // P(μ)_{x,y} = 0.2 + 0.6·μ(y): c⁰ = 0.2 everywhere, c¹_{x,y,z} = 0.6·[y == z].
        let n = 2;
        let constant = vec![0.2f64; n * n];
        let mut coefficients = vec![0.0; n * n * n];
        for x in 0..n {
            for y in 0..n {
                coefficients[(x * n + y) * n + y] = 0.6;
            }
        }
        let k = NonlinearKernel::polynomial(
            two(),
            constant,
            vec![PolynomialBlock {
                degree: 1,
                coefficients,
            }],
        )
        .unwrap();
        let p = k.evaluate(&MeasureVector::new(&[0.5, 0.5]).unwrap()).unwrap();
        assert!((p.get(0, 0) - 0.5).abs() < 1e-15);
        let r = minorization_bound(&k, 8, 50, 7).unwrap();
        assert!(!r.exact);
        assert_eq!(r.samples, 9 + 50);
        // Grid contains the vertices, where the minimum 0.2 is attained.
        assert!((r.lower_bound_estimate - 0.2).abs() < 1e-15);
        let again = minorization_bound(&k, 8, 50, 7).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn ill_posed_polynomial_is_rejected() {
        let n = 2;
        let constant = vec![0.5; n * n];
        // Adds μ(0) to entry (0,0) only: row 0 sums to 1 + μ(0).
        let mut coefficients = vec![0.0; n * n * n];
        coefficients[0] = 1.0;
        let e = NonlinearKernel::polynomial(
            two(),
            constant,
            vec![PolynomialBlock {
                degree: 1,
                coefficients,
            }],
        );
        assert!(matches!(e, Err(Error::RowNotStochastic { row: 0, .. })));
    }

    #[test]
    fn quadratic_block() {
        // P(μ) rows = (μ0², 1 − μ0²): degree-2 block on entry y=0 with c_{x,0,0,0} = 1
        // and entry y=1 with c⁰ = 1, c_{x,1,0,0} = −1.
        let n = 2;
        let mut constant = vec![0.0f64; 4];
        constant[1] = 1.0;
        constant[3] = 1.0;
        let mut coefficients = vec![0.0; 16];
        for x in 0..n {
            coefficients[(x * n) * 4] = 1.0;
            coefficients[(x * n + 1) * 4] = -1.0;
        }
        let k = NonlinearKernel::polynomial(
            two(),
            constant,
            vec![PolynomialBlock {
                degree: 2,
                coefficients,
            }],
        )
        .unwrap();
        let p = k.evaluate(&MeasureVector::new(&[0.6, 0.4]).unwrap()).unwrap();
        assert!((p.get(1, 0) - 0.36).abs() < 1e-15);
        assert!((p.get(1, 1) - 0.64).abs() < 1e-15);
    }

    #[test]
    fn fingerprint_distinguishes_kernels() {
        let a = NonlinearKernel::constant(two(), mat(&[&[0.9, 0.1], &[0.2, 0.8]])).unwrap();
        let b = NonlinearKernel::constant(two(), mat(&[&[0.8, 0.2], &[0.2, 0.8]])).unwrap();
        assert_ne!(a.id(), b.id());
        assert_eq!(a.id(), a.clone().id());
    }
}
