//! Symmetric sparse matrices in compressed-row form and a Jacobi
//! preconditioned conjugate gradient solver.
//!
//! The solver side is deliberately dependency free: the system matrices of
//! the time stepper are mass-dominated and uniformly well conditioned, so a
//! diagonally preconditioned CG converges in a few dozen iterations and a
//! `SolverHandle` can be built once and reused for every step of a run.

use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("dimension mismatch: matrix is {n}x{n}, vector has length {len}")]
    DimensionMismatch { n: usize, len: usize },
    #[error("right-hand side entry {index} is not finite")]
    NonFiniteRhs { index: usize },
    #[error("CG did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error(
        "matrix failed the positive definiteness spot check (Rayleigh quotient {quotient:.3e})"
    )]
    NotPositiveDefinite { quotient: f64 },
    #[error("matrix is not symmetric (max |A - A^T| = {defect:.3e})")]
    NotSymmetric { defect: f64 },
}

/// Triplet accumulator for building a [`SparseMatrixSym`].
#[derive(Debug, Clone)]
pub struct SparseBuilder {
    n: usize,
    triplets: Vec<(usize, usize, f64)>,
}

impl SparseBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            triplets: Vec::new(),
        }
    }

    /// Accumulate `value` at `(row, col)`. Duplicates are summed on finalize.
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.triplets.push((row, col, value));
    }

    /// Sort, merge duplicates and drop exact zeros.
    pub fn finalize(mut self) -> SparseMatrixSym {
        self.triplets
            .sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_offsets = vec![0usize; self.n + 1];
        let mut col_indices = Vec::new();
        let mut values = Vec::new();
        let mut iter = self.triplets.into_iter().peekable();
        while let Some((r, c, mut v)) = iter.next() {
            while let Some(&(r2, c2, v2)) = iter.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    iter.next();
                } else {
                    break;
                }
            }
            if v != 0.0 {
                row_offsets[r + 1] += 1;
                col_indices.push(c);
                values.push(v);
            }
        }
        for i in 0..self.n {
            row_offsets[i + 1] += row_offsets[i];
        }
        SparseMatrixSym {
            n: self.n,
            row_offsets,
            col_indices,
            values,
        }
    }
}

/// Symmetric sparse matrix in compressed-row layout with sorted column
/// indices per row and no explicit zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrixSym {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrixSym {
    pub fn identity(n: usize) -> Self {
        let mut b = SparseBuilder::new(n);
        for i in 0..n {
            b.push(i, i, 1.0);
        }
        b.finalize()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    /// y = A x, exactly as stored.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        if x.len() != self.n {
            return Err(SparseError::DimensionMismatch {
                n: self.n,
                len: x.len(),
            });
        }
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        Ok(y)
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                acc += self.values[k] * x[self.col_indices[k]];
            }
            y[i] = acc;
        }
    }

    /// Largest symmetry defect `max |A_ij - A_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Sum of all entries (used by the partition-of-unity mass checks).
    pub fn entry_sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// alpha * A + beta * B with merged sparsity patterns.
    pub fn linear_combination(alpha: f64, a: &Self, beta: f64, b: &Self) -> Self {
        assert_eq!(a.n, b.n, "matrix dimensions differ");
        let mut builder = SparseBuilder::new(a.n);
        for i in 0..a.n {
            for (j, v) in a.row(i) {
                builder.push(i, j, alpha * v);
            }
            for (j, v) in b.row(i) {
                builder.push(i, j, beta * v);
            }
        }
        builder.finalize()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Factor-once/solve-many handle: Jacobi preconditioner extracted up front,
/// the matrix shared read-only, so one handle serves every step of a run.
#[derive(Debug, Clone)]
pub struct SolverHandle {
    matrix: Arc<SparseMatrixSym>,
    inv_diag: Vec<f64>,
    tolerance: f64,
    max_iterations: usize,
    monotonicity_check: bool,
}

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITERATIONS: usize = 2000;

impl SolverHandle {
    /// Build a handle. Verifies symmetry exactly and positive definiteness by
    /// a Rayleigh quotient spot check on pseudo-random vectors.
    pub fn new(
        matrix: Arc<SparseMatrixSym>,
        tolerance: f64,
        max_iterations: usize,
    ) -> Result<Self, SparseError> {
        let defect = matrix.max_asymmetry();
        if defect != 0.0 {
            return Err(SparseError::NotSymmetric { defect });
        }
        let mut rng = SplitMix64::new(0x5ca1ab1e);
        let n = matrix.dim();
        for _ in 0..8 {
            let x: Vec<f64> = (0..n).map(|_| rng.next_unit() - 0.5).collect();
            let ax = matrix.matvec(&x)?;
            let num: f64 = x.iter().zip(&ax).map(|(a, b)| a * b).sum();
            let den: f64 = x.iter().map(|a| a * a).sum();
            if den > 0.0 && num / den <= 0.0 {
                return Err(SparseError::NotPositiveDefinite {
                    quotient: num / den,
                });
            }
        }
        let inv_diag: Vec<f64> = matrix
            .diagonal()
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d } else { f64::NAN })
            .collect();
        if let Some(i) = inv_diag.iter().position(|v| !v.is_finite()) {
            return Err(SparseError::NotPositiveDefinite {
                quotient: matrix.get(i, i),
            });
        }
        Ok(Self {
            matrix,
            inv_diag,
            tolerance,
            max_iterations,
            monotonicity_check: true,
        })
    }

    pub fn with_defaults(matrix: Arc<SparseMatrixSym>) -> Result<Self, SparseError> {
        Self::new(matrix, DEFAULT_TOLERANCE, DEFAULT_MAX_ITERATIONS)
    }

    /// Disable the per-iteration monotonicity assertion. Intended for
    /// consistent singular systems (pure-Neumann stiffness), where PCG
    /// converges but the preconditioned residual may grow transiently.
    pub fn without_monotonicity_check(mut self) -> Self {
        self.monotonicity_check = false;
        self
    }

    pub fn matrix(&self) -> &SparseMatrixSym {
        &self.matrix
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, SparseError> {
        self.solve_with_stats(rhs).map(|(x, _)| x)
    }

    /// Preconditioned CG from a zero initial guess; stops when the relative
    /// residual `||Ax - b|| / ||b||` drops below the handle tolerance.
    pub fn solve_with_stats(&self, rhs: &[f64]) -> Result<(Vec<f64>, SolveStats), SparseError> {
        let n = self.matrix.dim();
        if rhs.len() != n {
            return Err(SparseError::DimensionMismatch { n, len: rhs.len() });
        }
        if let Some(index) = rhs.iter().position(|v| !v.is_finite()) {
            return Err(SparseError::NonFiniteRhs { index });
        }
        let norm_b = norm(rhs);
        let mut x = vec![0.0; n];
        if norm_b == 0.0 {
            return Ok((
                x,
                SolveStats {
                    iterations: 0,
                    relative_residual: 0.0,
                },
            ));
        }
        let mut r = rhs.to_vec();
        let mut z: Vec<f64> = r
            .iter()
            .zip(&self.inv_diag)
            .map(|(ri, di)| ri * di)
            .collect();
        let mut p = z.clone();
        let mut rz: f64 = dot(&r, &z);
        let mut ap = vec![0.0; n];
        let initial_pre_norm = rz.sqrt();
        let mut prev_pre_norm = initial_pre_norm;
        for iter in 0..self.max_iterations {
            let res = norm(&r);
            if res <= self.tolerance * norm_b {
                return Ok((
                    x,
                    SolveStats {
                        iterations: iter,
                        relative_residual: res / norm_b,
                    },
                ));
            }
            self.matrix.matvec_into(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                return Err(SparseError::NotPositiveDefinite { quotient: pap });
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            for i in 0..n {
                z[i] = r[i] * self.inv_diag[i];
            }
            let rz_new = dot(&r, &z);
            // The preconditioned residual norm trends down but is not
            // strictly monotone for PCG: transient overshoot up to roughly
            // the condition number occurs on hard right-hand sides (8x was
            // observed on blow-up runs). The guard only flags divergence by
            // orders of magnitude; convergence itself is enforced by the
            // stopping criterion and the iteration cap.
            let pre_norm = rz_new.max(0.0).sqrt();
            debug_assert!(
                !self.monotonicity_check || pre_norm <= initial_pre_norm * 100.0 + 1e-300,
                "preconditioned residual diverged: {pre_norm:.3e} after {prev_pre_norm:.3e} \
                 (initial {initial_pre_norm:.3e})"
            );
            prev_pre_norm = pre_norm;
            let beta = rz_new / rz;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
            rz = rz_new;
        }
        let res = norm(&r);
        Err(SparseError::NoConvergence {
            iterations: self.max_iterations,
            residual: res / norm_b,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Small deterministic PRNG for the SPD spot check.
struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}
