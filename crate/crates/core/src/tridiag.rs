//! Tridiagonal solvers: the Thomas algorithm and its cyclic extension via the
//! Sherman-Morrison correction. Both factor once and then solve in O(n).

use crate::error::{FlowError, Result};

/// LU factorization of a (non-cyclic) tridiagonal matrix.
///
/// `lower[i]` multiplies `x[i-1]` in row `i` (`lower[0]` is ignored) and
/// `upper[i]` multiplies `x[i+1]` (`upper[n-1]` is ignored).
#[derive(Debug, Clone)]
pub struct Tridiagonal {
    lower: Vec<f64>,
    // Modified super-diagonal c'_i and reciprocal pivots 1/(b_i - a_i c'_{i-1}).
    c_prime: Vec<f64>,
    inv_pivot: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(lower: &[f64], diag: &[f64], upper: &[f64]) -> Result<Self> {
        let n = diag.len();
        if lower.len() != n || upper.len() != n || n == 0 {
            return Err(FlowError::LengthMismatch {
                expected: n,
                got: lower.len().min(upper.len()),
            });
        }
        let mut c_prime = vec![0.0; n];
        let mut inv_pivot = vec![0.0; n];
        let mut prev_c = 0.0;
        for i in 0..n {
            let a = if i == 0 { 0.0 } else { lower[i] };
            let pivot = diag[i] - a * prev_c;
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(FlowError::Singular("zero pivot in Thomas factorization"));
            }
            inv_pivot[i] = 1.0 / pivot;
            prev_c = if i + 1 < n {
                upper[i] * inv_pivot[i]
            } else {
                0.0
            };
            c_prime[i] = prev_c;
        }
        Ok(Self {
            lower: lower.to_vec(),
            c_prime,
            inv_pivot,
        })
    }

    pub fn len(&self) -> usize {
        self.inv_pivot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inv_pivot.is_empty()
    }

    /// Solves in place: `rhs` is overwritten with the solution.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = self.len();
        debug_assert_eq!(rhs.len(), n);
        rhs[0] *= self.inv_pivot[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.lower[i] * rhs[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.c_prime[i] * rhs[i + 1];
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// One-shot Thomas solve.
pub fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
) -> Result<Vec<f64>> {
    Ok(Tridiagonal::new(lower, diag, upper)?.solve(rhs))
}

/// Factorization of a cyclic tridiagonal matrix (n >= 3).
///
/// Row `i` reads `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1]` with
/// indices taken mod n, so `lower[0]` is the top-right corner and
/// `upper[n-1]` the bottom-left corner.
#[derive(Debug, Clone)]
pub struct CyclicTridiagonal {
    inner: Tridiagonal,
    // Sherman-Morrison data: z = T^{-1} w and the scalars needed for the update.
    z: Vec<f64>,
    gamma: f64,
    top_right: f64,
    denom: f64,
}

impl CyclicTridiagonal {
    pub fn new(lower: &[f64], diag: &[f64], upper: &[f64]) -> Result<Self> {
        let n = diag.len();
        if n < 3 {
            return Err(FlowError::InvalidParameter(format!(
                "cyclic tridiagonal system needs n >= 3, got {n}"
            )));
        }
        if lower.len() != n || upper.len() != n {
            return Err(FlowError::LengthMismatch {
                expected: n,
                got: lower.len().min(upper.len()),
            });
        }
        let top_right = lower[0];
        let bottom_left = upper[n - 1];
        let gamma = if diag[0] != 0.0 { -diag[0] } else { -1.0 };
        let mut d = diag.to_vec();
        d[0] -= gamma;
        d[n - 1] -= bottom_left * top_right / gamma;
        let inner = Tridiagonal::new(lower, &d, upper)?;
        let mut z = vec![0.0; n];
        z[0] = gamma;
        z[n - 1] = bottom_left;
        inner.solve_in_place(&mut z);
        let denom = 1.0 + z[0] + top_right * z[n - 1] / gamma;
        if denom == 0.0 || !denom.is_finite() {
            return Err(FlowError::Singular("Sherman-Morrison denominator vanished"));
        }
        Ok(Self {
            inner,
            z,
            gamma,
            top_right,
            denom,
        })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = self.len();
        self.inner.solve_in_place(rhs);
        let fact = (rhs[0] + self.top_right * rhs[n - 1] / self.gamma) / self.denom;
        for (x, z) in rhs.iter_mut().zip(&self.z) {
            *x -= fact * z;
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
