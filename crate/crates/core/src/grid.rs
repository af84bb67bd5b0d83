//! Uniform periodic grids on the unit torus and the discrete calculus shared
//! by every solver.
//!
//! Node `i` sits at `x_i = i/n`. Derivatives live on edges: edge `i` joins
//! node `i` to node `i + 1 (mod n)` and carries the forward difference, so the
//! sign of `u_x` is unambiguous wherever the flow needs it.

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};

/// Uniform grid on the torus `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TorusGrid {
    n_points: usize,
}

impl TorusGrid {
    pub const MIN_POINTS: usize = 4;

    pub fn new(n_points: usize) -> Result<Self> {
        if n_points < Self::MIN_POINTS {
            return Err(FlowError::GridTooSmall(n_points));
        }
        Ok(Self { n_points })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n_points
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        1.0 / self.n_points as f64
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        i as f64 / self.n_points as f64
    }

    /// Midpoint of edge `i`, wrapped into `[0, 1)`.
    #[inline]
    pub fn edge_midpoint(&self, i: usize) -> f64 {
        wrap_unit((i as f64 + 0.5) / self.n_points as f64)
    }

    #[inline]
    pub fn next(&self, i: usize) -> usize {
        if i + 1 == self.n_points {
            0
        } else {
            i + 1
        }
    }

    #[inline]
    pub fn prev(&self, i: usize) -> usize {
        if i == 0 {
            self.n_points - 1
        } else {
            i - 1
        }
    }

    /// Index `i + k` taken cyclically; `k` may be negative.
    #[inline]
    pub fn offset(&self, i: usize, k: isize) -> usize {
        (i as isize + k).rem_euclid(self.n_points as isize) as usize
    }

    pub fn coords(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |i| self.coord(i))
    }
}

/// Wraps a coordinate into `[0, 1)`.
#[inline]
pub fn wrap_unit(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Periodic samples on a [`TorusGrid`]. Values are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(FlowError::LengthMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(FlowError::NonFinite { index, value });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: TorusGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.coords().map(f).collect())
    }

    pub fn constant(grid: TorusGrid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.len()],
        }
    }

    pub fn zeros(grid: TorusGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    #[inline]
    pub fn grid(&self) -> TorusGrid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Applies `f` nodewise. Fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn l2_diff(&self, other: &GridFunction) -> f64 {
        let h = self.grid.spacing();
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| h * (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Sup-norm distance from the mean, the extinction criterion.
    pub fn oscillation(&self) -> f64 {
        let m = self.mean();
        self.values
            .iter()
            .map(|v| (v - m).abs())
            .fold(0.0, f64::max)
    }
}

/// Positive facet coefficient of the flow.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Alpha(f64);

impl Alpha {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha.is_finite() && alpha > 0.0 {
            Ok(Self(alpha))
        } else {
            Err(FlowError::InvalidParameter(format!(
                "alpha > 0 required, got {alpha}"
            )))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }

    /// Half-width of the jump of the monotone graph at zero slope.
    #[inline]
    pub fn half(self) -> f64 {
        0.5 * self.0
    }
}

impl TryFrom<f64> for Alpha {
    type Error = FlowError;

    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<Alpha> for f64 {
    fn from(a: Alpha) -> f64 {
        a.0
    }
}

/// Forward differences on a raw slice, `d_i = (f_{i+1} - f_i)/h` cyclically.
pub fn forward_diff_slice(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| (values[(i + 1) % n] - values[i]) / h)
        .collect()
}

/// Backward differences on a raw slice, `(g_i - g_{i-1})/h` cyclically.
/// Applied to edge data this is the discrete divergence at nodes.
pub fn backward_diff_slice(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|i| (values[i] - values[(i + n - 1) % n]) / h)
        .collect()
}

/// Discrete `u_x` on edges; entry `i` belongs to the edge `(i, i+1)`.
pub fn forward_diff(f: &GridFunction) -> GridFunction {
    GridFunction {
        grid: f.grid,
        values: forward_diff_slice(&f.values, f.grid.spacing()),
    }
}

/// Three-point periodic Laplacian.
pub fn laplacian(f: &GridFunction) -> GridFunction {
    let n = f.len();
    let inv_h2 = 1.0 / (f.grid.spacing() * f.grid.spacing());
    let v = &f.values;
    let values = (0..n)
        .map(|i| (v[(i + n - 1) % n] - 2.0 * v[i] + v[(i + 1) % n]) * inv_h2)
        .collect();
    GridFunction {
        grid: f.grid,
        values,
    }
}

/// Discrete energy `sum_i h [ d_i^2/2 + (alpha/2)|d_i| ]` with `d = forward_diff(f)`.
pub fn energy(f: &GridFunction, alpha: Alpha) -> f64 {
    energy_slice(&f.values, f.grid.spacing(), alpha)
}

pub(crate) fn energy_slice(values: &[f64], h: f64, alpha: Alpha) -> f64 {
    let a2 = alpha.half();
    forward_diff_slice(values, h)
        .iter()
        .map(|d| h * (0.5 * d * d + a2 * d.abs()))
        .sum()
}

/// h-weighted norms of a grid function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub l2: f64,
    pub linf: f64,
    pub tv: f64,
    pub mean: f64,
}

pub fn norms(f: &GridFunction) -> Norms {
    let h = f.grid.spacing();
    let l2 = f.values.iter().map(|v| h * v * v).sum::<f64>().sqrt();
    let linf = f.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let tv = forward_diff_slice(&f.values, h)
        .iter()
        .map(|d| h * d.abs())
        .sum();
    let mean = f.values.iter().map(|v| h * v).sum();
    Norms { l2, linf, tv, mean }
}
