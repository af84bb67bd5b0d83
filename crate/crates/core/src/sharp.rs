//! Front-tracking solver for the free-boundary form of the flow.
//!
//! Between merges the torus splits into facets `F_k = [b_{k-1}, a_k]` and
//! intervals `I_k = [a_k, b_k]`. On each interval `kappa = u_t` solves the heat
//! equation with Dirichlet data equal to the crystalline curvature `c_j` of the
//! adjacent facets, and the endpoints move by `z' = -kappa_y(z) / c`, which is
//! the time derivative of `u_x(z) = 0`. Each interval is mapped to `[0, 1]`
//! and the affine corrector `f = (1 - x) c_k + x c_{k+1}` is subtracted, so
//! the unknown `kappa_tilde` has homogeneous Dirichlet data:
//!
//! ```text
//! kt_t = kt_xx / L^2 + Phi_t (kt_x + f_x) / L - f_t,   Phi_t = a' + (b' - a') x.
//! ```
//!
//! Stepping is IMEX: implicit diffusion, explicit advection and endpoint
//! motion. Facet heights move at their exact rate `c_k`. The profile on each
//! interval is recovered from `u_yy = kappa` with the facet heights as
//! boundary values.

use serde::{Deserialize, Serialize};

use crate::datum::FacetProfile;
use crate::error::{FlowError, Result};
use crate::facets::{
    crystalline_curvature, default_flat_tol, detect_facets, FacetDecomposition, FacetKind,
};
use crate::grid::{wrap_unit, Alpha, GridFunction, TorusGrid};
use crate::trajectory::{
    config_hash, Event, EventKind, FacetRecord, Snapshot, SolverKind, Trajectory,
};
use crate::tridiag::Tridiagonal;
use crate::variational::minimal_selection;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpConfig {
    pub alpha: Alpha,
    /// Nodes per reference interval, endpoints included.
    pub m: usize,
    pub dt: f64,
    pub t_end: f64,
    /// An interval shorter than this triggers a merge.
    pub merge_len_tol: f64,
    /// Fraction of the explicit stability limit used per substep.
    pub cfl_safety: f64,
    /// Endpoint speed that stops the run with a `blowup_guard` event.
    pub speed_cap: f64,
    /// Accepted local error per substep on endpoints and heights.
    pub step_tol: f64,
    /// Grid on which snapshots are sampled.
    pub n_grid: usize,
    pub snapshot_every: usize,
}

impl SharpConfig {
    pub fn new(alpha: Alpha, m: usize, dt: f64, t_end: f64) -> Self {
        Self {
            alpha,
            m,
            dt,
            t_end,
            merge_len_tol: 0.01,
            cfl_safety: 0.5,
            speed_cap: 1e3,
            step_tol: 1e-7,
            n_grid: 512,
            snapshot_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FlowError::InvalidParameter(msg));
        if self.m < 8 {
            return bad(format!("m >= 8 required, got {}", self.m));
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt > 0 required, got {}", self.dt));
        }
        if !(self.t_end >= 0.0) {
            return bad(format!("t_end >= 0 required, got {}", self.t_end));
        }
        if !(self.merge_len_tol > 0.0) {
            return bad(format!(
                "merge_len_tol > 0 required, got {}",
                self.merge_len_tol
            ));
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety < 1.0) {
            return bad(format!(
                "cfl_safety in (0, 1) required, got {}",
                self.cfl_safety
            ));
        }
        if !(self.speed_cap > 0.0) {
            return bad(format!("speed_cap > 0 required, got {}", self.speed_cap));
        }
        if !(self.step_tol > 0.0) {
            return bad(format!("step_tol > 0 required, got {}", self.step_tol));
        }
        if self.n_grid < 4 {
            return bad(format!("n_grid >= 4 required, got {}", self.n_grid));
        }
        if self.snapshot_every == 0 {
            return bad("snapshot_every >= 1 required".into());
        }
        Ok(())
    }

    fn dx(&self) -> f64 {
        1.0 / (self.m - 1) as f64
    }
}

/// Facets, intervals and the rescaled curvature fields.
///
/// Endpoints are unwrapped reals with `b_{k-1} < a_k < b_k`, where
/// `b_{-1} = b_{n-1} - 1`. A constant (extinct) state has no facets and
/// carries its value in `constant`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpState {
    pub time: f64,
    pub alpha: Alpha,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub heights: Vec<f64>,
    pub kinds: Vec<FacetKind>,
    pub kappa_tilde: Vec<Vec<f64>>,
    pub u_fields: Vec<Vec<f64>>,
    pub constant: Option<f64>,
}

/// Endpoint velocities `a'_k`, `b'_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocities {
    pub a_dot: Vec<f64>,
    pub b_dot: Vec<f64>,
}

impl Velocities {
    pub fn zero(n: usize) -> Self {
        Self {
            a_dot: vec![0.0; n],
            b_dot: vec![0.0; n],
        }
    }

    pub fn max_speed(&self) -> f64 {
        self.a_dot
            .iter()
            .chain(&self.b_dot)
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Linear interpolation of nodal values on a uniform grid of `[0, 1]`.
fn interp(values: &[f64], s: f64) -> f64 {
    let m = values.len();
    let pos = s.clamp(0.0, 1.0) * (m - 1) as f64;
    let j = (pos.floor() as usize).min(m - 2);
    let w = pos - j as f64;
    (1.0 - w) * values[j] + w * values[j + 1]
}

/// Affine corrector on the reference interval: `(1 - x) c_left + x c_right`
/// with `c = crystalline_curvature(kind, length)`.
pub fn corrector(
    left: (FacetKind, f64),
    right: (FacetKind, f64),
    alpha: Alpha,
    x: f64,
) -> Result<f64> {
    for (index, (_, length)) in [left, right].into_iter().enumerate() {
        if !(length > 0.0) {
            return Err(FlowError::DegenerateFacet { index, length });
        }
    }
    if left.0 == right.0 {
        return Err(FlowError::InvalidDecomposition(format!(
            "adjacent facets are both {}",
            left.0.as_str()
        )));
    }
    let cl = crystalline_curvature(left.0, left.1, alpha);
    let cr = crystalline_curvature(right.0, right.1, alpha);
    Ok((1.0 - x) * cl + x * cr)
}

impl SharpState {
    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn is_extinct(&self) -> bool {
        self.constant.is_some()
    }

    pub fn m(&self) -> usize {
        self.kappa_tilde.first().map_or(0, Vec::len)
    }

    /// Left end of facet `k`, i.e. `b_{k-1}` unwrapped below `a_k`.
    fn facet_left(&self, k: usize) -> f64 {
        let n = self.n();
        if k == 0 {
            self.b[n - 1] - 1.0
        } else {
            self.b[k - 1]
        }
    }

    pub fn facet_length(&self, k: usize) -> f64 {
        self.a[k] - self.facet_left(k)
    }

    pub fn interval_length(&self, k: usize) -> f64 {
        self.b[k] - self.a[k]
    }

    pub fn facet_curvature(&self, k: usize) -> f64 {
        crystalline_curvature(self.kinds[k], self.facet_length(k), self.alpha)
    }

    /// Corrector endpoint values `(c_k, c_{k+1})` of interval `k`.
    fn corrector_ends(&self, k: usize) -> (f64, f64) {
        (
            self.facet_curvature(k),
            self.facet_curvature((k + 1) % self.n()),
        )
    }

    /// Constant state.
    pub fn extinct(value: f64, alpha: Alpha, time: f64) -> Self {
        Self {
            time,
            alpha,
            a: Vec::new(),
            b: Vec::new(),
            heights: Vec::new(),
            kinds: Vec::new(),
            kappa_tilde: Vec::new(),
            u_fields: Vec::new(),
            constant: Some(value),
        }
    }

    /// Samples an analytic facet profile on `m` nodes per interval.
    pub fn from_profile(p: &FacetProfile, m: usize) -> Result<Self> {
        if m < 8 {
            return Err(FlowError::InvalidParameter(format!(
                "m >= 8 required, got {m}"
            )));
        }
        let n = p.n();
        let ends = p.endpoints();
        let mut state = Self {
            time: 0.0,
            alpha: p.alpha,
            a: ends.iter().map(|e| e.0).collect(),
            b: ends.iter().map(|e| e.1).collect(),
            heights: p.facets.iter().map(|f| f.height).collect(),
            kinds: p.kinds().to_vec(),
            kappa_tilde: Vec::with_capacity(n),
            u_fields: Vec::with_capacity(n),
            constant: None,
        };
        for k in 0..n {
            let (cl, cr) = state.corrector_ends(k);
            let mut kt = Vec::with_capacity(m);
            let mut uf = Vec::with_capacity(m);
            for j in 0..m {
                let s = j as f64 / (m - 1) as f64;
                let (u, kappa) = p.on_interval(k, s);
                kt.push(kappa - ((1.0 - s) * cl + s * cr));
                uf.push(u);
            }
            kt[0] = 0.0;
            kt[m - 1] = 0.0;
            state.kappa_tilde.push(kt);
            state.u_fields.push(uf);
        }
        state.check_invariants()?;
        Ok(state)
    }

    /// Builds a state from a sampled profile: facets from `detect_facets`,
    /// curvature from the minimal selection. Endpoints sit at the edge
    /// midpoints chosen by the detector.
    pub fn from_grid(u: &GridFunction, alpha: Alpha, m: usize) -> Result<Self> {
        if m < 8 {
            return Err(FlowError::InvalidParameter(format!(
                "m >= 8 required, got {m}"
            )));
        }
        let report = detect_facets(u, alpha, default_flat_tol(u))?;
        let dec = &report.decomposition;
        if dec.degenerate {
            return Ok(Self::extinct(u.mean(), alpha, 0.0));
        }
        if !report.is_regular() {
            return Err(FlowError::InvalidDecomposition(
                "sharp solver needs a profile without embedded flats or isolated extrema".into(),
            ));
        }
        let kappa = minimal_selection(u, dec, alpha)?;
        Self::from_decomposition(u, &kappa, dec, alpha, m)
    }

    fn from_decomposition(
        u: &GridFunction,
        kappa: &GridFunction,
        dec: &FacetDecomposition,
        alpha: Alpha,
        m: usize,
    ) -> Result<Self> {
        let n = dec.n();
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        let mut cursor = dec.facets[0].left;
        for k in 0..n {
            let mut ak = dec.facets[k].right;
            while ak <= cursor {
                ak += 1.0;
            }
            let mut bk = dec.intervals[k].right;
            while bk <= ak {
                bk += 1.0;
            }
            a.push(ak);
            b.push(bk);
            cursor = bk;
        }
        let mut state = Self {
            time: 0.0,
            alpha,
            a,
            b,
            heights: dec.facets.iter().map(|f| f.height).collect(),
            kinds: dec.facets.iter().map(|f| f.kind).collect(),
            kappa_tilde: Vec::with_capacity(n),
            u_fields: Vec::with_capacity(n),
            constant: None,
        };
        let sample = |f: &GridFunction, y: f64| periodic_linear(f, y);
        for k in 0..n {
            let (cl, cr) = state.corrector_ends(k);
            let l = state.interval_length(k);
            let mut kt = Vec::with_capacity(m);
            let mut uf = Vec::with_capacity(m);
            for j in 0..m {
                let s = j as f64 / (m - 1) as f64;
                let y = state.a[k] + l * s;
                kt.push(sample(kappa, y) - ((1.0 - s) * cl + s * cr));
                uf.push(sample(u, y));
            }
            kt[0] = 0.0;
            kt[m - 1] = 0.0;
            uf[0] = state.heights[k];
            uf[m - 1] = state.heights[(k + 1) % n];
            state.kappa_tilde.push(kt);
            state.u_fields.push(uf);
        }
        state.check_invariants()?;
        Ok(state)
    }

    /// Ordering, positive lengths, exact Dirichlet zeros, field sizes.
    pub fn check_invariants(&self) -> Result<()> {
        if self.is_extinct() {
            return Ok(());
        }
        let n = self.n();
        if n < 2 || !n.is_multiple_of(2) {
            return Err(FlowError::InvalidDecomposition(format!(
                "odd or too small facet count {n}"
            )));
        }
        for k in 0..n {
            let fl = self.facet_length(k);
            if !(fl > 0.0) {
                return Err(FlowError::DegenerateFacet {
                    index: k,
                    length: fl,
                });
            }
            let il = self.interval_length(k);
            if !(il > 0.0) {
                return Err(FlowError::DegenerateInterval {
                    index: k,
                    length: il,
                });
            }
            if self.kinds[k] == self.kinds[(k + 1) % n] {
                return Err(FlowError::InvalidDecomposition(format!(
                    "facets {k} and {} have the same kind",
                    (k + 1) % n
                )));
            }
            let kt = &self.kappa_tilde[k];
            if kt.len() < 3 || kt[0] != 0.0 || kt[kt.len() - 1] != 0.0 {
                return Err(FlowError::InvalidDecomposition(format!(
                    "kappa_tilde of interval {k} violates the Dirichlet condition"
                )));
            }
            if self.u_fields[k].len() != kt.len() {
                return Err(FlowError::LengthMismatch {
                    expected: kt.len(),
                    got: self.u_fields[k].len(),
                });
            }
        }
        let total: f64 = (0..n)
            .map(|k| self.facet_length(k) + self.interval_length(k))
            .sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(FlowError::InvalidDecomposition(format!(
                "lengths sum to {total}"
            )));
        }
        Ok(())
    }

    /// Locates a torus coordinate: `Ok(k)` for facet `k`, `Err((k, s))` for
    /// interval `k` at reference coordinate `s`.
    fn locate(&self, x: f64) -> std::result::Result<usize, (usize, f64)> {
        let base = self.facet_left(0);
        let y = base + wrap_unit(x - base);
        for k in 0..self.n() {
            if y <= self.a[k] {
                return Ok(k);
            }
            if y < self.b[k] {
                return Err((k, (y - self.a[k]) / self.interval_length(k)));
            }
        }
        Ok(0)
    }

    /// `u` on interval `k` at `s`: linear interpolation corrected by the
    /// curvature, which is `u_yy` there, and clamped to the bracketing nodes.
    fn u_at(&self, k: usize, s: f64) -> f64 {
        let uf = &self.u_fields[k];
        let m = uf.len();
        let dx = 1.0 / (m - 1) as f64;
        let pos = s.clamp(0.0, 1.0) * (m - 1) as f64;
        let j = (pos.floor() as usize).min(m - 2);
        let w = pos - j as f64;
        let lin = (1.0 - w) * uf[j] + w * uf[j + 1];
        let l = self.interval_length(k);
        let corrected = lin - 0.5 * self.kappa_at(k, s) * (w * dx * l) * ((1.0 - w) * dx * l);
        // stay between the nodes so monotone data samples monotone
        corrected.clamp(uf[j].min(uf[j + 1]), uf[j].max(uf[j + 1]))
    }

    fn kappa_at(&self, k: usize, s: f64) -> f64 {
        let (cl, cr) = self.corrector_ends(k);
        interp(&self.kappa_tilde[k], s) + (1.0 - s) * cl + s * cr
    }

    pub fn to_grid(&self, grid: TorusGrid) -> Result<GridFunction> {
        if let Some(c) = self.constant {
            return Ok(GridFunction::constant(grid, c));
        }
        GridFunction::from_fn(grid, |x| match self.locate(x) {
            Ok(k) => self.heights[k],
            Err((k, s)) => self.u_at(k, s),
        })
    }

    /// `kappa = u_t`: the crystalline curvature on facets.
    pub fn kappa_to_grid(&self, grid: TorusGrid) -> Result<GridFunction> {
        if self.is_extinct() {
            return Ok(GridFunction::zeros(grid));
        }
        GridFunction::from_fn(grid, |x| match self.locate(x) {
            Ok(k) => self.facet_curvature(k),
            Err((k, s)) => self.kappa_at(k, s),
        })
    }

    pub fn facet_records(&self) -> Vec<FacetRecord> {
        (0..self.n())
            .map(|k| FacetRecord {
                left: wrap_unit(self.facet_left(k)),
                right: wrap_unit(self.a[k]),
                height: self.heights[k],
                kind: self.kinds[k],
                length: self.facet_length(k),
            })
            .collect()
    }

    /// `int u` over the torus (trapezoid rule on the interval fields).
    pub fn mass(&self) -> f64 {
        if let Some(c) = self.constant {
            return c;
        }
        (0..self.n())
            .map(|k| {
                let uf = &self.u_fields[k];
                let m = uf.len();
                let trap = (uf.iter().sum::<f64>() - 0.5 * (uf[0] + uf[m - 1])) / (m - 1) as f64;
                self.heights[k] * self.facet_length(k) + trap * self.interval_length(k)
            })
            .sum()
    }

    /// Adds `c` to the profile; `kappa` is unchanged.
    pub fn shift(&mut self, c: f64) {
        if let Some(v) = self.constant.as_mut() {
            *v += c;
            return;
        }
        self.heights.iter_mut().for_each(|h| *h += c);
        for uf in &mut self.u_fields {
            uf.iter_mut().for_each(|u| *u += c);
        }
    }

    /// `|u_x|` at every endpoint from the interval fields (one-sided,
    /// fourth order). The free-boundary condition makes these vanish; the
    /// stepper projects them to zero after every substep.
    pub fn neumann_residuals(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.n());
        for k in 0..self.n() {
            let (l, r) = end_derivatives(&self.u_fields[k], self.interval_length(k));
            out.push(l.abs());
            out.push(r.abs());
        }
        out
    }
}

/// One-sided fourth-order `u_y` at both ends of an interval field.
fn end_derivatives(uf: &[f64], l: f64) -> (f64, f64) {
    const W: [f64; 5] = [-25.0, 48.0, -36.0, 16.0, -3.0];
    let m = uf.len();
    let scale = (m - 1) as f64 / (12.0 * l);
    let left: f64 = (0..5).map(|j| W[j] * uf[j]).sum();
    let right: f64 = (0..5).map(|j| W[j] * uf[m - 1 - j]).sum();
    (left * scale, -right * scale)
}

fn periodic_linear(f: &GridFunction, y: f64) -> f64 {
    let n = f.len();
    let pos = wrap_unit(y) * n as f64;
    let j = (pos.floor() as usize).min(n - 1);
    let w = pos - j as f64;
    (1.0 - w) * f.values()[j] + w * f.values()[(j + 1) % n]
}

/// One-sided second-order `kt_x` at both ends of a reference field with
/// `kt[0] = kt[m-1] = 0`.
fn end_slopes(kt: &[f64]) -> (f64, f64) {
    let m = kt.len();
    let inv = (m - 1) as f64 / 2.0;
    (
        (-3.0 * kt[0] + 4.0 * kt[1] - kt[2]) * inv,
        (3.0 * kt[m - 1] - 4.0 * kt[m - 2] + kt[m - 3]) * inv,
    )
}

/// `a'_k = -kappa_y(a_k) / c_k`, `b'_k = -kappa_y(b_k) / c_{k+1}` with
/// `kappa_y = (kt_x + f_x) / L` at the reference ends.
pub fn endpoint_velocities(state: &SharpState) -> Velocities {
    let n = state.n();
    let mut v = Velocities::zero(n);
    for k in 0..n {
        let (cl, cr) = state.corrector_ends(k);
        let l = state.interval_length(k);
        let (s0, s1) = end_slopes(&state.kappa_tilde[k]);
        let fx = cr - cl;
        v.a_dot[k] = -((s0 + fx) / l) / cl;
        v.b_dot[k] = -((s1 + fx) / l) / cr;
    }
    v
}

/// Rates `c_j'` of the facet curvatures from the endpoint velocities.
fn curvature_rates(state: &SharpState, v: &Velocities) -> Vec<f64> {
    let n = state.n();
    (0..n)
        .map(|j| {
            let left_dot = v.b_dot[(j + n - 1) % n];
            -state.facet_curvature(j) * (v.a_dot[j] - left_dot) / state.facet_length(j)
        })
        .collect()
}

/// Explicit part `Phi_t (kt_x + f_x) / L - f_t` at interior nodes.
fn explicit_terms(state: &SharpState, k: usize, v: &Velocities, c_dot: &[f64]) -> Vec<f64> {
    let n = state.n();
    let kt = &state.kappa_tilde[k];
    let m = kt.len();
    let dx = 1.0 / (m - 1) as f64;
    let l = state.interval_length(k);
    let (cl, cr) = state.corrector_ends(k);
    let fx = cr - cl;
    let (dl, dr) = (c_dot[k], c_dot[(k + 1) % n]);
    let mut out = vec![0.0; m];
    for j in 1..m - 1 {
        let x = j as f64 * dx;
        let phi_t = v.a_dot[k] + (v.b_dot[k] - v.a_dot[k]) * x;
        let kx = (kt[j + 1] - kt[j - 1]) / (2.0 * dx);
        out[j] = phi_t * (kx + fx) / l - ((1.0 - x) * dl + x * dr);
    }
    out
}

/// Right-hand side of the `kappa_tilde` equation on interval `k` (zero at
/// the Dirichlet nodes).
pub fn rhs_kappa_tilde(state: &SharpState, k: usize, merge_len_tol: f64) -> Result<Vec<f64>> {
    let v = endpoint_velocities(state);
    rhs_with_velocities(state, k, &v, merge_len_tol)
}

pub fn rhs_with_velocities(
    state: &SharpState,
    k: usize,
    v: &Velocities,
    merge_len_tol: f64,
) -> Result<Vec<f64>> {
    let l = state.interval_length(k);
    if l < merge_len_tol {
        return Err(FlowError::DegenerateInterval {
            index: k,
            length: l,
        });
    }
    let c_dot = curvature_rates(state, v);
    let mut out = explicit_terms(state, k, v, &c_dot);
    let kt = &state.kappa_tilde[k];
    let m = kt.len();
    let r = ((m - 1) as f64 / l).powi(2);
    for j in 1..m - 1 {
        out[j] += r * (kt[j - 1] - 2.0 * kt[j] + kt[j + 1]);
    }
    Ok(out)
}

/// Result of a compatibility check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compatibility {
    pub ok: bool,
    /// `|u_xx(z) - c|` at the left and right end of every facet.
    pub residuals: Vec<f64>,
}

/// One-sided sixth-order second derivative from eight nodes.
const ONE_SIDED_D2: [f64; 8] = [
    469.0 / 90.0,
    -223.0 / 10.0,
    879.0 / 20.0,
    -949.0 / 18.0,
    41.0,
    -201.0 / 10.0,
    1019.0 / 180.0,
    -7.0 / 10.0,
];

/// Compares the one-sided second derivative of `u0` at every facet end with
/// the crystalline curvature of that facet. `ok` iff every residual is at
/// most `1e-3 max(1, alpha/|F|)`.
pub fn compatibility_check(
    u0: &GridFunction,
    dec: &FacetDecomposition,
    alpha: Alpha,
) -> Result<Compatibility> {
    let grid = u0.grid();
    dec.validate(grid)?;
    if dec.degenerate {
        return Ok(Compatibility {
            ok: true,
            residuals: Vec::new(),
        });
    }
    let n = grid.len();
    let h = grid.spacing();
    let u = u0.values();
    let mut residuals = Vec::with_capacity(2 * dec.n());
    let mut ok = true;
    for f in &dec.facets {
        // node span of the flat run: the stencil anchors at its end nodes
        let c = crystalline_curvature(f.kind, f.edge_count as f64 * h, alpha);
        let first = f.first_edge;
        let last = (f.first_edge + f.edge_count) % n;
        let left: f64 = (0..8)
            .map(|j| ONE_SIDED_D2[j] * u[grid.offset(first, -(j as isize))])
            .sum::<f64>()
            / (h * h);
        let right: f64 = (0..8)
            .map(|j| ONE_SIDED_D2[j] * u[(last + j) % n])
            .sum::<f64>()
            / (h * h);
        let tol = 1e-3 * c.abs().max(1.0);
        for r in [(left - c).abs(), (right - c).abs()] {
            ok &= r <= tol;
            residuals.push(r);
        }
    }
    Ok(Compatibility { ok, residuals })
}

/// Advances every interval by `h` with frozen velocities `v`.
fn advance(state: &SharpState, v: &Velocities, h: f64) -> Result<SharpState> {
    let n = state.n();
    let c_old: Vec<f64> = (0..n).map(|k| state.facet_curvature(k)).collect();
    let c_dot = curvature_rates(state, v);
    let mut next = state.clone();
    for k in 0..n {
        let kt = &state.kappa_tilde[k];
        let m = kt.len();
        let explicit = explicit_terms(state, k, v, &c_dot);
        let l = state.interval_length(k);
        let r = h * ((m - 1) as f64 / l).powi(2);
        let interior = m - 2;
        let mut rhs: Vec<f64> = (1..m - 1).map(|j| kt[j] + h * explicit[j]).collect();
        let factor = Tridiagonal::new(
            &vec![-r; interior],
            &vec![1.0 + 2.0 * r; interior],
            &vec![-r; interior],
        )?;
        factor.solve_in_place(&mut rhs);
        next.kappa_tilde[k][1..m - 1].copy_from_slice(&rhs);
    }
    for k in 0..n {
        next.a[k] += h * v.a_dot[k];
        next.b[k] += h * v.b_dot[k];
    }
    for k in 0..n {
        let fl = next.facet_length(k);
        if !(fl > 0.0) {
            return Err(FlowError::DegenerateFacet {
                index: k,
                length: fl,
            });
        }
    }
    for k in 0..n {
        // trapezoid in the rate: both curvatures are known at this point
        next.heights[k] += 0.5 * h * (c_old[k] + next.facet_curvature(k));
    }
    next.time += h;
    Ok(next)
}

/// Richardson extrapolation of `advance`: `2 (two half steps) - (one step)`,
/// second order in time. The stiff limit of the combined factor is zero.
/// Also returns the gap between the two estimates on endpoints and heights
/// and the end-slope defect removed by the projection.
fn extrapolated(state: &SharpState, v: &Velocities, h: f64) -> Result<(SharpState, f64, f64)> {
    let full = advance(state, v, h)?;
    let half = advance(state, v, 0.5 * h)?;
    let v_half = endpoint_velocities(&half);
    let mut out = advance(&half, &v_half, 0.5 * h)?;
    let mut gap = 0.0f64;
    let mut mix = |x: &mut f64, y: f64, track: bool| {
        if track {
            gap = gap.max((*x - y).abs());
        }
        *x = 2.0 * *x - y;
    };
    for k in 0..out.n() {
        mix(&mut out.a[k], full.a[k], true);
        mix(&mut out.b[k], full.b[k], true);
        mix(&mut out.heights[k], full.heights[k], true);
        for (x, &y) in out.kappa_tilde[k].iter_mut().zip(&full.kappa_tilde[k]) {
            mix(x, y, false);
        }
    }
    out.time = state.time + h;
    out.check_invariants()?;
    let defect = rebuild_profiles(&mut out)?;
    Ok((out, gap, defect))
}

/// Dirichlet Poisson solve `U_xx = L^2 kappa` on the reference nodes.
fn poisson(kappa: &[f64], l: f64, h0: f64, h1: f64) -> Result<Vec<f64>> {
    let m = kappa.len();
    let dx = 1.0 / (m - 1) as f64;
    let interior = m - 2;
    let mut rhs: Vec<f64> = (1..m - 1).map(|j| -(dx * l).powi(2) * kappa[j]).collect();
    rhs[0] += h0;
    rhs[interior - 1] += h1;
    let factor = Tridiagonal::new(
        &vec![-1.0; interior],
        &vec![2.0; interior],
        &vec![-1.0; interior],
    )?;
    factor.solve_in_place(&mut rhs);
    let mut out = Vec::with_capacity(m);
    out.push(h0);
    out.extend_from_slice(&rhs);
    out.push(h1);
    Ok(out)
}

/// Recovers `u` on every interval from `kappa` and the facet heights, then
/// restores `u_y = 0` at both ends by adding the end-localised modes
/// `x (1-x)^3` and `x^3 (1-x)` to `kappa_tilde`. Returns the largest end
/// slope removed.
fn rebuild_profiles(state: &mut SharpState) -> Result<f64> {
    let n = state.n();
    let mut defect = 0.0f64;
    for k in 0..n {
        let m = state.kappa_tilde[k].len();
        let dx = 1.0 / (m - 1) as f64;
        let l = state.interval_length(k);
        let (cl, cr) = state.corrector_ends(k);
        let (h0, h1) = (state.heights[k], state.heights[(k + 1) % n]);
        let xs: Vec<f64> = (0..m).map(|j| j as f64 * dx).collect();
        let kappa: Vec<f64> = xs
            .iter()
            .zip(&state.kappa_tilde[k])
            .map(|(&x, &kt)| kt + (1.0 - x) * cl + x * cr)
            .collect();
        let u0 = poisson(&kappa, l, h0, h1)?;
        let (sa, sb) = end_derivatives(&u0, l);
        defect = defect.max(sa.abs()).max(sb.abs());
        let phi_a: Vec<f64> = xs.iter().map(|&x| x * (1.0 - x).powi(3)).collect();
        let phi_b: Vec<f64> = xs.iter().map(|&x| x.powi(3) * (1.0 - x)).collect();
        let wa = poisson(&phi_a, l, 0.0, 0.0)?;
        let wb = poisson(&phi_b, l, 0.0, 0.0)?;
        let (a11, a21) = end_derivatives(&wa, l);
        let (a12, a22) = end_derivatives(&wb, l);
        let det = a11 * a22 - a12 * a21;
        if det.abs() < f64::MIN_POSITIVE {
            return Err(FlowError::Singular("end-slope projection"));
        }
        let ca = (-sa * a22 + sb * a12) / det;
        let cb = (-sb * a11 + sa * a21) / det;
        let kt = &mut state.kappa_tilde[k];
        let uf = &mut state.u_fields[k];
        for j in 1..m - 1 {
            kt[j] += ca * phi_a[j] + cb * phi_b[j];
        }
        for j in 0..m {
            uf[j] = u0[j] + ca * wa[j] + cb * wb[j];
        }
    }
    Ok(defect)
}

/// Interval that must be merged: too short, or its end heights no longer
/// ordered as the adjacent facet kinds require.
fn collapsing_interval(state: &SharpState, tol: f64) -> Option<(usize, f64)> {
    let n = state.n();
    (0..n)
        .filter_map(|k| {
            let l = state.interval_length(k);
            let drop = state.heights[k] - state.heights[(k + 1) % n];
            let ordered = match state.kinds[k] {
                FacetKind::Max => drop > 0.0,
                FacetKind::Min => drop < 0.0,
            };
            (l < tol || !ordered).then_some((k, l))
        })
        .min_by(|x, y| x.1.total_cmp(&y.1))
}

/// Outcome of a macro step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Advanced(SharpState),
    /// The state at the event time and the event.
    Event(SharpState, Event),
}

/// Advances one `cfg.dt`, splitting into substeps when the explicit terms
/// demand it. Stops early at a merge or speed-cap event.
pub fn step_sharp(state: &SharpState, cfg: &SharpConfig) -> Result<StepOutcome> {
    advance_to(
        state,
        state.time + cfg.dt,
        cfg,
        &mut cfg.dt.clone(),
        &mut 0.0,
    )
}

/// Substeps are chosen by the explicit stability limit and by the
/// extrapolation gap; `hint` carries the accepted size between calls and
/// `defect` the largest end slope removed so far.
fn advance_to(
    state: &SharpState,
    target: f64,
    cfg: &SharpConfig,
    hint: &mut f64,
    defect: &mut f64,
) -> Result<StepOutcome> {
    if state.is_extinct() {
        let mut s = state.clone();
        s.time = target;
        return Ok(StepOutcome::Advanced(s));
    }
    let mut s = state.clone();
    let dx = cfg.dx();
    loop {
        let remaining = target - s.time;
        if remaining <= 1e-14 * target.abs().max(1.0) {
            s.time = target;
            return Ok(StepOutcome::Advanced(s));
        }
        if let Some((k, len)) = collapsing_interval(&s, cfg.merge_len_tol) {
            let ev = Event {
                time: s.time,
                kind: EventKind::Merge,
                indices: vec![k],
                values: vec![len],
            };
            return Ok(StepOutcome::Event(s, ev));
        }
        let v = endpoint_velocities(&s);
        let speed = v.max_speed();
        if !(speed <= cfg.speed_cap) {
            let ev = Event {
                time: s.time,
                kind: EventKind::BlowupGuard,
                indices: Vec::new(),
                values: vec![speed],
            };
            return Ok(StepOutcome::Event(s, ev));
        }
        // Node spacing of the fastest interval, facet lengths and interval
        // lengths bound how far endpoints may move in one substep.
        let mut limit = f64::INFINITY;
        let n = s.n();
        for k in 0..n {
            let l = s.interval_length(k);
            let ends = v.a_dot[k].abs().max(v.b_dot[k].abs());
            if ends > 0.0 {
                limit = limit.min(l * dx / ends);
            }
            let closing = v.a_dot[k] - v.b_dot[k];
            if closing > 0.0 {
                limit = limit.min(0.25 * l / closing);
            }
            let shrink = v.b_dot[(k + n - 1) % n] - v.a_dot[k];
            if shrink > 0.0 {
                limit = limit.min(0.25 * s.facet_length(k) / shrink);
            }
        }
        let allowed = cfg.cfl_safety * limit;
        let mut h = allowed.min(*hint).min(remaining);
        // land exactly on the target instead of leaving a sliver
        if remaining - h < 0.1 * h {
            h = remaining;
        }
        let min_h = 1e-12 * cfg.dt;
        loop {
            match extrapolated(&s, &v, h) {
                Ok((next, gap, d)) if gap <= cfg.step_tol || h <= min_h => {
                    *defect = defect.max(d);
                    let grow = if gap > 0.0 {
                        0.9 * (cfg.step_tol / gap).sqrt()
                    } else {
                        2.0
                    };
                    *hint = h * grow.clamp(0.2, 2.0);
                    s = next;
                    break;
                }
                Ok((_, gap, _)) => h *= (0.9 * (cfg.step_tol / gap).sqrt()).clamp(0.1, 0.5),
                Err(e) if h <= min_h => return Err(e),
                Err(_) => h *= 0.25,
            }
        }
    }
}

/// Removes the collapsed interval `event.indices[0]` together with its two
/// facets. The union `F_k u I_k u F_{k+1}` is flattened at the level that
/// keeps `int u` fixed, and the neighbouring intervals are clipped at that
/// level so that the merged stretch stays monotone. `kappa` on the merged
/// interval is the minimal selection of that profile: unchanged on the
/// untouched parts and zero on the flattened ones. With two facets the
/// state becomes constant. The result is checked by re-detecting facets on
/// a grid of `cfg.n_grid` points.
pub fn handle_merge(state: &SharpState, event: &Event, cfg: &SharpConfig) -> Result<SharpState> {
    if event.kind != EventKind::Merge {
        return Err(FlowError::InvalidParameter(format!(
            "handle_merge needs a merge event, got {:?}",
            event.kind
        )));
    }
    let n = state.n();
    let k = *event
        .indices
        .first()
        .ok_or_else(|| FlowError::InvalidParameter("merge event without interval index".into()))?;
    if k >= n {
        return Err(FlowError::InvalidParameter(format!(
            "interval {k} out of range"
        )));
    }
    if n == 2 {
        return Ok(SharpState::extinct(state.mass(), state.alpha, state.time));
    }
    let m = state.m();
    let prev = (k + n - 1) % n;
    let f1 = k;
    let f2 = (k + 1) % n;

    // Shifts keep y increasing across the wrap.
    let shift_k = if state.a[k] < state.b[prev] { 1.0 } else { 0.0 };
    let next = f2;
    let shift_next = shift_k + if state.a[next] < state.b[k] { 1.0 } else { 0.0 };
    let flat_lo = state.b[prev];
    let flat_hi = state.a[next] + shift_next;
    let dir = match state.kinds[f1] {
        FacetKind::Max => 1.0,
        FacetKind::Min => -1.0,
    };
    let total_lo = state.a[prev];
    let total_hi = state.b[next] + shift_next;
    let new_len = total_hi - total_lo;
    let sample = |y: f64| -> f64 {
        if y <= state.b[prev] {
            let s = (y - state.a[prev]) / state.interval_length(prev);
            state.u_at(prev, s)
        } else if y <= state.a[k] + shift_k {
            state.heights[f1]
        } else if y < state.b[k] + shift_k {
            let s = (y - state.a[k] - shift_k) / state.interval_length(k);
            state.u_at(k, s)
        } else if y <= state.a[next] + shift_next {
            state.heights[f2]
        } else {
            let s = (y - state.a[next] - shift_next) / state.interval_length(next);
            state.u_at(next, s)
        }
    };
    let original: Vec<(f64, f64)> = (0..m)
        .map(|i| {
            let y = total_lo + new_len * i as f64 / (m - 1) as f64;
            (y, sample(y))
        })
        .collect();
    let flattened = |level: f64| -> Vec<f64> {
        original
            .iter()
            .map(|&(y, u)| {
                if y >= flat_lo && y <= flat_hi {
                    level
                } else if (y < flat_lo) == (dir > 0.0) {
                    u.min(level)
                } else {
                    u.max(level)
                }
            })
            .collect()
    };
    // Same quadrature as `mass`, so the level found here conserves it.
    let trapezoid = |v: &[f64]| -> f64 {
        new_len * (v.iter().sum::<f64>() - 0.5 * (v[0] + v[m - 1])) / (m - 1) as f64
    };
    let interval_mass = |j: usize| {
        let uf = &state.u_fields[j];
        state.interval_length(j) * (uf.iter().sum::<f64>() - 0.5 * (uf[0] + uf[m - 1]))
            / (m - 1) as f64
    };
    let target_mass = interval_mass(prev)
        + interval_mass(k)
        + interval_mass(next)
        + state.heights[f1] * state.facet_length(f1)
        + state.heights[f2] * state.facet_length(f2);
    let h_hi = state.heights[f1].max(state.heights[f2]);
    let h_lo = state.heights[f1].min(state.heights[f2]);
    // widen the bracket: the resampled profile need not reach the heights
    let (mut lo, mut hi) = (h_lo - (h_hi - h_lo) - 1e-12, h_hi + (h_hi - h_lo) + 1e-12);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if trapezoid(&flattened(mid)) < target_mass {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * h_hi.abs().max(1.0) {
            break;
        }
    }
    let level = 0.5 * (lo + hi);

    // Fields on m nodes of [a_prev, b_next]; kappa is the discrete laplacian
    // of the flattened profile, so the kinks left by clipping are kept.
    let c_left = state.facet_curvature(prev);
    let c_right = state.facet_curvature((next + 1) % n);
    let uf = flattened(level);
    let scale = ((m - 1) as f64 / new_len).powi(2);
    let mut kt = vec![0.0; m];
    for i in 1..m - 1 {
        let s = i as f64 / (m - 1) as f64;
        let lap = (uf[i - 1] - 2.0 * uf[i] + uf[i + 1]) * scale;
        kt[i] = lap - ((1.0 - s) * c_left + s * c_right);
    }

    // Reassemble in cyclic order starting at facet `next + 1`.
    let keep: Vec<usize> = (0..n - 2).map(|j| (next + 1 + j) % n).collect();
    let mut out = SharpState {
        time: state.time,
        alpha: state.alpha,
        a: Vec::with_capacity(n - 2),
        b: Vec::with_capacity(n - 2),
        heights: Vec::with_capacity(n - 2),
        kinds: Vec::with_capacity(n - 2),
        kappa_tilde: Vec::with_capacity(n - 2),
        u_fields: Vec::with_capacity(n - 2),
        constant: None,
    };
    let mut cursor = f64::NEG_INFINITY;
    for (j, &f) in keep.iter().enumerate() {
        let merged = j == n - 3;
        let (mut a, mut b) = if merged {
            (state.a[prev], state.a[prev] + new_len)
        } else {
            (state.a[f], state.b[f])
        };
        if j == 0 {
            cursor = a - state.facet_length(f);
        }
        while a <= cursor {
            a += 1.0;
            b += 1.0;
        }
        while a > cursor + 1.0 {
            a -= 1.0;
            b -= 1.0;
        }
        out.a.push(a);
        out.b.push(b);
        out.heights.push(state.heights[f]);
        out.kinds.push(state.kinds[f]);
        if merged {
            out.kappa_tilde.push(kt.clone());
            out.u_fields.push(uf.clone());
        } else {
            out.kappa_tilde.push(state.kappa_tilde[f].clone());
            out.u_fields.push(state.u_fields[f].clone());
        }
        cursor = b;
    }
    out.check_invariants()?;

    let grid = TorusGrid::new(cfg.n_grid)?;
    let before = n;
    let u = out.to_grid(grid)?;
    let after = detect_facets(&u, state.alpha, 1e-9 * u.oscillation().max(1.0))
        .map(|r| r.decomposition.n())
        .unwrap_or(0);
    if after >= before || out.n() >= before {
        return Err(FlowError::MergeInconsistency { before, after });
    }
    Ok(out)
}

/// A sharp run: the grid-sampled trajectory and the states behind each
/// snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct SharpRun {
    pub trajectory: Trajectory,
    pub states: Vec<SharpState>,
}

fn snapshot(state: &SharpState, grid: TorusGrid) -> Result<Snapshot> {
    Ok(Snapshot {
        time: state.time,
        u: state.to_grid(grid)?,
        kappa: state.kappa_to_grid(grid)?,
        sigma: None,
        facets: Some(state.facet_records()),
    })
}

/// Runs to `cfg.t_end`; snapshots land on multiples of `cfg.dt`. Merges are
/// handled in place and logged; a two-facet merge logs extinction too. A
/// speed-cap event ends the run early. `int u` is held fixed by a uniform
/// shift after every step. Stats: `mass_correction` (total shift applied)
/// and `max_neumann_defect` (largest end slope removed by the projection in
/// one substep).
pub fn solve_sharp(initial: &SharpState, cfg: &SharpConfig) -> Result<SharpRun> {
    cfg.validate()?;
    initial.check_invariants()?;
    if initial.m() != 0 && initial.m() != cfg.m {
        return Err(FlowError::InvalidParameter(format!(
            "state has {} nodes per interval, config asks for {}",
            initial.m(),
            cfg.m
        )));
    }
    let grid = TorusGrid::new(cfg.n_grid)?;
    let mut traj = Trajectory::new(SolverKind::Sharp, config_hash(cfg), cfg.dt);
    let mut states = vec![initial.clone()];
    traj.push(snapshot(initial, grid)?);
    let mass0 = initial.mass();
    let mut correction = 0.0f64;
    let steps = (cfg.t_end / cfg.dt).round() as usize;
    let mut state = initial.clone();
    let t0 = initial.time;
    let mut hint = cfg.dt;
    let mut defect = 0.0f64;
    'outer: for step in 1..=steps {
        let target = t0 + step as f64 * cfg.dt;
        loop {
            match advance_to(&state, target, cfg, &mut hint, &mut defect)? {
                StepOutcome::Advanced(s) => {
                    state = s;
                    break;
                }
                StepOutcome::Event(s, ev) => match ev.kind {
                    EventKind::Merge => {
                        let merged = handle_merge(&s, &ev, cfg)?;
                        let time = ev.time;
                        traj.events.push(ev);
                        if merged.is_extinct() {
                            traj.events.push(Event {
                                time,
                                kind: EventKind::Extinction,
                                indices: Vec::new(),
                                values: vec![merged.constant.unwrap_or(0.0)],
                            });
                        }
                        state = merged;
                    }
                    _ => {
                        traj.events.push(ev);
                        break 'outer;
                    }
                },
            }
        }
        // The flow commutes with adding constants, so the quadrature drift
        // of the moving intervals is removed by a uniform shift.
        if let Some(c) = state.constant.as_mut() {
            *c = mass0;
        } else {
            let shift = mass0 - state.mass();
            correction += shift.abs();
            state.shift(shift);
        }
        if step % cfg.snapshot_every == 0 || step == steps {
            traj.push(snapshot(&state, grid)?);
            states.push(state.clone());
        }
    }
    traj.stats.insert("mass_correction".into(), correction);
    traj.stats.insert("max_neumann_defect".into(), defect);
    Ok(SharpRun {
        trajectory: traj,
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datum::FacetSpec;
    use std::f64::consts::PI;

    fn alpha(a: f64) -> Alpha {
        Alpha::new(a).unwrap()
    }

    fn two_facet(m: usize) -> SharpState {
        SharpState::from_profile(&FacetProfile::two_facet(alpha(1.0), 0.25, 1.0).unwrap(), m)
            .unwrap()
    }

    #[test]
    fn corrector_examples() {
        let a = alpha(1.0);
        let left = (FacetKind::Max, 0.25);
        let right = (FacetKind::Min, 0.25);
        assert_eq!(corrector(left, right, a, 0.0).unwrap(), -4.0);
        assert_eq!(corrector(left, right, a, 1.0).unwrap(), 4.0);
        assert_eq!(corrector(left, right, a, 0.5).unwrap(), 0.0);
        let a2 = alpha(2.0);
        assert_eq!(
            corrector((FacetKind::Min, 0.5), (FacetKind::Max, 0.25), a2, 0.0).unwrap(),
            4.0
        );
        assert_eq!(
            corrector((FacetKind::Min, 0.5), (FacetKind::Max, 0.25), a2, 1.0).unwrap(),
            -8.0
        );
        assert!(corrector(left, (FacetKind::Max, 0.25), a, 0.5).is_err());
        assert!(matches!(
            corrector((FacetKind::Max, 0.0), right, a, 0.5),
            Err(FlowError::DegenerateFacet { .. })
        ));
    }

    #[test]
    fn initial_state_is_compatible() {
        let s = two_facet(128);
        s.check_invariants().unwrap();
        assert_eq!(s.kinds, vec![FacetKind::Max, FacetKind::Min]);
        for r in s.neumann_residuals() {
            assert!(r < 1e-4, "{r}");
        }
        let grid = TorusGrid::new(512).unwrap();
        let u = s.to_grid(grid).unwrap();
        let p = FacetProfile::two_facet(alpha(1.0), 0.25, 1.0).unwrap();
        let exact = p.sample(grid).unwrap();
        assert!(u.max_abs_diff(&exact) < 1e-5, "{}", u.max_abs_diff(&exact));
    }

    #[test]
    fn frozen_rhs_vanishes() {
        let mut s = two_facet(32);
        for kt in &mut s.kappa_tilde {
            kt.iter_mut().for_each(|v| *v = 0.0);
        }
        let v = Velocities::zero(2);
        for k in 0..2 {
            let r = rhs_with_velocities(&s, k, &v, 1e-3).unwrap();
            assert!(r.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn rhs_reports_short_interval() {
        let s = two_facet(32);
        assert!(matches!(
            rhs_kappa_tilde(&s, 0, 0.3),
            Err(FlowError::DegenerateInterval { .. })
        ));
    }

    /// `kt = t sin(pi x)` on a state with prescribed endpoint velocities:
    /// the discrete right-hand side converges at second order to the
    /// symbolic one.
    #[test]
    fn manufactured_rhs_converges_at_second_order() {
        let t = 0.1;
        let v = Velocities {
            a_dot: vec![0.3, -0.2],
            b_dot: vec![-0.1, 0.4],
        };
        let mut errors = Vec::new();
        for m in [17, 33, 65, 129] {
            let mut s = two_facet(m);
            for kt in &mut s.kappa_tilde {
                for (j, val) in kt.iter_mut().enumerate() {
                    let x = j as f64 / (m - 1) as f64;
                    *val = if j == 0 || j == m - 1 {
                        0.0
                    } else {
                        t * (PI * x).sin()
                    };
                }
            }
            let k = 0;
            let l = s.interval_length(k);
            let (cl, cr) = (s.facet_curvature(0), s.facet_curvature(1));
            // facet-length rates and curvature rates, by hand
            let f0_rate = v.a_dot[0] - v.b_dot[1];
            let f1_rate = v.a_dot[1] - v.b_dot[0];
            let dl = -cl * f0_rate / s.facet_length(0);
            let dr = -cr * f1_rate / s.facet_length(1);
            let rhs = rhs_with_velocities(&s, k, &v, 1e-3).unwrap();
            let mut err = 0.0f64;
            for j in 1..m - 1 {
                let x = j as f64 / (m - 1) as f64;
                let kt_x = t * PI * (PI * x).cos();
                let kt_xx = -t * PI * PI * (PI * x).sin();
                let phi_t = v.a_dot[0] + (v.b_dot[0] - v.a_dot[0]) * x;
                let exact =
                    kt_xx / (l * l) + phi_t * (kt_x + cr - cl) / l - ((1.0 - x) * dl + x * dr);
                err = err.max((rhs[j] - exact).abs());
            }
            errors.push(err);
        }
        for w in errors.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order > 1.8, "{errors:?}");
        }
    }

    #[test]
    fn frozen_heat_decay() {
        // |I| = 1/2, endpoints frozen, kt0 = sin(pi x)
        let m = 128;
        let p = FacetProfile::two_facet(alpha(1.0), 0.25, 1.0).unwrap();
        let mut s = SharpState::from_profile(&p, m).unwrap();
        // stretch interval 0 to length 1/2 by shrinking facets is not
        // needed: set the endpoints directly
        s.a = vec![0.25, 0.875];
        s.b = vec![0.75, 0.9];
        assert!((s.interval_length(0) - 0.5).abs() < 1e-15);
        for (j, v) in s.kappa_tilde[0].iter_mut().enumerate() {
            let x = j as f64 / (m - 1) as f64;
            *v = if j == 0 || j == m - 1 {
                0.0
            } else {
                (PI * x).sin()
            };
        }
        let dt = 1e-5;
        let zero = Velocities::zero(2);
        for _ in 0..1000 {
            s = advance(&s, &zero, dt).unwrap();
        }
        let mid = s.kappa_tilde[0][(m - 1) / 2 + 1];
        let x = ((m - 1) / 2 + 1) as f64 / (m - 1) as f64;
        let expected = (-PI * PI * 0.01 / 0.25).exp() * (PI * x).sin();
        assert!((mid / expected - 1.0).abs() < 0.01, "{mid} vs {expected}");
    }

    #[test]
    fn endpoint_velocity_examples() {
        let mut s = two_facet(33);
        // kt = beta x (1 - x) gives kt_x(0) = beta exactly
        let k = 0;
        let l = s.interval_length(k);
        let (cl, cr) = s.corrector_ends(k);
        // kt_x = -f_x at both ends, so kappa_y vanishes there
        let fx = cr - cl;
        for (j, v) in s.kappa_tilde[k].iter_mut().enumerate() {
            let x = j as f64 / 32.0;
            *v = fx * (-x + 3.0 * x * x - 2.0 * x * x * x);
        }
        let v = endpoint_velocities(&s);
        // the one-sided stencil is exact up to quadratics; the cubic leaves
        // 4 f_x dx^2 / (L c) = 1/32 here
        let tol = 1.01 * 4.0 * fx.abs() / (32.0f64 * 32.0) / (l * cl.abs());
        assert!(v.a_dot[0].abs() < tol, "{:?}", v);
        assert!(v.b_dot[0].abs() < tol, "{:?}", v);

        // min facet of length 1/2 on the left, kappa_y = 0.8 at the start
        let p = FacetProfile::new(
            alpha(1.0),
            vec![
                FacetSpec {
                    length: 0.5,
                    height: -0.5,
                },
                FacetSpec {
                    length: 0.1,
                    height: 0.5,
                },
            ],
            vec![0.2, 0.2],
            0.0,
        )
        .unwrap();
        let mut s = SharpState::from_profile(&p, 33).unwrap();
        let l = s.interval_length(0);
        let (cl, cr) = s.corrector_ends(0);
        assert!((cl - 2.0).abs() < 1e-12);
        let beta = 0.8 * l - (cr - cl);
        for (j, v) in s.kappa_tilde[0].iter_mut().enumerate() {
            let x = j as f64 / 32.0;
            *v = beta * x * (1.0 - x);
        }
        let v = endpoint_velocities(&s);
        assert!((v.a_dot[0].abs() - 0.4).abs() < 1e-12);
        // kappa increases into the interval from the min facet value: the
        // facet end recedes to the left, so the min facet shrinks
        assert!(v.a_dot[0] < 0.0);
    }

    #[test]
    fn odd_symmetry_is_preserved() {
        let s = two_facet(64);
        let cfg = SharpConfig {
            n_grid: 256,
            ..SharpConfig::new(alpha(1.0), 64, 2e-4, 0.02)
        };
        let run = solve_sharp(&s, &cfg).unwrap();
        for st in &run.states {
            let v = endpoint_velocities(st);
            for k in 0..2 {
                assert!((v.a_dot[k] + v.b_dot[k]).abs() < 1e-8, "{:?}", v);
            }
        }
    }

    #[test]
    fn heights_move_at_the_crystalline_rate() {
        let s = two_facet(64);
        let cfg = SharpConfig::new(alpha(1.0), 64, 1e-4, 0.005);
        let run = solve_sharp(&s, &cfg).unwrap();
        let st = &run.states;
        for w in st.windows(2).take(50) {
            let rate = (w[1].heights[0] - w[0].heights[0]) / cfg.dt;
            let target = -0.5 * (1.0 / w[0].facet_length(0) + 1.0 / w[1].facet_length(0));
            assert!((rate / target - 1.0).abs() < 0.02);
        }
        // heights approach each other monotonically
        for w in st.windows(2) {
            assert!(w[1].heights[0] - w[1].heights[1] < w[0].heights[0] - w[0].heights[1]);
        }
    }

    #[test]
    fn one_sided_stencil_is_exact_for_septics() {
        let h = 0.01;
        for p in 0..8 {
            let d2: f64 = (0..8)
                .map(|j| ONE_SIDED_D2[j] * (j as f64 * h).powi(p))
                .sum::<f64>()
                / (h * h);
            let exact = if p == 2 { 2.0 } else { 0.0 };
            assert!((d2 - exact).abs() < 1e-7, "{p}: {d2}");
        }
    }

    #[test]
    fn compatibility_examples() {
        let grid = TorusGrid::new(512).unwrap();
        let p = FacetProfile::two_facet(alpha(1.0), 0.25, 1.0).unwrap();
        let u = p.sample(grid).unwrap();
        let dec = detect_facets(&u, alpha(1.0), 1e-6).unwrap().decomposition;
        let c = compatibility_check(&u, &dec, alpha(1.0)).unwrap();
        assert!(c.ok, "{:?}", c.residuals);
        assert!(c.residuals.iter().all(|&r| r <= 1e-3), "{:?}", c.residuals);

        // trapezoid: flats joined by straight ramps
        let trap = GridFunction::from_fn(grid, |x| {
            if x <= 0.25 {
                1.0
            } else if x < 0.5 {
                1.0 - (x - 0.25) / 0.25
            } else if x <= 0.75 {
                0.0
            } else {
                (x - 0.75) / 0.25
            }
        })
        .unwrap();
        let r = detect_facets(&trap, alpha(1.0), 1e-6).unwrap();
        let c = compatibility_check(&trap, &r.decomposition, alpha(1.0)).unwrap();
        assert!(!c.ok);
        for (i, res) in c.residuals.iter().enumerate() {
            let f = &r.decomposition.facets[i / 2];
            let span = f.edge_count as f64 * grid.spacing();
            assert!((res - 1.0 / span).abs() < 1e-6, "{res}");
        }

        let flat = GridFunction::constant(grid, 1.0);
        let r = detect_facets(&flat, alpha(1.0), 1e-6).unwrap();
        let c = compatibility_check(&flat, &r.decomposition, alpha(1.0)).unwrap();
        assert!(c.ok && c.residuals.is_empty());
    }

    fn four_facets() -> FacetProfile {
        FacetProfile::new(
            alpha(1.0),
            vec![
                FacetSpec {
                    length: 0.2,
                    height: 0.3,
                },
                FacetSpec {
                    length: 0.15,
                    height: 0.0,
                },
                FacetSpec {
                    length: 0.1,
                    height: 0.04,
                },
                FacetSpec {
                    length: 0.1,
                    height: 0.02,
                },
            ],
            vec![0.15, 0.1, 0.1, 0.1],
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn merge_reduces_facet_count_and_keeps_structure() {
        let p = four_facets();
        let s = SharpState::from_profile(&p, 128).unwrap();
        let cfg = SharpConfig::new(alpha(1.0), 128, 1e-4, 0.05);
        let run = solve_sharp(&s, &cfg).unwrap();
        let merges: Vec<&Event> = run
            .trajectory
            .events
            .iter()
            .filter(|e| e.kind == EventKind::Merge)
            .collect();
        assert!(!merges.is_empty());
        let merge_times: Vec<f64> = merges.iter().map(|e| e.time).collect();
        let mut last_n = 4;
        for st in &run.states {
            let n = if st.is_extinct() { 0 } else { st.n() };
            assert!(n <= last_n);
            last_n = n;
            st.check_invariants().unwrap();
            if st.is_extinct() {
                continue;
            }
            let u = st.to_grid(TorusGrid::new(512).unwrap()).unwrap();
            let r = detect_facets(&u, alpha(1.0), 1e-9).unwrap();
            // the flattened stretch keeps a rounding-sized dip for a short
            // while after a merge; elsewhere the grid sees the same facets
            let settling = merge_times
                .iter()
                .any(|&t| st.time >= t && st.time < t + 2e-3);
            if !settling {
                assert!(r.is_regular(), "t = {}", st.time);
                assert_eq!(r.decomposition.n(), n, "t = {}", st.time);
            }
        }
        assert!(run.trajectory.is_time_ordered());
        assert!(
            run.trajectory.stats["mass_correction"] < 1e-3,
            "{:?}",
            run.trajectory.stats
        );
        assert!((run.states.last().unwrap().mass() - p.mean()).abs() < 1e-5);
    }

    #[test]
    fn two_facet_run_ends_extinct() {
        let p = FacetProfile::two_facet(alpha(1.0), 0.25, 0.2).unwrap();
        let s = SharpState::from_profile(&p, 32).unwrap();
        let cfg = SharpConfig {
            n_grid: 128,
            ..SharpConfig::new(alpha(1.0), 32, 1e-4, 0.05)
        };
        let run = solve_sharp(&s, &cfg).unwrap();
        let kinds: Vec<EventKind> = run.trajectory.events.iter().map(|e| e.kind).collect();
        assert_eq!(kinds, vec![EventKind::Merge, EventKind::Extinction]);
        let last = run.states.last().unwrap();
        assert!(last.is_extinct());
        assert!((last.constant.unwrap() - p.mean()).abs() < 1e-3);
    }

    #[test]
    fn extinct_state_is_stationary() {
        let s = SharpState::extinct(0.3, alpha(1.0), 0.0);
        let cfg = SharpConfig::new(alpha(1.0), 16, 1e-3, 1.0);
        match step_sharp(&s, &cfg).unwrap() {
            StepOutcome::Advanced(t) => {
                assert_eq!(t.constant, Some(0.3));
                assert!((t.time - 1e-3).abs() < 1e-15);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn from_grid_matches_profile() {
        let p = FacetProfile::two_facet(alpha(1.0), 0.25, 1.0).unwrap();
        let grid = TorusGrid::new(1024).unwrap();
        let s = SharpState::from_grid(&p.sample(grid).unwrap(), alpha(1.0), 64).unwrap();
        let exact = SharpState::from_profile(&p, 64).unwrap();
        let ends = |st: &SharpState| -> Vec<f64> { st.a.iter().chain(&st.b).copied().collect() };
        for x in ends(&s) {
            let d = ends(&exact)
                .iter()
                .map(|y| (wrap_unit(x - y + 0.5) - 0.5).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(d <= grid.spacing(), "{x}");
        }
    }
}
