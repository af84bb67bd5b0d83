//! Minimizing-movement stepper: each step is the resolvent
//! `v = argmin ||v - u||^2 / (2 tau) + J(v)` of the discrete energy
//! `J(v) = sum_e h [ d_e^2 / 2 + (alpha/2) |d_e| ]`, `d = D+ v`.
//!
//! The inner solver works on the dual variable `s` (one per edge, boxed in
//! `[-alpha/2, alpha/2]`). For fixed `s` the primal minimizer solves
//! `(I - tau D- D+) v = u + tau D- s`, and `D+ v` is the dual gradient, whose
//! Lipschitz constant is below one; accelerated projected ascent therefore runs
//! with unit step. Once the flat/sloped pattern settles, an active-set solve
//! on clusters of nodes joined by flat edges returns the exact minimizer.

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::facets::{FacetDecomposition, FacetKind};
use crate::grid::{forward_diff_slice, laplacian, Alpha, GridFunction, TorusGrid};
use crate::trajectory::{config_hash, Snapshot, SolverKind, Trajectory};
use crate::tridiag::CyclicTridiagonal;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariationalConfig {
    pub alpha: Alpha,
    pub tau: f64,
    pub kkt_tol: f64,
    pub max_inner_iter: usize,
    pub t_end: f64,
    #[serde(default = "one")]
    pub snapshot_every: usize,
}

fn one() -> usize {
    1
}

impl VariationalConfig {
    pub fn new(alpha: Alpha, tau: f64, t_end: f64) -> Self {
        Self {
            alpha,
            tau,
            kkt_tol: 1e-10,
            max_inner_iter: 50_000,
            t_end,
            snapshot_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FlowError::InvalidParameter(msg));
        if !(self.tau > 0.0) {
            return bad(format!("tau > 0 required, got {}", self.tau));
        }
        if !(self.kkt_tol > 0.0) {
            return bad(format!("kkt_tol > 0 required, got {}", self.kkt_tol));
        }
        if self.max_inner_iter == 0 {
            return bad("max_inner_iter >= 1 required".into());
        }
        if !(self.t_end >= 0.0) {
            return bad(format!("t_end >= 0 required, got {}", self.t_end));
        }
        if self.snapshot_every == 0 {
            return bad("snapshot_every >= 1 required".into());
        }
        Ok(())
    }

    /// Threshold below which `|d_e|` counts as zero in certificates.
    pub fn flat_tol(&self) -> f64 {
        (10.0 * self.kkt_tol).max(1e-8)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxResult {
    pub v: GridFunction,
    /// `sigma_e = d_e + s_e`, an element of `L(d_e)` on every edge.
    pub sigma: Vec<f64>,
    /// Max of the box-projection residual and the scaled stationarity residual.
    pub gap: f64,
    pub iterations: usize,
    /// Whether the active-set solve produced the returned point.
    pub polished: bool,
    s: Vec<f64>,
}

pub fn prox_step(u: &GridFunction, cfg: &VariationalConfig) -> Result<ProxResult> {
    cfg.validate()?;
    prox_from(u, cfg, None, 0.0)
}

/// Resolvent of the primal operator `v -> v - tau D- D+ v`.
struct Resolvent {
    factor: CyclicTridiagonal,
    tau: f64,
    h: f64,
}

impl Resolvent {
    fn new(n: usize, h: f64, tau: f64) -> Result<Self> {
        let r = tau / (h * h);
        let factor = CyclicTridiagonal::new(&vec![-r; n], &vec![1.0 + 2.0 * r; n], &vec![-r; n])?;
        Ok(Self { factor, tau, h })
    }

    /// Primal point for dual `s`.
    fn primal(&self, u: &[f64], s: &[f64]) -> Vec<f64> {
        let n = u.len();
        let mut rhs: Vec<f64> = (0..n)
            .map(|i| u[i] + self.tau * (s[i] - s[(i + n - 1) % n]) / self.h)
            .collect();
        self.factor.solve_in_place(&mut rhs);
        rhs
    }
}

#[inline]
fn clamp(x: f64, a2: f64) -> f64 {
    x.clamp(-a2, a2)
}

fn kkt_residual(s: &[f64], d: &[f64], a2: f64) -> f64 {
    s.iter()
        .zip(d)
        .map(|(&s, &d)| (s - clamp(s + d, a2)).abs())
        .fold(0.0, f64::max)
}

/// `max_i |v_i - u_i - tau D- sigma|_i * h / tau`, in units of sigma.
fn stationarity_residual(u: &[f64], v: &[f64], sigma: &[f64], h: f64, tau: f64) -> f64 {
    let n = u.len();
    (0..n)
        .map(|i| ((v[i] - u[i]) * h / tau - (sigma[i] - sigma[(i + n - 1) % n])).abs())
        .fold(0.0, f64::max)
}

fn prox_from(
    u: &GridFunction,
    cfg: &VariationalConfig,
    warm: Option<&[f64]>,
    time: f64,
) -> Result<ProxResult> {
    let grid = u.grid();
    let n = grid.len();
    let h = grid.spacing();
    let a2 = cfg.alpha.half();
    let uv = u.values();

    let d0 = forward_diff_slice(uv, h);
    if d0.iter().all(|&d| d == 0.0) {
        return Ok(ProxResult {
            v: u.clone(),
            sigma: vec![0.0; n],
            gap: 0.0,
            iterations: 0,
            polished: true,
            s: vec![0.0; n],
        });
    }

    let res = Resolvent::new(n, h, cfg.tau)?;
    let mut s: Vec<f64> = match warm {
        Some(w) if w.len() == n => w.iter().map(|&x| clamp(x, a2)).collect(),
        _ => d0.iter().map(|&d| a2 * d.signum()).collect(),
    };
    let mut y = s.clone();
    let mut momentum = 1.0f64;
    let mut last_residual = f64::INFINITY;

    const CHECK_EVERY: usize = 10;
    for it in 0..cfg.max_inner_iter {
        if it % CHECK_EVERY == 0 {
            let v = res.primal(uv, &s);
            let d = forward_diff_slice(&v, h);
            last_residual = kkt_residual(&s, &d, a2);
            if let Some(p) = polish(uv, &s, &d, a2, h, cfg.tau)? {
                if p.gap <= cfg.kkt_tol {
                    return finish(grid, p, it);
                }
            }
            if last_residual <= cfg.kkt_tol {
                let sigma: Vec<f64> = d.iter().zip(&s).map(|(d, s)| d + s).collect();
                return Ok(ProxResult {
                    v: GridFunction::new(grid, v)?,
                    sigma,
                    gap: last_residual,
                    iterations: it,
                    polished: false,
                    s,
                });
            }
        }
        let v = res.primal(uv, &y);
        let d = forward_diff_slice(&v, h);
        let next: Vec<f64> = y.iter().zip(&d).map(|(&y, &d)| clamp(y + d, a2)).collect();
        // Adaptive restart when the step turns against the momentum.
        let against: f64 = (0..n).map(|i| (y[i] - next[i]) * (next[i] - s[i])).sum();
        if against > 0.0 {
            momentum = 1.0;
        }
        let m_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / m_next;
        y = (0..n).map(|i| next[i] + beta * (next[i] - s[i])).collect();
        s = next;
        momentum = m_next;
    }
    Err(FlowError::InnerNonConvergence {
        time,
        iterations: cfg.max_inner_iter,
        residual: last_residual,
    })
}

struct Polished {
    v: Vec<f64>,
    sigma: Vec<f64>,
    s: Vec<f64>,
    gap: f64,
}

fn finish(grid: TorusGrid, p: Polished, iterations: usize) -> Result<ProxResult> {
    Ok(ProxResult {
        v: GridFunction::new(grid, p.v)?,
        sigma: p.sigma,
        gap: p.gap,
        iterations,
        polished: true,
        s: p.s,
    })
}

/// Exact minimizer for the flat/sloped edge pattern read off `(s, d)`: edges
/// where `|s + d| <= alpha/2` are held flat, the rest keep the sign of
/// `s + d`. Returns `None` when the pattern is degenerate.
fn polish(u: &[f64], s: &[f64], d: &[f64], a2: f64, h: f64, tau: f64) -> Result<Option<Polished>> {
    let n = u.len();
    let sloped: Vec<Option<f64>> = (0..n)
        .map(|e| {
            let z = s[e] + d[e];
            (z.abs() > a2).then(|| z.signum())
        })
        .collect();
    let Some(start) = sloped.iter().position(Option::is_some) else {
        // All edges flat: the minimizer is the mean.
        let mean = u.iter().sum::<f64>() / n as f64;
        let v = vec![mean; n];
        let mut sigma = vec![0.0; n];
        for i in 1..n {
            sigma[i] = sigma[i - 1] + (mean - u[i]) * h / tau;
        }
        // The cumulative sum leaves a free constant; centre the range.
        let (lo, hi) = sigma
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            });
        let shift = 0.5 * (lo + hi);
        sigma.iter_mut().for_each(|x| *x -= shift);
        let zeros = vec![0.0; n];
        let gap =
            kkt_residual(&sigma, &zeros, a2).max(stationarity_residual(u, &v, &sigma, h, tau));
        return Ok(Some(Polished {
            v,
            s: sigma.clone(),
            sigma,
            gap,
        }));
    };

    // Clusters: maximal node runs joined by flat edges, in cyclic order
    // starting right after the sloped edge `start`. The sloped edge closing
    // cluster c is `closing[c]`.
    let mut cluster_of = vec![0usize; n];
    let mut closing = Vec::new();
    let mut sizes = Vec::new();
    let mut sums = Vec::new();
    let mut size = 0usize;
    let mut sum = 0.0;
    for j in 0..n {
        let node = (start + 1 + j) % n;
        cluster_of[node] = closing.len();
        size += 1;
        sum += u[node];
        if sloped[node].is_some() {
            closing.push(node);
            sizes.push(size as f64);
            sums.push(sum);
            size = 0;
            sum = 0.0;
        }
    }
    let k = closing.len();
    if k < 2 {
        // A single sloped edge cannot close up around the torus.
        return Ok(None);
    }
    let sign: Vec<f64> = closing.iter().map(|&e| sloped[e].unwrap()).collect();
    let r = h * h / tau;
    let diag: Vec<f64> = sizes.iter().map(|m| m * r + 2.0).collect();
    let rhs: Vec<f64> = (0..k)
        .map(|c| r * sums[c] + h * a2 * (sign[c] - sign[(c + k - 1) % k]))
        .collect();
    let w = if k == 2 {
        let det = diag[0] * diag[1] - 4.0;
        if det <= 0.0 {
            return Ok(None);
        }
        vec![
            (diag[1] * rhs[0] + 2.0 * rhs[1]) / det,
            (2.0 * rhs[0] + diag[0] * rhs[1]) / det,
        ]
    } else {
        CyclicTridiagonal::new(&vec![-1.0; k], &diag, &vec![-1.0; k])?.solve(&rhs)
    };
    let v: Vec<f64> = (0..n).map(|i| w[cluster_of[i]]).collect();
    let dv = forward_diff_slice(&v, h);

    // sigma on sloped edges from the graph; on flat edges by integrating the
    // stationarity condition across each cluster.
    let mut sigma = vec![0.0; n];
    for (c, &e) in closing.iter().enumerate() {
        sigma[e] = dv[e] + a2 * sign[c];
    }
    for (c, &e) in closing.iter().enumerate() {
        let mut prev = sigma[closing[(c + k - 1) % k]];
        let mut node = (closing[(c + k - 1) % k] + 1) % n;
        while node != e {
            prev += (v[node] - u[node]) * h / tau;
            sigma[node] = prev;
            node = (node + 1) % n;
        }
    }
    let s_new: Vec<f64> = (0..n).map(|e| sigma[e] - dv[e]).collect();
    let gap = kkt_residual(&s_new, &dv, a2).max(stationarity_residual(u, &v, &sigma, h, tau));
    Ok(Some(Polished {
        v,
        sigma,
        s: s_new,
        gap,
    }))
}

/// Runs the minimizing movement to `t_end`; snapshots carry `v`, `sigma` and
/// `kappa = (v - u)/tau`. Stats: `max_gap`, `max_inner_iterations`,
/// `unpolished_steps`.
pub fn solve_variational(u0: &GridFunction, cfg: &VariationalConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let grid = u0.grid();
    let mut traj = Trajectory::new(SolverKind::Variational, config_hash(cfg), cfg.tau);
    traj.push(Snapshot {
        time: 0.0,
        u: u0.clone(),
        kappa: GridFunction::zeros(grid),
        sigma: None,
        facets: None,
    });
    let steps = (cfg.t_end / cfg.tau).round() as usize;
    let mut u = u0.clone();
    let mut warm: Option<Vec<f64>> = None;
    let mut max_gap = 0.0f64;
    let mut max_iter = 0usize;
    let mut unpolished = 0usize;
    for k in 1..=steps {
        let t = k as f64 * cfg.tau;
        let step = prox_from(&u, cfg, warm.as_deref(), t)?;
        max_gap = max_gap.max(step.gap);
        max_iter = max_iter.max(step.iterations);
        unpolished += usize::from(!step.polished);
        let kappa: Vec<f64> = step
            .v
            .values()
            .iter()
            .zip(u.values())
            .map(|(a, b)| (a - b) / cfg.tau)
            .collect();
        u = step.v;
        warm = Some(step.s);
        if k % cfg.snapshot_every == 0 || k == steps {
            traj.push(Snapshot {
                time: t,
                u: u.clone(),
                kappa: GridFunction::new(grid, kappa)?,
                sigma: Some(step.sigma),
                facets: None,
            });
        }
    }
    traj.stats.insert("max_gap".into(), max_gap);
    traj.stats
        .insert("max_inner_iterations".into(), max_iter as f64);
    traj.stats
        .insert("unpolished_steps".into(), unpolished as f64);
    Ok(traj)
}

/// Minimal selection `kappa^0`: the discrete laplacian on interval nodes and
/// `-+alpha/|F|` on every node of a max/min facet, endpoints included. A
/// constant profile gets zero.
pub fn minimal_selection(
    u: &GridFunction,
    dec: &FacetDecomposition,
    alpha: Alpha,
) -> Result<GridFunction> {
    let grid = u.grid();
    dec.validate(grid)?;
    if dec.degenerate {
        return Ok(GridFunction::zeros(grid));
    }
    let mut kappa = laplacian(u).into_values();
    for f in &dec.facets {
        let value = match f.kind {
            FacetKind::Max => -alpha.get() / f.length,
            FacetKind::Min => alpha.get() / f.length,
        };
        for i in f.nodes(grid) {
            kappa[i] = value;
        }
    }
    GridFunction::new(grid, kappa)
}
