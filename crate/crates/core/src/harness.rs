//! Property checks on solver output: extinction time, the energy decay
//! identity, the facet speed law, facet-count monotonicity, the facet-length
//! lower bound, structural invariants and cross-solver distances.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::facets::{detect_facets, FacetKind};
use crate::grid::{forward_diff_slice, wrap_unit, Alpha, GridFunction};
use crate::sharp::SharpState;
use crate::trajectory::{EventKind, FacetRecord, SolverKind, Trajectory};

/// One named check: `measured` compared against `bound` with `tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
    pub bound: f64,
    pub tolerance: f64,
}

impl Check {
    /// Passes iff `measured <= bound + tolerance`.
    pub fn at_most(name: impl Into<String>, measured: f64, bound: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            pass: measured <= bound + tolerance,
            measured,
            bound,
            tolerance,
        }
    }

    /// Passes iff `measured < bound` strictly.
    pub fn below(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            pass: measured < bound,
            measured,
            bound,
            tolerance: 0.0,
        }
    }

    /// Passes iff `|measured - target| <= tolerance`.
    pub fn near(name: impl Into<String>, measured: f64, target: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            pass: (measured - target).abs() <= tolerance,
            measured,
            bound: target,
            tolerance,
        }
    }

    /// Passes iff `lo <= measured <= hi`; stored as target `(lo+hi)/2`.
    pub fn within(name: impl Into<String>, measured: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            pass: (lo..=hi).contains(&measured),
            measured,
            bound: 0.5 * (lo + hi),
            tolerance: 0.5 * (hi - lo),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub checks: Vec<Check>,
}

impl PropertyReport {
    pub fn push(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn extend(&mut self, other: PropertyReport) {
        self.checks.extend(other.checks);
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// First snapshot time from which `||u - mean||_inf <= tol` holds through the
/// end of the run; `+inf` if the last snapshot is not within `tol`.
pub fn extinction_time(traj: &Trajectory, tol: f64) -> f64 {
    let mut t_star = f64::INFINITY;
    for s in traj.snapshots.iter().rev() {
        if deviation(&s.u) <= tol {
            t_star = s.time;
        } else {
            break;
        }
    }
    t_star
}

fn deviation(u: &GridFunction) -> f64 {
    let m = u.mean();
    u.values().iter().fold(0.0, |acc, v| acc.max((v - m).abs()))
}

/// `sum h f^2`.
fn sq_norm(values: &[f64], h: f64) -> f64 {
    values.iter().map(|v| h * v * v).sum()
}

/// Largest residual of the energy identity
/// `(1/2) d/dt ||u||^2 + ||u_x||^2 + (alpha/2) ||u_x||_1 = 0`, with the time
/// derivative a backward difference between consecutive snapshots and the
/// integrals taken at the later one. Only steps ending at `t >= t_from` count.
/// The mean is removed first.
pub fn decay_identity_residual(traj: &Trajectory, alpha: Alpha, t_from: f64) -> f64 {
    let centred = |u: &GridFunction| -> Vec<f64> {
        let m = u.mean();
        u.values().iter().map(|v| v - m).collect()
    };
    let mut worst = 0.0f64;
    for w in traj.snapshots.windows(2) {
        if w[1].time < t_from {
            continue;
        }
        let h = w[1].u.grid().spacing();
        let (u, v) = (centred(&w[0].u), centred(&w[1].u));
        let dt = w[1].time - w[0].time;
        let d = forward_diff_slice(&v, h);
        let dissipation: f64 = d.iter().map(|p| h * (p * p + alpha.half() * p.abs())).sum();
        let rate = 0.5 * (sq_norm(&v, h) - sq_norm(&u, h)) / dt;
        worst = worst.max((rate + dissipation).abs());
    }
    worst
}

/// Facets of a snapshot: the stored records when the solver provides them,
/// detection with `flat_tol` otherwise.
pub fn snapshot_facets(
    traj: &Trajectory,
    index: usize,
    alpha: Alpha,
    flat_tol: f64,
) -> Result<Vec<FacetRecord>> {
    let s = &traj.snapshots[index];
    if let Some(f) = &s.facets {
        return Ok(f.clone());
    }
    let report = detect_facets(&s.u, alpha, flat_tol)?;
    if report.decomposition.degenerate {
        return Ok(Vec::new());
    }
    Ok(report
        .decomposition
        .facets
        .iter()
        .map(|f| FacetRecord {
            left: f.left,
            right: f.right,
            height: f.height,
            kind: f.kind,
            length: f.length,
        })
        .collect())
}

fn centre(f: &FacetRecord) -> f64 {
    wrap_unit(f.left + 0.5 * f.length)
}

fn circular_distance(x: f64, y: f64) -> f64 {
    let d = (x - y).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Outcome of a facet speed comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetSpeed {
    /// Largest `|rate - target| / |target|` over all tracked facets and pairs.
    pub max_rel_error: f64,
    /// Number of (facet, snapshot pair) samples.
    pub samples: usize,
    /// End of the window actually used (first event or facet-count change).
    pub window_end: f64,
    /// `(t_mid, facet kind, measured rate, target rate)` per sample.
    pub rates: Vec<(f64, FacetKind, f64, f64)>,
}

/// Relative tolerance of the facet speed law: tight for the front tracker,
/// loose for grid solvers, whose facet ends are only known to within `h`.
pub fn facet_speed_tolerance(solver: SolverKind) -> f64 {
    match solver {
        SolverKind::Sharp => 0.02,
        _ => 0.10,
    }
}

/// Compares finite-difference facet height rates with `-+alpha/|F|` (the mean
/// of `1/|F|` at both ends of each pair) between snapshots `stride` apart,
/// over `[t_from, first event)`. For grid solvers a change of the detected
/// facet count counts as an event. Facets are matched between snapshots by
/// kind and nearest centre.
pub fn facet_speed(
    traj: &Trajectory,
    alpha: Alpha,
    flat_tol: f64,
    t_from: f64,
    stride: usize,
) -> Result<FacetSpeed> {
    let stride = stride.max(1);
    let first_event = traj
        .events
        .iter()
        .map(|e| e.time)
        .fold(f64::INFINITY, f64::min);
    let start = traj
        .snapshots
        .iter()
        .position(|s| s.time >= t_from - 1e-12)
        .ok_or_else(|| FlowError::InvalidParameter(format!("no snapshot after t = {t_from}")))?;
    let mut out = FacetSpeed {
        max_rel_error: 0.0,
        samples: 0,
        window_end: first_event,
        rates: Vec::new(),
    };
    let mut prev = snapshot_facets(traj, start, alpha, flat_tol)?;
    let n0 = prev.len();
    if n0 == 0 {
        return Ok(out);
    }
    let mut i = start;
    while i + stride < traj.len() {
        let j = i + stride;
        let t1 = traj.snapshots[j].time;
        if t1 >= first_event {
            break;
        }
        let next = snapshot_facets(traj, j, alpha, flat_tol)?;
        if next.len() != n0 {
            out.window_end = out.window_end.min(t1);
            break;
        }
        let t0 = traj.snapshots[i].time;
        for f in &prev {
            let g = next
                .iter()
                .filter(|g| g.kind == f.kind)
                .min_by(|a, b| {
                    circular_distance(centre(a), centre(f))
                        .total_cmp(&circular_distance(centre(b), centre(f)))
                })
                .expect("same count, same kinds");
            let rate = (g.height - f.height) / (t1 - t0);
            let target =
                f.kind.curvature_sign() * alpha.get() * 0.5 * (1.0 / f.length + 1.0 / g.length);
            let err = (rate - target).abs() / target.abs();
            out.max_rel_error = out.max_rel_error.max(err);
            out.samples += 1;
            out.rates.push((0.5 * (t0 + t1), f.kind, rate, target));
        }
        prev = next;
        i = j;
    }
    Ok(out)
}

/// [`facet_speed`] as a report entry with the solver's tolerance.
pub fn facet_speed_check(
    traj: &Trajectory,
    alpha: Alpha,
    flat_tol: f64,
    t_from: f64,
    stride: usize,
) -> Result<Check> {
    let fs = facet_speed(traj, alpha, flat_tol, t_from, stride)?;
    let tol = facet_speed_tolerance(traj.solver);
    let mut c = Check::at_most(
        format!("facet_speed[{}]", traj.solver.name()),
        fs.max_rel_error,
        0.0,
        tol,
    );
    c.pass &= fs.samples > 0;
    Ok(c)
}

/// `(t, n)` per snapshot, `n` the detected facet count (1 for a constant).
pub fn facet_count_series(
    traj: &Trajectory,
    alpha: Alpha,
    flat_tol: f64,
) -> Result<Vec<(f64, usize)>> {
    traj.snapshots
        .iter()
        .map(|s| {
            let n = match &s.facets {
                Some(f) if f.is_empty() => 1,
                Some(f) => f.len(),
                None => {
                    let r = detect_facets(&s.u, alpha, flat_tol)?;
                    if r.decomposition.degenerate {
                        1
                    } else {
                        r.decomposition.n()
                    }
                }
            };
            Ok((s.time, n))
        })
        .collect()
}

/// Number of increases of the count after the first `skip` entries.
pub fn count_increases(series: &[(f64, usize)], skip: usize) -> usize {
    series
        .iter()
        .skip(skip)
        .collect::<Vec<_>>()
        .windows(2)
        .filter(|w| w[1].1 > w[0].1)
        .count()
}

/// Result of auditing `|F^k| >= n alpha^2 / E^2 - slack` over a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundAudit {
    pub snapshots: usize,
    pub violations: usize,
    /// Largest `n alpha^2/E^2 - |F|` seen (negative when every facet clears
    /// the bound with room).
    pub worst_deficit: f64,
    pub slack: f64,
}

/// Audits every snapshot with `t >= t_from` using the detector's `4h` slack.
pub fn facet_length_bound_audit(
    traj: &Trajectory,
    alpha: Alpha,
    flat_tol: f64,
    t_from: f64,
) -> Result<BoundAudit> {
    let mut audit = BoundAudit {
        snapshots: 0,
        violations: 0,
        worst_deficit: f64::NEG_INFINITY,
        slack: 0.0,
    };
    for s in traj.snapshots.iter().filter(|s| s.time >= t_from - 1e-12) {
        let r = detect_facets(&s.u, alpha, flat_tol)?;
        audit.snapshots += 1;
        audit.slack = crate::facets::bound_slack(s.u.grid());
        let dec = &r.decomposition;
        if dec.degenerate || dec.n() == 0 || r.e <= 0.0 {
            continue;
        }
        let needed = dec.n() as f64 * alpha.get().powi(2) / (r.e * r.e);
        for f in &dec.facets {
            audit.worst_deficit = audit.worst_deficit.max(needed - f.length);
        }
        audit.violations += r.violations.len();
    }
    Ok(audit)
}

/// Counts of structural invariant failures over a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StructuralAudit {
    pub snapshots: usize,
    /// Decompositions failing alternation or cover.
    pub decomposition_failures: usize,
    /// Edges whose certificate leaves its branch of the graph, or nodes where
    /// `kappa h != sigma_i - sigma_{i-1}` (variational runs only).
    pub certificate_failures: usize,
    /// `max |mean(u(t)) - mean(u(0))|` (state mass for the front tracker).
    pub mean_drift: f64,
    /// Nonzero `kappa_tilde` end values (front tracker only).
    pub dirichlet_failures: usize,
}

impl StructuralAudit {
    pub fn passes(&self, mean_tol: f64) -> bool {
        self.decomposition_failures == 0
            && self.certificate_failures == 0
            && self.dirichlet_failures == 0
            && self.mean_drift <= mean_tol
    }
}

/// Audits a grid-solver run: decomposition validity for `t >= t_from`,
/// certificates wherever a snapshot carries one, and mean drift throughout.
/// `cert_tol` is the branch tolerance, in units of sigma.
pub fn structural_audit(
    traj: &Trajectory,
    alpha: Alpha,
    flat_tol: f64,
    cert_tol: f64,
    t_from: f64,
) -> Result<StructuralAudit> {
    let mut audit = StructuralAudit::default();
    let Some(first) = traj.snapshots.first() else {
        return Ok(audit);
    };
    let mean0 = first.u.mean();
    let a2 = alpha.half();
    for s in &traj.snapshots {
        audit.snapshots += 1;
        audit.mean_drift = audit.mean_drift.max((s.u.mean() - mean0).abs());
        if s.time >= t_from - 1e-12 {
            let r = detect_facets(&s.u, alpha, flat_tol)?;
            if r.decomposition.validate(s.u.grid()).is_err() {
                audit.decomposition_failures += 1;
            }
        }
        if let Some(sigma) = &s.sigma {
            let h = s.u.grid().spacing();
            let d = forward_diff_slice(s.u.values(), h);
            let n = d.len();
            let k = s.kappa.values();
            for e in 0..n {
                let on_branch = if d[e].abs() > cert_tol {
                    (sigma[e] - d[e] - a2 * d[e].signum()).abs() <= cert_tol
                } else {
                    sigma[e].abs() <= a2 + cert_tol
                };
                let stationary = (k[e] * h - (sigma[e] - sigma[(e + n - 1) % n])).abs() <= cert_tol;
                if !on_branch || !stationary {
                    audit.certificate_failures += 1;
                }
            }
        }
    }
    Ok(audit)
}

/// Audits front-tracker states: alternation and cover via the state's own
/// invariant check, exact zeros of `kappa_tilde` at both reference ends, and
/// drift of the state mass.
pub fn sharp_structural_audit(states: &[SharpState]) -> StructuralAudit {
    let mut audit = StructuralAudit::default();
    let Some(first) = states.first() else {
        return audit;
    };
    let mass0 = first.mass();
    for s in states {
        audit.snapshots += 1;
        if s.check_invariants().is_err() {
            audit.decomposition_failures += 1;
        }
        audit.mean_drift = audit.mean_drift.max((s.mass() - mass0).abs());
        for kt in &s.kappa_tilde {
            if kt.first().copied() != Some(0.0) || kt.last().copied() != Some(0.0) {
                audit.dirichlet_failures += 1;
            }
        }
    }
    audit
}

/// Distances between two runs at one checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distance {
    pub a: SolverKind,
    pub b: SolverKind,
    pub time: f64,
    pub linf: f64,
    pub l2: f64,
}

/// Pairwise distances at each checkpoint, using the snapshot nearest in time.
/// Runs must share a grid.
pub fn compare_trajectories(runs: &[&Trajectory], checkpoints: &[f64]) -> Result<Vec<Distance>> {
    let mut out = Vec::new();
    for &t in checkpoints {
        for (i, a) in runs.iter().enumerate() {
            for b in &runs[i + 1..] {
                let (Some(sa), Some(sb)) = (a.at_time(t), b.at_time(t)) else {
                    continue;
                };
                if sa.u.grid() != sb.u.grid() {
                    return Err(FlowError::LengthMismatch {
                        expected: sa.u.len(),
                        got: sb.u.len(),
                    });
                }
                out.push(Distance {
                    a: a.solver,
                    b: b.solver,
                    time: t,
                    linf: sa.u.max_abs_diff(&sb.u),
                    l2: sa.u.l2_diff(&sb.u),
                });
            }
        }
    }
    Ok(out)
}

/// One level of a refinement study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub level: usize,
    pub n_grid: usize,
    pub m: usize,
    pub dt: f64,
    pub epsilon: f64,
    pub time: f64,
    pub pair: String,
    pub linf: f64,
    pub l2: f64,
}

pub fn refinement_csv(rows: &[RefinementRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "level,n_grid,m,dt,epsilon,time,pair,linf,l2")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e}",
            r.level, r.n_grid, r.m, r.dt, r.epsilon, r.time, r.pair, r.linf, r.l2
        )?;
    }
    Ok(())
}

/// Checks for a refinement sequence of distances: strictly decreasing, and
/// the last one at most `final_tol`.
pub fn refinement_checks(name: &str, distances: &[f64], final_tol: f64) -> Vec<Check> {
    let worst_ratio = distances
        .windows(2)
        .map(|w| w[1] / w[0])
        .fold(0.0f64, f64::max);
    vec![
        Check::below(format!("{name}: max successive ratio"), worst_ratio, 1.0),
        Check::at_most(
            format!("{name}: final level"),
            distances.last().copied().unwrap_or(f64::INFINITY),
            final_tol,
            0.0,
        ),
    ]
}

/// Time of the first event of `kind`, if any.
pub fn first_event_time(traj: &Trajectory, kind: EventKind) -> Option<f64> {
    traj.events.iter().find(|e| e.kind == kind).map(|e| e.time)
}

/// Time of the first snapshot whose detected facet count is below the count
/// at `t_from`.
pub fn count_drop_time(series: &[(f64, usize)], t_from: f64) -> Option<f64> {
    let mut it = series.iter().skip_while(|(t, _)| *t < t_from - 1e-12);
    let &(_, n0) = it.next()?;
    it.find(|(_, n)| *n < n0).map(|(t, _)| *t)
}

/// Thread count for scenario sweeps: `FACETFLOW_THREADS` when set to a
/// positive integer, rayon's default otherwise.
pub fn thread_count() -> Option<usize> {
    std::env::var("FACETFLOW_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs `f` on every scenario concurrently and returns the results sorted by
/// scenario id, so the assembled output does not depend on scheduling.
pub fn run_scenarios<I, T, E, F>(ids: Vec<I>, f: F) -> std::result::Result<Vec<(I, T)>, E>
where
    I: Ord + Clone + Send + Sync,
    T: Send,
    E: From<FlowError> + Send,
    F: Fn(&I) -> std::result::Result<T, E> + Send + Sync,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| FlowError::InvalidParameter(format!("thread pool: {e}")))?;
    let mut out: Vec<(I, T)> = pool.install(|| {
        ids.par_iter()
            .map(|id| f(id).map(|t| (id.clone(), t)))
            .collect::<std::result::Result<Vec<_>, E>>()
    })?;
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datum::FacetProfile;
    use crate::grid::TorusGrid;
    use crate::sharp::{solve_sharp, SharpConfig};
    use crate::trajectory::{Event, Snapshot};
    use crate::variational::{solve_variational, VariationalConfig};

    fn alpha(a: f64) -> Alpha {
        Alpha::new(a).unwrap()
    }

    fn constant_run(solver: SolverKind) -> Trajectory {
        let grid = TorusGrid::new(32).unwrap();
        let mut t = Trajectory::new(solver, 0, 0.1);
        for k in 0..4 {
            t.push(Snapshot {
                time: 0.1 * k as f64,
                u: GridFunction::constant(grid, 3.0),
                kappa: GridFunction::zeros(grid),
                sigma: None,
                facets: None,
            });
        }
        t
    }

    fn sharp_two_facet(a: f64) -> Trajectory {
        let p = FacetProfile::two_facet(alpha(a), 0.25, 1.0).unwrap();
        let s = SharpState::from_profile(&p, 64).unwrap();
        let mut cfg = SharpConfig::new(alpha(a), 64, 2e-4, 0.01);
        cfg.n_grid = 256;
        solve_sharp(&s, &cfg).unwrap().trajectory
    }

    #[test]
    fn constant_run_is_trivial() {
        let t = constant_run(SolverKind::Variational);
        assert_eq!(extinction_time(&t, 1e-12), 0.0);
        assert_eq!(decay_identity_residual(&t, alpha(1.0), 0.0), 0.0);
        let series = facet_count_series(&t, alpha(1.0), 1e-9).unwrap();
        assert!(series.iter().all(|&(_, n)| n == 1));
        let other = constant_run(SolverKind::Regularized);
        for d in compare_trajectories(&[&t, &other], &[0.0, 0.3]).unwrap() {
            assert_eq!((d.linf, d.l2), (0.0, 0.0));
        }
    }

    #[test]
    fn extinction_time_requires_persistence() {
        let grid = TorusGrid::new(8).unwrap();
        let mut t = Trajectory::new(SolverKind::Variational, 0, 1.0);
        for (k, amp) in [1.0, 0.0, 1.0, 0.0, 0.0].into_iter().enumerate() {
            t.push(Snapshot {
                time: k as f64,
                u: GridFunction::from_fn(grid, |x| amp * x).unwrap(),
                kappa: GridFunction::zeros(grid),
                sigma: None,
                facets: None,
            });
        }
        assert_eq!(extinction_time(&t, 1e-9), 3.0);
        t.snapshots.truncate(3);
        assert_eq!(extinction_time(&t, 1e-9), f64::INFINITY);
    }

    #[test]
    fn single_facet_rate_targets() {
        // one max facet of length 1/4 at alpha = 1 descends at rate 4
        let grid = TorusGrid::new(16).unwrap();
        let mut t = Trajectory::new(SolverKind::Sharp, 0, 0.01);
        for k in 0..3 {
            let h = 1.0 - 0.04 * k as f64;
            t.push(Snapshot {
                time: 0.01 * k as f64,
                u: GridFunction::zeros(grid),
                kappa: GridFunction::zeros(grid),
                sigma: None,
                facets: Some(vec![FacetRecord {
                    left: 0.0,
                    right: 0.25,
                    height: h,
                    kind: FacetKind::Max,
                    length: 0.25,
                }]),
            });
        }
        let fs = facet_speed(&t, alpha(1.0), 1e-9, 0.0, 1).unwrap();
        assert_eq!(fs.samples, 2);
        assert!(fs.max_rel_error < 1e-12);
        assert!((fs.rates[0].3 + 4.0).abs() < 1e-12);
        // the same heights are half the alpha = 2 target
        let fs = facet_speed(&t, alpha(2.0), 1e-9, 0.0, 1).unwrap();
        assert!((fs.rates[0].3 + 8.0).abs() < 1e-12);
        assert!((fs.max_rel_error - 0.5).abs() < 1e-12);
    }

    #[test]
    fn facet_speed_scales_with_alpha() {
        let rate = |a: f64| {
            let t = sharp_two_facet(a);
            let fs = facet_speed(&t, alpha(a), 1e-9, 0.001, 1).unwrap();
            assert!(fs.max_rel_error < 0.02, "{}", fs.max_rel_error);
            let (_, kind, r, _) = fs.rates[0];
            assert_eq!(kind, FacetKind::Max);
            r
        };
        let ratio = rate(2.0) / rate(1.0);
        // facets also grow faster under the larger alpha
        assert!((1.7..=2.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn growing_facets_slow_down() {
        // gentle connectors: the flanks descend slower than the facet, which
        // therefore widens
        let p = FacetProfile::two_facet(alpha(1.0), 0.25, 0.05).unwrap();
        let s = SharpState::from_profile(&p, 64).unwrap();
        let mut cfg = SharpConfig::new(alpha(1.0), 64, 2e-4, 0.004);
        cfg.n_grid = 256;
        let t = solve_sharp(&s, &cfg).unwrap().trajectory;
        let fs = facet_speed(&t, alpha(1.0), 1e-9, 0.0, 1).unwrap();
        let max_rates: Vec<f64> = fs
            .rates
            .iter()
            .filter(|r| r.1 == FacetKind::Max)
            .map(|r| r.2.abs())
            .collect();
        let lengths: Vec<f64> = t
            .snapshots
            .iter()
            .map(|s| s.facets.as_ref().unwrap()[0].length)
            .collect();
        assert!(max_rates.len() > 10);
        assert!(lengths.windows(2).all(|w| w[1] > w[0]));
        assert!(max_rates.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn window_stops_at_first_event() {
        let mut t = sharp_two_facet(1.0);
        t.events.push(Event {
            time: 0.005,
            kind: EventKind::Merge,
            indices: vec![0],
            values: vec![],
        });
        let fs = facet_speed(&t, alpha(1.0), 1e-9, 0.001, 1).unwrap();
        assert_eq!(fs.window_end, 0.005);
        assert!(fs.rates.iter().all(|r| r.0 < 0.005));
    }

    #[test]
    fn count_increases_ignore_formation_window() {
        let s: Vec<(f64, usize)> = [0, 4, 2, 3, 3, 2, 2]
            .iter()
            .enumerate()
            .map(|(i, &n)| (i as f64, n))
            .collect();
        assert_eq!(count_increases(&s, 0), 2);
        assert_eq!(count_increases(&s, 2), 1);
        assert_eq!(count_increases(&s, 3), 0);
        assert_eq!(count_drop_time(&s, 3.0), Some(5.0));
        assert_eq!(count_drop_time(&s, 5.0), None);
    }

    #[test]
    fn variational_sine_run_is_structurally_sound() {
        let grid = TorusGrid::new(128).unwrap();
        let u0 = GridFunction::from_fn(grid, |x| (2.0 * std::f64::consts::PI * x).sin()).unwrap();
        let cfg = VariationalConfig::new(alpha(1.0), 1e-3, 0.03);
        let t = solve_variational(&u0, &cfg).unwrap();
        let audit = structural_audit(&t, alpha(1.0), cfg.flat_tol(), cfg.flat_tol(), 0.01).unwrap();
        assert!(audit.passes(1e-12), "{audit:?}");
        let b = facet_length_bound_audit(&t, alpha(1.0), cfg.flat_tol(), 0.01).unwrap();
        assert_eq!(b.violations, 0);
        assert!(b.snapshots > 0);
    }

    #[test]
    fn corrupted_certificate_is_caught() {
        let grid = TorusGrid::new(64).unwrap();
        let u0 = GridFunction::from_fn(grid, |x| (2.0 * std::f64::consts::PI * x).sin()).unwrap();
        let cfg = VariationalConfig::new(alpha(1.0), 1e-3, 0.005);
        let mut t = solve_variational(&u0, &cfg).unwrap();
        t.snapshots[2].sigma.as_mut().unwrap()[5] += 0.1;
        let audit = structural_audit(&t, alpha(1.0), cfg.flat_tol(), cfg.flat_tol(), 0.0).unwrap();
        assert!(audit.certificate_failures > 0);
    }

    #[test]
    fn sharp_states_keep_dirichlet_zeros() {
        let p = FacetProfile::two_facet(alpha(1.0), 0.25, 1.0).unwrap();
        let s = SharpState::from_profile(&p, 32).unwrap();
        let run = solve_sharp(&s, &SharpConfig::new(alpha(1.0), 32, 1e-3, 0.01)).unwrap();
        let audit = sharp_structural_audit(&run.states);
        assert!(audit.passes(1e-12), "{audit:?}");
        let mut broken = run.states.clone();
        broken[1].kappa_tilde[0][0] = 1e-3;
        assert_eq!(sharp_structural_audit(&broken).dirichlet_failures, 1);
    }

    #[test]
    fn refinement_checks_require_strict_decrease() {
        let ok = refinement_checks("x", &[4e-3, 1e-3, 2e-4], 1e-2);
        assert!(ok.iter().all(|c| c.pass));
        let flat = refinement_checks("x", &[4e-3, 4e-3, 2e-4], 1e-2);
        assert!(!flat[0].pass && flat[1].pass);
        let big = refinement_checks("x", &[4e-1, 1e-1, 2e-2], 1e-2);
        assert!(big[0].pass && !big[1].pass);
    }

    #[test]
    fn refinement_csv_has_one_row_per_level() {
        let row = |level| RefinementRow {
            level,
            n_grid: 128 << level,
            m: 32 << level,
            dt: 1e-3,
            epsilon: 0.0,
            time: 0.02,
            pair: "sharp-variational".into(),
            linf: 0.1,
            l2: 0.05,
        };
        let mut buf = Vec::new();
        refinement_csv(&[row(0), row(1)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(2).unwrap().starts_with("1,256,64,"));
    }

    #[test]
    fn scenarios_come_back_sorted() {
        let out = run_scenarios(vec![5u32, 1, 3, 2], |&i| Ok::<_, FlowError>(i * 10)).unwrap();
        assert_eq!(out, vec![(1, 10), (2, 20), (3, 30), (5, 50)]);
        let err = run_scenarios(vec![1u32, 2], |&i| {
            if i == 2 {
                Err(FlowError::NoFacets)
            } else {
                Ok(i)
            }
        });
        assert!(err.is_err());
    }

    #[test]
    fn report_json_round_trips() {
        let mut r = PropertyReport::default();
        r.push(Check::at_most("a", 1.0, 2.0, 0.0));
        r.push(Check::within("b", 3.0, 1.5, 2.5));
        r.push(Check::near("c", 1.0, 1.05, 0.1));
        assert!(!r.all_pass());
        assert_eq!(r.failures().count(), 1);
        let back: PropertyReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
