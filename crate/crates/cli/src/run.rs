//! Subcommand bodies: build the datum, run solvers, assemble reports, write
//! files.

use std::f64::consts::SQRT_2;
use std::path::{Path, PathBuf};

use facetflow::datum::{make_datum, DatumDescriptor};
use facetflow::facets::{default_flat_tol, detect_facets};
use facetflow::grid::norms;
use facetflow::harness::{
    compare_trajectories, count_increases, extinction_time, facet_count_series,
    facet_length_bound_audit, facet_speed_check, refinement_csv, run_scenarios,
    sharp_structural_audit, structural_audit, Check, PropertyReport, RefinementRow,
};
use facetflow::regularized::solve_regularized;
use facetflow::sharp::{compatibility_check, solve_sharp, SharpState};
use facetflow::trajectory::{SolverKind, Trajectory};
use facetflow::variational::solve_variational;
use facetflow::GridFunction;

use crate::config::{SimConfig, SolverChoice};
use crate::error::CliError;
use crate::output;

/// Mean drift allowed by the conservation check.
pub const MEAN_TOL: f64 = 1e-8;
/// Snapshots excluded from structural checks while facets form.
pub const FORMATION_STEPS: usize = 10;

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, mut cfg: SimConfig) -> Result<SimConfig, CliError> {
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn load_config(path: &Path) -> Result<SimConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.display(), e))?;
    crate::config::parse_config(&text)
}

pub fn solvers(choice: SolverChoice) -> Vec<SolverKind> {
    match choice {
        SolverChoice::Regularized => vec![SolverKind::Regularized],
        SolverChoice::Variational => vec![SolverKind::Variational],
        SolverChoice::Sharp => vec![SolverKind::Sharp],
        SolverChoice::All => vec![
            SolverKind::Regularized,
            SolverKind::Variational,
            SolverKind::Sharp,
        ],
    }
}

pub fn initial_datum(cfg: &SimConfig) -> Result<GridFunction, CliError> {
    if let DatumDescriptor::FromFile { path } = &cfg.initial {
        std::fs::metadata(path).map_err(|e| CliError::io(path.display(), e))?;
    }
    Ok(make_datum(
        &cfg.initial,
        cfg.grid()?,
        cfg.alpha()?,
        cfg.seed,
    )?)
}

/// Zero-slope threshold used to read facets off a grid solution.
pub fn flat_tol(cfg: &SimConfig, solver: SolverKind) -> Result<f64, CliError> {
    if let Some(f) = cfg.tolerances.flat {
        return Ok(f);
    }
    Ok(match solver {
        SolverKind::Variational => cfg.variational()?.flat_tol(),
        // smoothing leaves slopes of order sqrt(eps) on facets
        SolverKind::Regularized => 10.0 * cfg.epsilon.sqrt(),
        SolverKind::Sharp => 1e-9,
    })
}

/// Initial front-tracker state: the analytic profile for the compatible
/// kinds, otherwise the sampled datum if it passes the compatibility check.
pub fn sharp_initial(cfg: &SimConfig) -> Result<SharpState, CliError> {
    let alpha = cfg.alpha()?;
    if let Some(p) = cfg.initial.facet_profile(alpha) {
        let p = p.map_err(|e| CliError::Validation(format!("initial: {e}")))?;
        return Ok(SharpState::from_profile(&p, cfg.m_ref)?);
    }
    let u0 = initial_datum(cfg)?;
    let tol = cfg.tolerances.flat.unwrap_or_else(|| default_flat_tol(&u0));
    let report = detect_facets(&u0, alpha, tol)?;
    let compatible = !report.decomposition.degenerate
        && report.is_regular()
        && compatibility_check(&u0, &report.decomposition, alpha)?.ok;
    if !compatible {
        return Err(CliError::Validation(format!(
            "the sharp solver needs compatible facet data; initial kind \"{}\" is not",
            cfg.initial.name()
        )));
    }
    Ok(SharpState::from_grid(&u0, alpha, cfg.m_ref)?)
}

/// A finished run; `states` only for the front tracker.
pub struct RunOutput {
    pub trajectory: Trajectory,
    pub states: Option<Vec<SharpState>>,
}

pub fn run_solver(cfg: &SimConfig, solver: SolverKind) -> Result<RunOutput, CliError> {
    Ok(match solver {
        SolverKind::Regularized => RunOutput {
            trajectory: solve_regularized(&initial_datum(cfg)?, &cfg.regularized()?)?,
            states: None,
        },
        SolverKind::Variational => RunOutput {
            trajectory: solve_variational(&initial_datum(cfg)?, &cfg.variational()?)?,
            states: None,
        },
        SolverKind::Sharp => {
            let run = solve_sharp(&sharp_initial(cfg)?, &cfg.sharp()?)?;
            RunOutput {
                trajectory: run.trajectory,
                states: Some(run.states),
            }
        }
    })
}

/// Property checks on one run, names prefixed by the solver.
pub fn property_report(cfg: &SimConfig, run: &RunOutput) -> Result<PropertyReport, CliError> {
    let traj = &run.trajectory;
    let solver = traj.solver;
    let name = |s: &str| format!("{}.{s}", solver.name());
    let alpha = cfg.alpha()?;
    let tol = flat_tol(cfg, solver)?;
    let t_from = FORMATION_STEPS as f64 * traj.dt * cfg.snapshot_every as f64;
    let mut report = PropertyReport::default();

    let audit = match &run.states {
        Some(states) => sharp_structural_audit(states),
        None => structural_audit(traj, alpha, tol, tol, t_from)?,
    };
    report.push(Check::at_most(
        name("mean_conservation"),
        audit.mean_drift,
        0.0,
        MEAN_TOL,
    ));
    report.push(Check::at_most(
        name("decomposition_failures"),
        audit.decomposition_failures as f64,
        0.0,
        0.0,
    ));
    if solver == SolverKind::Variational {
        report.push(Check::at_most(
            name("certificate_failures"),
            audit.certificate_failures as f64,
            0.0,
            0.0,
        ));
    }
    if solver == SolverKind::Sharp {
        report.push(Check::at_most(
            name("dirichlet_failures"),
            audit.dirichlet_failures as f64,
            0.0,
            0.0,
        ));
    }

    let series = facet_count_series(traj, alpha, tol)?;
    report.push(Check::at_most(
        name("facet_count_increases"),
        count_increases(&series, FORMATION_STEPS) as f64,
        0.0,
        0.0,
    ));
    if solver != SolverKind::Sharp {
        let b = facet_length_bound_audit(traj, alpha, tol, t_from)?;
        report.push(Check::at_most(
            name("facet_length_bound_violations"),
            b.violations as f64,
            0.0,
            0.0,
        ));
    }

    if let Some(first) = traj.snapshots.first() {
        let l2 = norms(&first.u).l2;
        let bound = 2.0 * SQRT_2 / alpha.get() * l2;
        let t_star = extinction_time(traj, cfg.tolerances.extinction);
        if t_star.is_finite() {
            report.push(Check::at_most(name("extinction_time"), t_star, bound, 0.0));
        }
    }

    if matches!(
        cfg.initial,
        DatumDescriptor::TwoFacetCompatible { .. } | DatumDescriptor::Facets { .. }
    ) && traj.len() > FORMATION_STEPS + 1
    {
        report.push(facet_speed_check(traj, alpha, tol, t_from, stride(solver))?);
    }
    Ok(report)
}

/// Snapshot stride for facet speed estimates; grid facets move in steps of
/// `h`, so their rates are averaged over several steps.
fn stride(solver: SolverKind) -> usize {
    match solver {
        SolverKind::Sharp => 1,
        _ => 10,
    }
}

fn print_report(report: &PropertyReport) {
    for c in &report.checks {
        println!(
            "{} {}: measured {:.6e}, bound {:.6e}, tolerance {:.3e}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.bound,
            c.tolerance
        );
    }
}

fn solver_dir(cfg: &SimConfig, solver: SolverKind) -> PathBuf {
    cfg.output_dir.join(solver.name())
}

/// Runs each selected solver (concurrently) and returns them in solver order.
fn run_all(
    cfg: &SimConfig,
    kinds: Vec<SolverKind>,
) -> Result<Vec<(SolverKind, RunOutput)>, CliError> {
    run_scenarios(kinds, |&k| run_solver(cfg, k))
}

/// `run`: every selected solver, full outputs under `output_dir/<solver>/`.
pub fn cmd_run(cfg: &SimConfig, plot: bool) -> Result<(), CliError> {
    for (k, run) in run_all(cfg, solvers(cfg.solver))? {
        let report = property_report(cfg, &run)?;
        let dir = solver_dir(cfg, k);
        output::emit_outputs(
            &dir,
            &run.trajectory,
            &report,
            cfg.alpha()?,
            flat_tol(cfg, k)?,
            plot,
        )?;
        println!(
            "{}: {} snapshots, {} events -> {}",
            k.name(),
            run.trajectory.len(),
            run.trajectory.events.len(),
            dir.display()
        );
        print_report(&report);
    }
    Ok(())
}

/// `compare`: all solvers (the front tracker only on compatible data),
/// per-solver outputs, pairwise distances and a joint report.
pub fn cmd_compare(cfg: &SimConfig, plot: bool) -> Result<(), CliError> {
    let mut kinds = vec![SolverKind::Regularized, SolverKind::Variational];
    match sharp_initial(cfg) {
        Ok(_) => kinds.push(SolverKind::Sharp),
        Err(CliError::Validation(msg)) => eprintln!("skipping sharp solver: {msg}"),
        Err(e) => return Err(e),
    }
    let runs = run_all(cfg, kinds)?;
    let mut joint = PropertyReport::default();
    for (k, run) in &runs {
        let report = property_report(cfg, run)?;
        output::emit_outputs(
            &solver_dir(cfg, *k),
            &run.trajectory,
            &report,
            cfg.alpha()?,
            flat_tol(cfg, *k)?,
            plot,
        )?;
        joint.extend(report);
    }
    let checkpoints: Vec<f64> = (1..=4).map(|j| cfg.t_end * j as f64 / 4.0).collect();
    let trajs: Vec<&Trajectory> = runs.iter().map(|(_, r)| &r.trajectory).collect();
    let rows: Vec<RefinementRow> = compare_trajectories(&trajs, &checkpoints)?
        .into_iter()
        .map(|d| RefinementRow {
            level: 0,
            n_grid: cfg.n_grid,
            m: cfg.m_ref,
            dt: cfg.dt,
            epsilon: cfg.epsilon,
            time: d.time,
            pair: format!("{}-{}", d.a.name(), d.b.name()),
            linf: d.linf,
            l2: d.l2,
        })
        .collect();
    for r in &rows {
        println!(
            "t = {:.4e} {}: linf {:.3e}, l2 {:.3e}",
            r.time, r.pair, r.linf, r.l2
        );
    }
    let mut csv = Vec::new();
    refinement_csv(&rows, &mut csv).map_err(|e| CliError::io("distances.csv", e))?;
    let path = cfg.output_dir.join("distances.csv");
    std::fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::io(cfg.output_dir.display(), e))?;
    std::fs::write(&path, csv).map_err(|e| CliError::io(path.display(), e))?;
    output::write_report(&cfg.output_dir, &joint)?;
    print_report(&joint);
    Ok(())
}

/// `check`: property suites only; fails when any check fails.
pub fn cmd_check(cfg: &SimConfig) -> Result<(), CliError> {
    let mut joint = PropertyReport::default();
    for (_, run) in run_all(cfg, solvers(cfg.solver))? {
        joint.extend(property_report(cfg, &run)?);
    }
    output::write_report(&cfg.output_dir, &joint)?;
    print_report(&joint);
    match joint.failures().count() {
        0 => Ok(()),
        n => Err(CliError::ChecksFailed(n)),
    }
}

/// `plot`: re-renders the SVGs of every solver directory present.
pub fn cmd_plot(cfg: &SimConfig) -> Result<(), CliError> {
    let mut found = 0;
    for k in [
        SolverKind::Regularized,
        SolverKind::Variational,
        SolverKind::Sharp,
    ] {
        let dir = solver_dir(cfg, k);
        if dir.join(output::SNAPSHOTS).exists() {
            output::replot(&dir)?;
            println!("{}: plots written to {}", k.name(), dir.display());
            found += 1;
        }
    }
    if found == 0 {
        return Err(CliError::Io(format!(
            "no {} found under {}",
            output::SNAPSHOTS,
            cfg.output_dir.display()
        )));
    }
    Ok(())
}
