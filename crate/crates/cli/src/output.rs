//! File emission. Floats are written with 17 significant digits so every
//! value parses back to the same `f64`; lines end in `\n`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use facetflow::harness::{snapshot_facets, PropertyReport};
use facetflow::trajectory::Trajectory;
use facetflow::Alpha;

use crate::error::CliError;

pub const SNAPSHOTS: &str = "snapshots.csv";
pub const FACETS: &str = "facets.csv";
pub const EVENTS: &str = "events.jsonl";
pub const REPORT: &str = "report.json";
pub const PROFILE_SVG: &str = "profile.svg";
pub const HISTORY_SVG: &str = "facet_history.svg";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn snapshots_csv(traj: &Trajectory) -> String {
    let mut out = String::from("t,x,u,kappa\n");
    for s in &traj.snapshots {
        let grid = s.u.grid();
        let t = fmt_f64(s.time);
        for (i, (u, k)) in s.u.values().iter().zip(s.kappa.values()).enumerate() {
            let _ = writeln!(
                out,
                "{t},{},{},{}",
                fmt_f64(grid.coord(i)),
                fmt_f64(*u),
                fmt_f64(*k)
            );
        }
    }
    out
}

/// One row per facet per snapshot; grid runs are passed through facet
/// detection with `flat_tol`.
pub fn facets_csv(traj: &Trajectory, alpha: Alpha, flat_tol: f64) -> Result<String, CliError> {
    let mut out = String::from("t,index,left,right,height,kind,length\n");
    for (i, s) in traj.snapshots.iter().enumerate() {
        let t = fmt_f64(s.time);
        for (k, f) in snapshot_facets(traj, i, alpha, flat_tol)?
            .iter()
            .enumerate()
        {
            let _ = writeln!(
                out,
                "{t},{k},{},{},{},{},{}",
                fmt_f64(f.left),
                fmt_f64(f.right),
                fmt_f64(f.height),
                f.kind.as_str(),
                fmt_f64(f.length)
            );
        }
    }
    Ok(out)
}

pub fn events_jsonl(traj: &Trajectory) -> String {
    traj.events
        .iter()
        .map(|e| serde_json::to_string(e).expect("event serializes") + "\n")
        .collect()
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError::io(path.display(), e))
}

/// Writes the run's CSV, JSONL and JSON files into `dir` (created if
/// missing), plus both SVGs when `plot` is set.
pub fn emit_outputs(
    dir: &Path,
    traj: &Trajectory,
    report: &PropertyReport,
    alpha: Alpha,
    flat_tol: f64,
    plot: bool,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    let snapshots = snapshots_csv(traj);
    let facets = facets_csv(traj, alpha, flat_tol)?;
    write(dir, SNAPSHOTS, &snapshots)?;
    write(dir, FACETS, &facets)?;
    write(dir, EVENTS, &events_jsonl(traj))?;
    write_report(dir, report)?;
    if plot {
        render_plots(dir, &snapshots, &facets)?;
    }
    Ok(())
}

pub fn write_report(dir: &Path, report: &PropertyReport) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
    write(dir, REPORT, &(report.to_json() + "\n"))
}

/// Renders both SVGs from CSV text.
pub fn render_plots(dir: &Path, snapshots_csv: &str, facets_csv: &str) -> Result<(), CliError> {
    let profiles = crate::plot::read_profiles(snapshots_csv)?;
    let facets = crate::plot::read_facets(facets_csv)?;
    write(dir, PROFILE_SVG, &crate::plot::profile_svg(&profiles))?;
    write(dir, HISTORY_SVG, &crate::plot::facet_history_svg(&facets))
}

/// Re-renders the SVGs of a finished run directory.
pub fn replot(dir: &Path) -> Result<(), CliError> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read_to_string(&path).map_err(|e| CliError::io(path.display(), e))
    };
    render_plots(dir, &read(SNAPSHOTS)?, &read(FACETS)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use facetflow::trajectory::{Event, EventKind, SolverKind};
    use facetflow::variational::{solve_variational, VariationalConfig};
    use facetflow::{GridFunction, TorusGrid};

    fn run() -> Trajectory {
        let grid = TorusGrid::new(16).unwrap();
        let u0 = GridFunction::from_fn(grid, |x| (std::f64::consts::TAU * x).sin()).unwrap();
        let cfg = VariationalConfig::new(Alpha::new(1.0).unwrap(), 1e-3, 2e-3);
        solve_variational(&u0, &cfg).unwrap()
    }

    #[test]
    fn empty_trajectory_gives_headers_only() {
        let t = Trajectory::new(SolverKind::Sharp, 0, 1e-3);
        assert_eq!(snapshots_csv(&t), "t,x,u,kappa\n");
        assert_eq!(
            facets_csv(&t, Alpha::new(1.0).unwrap(), 1e-9).unwrap(),
            "t,index,left,right,height,kind,length\n"
        );
        assert_eq!(events_jsonl(&t), "");
    }

    #[test]
    fn row_count_is_snapshots_times_nodes() {
        let t = run();
        assert_eq!(t.len(), 3);
        assert_eq!(snapshots_csv(&t).lines().count(), 3 * 16 + 1);
    }

    #[test]
    fn values_parse_back_exactly() {
        let t = run();
        let text = snapshots_csv(&t);
        let rows: Vec<Vec<f64>> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        for (j, s) in t.snapshots.iter().enumerate() {
            for i in 0..16 {
                let r = &rows[j * 16 + i];
                assert_eq!(r[0], s.time);
                assert_eq!(r[2], s.u.values()[i]);
                assert_eq!(r[3], s.kappa.values()[i]);
            }
        }
    }

    #[test]
    fn events_are_one_json_object_per_line() {
        let mut t = run();
        t.events.push(Event {
            time: 0.5,
            kind: EventKind::Merge,
            indices: vec![1, 2],
            values: vec![0.001],
        });
        let text = events_jsonl(&t);
        assert!(text.ends_with('\n'));
        let back: Event = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(back, t.events[0]);
    }
}
