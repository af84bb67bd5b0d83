//! Facet/interval decomposition of a profile, the continuous selection of the
//! monotone graph built on it, and the facet-length lower bound audit.
//!
//! A facet is a maximal cyclic run of flat edges (`|u_x| <= flat_tol`) on
//! which the profile attains a local extremum. Flat runs inside monotone
//! stretches and single-node extrema are not facets; they are reported
//! separately because the flow removes both instantly.
//!
//! A run of `m` flat edges starting at edge `i` covers nodes `i ..= i + m`.
//! Its endpoints are placed at the midpoints of the two bounding non-flat
//! edges, giving length `(m + 1) h`.

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::grid::{backward_diff_slice, forward_diff_slice, Alpha, GridFunction, TorusGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FacetKind {
    Max,
    Min,
}

impl FacetKind {
    /// Sign of the crystalline curvature: a maximum moves down.
    #[inline]
    pub fn curvature_sign(self) -> f64 {
        match self {
            FacetKind::Max => -1.0,
            FacetKind::Min => 1.0,
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            FacetKind::Max => FacetKind::Min,
            FacetKind::Min => FacetKind::Max,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FacetKind::Max => "max",
            FacetKind::Min => "min",
        }
    }
}

/// Crystalline curvature `-alpha/|F|` (max) or `+alpha/|F|` (min).
#[inline]
pub fn crystalline_curvature(kind: FacetKind, length: f64, alpha: Alpha) -> f64 {
    kind.curvature_sign() * alpha.get() / length
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Increasing,
    Decreasing,
}

impl Direction {
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Direction::Increasing => 1.0,
            Direction::Decreasing => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Facet {
    pub left: f64,
    pub right: f64,
    pub height: f64,
    pub kind: FacetKind,
    pub length: f64,
    /// First flat edge of the run.
    #[serde(skip)]
    pub first_edge: usize,
    /// Number of flat edges; the facet covers `edge_count + 1` nodes.
    #[serde(skip)]
    pub edge_count: usize,
}

impl Facet {
    /// Node indices covered by the facet, cyclically.
    pub fn nodes(&self, grid: TorusGrid) -> impl Iterator<Item = usize> {
        let n = grid.len();
        let first = self.first_edge;
        let count = (self.edge_count + 1).min(n);
        (0..count).map(move |j| (first + j) % n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub left: f64,
    pub right: f64,
    pub direction: Direction,
    #[serde(skip)]
    pub first_edge: usize,
    #[serde(skip)]
    pub edge_count: usize,
}

/// Alternating facets and monotone intervals covering the torus. Interval `k`
/// lies between facet `k` and facet `k + 1 (mod n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetDecomposition {
    pub facets: Vec<Facet>,
    pub intervals: Vec<Interval>,
    /// Constant profile: one facet covering the whole torus, no intervals.
    #[serde(default)]
    pub degenerate: bool,
    #[serde(skip)]
    pub flat_tol: f64,
}

impl FacetDecomposition {
    pub fn n(&self) -> usize {
        self.facets.len()
    }

    /// Whole-torus facet of a constant profile.
    pub fn constant(height: f64) -> Self {
        Self {
            facets: vec![Facet {
                left: 0.0,
                right: 1.0,
                height,
                kind: FacetKind::Max,
                length: 1.0,
                first_edge: 0,
                edge_count: 0,
            }],
            intervals: Vec::new(),
            degenerate: true,
            flat_tol: 0.0,
        }
    }

    /// Checks alternation of kinds and directions and that the facet and
    /// interval edge runs tile the grid.
    pub fn validate(&self, grid: TorusGrid) -> Result<()> {
        if self.degenerate {
            return if self.facets.len() == 1 && self.intervals.is_empty() {
                Ok(())
            } else {
                Err(FlowError::InvalidDecomposition(
                    "degenerate decomposition must hold a single facet".into(),
                ))
            };
        }
        let n = self.facets.len();
        if n != self.intervals.len() {
            return Err(FlowError::InvalidDecomposition(format!(
                "{n} facets but {} intervals",
                self.intervals.len()
            )));
        }
        if n == 0 {
            return Err(FlowError::InvalidDecomposition("no facets".into()));
        }
        if !n.is_multiple_of(2) {
            return Err(FlowError::InvalidDecomposition(format!(
                "odd facet count {n} cannot alternate on the torus"
            )));
        }
        let grid_n = grid.len();
        let mut covered = 0usize;
        for k in 0..n {
            let f = &self.facets[k];
            let next = &self.facets[(k + 1) % n];
            let iv = &self.intervals[k];
            if f.kind == next.kind {
                return Err(FlowError::InvalidDecomposition(format!(
                    "facets {k} and {} are both {}",
                    (k + 1) % n,
                    f.kind.as_str()
                )));
            }
            let expected_dir = match f.kind {
                FacetKind::Max => Direction::Decreasing,
                FacetKind::Min => Direction::Increasing,
            };
            if iv.direction != expected_dir {
                return Err(FlowError::InvalidDecomposition(format!(
                    "interval {k} direction inconsistent with facet {k}"
                )));
            }
            if f.length <= 0.0 {
                return Err(FlowError::DegenerateFacet {
                    index: k,
                    length: f.length,
                });
            }
            if (f.first_edge + f.edge_count) % grid_n != iv.first_edge
                || (iv.first_edge + iv.edge_count) % grid_n != next.first_edge
            {
                return Err(FlowError::InvalidDecomposition(format!(
                    "facet {k} and interval {k} are not contiguous"
                )));
            }
            if iv.edge_count == 0 {
                return Err(FlowError::DegenerateInterval {
                    index: k,
                    length: 0.0,
                });
            }
            covered += f.edge_count + iv.edge_count;
        }
        if covered != grid_n {
            return Err(FlowError::InvalidDecomposition(format!(
                "runs cover {covered} of {grid_n} edges"
            )));
        }
        Ok(())
    }
}

/// Flat run that is not an extremum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatRun {
    pub left: f64,
    pub right: f64,
    pub height: f64,
    pub first_edge: usize,
    pub edge_count: usize,
}

/// Strict extremum at a single node with no flat run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsolatedExtremum {
    pub node: usize,
    pub x: f64,
    pub value: f64,
    pub kind: FacetKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub facet: usize,
    pub deficit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    #[serde(flatten)]
    pub decomposition: FacetDecomposition,
    /// `E(u)`: L2 norm of the derivative of the constructed selection.
    #[serde(rename = "E")]
    pub e: f64,
    pub facet_length_bound_ok: bool,
    pub violations: Vec<Violation>,
    pub embedded_flats: Vec<FlatRun>,
    pub isolated_extrema: Vec<IsolatedExtremum>,
}

impl AnalysisReport {
    /// No embedded flats, no isolated extrema, non-empty valid decomposition.
    pub fn is_regular(&self) -> bool {
        self.embedded_flats.is_empty()
            && self.isolated_extrema.is_empty()
            && (self.decomposition.degenerate || self.decomposition.n() > 0)
    }

    /// Number of local extrema, counting isolated nodes as well as facets.
    pub fn extremum_count(&self) -> usize {
        if self.decomposition.degenerate {
            1
        } else {
            self.decomposition.n() + self.isolated_extrema.len()
        }
    }
}

/// `1e-6 * max(1, |u_x|_inf)`.
pub fn default_flat_tol(u: &GridFunction) -> f64 {
    let d = forward_diff_slice(u.values(), u.grid().spacing());
    1e-6 * d.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

/// Grid slack used by the facet-length lower bound: `4h`.
pub fn bound_slack(grid: TorusGrid) -> f64 {
    4.0 * grid.spacing()
}

pub fn detect_facets(u: &GridFunction, alpha: Alpha, flat_tol: f64) -> Result<AnalysisReport> {
    if !(flat_tol > 0.0) {
        return Err(FlowError::InvalidParameter(format!(
            "flat_tol > 0 required, got {flat_tol}"
        )));
    }
    let grid = u.grid();
    let n = grid.len();
    let h = grid.spacing();
    let vals = u.values();
    let d = forward_diff_slice(vals, h);
    let flat: Vec<bool> = d.iter().map(|v| v.abs() <= flat_tol).collect();

    let Some(start) = flat.iter().position(|f| !f) else {
        let decomposition = FacetDecomposition {
            flat_tol,
            ..FacetDecomposition::constant(u.mean())
        };
        return Ok(AnalysisReport {
            decomposition,
            e: 0.0,
            facet_length_bound_ok: true,
            violations: Vec::new(),
            embedded_flats: Vec::new(),
            isolated_extrema: Vec::new(),
        });
    };

    // Flat runs in cyclic order, beginning after the non-flat edge `start`.
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut j = 1;
    while j <= n {
        let e = (start + j) % n;
        if flat[e] {
            let first = e;
            let mut count = 0;
            while flat[(first + count) % n] {
                count += 1;
            }
            runs.push((first, count));
            j += count;
        } else {
            j += 1;
        }
    }

    let mut facets = Vec::new();
    let mut embedded_flats = Vec::new();
    for &(first, count) in &runs {
        let left_edge = grid.offset(first, -1);
        let right_edge = (first + count) % n;
        let (sl, sr) = (d[left_edge], d[right_edge]);
        let height = (0..=count).map(|k| vals[(first + k) % n]).sum::<f64>() / (count + 1) as f64;
        let left = grid.edge_midpoint(left_edge);
        let right = grid.edge_midpoint(right_edge);
        let kind = if sl > 0.0 && sr < 0.0 {
            Some(FacetKind::Max)
        } else if sl < 0.0 && sr > 0.0 {
            Some(FacetKind::Min)
        } else {
            None
        };
        match kind {
            Some(kind) => facets.push(Facet {
                left,
                right,
                height,
                kind,
                length: (count + 1) as f64 * h,
                first_edge: first,
                edge_count: count,
            }),
            None => embedded_flats.push(FlatRun {
                left,
                right,
                height,
                first_edge: first,
                edge_count: count,
            }),
        }
    }

    let mut isolated_extrema = Vec::new();
    for i in 0..n {
        let (dl, dr) = (d[grid.prev(i)], d[i]);
        if flat[grid.prev(i)] || flat[i] {
            continue;
        }
        let kind = if dl > 0.0 && dr < 0.0 {
            FacetKind::Max
        } else if dl < 0.0 && dr > 0.0 {
            FacetKind::Min
        } else {
            continue;
        };
        isolated_extrema.push(IsolatedExtremum {
            node: i,
            x: grid.coord(i),
            value: vals[i],
            kind,
        });
    }

    if facets.is_empty() && isolated_extrema.is_empty() {
        return Err(FlowError::NoFacets);
    }

    let m = facets.len();
    let intervals: Vec<Interval> = (0..m)
        .map(|k| {
            let f = &facets[k];
            let next = &facets[(k + 1) % m];
            let first_edge = (f.first_edge + f.edge_count) % n;
            let edge_count = (next.first_edge + n - first_edge) % n;
            let edge_count = if m == 1 && edge_count == 0 {
                n
            } else {
                edge_count
            };
            Interval {
                left: f.right,
                right: next.left,
                direction: match f.kind {
                    FacetKind::Max => Direction::Decreasing,
                    FacetKind::Min => Direction::Increasing,
                },
                first_edge,
                edge_count,
            }
        })
        .collect();

    let decomposition = FacetDecomposition {
        facets,
        intervals,
        degenerate: false,
        flat_tol,
    };

    let (e, violations) = if decomposition.n() > 0 {
        let sigma = sigma_unchecked(u, &decomposition, alpha);
        let e = compute_e(&sigma);
        (
            e,
            facet_length_bound_violations(&decomposition, alpha, e, bound_slack(grid)),
        )
    } else {
        (0.0, Vec::new())
    };

    Ok(AnalysisReport {
        decomposition,
        e,
        facet_length_bound_ok: violations.is_empty(),
        violations,
        embedded_flats,
        isolated_extrema,
    })
}

/// Facets whose length falls short of `n alpha^2 / E^2` by more than `slack`.
pub fn facet_length_bound_violations(
    dec: &FacetDecomposition,
    alpha: Alpha,
    e: f64,
    slack: f64,
) -> Vec<Violation> {
    if dec.degenerate || dec.n() == 0 || e <= 0.0 {
        return Vec::new();
    }
    let needed = dec.n() as f64 * alpha.get().powi(2) / (e * e);
    dec.facets
        .iter()
        .enumerate()
        .filter_map(|(facet, f)| {
            let deficit = needed - f.length;
            (deficit > slack).then_some(Violation { facet, deficit })
        })
        .collect()
}

/// Continuous selection `sigma^0` of the monotone graph along `u_x`, per edge.
///
/// Interval edges carry `d + (alpha/2) sgn d` (the interval direction supplies
/// the sign where `d` is flat); facet edges interpolate affinely between the
/// values on the two bounding edges. A constant profile gets `sigma = 0`.
pub fn build_sigma(u: &GridFunction, dec: &FacetDecomposition, alpha: Alpha) -> Result<Vec<f64>> {
    dec.validate(u.grid())?;
    Ok(sigma_unchecked(u, dec, alpha))
}

fn sigma_unchecked(u: &GridFunction, dec: &FacetDecomposition, alpha: Alpha) -> Vec<f64> {
    let grid = u.grid();
    let n = grid.len();
    if dec.degenerate {
        return vec![0.0; n];
    }
    let d = forward_diff_slice(u.values(), grid.spacing());
    let a2 = alpha.half();
    let mut sigma = vec![0.0; n];
    for iv in &dec.intervals {
        for j in 0..iv.edge_count {
            let e = (iv.first_edge + j) % n;
            let s = if d[e].abs() > dec.flat_tol {
                d[e].signum()
            } else {
                iv.direction.sign()
            };
            sigma[e] = d[e] + a2 * s;
        }
    }
    for f in &dec.facets {
        let left_edge = grid.offset(f.first_edge, -1);
        let right_edge = (f.first_edge + f.edge_count) % n;
        let (sl, sr) = (sigma[left_edge], sigma[right_edge]);
        let steps = (f.edge_count + 1) as f64;
        for j in 0..f.edge_count {
            let e = (f.first_edge + j) % n;
            sigma[e] = sl + (j + 1) as f64 * (sr - sl) / steps;
        }
    }
    sigma
}

/// `E = ||sigma_x||_{L2}` with the cyclic backward difference; `h = 1/len`.
pub fn compute_e(sigma: &[f64]) -> f64 {
    if sigma.is_empty() {
        return 0.0;
    }
    let h = 1.0 / sigma.len() as f64;
    backward_diff_slice(sigma, h)
        .iter()
        .map(|v| h * v * v)
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn gf(values: Vec<f64>) -> GridFunction {
        let n = values.len();
        GridFunction::new(TorusGrid::new(n).unwrap(), values).unwrap()
    }

    fn alpha(a: f64) -> Alpha {
        Alpha::new(a).unwrap()
    }

    /// Max-facet on [0, 1/4] at height 1, min-facet on [1/2, 3/4] at 0,
    /// smoothstep cubic connectors.
    pub(crate) fn two_flat_profile(n: usize) -> GridFunction {
        let grid = TorusGrid::new(n).unwrap();
        GridFunction::from_fn(grid, |x| {
            let smooth = |s: f64| 3.0 * s * s - 2.0 * s * s * s;
            if x <= 0.25 {
                1.0
            } else if x < 0.5 {
                1.0 - smooth((x - 0.25) / 0.25)
            } else if x <= 0.75 {
                0.0
            } else {
                smooth((x - 0.75) / 0.25)
            }
        })
        .unwrap()
    }

    #[test]
    fn constant_profile_is_degenerate() {
        let r = detect_facets(&gf(vec![2.0; 8]), alpha(1.0), 1e-6).unwrap();
        assert!(r.decomposition.degenerate);
        assert_eq!(r.decomposition.n(), 1);
        assert!(r.decomposition.intervals.is_empty());
        assert_eq!(r.e, 0.0);
        assert!(r.facet_length_bound_ok);
    }

    #[test]
    fn eight_node_example() {
        let u = gf([0.0, 0.0, 0.0, 1.0, 2.0, 3.0, 2.0, 1.0]
            .iter()
            .map(|v| v * 0.1)
            .collect());
        let r = detect_facets(&u, alpha(1.0), 1e-6).unwrap();
        assert_eq!(r.decomposition.n(), 1);
        let f = r.decomposition.facets[0];
        assert_eq!(f.kind, FacetKind::Min);
        let nodes: Vec<usize> = f.nodes(u.grid()).collect();
        assert_eq!(nodes, vec![0, 1, 2]);
        assert_eq!(r.isolated_extrema.len(), 1);
        assert_eq!(r.isolated_extrema[0].node, 5);
        assert_eq!(r.isolated_extrema[0].kind, FacetKind::Max);
        assert!(!r.is_regular());
    }

    #[test]
    fn two_flats_with_cubic_connectors() {
        let n = 512;
        let u = two_flat_profile(n);
        let h = 1.0 / n as f64;
        let r = detect_facets(&u, alpha(2.0), 1e-6).unwrap();
        let dec = &r.decomposition;
        assert_eq!(dec.n(), 2);
        assert_eq!(dec.intervals.len(), 2);
        let kinds: Vec<FacetKind> = dec.facets.iter().map(|f| f.kind).collect();
        assert!(kinds.contains(&FacetKind::Max) && kinds.contains(&FacetKind::Min));
        for f in &dec.facets {
            assert!((f.length - 0.25).abs() <= h + 1e-12, "length {}", f.length);
        }
        dec.validate(u.grid()).unwrap();
        assert!(r.is_regular());
    }

    #[test]
    fn embedded_flat_is_not_a_facet() {
        // rises, plateaus, rises again, then falls back
        let u = gf([0.0, 1.0, 1.0, 1.0, 2.0, 3.0, 2.0, 1.0]
            .iter()
            .map(|v| v * 0.1)
            .collect());
        let r = detect_facets(&u, alpha(1.0), 1e-9).unwrap();
        assert_eq!(r.embedded_flats.len(), 1);
        assert_eq!(r.embedded_flats[0].first_edge, 1);
        assert_eq!(r.embedded_flats[0].edge_count, 2);
    }

    #[test]
    fn detection_is_idempotent() {
        let u = two_flat_profile(256);
        let a = detect_facets(&u, alpha(1.0), 1e-6).unwrap();
        let b = detect_facets(&u, alpha(1.0), 1e-6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sigma_of_constant_is_zero() {
        let u = gf(vec![1.5; 16]);
        let r = detect_facets(&u, alpha(1.0), 1e-6).unwrap();
        let s = build_sigma(&u, &r.decomposition, alpha(1.0)).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
        assert_eq!(compute_e(&s), 0.0);
    }

    #[test]
    fn sigma_on_increasing_edge_takes_upper_branch() {
        let n = 512;
        let u = two_flat_profile(n);
        let r = detect_facets(&u, alpha(1.0), 1e-6).unwrap();
        let s = build_sigma(&u, &r.decomposition, alpha(1.0)).unwrap();
        let d = forward_diff_slice(u.values(), 1.0 / n as f64);
        // an edge in the middle of the rising connector on (3/4, 1)
        let e = 7 * n / 8;
        assert!(d[e] > 0.0);
        assert!((s[e] - (d[e] + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn sigma_ramps_across_a_max_facet() {
        let n = 512;
        let u = two_flat_profile(n);
        let r = detect_facets(&u, alpha(1.0), 1e-6).unwrap();
        let s = build_sigma(&u, &r.decomposition, alpha(1.0)).unwrap();
        let f = r
            .decomposition
            .facets
            .iter()
            .find(|f| f.kind == FacetKind::Max)
            .unwrap();
        let h = 1.0 / n as f64;
        let d = forward_diff_slice(u.values(), h);
        let left = (f.first_edge + n - 1) % n;
        let right = (f.first_edge + f.edge_count) % n;
        // bounding edges carry d +- alpha/2, so the ramp slope is -alpha/|F|
        // corrected by the connector slopes there
        assert!((s[left] - (d[left] + 0.5)).abs() < 1e-12);
        assert!((s[right] - (d[right] - 0.5)).abs() < 1e-12);
        let expected = (s[right] - s[left]) / f.length;
        assert!((expected + 4.0).abs() < 4.0 * (d[left].abs() + d[right].abs()) + 0.1);
        for j in 1..f.edge_count {
            let e1 = (f.first_edge + j) % n;
            let e0 = (f.first_edge + j - 1) % n;
            let slope = (s[e1] - s[e0]) / h;
            assert!(
                (slope - expected).abs() < 1e-8,
                "slope {slope} vs {expected}"
            );
        }
    }

    #[test]
    fn e_squared_for_affine_ramps() {
        let n = 400;
        let a2 = 0.5;
        // ramp down over [0, 1/4), constant, ramp up over [1/2, 3/4), constant
        let sigma: Vec<f64> = (0..n)
            .map(|i| {
                let x = (i + 1) as f64 / n as f64;
                if x <= 0.25 {
                    a2 - x / 0.25
                } else if x <= 0.5 {
                    -a2
                } else if x <= 0.75 {
                    -a2 + (x - 0.5) / 0.25
                } else {
                    a2
                }
            })
            .collect();
        assert!((compute_e(&sigma).powi(2) - 8.0).abs() < 1e-9);

        // single ramp of length 1/4 closing through a ramp of length 3/4
        let sigma: Vec<f64> = (0..n)
            .map(|i| {
                let x = (i + 1) as f64 / n as f64;
                if x <= 0.25 {
                    a2 - x / 0.25
                } else {
                    -a2 + (x - 0.25) / 0.75
                }
            })
            .collect();
        // facet part alpha^2/|F| = 4 plus the return ramp 1/(3/4)
        assert!((compute_e(&sigma).powi(2) - (4.0 + 4.0 / 3.0)).abs() < 1e-9);
    }

    #[test]
    fn validate_rejects_broken_alternation() {
        let u = two_flat_profile(128);
        let r = detect_facets(&u, alpha(1.0), 1e-6).unwrap();
        let mut dec = r.decomposition.clone();
        dec.facets[1].kind = dec.facets[0].kind;
        assert!(matches!(
            dec.validate(u.grid()),
            Err(FlowError::InvalidDecomposition(_))
        ));
        let mut dec = r.decomposition.clone();
        dec.intervals[0].edge_count -= 1;
        assert!(dec.validate(u.grid()).is_err());
        assert!(build_sigma(&u, &dec, alpha(1.0)).is_err());
    }

    #[test]
    fn lower_bound_equality_case() {
        // n = 1 facet carrying the whole ramp, sigma constant elsewhere:
        // |F| = alpha^2 / E^2 exactly.
        let n = 256;
        let h = 1.0 / n as f64;
        let alpha = alpha(1.0);
        let len_edges = 64;
        let length = (len_edges) as f64 * h;
        let sigma: Vec<f64> = (0..n)
            .map(|i| {
                if i < len_edges {
                    0.5 - (i + 1) as f64 / len_edges as f64
                } else if i == n - 1 {
                    0.5
                } else {
                    -0.5
                }
            })
            .collect();
        // one closing jump of size 1 at the last edge contributes 1/h; remove it
        let e2 = compute_e(&sigma).powi(2) - 1.0 / h;
        assert!((length - alpha.get().powi(2) / e2).abs() <= 2.0 * h);
    }
}
