//! Initial data: analytic presets and a facet profile with compatible
//! connectors.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::facets::FacetKind;
use crate::grid::{wrap_unit, Alpha, GridFunction, TorusGrid};

/// Describes an initial profile; `kind` selects the family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatumDescriptor {
    /// `amplitude * sin(2 pi mode x)`.
    Sine {
        #[serde(default = "unit")]
        amplitude: f64,
        #[serde(default = "first_mode")]
        mode: u32,
    },
    /// Random Fourier series with coefficients `~ U(-1,1) amplitude / k^decay`.
    TrigPoly {
        #[serde(default = "default_modes")]
        modes: u32,
        #[serde(default = "unit")]
        amplitude: f64,
        #[serde(default = "default_decay")]
        decay: f64,
        /// Falls back to the run seed when absent.
        #[serde(default)]
        seed: Option<u64>,
    },
    /// Triangle wave between 0 and `height`, peak at x = 1/2.
    Triangle {
        #[serde(default = "half")]
        height: f64,
    },
    /// One max facet on `[0, facet_length]` at `+amplitude/2` and one min
    /// facet at `-amplitude/2`, joined by compatible connectors.
    TwoFacetCompatible {
        #[serde(default = "quarter")]
        facet_length: f64,
        #[serde(default = "unit")]
        amplitude: f64,
    },
    /// General compatible facet profile; see [`FacetProfile`].
    Facets {
        facets: Vec<FacetSpec>,
        intervals: Vec<f64>,
        #[serde(default)]
        start: f64,
    },
    /// One value per line; lines with several comma or whitespace separated
    /// columns contribute their last column. `#` starts a comment.
    FromFile {
        path: PathBuf,
    },
    Constant {
        value: f64,
    },
}

fn unit() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn quarter() -> f64 {
    0.25
}
fn first_mode() -> u32 {
    1
}
fn default_modes() -> u32 {
    5
}
fn default_decay() -> f64 {
    1.5
}

impl DatumDescriptor {
    pub fn name(&self) -> &'static str {
        match self {
            DatumDescriptor::Sine { .. } => "sine",
            DatumDescriptor::TrigPoly { .. } => "trig_poly",
            DatumDescriptor::Triangle { .. } => "triangle",
            DatumDescriptor::TwoFacetCompatible { .. } => "two_facet_compatible",
            DatumDescriptor::Facets { .. } => "facets",
            DatumDescriptor::FromFile { .. } => "from_file",
            DatumDescriptor::Constant { .. } => "constant",
        }
    }

    /// The analytic facet profile behind the compatible kinds.
    pub fn facet_profile(&self, alpha: Alpha) -> Option<Result<FacetProfile>> {
        match self {
            DatumDescriptor::TwoFacetCompatible {
                facet_length,
                amplitude,
            } => Some(FacetProfile::two_facet(alpha, *facet_length, *amplitude)),
            DatumDescriptor::Facets {
                facets,
                intervals,
                start,
            } => Some(FacetProfile::new(
                alpha,
                facets.clone(),
                intervals.clone(),
                *start,
            )),
            _ => None,
        }
    }
}

/// Samples a datum on `grid`. `seed` is used by `trig_poly` without its own.
pub fn make_datum(
    desc: &DatumDescriptor,
    grid: TorusGrid,
    alpha: Alpha,
    seed: u64,
) -> Result<GridFunction> {
    match desc {
        DatumDescriptor::Sine { amplitude, mode } => {
            let k = *mode as f64;
            GridFunction::from_fn(grid, |x| amplitude * (2.0 * PI * k * x).sin())
        }
        DatumDescriptor::TrigPoly {
            modes,
            amplitude,
            decay,
            seed: own,
        } => {
            let coeffs = trig_coefficients(*modes, *amplitude, *decay, own.unwrap_or(seed));
            GridFunction::from_fn(grid, |x| trig_eval(&coeffs, x))
        }
        DatumDescriptor::Triangle { height } => {
            GridFunction::from_fn(grid, |x| 2.0 * height * (0.5 - (x - 0.5).abs()))
        }
        DatumDescriptor::Constant { value } => {
            if !value.is_finite() {
                return Err(FlowError::NonFinite {
                    index: 0,
                    value: *value,
                });
            }
            Ok(GridFunction::constant(grid, *value))
        }
        DatumDescriptor::FromFile { path } => read_profile(path, grid),
        DatumDescriptor::TwoFacetCompatible { .. } | DatumDescriptor::Facets { .. } => {
            let profile = desc.facet_profile(alpha).expect("compatible kind")?;
            profile.sample(grid)
        }
    }
}

/// `(cos, sin)` coefficient pairs for modes `1..=modes`.
fn trig_coefficients(modes: u32, amplitude: f64, decay: f64, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=modes)
        .map(|k| {
            let scale = amplitude / (k as f64).powf(decay);
            (
                scale * rng.gen_range(-1.0..1.0),
                scale * rng.gen_range(-1.0..1.0),
            )
        })
        .collect()
}

fn trig_eval(coeffs: &[(f64, f64)], x: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .map(|(j, (a, b))| {
            let w = 2.0 * PI * (j + 1) as f64 * x;
            a * w.cos() + b * w.sin()
        })
        .sum()
}

fn read_profile(path: &Path, grid: TorusGrid) -> Result<GridFunction> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| FlowError::InvalidParameter(format!("cannot read {}: {e}", path.display())))?;
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let last = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .rfind(|s| !s.is_empty())
            .unwrap_or("");
        match last.parse::<f64>() {
            Ok(v) => values.push(v),
            // a header row
            Err(_) if values.is_empty() => continue,
            Err(_) => {
                return Err(FlowError::InvalidParameter(format!(
                    "{}:{}: not a number: {last:?}",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    GridFunction::new(grid, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FacetSpec {
    pub length: f64,
    pub height: f64,
}

/// Alternating flat facets and monotone connectors covering the torus.
///
/// Facet `k` occupies `[b_{k-1}, a_k]` and interval `k` occupies
/// `[a_k, b_k]`, starting from `b_{-1} = start`. On interval `k` of length
/// `l` the profile is the septic
/// `H_k + (H_{k+1} - H_k) S(s) + A_0 q(s) + A_1 q(1 - s)` with
/// `S` the septic smoothstep, `q(s) = s^2 (1-s)^4 (1 + 4s) / 2` and
/// `A_j = c l^2` for the curvature `c` of the adjacent facet. At both ends
/// the slope and third derivative vanish and the second derivative is `c`,
/// so the compatibility condition holds exactly and the facet ends start at
/// rest.
/// Value and first two derivatives of a polynomial with coefficients `c`.
fn poly3(c: &[f64], s: f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    for &ci in c.iter().rev() {
        out[2] = out[2] * s + 2.0 * out[1];
        out[1] = out[1] * s + out[0];
        out[0] = out[0] * s + ci;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetProfile {
    pub alpha: Alpha,
    pub facets: Vec<FacetSpec>,
    pub intervals: Vec<f64>,
    pub start: f64,
    kinds: Vec<FacetKind>,
}

impl FacetProfile {
    pub fn new(
        alpha: Alpha,
        facets: Vec<FacetSpec>,
        intervals: Vec<f64>,
        start: f64,
    ) -> Result<Self> {
        let n = facets.len();
        let bad = |msg: String| Err(FlowError::InvalidParameter(msg));
        if n < 2 || !n.is_multiple_of(2) {
            return bad(format!(
                "facet profile needs an even number >= 2 of facets, got {n}"
            ));
        }
        if intervals.len() != n {
            return bad(format!(
                "{n} facets need {n} intervals, got {}",
                intervals.len()
            ));
        }
        if facets
            .iter()
            .any(|f| !(f.length > 0.0) || !f.height.is_finite())
            || intervals.iter().any(|l| !(*l > 0.0))
        {
            return bad("facet and interval lengths must be positive".into());
        }
        let total: f64 =
            facets.iter().map(|f| f.length).sum::<f64>() + intervals.iter().sum::<f64>();
        if (total - 1.0).abs() > 1e-12 {
            return bad(format!("facet and interval lengths sum to {total}, not 1"));
        }
        let kinds: Vec<FacetKind> = (0..n)
            .map(|k| {
                if facets[k].height > facets[(k + 1) % n].height {
                    FacetKind::Max
                } else {
                    FacetKind::Min
                }
            })
            .collect();
        for k in 0..n {
            let (h, next, prev) = (
                facets[k].height,
                facets[(k + 1) % n].height,
                facets[(k + n - 1) % n].height,
            );
            let ok = match kinds[k] {
                FacetKind::Max => h > next && h > prev,
                FacetKind::Min => h < next && h < prev,
            };
            if !ok {
                return bad(format!("facet heights must alternate (facet {k})"));
            }
        }
        let profile = Self {
            alpha,
            facets,
            intervals,
            start,
            kinds,
        };
        for k in 0..n {
            if !profile.connector_is_monotone(k) {
                return bad(format!(
                    "connector {k} is not monotone; raise the height gap or shorten the facets"
                ));
            }
        }
        Ok(profile)
    }

    pub fn two_facet(alpha: Alpha, facet_length: f64, amplitude: f64) -> Result<Self> {
        if !(facet_length > 0.0 && facet_length < 0.5) {
            return Err(FlowError::InvalidParameter(format!(
                "facet_length must lie in (0, 1/2), got {facet_length}"
            )));
        }
        let gap = 0.5 - facet_length;
        Self::new(
            alpha,
            vec![
                FacetSpec {
                    length: facet_length,
                    height: 0.5 * amplitude,
                },
                FacetSpec {
                    length: facet_length,
                    height: -0.5 * amplitude,
                },
            ],
            vec![gap, gap],
            0.0,
        )
    }

    pub fn n(&self) -> usize {
        self.facets.len()
    }

    pub fn kinds(&self) -> &[FacetKind] {
        &self.kinds
    }

    /// Crystalline curvature of facet `k`.
    pub fn curvature_of(&self, k: usize) -> f64 {
        self.kinds[k].curvature_sign() * self.alpha.get() / self.facets[k].length
    }

    /// Unwrapped endpoints `(a_k, b_k)` of every interval.
    pub fn endpoints(&self) -> Vec<(f64, f64)> {
        let mut x = self.start;
        (0..self.n())
            .map(|k| {
                let a = x + self.facets[k].length;
                let b = a + self.intervals[k];
                x = b;
                (a, b)
            })
            .collect()
    }

    fn connector_coefficients(&self, k: usize) -> (f64, f64, f64, f64) {
        let n = self.n();
        let l = self.intervals[k];
        (
            self.facets[k].height,
            self.facets[(k + 1) % n].height,
            self.curvature_of(k) * l * l,
            self.curvature_of((k + 1) % n) * l * l,
        )
    }

    /// Connector `k` and its first two derivatives in the local variable `s`.
    fn connector(&self, k: usize, s: f64) -> [f64; 3] {
        const SMOOTH: [f64; 8] = [0.0, 0.0, 0.0, 0.0, 35.0, -84.0, 70.0, -20.0];
        const Q: [f64; 8] = [0.0, 0.0, 0.5, 0.0, -5.0, 10.0, -7.5, 2.0];
        let (h0, h1, a0, a1) = self.connector_coefficients(k);
        let sm = poly3(&SMOOTH, s);
        let q0 = poly3(&Q, s);
        let q1 = poly3(&Q, 1.0 - s);
        let dh = h1 - h0;
        [
            h0 + dh * sm[0] + a0 * q0[0] + a1 * q1[0],
            dh * sm[1] + a0 * q0[1] - a1 * q1[1],
            dh * sm[2] + a0 * q0[2] + a1 * q1[2],
        ]
    }

    fn connector_is_monotone(&self, k: usize) -> bool {
        let dir = (self.facets[(k + 1) % self.n()].height - self.facets[k].height).signum();
        (1..2000).all(|j| dir * self.connector(k, j as f64 / 2000.0)[1] > 0.0)
    }

    /// Locates `x` as `Facet(k)` or `Interval(k, s)` with local coordinate `s`.
    fn locate(&self, x: f64) -> Piece {
        let mut y = wrap_unit(x - self.start);
        for k in 0..self.n() {
            if y <= self.facets[k].length {
                return Piece::Facet(k);
            }
            y -= self.facets[k].length;
            if y < self.intervals[k] {
                return Piece::Interval(k, y / self.intervals[k]);
            }
            y -= self.intervals[k];
        }
        Piece::Facet(0)
    }

    pub fn value(&self, x: f64) -> f64 {
        match self.locate(x) {
            Piece::Facet(k) => self.facets[k].height,
            Piece::Interval(k, s) => self.connector(k, s)[0],
        }
    }

    pub fn slope(&self, x: f64) -> f64 {
        match self.locate(x) {
            Piece::Facet(_) => 0.0,
            Piece::Interval(k, s) => self.connector(k, s)[1] / self.intervals[k],
        }
    }

    /// `u_xx` on intervals, the crystalline curvature on facets.
    pub fn curvature(&self, x: f64) -> f64 {
        match self.locate(x) {
            Piece::Facet(k) => self.curvature_of(k),
            Piece::Interval(k, s) => self.connector(k, s)[2] / self.intervals[k].powi(2),
        }
    }

    /// Value and curvature on interval `k` at local coordinate `s`.
    pub fn on_interval(&self, k: usize, s: f64) -> (f64, f64) {
        let [v, _, v2] = self.connector(k, s);
        (v, v2 / self.intervals[k].powi(2))
    }

    pub fn sample(&self, grid: TorusGrid) -> Result<GridFunction> {
        GridFunction::from_fn(grid, |x| self.value(x))
    }

    pub fn mean(&self) -> f64 {
        // int S = 1/2 and int q = 1/84 on [0, 1]
        (0..self.n())
            .map(|k| {
                let (h0, h1, a0, a1) = self.connector_coefficients(k);
                let flat = self.facets[k].height * self.facets[k].length;
                let conn = 0.5 * (h0 + h1) + (a0 + a1) / 84.0;
                flat + conn * self.intervals[k]
            })
            .sum()
    }
}

enum Piece {
    Facet(usize),
    Interval(usize, f64),
}
