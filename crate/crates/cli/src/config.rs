//! Run configuration: a TOML file with top-level keys plus `[initial]` and
//! `[tolerances]` tables.
//!
//! ```toml
//! solver = "variational"
//! alpha = 1.0
//! n_grid = 256
//! t_end = 0.05
//!
//! [initial]
//! kind = "sine"
//! amplitude = 0.5
//! ```

use std::path::PathBuf;

use facetflow::datum::DatumDescriptor;
use facetflow::regularized::RegularizedConfig;
use facetflow::sharp::SharpConfig;
use facetflow::variational::VariationalConfig;
use facetflow::{Alpha, TorusGrid};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverChoice {
    Regularized,
    Variational,
    Sharp,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_newton")]
    pub newton: f64,
    #[serde(default = "default_kkt")]
    pub kkt: f64,
    /// Interval length that triggers a merge in the front tracker.
    #[serde(default = "default_merge_len")]
    pub merge_len: f64,
    /// Local error per front-tracker substep.
    #[serde(default = "default_step")]
    pub step: f64,
    /// `||u - mean||_inf` below which a state counts as extinct.
    #[serde(default = "default_extinction")]
    pub extinction: f64,
    /// Zero-slope threshold for facet detection; solver-specific default
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flat: Option<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            newton: default_newton(),
            kkt: default_kkt(),
            merge_len: default_merge_len(),
            step: default_step(),
            extinction: default_extinction(),
            flat: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub solver: SolverChoice,
    pub alpha: f64,
    pub n_grid: usize,
    pub t_end: f64,
    /// Time step of the grid solvers and snapshot spacing of the front
    /// tracker.
    #[serde(default = "default_dt", alias = "tau")]
    pub dt: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Nodes per reference interval of the front tracker.
    #[serde(default = "default_m_ref")]
    pub m_ref: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "one")]
    pub snapshot_every: usize,
    #[serde(default = "default_initial")]
    pub initial: DatumDescriptor,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_newton() -> f64 {
    1e-10
}
fn default_kkt() -> f64 {
    1e-10
}
fn default_merge_len() -> f64 {
    0.01
}
fn default_step() -> f64 {
    1e-7
}
fn default_extinction() -> f64 {
    1e-4
}
fn default_dt() -> f64 {
    1e-3
}
fn default_epsilon() -> f64 {
    1e-6
}
fn default_m_ref() -> usize {
    64
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("facetflow-out")
}
fn one() -> usize {
    1
}
fn default_initial() -> DatumDescriptor {
    DatumDescriptor::Sine {
        amplitude: 1.0,
        mode: 1,
    }
}

const TOP_KEYS: &[&str] = &[
    "solver",
    "alpha",
    "n_grid",
    "t_end",
    "dt",
    "tau",
    "epsilon",
    "m_ref",
    "seed",
    "output_dir",
    "snapshot_every",
    "initial",
    "tolerances",
];

const TOLERANCE_KEYS: &[&str] = &["newton", "kkt", "merge_len", "step", "extinction", "flat"];

/// Other names people use for a key. A misspelling of a synonym is
/// suggested as the key itself.
const SYNONYMS: &[(&str, &str)] = &[
    ("beta", "alpha"),
    ("lambda", "alpha"),
    ("coefficient", "alpha"),
    ("eps", "epsilon"),
    ("n", "n_grid"),
    ("nodes", "n_grid"),
    ("points", "n_grid"),
    ("m", "m_ref"),
    ("step", "dt"),
    ("time_step", "dt"),
    ("t_final", "t_end"),
    ("t_max", "t_end"),
    ("out", "output_dir"),
    ("output", "output_dir"),
    ("datum", "initial"),
];

fn initial_keys(kind: &str) -> Option<&'static [&'static str]> {
    Some(match kind {
        "sine" => &["kind", "amplitude", "mode"],
        "trig_poly" => &["kind", "modes", "amplitude", "decay", "seed"],
        "triangle" => &["kind", "height"],
        "two_facet_compatible" => &["kind", "facet_length", "amplitude"],
        "facets" => &["kind", "facets", "intervals", "start"],
        "from_file" => &["kind", "path"],
        "constant" => &["kind", "value"],
        _ => return None,
    })
}

const INITIAL_KINDS: &[&str] = &[
    "sine",
    "trig_poly",
    "triangle",
    "two_facet_compatible",
    "facets",
    "from_file",
    "constant",
];

/// Closest known key within edit distance `max(2, len/3)` (and below `len`)
/// of `word` or of one of its synonyms.
pub fn suggest(word: &str, known: &[&str]) -> Option<String> {
    let limit = (word.len() / 3).max(2).min(word.len().saturating_sub(1));
    let mut candidates: Vec<(&str, &str)> = known.iter().map(|k| (*k, *k)).collect();
    candidates.extend(
        SYNONYMS
            .iter()
            .filter(|(_, key)| known.contains(key))
            .copied(),
    );
    candidates
        .into_iter()
        .map(|(name, key)| (strsim::levenshtein(word, name), key))
        .filter(|(d, _)| *d <= limit)
        .min_by_key(|(d, _)| *d)
        .map(|(_, key)| key.to_string())
}

fn unknown_key(section: &str, key: &str, known: &[&str]) -> CliError {
    let place = if section.is_empty() {
        format!("unknown key \"{key}\"")
    } else {
        format!("unknown key \"{key}\" in [{section}]")
    };
    match suggest(key, known) {
        Some(s) => CliError::Parse(format!("{place}; did you mean \"{s}\"?")),
        None => CliError::Parse(format!("{place}; expected one of {}", known.join(", "))),
    }
}

fn check_keys(table: &toml::Table, section: &str, known: &[&str]) -> Result<(), CliError> {
    match table.keys().find(|k| !known.contains(&k.as_str())) {
        Some(k) => Err(unknown_key(section, k, known)),
        None => Ok(()),
    }
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<SimConfig, CliError> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Parse(e.to_string()))?;
    check_keys(&table, "", TOP_KEYS)?;
    if table.contains_key("dt") && table.contains_key("tau") {
        return Err(CliError::Parse(
            "both \"dt\" and \"tau\" given; they name the same step".into(),
        ));
    }
    if let Some(t) = table.get("tolerances") {
        if let Some(t) = t.as_table() {
            check_keys(t, "tolerances", TOLERANCE_KEYS)?;
        }
    }
    if let Some(init) = table.get("initial").and_then(|v| v.as_table()) {
        let kind = init
            .get("kind")
            .and_then(|k| k.as_str())
            .ok_or_else(|| CliError::Parse("[initial] needs a string \"kind\"".into()))?;
        let Some(known) = initial_keys(kind) else {
            let hint = suggest(kind, INITIAL_KINDS)
                .map(|s| format!("; did you mean \"{s}\"?"))
                .unwrap_or_else(|| format!("; expected one of {}", INITIAL_KINDS.join(", ")));
            return Err(CliError::Parse(format!(
                "unknown initial kind \"{kind}\"{hint}"
            )));
        };
        check_keys(init, "initial", known)?;
    }
    let cfg: SimConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// TOML text that parses back to `cfg`.
pub fn render(cfg: &SimConfig) -> String {
    toml::to_string(cfg).expect("configuration serializes")
}

impl SimConfig {
    /// Checks every range constraint; messages name the key and the rule.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Validation(msg));
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad(format!("alpha > 0 required, got {}", self.alpha));
        }
        if self.n_grid < TorusGrid::MIN_POINTS {
            return bad(format!(
                "n_grid >= {} required, got {}",
                TorusGrid::MIN_POINTS,
                self.n_grid
            ));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return bad(format!("t_end >= 0 required, got {}", self.t_end));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("dt > 0 required, got {}", self.dt));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad(format!("epsilon > 0 required, got {}", self.epsilon));
        }
        if self.m_ref < 8 {
            return bad(format!("m_ref >= 8 required, got {}", self.m_ref));
        }
        if self.snapshot_every == 0 {
            return bad("snapshot_every >= 1 required, got 0".into());
        }
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed <= {} required, got {}", i64::MAX, self.seed));
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("tolerances.newton", t.newton),
            ("tolerances.kkt", t.kkt),
            ("tolerances.merge_len", t.merge_len),
            ("tolerances.step", t.step),
            ("tolerances.extinction", t.extinction),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} > 0 required, got {v}"));
            }
        }
        if let Some(f) = t.flat {
            if !(f.is_finite() && f > 0.0) {
                return bad(format!("tolerances.flat > 0 required, got {f}"));
            }
        }
        self.validate_initial()
    }

    fn validate_initial(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Validation(msg));
        match &self.initial {
            DatumDescriptor::Sine { amplitude, mode } => {
                if !amplitude.is_finite() {
                    return bad("initial.amplitude must be finite".into());
                }
                if *mode == 0 {
                    return bad("initial.mode >= 1 required, got 0".into());
                }
            }
            DatumDescriptor::TrigPoly {
                modes,
                amplitude,
                decay,
                ..
            } => {
                if *modes == 0 {
                    return bad("initial.modes >= 1 required, got 0".into());
                }
                if !amplitude.is_finite() || !decay.is_finite() {
                    return bad("initial.amplitude and initial.decay must be finite".into());
                }
            }
            DatumDescriptor::Triangle { height } if !height.is_finite() => {
                return bad("initial.height must be finite".into());
            }
            DatumDescriptor::Constant { value } if !value.is_finite() => {
                return bad("initial.value must be finite".into());
            }
            DatumDescriptor::TwoFacetCompatible { .. } | DatumDescriptor::Facets { .. } => {
                let alpha = self.alpha()?;
                if let Some(Err(e)) = self.initial.facet_profile(alpha) {
                    return bad(format!("initial: {e}"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn alpha(&self) -> Result<Alpha, CliError> {
        Alpha::new(self.alpha)
            .map_err(|_| CliError::Validation(format!("alpha > 0 required, got {}", self.alpha)))
    }

    pub fn grid(&self) -> Result<TorusGrid, CliError> {
        TorusGrid::new(self.n_grid).map_err(|e| CliError::Validation(e.to_string()))
    }

    pub fn regularized(&self) -> Result<RegularizedConfig, CliError> {
        let mut c = RegularizedConfig::new(self.alpha()?, self.epsilon, self.dt, self.t_end);
        c.newton_tol = self.tolerances.newton;
        c.snapshot_every = self.snapshot_every;
        Ok(c)
    }

    pub fn variational(&self) -> Result<VariationalConfig, CliError> {
        let mut c = VariationalConfig::new(self.alpha()?, self.dt, self.t_end);
        c.kkt_tol = self.tolerances.kkt;
        c.snapshot_every = self.snapshot_every;
        Ok(c)
    }

    pub fn sharp(&self) -> Result<SharpConfig, CliError> {
        let mut c = SharpConfig::new(self.alpha()?, self.m_ref, self.dt, self.t_end);
        c.merge_len_tol = self.tolerances.merge_len;
        c.step_tol = self.tolerances.step;
        c.n_grid = self.n_grid;
        c.snapshot_every = self.snapshot_every;
        Ok(c)
    }
}
