//! Time-indexed solver output shared by all three solvers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::facets::FacetKind;
use crate::grid::GridFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Regularized,
    Variational,
    Sharp,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Regularized => "regularized",
            SolverKind::Variational => "variational",
            SolverKind::Sharp => "sharp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Merge,
    Extinction,
    BlowupGuard,
}

/// A discrete event of a run (facet merge, extinction, speed cap hit).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    /// Indices involved (interval indices for merges).
    pub indices: Vec<usize>,
    /// Lengths or speeds observed at the trigger.
    pub values: Vec<f64>,
}

/// One facet as seen in a snapshot. Coordinates are wrapped into `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FacetRecord {
    pub left: f64,
    pub right: f64,
    pub height: f64,
    pub kind: FacetKind,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub u: GridFunction,
    /// Time-derivative estimate `u_t` at this snapshot.
    pub kappa: GridFunction,
    /// Dual certificate per edge (variational solver only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
    /// Exact facet data (sharp solver only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub facets: Option<Vec<FacetRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub solver: SolverKind,
    /// Hash of the configuration that produced the run.
    pub config_hash: u64,
    /// Time step of the underlying scheme.
    pub dt: f64,
    pub snapshots: Vec<Snapshot>,
    pub events: Vec<Event>,
    /// Scalar diagnostics accumulated during the run.
    pub stats: BTreeMap<String, f64>,
}

impl Trajectory {
    pub fn new(solver: SolverKind, config_hash: u64, dt: f64) -> Self {
        Self {
            solver,
            config_hash,
            dt,
            snapshots: Vec::new(),
            events: Vec::new(),
            stats: BTreeMap::new(),
        }
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn last(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }

    /// Snapshot whose time is closest to `t`.
    pub fn at_time(&self, t: f64) -> Option<&Snapshot> {
        self.snapshots.iter().min_by(|a, b| {
            (a.time - t)
                .abs()
                .partial_cmp(&(b.time - t).abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    }

    pub(crate) fn push(&mut self, snapshot: Snapshot) {
        debug_assert!(self.snapshots.last().is_none_or(|s| snapshot.time > s.time));
        self.snapshots.push(snapshot);
    }

    /// Times strictly increase.
    pub fn is_time_ordered(&self) -> bool {
        self.snapshots.windows(2).all(|w| w[1].time > w[0].time)
            && self.events.windows(2).all(|w| w[1].time >= w[0].time)
    }
}

/// FNV-1a over the textual form of a configuration; stable across runs and
/// platforms, unlike `DefaultHasher`.
pub fn config_hash<T: Serialize>(config: &T) -> u64 {
    let text = serde_json::to_string(config).unwrap_or_default();
    text.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
