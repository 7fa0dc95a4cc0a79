//! Bookkeeping of the threshold-crossing times that discretize a run.
//!
//! Row `j` is created the first time the count of type `j-1` reaches the
//! threshold `ceil(s/mu)`; it carries the crossing time, the mean type and
//! lead at that time, the early-mutation window, and the two observables
//! finalized later: the early-family proportion of type `j` (at the next
//! crossing) and the labelled Y-proportion among type `j-1`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauRecord {
    pub j: u32,
    /// Crossing time tau_j.
    pub tau: f64,
    /// Mean type M(tau_j).
    pub m_at_tau: f64,
    /// Lead of the new type over the mean: max(1, j - M(tau_j)).
    pub q: f64,
    /// End of the early-mutation window for type j.
    pub xi: f64,
    /// Early-family proportion S_j among type j at tau_{j+1}; None until
    /// tau_{j+1} is recorded.
    pub s_family: Option<f64>,
    /// Y-proportion among type j-1 at tau_j, in units of the threshold
    /// count; None before group labels exist.
    pub y_obs: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TauRegistry {
    records: Vec<TauRecord>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("tau_{0} already recorded")]
pub struct DuplicateTau(pub u32);

impl TauRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[TauRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn has(&self, j: u32) -> bool {
        self.record(j).is_some()
    }

    pub fn record(&self, j: u32) -> Option<&TauRecord> {
        self.records
            .binary_search_by_key(&j, |r| r.j)
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn max_j(&self) -> Option<u32> {
        self.records.last().map(|r| r.j)
    }

    /// Largest j with tau_j <= t.
    pub fn last_j_at(&self, t: f64) -> Option<u32> {
        self.records
            .iter()
            .rev()
            .find(|r| r.tau <= t)
            .map(|r| r.j)
    }

    pub fn insert(&mut self, record: TauRecord) -> Result<(), DuplicateTau> {
        match self.records.binary_search_by_key(&record.j, |r| r.j) {
            Ok(_) => Err(DuplicateTau(record.j)),
            Err(pos) => {
                self.records.insert(pos, record);
                Ok(())
            }
        }
    }

    /// Weak-selection lead for arrivals into type `j`: the frozen value once
    /// tau_j exists, otherwise the provisional `max(1, j - M(now))`. The
    /// provisional rule is the only causally implementable choice for
    /// mutations that precede the crossing; it agrees with the frozen value
    /// in the limit.
    pub fn q_or_provisional(&self, j: u32, mean_type_now: f64) -> f64 {
        match self.record(j) {
            Some(r) => r.q,
            None => (j as f64 - mean_type_now).max(1.0),
        }
    }

    /// Is an arrival into type `j` at time `t` inside the early window
    /// [tau_j, xi_j]? Arrivals before tau_j are not early.
    pub fn arrival_is_early(&self, j: u32, t: f64) -> bool {
        match self.record(j) {
            Some(r) => r.tau <= t && t <= r.xi,
            None => false,
        }
    }

    pub(crate) fn finalize_family(&mut self, j: u32, proportion: f64) {
        if let Ok(i) = self.records.binary_search_by_key(&j, |r| r.j) {
            if self.records[i].s_family.is_none() {
                self.records[i].s_family = Some(proportion);
            }
        }
    }

    pub(crate) fn set_y_obs(&mut self, j: u32, value: f64) {
        if let Ok(i) = self.records.binary_search_by_key(&j, |r| r.j) {
            self.records[i].y_obs = Some(value);
        }
    }
}
