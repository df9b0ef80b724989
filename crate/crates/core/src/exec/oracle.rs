use std::collections::VecDeque;
use std::hash::{Hash, Hasher};

use super::Tau;
use crate::taint::Provenance;

/// Source of input values. Inputs are a function of time and, for oracles
/// that want it, of which input instance is executing.
pub trait InputOracle {
    fn input(&mut self, tau: Tau, prov: &Provenance) -> i64;
}

/// Returns the current logical time, so stale readings show up as stale values.
#[derive(Clone, Copy, Debug, Default)]
pub struct ClockOracle;

impl InputOracle for ClockOracle {
    fn input(&mut self, tau: Tau, _prov: &Provenance) -> i64 {
        tau as i64
    }
}

/// Returns a value fixed per input instance, independent of time. Re-running
/// an input after a reboot reads the same value.
#[derive(Clone, Copy, Debug, Default)]
pub struct ProvenanceOracle {
    pub seed: u64,
}

impl InputOracle for ProvenanceOracle {
    fn input(&mut self, _tau: Tau, prov: &Provenance) -> i64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.seed.hash(&mut h);
        for s in prov {
            s.func.hash(&mut h);
            s.label.hash(&mut h);
        }
        (h.finish() % 1000) as i64
    }
}

/// Replays a recorded value sequence; once exhausted, returns zero.
#[derive(Clone, Debug, Default)]
pub struct ReplayOracle {
    pub values: VecDeque<i64>,
}

impl ReplayOracle {
    pub fn new(values: impl IntoIterator<Item = i64>) -> Self {
        ReplayOracle { values: values.into_iter().collect() }
    }
}

impl InputOracle for ReplayOracle {
    fn input(&mut self, _tau: Tau, _prov: &Provenance) -> i64 {
        self.values.pop_front().unwrap_or(0)
    }
}
