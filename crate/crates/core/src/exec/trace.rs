use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use super::Tau;
use crate::lang::Site;
use crate::report::ser_display;
use crate::taint::{show_provenance, Provenance};

/// One observation of a run, stamped with the logical time it happened at.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    /// A labeled statement started executing; `occ` counts attempts at the site.
    Step {
        tau: Tau,
        #[serde(serialize_with = "ser_chain")]
        chain: Provenance,
        occ: u32,
    },
    Input {
        tau: Tau,
        #[serde(serialize_with = "ser_chain")]
        prov: Provenance,
        value: i64,
    },
    /// A location was written; `taint` holds the input times it depends on.
    Def {
        tau: Tau,
        #[serde(serialize_with = "ser_display")]
        site: Site,
        #[serde(serialize_with = "ser_chain")]
        ctx: Vec<Site>,
        taint: BTreeSet<Tau>,
    },
    Fresh {
        tau: Tau,
        #[serde(serialize_with = "ser_display")]
        site: Site,
        #[serde(serialize_with = "ser_chain")]
        ctx: Vec<Site>,
        inputs: BTreeSet<Tau>,
    },
    Cnst {
        tau: Tau,
        #[serde(serialize_with = "ser_display")]
        site: Site,
        #[serde(serialize_with = "ser_chain")]
        ctx: Vec<Site>,
        set: u32,
        inputs: BTreeSet<Tau>,
    },
    /// A fresh variable bound at time `decl_tau` was read.
    Use {
        tau: Tau,
        #[serde(serialize_with = "ser_display")]
        site: Site,
        #[serde(serialize_with = "ser_display")]
        decl: Site,
        decl_tau: Tau,
    },
    Begin {
        tau: Tau,
        id: u32,
    },
    End {
        tau: Tau,
        id: u32,
    },
    /// Power came back after an outage of `off` time units.
    Reboot {
        tau: Tau,
        off: u64,
        in_region: bool,
    },
}

fn ser_chain<S: serde::Serializer>(c: &[Site], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&show_provenance(c))
}

impl Event {
    pub fn tau(&self) -> Tau {
        match self {
            Event::Step { tau, .. }
            | Event::Input { tau, .. }
            | Event::Def { tau, .. }
            | Event::Fresh { tau, .. }
            | Event::Cnst { tau, .. }
            | Event::Use { tau, .. }
            | Event::Begin { tau, .. }
            | Event::End { tau, .. }
            | Event::Reboot { tau, .. } => *tau,
        }
    }

    pub fn is_marker(&self) -> bool {
        matches!(self, Event::Begin { .. } | Event::End { .. })
    }
}

fn taus(s: &BTreeSet<Tau>) -> String {
    let v: Vec<String> = s.iter().map(|t| t.to_string()).collect();
    format!("{{{}}}", v.join(","))
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Step { tau, chain, occ } => write!(f, "{tau:>6} step {} #{occ}", show_provenance(chain)),
            Event::Input { tau, prov, value } => write!(f, "{tau:>6} input {} = {value}", show_provenance(prov)),
            Event::Def { tau, site, taint, .. } => write!(f, "{tau:>6} def {site} {}", taus(taint)),
            Event::Fresh { tau, site, inputs, .. } => write!(f, "{tau:>6} fresh {site} {}", taus(inputs)),
            Event::Cnst { tau, site, set, inputs, .. } => write!(f, "{tau:>6} cnst {site} {set} {}", taus(inputs)),
            Event::Use { tau, site, decl, decl_tau } => write!(f, "{tau:>6} use {site} of {decl}@{decl_tau}"),
            Event::Begin { tau, id } => write!(f, "{tau:>6} begin {id}"),
            Event::End { tau, id } => write!(f, "{tau:>6} end {id}"),
            Event::Reboot { tau, off, .. } => write!(f, "{tau:>6} reboot +{off}"),
        }
    }
}

/// The trace with aborted region attempts removed. For each region instance,
/// everything between its begin marker and the last reboot before its end is
/// dropped; the reboots themselves stay.
pub fn committed(trace: &[Event]) -> Vec<Event> {
    let mut out: Vec<Event> = Vec::with_capacity(trace.len());
    // Index in `out` just past the open region's begin marker.
    let mut open: Option<usize> = None;
    for e in trace {
        match e {
            Event::Begin { .. } => {
                out.push(e.clone());
                open = Some(out.len());
            }
            Event::End { .. } => {
                out.push(e.clone());
                open = None;
            }
            Event::Reboot { in_region: true, .. } if open.is_some() => {
                let start = open.unwrap();
                let kept: Vec<Event> = out.drain(start..).filter(|x| matches!(x, Event::Reboot { .. })).collect();
                out.extend(kept);
                out.push(e.clone());
            }
            _ => out.push(e.clone()),
        }
    }
    out
}

/// Statement chains of the trace in execution order.
pub fn steps(trace: &[Event]) -> Vec<Provenance> {
    trace
        .iter()
        .filter_map(|e| match e {
            Event::Step { chain, .. } => Some(chain.clone()),
            _ => None,
        })
        .collect()
}

/// Input values of the trace in execution order.
pub fn input_values(trace: &[Event]) -> Vec<i64> {
    trace
        .iter()
        .filter_map(|e| match e {
            Event::Input { value, .. } => Some(*value),
            _ => None,
        })
        .collect()
}

pub fn dump(trace: &[Event]) -> String {
    let mut out = String::new();
    for e in trace {
        out.push_str(&e.to_string());
        out.push('\n');
    }
    out
}
