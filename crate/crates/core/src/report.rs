//! JSON report shapes shared by the CLI and tests. Field order is fixed by
//! declaration order and maps are ordered, so reports are stable.

use std::collections::BTreeMap;
use std::fmt::Display;

use serde::{Serialize, Serializer};

use crate::checker::Verdict;
use crate::infer::Inference;
use crate::lang::Diagnostic;
use crate::policy::{Policy, PolicyDecls, PolicyMap, PolicyWarning};
use crate::taint::{show_provenance, FuncSummaries};
use crate::verify::{ExhaustiveReport, SimRow};

/// Serializes any `Display` value as its string form.
pub fn ser_display<T: Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(v)
}

#[derive(Clone, Debug, Serialize)]
pub struct SummaryReport {
    pub func: String,
    pub local: Vec<String>,
    pub callers: BTreeMap<String, Vec<String>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PolicyReport {
    pub id: String,
    pub kind: &'static str,
    pub decls: Vec<String>,
    pub uses: Vec<String>,
    pub inputs: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RegionReport {
    pub id: u32,
    pub policy: String,
    pub func: String,
    pub ctx: String,
    pub start: String,
    pub end: String,
    pub omega: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AnalyzeReport {
    pub file: String,
    pub diagnostics: Vec<Diagnostic>,
    pub summaries: Vec<SummaryReport>,
    pub policies: Vec<PolicyReport>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TransformReport {
    pub file: String,
    pub policy_map: BTreeMap<String, Vec<String>>,
    pub regions: Vec<RegionReport>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub file: String,
    pub policy_map: BTreeMap<String, Vec<String>>,
    pub summaries: Verdict,
    pub regions: Verdict,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SimulateReport {
    pub file: String,
    pub mode: String,
    pub schedule: String,
    pub pathological: Option<SimRow>,
    pub exhaustive: Option<ExhaustiveReport>,
    /// Policy id to the percentage of runs violating it.
    pub per_policy: BTreeMap<String, f64>,
    pub runs: usize,
    pub violating_runs: usize,
}

pub fn summaries(fs: &FuncSummaries) -> Vec<SummaryReport> {
    fs.funcs
        .iter()
        .filter(|(_, s)| !s.is_empty())
        .map(|(f, s)| SummaryReport {
            func: f.to_string(),
            local: s.local.iter().map(|e| e.to_string()).collect(),
            callers: s
                .callers
                .iter()
                .filter(|(_, es)| !es.is_empty())
                .map(|(site, es)| (site.to_string(), es.iter().map(|e| e.to_string()).collect()))
                .collect(),
        })
        .collect()
}

pub fn policies(pd: &PolicyDecls) -> Vec<PolicyReport> {
    pd.iter()
        .map(|(id, pol)| {
            let (kind, decls, uses) = match pol {
                Policy::Fresh { decl, uses, .. } => {
                    ("fresh", vec![decl.to_string()], uses.iter().map(|u| u.to_string()).collect())
                }
                Policy::Consistent { decls, .. } => {
                    ("consistent", decls.iter().map(|d| d.to_string()).collect(), vec![])
                }
            };
            PolicyReport {
                id: id.clone(),
                kind,
                decls,
                uses,
                inputs: pol.inputs().iter().map(|i| show_provenance(i)).collect(),
            }
        })
        .collect()
}

pub fn policy_map(pm: &PolicyMap) -> BTreeMap<String, Vec<String>> {
    pm.regions.iter().map(|(a, ps)| (a.to_string(), ps.clone())).collect()
}

/// Reads a policy map back from its report form.
pub fn parse_policy_map(m: &BTreeMap<String, Vec<String>>) -> Result<PolicyMap, String> {
    let mut pm = PolicyMap::default();
    for (k, ps) in m {
        let a: u32 = k.parse().map_err(|_| format!("region id `{k}` is not a number"))?;
        pm.regions.insert(a, ps.clone());
    }
    Ok(pm)
}

pub fn regions(inf: &Inference) -> Vec<RegionReport> {
    inf.regions
        .iter()
        .map(|r| RegionReport {
            id: r.id,
            policy: r.policy.clone(),
            func: r.func.to_string(),
            ctx: show_provenance(&r.ctx),
            start: r.start.to_string(),
            end: r.end.to_string(),
            omega: r.omega.iter().map(|o| o.to_string()).collect(),
        })
        .collect()
}

pub fn warnings(ws: &[PolicyWarning]) -> Vec<String> {
    ws.iter().map(|w| format!("{}: {}", w.policy, w.message)).collect()
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize")
}
