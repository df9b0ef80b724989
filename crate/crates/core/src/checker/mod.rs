//! Independent verification of analysis results.
//!
//! [`check_summaries`] re-derives input dependences rule by rule and checks
//! that the supplied summaries and policies account for them.
//! [`check_regions`] walks every path from the entry and checks that each
//! policy's instructions run inside its atomic region, all within one
//! instance of that region.

mod regions;
mod summaries;

use std::fmt;

use serde::Serialize;

pub use regions::{check_regions, derive_policy_map};
pub use summaries::check_summaries;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct CheckDiag {
    pub rule: &'static str,
    pub site: String,
    pub message: String,
}

impl fmt::Display for CheckDiag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.rule, self.site, self.message)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub ok: bool,
    pub diagnostics: Vec<CheckDiag>,
}

impl Verdict {
    fn from_diags(mut diagnostics: Vec<CheckDiag>) -> Self {
        diagnostics.sort();
        diagnostics.dedup();
        Verdict { ok: diagnostics.is_empty(), diagnostics }
    }
}
