//! Golden outputs for the corpus. Run with `INTERMIT_BLESS=1` to rewrite them.

mod common;

use common::{corpus_dir, load, CORPUS};
use intermit::infer::infer_atomic;
use intermit::lang::pretty_print;
use intermit::report::{self, AnalyzeReport, TransformReport};
use intermit::taint::show_provenance;

fn compare(file: &str, actual: &str) {
    let path = corpus_dir().join("golden").join(file);
    if std::env::var_os("INTERMIT_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden {}", path.display()));
    assert_eq!(actual, expected, "golden mismatch for {file}");
}

#[test]
fn corpus_goldens() {
    for name in CORPUS {
        let a = load(name);
        let inf = infer_atomic(&a.program, &a.policies);
        let ar = AnalyzeReport {
            file: format!("{name}.oct"),
            diagnostics: a.diagnostics.clone(),
            summaries: report::summaries(&a.summaries),
            policies: report::policies(&a.policies),
            warnings: report::warnings(&a.warnings),
        };
        let tr = TransformReport {
            file: format!("{name}.oct"),
            policy_map: report::policy_map(&inf.pm),
            regions: report::regions(&inf),
            warnings: report::warnings(&inf.warnings),
        };
        compare(&format!("{name}.analyze.json"), &(report::to_json(&ar) + "\n"));
        compare(&format!("{name}.transform.json"), &(report::to_json(&tr) + "\n"));
        compare(&format!("{name}.transformed.oct"), &pretty_print(&inf.program));
    }
}

#[test]
fn tmp_policy_carries_call_chain() {
    let a = load("tmp_chain");
    let pol = a.policies.get("fresh@app:1").unwrap();
    let chains: Vec<String> = pol.inputs().iter().map(|c| show_provenance(c)).collect();
    assert_eq!(chains, ["(app,1)::(tmp,0)", "(app,1)::(tmp,1)"]);
}

#[test]
fn confirm_two_chains_and_region_in_confirm() {
    let a = load("confirm");
    let pol = a.policies.get("consistent@1").unwrap();
    let chains: Vec<String> = pol.inputs().iter().map(|c| show_provenance(c)).collect();
    assert_eq!(chains, ["(app,1)::(confirm,2)::(pres,1)::(sense,0)", "(app,1)::(confirm,3)::(pres,1)::(sense,0)"]);
    let inf = infer_atomic(&a.program, &a.policies);
    assert_eq!(inf.regions.len(), 1);
    assert_eq!(&*inf.regions[0].func, "confirm");
}
