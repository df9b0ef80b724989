use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use intermit::checker::{check_regions, check_summaries, derive_policy_map};
use intermit::exec::{self, ClockOracle, InputOracle, Mode, Options, ProvenanceOracle, Schedule};
use intermit::infer::infer_atomic;
use intermit::lang::{self, Program, StmtKind};
use intermit::report::{self, AnalyzeReport, CheckReport, SimulateReport, TransformReport};
use intermit::{analyze, cfg, verify, Analysis};

#[derive(Parser)]
#[command(name = "intermit", version, about = "Freshness and consistency regions for intermittent programs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScheduleKind {
    None,
    Pathological,
    Exhaustive,
    Random,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OracleKind {
    Clock,
    Provenance,
}

#[derive(Subcommand)]
enum Cmd {
    /// Taint summaries and policies.
    Analyze {
        file: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Insert atomic regions; prints the transformed program.
    Transform {
        file: PathBuf,
        /// Write the transformed program here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Check region placement. With one file, checks its own regions.
    Check {
        original: PathBuf,
        transformed: Option<PathBuf>,
        /// Policy map from a transform report; derived from the regions otherwise.
        #[arg(long)]
        pm: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Inject power failures and report policy violations.
    Simulate {
        file: PathBuf,
        /// `jit` runs the program as written; `atomic` runs it with regions,
        /// inferring them first if it has none.
        #[arg(long, value_enum, default_value = "atomic")]
        mode: Mode,
        #[arg(long, value_enum, default_value = "pathological")]
        schedule: ScheduleKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        runs: u64,
        #[arg(long, default_value_t = 100_000)]
        fuel: u64,
        /// Failure probability per step for the random schedule.
        #[arg(long, default_value_t = 0.05)]
        rate: f64,
        /// Outage length for pathological runs.
        #[arg(long, default_value_t = 100)]
        off: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Control-flow graphs in DOT.
    DumpCfg {
        file: PathBuf,
        /// Only this function.
        #[arg(long)]
        func: Option<String>,
    },
    /// One execution with its trace.
    Run {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "jit")]
        mode: Mode,
        /// `none` or `random`.
        #[arg(long, value_enum, default_value = "none")]
        schedule: ScheduleKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        fuel: u64,
        #[arg(long, default_value_t = 0.05)]
        rate: f64,
        #[arg(long, value_enum, default_value = "clock")]
        oracle: OracleKind,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// Exit with status 1 after printing a diagnostic.
struct Fail(String);

fn load(path: &Path) -> Result<Program, Fail> {
    let src = std::fs::read_to_string(path).map_err(|e| Fail(format!("{}: {e}", path.display())))?;
    lang::parse(&src).map_err(|e| Fail(format!("{}: {e}", path.display())))
}

fn load_valid(path: &Path) -> Result<Analysis, Fail> {
    let a = analyze(load(path)?);
    if !a.diagnostics.is_empty() {
        let msgs: Vec<String> =
            a.diagnostics.iter().map(|d| format!("{}: {} {}", path.display(), d.site, d.message)).collect();
        return Err(Fail(msgs.join("\n")));
    }
    Ok(a)
}

fn write_report<T: serde::Serialize>(path: &Option<PathBuf>, v: &T) -> Result<(), Fail> {
    if let Some(p) = path {
        std::fs::write(p, report::to_json(v) + "\n").map_err(|e| Fail(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn has_regions(p: &Program) -> bool {
    let mut found = false;
    for f in &p.funcs {
        lang::walk_block(&f.body, &mut |s| found |= matches!(s.kind, StmtKind::Atomic { .. }));
    }
    found
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(Fail(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<u8, Fail> {
    match cli.cmd {
        Cmd::Analyze { file, report: out } => {
            let a = analyze(load(&file)?);
            let rep = AnalyzeReport {
                file: file.display().to_string(),
                diagnostics: a.diagnostics.clone(),
                summaries: report::summaries(&a.summaries),
                policies: report::policies(&a.policies),
                warnings: report::warnings(&a.warnings),
            };
            write_report(&out, &rep)?;
            for d in &a.diagnostics {
                eprintln!("{}: {} {}", file.display(), d.site, d.message);
            }
            for w in &rep.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", a.summaries.dump());
            print!("{}", a.policies.dump());
            Ok(if a.diagnostics.is_empty() { 0 } else { 1 })
        }
        Cmd::Transform { file, output, report: out } => {
            let a = load_valid(&file)?;
            let inf = infer_atomic(&a.program, &a.policies);
            let mut warnings = report::warnings(&a.warnings);
            warnings.extend(report::warnings(&inf.warnings));
            let rep = TransformReport {
                file: file.display().to_string(),
                policy_map: report::policy_map(&inf.pm),
                regions: report::regions(&inf),
                warnings,
            };
            write_report(&out, &rep)?;
            for w in &rep.warnings {
                eprintln!("warning: {w}");
            }
            let text = lang::pretty_print(&inf.program);
            match output {
                Some(p) => std::fs::write(&p, text).map_err(|e| Fail(format!("{}: {e}", p.display())))?,
                None => print!("{text}"),
            }
            Ok(0)
        }
        Cmd::Check { original, transformed, pm, report: out } => {
            let a = load_valid(&original)?;
            let t = match &transformed {
                Some(path) => load_valid(path)?,
                None => a.clone(),
            };
            if t.policies != a.policies {
                return Err(Fail("the transformed program's policies differ from the original's".into()));
            }
            let pmap = match pm {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| Fail(format!("{}: {e}", path.display())))?;
                    let v: serde_json::Value =
                        serde_json::from_str(&text).map_err(|e| Fail(format!("{}: {e}", path.display())))?;
                    let m: BTreeMap<String, Vec<String>> = serde_json::from_value(v["policy_map"].clone())
                        .map_err(|e| Fail(format!("{}: policy_map: {e}", path.display())))?;
                    report::parse_policy_map(&m).map_err(Fail)?
                }
                None => derive_policy_map(&t.program, &t.policies),
            };
            let sums = check_summaries(&a.program, &a.summaries, &a.policies);
            let regs = check_regions(&t.program, &t.policies, &pmap);
            let ok = sums.ok && regs.ok;
            let rep = CheckReport {
                file: transformed.as_ref().unwrap_or(&original).display().to_string(),
                policy_map: report::policy_map(&pmap),
                summaries: sums,
                regions: regs,
                ok,
            };
            write_report(&out, &rep)?;
            for d in rep.summaries.diagnostics.iter().chain(&rep.regions.diagnostics) {
                println!("{d}");
            }
            println!("{}", if ok { "ok" } else { "fail" });
            Ok(if ok { 0 } else { 2 })
        }
        Cmd::Simulate { file, mode, schedule, seed, runs, fuel, rate, off, report: out } => {
            let a = load_valid(&file)?;
            let prog = match mode {
                Mode::Atomic if !has_regions(&a.program) => infer_atomic(&a.program, &a.policies).program,
                _ => a.program.clone(),
            };
            let pd = &a.policies;
            let mut rep = SimulateReport {
                file: file.display().to_string(),
                mode: format!("{mode:?}").to_lowercase(),
                schedule: schedule.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default(),
                pathological: None,
                exhaustive: None,
                per_policy: BTreeMap::new(),
                runs: 0,
                violating_runs: 0,
            };
            let mut opts_list: Vec<Options> = vec![];
            match schedule {
                ScheduleKind::None => opts_list.push(Options { mode, schedule: Schedule::None, fuel, audit: false }),
                ScheduleKind::Pathological => {
                    for pt in verify::pathological_points(&prog, pd, fuel) {
                        let s = Schedule::AtLabels { points: BTreeSet::from([pt]), n: off };
                        opts_list.push(Options { mode, schedule: s, fuel, audit: false });
                    }
                    if mode == Mode::Atomic {
                        rep.pathological = Some(verify::simulate(&rep.file, &a.program, &prog, pd, off, fuel));
                    }
                }
                ScheduleKind::Exhaustive => {
                    rep.exhaustive = Some(verify::exhaustive(&prog, pd, &[1, 10, 1000], mode, fuel));
                }
                ScheduleKind::Random => {
                    for s in seed..seed + runs {
                        opts_list.push(Options {
                            mode,
                            schedule: Schedule::Random { seed: s, p: rate },
                            fuel,
                            audit: false,
                        });
                    }
                }
            }
            let mut counts: BTreeMap<String, usize> = pd.non_vacuous().into_iter().map(|id| (id, 0)).collect();
            for opts in &opts_list {
                let (_, v, _) = verify::run_and_check(&prog, pd, opts, &mut ClockOracle);
                rep.runs += 1;
                if !v.is_empty() {
                    rep.violating_runs += 1;
                }
                for id in v {
                    *counts.entry(id).or_default() += 1;
                }
            }
            if let Some(e) = &rep.exhaustive {
                rep.runs = e.runs;
                rep.violating_runs = e.violations;
            }
            let n = rep.runs.max(1) as f64;
            if rep.exhaustive.is_none() {
                rep.per_policy = counts.into_iter().map(|(k, c)| (k, 100.0 * c as f64 / n)).collect();
            }
            write_report(&out, &rep)?;
            println!("{} {} {}: {}/{} runs violating", rep.file, rep.mode, rep.schedule, rep.violating_runs, rep.runs);
            for (id, p) in &rep.per_policy {
                println!("  {id}: {p:.1}%");
            }
            if let Some(row) = &rep.pathological {
                println!(
                    "  pathological points {}: jit {:.0}%, atomic {:.0}%",
                    row.points, row.jit_pct, row.atomic_pct
                );
            }
            Ok(if rep.violating_runs > 0 { 2 } else { 0 })
        }
        Cmd::DumpCfg { file, func } => {
            let p = load(&file)?;
            for f in &p.funcs {
                if func.as_deref().is_some_and(|g| g != &*f.name) {
                    continue;
                }
                print!("{}", cfg::build_cfg(f).to_dot());
            }
            Ok(0)
        }
        Cmd::Run { file, mode, schedule, seed, fuel, rate, oracle, report: out } => {
            let a = load_valid(&file)?;
            let sched = match schedule {
                ScheduleKind::None => Schedule::None,
                ScheduleKind::Random => Schedule::Random { seed, p: rate },
                _ => return Err(Fail("`run` takes --schedule none or random".into())),
            };
            let opts = Options { mode, schedule: sched, fuel, audit: true };
            let mut clock = ClockOracle;
            let mut prov = ProvenanceOracle { seed };
            let o: &mut dyn InputOracle = match oracle {
                OracleKind::Clock => &mut clock,
                OracleKind::Provenance => &mut prov,
            };
            let r = exec::run(&a.program, &opts, o);
            let v = verify::check_trace(&a.policies, &r.trace);
            if let Some(p) = &out {
                let doc = serde_json::json!({
                    "file": file.display().to_string(),
                    "outcome": r.outcome,
                    "steps": r.steps,
                    "failures": r.failures,
                    "violations": v,
                    "trace": r.trace,
                });
                std::fs::write(p, serde_json::to_string_pretty(&doc).expect("serializes") + "\n")
                    .map_err(|e| Fail(format!("{}: {e}", p.display())))?;
            }
            print!("{}", exec::trace::dump(&r.trace));
            println!("outcome {:?}, {} steps, {} failures", r.outcome, r.steps, r.failures);
            for a in &r.audit_failures {
                println!("audit: {a}");
            }
            for id in &v {
                println!("violated {id}");
            }
            Ok(if !v.is_empty() {
                2
            } else if matches!(r.outcome, exec::Outcome::Fault(_)) {
                1
            } else {
                0
            })
        }
    }
}
