use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle::InputOracle;
use super::trace::Event;
use super::{Cell, ExecError, Mode, Options, Outcome, RVal, Run, Schedule, Tau};
use crate::lang::{Annot, BinOp, Expr, FuncDecl, Init, Name, OmegaLoc, Program, Site, Stmt, StmtKind, UnOp, Value};

#[derive(Clone, Copy, Debug)]
enum Slot {
    Cell(usize),
    Array(usize, usize),
}

#[derive(Clone, Debug)]
struct Binding {
    name: Name,
    slot: Slot,
    /// Declaration site and binding time of a fresh variable.
    fresh: Option<(Site, Tau)>,
}

#[derive(Clone, Debug)]
enum Work<'p> {
    Seq(&'p [Stmt], usize),
    /// Drop bindings and cells made since: env length and stack pointer.
    PopScope(usize, usize),
    EndAtomic(u32),
    Ret,
}

/// Where a returning call binds its result in the caller.
#[derive(Clone, Debug)]
struct Pending {
    var: Name,
    annot: Annot,
    site: Site,
}

#[derive(Clone, Debug)]
struct Frame<'p> {
    func: &'p FuncDecl,
    ctx: Vec<Site>,
    /// Stack pointer at activation; the frame's cells start here.
    base: usize,
    env: Vec<Binding>,
    work: Vec<Work<'p>>,
    pending: Option<Pending>,
}

/// Everything lost on power failure.
#[derive(Clone, Debug)]
struct Volatile<'p> {
    frames: Vec<Frame<'p>>,
    sp: usize,
}

enum Kappa<'p> {
    Jit,
    /// Inside a region while running without region support; markers only.
    Marked {
        depth: u32,
    },
    Atom {
        undo: Vec<(usize, Cell)>,
        saved: Volatile<'p>,
        depth: u32,
        /// Full snapshot of memory below the region's stack pointer, for the audit.
        audit: Option<Vec<Cell>>,
    },
}

pub(super) struct Machine<'p, 'o> {
    prog: &'p Program,
    mode: Mode,
    oracle: &'o mut dyn InputOracle,
    schedule: &'o Schedule,
    rng: ChaCha8Rng,
    fuel: u64,
    audit: bool,
    tau: Tau,
    steps: u64,
    failures: u64,
    nv: Vec<Cell>,
    vol: Volatile<'p>,
    kappa: Kappa<'p>,
    occ: BTreeMap<Site, u32>,
    fired: bool,
    trace: Vec<Event>,
    audit_failures: Vec<String>,
}

impl<'p, 'o> Machine<'p, 'o> {
    pub(super) fn new(prog: &'p Program, opts: &'o Options, oracle: &'o mut dyn InputOracle) -> Self {
        let entry = prog.entry_func();
        let seed = match &opts.schedule {
            Schedule::Random { seed, .. } => *seed,
            _ => 0,
        };
        let frame = Frame {
            func: entry,
            ctx: vec![],
            base: 0,
            env: vec![],
            work: vec![Work::Ret, Work::Seq(&entry.body, 0)],
            pending: None,
        };
        Machine {
            prog,
            mode: opts.mode,
            oracle,
            schedule: &opts.schedule,
            rng: ChaCha8Rng::seed_from_u64(seed),
            fuel: opts.fuel,
            audit: opts.audit,
            tau: 0,
            steps: 0,
            failures: 0,
            nv: vec![],
            vol: Volatile { frames: vec![frame], sp: 0 },
            kappa: Kappa::Jit,
            occ: BTreeMap::new(),
            fired: false,
            trace: vec![],
            audit_failures: vec![],
        }
    }

    pub(super) fn run(mut self) -> Run {
        let outcome = loop {
            if self.steps >= self.fuel {
                break Outcome::FuelExhausted;
            }
            match self.step() {
                Ok(Some(v)) => break Outcome::Finished(v),
                Ok(None) => {}
                Err(e) => break Outcome::Fault(e),
            }
        };
        Run {
            outcome,
            trace: self.trace,
            memory: self.nv,
            steps: self.steps,
            failures: self.failures,
            tau: self.tau,
            audit_failures: self.audit_failures,
        }
    }

    fn top(&mut self) -> &mut Frame<'p> {
        self.vol.frames.last_mut().expect("a frame is active")
    }

    /// Pops finished blocks and scopes until a real step is on top.
    fn normalize(&mut self) {
        loop {
            let f = self.vol.frames.last_mut().expect("a frame is active");
            match f.work.last() {
                Some(Work::Seq(b, i)) if *i >= b.len() => {
                    f.work.pop();
                }
                Some(Work::PopScope(n, sp)) => {
                    let (n, sp) = (*n, *sp);
                    f.env.truncate(n);
                    f.work.pop();
                    self.vol.sp = sp;
                }
                _ => return,
            }
        }
    }

    /// Runs one real step. Returns the entry's result once it returns.
    fn step(&mut self) -> Result<Option<RVal>, ExecError> {
        self.normalize();
        let (stmt, site) = match self.top().work.last().cloned() {
            Some(Work::Seq(b, i)) => {
                let s = &b[i];
                let site = s.label.map(|l| Site { func: self.top().func.name.clone(), label: l });
                (Some(s), site)
            }
            _ => (None, None),
        };
        let occ = site.as_ref().map(|s| {
            let c = self.occ.entry(s.clone()).or_insert(0);
            *c += 1;
            *c
        });
        if self.should_fail(site.as_ref(), occ) {
            self.power_failure();
            return Ok(None);
        }
        self.steps += 1;
        let r = match stmt {
            Some(s) => {
                if let Some(Work::Seq(_, i)) = self.top().work.last_mut() {
                    *i += 1;
                }
                self.exec_stmt(s, site, occ.unwrap_or(0)).map(|_| None)
            }
            None => match self.top().work.pop() {
                Some(Work::EndAtomic(id)) => {
                    self.end_atomic(id);
                    Ok(None)
                }
                Some(Work::Ret) => self.ret(),
                other => unreachable!("normalized work item {other:?}"),
            },
        };
        self.tau += 1;
        r
    }

    fn should_fail(&mut self, site: Option<&Site>, occ: Option<u32>) -> bool {
        match self.schedule {
            Schedule::None => false,
            Schedule::AtLabels { points, .. } => match (site, occ) {
                (Some(s), Some(o)) => points.contains(&(s.clone(), o)),
                _ => false,
            },
            Schedule::Exhaustive { k, .. } => {
                if !self.fired && self.steps == *k {
                    self.fired = true;
                    true
                } else {
                    false
                }
            }
            Schedule::Random { p, .. } => self.rng.gen_bool(p.clamp(0.0, 1.0)),
        }
    }

    fn off_time(&mut self) -> u64 {
        match self.schedule {
            Schedule::None => 0,
            Schedule::AtLabels { n, .. } | Schedule::Exhaustive { n, .. } => *n,
            Schedule::Random { .. } => self.rng.gen_range(1..=1000),
        }
    }

    fn power_failure(&mut self) {
        self.failures += 1;
        // LowPower.
        self.tau += 1;
        let off = self.off_time();
        match &mut self.kappa {
            Kappa::Jit | Kappa::Marked { .. } => {
                // The volatile state was saved at the failure point; restoring
                // it leaves the machine where it stopped.
                self.trace.push(Event::Reboot { tau: self.tau, off, in_region: false });
            }
            Kappa::Atom { undo, saved, depth, audit } => {
                for (c, v) in undo.iter() {
                    self.nv[*c] = v.clone();
                }
                self.vol = saved.clone();
                *depth = 0;
                if let Some(snap) = audit {
                    for (c, v) in snap.iter().enumerate() {
                        if self.nv[c].val != v.val {
                            self.audit_failures.push(format!(
                                "cell {c} holds {:?} after rollback, {:?} at region entry",
                                self.nv[c].val, v.val
                            ));
                        }
                    }
                }
                self.trace.push(Event::Reboot { tau: self.tau, off, in_region: true });
            }
        }
        self.tau += off;
    }

    fn end_atomic(&mut self, id: u32) {
        if let Kappa::Atom { depth, .. } | Kappa::Marked { depth } = &mut self.kappa {
            if *depth > 0 {
                *depth -= 1;
                return;
            }
        }
        self.kappa = Kappa::Jit;
        self.trace.push(Event::End { tau: self.tau, id });
    }

    fn begin_atomic(&mut self, id: u32, omega: &BTreeSet<OmegaLoc>, body: &'p [Stmt]) {
        let f = self.top();
        f.work.push(Work::EndAtomic(id));
        f.work.push(Work::Seq(body, 0));
        if self.mode == Mode::Jit {
            // Markers are inert without region support.
            if let Kappa::Marked { depth } = &mut self.kappa {
                *depth += 1;
            } else {
                self.kappa = Kappa::Marked { depth: 0 };
                self.trace.push(Event::Begin { tau: self.tau, id });
            }
            return;
        }
        if let Kappa::Atom { depth, .. } = &mut self.kappa {
            *depth += 1;
            return;
        }
        let mut cells = BTreeSet::new();
        for loc in omega {
            self.omega_cells(loc, &mut cells);
        }
        let undo = cells.into_iter().map(|c| (c, self.nv[c].clone())).collect();
        let audit = self.audit.then(|| self.nv[..self.vol.sp.min(self.nv.len())].to_vec());
        self.kappa = Kappa::Atom { undo, saved: self.vol.clone(), depth: 0, audit };
        self.trace.push(Event::Begin { tau: self.tau, id });
    }

    fn omega_cells(&self, loc: &OmegaLoc, out: &mut BTreeSet<usize>) {
        let env = &self.vol.frames.last().expect("frame").env;
        let find = |x: &Name| env.iter().rev().find(|b| &b.name == x).map(|b| b.slot);
        match loc {
            OmegaLoc::Var(x) => match find(x) {
                Some(Slot::Cell(c)) => {
                    out.insert(c);
                }
                Some(Slot::Array(b, n)) => out.extend(b..b + n),
                None => {}
            },
            OmegaLoc::Deref(r) => {
                if let Some(Slot::Cell(c)) = find(r) {
                    if let RVal::Ref(t) = self.nv[c].val {
                        out.insert(t);
                    }
                }
            }
        }
    }

    /// Bump-allocates consecutive cells at the stack pointer.
    fn alloc(&mut self, cells: Vec<Cell>) -> usize {
        let base = self.vol.sp;
        for (i, c) in cells.into_iter().enumerate() {
            let at = base + i;
            if at < self.nv.len() {
                self.nv[at] = c;
            } else {
                self.nv.push(c);
            }
            self.vol.sp = at + 1;
        }
        base
    }

    fn lookup(&self, x: &Name) -> Result<(usize, &Binding), ExecError> {
        let env = &self.vol.frames.last().expect("frame").env;
        env.iter().enumerate().rev().find(|(_, b)| &b.name == x).ok_or_else(|| ExecError::Unbound(x.to_string()))
    }

    fn cell_of(&self, x: &Name) -> Result<usize, ExecError> {
        match self.lookup(x)?.1.slot {
            Slot::Cell(c) => Ok(c),
            Slot::Array(..) => Err(ExecError::Type(format!("`{x}` is an array"))),
        }
    }

    fn deref_target(&self, r: &Name) -> Result<usize, ExecError> {
        match self.nv[self.cell_of(r)?].val {
            RVal::Ref(t) => Ok(t),
            _ => Err(ExecError::Type(format!("`{r}` is not a reference"))),
        }
    }

    fn elem(&self, a: &Name, i: i64) -> Result<usize, ExecError> {
        match self.lookup(a)?.1.slot {
            Slot::Array(b, n) if i >= 0 && (i as usize) < n => Ok(b + i as usize),
            Slot::Array(_, n) => Err(ExecError::OutOfBounds { array: a.to_string(), index: i, len: n }),
            Slot::Cell(_) => Err(ExecError::Type(format!("`{a}` is not an array"))),
        }
    }

    fn note_use(&self, x: &Name, used: &mut Vec<(Site, Tau)>) {
        if let Ok((_, b)) = self.lookup(x) {
            if let Some(f) = &b.fresh {
                if !used.contains(f) {
                    used.push(f.clone());
                }
            }
        }
    }

    fn eval(&self, e: &Expr, used: &mut Vec<(Site, Tau)>) -> Result<Cell, ExecError> {
        match e {
            Expr::Var(x) => {
                self.note_use(x, used);
                Ok(self.nv[self.cell_of(x)?].clone())
            }
            Expr::Val(v) => Ok(Cell::new(match v {
                Value::Int(n) => RVal::Int(*n),
                Value::Bool(b) => RVal::Bool(*b),
                Value::Ref(x) => RVal::Ref(self.cell_of(x)?),
                Value::RefElem(a, i) => RVal::Ref(self.elem(a, *i as i64)?),
            })),
            Expr::Index(a, i) => {
                self.note_use(a, used);
                let ic = self.eval(i, used)?;
                let idx = ic.val.int()?;
                let mut c = self.nv[self.elem(a, idx)?].clone();
                c.taint.extend(ic.taint);
                Ok(c)
            }
            Expr::Un(UnOp::Deref, inner) => match &**inner {
                Expr::Var(r) => {
                    self.note_use(r, used);
                    Ok(self.nv[self.deref_target(r)?].clone())
                }
                _ => Err(ExecError::Type("dereference of a non-variable".into())),
            },
            Expr::Un(op, inner) => {
                let c = self.eval(inner, used)?;
                let val = match op {
                    UnOp::Neg => RVal::Int(c.val.int()?.checked_neg().ok_or(ExecError::Overflow)?),
                    UnOp::Not => RVal::Bool(!c.val.bool()?),
                    UnOp::Deref => unreachable!(),
                };
                Ok(Cell { val, taint: c.taint })
            }
            Expr::Bin(op, l, r) => {
                let a = self.eval(l, used)?;
                let b = self.eval(r, used)?;
                let val = bin(*op, &a.val, &b.val)?;
                let mut taint = a.taint;
                taint.extend(b.taint);
                Ok(Cell { val, taint })
            }
        }
    }

    fn ctx(&self) -> Vec<Site> {
        self.vol.frames.last().expect("frame").ctx.clone()
    }

    fn emit_uses(&mut self, site: &Site, used: Vec<(Site, Tau)>) {
        for (decl, decl_tau) in used {
            self.trace.push(Event::Use { tau: self.tau, site: site.clone(), decl, decl_tau });
        }
    }

    fn def(&mut self, site: &Site, taint: &BTreeSet<Tau>) {
        let ctx = self.ctx();
        self.trace.push(Event::Def { tau: self.tau, site: site.clone(), ctx, taint: taint.clone() });
    }

    /// Binds a scalar and records its annotations.
    fn bind(&mut self, var: &Name, annot: Annot, site: &Site, cell: Cell) {
        let taint = cell.taint.clone();
        let c = self.alloc(vec![cell]);
        self.def(site, &taint);
        let ctx = self.ctx();
        if annot.fresh {
            self.trace.push(Event::Fresh {
                tau: self.tau,
                site: site.clone(),
                ctx: ctx.clone(),
                inputs: taint.clone(),
            });
        }
        if let Some(n) = annot.consistent {
            self.trace.push(Event::Cnst { tau: self.tau, site: site.clone(), ctx, set: n, inputs: taint });
        }
        let fresh = annot.fresh.then(|| (site.clone(), self.tau));
        self.top().env.push(Binding { name: var.clone(), slot: Slot::Cell(c), fresh });
    }

    fn exec_stmt(&mut self, s: &'p Stmt, site: Option<Site>, occ: u32) -> Result<(), ExecError> {
        if let StmtKind::Atomic { id, omega, body } = &s.kind {
            self.begin_atomic(*id, omega, body);
            return Ok(());
        }
        let site = site.expect("labeled statement");
        let mut chain = self.ctx();
        chain.push(site.clone());
        self.trace.push(Event::Step { tau: self.tau, chain: chain.clone(), occ });
        let mut used = vec![];
        match &s.kind {
            StmtKind::Skip => {}
            StmtKind::Assign(x, e) => {
                let v = self.eval(e, &mut used)?;
                let c = self.cell_of(x)?;
                self.def(&site, &v.taint);
                self.nv[c] = v;
            }
            StmtKind::AssignIndex(a, i, e) => {
                let ic = self.eval(i, &mut used)?;
                let v = self.eval(e, &mut used)?;
                let c = self.elem(a, ic.val.int()?)?;
                self.def(&site, &v.taint);
                self.nv[c] = v;
            }
            StmtKind::AssignDeref(r, e) => {
                let v = self.eval(e, &mut used)?;
                let t = self.deref_target(r)?;
                self.def(&site, &v.taint);
                self.nv[t] = v;
            }
            StmtKind::Let { var, annot, init } => match init {
                Init::Expr(e) => {
                    let v = self.eval(e, &mut used)?;
                    self.bind(var, *annot, &site, v);
                }
                Init::Input(_) => {
                    let value = self.oracle.input(self.tau, &chain);
                    self.trace.push(Event::Input { tau: self.tau, prov: chain, value });
                    let cell = Cell { val: RVal::Int(value), taint: BTreeSet::from([self.tau]) };
                    self.bind(var, *annot, &site, cell);
                }
                Init::Array(es) => {
                    let mut cells = vec![];
                    for e in es {
                        cells.push(self.eval(e, &mut used)?);
                    }
                    let taint: BTreeSet<Tau> = cells.iter().flat_map(|c| c.taint.iter().copied()).collect();
                    let n = cells.len();
                    let b = self.alloc(cells);
                    self.def(&site, &taint);
                    self.top().env.push(Binding { name: var.clone(), slot: Slot::Array(b, n), fresh: None });
                }
                Init::Call { callee, arg } => {
                    let g = self.prog.func(callee).ok_or_else(|| ExecError::Unbound(callee.to_string()))?;
                    let argv = match arg {
                        Some(e) => Some(self.eval(e, &mut used)?),
                        None => None,
                    };
                    let base = self.vol.sp;
                    let mut env = vec![];
                    if let (Some(p), Some(v)) = (&g.param, argv) {
                        let c = self.alloc(vec![v]);
                        env.push(Binding { name: p.clone(), slot: Slot::Cell(c), fresh: None });
                    }
                    self.vol.frames.push(Frame {
                        func: g,
                        ctx: chain,
                        base,
                        env,
                        work: vec![Work::Ret, Work::Seq(&g.body, 0)],
                        pending: Some(Pending { var: var.clone(), annot: *annot, site: site.clone() }),
                    });
                    // Uses belong to the caller's statement.
                    let tau = self.tau;
                    for (decl, decl_tau) in used {
                        self.trace.push(Event::Use { tau, site: site.clone(), decl, decl_tau });
                    }
                    return Ok(());
                }
            },
            StmtKind::If { cond, then, els } => {
                let c = self.eval(cond, &mut used)?;
                let arm = if c.val.bool()? { then } else { els };
                let sp = self.vol.sp;
                let f = self.top();
                let n = f.env.len();
                f.work.push(Work::PopScope(n, sp));
                f.work.push(Work::Seq(arm, 0));
            }
            StmtKind::Atomic { .. } => unreachable!(),
        }
        self.emit_uses(&site, used);
        Ok(())
    }

    fn ret(&mut self) -> Result<Option<RVal>, ExecError> {
        let f = self.vol.frames.last().expect("frame");
        let v = self.eval(&f.func.ret, &mut vec![])?;
        let frame = self.vol.frames.pop().expect("frame");
        self.vol.sp = frame.base;
        match frame.pending {
            None => Ok(Some(v.val)),
            Some(p) => {
                self.bind(&p.var, p.annot, &p.site, v);
                Ok(None)
            }
        }
    }
}

fn bin(op: BinOp, a: &RVal, b: &RVal) -> Result<RVal, ExecError> {
    use BinOp::*;
    Ok(match op {
        Add => RVal::Int(a.int()?.checked_add(b.int()?).ok_or(ExecError::Overflow)?),
        Sub => RVal::Int(a.int()?.checked_sub(b.int()?).ok_or(ExecError::Overflow)?),
        Mul => RVal::Int(a.int()?.checked_mul(b.int()?).ok_or(ExecError::Overflow)?),
        Div | Rem => {
            let d = b.int()?;
            if d == 0 {
                return Err(ExecError::DivByZero);
            }
            let r = if op == Div { a.int()?.checked_div(d) } else { a.int()?.checked_rem(d) };
            RVal::Int(r.ok_or(ExecError::Overflow)?)
        }
        Lt => RVal::Bool(a.int()? < b.int()?),
        Le => RVal::Bool(a.int()? <= b.int()?),
        Gt => RVal::Bool(a.int()? > b.int()?),
        Ge => RVal::Bool(a.int()? >= b.int()?),
        Eq | Ne => {
            let eq = match (a, b) {
                (RVal::Int(x), RVal::Int(y)) => x == y,
                (RVal::Bool(x), RVal::Bool(y)) => x == y,
                _ => return Err(ExecError::Type(format!("cannot compare {a:?} with {b:?}"))),
            };
            RVal::Bool(if op == Eq { eq } else { !eq })
        }
        And => RVal::Bool(a.bool()? && b.bool()?),
        Or => RVal::Bool(a.bool()? || b.bool()?),
    })
}
