//! Basic blocks, dominators and post-dominators for one function.
//!
//! An `if` statement's label closes the block it appears in; its arms and
//! join get blocks of their own even when empty. Atomic regions are
//! transparent. Every graph ends in an empty synthetic exit block that the
//! function's `ret` lands on.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use thiserror::Error;

use crate::lang::{Block, FuncDecl, Label, Name, StmtKind};

pub type BlockId = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BasicBlock {
    pub id: BlockId,
    pub func: Name,
    pub labels: Vec<Label>,
    pub succs: Vec<BlockId>,
    pub preds: Vec<BlockId>,
    /// For a join block, the label of the `if` it closes.
    pub join_of: Option<Label>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CfgError {
    #[error("no blocks given")]
    Empty,
    #[error("blocks belong to different functions")]
    MixedFunctions,
}

#[derive(Clone, Debug)]
pub struct Cfg {
    pub func: Name,
    pub blocks: Vec<BasicBlock>,
    pub entry: BlockId,
    pub exit: BlockId,
    block_of: BTreeMap<Label, BlockId>,
    dom: Vec<BTreeSet<BlockId>>,
    pdom: Vec<BTreeSet<BlockId>>,
}

/// A block reference qualified by its function, as handed to the
/// common-dominator queries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct BlockRef<'a> {
    pub func: &'a str,
    pub id: BlockId,
}

pub fn build_cfg(f: &FuncDecl) -> Cfg {
    let mut b = Builder { func: f.name.clone(), blocks: vec![] };
    let entry = b.fresh(None);
    let last = b.lower(&f.body, entry);
    let exit = b.fresh(None);
    b.edge(last, exit);
    let blocks = b.blocks;
    let mut block_of = BTreeMap::new();
    for bb in &blocks {
        for &l in &bb.labels {
            block_of.insert(l, bb.id);
        }
    }
    let dom = dominators(&blocks, entry, |bb| &bb.preds);
    let pdom = dominators(&blocks, exit, |bb| &bb.succs);
    Cfg { func: f.name.clone(), blocks, entry, exit, block_of, dom, pdom }
}

struct Builder {
    func: Name,
    blocks: Vec<BasicBlock>,
}

impl Builder {
    fn fresh(&mut self, join_of: Option<Label>) -> BlockId {
        let id = self.blocks.len();
        self.blocks.push(BasicBlock {
            id,
            func: self.func.clone(),
            labels: vec![],
            succs: vec![],
            preds: vec![],
            join_of,
        });
        id
    }

    fn edge(&mut self, a: BlockId, b: BlockId) {
        self.blocks[a].succs.push(b);
        self.blocks[b].preds.push(a);
    }

    /// Lowers `body` starting in block `cur`; returns the block control ends in.
    fn lower(&mut self, body: &Block, mut cur: BlockId) -> BlockId {
        for s in body {
            match &s.kind {
                StmtKind::Atomic { body, .. } => cur = self.lower(body, cur),
                StmtKind::If { then, els, .. } => {
                    let l = s.label();
                    self.blocks[cur].labels.push(l);
                    let t = self.fresh(None);
                    let e = self.fresh(None);
                    self.edge(cur, t);
                    self.edge(cur, e);
                    let t_end = self.lower(then, t);
                    let e_end = self.lower(els, e);
                    let join = self.fresh(Some(l));
                    self.edge(t_end, join);
                    self.edge(e_end, join);
                    cur = join;
                }
                _ => self.blocks[cur].labels.push(s.label()),
            }
        }
        cur
    }
}

/// Iterative dataflow: dom(n) = {n} ∪ ⋂ dom(p) over `edges(n)`.
fn dominators(
    blocks: &[BasicBlock],
    root: BlockId,
    edges: impl Fn(&BasicBlock) -> &Vec<BlockId>,
) -> Vec<BTreeSet<BlockId>> {
    let all: BTreeSet<BlockId> = (0..blocks.len()).collect();
    let mut dom: Vec<BTreeSet<BlockId>> = vec![all; blocks.len()];
    dom[root] = BTreeSet::from([root]);
    let mut changed = true;
    while changed {
        changed = false;
        for bb in blocks {
            if bb.id == root {
                continue;
            }
            let mut acc: Option<BTreeSet<BlockId>> = None;
            for &p in edges(bb) {
                acc = Some(match acc {
                    None => dom[p].clone(),
                    Some(a) => a.intersection(&dom[p]).copied().collect(),
                });
            }
            let mut next = acc.unwrap_or_default();
            next.insert(bb.id);
            if next != dom[bb.id] {
                dom[bb.id] = next;
                changed = true;
            }
        }
    }
    dom
}

impl Cfg {
    pub fn block_of(&self, l: Label) -> Option<BlockId> {
        self.block_of.get(&l).copied()
    }

    pub fn block(&self, id: BlockId) -> &BasicBlock {
        &self.blocks[id]
    }

    /// Whether `a` dominates `b`.
    pub fn dominates(&self, a: BlockId, b: BlockId) -> bool {
        self.dom[b].contains(&a)
    }

    pub fn post_dominates(&self, a: BlockId, b: BlockId) -> bool {
        self.pdom[b].contains(&a)
    }

    pub fn dominators_of(&self, b: BlockId) -> &BTreeSet<BlockId> {
        &self.dom[b]
    }

    pub fn post_dominators_of(&self, b: BlockId) -> &BTreeSet<BlockId> {
        &self.pdom[b]
    }

    pub fn idom(&self, b: BlockId) -> Option<BlockId> {
        immediate(&self.dom, b)
    }

    pub fn ipdom(&self, b: BlockId) -> Option<BlockId> {
        immediate(&self.pdom, b)
    }

    pub fn refs(&self, ids: impl IntoIterator<Item = BlockId>) -> Vec<BlockRef<'_>> {
        ids.into_iter().map(|id| BlockRef { func: &self.func, id }).collect()
    }

    /// Lowest block dominating every block in `set`.
    pub fn closest_common_dom(&self, set: &[BlockRef<'_>]) -> Result<BlockId, CfgError> {
        self.closest(set, &self.dom)
    }

    /// Lowest block post-dominating every block in `set`.
    pub fn closest_common_postdom(&self, set: &[BlockRef<'_>]) -> Result<BlockId, CfgError> {
        self.closest(set, &self.pdom)
    }

    fn closest(&self, set: &[BlockRef<'_>], rel: &[BTreeSet<BlockId>]) -> Result<BlockId, CfgError> {
        let first = set.first().ok_or(CfgError::Empty)?;
        if set.iter().any(|r| r.func != &*self.func) {
            return Err(CfgError::MixedFunctions);
        }
        let mut common = rel[first.id].clone();
        for r in &set[1..] {
            common = common.intersection(&rel[r.id]).copied().collect();
        }
        // Common dominators form a chain; the lowest has the largest set.
        Ok(common.into_iter().max_by_key(|&c| rel[c].len()).expect("root is always common"))
    }

    /// Blocks reachable from `from` (inclusive).
    pub fn reachable_from(&self, from: BlockId) -> BTreeSet<BlockId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![from];
        while let Some(b) = stack.pop() {
            if seen.insert(b) {
                stack.extend(self.blocks[b].succs.iter().copied());
            }
        }
        seen
    }

    /// Graphviz rendering.
    pub fn to_dot(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "digraph \"{}\" {{", self.func);
        let _ = writeln!(out, "  node [shape=box];");
        for bb in &self.blocks {
            let labels: Vec<String> = bb.labels.iter().map(|l| l.to_string()).collect();
            let tag = if bb.id == self.exit {
                "exit".to_string()
            } else if bb.id == self.entry {
                format!("entry [{}]", labels.join(","))
            } else {
                format!("[{}]", labels.join(","))
            };
            let _ = writeln!(out, "  b{} [label=\"B{} {}\"];", bb.id, bb.id, tag);
        }
        for bb in &self.blocks {
            for s in &bb.succs {
                let _ = writeln!(out, "  b{} -> b{};", bb.id, s);
            }
        }
        out.push_str("}\n");
        out
    }
}

fn immediate(rel: &[BTreeSet<BlockId>], b: BlockId) -> Option<BlockId> {
    rel[b].iter().copied().filter(|&d| d != b).max_by_key(|&d| rel[d].len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse;

    fn cfg_of(src: &str) -> Cfg {
        let p = parse(src).unwrap();
        build_cfg(p.entry_func())
    }

    #[test]
    fn straight_line_has_body_and_exit() {
        let c = cfg_of("fn main() { skip; skip; ret 0 }");
        assert_eq!(c.blocks.len(), 2);
        assert_eq!(c.blocks[0].labels, vec![0, 1]);
        assert!(c.blocks[c.exit].labels.is_empty());
    }

    #[test]
    fn diamond_has_five_blocks() {
        let c = cfg_of("fn main() { let x = 1; if x > 0 { x := 2; } else { x := 3; } ret x }");
        assert_eq!(c.blocks.len(), 5);
        let (t, e) = (c.block_of(2).unwrap(), c.block_of(3).unwrap());
        let refs = c.refs([t, e]);
        assert_eq!(c.closest_common_dom(&refs).unwrap(), c.block_of(1).unwrap());
        let join = c.closest_common_postdom(&refs).unwrap();
        assert_eq!(c.block(join).join_of, Some(1));
    }

    #[test]
    fn singleton_is_its_own_common_dominator() {
        let c = cfg_of("fn main() { let x = 1; if x > 0 { x := 2; } ret x }");
        let t = c.block_of(2).unwrap();
        assert_eq!(c.closest_common_dom(&c.refs([t])).unwrap(), t);
        assert_eq!(c.closest_common_postdom(&c.refs([t])).unwrap(), t);
    }

    #[test]
    fn mixed_functions_rejected() {
        let c = cfg_of("fn main() { skip; ret 0 }");
        let set = [BlockRef { func: "main", id: 0 }, BlockRef { func: "other", id: 0 }];
        assert_eq!(c.closest_common_dom(&set), Err(CfgError::MixedFunctions));
        assert_eq!(c.closest_common_dom(&[]), Err(CfgError::Empty));
    }
}
