//! Dominator trees and selective block instrumentation.
//!
//! A selective plan instruments the entry, every join point, every branch
//! successor and every target arm destination. Any other reachable block has
//! a single predecessor that ends in `goto`, so its execution is implied by
//! its immediate dominator and it is left uninstrumented. The full set of
//! visited blocks can be rebuilt from the instrumented ones
//! ([`InstrumentationPlan::reconstruct_visited`]).

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dut::{BlockId, BranchEdge, Dut, Terminator, Trace};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomTree {
    entry: BlockId,
    idom: BTreeMap<BlockId, BlockId>,
    children: BTreeMap<BlockId, Vec<BlockId>>,
}

impl DomTree {
    pub fn entry(&self) -> BlockId {
        self.entry
    }

    /// Immediate dominator. `None` for the entry and for blocks not
    /// reachable from it.
    pub fn idom(&self, b: BlockId) -> Option<BlockId> {
        self.idom.get(&b).copied().filter(|_| b != self.entry)
    }

    pub fn children(&self, b: BlockId) -> &[BlockId] {
        self.children.get(&b).map_or(&[], |v| v.as_slice())
    }

    pub fn contains(&self, b: BlockId) -> bool {
        self.idom.contains_key(&b)
    }

    pub fn blocks(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.idom.keys().copied()
    }

    /// Whether `a` dominates `b` (reflexive).
    pub fn dominates(&self, a: BlockId, mut b: BlockId) -> bool {
        if !self.contains(a) || !self.contains(b) {
            return false;
        }
        loop {
            if a == b {
                return true;
            }
            if b == self.entry {
                return false;
            }
            b = self.idom[&b];
        }
    }

    /// Blocks in tree preorder starting at the entry; children visited in
    /// ascending id order.
    pub fn preorder(&self) -> Vec<BlockId> {
        let mut out = Vec::with_capacity(self.idom.len());
        let mut stack = alloc::vec![self.entry];
        while let Some(b) = stack.pop() {
            out.push(b);
            stack.extend(self.children(b).iter().rev().copied());
        }
        out
    }
}

/// Iterative dominator computation (Cooper, Harvey and Kennedy) over the
/// blocks reachable from the entry.
pub fn compute_dominators(dut: &Dut) -> DomTree {
    let entry = dut.entry();

    // Reverse postorder of reachable blocks.
    let mut postorder = Vec::new();
    let mut seen = BTreeSet::new();
    let mut stack: Vec<(BlockId, Vec<BlockId>)> = alloc::vec![(entry, dut.successors(entry))];
    seen.insert(entry);
    while let Some((b, succs)) = stack.last_mut() {
        if let Some(s) = succs.pop() {
            if seen.insert(s) {
                let next = dut.successors(s);
                stack.push((s, next));
            }
        } else {
            postorder.push(*b);
            stack.pop();
        }
    }
    let rpo: Vec<BlockId> = postorder.iter().rev().copied().collect();
    let order: BTreeMap<BlockId, usize> = rpo.iter().enumerate().map(|(i, &b)| (b, i)).collect();

    let mut preds: BTreeMap<BlockId, Vec<BlockId>> = BTreeMap::new();
    for &b in &rpo {
        for s in dut.successors(b) {
            preds.entry(s).or_default().push(b);
        }
    }

    let mut idom: BTreeMap<BlockId, BlockId> = BTreeMap::new();
    idom.insert(entry, entry);
    let intersect = |idom: &BTreeMap<BlockId, BlockId>, mut a: BlockId, mut b: BlockId| {
        while a != b {
            while order[&a] > order[&b] {
                a = idom[&a];
            }
            while order[&b] > order[&a] {
                b = idom[&b];
            }
        }
        a
    };
    let mut changed = true;
    while changed {
        changed = false;
        for &b in rpo.iter().skip(1) {
            let mut new_idom: Option<BlockId> = None;
            for &p in preds.get(&b).map_or(&[][..], |v| v.as_slice()) {
                if !idom.contains_key(&p) {
                    continue;
                }
                new_idom = Some(match new_idom {
                    None => p,
                    Some(cur) => intersect(&idom, p, cur),
                });
            }
            let new_idom = new_idom.expect("reachable block has a processed predecessor");
            if idom.get(&b) != Some(&new_idom) {
                idom.insert(b, new_idom);
                changed = true;
            }
        }
    }

    let mut children: BTreeMap<BlockId, Vec<BlockId>> = BTreeMap::new();
    for (&b, &d) in &idom {
        if b != entry {
            children.entry(d).or_default().push(b);
        }
    }
    DomTree { entry, idom, children }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PlanMode {
    Full,
    Selective,
}

impl PlanMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PlanMode::Full => "full",
            PlanMode::Selective => "selective",
        }
    }

    pub fn parse(s: &str) -> Option<PlanMode> {
        match s {
            "full" => Some(PlanMode::Full),
            "selective" => Some(PlanMode::Selective),
            _ => None,
        }
    }
}

/// Which blocks report coverage, and the 16-bit label each one feeds into
/// the coverage bitmap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstrumentationPlan {
    mode: PlanMode,
    instrumented: BTreeSet<BlockId>,
    labels: BTreeMap<BlockId, u16>,
    targets: BTreeSet<BranchEdge>,
    dense: Vec<bool>,
    dense_labels: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("block {0} is not part of the design")]
    UnknownBlock(BlockId),
    #[error("instrumented block {0} has no label")]
    MissingLabel(BlockId),
    #[error("label {0} is used by more than one block")]
    DuplicateLabel(u16),
    #[error("target {0} is not a branch arm of the design")]
    BadTarget(BranchEdge),
}

impl InstrumentationPlan {
    /// Instruments every reachable block; labels drawn from `label_seed`.
    pub fn full(dut: &Dut, label_seed: u64) -> Self {
        let dom = compute_dominators(dut);
        select_blocks(dut, &dom, &BTreeSet::new(), PlanMode::Full, &mut ChaCha8Rng::seed_from_u64(label_seed))
    }

    /// Rebuilds a plan from serialized parts, checking it against `dut`.
    pub fn from_parts(
        dut: &Dut,
        mode: PlanMode,
        instrumented: BTreeSet<BlockId>,
        labels: BTreeMap<BlockId, u16>,
        targets: BTreeSet<BranchEdge>,
    ) -> Result<Self, PlanError> {
        for &b in instrumented.iter().chain(labels.keys()) {
            if dut.block(b).is_none() {
                return Err(PlanError::UnknownBlock(b));
            }
        }
        let mut used = BTreeSet::new();
        for b in &instrumented {
            let l = *labels.get(b).ok_or(PlanError::MissingLabel(*b))?;
            if !used.insert(l) {
                return Err(PlanError::DuplicateLabel(l));
            }
        }
        for t in &targets {
            if dut.arm_target(*t).is_none() {
                return Err(PlanError::BadTarget(*t));
            }
        }
        Ok(Self::assemble(dut, mode, instrumented, labels, targets))
    }

    fn assemble(
        dut: &Dut,
        mode: PlanMode,
        instrumented: BTreeSet<BlockId>,
        labels: BTreeMap<BlockId, u16>,
        targets: BTreeSet<BranchEdge>,
    ) -> Self {
        let ids = &dut.layout().ids;
        let dense = ids.iter().map(|b| instrumented.contains(b)).collect();
        let dense_labels = ids.iter().map(|b| labels.get(b).copied().unwrap_or(0)).collect();
        InstrumentationPlan { mode, instrumented, labels, targets, dense, dense_labels }
    }

    pub fn mode(&self) -> PlanMode {
        self.mode
    }

    pub fn instrumented(&self) -> &BTreeSet<BlockId> {
        &self.instrumented
    }

    pub fn is_instrumented(&self, b: BlockId) -> bool {
        self.instrumented.contains(&b)
    }

    pub fn labels(&self) -> &BTreeMap<BlockId, u16> {
        &self.labels
    }

    pub fn label(&self, b: BlockId) -> Option<u16> {
        self.labels.get(&b).copied()
    }

    pub fn targets(&self) -> &BTreeSet<BranchEdge> {
        &self.targets
    }

    pub(crate) fn dense_mask(&self) -> &[bool] {
        &self.dense
    }

    #[allow(dead_code)]
    pub(crate) fn dense_labels(&self) -> &[u16] {
        &self.dense_labels
    }

    /// All blocks a run visited, recovered from the instrumented ones: an
    /// uninstrumented block ran iff its immediate dominator (its only
    /// predecessor, which ends in `goto`) ran.
    ///
    /// Exact unless the run ended on the per-cycle step budget, which can
    /// stop execution between a block and its `goto` successor.
    pub fn reconstruct_visited(&self, dom: &DomTree, trace: &Trace) -> BTreeSet<BlockId> {
        let mut visited: BTreeSet<BlockId> = trace.visited_instrumented().collect();
        for b in dom.preorder() {
            if self.instrumented.contains(&b) {
                continue;
            }
            if let Some(d) = dom.idom(b) {
                if visited.contains(&d) {
                    visited.insert(b);
                }
            }
        }
        visited
    }
}

/// Chooses the blocks to instrument and assigns each a distinct 16-bit
/// label drawn from `rng`.
pub fn select_blocks<R: Rng + ?Sized>(
    dut: &Dut,
    dom: &DomTree,
    targets: &BTreeSet<BranchEdge>,
    mode: PlanMode,
    rng: &mut R,
) -> InstrumentationPlan {
    let reachable: BTreeSet<BlockId> = dom.blocks().collect();
    let instrumented: BTreeSet<BlockId> = match mode {
        PlanMode::Full => reachable.clone(),
        PlanMode::Selective => {
            let mut preds: BTreeMap<BlockId, BTreeSet<BlockId>> = BTreeMap::new();
            let mut set = BTreeSet::new();
            set.insert(dut.entry());
            for &b in &reachable {
                let block = dut.block(b).expect("reachable block exists");
                for s in block.terminator.successors(dut.entry()) {
                    preds.entry(s).or_default().insert(b);
                }
                if let Terminator::Branch { then_target, else_target, .. } = &block.terminator {
                    set.insert(*then_target);
                    set.insert(*else_target);
                }
            }
            for (b, p) in &preds {
                if p.len() >= 2 {
                    set.insert(*b);
                }
            }
            for t in targets {
                if let Some(dst) = dut.arm_target(*t) {
                    set.insert(dst);
                }
            }
            set.retain(|b| reachable.contains(b));
            set
        }
    };

    let mut labels = BTreeMap::new();
    let mut used = BTreeSet::new();
    for &b in &instrumented {
        let mut l: u16 = rng.gen();
        while !used.insert(l) {
            l = rng.gen();
        }
        labels.insert(b, l);
    }
    InstrumentationPlan::assemble(dut, mode, instrumented, labels, targets.clone())
}
