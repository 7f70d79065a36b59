//! Concolic execution: concrete runs shadowed by symbolic expressions,
//! an execution tree of branch decisions, and predicate negation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::budget::{Clock, NoClock, StallSpec};
use crate::coverage::taken_edges;
use crate::dut::{run, Arm, BinaryOp, BlockId, BranchEdge, Dut, ExecError, Origin, Shadow, TestCase, Trace, UnaryOp, Val};
use crate::instrument::InstrumentationPlan;
use crate::solver::{Constraint, SolveBudget, SolveOutcome, Solver, TieredSolver};
use crate::sym::SymExpr;

/// Byte ranges of a test case treated as symbolic.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymRange {
    /// Sorted, disjoint, non-empty (offset, length) pairs.
    ranges: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SymRangeError {
    #[error("symbolic ranges overlap at byte {0}")]
    Overlap(u32),
    #[error("empty symbolic range at byte {0}")]
    Empty(u32),
    #[error("symbolic range at byte {0} overflows")]
    Overflow(u32),
    #[error("malformed range `{0}`; expected off:len[,off:len...]")]
    Syntax(String),
}

impl SymRange {
    pub fn new(mut ranges: Vec<(u32, u32)>) -> Result<Self, SymRangeError> {
        ranges.sort_unstable();
        for &(off, len) in &ranges {
            if len == 0 {
                return Err(SymRangeError::Empty(off));
            }
            off.checked_add(len).ok_or(SymRangeError::Overflow(off))?;
        }
        for w in ranges.windows(2) {
            if w[0].0 + w[0].1 > w[1].0 {
                return Err(SymRangeError::Overlap(w[1].0));
            }
        }
        Ok(SymRange { ranges })
    }

    pub fn empty() -> Self {
        SymRange::default()
    }

    /// Bytes `0..len`.
    pub fn prefix(len: u32) -> Self {
        if len == 0 {
            SymRange::empty()
        } else {
            SymRange { ranges: vec![(0, len)] }
        }
    }

    pub fn ranges(&self) -> &[(u32, u32)] {
        &self.ranges
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    pub fn contains(&self, offset: u32) -> bool {
        let i = self.ranges.partition_point(|&(o, _)| o <= offset);
        i > 0 && {
            let (o, l) = self.ranges[i - 1];
            offset - o < l
        }
    }

    /// The part of the ranges lying inside a test case of `len` bytes.
    pub fn clip(&self, len: usize) -> SymRange {
        let len = u32::try_from(len).unwrap_or(u32::MAX);
        let ranges = self.ranges.iter().filter(|&&(o, _)| o < len).map(|&(o, l)| (o, l.min(len - o))).collect();
        SymRange { ranges }
    }

    pub fn byte_count(&self) -> u64 {
        self.ranges.iter().map(|&(_, l)| l as u64).sum()
    }
}

impl FromStr for SymRange {
    type Err = SymRangeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(SymRange::empty());
        }
        let mut ranges = Vec::new();
        for part in s.split(',') {
            let bad = || SymRangeError::Syntax(String::from(part.trim()));
            let (o, l) = part.trim().split_once(':').ok_or_else(bad)?;
            ranges.push((o.trim().parse().map_err(|_| bad())?, l.trim().parse().map_err(|_| bad())?));
        }
        SymRange::new(ranges)
    }
}

impl fmt::Display for SymRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (o, l)) in self.ranges.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{o}:{l}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathEntry {
    pub site: BlockId,
    /// Width-1 condition over symbolic bytes.
    pub predicate: SymExpr,
    pub taken: bool,
    /// Position of this branch in the trace's `branch_events`.
    pub event_index: usize,
}

/// Symbolic branch decisions of one run, in execution order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PathCondition {
    pub entries: Vec<PathEntry>,
}

impl PathCondition {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The conditions as solver constraints.
    pub fn constraints(&self) -> Vec<Constraint> {
        self.entries.iter().map(|e| (e.predicate.clone(), e.taken)).collect()
    }
}

/// Symbolic depth beyond which a value is concretized; keeps expression
/// size bounded on long loops.
const MAX_SYM_DEPTH: u32 = 1024;

struct SymShadow<'a> {
    sym: &'a SymRange,
    pc: PathCondition,
}

impl SymShadow<'_> {
    fn keep(e: SymExpr) -> Option<SymExpr> {
        if e.is_const() || e.depth() > MAX_SYM_DEPTH {
            None
        } else {
            Some(e)
        }
    }

    fn lift(v: &Val<Option<SymExpr>>, width: u8) -> SymExpr {
        match &v.tag {
            Some(e) => e.clone(),
            None => SymExpr::constant(v.v, width),
        }
    }
}

impl Shadow for SymShadow<'_> {
    type Tag = Option<SymExpr>;

    fn concrete(&self) -> Option<SymExpr> {
        None
    }

    fn input(&mut self, offset: usize, nbytes: usize, width: u8, value: u64) -> Option<SymExpr> {
        let symbolic = |i: usize| u32::try_from(offset + i).is_ok_and(|o| self.sym.contains(o));
        if !(0..nbytes).any(symbolic) {
            return None;
        }
        let mut acc = SymExpr::constant(0, width);
        for i in 0..nbytes {
            let leaf =
                if symbolic(i) { SymExpr::byte((offset + i) as u32, width) } else { SymExpr::constant((value >> (8 * i)) & 0xFF, width) };
            let shifted = SymExpr::binary(BinaryOp::Shl, width, leaf, SymExpr::constant(8 * i as u64, 8));
            acc = SymExpr::binary(BinaryOp::Or, width, acc, shifted);
        }
        Self::keep(acc)
    }

    fn unary(&mut self, op: UnaryOp, width: u8, arg: &Val<Self::Tag>, _: u64) -> Option<SymExpr> {
        let a = arg.tag.as_ref()?;
        Self::keep(SymExpr::unary(op, width, a.clone()))
    }

    fn binary(&mut self, op: BinaryOp, width: u8, lhs: &Val<Self::Tag>, rhs: &Val<Self::Tag>, _: u64) -> Option<SymExpr> {
        let (lw, rw) = match (&lhs.tag, &rhs.tag) {
            (None, None) => return None,
            (Some(l), _) if op.is_shift() => (l.width(), rhs.tag.as_ref().map_or(64, |r| r.width())),
            (None, Some(r)) if op.is_shift() => (width, r.width()),
            (Some(l), _) => (l.width(), l.width()),
            (None, Some(r)) => (r.width(), r.width()),
        };
        Self::keep(SymExpr::binary(op, width, Self::lift(lhs, lw), Self::lift(rhs, rw)))
    }

    fn resize(&mut self, width: u8, arg: &Val<Self::Tag>, _: u64) -> Option<SymExpr> {
        let a = arg.tag.as_ref()?;
        Self::keep(SymExpr::resize(width, a.clone()))
    }

    fn branch(&mut self, site: BlockId, event_index: usize, cond: &Val<Self::Tag>) {
        if let Some(e) = &cond.tag {
            self.pc.entries.push(PathEntry { site, predicate: e.clone(), taken: cond.v != 0, event_index });
        }
    }
}

/// Executes `tc` concretely while tracking which values depend on the
/// symbolic bytes; returns the trace and the symbolic branch conditions.
pub fn shadow_execute(dut: &Dut, plan: &InstrumentationPlan, tc: &TestCase, sym: &SymRange) -> Result<(Trace, PathCondition), ExecError> {
    let sym = sym.clip(tc.bytes.len());
    let mut shadow = SymShadow { sym: &sym, pc: PathCondition::default() };
    let trace = run(dut, plan.dense_mask(), &tc.bytes, &mut shadow)?;
    Ok((trace, shadow.pc))
}

#[derive(Debug, Clone)]
struct Node {
    site: BlockId,
    /// Indexed by `arm_index`.
    covered: [bool; 2],
    /// Proven unsatisfiable; never retried.
    unsat: [bool; 2],
    /// Tried in the current phase.
    tried: [bool; 2],
    children: [Option<u32>; 2],
    /// Stored case that first reached this node.
    case: u32,
    event_index: u32,
    symbolic: bool,
}

fn arm_index(arm: Arm) -> usize {
    match arm {
        Arm::Then => 0,
        Arm::Else => 1,
    }
}

const ARMS: [Arm; 2] = [Arm::Then, Arm::Else];

/// Trie of branch decisions over every merged run. The path from the
/// start of execution to the first branch never depends on inputs, so the
/// root is the first branch executed and each node has one child per arm.
#[derive(Debug, Clone, Default)]
pub struct ExecutionTree {
    nodes: Vec<Node>,
    root: Option<u32>,
    cases: Vec<Vec<u8>>,
    seen: BTreeSet<Vec<u8>>,
    covered: BTreeSet<BranchEdge>,
}

impl ExecutionTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Branch arms covered by some merged run.
    pub fn covered_edges(&self) -> &BTreeSet<BranchEdge> {
        &self.covered
    }

    /// Union of covered arms over all nodes.
    pub fn node_marks(&self) -> BTreeSet<BranchEdge> {
        let mut out = BTreeSet::new();
        for n in &self.nodes {
            for arm in ARMS {
                if n.covered[arm_index(arm)] {
                    out.insert(BranchEdge::new(n.site, arm));
                }
            }
        }
        out
    }

    pub fn contains_case(&self, bytes: &[u8]) -> bool {
        self.seen.contains(bytes)
    }

    /// Adds a run to the tree. Returns the arms it covered for the first
    /// time anywhere in the tree.
    pub fn merge(&mut self, bytes: &[u8], trace: &Trace, pc: &PathCondition) -> Vec<BranchEdge> {
        let case = self.cases.len() as u32;
        self.cases.push(bytes.to_vec());
        self.seen.insert(bytes.to_vec());
        let symbolic: BTreeSet<usize> = pc.entries.iter().map(|e| e.event_index).collect();
        let mut fresh = Vec::new();
        let mut slot: Option<(u32, usize)> = None;
        for (i, ev) in trace.branch_events.iter().enumerate() {
            let existing = match slot {
                None => self.root,
                Some((p, a)) => self.nodes[p as usize].children[a],
            };
            let id = match existing {
                Some(id) => {
                    debug_assert_eq!(self.nodes[id as usize].site, ev.site);
                    id
                }
                None => {
                    let id = self.nodes.len() as u32;
                    self.nodes.push(Node {
                        site: ev.site,
                        covered: [false; 2],
                        unsat: [false; 2],
                        tried: [false; 2],
                        children: [None; 2],
                        case,
                        event_index: i as u32,
                        symbolic: symbolic.contains(&i),
                    });
                    match slot {
                        None => self.root = Some(id),
                        Some((p, a)) => self.nodes[p as usize].children[a] = Some(id),
                    }
                    id
                }
            };
            let a = arm_index(Arm::from_taken(ev.taken));
            self.nodes[id as usize].covered[a] = true;
            let edge = BranchEdge::new(ev.site, Arm::from_taken(ev.taken));
            if self.covered.insert(edge) {
                fresh.push(edge);
            }
            slot = Some((id, a));
        }
        fresh
    }

    fn begin_phase(&mut self) {
        for n in &mut self.nodes {
            n.tried = [false; 2];
        }
    }

    /// Next uncovered symbolic arm in depth-first preorder. Arms that are
    /// rare targets not yet covered anywhere come first, then arms not yet
    /// covered anywhere, then the rest.
    fn pick(&self, rare: &BTreeSet<BranchEdge>, site_budget: &BTreeMap<BlockId, u32>, cap: u32) -> Option<(u32, Arm)> {
        let mut best: Option<(u8, u32, Arm)> = None;
        let mut stack: Vec<u32> = self.root.into_iter().collect();
        while let Some(id) = stack.pop() {
            let n = &self.nodes[id as usize];
            if n.symbolic && site_budget.get(&n.site).copied().unwrap_or(0) < cap {
                for arm in ARMS {
                    let a = arm_index(arm);
                    if n.covered[a] || n.unsat[a] || n.tried[a] {
                        continue;
                    }
                    let edge = BranchEdge::new(n.site, arm);
                    let class = if self.covered.contains(&edge) {
                        2
                    } else if rare.contains(&edge) {
                        0
                    } else {
                        1
                    };
                    if best.is_none_or(|(c, _, _)| class < c) {
                        best = Some((class, id, arm));
                    }
                }
                if best.is_some_and(|(c, _, _)| c == 0) {
                    break;
                }
            }
            for child in n.children.iter().rev().flatten() {
                stack.push(*child);
            }
        }
        best.map(|(_, id, arm)| (id, arm))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConcolicBudget {
    pub max_solves: u64,
    /// Absolute clock reading at which to stop.
    pub deadline_ms: Option<u64>,
    pub stall: Option<StallSpec>,
    /// Negations allowed per branch site per call.
    pub max_loop_negations: u32,
    pub solve: SolveBudget,
}

impl Default for ConcolicBudget {
    fn default() -> Self {
        ConcolicBudget { max_solves: 64, deadline_ms: None, stall: None, max_loop_negations: 8, solve: SolveBudget::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConcolicStop {
    RareCovered,
    SolveBudget,
    Deadline,
    Stalled,
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConcolicRun {
    /// Generated cases in generation order, ids assigned sequentially.
    pub testcases: Vec<TestCase>,
    pub solves: u64,
    pub sat: u64,
    pub unsat: u64,
    pub unknown: u64,
    pub stop: ConcolicStop,
}

/// Runs the concolic engine with an explicit solver and clock.
#[allow(clippy::too_many_arguments)]
pub fn concol_exec_with(
    dut: &Dut,
    plan: &InstrumentationPlan,
    seeds: &[TestCase],
    sym: &SymRange,
    budget: &ConcolicBudget,
    tree: &mut ExecutionTree,
    rare: &BTreeSet<BranchEdge>,
    solver: &dyn Solver,
    clock: &dyn Clock,
    first_id: u64,
) -> ConcolicRun {
    tree.begin_phase();
    let mut out = ConcolicRun { testcases: Vec::new(), solves: 0, sat: 0, unsat: 0, unknown: 0, stop: ConcolicStop::Exhausted };

    let merge = |tree: &mut ExecutionTree, bytes: &[u8]| -> Option<Vec<BranchEdge>> {
        let tc = TestCase::new(0, bytes.to_vec(), Origin::Concolic);
        match shadow_execute(dut, plan, &tc, sym) {
            Ok((trace, pc)) => Some(tree.merge(bytes, &trace, &pc)),
            Err(e) => {
                log::warn!("concolic seed skipped: {e}");
                None
            }
        }
    };
    for seed in seeds {
        if !tree.contains_case(&seed.bytes) {
            merge(tree, &seed.bytes);
        }
    }
    if tree.is_empty() {
        // No seeds: start from an all-zero input with every byte symbolic.
        let zero = vec![0u8; dut.max_cycles() as usize * dut.frame_size()];
        log::debug!("concolic: no seeds, forking a zero-filled {}-byte state", zero.len());
        merge(tree, &zero);
    }

    let start_ms = clock.now_ms();
    let mut stall = budget.stall.map(|s| (s, s.monitor(0, start_ms)));
    let mut site_uses: BTreeMap<BlockId, u32> = BTreeMap::new();
    let mut next_id = first_id;
    loop {
        if !rare.is_empty() && rare.is_subset(tree.covered_edges()) {
            out.stop = ConcolicStop::RareCovered;
            break;
        }
        if out.solves >= budget.max_solves {
            out.stop = ConcolicStop::SolveBudget;
            break;
        }
        if budget.deadline_ms.is_some_and(|d| clock.now_ms() >= d) {
            out.stop = ConcolicStop::Deadline;
            break;
        }
        if let Some((spec, mon)) = &mut stall {
            if mon.poll(spec.reading(out.solves, clock)) {
                out.stop = ConcolicStop::Stalled;
                break;
            }
        }
        let Some((node_id, arm)) = tree.pick(rare, &site_uses, budget.max_loop_negations) else {
            out.stop = ConcolicStop::Exhausted;
            break;
        };
        let node = tree.nodes[node_id as usize].clone();
        tree.nodes[node_id as usize].tried[arm_index(arm)] = true;
        *site_uses.entry(node.site).or_default() += 1;

        let seed_bytes = tree.cases[node.case as usize].clone();
        let seed = TestCase::new(0, seed_bytes.clone(), Origin::Concolic);
        let Ok((_, pc)) = shadow_execute(dut, plan, &seed, sym) else { continue };
        let mut constraints: Vec<Constraint> = Vec::new();
        let mut target = None;
        for e in &pc.entries {
            if e.event_index < node.event_index as usize {
                constraints.push((e.predicate.clone(), e.taken));
            } else if e.event_index == node.event_index as usize {
                target = Some(e.predicate.clone());
            }
        }
        let Some(pred) = target else { continue };
        constraints.push((pred, arm.taken()));

        out.solves += 1;
        let clipped = sym.clip(seed_bytes.len());
        match solver.solve(&constraints, &clipped, &seed_bytes) {
            Ok(SolveOutcome::Sat { assignment, tier }) => {
                out.sat += 1;
                let mut bytes = seed_bytes;
                for (o, v) in assignment {
                    bytes[o as usize] = v;
                }
                if tree.contains_case(&bytes) {
                    continue;
                }
                log::debug!("concolic: solved {}.{} ({tier:?})", node.site, arm.as_str());
                if let Some(fresh) = merge(tree, &bytes) {
                    if !fresh.is_empty() {
                        if let Some((_, mon)) = &mut stall {
                            mon.note_progress();
                        }
                    }
                    out.testcases.push(TestCase::new(next_id, bytes, Origin::Concolic));
                    next_id += 1;
                }
            }
            Ok(SolveOutcome::Unsat) => {
                out.unsat += 1;
                tree.nodes[node_id as usize].unsat[arm_index(arm)] = true;
            }
            Ok(SolveOutcome::Unknown) => out.unknown += 1,
            Err(e) => {
                log::warn!("concolic: malformed constraints: {e}");
                out.unknown += 1;
            }
        }
    }
    out
}

/// Runs the concolic engine with the default tiered solver and no clock.
pub fn concol_exec(
    dut: &Dut,
    plan: &InstrumentationPlan,
    seeds: &[TestCase],
    sym: &SymRange,
    budget: &ConcolicBudget,
    tree: &mut ExecutionTree,
    rare: &BTreeSet<BranchEdge>,
) -> ConcolicRun {
    let solver = TieredSolver { budget: budget.solve };
    concol_exec_with(dut, plan, seeds, sym, budget, tree, rare, &solver, &NoClock, 1)
}

/// Every branch arm taken by `trace`.
pub fn trace_edges(trace: &Trace) -> BTreeSet<BranchEdge> {
    taken_edges(trace).collect()
}
