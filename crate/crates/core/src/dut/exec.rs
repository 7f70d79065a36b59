use alloc::vec::Vec;
use core::fmt;

use rand::RngCore;

use super::{byte_len, mask, read_le, BlockId, Dut, Expr, Terminator};
use crate::instrument::InstrumentationPlan;

/// Where a test case came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Origin {
    Random,
    Fuzz,
    Concolic,
    User,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Random => "random",
            Origin::Fuzz => "fuzz",
            Origin::Concolic => "concolic",
            Origin::User => "user",
        }
    }

    pub fn parse(s: &str) -> Option<Origin> {
        Some(match s {
            "random" => Origin::Random,
            "fuzz" => Origin::Fuzz,
            "concolic" => Origin::Concolic,
            "user" => Origin::User,
            _ => return None,
        })
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Input bytes (one frame per cycle) plus scheduling metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestCase {
    pub bytes: Vec<u8>,
    pub id: u64,
    /// Interpreter steps of the last execution.
    pub exec_time: u64,
    /// Distinct bitmap cells hit by the last execution.
    pub bitmap_count: u32,
    pub depth: u32,
    pub origin: Origin,
}

impl TestCase {
    pub fn new(id: u64, bytes: Vec<u8>, origin: Origin) -> Self {
        TestCase { bytes, id, exec_time: 0, bitmap_count: 0, depth: 0, origin }
    }

    /// A child of `self` with fresh metadata and `depth + 1`.
    pub fn child(&self, id: u64, bytes: Vec<u8>, origin: Origin) -> Self {
        TestCase { bytes, id, exec_time: 0, bitmap_count: 0, depth: self.depth + 1, origin }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Termination {
    Halt,
    InputExhausted,
    MaxCycles,
    StepBudget,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Halt => "halt",
            Termination::InputExhausted => "input_exhausted",
            Termination::MaxCycles => "max_cycles",
            Termination::StepBudget => "step_budget",
        }
    }
}

/// Transition between two consecutive instrumented blocks. `from` is `None`
/// for the first instrumented block of an execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub from: Option<BlockId>,
    pub to: BlockId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BranchEvent {
    pub site: BlockId,
    pub taken: bool,
    /// Zero-based cycle in which the branch executed.
    pub cycle: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub edges: Vec<Edge>,
    pub branch_events: Vec<BranchEvent>,
    /// One value per declared output; present iff the design halted.
    pub outputs: Option<Vec<u64>>,
    pub cycles_run: u32,
    pub steps_run: u64,
    pub terminated_by: Termination,
}

impl Trace {
    pub fn halted(&self) -> bool {
        self.terminated_by == Termination::Halt
    }

    /// Instrumented blocks visited, in first-visit order.
    pub fn visited_instrumented(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.edges.iter().map(|e| e.to)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExecError {
    #[error("input of {len} bytes ends mid-frame (frame size {frame_size})")]
    PartialFrame { len: usize, frame_size: usize },
    #[error("instrumentation plan was built for a different design")]
    PlanMismatch,
}

/// A value plus its shadow annotation.
#[derive(Debug, Clone)]
pub(crate) struct Val<T> {
    pub v: u64,
    pub tag: T,
}

/// Hooks that let the interpreter carry a second, shadow value alongside
/// every concrete one. The plain interpreter uses `()`.
pub(crate) trait Shadow {
    type Tag: Clone;

    fn concrete(&self) -> Self::Tag;
    /// Shadow of input `input` read from absolute byte offset `offset`.
    fn input(&mut self, offset: usize, nbytes: usize, width: u8, value: u64) -> Self::Tag;
    fn unary(&mut self, op: super::UnaryOp, width: u8, arg: &Val<Self::Tag>, result: u64) -> Self::Tag;
    fn binary(&mut self, op: super::BinaryOp, width: u8, lhs: &Val<Self::Tag>, rhs: &Val<Self::Tag>, result: u64) -> Self::Tag;
    fn resize(&mut self, width: u8, arg: &Val<Self::Tag>, result: u64) -> Self::Tag;
    fn branch(&mut self, site: BlockId, event_index: usize, cond: &Val<Self::Tag>);
}

impl Shadow for () {
    type Tag = ();

    #[inline]
    fn concrete(&self) {}
    #[inline]
    fn input(&mut self, _: usize, _: usize, _: u8, _: u64) {}
    #[inline]
    fn unary(&mut self, _: super::UnaryOp, _: u8, _: &Val<()>, _: u64) {}
    #[inline]
    fn binary(&mut self, _: super::BinaryOp, _: u8, _: &Val<()>, _: &Val<()>, _: u64) {}
    #[inline]
    fn resize(&mut self, _: u8, _: &Val<()>, _: u64) {}
    #[inline]
    fn branch(&mut self, _: BlockId, _: usize, _: &Val<()>) {}
}

struct Frame<'a, S: Shadow> {
    inputs: &'a [Val<S::Tag>],
    regs: &'a [Val<S::Tag>],
    locals: &'a [Val<S::Tag>],
}

fn eval<S: Shadow>(e: &Expr, env: &Frame<'_, S>, shadow: &mut S) -> Val<S::Tag> {
    match e {
        Expr::Const { value, .. } => Val { v: *value, tag: shadow.concrete() },
        Expr::Input(i) => env.inputs[*i].clone(),
        Expr::Reg(i) => env.regs[*i].clone(),
        Expr::Local(i) => env.locals[*i].clone(),
        Expr::Unary { op, width, arg } => {
            let a = eval(arg, env, shadow);
            let v = op.apply(a.v, *width);
            debug_assert!(v <= mask(*width));
            let tag = shadow.unary(*op, *width, &a, v);
            Val { v, tag }
        }
        Expr::Binary { op, width, lhs, rhs } => {
            let l = eval(lhs, env, shadow);
            let r = eval(rhs, env, shadow);
            let v = op.apply(l.v, r.v, *width);
            debug_assert!(v <= mask(*width));
            let tag = shadow.binary(*op, *width, &l, &r, v);
            Val { v, tag }
        }
    }
}

/// Runs `dut` on `bytes`. `instrumented` is indexed by dense block index.
pub(crate) fn run<S: Shadow>(dut: &Dut, instrumented: &[bool], bytes: &[u8], shadow: &mut S) -> Result<Trace, ExecError> {
    let layout = dut.layout();
    if instrumented.len() != layout.ids.len() {
        return Err(ExecError::PlanMismatch);
    }
    let frame_size = layout.frame_size;
    let frames_available = if frame_size == 0 {
        if !bytes.is_empty() {
            return Err(ExecError::PartialFrame { len: bytes.len(), frame_size });
        }
        u64::MAX
    } else {
        if !bytes.len().is_multiple_of(frame_size) {
            return Err(ExecError::PartialFrame { len: bytes.len(), frame_size });
        }
        (bytes.len() / frame_size) as u64
    };

    let blocks: Vec<_> = dut.blocks().values().collect();
    let mut regs: Vec<Val<S::Tag>> = dut.registers().iter().map(|r| Val { v: r.init, tag: shadow.concrete() }).collect();
    let mut inputs: Vec<Val<S::Tag>> = Vec::with_capacity(dut.inputs().len());
    let mut locals: Vec<Val<S::Tag>> = Vec::new();

    let mut trace = Trace {
        edges: Vec::new(),
        branch_events: Vec::new(),
        outputs: None,
        cycles_run: 0,
        steps_run: 0,
        terminated_by: Termination::MaxCycles,
    };
    let mut prev: Option<BlockId> = None;

    'cycles: for cycle in 0..dut.max_cycles() {
        if cycle as u64 >= frames_available {
            trace.terminated_by = Termination::InputExhausted;
            break;
        }
        trace.cycles_run = cycle + 1;
        let base = cycle as usize * frame_size;
        inputs.clear();
        for (p, &off) in dut.inputs().iter().zip(&layout.input_offsets) {
            let n = byte_len(p.width);
            let at = base + off;
            let v = read_le(&bytes[at..at + n]) & mask(p.width);
            let tag = shadow.input(at, n, p.width, v);
            inputs.push(Val { v, tag });
        }

        let mut block = layout.entry;
        let mut steps_this_cycle = 0u64;
        loop {
            if steps_this_cycle == dut.max_steps_per_cycle() {
                trace.terminated_by = Termination::StepBudget;
                break 'cycles;
            }
            steps_this_cycle += 1;
            trace.steps_run += 1;

            let b = blocks[block];
            if instrumented[block] {
                trace.edges.push(Edge { from: prev, to: b.id });
                prev = Some(b.id);
            }
            locals.clear();
            for s in &b.stmts {
                let env = Frame::<S> { inputs: &inputs, regs: &regs, locals: &locals };
                let raw = eval(&s.expr, &env, shadow);
                let v = raw.v & mask(s.width);
                let tag = if expr_width(&s.expr, dut, &b.stmts) == s.width { raw.tag } else { shadow.resize(s.width, &raw, v) };
                locals.push(Val { v, tag });
            }
            let env = Frame::<S> { inputs: &inputs, regs: &regs, locals: &locals };
            match &b.terminator {
                Terminator::Goto(_) => block = layout.targets[block][0],
                Terminator::Branch { cond, .. } => {
                    let c = eval(cond, &env, shadow);
                    let taken = c.v != 0;
                    shadow.branch(b.id, trace.branch_events.len(), &c);
                    trace.branch_events.push(BranchEvent { site: b.id, taken, cycle });
                    block = layout.targets[block][if taken { 0 } else { 1 }];
                }
                Terminator::CycleEnd(updates) => {
                    let next: Vec<Val<S::Tag>> = updates.iter().map(|e| eval(e, &env, shadow)).collect();
                    regs = next;
                    continue 'cycles;
                }
                Terminator::Halt(values) => {
                    let outs = values.iter().map(|e| eval(e, &env, shadow).v).collect();
                    trace.outputs = Some(outs);
                    trace.terminated_by = Termination::Halt;
                    break 'cycles;
                }
            }
        }
    }
    Ok(trace)
}

/// Width an already-validated expression evaluates to.
pub(crate) fn expr_width(e: &Expr, dut: &Dut, stmts: &[super::Stmt]) -> u8 {
    match e {
        Expr::Const { width, .. } | Expr::Unary { width, .. } | Expr::Binary { width, .. } => *width,
        Expr::Input(i) => dut.inputs()[*i].width,
        Expr::Reg(i) => dut.registers()[*i].width,
        Expr::Local(i) => stmts[*i].width,
    }
}

/// Concretely executes `tc` under `plan`.
pub fn execute(dut: &Dut, tc: &TestCase, plan: &InstrumentationPlan) -> Result<Trace, ExecError> {
    execute_bytes(dut, &tc.bytes, plan)
}

/// [`execute`] on bare input bytes.
pub fn execute_bytes(dut: &Dut, bytes: &[u8], plan: &InstrumentationPlan) -> Result<Trace, ExecError> {
    run(dut, plan.dense_mask(), bytes, &mut ())
}

/// `cycles` frames of uniformly random bytes.
pub fn random_testcase<R: RngCore + ?Sized>(dut: &Dut, cycles: u32, rng: &mut R) -> TestCase {
    let mut bytes = alloc::vec![0u8; cycles as usize * dut.frame_size()];
    rng.fill_bytes(&mut bytes);
    TestCase::new(0, bytes, Origin::Random)
}
