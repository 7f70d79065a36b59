//! The design-under-test IR.
//!
//! A [`Dut`] is a set of basic blocks over unsigned wrapping bitvectors of
//! width 1..=64. Every clock cycle reads one input frame, starts at the entry
//! block and runs until the cycle ends (registers latch) or the design halts
//! (outputs latch).

mod exec;
mod parse;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub use exec::{execute, execute_bytes, random_testcase, BranchEvent, Edge, ExecError, Origin, Termination, TestCase, Trace};
pub(crate) use exec::{run, Shadow, Val};
pub use parse::{parse_dut, parse_dut_bytes, render_dut, ParseError, ParseErrorKind};

pub type BlockId = u32;

/// Default per-cycle block budget.
pub const DEFAULT_MAX_STEPS_PER_CYCLE: u64 = 100_000;

/// All-ones value of the given width.
#[inline]
pub fn mask(width: u8) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

/// Bytes one input of this width occupies in a frame.
#[inline]
pub fn byte_len(width: u8) -> usize {
    (width as usize).div_ceil(8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnaryOp {
    Not,
    Neg,
}

impl UnaryOp {
    #[inline]
    pub fn apply(self, value: u64, width: u8) -> u64 {
        match self {
            UnaryOp::Not => !value & mask(width),
            UnaryOp::Neg => value.wrapping_neg() & mask(width),
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            UnaryOp::Not => "~",
            UnaryOp::Neg => "-",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    And,
    Or,
    Xor,
    Shl,
    Shr,
    Eq,
    Ne,
    Ltu,
    Leu,
    Gtu,
    Geu,
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 14] = [
        BinaryOp::Add,
        BinaryOp::Sub,
        BinaryOp::Mul,
        BinaryOp::And,
        BinaryOp::Or,
        BinaryOp::Xor,
        BinaryOp::Shl,
        BinaryOp::Shr,
        BinaryOp::Eq,
        BinaryOp::Ne,
        BinaryOp::Ltu,
        BinaryOp::Leu,
        BinaryOp::Gtu,
        BinaryOp::Geu,
    ];

    pub fn is_comparison(self) -> bool {
        matches!(self, BinaryOp::Eq | BinaryOp::Ne | BinaryOp::Ltu | BinaryOp::Leu | BinaryOp::Gtu | BinaryOp::Geu)
    }

    pub fn is_shift(self) -> bool {
        matches!(self, BinaryOp::Shl | BinaryOp::Shr)
    }

    /// Applies the operator to operands already reduced to `width`
    /// (`width` is the result width; comparisons yield 0 or 1).
    #[inline]
    pub fn apply(self, lhs: u64, rhs: u64, width: u8) -> u64 {
        let m = mask(width);
        match self {
            BinaryOp::Add => lhs.wrapping_add(rhs) & m,
            BinaryOp::Sub => lhs.wrapping_sub(rhs) & m,
            BinaryOp::Mul => lhs.wrapping_mul(rhs) & m,
            BinaryOp::And => lhs & rhs,
            BinaryOp::Or => lhs | rhs,
            BinaryOp::Xor => lhs ^ rhs,
            BinaryOp::Shl => {
                if rhs >= width as u64 {
                    0
                } else {
                    (lhs << rhs) & m
                }
            }
            BinaryOp::Shr => {
                if rhs >= width as u64 {
                    0
                } else {
                    lhs >> rhs
                }
            }
            BinaryOp::Eq => (lhs == rhs) as u64,
            BinaryOp::Ne => (lhs != rhs) as u64,
            BinaryOp::Ltu => (lhs < rhs) as u64,
            BinaryOp::Leu => (lhs <= rhs) as u64,
            BinaryOp::Gtu => (lhs > rhs) as u64,
            BinaryOp::Geu => (lhs >= rhs) as u64,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::And => "&",
            BinaryOp::Or => "|",
            BinaryOp::Xor => "^",
            BinaryOp::Shl => "<<",
            BinaryOp::Shr => ">>",
            BinaryOp::Eq => "==",
            BinaryOp::Ne => "!=",
            BinaryOp::Ltu => "<u",
            BinaryOp::Leu => "<=u",
            BinaryOp::Gtu => ">u",
            BinaryOp::Geu => ">=u",
        }
    }
}

/// A typed expression. `Local(i)` names the `i`-th statement of the
/// enclosing block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Const { value: u64, width: u8 },
    Input(usize),
    Reg(usize),
    Local(usize),
    Unary { op: UnaryOp, width: u8, arg: alloc::boxed::Box<Expr> },
    Binary { op: BinaryOp, width: u8, lhs: alloc::boxed::Box<Expr>, rhs: alloc::boxed::Box<Expr> },
}

/// `name:width = expr`; the value is reduced (zero-extended or truncated) to
/// `width`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stmt {
    pub name: String,
    pub width: u8,
    pub expr: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Terminator {
    Goto(BlockId),
    Branch {
        cond: Expr,
        then_target: BlockId,
        else_target: BlockId,
    },
    /// Next-state expressions, one per register in declaration order.
    CycleEnd(Vec<Expr>),
    /// Output expressions, one per output in declaration order.
    Halt(Vec<Expr>),
}

impl Terminator {
    pub fn successors(&self, entry: BlockId) -> Vec<BlockId> {
        match self {
            Terminator::Goto(t) => alloc::vec![*t],
            Terminator::Branch { then_target, else_target, .. } => {
                if then_target == else_target {
                    alloc::vec![*then_target]
                } else {
                    alloc::vec![*then_target, *else_target]
                }
            }
            Terminator::CycleEnd(_) => alloc::vec![entry],
            Terminator::Halt(_) => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub id: BlockId,
    pub stmts: Vec<Stmt>,
    pub terminator: Terminator,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Port {
    pub name: String,
    pub width: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Register {
    pub name: String,
    pub width: u8,
    pub init: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arm {
    Then,
    Else,
}

impl Arm {
    pub fn from_taken(taken: bool) -> Arm {
        if taken {
            Arm::Then
        } else {
            Arm::Else
        }
    }

    pub fn taken(self) -> bool {
        self == Arm::Then
    }

    pub fn other(self) -> Arm {
        match self {
            Arm::Then => Arm::Else,
            Arm::Else => Arm::Then,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Then => "then",
            Arm::Else => "else",
        }
    }

    pub fn parse(s: &str) -> Option<Arm> {
        match s {
            "then" => Some(Arm::Then),
            "else" => Some(Arm::Else),
            _ => None,
        }
    }
}

/// One arm of a `Branch` terminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BranchEdge {
    pub site: BlockId,
    pub arm: Arm,
}

impl BranchEdge {
    pub fn new(site: BlockId, arm: Arm) -> Self {
        BranchEdge { site, arm }
    }

    /// Parses the `<site>.<then|else>` form used in reports.
    pub fn parse(s: &str) -> Option<BranchEdge> {
        let (site, arm) = s.split_once('.')?;
        Some(BranchEdge { site: site.parse().ok()?, arm: Arm::parse(arm)? })
    }
}

impl fmt::Display for BranchEdge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.site, self.arm.as_str())
    }
}

/// Structural problems found while assembling a [`Dut`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{kind}: {detail}")]
pub struct DutError {
    pub kind: ParseErrorKind,
    pub block: Option<BlockId>,
    pub detail: String,
}

impl DutError {
    fn new(kind: ParseErrorKind, block: Option<BlockId>, detail: impl Into<String>) -> Self {
        DutError { kind, block, detail: detail.into() }
    }
}

/// Dense block numbering used by the interpreter and the analyses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub ids: Vec<BlockId>,
    pub index: BTreeMap<BlockId, usize>,
    pub entry: usize,
    /// Dense successor targets: Goto -> [t], Branch -> [then, else],
    /// CycleEnd -> [entry], Halt -> [].
    pub targets: Vec<Vec<usize>>,
    pub input_offsets: Vec<usize>,
    pub frame_size: usize,
}

/// A validated design under test. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Dut {
    name: String,
    inputs: Vec<Port>,
    registers: Vec<Register>,
    outputs: Vec<Port>,
    blocks: BTreeMap<BlockId, BasicBlock>,
    entry: BlockId,
    max_cycles: u32,
    max_steps_per_cycle: u64,
    declared_unreachable: BTreeSet<BranchEdge>,
    layout: Layout,
}

impl PartialEq for Dut {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.inputs == other.inputs
            && self.registers == other.registers
            && self.outputs == other.outputs
            && self.blocks == other.blocks
            && self.entry == other.entry
            && self.max_cycles == other.max_cycles
            && self.max_steps_per_cycle == other.max_steps_per_cycle
            && self.declared_unreachable == other.declared_unreachable
    }
}

impl Eq for Dut {}

/// Everything needed to build a [`Dut`]; validated by [`DutParts::build`].
#[derive(Debug, Clone, Default)]
pub struct DutParts {
    pub name: String,
    pub inputs: Vec<Port>,
    pub registers: Vec<Register>,
    pub outputs: Vec<Port>,
    pub blocks: Vec<BasicBlock>,
    pub entry: BlockId,
    pub max_cycles: u32,
    pub max_steps_per_cycle: u64,
    pub declared_unreachable: BTreeSet<BranchEdge>,
}

impl DutParts {
    pub fn build(self) -> Result<Dut, DutError> {
        Dut::from_parts(self)
    }
}

impl Dut {
    pub fn from_parts(parts: DutParts) -> Result<Dut, DutError> {
        use ParseErrorKind::*;

        let check_width = |w: u8, what: &str| {
            if (1..=64).contains(&w) {
                Ok(())
            } else {
                Err(DutError::new(WidthMismatch, None, alloc::format!("{what} has width {w}")))
            }
        };
        for p in &parts.inputs {
            check_width(p.width, &p.name)?;
        }
        for p in &parts.outputs {
            check_width(p.width, &p.name)?;
        }
        for r in &parts.registers {
            check_width(r.width, &r.name)?;
            if r.init > mask(r.width) {
                return Err(DutError::new(WidthMismatch, None, alloc::format!("init value of register {} does not fit", r.name)));
            }
        }
        if parts.max_cycles == 0 {
            return Err(DutError::new(Syntax, None, "max_cycles must be positive"));
        }
        if parts.max_steps_per_cycle == 0 {
            return Err(DutError::new(Syntax, None, "max_steps must be positive"));
        }

        let mut blocks = BTreeMap::new();
        for b in parts.blocks {
            let id = b.id;
            if blocks.insert(id, b).is_some() {
                return Err(DutError::new(Syntax, Some(id), alloc::format!("block {id} defined twice")));
            }
        }
        if !blocks.contains_key(&parts.entry) {
            return Err(DutError::new(DanglingTarget, None, alloc::format!("entry block {} does not exist", parts.entry)));
        }

        let ctx = TypeCtx { inputs: &parts.inputs, registers: &parts.registers };
        for b in blocks.values() {
            validate_block(b, &ctx, &parts.outputs, &blocks)?;
        }

        for edge in &parts.declared_unreachable {
            match blocks.get(&edge.site).map(|b| &b.terminator) {
                Some(Terminator::Branch { .. }) => {}
                Some(_) => {
                    return Err(DutError::new(
                        DanglingTarget,
                        Some(edge.site),
                        alloc::format!("unreachable edge {edge} is not on a branch"),
                    ))
                }
                None => return Err(DutError::new(DanglingTarget, None, alloc::format!("unreachable edge {edge} names a missing block"))),
            }
        }

        let layout = build_layout(&blocks, parts.entry, &parts.inputs);
        Ok(Dut {
            name: parts.name,
            inputs: parts.inputs,
            registers: parts.registers,
            outputs: parts.outputs,
            blocks,
            entry: parts.entry,
            max_cycles: parts.max_cycles,
            max_steps_per_cycle: parts.max_steps_per_cycle,
            declared_unreachable: parts.declared_unreachable,
            layout,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn inputs(&self) -> &[Port] {
        &self.inputs
    }

    pub fn registers(&self) -> &[Register] {
        &self.registers
    }

    pub fn outputs(&self) -> &[Port] {
        &self.outputs
    }

    pub fn blocks(&self) -> &BTreeMap<BlockId, BasicBlock> {
        &self.blocks
    }

    pub fn block(&self, id: BlockId) -> Option<&BasicBlock> {
        self.blocks.get(&id)
    }

    pub fn entry(&self) -> BlockId {
        self.entry
    }

    pub fn max_cycles(&self) -> u32 {
        self.max_cycles
    }

    pub fn max_steps_per_cycle(&self) -> u64 {
        self.max_steps_per_cycle
    }

    pub fn declared_unreachable(&self) -> &BTreeSet<BranchEdge> {
        &self.declared_unreachable
    }

    /// Bytes per input frame: each input packs little-endian into
    /// `ceil(width / 8)` bytes.
    pub fn frame_size(&self) -> usize {
        self.layout.frame_size
    }

    /// Byte offset of each input within a frame.
    pub fn input_offsets(&self) -> &[usize] {
        &self.layout.input_offsets
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn successors(&self, id: BlockId) -> Vec<BlockId> {
        self.blocks.get(&id).map(|b| b.terminator.successors(self.entry)).unwrap_or_default()
    }

    /// Every arm of every `Branch` terminator, reachable or not.
    pub fn branch_edges(&self) -> BTreeSet<BranchEdge> {
        self.blocks
            .values()
            .filter(|b| matches!(b.terminator, Terminator::Branch { .. }))
            .flat_map(|b| [BranchEdge::new(b.id, Arm::Then), BranchEdge::new(b.id, Arm::Else)])
            .collect()
    }

    pub fn branch_sites(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.blocks.values().filter(|b| matches!(b.terminator, Terminator::Branch { .. })).map(|b| b.id)
    }

    /// Destination block of a branch arm.
    pub fn arm_target(&self, edge: BranchEdge) -> Option<BlockId> {
        match &self.blocks.get(&edge.site)?.terminator {
            Terminator::Branch { then_target, else_target, .. } => Some(match edge.arm {
                Arm::Then => *then_target,
                Arm::Else => *else_target,
            }),
            _ => None,
        }
    }

    /// Blocks reachable from the entry, in ascending id order.
    pub fn reachable_blocks(&self) -> BTreeSet<BlockId> {
        let mut seen = BTreeSet::new();
        let mut stack = alloc::vec![self.entry];
        while let Some(b) = stack.pop() {
            if seen.insert(b) {
                stack.extend(self.successors(b));
            }
        }
        seen
    }

    /// Total input bits read per cycle.
    pub fn input_bits_per_cycle(&self) -> u32 {
        self.inputs.iter().map(|p| p.width as u32).sum()
    }

    /// Decodes the inputs of one frame.
    pub fn decode_frame(&self, frame: &[u8]) -> Vec<u64> {
        self.inputs
            .iter()
            .zip(&self.layout.input_offsets)
            .map(|(p, &off)| read_le(&frame[off..off + byte_len(p.width)]) & mask(p.width))
            .collect()
    }

    /// Encodes input values into one frame; values are truncated to width.
    pub fn encode_frame(&self, values: &[u64]) -> Vec<u8> {
        let mut frame = alloc::vec![0u8; self.layout.frame_size];
        for ((p, &off), &v) in self.inputs.iter().zip(&self.layout.input_offsets).zip(values) {
            let v = v & mask(p.width);
            for i in 0..byte_len(p.width) {
                frame[off + i] = (v >> (8 * i)) as u8;
            }
        }
        frame
    }
}

pub(crate) fn read_le(bytes: &[u8]) -> u64 {
    bytes.iter().rev().fold(0u64, |acc, &b| (acc << 8) | b as u64)
}

struct TypeCtx<'a> {
    inputs: &'a [Port],
    registers: &'a [Register],
}

fn expr_width(e: &Expr, ctx: &TypeCtx<'_>, locals: &[Stmt]) -> Result<u8, DutError> {
    use ParseErrorKind::*;
    Ok(match e {
        Expr::Const { value, width } => {
            if !(1..=64).contains(width) || *value > mask(*width) {
                return Err(DutError::new(WidthMismatch, None, alloc::format!("constant {value} does not fit width {width}")));
            }
            *width
        }
        Expr::Input(i) => ctx.inputs.get(*i).ok_or_else(|| DutError::new(UndefinedReference, None, "input index out of range"))?.width,
        Expr::Reg(i) => ctx.registers.get(*i).ok_or_else(|| DutError::new(UndefinedReference, None, "register index out of range"))?.width,
        Expr::Local(i) => locals.get(*i).ok_or_else(|| DutError::new(UndefinedReference, None, "local used before its definition"))?.width,
        Expr::Unary { width, arg, .. } => {
            let w = expr_width(arg, ctx, locals)?;
            if w != *width {
                return Err(DutError::new(WidthMismatch, None, "unary operand width"));
            }
            w
        }
        Expr::Binary { op, width, lhs, rhs } => {
            let lw = expr_width(lhs, ctx, locals)?;
            let rw = expr_width(rhs, ctx, locals)?;
            if op.is_comparison() {
                if lw != rw || *width != 1 {
                    return Err(DutError::new(WidthMismatch, None, alloc::format!("comparison of widths {lw} and {rw}")));
                }
            } else if op.is_shift() {
                if lw != *width {
                    return Err(DutError::new(WidthMismatch, None, "shift operand width"));
                }
            } else if lw != rw || lw != *width {
                return Err(DutError::new(WidthMismatch, None, alloc::format!("operands of `{}` have widths {lw} and {rw}", op.symbol())));
            }
            *width
        }
    })
}

fn validate_block(b: &BasicBlock, ctx: &TypeCtx<'_>, outputs: &[Port], blocks: &BTreeMap<BlockId, BasicBlock>) -> Result<(), DutError> {
    use ParseErrorKind::*;
    let with_block = |mut e: DutError| {
        e.block = Some(b.id);
        e
    };
    for (i, s) in b.stmts.iter().enumerate() {
        if !(1..=64).contains(&s.width) {
            return Err(with_block(DutError::new(WidthMismatch, None, alloc::format!("local {} has width {}", s.name, s.width))));
        }
        expr_width(&s.expr, ctx, &b.stmts[..i]).map_err(with_block)?;
    }
    let locals = &b.stmts[..];
    let target_exists = |t: &BlockId| {
        if blocks.contains_key(t) {
            Ok(())
        } else {
            Err(DutError::new(DanglingTarget, Some(b.id), alloc::format!("block {} jumps to missing block {t}", b.id)))
        }
    };
    match &b.terminator {
        Terminator::Goto(t) => target_exists(t)?,
        Terminator::Branch { cond, then_target, else_target } => {
            if expr_width(cond, ctx, locals).map_err(with_block)? != 1 {
                return Err(with_block(DutError::new(WidthMismatch, None, "branch condition must have width 1")));
            }
            target_exists(then_target)?;
            target_exists(else_target)?;
        }
        Terminator::CycleEnd(updates) => {
            if updates.len() != ctx.registers.len() {
                return Err(with_block(DutError::new(RegisterNotUpdated, None, "cycle end must assign every register exactly once")));
            }
            for (e, r) in updates.iter().zip(ctx.registers) {
                if expr_width(e, ctx, locals).map_err(with_block)? != r.width {
                    return Err(with_block(DutError::new(WidthMismatch, None, alloc::format!("update of register {}", r.name))));
                }
            }
        }
        Terminator::Halt(values) => {
            if values.len() != outputs.len() {
                return Err(with_block(DutError::new(RegisterNotUpdated, None, "halt must assign every output exactly once")));
            }
            for (e, o) in values.iter().zip(outputs) {
                if expr_width(e, ctx, locals).map_err(with_block)? != o.width {
                    return Err(with_block(DutError::new(WidthMismatch, None, alloc::format!("value of output {}", o.name))));
                }
            }
        }
    }
    Ok(())
}

fn build_layout(blocks: &BTreeMap<BlockId, BasicBlock>, entry: BlockId, inputs: &[Port]) -> Layout {
    let ids: Vec<BlockId> = blocks.keys().copied().collect();
    let index: BTreeMap<BlockId, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let entry_idx = index[&entry];
    let targets = blocks
        .values()
        .map(|b| match &b.terminator {
            Terminator::Goto(t) => alloc::vec![index[t]],
            Terminator::Branch { then_target, else_target, .. } => {
                alloc::vec![index[then_target], index[else_target]]
            }
            Terminator::CycleEnd(_) => alloc::vec![entry_idx],
            Terminator::Halt(_) => Vec::new(),
        })
        .collect();
    let mut input_offsets = Vec::with_capacity(inputs.len());
    let mut off = 0;
    for p in inputs {
        input_offsets.push(off);
        off += byte_len(p.width);
    }
    Layout { ids, index, entry: entry_idx, targets, input_offsets, frame_size: off }
}
