//! Symbolic bitvector expressions over test-case bytes.
//!
//! Expressions are immutable, reference-counted DAGs. Constructors fold
//! constant subtrees, so an expression with no byte leaves is always a
//! [`Kind::Const`]. [`Program`] compiles a set of expressions into a flat
//! postfix form for fast repeated evaluation.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use crate::dut::{mask, BinaryOp, UnaryOp};

#[derive(Debug, PartialEq, Eq)]
pub enum Kind {
    /// The byte at `offset` of the test case, zero-extended or truncated to
    /// the node width.
    Byte(u32),
    Const(u64),
    Unary(UnaryOp, SymExpr),
    Binary(BinaryOp, SymExpr, SymExpr),
    /// Zero-extension or truncation of the argument to the node width.
    Resize(SymExpr),
}

#[derive(Debug, PartialEq, Eq)]
pub struct Node {
    pub kind: Kind,
    pub width: u8,
    depth: u32,
}

#[derive(Clone, PartialEq, Eq)]
pub struct SymExpr(Arc<Node>);

impl SymExpr {
    fn node(kind: Kind, width: u8) -> Self {
        let depth = match &kind {
            Kind::Byte(_) | Kind::Const(_) => 1,
            Kind::Unary(_, a) | Kind::Resize(a) => a.depth() + 1,
            Kind::Binary(_, a, b) => a.depth().max(b.depth()) + 1,
        };
        SymExpr(Arc::new(Node { kind, width, depth }))
    }

    pub fn byte(offset: u32, width: u8) -> Self {
        Self::node(Kind::Byte(offset), width)
    }

    pub fn constant(value: u64, width: u8) -> Self {
        Self::node(Kind::Const(value & mask(width)), width)
    }

    pub fn unary(op: UnaryOp, width: u8, arg: SymExpr) -> Self {
        if let Some(v) = arg.as_const() {
            return Self::constant(op.apply(v, width), width);
        }
        Self::node(Kind::Unary(op, arg), width)
    }

    /// `width` is the result width (1 for comparisons).
    pub fn binary(op: BinaryOp, width: u8, lhs: SymExpr, rhs: SymExpr) -> Self {
        match (lhs.as_const(), rhs.as_const()) {
            (Some(a), Some(b)) => return Self::constant(op.apply(a, b, width), width),
            (_, Some(0)) if matches!(op, BinaryOp::Add | BinaryOp::Sub | BinaryOp::Or | BinaryOp::Xor | BinaryOp::Shl | BinaryOp::Shr) => {
                return lhs
            }
            (Some(0), _) if matches!(op, BinaryOp::Add | BinaryOp::Or | BinaryOp::Xor) => return rhs,
            (_, Some(0)) | (Some(0), _) if matches!(op, BinaryOp::And | BinaryOp::Mul) => return Self::constant(0, width),
            _ => {}
        }
        Self::node(Kind::Binary(op, lhs, rhs), width)
    }

    pub fn resize(width: u8, arg: SymExpr) -> Self {
        if arg.width() == width {
            return arg;
        }
        if let Some(v) = arg.as_const() {
            return Self::constant(v, width);
        }
        if let Kind::Byte(off) = arg.kind() {
            // Resizing a byte leaf just changes how much of the byte it keeps.
            let keeps_same_bits = if width <= 8 { width <= arg.width() } else { arg.width() >= 8 };
            if keeps_same_bits {
                return Self::byte(*off, width);
            }
        }
        Self::node(Kind::Resize(arg), width)
    }

    pub fn width(&self) -> u8 {
        self.0.width
    }

    pub fn kind(&self) -> &Kind {
        &self.0.kind
    }

    /// Longest path to a leaf, counting nodes.
    pub fn depth(&self) -> u32 {
        self.0.depth
    }

    pub fn as_const(&self) -> Option<u64> {
        match self.0.kind {
            Kind::Const(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_const(&self) -> bool {
        self.as_const().is_some()
    }

    /// Identity of the shared node, for DAG-aware traversals.
    pub fn ptr(&self) -> *const Node {
        Arc::as_ptr(&self.0)
    }

    /// Distinct byte offsets the expression reads.
    pub fn offsets(&self) -> BTreeSet<u32> {
        let mut out = BTreeSet::new();
        walk(core::slice::from_ref(self), |e| {
            if let Kind::Byte(o) = e.kind() {
                out.insert(*o);
            }
        });
        out
    }

    /// Evaluates with `byte(offset)` supplying the test-case bytes.
    pub fn eval(&self, byte: impl Fn(u32) -> u8) -> u64 {
        let prog = Program::compile(core::slice::from_ref(self));
        let bytes: Vec<u8> = prog.slots().iter().map(|&o| byte(o)).collect();
        let mut scratch = Vec::new();
        prog.eval(&bytes, &mut scratch);
        scratch[prog.roots()[0]]
    }
}

/// Visits every distinct node once, children before parents.
pub fn walk(roots: &[SymExpr], mut visit: impl FnMut(&SymExpr)) {
    let mut seen: BTreeSet<*const Node> = BTreeSet::new();
    let mut stack: Vec<(SymExpr, bool)> = roots.iter().rev().map(|e| (e.clone(), false)).collect();
    while let Some((e, expanded)) = stack.pop() {
        if expanded {
            visit(&e);
            continue;
        }
        if !seen.insert(e.ptr()) {
            continue;
        }
        stack.push((e.clone(), true));
        match e.kind() {
            Kind::Byte(_) | Kind::Const(_) => {}
            Kind::Unary(_, a) | Kind::Resize(a) => stack.push((a.clone(), false)),
            Kind::Binary(_, a, b) => {
                stack.push((b.clone(), false));
                stack.push((a.clone(), false));
            }
        }
    }
}

impl fmt::Debug for SymExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for SymExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.depth() > 64 {
            return write!(f, "<expr:{} depth {}>", self.width(), self.depth());
        }
        match self.kind() {
            Kind::Byte(o) => write!(f, "b{o}:{}", self.width()),
            Kind::Const(v) => write!(f, "{v:#x}:{}", self.width()),
            Kind::Unary(op, a) => write!(f, "{}({a})", op.symbol()),
            Kind::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Kind::Resize(a) => write!(f, "resize{}({a})", self.width()),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Byte { slot: u32, mask: u64 },
    Const(u64),
    Unary(UnaryOp, u8, u32),
    Binary(BinaryOp, u8, u32, u32),
    Mask(u64, u32),
}

/// A set of expressions flattened into shared postfix code. Byte leaves
/// read from a slot array; [`Program::slots`] gives the offset of each slot.
#[derive(Debug, Clone)]
pub struct Program {
    ops: Vec<Op>,
    roots: Vec<usize>,
    slots: Vec<u32>,
}

impl Program {
    pub fn compile(exprs: &[SymExpr]) -> Program {
        let mut index: BTreeMap<*const Node, u32> = BTreeMap::new();
        let mut slot_of: BTreeMap<u32, u32> = BTreeMap::new();
        let mut slots = Vec::new();
        let mut ops = Vec::new();
        walk(exprs, |e| {
            let at = |x: &SymExpr| index[&x.ptr()];
            let op = match e.kind() {
                Kind::Byte(o) => {
                    let slot = *slot_of.entry(*o).or_insert_with(|| {
                        slots.push(*o);
                        slots.len() as u32 - 1
                    });
                    Op::Byte { slot, mask: mask(e.width().min(8)) }
                }
                Kind::Const(v) => Op::Const(*v),
                Kind::Unary(op, a) => Op::Unary(*op, e.width(), at(a)),
                Kind::Binary(op, a, b) => Op::Binary(*op, e.width(), at(a), at(b)),
                Kind::Resize(a) => Op::Mask(mask(e.width()), at(a)),
            };
            index.insert(e.ptr(), ops.len() as u32);
            ops.push(op);
        });
        let roots = exprs.iter().map(|e| index[&e.ptr()] as usize).collect();
        Program { ops, roots, slots }
    }

    /// Offsets read by the program, indexed by slot.
    pub fn slots(&self) -> &[u32] {
        &self.slots
    }

    /// Positions of the compiled expressions' values in the scratch buffer.
    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Evaluates every node; `bytes[slot]` supplies the leaves.
    pub fn eval(&self, bytes: &[u8], scratch: &mut Vec<u64>) {
        scratch.clear();
        scratch.reserve(self.ops.len());
        for op in &self.ops {
            let v = match *op {
                Op::Byte { slot, mask } => bytes[slot as usize] as u64 & mask,
                Op::Const(v) => v,
                Op::Unary(op, w, a) => op.apply(scratch[a as usize], w),
                Op::Binary(op, w, a, b) => op.apply(scratch[a as usize], scratch[b as usize], w),
                Op::Mask(m, a) => scratch[a as usize] & m,
            };
            scratch.push(v);
        }
    }

    pub fn root_value(&self, scratch: &[u64], i: usize) -> u64 {
        scratch[self.roots[i]]
    }
}
