//! Tiered bitvector constraint solver.
//!
//! 1. Inversion: constraints of the form `f(x) == c` where `f` is a chain of
//!    invertible operations (add, sub, xor, not, neg, odd multiply, shifts,
//!    resizes, bit-disjoint or) are solved by back-substitution; simple
//!    comparisons against constants get a boundary value.
//! 2. Exhaustive search over each independent group of bytes whose relevant
//!    bits number at most [`SolveBudget::exhaustive_bits`]. A failed
//!    exhaustive search proves the system unsatisfiable.
//! 3. Randomized hill-climbing for larger groups; failure yields `Unknown`.
//!
//! Every assignment is checked against all constraints before it is
//! returned.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::concolic::SymRange;
use crate::dut::{mask, BinaryOp, UnaryOp};
use crate::sym::{walk, Kind, Program, SymExpr};

/// A predicate of width 1 and the value it must take.
pub type Constraint = (SymExpr, bool);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tier {
    Inversion,
    Exhaustive,
    HillClimb,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolveOutcome {
    /// Byte values for every offset the constraints read.
    Sat {
        assignment: BTreeMap<u32, u8>,
        tier: Tier,
    },
    Unsat,
    Unknown,
}

impl SolveOutcome {
    pub fn is_sat(&self) -> bool {
        matches!(self, SolveOutcome::Sat { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolveBudget {
    /// Largest group, in relevant bits, searched exhaustively.
    pub exhaustive_bits: u32,
    /// Candidate evaluations allowed for hill-climbing.
    pub climb_steps: u32,
    pub seed: u64,
}

impl Default for SolveBudget {
    fn default() -> Self {
        SolveBudget { exhaustive_bits: 24, climb_steps: 4096, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SolveError {
    #[error("constraint reads byte {0}, which is not symbolic")]
    OffsetOutsideSym(u32),
    #[error("constraint has width {0}; predicates must have width 1")]
    NotPredicate(u8),
}

/// Pluggable solving back end.
pub trait Solver {
    /// Solves `constraints`; `hint` holds the seed's bytes, used for bytes
    /// the solution leaves free and as the search starting point.
    fn solve(&self, constraints: &[Constraint], sym: &SymRange, hint: &[u8]) -> Result<SolveOutcome, SolveError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TieredSolver {
    pub budget: SolveBudget,
}

impl Solver for TieredSolver {
    fn solve(&self, constraints: &[Constraint], sym: &SymRange, hint: &[u8]) -> Result<SolveOutcome, SolveError> {
        solve(constraints, sym, hint, &self.budget)
    }
}

/// Known bits per byte offset: (mask, value).
type Bindings = BTreeMap<u32, (u8, u8)>;

fn bind(b: &mut Bindings, offset: u32, m: u8, v: u8) -> bool {
    let v = v & m;
    let slot = b.entry(offset).or_insert((0, 0));
    if (slot.1 ^ v) & slot.0 & m != 0 {
        return false;
    }
    slot.0 |= m;
    slot.1 = (slot.1 & !m) | v;
    true
}

const MAX_INVERT_DEPTH: u32 = 512;

/// Bits of `e` that can ever be 1.
fn possible_mask(e: &SymExpr) -> u64 {
    let m = mask(e.width());
    if e.depth() > 64 {
        return m;
    }
    let pm = match e.kind() {
        Kind::Byte(_) => mask(e.width().min(8)),
        Kind::Const(v) => *v,
        Kind::Resize(a) => possible_mask(a),
        Kind::Unary(..) => m,
        Kind::Binary(op, a, b) => match op {
            BinaryOp::And => possible_mask(a) & possible_mask(b),
            BinaryOp::Or | BinaryOp::Xor => possible_mask(a) | possible_mask(b),
            BinaryOp::Shl => match b.as_const() {
                Some(k) if k < 64 => possible_mask(a) << k,
                Some(_) => 0,
                None => m,
            },
            BinaryOp::Shr => match b.as_const() {
                Some(k) if k < 64 => possible_mask(a) >> k,
                Some(_) => 0,
                None => m,
            },
            _ => m,
        },
    };
    pm & m
}

fn mod_inverse(a: u64) -> u64 {
    // Newton iteration for odd `a` modulo 2^64.
    let mut x = a;
    for _ in 0..6 {
        x = x.wrapping_mul(2u64.wrapping_sub(a.wrapping_mul(x)));
    }
    x
}

/// Records bit bindings that make `e` evaluate to `t`. Returns false when
/// no binding is found; `b` may then hold partial results.
fn invert(e: &SymExpr, t: u64, b: &mut Bindings) -> bool {
    let w = e.width();
    let m = mask(w);
    if t & !m != 0 || e.depth() > MAX_INVERT_DEPTH {
        return false;
    }
    match e.kind() {
        Kind::Const(v) => *v == t,
        Kind::Byte(o) => {
            if t > 0xFF {
                return false;
            }
            bind(b, *o, mask(w.min(8)) as u8, t as u8)
        }
        Kind::Unary(UnaryOp::Not, a) => invert(a, !t & m, b),
        Kind::Unary(UnaryOp::Neg, a) => invert(a, t.wrapping_neg() & m, b),
        Kind::Resize(a) => t <= mask(a.width()) && invert(a, t, b),
        Kind::Binary(op, x, y) => {
            if op.is_comparison() {
                return invert_comparison(*op, x, y, t == 1, b);
            }
            let (sym, c, const_on_left) = match (x.as_const(), y.as_const()) {
                (None, Some(c)) => (x, c, false),
                (Some(c), None) => (y, c, true),
                (None, None) => {
                    if matches!(op, BinaryOp::Or | BinaryOp::Add | BinaryOp::Xor) {
                        let (px, py) = (possible_mask(x), possible_mask(y));
                        if px & py == 0 && t & !(px | py) == 0 {
                            return invert(x, t & px, b) && invert(y, t & py, b);
                        }
                    }
                    return false;
                }
                (Some(_), Some(_)) => return false,
            };
            match op {
                BinaryOp::Add => invert(sym, t.wrapping_sub(c) & m, b),
                BinaryOp::Sub if const_on_left => invert(sym, c.wrapping_sub(t) & m, b),
                BinaryOp::Sub => invert(sym, t.wrapping_add(c) & m, b),
                BinaryOp::Xor => invert(sym, t ^ c, b),
                BinaryOp::Mul if c & 1 == 1 => invert(sym, t.wrapping_mul(mod_inverse(c)) & m, b),
                BinaryOp::And => t & !c == 0 && invert(sym, t, b),
                BinaryOp::Or => t & c == c && invert(sym, t & !c, b),
                BinaryOp::Shl if !const_on_left => {
                    if c >= w as u64 {
                        t == 0
                    } else {
                        t & mask(c as u8) == 0 && invert(sym, t >> c, b)
                    }
                }
                BinaryOp::Shr if !const_on_left => {
                    if c >= w as u64 {
                        t == 0
                    } else {
                        let v = t << c;
                        v >> c == t && v & !m == 0 && invert(sym, v, b)
                    }
                }
                _ => false,
            }
        }
    }
}

/// Picks a boundary operand value satisfying `x op y == want` when one side
/// is constant.
fn invert_comparison(op: BinaryOp, x: &SymExpr, y: &SymExpr, want: bool, b: &mut Bindings) -> bool {
    let (sym, c, op) = match (x.as_const(), y.as_const()) {
        (None, Some(c)) => (x, c, op),
        (Some(c), None) => {
            let flipped = match op {
                BinaryOp::Ltu => BinaryOp::Gtu,
                BinaryOp::Leu => BinaryOp::Geu,
                BinaryOp::Gtu => BinaryOp::Ltu,
                BinaryOp::Geu => BinaryOp::Leu,
                other => other,
            };
            (y, c, flipped)
        }
        _ => return false,
    };
    let m = mask(sym.width());
    // Normalize to a positive requirement.
    let op = if want {
        op
    } else {
        match op {
            BinaryOp::Eq => BinaryOp::Ne,
            BinaryOp::Ne => BinaryOp::Eq,
            BinaryOp::Ltu => BinaryOp::Geu,
            BinaryOp::Leu => BinaryOp::Gtu,
            BinaryOp::Gtu => BinaryOp::Leu,
            BinaryOp::Geu => BinaryOp::Ltu,
            _ => return false,
        }
    };
    let target = match op {
        BinaryOp::Eq => c,
        BinaryOp::Ne => c ^ 1,
        BinaryOp::Ltu if c > 0 => c - 1,
        BinaryOp::Leu | BinaryOp::Geu => c,
        BinaryOp::Gtu if c < m => c + 1,
        _ => return false,
    };
    invert(sym, target, b)
}

fn is_exact_equality(e: &SymExpr, want: bool) -> bool {
    matches!(e.kind(), Kind::Binary(BinaryOp::Eq, ..)) == want && matches!(e.kind(), Kind::Binary(BinaryOp::Eq | BinaryOp::Ne, ..))
}

struct UnionFind {
    parent: BTreeMap<u32, u32>,
}

impl UnionFind {
    fn find(&mut self, x: u32) -> u32 {
        let p = *self.parent.entry(x).or_insert(x);
        if p == x {
            return x;
        }
        let r = self.find(p);
        self.parent.insert(x, r);
        r
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent.insert(ra.max(rb), ra.min(rb));
        }
    }
}

/// A group of constraints sharing no bytes with any other group.
struct Group {
    prog: Program,
    wants: Vec<bool>,
    /// Bits of each slot that some leaf reads.
    relevant: Vec<u8>,
}

impl Group {
    fn new(constraints: &[&Constraint]) -> Self {
        let exprs: Vec<SymExpr> = constraints.iter().map(|c| c.0.clone()).collect();
        let prog = Program::compile(&exprs);
        let mut relevant = vec![0u8; prog.slots().len()];
        let slot_of: BTreeMap<u32, usize> = prog.slots().iter().enumerate().map(|(i, &o)| (o, i)).collect();
        walk(&exprs, |e| {
            if let Kind::Byte(o) = e.kind() {
                relevant[slot_of[o]] |= mask(e.width().min(8)) as u8;
            }
        });
        Group { prog, wants: constraints.iter().map(|c| c.1).collect(), relevant }
    }

    fn satisfied(&self, bytes: &[u8], scratch: &mut Vec<u64>) -> usize {
        self.prog.eval(bytes, scratch);
        (0..self.wants.len()).filter(|&i| (self.prog.root_value(scratch, i) == 1) == self.wants[i]).count()
    }

    fn all(&self, bytes: &[u8], scratch: &mut Vec<u64>) -> bool {
        self.satisfied(bytes, scratch) == self.wants.len()
    }

    /// Gray-code walk over every combination of the `free` bits, starting
    /// from `bytes`. Leaves the solution in `bytes`.
    fn exhaust(&self, bytes: &mut [u8], free: &[u8], scratch: &mut Vec<u64>) -> bool {
        let bits: Vec<(usize, u8)> =
            free.iter().enumerate().flat_map(|(slot, &m)| (0..8).filter(move |k| m >> k & 1 == 1).map(move |k| (slot, 1u8 << k))).collect();
        if self.all(bytes, scratch) {
            return true;
        }
        let n = bits.len() as u32;
        for step in 1u64..(1u64 << n) {
            let (slot, bit) = bits[step.trailing_zeros() as usize];
            bytes[slot] ^= bit;
            if self.all(bytes, scratch) {
                return true;
            }
        }
        false
    }

    fn climb(&self, bytes: &mut [u8], steps: u32, rng: &mut ChaCha8Rng, scratch: &mut Vec<u64>) -> bool {
        let slots: Vec<usize> = (0..self.relevant.len()).filter(|&s| self.relevant[s] != 0).collect();
        if slots.is_empty() {
            return self.all(bytes, scratch);
        }
        let goal = self.wants.len();
        let mut score = self.satisfied(bytes, scratch);
        let mut since_improvement = 0u32;
        for _ in 0..steps {
            if score == goal {
                return true;
            }
            let slot = slots[rng.gen_range(0..slots.len())];
            let old = bytes[slot];
            let rel = self.relevant[slot];
            bytes[slot] = if rng.gen_bool(0.5) {
                let bits: Vec<u8> = (0..8).filter(|k| rel >> k & 1 == 1).collect();
                old ^ (1 << bits[rng.gen_range(0..bits.len())])
            } else {
                (old & !rel) | (rng.gen::<u8>() & rel)
            };
            let s = self.satisfied(bytes, scratch);
            if s > score {
                score = s;
                since_improvement = 0;
            } else if s == score {
                since_improvement += 1;
            } else {
                bytes[slot] = old;
                since_improvement += 1;
            }
            if since_improvement > 256 {
                // Random restart.
                for &s in &slots {
                    bytes[s] = (bytes[s] & !self.relevant[s]) | (rng.gen::<u8>() & self.relevant[s]);
                }
                score = self.satisfied(bytes, scratch);
                since_improvement = 0;
            }
        }
        score == goal
    }
}

/// Solves `constraints` over the symbolic bytes `sym`; see the module docs.
pub fn solve(constraints: &[Constraint], sym: &SymRange, hint: &[u8], budget: &SolveBudget) -> Result<SolveOutcome, SolveError> {
    let mut live: Vec<&Constraint> = Vec::new();
    let mut offsets: BTreeSet<u32> = BTreeSet::new();
    for c in constraints {
        if c.0.width() != 1 {
            return Err(SolveError::NotPredicate(c.0.width()));
        }
        let offs = c.0.offsets();
        if let Some(&o) = offs.iter().find(|&&o| !sym.contains(o)) {
            return Err(SolveError::OffsetOutsideSym(o));
        }
        match c.0.as_const() {
            Some(v) if (v == 1) != c.1 => return Ok(SolveOutcome::Unsat),
            Some(_) => {}
            None => {
                offsets.extend(offs);
                live.push(c);
            }
        }
    }
    let hint_at = |o: u32| hint.get(o as usize).copied().unwrap_or(0);
    let mut current: BTreeMap<u32, u8> = offsets.iter().map(|&o| (o, hint_at(o))).collect();
    if live.is_empty() {
        return Ok(SolveOutcome::Sat { assignment: current, tier: Tier::Inversion });
    }

    // Tier 1: equalities first, then boundary values for anything the
    // equalities left unsatisfied.
    let mut bindings = Bindings::new();
    let exact: Vec<&Constraint> = live.iter().copied().filter(|c| is_exact_equality(&c.0, c.1)).collect();
    let rest: Vec<&Constraint> = live.iter().copied().filter(|c| !is_exact_equality(&c.0, c.1)).collect();
    for c in exact {
        let mut trial = bindings.clone();
        if invert(&c.0, c.1 as u64, &mut trial) {
            bindings = trial;
        }
    }
    for c in rest {
        let cur = apply_bindings(&current, &bindings);
        if (c.0.eval(|o| cur[&o]) == 1) == c.1 {
            continue;
        }
        let mut trial = bindings.clone();
        if invert(&c.0, c.1 as u64, &mut trial) {
            bindings = trial;
        }
    }
    current = apply_bindings(&current, &bindings);
    if live.iter().all(|c| (c.0.eval(|o| current[&o]) == 1) == c.1) {
        return Ok(SolveOutcome::Sat { assignment: current, tier: Tier::Inversion });
    }

    // Independent groups.
    let mut uf = UnionFind { parent: BTreeMap::new() };
    let per_constraint: Vec<BTreeSet<u32>> = live.iter().map(|c| c.0.offsets()).collect();
    for offs in &per_constraint {
        let mut it = offs.iter();
        if let Some(&first) = it.next() {
            for &o in it {
                uf.union(first, o);
            }
        }
    }
    let mut groups: BTreeMap<u32, Vec<&Constraint>> = BTreeMap::new();
    for (c, offs) in live.iter().zip(&per_constraint) {
        let root = uf.find(*offs.iter().next().expect("live constraints read bytes"));
        groups.entry(root).or_default().push(c);
    }

    let mut tier = Tier::Inversion;
    let mut unknown = false;
    let mut scratch = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    for members in groups.values() {
        let g = Group::new(members);
        let mut bytes: Vec<u8> = g.prog.slots().iter().map(|o| current[o]).collect();
        if g.all(&bytes, &mut scratch) {
            continue;
        }
        let total_bits: u32 = g.relevant.iter().map(|m| m.count_ones()).sum();
        let solved = if total_bits <= budget.exhaustive_bits {
            tier = tier.max(Tier::Exhaustive);
            let bound: Vec<u8> = g.prog.slots().iter().map(|o| bindings.get(o).map_or(0, |b| b.0)).collect();
            let free: Vec<u8> = g.relevant.iter().zip(&bound).map(|(r, b)| r & !b).collect();
            let mut found = bound.iter().any(|&b| b != 0) && g.exhaust(&mut bytes, &free, &mut scratch);
            if !found {
                bytes = g.prog.slots().iter().map(|&o| hint_at(o)).collect();
                found = g.exhaust(&mut bytes, &g.relevant, &mut scratch);
                if !found {
                    return Ok(SolveOutcome::Unsat);
                }
            }
            found
        } else {
            tier = tier.max(Tier::HillClimb);
            g.climb(&mut bytes, budget.climb_steps, &mut rng, &mut scratch)
        };
        if solved {
            for (o, v) in g.prog.slots().iter().zip(bytes) {
                current.insert(*o, v);
            }
        } else {
            unknown = true;
        }
    }
    if unknown {
        return Ok(SolveOutcome::Unknown);
    }
    if live.iter().all(|c| (c.0.eval(|o| current[&o]) == 1) == c.1) {
        Ok(SolveOutcome::Sat { assignment: current, tier })
    } else {
        Ok(SolveOutcome::Unknown)
    }
}

fn apply_bindings(base: &BTreeMap<u32, u8>, b: &Bindings) -> BTreeMap<u32, u8> {
    let mut out = base.clone();
    for (o, &(m, v)) in b {
        if let Some(x) = out.get_mut(o) {
            *x = (*x & !m) | v;
        }
    }
    out
}
