//! A deliberately naive interpreter written against the IR's documented
//! semantics, used as an oracle for the real one.

use std::collections::BTreeSet;

use raretrig_core::dut::{BasicBlock, BinaryOp, Expr, Terminator, UnaryOp};
use raretrig_core::{Arm, BlockId, BranchEdge, Dut};

fn m(w: u8) -> u64 {
    if w >= 64 {
        u64::MAX
    } else {
        (1u64 << w) - 1
    }
}

fn width_of(e: &Expr, dut: &Dut, block: &BasicBlock) -> u8 {
    match e {
        Expr::Const { width, .. } | Expr::Unary { width, .. } | Expr::Binary { width, .. } => *width,
        Expr::Input(i) => dut.inputs()[*i].width,
        Expr::Reg(i) => dut.registers()[*i].width,
        Expr::Local(i) => block.stmts[*i].width,
    }
}

fn eval(e: &Expr, dut: &Dut, block: &BasicBlock, inputs: &[u64], regs: &[u64], locals: &[u64]) -> u64 {
    match e {
        Expr::Const { value, .. } => *value,
        Expr::Input(i) => inputs[*i],
        Expr::Reg(i) => regs[*i],
        Expr::Local(i) => locals[*i],
        Expr::Unary { op, width, arg } => {
            let a = eval(arg, dut, block, inputs, regs, locals);
            let r = match op {
                UnaryOp::Not => !a,
                UnaryOp::Neg => 0u64.wrapping_sub(a),
            };
            r & m(*width)
        }
        Expr::Binary { op, width, lhs, rhs } => {
            let a = eval(lhs, dut, block, inputs, regs, locals);
            let b = eval(rhs, dut, block, inputs, regs, locals);
            let w = width_of(lhs, dut, block);
            let r = match op {
                BinaryOp::Add => a.wrapping_add(b),
                BinaryOp::Sub => a.wrapping_sub(b),
                BinaryOp::Mul => a.wrapping_mul(b),
                BinaryOp::And => a & b,
                BinaryOp::Or => a | b,
                BinaryOp::Xor => a ^ b,
                BinaryOp::Shl => a.checked_shl(b.min(64) as u32).filter(|_| b < w as u64).unwrap_or(0),
                BinaryOp::Shr => a.checked_shr(b.min(64) as u32).filter(|_| b < w as u64).unwrap_or(0),
                BinaryOp::Eq => (a == b) as u64,
                BinaryOp::Ne => (a != b) as u64,
                BinaryOp::Ltu => (a < b) as u64,
                BinaryOp::Leu => (a <= b) as u64,
                BinaryOp::Gtu => (a > b) as u64,
                BinaryOp::Geu => (a >= b) as u64,
            };
            r & m(*width)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefRun {
    pub outputs: Option<Vec<u64>>,
    /// (site, taken, cycle) per executed branch.
    pub events: Vec<(BlockId, bool, u32)>,
    /// Every block entered, in order.
    pub path: Vec<BlockId>,
    pub cycles: u32,
}

impl RefRun {
    pub fn arms(&self) -> BTreeSet<BranchEdge> {
        self.events.iter().map(|&(s, t, _)| BranchEdge::new(s, if t { Arm::Then } else { Arm::Else })).collect()
    }

    pub fn visited(&self) -> BTreeSet<BlockId> {
        self.path.iter().copied().collect()
    }
}

pub fn frame_size(dut: &Dut) -> usize {
    dut.inputs().iter().map(|p| (p.width as usize).div_ceil(8)).sum()
}

/// `None` when the input ends mid-frame.
pub fn run(dut: &Dut, bytes: &[u8]) -> Option<RefRun> {
    let fs = frame_size(dut);
    if fs == 0 {
        if !bytes.is_empty() {
            return None;
        }
    } else if !bytes.len().is_multiple_of(fs) {
        return None;
    }
    let frames = bytes.len().checked_div(fs).map_or(u64::MAX, |n| n as u64);
    let mut regs: Vec<u64> = dut.registers().iter().map(|r| r.init).collect();
    let mut out = RefRun { outputs: None, events: Vec::new(), path: Vec::new(), cycles: 0 };
    for cycle in 0..dut.max_cycles() {
        if cycle as u64 >= frames {
            break;
        }
        out.cycles = cycle + 1;
        let mut at = cycle as usize * fs;
        let mut inputs = Vec::new();
        for p in dut.inputs() {
            let n = (p.width as usize).div_ceil(8);
            let mut v = 0u64;
            for k in 0..n {
                v |= (bytes[at + k] as u64) << (8 * k);
            }
            inputs.push(v & m(p.width));
            at += n;
        }
        let mut id = dut.entry();
        let mut steps = 0;
        loop {
            if steps == dut.max_steps_per_cycle() {
                return Some(out);
            }
            steps += 1;
            out.path.push(id);
            let b = dut.block(id).unwrap();
            let mut locals = Vec::new();
            for s in &b.stmts {
                let v = eval(&s.expr, dut, b, &inputs, &regs, &locals);
                locals.push(v & m(s.width));
            }
            match &b.terminator {
                Terminator::Goto(t) => id = *t,
                Terminator::Branch { cond, then_target, else_target } => {
                    let c = eval(cond, dut, b, &inputs, &regs, &locals) != 0;
                    out.events.push((id, c, cycle));
                    id = if c { *then_target } else { *else_target };
                }
                Terminator::CycleEnd(next) => {
                    regs = next.iter().zip(dut.registers()).map(|(e, r)| eval(e, dut, b, &inputs, &regs, &locals) & m(r.width)).collect();
                    break;
                }
                Terminator::Halt(outs) => {
                    out.outputs = Some(outs.iter().map(|e| eval(e, dut, b, &inputs, &regs, &locals)).collect());
                    return Some(out);
                }
            }
        }
    }
    Some(out)
}

/// Meaningful input bits across all cycles.
pub fn input_bits(dut: &Dut) -> u32 {
    dut.inputs().iter().map(|p| p.width as u32).sum::<u32>() * dut.max_cycles()
}

/// Every full-length input, with unused high bits zero. Only for designs
/// with at most 20 input bits.
pub fn all_inputs(dut: &Dut) -> Vec<Vec<u8>> {
    let bits = input_bits(dut);
    assert!(bits <= 20, "{} has {bits} input bits", dut.name());
    let widths: Vec<u8> = dut.inputs().iter().map(|p| p.width).collect();
    let mut out = Vec::with_capacity(1 << bits);
    for mut code in 0u64..(1u64 << bits) {
        let mut bytes = Vec::new();
        for _ in 0..dut.max_cycles() {
            for &w in &widths {
                let v = code & m(w);
                code >>= w;
                bytes.extend_from_slice(&v.to_le_bytes()[..(w as usize).div_ceil(8)]);
            }
        }
        out.push(bytes);
    }
    out
}

/// Branch arms taken by at least one full-length input.
pub fn reachable_arms(dut: &Dut) -> BTreeSet<BranchEdge> {
    let mut arms = BTreeSet::new();
    for bytes in all_inputs(dut) {
        arms.extend(run(dut, &bytes).unwrap().arms());
    }
    arms
}
