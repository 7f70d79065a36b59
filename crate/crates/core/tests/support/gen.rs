//! Random well-formed designs, rendered as text so the parser is exercised
//! too.

use std::fmt::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use raretrig_core::{parse_dut, Dut};

#[derive(Debug, Clone, Copy)]
pub struct GenOpts {
    /// Only forward jumps inside a cycle.
    pub loop_free: bool,
    /// Upper bound on input bits summed over all cycles.
    pub max_input_bits: u32,
    pub max_blocks: usize,
}

impl Default for GenOpts {
    fn default() -> Self {
        GenOpts { loop_free: false, max_input_bits: 24, max_blocks: 10 }
    }
}

const OPS: &[&str] = &["+", "-", "*", "&", "|", "^", "<<", ">>"];
const CMPS: &[&str] = &["==", "!=", "<u", "<=u", ">u", ">=u"];

pub fn random_dut(seed: u64, opts: GenOpts) -> Dut {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let text = random_text(&mut rng, opts);
    parse_dut(&text).unwrap_or_else(|e| panic!("generated design does not parse: {e}\n{text}"))
}

fn random_text(rng: &mut ChaCha8Rng, opts: GenOpts) -> String {
    let cycles: u32 = rng.gen_range(1..=3);
    let n_inputs = rng.gen_range(1..=2);
    let mut widths = Vec::new();
    for _ in 0..n_inputs {
        widths.push(*[1u8, 2, 3, 4, 5, 8].choose(rng).unwrap());
    }
    while widths.iter().map(|&w| w as u32).sum::<u32>() * cycles > opts.max_input_bits {
        let i = rng.gen_range(0..widths.len());
        widths[i] = (widths[i] / 2).max(1);
        if widths.iter().all(|&w| w == 1) && widths.len() as u32 * cycles > opts.max_input_bits {
            widths.pop();
        }
    }
    let has_reg = cycles > 1 && rng.gen_bool(0.7);
    let n_blocks = rng.gen_range(3..=opts.max_blocks.max(3));
    // sparse, increasing ids
    let mut ids = Vec::new();
    let mut next = rng.gen_range(0..3u32);
    for _ in 0..n_blocks {
        ids.push(next);
        next += rng.gen_range(1..4);
    }

    let mut t = String::new();
    writeln!(t, "dut gen").unwrap();
    for (i, w) in widths.iter().enumerate() {
        writeln!(t, "input i{i} {w}").unwrap();
    }
    if has_reg {
        writeln!(t, "reg r0 4 init {}", rng.gen_range(0..16)).unwrap();
    }
    writeln!(t, "output o0 8").unwrap();

    for (k, id) in ids.iter().enumerate() {
        writeln!(t, "block {id}:").unwrap();
        // Widen every source to 8 bits, then combine.
        let mut vals: Vec<String> = Vec::new();
        for i in 0..widths.len() {
            writeln!(t, "  x{i}:8 = i{i}").unwrap();
            vals.push(format!("x{i}"));
        }
        if has_reg {
            writeln!(t, "  xr:8 = r0").unwrap();
            vals.push("xr".into());
        }
        for j in 0..rng.gen_range(0..3) {
            let a = vals.choose(rng).unwrap().clone();
            let op = OPS.choose(rng).unwrap();
            let b = if rng.gen_bool(0.5) {
                vals.choose(rng).unwrap().clone()
            } else if op.contains('<') || op.contains('>') {
                rng.gen_range(0..8).to_string()
            } else {
                rng.gen_range(0..256).to_string()
            };
            writeln!(t, "  t{j} = {a} {op} {b}").unwrap();
            vals.push(format!("t{j}"));
        }

        let last = k + 1 == ids.len();
        let forward: Vec<u32> = ids[k + 1..].to_vec();
        let targets: Vec<u32> = if opts.loop_free { forward.clone() } else { ids.clone() };
        let choice = if last { rng.gen_range(2..4) } else { rng.gen_range(0..5) };
        match choice {
            0 | 4 if !targets.is_empty() => {
                let a = vals.choose(rng).unwrap();
                let cmp = CMPS.choose(rng).unwrap();
                let b = if rng.gen_bool(0.3) { vals.choose(rng).unwrap().clone() } else { rng.gen_range(0..256).to_string() };
                writeln!(t, "  c = {a} {cmp} {b}").unwrap();
                let th = targets.choose(rng).unwrap();
                let el = targets.choose(rng).unwrap();
                writeln!(t, "  br c ? {th} : {el}").unwrap();
            }
            1 if !targets.is_empty() => {
                writeln!(t, "  goto {}", targets.choose(rng).unwrap()).unwrap();
            }
            2 if cycles > 1 => {
                if has_reg {
                    let a = vals.choose(rng).unwrap();
                    writeln!(t, "  nr:4 = {a}").unwrap();
                    writeln!(t, "  cycle {{r0=nr}}").unwrap();
                } else {
                    writeln!(t, "  cycle").unwrap();
                }
            }
            _ => {
                writeln!(t, "  halt {{o0={}}}", vals.choose(rng).unwrap()).unwrap();
            }
        }
    }
    writeln!(t, "entry {}", ids[0]).unwrap();
    writeln!(t, "max_cycles {cycles}").unwrap();
    writeln!(t, "max_steps 64").unwrap();
    t
}

/// Random bytes for `frames` frames of `dut`.
pub fn random_input(dut: &Dut, frames: u32, rng: &mut impl Rng) -> Vec<u8> {
    let mut v = vec![0u8; dut.frame_size() * frames as usize];
    rng.fill(&mut v[..]);
    v
}
