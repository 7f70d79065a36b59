//! Helpers shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use raretrig::core::dut::{execute_bytes, Trace};
use raretrig::core::{Arm, BranchEdge, Dut, InstrumentationPlan};

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

/// Full-plan execution; panics on malformed input.
pub fn run(dut: &Dut, bytes: &[u8]) -> Trace {
    execute_bytes(dut, bytes, &InstrumentationPlan::full(dut, 0)).unwrap()
}

/// Cycle of the first time `trace` took `edge`.
pub fn first_take(trace: &Trace, edge: BranchEdge) -> Option<u32> {
    trace.branch_events.iter().find(|e| e.site == edge.site && Arm::from_taken(e.taken) == edge.arm).map(|e| e.cycle)
}

pub fn input_bits(dut: &Dut) -> u32 {
    dut.inputs().iter().map(|p| p.width as u32).sum::<u32>() * dut.max_cycles()
}

/// Every full-length input of a design with at most 20 input bits.
pub fn all_inputs(dut: &Dut) -> Vec<Vec<u8>> {
    let bits = input_bits(dut);
    assert!(bits <= 20, "{} has {bits} input bits", dut.name());
    (0u64..1 << bits)
        .map(|mut code| {
            let mut bytes = Vec::new();
            for _ in 0..dut.max_cycles() {
                let values: Vec<u64> = dut
                    .inputs()
                    .iter()
                    .map(|p| {
                        let v = code & ((1u64 << p.width) - 1);
                        code >>= p.width;
                        v
                    })
                    .collect();
                bytes.extend(dut.encode_frame(&values));
            }
            bytes
        })
        .collect()
}
