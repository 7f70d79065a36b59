//! Rare-branch test generation for a miniature hardware design IR.
//!
//! A design under test ([`Dut`]) is a control-flow graph over fixed-width
//! unsigned bitvectors with per-cycle inputs and registers. The crate finds
//! branch arms that random simulation never exercises, selectively
//! instruments the design around them, and alternates a coverage-guided
//! greybox fuzzer with a concolic engine until those arms are covered. The
//! generated tests then drive a golden-reference lookup table to flag trojan
//! logic.
//!
//! The crate is `no_std` and only needs `alloc`. Wall-clock time enters
//! through the [`budget::Clock`] trait and parallel execution through
//! [`fuzz::BatchExecutor`]; the `raretrig` crate provides std-backed versions
//! of both, along with file formats and the command-line front end.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod budget;
pub mod concolic;
pub mod coverage;
pub mod detector;
pub mod dut;
pub mod fuzz;
pub mod instrument;
pub mod orchestrator;
pub mod solver;
pub mod sym;

pub use concolic::{concol_exec, shadow_execute, ExecutionTree, PathCondition, SymRange};
pub use coverage::{absorb, evaluate, CoverageBitmap, CoverageReport, NoveltyResult};
pub use detector::{build_lut, detect, detect_all, DetectionReport, GoldenLut, Verdict};
pub use dut::{
    execute, parse_dut, random_testcase, render_dut, Arm, BlockId, BranchEdge, Dut, ExecError, Origin, ParseError, ParseErrorKind,
    TestCase, Trace,
};
pub use fuzz::{calculate_energy, fuzz_loop, mutate, FuzzQueue, MutationStage};
pub use instrument::{compute_dominators, select_blocks, DomTree, InstrumentationPlan, PlanMode};
pub use orchestrator::{identify_rare_targets, run_campaign, CampaignConfig, CampaignReport};
pub use solver::{solve, SolveOutcome};
pub use sym::SymExpr;
