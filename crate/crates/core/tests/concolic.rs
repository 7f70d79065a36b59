//! Concolic engine and solver, checked against the reference interpreter
//! and exhaustive enumeration.

mod support;

use std::cell::RefCell;
use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use raretrig_core::budget::NoClock;
use raretrig_core::concolic::{concol_exec_with, ConcolicBudget, ConcolicStop};
use raretrig_core::solver::{Constraint, SolveBudget, SolveError, Solver, TieredSolver};
use raretrig_core::sym::Program;
use raretrig_core::{shadow_execute, solve, BranchEdge, Dut, ExecutionTree, InstrumentationPlan, Origin, SolveOutcome, SymRange, TestCase};
use support::gen::{random_dut, random_input, GenOpts};
use support::reference;

/// Constraints compiled once, for repeated evaluation.
struct Checker {
    prog: Program,
    want: Vec<bool>,
    scratch: RefCell<Vec<u64>>,
}

impl Checker {
    fn new(cs: &[Constraint]) -> Self {
        let exprs: Vec<_> = cs.iter().map(|c| c.0.clone()).collect();
        Checker { prog: Program::compile(&exprs), want: cs.iter().map(|c| c.1).collect(), scratch: RefCell::new(Vec::new()) }
    }

    fn holds(&self, bytes: &[u8]) -> bool {
        let slots: Vec<u8> = self.prog.slots().iter().map(|&o| bytes.get(o as usize).copied().unwrap_or(0)).collect();
        let mut scratch = self.scratch.borrow_mut();
        self.prog.eval(&slots, &mut scratch);
        self.want.iter().enumerate().all(|(i, &w)| (self.prog.root_value(&scratch, i) == 1) == w)
    }
}

fn apply(hint: &[u8], outcome: &SolveOutcome) -> Option<Vec<u8>> {
    let SolveOutcome::Sat { assignment, .. } = outcome else { return None };
    let mut bytes = hint.to_vec();
    for (&o, &v) in assignment {
        bytes[o as usize] = v;
    }
    Some(bytes)
}

struct Call {
    constraints: Vec<Constraint>,
    hint: Vec<u8>,
    outcome: SolveOutcome,
}

/// Forwards to the tiered solver and records every query.
#[derive(Default)]
struct Recording {
    calls: RefCell<Vec<Call>>,
}

impl Solver for Recording {
    fn solve(&self, constraints: &[Constraint], sym: &SymRange, hint: &[u8]) -> Result<SolveOutcome, SolveError> {
        let outcome = TieredSolver::default().solve(constraints, sym, hint)?;
        self.calls.borrow_mut().push(Call { constraints: constraints.to_vec(), hint: hint.to_vec(), outcome: outcome.clone() });
        Ok(outcome)
    }
}

struct Session {
    tree: ExecutionTree,
    seeds: Vec<TestCase>,
    generated: Vec<TestCase>,
    calls: Vec<Call>,
    stop: ConcolicStop,
}

fn session(dut: &Dut, n_seeds: usize, seed: u64, budget: &ConcolicBudget) -> Session {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<TestCase> =
        (0..n_seeds).map(|i| TestCase::new(i as u64, random_input(dut, dut.max_cycles(), &mut rng), Origin::Random)).collect();
    let plan = InstrumentationPlan::full(dut, 0);
    let sym = SymRange::prefix((dut.max_cycles() as usize * dut.frame_size()) as u32);
    let solver = Recording::default();
    let mut tree = ExecutionTree::new();
    let run = concol_exec_with(dut, &plan, &seeds, &sym, budget, &mut tree, &BTreeSet::new(), &solver, &NoClock, 100);
    Session { tree, seeds, generated: run.testcases, calls: solver.calls.into_inner(), stop: run.stop }
}

/// Each solved case agrees with its seed up to the negated branch and
/// takes the other arm there.
fn check_soundness(dut: &Dut, calls: &[Call]) {
    let plan = InstrumentationPlan::full(dut, 0);
    let sym = SymRange::prefix(u32::MAX);
    for call in calls {
        let Some(bytes) = apply(&call.hint, &call.outcome) else { continue };
        assert!(Checker::new(&call.constraints).holds(&bytes), "solver returned a non-model");
        let (_, pc) = shadow_execute(dut, &plan, &TestCase::new(0, call.hint.clone(), Origin::User), &sym).unwrap();
        let n = call.constraints.len();
        for (c, e) in call.constraints[..n - 1].iter().zip(&pc.entries) {
            assert_eq!((&c.0, c.1), (&e.predicate, e.taken));
        }
        let target = &pc.entries[n - 1];
        assert_eq!(call.constraints[n - 1], (target.predicate.clone(), !target.taken));
        let before = reference::run(dut, &call.hint).unwrap().events;
        let after = reference::run(dut, &bytes).unwrap().events;
        let at = target.event_index;
        assert_eq!(before[..at], after[..at], "prefix diverged before the target");
        assert_eq!(after[at], (before[at].0, !before[at].1, before[at].2));
    }
}

fn arms_of(dut: &Dut, cases: &[TestCase]) -> BTreeSet<BranchEdge> {
    cases.iter().flat_map(|tc| reference::run(dut, &tc.bytes).unwrap().arms()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn solved_cases_flip_exactly_the_target(seed in any::<u64>()) {
        let dut = random_dut(seed, GenOpts::default());
        let s = session(&dut, 2, seed, &ConcolicBudget { max_solves: 40, ..ConcolicBudget::default() });
        check_soundness(&dut, &s.calls);
    }

    #[test]
    fn the_tree_records_every_run(seed in any::<u64>()) {
        let dut = random_dut(seed, GenOpts::default());
        let s = session(&dut, 3, seed, &ConcolicBudget { max_solves: 30, ..ConcolicBudget::default() });
        let mut all = s.seeds.clone();
        all.extend(s.generated.iter().cloned());
        let truth = arms_of(&dut, &all);
        prop_assert_eq!(s.tree.covered_edges(), &truth);
        prop_assert_eq!(s.tree.node_marks(), truth);
        // Generated cases are new, numbered in order and tagged.
        for (i, tc) in s.generated.iter().enumerate() {
            prop_assert_eq!(tc.id, 100 + i as u64);
            prop_assert_eq!(tc.origin, Origin::Concolic);
        }
        let mut seen: BTreeSet<&Vec<u8>> = s.seeds.iter().map(|t| &t.bytes).collect();
        for tc in &s.generated {
            prop_assert!(seen.insert(&tc.bytes), "duplicate case generated");
        }
        prop_assert!(s.calls.len() <= 30);
    }

    /// On small loop-free designs one seed and an unbounded budget reach
    /// every reachable arm, and every abandoned arm is truly unreachable.
    #[test]
    fn one_seed_explores_small_designs_completely(seed in any::<u64>()) {
        let dut = random_dut(seed, GenOpts { loop_free: true, max_input_bits: 16, ..GenOpts::default() });
        prop_assume!(reference::input_bits(&dut) <= 16);
        let budget = ConcolicBudget { max_solves: 100_000, max_loop_negations: u32::MAX, ..ConcolicBudget::default() };
        let s = session(&dut, 1, seed, &budget);
        prop_assert_eq!(s.stop, ConcolicStop::Exhausted);
        prop_assert_eq!(s.tree.covered_edges(), &reference::reachable_arms(&dut));
        let inputs = reference::all_inputs(&dut);
        for call in &s.calls {
            prop_assert!(!matches!(call.outcome, SolveOutcome::Unknown));
            if call.outcome == SolveOutcome::Unsat {
                let c = Checker::new(&call.constraints);
                prop_assert!(!inputs.iter().any(|b| c.holds(b)), "unsat, but a model exists");
            }
        }
        check_soundness(&dut, &s.calls);
    }

    /// Path-condition prefixes with the last branch negated, solved
    /// directly: models satisfy, unsat is confirmed by enumeration.
    #[test]
    fn the_solver_agrees_with_enumeration(seed in any::<u64>()) {
        let dut = random_dut(seed, GenOpts { max_input_bits: 16, ..GenOpts::default() });
        prop_assume!(reference::input_bits(&dut) <= 16);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bytes = random_input(&dut, dut.max_cycles(), &mut rng);
        let sym = SymRange::prefix(bytes.len() as u32);
        let plan = InstrumentationPlan::full(&dut, 0);
        let (_, pc) = shadow_execute(&dut, &plan, &TestCase::new(0, bytes.clone(), Origin::User), &sym).unwrap();
        let inputs = reference::all_inputs(&dut);
        let all = pc.constraints();
        for k in 0..all.len() {
            let mut cs = all[..k].to_vec();
            cs.push((all[k].0.clone(), !all[k].1));
            let budget = SolveBudget { seed: rng.gen(), ..SolveBudget::default() };
            let out = solve(&cs, &sym, &bytes, &budget).unwrap();
            let c = Checker::new(&cs);
            match &out {
                SolveOutcome::Sat { .. } => prop_assert!(c.holds(&apply(&bytes, &out).unwrap())),
                SolveOutcome::Unsat => prop_assert!(!inputs.iter().any(|b| c.holds(b))),
                SolveOutcome::Unknown => prop_assert!(false, "unknown on a {}-bit system", reference::input_bits(&dut)),
            }
        }
    }
}

#[test]
fn magic32_falls_to_one_solve() {
    let dut = support::corpus("magic32");
    let s = session(&dut, 1, 7, &ConcolicBudget::default());
    assert_eq!(s.calls.len(), 1);
    assert_eq!(s.generated.len(), 1);
    assert_eq!(s.generated[0].bytes, 0xDEAD_BEEFu32.to_le_bytes());
    assert_eq!(s.stop, ConcolicStop::Exhausted);
}

#[test]
fn concretized_bytes_are_never_assigned() {
    // Only the first frame is symbolic; the solver must leave the rest.
    let dut = support::corpus("cwm8");
    let plan = InstrumentationPlan::full(&dut, 0);
    let seed = TestCase::new(0, vec![0, 0], Origin::User);
    let solver = Recording::default();
    let mut tree = ExecutionTree::new();
    let sym = SymRange::prefix(1);
    concol_exec_with(&dut, &plan, &[seed], &sym, &ConcolicBudget::default(), &mut tree, &BTreeSet::new(), &solver, &NoClock, 1);
    for call in solver.calls.borrow().iter() {
        if let SolveOutcome::Sat { assignment, .. } = &call.outcome {
            assert!(assignment.keys().all(|&o| o == 0));
        }
    }
}
