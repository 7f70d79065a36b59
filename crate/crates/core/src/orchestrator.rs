//! Rare-target identification and the alternating fuzz/concolic campaign.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::budget::{Clock, Meter, NoClock, StallSpec};
use crate::concolic::{concol_exec_with, ConcolicBudget, ExecutionTree, SymRange};
use crate::coverage::{branch_cov_percent, taken_edges, CoverageBitmap, TraceHits};
use crate::dut::{execute, random_testcase, BranchEdge, Dut, TestCase};
use crate::fuzz::{BatchExecutor, FuzzLimits, Fuzzer, SerialExecutor};
use crate::instrument::{compute_dominators, select_blocks, InstrumentationPlan, PlanMode};
use crate::solver::{SolveBudget, TieredSolver};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampaignConfig {
    pub random_sim_cases: u32,
    /// Fuzz and concolic phase limits.
    pub it_f: u32,
    pub it_c: u32,
    pub time_threshold_f_ms: u64,
    pub time_threshold_c_ms: u64,
    pub time_cutoff_ms: u64,
    /// Consecutive quiet checks per threshold before a phase yields.
    pub stall_window: u32,
    pub rng_seed: u64,
    /// Count executions and solver calls instead of reading the clock.
    pub deterministic: bool,
    pub execs_per_threshold: u64,
    pub solves_per_threshold: u64,
    /// In deterministic mode a phase runs at most this many thresholds.
    pub phase_cap_thresholds: u64,
    pub mode: PlanMode,
    /// Symbolic bytes for the concolic engine; `None` means all of them.
    pub sym: Option<SymRange>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            random_sim_cases: 16,
            it_f: 5,
            it_c: 5,
            time_threshold_f_ms: 5_000,
            time_threshold_c_ms: 10_000,
            time_cutoff_ms: 7_200_000,
            stall_window: 5,
            rng_seed: 0,
            deterministic: false,
            execs_per_threshold: 50_000,
            solves_per_threshold: 64,
            phase_cap_thresholds: 4,
            mode: PlanMode::Selective,
            sym: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhaseKind {
    Fuzz,
    Concolic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseRecord {
    pub kind: PhaseKind,
    /// 1-based index within its engine.
    pub index: u32,
    /// Wall time; `None` in deterministic mode.
    pub duration_ms: Option<u64>,
    pub execs: u64,
    pub solves: u64,
    pub new_rare_covered: Vec<BranchEdge>,
    pub testcases_added: u64,
}

impl PhaseRecord {
    pub fn label(&self) -> String {
        match self.kind {
            PhaseKind::Fuzz => alloc::format!("fuzz{}", self.index),
            PhaseKind::Concolic => alloc::format!("conc{}", self.index),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    AllCovered,
    Cutoff,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::AllCovered => "all_covered",
            Outcome::Cutoff => "cutoff",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignReport {
    pub rare_targets: BTreeSet<BranchEdge>,
    /// Every branch arm some retained or random test case took.
    pub covered: BTreeSet<BranchEdge>,
    pub phase_log: Vec<PhaseRecord>,
    pub final_queue_size: usize,
    /// Random-simulation cases plus every case the phases added.
    pub total_testcases: u64,
    pub branch_cov_percent: f64,
    pub outcome: Outcome,
    pub plan: InstrumentationPlan,
    /// The campaign's corpus: the final fuzz queue, or the random cases
    /// when no phase ran.
    pub testcases: Vec<TestCase>,
    pub total_execs: u64,
    pub total_solves: u64,
}

impl CampaignReport {
    /// Phase labels joined by `-`, e.g. `fuzz1-conc1-fuzz2`.
    pub fn phases(&self) -> String {
        let labels: Vec<String> = self.phase_log.iter().map(|p| p.label()).collect();
        labels.join("-")
    }

    pub fn rare_covered(&self) -> BTreeSet<BranchEdge> {
        self.rare_targets.intersection(&self.covered).copied().collect()
    }
}

/// The random cases used to find rare targets, with ids `1..=n`.
pub fn random_simulation_cases(dut: &Dut, config: &CampaignConfig) -> Vec<TestCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    (0..config.random_sim_cases)
        .map(|i| {
            let mut tc = random_testcase(dut, dut.max_cycles(), &mut rng);
            tc.id = i as u64 + 1;
            tc
        })
        .collect()
}

fn covered_by(dut: &Dut, plan: &InstrumentationPlan, cases: &[TestCase]) -> BTreeSet<BranchEdge> {
    let mut covered = BTreeSet::new();
    for tc in cases {
        if let Ok(t) = execute(dut, tc, plan) {
            covered.extend(taken_edges(&t));
        }
    }
    covered
}

/// Branch arms never taken by the random simulation, minus the design's
/// declared-unreachable arms.
pub fn identify_rare_targets(dut: &Dut, plan_full: &InstrumentationPlan, config: &CampaignConfig) -> BTreeSet<BranchEdge> {
    let covered = covered_by(dut, plan_full, &random_simulation_cases(dut, config));
    dut.branch_edges().into_iter().filter(|e| !covered.contains(e) && !dut.declared_unreachable().contains(e)).collect()
}

/// Runs a campaign serially without reading a clock in deterministic mode.
pub fn run_campaign(dut: &Dut, config: &CampaignConfig) -> CampaignReport {
    run_campaign_with(dut, config, &NoClock, &SerialExecutor)
}

pub fn run_campaign_with(dut: &Dut, config: &CampaignConfig, clock: &dyn Clock, exec: &dyn BatchExecutor) -> CampaignReport {
    let clock: &dyn Clock = if config.deterministic { &NoClock } else { clock };
    let started = clock.now_ms();
    let cutoff = (!config.deterministic).then(|| started.saturating_add(config.time_cutoff_ms));

    let plan_full = InstrumentationPlan::full(dut, config.rng_seed);
    let random_cases = random_simulation_cases(dut, config);
    let sim_covered = covered_by(dut, &plan_full, &random_cases);
    let rare: BTreeSet<BranchEdge> =
        dut.branch_edges().into_iter().filter(|e| !sim_covered.contains(e) && !dut.declared_unreachable().contains(e)).collect();
    log::info!("{}: {} rare target(s) after {} random cases", dut.name(), rare.len(), random_cases.len());

    let mut report = CampaignReport {
        rare_targets: rare.clone(),
        covered: sim_covered.clone(),
        phase_log: Vec::new(),
        final_queue_size: 0,
        total_testcases: random_cases.len() as u64,
        branch_cov_percent: branch_cov_percent(dut, &sim_covered),
        outcome: Outcome::AllCovered,
        plan: plan_full.clone(),
        testcases: random_cases.clone(),
        total_execs: 0,
        total_solves: 0,
    };
    if rare.is_empty() {
        return report;
    }

    let dom = compute_dominators(dut);
    let plan = select_blocks(dut, &dom, &rare, config.mode, &mut ChaCha8Rng::seed_from_u64(config.rng_seed));
    log::info!("{}: instrumenting {} of {} reachable blocks", dut.name(), plan.instrumented().len(), dut.reachable_blocks().len());

    // Random cases that bring coverage under the selective plan seed fuzz_1.
    let mut bitmap = CoverageBitmap::new();
    let seeds: Vec<TestCase> = random_cases
        .iter()
        .filter(|tc| match execute(dut, tc, &plan) {
            Ok(t) => bitmap.absorb_hits(&TraceHits::from_trace(&plan, &t)).is_interesting(),
            Err(_) => false,
        })
        .cloned()
        .collect();

    let fuzz_seed = config.rng_seed ^ 0x9E37_79B9_7F4A_7C15;
    let mut fuzzer = Fuzzer::new(dut, &plan, rare.clone(), fuzz_seed, random_cases.len() as u64 + 1);
    fuzzer.add_seeds(&seeds);
    let mut tree = ExecutionTree::new();
    let solver = TieredSolver { budget: SolveBudget { seed: config.rng_seed, ..SolveBudget::default() } };
    let sym = config.sym.clone().unwrap_or_else(|| SymRange::prefix(u32::MAX));
    let window = config.stall_window.max(1);

    let covered_now = |fuzzer: &Fuzzer<'_>, tree: &ExecutionTree| -> BTreeSet<BranchEdge> {
        fuzzer.queue().covered.union(tree.covered_edges()).copied().collect()
    };
    let rare_done = |covered: &BTreeSet<BranchEdge>| rare.is_subset(covered);
    let past_cutoff = || cutoff.is_some_and(|c| clock.now_ms() >= c);

    let (mut fuzz_phases, mut conc_phases) = (0u32, 0u32);
    let mut covered = covered_now(&fuzzer, &tree);
    loop {
        if rare_done(&covered) || past_cutoff() {
            break;
        }
        if fuzz_phases < config.it_f.max(1) && (fuzz_phases == conc_phases) {
            fuzz_phases += 1;
            let t0 = clock.now_ms();
            let limits = if config.deterministic {
                FuzzLimits {
                    max_execs: config.execs_per_threshold * config.phase_cap_thresholds,
                    deadline_ms: None,
                    stall: Some(StallSpec { interval: config.execs_per_threshold / window as u64, checks: window, meter: Meter::Work }),
                }
            } else {
                FuzzLimits {
                    max_execs: u64::MAX,
                    deadline_ms: cutoff,
                    stall: Some(StallSpec { interval: config.time_threshold_f_ms / window as u64, checks: window, meter: Meter::Millis }),
                }
            };
            let before = covered.clone();
            let run = fuzzer.run(&limits, exec, clock);
            covered = covered_now(&fuzzer, &tree);
            log::info!("fuzz{fuzz_phases}: {} execs, {} admitted, stop {:?}", run.execs, run.admitted.len(), run.stop);
            report.total_execs += run.execs;
            report.phase_log.push(PhaseRecord {
                kind: PhaseKind::Fuzz,
                index: fuzz_phases,
                duration_ms: (!config.deterministic).then(|| clock.now_ms() - t0),
                execs: run.execs,
                solves: 0,
                new_rare_covered: rare.iter().filter(|e| covered.contains(e) && !before.contains(e)).copied().collect(),
                testcases_added: run.admitted.len() as u64,
            });
            continue;
        }
        if conc_phases >= config.it_c {
            break;
        }
        conc_phases += 1;
        let t0 = clock.now_ms();
        let budget = if config.deterministic {
            ConcolicBudget {
                max_solves: config.solves_per_threshold * config.phase_cap_thresholds,
                deadline_ms: None,
                stall: Some(StallSpec {
                    interval: (config.solves_per_threshold / window as u64).max(1),
                    checks: window,
                    meter: Meter::Work,
                }),
                ..ConcolicBudget::default()
            }
        } else {
            ConcolicBudget {
                max_solves: u64::MAX,
                deadline_ms: cutoff,
                stall: Some(StallSpec { interval: config.time_threshold_c_ms / window as u64, checks: window, meter: Meter::Millis }),
                ..ConcolicBudget::default()
            }
        };
        let seeds = fuzzer.queue().by_novelty();
        let before = covered.clone();
        let run = concol_exec_with(dut, &plan, &seeds, &sym, &budget, &mut tree, &rare, &solver, clock, fuzzer.next_id());
        fuzzer.add_seeds(&run.testcases);
        covered = covered_now(&fuzzer, &tree);
        log::info!("conc{conc_phases}: {} solves, {} cases, stop {:?}", run.solves, run.testcases.len(), run.stop);
        report.total_solves += run.solves;
        report.phase_log.push(PhaseRecord {
            kind: PhaseKind::Concolic,
            index: conc_phases,
            duration_ms: (!config.deterministic).then(|| clock.now_ms() - t0),
            execs: 0,
            solves: run.solves,
            new_rare_covered: rare.iter().filter(|e| covered.contains(e) && !before.contains(e)).copied().collect(),
            testcases_added: run.testcases.len() as u64,
        });
    }

    let all: BTreeSet<BranchEdge> = sim_covered.union(&covered).copied().collect();
    report.outcome = if rare.is_subset(&all) { Outcome::AllCovered } else { Outcome::Cutoff };
    report.branch_cov_percent = branch_cov_percent(dut, &all);
    report.covered = all;
    report.total_testcases += report.phase_log.iter().map(|p| p.testcases_added).sum::<u64>();
    report.final_queue_size = fuzzer.queue().len();
    report.testcases = fuzzer.queue().entries.clone();
    report.plan = plan;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dut::{parse_dut, Arm};

    const COIN: &str = "\
dut coin
input x 1
output o 1
block 0:
  br x ? 1 : 2
block 1:
  halt {o=1}
block 2:
  halt {o=0}
entry 0
";

    fn det(seed: u64) -> CampaignConfig {
        CampaignConfig { deterministic: true, rng_seed: seed, ..CampaignConfig::default() }
    }

    #[test]
    fn a_fair_coin_has_no_rare_arm() {
        let d = parse_dut(COIN).unwrap();
        let plan = InstrumentationPlan::full(&d, 0);
        assert!(identify_rare_targets(&d, &plan, &det(7)).is_empty());
        let r = run_campaign(&d, &det(7));
        assert_eq!(r.outcome, Outcome::AllCovered);
        assert!(r.phase_log.is_empty());
        assert_eq!(r.phases(), "");
    }

    #[test]
    fn declared_unreachable_arms_are_not_targets() {
        let text = "\
dut never
input x 8
output o 1
unreachable 1.then
block 0:
  c = x == 77
  br c ? 1 : 3
block 1:
  d = x != 77
  br d ? 2 : 3
block 2:
  halt {o=1}
block 3:
  halt {o=0}
entry 0
";
        let d = parse_dut(text).unwrap();
        let plan = InstrumentationPlan::full(&d, 0);
        let rare = identify_rare_targets(&d, &plan, &det(1));
        assert!(!rare.contains(&BranchEdge::new(1, Arm::Then)));
        assert!(rare.contains(&BranchEdge::new(0, Arm::Then)));
    }

    #[test]
    fn phase_labels_render() {
        let rec = |kind, index| PhaseRecord {
            kind,
            index,
            duration_ms: None,
            execs: 0,
            solves: 0,
            new_rare_covered: Vec::new(),
            testcases_added: 0,
        };
        let d = parse_dut(COIN).unwrap();
        let mut r = run_campaign(&d, &det(7));
        r.phase_log = alloc::vec![rec(PhaseKind::Fuzz, 1), rec(PhaseKind::Concolic, 1), rec(PhaseKind::Fuzz, 2)];
        assert_eq!(r.phases(), "fuzz1-conc1-fuzz2");
    }
}
