//! JSON shapes written by `--report`, `--emit-plan` and friends.
//!
//! Branch edges are always rendered as `"<site>.<arm>"`.

use std::collections::{BTreeMap, BTreeSet};

use raretrig_core::coverage::SkippedCase;
use raretrig_core::{BlockId, BranchEdge, CampaignReport, CoverageReport, Dut, InstrumentationPlan, PlanMode};
use serde::{Deserialize, Serialize};

use raretrig_core::instrument::PlanError;

fn edges(set: impl IntoIterator<Item = BranchEdge>) -> Vec<String> {
    set.into_iter().map(|e| e.to_string()).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum PlanJsonError {
    #[error("invalid plan JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown plan mode `{0}`")]
    Mode(String),
    #[error("bad arm `{0}`")]
    Arm(String),
    #[error("plan does not fit the design: {0}")]
    Plan(#[from] PlanError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetJson {
    pub site: BlockId,
    pub arm: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanJson {
    pub mode: String,
    pub instrumented: Vec<BlockId>,
    pub labels: BTreeMap<BlockId, u16>,
    pub targets: Vec<TargetJson>,
}

impl PlanJson {
    pub fn from_plan(plan: &InstrumentationPlan) -> Self {
        PlanJson {
            mode: plan.mode().as_str().to_string(),
            instrumented: plan.instrumented().iter().copied().collect(),
            labels: plan.labels().clone(),
            targets: plan.targets().iter().map(|e| TargetJson { site: e.site, arm: e.arm.as_str().to_string() }).collect(),
        }
    }

    pub fn into_plan(self, dut: &Dut) -> Result<InstrumentationPlan, PlanJsonError> {
        let mode = PlanMode::parse(&self.mode).ok_or_else(|| PlanJsonError::Mode(self.mode.clone()))?;
        let mut targets = BTreeSet::new();
        for t in &self.targets {
            let arm = raretrig_core::Arm::parse(&t.arm).ok_or_else(|| PlanJsonError::Arm(t.arm.clone()))?;
            targets.insert(BranchEdge::new(t.site, arm));
        }
        let instrumented = self.instrumented.into_iter().collect();
        Ok(InstrumentationPlan::from_parts(dut, mode, instrumented, self.labels, targets)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedJson {
    pub id: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReportJson {
    pub rare_covered_count: usize,
    pub rare_total: usize,
    pub branch_edges_covered: Vec<String>,
    pub branch_cov_percent: f64,
    pub per_testcase: BTreeMap<u64, Vec<String>>,
    pub skipped: Vec<SkippedJson>,
}

impl From<&CoverageReport> for CoverageReportJson {
    fn from(r: &CoverageReport) -> Self {
        CoverageReportJson {
            rare_covered_count: r.rare_covered_count,
            rare_total: r.rare_total,
            branch_edges_covered: edges(r.branch_edges_covered.iter().copied()),
            branch_cov_percent: r.branch_cov_percent,
            per_testcase: r.per_testcase.iter().map(|(id, es)| (*id, edges(es.iter().copied()))).collect(),
            skipped: r.skipped.iter().map(|SkippedCase { id, error }| SkippedJson { id: *id, error: error.clone() }).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseJson {
    pub phase: String,
    /// Wall time; `null` in deterministic mode.
    pub duration_ms: Option<u64>,
    pub execs: u64,
    pub solves: u64,
    pub new_rare_covered: Vec<String>,
    pub testcases_added: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReportJson {
    pub dut: String,
    pub seed: u64,
    pub deterministic: bool,
    pub rare_targets: Vec<String>,
    pub covered: Vec<String>,
    pub phases: String,
    pub phase_log: Vec<PhaseJson>,
    pub final_queue_size: usize,
    pub total_testcases: u64,
    pub total_execs: u64,
    pub total_solves: u64,
    pub branch_cov_percent: f64,
    pub instrumented_blocks: usize,
    pub outcome: String,
}

impl CampaignReportJson {
    pub fn new(dut: &Dut, seed: u64, deterministic: bool, r: &CampaignReport) -> Self {
        CampaignReportJson {
            dut: dut.name().to_string(),
            seed,
            deterministic,
            rare_targets: edges(r.rare_targets.iter().copied()),
            covered: edges(r.covered.iter().copied()),
            phases: r.phases(),
            phase_log: r
                .phase_log
                .iter()
                .map(|p| PhaseJson {
                    phase: p.label(),
                    duration_ms: p.duration_ms,
                    execs: p.execs,
                    solves: p.solves,
                    new_rare_covered: edges(p.new_rare_covered.iter().copied()),
                    testcases_added: p.testcases_added,
                })
                .collect(),
            final_queue_size: r.final_queue_size,
            total_testcases: r.total_testcases,
            total_execs: r.total_execs,
            total_solves: r.total_solves,
            branch_cov_percent: r.branch_cov_percent,
            instrumented_blocks: r.plan.instrumented().len(),
            outcome: r.outcome.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReportJson {
    pub dut: String,
    pub seed: u64,
    pub cases: u32,
    pub covered: Vec<String>,
    pub rare_targets: Vec<String>,
}

/// Single-engine baseline report (`fuzz` / `concolic`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineReportJson {
    pub dut: String,
    pub engine: String,
    pub seed: u64,
    pub rare_targets: Vec<String>,
    pub covered: Vec<String>,
    pub rare_covered: Vec<String>,
    pub execs: u64,
    pub solves: u64,
    pub testcases: usize,
    pub stop: String,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictJson {
    pub id: u64,
    pub verdict: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectReportJson {
    pub dut: String,
    pub detections: Vec<VerdictJson>,
    pub trojan_found: bool,
    pub first_detecting_case: Option<u64>,
}

pub fn edge_strings(set: &BTreeSet<BranchEdge>) -> Vec<String> {
    edges(set.iter().copied())
}

/// Pretty JSON with a trailing newline.
pub fn to_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types always serialize");
    s.push('\n');
    s
}
