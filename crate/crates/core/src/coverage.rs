//! Branch-pair coverage bitmap and the rare-target coverage evaluator.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::dut::{execute, Arm, BranchEdge, Dut, TestCase, Trace};
use crate::instrument::InstrumentationPlan;

pub const MAP_SIZE: usize = 1 << 16;

/// Bucket bit for a per-edge hit count: 1, 2, 3, 4–7, 8–15, 16–31, 32–127
/// and ≥128 map to bits 0..7. A zero count has no bucket.
pub fn bucket(count: u32) -> u8 {
    match count {
        0 => 0,
        1 => 1,
        2 => 1 << 1,
        3 => 1 << 2,
        4..=7 => 1 << 3,
        8..=15 => 1 << 4,
        16..=31 => 1 << 5,
        32..=127 => 1 << 6,
        _ => 1 << 7,
    }
}

/// Bitmap cell for the transition `prev -> cur`; a missing predecessor
/// contributes label 0.
pub fn cell_index(prev: Option<u16>, cur: u16) -> u16 {
    (prev.unwrap_or(0) >> 1) ^ cur
}

/// 64 KiB map of bucket masks, one per branch-pair cell.
#[derive(Clone, PartialEq, Eq)]
pub struct CoverageBitmap {
    cells: Box<[u8]>,
}

impl core::fmt::Debug for CoverageBitmap {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("CoverageBitmap").field("nonzero", &self.count_nonzero()).finish()
    }
}

impl Default for CoverageBitmap {
    fn default() -> Self {
        Self::new()
    }
}

impl CoverageBitmap {
    pub fn new() -> Self {
        CoverageBitmap { cells: vec![0u8; MAP_SIZE].into_boxed_slice() }
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, cell: u16) -> u8 {
        self.cells[cell as usize]
    }

    pub fn count_nonzero(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    /// Cellwise OR; used to combine private bitmaps of parallel workers.
    pub fn merge(&mut self, other: &CoverageBitmap) {
        for (a, b) in self.cells.iter_mut().zip(other.cells.iter()) {
            *a |= *b;
        }
    }

    /// Novelty `hits` would bring, without changing the bitmap.
    pub fn peek(&self, hits: &TraceHits) -> NoveltyResult {
        let mut r = NoveltyResult::default();
        for &(cell, b) in &hits.0 {
            let old = self.cells[cell as usize];
            if old == 0 {
                r.new_cells += 1;
            }
            if old & b == 0 {
                r.new_buckets += 1;
            }
        }
        r
    }

    pub fn absorb_hits(&mut self, hits: &TraceHits) -> NoveltyResult {
        let r = self.peek(hits);
        for &(cell, b) in &hits.0 {
            self.cells[cell as usize] |= b;
        }
        r
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord)]
pub struct NoveltyResult {
    pub new_cells: u32,
    pub new_buckets: u32,
}

impl NoveltyResult {
    /// Whether the trace changed the bitmap at all.
    pub fn is_interesting(&self) -> bool {
        self.new_buckets > 0
    }
}

/// Bucketized cells of one trace, sorted by cell index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TraceHits(Vec<(u16, u8)>);

impl TraceHits {
    pub fn from_trace(plan: &InstrumentationPlan, trace: &Trace) -> Self {
        let mut cells: Vec<u16> = trace
            .edges
            .iter()
            .map(|e| {
                let prev = e.from.map(|p| plan.label(p).unwrap_or(0));
                cell_index(prev, plan.label(e.to).unwrap_or(0))
            })
            .collect();
        cells.sort_unstable();
        let mut out = Vec::new();
        let mut i = 0;
        while i < cells.len() {
            let mut j = i;
            while j < cells.len() && cells[j] == cells[i] {
                j += 1;
            }
            out.push((cells[i], bucket((j - i) as u32)));
            i = j;
        }
        TraceHits(out)
    }

    /// Number of distinct cells hit.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn cells(&self) -> &[(u16, u8)] {
        &self.0
    }
}

/// ORs the bucketized edge counts of `trace` into `bitmap`.
pub fn absorb(bitmap: &mut CoverageBitmap, plan: &InstrumentationPlan, trace: &Trace) -> NoveltyResult {
    bitmap.absorb_hits(&TraceHits::from_trace(plan, trace))
}

/// Branch arms taken by a trace, in execution order (with repeats).
pub fn taken_edges(trace: &Trace) -> impl Iterator<Item = BranchEdge> + '_ {
    trace.branch_events.iter().map(|e| BranchEdge::new(e.site, Arm::from_taken(e.taken)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedCase {
    pub id: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub rare_covered_count: usize,
    pub rare_total: usize,
    pub branch_edges_covered: BTreeSet<BranchEdge>,
    pub branch_cov_percent: f64,
    /// Edges each executed case covered for the first time.
    pub per_testcase: BTreeMap<u64, Vec<BranchEdge>>,
    /// Cases that failed to execute.
    pub skipped: Vec<SkippedCase>,
}

/// Percentage of countable branch edges in `covered`. Declared-unreachable
/// edges are excluded from both sides; a design without countable edges
/// is fully covered.
pub fn branch_cov_percent(dut: &Dut, covered: &BTreeSet<BranchEdge>) -> f64 {
    let countable: BTreeSet<BranchEdge> = dut.branch_edges().difference(dut.declared_unreachable()).copied().collect();
    if countable.is_empty() {
        return 100.0;
    }
    let hit = covered.intersection(&countable).count();
    hit as f64 * 100.0 / countable.len() as f64
}

/// Replays `testcases` in order and reports exact branch-edge coverage.
/// Stops early once every edge in a non-empty `rare` set is covered.
pub fn evaluate(dut: &Dut, plan: &InstrumentationPlan, testcases: &[TestCase], rare: &BTreeSet<BranchEdge>) -> CoverageReport {
    let mut covered = BTreeSet::new();
    let mut per_testcase: BTreeMap<u64, Vec<BranchEdge>> = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut rare_covered = 0;
    for tc in testcases {
        let trace = match execute(dut, tc, plan) {
            Ok(t) => t,
            Err(e) => {
                skipped.push(SkippedCase { id: tc.id, error: e.to_string() });
                continue;
            }
        };
        let fresh = per_testcase.entry(tc.id).or_default();
        for edge in taken_edges(&trace) {
            if covered.insert(edge) {
                fresh.push(edge);
                if rare.contains(&edge) {
                    rare_covered += 1;
                }
            }
        }
        if !rare.is_empty() && rare_covered == rare.len() {
            break;
        }
    }
    CoverageReport {
        rare_covered_count: rare_covered,
        rare_total: rare.len(),
        branch_cov_percent: branch_cov_percent(dut, &covered),
        branch_edges_covered: covered,
        per_testcase,
        skipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dut::{parse_dut, Origin};
    use proptest::prelude::*;

    #[test]
    fn bucket_boundaries() {
        let expect = [(1, 0), (2, 1), (3, 2), (4, 3), (7, 3), (8, 4), (15, 4), (16, 5), (31, 5), (32, 6), (127, 6), (128, 7), (100_000, 7)];
        for (count, bit) in expect {
            assert_eq!(bucket(count), 1 << bit, "count {count}");
        }
        assert_eq!(bucket(0), 0);
    }

    #[test]
    fn cell_index_mixes_labels() {
        assert_eq!(cell_index(None, 0x1234), 0x1234);
        assert_eq!(cell_index(Some(0x0003), 0x0001), 0x0000);
        assert_eq!(cell_index(Some(0xFFFF), 0), 0x7FFF);
    }

    const LOOP: &str = "\
dut l
input a 8
reg n 8 init 0
output o 8
block 0:
  c = a <u 128
  br c ? 1 : 2
block 1:
  goto 3
block 2:
  goto 3
block 3:
  halt {o=a}
entry 0
";

    fn run(d: &Dut, plan: &InstrumentationPlan, bytes: &[u8]) -> Trace {
        execute(d, &TestCase::new(0, bytes.to_vec(), Origin::User), plan).unwrap()
    }

    #[test]
    fn empty_trace_changes_nothing() {
        let d = parse_dut(LOOP).unwrap();
        let plan = InstrumentationPlan::full(&d, 3);
        let mut bm = CoverageBitmap::new();
        let mut t = run(&d, &plan, &[0]);
        t.edges.clear();
        assert_eq!(absorb(&mut bm, &plan, &t), NoveltyResult::default());
        assert_eq!(bm, CoverageBitmap::new());
    }

    #[test]
    fn first_absorb_counts_distinct_edges_and_second_is_idempotent() {
        let d = parse_dut(LOOP).unwrap();
        let plan = InstrumentationPlan::full(&d, 3);
        let t = run(&d, &plan, &[5]);
        let distinct: BTreeSet<_> = t.edges.iter().copied().collect();
        let mut bm = CoverageBitmap::new();
        let first = absorb(&mut bm, &plan, &t);
        assert_eq!(first.new_cells as usize, distinct.len());
        assert_eq!(absorb(&mut bm, &plan, &t), NoveltyResult::default());
        // The other arm is new.
        assert!(absorb(&mut bm, &plan, &run(&d, &plan, &[200])).is_interesting());
    }

    #[test]
    fn evaluate_with_no_rare_runs_everything() {
        let d = parse_dut(LOOP).unwrap();
        let plan = InstrumentationPlan::full(&d, 3);
        let cases: Vec<TestCase> = (0..4u8).map(|i| TestCase::new(i as u64, alloc::vec![i * 60], Origin::User)).collect();
        let r = evaluate(&d, &plan, &cases, &BTreeSet::new());
        assert_eq!((r.rare_covered_count, r.rare_total), (0, 0));
        assert_eq!(r.per_testcase.len(), 4);
        assert_eq!(r.branch_edges_covered.len(), 2);
        assert_eq!(r.branch_cov_percent, 100.0);
        assert_eq!(r.per_testcase[&3], alloc::vec![BranchEdge::new(0, Arm::Else)]);
    }

    #[test]
    fn evaluate_breaks_once_rare_is_covered() {
        let d = parse_dut(LOOP).unwrap();
        let plan = InstrumentationPlan::full(&d, 3);
        let cases: Vec<TestCase> =
            [0u8, 0, 200].iter().enumerate().map(|(i, &b)| TestCase::new(i as u64, alloc::vec![b], Origin::User)).collect();
        let rare: BTreeSet<_> = [BranchEdge::new(0, Arm::Then)].into_iter().collect();
        let r = evaluate(&d, &plan, &cases, &rare);
        assert_eq!(r.rare_covered_count, 1);
        assert_eq!(r.per_testcase.len(), 1);
        assert_eq!(r.branch_cov_percent, 50.0);
    }

    #[test]
    fn evaluate_records_failures() {
        let d = parse_dut(&LOOP.replace("input a 8", "input a 16").replace("halt {o=a}", "halt {o=n}")).unwrap();
        let plan = InstrumentationPlan::full(&d, 3);
        let r = evaluate(&d, &plan, &[TestCase::new(9, alloc::vec![1], Origin::User)], &BTreeSet::new());
        assert_eq!(r.skipped.len(), 1);
        assert_eq!(r.skipped[0].id, 9);
        assert!(r.per_testcase.is_empty());
    }

    fn arb_bitmap_hits() -> impl Strategy<Value = Vec<(u16, u8)>> {
        proptest::collection::vec((any::<u16>(), 0u8..8), 0..64).prop_map(|v| {
            let mut m = BTreeMap::new();
            for (c, b) in v {
                m.insert(c, 1u8 << b);
            }
            m.into_iter().collect()
        })
    }

    proptest! {
        #[test]
        fn absorbing_never_clears_bits(a in arb_bitmap_hits(), b in arb_bitmap_hits()) {
            let mut bm = CoverageBitmap::new();
            bm.absorb_hits(&TraceHits(a));
            let before = bm.clone();
            bm.absorb_hits(&TraceHits(b));
            for (x, y) in before.cells().iter().zip(bm.cells()) {
                prop_assert_eq!(x & y, *x);
            }
        }

        #[test]
        fn merge_matches_sequential_absorb(a in arb_bitmap_hits(), b in arb_bitmap_hits()) {
            let (a, b) = (TraceHits(a), TraceHits(b));
            let mut seq = CoverageBitmap::new();
            seq.absorb_hits(&a);
            seq.absorb_hits(&b);
            let mut left = CoverageBitmap::new();
            left.absorb_hits(&a);
            let mut right = CoverageBitmap::new();
            right.absorb_hits(&b);
            left.merge(&right);
            prop_assert_eq!(left, seq);
        }
    }
}
