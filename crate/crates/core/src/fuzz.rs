//! Coverage-guided greybox fuzzing: energy scheduling, deterministic and
//! havoc mutation, and admission of inputs that grow the coverage bitmap.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::budget::{Clock, NoClock, StallSpec};
use crate::coverage::{taken_edges, CoverageBitmap, NoveltyResult, TraceHits};
use crate::dut::{execute_bytes, BranchEdge, Dut, ExecError, Origin, TestCase, Trace};
use crate::instrument::InstrumentationPlan;

const INTERESTING_8: [u8; 5] = [0, 1, 0x7F, 0x80, 0xFF];
const INTERESTING_16: [u16; 4] = [0, 0x7FFF, 0x8000, 0xFFFF];
const INTERESTING_32: [u32; 4] = [0, 0x7FFF_FFFF, 0x8000_0000, 0xFFFF_FFFF];
const ARITH_MAX: u8 = 16;
const HAVOC_MAX_OPS: u32 = 32;
const HAVOC_WORD_DELTA: i32 = 35;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationStage {
    /// The `k`-th mutant of the fixed deterministic enumeration.
    Deterministic(usize),
    Havoc,
}

/// Number of deterministic mutants for a `len`-byte input: bit flips, byte
/// flips, ±1..±16 per byte, interesting bytes, then interesting aligned
/// 16- and 32-bit words.
pub fn deterministic_count(len: usize) -> usize {
    len * 8 + len + len * 2 * ARITH_MAX as usize + len * INTERESTING_8.len() + (len / 2) * 4 + (len / 4) * 4
}

fn deterministic(bytes: &mut [u8], mut k: usize) -> bool {
    let len = bytes.len();
    if k < len * 8 {
        bytes[k / 8] ^= 1 << (k % 8);
        return true;
    }
    k -= len * 8;
    if k < len {
        bytes[k] ^= 0xFF;
        return true;
    }
    k -= len;
    let arith = 2 * ARITH_MAX as usize;
    if k < len * arith {
        let (i, j) = (k / arith, (k % arith) as u8);
        bytes[i] = if j < ARITH_MAX { bytes[i].wrapping_add(j + 1) } else { bytes[i].wrapping_sub(j - ARITH_MAX + 1) };
        return true;
    }
    k -= len * arith;
    if k < len * INTERESTING_8.len() {
        bytes[k / INTERESTING_8.len()] = INTERESTING_8[k % INTERESTING_8.len()];
        return true;
    }
    k -= len * INTERESTING_8.len();
    if k < (len / 2) * 4 {
        let at = (k / 4) * 2;
        bytes[at..at + 2].copy_from_slice(&INTERESTING_16[k % 4].to_le_bytes());
        return true;
    }
    k -= (len / 2) * 4;
    if k < (len / 4) * 4 {
        let at = (k / 4) * 4;
        bytes[at..at + 4].copy_from_slice(&INTERESTING_32[k % 4].to_le_bytes());
        return true;
    }
    false
}

fn havoc<R: RngCore + ?Sized>(bytes: &mut Vec<u8>, frame: usize, max_len: usize, rng: &mut R) {
    let ops = rng.gen_range(1..=HAVOC_MAX_OPS);
    for _ in 0..ops {
        let len = bytes.len();
        match rng.gen_range(0..5) {
            0 => {
                let bit = rng.gen_range(0..len * 8);
                bytes[bit / 8] ^= 1 << (bit % 8);
            }
            1 => {
                let at = rng.gen_range(0..len);
                bytes[at] = rng.gen();
            }
            2 if len >= 2 => {
                let at = rng.gen_range(0..len - 1);
                let mut delta = rng.gen_range(1..=HAVOC_WORD_DELTA);
                if rng.gen_bool(0.5) {
                    delta = -delta;
                }
                let w = u16::from_le_bytes([bytes[at], bytes[at + 1]]).wrapping_add(delta as u16);
                bytes[at..at + 2].copy_from_slice(&w.to_le_bytes());
            }
            3 => {
                // Clone a run of whole frames to a frame boundary.
                let frames = len / frame;
                let room = (max_len - len) / frame;
                if room == 0 {
                    continue;
                }
                let from = rng.gen_range(0..frames);
                let n = rng.gen_range(1..=(frames - from).min(room));
                let to = rng.gen_range(0..=frames);
                let chunk: Vec<u8> = bytes[from * frame..(from + n) * frame].to_vec();
                bytes.splice(to * frame..to * frame, chunk);
            }
            4 => {
                let frames = len / frame;
                if frames <= 1 {
                    continue;
                }
                let from = rng.gen_range(0..frames);
                let n = rng.gen_range(1..=(frames - from).min(frames - 1));
                bytes.drain(from * frame..(from + n) * frame);
            }
            _ => {
                let at = rng.gen_range(0..len);
                bytes[at] ^= 1 << rng.gen_range(0..8);
            }
        }
    }
}

/// Produces one mutant of `seed`, or `None` when a deterministic index is
/// past the end of the enumeration or the seed has no bytes. Havoc keeps
/// the length a whole number of `frame_size` frames between one frame and
/// four times the seed length.
pub fn mutate<R: RngCore + ?Sized>(seed: &TestCase, stage: MutationStage, frame_size: usize, rng: &mut R) -> Option<TestCase> {
    if seed.bytes.is_empty() {
        return None;
    }
    let mut bytes = seed.bytes.clone();
    match stage {
        MutationStage::Deterministic(k) => {
            if !deterministic(&mut bytes, k) {
                return None;
            }
        }
        MutationStage::Havoc => {
            let frame = if frame_size == 0 || !seed.bytes.len().is_multiple_of(frame_size) { 1 } else { frame_size };
            havoc(&mut bytes, frame, seed.bytes.len() * 4, rng);
        }
    }
    Some(seed.child(0, bytes, Origin::Fuzz))
}

/// Lower medians of the queue's scheduling metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Medians {
    pub exec_time: u64,
    pub bitmap_count: u32,
    pub depth: u32,
}

impl Medians {
    pub fn of(entries: &[TestCase]) -> Option<Medians> {
        if entries.is_empty() {
            return None;
        }
        fn lower_median<T: Ord + Copy>(mut v: Vec<T>) -> T {
            v.sort_unstable();
            v[(v.len() - 1) / 2]
        }
        Some(Medians {
            exec_time: lower_median(entries.iter().map(|t| t.exec_time).collect()),
            bitmap_count: lower_median(entries.iter().map(|t| t.bitmap_count).collect()),
            depth: lower_median(entries.iter().map(|t| t.depth).collect()),
        })
    }
}

/// Havoc mutants per pass: `16 · 2^a · 2^b · 2^c` where each exponent is 1
/// when the entry is at least as fast, as broad and as deep as the queue
/// median. Without medians every factor counts as favorable.
pub fn calculate_energy(tc: &TestCase, medians: Option<&Medians>) -> u32 {
    let Some(m) = medians else { return 128 };
    let a = (tc.exec_time <= m.exec_time) as u32;
    let b = (tc.bitmap_count >= m.bitmap_count) as u32;
    let c = (tc.depth >= m.depth) as u32;
    (16u32 << (a + b + c)).clamp(16, 128)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QueueStats {
    /// Mutant executions.
    pub execs: u64,
    /// Executions spent measuring seeds; not charged to the budget.
    pub calibration_execs: u64,
    pub last_novelty_at: u64,
    pub last_rare_progress_at: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EntryMeta {
    pub is_seed: bool,
    /// Bitmap novelty the entry brought when it was added.
    pub novelty: NoveltyResult,
    det_done: bool,
    det_next: usize,
}

/// Interesting inputs found so far, with the global bitmap they built.
#[derive(Debug, Clone, Default)]
pub struct FuzzQueue {
    pub entries: Vec<TestCase>,
    pub meta: Vec<EntryMeta>,
    pub global_bitmap: CoverageBitmap,
    pub stats: QueueStats,
    /// Branch arms taken by some queue entry.
    pub covered: BTreeSet<BranchEdge>,
}

impl FuzzQueue {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries ordered by admission novelty, largest first; ties keep
    /// queue order.
    pub fn by_novelty(&self) -> Vec<TestCase> {
        let mut idx: Vec<usize> = (0..self.entries.len()).collect();
        idx.sort_by(|&a, &b| {
            let (na, nb) = (self.meta[a].novelty, self.meta[b].novelty);
            (nb.new_cells, nb.new_buckets).cmp(&(na.new_cells, na.new_buckets))
        });
        idx.into_iter().map(|i| self.entries[i].clone()).collect()
    }
}

/// Runs a batch of inputs. Implementations may execute in parallel but
/// must return results in input order.
pub trait BatchExecutor {
    fn run_batch(&self, dut: &Dut, plan: &InstrumentationPlan, inputs: &[Vec<u8>]) -> Vec<Result<Trace, ExecError>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SerialExecutor;

impl BatchExecutor for SerialExecutor {
    fn run_batch(&self, dut: &Dut, plan: &InstrumentationPlan, inputs: &[Vec<u8>]) -> Vec<Result<Trace, ExecError>> {
        inputs.iter().map(|b| execute_bytes(dut, b, plan)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FuzzLimits {
    /// Mutant executions allowed in this call.
    pub max_execs: u64,
    /// Absolute clock reading at which to stop.
    pub deadline_ms: Option<u64>,
    pub stall: Option<StallSpec>,
}

impl FuzzLimits {
    pub fn execs(max_execs: u64) -> Self {
        FuzzLimits { max_execs, deadline_ms: None, stall: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FuzzStop {
    RareCovered,
    ExecBudget,
    Deadline,
    Stalled,
    /// Nothing in the queue can be mutated.
    NoInput,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuzzRun {
    pub execs: u64,
    /// Ids of entries admitted during this call.
    pub admitted: Vec<u64>,
    pub new_rare: Vec<BranchEdge>,
    pub stop: FuzzStop,
}

/// Mutants executed per batch.
const BATCH: usize = 256;

/// A fuzzing session whose queue and scheduling state persist across calls
/// to [`Fuzzer::run`].
pub struct Fuzzer<'a> {
    dut: &'a Dut,
    plan: &'a InstrumentationPlan,
    rare: BTreeSet<BranchEdge>,
    queue: FuzzQueue,
    rng: ChaCha8Rng,
    cursor: usize,
    next_id: u64,
}

impl<'a> Fuzzer<'a> {
    pub fn new(dut: &'a Dut, plan: &'a InstrumentationPlan, rare: BTreeSet<BranchEdge>, rng_seed: u64, first_id: u64) -> Self {
        Fuzzer { dut, plan, rare, queue: FuzzQueue::default(), rng: ChaCha8Rng::seed_from_u64(rng_seed), cursor: 0, next_id: first_id }
    }

    pub fn queue(&self) -> &FuzzQueue {
        &self.queue
    }

    pub fn into_queue(self) -> FuzzQueue {
        self.queue
    }

    /// Next id the fuzzer will assign.
    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    pub fn rare_covered(&self) -> bool {
        !self.rare.is_empty() && self.rare.is_subset(&self.queue.covered)
    }

    /// Adds seeds unconditionally, measuring each. Seeds that fail to
    /// execute are dropped. Returns the novelty each kept seed brought.
    pub fn add_seeds(&mut self, seeds: &[TestCase]) -> Vec<(u64, NoveltyResult)> {
        let mut out = Vec::new();
        for seed in seeds {
            self.queue.stats.calibration_execs += 1;
            let trace = match execute_bytes(self.dut, &seed.bytes, self.plan) {
                Ok(t) => t,
                Err(e) => {
                    log::warn!("fuzz seed {} dropped: {e}", seed.id);
                    continue;
                }
            };
            let hits = TraceHits::from_trace(self.plan, &trace);
            let novelty = self.queue.global_bitmap.absorb_hits(&hits);
            let mut tc = seed.clone();
            tc.exec_time = trace.steps_run;
            tc.bitmap_count = hits.len() as u32;
            self.next_id = self.next_id.max(tc.id + 1);
            out.push((tc.id, novelty));
            self.queue.covered.extend(taken_edges(&trace));
            self.queue.entries.push(tc);
            self.queue.meta.push(EntryMeta { is_seed: true, novelty, det_done: false, det_next: 0 });
        }
        out
    }

    /// Fuzzes until the rare set is covered or a limit is hit.
    pub fn run(&mut self, limits: &FuzzLimits, exec: &dyn BatchExecutor, clock: &dyn Clock) -> FuzzRun {
        let start_execs = self.queue.stats.execs;
        let mut res = FuzzRun { execs: 0, admitted: Vec::new(), new_rare: Vec::new(), stop: FuzzStop::NoInput };
        let mut stall = limits.stall.map(|s| (s, s.monitor(0, clock.now_ms())));
        let frame = self.dut.frame_size();

        let mut idle_entries = 0;
        loop {
            if let Some(stop) = self.stop_reason(limits, &res, clock, &mut stall) {
                res.stop = stop;
                break;
            }
            if self.queue.is_empty() || idle_entries >= self.queue.len() {
                res.stop = FuzzStop::NoInput;
                break;
            }
            let idx = self.cursor % self.queue.len();
            let entry = self.queue.entries[idx].clone();
            if entry.bytes.is_empty() {
                idle_entries += 1;
                self.cursor = (idx + 1) % self.queue.len();
                continue;
            }
            idle_entries = 0;

            // Deterministic stage, resumable across calls.
            let total = deterministic_count(entry.bytes.len());
            let mut halted = None;
            while !self.queue.meta[idx].det_done {
                let from = self.queue.meta[idx].det_next;
                let remaining = limits.max_execs.saturating_sub(res.execs) as usize;
                let to = total.min(from + BATCH).min(from + remaining.max(1));
                let mutants: Vec<TestCase> =
                    (from..to).filter_map(|k| mutate(&entry, MutationStage::Deterministic(k), frame, &mut self.rng)).collect();
                let (done, stop) = self.commit(&mutants, limits, &mut res, exec, clock, &mut stall);
                self.queue.meta[idx].det_next = from + done;
                if self.queue.meta[idx].det_next >= total {
                    self.queue.meta[idx].det_done = true;
                }
                if stop.is_some() {
                    halted = stop;
                    break;
                }
            }
            if let Some(stop) = halted {
                res.stop = stop;
                break;
            }

            // Havoc stage.
            let energy = calculate_energy(&entry, Medians::of(&self.queue.entries).as_ref()) as usize;
            let mut made = 0;
            while made < energy {
                let n = (energy - made).min(BATCH);
                let mutants: Vec<TestCase> = (0..n).filter_map(|_| mutate(&entry, MutationStage::Havoc, frame, &mut self.rng)).collect();
                made += n;
                let (_, stop) = self.commit(&mutants, limits, &mut res, exec, clock, &mut stall);
                if stop.is_some() {
                    halted = stop;
                    break;
                }
            }
            if let Some(stop) = halted {
                res.stop = stop;
                break;
            }
            self.cursor = (idx + 1) % self.queue.len();
        }
        debug_assert_eq!(self.queue.stats.execs - start_execs, res.execs);
        res
    }

    fn stop_reason(
        &self,
        limits: &FuzzLimits,
        res: &FuzzRun,
        clock: &dyn Clock,
        stall: &mut Option<(StallSpec, crate::budget::StallMonitor)>,
    ) -> Option<FuzzStop> {
        if self.rare_covered() {
            return Some(FuzzStop::RareCovered);
        }
        if res.execs >= limits.max_execs {
            return Some(FuzzStop::ExecBudget);
        }
        if limits.deadline_ms.is_some_and(|d| clock.now_ms() >= d) {
            return Some(FuzzStop::Deadline);
        }
        if let Some((spec, mon)) = stall {
            if mon.poll(spec.reading(res.execs, clock)) {
                return Some(FuzzStop::Stalled);
            }
        }
        None
    }

    /// Executes `mutants` and commits them in order. Returns how many were
    /// committed and why committing stopped early, if it did.
    fn commit(
        &mut self,
        mutants: &[TestCase],
        limits: &FuzzLimits,
        res: &mut FuzzRun,
        exec: &dyn BatchExecutor,
        clock: &dyn Clock,
        stall: &mut Option<(StallSpec, crate::budget::StallMonitor)>,
    ) -> (usize, Option<FuzzStop>) {
        let remaining = limits.max_execs.saturating_sub(res.execs) as usize;
        let mutants = &mutants[..mutants.len().min(remaining)];
        let inputs: Vec<Vec<u8>> = mutants.iter().map(|m| m.bytes.clone()).collect();
        let traces = exec.run_batch(self.dut, self.plan, &inputs);
        for (i, (m, trace)) in mutants.iter().zip(traces).enumerate() {
            res.execs += 1;
            self.queue.stats.execs += 1;
            let at = self.queue.stats.execs;
            if let Ok(trace) = trace {
                let hits = TraceHits::from_trace(self.plan, &trace);
                let novelty = self.queue.global_bitmap.absorb_hits(&hits);
                if novelty.is_interesting() {
                    let mut tc = m.clone();
                    tc.id = self.next_id;
                    self.next_id += 1;
                    tc.exec_time = trace.steps_run;
                    tc.bitmap_count = hits.len() as u32;
                    self.queue.stats.last_novelty_at = at;
                    for e in taken_edges(&trace) {
                        if self.queue.covered.insert(e) && self.rare.contains(&e) {
                            res.new_rare.push(e);
                            self.queue.stats.last_rare_progress_at = at;
                        }
                    }
                    res.admitted.push(tc.id);
                    self.queue.entries.push(tc);
                    self.queue.meta.push(EntryMeta { is_seed: false, novelty, det_done: false, det_next: 0 });
                    if let Some((_, mon)) = stall {
                        mon.note_progress();
                    }
                }
            }
            if let Some(stop) = self.stop_reason(limits, res, clock, stall) {
                return (i + 1, Some(stop));
            }
        }
        (mutants.len(), None)
    }
}

/// Budget for [`fuzz_loop`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FuzzBudget {
    pub max_execs: u64,
    pub deadline_ms: Option<u64>,
}

/// Fuzzes from `seeds` serially until `rare` is covered or the budget runs
/// out, and returns the final queue.
pub fn fuzz_loop(
    dut: &Dut,
    plan: &InstrumentationPlan,
    seeds: &[TestCase],
    budget: &FuzzBudget,
    rare: &BTreeSet<BranchEdge>,
    rng_seed: u64,
) -> FuzzQueue {
    let mut f = Fuzzer::new(dut, plan, rare.clone(), rng_seed, 1);
    f.add_seeds(seeds);
    let limits = FuzzLimits { max_execs: budget.max_execs, deadline_ms: budget.deadline_ms, stall: None };
    f.run(&limits, &SerialExecutor, &NoClock);
    f.into_queue()
}
