//! Wall clock and a rayon-backed batch executor.

use std::time::Instant;

use raretrig_core::budget::Clock;
use raretrig_core::dut::{execute_bytes, ExecError, Trace};
use raretrig_core::fuzz::BatchExecutor;
use raretrig_core::{Dut, InstrumentationPlan};
use rayon::prelude::*;

/// Milliseconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        WallClock(Instant::now())
    }
}

impl Clock for WallClock {
    fn now_ms(&self) -> u64 {
        self.0.elapsed().as_millis() as u64
    }
}

/// Runs each batch on a dedicated thread pool. Results come back in input
/// order, so campaigns are identical to serial runs.
pub struct ParallelExecutor {
    pool: rayon::ThreadPool,
}

impl ParallelExecutor {
    pub fn new(jobs: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        Ok(ParallelExecutor { pool: rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()? })
    }
}

impl BatchExecutor for ParallelExecutor {
    fn run_batch(&self, dut: &Dut, plan: &InstrumentationPlan, inputs: &[Vec<u8>]) -> Vec<Result<Trace, ExecError>> {
        self.pool.install(|| inputs.par_iter().map(|bytes| execute_bytes(dut, bytes, plan)).collect())
    }
}
