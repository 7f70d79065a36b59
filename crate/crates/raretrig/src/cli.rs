//! `raretrig` command line.
//!
//! Exit codes: 0 success, 1 the method ran but its objective was not met,
//! 2 usage, parse or I/O error. Logs go to stderr; reports only to files.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use raretrig_core::budget::{Clock, NoClock};
use raretrig_core::concolic::{concol_exec_with, ConcolicBudget};
use raretrig_core::fuzz::{BatchExecutor, FuzzLimits, Fuzzer, SerialExecutor};
use raretrig_core::orchestrator::{random_simulation_cases, run_campaign_with};
use raretrig_core::solver::{SolveBudget, TieredSolver};
use raretrig_core::{
    build_lut, compute_dominators, detect_all, evaluate, identify_rare_targets, random_testcase, select_blocks, BranchEdge, CampaignConfig,
    Dut, ExecutionTree, InstrumentationPlan, PlanMode, SymRange, TestCase,
};

use crate::bench::{self, Corpus};
use crate::json::{self, edge_strings};
use crate::runtime::{ParallelExecutor, WallClock};
use crate::{casedir, lutfile};

/// Default execution budget of the `fuzz` baseline in deterministic mode.
pub const FUZZ_BASELINE_EXECS: u64 = 1_000_000;

#[derive(Debug, Parser)]
#[command(name = "raretrig", version, about = "Rare-branch test generation and trojan detection for bitvector designs")]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Full,
    Selective,
}

impl From<ModeArg> for PlanMode {
    fn from(m: ModeArg) -> PlanMode {
        match m {
            ModeArg::Full => PlanMode::Full,
            ModeArg::Selective => PlanMode::Selective,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for every random choice.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Count executions and solver calls instead of reading the clock.
    #[arg(long)]
    pub deterministic: bool,
    /// Overall wall-time limit in seconds.
    #[arg(long, default_value_t = 7200)]
    pub time_cutoff: u64,
    /// Fuzz phase limit.
    #[arg(long, default_value_t = 5)]
    pub it_f: u32,
    /// Concolic phase limit.
    #[arg(long, default_value_t = 5)]
    pub it_c: u32,
    /// Fuzzer stall threshold in seconds.
    #[arg(long, default_value_t = 5)]
    pub tf: u64,
    /// Concolic stall threshold in seconds.
    #[arg(long, default_value_t = 10)]
    pub tc: u64,
    /// Symbolic input bytes, `off:len[,off:len...]`.
    #[arg(long)]
    pub sym: Option<SymRange>,
    /// Write a JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write the instrumentation plan as JSON here.
    #[arg(long)]
    pub emit_plan: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModeArg::Selective)]
    pub mode: ModeArg,
    /// Worker threads for batch execution.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

impl Common {
    fn campaign_config(&self) -> CampaignConfig {
        CampaignConfig {
            it_f: self.it_f,
            it_c: self.it_c,
            time_threshold_f_ms: self.tf * 1000,
            time_threshold_c_ms: self.tc * 1000,
            time_cutoff_ms: self.time_cutoff.saturating_mul(1000),
            rng_seed: self.seed,
            deterministic: self.deterministic,
            mode: self.mode.into(),
            sym: self.sym.clone(),
            ..CampaignConfig::default()
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Random simulation; reports the branch arms it never took.
    Sim {
        dut: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Number of random cases (default 16).
        #[arg(long)]
        cases: Option<u32>,
    },
    /// Interleaved fuzz/concolic campaign against the rare targets.
    Campaign {
        dut: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Write the generated test cases here.
        #[arg(long)]
        corpus_out: Option<PathBuf>,
    },
    /// Greybox fuzzing alone.
    Fuzz {
        dut: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Execution budget (deterministic default 1000000).
        #[arg(long)]
        max_execs: Option<u64>,
        #[arg(long)]
        corpus_out: Option<PathBuf>,
    },
    /// Concolic execution alone, from one random seed case.
    Concolic {
        dut: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Solver-call budget (default 256).
        #[arg(long)]
        max_solves: Option<u64>,
        #[arg(long)]
        corpus_out: Option<PathBuf>,
    },
    /// Branch coverage of a test-case directory.
    Coverage {
        dut: PathBuf,
        cases: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Use this plan instead of building one.
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Build a golden LUT from a reference design and a vector directory.
    GenLut {
        reference: PathBuf,
        cases: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// 16-byte salt in hex; derived from --seed when --deterministic.
        #[arg(long)]
        salt: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Check a design against a golden LUT.
    Detect {
        dut: PathBuf,
        cases: PathBuf,
        #[arg(long)]
        lut: PathBuf,
        /// Exit 1 if a trojan is detected.
        #[arg(long, conflicts_with = "expect_trojan")]
        expect_clean: bool,
        /// Exit 1 if no trojan is detected.
        #[arg(long)]
        expect_trojan: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Inspect the shipped benchmark corpus.
    Corpus {
        #[command(subcommand)]
        action: CorpusAction,
    },
}

#[derive(Debug, Subcommand)]
pub enum CorpusAction {
    /// One line per entry.
    List,
    /// Print an entry's manifest record.
    Show { name: String },
    /// Copy an entry's designs, LUT and vectors into a directory.
    Extract {
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate manifest, vectors and LUTs from the `.dut` sources.
    Rebuild {
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

/// Failure that maps to exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{source}")]
    Parse { path: PathBuf, source: raretrig_core::ParseError },
    #[error(transparent)]
    Corpus(#[from] bench::CorpusError),
    #[error(transparent)]
    Cases(#[from] casedir::CaseDirError),
    #[error(transparent)]
    Lut(#[from] lutfile::LutFileError),
    #[error(transparent)]
    Plan(#[from] json::PlanJsonError),
    #[error("{0}")]
    Usage(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// Reads a design. A bare entry name such as `magic32` resolves against the
/// corpus directory when no such file exists.
fn load_dut(path: &Path) -> Result<Dut, CliError> {
    let resolved = if path.exists() {
        path.to_path_buf()
    } else {
        let alt = bench::corpus_dir().join(path);
        let with_ext = bench::corpus_dir().join(format!("{}.dut", path.display()));
        [alt, with_ext].into_iter().find(|p| p.is_file()).unwrap_or_else(|| path.to_path_buf())
    };
    let text = std::fs::read_to_string(&resolved).map_err(io_err(&resolved))?;
    raretrig_core::parse_dut(&text).map_err(|source| CliError::Parse { path: resolved, source })
}

fn write_report<T: serde::Serialize>(path: Option<&Path>, value: &T) -> Result<(), CliError> {
    if let Some(p) = path {
        std::fs::write(p, json::to_pretty(value)).map_err(io_err(p))?;
    }
    Ok(())
}

fn emit_plan(common: &Common, plan: &InstrumentationPlan) -> Result<(), CliError> {
    write_report(common.emit_plan.as_deref(), &json::PlanJson::from_plan(plan))
}

fn executor(jobs: usize) -> Result<Box<dyn BatchExecutor>, CliError> {
    if jobs <= 1 {
        return Ok(Box::new(SerialExecutor));
    }
    ParallelExecutor::new(jobs).map(|e| Box::new(e) as Box<dyn BatchExecutor>).map_err(|e| CliError::Usage(e.to_string()))
}

/// Rare targets and the plan the single-engine baselines run under.
fn baseline_setup(dut: &Dut, common: &Common) -> (CampaignConfig, Vec<TestCase>, BTreeSet<BranchEdge>, InstrumentationPlan) {
    let config = common.campaign_config();
    let random = random_simulation_cases(dut, &config);
    let rare = identify_rare_targets(dut, &InstrumentationPlan::full(dut, config.rng_seed), &config);
    let dom = compute_dominators(dut);
    let plan = select_blocks(dut, &dom, &rare, config.mode, &mut ChaCha8Rng::seed_from_u64(config.rng_seed));
    (config, random, rare, plan)
}

fn outcome_code(ok: bool) -> ExitCode {
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn run_sim(dut: &Dut, common: &Common, cases: Option<u32>) -> Result<ExitCode, CliError> {
    let mut config = common.campaign_config();
    if let Some(n) = cases {
        config.random_sim_cases = n;
    }
    let full = InstrumentationPlan::full(dut, config.rng_seed);
    let rare = identify_rare_targets(dut, &full, &config);
    let covered: BTreeSet<BranchEdge> =
        dut.branch_edges().into_iter().filter(|e| !rare.contains(e) && !dut.declared_unreachable().contains(e)).collect();
    log::info!("{} rare target(s): {:?}", rare.len(), edge_strings(&rare));
    emit_plan(common, &full)?;
    write_report(
        common.report.as_deref(),
        &json::SimReportJson {
            dut: dut.name().to_string(),
            seed: config.rng_seed,
            cases: config.random_sim_cases,
            covered: edge_strings(&covered),
            rare_targets: edge_strings(&rare),
        },
    )?;
    Ok(ExitCode::SUCCESS)
}

fn run_campaign_cmd(dut: &Dut, common: &Common, corpus_out: Option<&Path>) -> Result<ExitCode, CliError> {
    let config = common.campaign_config();
    let clock = WallClock::start();
    let exec = executor(common.jobs)?;
    let report = run_campaign_with(dut, &config, &clock, exec.as_ref());
    log::info!(
        "{}: phases `{}`, {}/{} rare covered, outcome {}",
        dut.name(),
        report.phases(),
        report.rare_covered().len(),
        report.rare_targets.len(),
        report.outcome.as_str()
    );
    emit_plan(common, &report.plan)?;
    write_report(common.report.as_deref(), &json::CampaignReportJson::new(dut, config.rng_seed, config.deterministic, &report))?;
    if let Some(dir) = corpus_out {
        casedir::write_dir(dir, &report.testcases)?;
    }
    Ok(outcome_code(report.outcome == raretrig_core::orchestrator::Outcome::AllCovered))
}

fn engine_report(
    dut: &Dut,
    engine: &str,
    seed: u64,
    rare: &BTreeSet<BranchEdge>,
    covered: &BTreeSet<BranchEdge>,
    (execs, solves, testcases): (u64, u64, usize),
    stop: String,
) -> json::EngineReportJson {
    let rare_covered: BTreeSet<BranchEdge> = rare.intersection(covered).copied().collect();
    json::EngineReportJson {
        dut: dut.name().to_string(),
        engine: engine.to_string(),
        seed,
        rare_targets: edge_strings(rare),
        covered: edge_strings(covered),
        rare_covered: edge_strings(&rare_covered),
        execs,
        solves,
        testcases,
        stop,
        outcome: if rare_covered.len() == rare.len() { "all_covered" } else { "cutoff" }.to_string(),
    }
}

fn run_fuzz(dut: &Dut, common: &Common, max_execs: Option<u64>, corpus_out: Option<&Path>) -> Result<ExitCode, CliError> {
    let (config, random, rare, plan) = baseline_setup(dut, common);
    emit_plan(common, &plan)?;
    let clock = WallClock::start();
    let exec = executor(common.jobs)?;
    let mut fuzzer = Fuzzer::new(dut, &plan, rare.clone(), config.rng_seed ^ 0x9E37_79B9_7F4A_7C15, random.len() as u64 + 1);
    fuzzer.add_seeds(&random);
    let (limits, clock): (FuzzLimits, &dyn Clock) = if common.deterministic {
        (FuzzLimits::execs(max_execs.unwrap_or(FUZZ_BASELINE_EXECS)), &NoClock)
    } else {
        let mut l = FuzzLimits::execs(max_execs.unwrap_or(u64::MAX));
        l.deadline_ms = Some(config.time_cutoff_ms);
        (l, &clock)
    };
    let run = if rare.is_empty() { None } else { Some(fuzzer.run(&limits, exec.as_ref(), clock)) };
    let queue = fuzzer.into_queue();
    let mut covered = queue.covered.clone();
    covered.extend(dut.branch_edges().into_iter().filter(|e| !rare.contains(e) && !dut.declared_unreachable().contains(e)));
    let covered: BTreeSet<BranchEdge> = covered;
    let (execs, stop) = match &run {
        Some(r) => (r.execs, format!("{:?}", r.stop)),
        None => (0, "NoTargets".to_string()),
    };
    let report = engine_report(dut, "fuzz", config.rng_seed, &rare, &covered, (execs, 0, queue.len()), stop);
    log::info!("fuzz: {} execs, {}/{} rare covered", execs, report.rare_covered.len(), rare.len());
    let ok = report.outcome == "all_covered";
    write_report(common.report.as_deref(), &report)?;
    if let Some(dir) = corpus_out {
        casedir::write_dir(dir, &queue.entries)?;
    }
    Ok(outcome_code(ok))
}

fn run_concolic(dut: &Dut, common: &Common, max_solves: Option<u64>, corpus_out: Option<&Path>) -> Result<ExitCode, CliError> {
    let (config, random, rare, plan) = baseline_setup(dut, common);
    emit_plan(common, &plan)?;
    // One random seed case, drawn after the simulation cases.
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(1);
    let mut seed_case = random_testcase(dut, dut.max_cycles(), &mut rng);
    seed_case.id = random.len() as u64 + 1;
    let sym = common.sym.clone().unwrap_or_else(|| SymRange::prefix(dut.frame_size() as u32));
    let clock = WallClock::start();
    let (clock, deadline): (&dyn Clock, Option<u64>) =
        if common.deterministic { (&NoClock, None) } else { (&clock, Some(config.time_cutoff_ms)) };
    let budget = ConcolicBudget {
        max_solves: max_solves.unwrap_or(config.solves_per_threshold * config.phase_cap_thresholds),
        deadline_ms: deadline,
        stall: None,
        ..ConcolicBudget::default()
    };
    let solver = TieredSolver { budget: SolveBudget { seed: config.rng_seed, ..SolveBudget::default() } };
    let mut tree = ExecutionTree::new();
    let run = concol_exec_with(dut, &plan, &[seed_case.clone()], &sym, &budget, &mut tree, &rare, &solver, clock, seed_case.id + 1);
    let mut covered = tree.covered_edges().clone();
    covered.extend(dut.branch_edges().into_iter().filter(|e| !rare.contains(e) && !dut.declared_unreachable().contains(e)));
    let mut cases = vec![seed_case];
    cases.extend(run.testcases.iter().cloned());
    let report = engine_report(dut, "concolic", config.rng_seed, &rare, &covered, (0, run.solves, cases.len()), format!("{:?}", run.stop));
    log::info!("concolic: {} solves, {}/{} rare covered", run.solves, report.rare_covered.len(), rare.len());
    let ok = report.outcome == "all_covered";
    write_report(common.report.as_deref(), &report)?;
    if let Some(dir) = corpus_out {
        casedir::write_dir(dir, &cases)?;
    }
    Ok(outcome_code(ok))
}

fn run_coverage(dut: &Dut, cases_dir: &Path, common: &Common, plan_path: Option<&Path>) -> Result<ExitCode, CliError> {
    let config = common.campaign_config();
    let rare = identify_rare_targets(dut, &InstrumentationPlan::full(dut, config.rng_seed), &config);
    let plan = match plan_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str::<json::PlanJson>(&text).map_err(json::PlanJsonError::from)?.into_plan(dut)?
        }
        None => select_blocks(dut, &compute_dominators(dut), &rare, config.mode, &mut ChaCha8Rng::seed_from_u64(config.rng_seed)),
    };
    emit_plan(common, &plan)?;
    let cases = casedir::read_dir(cases_dir)?;
    let report = evaluate(dut, &plan, &cases, &rare);
    log::info!("coverage: {:.2}% of branch edges, {}/{} rare", report.branch_cov_percent, report.rare_covered_count, report.rare_total);
    write_report(common.report.as_deref(), &json::CoverageReportJson::from(&report))?;
    Ok(ExitCode::SUCCESS)
}

fn parse_salt(text: &str) -> Result<[u8; 16], CliError> {
    let bytes = hex::decode(text).map_err(|e| CliError::Usage(format!("--salt: {e}")))?;
    bytes.try_into().map_err(|_| CliError::Usage("--salt must be 16 bytes (32 hex digits)".into()))
}

fn run_gen_lut(reference: &Dut, cases_dir: &Path, out: &Path, salt: Option<&str>, common: &Common) -> Result<ExitCode, CliError> {
    let salt = match salt {
        Some(s) => parse_salt(s)?,
        None => {
            let mut salt = [0u8; 16];
            if common.deterministic {
                ChaCha8Rng::seed_from_u64(common.seed).fill_bytes(&mut salt);
            } else {
                rand::thread_rng().fill_bytes(&mut salt);
            }
            salt
        }
    };
    let cases = casedir::read_dir(cases_dir)?;
    match build_lut(reference, &InstrumentationPlan::full(reference, 0), &cases, salt) {
        Ok(lut) => {
            lutfile::write(out, &lut)?;
            log::info!("wrote {} entries to {}", lut.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Err(e) => {
            log::error!("{e}");
            Ok(ExitCode::from(1))
        }
    }
}

fn run_detect(dut: &Dut, cases_dir: &Path, lut_path: &Path, expect: Option<bool>, common: &Common) -> Result<ExitCode, CliError> {
    let lut = lutfile::read(lut_path)?;
    let cases = casedir::read_dir(cases_dir)?;
    let report = detect_all(dut, &InstrumentationPlan::full(dut, 0), &lut, &cases);
    match report.first_detecting_case {
        Some(id) => log::warn!("{}: trojan detected, first on case {id}", dut.name()),
        None => log::info!("{}: no deviation from the golden LUT", dut.name()),
    }
    write_report(
        common.report.as_deref(),
        &json::DetectReportJson {
            dut: dut.name().to_string(),
            detections: report.detections.iter().map(|(id, v)| json::VerdictJson { id: *id, verdict: v.as_str().to_string() }).collect(),
            trojan_found: report.trojan_found,
            first_detecting_case: report.first_detecting_case,
        },
    )?;
    Ok(match expect {
        Some(want_trojan) => outcome_code(report.trojan_found == want_trojan),
        None => ExitCode::SUCCESS,
    })
}

fn copy(from: &Path, to: &Path) -> Result<(), CliError> {
    std::fs::copy(from, to).map(|_| ()).map_err(io_err(from))
}

fn run_corpus(action: &CorpusAction) -> Result<ExitCode, CliError> {
    if let CorpusAction::Rebuild { dir } = action {
        let dir = dir.clone().unwrap_or_else(bench::corpus_dir);
        let m = bench::rebuild(&dir)?;
        log::info!("rebuilt {} entries in {}", m.entries.len(), dir.display());
        return Ok(ExitCode::SUCCESS);
    }
    let corpus = Corpus::open_default()?;
    match action {
        CorpusAction::List => {
            for e in &corpus.manifest.entries {
                eprintln!(
                    "{:<14} {:<5} rare={} {}",
                    e.name,
                    format!("{:?}", e.trojan_type).to_lowercase(),
                    e.rare_target_count,
                    e.trigger.description
                );
            }
        }
        CorpusAction::Show { name } => {
            eprint!("{}", json::to_pretty(corpus.entry(name)?));
        }
        CorpusAction::Extract { name, out } => {
            let e = corpus.entry(name)?;
            std::fs::create_dir_all(out).map_err(io_err(out))?;
            for f in [&e.dut, &e.clean, &e.reduced.dut, &e.reduced.clean, &e.lut] {
                copy(&corpus.path(f), &out.join(f))?;
            }
            casedir::write_dir(&out.join(&e.vectors), &corpus.vectors(e)?)?;
            std::fs::write(out.join("entry.json"), json::to_pretty(e)).map_err(io_err(out))?;
        }
        CorpusAction::Rebuild { .. } => unreachable!(),
    }
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: &Cli) -> Result<ExitCode, CliError> {
    match &cli.command {
        Command::Sim { dut, common, cases } => run_sim(&load_dut(dut)?, common, *cases),
        Command::Campaign { dut, common, corpus_out } => run_campaign_cmd(&load_dut(dut)?, common, corpus_out.as_deref()),
        Command::Fuzz { dut, common, max_execs, corpus_out } => run_fuzz(&load_dut(dut)?, common, *max_execs, corpus_out.as_deref()),
        Command::Concolic { dut, common, max_solves, corpus_out } => {
            run_concolic(&load_dut(dut)?, common, *max_solves, corpus_out.as_deref())
        }
        Command::Coverage { dut, cases, common, plan } => run_coverage(&load_dut(dut)?, cases, common, plan.as_deref()),
        Command::GenLut { reference, cases, out, salt, common } => run_gen_lut(&load_dut(reference)?, cases, out, salt.as_deref(), common),
        Command::Detect { dut, cases, lut, expect_clean, expect_trojan, common } => {
            let expect = if *expect_clean {
                Some(false)
            } else if *expect_trojan {
                Some(true)
            } else {
                None
            };
            run_detect(&load_dut(dut)?, cases, lut, expect, common)
        }
        Command::Corpus { action } => run_corpus(action),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_env("RUST_LOG").target(env_logger::Target::Stderr).try_init();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
