//! The shipped benchmark corpus: trojaned designs, clean twins, reduced-width
//! variants, vector sets and prebuilt LUTs.
//!
//! `corpus/manifest.json` is the source of truth at run time. [`rebuild`]
//! regenerates it, together with `vectors/` and the `*.lut` files, from the
//! `.dut` sources and the entry table in this module.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use raretrig_core::{
    build_lut, execute, parse_dut, random_testcase, run_campaign, BranchEdge, CampaignConfig, Dut, GoldenLut, InstrumentationPlan, Origin,
    TestCase,
};
use serde::{Deserialize, Serialize};

use crate::{casedir, lutfile};

pub const CORPUS_ENV: &str = "RARETRIG_CORPUS";
/// Seed of the random simulation that the manifest's rare-target counts and
/// the shipped vector sets are computed with.
pub const CORPUS_SEED: u64 = 7;
/// Random vectors per entry on top of campaign output and triggers.
pub const RANDOM_VECTORS: u32 = 32;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: raretrig_core::ParseError },
    #[error("manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("no corpus entry named `{0}`")]
    UnknownEntry(String),
    #[error("bad hex in manifest: {0}")]
    Hex(#[from] hex::FromHexError),
    #[error(transparent)]
    Lut(#[from] lutfile::LutFileError),
    #[error(transparent)]
    Cases(#[from] casedir::CaseDirError),
    #[error("reference design rejected vectors: {0}")]
    Reference(#[from] raretrig_core::detector::LutError),
}

fn read_text(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })
}

fn write_file(path: &Path, data: &[u8]) -> Result<(), CorpusError> {
    fs::write(path, data).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })
}

pub fn load_dut(path: &Path) -> Result<Dut, CorpusError> {
    parse_dut(&read_text(path)?).map_err(|source| CorpusError::Parse { path: path.to_path_buf(), source })
}

/// `$RARETRIG_CORPUS`, or the `corpus/` directory of this source tree.
pub fn corpus_dir() -> PathBuf {
    match std::env::var_os(CORPUS_ENV) {
        Some(p) if !p.is_empty() => PathBuf::from(p),
        _ => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus"),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrojanType {
    Cwom,
    Cwm,
    Swom,
    Swm,
    None,
}

impl TrojanType {
    /// Payloads "with memory" persist after the trigger condition drops.
    pub fn has_memory(self) -> bool {
        matches!(self, TrojanType::Cwm | TrojanType::Swm)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trigger {
    pub description: String,
    /// Branch arm the trigger takes, as `"<site>.<arm>"`.
    pub target: String,
    /// Hex-encoded inputs that activate the trigger.
    pub cases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reduced {
    pub dut: String,
    pub clean: String,
    pub target: String,
    pub cases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub name: String,
    pub dut: String,
    pub clean: String,
    pub trojan_type: TrojanType,
    pub rare_target_count: usize,
    pub trigger: Trigger,
    pub reduced: Reduced,
    pub lut: String,
    pub vectors: String,
}

impl CorpusEntry {
    pub fn target(&self) -> BranchEdge {
        BranchEdge::parse(&self.trigger.target).expect("manifest targets are well formed")
    }

    pub fn reduced_target(&self) -> BranchEdge {
        BranchEdge::parse(&self.reduced.target).expect("manifest targets are well formed")
    }

    pub fn trigger_cases(&self) -> Result<Vec<Vec<u8>>, CorpusError> {
        Ok(self.trigger.cases.iter().map(hex::decode).collect::<Result<_, _>>()?)
    }

    pub fn reduced_trigger_cases(&self) -> Result<Vec<Vec<u8>>, CorpusError> {
        Ok(self.reduced.cases.iter().map(hex::decode).collect::<Result<_, _>>()?)
    }

    pub fn is_trojaned(&self) -> bool {
        self.trojan_type != TrojanType::None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub random_cases: u32,
    pub entries: Vec<CorpusEntry>,
}

/// A corpus on disk.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Corpus {
    pub fn open(dir: &Path) -> Result<Corpus, CorpusError> {
        let manifest = serde_json::from_str(&read_text(&dir.join("manifest.json"))?)?;
        Ok(Corpus { dir: dir.to_path_buf(), manifest })
    }

    pub fn open_default() -> Result<Corpus, CorpusError> {
        Corpus::open(&corpus_dir())
    }

    pub fn entry(&self, name: &str) -> Result<&CorpusEntry, CorpusError> {
        self.manifest.entries.iter().find(|e| e.name == name).ok_or_else(|| CorpusError::UnknownEntry(name.to_string()))
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    pub fn dut(&self, file: &str) -> Result<Dut, CorpusError> {
        load_dut(&self.path(file))
    }

    pub fn lut(&self, e: &CorpusEntry) -> Result<GoldenLut, CorpusError> {
        Ok(lutfile::read(&self.path(&e.lut))?)
    }

    pub fn vectors(&self, e: &CorpusEntry) -> Result<Vec<TestCase>, CorpusError> {
        Ok(casedir::read_dir(&self.path(&e.vectors))?)
    }
}

/// List of shipped entries from the default corpus location.
pub fn corpus_manifest() -> Result<Vec<CorpusEntry>, CorpusError> {
    Ok(Corpus::open_default()?.manifest.entries)
}

struct EntryDef {
    name: &'static str,
    trojan_type: TrojanType,
    description: &'static str,
    target: &'static str,
    cases: &'static [&'static str],
    reduced: &'static str,
    reduced_target: &'static str,
    reduced_cases: &'static [&'static str],
    /// Entries without a trojan are their own reference.
    has_twin: bool,
}

const ENTRY_DEFS: &[EntryDef] = &[
    EntryDef {
        name: "magic32",
        trojan_type: TrojanType::Cwom,
        description: "x == 0xDEADBEEF in a single cycle flips the low byte of the output",
        target: "0.then",
        cases: &["efbeadde"],
        reduced: "magic16",
        reduced_target: "0.then",
        reduced_cases: &["efbe"],
        has_twin: true,
    },
    EntryDef {
        name: "threshold_fir",
        trojan_type: TrojanType::Cwom,
        description: "third tap x2 == 0x5C corrupts bits 4..11 of the filter output",
        target: "0.then",
        cases: &["00005c", "10205c"],
        reduced: "fir16",
        reduced_target: "0.then",
        reduced_cases: &["005c"],
        has_twin: true,
    },
    EntryDef {
        name: "cwm",
        trojan_type: TrojanType::Cwm,
        description:
            "d == 0xC0DE on any of the first three cycles arms a sticky register; the checksum emitted on cycle 4 is XORed with 0x5A5A",
        target: "1.then",
        cases: &["dec0010002000300", "0100dec000000000"],
        reduced: "cwm8",
        reduced_target: "1.then",
        reduced_cases: &["c500"],
        has_twin: true,
    },
    EntryDef {
        name: "swom",
        trojan_type: TrojanType::Swom,
        description: "bytes 13 37 5A A9 on four consecutive cycles flip bit 8 of that cycle's contribution to the sum",
        target: "8.then",
        cases: &["13375aa90000", "0013375aa900"],
        reduced: "swom4",
        reduced_target: "8.then",
        reduced_cases: &["030a0600"],
        has_twin: true,
    },
    EntryDef {
        name: "swm",
        trojan_type: TrojanType::Swm,
        description: "x == 0x3C on three consecutive cycles arms a sticky register; the checksum emitted on cycle 6 is XORed with 0xA5A5",
        target: "2.then",
        cases: &["3c3c3c000000", "003c3c3c0000"],
        reduced: "swm4",
        reduced_target: "2.then",
        reduced_cases: &["0a0a0000"],
        has_twin: true,
    },
    EntryDef {
        name: "deep_nested",
        trojan_type: TrojanType::None,
        description: "five chained input constraints reach the innermost check (no trojan)",
        target: "20.else",
        cases: &["20277d0309"],
        reduced: "deep16",
        reduced_target: "16.else",
        reduced_cases: &["03060306"],
        has_twin: false,
    },
    EntryDef {
        name: "loop_heavy",
        trojan_type: TrojanType::None,
        description: "eight loop iterations with inputs 1 1 0 0 2 2 0 1 drive the accumulator to 0x0BAD (no trojan)",
        target: "3.then",
        cases: &["070101000002020001"],
        reduced: "loop16",
        reduced_target: "3.then",
        reduced_cases: &["010a0f00"],
        has_twin: false,
    },
];

fn file_pair(name: &str, has_twin: bool) -> (String, String) {
    let dut = format!("{name}.dut");
    let clean = if has_twin { format!("{name}_clean.dut") } else { dut.clone() };
    (dut, clean)
}

/// Salt for an entry's shipped LUT, derived from its name.
pub fn entry_salt(name: &str) -> [u8; 16] {
    let mut seed = [0u8; 32];
    for (i, b) in name.bytes().enumerate() {
        seed[i % 32] ^= b.rotate_left(i as u32 / 32);
    }
    let mut salt = [0u8; 16];
    ChaCha8Rng::from_seed(seed).fill_bytes(&mut salt);
    salt
}

/// The deterministic campaign configuration used for corpus vectors and
/// acceptance runs.
pub fn corpus_config() -> CampaignConfig {
    CampaignConfig { deterministic: true, rng_seed: CORPUS_SEED, ..CampaignConfig::default() }
}

/// Golden vector set for one entry: random cases, the documented triggers and
/// the cases a deterministic campaign on the trojaned design produces.
/// Only cases the reference design halts on are kept.
fn vector_set(dut: &Dut, reference: &Dut, triggers: &[Vec<u8>], name: &str) -> Vec<TestCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(CORPUS_SEED ^ u64::from_le_bytes(entry_salt(name)[..8].try_into().unwrap()));
    let mut candidates: Vec<(Vec<u8>, Origin)> = Vec::new();
    for _ in 0..RANDOM_VECTORS {
        candidates.push((random_testcase(reference, reference.max_cycles(), &mut rng).bytes, Origin::Random));
    }
    candidates.extend(triggers.iter().map(|t| (t.clone(), Origin::User)));
    let report = run_campaign(dut, &corpus_config());
    candidates.extend(report.testcases.iter().map(|tc| (tc.bytes.clone(), tc.origin)));

    let plan = InstrumentationPlan::full(reference, 0);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (bytes, origin) in candidates {
        if !seen.insert(bytes.clone()) {
            continue;
        }
        let tc = TestCase::new(out.len() as u64 + 1, bytes, origin);
        if execute(reference, &tc, &plan).is_ok_and(|t| t.outputs.is_some()) {
            out.push(tc);
        }
    }
    out
}

/// Regenerates `manifest.json`, `vectors/` and the LUT files in `dir` from
/// the `.dut` sources found there.
pub fn rebuild(dir: &Path) -> Result<Manifest, CorpusError> {
    let config = corpus_config();
    let mut entries = Vec::new();
    for s in ENTRY_DEFS {
        let (dut_file, clean_file) = file_pair(s.name, s.has_twin);
        let (red_file, red_clean) = file_pair(s.reduced, s.has_twin);
        let dut = load_dut(&dir.join(&dut_file))?;
        let clean = load_dut(&dir.join(&clean_file))?;
        for f in [&red_file, &red_clean] {
            load_dut(&dir.join(f))?;
        }
        let rare = raretrig_core::identify_rare_targets(&dut, &InstrumentationPlan::full(&dut, 0), &config);
        let triggers: Vec<Vec<u8>> = s.cases.iter().map(hex::decode).collect::<Result<_, _>>()?;

        let vectors = vector_set(&dut, &clean, &triggers, s.name);
        let vec_dir = format!("vectors/{}", s.name);
        let vec_path = dir.join(&vec_dir);
        if vec_path.exists() {
            fs::remove_dir_all(&vec_path).map_err(|source| CorpusError::Io { path: vec_path.clone(), source })?;
        }
        casedir::write_dir(&vec_path, &vectors)?;
        let lut = build_lut(&clean, &InstrumentationPlan::full(&clean, 0), &vectors, entry_salt(s.name))?;
        let lut_file = format!("{}.lut", s.name);
        lutfile::write(&dir.join(&lut_file), &lut)?;
        log::info!("{}: {} rare target(s), {} vectors", s.name, rare.len(), vectors.len());

        entries.push(CorpusEntry {
            name: s.name.to_string(),
            dut: dut_file,
            clean: clean_file,
            trojan_type: s.trojan_type,
            rare_target_count: rare.len(),
            trigger: Trigger {
                description: s.description.to_string(),
                target: s.target.to_string(),
                cases: s.cases.iter().map(|c| c.to_string()).collect(),
            },
            reduced: Reduced {
                dut: red_file,
                clean: red_clean,
                target: s.reduced_target.to_string(),
                cases: s.reduced_cases.iter().map(|c| c.to_string()).collect(),
            },
            lut: lut_file,
            vectors: vec_dir,
        });
    }
    let manifest = Manifest { seed: CORPUS_SEED, random_cases: config.random_sim_cases, entries };
    write_file(&dir.join("manifest.json"), crate::json::to_pretty(&manifest).as_bytes())?;
    Ok(manifest)
}
