//! Golden lookup tables and trojan detection.
//!
//! A lookup table maps a salted digest of each reference input to a salted
//! digest of the reference design's outputs. It never stores outputs, so
//! the reference behavior cannot be read back from it.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use sha2::{Digest as _, Sha256};

use crate::dut::{byte_len, execute, Dut, TestCase};
use crate::instrument::InstrumentationPlan;

pub type Digest = [u8; 32];
pub type Salt = [u8; 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DigestAlg {
    Sha256,
}

impl DigestAlg {
    pub fn id(self) -> u8 {
        match self {
            DigestAlg::Sha256 => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<DigestAlg> {
        match id {
            1 => Some(DigestAlg::Sha256),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DigestAlg::Sha256 => "sha256",
        }
    }

    fn digest(self, salt: &Salt, data: &[u8]) -> Digest {
        match self {
            DigestAlg::Sha256 => {
                let mut h = Sha256::new();
                h.update(salt);
                h.update(data);
                h.finalize().into()
            }
        }
    }
}

/// Outputs as (width byte, big-endian value in whole bytes) per output.
pub fn canonical_outputs(dut: &Dut, outputs: &[u64]) -> Vec<u8> {
    let mut out = Vec::new();
    for (port, &v) in dut.outputs().iter().zip(outputs) {
        out.push(port.width);
        let n = byte_len(port.width);
        out.extend_from_slice(&v.to_be_bytes()[8 - n..]);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldenLut {
    alg: DigestAlg,
    salt: Salt,
    entries: BTreeMap<Digest, Digest>,
}

impl GoldenLut {
    pub fn from_entries(alg: DigestAlg, salt: Salt, entries: BTreeMap<Digest, Digest>) -> Self {
        GoldenLut { alg, salt, entries }
    }

    pub fn alg(&self) -> DigestAlg {
        self.alg
    }

    pub fn salt(&self) -> &Salt {
        &self.salt
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// (input digest, output digest) pairs in key order.
    pub fn entries(&self) -> impl Iterator<Item = (&Digest, &Digest)> {
        self.entries.iter()
    }

    pub fn input_digest(&self, bytes: &[u8]) -> Digest {
        self.alg.digest(&self.salt, bytes)
    }

    pub fn output_digest(&self, dut: &Dut, outputs: &[u64]) -> Digest {
        self.alg.digest(&self.salt, &canonical_outputs(dut, outputs))
    }

    pub fn contains(&self, bytes: &[u8]) -> bool {
        self.entries.contains_key(&self.input_digest(bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LutError {
    #[error("reference design does not halt on test case(s) {ids:?}")]
    NonHalting { ids: Vec<u64> },
}

/// Runs every case on the trusted reference design and records its digests.
pub fn build_lut(reference: &Dut, plan: &InstrumentationPlan, testcases: &[TestCase], salt: Salt) -> Result<GoldenLut, LutError> {
    let mut lut = GoldenLut { alg: DigestAlg::Sha256, salt, entries: BTreeMap::new() };
    let mut bad = Vec::new();
    for tc in testcases {
        match execute(reference, tc, plan).ok().and_then(|t| t.outputs) {
            Some(outs) => {
                let k = lut.input_digest(&tc.bytes);
                let v = lut.output_digest(reference, &outs);
                lut.entries.insert(k, v);
            }
            None => bad.push(tc.id),
        }
    }
    if bad.is_empty() {
        Ok(lut)
    } else {
        Err(LutError::NonHalting { ids: bad })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Clean,
    NotInLut,
    /// Outputs differ from the reference; `non_halting` when the design
    /// failed to produce outputs at all.
    TrojanDetected {
        non_halting: bool,
    },
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Clean => "clean",
            Verdict::NotInLut => "not_in_lut",
            Verdict::TrojanDetected { non_halting: false } => "trojan_detected",
            Verdict::TrojanDetected { non_halting: true } => "trojan_detected_non_halting",
        }
    }

    pub fn is_detection(self) -> bool {
        matches!(self, Verdict::TrojanDetected { .. })
    }
}

pub fn detect(dut: &Dut, plan: &InstrumentationPlan, lut: &GoldenLut, tc: &TestCase) -> Verdict {
    let Some(expected) = lut.entries.get(&lut.input_digest(&tc.bytes)) else {
        return Verdict::NotInLut;
    };
    match execute(dut, tc, plan).ok().and_then(|t| t.outputs) {
        Some(outs) if &lut.output_digest(dut, &outs) == expected => Verdict::Clean,
        Some(_) => Verdict::TrojanDetected { non_halting: false },
        None => Verdict::TrojanDetected { non_halting: true },
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectionReport {
    pub detections: Vec<(u64, Verdict)>,
    pub trojan_found: bool,
    pub first_detecting_case: Option<u64>,
}

pub fn detect_all(dut: &Dut, plan: &InstrumentationPlan, lut: &GoldenLut, testcases: &[TestCase]) -> DetectionReport {
    let detections: Vec<(u64, Verdict)> = testcases.iter().map(|tc| (tc.id, detect(dut, plan, lut, tc))).collect();
    let first_detecting_case = detections.iter().find(|(_, v)| v.is_detection()).map(|(id, _)| *id);
    DetectionReport { trojan_found: first_detecting_case.is_some(), first_detecting_case, detections }
}
