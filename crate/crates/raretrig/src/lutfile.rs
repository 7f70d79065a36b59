//! Binary golden-LUT files.
//!
//! ```text
//! "GLUT" | version u8 | alg id u8 | salt [16] | count u32 LE | (key [32], value [32]) * count
//! ```
//!
//! Pairs are sorted by key, so a LUT has exactly one encoding.

use std::collections::BTreeMap;
use std::path::Path;

use raretrig_core::detector::{Digest, DigestAlg, Salt};
use raretrig_core::GoldenLut;

pub const MAGIC: &[u8; 4] = b"GLUT";
pub const VERSION: u8 = 1;
const HEADER: usize = 4 + 1 + 1 + 16 + 4;

#[derive(Debug, thiserror::Error)]
pub enum LutFileError {
    #[error("not a LUT file (bad magic)")]
    Magic,
    #[error("unsupported LUT version {0}")]
    Version(u8),
    #[error("unknown digest algorithm id {0}")]
    Alg(u8),
    #[error("LUT file truncated or has trailing bytes")]
    Length,
    #[error("LUT keys are not strictly ascending")]
    Unsorted,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode(lut: &GoldenLut) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + lut.len() * 64);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(lut.alg().id());
    out.extend_from_slice(lut.salt());
    out.extend_from_slice(&(lut.len() as u32).to_le_bytes());
    for (k, v) in lut.entries() {
        out.extend_from_slice(k);
        out.extend_from_slice(v);
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<GoldenLut, LutFileError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(LutFileError::Magic);
    }
    if bytes.len() < HEADER {
        return Err(LutFileError::Length);
    }
    if bytes[4] != VERSION {
        return Err(LutFileError::Version(bytes[4]));
    }
    let alg = DigestAlg::from_id(bytes[5]).ok_or(LutFileError::Alg(bytes[5]))?;
    let salt: Salt = bytes[6..22].try_into().unwrap();
    let count = u32::from_le_bytes(bytes[22..26].try_into().unwrap()) as usize;
    let body = &bytes[HEADER..];
    if count.checked_mul(64) != Some(body.len()) {
        return Err(LutFileError::Length);
    }
    let mut entries = BTreeMap::new();
    let mut last: Option<Digest> = None;
    for pair in body.chunks_exact(64) {
        let k: Digest = pair[..32].try_into().unwrap();
        let v: Digest = pair[32..].try_into().unwrap();
        if last.is_some_and(|l| l >= k) {
            return Err(LutFileError::Unsorted);
        }
        last = Some(k);
        entries.insert(k, v);
    }
    Ok(GoldenLut::from_entries(alg, salt, entries))
}

pub fn read(path: &Path) -> Result<GoldenLut, LutFileError> {
    decode(&std::fs::read(path)?)
}

pub fn write(path: &Path, lut: &GoldenLut) -> Result<(), LutFileError> {
    std::fs::write(path, encode(lut))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GoldenLut {
        let mut m = BTreeMap::new();
        m.insert([3u8; 32], [4u8; 32]);
        m.insert([1u8; 32], [2u8; 32]);
        GoldenLut::from_entries(DigestAlg::Sha256, [9; 16], m)
    }

    #[test]
    fn round_trip() {
        let bytes = encode(&sample());
        assert_eq!(&bytes[..4], b"GLUT");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 1);
        assert_eq!(bytes.len(), 26 + 128);
        // smaller key first
        assert_eq!(bytes[26], 1);
        assert_eq!(decode(&bytes).unwrap(), sample());
    }

    #[test]
    fn rejects_damage() {
        let bytes = encode(&sample());
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(matches!(decode(&b), Err(LutFileError::Magic)));
        let mut b = bytes.clone();
        b[4] = 2;
        assert!(matches!(decode(&b), Err(LutFileError::Version(2))));
        let mut b = bytes.clone();
        b[5] = 0;
        assert!(matches!(decode(&b), Err(LutFileError::Alg(0))));
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(LutFileError::Length)));
        let mut b = bytes.clone();
        b.swap(26, 26 + 64);
        assert!(matches!(decode(&b), Err(LutFileError::Unsorted)));
    }
}
