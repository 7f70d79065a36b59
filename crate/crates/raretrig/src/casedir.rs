//! Test-case directories: one raw file per case, named `tc_<id>_<origin>.bin`.

use std::fs;
use std::path::{Path, PathBuf};

use raretrig_core::{Origin, TestCase};

#[derive(Debug, thiserror::Error)]
pub enum CaseDirError {
    #[error("malformed test-case file name `{0}`")]
    Name(String),
    #[error("duplicate test-case id {0}")]
    Duplicate(u64),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CaseDirError + '_ {
    move |source| CaseDirError::Io { path: path.to_path_buf(), source }
}

pub fn file_name(tc: &TestCase) -> String {
    format!("tc_{}_{}.bin", tc.id, tc.origin)
}

/// Parses `tc_<id>_<origin>.bin`; `None` for files that are not test cases.
pub fn parse_name(name: &str) -> Option<Result<(u64, Origin), CaseDirError>> {
    let stem = name.strip_prefix("tc_")?.strip_suffix(".bin")?;
    let bad = || CaseDirError::Name(name.to_string());
    let Some((id, origin)) = stem.split_once('_') else {
        return Some(Err(bad()));
    };
    match (id.parse::<u64>(), Origin::parse(origin)) {
        (Ok(id), Some(o)) => Some(Ok((id, o))),
        _ => Some(Err(bad())),
    }
}

/// Writes every case into `dir`, creating it if needed.
pub fn write_dir(dir: &Path, cases: &[TestCase]) -> Result<(), CaseDirError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    for tc in cases {
        let path = dir.join(file_name(tc));
        fs::write(&path, &tc.bytes).map_err(io(&path))?;
    }
    Ok(())
}

/// Reads all `tc_*.bin` files in `dir`, ordered by id. Other files are ignored.
pub fn read_dir(dir: &Path) -> Result<Vec<TestCase>, CaseDirError> {
    let mut cases = Vec::new();
    for entry in fs::read_dir(dir).map_err(io(dir))? {
        let entry = entry.map_err(io(dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(parsed) = parse_name(&name) else { continue };
        let (id, origin) = parsed?;
        let path = entry.path();
        let bytes = fs::read(&path).map_err(io(&path))?;
        cases.push(TestCase::new(id, bytes, origin));
    }
    cases.sort_by_key(|tc| tc.id);
    if let Some(w) = cases.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(CaseDirError::Duplicate(w[0].id));
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names() {
        let tc = TestCase::new(12, vec![1], Origin::Concolic);
        assert_eq!(file_name(&tc), "tc_12_concolic.bin");
        assert!(matches!(parse_name("tc_12_concolic.bin"), Some(Ok((12, Origin::Concolic)))));
        assert!(parse_name("readme.txt").is_none());
        assert!(matches!(parse_name("tc_x_fuzz.bin"), Some(Err(_))));
        assert!(matches!(parse_name("tc_3_alien.bin"), Some(Err(_))));
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cases = vec![
            TestCase::new(10, vec![1, 2], Origin::Fuzz),
            TestCase::new(2, vec![], Origin::Random),
            TestCase::new(3, vec![0xFF], Origin::User),
        ];
        write_dir(dir.path(), &cases).unwrap();
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let back = read_dir(dir.path()).unwrap();
        let ids: Vec<u64> = back.iter().map(|t| t.id).collect();
        assert_eq!(ids, vec![2, 3, 10]);
        assert_eq!(back[2].bytes, vec![1, 2]);
        assert_eq!(back[2].origin, Origin::Fuzz);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("tc_1_fuzz.bin"), [0]).unwrap();
        std::fs::write(dir.path().join("tc_1_user.bin"), [0]).unwrap();
        assert!(matches!(read_dir(dir.path()), Err(CaseDirError::Duplicate(1))));
    }
}
