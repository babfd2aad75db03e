//! Dataset archive: a one-line magic/version header followed by the
//! dataset as JSON.
//!
//! ```text
//! DYNREC-DATASET 1
//! {"id":"movielens","interactions":[...],"catalog":{...},...}
//! ```

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::ingest::{Dataset, IngestError};

pub const MAGIC: &str = "DYNREC-DATASET";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a dataset archive (bad magic header)")]
    BadMagic,
    #[error("unsupported archive version {0} (this build reads {VERSION})")]
    UnsupportedVersion(u32),
    #[error("corrupt archive body: {0}")]
    Body(#[from] serde_json::Error),
    #[error("archive fails validation: {0}")]
    Invalid(#[from] IngestError),
}

fn io(path: &str) -> impl FnOnce(std::io::Error) -> ArchiveError + '_ {
    move |source| ArchiveError::Io { path: path.to_string(), source }
}

pub fn write_archive<W: Write>(dataset: &Dataset, mut out: W) -> Result<(), ArchiveError> {
    writeln!(out, "{MAGIC} {VERSION}").map_err(io("<stream>"))?;
    serde_json::to_writer(&mut out, dataset)?;
    out.write_all(b"\n").map_err(io("<stream>"))?;
    Ok(())
}

pub fn read_archive<R: Read>(source: R) -> Result<Dataset, ArchiveError> {
    let mut reader = BufReader::new(source);
    let mut header = String::new();
    reader.read_line(&mut header).map_err(io("<stream>"))?;
    let version = header
        .trim_end()
        .strip_prefix(MAGIC)
        .and_then(|rest| rest.trim().parse::<u32>().ok())
        .ok_or(ArchiveError::BadMagic)?;
    if version != VERSION {
        return Err(ArchiveError::UnsupportedVersion(version));
    }
    let dataset: Dataset = serde_json::from_reader(reader)?;
    dataset.validate()?;
    Ok(dataset)
}

pub fn save(dataset: &Dataset, path: &Path) -> Result<(), ArchiveError> {
    let name = path.display().to_string();
    let file = std::fs::File::create(path).map_err(io(&name))?;
    let mut out = std::io::BufWriter::new(file);
    write_archive(dataset, &mut out)?;
    out.flush().map_err(io(&name))
}

pub fn load(path: &Path) -> Result<Dataset, ArchiveError> {
    let name = path.display().to_string();
    let file = std::fs::File::open(path).map_err(io(&name))?;
    read_archive(file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{synthetic_dataset, SynthConfig};

    #[test]
    fn round_trip() {
        let ds = synthetic_dataset(5, 8, 30, 1, &SynthConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_archive(&ds, &mut buf).unwrap();
        assert!(buf.starts_with(b"DYNREC-DATASET 1\n"));
        assert_eq!(read_archive(&buf[..]).unwrap(), ds);
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(matches!(read_archive(&b"hello\n{}"[..]), Err(ArchiveError::BadMagic)));
        assert!(matches!(read_archive(&b"DYNREC-DATASET 9\n{}"[..]), Err(ArchiveError::UnsupportedVersion(9))));
    }

    #[test]
    fn rejects_tampered_stats() {
        let ds = synthetic_dataset(5, 8, 30, 1, &SynthConfig::default()).unwrap();
        let mut bad = ds.clone();
        bad.stats.n_users += 1;
        let mut buf = Vec::new();
        write_archive(&bad, &mut buf).unwrap();
        assert!(matches!(read_archive(&buf[..]), Err(ArchiveError::Invalid(_))));
    }
}
