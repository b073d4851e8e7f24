//! Dataset files and atomic output.
//!
//! Dataset layout (all integers and reals little-endian):
//!
//! ```text
//! b"NIA1" | u64 n | u64 d | n*d f64, row-major | n label bytes (0 or 1)
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NIA1";

pub fn encode_dataset(dataset: &Dataset) -> Vec<u8> {
    let (n, d) = (dataset.n(), dataset.d());
    let mut out = Vec::with_capacity(20 + 8 * n * d + n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    let x = dataset.features();
    for i in 0..n {
        for j in 0..d {
            out.extend_from_slice(&x[(i, j)].to_le_bytes());
        }
    }
    out.extend_from_slice(dataset.labels());
    out
}

pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<Dataset> {
    let bad = |reason: String| Error::MalformedDataset {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 20 || &bytes[..4] != MAGIC {
        return Err(bad("missing NIA1 header".into()));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes")) as usize;
    let (n, d) = (word(4), word(12));
    let expected = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(8))
        .and_then(|b| b.checked_add(20 + n))
        .ok_or_else(|| bad("header sizes overflow".into()))?;
    if bytes.len() != expected {
        return Err(bad(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut x = DMatrix::zeros(n, d);
    let mut at = 20;
    for i in 0..n {
        for j in 0..d {
            x[(i, j)] = f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
            at += 8;
        }
    }
    Dataset::new(x, bytes[at..].to_vec())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    decode_dataset(&bytes, path)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `path` through a temporary file in the same directory and renames
/// it into place.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut buf = BufWriter::new(tmp.as_file());
        write(&mut buf)?;
        buf.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}
