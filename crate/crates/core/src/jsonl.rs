//! JSONL persistence: one serialized record per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Write records to `path`, one JSON object per line. Overwrites.
pub fn write_jsonl<T: Serialize>(records: &[T], path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path.as_ref())?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Append one record as a single line to `path`, creating it if absent.
pub fn append_jsonl<T: Serialize>(record: &T, path: impl AsRef<Path>) -> Result<()> {
    let file = File::options().create(true).append(true).open(path.as_ref())?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer(&mut out, record)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Read every record from `path`.
///
/// A final line without a trailing newline is accepted only if it parses; a
/// partial trailing record is reported as truncation with the byte offset at
/// which the broken line starts.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let mut reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    let mut offset: u64 = 0;
    let mut line = String::new();
    loop {
        line.clear();
        let read = reader.read_line(&mut line)?;
        if read == 0 {
            break;
        }
        let trimmed = line.trim_end_matches('\n');
        if !trimmed.trim().is_empty() {
            match serde_json::from_str(trimmed) {
                Ok(record) => records.push(record),
                Err(_) => {
                    return Err(Error::TruncatedJsonl {
                        path: path.to_path_buf(),
                        offset,
                    })
                }
            }
        }
        offset += read as u64;
    }
    Ok(records)
}

/// Read a whole file to a string (helper shared by config/manifest code).
pub fn read_to_string(path: impl AsRef<Path>) -> Result<String> {
    let mut buf = String::new();
    File::open(path.as_ref())?.read_to_string(&mut buf)?;
    Ok(buf)
}
