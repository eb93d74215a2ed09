//! Newline-delimited manifest files.
//!
//! A manifest file is a header object on the first line (format tag, split,
//! record count) followed by one JSON-syntax record object per line. Field
//! order is the declaration order of [`QARecord`], so serialization is stable
//! byte-for-byte. Loading validates every record and reports the first
//! offender by its record index.

use super::{validate_record, DatasetManifest, QAGenError, QARecord, Split};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

const MANIFEST_FORMAT: &str = "MDQ1";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    split: Split,
    records: usize,
}

/// Write a manifest; the result re-loads as an identical value.
pub fn serialize_dataset(manifest: &DatasetManifest, path: &Path) -> Result<(), QAGenError> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = Header {
        format: MANIFEST_FORMAT.to_string(),
        split: manifest.split,
        records: manifest.records.len(),
    };
    serde_json::to_writer(&mut w, &header).map_err(io_err)?;
    w.write_all(b"\n")?;
    for rec in &manifest.records {
        serde_json::to_writer(&mut w, rec).map_err(io_err)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Load and validate a manifest written by [`serialize_dataset`].
pub fn load_dataset(path: &Path) -> Result<DatasetManifest, QAGenError> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let first = lines
        .next()
        .ok_or_else(|| schema(0, "empty manifest file (missing header)".into()))??;
    let header: Header =
        serde_json::from_str(&first).map_err(|e| schema(0, format!("bad header: {e}")))?;
    if header.format != MANIFEST_FORMAT {
        return Err(schema(
            0,
            format!("format {:?} (expected {MANIFEST_FORMAT:?})", header.format),
        ));
    }
    let mut records = Vec::with_capacity(header.records);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: QARecord =
            serde_json::from_str(&line).map_err(|e| schema(i, format!("parse: {e}")))?;
        validate_record(&rec, i)?;
        records.push(rec);
    }
    if records.len() != header.records {
        return Err(schema(
            records.len(),
            format!("header promised {} records, file has {}", header.records, records.len()),
        ));
    }
    Ok(DatasetManifest { split: header.split, records })
}

fn schema(record: usize, message: String) -> QAGenError {
    QAGenError::Schema { record, message }
}

fn io_err(e: serde_json::Error) -> QAGenError {
    QAGenError::Io(std::io::Error::other(e))
}
