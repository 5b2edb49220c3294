use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::MeasurementRecord;

/// Destination for campaign output, written once per round.
pub trait RecordSink {
    fn write_round(&mut self, records: &[MeasurementRecord]) -> io::Result<()>;
}

impl RecordSink for Vec<MeasurementRecord> {
    fn write_round(&mut self, records: &[MeasurementRecord]) -> io::Result<()> {
        self.extend_from_slice(records);
        Ok(())
    }
}

/// Writes one JSON object per line. Returns the number of records written.
pub fn write_records<W: Write>(w: &mut W, records: &[MeasurementRecord]) -> io::Result<usize> {
    for r in records {
        serde_json::to_writer(&mut *w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(records.len())
}

/// Append-only JSONL file, flushed after every round.
#[derive(Debug)]
pub struct JsonlSink {
    path: PathBuf,
}

impl JsonlSink {
    /// Creates the file if missing; existing content is never rewritten.
    pub fn open(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl RecordSink for JsonlSink {
    fn write_round(&mut self, records: &[MeasurementRecord]) -> io::Result<()> {
        if records.is_empty() {
            return Ok(());
        }
        let file = OpenOptions::new().append(true).open(&self.path)?;
        let mut w = BufWriter::new(file);
        write_records(&mut w, records)?;
        w.flush()?;
        w.get_ref().sync_data()
    }
}

/// Reads a JSONL record file, skipping blank lines.
pub fn read_records(path: impl AsRef<Path>) -> io::Result<Vec<MeasurementRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}
