use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::HarnessError;
use crate::domain::Transcript;

/// Writes one JSON object per line.
pub fn write_transcripts_to<W: Write>(
    transcripts: &[Transcript],
    mut out: W,
) -> Result<(), HarnessError> {
    for t in transcripts {
        let line = serde_json::to_string(t).map_err(std::io::Error::other)?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_transcripts(transcripts: &[Transcript], path: &Path) -> Result<(), HarnessError> {
    write_transcripts_to(transcripts, BufWriter::new(File::create(path)?))
}

/// Reads a transcript file. Blank lines are skipped. Every record is
/// checked against the transcript invariants; a failure names its line.
pub fn read_transcripts_from<R: BufRead>(input: R) -> Result<Vec<Transcript>, HarnessError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let t: Transcript = serde_json::from_str(&line).map_err(|e| HarnessError::Schema {
            line: line_no,
            message: e.to_string(),
        })?;
        t.validate().map_err(|e| HarnessError::Schema {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(t);
    }
    Ok(out)
}

pub fn read_transcripts(path: &Path) -> Result<Vec<Transcript>, HarnessError> {
    read_transcripts_from(BufReader::new(File::open(path)?))
}
