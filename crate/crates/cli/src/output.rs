use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use detcal::io::{self, ReportFormat};

use crate::OutputArgs;

/// Emits `payload` as JSON or `rows` as CSV to the `--out` path (atomically) or stdout.
pub fn emit<T: Serialize, R: Serialize>(out: &OutputArgs, payload: &T, rows: &[R]) -> Result<()> {
    let bytes = match out.format() {
        ReportFormat::Json => io::to_json_bytes(payload)?,
        ReportFormat::Csv => io::to_csv_bytes(rows)?,
    };
    write_to(out.out.as_deref(), &bytes)
}

pub fn write_to(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => io::atomic_write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes).context("writing to stdout")?;
            stdout.flush().context("writing to stdout")
        }
    }
}
