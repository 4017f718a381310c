//! CSV formatting and crash-safe file output.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{IlcError, Result};

/// Round-trip exact decimal rendering (17 significant digits).
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `path` through a sibling temporary file and renames it into place,
/// so a failure never leaves a truncated file behind.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let tmp = tmp_path(path);
    let result = (|| {
        let file = fs::File::create(&tmp)?;
        let mut out = BufWriter::new(file);
        fill(&mut out)?;
        out.flush()?;
        out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(source) = result {
        let _ = fs::remove_file(&tmp);
        return Err(IlcError::io(path, source));
    }
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

/// Parsed numeric CSV: the header plus rows of floats.
#[derive(Debug, Clone)]
pub struct NumericCsv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl NumericCsv {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Reads a comma-separated file whose body is entirely numeric.
pub fn read_numeric_csv(path: &Path) -> Result<NumericCsv> {
    let text = fs::read_to_string(path).map_err(|e| IlcError::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let header = match lines.next() {
        Some((_, h)) => h.split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>(),
        None => {
            return Err(IlcError::Parse {
                path: path.to_path_buf(),
                line: 1,
                reason: "empty file".into(),
            })
        }
    };
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| IlcError::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: e.to_string(),
            })?;
        if row.len() != header.len() {
            return Err(IlcError::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                reason: format!("expected {} fields, found {}", header.len(), row.len()),
            });
        }
        rows.push(row);
    }
    Ok(NumericCsv { header, rows })
}
