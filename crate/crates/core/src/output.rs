//! Plain-text writers shared by the spectral, geometry and experiment outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Float with 17 significant digits (round-trips every `f64`).
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// CSV file written row by row and flushed after each row, so a crash
/// mid-sweep leaves every completed row on disk.
pub struct CsvSink {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvSink {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut sink = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        sink.line(&header.join(","))?;
        Ok(sink)
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn row(&mut self, values: &[f64]) -> Result<()> {
        let text: Vec<String> = values.iter().map(|&v| fmt17(v)).collect();
        self.line(&text.join(","))
    }

    /// Row with leading text fields (tags) followed by floats.
    pub fn tagged_row(&mut self, tags: &[&str], values: &[f64]) -> Result<()> {
        let mut text: Vec<String> = tags.iter().map(|t| t.to_string()).collect();
        text.extend(values.iter().map(|&v| fmt17(v)));
        self.line(&text.join(","))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Write a whole table of floats at once.
pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut sink = CsvSink::create(path, header)?;
    for row in rows {
        sink.row(&row)?;
    }
    Ok(())
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
