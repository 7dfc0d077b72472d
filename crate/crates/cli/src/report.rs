//! Plain CSV and `key = value` writers for analysis outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ccotdr_core::{Error, Result};

/// Buffered text file that maps write failures to [`Error::Io`].
pub struct TextFile {
    path: PathBuf,
    out: BufWriter<File>,
}

impl TextFile {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(TextFile {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}").map_err(|e| Error::io(&self.path, e))
    }

    /// Writes one CSV row of already formatted cells.
    pub fn row<I, S>(&mut self, cells: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut first = true;
        let mut text = String::new();
        for c in cells {
            if !first {
                text.push(',');
            }
            text.push_str(c.as_ref());
            first = false;
        }
        self.line(&text)
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Fixed-precision float formatting, so files are byte-stable across runs.
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else if v == 0.0 || (1e-3..1e6).contains(&v.abs()) {
        format!("{v:.6}")
    } else {
        format!("{v:.6e}")
    }
}

/// A two-column `position_m,power_db` trace.
pub fn write_trace_csv(path: &Path, origin: f64, step: f64, power_db: &[f64]) -> Result<()> {
    let mut f = TextFile::create(path)?;
    f.line("position_m,power_db")?;
    for (i, p) in power_db.iter().enumerate() {
        f.row([num(origin + i as f64 * step), num(*p)])?;
    }
    f.finish()
}

/// `time_s` plus one column per label, one row per time.
pub fn write_matrix_csv(
    path: &Path,
    column_labels: &[f64],
    times: &[f64],
    rows: impl Iterator<Item = Vec<f64>>,
) -> Result<()> {
    let mut f = TextFile::create(path)?;
    f.row(std::iter::once("time_s".to_string()).chain(column_labels.iter().map(|c| num(*c))))?;
    for (t, row) in times.iter().zip(rows) {
        f.row(std::iter::once(num(*t)).chain(row.into_iter().map(num)))?;
    }
    f.finish()
}

/// `key = value` lines.
pub fn write_summary(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut f = TextFile::create(path)?;
    for (k, v) in entries {
        f.line(&format!("{k} = {v}"))?;
    }
    f.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format_is_fixed() {
        assert_eq!(num(0.0), "0.000000");
        assert_eq!(num(216.25), "216.250000");
        assert_eq!(num(-1.5e-5), "-1.500000e-5");
        assert_eq!(num(f64::NAN), "nan");
    }

    #[test]
    fn trace_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_trace_csv(&path, 1.0, 0.5, &[-3.0, -4.0]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "position_m,power_db\n1.000000,-3.000000\n1.500000,-4.000000\n"
        );
    }
}
