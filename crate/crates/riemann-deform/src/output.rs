//! Output directory handling: every file is written atomically (temp file in
//! the target directory, then rename), so reruns never leave partial output.

use anyhow::{Context, Result};
use std::io::Write;
use std::path::{Path, PathBuf};

pub struct OutDir {
    dir: PathBuf,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<OutDir> {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(OutDir { dir: dir.to_path_buf() })
    }

    pub fn write(&self, name: &str, contents: &[u8]) -> Result<()> {
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)
            .with_context(|| format!("cannot create temp file in {}", self.dir.display()))?;
        tmp.write_all(contents)?;
        tmp.flush()?;
        let target = self.dir.join(name);
        tmp.persist(&target)
            .with_context(|| format!("cannot write {}", target.display()))?;
        Ok(())
    }

    pub fn write_json(&self, name: &str, value: &serde_json::Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// CSV from a header and rows of float cells; floats use the shortest
    /// round-trip formatting, so identical runs produce identical bytes.
    pub fn write_csv(&self, name: &str, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
        let mut buf = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header)?;
            for row in rows {
                w.write_record(row.iter().map(|v| format_float(*v)))?;
            }
            w.flush()?;
        }
        self.write(name, &buf)
    }
}

pub fn format_float(v: f64) -> String {
    if v == 0.0 {
        // normalize -0.0 so reruns cannot differ in sign-of-zero noise
        "0".to_string()
    } else {
        format!("{v}")
    }
}
