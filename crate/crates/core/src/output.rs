//! Artifact emission: CSV and JSON files with provenance headers, written
//! atomically (temp file, then rename).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{GrafsError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance stamped on every artifact.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Header {
    pub config_hash: String,
    pub seed: u64,
}

impl Header {
    pub fn comment_line(&self) -> String {
        format!("# grafs {VERSION} config={} seed={}", self.config_hash, self.seed)
    }

    fn meta(&self) -> Value {
        serde_json::json!({
            "tool": "grafs",
            "version": VERSION,
            "config": self.config_hash,
            "seed": self.seed,
        })
    }
}

/// Shortest round-trip decimal; scientific notation for very small or large magnitudes.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let a = v.abs();
    if (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        CsvTable {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn push_numbers(&mut self, row: &[f64]) {
        self.push(row.iter().map(|v| fmt_f64(*v)).collect());
    }

    /// Column line plus rows, without the provenance comment.
    pub fn body(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.iter().map(|c| escape(c)).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }

    pub fn render(&self, header: &Header) -> String {
        format!("{}\n{}", header.comment_line(), self.body())
    }
}

fn escape(cell: &str) -> String {
    if cell.contains([',', '"', '\n']) {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

/// Strips leading `#` comment lines, leaving the comparable CSV body.
pub fn csv_body(text: &str) -> String {
    text.lines()
        .skip_while(|l| l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}

pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| GrafsError::Config(format!("invalid output path {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Output directory with the run's provenance header.
pub struct OutputDir {
    pub root: PathBuf,
    pub header: Header,
}

impl OutputDir {
    /// Creates the directory and checks it is writable.
    pub fn prepare(root: &Path, header: Header) -> Result<Self> {
        fs::create_dir_all(root)
            .map_err(|e| GrafsError::Config(format!("cannot create output dir {}: {e}", root.display())))?;
        let probe = root.join(format!(".grafs-probe-{}", std::process::id()));
        fs::write(&probe, b"")
            .map_err(|e| GrafsError::Config(format!("output dir {} is not writable: {e}", root.display())))?;
        fs::remove_file(&probe)?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            header,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_csv(&self, name: &str, table: &CsvTable) -> Result<PathBuf> {
        let p = self.path(name);
        write_atomic(&p, table.render(&self.header).as_bytes())?;
        Ok(p)
    }

    /// Serializes `value` (a JSON object) with a `_meta` provenance field.
    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut v = serde_json::to_value(value).map_err(|e| GrafsError::Config(e.to_string()))?;
        match &mut v {
            Value::Object(map) => {
                map.insert("_meta".into(), self.header.meta());
            }
            other => {
                let mut map = Map::new();
                map.insert("_meta".into(), self.header.meta());
                map.insert("data".into(), other.take());
                v = Value::Object(map);
            }
        }
        let mut text = serde_json::to_string_pretty(&v).map_err(|e| GrafsError::Config(e.to_string()))?;
        text.push('\n');
        let p = self.path(name);
        write_atomic(&p, text.as_bytes())?;
        Ok(p)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let p = self.path(name);
        write_atomic(&p, text.as_bytes())?;
        Ok(p)
    }
}
