//! CSV/JSON artifact rendering and atomic file output.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde_json::{json, Value};

use crate::VERSION;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(columns: &[&str], rows: Vec<Vec<String>>) -> Self {
        CsvTable { columns: columns.iter().map(|c| c.to_string()).collect(), rows }
    }

    /// Header comments carry the version string and the compact config echo.
    pub fn render(&self, config: &Value) -> String {
        let mut out = format!("# version: {VERSION}\n# config: {config}\n");
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn render_json(config: &Value, result: Value) -> String {
    let env = json!({ "version": VERSION, "config": config, "result": result });
    let mut s = serde_json::to_string_pretty(&env).expect("json values always serialize");
    s.push('\n');
    s
}

/// Writes to a sibling temporary file and renames it into place, so readers
/// never observe a partial artifact.
pub fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "output path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    res
}
