//! Run-artifact writing: versioned CSV files and JSON summaries.
//!
//! Float cells use Rust's shortest round-trip formatting, which is a pure
//! function of the value, so identical runs produce byte-identical files.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::CliError;

pub const CSV_SCHEMA: &str = "# schema=v1";

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

pub struct CsvFile {
    path: PathBuf,
    lines: Vec<String>,
}

impl CsvFile {
    pub fn new(dir: &Path, name: &str, header: &str) -> Self {
        CsvFile {
            path: dir.join(name),
            lines: vec![CSV_SCHEMA.to_string(), header.to_string()],
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        self.lines.push(cells.join(","));
    }

    pub fn finish(self) -> Result<PathBuf, CliError> {
        let mut file = std::fs::File::create(&self.path)
            .map_err(|e| CliError::Io(format!("create {}: {e}", self.path.display())))?;
        let mut text = self.lines.join("\n");
        text.push('\n');
        file.write_all(text.as_bytes())
            .map_err(|e| CliError::Io(format!("write {}: {e}", self.path.display())))?;
        Ok(self.path)
    }
}

pub fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("create output dir {}: {e}", dir.display())))
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    std::fs::write(&path, text)
        .map_err(|e| CliError::Io(format!("write {}: {e}", path.display())))?;
    Ok(path)
}

pub fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Io(format!("serialize {name}: {e}")))?;
    write_text(dir, name, &(text + "\n"))
}

/// Writes one training log in the fixed v1 schema.
pub fn write_train_log(
    dir: &Path,
    name: &str,
    log: &[metalearn::meta::LogRecord],
) -> Result<PathBuf, CliError> {
    let mut csv = CsvFile::new(
        dir,
        name,
        "iteration,epsilon,direction_norm,eval_pre_loss,eval_post_loss,eval_post_loss_stderr,eval_accuracy,eval_accuracy_stderr",
    );
    for rec in log {
        let eval = rec.eval.as_ref();
        csv.row(&[
            rec.iter.to_string(),
            fmt_f64(rec.epsilon),
            fmt_f64(rec.direction_norm),
            eval.map(|e| fmt_f64(e.pre_loss)).unwrap_or_default(),
            eval.map(|e| fmt_f64(e.post_loss)).unwrap_or_default(),
            eval.map(|e| fmt_f64(e.post_loss_stderr)).unwrap_or_default(),
            eval.and_then(|e| e.accuracy).map(fmt_f64).unwrap_or_default(),
            eval.and_then(|e| e.accuracy_stderr)
                .map(fmt_f64)
                .unwrap_or_default(),
        ]);
    }
    csv.finish()
}

/// Optional flat dump of a parameter vector.
pub fn write_params(dir: &Path, name: &str, params: &metalearn::ParamVector) -> Result<PathBuf, CliError> {
    let mut csv = CsvFile::new(dir, name, "index,value");
    for (i, v) in params.iter().enumerate() {
        csv.row(&[i.to_string(), fmt_f64(*v)]);
    }
    csv.finish()
}
