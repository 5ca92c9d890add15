//! Side-by-side summary of finished runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::run::{MANIFEST_FILE, RESULTS_FILE};

#[derive(Debug, thiserror::Error)]
pub enum CompareError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("runs mix tasks: {0}")]
    MixedTasks(String),
    #[error("results.csv schemas differ from {reference}: {offending}")]
    SchemaMismatch { reference: String, offending: String },
}

struct Run {
    dir: PathBuf,
    method: String,
    params: String,
    task: String,
    header: Vec<String>,
    row: Vec<String>,
}

fn read(path: &Path) -> Result<String, CompareError> {
    fs::read_to_string(path).map_err(|source| CompareError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn load(dir: &Path, split: &str) -> Result<Run, CompareError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: BTreeMap<String, String> = read(&manifest_path)?
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let field = |k: &str| {
        manifest.get(k).cloned().ok_or_else(|| CompareError::Malformed {
            path: manifest_path.clone(),
            message: format!("missing `{k}`"),
        })
    };
    let results_path = dir.join(RESULTS_FILE);
    let text = read(&results_path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| CompareError::Malformed {
            path: results_path.clone(),
            message: "empty file".into(),
        })?
        .split(',')
        .map(str::to_string)
        .collect();
    let row = lines
        .map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>())
        .find(|cells| cells.first().map(String::as_str) == Some(split))
        .ok_or_else(|| CompareError::Malformed {
            path: results_path.clone(),
            message: format!("no `{split}` row"),
        })?;
    Ok(Run {
        dir: dir.to_path_buf(),
        method: field("method")?,
        params: field("params")?,
        task: field("task")?,
        header,
        row,
    })
}

/// Sort key: method, then hyperparameters compared numerically where
/// possible.
fn sort_key(run: &Run) -> (String, Vec<(String, u64)>, PathBuf) {
    let params = run
        .params
        .split(';')
        .filter(|s| !s.is_empty())
        .map(|kv| {
            let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
            let num = v.parse::<f64>().map(order_bits).unwrap_or(u64::MAX);
            (k.to_string(), num)
        })
        .collect();
    (run.method.clone(), params, run.dir.clone())
}

fn order_bits(x: f64) -> u64 {
    let b = x.to_bits();
    if x.is_sign_negative() {
        !b
    } else {
        b | (1 << 63)
    }
}

/// Renders one aligned row per run for the chosen split.
pub fn compare(dirs: &[PathBuf], split: &str) -> Result<String, CompareError> {
    let mut runs = dirs.iter().map(|d| load(d, split)).collect::<Result<Vec<_>, _>>()?;
    let Some(first) = runs.first() else {
        return Ok(String::new());
    };
    if runs.iter().any(|r| r.task != first.task) {
        let list: Vec<String> = runs
            .iter()
            .map(|r| format!("{} ({})", r.dir.display(), r.task))
            .collect();
        return Err(CompareError::MixedTasks(list.join(", ")));
    }
    let bad: Vec<String> = runs
        .iter()
        .filter(|r| r.header != first.header || r.row.len() != first.header.len())
        .map(|r| r.dir.join(RESULTS_FILE).display().to_string())
        .collect();
    if !bad.is_empty() {
        return Err(CompareError::SchemaMismatch {
            reference: first.dir.join(RESULTS_FILE).display().to_string(),
            offending: bad.join(", "),
        });
    }
    runs.sort_by_key(sort_key);
    let mut table: Vec<Vec<String>> = Vec::with_capacity(runs.len() + 1);
    let mut header = vec!["run".to_string(), "method".into(), "params".into()];
    header.extend(runs[0].header.iter().cloned());
    table.push(header);
    for r in &runs {
        let mut cells = vec![r.dir.display().to_string(), r.method.clone(), r.params.clone()];
        cells.extend(r.row.iter().cloned());
        table.push(cells);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &table {
        let line: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    Ok(out)
}
