//! Runs many configs as separate worker processes.

use std::path::{Path, PathBuf};
use std::process::{Child, Command};

use crate::config::parse_config;

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("bad glob pattern: {0}")]
    Pattern(#[from] glob::PatternError),
    #[error("no config matches {0}")]
    NoMatch(String),
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("configs {a} and {b} share output directory {dir}")]
    SharedOutput { a: PathBuf, b: PathBuf, dir: PathBuf },
    #[error("cannot start worker: {0}")]
    Spawn(#[source] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridResult {
    pub config: PathBuf,
    pub exit_code: i32,
}

/// Config files matching `pattern`, sorted, after checking that every
/// config parses and owns its output directory.
pub fn plan(pattern: &str) -> Result<Vec<PathBuf>, GridError> {
    let mut paths: Vec<PathBuf> = glob::glob(pattern)?.filter_map(|p| p.ok()).collect();
    paths.sort();
    if paths.is_empty() {
        return Err(GridError::NoMatch(pattern.to_string()));
    }
    let mut seen: Vec<(PathBuf, PathBuf)> = Vec::new();
    for p in &paths {
        let text = std::fs::read_to_string(p).map_err(|e| GridError::Config {
            path: p.clone(),
            message: e.to_string(),
        })?;
        let cfg = parse_config(&text).map_err(|e| GridError::Config {
            path: p.clone(),
            message: e.to_string(),
        })?;
        if let Some((other, _)) = seen.iter().find(|(_, d)| *d == cfg.output_dir) {
            return Err(GridError::SharedOutput {
                a: other.clone(),
                b: p.clone(),
                dir: cfg.output_dir,
            });
        }
        seen.push((p.clone(), cfg.output_dir));
    }
    Ok(paths)
}

/// Runs `exe run <config>` for every config, at most `jobs` at a time.
pub fn run_grid(exe: &Path, configs: &[PathBuf], jobs: usize) -> Result<Vec<GridResult>, GridError> {
    let jobs = jobs.max(1);
    let mut pending = configs.iter().enumerate();
    let mut running: Vec<(usize, Child)> = Vec::new();
    let mut codes = vec![None; configs.len()];
    loop {
        while running.len() < jobs {
            let Some((i, cfg)) = pending.next() else { break };
            let child = Command::new(exe)
                .arg("run")
                .arg(cfg)
                .spawn()
                .map_err(GridError::Spawn)?;
            running.push((i, child));
        }
        if running.is_empty() {
            break;
        }
        // wait for the oldest worker; the others keep running meanwhile
        let (i, mut child) = running.remove(0);
        let status = child.wait().map_err(GridError::Spawn)?;
        codes[i] = Some(status.code().unwrap_or(1));
    }
    Ok(configs
        .iter()
        .zip(codes)
        .map(|(c, code)| GridResult {
            config: c.clone(),
            exit_code: code.unwrap_or(1),
        })
        .collect())
}
