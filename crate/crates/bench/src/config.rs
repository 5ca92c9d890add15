//! Flat `key = value` experiment configs with strict key checking.
//!
//! Blank lines and lines starting with `#` are ignored. Every key must be
//! known, appear once, and be relevant to the chosen task and method.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use seqpen::tasks::qp::QpSpec;
use seqpen::{AdamParams, BoxBounds, CandidateRule, PenaltyKind, SgdConfig, SolverMode};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.line, &self.key) {
            (Some(l), Some(k)) => write!(f, "line {l}, `{k}`: {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            (None, Some(k)) => write!(f, "`{k}`: {}", self.message),
            (None, None) => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(line: Option<usize>, key: Option<&str>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        key: key.map(str::to_string),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    AnalyticQp,
    EncDec,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::AnalyticQp => "analytic_qp",
            Task::EncDec => "enc_dec",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Sequential,
    Fixed,
    ObjectiveOnly,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sequential => "sequential",
            Method::Fixed => "fixed",
            Method::ObjectiveOnly => "objective_only",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Paper,
}

impl Scale {
    pub fn name(self) -> &'static str {
        match self {
            Scale::Desk => "desk",
            Scale::Paper => "paper",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanChoice {
    Fixed,
    Adaptive {
        probe_lower: f64,
        probe_upper: f64,
        safety: f64,
        max_budget: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequentialParams {
    pub tau0: f64,
    pub gamma: f64,
    pub eps0: f64,
    pub eps_decay: f64,
    pub max_outer: usize,
    pub update_every: usize,
    pub feasibility_tol: f64,
    pub plan: PlanChoice,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpParams {
    pub preset: String,
    pub spec: QpSpec,
    pub split_weights: Option<Vec<f64>>,
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncDecParams {
    pub theta: f64,
    pub train_limit: usize,
    pub test_limit: Option<usize>,
    pub warm_start_epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub method: Method,
    pub scale: Scale,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub penalty: PenaltyKind,
    pub lambda: Option<f64>,
    pub inner: SgdConfig,
    pub sequential: Option<SequentialParams>,
    pub qp: Option<QpParams>,
    pub enc_dec: Option<EncDecParams>,
}

impl ExperimentConfig {
    /// Short hyperparameter label used for sorting and display.
    pub fn params_label(&self) -> String {
        match (self.method, &self.sequential, self.lambda) {
            (Method::Sequential, Some(s), _) => {
                format!(
                    "tau0={};gamma={}",
                    crate::fmt::fmt_g(s.tau0),
                    crate::fmt::fmt_g(s.gamma)
                )
            }
            (Method::Fixed, _, Some(l)) => format!("lambda={}", crate::fmt::fmt_g(l)),
            _ => String::new(),
        }
    }
}

const COMMON: &[&str] = &["task", "method", "seed", "output_dir", "scale"];
const INNER: &[&str] = &[
    "mode",
    "stepsize",
    "batch_size",
    "budget",
    "candidate",
    "clip_lower",
    "clip_upper",
    "beta1",
    "beta2",
    "adam_eps",
    "weight_decay",
    "trace_every",
    "grad_norm_probes",
];
const SEQUENTIAL: &[&str] = &[
    "tau0",
    "gamma",
    "eps0",
    "eps_decay",
    "max_outer",
    "update_every",
    "feasibility_tol",
    "inner_plan",
    "probe_lower",
    "probe_upper",
    "plan_safety",
    "plan_max_budget",
    "penalty",
];
const FIXED: &[&str] = &["lambda", "penalty"];
const QP: &[&str] = &["qp", "split_weights", "x0"];
const ENC_DEC: &[&str] = &["theta", "train_limit", "test_limit", "warm_start_epochs"];

struct Entry {
    line: usize,
    value: String,
    used: bool,
}

struct Raw {
    entries: BTreeMap<String, Entry>,
}

impl Raw {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        let known: Vec<&str> = [COMMON, INNER, SEQUENTIAL, FIXED, QP, ENC_DEC].concat();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| err(Some(line_no), None, "expected `key = value`"))?;
            let (k, v) = (k.trim(), v.trim());
            if !known.contains(&k) {
                return Err(err(Some(line_no), Some(k), "unknown key"));
            }
            if v.is_empty() {
                return Err(err(Some(line_no), Some(k), "empty value"));
            }
            if let Some(prev) = entries.get(k) {
                let prev: &Entry = prev;
                return Err(err(
                    Some(line_no),
                    Some(k),
                    format!("duplicate key (first set on line {})", prev.line),
                ));
            }
            entries.insert(
                k.to_string(),
                Entry {
                    line: line_no,
                    value: v.to_string(),
                    used: false,
                },
            );
        }
        Ok(Self { entries })
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        let e = self.entries.get_mut(key)?;
        e.used = true;
        Some((e.line, e.value.clone()))
    }

    fn get<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| err(Some(line), Some(key), format!("cannot parse `{v}`"))),
        }
    }

    fn get_or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn require<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, ConfigError> {
        self.get(key)?
            .ok_or_else(|| err(None, Some(key), "required key missing"))
    }

    fn list(&mut self, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| {
                    err(
                        Some(line),
                        Some(key),
                        format!("expected comma-separated numbers, got `{v}`"),
                    )
                }),
        }
    }

    fn line_of(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|e| e.line)
    }

    fn check(&self, cond: bool, key: &str, msg: &str) -> Result<(), ConfigError> {
        if cond {
            Ok(())
        } else {
            Err(err(self.line_of(key), Some(key), msg))
        }
    }

    fn leftovers(&self, task: Task, method: Method) -> Result<(), ConfigError> {
        match self.entries.iter().find(|(_, e)| !e.used) {
            None => Ok(()),
            Some((k, e)) => Err(err(
                Some(e.line),
                Some(k),
                format!("not valid for task={} method={}", task.name(), method.name()),
            )),
        }
    }
}

fn choice<T: Copy>(raw: &mut Raw, key: &str, options: &[(&str, T)], default: Option<T>) -> Result<T, ConfigError> {
    match raw.take(key) {
        None => default.ok_or_else(|| err(None, Some(key), "required key missing")),
        Some((line, v)) => options.iter().find(|(n, _)| *n == v).map(|(_, t)| *t).ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            err(
                Some(line),
                Some(key),
                format!("`{v}` is not one of {}", names.join(", ")),
            )
        }),
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut raw = Raw::parse(text)?;
    let task = choice(
        &mut raw,
        "task",
        &[("analytic_qp", Task::AnalyticQp), ("enc_dec", Task::EncDec)],
        None,
    )?;
    let method = choice(
        &mut raw,
        "method",
        &[
            ("sequential", Method::Sequential),
            ("fixed", Method::Fixed),
            ("objective_only", Method::ObjectiveOnly),
        ],
        None,
    )?;
    let scale = choice(
        &mut raw,
        "scale",
        &[("desk", Scale::Desk), ("paper", Scale::Paper)],
        Some(Scale::Desk),
    )?;
    let seed: u64 = raw.get_or("seed", 0)?;
    let output_dir = PathBuf::from(raw.get_or("output_dir", String::from("output"))?);

    let enc = task == Task::EncDec;
    let default_mode = if enc {
        SolverMode::Practical
    } else {
        SolverMode::Theoretical
    };
    let mode = choice(
        &mut raw,
        "mode",
        &[
            ("theoretical", SolverMode::Theoretical),
            ("practical", SolverMode::Practical),
        ],
        Some(default_mode),
    )?;
    let paper = scale == Scale::Paper;
    let epochs_default = if paper { 250 } else { 25 };

    // the inner budget is driven by the outer loop in practical sequential runs
    let budget_relevant = !(method == Method::Sequential && mode == SolverMode::Practical);
    let default_budget = match (enc, mode) {
        (true, _) | (false, SolverMode::Practical) => epochs_default,
        (false, SolverMode::Theoretical) => 1000,
    };
    let budget: usize = if budget_relevant {
        raw.get_or("budget", default_budget)?
    } else {
        1
    };

    let default_step = if mode == SolverMode::Practical { 1e-3 } else { 1e-2 };
    let mut inner = match mode {
        SolverMode::Theoretical => SgdConfig::theoretical(
            raw.get_or("stepsize", default_step)?,
            raw.get_or("batch_size", if enc { 128 } else { 1 })?,
            budget,
            seed,
        ),
        SolverMode::Practical => SgdConfig::practical(
            raw.get_or("stepsize", default_step)?,
            raw.get_or("batch_size", 128)?,
            budget,
            seed,
        ),
    };
    if mode == SolverMode::Theoretical {
        inner.candidate = choice(
            &mut raw,
            "candidate",
            &[
                ("uniform", CandidateRule::UniformSample),
                ("last", CandidateRule::LastIterate),
            ],
            Some(CandidateRule::UniformSample),
        )?;
        inner.trace_every = raw.get_or("trace_every", 0)?;
    } else {
        let defaults = AdamParams::default();
        inner.adam = AdamParams {
            beta1: raw.get_or("beta1", defaults.beta1)?,
            beta2: raw.get_or("beta2", defaults.beta2)?,
            eps_hat: raw.get_or("adam_eps", defaults.eps_hat)?,
            weight_decay: raw.get_or("weight_decay", if enc { 1e-3 } else { 0.0 })?,
        };
    }
    inner.grad_norm_probes = raw.get_or("grad_norm_probes", inner.grad_norm_probes)?;
    if !enc {
        match (raw.get::<f64>("clip_lower")?, raw.get::<f64>("clip_upper")?) {
            (None, None) => {}
            (Some(lo), Some(hi)) => {
                raw.check(lo < hi, "clip_lower", "clip_lower must be below clip_upper")?;
                // dimension is fixed once the QP is known
                inner.clip_box = Some(BoxBounds::uniform(1, lo, hi).expect("checked bounds"));
            }
            _ => return Err(err(None, Some("clip_lower"), "clip_lower and clip_upper go together")),
        }
    }
    raw.check(inner.stepsize > 0.0, "stepsize", "must be positive")?;
    raw.check(inner.batch_size > 0, "batch_size", "must be positive")?;
    inner.validate().map_err(|e| err(None, None, e.to_string()))?;

    let kinds = [("quadratic", PenaltyKind::Quadratic), ("linear", PenaltyKind::Linear)];
    let mut penalty = PenaltyKind::Linear;
    let mut lambda = None;
    let mut sequential = None;
    match method {
        Method::Sequential => {
            let default_kind = if enc {
                PenaltyKind::Linear
            } else {
                PenaltyKind::Quadratic
            };
            penalty = choice(&mut raw, "penalty", &kinds, Some(default_kind))?;
            let plan_is_adaptive = choice(
                &mut raw,
                "inner_plan",
                &[("fixed", false), ("adaptive", true)],
                Some(false),
            )?;
            let plan = if plan_is_adaptive {
                raw.check(
                    mode == SolverMode::Theoretical,
                    "inner_plan",
                    "adaptive plan needs mode = theoretical",
                )?;
                raw.check(!enc, "inner_plan", "adaptive plan is only available for analytic_qp")?;
                let probe_lower = raw.get_or("probe_lower", -2.0)?;
                let probe_upper = raw.get_or("probe_upper", 2.0)?;
                raw.check(probe_lower < probe_upper, "probe_lower", "probe box is empty")?;
                PlanChoice::Adaptive {
                    probe_lower,
                    probe_upper,
                    safety: raw.get_or("plan_safety", 2.0)?,
                    max_budget: raw.get_or("plan_max_budget", 100_000)?,
                }
            } else {
                PlanChoice::Fixed
            };
            let params = SequentialParams {
                tau0: raw.require("tau0")?,
                gamma: raw.require("gamma")?,
                eps0: raw.get_or("eps0", 1.0)?,
                eps_decay: raw.get_or("eps_decay", 0.9)?,
                max_outer: raw.get_or("max_outer", if enc { epochs_default } else { 20 })?,
                update_every: if mode == SolverMode::Practical {
                    raw.get_or("update_every", 1)?
                } else {
                    1
                },
                feasibility_tol: raw.get_or("feasibility_tol", 1e-6)?,
                plan,
            };
            raw.check(params.tau0 > 0.0, "tau0", "must be positive")?;
            raw.check(params.gamma > 1.0, "gamma", "must exceed 1")?;
            raw.check(params.eps0 > 0.0, "eps0", "must be positive")?;
            raw.check(
                params.eps_decay > 0.0 && params.eps_decay < 1.0,
                "eps_decay",
                "must lie in (0, 1)",
            )?;
            raw.check(params.max_outer > 0, "max_outer", "must be at least 1")?;
            raw.check(params.update_every > 0, "update_every", "must be at least 1")?;
            raw.check(params.feasibility_tol >= 0.0, "feasibility_tol", "must be non-negative")?;
            sequential = Some(params);
        }
        Method::Fixed => {
            penalty = choice(&mut raw, "penalty", &kinds, Some(PenaltyKind::Linear))?;
            let l: f64 = raw.require("lambda")?;
            raw.check(l >= 0.0 && l.is_finite(), "lambda", "must be finite and non-negative")?;
            lambda = Some(l);
        }
        Method::ObjectiveOnly => lambda = Some(0.0),
    }

    let mut qp = None;
    let mut enc_dec = None;
    match task {
        Task::AnalyticQp => {
            let preset: String = raw.require("qp")?;
            let spec = QpSpec::preset(&preset).ok_or_else(|| {
                err(
                    raw.line_of("qp"),
                    Some("qp"),
                    format!("unknown preset, expected one of {}", QpSpec::PRESETS.join(", ")),
                )
            })?;
            let split_weights = raw.list("split_weights")?;
            if let Some(w) = &split_weights {
                raw.check(w.iter().all(|v| *v > 0.0), "split_weights", "weights must be positive")?;
            }
            let x0 = raw.list("x0")?;
            if let Some(x) = &x0 {
                raw.check(x.len() == spec.b.len(), "x0", "length must match the QP dimension")?;
            }
            if let Some(b) = &inner.clip_box {
                let n = spec.b.len();
                inner.clip_box = Some(BoxBounds::uniform(n, b.lower()[0], b.upper()[0]).expect("checked bounds"));
            }
            qp = Some(QpParams {
                preset,
                spec,
                split_weights,
                x0,
            });
        }
        Task::EncDec => {
            let p = EncDecParams {
                theta: raw.get_or("theta", 0.01)?,
                train_limit: raw.get_or("train_limit", if paper { 60_000 } else { 6000 })?,
                test_limit: raw.get("test_limit")?,
                warm_start_epochs: raw.get_or("warm_start_epochs", 5)?,
            };
            raw.check(p.theta > 0.0, "theta", "must be positive")?;
            raw.check(p.train_limit > 0, "train_limit", "must be positive")?;
            enc_dec = Some(p);
        }
    }
    raw.leftovers(task, method)?;
    Ok(ExperimentConfig {
        task,
        method,
        scale,
        seed,
        output_dir,
        penalty,
        lambda,
        inner,
        sequential,
        qp,
        enc_dec,
    })
}
