//! Executes one experiment config and writes its artifacts.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use sha2::{Digest, Sha256};

use seqpen::tasks::enc_dec::{build_enc_dec_task, EncDecTask, SplitMetrics};
use seqpen::tasks::idx::{load_idx_dataset, ImageDataset, Split};
use seqpen::tasks::qp::{build_analytic_qp, AnalyticQP, WeightedSplit};
use seqpen::{
    evaluate_all, fixed_penalty_train, kkt_residual, multiplier_estimate, sequential_penalty_train, BoxBounds,
    FeasibilityStats, FiniteSumProblem, InnerPlan, OuterObserver, OuterRecord, OuterTrace, ParameterVector,
    PenaltyKind, PenaltySpec, Schedule, SgdConfig, TrainAbort, UpdateGranularity,
};

use crate::config::{parse_config, ConfigError, ExperimentConfig, Method, PlanChoice, Task};
use crate::fmt::{fmt_g, row, Cell, Csv};

/// Environment variable naming the directory with the IDX files.
pub const DATA_ENV: &str = "SEQPEN_DATA";
pub const DEFAULT_DATA_DIR: &str = "data/mnist";

pub const RESULTS_FILE: &str = "results.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const HIST_FILE: &str = "violations_hist.csv";
pub const TIMELINE_FILE: &str = "timeline.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Candidates up to this dimension are written into `trace.csv`.
const MAX_TRACE_DIM: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("data error: {0}")]
    Data(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("solver aborted at outer iteration {outer}: {message}")]
    Abort { outer: usize, message: String },
}

impl RunError {
    /// 2 for config problems, 3 for numeric aborts, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Abort { .. } => 3,
            RunError::Data(_) | RunError::Io { .. } => 1,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> RunError {
    let context = context.into();
    move |source| RunError::Io { context, source }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub stop: String,
    pub outer_iterations: usize,
    /// Rendered `results.csv`.
    pub results: String,
}

pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
}

/// Parses `path` and runs it, writing into `out_override` or the config's
/// `output_dir`.
pub fn run_config_file(path: &Path, out_override: Option<&Path>, data_dir: &Path) -> Result<RunOutcome, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
    let cfg = parse_config(&text)?;
    let out = out_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.clone());
    run_experiment(&cfg, &text, &out, data_dir)
}

struct Artifacts {
    results: String,
    trace: String,
    hist: String,
    timeline: String,
}

struct Manifest<'a> {
    cfg: &'a ExperimentConfig,
    config_text: &'a str,
    status: &'a str,
    stop: &'a str,
    outer_iterations: usize,
    extra: Vec<(&'static str, String)>,
}

impl Manifest<'_> {
    fn render(&self) -> String {
        let digest = hex::encode(Sha256::digest(self.config_text.as_bytes()));
        let mut lines = vec![
            ("seqpen_version", env!("CARGO_PKG_VERSION").to_string()),
            ("task", self.cfg.task.name().to_string()),
            ("method", self.cfg.method.name().to_string()),
            ("params", self.cfg.params_label()),
            ("scale", self.cfg.scale.name().to_string()),
            ("seed", self.cfg.seed.to_string()),
            ("config_sha256", digest),
            ("status", self.status.to_string()),
            ("stop_reason", self.stop.to_string()),
            ("outer_iterations", self.outer_iterations.to_string()),
        ];
        lines.extend(self.extra.iter().cloned());
        lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), RunError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(io_err(format!("writing {}", path.display())))
}

pub fn run_experiment(
    cfg: &ExperimentConfig,
    config_text: &str,
    out_dir: &Path,
    data_dir: &Path,
) -> Result<RunOutcome, RunError> {
    fs::create_dir_all(out_dir).map_err(io_err(format!("creating {}", out_dir.display())))?;
    let mut manifest = Manifest {
        cfg,
        config_text,
        status: "ok",
        stop: "",
        outer_iterations: 0,
        extra: Vec::new(),
    };
    let result = match cfg.task {
        Task::AnalyticQp => run_qp(cfg, &mut manifest),
        Task::EncDec => run_enc_dec(cfg, data_dir, &mut manifest),
    };
    match result {
        Ok((trace, art)) => {
            manifest.stop = trace.stop.name();
            manifest.outer_iterations = trace.records.len();
            write_file(out_dir, RESULTS_FILE, &art.results)?;
            write_file(out_dir, TRACE_FILE, &art.trace)?;
            write_file(out_dir, HIST_FILE, &art.hist)?;
            write_file(out_dir, TIMELINE_FILE, &art.timeline)?;
            write_file(out_dir, MANIFEST_FILE, &manifest.render())?;
            Ok(RunOutcome {
                dir: out_dir.to_path_buf(),
                stop: trace.stop.name().to_string(),
                outer_iterations: trace.records.len(),
                results: art.results,
            })
        }
        Err(Failure::Abort { abort, trace }) => {
            write_file(out_dir, TRACE_FILE, &trace)?;
            manifest.status = "aborted";
            manifest.stop = "abort";
            manifest.outer_iterations = abort.partial.len();
            write_file(out_dir, MANIFEST_FILE, &manifest.render())?;
            Err(RunError::Abort {
                outer: abort.outer,
                message: abort.source.to_string(),
            })
        }
        Err(Failure::Other(e)) => Err(e),
    }
}

enum Failure {
    /// Carries the partial trace, already rendered.
    Abort {
        abort: TrainAbort,
        trace: String,
    },
    Other(RunError),
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Failure::Other(e)
    }
}

fn trace_header(dim_extra: Option<usize>) -> Vec<String> {
    let mut h: Vec<String> = [
        "k",
        "tau",
        "eps",
        "penalty",
        "objective",
        "grad_norm",
        "mean_violation",
        "max_violation",
        "satisfied_fraction",
        "lambda_max",
        "lambda_mean",
        "stepsize",
        "inner_budget",
        "budget_capped",
        "iterate_count",
        "sampled_index",
        "box_activations",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    if let Some(n) = dim_extra {
        h.push("kkt_residual".into());
        h.extend((0..n).map(|i| format!("x_{i}")));
    }
    h
}

/// Per-record `(kkt_residual, x)` for small QPs.
type QpExtras<'a> = &'a [(f64, Vec<f64>)];

fn trace_csv(records: &[OuterRecord], extras: Option<(usize, QpExtras<'_>)>) -> String {
    let mut csv = Csv::new(&trace_header(extras.map(|e| e.0)));
    for (idx, r) in records.iter().enumerate() {
        let sampled = r.sampled_index.map(|s| s.to_string()).unwrap_or_default();
        let mut cells = row(&[
            Cell::I(r.k),
            Cell::F(r.tau),
            Cell::F(r.eps),
            Cell::F(r.penalty_value),
            Cell::F(r.objective_value),
            Cell::F(r.grad_norm_estimate),
            Cell::F(r.feasibility.mean_violation),
            Cell::F(r.feasibility.max_violation),
            Cell::F(r.feasibility.satisfied_fraction),
            Cell::F(r.multipliers.max),
            Cell::F(r.multipliers.mean),
            Cell::F(r.stepsize),
            Cell::I(r.inner_budget),
            Cell::I(r.budget_capped as usize),
            Cell::I(r.iterate_count),
            Cell::S(&sampled),
            Cell::I(r.box_activations),
        ]);
        if let Some((n, ex)) = extras {
            let (kkt, x) = &ex[idx];
            cells.push(fmt_g(*kkt));
            cells.extend(x.iter().take(n).map(|v| fmt_g(*v)));
        }
        csv.push_raw(cells);
    }
    csv.into_string()
}

fn schedule_for(cfg: &ExperimentConfig, dim: usize, inner: SgdConfig) -> Schedule {
    let s = cfg.sequential.as_ref().expect("sequential params for sequential runs");
    let mut schedule = Schedule::new(s.tau0, s.gamma, s.max_outer, inner);
    schedule.eps0 = s.eps0;
    schedule.eps_decay = s.eps_decay;
    schedule.feasibility_tol = s.feasibility_tol;
    schedule.update_granularity = if s.update_every == 1 {
        UpdateGranularity::PerEpoch
    } else {
        UpdateGranularity::PerNEpochs(s.update_every)
    };
    if let PlanChoice::Adaptive {
        probe_lower,
        probe_upper,
        safety,
        max_budget,
    } = s.plan
    {
        schedule.plan = InnerPlan::Adaptive {
            probe_box: BoxBounds::uniform(dim, probe_lower, probe_upper).expect("validated box"),
            smoothness_probes: 16,
            sgc_probes: 8,
            safety,
            max_budget,
            seed: cfg.seed,
        };
    }
    schedule
}

/// Runs the configured method from `x0`; `record_tau` recovers the spec of
/// a record for diagnostics.
fn train<P: FiniteSumProblem + ?Sized>(
    cfg: &ExperimentConfig,
    problem: &P,
    inner: SgdConfig,
    x0: &ParameterVector,
    observer: &mut dyn OuterObserver,
) -> Result<OuterTrace, TrainAbort> {
    match cfg.method {
        Method::Sequential => {
            let schedule = schedule_for(cfg, problem.dim(), inner);
            sequential_penalty_train(problem, cfg.penalty, &schedule, x0, observer)
        }
        Method::Fixed | Method::ObjectiveOnly => {
            fixed_penalty_train(problem, cfg.penalty, cfg.lambda.unwrap_or(0.0), &inner, x0, observer)
        }
    }
}

struct QpObserver<'a, P: ?Sized> {
    problem: &'a P,
    kind: PenaltyKind,
    extras: Vec<(f64, Vec<f64>)>,
    timeline: Csv,
}

impl<P: FiniteSumProblem + ?Sized> OuterObserver for QpObserver<'_, P> {
    fn after_outer(&mut self, record: &OuterRecord, candidate: &ParameterVector) {
        let kkt = PenaltySpec::fixed(self.kind, record.tau)
            .and_then(|spec| multiplier_estimate(self.problem, &spec, candidate))
            .and_then(|lam| kkt_residual(self.problem, candidate, &lam))
            .map(|r| r.max_residual())
            .unwrap_or(f64::NAN);
        self.extras.push((kkt, candidate.to_vec()));
        self.timeline.push_raw(row(&[
            Cell::I(record.k),
            Cell::S("main"),
            Cell::F(record.tau),
            Cell::F(record.objective_value),
            Cell::F(record.feasibility.max_violation),
            Cell::F(record.feasibility.satisfied_fraction),
        ]));
    }
}

fn run_qp(cfg: &ExperimentConfig, manifest: &mut Manifest<'_>) -> Result<(OuterTrace, Artifacts), Failure> {
    let params = cfg.qp.as_ref().expect("qp params for qp task");
    let qp = build_analytic_qp(&params.spec).map_err(|e| RunError::Data(format!("QP preset: {e}")))?;
    manifest.extra.push(("qp", params.preset.clone()));
    match &params.split_weights {
        None => qp_with(cfg, &qp, &qp),
        Some(w) => {
            let split = WeightedSplit::new(qp.clone(), w).map_err(|e| RunError::Data(e.to_string()))?;
            qp_with(cfg, &split, &qp)
        }
    }
}

fn qp_with<P: FiniteSumProblem>(
    cfg: &ExperimentConfig,
    problem: &P,
    qp: &AnalyticQP,
) -> Result<(OuterTrace, Artifacts), Failure> {
    let params = cfg.qp.as_ref().expect("qp params");
    let n = problem.dim();
    let x0: ParameterVector = params.x0.clone().unwrap_or_else(|| vec![0.0; n]).into();
    let mut obs = QpObserver {
        problem,
        kind: cfg.penalty,
        extras: Vec::new(),
        timeline: Csv::new(&[
            "step",
            "phase",
            "tau",
            "objective",
            "max_violation",
            "satisfied_fraction",
        ]),
    };
    let dim_extra = (n <= MAX_TRACE_DIM).then_some(n);
    let trace = match train(cfg, problem, cfg.inner.clone(), &x0, &mut obs) {
        Ok(t) => t,
        Err(abort) => {
            let trace = trace_csv(
                &abort.partial,
                dim_extra.map(|d| (d, &obs.extras[..abort.partial.len()])),
            );
            return Err(Failure::Abort { abort, trace });
        }
    };
    let x = &trace.final_candidate;
    let evals = evaluate_all(problem, x).map_err(|e| RunError::Data(e.to_string()))?;
    let stats = FeasibilityStats::from_evals(&evals, 0.0);
    let objective = trace.last().objective_value;
    let kkt = obs.extras.last().map(|e| e.0).unwrap_or(f64::NAN);
    let dist = x
        .iter()
        .zip(qp.x_star().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let mut results = Csv::new(&[
        "split",
        "objective",
        "mean_violation",
        "max_violation",
        "satisfied_fraction",
        "kkt_residual",
        "distance_to_solution",
    ]);
    results.push_raw(row(&[
        Cell::S("train"),
        Cell::F(objective),
        Cell::F(stats.mean_violation),
        Cell::F(stats.max_violation),
        Cell::F(stats.satisfied_fraction),
        Cell::F(kkt),
        Cell::F(dist),
    ]));
    let mut hist = Csv::new(&["split", "sample", "constraint", "g"]);
    for (j, e) in evals.iter().enumerate() {
        for (i, g) in e.constraints.iter().enumerate() {
            hist.push_raw(row(&[Cell::S("train"), Cell::I(j), Cell::I(i), Cell::F(*g)]));
        }
    }
    let art = Artifacts {
        results: results.into_string(),
        trace: trace_csv(&trace.records, dim_extra.map(|d| (d, &obs.extras[..]))),
        hist: hist.into_string(),
        timeline: obs.timeline.into_string(),
    };
    Ok((trace, art))
}

fn find_idx(dir: &Path, stem: &str) -> Result<PathBuf, RunError> {
    for name in [format!("{stem}.gz"), stem.to_string()] {
        let p = dir.join(name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(RunError::Data(format!(
        "{stem}[.gz] not found in {} (set {DATA_ENV})",
        dir.display()
    )))
}

fn load_split(dir: &Path, prefix: &str, limit: Option<usize>, split: Split) -> Result<ImageDataset, RunError> {
    let images = find_idx(dir, &format!("{prefix}-images-idx3-ubyte"))?;
    let labels = find_idx(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
    load_idx_dataset(&images, &labels, limit, split).map_err(|e| RunError::Data(format!("[{}] {e}", e.code())))
}

struct EpochObserver<'a> {
    task: &'a EncDecTask,
    test: &'a ImageDataset,
    phase: &'static str,
    epoch: usize,
    timeline: Csv,
}

impl OuterObserver for EpochObserver<'_> {
    fn after_epoch(&mut self, _epoch: usize, tau: f64, x: &ParameterVector) {
        self.epoch += 1;
        let train = self.task.metrics(x, self.task.dataset());
        let test = self.task.metrics(x, self.test);
        let (Ok(train), Ok(test)) = (train, test) else {
            return;
        };
        self.timeline.push_raw(row(&[
            Cell::I(self.epoch),
            Cell::S(self.phase),
            Cell::F(tau),
            Cell::F(train.accuracy),
            Cell::F(train.satisfied_fraction),
            Cell::F(test.accuracy),
            Cell::F(test.satisfied_fraction),
        ]));
    }
}

fn result_cells(split: &str, m: &SplitMetrics) -> Vec<String> {
    row(&[
        Cell::S(split),
        Cell::F(m.ce_loss),
        Cell::F(m.accuracy),
        Cell::F(m.mse_loss),
        Cell::F(m.mean_violation),
        Cell::F(m.satisfied_fraction),
    ])
}

pub const ENC_DEC_RESULT_COLUMNS: [&str; 6] = [
    "split",
    "ce_loss",
    "accuracy",
    "mse_loss",
    "mean_violation",
    "satisfied_fraction",
];

fn run_enc_dec(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    manifest: &mut Manifest<'_>,
) -> Result<(OuterTrace, Artifacts), Failure> {
    let p = cfg.enc_dec.as_ref().expect("enc_dec params");
    let train_ds = load_split(data_dir, "train", Some(p.train_limit), Split::Train)?;
    if train_ds.len() < p.train_limit {
        log::warn!(
            "requested {} training samples but only {} are available",
            p.train_limit,
            train_ds.len()
        );
    }
    let test_ds = load_split(data_dir, "t10k", p.test_limit, Split::Test)?;
    manifest.extra.push(("train_samples", train_ds.len().to_string()));
    manifest.extra.push(("test_samples", test_ds.len().to_string()));
    let task = build_enc_dec_task(Arc::new(train_ds), p.theta).map_err(|e| RunError::Data(e.to_string()))?;
    let decoder = task.model().decoder_range();
    let mut x = task.model().init_params(cfg.seed);
    let mut obs = EpochObserver {
        task: &task,
        test: &test_ds,
        phase: "warm",
        epoch: 0,
        timeline: Csv::new(&[
            "epoch",
            "phase",
            "tau",
            "train_accuracy",
            "train_satisfied",
            "test_accuracy",
            "test_satisfied",
        ]),
    };
    let trace_of = |abort: TrainAbort| {
        let trace = trace_csv(&abort.partial, None);
        Failure::Abort { abort, trace }
    };
    if p.warm_start_epochs > 0 {
        let warm = SgdConfig {
            budget: p.warm_start_epochs,
            rng_seed: cfg.seed.wrapping_add(1),
            frozen: vec![decoder.clone()],
            ..cfg.inner.clone()
        };
        x = fixed_penalty_train(&task, PenaltyKind::Linear, 0.0, &warm, &x, &mut obs)
            .map_err(trace_of)?
            .final_candidate;
    }
    obs.phase = "main";
    let mut inner = SgdConfig {
        rng_seed: cfg.seed.wrapping_add(2),
        ..cfg.inner.clone()
    };
    if cfg.method == Method::ObjectiveOnly {
        inner.frozen = vec![decoder];
    }
    let trace = train(cfg, &task, inner, &x, &mut obs).map_err(trace_of)?;
    let x = &trace.final_candidate;
    let train_m = task
        .metrics(x, task.dataset())
        .map_err(|e| RunError::Data(e.to_string()))?;
    let test_m = task.metrics(x, &test_ds).map_err(|e| RunError::Data(e.to_string()))?;
    let mut results = Csv::new(&ENC_DEC_RESULT_COLUMNS);
    results.push_raw(result_cells("train", &train_m));
    results.push_raw(result_cells("test", &test_m));
    let mut hist = Csv::new(&["split", "sample", "mse"]);
    for (split, m) in [("train", &train_m), ("test", &test_m)] {
        for (j, v) in m.per_sample_mse.iter().enumerate() {
            hist.push_raw(row(&[Cell::S(split), Cell::I(j), Cell::F(*v)]));
        }
    }
    let art = Artifacts {
        results: results.into_string(),
        trace: trace_csv(&trace.records, None),
        hist: hist.into_string(),
        timeline: obs.timeline.into_string(),
    };
    Ok((trace, art))
}
