//! Sequential penalty method and the fixed-penalty baseline.
//!
//! Outer iteration `k` minimizes `P_{tau_k}` approximately, warm-started at
//! the previous candidate, with `tau_k = tau0 * gamma^k` and
//! `eps_k = eps0 * eps_decay^k`.

use crate::diagnostics::{sgc_estimate, smoothness_estimate};
use crate::error::{invalid, Result, SeqPenError};
use crate::inner::{iteration_budget, BoxBounds, InnerReport, SgdConfig, SgdSession, SolverMode};
use crate::penalty::{
    multipliers_from_evals, objective_from_evals, penalty_from_evals, MultiplierSummary, PenaltyKind, PenaltySpec,
};
use crate::problem::{evaluate_all, FeasibilityStats, FiniteSumProblem, ParameterVector};

/// How often `tau` grows in practical mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateGranularity {
    PerEpoch,
    PerNEpochs(usize),
}

impl UpdateGranularity {
    pub fn epochs(self) -> usize {
        match self {
            UpdateGranularity::PerEpoch => 1,
            UpdateGranularity::PerNEpochs(n) => n,
        }
    }
}

/// Where the inner stepsize and budget come from.
#[derive(Debug, Clone, PartialEq)]
pub enum InnerPlan {
    /// Use the inner config unchanged at every outer iteration.
    Fixed,
    /// Theoretical mode only: `eta = 1/(rho L)` with `L` estimated on
    /// `probe_box` and the budget from [`iteration_budget`], scaled by
    /// `safety` and capped at `max_budget`.
    Adaptive {
        probe_box: BoxBounds,
        smoothness_probes: usize,
        sgc_probes: usize,
        safety: f64,
        max_budget: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub tau0: f64,
    pub gamma: f64,
    pub update_granularity: UpdateGranularity,
    pub eps0: f64,
    pub eps_decay: f64,
    pub max_outer: usize,
    /// Termination needs every `g_ij <= feasibility_tol`.
    pub feasibility_tol: f64,
    /// Threshold for the satisfied fraction in the records.
    pub satisfied_tol: f64,
    pub inner: SgdConfig,
    pub plan: InnerPlan,
    /// Keep every candidate in the trace (memory heavy for large models).
    pub keep_candidates: bool,
}

impl Schedule {
    pub fn new(tau0: f64, gamma: f64, max_outer: usize, inner: SgdConfig) -> Self {
        Self {
            tau0,
            gamma,
            update_granularity: UpdateGranularity::PerEpoch,
            eps0: 1.0,
            eps_decay: 0.9,
            max_outer,
            feasibility_tol: 1e-6,
            satisfied_tol: 0.0,
            inner,
            plan: InnerPlan::Fixed,
            keep_candidates: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau0 > 0.0 && self.tau0.is_finite()) {
            return Err(invalid(format!("tau0 must be positive, got {}", self.tau0)));
        }
        if !(self.gamma > 1.0 && self.gamma.is_finite()) {
            return Err(invalid(format!("gamma must exceed 1, got {}", self.gamma)));
        }
        if !(self.eps0 > 0.0 && self.eps0.is_finite()) {
            return Err(invalid(format!("eps0 must be positive, got {}", self.eps0)));
        }
        if !(self.eps_decay > 0.0 && self.eps_decay < 1.0) {
            return Err(invalid(format!("eps_decay must lie in (0, 1), got {}", self.eps_decay)));
        }
        if self.max_outer == 0 {
            return Err(invalid("max_outer must be at least 1"));
        }
        if !(self.feasibility_tol >= 0.0) || !(self.satisfied_tol >= 0.0) {
            return Err(invalid("tolerances must be non-negative"));
        }
        if let UpdateGranularity::PerNEpochs(0) = self.update_granularity {
            return Err(invalid("update granularity needs at least one epoch"));
        }
        if let InnerPlan::Adaptive {
            safety,
            smoothness_probes,
            sgc_probes,
            ..
        } = &self.plan
        {
            if self.inner.mode != SolverMode::Theoretical {
                return Err(invalid("adaptive inner plan requires theoretical mode"));
            }
            if !(*safety >= 1.0) || *smoothness_probes < 2 || *sgc_probes == 0 {
                return Err(invalid(
                    "adaptive plan needs safety >= 1, >= 2 smoothness probes and >= 1 sgc probe",
                ));
            }
        }
        self.inner.validate()
    }

    pub fn tau(&self, k: usize) -> f64 {
        self.tau0 * self.gamma.powi(k as i32)
    }

    pub fn eps(&self, k: usize) -> f64 {
        self.eps0 * self.eps_decay.powi(k as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterRecord {
    pub k: usize,
    pub tau: f64,
    pub eps: f64,
    pub penalty_value: f64,
    pub objective_value: f64,
    pub grad_norm_estimate: f64,
    pub feasibility: FeasibilityStats,
    pub multipliers: MultiplierSummary,
    pub stepsize: f64,
    /// Steps (theoretical) or epochs (practical) granted to the inner run.
    pub inner_budget: usize,
    pub budget_capped: bool,
    pub iterate_count: usize,
    pub sampled_index: Option<usize>,
    pub box_activations: usize,
    pub inner_trace: Vec<f64>,
    pub candidate: Option<ParameterVector>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Gradient norm and feasibility tolerances both met.
    Converged,
    MaxOuter,
    /// Single-run baseline.
    Fixed,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Converged => "converged",
            StopReason::MaxOuter => "max_outer",
            StopReason::Fixed => "fixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OuterTrace {
    pub records: Vec<OuterRecord>,
    pub stop: StopReason,
    pub final_candidate: ParameterVector,
}

impl OuterTrace {
    pub fn last(&self) -> &OuterRecord {
        self.records.last().expect("traces hold at least one record")
    }
}

/// Inner failure with the outer index and the records gathered so far.
#[derive(Debug, thiserror::Error)]
#[error("outer iteration {outer}: {source}")]
pub struct TrainAbort {
    pub outer: usize,
    #[source]
    pub source: SeqPenError,
    pub partial: Vec<OuterRecord>,
}

/// Hooks for progress reporting and warm-start checks.
pub trait OuterObserver {
    fn before_inner(&mut self, _k: usize, _tau: f64, _start: &ParameterVector) {}
    fn after_outer(&mut self, _record: &OuterRecord, _candidate: &ParameterVector) {}
    /// Practical mode: called after every epoch with the current iterate.
    fn after_epoch(&mut self, _epoch: usize, _tau: f64, _x: &ParameterVector) {}
}

impl OuterObserver for () {}

struct Plan {
    stepsize: f64,
    budget: usize,
    capped: bool,
}

fn plan_inner<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    spec: &PenaltySpec,
    schedule: &Schedule,
    start: &ParameterVector,
    eps: f64,
    k: usize,
) -> Result<Plan> {
    let InnerPlan::Adaptive {
        probe_box,
        smoothness_probes,
        sgc_probes,
        safety,
        max_budget,
        seed,
    } = &schedule.plan
    else {
        let budget = match schedule.inner.mode {
            SolverMode::Theoretical => schedule.inner.budget,
            SolverMode::Practical => schedule.update_granularity.epochs(),
        };
        return Ok(Plan {
            stepsize: schedule.inner.stepsize,
            budget,
            capped: false,
        });
    };
    let seed = seed.wrapping_add(k as u64);
    let lip = smoothness_estimate(problem, spec, probe_box, *smoothness_probes, seed)?.l_tau_c;
    let rho = if schedule.inner.batch_size >= problem.num_samples() {
        1.0
    } else {
        let probes = probe_points(probe_box, *sgc_probes, seed, start);
        sgc_estimate(problem, spec, &probes)?.rho_est
    };
    let f_low = problem
        .lower_bound()
        .ok_or_else(|| invalid("adaptive plan needs a known lower bound on f"))?;
    let evals = evaluate_all(problem, start)?;
    let gap = penalty_from_evals(problem, spec, &evals) - f_low;
    let raw = if gap > 0.0 {
        iteration_budget(rho, lip, gap, eps)? as f64 * safety
    } else {
        0.0
    };
    let capped = raw > *max_budget as f64;
    Ok(Plan {
        stepsize: 1.0 / (rho * lip),
        budget: if capped { *max_budget } else { raw.ceil() as usize },
        capped,
    })
}

fn probe_points(bx: &BoxBounds, count: usize, seed: u64, start: &ParameterVector) -> Vec<ParameterVector> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut out = vec![start.clone()];
    while out.len() < count {
        out.push(
            bx.lower()
                .iter()
                .zip(bx.upper())
                .map(|(&lo, &hi)| rng.gen_range(lo..=hi))
                .collect::<Vec<_>>()
                .into(),
        );
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn make_record<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    spec: &PenaltySpec,
    k: usize,
    eps: f64,
    satisfied_tol: f64,
    plan: &Plan,
    report: InnerReport,
    keep: bool,
) -> Result<OuterRecord> {
    let evals = evaluate_all(problem, &report.candidate)?;
    Ok(OuterRecord {
        k,
        tau: spec.tau(),
        eps,
        penalty_value: penalty_from_evals(problem, spec, &evals),
        objective_value: objective_from_evals(problem, &evals),
        grad_norm_estimate: report.grad_norm_estimate,
        feasibility: FeasibilityStats::from_evals(&evals, satisfied_tol),
        multipliers: multipliers_from_evals(problem, spec, &evals).summary(),
        stepsize: plan.stepsize,
        inner_budget: plan.budget,
        budget_capped: plan.capped,
        iterate_count: report.iterate_count,
        sampled_index: report.sampled_index,
        box_activations: report.box_activations,
        inner_trace: report.trace,
        candidate: keep.then(|| report.candidate.clone()),
    })
}

/// Runs the sequential penalty method from `x0`.
pub fn sequential_penalty_train<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    kind: PenaltyKind,
    schedule: &Schedule,
    x0: &ParameterVector,
    observer: &mut dyn OuterObserver,
) -> std::result::Result<OuterTrace, TrainAbort> {
    let abort = |outer, source, partial: &Vec<OuterRecord>| TrainAbort {
        outer,
        source,
        partial: partial.clone(),
    };
    let mut records = Vec::new();
    schedule.validate().map_err(|e| abort(0, e, &records))?;
    let mut session = SgdSession::new(schedule.inner.clone()).map_err(|e| abort(0, e, &records))?;
    let mut x = x0.clone();
    let mut stop = StopReason::MaxOuter;
    for k in 0..schedule.max_outer {
        let mut step = || -> Result<(OuterRecord, ParameterVector)> {
            let spec = PenaltySpec::new(kind, schedule.tau(k))?;
            let eps = schedule.eps(k);
            let plan = plan_inner(problem, &spec, schedule, &x, eps, k)?;
            session.set_stepsize(plan.stepsize)?;
            session.set_budget(plan.budget);
            observer.before_inner(k, spec.tau(), &x);
            let report = session.run(problem, &spec, &x)?;
            let candidate = report.candidate.clone();
            let record = make_record(
                problem,
                &spec,
                k,
                eps,
                schedule.satisfied_tol,
                &plan,
                report,
                schedule.keep_candidates,
            )?;
            Ok((record, candidate))
        };
        let (record, candidate) = step().map_err(|e| abort(k, e, &records))?;
        log::info!(
            "outer {k}: tau {:.4e} penalty {:.6e} grad {:.3e} max_violation {:.3e} satisfied {:.4}",
            record.tau,
            record.penalty_value,
            record.grad_norm_estimate,
            record.feasibility.max_violation,
            record.feasibility.satisfied_fraction
        );
        if schedule.inner.mode == SolverMode::Practical {
            observer.after_epoch(k, record.tau, &candidate);
        }
        observer.after_outer(&record, &candidate);
        let converged = record.grad_norm_estimate <= record.eps
            && evaluate_all(problem, &candidate)
                .map_err(|e| abort(k, e, &records))?
                .iter()
                .all(|e| e.constraints.iter().all(|&g| g <= schedule.feasibility_tol));
        records.push(record);
        x = candidate;
        if converged {
            stop = StopReason::Converged;
            break;
        }
    }
    Ok(OuterTrace {
        records,
        stop,
        final_candidate: x,
    })
}

/// Single inner run on `f + lambda * sum measure(g)` with the given kind
/// (the linear kind by default in the harness).
pub fn fixed_penalty_train<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    kind: PenaltyKind,
    lambda: f64,
    inner: &SgdConfig,
    x0: &ParameterVector,
    observer: &mut dyn OuterObserver,
) -> std::result::Result<OuterTrace, TrainAbort> {
    let abort = |source| TrainAbort {
        outer: 0,
        source,
        partial: Vec::new(),
    };
    let spec = PenaltySpec::fixed(kind, lambda).map_err(abort)?;
    let plan = Plan {
        stepsize: inner.stepsize,
        budget: inner.budget,
        capped: false,
    };
    observer.before_inner(0, lambda, x0);
    let mut run = || -> Result<(OuterRecord, ParameterVector)> {
        let report = match inner.mode {
            SolverMode::Theoretical => SgdSession::new(inner.clone())?.run(problem, &spec, x0)?,
            SolverMode::Practical => {
                // one epoch per call so observers see every epoch
                let mut session = SgdSession::new(SgdConfig {
                    budget: 1,
                    ..inner.clone()
                })?;
                let mut merged: Option<InnerReport> = None;
                let mut x = x0.clone();
                for epoch in 0..inner.budget {
                    let r = session.run(problem, &spec, &x)?;
                    observer.after_epoch(epoch, lambda, &r.candidate);
                    x = r.candidate.clone();
                    merged = Some(match merged {
                        None => r,
                        Some(mut m) => {
                            m.iterate_count += r.iterate_count - 1;
                            m.box_activations += r.box_activations;
                            m.trace.extend(r.trace);
                            m.grad_norm_estimate = r.grad_norm_estimate;
                            m.candidate = r.candidate;
                            m.last_iterate = r.last_iterate;
                            m
                        }
                    });
                }
                match merged {
                    Some(m) => m,
                    None => SgdSession::new(inner.clone())?.run(problem, &spec, x0)?,
                }
            }
        };
        let candidate = report.candidate.clone();
        let record = make_record(problem, &spec, 0, f64::NAN, 0.0, &plan, report, true)?;
        Ok((record, candidate))
    };
    let (record, candidate) = run().map_err(abort)?;
    observer.after_outer(&record, &candidate);
    Ok(OuterTrace {
        records: vec![record],
        stop: StopReason::Fixed,
        final_candidate: candidate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inner::CandidateRule;
    use crate::problem::{FnProblem, Normalization};

    fn qp() -> FnProblem {
        FnProblem::new(1, 1, Normalization::Sum, |_, x| x[0] * x[0], |_, x| vec![2.0 * x[0]])
            .with_constraints(1, |_, x| vec![1.0 - x[0]], |_, _| vec![vec![-1.0]])
            .with_lower_bound(0.0)
    }

    fn exact_inner(steps: usize) -> SgdConfig {
        let mut cfg = SgdConfig::theoretical(0.1, 1, steps, 3);
        cfg.candidate = CandidateRule::LastIterate;
        cfg
    }

    #[test]
    fn single_outer_iteration() {
        let s = Schedule::new(3.0, 2.0, 1, exact_inner(10));
        let t = sequential_penalty_train(&qp(), PenaltyKind::Quadratic, &s, &vec![0.0].into(), &mut ()).unwrap();
        assert_eq!(t.records.len(), 1);
        assert_eq!(t.records[0].tau, 3.0);
        assert_eq!(t.stop, StopReason::MaxOuter);
    }

    #[test]
    fn rejects_bad_schedules() {
        let mut s = Schedule::new(1.0, 1.0, 3, exact_inner(1));
        assert!(s.validate().is_err());
        s.gamma = 2.0;
        s.eps_decay = 1.0;
        assert!(s.validate().is_err());
        s.eps_decay = 0.5;
        s.tau0 = 0.0;
        assert!(s.validate().is_err());
    }

    struct Starts(Vec<ParameterVector>, Vec<ParameterVector>);

    impl OuterObserver for Starts {
        fn before_inner(&mut self, _k: usize, _tau: f64, start: &ParameterVector) {
            self.0.push(start.clone());
        }
        fn after_outer(&mut self, _r: &OuterRecord, c: &ParameterVector) {
            self.1.push(c.clone());
        }
    }

    #[test]
    fn warm_start_and_tau_growth() {
        let mut s = Schedule::new(0.5, 3.0, 6, exact_inner(50));
        s.inner.stepsize = 0.01;
        let mut obs = Starts(Vec::new(), Vec::new());
        let t = sequential_penalty_train(&qp(), PenaltyKind::Quadratic, &s, &vec![0.25].into(), &mut obs).unwrap();
        assert_eq!(obs.0[0].as_slice(), &[0.25]);
        for k in 1..obs.0.len() {
            assert_eq!(obs.0[k], obs.1[k - 1]);
        }
        for (k, r) in t.records.iter().enumerate() {
            let expected = 0.5 * 3f64.powi(k as i32);
            assert!((r.tau - expected).abs() <= 4.0 * f64::EPSILON * expected);
            assert!((r.eps - 0.9f64.powi(k as i32)).abs() < 1e-15);
        }
    }

    #[test]
    fn adaptive_budgets_meet_eps() {
        let mut s = Schedule::new(1.0, 2.0, 8, exact_inner(0));
        s.plan = InnerPlan::Adaptive {
            probe_box: BoxBounds::uniform(1, -2.0, 2.0).unwrap(),
            smoothness_probes: 8,
            sgc_probes: 4,
            safety: 1.0,
            max_budget: 1_000_000,
            seed: 1,
        };
        let t = sequential_penalty_train(&qp(), PenaltyKind::Quadratic, &s, &vec![0.0].into(), &mut ()).unwrap();
        for r in &t.records {
            assert!(
                r.grad_norm_estimate <= r.eps,
                "k {}: {} > {}",
                r.k,
                r.grad_norm_estimate,
                r.eps
            );
            assert!((r.stepsize - 1.0 / (2.0 + r.tau)).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_penalty_extremes() {
        let cfg = exact_inner(2000);
        let free = fixed_penalty_train(&qp(), PenaltyKind::Linear, 0.0, &cfg, &vec![0.7].into(), &mut ()).unwrap();
        assert!(free.final_candidate[0].abs() < 1e-6);
        assert!(free.last().feasibility.max_violation > 0.99);
        let mut cfg = exact_inner(20_000);
        cfg.stepsize = 1e-10;
        let hard = fixed_penalty_train(&qp(), PenaltyKind::Linear, 1e6, &cfg, &vec![0.0].into(), &mut ()).unwrap();
        assert!(
            (hard.final_candidate[0] - 1.0).abs() < 1e-3,
            "{}",
            hard.final_candidate[0]
        );
    }
}
