//! Sequential penalty training for finite-sum problems with per-sample
//! inequality constraints.
//!
//! A problem is a set of `N` samples, each with an objective `f_j` and
//! constraints `g_ij(x) <= 0`. The penalty function `P_tau` adds
//! `tau/2 * max{0, g}^2` (or `tau * max{0, g}`) per constraint and is
//! minimized approximately by stochastic gradient methods while `tau` grows.
//!
//! ```
//! use seqpen::{PenaltyKind, PenaltySpec, penalty_value_full, FnProblem, Normalization};
//!
//! // min x^2  s.t.  1 - x <= 0
//! let qp = FnProblem::new(1, 1, Normalization::Sum, |_, x| x[0] * x[0], |_, x| vec![2.0 * x[0]])
//!     .with_constraints(1, |_, x| vec![1.0 - x[0]], |_, _| vec![vec![-1.0]]);
//! let spec = PenaltySpec::new(PenaltyKind::Quadratic, 2.0).unwrap();
//! assert_eq!(penalty_value_full(&qp, &spec, &[0.0]).unwrap(), 1.0);
//! ```

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod inner;
pub mod outer;
pub mod par;
pub mod penalty;
pub mod problem;
pub mod tasks;

pub use diagnostics::{
    elicq_check, kkt_residual, sgc_estimate, smoothness_estimate, ActiveSet, ElicqReport, KktReport, SgcEstimate,
    SmoothnessEstimate,
};
pub use error::{Result, SeqPenError};
pub use inner::{
    grad_norm_estimate, iteration_budget, sgd_run, AdamParams, BoxBounds, CandidateRule, InnerReport, SgdConfig,
    SgdSession, SolverMode,
};
pub use outer::{
    fixed_penalty_train, sequential_penalty_train, InnerPlan, OuterObserver, OuterRecord, OuterTrace, Schedule,
    StopReason, TrainAbort, UpdateGranularity,
};
pub use penalty::{
    multiplier_estimate, penalty_grad_batch, penalty_grad_full, penalty_grad_sample, penalty_value_full,
    penalty_value_sample, MultiplierSummary, MultiplierVector, PenaltyKind, PenaltySpec,
};
pub use problem::{
    evaluate_all, feasibility_stats, full_objective, full_objective_grad, violation_vector, FeasibilityStats,
    FiniteSumProblem, FnProblem, GradientWeights, Minibatch, Normalization, ParameterVector, SampleEval,
};
