//! Penalty functions `P_tau = f + penalty(g)` and the multiplier estimates
//! they induce.
//!
//! Per sample, the quadratic kind adds `tau/2 * sum_i max{0, g_ij}^2` and the
//! linear kind adds `tau * sum_i max{0, g_ij}`. The full penalty aggregates
//! the per-sample terms with the problem's
//! [`Normalization`](crate::problem::Normalization).

use ndarray::Array2;

use crate::error::{invalid, Result};
use crate::problem::{
    aggregate_objective, check_dim, check_evals, check_sample, evaluate_all, FiniteSumProblem, GradientWeights,
    SampleEval,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyKind {
    Quadratic,
    Linear,
}

impl PenaltyKind {
    pub fn name(self) -> &'static str {
        match self {
            PenaltyKind::Quadratic => "quadratic",
            PenaltyKind::Linear => "linear",
        }
    }
}

/// Penalty kind plus coefficient `tau`. Immutable; the outer driver builds a
/// new one for every outer iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltySpec {
    kind: PenaltyKind,
    tau: f64,
}

impl PenaltySpec {
    /// `tau` must be finite and strictly positive.
    pub fn new(kind: PenaltyKind, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(invalid(format!(
                "penalty coefficient must be positive and finite, got {tau}"
            )));
        }
        Ok(Self { kind, tau })
    }

    /// Fixed-weight penalty; `weight = 0` leaves the objective alone.
    pub fn fixed(kind: PenaltyKind, weight: f64) -> Result<Self> {
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(invalid(format!(
                "penalty weight must be non-negative and finite, got {weight}"
            )));
        }
        Ok(Self { kind, tau: weight })
    }

    pub fn kind(&self) -> PenaltyKind {
        self.kind
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Penalty contributed by one constraint value.
    pub fn term(&self, g: f64) -> f64 {
        let v = g.max(0.0);
        match self.kind {
            PenaltyKind::Quadratic => 0.5 * self.tau * v * v,
            PenaltyKind::Linear => self.tau * v,
        }
    }

    /// Derivative of [`term`](Self::term) with respect to `g`. The linear
    /// kind uses 0 at `g = 0`.
    pub fn term_slope(&self, g: f64) -> f64 {
        match self.kind {
            PenaltyKind::Quadratic => self.tau * g.max(0.0),
            PenaltyKind::Linear => {
                if g > 0.0 {
                    self.tau
                } else {
                    0.0
                }
            }
        }
    }

    pub(crate) fn sample_value(&self, eval: &SampleEval) -> f64 {
        eval.objective + eval.constraints.iter().map(|&g| self.term(g)).sum::<f64>()
    }
}

/// `P^j_tau(x)`.
pub fn penalty_value_sample<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    spec: &PenaltySpec,
    j: usize,
    x: &[f64],
) -> Result<f64> {
    check_dim(problem, x)?;
    check_sample(problem, j)?;
    let evals = problem.evaluate_batch(x, &[j]);
    check_evals(&[j], &evals)?;
    Ok(spec.sample_value(&evals[0]))
}

/// `P_tau(x)`, aggregated per the problem normalization.
pub fn penalty_value_full<P: FiniteSumProblem + ?Sized>(problem: &P, spec: &PenaltySpec, x: &[f64]) -> Result<f64> {
    let evals = evaluate_all(problem, x)?;
    Ok(penalty_from_evals(problem, spec, &evals))
}

pub(crate) fn penalty_from_evals<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    spec: &PenaltySpec,
    evals: &[SampleEval],
) -> f64 {
    let w = problem.normalization().weight(problem.num_samples());
    evals.iter().map(|e| spec.sample_value(e)).sum::<f64>() * w
}

/// `grad P^j_tau(x)`.
pub fn penalty_grad_sample<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    spec: &PenaltySpec,
    j: usize,
    x: &[f64],
) -> Result<Vec<f64>> {
    check_dim(problem, x)?;
    check_sample(problem, j)?;
    let (grad, _) = penalty_grad_batch(problem, spec, x, &[j], 1.0)?;
    Ok(grad)
}

/// `scale * sum_{j in indices} grad P^j_tau(x)`, plus the sample values.
pub fn penalty_grad_batch<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    spec: &PenaltySpec,
    x: &[f64],
    indices: &[usize],
    scale: f64,
) -> Result<(Vec<f64>, Vec<SampleEval>)> {
    let slope = |_: usize, _: usize, g: f64| spec.term_slope(g);
    let weights = GradientWeights {
        scale,
        constraint_coeff: &slope,
    };
    let mut grad = vec![0.0; problem.dim()];
    let evals = problem.accumulate_gradient(x, indices, &weights, &mut grad);
    check_evals(indices, &evals)?;
    Ok((grad, evals))
}

/// `grad P_tau(x)`.
pub fn penalty_grad_full<P: FiniteSumProblem + ?Sized>(problem: &P, spec: &PenaltySpec, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(problem, x)?;
    let n = problem.num_samples();
    let indices: Vec<usize> = (0..n).collect();
    let (grad, _) = penalty_grad_batch(problem, spec, x, &indices, problem.normalization().weight(n))?;
    Ok(grad)
}

/// Non-negative multiplier estimates, one per `(sample, constraint)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierVector {
    lambdas: Array2<f64>,
}

impl MultiplierVector {
    /// Rejects negative or non-finite entries.
    pub fn new(lambdas: Array2<f64>) -> Result<Self> {
        if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(invalid("multipliers must be finite and non-negative"));
        }
        Ok(Self { lambdas })
    }

    /// Builds multipliers without the sign check, e.g. to probe dual
    /// feasibility reporting.
    pub fn new_unchecked(lambdas: Array2<f64>) -> Self {
        Self { lambdas }
    }

    pub fn zeros(num_samples: usize, m: usize) -> Self {
        Self {
            lambdas: Array2::zeros((num_samples, m)),
        }
    }

    pub fn lambdas(&self) -> &Array2<f64> {
        &self.lambdas
    }

    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.lambdas[(j, i)]
    }

    pub fn summary(&self) -> MultiplierSummary {
        let n = self.lambdas.len();
        let (mut max, mut sum, mut nonzero) = (0.0f64, 0.0, 0usize);
        for &l in self.lambdas.iter() {
            max = max.max(l);
            sum += l;
            if l != 0.0 {
                nonzero += 1;
            }
        }
        MultiplierSummary {
            max,
            sum,
            mean: if n == 0 { 0.0 } else { sum / n as f64 },
            nonzero,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiplierSummary {
    pub max: f64,
    pub sum: f64,
    pub mean: f64,
    pub nonzero: usize,
}

/// `lambda_ij = w * slope(g_ij)`, with `slope = tau * max{0, g}` for the
/// quadratic kind and `tau * 1{g > 0}` for the linear kind. `w` is the
/// per-sample normalization weight (1 for sums, `1/N` for means), so that
/// `grad f + sum lambda_ij grad g_ij` reproduces `grad P_tau` exactly.
pub fn multiplier_estimate<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    spec: &PenaltySpec,
    x: &[f64],
) -> Result<MultiplierVector> {
    let evals = evaluate_all(problem, x)?;
    Ok(multipliers_from_evals(problem, spec, &evals))
}

pub(crate) fn multipliers_from_evals<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    spec: &PenaltySpec,
    evals: &[SampleEval],
) -> MultiplierVector {
    let w = problem.normalization().weight(problem.num_samples());
    let mut lambdas = Array2::zeros((evals.len(), problem.num_constraints()));
    for (j, e) in evals.iter().enumerate() {
        for (i, &g) in e.constraints.iter().enumerate() {
            lambdas[(j, i)] = w * spec.term_slope(g);
        }
    }
    MultiplierVector { lambdas }
}

/// Objective value implied by a set of evaluations; re-exported for the
/// drivers.
pub(crate) fn objective_from_evals<P: FiniteSumProblem + ?Sized>(problem: &P, evals: &[SampleEval]) -> f64 {
    aggregate_objective(problem, evals)
}
