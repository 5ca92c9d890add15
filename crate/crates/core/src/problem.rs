//! Finite-sum problems with per-sample inequality constraints.
//!
//! A problem has `N` samples; sample `j` contributes an objective term `f_j`
//! and `m` constraints `g_ij(x) <= 0`. The full objective aggregates the
//! `f_j` by sum or mean, see [`Normalization`].

use std::ops::{Deref, DerefMut};

use ndarray::Array2;
use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::error::{Result, SeqPenError};
use crate::par;

/// How per-sample objective terms combine into the full objective.
///
/// Penalty coefficients are not transferable between the two: under `Mean`
/// every penalty term is also divided by `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    Sum,
    Mean,
}

impl Normalization {
    /// Weight applied to each per-sample term.
    pub fn weight(self, num_samples: usize) -> f64 {
        match self {
            Normalization::Sum => 1.0,
            Normalization::Mean => 1.0 / num_samples as f64,
        }
    }
}

/// Model weights.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Index of the first NaN/Inf entry, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.0.iter().position(|v| !v.is_finite())
    }

    pub fn is_finite(&self) -> bool {
        self.first_non_finite().is_none()
    }
}

impl From<Vec<f64>> for ParameterVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Deref for ParameterVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParameterVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Objective and constraint values of one sample at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleEval {
    pub objective: f64,
    pub constraints: Vec<f64>,
}

/// Weights for [`FiniteSumProblem::accumulate_gradient`]: every sample adds
/// `scale * (grad f_j + sum_i coeff(j, i, g_ij) * grad g_ij)`.
pub struct GradientWeights<'a> {
    pub scale: f64,
    pub constraint_coeff: &'a (dyn Fn(usize, usize, f64) -> f64 + Sync),
}

/// Per-sample oracles. Implementations must be callable concurrently.
pub trait FiniteSumProblem: Sync {
    fn dim(&self) -> usize;
    fn num_samples(&self) -> usize;
    /// Constraints per sample (`m`).
    fn num_constraints(&self) -> usize;
    fn normalization(&self) -> Normalization;
    /// Known lower bound `f*` on the full objective, if any.
    fn lower_bound(&self) -> Option<f64> {
        None
    }

    fn sample_objective(&self, j: usize, x: &[f64]) -> f64;
    fn sample_objective_grad(&self, j: usize, x: &[f64]) -> Vec<f64>;
    fn sample_constraints(&self, j: usize, x: &[f64]) -> Vec<f64>;
    /// One row per constraint.
    fn sample_constraint_jacobian(&self, j: usize, x: &[f64]) -> Vec<Vec<f64>>;

    /// Values of several samples. Override when a batched path is cheaper.
    fn evaluate_batch(&self, x: &[f64], indices: &[usize]) -> Vec<SampleEval> {
        par::map_slice(indices, |&j| SampleEval {
            objective: self.sample_objective(j, x),
            constraints: self.sample_constraints(j, x),
        })
    }

    /// Adds the weighted gradient of the selected samples into `grad` and
    /// returns their values. Override when a batched path is cheaper.
    fn accumulate_gradient(
        &self,
        x: &[f64],
        indices: &[usize],
        weights: &GradientWeights<'_>,
        grad: &mut [f64],
    ) -> Vec<SampleEval> {
        let parts = par::map_slice(indices, |&j| {
            let eval = SampleEval {
                objective: self.sample_objective(j, x),
                constraints: self.sample_constraints(j, x),
            };
            let mut g = self.sample_objective_grad(j, x);
            let coeffs: Vec<f64> = eval
                .constraints
                .iter()
                .enumerate()
                .map(|(i, &c)| (weights.constraint_coeff)(j, i, c))
                .collect();
            if coeffs.iter().any(|&c| c != 0.0) {
                let jac = self.sample_constraint_jacobian(j, x);
                for (row, &c) in jac.iter().zip(&coeffs) {
                    if c != 0.0 {
                        axpy(c, row, &mut g);
                    }
                }
            }
            (eval, g)
        });
        let mut evals = Vec::with_capacity(parts.len());
        for (eval, g) in parts {
            axpy(weights.scale, &g, grad);
            evals.push(eval);
        }
        evals
    }
}

pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub(crate) fn check_dim<P: FiniteSumProblem + ?Sized>(problem: &P, x: &[f64]) -> Result<()> {
    if x.len() != problem.dim() {
        return Err(SeqPenError::DimensionMismatch {
            expected: problem.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

pub(crate) fn check_sample<P: FiniteSumProblem + ?Sized>(problem: &P, j: usize) -> Result<()> {
    if j >= problem.num_samples() {
        return Err(SeqPenError::SampleOutOfRange {
            sample: j,
            num_samples: problem.num_samples(),
        });
    }
    Ok(())
}

/// Rejects NaN/Inf values, naming the first offending sample (and constraint).
pub(crate) fn check_evals(indices: &[usize], evals: &[SampleEval]) -> Result<()> {
    for (&j, e) in indices.iter().zip(evals) {
        if !e.objective.is_finite() {
            return Err(SeqPenError::NonFiniteObjective { sample: j });
        }
        if let Some(i) = e.constraints.iter().position(|c| !c.is_finite()) {
            return Err(SeqPenError::NonFiniteConstraint {
                sample: j,
                constraint: i,
            });
        }
    }
    Ok(())
}

/// Evaluates every sample, checking dimensions and finiteness.
pub fn evaluate_all<P: FiniteSumProblem + ?Sized>(problem: &P, x: &[f64]) -> Result<Vec<SampleEval>> {
    check_dim(problem, x)?;
    let indices: Vec<usize> = (0..problem.num_samples()).collect();
    let evals = problem.evaluate_batch(x, &indices);
    check_evals(&indices, &evals)?;
    Ok(evals)
}

/// Aggregated objective `f(x)`.
pub fn full_objective<P: FiniteSumProblem + ?Sized>(problem: &P, x: &[f64]) -> Result<f64> {
    let evals = evaluate_all(problem, x)?;
    Ok(aggregate_objective(problem, &evals))
}

pub(crate) fn aggregate_objective<P: FiniteSumProblem + ?Sized>(problem: &P, evals: &[SampleEval]) -> f64 {
    let w = problem.normalization().weight(problem.num_samples());
    evals.iter().map(|e| e.objective).sum::<f64>() * w
}

/// Gradient of the aggregated objective.
pub fn full_objective_grad<P: FiniteSumProblem + ?Sized>(problem: &P, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(problem, x)?;
    let n = problem.num_samples();
    let indices: Vec<usize> = (0..n).collect();
    let zero = |_: usize, _: usize, _: f64| 0.0;
    let mut grad = vec![0.0; problem.dim()];
    let weights = GradientWeights {
        scale: problem.normalization().weight(n),
        constraint_coeff: &zero,
    };
    let evals = problem.accumulate_gradient(x, &indices, &weights, &mut grad);
    check_evals(&indices, &evals)?;
    Ok(grad)
}

/// `N x m` matrix with entry `(j, i) = max{0, g_ij(x)}`.
pub fn violation_vector<P: FiniteSumProblem + ?Sized>(problem: &P, x: &[f64]) -> Result<Array2<f64>> {
    let evals = evaluate_all(problem, x)?;
    Ok(violations_from_evals(problem.num_constraints(), &evals))
}

pub(crate) fn violations_from_evals(m: usize, evals: &[SampleEval]) -> Array2<f64> {
    let mut out = Array2::zeros((evals.len(), m));
    for (j, e) in evals.iter().enumerate() {
        for (i, &g) in e.constraints.iter().enumerate() {
            out[(j, i)] = g.max(0.0);
        }
    }
    out
}

/// Summary of constraint satisfaction over all `(j, i)` pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityStats {
    pub mean_violation: f64,
    pub satisfied_fraction: f64,
    pub max_violation: f64,
}

impl FeasibilityStats {
    /// A constraint counts as satisfied iff `g <= tol`.
    pub fn from_evals(evals: &[SampleEval], tol: f64) -> Self {
        let mut count = 0usize;
        let mut satisfied = 0usize;
        let mut total = 0.0;
        let mut max = 0.0f64;
        for g in evals.iter().flat_map(|e| e.constraints.iter().copied()) {
            count += 1;
            if g <= tol {
                satisfied += 1;
            }
            let v = g.max(0.0);
            total += v;
            max = max.max(v);
        }
        if count == 0 {
            return Self {
                mean_violation: 0.0,
                satisfied_fraction: 1.0,
                max_violation: 0.0,
            };
        }
        Self {
            mean_violation: total / count as f64,
            satisfied_fraction: satisfied as f64 / count as f64,
            max_violation: max,
        }
    }
}

pub fn feasibility_stats<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    threshold_tol: f64,
) -> Result<FeasibilityStats> {
    if !(threshold_tol >= 0.0) {
        return Err(crate::error::invalid("threshold_tol must be >= 0"));
    }
    let evals = evaluate_all(problem, x)?;
    Ok(FeasibilityStats::from_evals(&evals, threshold_tol))
}

/// Sample indices drawn for one stochastic step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Minibatch {
    indices: Vec<usize>,
}

impl Minibatch {
    /// Checks that indices are unique and below `n`.
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for &j in &indices {
            if j >= n {
                return Err(SeqPenError::SampleOutOfRange {
                    sample: j,
                    num_samples: n,
                });
            }
            if std::mem::replace(&mut seen[j], true) {
                return Err(crate::error::invalid(format!("duplicate sample index {j} in batch")));
            }
        }
        Ok(Self { indices })
    }

    pub fn full(n: usize) -> Self {
        Self {
            indices: (0..n).collect(),
        }
    }

    /// Uniformly random subset of `size` distinct indices.
    pub fn draw<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Self {
        let size = size.min(n);
        if size == n {
            return Self::full(n);
        }
        Self {
            indices: index::sample(rng, n, size).into_vec(),
        }
    }

    /// Shuffled partition of `0..n` into batches of at most `batch_size`.
    pub fn epoch_partition<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Vec<Self> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        order
            .chunks(batch_size.max(1))
            .map(|c| Self { indices: c.to_vec() })
            .collect()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

type ValueFn = Box<dyn Fn(usize, &[f64]) -> f64 + Send + Sync>;
type VectorFn = Box<dyn Fn(usize, &[f64]) -> Vec<f64> + Send + Sync>;
type MatrixFn = Box<dyn Fn(usize, &[f64]) -> Vec<Vec<f64>> + Send + Sync>;

/// A problem assembled from closures; handy for small analytic examples.
pub struct FnProblem {
    dim: usize,
    num_samples: usize,
    num_constraints: usize,
    normalization: Normalization,
    lower_bound: Option<f64>,
    objective: ValueFn,
    objective_grad: VectorFn,
    constraints: VectorFn,
    jacobian: MatrixFn,
}

impl FnProblem {
    /// Unconstrained problem with the given objective terms.
    pub fn new<F, G>(dim: usize, num_samples: usize, normalization: Normalization, f: F, grad: G) -> Self
    where
        F: Fn(usize, &[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(usize, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            dim,
            num_samples,
            num_constraints: 0,
            normalization,
            lower_bound: None,
            objective: Box::new(f),
            objective_grad: Box::new(grad),
            constraints: Box::new(|_, _| Vec::new()),
            jacobian: Box::new(|_, _| Vec::new()),
        }
    }

    /// Attaches `m` constraints per sample.
    pub fn with_constraints<G, J>(mut self, m: usize, g: G, jac: J) -> Self
    where
        G: Fn(usize, &[f64]) -> Vec<f64> + Send + Sync + 'static,
        J: Fn(usize, &[f64]) -> Vec<Vec<f64>> + Send + Sync + 'static,
    {
        self.num_constraints = m;
        self.constraints = Box::new(g);
        self.jacobian = Box::new(jac);
        self
    }

    pub fn with_lower_bound(mut self, f_star: f64) -> Self {
        self.lower_bound = Some(f_star);
        self
    }
}

impl FiniteSumProblem for FnProblem {
    fn dim(&self) -> usize {
        self.dim
    }
    fn num_samples(&self) -> usize {
        self.num_samples
    }
    fn num_constraints(&self) -> usize {
        self.num_constraints
    }
    fn normalization(&self) -> Normalization {
        self.normalization
    }
    fn lower_bound(&self) -> Option<f64> {
        self.lower_bound
    }
    fn sample_objective(&self, j: usize, x: &[f64]) -> f64 {
        (self.objective)(j, x)
    }
    fn sample_objective_grad(&self, j: usize, x: &[f64]) -> Vec<f64> {
        (self.objective_grad)(j, x)
    }
    fn sample_constraints(&self, j: usize, x: &[f64]) -> Vec<f64> {
        (self.constraints)(j, x)
    }
    fn sample_constraint_jacobian(&self, j: usize, x: &[f64]) -> Vec<Vec<f64>> {
        (self.jacobian)(j, x)
    }
}
