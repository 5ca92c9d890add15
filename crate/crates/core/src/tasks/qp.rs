//! Convex QPs with linear inequality constraints and certified KKT points.
//!
//! `f(x) = 1/2 x'Qx + b'x + r`, `g_i(x) = a_i'x - c_i <= 0`. The solution is
//! found by enumerating active sets and solving each equality-constrained KKT
//! system; with `Q` positive definite the first feasible, dual-feasible
//! solution is the global minimizer.

use nalgebra::{DMatrix, DVector};

use crate::diagnostics::{elicq_check, kkt_residual, DEFAULT_ACT_TOL};
use crate::error::{invalid, Result, SeqPenError};
use crate::penalty::MultiplierVector;
use crate::problem::{FiniteSumProblem, Normalization, ParameterVector};

/// Largest constraint count accepted by the brute-force active-set search.
pub const MAX_QP_CONSTRAINTS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct QpSpec {
    pub q: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub r: f64,
    /// Constraint rows `a_i`.
    pub a: Vec<Vec<f64>>,
    pub c: Vec<f64>,
}

impl QpSpec {
    /// `min x^2  s.t.  x >= 1`; solution `x* = 1`, `lambda* = 2`.
    pub fn square_above_one() -> Self {
        Self {
            q: vec![vec![2.0]],
            b: vec![0.0],
            r: 0.0,
            a: vec![vec![-1.0]],
            c: vec![-1.0],
        }
    }

    /// `min ||x||^2  s.t.  x1 + x2 >= 2`; solution `(1, 1)`, `lambda* = 2`.
    pub fn norm_above_line() -> Self {
        Self {
            q: vec![vec![2.0, 0.0], vec![0.0, 2.0]],
            b: vec![0.0, 0.0],
            r: 0.0,
            a: vec![vec![-1.0, -1.0]],
            c: vec![-2.0],
        }
    }

    /// `min (x - 0.5)^2  s.t.  x <= 1`; the constraint is inactive.
    pub fn inactive_bound() -> Self {
        Self {
            q: vec![vec![2.0]],
            b: vec![-1.0],
            r: 0.25,
            a: vec![vec![1.0]],
            c: vec![1.0],
        }
    }

    /// Named presets used by the experiment harness.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "square_above_one" => Some(Self::square_above_one()),
            "norm_above_line" => Some(Self::norm_above_line()),
            "inactive_bound" => Some(Self::inactive_bound()),
            _ => None,
        }
    }

    pub const PRESETS: [&'static str; 3] = ["square_above_one", "norm_above_line", "inactive_bound"];
}

/// Single-sample QP with its KKT pair.
#[derive(Debug, Clone)]
pub struct AnalyticQP {
    q: DMatrix<f64>,
    b: DVector<f64>,
    r: f64,
    a: DMatrix<f64>,
    c: DVector<f64>,
    x_star: ParameterVector,
    lambda_star: Vec<f64>,
    f_lower: f64,
}

pub fn build_analytic_qp(spec: &QpSpec) -> Result<AnalyticQP> {
    let n = spec.b.len();
    let m = spec.c.len();
    if n == 0 {
        return Err(invalid("QP needs at least one variable"));
    }
    if spec.q.len() != n || spec.q.iter().any(|row| row.len() != n) {
        return Err(invalid("Q must be n x n"));
    }
    if spec.a.len() != m || spec.a.iter().any(|row| row.len() != n) {
        return Err(invalid("A must be m x n with m = len(c)"));
    }
    if m > MAX_QP_CONSTRAINTS {
        return Err(invalid(format!(
            "at most {MAX_QP_CONSTRAINTS} constraints supported, got {m}"
        )));
    }
    let q = DMatrix::from_fn(n, n, |i, j| spec.q[i][j]);
    if (&q - q.transpose()).amax() > 1e-12 * q.amax().max(1.0) {
        return Err(invalid("Q must be symmetric"));
    }
    let chol = q
        .clone()
        .cholesky()
        .ok_or_else(|| invalid("Q must be positive definite"))?;
    let b = DVector::from_column_slice(&spec.b);
    let a = DMatrix::from_fn(m, n, |i, j| spec.a[i][j]);
    let c = DVector::from_column_slice(&spec.c);
    let f_lower = spec.r - 0.5 * b.dot(&chol.solve(&b));

    let mut subsets: Vec<u32> = (0..(1u32 << m)).collect();
    subsets.sort_by_key(|s| (s.count_ones(), *s));
    for &set in &subsets {
        let active: Vec<usize> = (0..m).filter(|i| set & (1 << i) != 0).collect();
        let k = active.len();
        let mut kkt = DMatrix::<f64>::zeros(n + k, n + k);
        let mut rhs = DVector::<f64>::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&q);
        for (row, &i) in active.iter().enumerate() {
            for col in 0..n {
                kkt[(n + row, col)] = a[(i, col)];
                kkt[(col, n + row)] = a[(i, col)];
            }
            rhs[n + row] = c[i];
        }
        for col in 0..n {
            rhs[col] = -b[col];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        if sol.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let x = sol.rows(0, n).into_owned();
        let scale = 1.0 + x.amax();
        let slack = &a * &x - &c;
        if slack.iter().any(|&s| s > 1e-10 * scale) {
            continue;
        }
        let mut lambda = vec![0.0; m];
        let mut dual_ok = true;
        for (row, &i) in active.iter().enumerate() {
            let l = sol[n + row];
            if l < -1e-12 * scale {
                dual_ok = false;
                break;
            }
            lambda[i] = l.max(0.0);
        }
        if !dual_ok {
            continue;
        }
        let qp = AnalyticQP {
            q,
            b,
            r: spec.r,
            a,
            c,
            x_star: x.iter().copied().collect::<Vec<_>>().into(),
            lambda_star: lambda,
            f_lower,
        };
        qp.certify()?;
        return Ok(qp);
    }
    Err(SeqPenError::NoKktPoint { tried: subsets.len() })
}

impl AnalyticQP {
    pub fn x_star(&self) -> &ParameterVector {
        &self.x_star
    }

    pub fn lambda_star(&self) -> &[f64] {
        &self.lambda_star
    }

    pub fn multipliers_star(&self) -> MultiplierVector {
        let m = self.lambda_star.len();
        MultiplierVector::new(ndarray::Array2::from_shape_vec((1, m), self.lambda_star.clone()).expect("shape"))
            .expect("non-negative by construction")
    }

    fn certify(&self) -> Result<()> {
        let report = kkt_residual(self, &self.x_star, &self.multipliers_star())?;
        if report.max_residual() > 1e-10 {
            return Err(invalid(format!(
                "KKT certification failed (residual {:e})",
                report.max_residual()
            )));
        }
        if !elicq_check(self, &self.x_star, DEFAULT_ACT_TOL)?.holds {
            return Err(invalid("LICQ fails at the QP solution"));
        }
        Ok(())
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        0.5 * x.dot(&(&self.q * &x)) + self.b.dot(&x) + self.r
    }

    fn objective_grad(&self, x: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(x);
        (&self.q * &x + &self.b).iter().copied().collect()
    }

    fn constraints(&self, x: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(x);
        (&self.a * &x - &self.c).iter().copied().collect()
    }

    fn jacobian(&self) -> Vec<Vec<f64>> {
        self.a.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

impl FiniteSumProblem for AnalyticQP {
    fn dim(&self) -> usize {
        self.b.len()
    }
    fn num_samples(&self) -> usize {
        1
    }
    fn num_constraints(&self) -> usize {
        self.c.len()
    }
    fn normalization(&self) -> Normalization {
        Normalization::Sum
    }
    fn lower_bound(&self) -> Option<f64> {
        Some(self.f_lower)
    }
    fn sample_objective(&self, _j: usize, x: &[f64]) -> f64 {
        self.objective(x)
    }
    fn sample_objective_grad(&self, _j: usize, x: &[f64]) -> Vec<f64> {
        self.objective_grad(x)
    }
    fn sample_constraints(&self, _j: usize, x: &[f64]) -> Vec<f64> {
        self.constraints(x)
    }
    fn sample_constraint_jacobian(&self, _j: usize, _x: &[f64]) -> Vec<Vec<f64>> {
        self.jacobian()
    }
}

/// Splits a single-sample problem into `N` weighted samples:
/// `f_j = w_j f`, `g_ij = sqrt(w_j) g_i`, with `sum w_j = 1`.
///
/// Under sum normalization the quadratic penalty function is unchanged, so
/// every penalty minimizer carries over, while minibatch gradients become
/// genuinely stochastic.
#[derive(Debug, Clone)]
pub struct WeightedSplit<P> {
    inner: P,
    weights: Vec<f64>,
}

impl<P: FiniteSumProblem> WeightedSplit<P> {
    pub fn new(inner: P, weights: &[f64]) -> Result<Self> {
        if inner.num_samples() != 1 {
            return Err(invalid("WeightedSplit wraps single-sample problems"));
        }
        if weights.is_empty() || weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(invalid("split weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        Ok(Self {
            inner,
            weights: weights.iter().map(|w| w / total).collect(),
        })
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl<P: FiniteSumProblem> FiniteSumProblem for WeightedSplit<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn num_samples(&self) -> usize {
        self.weights.len()
    }
    fn num_constraints(&self) -> usize {
        self.inner.num_constraints()
    }
    fn normalization(&self) -> Normalization {
        Normalization::Sum
    }
    fn lower_bound(&self) -> Option<f64> {
        self.inner.lower_bound()
    }
    fn sample_objective(&self, j: usize, x: &[f64]) -> f64 {
        self.weights[j] * self.inner.sample_objective(0, x)
    }
    fn sample_objective_grad(&self, j: usize, x: &[f64]) -> Vec<f64> {
        let w = self.weights[j];
        self.inner
            .sample_objective_grad(0, x)
            .into_iter()
            .map(|g| w * g)
            .collect()
    }
    fn sample_constraints(&self, j: usize, x: &[f64]) -> Vec<f64> {
        let s = self.weights[j].sqrt();
        self.inner.sample_constraints(0, x).into_iter().map(|g| s * g).collect()
    }
    fn sample_constraint_jacobian(&self, j: usize, x: &[f64]) -> Vec<Vec<f64>> {
        let s = self.weights[j].sqrt();
        self.inner
            .sample_constraint_jacobian(0, x)
            .into_iter()
            .map(|row| row.into_iter().map(|v| s * v).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalty::{penalty_value_full, PenaltyKind, PenaltySpec};
    use crate::problem::full_objective;

    #[test]
    fn square_above_one_solution() {
        let qp = build_analytic_qp(&QpSpec::square_above_one()).unwrap();
        assert!((qp.x_star()[0] - 1.0).abs() < 1e-14);
        assert!((qp.lambda_star()[0] - 2.0).abs() < 1e-14);
        assert_eq!(qp.lower_bound(), Some(0.0));
    }

    #[test]
    fn norm_above_line_solution() {
        let qp = build_analytic_qp(&QpSpec::norm_above_line()).unwrap();
        assert!((qp.x_star()[0] - 1.0).abs() < 1e-14 && (qp.x_star()[1] - 1.0).abs() < 1e-14);
        assert!((qp.lambda_star()[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn inactive_constraint_solution() {
        let qp = build_analytic_qp(&QpSpec::inactive_bound()).unwrap();
        assert!((qp.x_star()[0] - 0.5).abs() < 1e-14);
        assert_eq!(qp.lambda_star()[0], 0.0);
        assert!(full_objective(&qp, &[0.5]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn infeasible_qp_has_no_kkt_point() {
        // x <= -1 and x >= 1
        let spec = QpSpec {
            q: vec![vec![2.0]],
            b: vec![0.0],
            r: 0.0,
            a: vec![vec![1.0], vec![-1.0]],
            c: vec![-1.0, -1.0],
        };
        assert!(matches!(
            build_analytic_qp(&spec),
            Err(SeqPenError::NoKktPoint { tried: 4 })
        ));
    }

    #[test]
    fn rejects_indefinite_q() {
        let mut spec = QpSpec::square_above_one();
        spec.q = vec![vec![-1.0]];
        assert!(build_analytic_qp(&spec).is_err());
    }

    #[test]
    fn box_qp_with_two_active_constraints() {
        // min (x-2)^2 + (y-2)^2 s.t. x <= 1, y <= 1  ->  (1, 1), lambda = (2, 2)
        let spec = QpSpec {
            q: vec![vec![2.0, 0.0], vec![0.0, 2.0]],
            b: vec![-4.0, -4.0],
            r: 8.0,
            a: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            c: vec![1.0, 1.0],
        };
        let qp = build_analytic_qp(&spec).unwrap();
        assert_eq!(qp.x_star().as_slice(), &[1.0, 1.0]);
        assert_eq!(qp.lambda_star(), &[2.0, 2.0]);
    }

    #[test]
    fn split_preserves_penalty() {
        let qp = build_analytic_qp(&QpSpec::square_above_one()).unwrap();
        let split = WeightedSplit::new(qp.clone(), &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let spec = PenaltySpec::new(PenaltyKind::Quadratic, 100.0).unwrap();
        for x in [-1.0, 0.0, 0.5, 0.9804, 2.0] {
            let a = penalty_value_full(&qp, &spec, &[x]).unwrap();
            let b = penalty_value_full(&split, &spec, &[x]).unwrap();
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0), "{x}: {a} vs {b}");
        }
    }
}
