//! Stochastic inner solver for penalty subproblems `min_x P_tau(x)`.
//!
//! Two modes:
//!
//! * `Theoretical`: constant-step SGD. Every step draws a fresh batch
//!   (independently of earlier steps) and uses the unbiased gradient estimate
//!   `N/b * sum_batch grad P^j` (sum normalization) or `1/b * sum_batch grad P^j`
//!   (mean normalization). The candidate is drawn uniformly from
//!   `{z^0, ..., z^{T-1}}` unless [`CandidateRule::LastIterate`] is chosen.
//! * `Practical`: Adam over shuffled epochs, returning the last iterate.
//!
//! Runs are bit-deterministic for a given config and seed.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result, SeqPenError};
use crate::penalty::{penalty_grad_batch, penalty_grad_full, penalty_value_full, PenaltySpec};
use crate::problem::{check_dim, norm2, FiniteSumProblem, Minibatch, Normalization, ParameterVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverMode {
    Theoretical,
    Practical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateRule {
    UniformSample,
    LastIterate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    /// L2 term added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Axis-aligned box `[lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(SeqPenError::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(invalid("box bounds need lower <= upper"));
        }
        Ok(Self { lower, upper })
    }

    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    /// Clamps `x` into the box; returns whether anything moved.
    pub fn project(&self, x: &mut [f64]) -> bool {
        let mut moved = false;
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            let c = v.clamp(*l, *u);
            if c != *v {
                *v = c;
                moved = true;
            }
        }
        moved
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig {
    pub stepsize: f64,
    pub batch_size: usize,
    pub mode: SolverMode,
    /// Steps (theoretical mode) or epochs (practical mode).
    pub budget: usize,
    pub clip_box: Option<BoxBounds>,
    pub adam: AdamParams,
    pub rng_seed: u64,
    pub candidate: CandidateRule,
    /// Theoretical mode: record the full penalty every this many steps
    /// (0 = never). Practical mode always records one value per epoch.
    pub trace_every: usize,
    /// Probes for the closing gradient-norm estimate.
    pub grad_norm_probes: usize,
    /// Parameter ranges that are never updated.
    pub frozen: Vec<Range<usize>>,
}

impl SgdConfig {
    /// Constant-step SGD with uniform iterate sampling.
    pub fn theoretical(stepsize: f64, batch_size: usize, steps: usize, rng_seed: u64) -> Self {
        Self {
            stepsize,
            batch_size,
            mode: SolverMode::Theoretical,
            budget: steps,
            clip_box: None,
            adam: AdamParams::default(),
            rng_seed,
            candidate: CandidateRule::UniformSample,
            trace_every: 0,
            grad_norm_probes: 4,
            frozen: Vec::new(),
        }
    }

    /// Adam over `epochs` shuffled passes, returning the last iterate.
    pub fn practical(stepsize: f64, batch_size: usize, epochs: usize, rng_seed: u64) -> Self {
        Self {
            mode: SolverMode::Practical,
            candidate: CandidateRule::LastIterate,
            ..Self::theoretical(stepsize, batch_size, epochs, rng_seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stepsize > 0.0 && self.stepsize.is_finite()) {
            return Err(invalid(format!("stepsize must be positive, got {}", self.stepsize)));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be at least 1"));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(invalid("adam betas must lie in [0, 1)"));
        }
        if !(a.eps_hat > 0.0) || !(a.weight_decay >= 0.0) {
            return Err(invalid("adam eps_hat must be > 0 and weight_decay >= 0"));
        }
        if self.grad_norm_probes == 0 {
            return Err(invalid("grad_norm_probes must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerReport {
    pub candidate: ParameterVector,
    pub last_iterate: ParameterVector,
    /// Iterates produced, `z^0` included.
    pub iterate_count: usize,
    /// Index of the drawn iterate under uniform sampling.
    pub sampled_index: Option<usize>,
    /// Estimate of `||grad P_tau(candidate)||`.
    pub grad_norm_estimate: f64,
    /// Penalty values (see [`SgdConfig::trace_every`]).
    pub trace: Vec<f64>,
    /// Steps where the clip box had to project the iterate.
    pub box_activations: usize,
}

#[derive(Debug, Clone)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Solver whose random stream and Adam moments persist across calls to
/// [`run`](Self::run); used by drivers that change `tau` between epochs.
#[derive(Debug, Clone)]
pub struct SgdSession {
    config: SgdConfig,
    rng: ChaCha8Rng,
    adam: Option<AdamState>,
}

impl SgdSession {
    pub fn new(config: SgdConfig) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        Ok(Self {
            config,
            rng,
            adam: None,
        })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    /// Overrides the budget for subsequent runs.
    pub fn set_budget(&mut self, budget: usize) {
        self.config.budget = budget;
    }

    pub fn set_stepsize(&mut self, stepsize: f64) -> Result<()> {
        if !(stepsize > 0.0 && stepsize.is_finite()) {
            return Err(invalid(format!("stepsize must be positive, got {stepsize}")));
        }
        self.config.stepsize = stepsize;
        Ok(())
    }

    pub fn run<P: FiniteSumProblem + ?Sized>(
        &mut self,
        problem: &P,
        spec: &PenaltySpec,
        x0: &ParameterVector,
    ) -> Result<InnerReport> {
        check_dim(problem, x0)?;
        if let Some(c) = x0.first_non_finite() {
            return Err(SeqPenError::NonFiniteIterate {
                iteration: 0,
                coordinate: c,
            });
        }
        if let Some(b) = &self.config.clip_box {
            if b.dim() != problem.dim() {
                return Err(SeqPenError::DimensionMismatch {
                    expected: problem.dim(),
                    got: b.dim(),
                });
            }
        }
        let trainable = trainable_mask(problem.dim(), &self.config.frozen);
        let mut report = match self.config.mode {
            SolverMode::Theoretical => self.run_sgd(problem, spec, x0, &trainable)?,
            SolverMode::Practical => self.run_adam(problem, spec, x0, &trainable)?,
        };
        let seed = self.rng.gen::<u64>();
        report.grad_norm_estimate =
            grad_norm_estimate(problem, spec, &report.candidate, self.config.grad_norm_probes, seed)?;
        Ok(report)
    }

    fn batch_scale(&self, n: usize, b: usize, normalization: Normalization) -> f64 {
        match normalization {
            Normalization::Sum => n as f64 / b as f64,
            Normalization::Mean => 1.0 / b as f64,
        }
    }

    fn run_sgd<P: FiniteSumProblem + ?Sized>(
        &mut self,
        problem: &P,
        spec: &PenaltySpec,
        x0: &ParameterVector,
        trainable: &Option<Vec<bool>>,
    ) -> Result<InnerReport> {
        let cfg = self.config.clone();
        let n = problem.num_samples();
        let steps = cfg.budget;
        let mut z = x0.clone();
        let mut box_activations = 0;
        if let Some(b) = &cfg.clip_box {
            if b.project(&mut z) {
                box_activations += 1;
            }
        }
        let sampled_index = match cfg.candidate {
            CandidateRule::UniformSample if steps > 0 => Some(self.rng.gen_range(0..steps)),
            _ => None,
        };
        let mut candidate = None;
        let mut trace = Vec::new();
        let b = cfg.batch_size.min(n);
        let scale = self.batch_scale(n, b, problem.normalization());

        for t in 0..steps {
            if Some(t) == sampled_index {
                candidate = Some(z.clone());
            }
            if cfg.trace_every > 0 && t % cfg.trace_every == 0 {
                trace.push(penalty_value_full(problem, spec, &z)?);
            }
            let batch = Minibatch::draw(n, b, &mut self.rng);
            let (grad, _) = penalty_grad_batch(problem, spec, &z, batch.indices(), scale)?;
            step(&mut z, &grad, cfg.stepsize, trainable);
            if let Some(bx) = &cfg.clip_box {
                if bx.project(&mut z) {
                    box_activations += 1;
                }
            }
            if let Some(c) = z.first_non_finite() {
                return Err(SeqPenError::NonFiniteIterate {
                    iteration: t + 1,
                    coordinate: c,
                });
            }
        }
        if cfg.trace_every > 0 && steps.is_multiple_of(cfg.trace_every) {
            trace.push(penalty_value_full(problem, spec, &z)?);
        }
        let candidate = candidate.unwrap_or_else(|| z.clone());
        Ok(InnerReport {
            candidate,
            last_iterate: z,
            iterate_count: steps + 1,
            sampled_index,
            grad_norm_estimate: 0.0,
            trace,
            box_activations,
        })
    }

    fn run_adam<P: FiniteSumProblem + ?Sized>(
        &mut self,
        problem: &P,
        spec: &PenaltySpec,
        x0: &ParameterVector,
        trainable: &Option<Vec<bool>>,
    ) -> Result<InnerReport> {
        let cfg = self.config.clone();
        let n = problem.num_samples();
        let dim = problem.dim();
        let mut z = x0.clone();
        let mut box_activations = 0;
        if let Some(b) = &cfg.clip_box {
            if b.project(&mut z) {
                box_activations += 1;
            }
        }
        let adam = self.adam.get_or_insert_with(|| AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        });
        if adam.m.len() != dim {
            return Err(SeqPenError::DimensionMismatch {
                expected: adam.m.len(),
                got: dim,
            });
        }
        let p = cfg.adam;
        let mut steps = 0usize;
        let mut trace = Vec::with_capacity(cfg.budget);
        for _epoch in 0..cfg.budget {
            let batches = Minibatch::epoch_partition(n, cfg.batch_size, &mut self.rng);
            let mut epoch_penalty = 0.0;
            for batch in &batches {
                let b = batch.len();
                let scale = match problem.normalization() {
                    Normalization::Sum => n as f64 / b as f64,
                    Normalization::Mean => 1.0 / b as f64,
                };
                let (mut grad, evals) = penalty_grad_batch(problem, spec, &z, batch.indices(), scale)?;
                epoch_penalty += evals.iter().map(|e| spec.sample_value(e)).sum::<f64>();

                adam.t += 1;
                let bc1 = 1.0 - p.beta1.powi(adam.t as i32);
                let bc2 = 1.0 - p.beta2.powi(adam.t as i32);
                for k in 0..dim {
                    if let Some(mask) = trainable {
                        if !mask[k] {
                            continue;
                        }
                    }
                    let g = grad[k] + p.weight_decay * z[k];
                    grad[k] = g;
                    adam.m[k] = p.beta1 * adam.m[k] + (1.0 - p.beta1) * g;
                    adam.v[k] = p.beta2 * adam.v[k] + (1.0 - p.beta2) * g * g;
                    let m_hat = adam.m[k] / bc1;
                    let v_hat = adam.v[k] / bc2;
                    z[k] -= cfg.stepsize * m_hat / (v_hat.sqrt() + p.eps_hat);
                }
                if let Some(bx) = &cfg.clip_box {
                    if bx.project(&mut z) {
                        box_activations += 1;
                    }
                }
                steps += 1;
                if let Some(c) = z.first_non_finite() {
                    return Err(SeqPenError::NonFiniteIterate {
                        iteration: steps,
                        coordinate: c,
                    });
                }
            }
            let w = problem.normalization().weight(n);
            trace.push(epoch_penalty * w);
        }
        Ok(InnerReport {
            candidate: z.clone(),
            last_iterate: z,
            iterate_count: steps + 1,
            sampled_index: None,
            grad_norm_estimate: 0.0,
            trace,
            box_activations,
        })
    }
}

fn trainable_mask(dim: usize, frozen: &[Range<usize>]) -> Option<Vec<bool>> {
    if frozen.is_empty() {
        return None;
    }
    let mut mask = vec![true; dim];
    for r in frozen {
        let (lo, hi) = (r.start.min(dim), r.end.min(dim));
        mask[lo..hi.max(lo)].fill(false);
    }
    Some(mask)
}

fn step(z: &mut [f64], grad: &[f64], eta: f64, trainable: &Option<Vec<bool>>) {
    match trainable {
        None => {
            for (zi, gi) in z.iter_mut().zip(grad) {
                *zi -= eta * gi;
            }
        }
        Some(mask) => {
            for ((zi, gi), &on) in z.iter_mut().zip(grad).zip(mask) {
                if on {
                    *zi -= eta * gi;
                }
            }
        }
    }
}

/// Approximately minimizes `P_tau` from `x0`. A budget of 0 returns `x0`.
pub fn sgd_run<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    spec: &PenaltySpec,
    x0: &ParameterVector,
    config: &SgdConfig,
) -> Result<InnerReport> {
    SgdSession::new(config.clone())?.run(problem, spec, x0)
}

/// Steps sufficient for `E||grad P_tau(x_hat)|| <= eps` under uniform
/// iterate sampling: `ceil(2 rho L gap / eps^2)`.
pub fn iteration_budget(rho: f64, lipschitz: f64, gap: f64, eps: f64) -> Result<u64> {
    for (name, v) in [("rho", rho), ("L", lipschitz), ("gap", gap), ("eps", eps)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(invalid(format!("{name} must be positive and finite, got {v}")));
        }
    }
    let t = 2.0 * rho * lipschitz * gap / (eps * eps);
    if !t.is_finite() || t > u64::MAX as f64 {
        return Err(invalid("iteration budget overflows"));
    }
    // absorb rounding noise such as 2 / 0.1^2 = 199.99999999999997
    let r = t.round();
    if (t - r).abs() <= 1e-9 * r.max(1.0) {
        Ok(r as u64)
    } else {
        Ok(t.ceil() as u64)
    }
}

/// Problems with at most this many samples get exact gradient norms.
pub const EXACT_GRAD_NORM_LIMIT: usize = 2048;
const PROBE_BATCH: usize = 256;

/// `||grad P_tau(x)||` computed over all samples.
pub fn exact_grad_norm<P: FiniteSumProblem + ?Sized>(problem: &P, spec: &PenaltySpec, x: &[f64]) -> Result<f64> {
    Ok(norm2(&penalty_grad_full(problem, spec, x)?))
}

/// Gradient-norm estimate at `x`: exact for small `N`, otherwise the mean
/// norm of `num_probes` unbiased minibatch gradients. The Monte-Carlo value
/// is biased upward by the minibatch variance.
pub fn grad_norm_estimate<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    spec: &PenaltySpec,
    x: &[f64],
    num_probes: usize,
    rng_seed: u64,
) -> Result<f64> {
    if num_probes == 0 {
        return Err(invalid("num_probes must be at least 1"));
    }
    let n = problem.num_samples();
    if n <= EXACT_GRAD_NORM_LIMIT {
        return exact_grad_norm(problem, spec, x);
    }
    check_dim(problem, x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let b = PROBE_BATCH.min(n);
    let scale = match problem.normalization() {
        Normalization::Sum => n as f64 / b as f64,
        Normalization::Mean => 1.0 / b as f64,
    };
    let mut total = 0.0;
    for _ in 0..num_probes {
        let batch = Minibatch::draw(n, b, &mut rng);
        let (g, _) = penalty_grad_batch(problem, spec, x, batch.indices(), scale)?;
        total += norm2(&g);
    }
    Ok(total / num_probes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalty::PenaltyKind;
    use crate::problem::FnProblem;

    fn square() -> FnProblem {
        FnProblem::new(1, 1, Normalization::Sum, |_, x| x[0] * x[0], |_, x| vec![2.0 * x[0]])
    }

    fn qp() -> FnProblem {
        square().with_constraints(1, |_, x| vec![1.0 - x[0]], |_, _| vec![vec![-1.0]])
    }

    fn quad(tau: f64) -> PenaltySpec {
        PenaltySpec::new(PenaltyKind::Quadratic, tau).unwrap()
    }

    #[test]
    fn hand_iterated_gradient_descent() {
        let mut cfg = SgdConfig::theoretical(0.25, 1, 3, 0);
        cfg.trace_every = 1;
        let r = sgd_run(&square(), &quad(1.0), &vec![1.0].into(), &cfg).unwrap();
        assert_eq!(r.last_iterate.as_slice(), &[0.125]);
        // penalty values are z^2 along 1, 0.5, 0.25, 0.125
        assert_eq!(r.trace, vec![1.0, 0.25, 0.0625, 0.015625]);
        assert_eq!(r.iterate_count, 4);
        let idx = r.sampled_index.unwrap();
        assert!(idx < 3);
        assert_eq!(r.candidate[0], [1.0, 0.5, 0.25][idx]);
    }

    #[test]
    fn zero_budget_returns_start() {
        let x0: ParameterVector = vec![0.3].into();
        for cfg in [SgdConfig::theoretical(0.1, 1, 0, 5), SgdConfig::practical(0.1, 1, 0, 5)] {
            let r = sgd_run(&qp(), &quad(3.0), &x0, &cfg).unwrap();
            assert_eq!(r.candidate, x0);
            assert_eq!(r.iterate_count, 1);
            assert!(r.sampled_index.is_none());
        }
    }

    #[test]
    fn reaches_penalty_minimizer() {
        let tau = 100.0;
        let cfg = SgdConfig::theoretical(1e-3, 1, 10_000, 11);
        let r = sgd_run(&qp(), &quad(tau), &vec![0.0].into(), &cfg).unwrap();
        let x_tau = tau / (2.0 + tau);
        assert!((r.candidate[0] - x_tau).abs() < 1e-2, "{}", r.candidate[0]);
    }

    #[test]
    fn clip_box_contains_iterates() {
        let mut cfg = SgdConfig::theoretical(0.4, 1, 50, 2);
        cfg.clip_box = Some(BoxBounds::uniform(1, 0.5, 2.0).unwrap());
        cfg.trace_every = 1;
        let r = sgd_run(&square(), &quad(1.0), &vec![1.9].into(), &cfg).unwrap();
        assert_eq!(r.last_iterate[0], 0.5);
        assert!(r.box_activations > 0);
        assert!(cfg.clip_box.as_ref().unwrap().contains(&r.candidate));
    }

    #[test]
    fn divergence_is_reported() {
        let linear = FnProblem::new(1, 1, Normalization::Sum, |_, x| x[0], |_, _| vec![1.0]);
        let cfg = SgdConfig::theoretical(1e308, 1, 5, 0);
        let err = sgd_run(&linear, &quad(1.0), &vec![1.0].into(), &cfg).unwrap_err();
        assert!(
            matches!(
                err,
                SeqPenError::NonFiniteIterate {
                    iteration: 2,
                    coordinate: 0
                }
            ),
            "{err}"
        );
        // x^2 overflows in the objective before the iterate does
        let cfg = SgdConfig::theoretical(1e3, 1, 500, 0);
        let err = sgd_run(&square(), &quad(1.0), &vec![1.0].into(), &cfg).unwrap_err();
        assert!(matches!(err, SeqPenError::NonFiniteObjective { sample: 0 }), "{err}");
    }

    #[test]
    fn frozen_coordinates_do_not_move() {
        let p = FnProblem::new(
            2,
            1,
            Normalization::Sum,
            |_, x| x[0] * x[0] + x[1] * x[1],
            |_, x| vec![2.0 * x[0], 2.0 * x[1]],
        );
        let mut cfg = SgdConfig::practical(0.1, 1, 3, 0);
        cfg.frozen.push(1..2);
        cfg.adam.weight_decay = 0.1;
        let r = sgd_run(&p, &quad(1.0), &vec![1.0, 1.0].into(), &cfg).unwrap();
        assert_eq!(r.last_iterate[1], 1.0);
        assert!(r.last_iterate[0] < 1.0);
    }

    #[test]
    fn adam_first_step_moves_by_stepsize() {
        // bias-corrected first Adam step is lr * g / (|g| + eps)
        let cfg = SgdConfig::practical(0.01, 1, 1, 0);
        let r = sgd_run(&square(), &quad(1.0), &vec![3.0].into(), &cfg).unwrap();
        let expected = 3.0 - 0.01 * 6.0 / (6.0 + 1e-8);
        assert!((r.last_iterate[0] - expected).abs() < 1e-15);
        assert_eq!(r.iterate_count, 2);
    }

    #[test]
    fn session_keeps_adam_state() {
        let cfg = SgdConfig::practical(0.01, 1, 1, 0);
        let mut s = SgdSession::new(cfg.clone()).unwrap();
        let a = s.run(&square(), &quad(1.0), &vec![3.0].into()).unwrap();
        let b = s.run(&square(), &quad(1.0), &a.last_iterate).unwrap();
        let mut two = cfg;
        two.budget = 2;
        let c = sgd_run(&square(), &quad(1.0), &vec![3.0].into(), &two).unwrap();
        assert_eq!(b.last_iterate, c.last_iterate);
    }

    #[test]
    fn budget_formula() {
        assert_eq!(iteration_budget(1.0, 1.0, 1.0, 0.1).unwrap(), 200);
        assert_eq!(iteration_budget(1.0, 1.0, 1.0, 1.0).unwrap(), 2);
        assert_eq!(iteration_budget(1.0, 1.0, 1.0, 0.05).unwrap(), 800);
        assert_eq!(iteration_budget(1.0, 1.0, 1.0, 0.3).unwrap(), 23);
        assert!(iteration_budget(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(iteration_budget(1.0, 1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn grad_norm_values() {
        let tau = 100.0;
        let x = tau / (2.0 + tau);
        assert!(grad_norm_estimate(&qp(), &quad(tau), &[x], 1, 0).unwrap() < 1e-8);
        assert_eq!(grad_norm_estimate(&square(), &quad(1.0), &[0.0], 1, 0).unwrap(), 0.0);
        let p = FnProblem::new(
            2,
            1,
            Normalization::Sum,
            |_, x| 3.0 * x[0] + 4.0 * x[1],
            |_, _| vec![3.0, 4.0],
        );
        assert_eq!(exact_grad_norm(&p, &quad(1.0), &[0.0, 0.0]).unwrap(), 5.0);
        assert!(grad_norm_estimate(&p, &quad(1.0), &[0.0, 0.0], 0, 0).is_err());
    }

    #[test]
    fn monte_carlo_norm_on_large_problem() {
        let n = EXACT_GRAD_NORM_LIMIT + 100;
        // identical samples: every minibatch gradient equals the full one
        let p = FnProblem::new(
            2,
            n,
            Normalization::Mean,
            |_, x| 3.0 * x[0] + 4.0 * x[1],
            |_, _| vec![3.0, 4.0],
        );
        let v = grad_norm_estimate(&p, &quad(1.0), &[0.0, 0.0], 3, 9).unwrap();
        assert!((v - 5.0).abs() < 1e-12);
    }
}
