//! Optimality and regularity diagnostics: KKT residuals, active sets, the
//! extended LICQ rank test, and probe-based estimates of the smoothness and
//! strong-growth constants that enter the inner iteration budget.
//!
//! Constraints `g_ij` are flattened to one row per `(sample, constraint)`
//! pair. All estimates are maxima over finite probe sets and are therefore
//! lower bounds on the true suprema.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result, SeqPenError};
use crate::inner::BoxBounds;
use crate::par;
use crate::penalty::{MultiplierVector, PenaltySpec};
use crate::problem::{
    check_dim, check_evals, evaluate_all, full_objective_grad, norm2, FiniteSumProblem, GradientWeights,
    ParameterVector,
};

pub const DEFAULT_ACT_TOL: f64 = 1e-6;
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Active (`|g| <= act_tol`) and violated (`g > act_tol`) constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSet {
    pub active: Vec<(usize, usize)>,
    pub violated: Vec<(usize, usize)>,
    pub act_tol: f64,
}

impl ActiveSet {
    pub fn compute<P: FiniteSumProblem + ?Sized>(problem: &P, x: &[f64], act_tol: f64) -> Result<Self> {
        if !(act_tol >= 0.0) {
            return Err(invalid("act_tol must be >= 0"));
        }
        let evals = evaluate_all(problem, x)?;
        let mut active = Vec::new();
        let mut violated = Vec::new();
        for (j, e) in evals.iter().enumerate() {
            for (i, &g) in e.constraints.iter().enumerate() {
                if g > act_tol {
                    violated.push((j, i));
                } else if g.abs() <= act_tol {
                    active.push((j, i));
                }
            }
        }
        Ok(Self {
            active,
            violated,
            act_tol,
        })
    }

    /// `I_+`: active and violated pairs in `(j, i)` order.
    pub fn active_plus(&self) -> Vec<(usize, usize)> {
        let mut all: Vec<_> = self.active.iter().chain(&self.violated).copied().collect();
        all.sort_unstable();
        all
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `||grad f + sum lambda_ij grad g_ij||`
    pub stationarity_residual: f64,
    /// `max max{0, g_ij}`
    pub feasibility_residual: f64,
    /// `max |lambda_ij g_ij|`
    pub complementarity_residual: f64,
    pub dual_feasibility: bool,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity_residual
            .max(self.feasibility_residual)
            .max(self.complementarity_residual)
    }

    /// All residuals within `eps` and multipliers non-negative.
    pub fn is_eps_kkt(&self, eps: f64) -> bool {
        self.dual_feasibility && self.max_residual() <= eps
    }
}

/// KKT residuals of `(x, lambdas)` for the aggregated problem. Multipliers
/// are taken as-is; they must be scaled to the problem normalization (as
/// [`multiplier_estimate`](crate::penalty::multiplier_estimate) does).
pub fn kkt_residual<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    lambdas: &MultiplierVector,
) -> Result<KktReport> {
    check_dim(problem, x)?;
    let n = problem.num_samples();
    let m = problem.num_constraints();
    let lam = lambdas.lambdas();
    if lam.dim() != (n, m) {
        return Err(invalid(format!(
            "multiplier shape {:?} does not match problem shape ({n}, {m})",
            lam.dim()
        )));
    }
    let w = problem.normalization().weight(n);
    let coeff = |j: usize, i: usize, _g: f64| lam[(j, i)] / w;
    let weights = GradientWeights {
        scale: w,
        constraint_coeff: &coeff,
    };
    let indices: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; problem.dim()];
    let evals = problem.accumulate_gradient(x, &indices, &weights, &mut grad);
    check_evals(&indices, &evals)?;

    let mut feas = 0.0f64;
    let mut comp = 0.0f64;
    for (j, e) in evals.iter().enumerate() {
        for (i, &g) in e.constraints.iter().enumerate() {
            feas = feas.max(g);
            comp = comp.max((lam[(j, i)] * g).abs());
        }
    }
    Ok(KktReport {
        stationarity_residual: norm2(&grad),
        feasibility_residual: feas.max(0.0),
        complementarity_residual: comp,
        dual_feasibility: lam.iter().all(|&l| l >= 0.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElicqReport {
    pub holds: bool,
    pub num_active_plus: usize,
    /// Smallest singular value of the stacked `I_+` gradients; infinite when
    /// `I_+` is empty, 0 when there are more rows than coordinates.
    pub min_singular_value: f64,
}

/// Extended LICQ with the default rank tolerance.
pub fn elicq_check<P: FiniteSumProblem + ?Sized>(problem: &P, x: &[f64], act_tol: f64) -> Result<ElicqReport> {
    elicq_check_with(problem, x, act_tol, DEFAULT_RANK_TOL)
}

/// Checks linear independence of `grad g_ij` over `I_+(x)`; the numerical
/// rank counts singular values above `rank_tol * sigma_max`.
pub fn elicq_check_with<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    act_tol: f64,
    rank_tol: f64,
) -> Result<ElicqReport> {
    let set = ActiveSet::compute(problem, x, act_tol)?;
    let plus = set.active_plus();
    if plus.is_empty() {
        return Ok(ElicqReport {
            holds: true,
            num_active_plus: 0,
            min_singular_value: f64::INFINITY,
        });
    }
    let dim = problem.dim();
    let mut samples: Vec<usize> = plus.iter().map(|&(j, _)| j).collect();
    samples.dedup();
    let jacobians = par::map_slice(&samples, |&j| (j, problem.sample_constraint_jacobian(j, x)));
    let mut rows = DMatrix::<f64>::zeros(plus.len(), dim);
    let mut r = 0;
    for (j, jac) in &jacobians {
        for &(jj, i) in plus.iter().filter(|(jj, _)| jj == j) {
            debug_assert_eq!(jj, *j);
            for (c, v) in jac[i].iter().enumerate() {
                rows[(r, c)] = *v;
            }
            r += 1;
        }
    }
    let sv = rows.singular_values();
    let sigma_max = sv.iter().copied().fold(0.0f64, f64::max);
    let rank = sv.iter().filter(|&&s| s > rank_tol * sigma_max && s > 0.0).count();
    let min_sv = if plus.len() > dim {
        0.0
    } else {
        sv.iter().copied().fold(f64::INFINITY, f64::min)
    };
    Ok(ElicqReport {
        holds: rank == plus.len(),
        num_active_plus: plus.len(),
        min_singular_value: min_sv,
    })
}

/// Probe-based smoothness constants, one entry per flattened constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothnessEstimate {
    /// `max ||grad g||` over probes.
    pub m1: Vec<f64>,
    /// `max max{0, g}` over probes.
    pub m2: Vec<f64>,
    /// Lipschitz estimate of `grad g`.
    pub lg: Vec<f64>,
    /// Lipschitz estimate of the aggregated objective gradient.
    pub lf_est: f64,
    /// Per-sample weight of the problem normalization.
    pub weight: f64,
    pub tau: f64,
    /// `lf_est + tau * weight * sum(m1^2 + m2 * lg)`
    pub l_tau_c: f64,
}

impl SmoothnessEstimate {
    /// Composed bound for another penalty coefficient.
    pub fn composed(&self, tau: f64) -> f64 {
        let s: f64 = self
            .m1
            .iter()
            .zip(self.m2.iter().zip(&self.lg))
            .map(|(m1, (m2, lg))| m1 * m1 + m2 * lg)
            .sum();
        self.lf_est + tau * self.weight * s
    }
}

/// Estimates the smoothness constant of the quadratic penalty on a box.
///
/// The first two probes are the lower and upper corners; the rest are drawn
/// uniformly from the box. Lipschitz constants are maxima of difference
/// quotients over all probe pairs.
pub fn smoothness_estimate<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    spec: &PenaltySpec,
    probe_box: &BoxBounds,
    num_probes: usize,
    rng_seed: u64,
) -> Result<SmoothnessEstimate> {
    if probe_box.dim() != problem.dim() {
        return Err(SeqPenError::DimensionMismatch {
            expected: problem.dim(),
            got: probe_box.dim(),
        });
    }
    if num_probes < 2 {
        return Err(invalid("smoothness_estimate needs at least 2 probes"));
    }
    if let Some(c) = probe_box
        .lower()
        .iter()
        .zip(probe_box.upper())
        .position(|(l, u)| !(u > l) || !l.is_finite() || !u.is_finite())
    {
        return Err(SeqPenError::DegenerateBox { coordinate: c });
    }
    let probes = box_probes(probe_box, num_probes, rng_seed);

    struct ProbeData {
        obj_grad: Vec<f64>,
        g: Vec<f64>,
        jac: Vec<Vec<f64>>,
    }
    let n = problem.num_samples();
    let data = probes
        .iter()
        .map(|x| -> Result<ProbeData> {
            let evals = evaluate_all(problem, x)?;
            let obj_grad = full_objective_grad(problem, x)?;
            let jacs = par::map_range(n, |j| problem.sample_constraint_jacobian(j, x));
            Ok(ProbeData {
                obj_grad,
                g: evals.iter().flat_map(|e| e.constraints.iter().copied()).collect(),
                jac: jacs.into_iter().flatten().collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let rows = data[0].g.len();
    let mut m1 = vec![0.0f64; rows];
    let mut m2 = vec![0.0f64; rows];
    let mut lg = vec![0.0f64; rows];
    let mut lf = 0.0f64;
    for d in &data {
        for r in 0..rows {
            m1[r] = m1[r].max(norm2(&d.jac[r]));
            m2[r] = m2[r].max(d.g[r].max(0.0));
        }
    }
    for a in 0..probes.len() {
        for b in a + 1..probes.len() {
            let dist = dist2(&probes[a], &probes[b]);
            if dist == 0.0 {
                continue;
            }
            lf = lf.max(dist2(&data[a].obj_grad, &data[b].obj_grad) / dist);
            for (r, l) in lg.iter_mut().enumerate().take(rows) {
                *l = l.max(dist2(&data[a].jac[r], &data[b].jac[r]) / dist);
            }
        }
    }
    let mut est = SmoothnessEstimate {
        m1,
        m2,
        lg,
        lf_est: lf,
        weight: problem.normalization().weight(n),
        tau: spec.tau(),
        l_tau_c: 0.0,
    };
    est.l_tau_c = est.composed(spec.tau());
    Ok(est)
}

fn box_probes(probe_box: &BoxBounds, num_probes: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes = vec![probe_box.lower().to_vec(), probe_box.upper().to_vec()];
    while probes.len() < num_probes {
        probes.push(
            probe_box
                .lower()
                .iter()
                .zip(probe_box.upper())
                .map(|(l, u)| l + rng.gen::<f64>() * (u - l))
                .collect(),
        );
    }
    probes
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgcEstimate {
    /// `max_probes E_j ||grad P^j||^2 / ||E_j grad P^j||^2`
    pub rho_est: f64,
    pub used_probes: usize,
    pub skipped_probes: usize,
}

/// Strong-growth constant estimate by exact enumeration of all samples.
///
/// The ratio is formed with the unbiased per-sample gradient, which makes it
/// independent of the problem normalization and at least 1 by Jensen.
/// Probes where `||grad P_tau|| <= 1e-10` are skipped.
pub fn sgc_estimate<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    spec: &PenaltySpec,
    probe_points: &[ParameterVector],
) -> Result<SgcEstimate> {
    let n = problem.num_samples();
    let w = problem.normalization().weight(n);
    let mut rho = f64::NEG_INFINITY;
    let mut used = 0;
    let mut skipped = 0;
    for x in probe_points {
        check_dim(problem, x)?;
        let grads = par::try_map_range(n, |j| crate::penalty::penalty_grad_sample(problem, spec, j, x))?;
        let mut mean = vec![0.0; problem.dim()];
        let mut second_moment = 0.0;
        for g in &grads {
            crate::problem::axpy(1.0 / n as f64, g, &mut mean);
            second_moment += g.iter().map(|v| v * v).sum::<f64>() / n as f64;
        }
        let full_norm = norm2(&mean) * n as f64 * w;
        if full_norm <= 1e-10 {
            log::warn!("sgc_estimate: skipping probe with ||grad P|| = {full_norm:e}");
            skipped += 1;
            continue;
        }
        let mean_sq = mean.iter().map(|v| v * v).sum::<f64>();
        rho = rho.max(second_moment / mean_sq);
        used += 1;
    }
    if used == 0 {
        return Err(SeqPenError::AllProbesSkipped);
    }
    Ok(SgcEstimate {
        rho_est: rho,
        used_probes: used,
        skipped_probes: skipped,
    })
}
