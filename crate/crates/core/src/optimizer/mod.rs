//! Log-barrier / augmented-Lagrangian minimization with L-BFGS inner iterations.
//!
//! Each outer iteration fixes the barrier weight `μ`, the continuity
//! penalty `ρ` and the defect multipliers `λ`, and minimizes the merit
//! `J + ρ·c + (1/M) λ·r + B_path(μ) + B_box(μ)` with a backtracking line
//! search that keeps iterates strictly inside all boxes. Afterwards
//! `λ ← λ + 2ρ r`.

mod lbfgs;

use serde::Serialize;

use crate::error::{OcError, Result};
use crate::transcription::{MeritWeights, NlpPoint, Transcription};

pub use lbfgs::Lbfgs;

/// Box on one decision coordinate; its barrier term is scaled by `weight`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxBound {
    pub lo: f64,
    pub hi: f64,
    pub weight: f64,
}

impl BoxBound {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi, weight: 1.0 }
    }
}

/// `μ Σ w [−ln(x − lo) − ln(hi − x)]` over bounded coordinates; infinite
/// sides contribute nothing.
pub fn barrier_value_and_gradient(x: &[f64], bounds: &[Option<BoxBound>], mu: f64) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; x.len()];
    let value = barrier_accumulate(x, bounds, mu, Some(&mut grad))?;
    Ok((value, grad))
}

fn barrier_accumulate(x: &[f64], bounds: &[Option<BoxBound>], mu: f64, mut grad: Option<&mut [f64]>) -> Result<f64> {
    let mut value = 0.0;
    for (i, (&v, b)) in x.iter().zip(bounds).enumerate() {
        let Some(b) = b else { continue };
        let w = mu * b.weight;
        if b.lo.is_finite() {
            let a = v - b.lo;
            if !(a > 0.0) {
                return Err(OcError::BarrierInfeasible(format!(
                    "coordinate {i} = {v} not above lower bound {}",
                    b.lo
                )));
            }
            value -= w * a.ln();
            if let Some(g) = grad.as_deref_mut() {
                g[i] -= w / a;
            }
        }
        if b.hi.is_finite() {
            let a = b.hi - v;
            if !(a > 0.0) {
                return Err(OcError::BarrierInfeasible(format!(
                    "coordinate {i} = {v} not below upper bound {}",
                    b.hi
                )));
            }
            value -= w * a.ln();
            if let Some(g) = grad.as_deref_mut() {
                g[i] += w / a;
            }
        }
    }
    Ok(value)
}

/// Barrier, penalty and multiplier values for one outer iteration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PenaltyWeights {
    pub barrier: f64,
    pub penalty: f64,
    /// Estimates for the equality defects; empty means all zero.
    pub multipliers: Vec<f64>,
}

/// Value of the merit without the box barrier, which the solver adds.
#[derive(Debug, Clone, PartialEq)]
pub struct NlpValue {
    pub merit: f64,
    pub objective: f64,
    pub continuity: f64,
    /// Equality defects whose squared sum (over `M`) is `continuity`.
    pub defects: Vec<f64>,
    pub gradient: Option<Vec<f64>>,
}

pub trait NlpProblem {
    fn dim(&self) -> usize;

    fn box_bounds(&self) -> Vec<Option<BoxBound>>;

    /// Whether the merit contains inequality barriers beyond the boxes.
    fn has_path_constraints(&self) -> bool {
        false
    }

    fn evaluate(&self, x: &[f64], weights: &PenaltyWeights, gradient: bool) -> Result<NlpValue>;

    /// Positive diagonal used as the initial inverse-Hessian shape; `None`
    /// means the identity.
    fn diagonal_scaling(&self, _weights: &PenaltyWeights) -> Option<Vec<f64>> {
        None
    }

    fn bound_violation(&self, _x: &[f64]) -> Result<f64> {
        Ok(0.0)
    }
}

/// Smooth unconstrained-in-equality problem given by closures; used for
/// small tests and toy problems.
pub struct FnProblem<F> {
    pub bounds: Vec<Option<BoxBound>>,
    pub f: F,
}

impl<F> NlpProblem for FnProblem<F>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    fn dim(&self) -> usize {
        self.bounds.len()
    }

    fn box_bounds(&self) -> Vec<Option<BoxBound>> {
        self.bounds.clone()
    }

    fn evaluate(&self, x: &[f64], _weights: &PenaltyWeights, gradient: bool) -> Result<NlpValue> {
        let (v, g) = (self.f)(x);
        Ok(NlpValue {
            merit: v,
            objective: v,
            continuity: 0.0,
            defects: Vec::new(),
            gradient: gradient.then_some(g),
        })
    }
}

impl NlpProblem for Transcription {
    fn dim(&self) -> usize {
        self.layout().dim()
    }

    fn box_bounds(&self) -> Vec<Option<BoxBound>> {
        let problem = self.problem();
        let m = problem.control_dim();
        let mut out = vec![None; self.dim()];
        let mut idx = 0;
        for seg in problem.plan.segments() {
            let dt = seg.step_size();
            for _ in 0..seg.steps {
                for ch in 0..m {
                    out[idx] = problem.control_bound(ch).map(|b| BoxBound {
                        lo: b.lo,
                        hi: b.hi,
                        weight: dt,
                    });
                    idx += 1;
                }
            }
        }
        out
    }

    fn has_path_constraints(&self) -> bool {
        !self.problem().path_bounds.is_empty()
    }

    fn evaluate(&self, x: &[f64], weights: &PenaltyWeights, gradient: bool) -> Result<NlpValue> {
        let point = NlpPoint::new(self.layout(), x.to_vec())?;
        let w = MeritWeights {
            objective: 1.0,
            continuity: weights.penalty,
            path_barrier: self.has_path_constraints().then_some(weights.barrier),
        };
        let e = self.merit_augmented(&point, w, &weights.multipliers, gradient)?;
        Ok(NlpValue {
            merit: e.merit,
            objective: e.objective,
            continuity: e.continuity,
            defects: e.defects,
            gradient: e.gradient,
        })
    }

    /// Identity on controls and `M` on segment states, whose merit
    /// gradients carry a `1/M` factor.
    fn diagonal_scaling(&self, _weights: &PenaltyWeights) -> Option<Vec<f64>> {
        let layout = self.layout();
        let mut d = vec![1.0; layout.dim()];
        d[layout.control_len()..].fill(layout.samples as f64);
        Some(d)
    }

    fn bound_violation(&self, x: &[f64]) -> Result<f64> {
        let point = NlpPoint::new(self.layout(), x.to_vec())?;
        Ok(self
            .path_constraint_values(&point)?
            .iter()
            .map(|p| p.violation())
            .fold(0.0, f64::max))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    pub barrier_initial: f64,
    pub barrier_reduction: f64,
    pub barrier_min: f64,
    pub penalty_initial: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
    /// Floor for the inner stopping test; the effective tolerance is `max(this, μ)`.
    pub inner_tolerance: f64,
    pub outer_tolerance: f64,
    pub max_inner_iterations: usize,
    pub max_outer_iterations: usize,
    /// Budget on inner iterations summed over all outer iterations.
    pub max_total_iterations: usize,
    pub memory: usize,
    pub armijo: f64,
    pub backtrack: f64,
    pub max_backtracks: usize,
    pub fraction_to_boundary: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            barrier_initial: 1.0,
            barrier_reduction: 0.1,
            barrier_min: 1e-10,
            penalty_initial: 10.0,
            penalty_growth: 10.0,
            penalty_max: 1e10,
            inner_tolerance: 1e-6,
            outer_tolerance: 1e-6,
            max_inner_iterations: 1000,
            max_outer_iterations: 30,
            max_total_iterations: 10_000,
            memory: 20,
            armijo: 1e-4,
            backtrack: 0.5,
            max_backtracks: 60,
            fraction_to_boundary: 0.995,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(OcError::Parameter(m.to_string()));
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.barrier_initial > 0.0) {
            return err("barrier_initial must be > 0");
        }
        if !unit(self.barrier_reduction) {
            return err("barrier_reduction must lie in (0, 1)");
        }
        if !(self.barrier_min > 0.0) {
            return err("barrier_min must be > 0");
        }
        if !(self.penalty_initial > 0.0) {
            return err("penalty_initial must be > 0");
        }
        if !(self.penalty_growth > 1.0) {
            return err("penalty_growth must be > 1");
        }
        if !(self.inner_tolerance > 0.0 && self.outer_tolerance > 0.0) {
            return err("tolerances must be > 0");
        }
        if !unit(self.armijo) {
            return err("armijo must lie in (0, 1)");
        }
        if !unit(self.backtrack) {
            return err("backtrack must lie in (0, 1)");
        }
        if !unit(self.fraction_to_boundary) {
            return err("fraction_to_boundary must lie in (0, 1)");
        }
        if self.memory == 0 || self.max_outer_iterations == 0 || self.max_inner_iterations == 0 {
            return err("memory and iteration limits must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Converged,
    IterationLimit,
    LineSearchFailure,
    PropagationFailure,
}

impl SolveStatus {
    pub fn is_converged(self) -> bool {
        self == SolveStatus::Converged
    }
}

/// One accepted inner step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub outer: usize,
    pub iteration: usize,
    pub merit_before: f64,
    pub merit: f64,
    /// `gᵀd` at the start of the step.
    pub slope: f64,
    pub step: f64,
    pub grad_norm: f64,
    pub continuity: f64,
}

impl IterationRecord {
    pub fn log_line(&self) -> String {
        format!(
            "{} {:.12e} {:.6e} {:.6e} {:.6e}",
            self.iteration, self.merit, self.grad_norm, self.step, self.continuity
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OuterRecord {
    pub outer: usize,
    pub barrier: f64,
    pub penalty: f64,
    pub inner_iterations: usize,
    pub merit: f64,
    pub objective: f64,
    pub continuity: f64,
    pub projected_gradient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    #[serde(skip)]
    pub x: Vec<f64>,
    pub objective: f64,
    pub continuity: f64,
    pub max_bound_violation: f64,
    pub kkt_residual: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub evaluations: usize,
    pub history: Vec<OuterRecord>,
}

impl SolveReport {
    pub fn point(&self, transcription: &Transcription) -> Result<NlpPoint> {
        NlpPoint::new(transcription.layout(), self.x.clone())
    }
}

/// Clips into the boxes and pulls coordinates within `1e-6·range` of a
/// bound back inside.
pub fn pull_inside(x: &[f64], bounds: &[Option<BoxBound>]) -> Vec<f64> {
    x.iter()
        .zip(bounds)
        .map(|(&v, b)| match b {
            Some(b) if b.lo.is_finite() && b.hi.is_finite() => {
                let margin = 1e-6 * (b.hi - b.lo);
                v.clamp(b.lo + margin, b.hi - margin)
            }
            Some(b) if b.lo.is_finite() => v.max(b.lo + 1e-6 * (1.0 + b.lo.abs())),
            Some(b) if b.hi.is_finite() => v.min(b.hi - 1e-6 * (1.0 + b.hi.abs())),
            _ => v,
        })
        .collect()
}

/// Largest `α ≤ 1` keeping `x + α d` a fraction `tau` away from every bound.
fn max_step(x: &[f64], d: &[f64], bounds: &[Option<BoxBound>], tau: f64) -> f64 {
    let mut alpha = 1.0f64;
    for ((&xi, &di), b) in x.iter().zip(d).zip(bounds) {
        let Some(b) = b else { continue };
        if di < 0.0 && b.lo.is_finite() {
            alpha = alpha.min(tau * (xi - b.lo) / -di);
        } else if di > 0.0 && b.hi.is_finite() {
            alpha = alpha.min(tau * (b.hi - xi) / di);
        }
    }
    alpha
}

fn projected_gradient_norm(x: &[f64], g: &[f64], bounds: &[Option<BoxBound>]) -> f64 {
    x.iter()
        .zip(g)
        .zip(bounds)
        .map(|((&xi, &gi), b)| {
            let t = xi - gi;
            let p = match b {
                Some(b) => t.clamp(b.lo, b.hi),
                None => t,
            };
            (xi - p).abs()
        })
        .fold(0.0, f64::max)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

struct Evaluated {
    value: NlpValue,
    /// Merit including the box barrier.
    total: f64,
    /// Gradient of `value.merit` (no box barrier).
    grad_merit: Vec<f64>,
    /// Gradient of `total`.
    grad_total: Vec<f64>,
}

fn evaluate_full<P: NlpProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    bounds: &[Option<BoxBound>],
    weights: &PenaltyWeights,
    evaluations: &mut usize,
) -> Result<Evaluated> {
    *evaluations += 1;
    let (box_value, box_grad) = barrier_value_and_gradient(x, bounds, weights.barrier)?;
    let mut value = problem.evaluate(x, weights, true)?;
    let grad_merit = value.gradient.take().expect("gradient requested");
    if !value.merit.is_finite() || grad_merit.iter().any(|g| !g.is_finite()) {
        return Err(OcError::Parameter("merit or gradient is not finite".into()));
    }
    let grad_total = grad_merit.iter().zip(&box_grad).map(|(a, b)| a + b).collect();
    Ok(Evaluated {
        total: value.merit + box_value,
        value,
        grad_merit,
        grad_total,
    })
}

pub fn solve(transcription: &Transcription, initial: &NlpPoint, config: &SolverConfig) -> Result<SolveReport> {
    minimize(transcription, &initial.values, config, |_| {})
}

pub fn solve_with_log<L: FnMut(&IterationRecord)>(
    transcription: &Transcription,
    initial: &NlpPoint,
    config: &SolverConfig,
    log: L,
) -> Result<SolveReport> {
    minimize(transcription, &initial.values, config, log)
}

/// Runs the barrier/penalty outer loop on any [`NlpProblem`]; `log` sees every
/// accepted inner step.
pub fn minimize<P, L>(problem: &P, x0: &[f64], config: &SolverConfig, mut log: L) -> Result<SolveReport>
where
    P: NlpProblem + ?Sized,
    L: FnMut(&IterationRecord),
{
    config.validate()?;
    if x0.len() != problem.dim() {
        return Err(OcError::Shape(format!(
            "initial guess has {} entries, problem has {}",
            x0.len(),
            problem.dim()
        )));
    }
    let bounds = problem.box_bounds();
    let has_inequalities = problem.has_path_constraints() || bounds.iter().any(Option::is_some);
    let mut weights = PenaltyWeights {
        barrier: config.barrier_initial,
        penalty: config.penalty_initial,
        multipliers: Vec::new(),
    };
    let mut evaluations = 0;
    let mut x = pull_inside(x0, &bounds);
    let mut cur = evaluate_full(problem, &x, &bounds, &weights, &mut evaluations)
        .map_err(|e| OcError::Initialization(format!("initial guess: {e}")))?;

    let mut lbfgs = Lbfgs::new(config.memory);
    let mut history = Vec::new();
    let mut total_inner = 0;
    let mut status = SolveStatus::IterationLimit;
    let mut consecutive_failures = 0;
    let mut kkt = f64::INFINITY;
    let mut previous_continuity = f64::INFINITY;

    'outer: for outer in 0..config.max_outer_iterations {
        lbfgs.set_diagonal(problem.diagonal_scaling(&weights));
        let inner_tol = config
            .inner_tolerance
            .max(if has_inequalities { weights.barrier } else { 0.0 });
        let mut inner = 0;
        let mut failure: Option<SolveStatus> = None;
        while inner < config.max_inner_iterations && total_inner < config.max_total_iterations {
            let g = &cur.grad_total;
            let gnorm = inf_norm(g);
            if gnorm <= inner_tol {
                break;
            }
            let mut d = lbfgs.direction(g);
            let mut slope: f64 = d.iter().zip(g).map(|(a, b)| a * b).sum();
            if !(slope < 0.0) || d.iter().any(|v| !v.is_finite()) {
                lbfgs.reset();
                d = g.iter().map(|v| -v).collect();
                slope = -g.iter().map(|v| v * v).sum::<f64>();
            }
            let mut alpha = max_step(&x, &d, &bounds, config.fraction_to_boundary);
            if lbfgs.is_empty() {
                alpha = alpha.min(1.0 / inf_norm(&d));
            }
            let mut accepted = None;
            let mut last_error = None;
            for _ in 0..config.max_backtracks {
                let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
                match evaluate_full(problem, &trial, &bounds, &weights, &mut evaluations) {
                    Ok(e) if e.total <= cur.total + config.armijo * alpha * slope => {
                        accepted = Some((trial, e));
                        break;
                    }
                    Ok(_) => {}
                    Err(e) => last_error = Some(e),
                }
                alpha *= config.backtrack;
            }
            let Some((trial, next)) = accepted else {
                failure = Some(match last_error {
                    Some(OcError::PropagationFailure { .. }) | Some(OcError::Domain { .. }) => {
                        SolveStatus::PropagationFailure
                    }
                    _ => SolveStatus::LineSearchFailure,
                });
                break;
            };
            inner += 1;
            total_inner += 1;
            let s: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = next
                .grad_total
                .iter()
                .zip(&cur.grad_total)
                .map(|(a, b)| a - b)
                .collect();
            lbfgs.push(s, y);
            log(&IterationRecord {
                outer,
                iteration: total_inner,
                merit_before: cur.total,
                merit: next.total,
                slope,
                step: alpha,
                grad_norm: inf_norm(&next.grad_total),
                continuity: next.value.continuity,
            });
            x = trial;
            cur = next;
        }

        let pg = projected_gradient_norm(&x, &cur.grad_merit, &bounds);
        kkt = if has_inequalities { pg.max(weights.barrier) } else { pg };
        history.push(OuterRecord {
            outer,
            barrier: weights.barrier,
            penalty: weights.penalty,
            inner_iterations: inner,
            merit: cur.total,
            objective: cur.value.objective,
            continuity: cur.value.continuity,
            projected_gradient: pg,
        });
        if kkt <= config.outer_tolerance && cur.value.continuity <= config.outer_tolerance {
            status = SolveStatus::Converged;
            break 'outer;
        }
        match failure {
            // A failed steepest-descent step on an unchanged merit twice in a row is stagnation.
            Some(f) if inner == 0 => {
                consecutive_failures += 1;
                if consecutive_failures >= 2 {
                    status = f;
                    break 'outer;
                }
            }
            _ => consecutive_failures = 0,
        }
        if total_inner >= config.max_total_iterations {
            break 'outer;
        }
        weights.barrier = (weights.barrier * config.barrier_reduction).max(config.barrier_min);
        if !cur.value.defects.is_empty() {
            let defects = &cur.value.defects;
            weights.multipliers.resize(defects.len(), 0.0);
            for (l, r) in weights.multipliers.iter_mut().zip(defects) {
                *l += 2.0 * weights.penalty * r;
            }
        }
        // Grow ρ only when the defect norm failed to shrink by a factor of four.
        let stalled = cur.value.continuity > previous_continuity / 16.0;
        previous_continuity = cur.value.continuity;
        if cur.value.continuity > config.outer_tolerance && stalled {
            weights.penalty = (weights.penalty * config.penalty_growth).min(config.penalty_max);
            lbfgs.reset();
        }
        cur = evaluate_full(problem, &x, &bounds, &weights, &mut evaluations)?;
    }

    let max_bound_violation = problem.bound_violation(&x)?;
    Ok(SolveReport {
        status,
        objective: cur.value.objective,
        continuity: cur.value.continuity,
        max_bound_violation,
        kkt_residual: kkt,
        outer_iterations: history.len(),
        inner_iterations: total_inner,
        evaluations,
        history,
        x,
    })
}
