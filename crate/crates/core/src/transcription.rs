//! Multi-shooting transcription of an ensemble optimal control problem into a
//! finite-dimensional NLP over `(U, X_b)`.
//!
//! The decision vector stores all controls first (segment-major, row-major,
//! `m·N` values), followed by one `M × n` block of segment-initial states for
//! every segment after the first. Segment 1 starts from the sampled `x_0`.

use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::ensemble::{ControlSchedule, EnsembleState, EnsembleTrajectory, ShootingPlan};
use crate::error::{OcError, Result};
use crate::gradient::backward_gradient_into;
use crate::integrators::{propagate_segment_with, SchemeKind, StepScheme};
use crate::models::DynamicsModel;
use crate::parallel::Parallelism;
use crate::sampling::{sample_initial_ensemble, RandomInputSpec};

/// `weight · (x_state − target)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticTerm {
    pub state: usize,
    #[serde(default)]
    pub target: f64,
    pub weight: f64,
}

impl QuadraticTerm {
    pub fn new(state: usize, target: f64, weight: f64) -> Self {
        Self { state, target, weight }
    }

    fn value(&self, x: &[f64]) -> f64 {
        let d = x[self.state] - self.target;
        self.weight * d * d
    }

    fn add_gradient(&self, x: &[f64], scale: f64, out: &mut [f64]) {
        out[self.state] += scale * 2.0 * self.weight * (x[self.state] - self.target);
    }
}

/// Per-sample cost `F(x(t_f)) + ∫ r_x(x) dt`, plus the shared control energy
/// `(q/2)∫‖u‖² dt`. Integrals use the left rectangle rule on the control grid.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CostSpec {
    #[serde(default)]
    pub terminal: Vec<QuadraticTerm>,
    #[serde(default)]
    pub running: Vec<QuadraticTerm>,
    #[serde(default)]
    pub control_weight: f64,
}

impl CostSpec {
    fn terminal_value(&self, x: &[f64]) -> f64 {
        self.terminal.iter().map(|t| t.value(x)).sum()
    }

    fn running_value(&self, x: &[f64]) -> f64 {
        self.running.iter().map(|t| t.value(x)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn symmetric(r: f64) -> Self {
        Self { lo: -r, hi: r }
    }

    pub fn range(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn clip(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

/// Bound on the ensemble mean of one state coordinate at every grid time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathBound {
    pub state: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone)]
pub struct OcProblem {
    pub name: String,
    pub model: Arc<dyn DynamicsModel>,
    pub plan: ShootingPlan,
    pub scheme: SchemeKind,
    pub initial: RandomInputSpec,
    pub samples: usize,
    pub cost: CostSpec,
    /// One entry per control channel; `None` leaves the channel free.
    pub control_bounds: Vec<Option<Bounds>>,
    pub path_bounds: Vec<PathBound>,
    pub seed: u64,
    pub parallelism: Parallelism,
}

impl OcProblem {
    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.model.control_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.state_dim(), self.control_dim());
        let err = |msg: String| Err(OcError::Parameter(msg));
        if self.samples == 0 {
            return err("samples: M must be >= 1".into());
        }
        if self.initial.dim() != n {
            return err(format!(
                "initial: spec has {} coordinates but model {} has state dimension {}",
                self.initial.dim(),
                self.model.name(),
                n
            ));
        }
        if !self.control_bounds.is_empty() && self.control_bounds.len() != m {
            return err(format!(
                "control_bounds: expected {} entries, got {}",
                m,
                self.control_bounds.len()
            ));
        }
        for (k, b) in self.control_bounds.iter().enumerate() {
            if let Some(b) = b {
                if !(b.lo <= b.hi) || b.lo.is_nan() {
                    return err(format!("control_bounds[{k}]: lo {} exceeds hi {}", b.lo, b.hi));
                }
                if b.lo == b.hi {
                    return err(format!("control_bounds[{k}]: empty interior, lo == hi == {}", b.lo));
                }
            }
        }
        for (k, b) in self.path_bounds.iter().enumerate() {
            if b.state >= n {
                return err(format!("path_bounds[{k}].state: index {} out of range 0..{n}", b.state));
            }
            if !(b.lo < b.hi) {
                return err(format!("path_bounds[{k}]: lo {} must be below hi {}", b.lo, b.hi));
            }
        }
        if !(self.cost.control_weight >= 0.0 && self.cost.control_weight.is_finite()) {
            return err(format!(
                "cost.control_weight: q must be >= 0, got {}",
                self.cost.control_weight
            ));
        }
        for (name, terms) in [
            ("cost.terminal", &self.cost.terminal),
            ("cost.running", &self.cost.running),
        ] {
            for (k, t) in terms.iter().enumerate() {
                if t.state >= n {
                    return err(format!("{name}[{k}].state: index {} out of range 0..{n}", t.state));
                }
                if !(t.weight.is_finite() && t.target.is_finite()) {
                    return err(format!("{name}[{k}]: weight and target must be finite"));
                }
            }
        }
        for seg in self.plan.segments() {
            StepScheme::new(self.scheme, seg.step_size())?;
        }
        Ok(())
    }

    pub fn layout(&self) -> NlpLayout {
        NlpLayout {
            control_dim: self.control_dim(),
            total_steps: self.plan.total_steps(),
            segments: self.plan.segment_count(),
            samples: self.samples,
            state_dim: self.state_dim(),
        }
    }

    /// Validates the problem and draws the initial ensemble.
    pub fn instantiate(&self) -> Result<Transcription> {
        self.validate()?;
        let x0 = sample_initial_ensemble(&self.initial, self.samples, self.seed)?;
        Transcription::with_initial_states(self.clone(), x0)
    }

    /// Bound per control channel, or `None`.
    pub fn control_bound(&self, channel: usize) -> Option<Bounds> {
        self.control_bounds.get(channel).copied().flatten()
    }
}

/// Sizes of the decision-vector blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NlpLayout {
    pub control_dim: usize,
    pub total_steps: usize,
    pub segments: usize,
    pub samples: usize,
    pub state_dim: usize,
}

impl NlpLayout {
    pub fn control_len(&self) -> usize {
        self.control_dim * self.total_steps
    }

    pub fn block_len(&self) -> usize {
        self.samples * self.state_dim
    }

    /// `m·N + (S−1)·M·n`.
    pub fn dim(&self) -> usize {
        self.control_len() + self.segments.saturating_sub(1) * self.block_len()
    }

    /// Offset of the initial-state block of segment `k ≥ 1`.
    pub fn block_offset(&self, k: usize) -> usize {
        debug_assert!(k >= 1 && k < self.segments);
        self.control_len() + (k - 1) * self.block_len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlpPoint {
    pub layout: NlpLayout,
    pub values: Vec<f64>,
}

impl NlpPoint {
    pub fn new(layout: NlpLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.dim() {
            return Err(OcError::Shape(format!(
                "decision vector has {} entries, layout expects {}",
                values.len(),
                layout.dim()
            )));
        }
        Ok(Self { layout, values })
    }

    pub fn controls(&self) -> &[f64] {
        &self.values[..self.layout.control_len()]
    }

    pub fn controls_mut(&mut self) -> &mut [f64] {
        let len = self.layout.control_len();
        &mut self.values[..len]
    }

    /// Initial states of segment `k ≥ 1`, row-major `M × n`.
    pub fn segment_initial(&self, k: usize) -> &[f64] {
        let off = self.layout.block_offset(k);
        &self.values[off..off + self.layout.block_len()]
    }
}

/// Coordinate-wise projection of the controls onto their boxes.
pub fn clip_controls(point: &NlpPoint, bounds: &[Option<Bounds>]) -> NlpPoint {
    let mut out = point.clone();
    let m = point.layout.control_dim;
    if m == 0 {
        return out;
    }
    for row in out.controls_mut().chunks_exact_mut(m) {
        for (v, b) in row.iter_mut().zip(bounds) {
            if let Some(b) = b {
                *v = b.clip(*v);
            }
        }
    }
    out
}

/// Mean of one constrained state coordinate at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathConstraintValue {
    pub segment: usize,
    pub step: usize,
    pub time: f64,
    pub state: usize,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl PathConstraintValue {
    pub fn violation(&self) -> f64 {
        (self.lo - self.value).max(self.value - self.hi).max(0.0)
    }
}

/// Multipliers of the merit function `w_J·J + ρ·c + B_μ(path)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeritWeights {
    pub objective: f64,
    pub continuity: f64,
    pub path_barrier: Option<f64>,
}

impl MeritWeights {
    pub fn objective_only() -> Self {
        Self {
            objective: 1.0,
            continuity: 0.0,
            path_barrier: None,
        }
    }

    pub fn continuity_only() -> Self {
        Self {
            objective: 0.0,
            continuity: 1.0,
            path_barrier: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeritEvaluation {
    pub merit: f64,
    pub objective: f64,
    pub continuity: f64,
    pub path_barrier: f64,
    /// `x_{k,end} − x_{k+1,start}` for every interior boundary, sample and coordinate.
    pub defects: Vec<f64>,
    pub gradient: Option<Vec<f64>>,
}

/// An [`OcProblem`] with its sampled initial ensemble and per-segment schemes.
#[derive(Debug, Clone)]
pub struct Transcription {
    problem: OcProblem,
    x0: EnsembleState,
    schemes: Vec<StepScheme>,
    offsets: Vec<usize>,
}

impl Transcription {
    pub fn with_initial_states(problem: OcProblem, x0: EnsembleState) -> Result<Self> {
        problem.validate()?;
        if x0.samples() != problem.samples || x0.dim() != problem.state_dim() {
            return Err(OcError::Shape(format!(
                "initial ensemble is {}x{}, problem expects {}x{}",
                x0.samples(),
                x0.dim(),
                problem.samples,
                problem.state_dim()
            )));
        }
        let schemes = problem
            .plan
            .segments()
            .iter()
            .map(|s| StepScheme::new(problem.scheme, s.step_size()))
            .collect::<Result<Vec<_>>>()?;
        let offsets = problem.plan.step_offsets();
        Ok(Self {
            problem,
            x0,
            schemes,
            offsets,
        })
    }

    pub fn problem(&self) -> &OcProblem {
        &self.problem
    }

    pub fn initial_states(&self) -> &EnsembleState {
        &self.x0
    }

    pub fn layout(&self) -> NlpLayout {
        self.problem.layout()
    }

    pub fn schemes(&self) -> &[StepScheme] {
        &self.schemes
    }

    fn model(&self) -> &dyn DynamicsModel {
        self.problem.model.as_ref()
    }

    pub fn schedule(&self, point: &NlpPoint) -> Result<ControlSchedule> {
        ControlSchedule::from_flat(&self.problem.plan, self.problem.control_dim(), point.controls())
    }

    fn segment_controls<'a>(&self, point: &'a NlpPoint, k: usize) -> ArrayView2<'a, f64> {
        let m = self.problem.control_dim();
        let steps = self.problem.plan.segments()[k].steps;
        let off = self.offsets[k] * m;
        ArrayView2::from_shape((steps, m), &point.controls()[off..off + steps * m]).expect("sized")
    }

    fn segment_start(&self, point: &NlpPoint, k: usize) -> EnsembleState {
        if k == 0 {
            self.x0.clone()
        } else {
            let (mm, n) = (self.problem.samples, self.problem.state_dim());
            EnsembleState::from_vec_unchecked(mm, n, point.segment_initial(k).to_vec())
        }
    }

    fn globalize(&self, k: usize, err: OcError) -> OcError {
        match err {
            OcError::PropagationFailure { sample, step } => OcError::PropagationFailure {
                sample,
                step: self.offsets[k] + step,
            },
            other => other,
        }
    }

    fn check_point(&self, point: &NlpPoint) -> Result<()> {
        if point.layout != self.layout() {
            return Err(OcError::Shape(format!(
                "point layout {:?} does not match problem layout {:?}",
                point.layout,
                self.layout()
            )));
        }
        if let Some(i) = point.values.iter().position(|v| !v.is_finite()) {
            return Err(OcError::Parameter(format!("decision vector entry {i} is not finite")));
        }
        Ok(())
    }

    /// Decision vector whose interface states are the propagated segment ends
    /// under `controls`, so the continuity residual starts at zero.
    pub fn initial_guess(&self, controls: &ControlSchedule) -> Result<NlpPoint> {
        if !controls.is_compatible(&self.problem.plan) || controls.control_dim() != self.problem.control_dim() {
            return Err(OcError::Shape(format!(
                "control schedule does not match the plan: expected N = {} rows of width {}, got {} rows of width {}",
                self.problem.plan.total_steps(),
                self.problem.control_dim(),
                controls.total_steps(),
                controls.control_dim()
            )));
        }
        let layout = self.layout();
        let mut values = controls.to_flat();
        let sim = self.simulate(controls)?;
        for k in 1..layout.segments {
            values.extend_from_slice(sim.segment(k)[0].as_slice());
        }
        NlpPoint::new(layout, values)
    }

    /// Propagates each segment from its own initial states.
    pub fn forward(&self, point: &NlpPoint) -> Result<EnsembleTrajectory> {
        self.check_point(point)?;
        let mut segments = Vec::with_capacity(self.schemes.len());
        for k in 0..self.schemes.len() {
            let start = self.segment_start(point, k);
            let states = propagate_segment_with(
                &self.schemes[k],
                self.model(),
                &start,
                self.segment_controls(point, k),
                &self.problem.parallelism,
            )
            .map_err(|e| self.globalize(k, e))?;
            segments.push(states);
        }
        EnsembleTrajectory::new(self.problem.plan.clone(), segments)
    }

    /// Single-shooting propagation of the whole horizon from `x_0`.
    pub fn simulate(&self, controls: &ControlSchedule) -> Result<EnsembleTrajectory> {
        self.simulate_from(&self.x0, controls)
    }

    pub fn simulate_from(&self, x0: &EnsembleState, controls: &ControlSchedule) -> Result<EnsembleTrajectory> {
        if !controls.is_compatible(&self.problem.plan) {
            return Err(OcError::Shape("control schedule does not match the plan".into()));
        }
        let mut segments: Vec<Vec<EnsembleState>> = Vec::with_capacity(self.schemes.len());
        for k in 0..self.schemes.len() {
            let start = match segments.last() {
                Some(prev) => prev.last().expect("non-empty segment").clone(),
                None => x0.clone(),
            };
            let states = propagate_segment_with(
                &self.schemes[k],
                self.model(),
                &start,
                controls.segment(k),
                &self.problem.parallelism,
            )
            .map_err(|e| self.globalize(k, e))?;
            segments.push(states);
        }
        EnsembleTrajectory::new(self.problem.plan.clone(), segments)
    }

    /// Objective of a trajectory and control vector, without recomputing states.
    pub fn objective_of(&self, traj: &EnsembleTrajectory, controls: &[f64]) -> f64 {
        let cost = &self.problem.cost;
        let mm = self.problem.samples as f64;
        let final_state = traj.final_state();
        let mut per_sample = 0.0;
        for i in 0..final_state.samples() {
            per_sample += cost.terminal_value(final_state.row(i));
        }
        if !cost.running.is_empty() {
            for (k, seg) in self.problem.plan.segments().iter().enumerate() {
                let dt = seg.step_size();
                for state in &traj.segment(k)[..seg.steps] {
                    for i in 0..state.samples() {
                        per_sample += dt * cost.running_value(state.row(i));
                    }
                }
            }
        }
        per_sample / mm + self.control_energy(controls)
    }

    /// `(q/2) Σ_k Σ_j ‖u_{k,j}‖² Δt_k`.
    pub fn control_energy(&self, controls: &[f64]) -> f64 {
        let q = self.problem.cost.control_weight;
        if q == 0.0 {
            return 0.0;
        }
        let m = self.problem.control_dim();
        let mut acc = 0.0;
        for (k, seg) in self.problem.plan.segments().iter().enumerate() {
            let off = self.offsets[k] * m;
            let block = &controls[off..off + seg.steps * m];
            acc += seg.step_size() * block.iter().map(|v| v * v).sum::<f64>();
        }
        0.5 * q * acc
    }

    pub fn evaluate_objective(&self, point: &NlpPoint) -> Result<f64> {
        Ok(self.merit(point, MeritWeights::objective_only(), false)?.objective)
    }

    pub fn objective_and_gradient(&self, point: &NlpPoint) -> Result<(f64, Vec<f64>)> {
        let e = self.merit(point, MeritWeights::objective_only(), true)?;
        Ok((e.objective, e.gradient.expect("requested")))
    }

    /// `c = (1/M) Σ_k Σ_i ‖x⁽ⁱ⁾_{k,end} − x⁽ⁱ⁾_{k+1,start}‖²` and its gradient.
    pub fn continuity_residual(&self, point: &NlpPoint) -> Result<(f64, Vec<f64>)> {
        if self.problem.plan.segment_count() == 1 {
            self.check_point(point)?;
            return Ok((0.0, vec![0.0; point.values.len()]));
        }
        let e = self.merit(point, MeritWeights::continuity_only(), true)?;
        Ok((e.continuity, e.gradient.expect("requested")))
    }

    pub fn continuity_of(&self, traj: &EnsembleTrajectory, point: &NlpPoint) -> f64 {
        let mm = self.problem.samples as f64;
        self.defects_of(traj, point).iter().map(|r| r * r).sum::<f64>() / mm
    }

    pub fn defects_of(&self, traj: &EnsembleTrajectory, point: &NlpPoint) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layout().dim() - self.layout().control_len());
        for k in 1..self.problem.plan.segment_count() {
            let end = traj.segment(k - 1).last().expect("non-empty").as_slice();
            let start = point.segment_initial(k);
            out.extend(end.iter().zip(start).map(|(a, b)| a - b));
        }
        out
    }

    /// Ensemble means of constrained coordinates at every grid point after
    /// `t = 0` (steps `1..=N_k` of each segment).
    pub fn path_constraint_values(&self, point: &NlpPoint) -> Result<Vec<PathConstraintValue>> {
        let traj = self.forward(point)?;
        Ok(self.path_values_of(&traj))
    }

    pub fn path_values_of(&self, traj: &EnsembleTrajectory) -> Vec<PathConstraintValue> {
        let mut out = Vec::new();
        if self.problem.path_bounds.is_empty() {
            return out;
        }
        let mm = self.problem.samples as f64;
        for (k, seg) in self.problem.plan.segments().iter().enumerate() {
            for (j, state) in traj.segment(k).iter().enumerate().skip(1) {
                for b in &self.problem.path_bounds {
                    let value = (0..state.samples()).map(|i| state.row(i)[b.state]).sum::<f64>() / mm;
                    out.push(PathConstraintValue {
                        segment: k,
                        step: j,
                        time: seg.time(j),
                        state: b.state,
                        value,
                        lo: b.lo,
                        hi: b.hi,
                    });
                }
            }
        }
        out
    }

    /// Merit `w_J·J + ρ·c − μ Σ Δt_k [ln(E x_s − lo) + ln(hi − E x_s)]` with
    /// optional exact gradient.
    pub fn merit(&self, point: &NlpPoint, weights: MeritWeights, want_gradient: bool) -> Result<MeritEvaluation> {
        self.merit_augmented(point, weights, &[], want_gradient)
    }

    /// [`merit`](Self::merit) plus `(1/M) Σ λ·r` over the continuity defects
    /// `r`. An empty `multipliers` slice means all zeros.
    pub fn merit_augmented(
        &self,
        point: &NlpPoint,
        weights: MeritWeights,
        multipliers: &[f64],
        want_gradient: bool,
    ) -> Result<MeritEvaluation> {
        let traj = self.forward(point)?;
        let objective = self.objective_of(&traj, point.controls());
        let defects = self.defects_of(&traj, point);
        if !multipliers.is_empty() && multipliers.len() != defects.len() {
            return Err(OcError::Shape(format!(
                "{} continuity multipliers for {} defects",
                multipliers.len(),
                defects.len()
            )));
        }
        let inv_m = 1.0 / self.problem.samples as f64;
        let continuity = defects.iter().map(|r| r * r).sum::<f64>() * inv_m;
        let linear = multipliers.iter().zip(&defects).map(|(l, r)| l * r).sum::<f64>() * inv_m;
        let path = self.path_values_of(&traj);
        let mut path_barrier = 0.0;
        let nb = self.problem.path_bounds.len();
        // Per (segment, step, bound) barrier derivative with respect to the mean.
        let mut dmean: Vec<f64> = Vec::new();
        if let Some(mu) = weights.path_barrier {
            dmean.reserve(path.len());
            for p in &path {
                let dt = self.problem.plan.segments()[p.segment].step_size();
                let (a, b) = (p.value - p.lo, p.hi - p.value);
                if !(a > 0.0 && b > 0.0) {
                    return Err(OcError::BarrierInfeasible(format!(
                        "mean of state {} is {} at t = {}, outside ({}, {})",
                        p.state, p.value, p.time, p.lo, p.hi
                    )));
                }
                path_barrier -= mu * dt * (a.ln() + b.ln());
                dmean.push(-mu * dt * (1.0 / a - 1.0 / b));
            }
        }
        let merit = weights.objective * objective + weights.continuity * continuity + linear + path_barrier;
        let gradient = if want_gradient {
            Some(self.merit_gradient(point, &traj, weights, multipliers, &dmean, nb)?)
        } else {
            None
        };
        Ok(MeritEvaluation {
            merit,
            objective,
            continuity,
            path_barrier,
            defects,
            gradient,
        })
    }

    fn merit_gradient(
        &self,
        point: &NlpPoint,
        traj: &EnsembleTrajectory,
        weights: MeritWeights,
        multipliers: &[f64],
        dmean: &[f64],
        nb: usize,
    ) -> Result<Vec<f64>> {
        let layout = self.layout();
        let (mm, n, m) = (layout.samples, layout.state_dim, layout.control_dim);
        let inv_m = 1.0 / mm as f64;
        let cost = &self.problem.cost;
        let segs = self.problem.plan.segments();
        let s_count = segs.len();
        let mut grad = vec![0.0; layout.dim()];
        let mut seed = Array2::<f64>::zeros((mm, n));
        let mut gx0 = vec![0.0; mm * n];
        let mut path_offset = 0;
        for (k, seg) in segs.iter().enumerate() {
            let states = traj.segment(k);
            let end = states.last().expect("non-empty");
            seed.fill(0.0);
            if k + 1 == s_count {
                if weights.objective != 0.0 {
                    for i in 0..mm {
                        let mut row = seed.row_mut(i);
                        let out = row.as_slice_mut().expect("standard layout");
                        for t in &cost.terminal {
                            t.add_gradient(end.row(i), weights.objective * inv_m, out);
                        }
                    }
                }
            } else {
                if weights.continuity != 0.0 {
                    let next = point.segment_initial(k + 1);
                    for ((s, a), b) in seed.iter_mut().zip(end.as_slice()).zip(next) {
                        *s += weights.continuity * 2.0 * inv_m * (a - b);
                    }
                }
                if !multipliers.is_empty() {
                    let lam = &multipliers[k * mm * n..(k + 1) * mm * n];
                    for (s, l) in seed.iter_mut().zip(lam) {
                        *s += l * inv_m;
                    }
                }
            }
            let seg_dmean = if dmean.is_empty() {
                &[][..]
            } else {
                let len = seg.steps * nb;
                let slice = &dmean[path_offset..path_offset + len];
                path_offset += len;
                slice
            };
            if !seg_dmean.is_empty() {
                let last = &seg_dmean[(seg.steps - 1) * nb..];
                for (b, pb) in self.problem.path_bounds.iter().enumerate() {
                    for i in 0..mm {
                        seed[[i, pb.state]] += last[b] * inv_m;
                    }
                }
            }
            let dt = seg.step_size();
            let w_obj = weights.objective;
            let running = |j: usize, _i: usize, x: &[f64], out: &mut [f64]| {
                if w_obj != 0.0 {
                    for t in &cost.running {
                        t.add_gradient(x, w_obj * dt * inv_m, out);
                    }
                }
                if j >= 1 && !seg_dmean.is_empty() {
                    let row = &seg_dmean[(j - 1) * nb..j * nb];
                    for (b, pb) in self.problem.path_bounds.iter().enumerate() {
                        out[pb.state] += row[b] * inv_m;
                    }
                }
            };
            let needs_running = (w_obj != 0.0 && !cost.running.is_empty()) || !seg_dmean.is_empty();
            let off = self.offsets[k] * m;
            let gu = &mut grad[off..off + seg.steps * m];
            backward_gradient_into(
                &self.schemes[k],
                self.model(),
                states,
                self.segment_controls(point, k),
                seed.view(),
                if needs_running { Some(&running) } else { None },
                &self.problem.parallelism,
                gu,
                &mut gx0,
            )?;
            if w_obj != 0.0 && cost.control_weight != 0.0 {
                let u = &point.controls()[off..off + seg.steps * m];
                for (g, v) in gu.iter_mut().zip(u) {
                    *g += w_obj * cost.control_weight * dt * v;
                }
            }
            if k >= 1 {
                let boff = layout.block_offset(k);
                let block = &mut grad[boff..boff + layout.block_len()];
                block.copy_from_slice(&gx0);
                if weights.continuity != 0.0 {
                    let prev_end = traj.segment(k - 1).last().expect("non-empty").as_slice();
                    let start = point.segment_initial(k);
                    for ((g, a), b) in block.iter_mut().zip(prev_end).zip(start) {
                        *g -= weights.continuity * 2.0 * inv_m * (a - b);
                    }
                }
                if !multipliers.is_empty() {
                    let lam = &multipliers[(k - 1) * mm * n..k * mm * n];
                    for (g, l) in block.iter_mut().zip(lam) {
                        *g -= l * inv_m;
                    }
                }
            }
        }
        Ok(grad)
    }
}
