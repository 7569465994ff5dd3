//! Forward/backward verification of a candidate control via pointwise
//! minimization of the sample-mean Hamiltonian.

use std::io;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::Serialize;

use crate::ensemble::{ControlSchedule, EnsembleState, EnsembleTrajectory};
use crate::error::{OcError, Result};
use crate::gradient::RunningSeed;
use crate::integrators::{rk_jacobians_sample, JacWork, StepScheme};
use crate::models::{check_dims, transpose_mul, DynamicsModel};
use crate::transcription::{Bounds, OcProblem, Transcription};

pub const NECESSARY_CONDITION_NOTE: &str = "Pointwise minimization of the ensemble Hamiltonian along the candidate's \
own state and costate trajectories is a necessary condition for optimality; agreement does not prove the candidate optimal.";

/// `H = (q/2)‖u‖² + λ·f(x, u)`.
pub fn hamiltonian(model: &dyn DynamicsModel, u: &[f64], x: &[f64], lambda: &[f64], q: f64) -> Result<f64> {
    check_dims(model, x.len(), u.len())?;
    if lambda.len() != x.len() {
        return Err(OcError::Shape(format!(
            "costate has {} entries, state has {}",
            lambda.len(),
            x.len()
        )));
    }
    let mut f = vec![0.0; x.len()];
    model.rhs(x, u, &mut f).map_err(|e| e.at(0))?;
    let r = 0.5 * q * u.iter().map(|v| v * v).sum::<f64>();
    Ok(r + lambda.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>())
}

/// Costates on the state grid: `segments[k][j]` is the `M × n` matrix at
/// grid point `j` of segment `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrajectory {
    pub segments: Vec<Vec<Array2<f64>>>,
}

impl AdjointTrajectory {
    pub fn segment(&self, k: usize) -> &[Array2<f64>] {
        &self.segments[k]
    }

    pub fn final_costate(&self) -> &Array2<f64> {
        self.segments.last().and_then(|s| s.last()).expect("non-empty adjoint")
    }
}

struct SampleSweep<'a> {
    scheme: &'a StepScheme,
    model: &'a dyn DynamicsModel,
    states: &'a [EnsembleState],
    controls: ArrayView2<'a, f64>,
}

impl SampleSweep<'_> {
    fn dims(&self) -> (usize, usize, usize) {
        (self.controls.nrows(), self.model.state_dim(), self.model.control_dim())
    }

    /// `f̄_t = Σ_q [t+q multistep] h b_q λ_{t+q+1}` with `lam` holding `λ_{t+1}, λ_{t+2}, ...`.
    fn history_adjoint(&self, t: usize, lam: &[f64], fbar: &mut [f64]) {
        let (steps, n, _) = self.dims();
        fbar.fill(0.0);
        let Some(w) = self.scheme.ab_weights() else { return };
        for (q, &bq) in w.iter().enumerate() {
            if t + q < steps && self.scheme.is_multistep(t + q) {
                for (f, l) in fbar.iter_mut().zip(&lam[q * n..(q + 1) * n]) {
                    *f += self.scheme.dt * bq * l;
                }
            }
        }
    }

    /// `λ_0..λ_N` for sample `i`, flattened.
    fn costates(&self, i: usize, terminal: &[f64], running: Option<RunningSeed>) -> Result<Vec<f64>> {
        let (steps, n, m) = self.dims();
        let tab = self.scheme.tableau();
        let mut w = JacWork::new(tab.stages(), n, m);
        let (mut a, mut b) = (vec![0.0; n * n], vec![0.0; n * m]);
        let mut jx = vec![0.0; n * n];
        let mut fbar = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        let mut lam = vec![0.0; (steps + 1) * n];
        lam[steps * n..].copy_from_slice(terminal);
        for t in (0..steps).rev() {
            let x = self.states[t].row(i);
            let u = self.controls.row(t);
            let u = u.as_slice().expect("standard layout");
            let (head, tail) = lam.split_at_mut((t + 1) * n);
            let lam_t = &mut head[t * n..];
            let multistep = self.scheme.is_multistep(t);
            if multistep {
                lam_t.copy_from_slice(&tail[..n]);
            } else {
                rk_jacobians_sample(&tab, self.model, self.scheme.dt, x, u, &mut w, &mut a, &mut b)
                    .map_err(|e| e.at(i))?;
                transpose_mul(&a, n, n, &tail[..n], lam_t);
            }
            if self.scheme.ab_weights().is_some() {
                self.history_adjoint(t, tail, &mut fbar);
                self.model.jac_x(x, u, &mut jx).map_err(|e| e.at(i))?;
                transpose_mul(&jx, n, n, &fbar, &mut tmp);
                lam_t.iter_mut().zip(&tmp).for_each(|(l, v)| *l += v);
            }
            if let Some(seed) = running {
                seed(t, i, x, lam_t);
            }
        }
        Ok(lam)
    }

    /// `Σ_t ∂Q_t/∂u_tᵀ λ_{t+1}` contributions of sample `i`, `N × m` flattened.
    fn control_gradient(&self, i: usize, lam: &[Array2<f64>]) -> Result<Vec<f64>> {
        let (steps, n, m) = self.dims();
        let tab = self.scheme.tableau();
        let mut w = JacWork::new(tab.stages(), n, m);
        let (mut a, mut b) = (vec![0.0; n * n], vec![0.0; n * m]);
        let mut ju = vec![0.0; n * m];
        let mut fbar = vec![0.0; n];
        let mut tmp = vec![0.0; m];
        let mut later = vec![0.0; self.scheme.history_len() * n];
        let mut out = vec![0.0; steps * m];
        for t in 0..steps {
            let x = self.states[t].row(i);
            let u = self.controls.row(t);
            let u = u.as_slice().expect("standard layout");
            let g = &mut out[t * m..(t + 1) * m];
            for (q, chunk) in later.chunks_exact_mut(n).enumerate() {
                if t + q < steps {
                    chunk.copy_from_slice(lam[t + q + 1].row(i).as_slice().expect("standard layout"));
                }
            }
            if !self.scheme.is_multistep(t) {
                rk_jacobians_sample(&tab, self.model, self.scheme.dt, x, u, &mut w, &mut a, &mut b)
                    .map_err(|e| e.at(i))?;
                transpose_mul(&b, n, m, &later[..n], g);
            }
            if self.scheme.ab_weights().is_some() {
                self.history_adjoint(t, &later, &mut fbar);
                self.model.jac_u(x, u, &mut ju).map_err(|e| e.at(i))?;
                transpose_mul(&ju, n, m, &fbar, &mut tmp);
                g.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
            }
        }
        Ok(out)
    }
}

fn check_segment(
    model: &dyn DynamicsModel,
    states: &[EnsembleState],
    controls: ArrayView2<f64>,
    terminal: Option<ArrayView2<f64>>,
) -> Result<()> {
    let (n, m) = (model.state_dim(), model.control_dim());
    if states.len() != controls.nrows() + 1 {
        return Err(OcError::Shape(format!(
            "{} states for {} control rows; expected N + 1",
            states.len(),
            controls.nrows()
        )));
    }
    if controls.ncols() != m {
        return Err(OcError::Shape(format!(
            "controls have {} columns, model has {m}",
            controls.ncols()
        )));
    }
    let samples = states[0].samples();
    if states.iter().any(|s| s.dim() != n || s.samples() != samples) {
        return Err(OcError::Shape("state ensembles differ in shape or dimension".into()));
    }
    if let Some(t) = terminal {
        if t.dim() != (samples, n) {
            return Err(OcError::Shape(format!(
                "terminal gradient is {:?}, expected ({samples}, {n})",
                t.dim()
            )));
        }
    }
    Ok(())
}

/// Exact discrete adjoint of one segment: `λ_N = terminal`, then the
/// transposed step Jacobians carry it back to `λ_0`. `running(j, i, x, out)`
/// adds the gradient of any running cost at step `j`.
pub fn adjoint_sweep(
    scheme: &StepScheme,
    model: &dyn DynamicsModel,
    states: &[EnsembleState],
    controls: ArrayView2<f64>,
    terminal: ArrayView2<f64>,
    running: Option<RunningSeed>,
) -> Result<Vec<Array2<f64>>> {
    check_segment(model, states, controls, Some(terminal))?;
    let sweep = SampleSweep {
        scheme,
        model,
        states,
        controls,
    };
    let (steps, n, _) = sweep.dims();
    let samples = states[0].samples();
    let per_sample: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let row = terminal.row(i).to_vec();
            sweep.costates(i, &row, running)
        })
        .collect::<Result<_>>()?;
    let mut out = vec![Array2::<f64>::zeros((samples, n)); steps + 1];
    for (i, lam) in per_sample.iter().enumerate() {
        for (j, mat) in out.iter_mut().enumerate() {
            mat.row_mut(i)
                .as_slice_mut()
                .expect("standard layout")
                .copy_from_slice(&lam[j * n..(j + 1) * n]);
        }
    }
    Ok(out)
}

/// `Σ_i ∂Q/∂u_jᵀ λ⁽ⁱ⁾_{j+1}` for every step, using explicit step Jacobians
/// (and the multistep history adjoint for Adams–Bashforth).
pub fn control_gradient_from_costates(
    scheme: &StepScheme,
    model: &dyn DynamicsModel,
    states: &[EnsembleState],
    controls: ArrayView2<f64>,
    costates: &[Array2<f64>],
) -> Result<Array2<f64>> {
    check_segment(model, states, controls, None)?;
    if costates.len() != states.len() {
        return Err(OcError::Shape(format!(
            "{} costates for {} states",
            costates.len(),
            states.len()
        )));
    }
    let sweep = SampleSweep {
        scheme,
        model,
        states,
        controls,
    };
    let (steps, _, m) = sweep.dims();
    let samples = states[0].samples();
    let per_sample: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|i| sweep.control_gradient(i, costates))
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; steps * m];
    for g in &per_sample {
        total.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    Ok(Array2::from_shape_vec((steps, m), total).expect("sized"))
}

/// Costates of the whole horizon for `trajectory` produced by single
/// shooting under `controls`, with the terminal and running costs of the
/// problem (per sample, not divided by `M`).
pub fn problem_adjoint(
    transcription: &Transcription,
    trajectory: &EnsembleTrajectory,
    controls: &ControlSchedule,
) -> Result<AdjointTrajectory> {
    let problem = transcription.problem();
    let model = problem.model.as_ref();
    let cost = &problem.cost;
    let final_state = trajectory.final_state();
    let (samples, n) = (final_state.samples(), final_state.dim());
    let mut terminal = Array2::<f64>::zeros((samples, n));
    for i in 0..samples {
        let x = final_state.row(i);
        for t in &cost.terminal {
            terminal[[i, t.state]] += 2.0 * t.weight * (x[t.state] - t.target);
        }
    }
    let count = problem.plan.segment_count();
    let mut segments: Vec<Vec<Array2<f64>>> = vec![Vec::new(); count];
    for k in (0..count).rev() {
        let dt = problem.plan.segments()[k].step_size();
        let running = |_j: usize, _i: usize, x: &[f64], out: &mut [f64]| {
            for t in &cost.running {
                out[t.state] += dt * 2.0 * t.weight * (x[t.state] - t.target);
            }
        };
        let seed: Option<RunningSeed> = if cost.running.is_empty() { None } else { Some(&running) };
        let lam = adjoint_sweep(
            &transcription.schemes()[k],
            model,
            trajectory.segment(k),
            controls.segment(k),
            terminal.view(),
            seed,
        )?;
        terminal = lam[0].clone();
        segments[k] = lam;
    }
    Ok(AdjointTrajectory { segments })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArgminResult {
    pub control: Vec<f64>,
    /// Set when `q = 0` and the minimizer sits on a bound by sign alone.
    pub bang_bang: bool,
}

fn mean_hamiltonian(
    model: &dyn DynamicsModel,
    states: &EnsembleState,
    costates: ArrayView2<f64>,
    u: &[f64],
    q: f64,
    f: &mut [f64],
) -> f64 {
    let mut acc = 0.0;
    for i in 0..states.samples() {
        if model.rhs(states.row(i), u, f).is_err() {
            return f64::INFINITY;
        }
        acc += costates.row(i).iter().zip(f.iter()).map(|(a, b)| a * b).sum::<f64>();
    }
    acc / states.samples() as f64 + 0.5 * q * u.iter().map(|v| v * v).sum::<f64>()
}

fn golden_section(mut phi: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (phi(c), phi(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = phi(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = phi(d);
        }
    }
    let mid = 0.5 * (a + b);
    [(lo, phi(lo)), (hi, phi(hi))]
        .into_iter()
        .fold((mid, phi(mid)), |best, cand| if cand.1 < best.1 { cand } else { best })
        .0
}

/// Minimizer over the box of `(1/M) Σ_i H(u, x⁽ⁱ⁾, λ⁽ⁱ⁾)`.
pub fn ensemble_argmin_control(
    model: &dyn DynamicsModel,
    states: &EnsembleState,
    costates: ArrayView2<f64>,
    q: f64,
    bounds: &[Option<Bounds>],
) -> Result<ArgminResult> {
    let (n, m) = (model.state_dim(), model.control_dim());
    let samples = states.samples();
    if samples == 0 {
        return Err(OcError::EmptyInput("ensemble has no samples"));
    }
    if states.dim() != n || costates.dim() != (samples, n) {
        return Err(OcError::Shape(format!(
            "states {}x{} and costates {:?} must both be M x {n}",
            samples,
            states.dim(),
            costates.dim()
        )));
    }
    if !bounds.is_empty() && bounds.len() != m {
        return Err(OcError::Shape(format!("{} bounds for {m} controls", bounds.len())));
    }
    let bound = |ch: usize| bounds.get(ch).copied().flatten();
    let mut u: Vec<f64> = (0..m).map(|ch| bound(ch).map_or(0.0, |b| b.clip(0.0))).collect();
    if model.is_control_affine() {
        let mut ju = vec![0.0; n * m];
        let mut col = vec![0.0; m];
        let mut coeff = vec![0.0; m];
        for i in 0..samples {
            model.jac_u(states.row(i), &u, &mut ju).map_err(|e| e.at(i))?;
            let lam = costates.row(i).to_vec();
            transpose_mul(&ju, n, m, &lam, &mut col);
            coeff.iter_mut().zip(&col).for_each(|(c, v)| *c += v);
        }
        coeff.iter_mut().for_each(|c| *c /= samples as f64);
        let mut bang_bang = false;
        for (ch, c) in coeff.iter().enumerate() {
            u[ch] = if q > 0.0 {
                let v = -c / q;
                bound(ch).map_or(v, |b| b.clip(v))
            } else {
                let b = bound(ch).ok_or_else(|| {
                    OcError::Unsupported(format!(
                        "control {ch}: q = 0 needs a bounded control for the bang-bang minimizer"
                    ))
                })?;
                bang_bang = true;
                if *c > 0.0 {
                    b.lo
                } else if *c < 0.0 {
                    b.hi
                } else {
                    b.clip(0.0)
                }
            };
        }
        return Ok(ArgminResult { control: u, bang_bang });
    }
    let mut f = vec![0.0; n];
    for sweep in 0..100 {
        let mut change = 0.0f64;
        for ch in 0..m {
            let b = bound(ch).ok_or_else(|| {
                OcError::Unsupported(format!(
                    "control {ch}: Hamiltonian search on a non-affine model needs bounds"
                ))
            })?;
            let mut trial = u.clone();
            let best = golden_section(
                |v| {
                    trial[ch] = v;
                    mean_hamiltonian(model, states, costates, &trial, q, &mut f)
                },
                b.lo,
                b.hi,
                1e-8,
            );
            change = change.max((best - u[ch]).abs());
            u[ch] = best;
        }
        if m == 1 || (sweep > 0 && change < 1e-9) {
            break;
        }
    }
    Ok(ArgminResult {
        control: u,
        bang_bang: false,
    })
}

/// Pass thresholds as fractions of the control range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyConfig {
    pub mean_fraction: f64,
    pub max_fraction: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            mean_fraction: 0.05,
            max_fraction: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalityReport {
    pub times: Vec<f64>,
    #[serde(skip)]
    pub candidate: Array2<f64>,
    #[serde(skip)]
    pub minimizer: Array2<f64>,
    /// `‖û(t_j) − u*(t_j)‖∞` per control grid point.
    #[serde(skip)]
    pub discrepancy: Vec<f64>,
    pub max_discrepancy: f64,
    pub mean_discrepancy: f64,
    pub fraction_within: f64,
    /// Smallest range over bounded channels, or 1 if no channel is bounded.
    pub control_range: f64,
    pub config: VerifyConfig,
    pub passed: bool,
    pub bang_bang: bool,
    pub note: &'static str,
}

impl OptimalityReport {
    /// Columns `t, u_hat_1.., u_star_1.., discrepancy_1..`.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> io::Result<()> {
        let m = self.candidate.ncols();
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=m).map(|c| format!("u_hat_{c}")));
        header.extend((1..=m).map(|c| format!("u_star_{c}")));
        header.extend((1..=m).map(|c| format!("discrepancy_{c}")));
        w.write_record(&header)?;
        for (j, t) in self.times.iter().enumerate() {
            let hat = self.candidate.row(j);
            let star = self.minimizer.row(j);
            let mut rec = vec![format!("{t:.16e}")];
            rec.extend(hat.iter().map(|v| format!("{v:.16e}")));
            rec.extend(star.iter().map(|v| format!("{v:.16e}")));
            rec.extend(
                hat.iter()
                    .zip(star.iter())
                    .map(|(a, b)| format!("{:.16e}", (a - b).abs())),
            );
            w.write_record(&rec)?;
        }
        w.flush()
    }
}

/// Forward-propagates `samples` fresh draws (seeded by `seed`) under the
/// candidate, sweeps the adjoint back, and compares the candidate with the
/// pointwise Hamiltonian minimizer at every control grid point.
pub fn verify(
    problem: &OcProblem,
    candidate: &ControlSchedule,
    samples: usize,
    seed: u64,
    config: &VerifyConfig,
) -> Result<OptimalityReport> {
    let mut p = problem.clone();
    p.samples = samples;
    p.seed = seed;
    let tr = p.instantiate()?;
    if !candidate.is_compatible(&p.plan) || candidate.control_dim() != p.control_dim() {
        return Err(OcError::Shape(
            "candidate control does not match the problem's plan".into(),
        ));
    }
    let traj = tr.simulate(candidate)?;
    let adjoint = problem_adjoint(&tr, &traj, candidate)?;
    let model = p.model.as_ref();
    let q = p.cost.control_weight;
    let bounds: Vec<Option<Bounds>> = (0..p.control_dim()).map(|ch| p.control_bound(ch)).collect();
    let points: Vec<(usize, usize)> = p
        .plan
        .segments()
        .iter()
        .enumerate()
        .flat_map(|(k, s)| (0..s.steps).map(move |j| (k, j)))
        .collect();
    let results: Vec<ArgminResult> = points
        .par_iter()
        .map(|&(k, j)| {
            ensemble_argmin_control(model, &traj.segment(k)[j], adjoint.segment(k)[j + 1].view(), q, &bounds)
        })
        .collect::<Result<_>>()?;
    let m = p.control_dim();
    let total = points.len();
    let mut minimizer = Array2::<f64>::zeros((total, m));
    let mut candidate_rows = Array2::<f64>::zeros((total, m));
    let mut discrepancy = Vec::with_capacity(total);
    for (idx, (res, hat)) in results.iter().zip(candidate.rows()).enumerate() {
        minimizer
            .row_mut(idx)
            .iter_mut()
            .zip(&res.control)
            .for_each(|(a, b)| *a = *b);
        candidate_rows
            .row_mut(idx)
            .iter_mut()
            .zip(hat)
            .for_each(|(a, b)| *a = *b);
        discrepancy.push(
            hat.iter()
                .zip(&res.control)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        );
    }
    let control_range = bounds.iter().flatten().map(Bounds::range).fold(f64::INFINITY, f64::min);
    let control_range = if control_range.is_finite() { control_range } else { 1.0 };
    let max_discrepancy = discrepancy.iter().copied().fold(0.0, f64::max);
    let mean_discrepancy = discrepancy.iter().sum::<f64>() / total as f64;
    let within = config.mean_fraction * control_range;
    let fraction_within = discrepancy.iter().filter(|&&d| d <= within).count() as f64 / total as f64;
    Ok(OptimalityReport {
        times: p.plan.control_times(),
        candidate: candidate_rows,
        minimizer,
        discrepancy,
        max_discrepancy,
        mean_discrepancy,
        fraction_within,
        control_range,
        config: *config,
        passed: mean_discrepancy <= config.mean_fraction * control_range
            && max_discrepancy <= config.max_fraction * control_range,
        bang_bang: results.iter().any(|r| r.bang_bang),
        note: NECESSARY_CONDITION_NOTE,
    })
}
