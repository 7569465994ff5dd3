//! Exact ensemble gradients by backward propagation through the stored
//! forward trajectory, plus a central finite-difference oracle.
//!
//! The backward sweep never forms step Jacobians. At each step it recomputes
//! the stage values of that step from the stored state and pulls the row
//! adjoint back through them with vector-Jacobian products of the model. The
//! extra memory is one adjoint per sample (times the Adams–Bashforth window)
//! plus per-batch stage scratch, independent of the number of steps.

use ndarray::{Array2, ArrayView2};

use crate::ensemble::EnsembleState;
use crate::error::{OcError, Result};
use crate::integrators::{rk_stages, rk_vjp_sample, RkWork, StepScheme};
use crate::models::DynamicsModel;
use crate::parallel::Parallelism;

/// Adds `∂(running functional)/∂x` at local step `j` for sample `i` to `out`.
pub type RunningSeed<'a> = &'a (dyn Fn(usize, usize, &[f64], &mut [f64]) + Sync);

/// Gradient of a seeded functional with respect to one segment's controls
/// (`N_k × m`) and per-sample initial states (`M × n`).
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentGradient {
    pub controls: Array2<f64>,
    pub initial_states: Array2<f64>,
}

pub fn backward_gradient(
    scheme: &StepScheme,
    model: &dyn DynamicsModel,
    states: &[EnsembleState],
    controls: ArrayView2<'_, f64>,
    terminal_seed: ArrayView2<'_, f64>,
    running_seed: Option<RunningSeed<'_>>,
    par: &Parallelism,
) -> Result<SegmentGradient> {
    let samples = terminal_seed.nrows();
    let (n, m) = (model.state_dim(), model.control_dim());
    let mut gu = vec![0.0; controls.nrows() * m];
    let mut gx = vec![0.0; samples * n];
    backward_gradient_into(
        scheme,
        model,
        states,
        controls,
        terminal_seed,
        running_seed,
        par,
        &mut gu,
        &mut gx,
    )?;
    Ok(SegmentGradient {
        controls: Array2::from_shape_vec((controls.nrows(), m), gu).expect("sized"),
        initial_states: Array2::from_shape_vec((samples, n), gx).expect("sized"),
    })
}

struct Work {
    rk: RkWork,
    lam: Vec<f64>,
    fbar: Vec<f64>,
    gx: Vec<f64>,
    gu: Vec<f64>,
    vx: Vec<f64>,
    vu: Vec<f64>,
}

/// As [`backward_gradient`], writing into caller-owned buffers:
/// `out_controls` (`N_k·m`, overwritten) and `out_initial` (`M·n`, overwritten).
#[allow(clippy::too_many_arguments)]
pub fn backward_gradient_into(
    scheme: &StepScheme,
    model: &dyn DynamicsModel,
    states: &[EnsembleState],
    controls: ArrayView2<'_, f64>,
    terminal_seed: ArrayView2<'_, f64>,
    running_seed: Option<RunningSeed<'_>>,
    par: &Parallelism,
    out_controls: &mut [f64],
    out_initial: &mut [f64],
) -> Result<()> {
    let (n, m) = (model.state_dim(), model.control_dim());
    let steps = controls.nrows();
    let samples = terminal_seed.nrows();
    if states.len() != steps + 1 {
        return Err(OcError::Shape(format!(
            "trajectory has {} states but controls imply {}",
            states.len(),
            steps + 1
        )));
    }
    if controls.ncols() != m || terminal_seed.ncols() != n {
        return Err(OcError::Shape("seed or control width differs from model".into()));
    }
    if states.iter().any(|s| s.samples() != samples || s.dim() != n) {
        return Err(OcError::Shape("trajectory ensemble shape differs from seed".into()));
    }
    if out_controls.len() != steps * m || out_initial.len() != samples * n {
        return Err(OcError::Shape("gradient output buffers have the wrong length".into()));
    }
    let controls = controls.as_standard_layout();
    let controls = controls.as_slice().expect("standard layout");
    let h = scheme.dt;
    let tab = scheme.tableau();
    let ab = scheme.ab_weights();
    let s = scheme.history_len();

    // λ_k lives in slot k mod s; λ_{t} overwrites λ_{t+s} row by row.
    let mut slots: Vec<Vec<f64>> = (0..s).map(|_| vec![0.0; samples * n]).collect();
    for (dst, src) in slots[steps % s].iter_mut().zip(terminal_seed.iter()) {
        *dst = *src;
    }
    let batches = par.batch_count(samples);
    let mut works: Vec<Work> = (0..batches)
        .map(|_| Work {
            rk: RkWork::new(tab.stages(), n, m),
            lam: vec![0.0; n],
            fbar: vec![0.0; n],
            gx: vec![0.0; n],
            gu: vec![0.0; m],
            vx: vec![0.0; n],
            vu: vec![0.0; m],
        })
        .collect();

    for t in (0..steps).rev() {
        let target_slot = t % s;
        let mut target = std::mem::take(&mut slots[target_slot]);
        let others = &slots;
        let x_prev = states[t].as_slice();
        let u = &controls[t * m..(t + 1) * m];
        let multistep = scheme.is_multistep(t);
        par.run_batches(n, &mut target, &mut works, |first, rows, w| {
            w.gu.fill(0.0);
            for (r, row) in rows.chunks_exact_mut(n).enumerate() {
                let i = first + r;
                let lam_slot = |k: usize| -> &[f64] {
                    let slot = k % s;
                    if slot == target_slot {
                        &row[..]
                    } else {
                        &others[slot][i * n..(i + 1) * n]
                    }
                };
                w.lam.copy_from_slice(lam_slot(t + 1));
                if let Some(weights) = ab {
                    w.fbar.fill(0.0);
                    for (q, &bq) in weights.iter().enumerate() {
                        let j = t + q;
                        if j < steps && scheme.is_multistep(j) {
                            for (f, l) in w.fbar.iter_mut().zip(lam_slot(j + 1)) {
                                *f += h * bq * l;
                            }
                        }
                    }
                }
                let x = &x_prev[i * n..(i + 1) * n];
                if multistep {
                    w.gx.copy_from_slice(&w.lam);
                } else {
                    rk_stages(&tab, model, h, x, u, &mut w.rk).map_err(|e| e.at(i))?;
                    rk_vjp_sample(&tab, model, h, u, &w.lam, &mut w.rk, &mut w.gx, &mut w.gu).map_err(|e| e.at(i))?;
                }
                if ab.is_some() && w.fbar.iter().any(|&v| v != 0.0) {
                    model.vjp(x, u, &w.fbar, &mut w.vx, &mut w.vu).map_err(|e| e.at(i))?;
                    for (g, v) in w.gx.iter_mut().zip(&w.vx) {
                        *g += v;
                    }
                    for (g, v) in w.gu.iter_mut().zip(&w.vu) {
                        *g += v;
                    }
                }
                if let Some(seed) = running_seed {
                    seed(t, i, x, &mut w.gx);
                }
                row.copy_from_slice(&w.gx);
            }
            Ok(())
        })?;
        slots[target_slot] = target;
        let gu_t = &mut out_controls[t * m..(t + 1) * m];
        gu_t.fill(0.0);
        for w in works.iter().take(batches) {
            for (g, v) in gu_t.iter_mut().zip(&w.gu) {
                *g += v;
            }
        }
    }
    out_initial.copy_from_slice(&slots[0]);
    Ok(())
}

/// Step rule for [`fd_gradient`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FdStep {
    Absolute(f64),
    /// `h_i = h · (1 + |p_i|)`.
    Relative(f64),
}

impl Default for FdStep {
    fn default() -> Self {
        FdStep::Relative(1e-6)
    }
}

/// Central differences `(f(p + h e_i) − f(p − h e_i)) / 2h` for every coordinate.
pub fn fd_gradient<F>(mut functional: F, point: &[f64], step: FdStep) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let base = match step {
        FdStep::Absolute(h) | FdStep::Relative(h) => h,
    };
    if !(base > 0.0 && base.is_finite()) {
        return Err(OcError::Parameter(format!(
            "finite-difference step must be positive, got {base}"
        )));
    }
    let mut p = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let h = match step {
            FdStep::Absolute(h) => h,
            FdStep::Relative(h) => h * (1.0 + point[i].abs()),
        };
        p[i] = point[i] + h;
        let fp = functional(&p)?;
        p[i] = point[i] - h;
        let fm = functional(&p)?;
        p[i] = point[i];
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}
