#![allow(dead_code, clippy::neg_cmp_op_on_partial_ord)]

use std::f64::consts::PI;
use std::sync::Arc;

use ensemble_oc::catalog::{UAV_NOMINAL_STATE, UGV_RADIUS};
use ensemble_oc::models::{
    jacobian_u, jacobian_x, ChebyshevReactionDiffusion, FixedWingUav, LinearScalar, UgvBicycle, UgvDifferentialDrive,
    ZeroDynamics,
};
use ensemble_oc::optimizer::{minimize, BoxBound, FnProblem};
use ensemble_oc::transcription::NlpPoint;
use ensemble_oc::{
    build, fd_gradient, propagate_segment, sample_initial_ensemble, solve_with_log, ControlSchedule, DynamicsModel,
    EnsembleState, FdStep, Overrides, ProblemId, RandomInputSpec, SchemeKind, SolverConfig, StepScheme, Transcription,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = std::result::Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const ALL_SCHEMES: [SchemeKind; 6] = [
    SchemeKind::Euler,
    SchemeKind::Rk3,
    SchemeKind::Rk4,
    SchemeKind::AdamsBashforth(1),
    SchemeKind::AdamsBashforth(2),
    SchemeKind::AdamsBashforth(3),
];

pub type Sampler = Box<dyn Fn(&mut ChaCha8Rng) -> Vec<f64>>;

/// A built-in model with a sampler for valid states and controls.
pub struct ModelCase {
    pub model: Arc<dyn DynamicsModel>,
    pub state: Sampler,
    pub control: Sampler,
    /// Step size that keeps short explicit horizons well inside the model's domain.
    pub dt: f64,
}

fn uniform(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * r.random::<f64>()
}

fn box_controls(m: usize, half: f64) -> Sampler {
    Box::new(move |r| (0..m).map(|_| uniform(r, -half, half)).collect())
}

pub fn model_cases() -> Vec<ModelCase> {
    let pde = ChebyshevReactionDiffusion::new(8).expect("valid node count");
    let nodes = pde.nodes().to_vec();
    vec![
        ModelCase {
            model: Arc::new(UgvDifferentialDrive::fixed(UGV_RADIUS)),
            state: Box::new(|r| (0..3).map(|_| uniform(r, -2.0, 2.0)).collect()),
            control: box_controls(2, 1.0),
            dt: 0.1,
        },
        ModelCase {
            model: Arc::new(UgvDifferentialDrive::appended()),
            state: Box::new(|r| {
                vec![
                    uniform(r, -2.0, 2.0),
                    uniform(r, -2.0, 2.0),
                    uniform(r, -PI, PI),
                    uniform(r, 1.0, 1.5),
                ]
            }),
            control: box_controls(2, 1.0),
            dt: 0.1,
        },
        ModelCase {
            model: Arc::new(UgvBicycle { wheelbase: 1.0 }),
            state: Box::new(|r| (0..3).map(|_| uniform(r, -2.0, 2.0)).collect()),
            control: box_controls(2, 1.0),
            dt: 0.1,
        },
        ModelCase {
            model: Arc::new(FixedWingUav),
            state: Box::new(|r| {
                let mut x = UAV_NOMINAL_STATE.to_vec();
                for (i, v) in x.iter_mut().enumerate() {
                    let scale = if i < 3 { 5.0 } else { 0.02 * v.abs().max(0.1) };
                    *v += uniform(r, -scale, scale);
                }
                x
            }),
            control: Box::new(|r| vec![uniform(r, -1.0, 1.0), uniform(r, -0.05, 0.05), uniform(r, -0.05, 0.05)]),
            dt: 0.1,
        },
        ModelCase {
            model: Arc::new(pde),
            state: Box::new(move |r| {
                nodes
                    .iter()
                    .map(|x| 2.0 * (PI * x).sin() + uniform(r, -0.05, 0.05))
                    .collect()
            }),
            control: box_controls(1, 1.0),
            dt: 0.001,
        },
        ModelCase {
            model: Arc::new(LinearScalar { a: -0.7, b: 1.3 }),
            state: Box::new(|r| vec![uniform(r, -1.0, 1.0)]),
            control: box_controls(1, 1.0),
            dt: 0.1,
        },
        ModelCase {
            model: Arc::new(ZeroDynamics {
                state_dim: 3,
                control_dim: 2,
            }),
            state: Box::new(|r| (0..3).map(|_| uniform(r, -1.0, 1.0)).collect()),
            control: box_controls(2, 1.0),
            dt: 0.1,
        },
    ]
}

/// Central-difference Jacobians with per-coordinate step `h (1 + |v|)`.
pub fn fd_jacobians(model: &dyn DynamicsModel, x: &[f64], u: &[f64], h: f64) -> (Array2<f64>, Array2<f64>) {
    let (n, m) = (model.state_dim(), model.control_dim());
    let mut jx = Array2::zeros((n, n));
    let mut ju = Array2::zeros((n, m));
    let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
    let mut xp = x.to_vec();
    for j in 0..n {
        let hj = h * (1.0 + x[j].abs());
        xp[j] = x[j] + hj;
        model.rhs(&xp, u, &mut fp).expect("valid state");
        xp[j] = x[j] - hj;
        model.rhs(&xp, u, &mut fm).expect("valid state");
        xp[j] = x[j];
        for i in 0..n {
            jx[[i, j]] = (fp[i] - fm[i]) / (2.0 * hj);
        }
    }
    let mut up = u.to_vec();
    for j in 0..m {
        let hj = h * (1.0 + u[j].abs());
        up[j] = u[j] + hj;
        model.rhs(x, &up, &mut fp).expect("valid state");
        up[j] = u[j] - hj;
        model.rhs(x, &up, &mut fm).expect("valid state");
        up[j] = u[j];
        for i in 0..n {
            ju[[i, j]] = (fp[i] - fm[i]) / (2.0 * hj);
        }
    }
    (jx, ju)
}

/// Analytic Jacobians against central differences, `h = 1e-5`, tolerance
/// `1e-6` relative to the largest entry.
pub fn check_model_jacobians(seed: u64) -> Check {
    let mut r = rng(seed);
    for case in model_cases() {
        let model = case.model.as_ref();
        let x = (case.state)(&mut r);
        let u = (case.control)(&mut r);
        let ax = jacobian_x(model, &x, &u).map_err(|e| e.to_string())?;
        let au = jacobian_u(model, &x, &u).map_err(|e| e.to_string())?;
        let (fx, fu) = fd_jacobians(model, &x, &u, 1e-5);
        let scale = ax.iter().chain(au.iter()).fold(1.0f64, |a, v| a.max(v.abs()));
        for (name, a, f) in [("jac_x", &ax, &fx), ("jac_u", &au, &fu)] {
            for ((idx, va), vf) in a.indexed_iter().zip(f.iter()) {
                if (va - vf).abs() > 1e-6 * scale {
                    return Err(format!("{} {name}{idx:?}: analytic {va}, fd {vf}", model.name()));
                }
            }
        }
    }
    Ok(())
}

/// Least-squares slope of `log err` against `log Δt` on `ẋ = x`, `x(0) = 1`,
/// `t ∈ [0, 1]`, for Δt ∈ {0.1, 0.05, 0.025}.
pub fn observed_order(kind: SchemeKind) -> ensemble_oc::Result<f64> {
    let model = LinearScalar { a: 1.0, b: 0.0 };
    let x0 = EnsembleState::replicate(&[1.0], 1)?;
    let mut pts = Vec::new();
    for steps in [10usize, 20, 40] {
        let dt = 1.0 / steps as f64;
        let scheme = StepScheme::new(kind, dt)?;
        let states = propagate_segment(&scheme, &model, &x0, Array2::zeros((steps, 1)).view())?;
        let err = (states[steps].row(0)[0] - 1f64.exp()).abs();
        pts.push((dt.ln(), err.ln()));
    }
    let n = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

pub fn check_integrator_orders() -> Check {
    for kind in ALL_SCHEMES {
        let expected = StepScheme::new(kind, 0.1).map_err(|e| e.to_string())?.order() as f64;
        let p = observed_order(kind).map_err(|e| e.to_string())?;
        if p < expected - 0.2 {
            return Err(format!("{kind}: observed order {p:.3}, expected {expected}"));
        }
    }
    Ok(())
}

pub fn check_sampling_determinism(seed: u64) -> Check {
    let spec = build(ProblemId::UavStochastic, &Overrides::default())
        .map_err(|e| e.to_string())?
        .initial;
    let a = sample_initial_ensemble(&spec, 64, seed).map_err(|e| e.to_string())?;
    let b = sample_initial_ensemble(&spec, 64, seed).map_err(|e| e.to_string())?;
    if a.as_slice()
        .iter()
        .zip(b.as_slice())
        .any(|(x, y)| x.to_bits() != y.to_bits())
    {
        return Err(format!("seed {seed}: repeated draws differ"));
    }
    let c = sample_initial_ensemble(&spec, 64, seed.wrapping_add(1)).map_err(|e| e.to_string())?;
    if a.as_slice() == c.as_slice() {
        return Err(format!(
            "seeds {seed} and {} drew identical ensembles",
            seed.wrapping_add(1)
        ));
    }
    Ok(())
}

/// Stochastic UGV with `t_f = 6`.
pub fn small_ugv(samples: usize, segments: usize, dt: f64) -> Transcription {
    let o = Overrides {
        samples: Some(samples),
        segments: Some(segments),
        dt: Some(dt),
        final_time: Some(6.0),
        ..Default::default()
    };
    build(ProblemId::UgvStochastic, &o)
        .and_then(|p| p.instantiate())
        .expect("catalog problem")
}

pub fn random_point(tr: &Transcription, r: &mut ChaCha8Rng) -> NlpPoint {
    let layout = tr.layout();
    let controls = ControlSchedule::from_flat(
        &tr.problem().plan,
        layout.control_dim,
        &(0..layout.control_len())
            .map(|_| uniform(r, -0.9, 0.9))
            .collect::<Vec<_>>(),
    )
    .expect("sized");
    let mut p = tr.initial_guess(&controls).expect("propagates");
    let start = layout.control_len();
    for v in &mut p.values[start..] {
        *v += uniform(r, -0.2, 0.2);
    }
    p
}

fn compare(what: &str, exact: &[f64], fd: &[f64], tol: f64) -> Check {
    for (k, (a, b)) in exact.iter().zip(fd).enumerate() {
        if (a - b).abs() > tol {
            return Err(format!("{what}[{k}]: exact {a}, fd {b}"));
        }
    }
    Ok(())
}

/// Continuity residual and objective gradients against central differences.
pub fn check_transcription_gradients(seed: u64) -> Check {
    let tr = small_ugv(3, 3, 0.5);
    let mut r = rng(seed);
    let p = random_point(&tr, &mut r);
    let layout = p.layout;
    let at = |v: &[f64]| NlpPoint::new(layout, v.to_vec());
    let (_, gc) = tr.continuity_residual(&p).map_err(|e| e.to_string())?;
    let fd = fd_gradient(|v| Ok(tr.continuity_residual(&at(v)?)?.0), &p.values, FdStep::default())
        .map_err(|e| e.to_string())?;
    compare("continuity gradient", &gc, &fd, 1e-6)?;
    let (_, gj) = tr.objective_and_gradient(&p).map_err(|e| e.to_string())?;
    let fd =
        fd_gradient(|v| tr.evaluate_objective(&at(v)?), &p.values, FdStep::default()).map_err(|e| e.to_string())?;
    compare("objective gradient", &gj, &fd, 1e-6)
}

/// Accepted steps satisfy Armijo, iterates stay strictly inside the boxes,
/// and a converged report meets the outer tolerance.
pub fn check_optimizer_invariants() -> Check {
    let tr = small_ugv(6, 2, 0.5);
    let config = SolverConfig::default();
    let zero = ControlSchedule::zeros(&tr.problem().plan, 2);
    let x0 = tr.initial_guess(&zero).map_err(|e| e.to_string())?;
    let mut records = Vec::new();
    let report = solve_with_log(&tr, &x0, &config, |r| records.push(*r)).map_err(|e| e.to_string())?;
    for r in &records {
        if !(r.slope < 0.0) {
            return Err(format!("iteration {}: non-descent slope {}", r.iteration, r.slope));
        }
        let bound = r.merit_before + config.armijo * r.step * r.slope;
        if r.merit > bound + 1e-12 * r.merit_before.abs() {
            return Err(format!(
                "iteration {}: merit {} above Armijo bound {bound}",
                r.iteration, r.merit
            ));
        }
    }
    let controls = &report.x[..tr.layout().control_len()];
    if let Some(u) = controls.iter().find(|u| u.abs() >= 1.0) {
        return Err(format!("control {u} left the open box (-1, 1)"));
    }
    if report.status.is_converged()
        && (report.continuity > config.outer_tolerance || report.kkt_residual > config.outer_tolerance)
    {
        return Err(format!(
            "converged with continuity {} and KKT residual {}",
            report.continuity, report.kkt_residual
        ));
    }

    let clipped = FnProblem {
        bounds: vec![Some(BoxBound::new(-1.0, 1.0))],
        f: |x: &[f64]| ((x[0] - 3.0).powi(2), vec![2.0 * (x[0] - 3.0)]),
    };
    let rep = minimize(&clipped, &[0.0], &config, |_| {}).map_err(|e| e.to_string())?;
    if (rep.x[0] - 1.0).abs() > 1e-4 {
        return Err(format!("(u-3)^2 on [-1, 1]: u* = {}", rep.x[0]));
    }
    Ok(())
}

pub fn random_controls(r: &mut ChaCha8Rng, case: &ModelCase, steps: usize) -> Array2<f64> {
    let m = case.model.control_dim();
    let mut u = Array2::zeros((steps, m));
    for mut row in u.rows_mut() {
        row.assign(&ndarray::ArrayView1::from(&(case.control)(r)));
    }
    u
}

pub fn random_ensemble(r: &mut ChaCha8Rng, case: &ModelCase, samples: usize) -> EnsembleState {
    let rows: Vec<Vec<f64>> = (0..samples).map(|_| (case.state)(r)).collect();
    EnsembleState::from_rows(&rows).expect("consistent rows")
}

pub fn dirac(x: &[f64]) -> RandomInputSpec {
    RandomInputSpec::dirac(x).expect("finite")
}
