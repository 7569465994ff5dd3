mod common;

use common::*;
use ensemble_oc::models::{ChebyshevReactionDiffusion, FixedWingUav, UgvBicycle, UgvDifferentialDrive};
use ensemble_oc::{
    backward_gradient, grid_times, propagate_segment, sample_initial_ensemble, step, ControlSchedule, Distribution,
    DynamicsModel, EnsembleState, RandomInputSpec, SchemeKind, ShootingPlan, StepScheme,
};
use ndarray::Array2;
use proptest::prelude::*;

#[test]
fn integrator_orders() {
    check_integrator_orders().unwrap();
}

#[test]
fn model_jacobians_match_finite_differences() {
    for seed in 0..8 {
        check_model_jacobians(seed).unwrap();
    }
}

#[test]
fn transcription_gradients_match_finite_differences() {
    for seed in 0..3 {
        check_transcription_gradients(seed).unwrap();
    }
}

#[test]
fn optimizer_invariants() {
    check_optimizer_invariants().unwrap();
}

#[test]
fn ugv_rhs_hand_values() {
    let m = UgvDifferentialDrive::fixed(1.25);
    let mut f = [0.0; 3];
    m.rhs(&[0.0, 0.0, 0.0], &[1.0, 0.0], &mut f).unwrap();
    assert_eq!(f, [1.25, 0.0, 0.0]);
    let x = EnsembleState::replicate(&[0.0, 0.0, 0.0], 2).unwrap();
    let next = step(
        &StepScheme::new(SchemeKind::Euler, 0.1).unwrap(),
        &m,
        &x,
        &[1.0, 0.0],
        None,
    )
    .unwrap();
    assert!((next.row(1)[0] - 0.125).abs() < 1e-15);
}

#[test]
fn domain_errors_name_the_sample() {
    let bicycle = UgvBicycle { wheelbase: 1.0 };
    let x = EnsembleState::replicate(&[0.0; 3], 3).unwrap();
    let err = ensemble_oc::models::rhs_batch(&bicycle, &x, &[1.0, 1.6])
        .unwrap_err()
        .to_string();
    assert!(err.contains("sample 0"), "{err}");

    let mut rows = vec![ensemble_oc::catalog::UAV_NOMINAL_STATE.to_vec(); 3];
    rows[2][FixedWingUav::V] = 0.0;
    let x = EnsembleState::from_rows(&rows).unwrap();
    let err = ensemble_oc::models::rhs_batch(&FixedWingUav, &x, &[0.0; 3])
        .unwrap_err()
        .to_string();
    assert!(err.contains("sample 2"), "{err}");
}

#[test]
fn pde_zero_is_an_equilibrium() {
    let m = ChebyshevReactionDiffusion::new(12).unwrap();
    let mut f = vec![1.0; 12];
    m.rhs(&[0.0; 12], &[0.0], &mut f).unwrap();
    assert!(f.iter().all(|v| *v == 0.0));
}

#[test]
fn trajectory_stores_n_plus_s_states() {
    let plan = ShootingPlan::uniform(10.0, 2, 0.05).unwrap();
    assert_eq!(plan.segments()[0].steps, 100);
    assert_eq!(grid_times(&plan).len(), 202);
    let tr = small_ugv(4, 3, 0.1);
    let plan = &tr.problem().plan;
    let traj = tr.simulate(&ControlSchedule::zeros(plan, 2)).unwrap();
    assert_eq!(traj.states().count(), plan.total_steps() + plan.segment_count());
}

#[test]
fn backward_gradient_of_integrator_chain() {
    // ẋ = u with Euler and J = ½ x_N²: every control sensitivity is x_N Δt.
    let model = ensemble_oc::models::LinearScalar { a: 0.0, b: 1.0 };
    let scheme = StepScheme::new(SchemeKind::Euler, 0.1).unwrap();
    let x0 = EnsembleState::replicate(&[0.3], 1).unwrap();
    let u = Array2::from_shape_fn((10, 1), |(j, _)| 0.1 * j as f64);
    let states = propagate_segment(&scheme, &model, &x0, u.view()).unwrap();
    let xn = states[10].row(0)[0];
    let seed = Array2::from_elem((1, 1), xn);
    let g = backward_gradient(
        &scheme,
        &model,
        &states,
        u.view(),
        seed.view(),
        None,
        &Default::default(),
    )
    .unwrap();
    for v in g.controls.iter() {
        assert!((v - xn * 0.1).abs() < 1e-15);
    }
}

fn uniform_spec() -> impl Strategy<Value = (f64, f64)> {
    (-10.0f64..10.0, 0.0f64..5.0).prop_map(|(lo, w)| (lo, lo + w))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn sampling_is_deterministic(seed in any::<u64>()) {
        prop_assert_eq!(check_sampling_determinism(seed), Ok(()));
    }

    #[test]
    fn uniform_draws_stay_in_range((lo, hi) in uniform_spec(), seed in any::<u64>(), samples in 1usize..200) {
        let spec = RandomInputSpec::new(vec![Distribution::Uniform { lo, hi }]).unwrap();
        let x = sample_initial_ensemble(&spec, samples, seed).unwrap();
        prop_assert_eq!(x.samples(), samples);
        prop_assert!(x.as_slice().iter().all(|v| *v >= lo && *v <= hi));
    }

    #[test]
    fn jacobians_at_random_points(seed in any::<u64>()) {
        prop_assert_eq!(check_model_jacobians(seed), Ok(()));
    }

    #[test]
    fn euler_step_is_exact_forward_euler(x in prop::array::uniform3(-5.0f64..5.0), u in prop::array::uniform2(-1.0f64..1.0), dt in 0.001f64..0.5) {
        let m = UgvDifferentialDrive::fixed(1.25);
        let state = EnsembleState::replicate(&x, 1).unwrap();
        let next = step(&StepScheme::new(SchemeKind::Euler, dt).unwrap(), &m, &state, &u, None).unwrap();
        let mut f = [0.0; 3];
        m.rhs(&x, &u, &mut f).unwrap();
        for d in 0..3 {
            prop_assert_eq!(next.row(0)[d], x[d] + dt * f[d]);
        }
    }

    #[test]
    fn gradients_match_fd_on_random_points(seed in 0u64..1000) {
        prop_assert_eq!(check_transcription_gradients(seed), Ok(()));
    }
}
