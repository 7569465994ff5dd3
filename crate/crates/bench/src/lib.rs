//! Shared fixtures for the benchmarks.

use ensemble_oc::{
    build, propagate_segment, ControlSchedule, EnsembleState, NlpPoint, Overrides, Parallelism, ProblemId, StepScheme,
    Transcription,
};
use ndarray::Array2;

/// One segment's stored forward pass, ready for a backward sweep.
pub struct SweepFixture {
    pub transcription: Transcription,
    pub scheme: StepScheme,
    pub states: Vec<EnsembleState>,
    pub controls: Array2<f64>,
    pub seed: Array2<f64>,
}

impl SweepFixture {
    /// Single-segment catalog problem with `samples` draws and a smooth
    /// control profile; the seed is the gradient of `½‖x_N‖²`.
    pub fn new(id: ProblemId, samples: usize, batch_size: usize) -> Self {
        let overrides = Overrides {
            samples: Some(samples),
            segments: Some(1),
            batch_size: Some(batch_size),
            ..Default::default()
        };
        let problem = build(id, &overrides).expect("catalog problem");
        let seg = problem.plan.segments()[0];
        let m = problem.control_dim();
        let scheme = StepScheme::new(problem.scheme, seg.step_size()).expect("valid step");
        let controls = Array2::from_shape_fn((seg.steps, m), |(j, c)| 0.5 * ((j as f64) * 0.01 + c as f64).sin());
        let transcription = problem.instantiate().expect("instantiates");
        let states = propagate_segment(
            &scheme,
            problem.model.as_ref(),
            transcription.initial_states(),
            controls.view(),
        )
        .expect("propagates");
        let seed = states[seg.steps].data().clone();
        Self {
            transcription,
            scheme,
            states,
            controls,
            seed,
        }
    }

    pub fn parallelism(&self) -> Parallelism {
        self.transcription.problem().parallelism
    }
}

/// A consistent NLP point for `id` with the catalog grid: zero controls,
/// segment states from the forward pass.
pub fn nlp_fixture(id: ProblemId, samples: usize) -> (Transcription, NlpPoint) {
    let problem = build(
        id,
        &Overrides {
            samples: Some(samples),
            ..Default::default()
        },
    )
    .expect("catalog problem");
    let tr = problem.instantiate().expect("instantiates");
    let zero = ControlSchedule::zeros(&problem.plan, problem.control_dim());
    let point = tr.initial_guess(&zero).expect("propagates");
    (tr, point)
}
