//! Ready-to-run case studies: the differential-drive UGV, the bicycle UGV
//! used for gradient checks, the fixed-wing UAV and the controlled
//! reaction-diffusion PDE.

use std::f64::consts::{FRAC_PI_6, PI};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::ensemble::ShootingPlan;
use crate::error::{OcError, Result};
use crate::integrators::SchemeKind;
use crate::models::{ChebyshevReactionDiffusion, FixedWingUav, UgvBicycle, UgvDifferentialDrive};
use crate::parallel::Parallelism;
use crate::sampling::{Distribution, RandomInputSpec};
use crate::transcription::{Bounds, CostSpec, OcProblem, PathBound, QuadraticTerm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemId {
    UgvNominal,
    UgvStochastic,
    UgvBicycle,
    UavNominal,
    UavStochastic,
    PdeNominal,
    PdeStochastic,
}

impl ProblemId {
    pub const ALL: [ProblemId; 7] = [
        ProblemId::UgvNominal,
        ProblemId::UgvStochastic,
        ProblemId::UgvBicycle,
        ProblemId::UavNominal,
        ProblemId::UavStochastic,
        ProblemId::PdeNominal,
        ProblemId::PdeStochastic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemId::UgvNominal => "ugv-nominal",
            ProblemId::UgvStochastic => "ugv-stochastic",
            ProblemId::UgvBicycle => "ugv-bicycle",
            ProblemId::UavNominal => "uav-nominal",
            ProblemId::UavStochastic => "uav-stochastic",
            ProblemId::PdeNominal => "pde-nominal",
            ProblemId::PdeStochastic => "pde-stochastic",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ProblemId::UgvNominal => "differential-drive UGV to (3,3) at t=10, deterministic start, R=1.25",
            ProblemId::UgvStochastic => "differential-drive UGV to (3,3), uniform initial pose and wheel radius",
            ProblemId::UgvBicycle => "bicycle UGV over t in [0,100] with terminal cost x1^2 + x2^2",
            ProblemId::UavNominal => "fixed-wing UAV to (500,500,500), nominal initial state",
            ProblemId::UavStochastic => "fixed-wing UAV to (500,500,500), random position, speed, angles, aerodynamics",
            ProblemId::PdeNominal => "reaction-diffusion PDE driven to zero from 2 sin(pi x)",
            ProblemId::PdeStochastic => "reaction-diffusion PDE driven to zero from 2 sin(pi x) plus Gaussian noise",
        }
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemId {
    type Err = OcError;

    fn from_str(s: &str) -> Result<Self> {
        ProblemId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| OcError::UnknownProblem(s.to_string()))
    }
}

/// Optional replacements for catalog defaults.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub segments: Option<usize>,
    pub final_time: Option<f64>,
    pub control_weight: Option<f64>,
    /// Chebyshev interior nodes (PDE only).
    pub nodes: Option<usize>,
    /// Variance of the PDE initial noise.
    pub noise_variance: Option<f64>,
    pub scheme: Option<SchemeKind>,
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CatalogEntry {
    pub id: ProblemId,
    pub description: &'static str,
}

pub fn list() -> Vec<CatalogEntry> {
    ProblemId::ALL
        .into_iter()
        .map(|id| CatalogEntry {
            id,
            description: id.description(),
        })
        .collect()
}

pub const UGV_RADIUS: f64 = 1.25;
pub const UGV_TARGET: f64 = 3.0;
pub const UAV_TARGET: f64 = 500.0;
pub const PDE_DEFAULT_NODES: usize = 20;
pub const PDE_NOISE_VARIANCE: f64 = 0.001;

/// Nominal UAV initial state in model coordinate order.
pub const UAV_NOMINAL_STATE: [f64; 13] = [
    0.0, 0.0, 0.0, 27.5, 0.0, PI, 16.1, -0.0088, 0.0, -0.03554, 0.00292, -0.055, -5.578,
];

struct Defaults {
    final_time: f64,
    segments: usize,
    dt: f64,
    scheme: SchemeKind,
    samples: usize,
    control_weight: f64,
}

fn plan(d: &Defaults, o: &Overrides) -> Result<ShootingPlan> {
    ShootingPlan::uniform(
        o.final_time.unwrap_or(d.final_time),
        o.segments.unwrap_or(d.segments),
        o.dt.unwrap_or(d.dt),
    )
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    id: ProblemId,
    d: Defaults,
    o: &Overrides,
    model: Arc<dyn crate::models::DynamicsModel>,
    initial: RandomInputSpec,
    mut cost: CostSpec,
    control_bounds: Vec<Option<Bounds>>,
    path_bounds: Vec<PathBound>,
) -> Result<OcProblem> {
    cost.control_weight = o.control_weight.unwrap_or(d.control_weight);
    let parallelism = match o.batch_size {
        Some(b) => Parallelism::new(b)?,
        None => Parallelism::default(),
    };
    let problem = OcProblem {
        name: id.as_str().to_string(),
        model,
        plan: plan(&d, o)?,
        scheme: o.scheme.unwrap_or(d.scheme),
        initial,
        samples: o.samples.unwrap_or(d.samples),
        cost,
        control_bounds,
        path_bounds,
        seed: o.seed.unwrap_or(0),
        parallelism,
    };
    problem.validate()?;
    Ok(problem)
}

fn ugv(id: ProblemId, o: &Overrides) -> Result<OcProblem> {
    let stochastic = id == ProblemId::UgvStochastic;
    let initial = if stochastic {
        let pose = Distribution::Uniform { lo: -0.05, hi: 0.05 };
        RandomInputSpec::new(vec![pose, pose, pose, Distribution::Uniform { lo: 1.0, hi: 1.5 }])?
    } else {
        RandomInputSpec::dirac(&[0.0, 0.0, 0.0, UGV_RADIUS])?
    };
    let d = Defaults {
        final_time: 10.0,
        segments: 2,
        dt: 0.05,
        scheme: SchemeKind::Rk4,
        samples: if stochastic { 10_000 } else { 1 },
        control_weight: 0.01,
    };
    let cost = CostSpec {
        terminal: vec![
            QuadraticTerm::new(0, UGV_TARGET, 0.5),
            QuadraticTerm::new(1, UGV_TARGET, 0.5),
        ],
        ..Default::default()
    };
    assemble(
        id,
        d,
        o,
        Arc::new(UgvDifferentialDrive::appended()),
        initial,
        cost,
        vec![Some(Bounds::symmetric(1.0)); 2],
        vec![],
    )
}

fn bicycle(o: &Overrides) -> Result<OcProblem> {
    let d = Defaults {
        final_time: 100.0,
        segments: 1,
        dt: 0.1,
        scheme: SchemeKind::Rk4,
        samples: 1,
        control_weight: 0.0,
    };
    let cost = CostSpec {
        terminal: vec![QuadraticTerm::new(0, 0.0, 1.0), QuadraticTerm::new(1, 0.0, 1.0)],
        ..Default::default()
    };
    assemble(
        ProblemId::UgvBicycle,
        d,
        o,
        Arc::new(UgvBicycle::default()),
        RandomInputSpec::dirac(&[0.0, 0.0, 0.0])?,
        cost,
        vec![Some(Bounds::symmetric(1.0)); 2],
        vec![],
    )
}

fn uav(id: ProblemId, o: &Overrides) -> Result<OcProblem> {
    let stochastic = id == ProblemId::UavStochastic;
    let initial = if stochastic {
        let n = &UAV_NOMINAL_STATE;
        let dirac = |v: f64| Distribution::Dirac { value: v };
        let uniform = |lo: f64, hi: f64| Distribution::Uniform { lo, hi };
        RandomInputSpec::new(vec![
            Distribution::SphericalShell { r_max: 5.0 },
            uniform(25.575, 29.425),
            uniform(-0.05, 0.05),
            uniform(3.1, 3.2),
            dirac(n[FixedWingUav::THRUST]),
            dirac(n[FixedWingUav::ALPHA]),
            dirac(n[FixedWingUav::MU]),
            uniform(-0.038, -0.033),
            uniform(0.0027, 0.0031),
            uniform(-0.0589, -0.0548),
            uniform(-5.9685, -5.1875),
        ])?
    } else {
        RandomInputSpec::dirac(&UAV_NOMINAL_STATE)?
    };
    let d = Defaults {
        final_time: 60.0,
        segments: 1,
        dt: 0.1,
        scheme: SchemeKind::Rk3,
        samples: if stochastic { 4800 } else { 1 },
        control_weight: 0.01,
    };
    let cost = CostSpec {
        terminal: (0..3).map(|s| QuadraticTerm::new(s, UAV_TARGET, 1.0)).collect(),
        ..Default::default()
    };
    let path_bounds = vec![
        PathBound {
            state: FixedWingUav::V,
            lo: 13.0,
            hi: 42.0,
        },
        PathBound {
            state: FixedWingUav::GAMMA,
            lo: -FRAC_PI_6,
            hi: FRAC_PI_6,
        },
        PathBound {
            state: FixedWingUav::SIGMA,
            lo: -PI,
            hi: PI,
        },
        PathBound {
            state: FixedWingUav::THRUST,
            lo: 3.0,
            hi: 35.0,
        },
        PathBound {
            state: FixedWingUav::ALPHA,
            lo: -PI / 12.0,
            hi: PI / 12.0,
        },
    ];
    assemble(
        id,
        d,
        o,
        Arc::new(FixedWingUav),
        initial,
        cost,
        vec![
            Some(Bounds::symmetric(1.0)),
            Some(Bounds::symmetric(0.05)),
            Some(Bounds::symmetric(0.05)),
        ],
        path_bounds,
    )
}

fn pde(id: ProblemId, o: &Overrides) -> Result<OcProblem> {
    let stochastic = id == ProblemId::PdeStochastic;
    let n = o.nodes.unwrap_or(PDE_DEFAULT_NODES);
    let model = ChebyshevReactionDiffusion::new(n)?;
    let variance = o.noise_variance.unwrap_or(PDE_NOISE_VARIANCE);
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(OcError::Parameter(format!(
            "noise_variance must be >= 0, got {variance}"
        )));
    }
    let base: Vec<f64> = model.nodes().iter().map(|x| 2.0 * (PI * x).sin()).collect();
    let initial = if stochastic {
        RandomInputSpec::new(
            base.iter()
                .map(|&mean| Distribution::Normal {
                    mean,
                    std_dev: variance.sqrt(),
                })
                .collect(),
        )?
    } else {
        RandomInputSpec::dirac(&base)?
    };
    let w = model.quadrature_weights();
    let cost = CostSpec {
        terminal: w
            .iter()
            .enumerate()
            .map(|(j, &wj)| QuadraticTerm::new(j, 0.0, 0.5 * wj))
            .collect(),
        running: w
            .iter()
            .enumerate()
            .map(|(j, &wj)| QuadraticTerm::new(j, 0.0, wj))
            .collect(),
        control_weight: 0.0,
    };
    let d = Defaults {
        final_time: 8.0,
        segments: 1,
        dt: 0.0005,
        scheme: SchemeKind::Euler,
        samples: if stochastic { 1000 } else { 1 },
        control_weight: 0.1,
    };
    assemble(id, d, o, Arc::new(model), initial, cost, vec![None], vec![])
}

/// Builds a catalog problem with `overrides` applied.
pub fn build(id: ProblemId, overrides: &Overrides) -> Result<OcProblem> {
    if overrides.nodes.is_some() && !matches!(id, ProblemId::PdeNominal | ProblemId::PdeStochastic) {
        return Err(OcError::Parameter(format!(
            "nodes: only PDE problems take a node count, not {id}"
        )));
    }
    match id {
        ProblemId::UgvNominal | ProblemId::UgvStochastic => ugv(id, overrides),
        ProblemId::UgvBicycle => bicycle(overrides),
        ProblemId::UavNominal | ProblemId::UavStochastic => uav(id, overrides),
        ProblemId::PdeNominal | ProblemId::PdeStochastic => pde(id, overrides),
    }
}

/// [`build`] from a textual id.
pub fn build_by_name(name: &str, overrides: &Overrides) -> Result<OcProblem> {
    build(name.parse()?, overrides)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::sample_initial_ensemble;

    #[test]
    fn ids_round_trip() {
        for id in ProblemId::ALL {
            assert_eq!(id.as_str().parse::<ProblemId>().unwrap(), id);
            build(id, &Overrides::default()).unwrap();
        }
        assert!(matches!("ugv".parse::<ProblemId>(), Err(OcError::UnknownProblem(_))));
        assert_eq!(list().len(), 7);
    }

    #[test]
    fn ugv_defaults() {
        let p = build(ProblemId::UgvNominal, &Overrides::default()).unwrap();
        assert_eq!(p.initial.nominal(), vec![0.0, 0.0, 0.0, 1.25]);
        assert_eq!(p.plan.segment_count(), 2);
        assert_eq!(p.plan.total_steps(), 200);
        assert_eq!(p.scheme, SchemeKind::Rk4);
        assert_eq!(p.cost.control_weight, 0.01);
        assert_eq!(p.control_bounds, vec![Some(Bounds::new(-1.0, 1.0)); 2]);
        let s = build(ProblemId::UgvStochastic, &Overrides::default()).unwrap();
        assert_eq!(s.samples, 10_000);
        let x0 = sample_initial_ensemble(&s.initial, 500, 3).unwrap();
        for i in 0..500 {
            let r = x0.row(i);
            assert!(r[..3].iter().all(|v| v.abs() <= 0.05));
            assert!((1.0..=1.5).contains(&r[3]));
        }
    }

    #[test]
    fn uav_nominal_state() {
        let p = build(ProblemId::UavNominal, &Overrides::default()).unwrap();
        let x = p.initial.nominal();
        assert_eq!(x[FixedWingUav::V], 27.5);
        assert_eq!(x[FixedWingUav::THRUST], 16.1);
        assert_eq!(x[FixedWingUav::ALPHA], -0.0088);
        assert_eq!(x[FixedWingUav::SIGMA], PI);
        assert_eq!(x[FixedWingUav::CX0], -0.03554);
        assert_eq!(p.scheme, SchemeKind::Rk3);
        assert_eq!(p.plan.segment_count(), 1);
        let s = build(ProblemId::UavStochastic, &Overrides::default()).unwrap();
        assert_eq!(s.samples, 4800);
        assert_eq!(s.initial.dim(), 13);
        assert_eq!(s.path_bounds.len(), 5);
    }

    #[test]
    fn pde_overrides_leave_other_fields_alone() {
        let base = build(ProblemId::PdeStochastic, &Overrides::default()).unwrap();
        let o = Overrides {
            nodes: Some(32),
            samples: Some(100),
            ..Default::default()
        };
        let p = build(ProblemId::PdeStochastic, &o).unwrap();
        assert_eq!(p.samples, 100);
        assert_eq!(p.state_dim(), 32);
        assert_eq!(p.plan, base.plan);
        assert_eq!(p.scheme, base.scheme);
        assert_eq!(p.cost.control_weight, base.cost.control_weight);
        assert_eq!(p.seed, base.seed);
        assert_eq!(p.plan.total_steps(), 16_000);
        let Distribution::Normal { std_dev, .. } = p.initial.entries()[0] else {
            panic!("expected normal noise")
        };
        assert!((std_dev * std_dev - 0.001).abs() < 1e-15);
    }

    #[test]
    fn bad_overrides_are_rejected() {
        let o = Overrides {
            dt: Some(0.03),
            ..Default::default()
        };
        assert!(build(ProblemId::UgvNominal, &o).is_err());
        let o = Overrides {
            nodes: Some(8),
            ..Default::default()
        };
        assert!(build(ProblemId::UgvNominal, &o).is_err());
    }
}
