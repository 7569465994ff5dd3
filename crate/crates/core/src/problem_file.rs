//! JSON problem definitions mirroring [`OcProblem`].
//!
//! ```json
//! {
//!   "name": "ugv-custom",
//!   "model": { "kind": "ugv-differential-drive", "radius": "appended" },
//!   "horizon": { "final_time": 10.0, "segments": 2, "dt": 0.05 },
//!   "scheme": "rk4",
//!   "initial": [ { "kind": "uniform", "lo": -0.05, "hi": 0.05 }, ... ],
//!   "samples": 100,
//!   "cost": { "terminal": [ { "state": 0, "target": 3.0, "weight": 0.5 } ], "control_weight": 0.01 },
//!   "control_bounds": [ { "lo": -1.0, "hi": 1.0 }, null ]
//! }
//! ```

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ensemble::{Segment, ShootingPlan};
use crate::error::{OcError, Result};
use crate::integrators::SchemeKind;
use crate::models::{
    ChebyshevReactionDiffusion, DynamicsModel, FixedWingUav, LinearScalar, UgvBicycle, UgvDifferentialDrive,
    ZeroDynamics,
};
use crate::parallel::Parallelism;
use crate::sampling::RandomInputSpec;
use crate::transcription::{Bounds, CostSpec, OcProblem, PathBound};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RadiusSpec {
    Fixed(f64),
    Named(RadiusKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadiusKeyword {
    Appended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    UgvDifferentialDrive {
        radius: RadiusSpec,
    },
    UgvBicycle {
        #[serde(default = "default_wheelbase")]
        wheelbase: f64,
    },
    FixedWingUav,
    ChebyshevReactionDiffusion {
        nodes: usize,
        #[serde(default)]
        region: Option<(f64, f64)>,
    },
    LinearScalar {
        a: f64,
        b: f64,
    },
    Zero {
        state_dim: usize,
        control_dim: usize,
    },
}

fn default_wheelbase() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn build(&self) -> Result<Arc<dyn DynamicsModel>> {
        Ok(match self {
            ModelSpec::UgvDifferentialDrive { radius } => match radius {
                RadiusSpec::Fixed(r) => {
                    if !(*r > 0.0 && r.is_finite()) {
                        return Err(OcError::Parameter(format!("model.radius: must be positive, got {r}")));
                    }
                    Arc::new(UgvDifferentialDrive::fixed(*r))
                }
                RadiusSpec::Named(RadiusKeyword::Appended) => Arc::new(UgvDifferentialDrive::appended()),
            },
            ModelSpec::UgvBicycle { wheelbase } => {
                if !(*wheelbase > 0.0 && wheelbase.is_finite()) {
                    return Err(OcError::Parameter(format!(
                        "model.wheelbase: must be positive, got {wheelbase}"
                    )));
                }
                Arc::new(UgvBicycle { wheelbase: *wheelbase })
            }
            ModelSpec::FixedWingUav => Arc::new(FixedWingUav),
            ModelSpec::ChebyshevReactionDiffusion { nodes, region } => {
                let model = match region {
                    Some(r) => ChebyshevReactionDiffusion::with_region(*nodes, *r),
                    None => ChebyshevReactionDiffusion::new(*nodes),
                };
                Arc::new(model.map_err(|e| OcError::Parameter(format!("model.nodes: {e}")))?)
            }
            ModelSpec::LinearScalar { a, b } => Arc::new(LinearScalar { a: *a, b: *b }),
            ModelSpec::Zero { state_dim, control_dim } => Arc::new(ZeroDynamics {
                state_dim: *state_dim,
                control_dim: *control_dim,
            }),
        })
    }
}

/// Uniform segmentation of `[0, final_time]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonSpec {
    pub final_time: f64,
    #[serde(default = "one")]
    pub segments: usize,
    pub dt: f64,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(default = "default_name")]
    pub name: String,
    pub model: ModelSpec,
    /// Either `horizon` or an explicit `plan` must be given.
    #[serde(default)]
    pub horizon: Option<HorizonSpec>,
    #[serde(default)]
    pub plan: Option<Vec<Segment>>,
    pub scheme: SchemeKind,
    pub initial: RandomInputSpec,
    #[serde(default = "one")]
    pub samples: usize,
    #[serde(default)]
    pub cost: CostSpec,
    #[serde(default)]
    pub control_bounds: Vec<Option<Bounds>>,
    #[serde(default)]
    pub path_bounds: Vec<PathBound>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub batch_size: Option<usize>,
}

fn default_name() -> String {
    "custom".to_string()
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| OcError::Parameter(format!("problem file: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| OcError::Parameter(format!("problem file {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem file serializes")
    }

    pub fn into_problem(self) -> Result<OcProblem> {
        let plan = match (self.horizon, self.plan) {
            (Some(h), None) => ShootingPlan::uniform(h.final_time, h.segments, h.dt)
                .map_err(|e| OcError::Parameter(format!("horizon: {e}")))?,
            (None, Some(segments)) => {
                ShootingPlan::new(segments).map_err(|e| OcError::Parameter(format!("plan: {e}")))?
            }
            (Some(_), Some(_)) => {
                return Err(OcError::Parameter("horizon, plan: give exactly one of the two".into()));
            }
            (None, None) => return Err(OcError::Parameter("horizon: missing (or give an explicit plan)".into())),
        };
        let parallelism = match self.batch_size {
            Some(b) => Parallelism::new(b).map_err(|e| OcError::Parameter(format!("batch_size: {e}")))?,
            None => Parallelism::default(),
        };
        let problem = OcProblem {
            name: self.name,
            model: self.model.build()?,
            plan,
            scheme: self.scheme,
            initial: self.initial,
            samples: self.samples,
            cost: self.cost,
            control_bounds: self.control_bounds,
            path_bounds: self.path_bounds,
            seed: self.seed,
            parallelism,
        };
        problem.validate()?;
        Ok(problem)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const UGV: &str = r#"{
        "name": "ugv-file",
        "model": { "kind": "ugv-differential-drive", "radius": "appended" },
        "horizon": { "final_time": 10.0, "segments": 2, "dt": 0.1 },
        "scheme": "rk4",
        "initial": [
            { "kind": "dirac", "value": 0.0 },
            { "kind": "dirac", "value": 0.0 },
            { "kind": "dirac", "value": 0.0 },
            { "kind": "uniform", "lo": 1.0, "hi": 1.5 }
        ],
        "samples": 8,
        "cost": {
            "terminal": [ { "state": 0, "target": 3.0, "weight": 0.5 }, { "state": 1, "target": 3.0, "weight": 0.5 } ],
            "control_weight": 0.01
        },
        "control_bounds": [ { "lo": -1.0, "hi": 1.0 }, { "lo": -1.0, "hi": 1.0 } ],
        "seed": 4
    }"#;

    #[test]
    fn parses_and_builds() {
        let f = ProblemFile::from_json(UGV).unwrap();
        let p = f.clone().into_problem().unwrap();
        assert_eq!(p.plan.total_steps(), 100);
        assert_eq!(p.state_dim(), 4);
        assert_eq!(p.samples, 8);
        assert_eq!(ProblemFile::from_json(&f.to_json()).unwrap(), f);
    }

    #[test]
    fn unknown_key_is_named() {
        let text = UGV.replace("\"seed\": 4", "\"seeed\": 4");
        let msg = ProblemFile::from_json(&text).unwrap_err().to_string();
        assert!(msg.contains("seeed"), "{msg}");
        let text = UGV.replace("\"radius\": \"appended\"", "\"radius\": \"appended\", \"mass\": 3");
        let msg = ProblemFile::from_json(&text).unwrap_err().to_string();
        assert!(msg.contains("mass"), "{msg}");
    }

    #[test]
    fn inverted_bounds_name_the_key() {
        let text = UGV.replacen("{ \"lo\": -1.0, \"hi\": 1.0 }", "{ \"lo\": 1.0, \"hi\": -1.0 }", 1);
        let msg = ProblemFile::from_json(&text)
            .unwrap()
            .into_problem()
            .unwrap_err()
            .to_string();
        assert!(msg.contains("control_bounds"), "{msg}");
    }

    #[test]
    fn horizon_and_plan_are_exclusive() {
        let text = UGV.replace(
            "\"scheme\"",
            "\"plan\": [ { \"t_start\": 0.0, \"t_end\": 10.0, \"steps\": 100 } ], \"scheme\"",
        );
        let msg = ProblemFile::from_json(&text)
            .unwrap()
            .into_problem()
            .unwrap_err()
            .to_string();
        assert!(msg.contains("horizon"), "{msg}");
    }

    #[test]
    fn models_build() {
        for (spec, n) in [
            (r#"{ "kind": "ugv-differential-drive", "radius": 1.25 }"#, 3),
            (r#"{ "kind": "ugv-bicycle" }"#, 3),
            (r#"{ "kind": "fixed-wing-uav" }"#, 13),
            (r#"{ "kind": "chebyshev-reaction-diffusion", "nodes": 12 }"#, 12),
            (r#"{ "kind": "linear-scalar", "a": -1.0, "b": 1.0 }"#, 1),
            (r#"{ "kind": "zero", "state_dim": 5, "control_dim": 2 }"#, 5),
        ] {
            let m: ModelSpec = serde_json::from_str(spec).unwrap();
            assert_eq!(m.build().unwrap().state_dim(), n, "{spec}");
        }
    }
}
