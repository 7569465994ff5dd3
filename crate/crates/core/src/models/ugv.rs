//! Ground vehicle kinematics: differential drive and bicycle steering.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use super::DynamicsModel;
use crate::error::DomainViolation;

/// Where the differential-drive model reads its wheel radius from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WheelRadius {
    Fixed(f64),
    /// Fourth state coordinate with zero dynamics.
    Appended,
}

/// `ẋ1 = R u1 cos x3`, `ẋ2 = R u1 sin x3`, `ẋ3 = R u2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UgvDifferentialDrive {
    pub radius: WheelRadius,
}

impl UgvDifferentialDrive {
    pub fn fixed(radius: f64) -> Self {
        Self {
            radius: WheelRadius::Fixed(radius),
        }
    }

    pub fn appended() -> Self {
        Self {
            radius: WheelRadius::Appended,
        }
    }

    fn radius(&self, x: &[f64]) -> f64 {
        match self.radius {
            WheelRadius::Fixed(r) => r,
            WheelRadius::Appended => x[3],
        }
    }

    fn appended_radius(&self) -> bool {
        matches!(self.radius, WheelRadius::Appended)
    }
}

impl DynamicsModel for UgvDifferentialDrive {
    fn name(&self) -> &str {
        "ugv-diff-drive"
    }

    fn state_dim(&self) -> usize {
        if self.appended_radius() {
            4
        } else {
            3
        }
    }

    fn control_dim(&self) -> usize {
        2
    }

    fn rhs(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<(), DomainViolation> {
        let r = self.radius(x);
        let (s, c) = x[2].sin_cos();
        out[0] = r * u[0] * c;
        out[1] = r * u[0] * s;
        out[2] = r * u[1];
        if self.appended_radius() {
            out[3] = 0.0;
        }
        Ok(())
    }

    fn jac_x(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<(), DomainViolation> {
        let n = self.state_dim();
        let r = self.radius(x);
        let (s, c) = x[2].sin_cos();
        out.fill(0.0);
        out[2] = -r * u[0] * s;
        out[n + 2] = r * u[0] * c;
        if self.appended_radius() {
            out[3] = u[0] * c;
            out[n + 3] = u[0] * s;
            out[2 * n + 3] = u[1];
        }
        Ok(())
    }

    fn jac_u(&self, x: &[f64], _u: &[f64], out: &mut [f64]) -> Result<(), DomainViolation> {
        let r = self.radius(x);
        let (s, c) = x[2].sin_cos();
        out.fill(0.0);
        out[0] = r * c;
        out[2] = r * s;
        out[5] = r;
        Ok(())
    }

    fn vjp(
        &self,
        x: &[f64],
        u: &[f64],
        w: &[f64],
        out_x: &mut [f64],
        out_u: &mut [f64],
    ) -> Result<(), DomainViolation> {
        let r = self.radius(x);
        let (s, c) = x[2].sin_cos();
        out_x[0] = 0.0;
        out_x[1] = 0.0;
        out_x[2] = r * u[0] * (c * w[1] - s * w[0]);
        if self.appended_radius() {
            out_x[3] = u[0] * (c * w[0] + s * w[1]) + u[1] * w[2];
        }
        out_u[0] = r * (c * w[0] + s * w[1]);
        out_u[1] = r * w[2];
        Ok(())
    }

    fn state_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = ["x1", "x2", "x3"].map(String::from).to_vec();
        if self.appended_radius() {
            labels.push("R".into());
        }
        labels
    }
}

/// Rear-axle bicycle: `ẋ1 = u1 cos x3`, `ẋ2 = u1 sin x3`, `ẋ3 = (u1/L) tan u2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UgvBicycle {
    pub wheelbase: f64,
}

impl Default for UgvBicycle {
    fn default() -> Self {
        Self { wheelbase: 1.0 }
    }
}

fn check_steering(u2: f64) -> Result<(), DomainViolation> {
    if u2.abs() < FRAC_PI_2 {
        Ok(())
    } else {
        Err(DomainViolation("steering angle must satisfy |u2| < pi/2"))
    }
}

impl DynamicsModel for UgvBicycle {
    fn name(&self) -> &str {
        "ugv-bicycle"
    }

    fn state_dim(&self) -> usize {
        3
    }

    fn control_dim(&self) -> usize {
        2
    }

    fn rhs(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<(), DomainViolation> {
        check_steering(u[1])?;
        let (s, c) = x[2].sin_cos();
        out[0] = u[0] * c;
        out[1] = u[0] * s;
        out[2] = u[0] / self.wheelbase * u[1].tan();
        Ok(())
    }

    fn jac_x(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<(), DomainViolation> {
        check_steering(u[1])?;
        let (s, c) = x[2].sin_cos();
        out.fill(0.0);
        out[2] = -u[0] * s;
        out[5] = u[0] * c;
        Ok(())
    }

    fn jac_u(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<(), DomainViolation> {
        check_steering(u[1])?;
        let (s, c) = x[2].sin_cos();
        let sec = 1.0 / u[1].cos();
        out[0] = c;
        out[1] = 0.0;
        out[2] = s;
        out[3] = 0.0;
        out[4] = u[1].tan() / self.wheelbase;
        out[5] = u[0] / self.wheelbase * sec * sec;
        Ok(())
    }

    fn vjp(
        &self,
        x: &[f64],
        u: &[f64],
        w: &[f64],
        out_x: &mut [f64],
        out_u: &mut [f64],
    ) -> Result<(), DomainViolation> {
        check_steering(u[1])?;
        let (s, c) = x[2].sin_cos();
        let sec = 1.0 / u[1].cos();
        out_x[0] = 0.0;
        out_x[1] = 0.0;
        out_x[2] = u[0] * (c * w[1] - s * w[0]);
        out_u[0] = c * w[0] + s * w[1] + u[1].tan() / self.wheelbase * w[2];
        out_u[1] = u[0] / self.wheelbase * sec * sec * w[2];
        Ok(())
    }

    fn is_control_affine(&self) -> bool {
        false
    }
}
