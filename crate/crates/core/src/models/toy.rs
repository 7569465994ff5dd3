//! Small analytic models used by tests, examples and problem files.

use super::DynamicsModel;
use crate::error::DomainViolation;

/// `ẋ = 0` for any control.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroDynamics {
    pub state_dim: usize,
    pub control_dim: usize,
}

impl DynamicsModel for ZeroDynamics {
    fn name(&self) -> &str {
        "zero"
    }

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn control_dim(&self) -> usize {
        self.control_dim
    }

    fn rhs(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) -> Result<(), DomainViolation> {
        out.fill(0.0);
        Ok(())
    }

    fn jac_x(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) -> Result<(), DomainViolation> {
        out.fill(0.0);
        Ok(())
    }

    fn jac_u(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) -> Result<(), DomainViolation> {
        out.fill(0.0);
        Ok(())
    }

    fn vjp(
        &self,
        _x: &[f64],
        _u: &[f64],
        _w: &[f64],
        out_x: &mut [f64],
        out_u: &mut [f64],
    ) -> Result<(), DomainViolation> {
        out_x.fill(0.0);
        out_u.fill(0.0);
        Ok(())
    }
}

/// Scalar `ẋ = a x + b u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearScalar {
    pub a: f64,
    pub b: f64,
}

impl DynamicsModel for LinearScalar {
    fn name(&self) -> &str {
        "linear"
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn rhs(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<(), DomainViolation> {
        out[0] = self.a * x[0] + self.b * u[0];
        Ok(())
    }

    fn jac_x(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) -> Result<(), DomainViolation> {
        out[0] = self.a;
        Ok(())
    }

    fn jac_u(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) -> Result<(), DomainViolation> {
        out[0] = self.b;
        Ok(())
    }

    fn vjp(
        &self,
        _x: &[f64],
        _u: &[f64],
        w: &[f64],
        out_x: &mut [f64],
        out_u: &mut [f64],
    ) -> Result<(), DomainViolation> {
        out_x[0] = self.a * w[0];
        out_u[0] = self.b * w[0];
        Ok(())
    }
}
