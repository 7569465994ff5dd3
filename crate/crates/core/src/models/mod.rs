//! Controlled ODE right-hand sides `ẋ = f(x, u)` with analytic Jacobians.
//!
//! All matrices are passed as row-major slices: `jac_x` fills `n·n` values,
//! `jac_u` fills `n·m` values. Implementations overwrite every output entry.

mod pde;
mod toy;
mod uav;
mod ugv;

use ndarray::Array2;

use crate::ensemble::EnsembleState;
use crate::error::{DomainViolation, Result};

pub use pde::ChebyshevReactionDiffusion;
pub use toy::{LinearScalar, ZeroDynamics};
pub use uav::{air_density, FixedWingUav};
pub use ugv::{UgvBicycle, UgvDifferentialDrive, WheelRadius};

/// Validity interval of one state coordinate, e.g. the UAV speed envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateBound {
    pub state: usize,
    pub lo: f64,
    pub hi: f64,
}

pub trait DynamicsModel: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &str;

    fn state_dim(&self) -> usize;

    fn control_dim(&self) -> usize;

    fn rhs(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<(), DomainViolation>;

    /// `∂f/∂x`, row-major `n × n`.
    fn jac_x(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<(), DomainViolation>;

    /// `∂f/∂u`, row-major `n × m`.
    fn jac_u(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<(), DomainViolation>;

    /// Vector-Jacobian products `out_x = (∂f/∂x)ᵀ w`, `out_u = (∂f/∂u)ᵀ w`.
    fn vjp(
        &self,
        x: &[f64],
        u: &[f64],
        w: &[f64],
        out_x: &mut [f64],
        out_u: &mut [f64],
    ) -> Result<(), DomainViolation> {
        let (n, m) = (self.state_dim(), self.control_dim());
        let mut jx = vec![0.0; n * n];
        let mut ju = vec![0.0; n * m];
        self.jac_x(x, u, &mut jx)?;
        self.jac_u(x, u, &mut ju)?;
        transpose_mul(&jx, n, n, w, out_x);
        transpose_mul(&ju, n, m, w, out_u);
        Ok(())
    }

    /// True when `f(x, u) = a(x) + B(x) u`.
    fn is_control_affine(&self) -> bool {
        true
    }

    /// Region where the model equations are meaningful.
    fn validity_bounds(&self) -> Vec<StateBound> {
        Vec::new()
    }

    fn state_labels(&self) -> Vec<String> {
        (1..=self.state_dim()).map(|i| format!("x{i}")).collect()
    }

    fn control_labels(&self) -> Vec<String> {
        (1..=self.control_dim()).map(|i| format!("u{i}")).collect()
    }
}

/// `out = Aᵀ w` for row-major `A` of shape `rows × cols`.
pub(crate) fn transpose_mul(a: &[f64], rows: usize, cols: usize, w: &[f64], out: &mut [f64]) {
    out[..cols].fill(0.0);
    for (r, &wr) in w.iter().enumerate().take(rows) {
        if wr == 0.0 {
            continue;
        }
        let row = &a[r * cols..(r + 1) * cols];
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v * wr;
        }
    }
}

/// Evaluates `f` for every sample; row `i` of the result is `f(x⁽ⁱ⁾, u)`.
pub fn rhs_batch(model: &dyn DynamicsModel, x: &EnsembleState, u: &[f64]) -> Result<EnsembleState> {
    let n = model.state_dim();
    check_dims(model, x.dim(), u.len())?;
    let mut out = vec![0.0; x.samples() * n];
    for (i, chunk) in out.chunks_exact_mut(n).enumerate() {
        model.rhs(x.row(i), u, chunk).map_err(|e| e.at(i))?;
    }
    EnsembleState::new(Array2::from_shape_vec((x.samples(), n), out).expect("sized above"))
}

pub fn jacobian_x(model: &dyn DynamicsModel, x: &[f64], u: &[f64]) -> Result<Array2<f64>> {
    let n = model.state_dim();
    check_dims(model, x.len(), u.len())?;
    let mut out = vec![0.0; n * n];
    model.jac_x(x, u, &mut out).map_err(|e| e.at(0))?;
    Ok(Array2::from_shape_vec((n, n), out).expect("sized above"))
}

pub fn jacobian_u(model: &dyn DynamicsModel, x: &[f64], u: &[f64]) -> Result<Array2<f64>> {
    let (n, m) = (model.state_dim(), model.control_dim());
    check_dims(model, x.len(), u.len())?;
    let mut out = vec![0.0; n * m];
    model.jac_u(x, u, &mut out).map_err(|e| e.at(0))?;
    Ok(Array2::from_shape_vec((n, m), out).expect("sized above"))
}

pub(crate) fn check_dims(model: &dyn DynamicsModel, n: usize, m: usize) -> Result<()> {
    if n != model.state_dim() || m != model.control_dim() {
        return Err(crate::OcError::Shape(format!(
            "{} expects state dim {} and control dim {}, got {} and {}",
            model.name(),
            model.state_dim(),
            model.control_dim(),
            n,
            m
        )));
    }
    Ok(())
}
