//! Nine-state fixed-wing aircraft with four appended aerodynamic coefficients.

use std::f64::consts::{FRAC_PI_6, FRAC_PI_8, PI};

use super::{DynamicsModel, StateBound};
use crate::error::DomainViolation;

const MASS: f64 = 2.0;
const GRAVITY: f64 = 9.8;
const WING_AREA: f64 = 0.982;
const SEA_LEVEL_DENSITY: f64 = 1.21;
const DENSITY_SCALE_HEIGHT: f64 = 8000.0;

/// Air density `ρ(z) = 1.21 e^{-z/8000}` in kg/m³.
pub fn air_density(z: f64) -> f64 {
    SEA_LEVEL_DENSITY * (-z / DENSITY_SCALE_HEIGHT).exp()
}

/// State `(x, y, z, v, γ, σ, T, α, μ, C_x0, C_xa, C_z0, C_za)`, control `(u_T, u_α, u_μ)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FixedWingUav;

impl FixedWingUav {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const Z: usize = 2;
    pub const V: usize = 3;
    pub const GAMMA: usize = 4;
    pub const SIGMA: usize = 5;
    pub const THRUST: usize = 6;
    pub const ALPHA: usize = 7;
    pub const MU: usize = 8;
    pub const CX0: usize = 9;
    pub const CXA: usize = 10;
    pub const CZ0: usize = 11;
    pub const CZA: usize = 12;
    pub const STATE_DIM: usize = 13;
}

/// Shared intermediate quantities of one evaluation.
struct Aero {
    sg: f64,
    cg: f64,
    ss: f64,
    cs: f64,
    sa: f64,
    ca: f64,
    sm: f64,
    cm: f64,
    rho: f64,
    qbar: f64,
    cl: f64,
    cd: f64,
    lift: f64,
    drag: f64,
}

fn aero(x: &[f64]) -> Result<Aero, DomainViolation> {
    let v = x[FixedWingUav::V];
    if !(v > 0.0) {
        return Err(DomainViolation("uav speed must be positive"));
    }
    let (sg, cg) = x[FixedWingUav::GAMMA].sin_cos();
    if cg.abs() < 1e-12 {
        return Err(DomainViolation("uav flight path angle must satisfy |gamma| != pi/2"));
    }
    let (ss, cs) = x[FixedWingUav::SIGMA].sin_cos();
    let alpha = x[FixedWingUav::ALPHA];
    let (sa, ca) = alpha.sin_cos();
    let (sm, cm) = x[FixedWingUav::MU].sin_cos();
    let a = x[FixedWingUav::CX0] + x[FixedWingUav::CXA] * alpha;
    let b = x[FixedWingUav::CZ0] + x[FixedWingUav::CZA] * alpha;
    let cl = a * sa - b * ca;
    let cd = -a * ca - b * sa;
    let rho = air_density(x[FixedWingUav::Z]);
    let qbar = 0.5 * rho * v * v * WING_AREA;
    Ok(Aero {
        sg,
        cg,
        ss,
        cs,
        sa,
        ca,
        sm,
        cm,
        rho,
        qbar,
        cl,
        cd,
        lift: qbar * cl,
        drag: qbar * cd,
    })
}

impl DynamicsModel for FixedWingUav {
    fn name(&self) -> &str {
        "uav"
    }

    fn state_dim(&self) -> usize {
        Self::STATE_DIM
    }

    fn control_dim(&self) -> usize {
        3
    }

    fn rhs(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<(), DomainViolation> {
        let p = aero(x)?;
        let v = x[Self::V];
        let thrust = x[Self::THRUST];
        let side = p.lift + thrust * p.sa;
        out[Self::X] = v * p.cg * p.cs;
        out[Self::Y] = v * p.cg * p.ss;
        out[Self::Z] = v * p.sg;
        out[Self::V] = (-p.drag + thrust * p.ca) / MASS - GRAVITY * p.sg;
        out[Self::GAMMA] = side * p.cm / (MASS * v) - GRAVITY / v * p.cg;
        out[Self::SIGMA] = side * p.sm / (MASS * v * p.cg);
        out[Self::THRUST] = u[0];
        out[Self::ALPHA] = u[1];
        out[Self::MU] = u[2];
        out[Self::CX0..].fill(0.0);
        Ok(())
    }

    fn jac_x(&self, x: &[f64], _u: &[f64], out: &mut [f64]) -> Result<(), DomainViolation> {
        let p = aero(x)?;
        let n = Self::STATE_DIM;
        let v = x[Self::V];
        let alpha = x[Self::ALPHA];
        let thrust = x[Self::THRUST];
        let a = x[Self::CX0] + x[Self::CXA] * alpha;
        let b = x[Self::CZ0] + x[Self::CZA] * alpha;
        out.fill(0.0);
        let mut set = |row: usize, col: usize, val: f64| out[row * n + col] = val;

        // Aerodynamic partials.
        let dcl_da = x[Self::CXA] * p.sa + a * p.ca - x[Self::CZA] * p.ca + b * p.sa;
        let dcd_da = -x[Self::CXA] * p.ca + a * p.sa - x[Self::CZA] * p.sa - b * p.ca;
        let dcl_dc = [p.sa, alpha * p.sa, -p.ca, -alpha * p.ca];
        let dcd_dc = [-p.ca, -alpha * p.ca, -p.sa, -alpha * p.sa];
        let dq_dv = p.rho * v * WING_AREA;
        let dq_dz = -p.qbar / DENSITY_SCALE_HEIGHT;
        let (dl_dz, dl_dv, dl_da) = (dq_dz * p.cl, dq_dv * p.cl, p.qbar * dcl_da);
        let (dd_dz, dd_dv, dd_da) = (dq_dz * p.cd, dq_dv * p.cd, p.qbar * dcd_da);

        set(Self::X, Self::V, p.cg * p.cs);
        set(Self::X, Self::GAMMA, -v * p.sg * p.cs);
        set(Self::X, Self::SIGMA, -v * p.cg * p.ss);

        set(Self::Y, Self::V, p.cg * p.ss);
        set(Self::Y, Self::GAMMA, -v * p.sg * p.ss);
        set(Self::Y, Self::SIGMA, v * p.cg * p.cs);

        set(Self::Z, Self::V, p.sg);
        set(Self::Z, Self::GAMMA, v * p.cg);

        set(Self::V, Self::Z, -dd_dz / MASS);
        set(Self::V, Self::V, -dd_dv / MASS);
        set(Self::V, Self::GAMMA, -GRAVITY * p.cg);
        set(Self::V, Self::THRUST, p.ca / MASS);
        set(Self::V, Self::ALPHA, (-dd_da - thrust * p.sa) / MASS);
        for (k, d) in dcd_dc.iter().enumerate() {
            set(Self::V, Self::CX0 + k, -p.qbar * d / MASS);
        }

        let side = p.lift + thrust * p.sa;
        let mv = MASS * v;
        set(Self::GAMMA, Self::Z, p.cm * dl_dz / mv);
        set(
            Self::GAMMA,
            Self::V,
            p.cm * dl_dv / mv - side * p.cm / (mv * v) + GRAVITY * p.cg / (v * v),
        );
        set(Self::GAMMA, Self::GAMMA, GRAVITY * p.sg / v);
        set(Self::GAMMA, Self::THRUST, p.cm * p.sa / mv);
        set(Self::GAMMA, Self::ALPHA, p.cm * (dl_da + thrust * p.ca) / mv);
        set(Self::GAMMA, Self::MU, -p.sm * side / mv);
        for (k, d) in dcl_dc.iter().enumerate() {
            set(Self::GAMMA, Self::CX0 + k, p.cm * p.qbar * d / mv);
        }

        let mvc = mv * p.cg;
        set(Self::SIGMA, Self::Z, p.sm * dl_dz / mvc);
        set(Self::SIGMA, Self::V, p.sm * dl_dv / mvc - side * p.sm / (mvc * v));
        set(Self::SIGMA, Self::GAMMA, side * p.sm * p.sg / (mvc * p.cg));
        set(Self::SIGMA, Self::THRUST, p.sm * p.sa / mvc);
        set(Self::SIGMA, Self::ALPHA, p.sm * (dl_da + thrust * p.ca) / mvc);
        set(Self::SIGMA, Self::MU, p.cm * side / mvc);
        for (k, d) in dcl_dc.iter().enumerate() {
            set(Self::SIGMA, Self::CX0 + k, p.sm * p.qbar * d / mvc);
        }
        Ok(())
    }

    fn jac_u(&self, x: &[f64], _u: &[f64], out: &mut [f64]) -> Result<(), DomainViolation> {
        aero(x)?;
        out.fill(0.0);
        out[Self::THRUST * 3] = 1.0;
        out[Self::ALPHA * 3 + 1] = 1.0;
        out[Self::MU * 3 + 2] = 1.0;
        Ok(())
    }

    fn validity_bounds(&self) -> Vec<StateBound> {
        vec![
            StateBound {
                state: Self::V,
                lo: 13.0,
                hi: 42.0,
            },
            StateBound {
                state: Self::GAMMA,
                lo: -FRAC_PI_6,
                hi: FRAC_PI_6,
            },
            StateBound {
                state: Self::SIGMA,
                lo: -PI,
                hi: PI,
            },
            StateBound {
                state: Self::THRUST,
                lo: 3.0,
                hi: 35.0,
            },
            StateBound {
                state: Self::ALPHA,
                lo: -FRAC_PI_8,
                hi: FRAC_PI_8,
            },
        ]
    }

    fn state_labels(&self) -> Vec<String> {
        [
            "x", "y", "z", "v", "gamma", "sigma", "T", "alpha", "mu", "Cx0", "Cxa", "Cz0", "Cza",
        ]
        .map(String::from)
        .to_vec()
    }

    fn control_labels(&self) -> Vec<String> {
        ["u_T", "u_alpha", "u_mu"].map(String::from).to_vec()
    }
}
