//! Semi-discrete advection–reaction–diffusion equation on inner Chebyshev nodes:
//! `ψ̇ = ψ∘(Dψ) + ⅕D²ψ + (3/2)ψ∘e^{-ψ/10} + I_Ω u`.

use super::DynamicsModel;
use crate::chebyshev::{chebyshev_operators, ChebyshevOperators};
use crate::error::{DomainViolation, Result};

const DIFFUSION: f64 = 0.2;
const REACTION: f64 = 1.5;
const REACTION_SCALE: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct ChebyshevReactionDiffusion {
    ops: ChebyshevOperators,
    d1: Vec<f64>,
    d2: Vec<f64>,
    indicator: Vec<f64>,
    control_region: (f64, f64),
}

impl ChebyshevReactionDiffusion {
    /// Control actuated on `Ω = [-0.5, -0.2]`.
    pub fn new(n: usize) -> Result<Self> {
        Self::with_region(n, (-0.5, -0.2))
    }

    pub fn with_region(n: usize, region: (f64, f64)) -> Result<Self> {
        let ops = chebyshev_operators(n)?;
        let indicator = ops
            .nodes
            .iter()
            .map(|&x| if x >= region.0 && x <= region.1 { 1.0 } else { 0.0 })
            .collect();
        Ok(Self {
            d1: ops.d1.iter().copied().collect(),
            d2: ops.d2.iter().copied().collect(),
            ops,
            indicator,
            control_region: region,
        })
    }

    pub fn operators(&self) -> &ChebyshevOperators {
        &self.ops
    }

    pub fn indicator(&self) -> &[f64] {
        &self.indicator
    }

    pub fn control_region(&self) -> (f64, f64) {
        self.control_region
    }

    pub fn nodes(&self) -> &[f64] {
        self.ops.nodes.as_slice().expect("contiguous")
    }

    pub fn quadrature_weights(&self) -> &[f64] {
        self.ops.weights.as_slice().expect("contiguous")
    }

    fn n(&self) -> usize {
        self.indicator.len()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn reaction_slope(psi: f64) -> f64 {
    REACTION * (-psi / REACTION_SCALE).exp() * (1.0 - psi / REACTION_SCALE)
}

impl DynamicsModel for ChebyshevReactionDiffusion {
    fn name(&self) -> &str {
        "chebyshev-reaction-diffusion"
    }

    fn state_dim(&self) -> usize {
        self.n()
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn rhs(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<(), DomainViolation> {
        let n = self.n();
        for i in 0..n {
            let row = i * n..(i + 1) * n;
            let dpsi = dot(&self.d1[row.clone()], x);
            let lap = dot(&self.d2[row], x);
            out[i] = x[i] * dpsi
                + DIFFUSION * lap
                + REACTION * x[i] * (-x[i] / REACTION_SCALE).exp()
                + self.indicator[i] * u[0];
        }
        Ok(())
    }

    fn jac_x(&self, x: &[f64], _u: &[f64], out: &mut [f64]) -> Result<(), DomainViolation> {
        let n = self.n();
        for i in 0..n {
            let row = i * n..(i + 1) * n;
            let dpsi = dot(&self.d1[row.clone()], x);
            for j in 0..n {
                out[i * n + j] = x[i] * self.d1[i * n + j] + DIFFUSION * self.d2[i * n + j];
            }
            out[i * n + i] += dpsi + reaction_slope(x[i]);
        }
        Ok(())
    }

    fn jac_u(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) -> Result<(), DomainViolation> {
        out.copy_from_slice(&self.indicator);
        Ok(())
    }

    fn vjp(
        &self,
        x: &[f64],
        _u: &[f64],
        w: &[f64],
        out_x: &mut [f64],
        out_u: &mut [f64],
    ) -> Result<(), DomainViolation> {
        let n = self.n();
        for j in 0..n {
            let dpsi = dot(&self.d1[j * n..(j + 1) * n], x);
            out_x[j] = w[j] * (dpsi + reaction_slope(x[j]));
        }
        for i in 0..n {
            let a = x[i] * w[i];
            let b = DIFFUSION * w[i];
            let d1 = &self.d1[i * n..(i + 1) * n];
            let d2 = &self.d2[i * n..(i + 1) * n];
            for ((o, p), q) in out_x.iter_mut().zip(d1).zip(d2) {
                *o += a * p + b * q;
            }
        }
        out_u[0] = dot(&self.indicator, w);
        Ok(())
    }

    fn state_labels(&self) -> Vec<String> {
        (1..=self.n()).map(|j| format!("psi{j}")).collect()
    }

    fn control_labels(&self) -> Vec<String> {
        vec!["u".into()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testing::assert_jacobians_match;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn zero_is_equilibrium() {
        let model = ChebyshevReactionDiffusion::new(16).unwrap();
        let mut f = vec![1.0; 16];
        model.rhs(&[0.0; 16], &[0.0], &mut f).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indicator_covers_control_region() {
        let model = ChebyshevReactionDiffusion::new(32).unwrap();
        for (&x, &i) in model.nodes().iter().zip(model.indicator()) {
            assert_eq!(i == 1.0, (-0.5..=-0.2).contains(&x));
        }
        assert!(model.indicator().contains(&1.0));
    }

    fn operator_error(n: usize) -> f64 {
        let model = ChebyshevReactionDiffusion::new(n).unwrap();
        let x = model.nodes().to_vec();
        let psi: Vec<f64> = x.iter().map(|&t| (PI * t).sin()).collect();
        let mut f = vec![0.0; n];
        model.rhs(&psi, &[0.0], &mut f).unwrap();
        x.iter()
            .zip(&psi)
            .zip(&f)
            .map(|((&t, &p), &fi)| {
                let exact =
                    p * PI * (PI * t).cos() - DIFFUSION * PI * PI * p + REACTION * p * (-p / REACTION_SCALE).exp();
                (fi - exact).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn spectral_convergence_on_sine() {
        let errs: Vec<f64> = [8, 16, 32].iter().map(|&n| operator_error(n)).collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        assert!(errs[2] < 1e-8, "{errs:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn jacobians_match_fd(
            psi in proptest::collection::vec(-2.5f64..2.5, 8),
            u in -3.0f64..3.0,
        ) {
            let model = ChebyshevReactionDiffusion::new(8).unwrap();
            assert_jacobians_match(&model, &psi, &[u]);
        }
    }
}
