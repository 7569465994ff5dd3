//! Chebyshev–Gauss–Lobatto differentiation matrices and Clenshaw–Curtis weights.

use ndarray::{s, Array1, Array2};

use crate::error::{OcError, Result};

/// Spectral operators on `n` inner nodes, with the boundary-inclusive
/// versions they were truncated from.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebyshevOperators {
    /// Inner nodes `x_j = cos(jπ/(n+1))`, `j = 1..n`, in decreasing order.
    pub nodes: Array1<f64>,
    pub d1: Array2<f64>,
    pub d2: Array2<f64>,
    pub weights: Array1<f64>,
    pub full_nodes: Array1<f64>,
    pub full_d1: Array2<f64>,
    pub full_d2: Array2<f64>,
    pub full_weights: Array1<f64>,
}

impl ChebyshevOperators {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Builds operators for `n ≥ 2` inner nodes on the `n + 2` point grid.
pub fn chebyshev_operators(n: usize) -> Result<ChebyshevOperators> {
    if n < 2 {
        return Err(OcError::Parameter(format!(
            "chebyshev node count must be >= 2, got {n}"
        )));
    }
    let big_n = n + 1;
    let (full_nodes, full_d1) = cheb(big_n);
    let full_d2 = full_d1.dot(&full_d1);
    let full_weights = clenshaw_curtis(big_n);
    let inner = s![1..big_n, 1..big_n];
    Ok(ChebyshevOperators {
        nodes: full_nodes.slice(s![1..big_n]).to_owned(),
        d1: full_d1.slice(inner).to_owned(),
        d2: full_d2.slice(inner).to_owned(),
        weights: full_weights.slice(s![1..big_n]).to_owned(),
        full_nodes,
        full_d1,
        full_d2,
        full_weights,
    })
}

/// Differentiation matrix on `x_j = cos(jπ/N)`, `j = 0..N`, with the diagonal
/// set by the negative-sum trick so constants are annihilated exactly.
fn cheb(big_n: usize) -> (Array1<f64>, Array2<f64>) {
    let pi = std::f64::consts::PI;
    let x = Array1::from_shape_fn(big_n + 1, |j| (pi * j as f64 / big_n as f64).cos());
    let c = Array1::from_shape_fn(big_n + 1, |j| {
        let base = if j == 0 || j == big_n { 2.0 } else { 1.0 };
        if j % 2 == 0 {
            base
        } else {
            -base
        }
    });
    let mut d = Array2::zeros((big_n + 1, big_n + 1));
    for i in 0..=big_n {
        for j in 0..=big_n {
            if i != j {
                d[[i, j]] = c[i] / c[j] / (x[i] - x[j]);
            }
        }
    }
    for i in 0..=big_n {
        let row_sum: f64 = d.row(i).sum();
        d[[i, i]] = -row_sum;
    }
    (x, d)
}

/// Clenshaw–Curtis weights on `x_j = cos(jπ/N)`, `j = 0..N`, for `∫_{-1}^{1}`.
fn clenshaw_curtis(big_n: usize) -> Array1<f64> {
    let pi = std::f64::consts::PI;
    let nf = big_n as f64;
    let mut w = Array1::zeros(big_n + 1);
    let theta: Vec<f64> = (0..=big_n).map(|j| pi * j as f64 / nf).collect();
    let mut v = vec![1.0; big_n.saturating_sub(1)];
    if big_n % 2 == 0 {
        w[0] = 1.0 / (nf * nf - 1.0);
        w[big_n] = w[0];
        for k in 1..big_n / 2 {
            let kf = k as f64;
            for (vi, th) in v.iter_mut().zip(&theta[1..big_n]) {
                *vi -= 2.0 * (2.0 * kf * th).cos() / (4.0 * kf * kf - 1.0);
            }
        }
        for (vi, th) in v.iter_mut().zip(&theta[1..big_n]) {
            *vi -= (nf * th).cos() / (nf * nf - 1.0);
        }
    } else {
        w[0] = 1.0 / (nf * nf);
        w[big_n] = w[0];
        for k in 1..=(big_n - 1) / 2 {
            let kf = k as f64;
            for (vi, th) in v.iter_mut().zip(&theta[1..big_n]) {
                *vi -= 2.0 * (2.0 * kf * th).cos() / (4.0 * kf * kf - 1.0);
            }
        }
    }
    for (j, vi) in v.iter().enumerate() {
        w[j + 1] = 2.0 * vi / nf;
    }
    w
}
