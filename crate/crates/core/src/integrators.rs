//! Fixed-step explicit one-step maps `x_{j+1} = Q(x_j, u_j)` and their exact
//! derivatives.
//!
//! Runge–Kutta schemes are described by a Butcher tableau. Adams–Bashforth of
//! order `s` combines the `s` most recent right-hand sides, each evaluated at
//! its own step's control, and bootstraps its first `s − 1` steps of every
//! segment with a Runge–Kutta scheme of order `s`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleState;
use crate::error::{OcError, Result};
use crate::models::{check_dims, DynamicsModel};
use crate::parallel::Parallelism;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SchemeKind {
    Euler,
    /// Kutta's third-order method.
    Rk3,
    Rk4,
    /// Adams–Bashforth with `s ∈ {1, 2, 3}` history terms.
    AdamsBashforth(u8),
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemeKind::Euler => f.write_str("euler"),
            SchemeKind::Rk3 => f.write_str("rk3"),
            SchemeKind::Rk4 => f.write_str("rk4"),
            SchemeKind::AdamsBashforth(s) => write!(f, "ab{s}"),
        }
    }
}

impl FromStr for SchemeKind {
    type Err = OcError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(SchemeKind::Euler),
            "rk3" => Ok(SchemeKind::Rk3),
            "rk4" => Ok(SchemeKind::Rk4),
            "ab1" => Ok(SchemeKind::AdamsBashforth(1)),
            "ab2" => Ok(SchemeKind::AdamsBashforth(2)),
            "ab3" => Ok(SchemeKind::AdamsBashforth(3)),
            other => Err(OcError::Parameter(format!(
                "unknown scheme `{other}` (expected euler, rk3, rk4, ab1, ab2 or ab3)"
            ))),
        }
    }
}

impl TryFrom<String> for SchemeKind {
    type Error = OcError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SchemeKind> for String {
    fn from(kind: SchemeKind) -> Self {
        kind.to_string()
    }
}

/// Explicit Runge–Kutta coefficients; `a` is strictly lower triangular.
#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl ButcherTableau {
    pub fn euler() -> Self {
        Self {
            a: vec![vec![]],
            b: vec![1.0],
            c: vec![0.0],
        }
    }

    pub fn heun() -> Self {
        Self {
            a: vec![vec![], vec![1.0]],
            b: vec![0.5, 0.5],
            c: vec![0.0, 1.0],
        }
    }

    pub fn kutta3() -> Self {
        Self {
            a: vec![vec![], vec![0.5], vec![-1.0, 2.0]],
            b: vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
            c: vec![0.0, 0.5, 1.0],
        }
    }

    pub fn rk4() -> Self {
        Self {
            a: vec![vec![], vec![0.5], vec![0.0, 0.5], vec![0.0, 0.0, 1.0]],
            b: vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
            c: vec![0.0, 0.5, 0.5, 1.0],
        }
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }
}

/// Adams–Bashforth weights, most recent first.
pub fn adams_bashforth_weights(s: u8) -> Option<&'static [f64]> {
    match s {
        1 => Some(&[1.0]),
        2 => Some(&[1.5, -0.5]),
        3 => Some(&[23.0 / 12.0, -16.0 / 12.0, 5.0 / 12.0]),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Coefficients {
    RungeKutta(ButcherTableau),
    AdamsBashforth(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepScheme {
    pub kind: SchemeKind,
    pub dt: f64,
}

impl StepScheme {
    pub fn new(kind: SchemeKind, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(OcError::Parameter(format!("step size must be positive, got {dt}")));
        }
        if let SchemeKind::AdamsBashforth(s) = kind {
            if adams_bashforth_weights(s).is_none() {
                return Err(OcError::Parameter(format!(
                    "adams-bashforth order must be 1, 2 or 3, got {s}"
                )));
            }
        }
        Ok(Self { kind, dt })
    }

    pub fn with_dt(self, dt: f64) -> Self {
        Self { dt, ..self }
    }

    pub fn coefficients(&self) -> Coefficients {
        match self.kind {
            SchemeKind::AdamsBashforth(s) => {
                Coefficients::AdamsBashforth(adams_bashforth_weights(s).expect("validated").to_vec())
            }
            _ => Coefficients::RungeKutta(self.tableau()),
        }
    }

    /// Tableau used for ordinary steps (RK) or bootstrap steps (AB).
    pub(crate) fn tableau(&self) -> ButcherTableau {
        match self.kind {
            SchemeKind::Euler => ButcherTableau::euler(),
            SchemeKind::Rk3 => ButcherTableau::kutta3(),
            SchemeKind::Rk4 => ButcherTableau::rk4(),
            SchemeKind::AdamsBashforth(1) => ButcherTableau::euler(),
            SchemeKind::AdamsBashforth(2) => ButcherTableau::heun(),
            SchemeKind::AdamsBashforth(_) => ButcherTableau::kutta3(),
        }
    }

    /// History length `s` for Adams–Bashforth, 1 otherwise.
    pub fn history_len(&self) -> usize {
        match self.kind {
            SchemeKind::AdamsBashforth(s) => s as usize,
            _ => 1,
        }
    }

    pub(crate) fn ab_weights(&self) -> Option<&'static [f64]> {
        match self.kind {
            SchemeKind::AdamsBashforth(s) if s > 1 => adams_bashforth_weights(s),
            _ => None,
        }
    }

    /// True when local step `j` of a segment is a multistep (non-bootstrap) step.
    pub(crate) fn is_multistep(&self, j: usize) -> bool {
        self.ab_weights().is_some() && j + 1 >= self.history_len()
    }

    /// Formal order of accuracy.
    pub fn order(&self) -> usize {
        match self.kind {
            SchemeKind::Euler => 1,
            SchemeKind::Rk3 => 3,
            SchemeKind::Rk4 => 4,
            SchemeKind::AdamsBashforth(s) => s as usize,
        }
    }
}

/// Per-sample scratch for Runge–Kutta stages and their reverse pass.
#[derive(Debug, Clone)]
pub(crate) struct RkWork {
    pub ys: Vec<f64>,
    pub ks: Vec<f64>,
    pub kbar: Vec<f64>,
    pub vx: Vec<f64>,
    pub vu: Vec<f64>,
}

impl RkWork {
    pub fn new(stages: usize, n: usize, m: usize) -> Self {
        Self {
            ys: vec![0.0; stages * n],
            ks: vec![0.0; stages * n],
            kbar: vec![0.0; stages * n],
            vx: vec![0.0; n],
            vu: vec![0.0; m],
        }
    }
}

/// Fills stage inputs `ys` and slopes `ks`.
pub(crate) fn rk_stages(
    tab: &ButcherTableau,
    model: &dyn DynamicsModel,
    h: f64,
    x: &[f64],
    u: &[f64],
    work: &mut RkWork,
) -> std::result::Result<(), crate::error::DomainViolation> {
    let n = x.len();
    for i in 0..tab.stages() {
        let (done, rest) = work.ks.split_at_mut(i * n);
        let y = &mut work.ys[i * n..(i + 1) * n];
        y.copy_from_slice(x);
        for (j, &aij) in tab.a[i].iter().enumerate() {
            if aij != 0.0 {
                let kj = &done[j * n..(j + 1) * n];
                for (yv, kv) in y.iter_mut().zip(kj) {
                    *yv += h * aij * kv;
                }
            }
        }
        model.rhs(y, u, &mut rest[..n])?;
    }
    Ok(())
}

pub(crate) fn rk_step_sample(
    tab: &ButcherTableau,
    model: &dyn DynamicsModel,
    h: f64,
    x: &[f64],
    u: &[f64],
    work: &mut RkWork,
    out: &mut [f64],
) -> std::result::Result<(), crate::error::DomainViolation> {
    let n = x.len();
    rk_stages(tab, model, h, x, u, work)?;
    out.copy_from_slice(x);
    for (i, &bi) in tab.b.iter().enumerate() {
        for (o, k) in out.iter_mut().zip(&work.ks[i * n..(i + 1) * n]) {
            *o += h * bi * k;
        }
    }
    Ok(())
}

/// Reverse pass through one RK step: `gx = (∂Q/∂x)ᵀ λ`, `gu += (∂Q/∂u)ᵀ λ`.
/// Stage values in `work` must come from [`rk_stages`] at the same `(x, u)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn rk_vjp_sample(
    tab: &ButcherTableau,
    model: &dyn DynamicsModel,
    h: f64,
    u: &[f64],
    lam: &[f64],
    work: &mut RkWork,
    gx: &mut [f64],
    gu: &mut [f64],
) -> std::result::Result<(), crate::error::DomainViolation> {
    let n = lam.len();
    let s = tab.stages();
    for i in 0..s {
        for (kb, l) in work.kbar[i * n..(i + 1) * n].iter_mut().zip(lam) {
            *kb = h * tab.b[i] * l;
        }
    }
    gx.copy_from_slice(lam);
    for i in (0..s).rev() {
        let (lower, upper) = work.kbar.split_at_mut(i * n);
        let kb = &upper[..n];
        if kb.iter().all(|&v| v == 0.0) {
            continue;
        }
        model.vjp(&work.ys[i * n..(i + 1) * n], u, kb, &mut work.vx, &mut work.vu)?;
        for (g, v) in gx.iter_mut().zip(&work.vx) {
            *g += v;
        }
        for (g, v) in gu.iter_mut().zip(&work.vu) {
            *g += v;
        }
        for (j, &aij) in tab.a[i].iter().enumerate() {
            if aij != 0.0 {
                for (kbj, v) in lower[j * n..(j + 1) * n].iter_mut().zip(&work.vx) {
                    *kbj += h * aij * v;
                }
            }
        }
    }
    Ok(())
}

/// `∂Q/∂x` (n×n) and `∂Q/∂u` (n×m) of one step, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StepJacobians {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
}

/// Scratch for explicit step Jacobians of one sample.
#[derive(Debug, Clone)]
pub(crate) struct JacWork {
    rk: RkWork,
    jx: Vec<f64>,
    ju: Vec<f64>,
    dk: Vec<f64>,
    dku: Vec<f64>,
    tmp: Vec<f64>,
    tmpu: Vec<f64>,
}

impl JacWork {
    pub fn new(stages: usize, n: usize, m: usize) -> Self {
        Self {
            rk: RkWork::new(stages, n, m),
            jx: vec![0.0; n * n],
            ju: vec![0.0; n * m],
            dk: vec![0.0; stages * n * n],
            dku: vec![0.0; stages * n * m],
            tmp: vec![0.0; n * n],
            tmpu: vec![0.0; n * m],
        }
    }
}

/// Chain rule through all stages:
/// `dK_i = J_x(y_i)(I + hΣ_j a_ij dK_j)`, `dKu_i = J_x(y_i)(hΣ_j a_ij dKu_j) + J_u(y_i)`,
/// `A = I + hΣ b_i dK_i`, `B = hΣ b_i dKu_i`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn rk_jacobians_sample(
    tab: &ButcherTableau,
    model: &dyn DynamicsModel,
    h: f64,
    x: &[f64],
    u: &[f64],
    w: &mut JacWork,
    a_out: &mut [f64],
    b_out: &mut [f64],
) -> std::result::Result<(), crate::error::DomainViolation> {
    let n = x.len();
    let m = u.len();
    rk_stages(tab, model, h, x, u, &mut w.rk)?;
    for i in 0..tab.stages() {
        let y = &w.rk.ys[i * n..(i + 1) * n];
        model.jac_x(y, u, &mut w.jx)?;
        model.jac_u(y, u, &mut w.ju)?;
        // tmp = I + hΣ a_ij dK_j, tmpu = hΣ a_ij dKu_j
        w.tmp.fill(0.0);
        for d in 0..n {
            w.tmp[d * n + d] = 1.0;
        }
        w.tmpu.fill(0.0);
        for (j, &aij) in tab.a[i].iter().enumerate() {
            if aij != 0.0 {
                for (t, d) in w.tmp.iter_mut().zip(&w.dk[j * n * n..(j + 1) * n * n]) {
                    *t += h * aij * d;
                }
                for (t, d) in w.tmpu.iter_mut().zip(&w.dku[j * n * m..(j + 1) * n * m]) {
                    *t += h * aij * d;
                }
            }
        }
        let dk = &mut w.dk[i * n * n..(i + 1) * n * n];
        matmul(&w.jx, &w.tmp, n, n, n, dk);
        let dku = &mut w.dku[i * n * m..(i + 1) * n * m];
        matmul(&w.jx, &w.tmpu, n, n, m, dku);
        for (d, j) in dku.iter_mut().zip(&w.ju) {
            *d += j;
        }
    }
    a_out.fill(0.0);
    for d in 0..n {
        a_out[d * n + d] = 1.0;
    }
    b_out.fill(0.0);
    for (i, &bi) in tab.b.iter().enumerate() {
        for (a, d) in a_out.iter_mut().zip(&w.dk[i * n * n..(i + 1) * n * n]) {
            *a += h * bi * d;
        }
        for (b, d) in b_out.iter_mut().zip(&w.dku[i * n * m..(i + 1) * n * m]) {
            *b += h * bi * d;
        }
    }
    Ok(())
}

/// `out = A (r×k) · B (k×c)`, row-major.
pub(crate) fn matmul(a: &[f64], b: &[f64], r: usize, k: usize, c: usize, out: &mut [f64]) {
    out[..r * c].fill(0.0);
    for i in 0..r {
        for l in 0..k {
            let ail = a[i * k + l];
            if ail == 0.0 {
                continue;
            }
            let brow = &b[l * c..(l + 1) * c];
            for (o, bv) in out[i * c..(i + 1) * c].iter_mut().zip(brow) {
                *o += ail * bv;
            }
        }
    }
}

fn check_finite(row: &[f64], sample: usize, step: usize) -> Result<()> {
    if row.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(OcError::PropagationFailure { sample, step })
    }
}

/// Advances every sample by one step with control `u` held fixed.
///
/// For Adams–Bashforth with `s > 1`, `history` holds the right-hand sides of
/// the previous steps, most recent first; when fewer than `s − 1` are
/// supplied the bootstrap Runge–Kutta step is taken instead.
pub fn step(
    scheme: &StepScheme,
    model: &dyn DynamicsModel,
    x: &EnsembleState,
    u: &[f64],
    history: Option<&[EnsembleState]>,
) -> Result<EnsembleState> {
    let (n, m) = (model.state_dim(), model.control_dim());
    check_dims(model, x.dim(), u.len())?;
    let h = scheme.dt;
    let samples = x.samples();
    let mut out = vec![0.0; samples * n];
    let history = history.unwrap_or(&[]);
    match scheme.ab_weights() {
        Some(weights) if history.len() + 1 >= weights.len() => {
            for past in &history[..weights.len() - 1] {
                if past.samples() != samples || past.dim() != n {
                    return Err(OcError::Shape("history ensemble shape differs from state".into()));
                }
            }
            let mut f = vec![0.0; n];
            for i in 0..samples {
                let xi = x.row(i);
                model.rhs(xi, u, &mut f).map_err(|e| e.at(i))?;
                let row = &mut out[i * n..(i + 1) * n];
                for d in 0..n {
                    let mut acc = weights[0] * f[d];
                    for (q, past) in history.iter().take(weights.len() - 1).enumerate() {
                        acc += weights[q + 1] * past.row(i)[d];
                    }
                    row[d] = xi[d] + h * acc;
                }
                check_finite(row, i, 0)?;
            }
        }
        _ => {
            let tab = scheme.tableau();
            let mut work = RkWork::new(tab.stages(), n, m);
            for i in 0..samples {
                let row = &mut out[i * n..(i + 1) * n];
                rk_step_sample(&tab, model, h, x.row(i), u, &mut work, row).map_err(|e| e.at(i))?;
                check_finite(row, i, 0)?;
            }
        }
    }
    Ok(EnsembleState::from_vec_unchecked(samples, n, out))
}

/// Exact Jacobians of one step. For Adams–Bashforth with `s > 1` these are
/// the partial derivatives with respect to the current `(x, u)` with the
/// stored history held fixed: `A = I + h b_0 J_x`, `B = h b_0 J_u`.
pub fn step_jacobians(scheme: &StepScheme, model: &dyn DynamicsModel, x: &[f64], u: &[f64]) -> Result<StepJacobians> {
    let (n, m) = (model.state_dim(), model.control_dim());
    check_dims(model, x.len(), u.len())?;
    let mut a = vec![0.0; n * n];
    let mut b = vec![0.0; n * m];
    let tab = match scheme.ab_weights() {
        Some(w) => ButcherTableau {
            a: vec![vec![]],
            b: vec![w[0]],
            c: vec![0.0],
        },
        None => scheme.tableau(),
    };
    let mut work = JacWork::new(tab.stages(), n, m);
    rk_jacobians_sample(&tab, model, scheme.dt, x, u, &mut work, &mut a, &mut b).map_err(|e| e.at(0))?;
    Ok(StepJacobians {
        a: Array2::from_shape_vec((n, n), a).expect("sized"),
        b: Array2::from_shape_vec((n, m), b).expect("sized"),
    })
}

/// Propagates all samples through `controls.nrows()` steps in lock step.
/// Returns `N_k + 1` states including `x0`. Failures report the local step.
pub fn propagate_segment(
    scheme: &StepScheme,
    model: &dyn DynamicsModel,
    x0: &EnsembleState,
    controls: ArrayView2<'_, f64>,
) -> Result<Vec<EnsembleState>> {
    propagate_segment_with(scheme, model, x0, controls, &Parallelism::default())
}

pub fn propagate_segment_with(
    scheme: &StepScheme,
    model: &dyn DynamicsModel,
    x0: &EnsembleState,
    controls: ArrayView2<'_, f64>,
    par: &Parallelism,
) -> Result<Vec<EnsembleState>> {
    let (n, m) = (model.state_dim(), model.control_dim());
    check_dims(model, x0.dim(), controls.ncols())?;
    if controls.ncols() != m {
        return Err(OcError::Shape("control width differs from model".into()));
    }
    let samples = x0.samples();
    let steps = controls.nrows();
    let h = scheme.dt;
    let tab = scheme.tableau();
    let batches = par.batch_count(samples);
    let mut works: Vec<RkWork> = (0..batches).map(|_| RkWork::new(tab.stages(), n, m)).collect();
    let ab = scheme.ab_weights();
    let s = scheme.history_len();
    // Ring of the most recent right-hand sides, indexed by step mod s.
    let mut fhist: Vec<Vec<f64>> = if ab.is_some() {
        (0..s).map(|_| vec![0.0; samples * n]).collect()
    } else {
        Vec::new()
    };
    let mut states: Vec<EnsembleState> = Vec::with_capacity(steps + 1);
    states.push(x0.clone());
    for j in 0..steps {
        let u_row = controls.row(j);
        let u: Vec<f64> = u_row.iter().copied().collect();
        let prev = states[j].as_slice();
        let mut next = vec![0.0; samples * n];
        if let Some(weights) = ab {
            let slot = j % s;
            {
                let fcur = &mut fhist[slot];
                par.run_batches(n, fcur, &mut works, |first, rows, _| {
                    for (r, f) in rows.chunks_exact_mut(n).enumerate() {
                        let i = first + r;
                        model.rhs(&prev[i * n..(i + 1) * n], &u, f).map_err(|e| e.at(i))?;
                    }
                    Ok(())
                })?;
            }
            if scheme.is_multistep(j) {
                let fh = &fhist;
                par.run_batches(n, &mut next, &mut works, |first, rows, _| {
                    for (r, out) in rows.chunks_exact_mut(n).enumerate() {
                        let i = first + r;
                        let xi = &prev[i * n..(i + 1) * n];
                        for d in 0..n {
                            let mut acc = 0.0;
                            for (q, &bq) in weights.iter().enumerate() {
                                acc += bq * fh[(j + s - q) % s][i * n + d];
                            }
                            out[d] = xi[d] + h * acc;
                        }
                        check_finite(out, i, j)?;
                    }
                    Ok(())
                })?;
                states.push(EnsembleState::from_vec_unchecked(samples, n, next));
                continue;
            }
        }
        par.run_batches(n, &mut next, &mut works, |first, rows, work| {
            for (r, out) in rows.chunks_exact_mut(n).enumerate() {
                let i = first + r;
                rk_step_sample(&tab, model, h, &prev[i * n..(i + 1) * n], &u, work, out).map_err(|e| e.at(i))?;
                check_finite(out, i, j)?;
            }
            Ok(())
        })?;
        states.push(EnsembleState::from_vec_unchecked(samples, n, next));
    }
    Ok(states)
}
