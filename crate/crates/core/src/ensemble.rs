//! Ensemble containers, shooting grids and piecewise-constant control schedules.

use ndarray::{Array2, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::error::{OcError, Result};

/// Relative tolerance used when checking that consecutive segments touch.
const CONTIGUITY_TOL: f64 = 1e-12;

/// One shooting interval `[t_start, t_end]` split into `steps` equal steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub steps: usize,
}

impl Segment {
    pub fn new(t_start: f64, t_end: f64, steps: usize) -> Self {
        Self { t_start, t_end, steps }
    }

    pub fn step_size(&self) -> f64 {
        (self.t_end - self.t_start) / self.steps as f64
    }

    /// Time of grid point `j` (0 ..= steps). The last point is pinned to
    /// `t_end` so interfaces are bit-identical across segments.
    pub fn time(&self, j: usize) -> f64 {
        if j == self.steps {
            self.t_end
        } else {
            self.t_start + j as f64 * self.step_size()
        }
    }
}

/// Partition of `[0, t_f]` into contiguous shooting segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Segment>", into = "Vec<Segment>")]
pub struct ShootingPlan {
    segments: Vec<Segment>,
}

impl ShootingPlan {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        let first = segments
            .first()
            .ok_or(OcError::EmptyInput("shooting plan has no segments"))?;
        if first.t_start != 0.0 {
            return Err(OcError::Parameter(format!(
                "segments[0].t_start must be 0, got {}",
                first.t_start
            )));
        }
        for (k, seg) in segments.iter().enumerate() {
            if seg.steps == 0 {
                return Err(OcError::Parameter(format!("segments[{k}].steps must be >= 1")));
            }
            if !(seg.t_start.is_finite() && seg.t_end.is_finite() && seg.t_end > seg.t_start) {
                return Err(OcError::Parameter(format!(
                    "segments[{k}] must satisfy t_start < t_end, got [{}, {}]",
                    seg.t_start, seg.t_end
                )));
            }
        }
        for (k, pair) in segments.windows(2).enumerate() {
            let scale = pair[0].t_end.abs().max(1.0);
            if (pair[0].t_end - pair[1].t_start).abs() > CONTIGUITY_TOL * scale {
                return Err(OcError::Parameter(format!(
                    "segments[{}] ends at {} but segments[{}] starts at {}",
                    k,
                    pair[0].t_end,
                    k + 1,
                    pair[1].t_start
                )));
            }
        }
        Ok(Self { segments })
    }

    /// `count` equal segments over `[0, t_final]` with step size `dt`.
    pub fn uniform(t_final: f64, count: usize, dt: f64) -> Result<Self> {
        if count == 0 {
            return Err(OcError::Parameter("segment count must be >= 1".into()));
        }
        if !(dt > 0.0 && t_final > 0.0) {
            return Err(OcError::Parameter(format!(
                "need dt > 0 and t_final > 0, got dt={dt}, t_final={t_final}"
            )));
        }
        let length = t_final / count as f64;
        let steps = (length / dt).round();
        if steps < 1.0 || ((steps * dt - length).abs() > 1e-9 * length) {
            return Err(OcError::Parameter(format!(
                "segment length {length} is not a whole multiple of dt={dt}"
            )));
        }
        let steps = steps as usize;
        let segments = (0..count)
            .map(|k| {
                let t_start = k as f64 * length;
                let t_end = if k + 1 == count {
                    t_final
                } else {
                    (k + 1) as f64 * length
                };
                Segment::new(t_start, t_end, steps)
            })
            .collect();
        Self::new(segments)
    }

    pub fn single(t_final: f64, steps: usize) -> Result<Self> {
        Self::new(vec![Segment::new(0.0, t_final, steps)])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    /// Total number of integration steps `N = Σ N_k`.
    pub fn total_steps(&self) -> usize {
        self.segments.iter().map(|s| s.steps).sum()
    }

    pub fn final_time(&self) -> f64 {
        self.segments.last().map(|s| s.t_end).unwrap_or(0.0)
    }

    /// Global index of the first step of each segment.
    pub fn step_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.segments
            .iter()
            .map(|s| {
                let off = acc;
                acc += s.steps;
                off
            })
            .collect()
    }

    /// Left endpoints of every control interval, in segment-major order.
    pub fn control_times(&self) -> Vec<f64> {
        self.segments
            .iter()
            .flat_map(|s| (0..s.steps).map(move |j| s.time(j)))
            .collect()
    }
}

impl TryFrom<Vec<Segment>> for ShootingPlan {
    type Error = OcError;

    fn try_from(segments: Vec<Segment>) -> Result<Self> {
        Self::new(segments)
    }
}

impl From<ShootingPlan> for Vec<Segment> {
    fn from(plan: ShootingPlan) -> Self {
        plan.segments
    }
}

/// All grid times `t_{k,j}`, boundary-inclusive per segment (N + S values).
/// Interface times appear twice: once as a segment end, once as the next start.
pub fn grid_times(plan: &ShootingPlan) -> Vec<f64> {
    plan.segments
        .iter()
        .flat_map(|s| (0..=s.steps).map(move |j| s.time(j)))
        .collect()
}

/// Piecewise-constant controls: one `N_k × m` block per segment.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSchedule {
    values: Vec<Array2<f64>>,
    control_dim: usize,
}

impl ControlSchedule {
    pub fn new(plan: &ShootingPlan, values: Vec<Array2<f64>>) -> Result<Self> {
        if values.len() != plan.segment_count() {
            return Err(OcError::Shape(format!(
                "expected {} control blocks, got {}",
                plan.segment_count(),
                values.len()
            )));
        }
        let control_dim = values.first().map(|v| v.ncols()).unwrap_or(0);
        for (k, (block, seg)) in values.iter().zip(plan.segments()).enumerate() {
            if block.nrows() != seg.steps || block.ncols() != control_dim {
                return Err(OcError::Shape(format!(
                    "control block {k} is {}x{}, expected {}x{}",
                    block.nrows(),
                    block.ncols(),
                    seg.steps,
                    control_dim
                )));
            }
            if block.iter().any(|v| !v.is_finite()) {
                return Err(OcError::Parameter(format!("control block {k} has non-finite entries")));
            }
        }
        let values = values
            .into_iter()
            .map(|b| b.as_standard_layout().into_owned())
            .collect();
        Ok(Self { values, control_dim })
    }

    pub fn zeros(plan: &ShootingPlan, control_dim: usize) -> Self {
        Self {
            values: plan
                .segments()
                .iter()
                .map(|s| Array2::zeros((s.steps, control_dim)))
                .collect(),
            control_dim,
        }
    }

    pub fn constant(plan: &ShootingPlan, u: &[f64]) -> Self {
        let mut sched = Self::zeros(plan, u.len());
        for block in &mut sched.values {
            for mut row in block.rows_mut() {
                row.assign(&ndarray::aview1(u));
            }
        }
        sched
    }

    /// Builds a schedule from controls flattened in segment-major, row-major order.
    pub fn from_flat(plan: &ShootingPlan, control_dim: usize, flat: &[f64]) -> Result<Self> {
        let expected = plan.total_steps() * control_dim;
        if flat.len() != expected {
            return Err(OcError::Shape(format!(
                "expected {expected} control values, got {}",
                flat.len()
            )));
        }
        let mut offset = 0;
        let mut values = Vec::with_capacity(plan.segment_count());
        for seg in plan.segments() {
            let len = seg.steps * control_dim;
            let block = Array2::from_shape_vec((seg.steps, control_dim), flat[offset..offset + len].to_vec())
                .expect("length checked above");
            values.push(block);
            offset += len;
        }
        Self::new(plan, values)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values.iter().flat_map(|b| b.iter().copied()).collect()
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn segment_count(&self) -> usize {
        self.values.len()
    }

    pub fn segment(&self, k: usize) -> ArrayView2<'_, f64> {
        self.values[k].view()
    }

    pub fn segment_mut(&mut self, k: usize) -> ArrayViewMut2<'_, f64> {
        self.values[k].view_mut()
    }

    pub fn total_steps(&self) -> usize {
        self.values.iter().map(|b| b.nrows()).sum()
    }

    /// Rows in global step order.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.iter().flat_map(|b| {
            b.as_slice()
                .expect("standard layout")
                .chunks_exact(self.control_dim.max(1))
        })
    }

    /// Evaluates the piecewise-constant control at time `t`, `u(t) = u_{k,j}`
    /// for `t ∈ [t_{k,j}, t_{k,j+1})`. Times at or past `t_f` return the last row.
    pub fn value_at(&self, plan: &ShootingPlan, t: f64) -> Option<&[f64]> {
        if t < 0.0 || self.values.is_empty() {
            return None;
        }
        let k = plan
            .segments()
            .iter()
            .position(|s| t < s.t_end)
            .unwrap_or(plan.segment_count() - 1);
        let seg = plan.segments()[k];
        let j = (((t - seg.t_start) / seg.step_size()).floor().max(0.0) as usize).min(seg.steps - 1);
        let block = &self.values[k];
        let row = block.as_slice().expect("standard layout");
        Some(&row[j * self.control_dim..(j + 1) * self.control_dim])
    }

    pub fn is_compatible(&self, plan: &ShootingPlan) -> bool {
        self.values.len() == plan.segment_count()
            && self
                .values
                .iter()
                .zip(plan.segments())
                .all(|(b, s)| b.nrows() == s.steps)
    }
}

/// `M × n` ensemble of sample states at one time instant; row `i` is sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    data: Array2<f64>,
}

impl EnsembleState {
    /// Wraps an `M × n` matrix, rejecting non-finite entries.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if let Some((idx, _)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let n = data.ncols().max(1);
            return Err(OcError::PropagationFailure {
                sample: idx / n,
                step: 0,
            });
        }
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != n) {
            return Err(OcError::Shape("ragged ensemble rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(Array2::from_shape_vec((rows.len(), n), flat).expect("rectangular"))
    }

    /// Every sample equal to `x`.
    pub fn replicate(x: &[f64], samples: usize) -> Result<Self> {
        let flat: Vec<f64> = (0..samples).flat_map(|_| x.iter().copied()).collect();
        Self::new(Array2::from_shape_vec((samples, x.len()), flat).expect("rectangular"))
    }

    /// Caller guarantees finiteness and `data.len() == samples * dim`.
    pub(crate) fn from_vec_unchecked(samples: usize, dim: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), samples * dim);
        Self {
            data: Array2::from_shape_vec((samples, dim), data).expect("shape checked by caller"),
        }
    }

    pub fn samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.dim();
        &self.as_slice()[i * n..(i + 1) * n]
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice().expect("standard layout")
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }
}

/// Coordinate-wise arithmetic mean over samples.
pub fn ensemble_mean(e: &EnsembleState) -> Result<Vec<f64>> {
    let m = e.samples();
    if m == 0 {
        return Err(OcError::EmptyInput("ensemble has no samples"));
    }
    let mut mean = vec![0.0; e.dim()];
    for i in 0..m {
        for (acc, v) in mean.iter_mut().zip(e.row(i)) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);
    Ok(mean)
}

/// Coordinate-wise population standard deviation over samples.
pub fn ensemble_std(e: &EnsembleState) -> Result<Vec<f64>> {
    let mean = ensemble_mean(e)?;
    let m = e.samples() as f64;
    let mut var = vec![0.0; e.dim()];
    for i in 0..e.samples() {
        for ((acc, v), mu) in var.iter_mut().zip(e.row(i)).zip(&mean) {
            *acc += (v - mu) * (v - mu);
        }
    }
    Ok(var.into_iter().map(|v| (v / m).sqrt()).collect())
}

/// Time-ordered ensemble states of every segment, `N_k + 1` states each.
#[derive(Debug, Clone)]
pub struct EnsembleTrajectory {
    plan: ShootingPlan,
    segments: Vec<Vec<EnsembleState>>,
}

impl EnsembleTrajectory {
    pub fn new(plan: ShootingPlan, segments: Vec<Vec<EnsembleState>>) -> Result<Self> {
        if segments.len() != plan.segment_count() {
            return Err(OcError::Shape(format!(
                "expected {} segments, got {}",
                plan.segment_count(),
                segments.len()
            )));
        }
        for (k, (states, seg)) in segments.iter().zip(plan.segments()).enumerate() {
            if states.len() != seg.steps + 1 {
                return Err(OcError::Shape(format!(
                    "segment {k} has {} states, expected {}",
                    states.len(),
                    seg.steps + 1
                )));
            }
        }
        Ok(Self { plan, segments })
    }

    pub fn plan(&self) -> &ShootingPlan {
        &self.plan
    }

    pub fn segment(&self, k: usize) -> &[EnsembleState] {
        &self.segments[k]
    }

    pub fn segments(&self) -> &[Vec<EnsembleState>] {
        &self.segments
    }

    /// Number of stored states, `N + S`.
    pub fn len(&self) -> usize {
        self.segments.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// States in time order (interfaces appear twice).
    pub fn states(&self) -> impl Iterator<Item = &EnsembleState> + '_ {
        self.segments.iter().flatten()
    }

    /// First and last state of segment `k` (its entries in `X_b`).
    pub fn boundary(&self, k: usize) -> (&EnsembleState, &EnsembleState) {
        let seg = &self.segments[k];
        (&seg[0], &seg[seg.len() - 1])
    }

    pub fn final_state(&self) -> &EnsembleState {
        self.boundary(self.segments.len() - 1).1
    }
}
