use std::collections::VecDeque;

/// Limited-memory inverse-Hessian approximation (two-loop recursion) with
/// initial matrix `γ D` for a fixed positive diagonal `D`.
#[derive(Debug, Clone)]
pub struct Lbfgs {
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    diagonal: Option<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Lbfgs {
    pub fn new(memory: usize) -> Self {
        Self {
            memory: memory.max(1),
            pairs: VecDeque::with_capacity(memory.max(1)),
            diagonal: None,
        }
    }

    /// Replaces `D` (identity when `None`). Stored pairs are kept.
    pub fn set_diagonal(&mut self, diagonal: Option<Vec<f64>>) {
        self.diagonal = diagonal;
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn reset(&mut self) {
        self.pairs.clear();
    }

    /// Stores `(s, y)` if the curvature condition holds. Returns whether it did.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        let scale = dot(&s, &s).sqrt() * dot(&y, &y).sqrt();
        if !(sy > 1e-12 * scale) || !sy.is_finite() {
            return false;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
        true
    }

    /// `−H g`.
    pub fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        let gamma = match self.pairs.back() {
            Some((s, y, _)) => {
                let yy = match &self.diagonal {
                    Some(d) => y.iter().zip(d).map(|(a, w)| a * a * w).sum(),
                    None => dot(y, y),
                };
                dot(s, y) / yy
            }
            None => 1.0,
        };
        match &self.diagonal {
            Some(d) => q.iter_mut().zip(d).for_each(|(v, w)| *v *= gamma * w),
            None => q.iter_mut().for_each(|v| *v *= gamma),
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}
