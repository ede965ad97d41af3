use crate::numerics::{Matrix, Real};

/// Which rows of a batch feed the normalization statistics during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormStats {
    /// Every row, including gated (zeroed) rows.
    AllRows,
    /// Only rows whose patch is visible.
    VisibleOnly,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormConfig {
    pub eps: f64,
    pub momentum: f64,
    pub stats: NormStats,
}

impl Default for NormConfig {
    fn default() -> Self {
        NormConfig {
            eps: 1e-5,
            momentum: 0.1,
            stats: NormStats::AllRows,
        }
    }
}

/// Per-feature batch normalization with learnable scale and shift.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    /// False until running statistics have seen at least one training batch.
    pub populated: bool,
}

#[derive(Clone, Debug)]
pub struct NormCache<T> {
    xhat: Matrix<T>,
    inv_std: Vec<T>,
    weights: Vec<T>,
    total_weight: T,
    pub(crate) mean: Vec<T>,
    pub(crate) unbiased_var: Vec<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: vec![T::one(); dim],
            beta: vec![T::zero(); dim],
            running_mean: vec![T::zero(); dim],
            running_var: vec![T::one(); dim],
            populated: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    /// Output for an all-zero input row under running statistics.
    pub fn zero_input_output(&self, eps: f64) -> Vec<T> {
        let eps = T::lit(eps);
        (0..self.dim())
            .map(|c| {
                -self.gamma[c] * self.running_mean[c] / (self.running_var[c] + eps).sqrt()
                    + self.beta[c]
            })
            .collect()
    }

    pub fn forward_infer(&self, z: &mut Matrix<T>, eps: f64) {
        let eps = T::lit(eps);
        let inv: Vec<T> = self
            .running_var
            .iter()
            .map(|&v| T::one() / (v + eps).sqrt())
            .collect();
        for r in 0..z.rows() {
            for (c, x) in z.row_mut(r).iter_mut().enumerate() {
                *x = (*x - self.running_mean[c]) * inv[c] * self.gamma[c] + self.beta[c];
            }
        }
    }

    /// Normalizes `z` with weighted batch statistics; each weight is 0 or 1.
    pub fn forward_train(&self, z: &Matrix<T>, weights: Vec<T>, eps: f64) -> (Matrix<T>, NormCache<T>) {
        let (rows, dim) = z.shape();
        debug_assert_eq!(weights.len(), rows);
        let total: T = weights.iter().copied().sum();
        let mut mean = vec![T::zero(); dim];
        let mut var = vec![T::zero(); dim];
        if total > T::zero() {
            for (r, &w) in weights.iter().enumerate() {
                if w == T::zero() {
                    continue;
                }
                for (m, &x) in mean.iter_mut().zip(z.row(r)) {
                    *m += w * x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= total);
            for (r, &w) in weights.iter().enumerate() {
                if w == T::zero() {
                    continue;
                }
                for ((v, &m), &x) in var.iter_mut().zip(&mean).zip(z.row(r)) {
                    let d = x - m;
                    *v += w * d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= total);
        }
        let eps_t = T::lit(eps);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
        let mut xhat = Matrix::zeros(rows, dim);
        let mut out = Matrix::zeros(rows, dim);
        for r in 0..rows {
            for c in 0..dim {
                let xh = (z.get(r, c) - mean[c]) * inv_std[c];
                xhat.set(r, c, xh);
                out.set(r, c, xh * self.gamma[c] + self.beta[c]);
            }
        }
        let correction = if total > T::one() {
            total / (total - T::one())
        } else {
            T::one()
        };
        let unbiased_var = var.iter().map(|&v| v * correction).collect();
        (
            out,
            NormCache {
                xhat,
                inv_std,
                weights,
                total_weight: total,
                mean,
                unbiased_var,
            },
        )
    }

    /// Returns `(dL/dz, dL/dgamma, dL/dbeta)`.
    pub fn backward(&self, cache: &NormCache<T>, g: &Matrix<T>) -> (Matrix<T>, Vec<T>, Vec<T>) {
        let (rows, dim) = g.shape();
        let mut dgamma = vec![T::zero(); dim];
        let mut dbeta = vec![T::zero(); dim];
        for r in 0..rows {
            for c in 0..dim {
                let gv = g.get(r, c);
                dgamma[c] += gv * cache.xhat.get(r, c);
                dbeta[c] += gv;
            }
        }
        let mut dz = Matrix::zeros(rows, dim);
        if cache.total_weight == T::zero() {
            return (dz, dgamma, dbeta);
        }
        // dz_k = γ/s · (g_k − w_k/W · Σ_j g_j − w_k/W · x̂_k · Σ_j g_j x̂_j)
        for r in 0..rows {
            let wk = cache.weights[r] / cache.total_weight;
            for c in 0..dim {
                let scale = self.gamma[c] * cache.inv_std[c];
                let v = g.get(r, c) - wk * dbeta[c] - wk * cache.xhat.get(r, c) * dgamma[c];
                dz.set(r, c, scale * v);
            }
        }
        (dz, dgamma, dbeta)
    }

    pub fn update_running(&mut self, cache: &NormCache<T>, momentum: f64) {
        if cache.total_weight == T::zero() {
            return;
        }
        let m = T::lit(momentum);
        let keep = T::one() - m;
        for c in 0..self.dim() {
            self.running_mean[c] = keep * self.running_mean[c] + m * cache.mean[c];
            self.running_var[c] = keep * self.running_var[c] + m * cache.unbiased_var[c];
        }
        self.populated = true;
    }

    pub fn cast<U: Real>(&self) -> BatchNorm<U> {
        use crate::numerics::cast_slice;
        BatchNorm {
            gamma: cast_slice(&self.gamma),
            beta: cast_slice(&self.beta),
            running_mean: cast_slice(&self.running_mean),
            running_var: cast_slice(&self.running_var),
            populated: self.populated,
        }
    }
}
