use super::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.eps > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("adam hyperparameters {self:?}")))
        }
    }
}

/// Moment accumulators for a fixed, ordered list of parameter blocks.
///
/// Moments are allocated on the first step. An entry whose gradient is
/// exactly zero is left untouched (parameter and both moments), so blocks
/// that receive no signal stay bit-identical regardless of carried momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first: Vec<Vec<T>>,
    pub second: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    fn ensure_shapes(&mut self, names: &[String], params: &[&mut [T]], grads: &[Vec<T>]) -> Result<()> {
        if params.len() != grads.len() || names.len() != params.len() {
            return Err(Error::shape(
                "adam parameter block count",
                params.len(),
                format!("{} grads / {} names", grads.len(), names.len()),
            ));
        }
        for ((name, p), g) in names.iter().zip(params).zip(grads) {
            if p.len() != g.len() {
                return Err(Error::shape(format!("gradient for {name}"), p.len(), g.len()));
            }
        }
        if self.first.is_empty() && self.step == 0 {
            self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
            return Ok(());
        }
        if self.first.len() != params.len() {
            return Err(Error::shape(
                "adam state block count",
                self.first.len(),
                params.len(),
            ));
        }
        for ((name, p), m) in names.iter().zip(params).zip(&self.first) {
            if p.len() != m.len() {
                return Err(Error::shape(format!("adam moments for {name}"), m.len(), p.len()));
            }
        }
        Ok(())
    }

    /// One bias-corrected update over every block, in place.
    pub fn step(&mut self, names: &[String], params: &mut [&mut [T]], grads: &[Vec<T>]) -> Result<()> {
        self.ensure_shapes(names, params, grads)?;
        self.step += 1;
        let t = self.step as f64;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let b1 = T::lit(beta1);
        let b2 = T::lit(beta2);
        let one = T::one();
        let bias1 = T::lit(1.0 - beta1.powf(t));
        let bias2 = T::lit(1.0 - beta2.powf(t));
        let lr = T::lit(lr);
        let eps = T::lit(eps);

        for (bi, p) in params.iter_mut().enumerate() {
            let g = &grads[bi];
            let m = &mut self.first[bi];
            let v = &mut self.second[bi];
            for j in 0..p.len() {
                let gj = g[j];
                if gj == T::zero() {
                    continue;
                }
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                let m_hat = m[j] / bias1;
                let v_hat = v[j] / bias2;
                p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // m̂ = g, v̂ = g², so the update is lr·g/(|g|+eps)
        let mut state = AdamState::<f64>::new(AdamConfig { lr: 0.1, ..Default::default() });
        let mut w = [1.0];
        state.step(&names(1), &mut [&mut w[..]], &[vec![1.0]]).unwrap();
        let expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((w[0] - expected).abs() < 1e-15);
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_is_bit_identical_even_with_momentum() {
        let mut state = AdamState::<f32>::new(AdamConfig::default());
        let mut w = vec![0.3f32, -1.7, 2.5];
        state.step(&names(1), &mut [&mut w[..]], &[vec![0.5, -0.2, 1.0]]).unwrap();
        let before = w.clone();
        state.step(&names(1), &mut [&mut w[..]], &[vec![0.0; 3]]).unwrap();
        assert_eq!(
            before.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            w.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(state.step, 2);
    }

    #[test]
    fn quadratic_loss_decreases_over_two_steps() {
        let mut state = AdamState::<f64>::new(AdamConfig { lr: 0.1, ..Default::default() });
        let mut w = [2.0];
        let f = |w: f64| w * w;
        let mut last = f(w[0]);
        for _ in 0..2 {
            let g = vec![2.0 * w[0]];
            state.step(&names(1), &mut [&mut w[..]], &[g]).unwrap();
            assert!(f(w[0]) < last);
            last = f(w[0]);
        }
    }

    #[test]
    fn shape_mismatch_names_the_block() {
        let mut state = AdamState::<f64>::new(AdamConfig::default());
        let mut a = [0.0; 2];
        let mut b = [0.0; 3];
        let err = state
            .step(
                &["alpha".into(), "beta".into()],
                &mut [&mut a[..], &mut b[..]],
                &[vec![0.0; 2], vec![0.0; 4]],
            )
            .unwrap_err();
        assert!(err.to_string().contains("beta"), "{err}");
    }
}
