use crate::error::Result;
use crate::numerics::{Matrix, Real, SeededRng};

/// Two fully connected layers with a per-channel PReLU between them:
/// `y = W2 · prelu(W1 · x + b1) + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection<T> {
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub slope: Vec<T>,
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct ProjectionCache<T> {
    input: Matrix<T>,
    pre: Matrix<T>,
    act: Matrix<T>,
}

#[derive(Clone, Debug)]
pub struct ProjectionGrads<T> {
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub slope: Vec<T>,
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
    pub input: Option<Matrix<T>>,
}

pub const PRELU_INIT: f64 = 0.25;

fn fan_in_uniform<T: Real>(rng: &mut SeededRng, rows: usize, cols: usize) -> Matrix<T> {
    let bound = 1.0 / (cols.max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::lit(rng.uniform(-bound, bound)))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

#[inline]
fn prelu<T: Real>(x: T, a: T) -> T {
    if x > T::zero() {
        x
    } else {
        a * x
    }
}

impl<T: Real> Projection<T> {
    pub fn init(rng: &mut SeededRng, input: usize, hidden: usize, output: usize) -> Self {
        let w1 = fan_in_uniform(rng, hidden, input);
        let w2 = fan_in_uniform(rng, output, hidden);
        Projection {
            w1,
            b1: vec![T::zero(); hidden],
            slope: vec![T::lit(PRELU_INIT); hidden],
            w2,
            b2: vec![T::zero(); output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows()
    }

    fn hidden(&self, x: &Matrix<T>) -> Result<(Matrix<T>, Matrix<T>)> {
        let mut pre = x.matmul_t(&self.w1)?;
        pre.add_row(&self.b1);
        let mut act = pre.clone();
        for r in 0..act.rows() {
            for (v, &a) in act.row_mut(r).iter_mut().zip(&self.slope) {
                *v = prelu(*v, a);
            }
        }
        Ok((pre, act))
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let (_, act) = self.hidden(x)?;
        let mut y = act.matmul_t(&self.w2)?;
        y.add_row(&self.b2);
        Ok(y)
    }

    pub fn forward_cached(&self, x: Matrix<T>) -> Result<(Matrix<T>, ProjectionCache<T>)> {
        let (pre, act) = self.hidden(&x)?;
        let mut y = act.matmul_t(&self.w2)?;
        y.add_row(&self.b2);
        Ok((y, ProjectionCache { input: x, pre, act }))
    }

    pub fn backward(
        &self,
        cache: &ProjectionCache<T>,
        dy: &Matrix<T>,
        want_input: bool,
    ) -> Result<ProjectionGrads<T>> {
        let w2 = dy.t_matmul(&cache.act)?;
        let b2 = dy.col_sums();
        let mut dh = dy.matmul(&self.w2)?;
        let mut slope = vec![T::zero(); self.slope.len()];
        for r in 0..dh.rows() {
            let pre = cache.pre.row(r);
            for (c, g) in dh.row_mut(r).iter_mut().enumerate() {
                if pre[c] > T::zero() {
                    continue;
                }
                slope[c] += *g * pre[c];
                *g *= self.slope[c];
            }
        }
        let w1 = dh.t_matmul(&cache.input)?;
        let b1 = dh.col_sums();
        let input = if want_input {
            Some(dh.matmul(&self.w1)?)
        } else {
            None
        };
        Ok(ProjectionGrads {
            w1,
            b1,
            slope,
            w2,
            b2,
            input,
        })
    }

    pub fn cast<U: Real>(&self) -> Projection<U> {
        Projection {
            w1: self.w1.cast(),
            b1: crate::numerics::cast_slice(&self.b1),
            slope: crate::numerics::cast_slice(&self.slope),
            w2: self.w2.cast(),
            b2: crate::numerics::cast_slice(&self.b2),
        }
    }
}

impl<T: Real> ProjectionGrads<T> {
    pub(crate) fn into_blocks(self) -> [Vec<T>; 5] {
        [self.w1.into_vec(), self.b1, self.slope, self.w2.into_vec(), self.b2]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_gives_bias_path() {
        let mut rng = SeededRng::new(1);
        let mut p = Projection::<f64>::init(&mut rng, 6, 4, 3);
        p.b1 = vec![0.5, -1.0, 0.0, 2.0];
        p.b2 = vec![0.1, 0.2, 0.3];
        let y = p.forward(&Matrix::zeros(1, 6)).unwrap();
        let act: Vec<f64> = p.b1.iter().map(|&b| if b > 0.0 { b } else { 0.25 * b }).collect();
        for o in 0..3 {
            let expect = p.b2[o] + (0..4).map(|h| p.w2.get(o, h) * act[h]).sum::<f64>();
            assert!((y.get(0, o) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn init_is_fan_in_scaled() {
        let mut rng = SeededRng::new(2);
        let p = Projection::<f32>::init(&mut rng, 100, 8, 4);
        let bound = 0.1f32;
        assert!(p.w1.as_slice().iter().all(|w| w.abs() <= bound));
        assert!(p.slope.iter().all(|&a| a == 0.25));
        assert!(p.b1.iter().chain(&p.b2).all(|&b| b == 0.0));
    }
}
