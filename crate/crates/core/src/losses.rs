//! Training objectives over a batch of templates.
//!
//! The angular-margin loss uses unit-norm class vectors `w_c`. For the target
//! class the logit is `‖t‖ · (λ cos θ + ψ(θ)) / (1 + λ)`, where
//! `ψ(θ) = (−1)^k cos(ωθ) − 2k` on `θ ∈ [kπ/ω, (k+1)π/ω]` is the monotonic
//! extension of `cos(ωθ)`; every other class gets `‖t‖ cos θ = t · w_c`.
//! `cos(ωθ)` is evaluated as the Chebyshev polynomial `T_ω(cos θ)`, so no
//! `acos` enters the gradient.

use crate::error::{Error, Result};
use crate::numerics::{dot, norm, Matrix, Real, SeededRng};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaSchedule {
    pub start: f64,
    pub min: f64,
    pub decay: f64,
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        LambdaSchedule {
            start: 1000.0,
            min: 5.0,
            decay: 0.12,
        }
    }
}

impl LambdaSchedule {
    pub fn constant(value: f64) -> Self {
        LambdaSchedule {
            start: value,
            min: value,
            decay: 0.0,
        }
    }

    /// `max(min, start / (1 + decay · iteration))`.
    pub fn at(&self, iteration: u64) -> f64 {
        (self.start / (1.0 + self.decay * iteration as f64)).max(self.min)
    }
}

/// Shape of the target-class angular function.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MarginForm {
    /// Piecewise monotonic `(−1)^k cos(ωθ) − 2k`.
    Monotonic,
    /// Plain `cos(ωθ)`, non-monotonic beyond `π/ω`.
    Literal,
}

/// Class projection matrix `W` (one unit-norm row per class) together with
/// the margin settings of the angular loss.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassProjection<T> {
    pub weights: Matrix<T>,
    pub margin: u32,
    pub schedule: LambdaSchedule,
    pub iteration: u64,
    pub form: MarginForm,
}

impl<T: Real> ClassProjection<T> {
    pub fn new(classes: usize, dim: usize, margin: u32, schedule: LambdaSchedule, rng: &mut SeededRng) -> Result<Self> {
        if margin == 0 {
            return Err(Error::InvalidInput("angular margin must be >= 1".into()));
        }
        let mut data = Vec::with_capacity(classes * dim);
        for _ in 0..classes {
            data.extend(rng.unit_vector(dim).into_iter().map(T::lit));
        }
        Ok(ClassProjection {
            weights: Matrix::from_vec(classes, dim, data)?,
            margin,
            schedule,
            iteration: 0,
            form: MarginForm::Monotonic,
        })
    }

    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn lambda(&self) -> f64 {
        self.schedule.at(self.iteration)
    }

    /// Moves the annealing schedule to `iteration` and returns the new λ.
    pub fn decay_lambda(&mut self, iteration: u64) -> f64 {
        self.iteration = iteration;
        self.lambda()
    }

    /// Rescales every row of `W` to unit length.
    pub fn renormalize(&mut self) {
        for r in 0..self.weights.rows() {
            let row = self.weights.row_mut(r);
            let n = norm(row);
            if n > T::zero() {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
    }

    /// Margin-free class scores `t · w_c` (`‖t‖ cos θ_c`).
    pub fn scores(&self, templates: &Matrix<T>) -> Result<Matrix<T>> {
        templates.matmul_t(&self.weights)
    }

    pub fn cast<U: Real>(&self) -> ClassProjection<U> {
        ClassProjection {
            weights: self.weights.cast(),
            margin: self.margin,
            schedule: self.schedule,
            iteration: self.iteration,
            form: self.form,
        }
    }
}

/// Unconstrained affine classifier for the plain-softmax ablation.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxClassifier<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> SoftmaxClassifier<T> {
    pub fn new(classes: usize, dim: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (dim.max(1) as f64).sqrt();
        let data = (0..classes * dim)
            .map(|_| T::lit(rng.uniform(-bound, bound)))
            .collect();
        SoftmaxClassifier {
            weights: Matrix::from_vec(classes, dim, data).expect("sized by construction"),
            bias: vec![T::zero(); classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn scores(&self, templates: &Matrix<T>) -> Result<Matrix<T>> {
        let mut z = templates.matmul_t(&self.weights)?;
        z.add_row(&self.bias);
        Ok(z)
    }

    pub fn cast<U: Real>(&self) -> SoftmaxClassifier<U> {
        SoftmaxClassifier {
            weights: self.weights.cast(),
            bias: crate::numerics::cast_slice(&self.bias),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    pub loss: T,
    pub d_templates: Matrix<T>,
    pub d_weights: Matrix<T>,
    /// Present for the affine softmax classifier only.
    pub d_bias: Option<Vec<T>>,
}

/// `(T_n(c), T_n'(c))` by the Chebyshev recurrences.
fn chebyshev<T: Real>(n: u32, c: T) -> (T, T) {
    let two = T::lit(2.0);
    let (mut t_prev, mut t_cur) = (T::one(), c);
    let (mut d_prev, mut d_cur) = (T::zero(), T::one());
    if n == 0 {
        return (T::one(), T::zero());
    }
    for _ in 1..n {
        let t_next = two * c * t_cur - t_prev;
        let d_next = two * t_cur + two * c * d_cur - d_prev;
        t_prev = t_cur;
        t_cur = t_next;
        d_prev = d_cur;
        d_cur = d_next;
    }
    (t_cur, d_cur)
}

/// `(ψ(c), dψ/dc)` for `c = cos θ`.
pub fn margin_fn<T: Real>(margin: u32, form: MarginForm, c: T) -> (T, T) {
    let (tm, dtm) = chebyshev(margin, c);
    match form {
        MarginForm::Literal => (tm, dtm),
        MarginForm::Monotonic => {
            let clamped = c.max(-T::one()).min(T::one());
            let theta = clamped.to_f64().unwrap_or(1.0).acos();
            let k = ((theta * f64::from(margin) / std::f64::consts::PI).floor() as u32).min(margin - 1);
            let sign = if k.is_multiple_of(2) { T::one() } else { -T::one() };
            (sign * tm - T::lit(2.0 * f64::from(k)), sign * dtm)
        }
    }
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::shape("label count", rows, labels.len()));
    }
    if let Some((j, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(Error::InvalidInput(format!("label {y} of sample {j} >= {classes} classes")));
    }
    Ok(())
}

/// Mean cross-entropy of `logits` and `dL/dlogits`.
fn cross_entropy<T: Real>(logits: &Matrix<T>, labels: &[usize]) -> (T, Matrix<T>) {
    let k = T::lit(logits.rows() as f64);
    let mut loss = T::zero();
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    for (j, &y) in labels.iter().enumerate() {
        let row = logits.row(j);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[y];
        let g = grad.row_mut(j);
        for (c, &z) in row.iter().enumerate() {
            g[c] = (z - lse).exp() / k;
        }
        g[y] -= T::one() / k;
    }
    (loss / k, grad)
}

/// Target-angle terms per sample: `(‖t‖, cos θ, g(c), g'(c))`.
struct TargetTerms<T> {
    norm: T,
    cos: T,
    g: T,
    dg: T,
}

fn target_terms<T: Real>(t: &[T], w: &[T], proj: &ClassProjection<T>) -> TargetTerms<T> {
    let n = norm(t);
    let c = dot(t, w) / n;
    let (psi, dpsi) = margin_fn(proj.margin, proj.form, c);
    let lambda = T::lit(proj.lambda());
    let denom = T::one() + lambda;
    TargetTerms {
        norm: n,
        cos: c,
        g: (lambda * c + psi) / denom,
        dg: (lambda + dpsi) / denom,
    }
}

/// Logits of the angular loss; the target-class column carries the margin.
pub fn angular_logits<T: Real>(templates: &Matrix<T>, labels: &[usize], proj: &ClassProjection<T>) -> Result<Matrix<T>> {
    check_labels(labels, templates.rows(), proj.classes())?;
    if templates.cols() != proj.weights.cols() {
        return Err(Error::shape("template dim", proj.weights.cols(), templates.cols()));
    }
    let mut logits = templates.matmul_t(&proj.weights)?;
    for (j, &y) in labels.iter().enumerate() {
        let t = templates.row(j);
        if norm(t) == T::zero() {
            return Err(Error::InvalidInput(format!("template {j} has zero norm")));
        }
        let terms = target_terms(t, proj.weights.row(y), proj);
        logits.set(j, y, terms.norm * terms.g);
    }
    Ok(logits)
}

/// Angular-margin softmax loss with exact gradients for templates and `W`.
pub fn asoftmax_loss<T: Real>(templates: &Matrix<T>, labels: &[usize], proj: &ClassProjection<T>) -> Result<LossOutput<T>> {
    let logits = angular_logits(templates, labels, proj)?;
    let (loss, dz) = cross_entropy(&logits, labels);

    // non-target columns: z = t·w
    let mut d_templates = dz.matmul(&proj.weights)?;
    let mut d_weights = dz.t_matmul(templates)?;
    for (j, &y) in labels.iter().enumerate() {
        let t = templates.row(j);
        let w = proj.weights.row(y);
        let TargetTerms { norm, cos, g, dg } = target_terms(t, w, proj);
        let gz = dz.get(j, y);
        // replace the plain t·w contribution with the margin logit's
        let dt = d_templates.row_mut(j);
        for d in 0..t.len() {
            let unit = t[d] / norm;
            dt[d] += gz * (g * unit + dg * (w[d] - cos * unit) - w[d]);
        }
        let dw = d_weights.row_mut(y);
        for d in 0..t.len() {
            dw[d] += gz * (dg * t[d] - t[d]);
        }
    }
    Ok(LossOutput {
        loss,
        d_templates,
        d_weights,
        d_bias: None,
    })
}

/// Plain cross-entropy over affine logits `W t + b`.
pub fn softmax_loss<T: Real>(templates: &Matrix<T>, labels: &[usize], clf: &SoftmaxClassifier<T>) -> Result<LossOutput<T>> {
    check_labels(labels, templates.rows(), clf.classes())?;
    let logits = clf.scores(templates)?;
    let (loss, dz) = cross_entropy(&logits, labels);
    Ok(LossOutput {
        loss,
        d_templates: dz.matmul(&clf.weights)?,
        d_weights: dz.t_matmul(templates)?,
        d_bias: Some(dz.col_sums()),
    })
}

/// Index of the largest entry per row; ties resolve to the lower index.
pub fn argmax_rows<T: Real>(scores: &Matrix<T>) -> Vec<usize> {
    scores
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_check, AdamConfig, AdamState};

    fn random_matrix(rng: &mut SeededRng, r: usize, c: usize) -> Matrix<f64> {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
    }

    fn projection(rng: &mut SeededRng, classes: usize, dim: usize, margin: u32, lambda: f64) -> ClassProjection<f64> {
        ClassProjection::new(classes, dim, margin, LambdaSchedule::constant(lambda), rng).unwrap()
    }

    #[test]
    fn chebyshev_matches_cos_multiple_angle() {
        for m in 1..=5u32 {
            for i in 0..50 {
                let theta = i as f64 * std::f64::consts::PI / 49.0;
                let (t, dt) = chebyshev(m, theta.cos());
                assert!((t - (f64::from(m) * theta).cos()).abs() < 1e-10);
                // d cos(mθ)/d cosθ = m sin(mθ)/sin θ
                if theta.sin().abs() > 1e-3 {
                    let expect = f64::from(m) * (f64::from(m) * theta).sin() / theta.sin();
                    assert!((dt - expect).abs() < 1e-8, "m={m} θ={theta}");
                }
            }
        }
    }

    #[test]
    fn monotonic_margin_is_decreasing_in_theta() {
        let mut last = f64::INFINITY;
        for i in 0..=400 {
            let theta = i as f64 * std::f64::consts::PI / 400.0;
            let (psi, _) = margin_fn(4, MarginForm::Monotonic, theta.cos());
            assert!(psi <= last + 1e-12, "θ={theta}");
            last = psi;
        }
        assert!((margin_fn(4, MarginForm::Monotonic, 1.0f64).0 - 1.0).abs() < 1e-12);
        assert!((margin_fn(4, MarginForm::Monotonic, -1.0f64).0 + 7.0).abs() < 1e-12);
    }

    #[test]
    fn margin_one_without_annealing_is_normalized_softmax() {
        let mut rng = SeededRng::new(1);
        let t = random_matrix(&mut rng, 8, 5);
        let labels: Vec<usize> = (0..8).map(|j| j % 3).collect();
        let proj = projection(&mut rng, 3, 5, 1, 0.0);
        let a = asoftmax_loss(&t, &labels, &proj).unwrap();
        let clf = SoftmaxClassifier {
            weights: proj.weights.clone(),
            bias: vec![0.0; 3],
        };
        let s = softmax_loss(&t, &labels, &clf).unwrap();
        assert!((a.loss - s.loss).abs() < 1e-12);
        for (x, y) in a.d_templates.as_slice().iter().zip(s.d_templates.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn aligned_sample_beats_misaligned() {
        let mut rng = SeededRng::new(2);
        let proj = projection(&mut rng, 4, 6, 4, 0.0);
        let w0 = proj.weights.row(0).to_vec();
        let scale = 3.0;
        let aligned = Matrix::from_vec(1, 6, w0.iter().map(|x| x * scale).collect()).unwrap();
        let logits = angular_logits(&aligned, &[0], &proj).unwrap();
        assert!((logits.get(0, 0) - scale).abs() < 1e-12);
        let base = asoftmax_loss(&aligned, &[0], &proj).unwrap().loss;
        let expected = -(scale.exp() / (scale.exp() + (1..4).map(|c| logits.get(0, c).exp()).sum::<f64>())).ln();
        assert!((base - expected).abs() < 1e-12);
        for _ in 0..20 {
            let mut v = random_matrix(&mut rng, 1, 6);
            let n = norm(v.row(0));
            v.as_mut_slice().iter_mut().for_each(|x| *x *= scale / n);
            assert!(asoftmax_loss(&v, &[0], &proj).unwrap().loss > base);
        }
    }

    #[test]
    fn decision_is_magnitude_invariant() {
        let mut rng = SeededRng::new(3);
        let proj = projection(&mut rng, 5, 8, 4, 5.0);
        let t = random_matrix(&mut rng, 20, 8);
        let labels: Vec<usize> = (0..20).map(|j| j % 5).collect();
        let base = argmax_rows(&angular_logits(&t, &labels, &proj).unwrap());
        for alpha in [0.01, 0.5, 7.0, 300.0] {
            let mut s = t.clone();
            s.as_mut_slice().iter_mut().for_each(|x| *x *= alpha);
            assert_eq!(argmax_rows(&angular_logits(&s, &labels, &proj).unwrap()), base);
            assert_eq!(argmax_rows(&proj.scores(&s).unwrap()), argmax_rows(&proj.scores(&t).unwrap()));
        }
    }

    fn check_asoftmax(margin: u32, lambda: f64, form: MarginForm) {
        let mut rng = SeededRng::new(4);
        let t = random_matrix(&mut rng, 6, 5);
        let labels = vec![0, 1, 2, 3, 0, 2];
        let mut proj = projection(&mut rng, 4, 5, margin, lambda);
        proj.form = form;
        let out = asoftmax_loss(&t, &labels, &proj).unwrap();
        let mut params = vec![t.as_slice().to_vec(), proj.weights.as_slice().to_vec()];
        let names = vec!["templates".to_string(), "weights".to_string()];
        let report = finite_diff_check(
            &names,
            &mut params,
            &[out.d_templates.into_vec(), out.d_weights.into_vec()],
            1e-4,
            |p| {
                let t = Matrix::from_vec(6, 5, p[0].clone()).unwrap();
                let mut pr = proj.clone();
                pr.weights = Matrix::from_vec(4, 5, p[1].clone()).unwrap();
                asoftmax_loss(&t, &labels, &pr).unwrap().loss
            },
        )
        .unwrap();
        for b in report {
            assert!(b.passes(1e-3), "ω={margin} λ={lambda} {form:?}: {b:?}");
        }
    }

    #[test]
    fn asoftmax_gradients_match_finite_differences() {
        for margin in [1, 2, 4] {
            for lambda in [0.0, 5.0, 1000.0] {
                check_asoftmax(margin, lambda, MarginForm::Monotonic);
            }
        }
        check_asoftmax(4, 0.0, MarginForm::Literal);
    }

    #[test]
    fn softmax_gradients_match_finite_differences() {
        let mut rng = SeededRng::new(5);
        let t = random_matrix(&mut rng, 6, 5);
        let labels = vec![0, 1, 2, 0, 1, 2];
        let clf = SoftmaxClassifier::<f64>::new(3, 5, &mut rng);
        let out = softmax_loss(&t, &labels, &clf).unwrap();
        let mut params = vec![t.as_slice().to_vec(), clf.weights.as_slice().to_vec(), clf.bias.clone()];
        let names = vec!["t".into(), "w".into(), "b".into()];
        let report = finite_diff_check(
            &names,
            &mut params,
            &[out.d_templates.into_vec(), out.d_weights.into_vec(), out.d_bias.unwrap()],
            1e-4,
            |p| {
                let t = Matrix::from_vec(6, 5, p[0].clone()).unwrap();
                let c = SoftmaxClassifier {
                    weights: Matrix::from_vec(3, 5, p[1].clone()).unwrap(),
                    bias: p[2].clone(),
                };
                softmax_loss(&t, &labels, &c).unwrap().loss
            },
        )
        .unwrap();
        assert!(report.iter().all(|b| b.passes(1e-3)), "{report:?}");
    }

    #[test]
    fn softmax_uniform_and_confident_limits() {
        let t = Matrix::<f64>::zeros(3, 4);
        let clf = SoftmaxClassifier {
            weights: Matrix::zeros(5, 4),
            bias: vec![0.0; 5],
        };
        let out = softmax_loss(&t, &[0, 3, 4], &clf).unwrap();
        assert!((out.loss - 5f64.ln()).abs() < 1e-12);

        let mut confident = clf.clone();
        confident.bias[2] = 1e3;
        assert!(softmax_loss(&t, &[2, 2, 2], &confident).unwrap().loss < 1e-12);
    }

    #[test]
    fn bad_labels_and_zero_templates_are_rejected() {
        let mut rng = SeededRng::new(6);
        let proj = projection(&mut rng, 3, 4, 4, 0.0);
        let t = random_matrix(&mut rng, 2, 4);
        assert!(asoftmax_loss(&t, &[0, 3], &proj).is_err());
        assert!(asoftmax_loss(&Matrix::zeros(1, 4), &[0], &proj).is_err());
        let clf = SoftmaxClassifier::<f64>::new(3, 4, &mut rng);
        assert!(softmax_loss(&t, &[0, 9], &clf).is_err());
    }

    #[test]
    fn lambda_schedule() {
        let s = LambdaSchedule {
            start: 1000.0,
            min: 5.0,
            decay: 1e6,
        };
        assert_eq!(s.at(0), 1000.0);
        assert_eq!(s.at(10), 5.0);
        let flat = LambdaSchedule { decay: 0.0, ..s };
        assert_eq!(flat.at(123_456), 1000.0);
        let mut rng = SeededRng::new(0);
        let mut proj = ClassProjection::<f32>::new(2, 3, 4, LambdaSchedule::default(), &mut rng).unwrap();
        assert_eq!(proj.decay_lambda(0), 1000.0);
        assert!((proj.decay_lambda(100) - 1000.0 / 13.0).abs() < 1e-9);
    }

    #[test]
    fn loss_decreases_on_separable_problem_with_renormalized_rows() {
        let mut rng = SeededRng::new(7);
        let dim = 8;
        let centers: Vec<Vec<f64>> = (0..4).map(|_| rng.unit_vector(dim)).collect();
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for j in 0..32 {
            let c = j % 4;
            rows.push(centers[c].iter().map(|x| 4.0 * x + 0.1 * rng.normal()).collect::<Vec<_>>());
            labels.push(c);
        }
        let t = Matrix::from_rows(&rows).unwrap();
        let mut proj = ClassProjection::<f64>::new(4, dim, 4, LambdaSchedule::default(), &mut rng).unwrap();
        let mut adam = AdamState::new(AdamConfig { lr: 0.01, ..Default::default() });
        let first = asoftmax_loss(&t, &labels, &proj).unwrap().loss;
        let mut last = first;
        for it in 0..100 {
            let out = asoftmax_loss(&t, &labels, &proj).unwrap();
            last = out.loss;
            adam.step(&["w".into()], &mut [proj.weights.as_mut_slice()], &[out.d_weights.into_vec()])
                .unwrap();
            proj.renormalize();
            proj.decay_lambda(it + 1);
            for r in 0..4 {
                assert!((norm(proj.weights.row(r)) - 1.0).abs() < 1e-6);
            }
        }
        assert!(last < first, "{last} !< {first}");
    }
}
