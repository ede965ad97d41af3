use crate::error::{Error, Result};

/// Worst entry of one parameter block under central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl BlockCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares `analytic` against central differences of `loss` around
/// `params`, entry by entry.
///
/// Relative error is `|a - c| / max(|a|, |c|, 1e-8)`. `params` is restored
/// to its original values before returning.
pub fn finite_diff_check<F>(
    names: &[String],
    params: &mut [Vec<f64>],
    analytic: &[Vec<f64>],
    h: f64,
    mut loss: F,
) -> Result<Vec<BlockCheck>>
where
    F: FnMut(&[Vec<f64>]) -> f64,
{
    if names.len() != params.len() || analytic.len() != params.len() {
        return Err(Error::shape(
            "gradient check block count",
            params.len(),
            format!("{} analytic / {} names", analytic.len(), names.len()),
        ));
    }
    let mut out = Vec::with_capacity(params.len());
    for b in 0..params.len() {
        if analytic[b].len() != params[b].len() {
            return Err(Error::shape(
                format!("analytic gradient for {}", names[b]),
                params[b].len(),
                analytic[b].len(),
            ));
        }
        let mut worst = BlockCheck {
            name: names[b].clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for j in 0..params[b].len() {
            let orig = params[b][j];
            params[b][j] = orig + h;
            let plus = loss(params);
            params[b][j] = orig - h;
            let minus = loss(params);
            params[b][j] = orig;
            for (value, sign) in [(plus, "+"), (minus, "-")] {
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "loss after perturbing {}[{j}] by {sign}{h}",
                        names[b]
                    )));
                }
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[b][j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > worst.max_rel_err {
                worst = BlockCheck {
                    name: names[b].clone(),
                    max_rel_err: rel,
                    worst_index: j,
                    analytic: a,
                    numeric,
                };
            }
        }
        out.push(worst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_on_quadratic() {
        let mut p = vec![vec![3.0]];
        let r = finite_diff_check(&["w".into()], &mut p, &[vec![6.0]], 1e-4, |p| p[0][0] * p[0][0]).unwrap();
        assert!(r[0].max_rel_err < 1e-8, "{:?}", r[0]);
        assert!((r[0].numeric - 6.0).abs() < 1e-8);
        assert_eq!(p[0][0], 3.0);
    }

    #[test]
    fn flags_doubled_gradient() {
        let mut p = vec![vec![3.0, -1.0]];
        let r = finite_diff_check(&["w".into()], &mut p, &[vec![12.0, -4.0]], 1e-4, |p| {
            p[0].iter().map(|x| x * x).sum()
        })
        .unwrap();
        assert!((r[0].max_rel_err - 0.5).abs() < 1e-6);
        assert!(!r[0].passes(1e-3));
    }

    #[test]
    fn reports_non_finite_perturbation() {
        let mut p = vec![vec![0.0]];
        let err = finite_diff_check(&["w".into()], &mut p, &[vec![0.0]], 1e-4, |p| {
            if p[0][0] > 0.0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .unwrap_err();
        assert!(err.to_string().contains("w[0]"), "{err}");
    }
}
