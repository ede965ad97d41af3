use crate::error::{Error, Result};

/// Binary visibility from per-patch visible fractions: a patch is visible
/// iff its fraction is at least `eps` (inclusive).
pub fn summarize_occlusion(fractions: &[f64], eps: f64) -> Result<Vec<bool>> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::InvalidInput(format!("occlusion threshold {eps} not in (0, 1]")));
    }
    fractions
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            if (0.0..=1.0).contains(&f) {
                Ok(f >= eps)
            } else {
                Err(Error::InvalidInput(format!("visible fraction {f} of patch {i} not in [0, 1]")))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn threshold_is_inclusive() {
        assert_eq!(summarize_occlusion(&[0.69, 0.70, 1.0], 0.7).unwrap(), vec![false, true, true]);
        assert_eq!(summarize_occlusion(&[1.0], 1.0).unwrap(), vec![true]);
    }

    #[test]
    fn out_of_range_inputs_are_rejected() {
        assert!(summarize_occlusion(&[1.2], 0.7).is_err());
        assert!(summarize_occlusion(&[-0.1], 0.7).is_err());
        assert!(summarize_occlusion(&[0.5], 0.0).is_err());
        assert!(summarize_occlusion(&[f64::NAN], 0.7).is_err());
    }

    proptest! {
        #[test]
        fn raising_a_fraction_never_hides_a_patch(f in 0.0f64..=1.0, bump in 0.0f64..=1.0, eps in 0.01f64..=1.0) {
            let raised = (f + bump).min(1.0);
            let before = summarize_occlusion(&[f], eps).unwrap()[0];
            let after = summarize_occlusion(&[raised], eps).unwrap()[0];
            prop_assert!(!before || after);
        }
    }
}
