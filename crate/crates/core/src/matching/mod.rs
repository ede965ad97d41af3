//! Template comparison and biometric evaluation.

mod bench;
mod dprfs;
mod gallery;
mod metrics;

pub use bench::{bench_compact, bench_dprfs, BenchConfig, BenchMode, BenchReport, HardwareInfo, Throughput};
pub use dprfs::{dprfs_score, DprfsGallery, DprfsScore, DprfsTemplate, ZERO_OVERLAP_SCORE};
pub use gallery::{identify, Gallery};
pub use metrics::{
    verify, verify_gallery, verify_pairs, EvalReport, IdentificationReport, RocPoint, TarAtFar, VerificationReport, FAR_TARGETS,
};

use crate::error::{Error, Result};
use crate::heads::CompactTemplate;
use crate::numerics::{dot, norm};

/// Cosine of the angle between two templates.
pub fn cosine_similarity(a: &CompactTemplate, b: &CompactTemplate) -> Result<f64> {
    cosine(a.values(), b.values())
}

pub(crate) fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("template", a.len(), b.len()));
    }
    let a: Vec<f64> = a.iter().map(|&x| f64::from(x)).collect();
    let b: Vec<f64> = b.iter().map(|&x| f64::from(x)).collect();
    let (na, nb) = (norm(&a), norm(&b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidInput("cosine similarity of a zero-norm template".into()));
    }
    Ok((dot(&a, &b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Element-wise mean of a set of templates. Raw values are pooled; a result
/// that cancels to zero is returned as is and reports `is_degenerate()`.
pub fn pool_image_set(templates: &[CompactTemplate]) -> Result<CompactTemplate> {
    let first = templates
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot pool an empty template set".into()))?;
    let d = first.dim();
    for (i, t) in templates.iter().enumerate() {
        if t.dim() != d {
            return Err(Error::shape(format!("pooled template {i}"), d, t.dim()));
        }
    }
    // each coordinate is summed in sorted order so the mean does not depend on
    // the order of the input list
    let n = templates.len() as f64;
    let mut column = Vec::with_capacity(templates.len());
    let acc = (0..d).map(|k| {
        column.clear();
        column.extend(templates.iter().map(|t| f64::from(t.values()[k])));
        column.sort_by(f64::total_cmp);
        column.iter().sum::<f64>() / n
    });
    Ok(CompactTemplate::new(acc.map(|a| a as f32).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(v: &[f32]) -> CompactTemplate {
        CompactTemplate::new(v.to_vec())
    }

    #[test]
    fn cosine_basics() {
        let a = t(&[0.3, -1.2, 2.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = t(&[0.6, -2.4, 4.0]);
        assert!((cosine_similarity(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&t(&[1.0, 0.0]), &t(&[0.0, 1.0])).unwrap(), 0.0);
        assert!(cosine_similarity(&a, &t(&[0.0; 3])).is_err());
        assert!(cosine_similarity(&a, &t(&[1.0])).is_err());
    }

    #[test]
    fn pooling() {
        let x = t(&[1.0, -2.0, 0.5]);
        assert_eq!(pool_image_set(&[x.clone(), x.clone(), x.clone()]).unwrap(), x);
        let neg = t(&[-1.0, 2.0, -0.5]);
        let z = pool_image_set(&[x.clone(), neg]).unwrap();
        assert!(z.is_degenerate());
        assert!(cosine_similarity(&z, &x).is_err());
        let e = pool_image_set(&[t(&[1.0, 0.0, 0.0]), t(&[0.0, 1.0, 0.0])]).unwrap();
        assert_eq!(e.values(), &[0.5, 0.5, 0.0]);
        assert!(pool_image_set(&[]).is_err());
        assert!(pool_image_set(&[x, t(&[1.0])]).is_err());
    }

    proptest! {
        #[test]
        fn pooling_commutes_with_permutation(
            rows in prop::collection::vec(prop::collection::vec(-10f32..10.0, 6), 1..12),
            seed in any::<u64>(),
        ) {
            let ts: Vec<CompactTemplate> = rows.into_iter().map(CompactTemplate::new).collect();
            let mut shuffled = ts.clone();
            crate::numerics::SeededRng::new(seed).shuffle(&mut shuffled);
            prop_assert_eq!(pool_image_set(&ts).unwrap(), pool_image_set(&shuffled).unwrap());
        }
    }
}
