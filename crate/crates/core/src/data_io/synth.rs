use super::embeddings::{EmbeddingContainer, EmbeddingLayout};
use crate::error::{Error, Result};
use crate::heads::PatchEmbeddingRecord;
use crate::numerics::SeededRng;

/// Named visibility pattern assigned to synthetic samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OcclusionProfile {
    pub name: String,
    pub visible: Vec<bool>,
}

impl OcclusionProfile {
    pub fn frontal(n: usize) -> Self {
        OcclusionProfile {
            name: "frontal".into(),
            visible: vec![true; n],
        }
    }

    /// Side view: only the first three patches visible.
    pub fn profile(n: usize) -> Self {
        OcclusionProfile {
            name: "profile".into(),
            visible: (0..n).map(|i| i < 3).collect(),
        }
    }

    /// `frontal`, `profile`, or an explicit `0/1` string of length `n`.
    pub fn parse(s: &str, n: usize) -> Result<Self> {
        match s {
            "frontal" => Ok(Self::frontal(n)),
            "profile" => Ok(Self::profile(n)),
            bits if bits.len() == n && bits.bytes().all(|b| b == b'0' || b == b'1') => Ok(OcclusionProfile {
                name: bits.to_string(),
                visible: bits.bytes().map(|b| b == b'1').collect(),
            }),
            other => Err(Error::InvalidInput(format!(
                "occlusion profile {other:?}: expected frontal, profile, or a {n}-character 0/1 string"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub identities: usize,
    pub per_identity: usize,
    pub patch_dims: Vec<usize>,
    pub aux_dim: usize,
    /// Per-coordinate noise around each identity's per-patch mean.
    pub sigma: f64,
    /// Per-coordinate scale of the noise filling occluded patches; `None`
    /// matches the expected norm of a visible sample.
    pub garbage_sigma: Option<f64>,
    /// Assigned round-robin: sample `s` of an identity gets `profiles[s % len]`.
    pub profiles: Vec<OcclusionProfile>,
    /// Seeds the identity means.
    pub seed: u64,
    /// Seeds the per-sample noise; defaults to a value derived from `seed`.
    pub sample_seed: Option<u64>,
}

impl SynthSpec {
    pub fn new(identities: usize, per_identity: usize, sigma: f64, seed: u64) -> Self {
        let n = crate::heads::DEFAULT_PATCHES;
        SynthSpec {
            identities,
            per_identity,
            patch_dims: vec![crate::heads::DEFAULT_PATCH_DIM; n],
            aux_dim: 0,
            sigma,
            garbage_sigma: None,
            profiles: vec![OcclusionProfile::frontal(n), OcclusionProfile::profile(n)],
            seed,
            sample_seed: None,
        }
    }
}

/// Clustered per-patch embeddings: every identity has a unit-norm mean per
/// patch (and for the auxiliary vector); samples add isotropic Gaussian noise.
/// Occluded patches hold fresh noise unrelated to the identity.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<EmbeddingContainer> {
    if spec.identities < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 identities, got {}", spec.identities)));
    }
    if spec.per_identity == 0 {
        return Err(Error::InvalidInput("samples per identity must be >= 1".into()));
    }
    if !(spec.sigma > 0.0) || !spec.sigma.is_finite() {
        return Err(Error::InvalidInput(format!("sigma must be > 0, got {}", spec.sigma)));
    }
    if spec.profiles.is_empty() {
        return Err(Error::InvalidInput("empty occlusion profile set".into()));
    }
    let n = spec.patch_dims.len();
    if n == 0 || spec.patch_dims.contains(&0) {
        return Err(Error::InvalidInput(format!("bad patch dims {:?}", spec.patch_dims)));
    }
    if let Some(p) = spec.profiles.iter().find(|p| p.visible.len() != n) {
        return Err(Error::shape(format!("occlusion profile {}", p.name), n, p.visible.len()));
    }

    let mut mean_rng = SeededRng::new(spec.seed);
    let means: Vec<Vec<Vec<f64>>> = (0..spec.identities)
        .map(|_| spec.patch_dims.iter().map(|&d| mean_rng.unit_vector(d)).collect())
        .collect();
    let aux_means: Vec<Vec<f64>> = (0..spec.identities)
        .map(|_| if spec.aux_dim > 0 { mean_rng.unit_vector(spec.aux_dim) } else { Vec::new() })
        .collect();

    let sample_seed = spec
        .sample_seed
        .unwrap_or_else(|| spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1));
    let mut rng = SeededRng::new(sample_seed);
    let mut records = Vec::with_capacity(spec.identities * spec.per_identity);
    for (id, id_means) in means.iter().enumerate() {
        for s in 0..spec.per_identity {
            let profile = &spec.profiles[s % spec.profiles.len()];
            let patches = id_means
                .iter()
                .zip(&profile.visible)
                .map(|(mean, &vis)| {
                    let d = mean.len() as f64;
                    if vis {
                        mean.iter().map(|&m| (m + spec.sigma * rng.normal()) as f32).collect()
                    } else {
                        let g = spec
                            .garbage_sigma
                            .unwrap_or_else(|| ((1.0 + spec.sigma * spec.sigma * d) / d).sqrt());
                        (0..mean.len()).map(|_| (g * rng.normal()) as f32).collect()
                    }
                })
                .collect();
            let aux = (spec.aux_dim > 0).then(|| {
                aux_means[id]
                    .iter()
                    .map(|&m| (m + spec.sigma * rng.normal()) as f32)
                    .collect()
            });
            records.push(PatchEmbeddingRecord {
                subject: id as u32,
                media: (id * spec.per_identity + s) as u32,
                patches,
                visible: profile.visible.clone(),
                aux,
            });
        }
    }
    EmbeddingContainer::new(
        EmbeddingLayout {
            patch_dims: spec.patch_dims.clone(),
            aux_dim: spec.aux_dim,
        },
        records,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::dot;

    fn small(sigma: f64, seed: u64) -> SynthSpec {
        SynthSpec {
            patch_dims: vec![64; 8],
            ..SynthSpec::new(5, 6, sigma, seed)
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let a = generate_synthetic(&small(0.05, 3)).unwrap().to_bytes().unwrap();
        let b = generate_synthetic(&small(0.05, 3)).unwrap().to_bytes().unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&small(0.05, 4)).unwrap().to_bytes().unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn vanishing_noise_collapses_identity_samples() {
        let c = generate_synthetic(&small(1e-9, 1)).unwrap();
        let first = &c.records[0];
        for r in c.records.iter().filter(|r| r.subject == 0) {
            for i in 0..8 {
                if r.visible[i] && first.visible[i] {
                    for (a, b) in r.patches[i].iter().zip(&first.patches[i]) {
                        assert!((a - b).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn profiles_are_assigned_round_robin() {
        let c = generate_synthetic(&small(0.05, 1)).unwrap();
        assert!(c.records[0].all_visible());
        assert_eq!(c.records[1].visible, [true, true, true, false, false, false, false, false]);
        assert_eq!(c.records.len(), 30);
    }

    #[test]
    fn nearest_mean_on_first_patch_is_nearly_perfect() {
        let mut spec = small(0.05, 11);
        spec.identities = 20;
        spec.per_identity = 10;
        let c = generate_synthetic(&spec).unwrap();
        // class means estimated from the samples themselves
        let mut means = vec![vec![0.0f32; 64]; 20];
        for r in &c.records {
            for (m, x) in means[r.subject as usize].iter_mut().zip(&r.patches[0]) {
                *m += x / 10.0;
            }
        }
        let correct = c
            .records
            .iter()
            .filter(|r| {
                let best = (0..20)
                    .max_by(|&a, &b| {
                        let da = dot(&means[a], &r.patches[0]) / crate::numerics::norm(&means[a]);
                        let db = dot(&means[b], &r.patches[0]) / crate::numerics::norm(&means[b]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                best == r.subject as usize
            })
            .count();
        assert!(correct as f64 / c.records.len() as f64 >= 0.99);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = small(0.05, 1);
        s.profiles.clear();
        assert!(generate_synthetic(&s).is_err());
        assert!(generate_synthetic(&small(0.0, 1)).is_err());
        let mut s = small(0.05, 1);
        s.identities = 1;
        assert!(generate_synthetic(&s).is_err());
    }

    #[test]
    fn profile_parsing() {
        assert_eq!(OcclusionProfile::parse("profile", 4).unwrap().visible, [true, true, true, false]);
        assert_eq!(OcclusionProfile::parse("0110", 4).unwrap().visible, [false, true, true, false]);
        assert!(OcclusionProfile::parse("011", 4).is_err());
        assert!(OcclusionProfile::parse("side", 4).is_err());
    }
}
