use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DataError, FeatureBundle, SampleInfo};
use crate::layout::{validate_layout, LayoutDecl};

/// Planted-structure classification data.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub parts: usize,
    /// Informative modalities per part.
    pub modalities: usize,
    /// Extra modalities whose features never influence the labels.
    pub noise_modalities: usize,
    pub block_dim: usize,
    pub classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Active parts per class.
    pub active_parts: usize,
    /// Standard deviation of the label noise added to the true scores.
    pub noise: f64,
    /// Number of distinct subjects; the first half perform the training
    /// samples and the second half the test samples.
    pub subjects: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            parts: 10,
            modalities: 2,
            noise_modalities: 0,
            block_dim: 8,
            classes: 5,
            n_train: 400,
            n_test: 400,
            active_parts: 3,
            noise: 0.1,
            subjects: 10,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidSpec(m.to_string()));
        if self.parts == 0 || self.modalities == 0 || self.block_dim == 0 {
            return bad("parts, modalities and block_dim must be positive");
        }
        if self.active_parts > self.parts {
            return bad("active_parts exceeds parts");
        }
        if self.classes < 2 {
            return bad("need at least two classes");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be a finite non-negative number");
        }
        if self.subjects < 2 {
            return bad("need at least two subjects");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub bundle: FeatureBundle,
    /// `d x C` generating weights.
    pub w_true: Array2<f64>,
    /// Sorted active part indices per class.
    pub active_parts: Vec<Vec<usize>>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Draws `X ~ N(0, I)`, a ground-truth `W` supported on `active_parts`
/// random parts per class (every informative block of an active part is
/// nonzero), and labels `argmax(x W + noise)`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let modality_names: Vec<String> = (0..spec.modalities)
        .map(|m| format!("m{m}"))
        .chain((0..spec.noise_modalities).map(|m| format!("noise{m}")))
        .collect();
    let layout = validate_layout(LayoutDecl::sequential((0..spec.parts).map(|j| {
        (
            format!("p{j}"),
            modality_names
                .iter()
                .map(|m| (m.clone(), spec.block_dim))
                .collect::<Vec<_>>(),
        )
    })))?;
    let d = layout.total_dim();

    let mut active_parts = Vec::with_capacity(spec.classes);
    let mut w_true = Array2::zeros((d, spec.classes));
    for c in 0..spec.classes {
        let mut parts = sample(&mut rng, spec.parts, spec.active_parts).into_vec();
        parts.sort_unstable();
        for &j in &parts {
            for blk in layout.block_ranges(j)?.iter().take(spec.modalities) {
                for k in blk.range() {
                    w_true[[k, c]] = StandardNormal.sample(&mut rng);
                }
            }
        }
        active_parts.push(parts);
    }

    let n = spec.n_train + spec.n_test;
    let x = Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut rng));
    let scores = x.dot(&w_true);
    let half = spec.subjects / 2;
    let samples = (0..n)
        .map(|i| {
            let label = (0..spec.classes)
                .map(|c| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    (c, scores[[i, c]] + spec.noise * e)
                })
                .fold((0, f64::NEG_INFINITY), |best, (c, s)| {
                    if s > best.1 {
                        (c, s)
                    } else {
                        best
                    }
                })
                .0;
            let subject = if i < spec.n_train {
                1 + (i % half) as u32
            } else {
                1 + half as u32 + ((i - spec.n_train) % (spec.subjects - half)) as u32
            };
            SampleInfo {
                id: format!("syn{i:05}"),
                label,
                subject,
            }
        })
        .collect();
    let class_names = (0..spec.classes).map(|c| format!("class{c}")).collect();
    let note = format!(
        "synthetic parts={} modalities={} noise_modalities={} block_dim={} classes={} K={} sigma={} seed={}",
        spec.parts,
        spec.modalities,
        spec.noise_modalities,
        spec.block_dim,
        spec.classes,
        spec.active_parts,
        spec.noise,
        spec.seed
    );
    let bundle = FeatureBundle::new(x, layout, samples, class_names, vec![note])?;
    Ok(SyntheticData {
        bundle,
        w_true,
        active_parts,
        train: (0..spec.n_train).collect(),
        test: (spec.n_train..n).collect(),
    })
}
