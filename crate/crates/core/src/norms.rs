//! Mixed and hierarchical norms over partitioned vectors.
//!
//! All supported norms are evaluated through one nested form
//!
//! ```text
//! ( sum_i ( sum_j ( sum_k |z_ijk|^r )^(q/r) )^(p/q) )^(1/p)
//! ```
//!
//! where `i` runs over the outer sets, `j` over the inner subsets of a set and
//! `k` over the entries of a subset. Two-level norms use one inner subset per
//! set (with `r = q`), plain norms a single set.
//!
//! Smoothing: every fractional power `s^a` with `a < 1` taken of a sum is
//! replaced by `(s + eps)^a`. Integer and larger powers are smooth already and
//! are left alone. With `eps = 0` the exact norm is recovered.

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::layout::FeatureLayout;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NormError {
    #[error("partition does not cover the vector disjointly: {0}")]
    PartitionMismatch(String),
    #[error("inner subset {0} is not contained in a single outer set")]
    NonRefiningPartition(usize),
    #[error("gradient requires a strictly positive smoothing epsilon")]
    ZeroEpsilon,
    #[error("smoothing epsilon {0} outside (0, 1e-4]")]
    InvalidEpsilon(f64),
    #[error("norm exponent {0} is below 1")]
    InvalidExponent(f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// Additive smoothing under fractional powers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingConfig {
    epsilon: f64,
}

impl SmoothingConfig {
    pub const DEFAULT_EPSILON: f64 = 1e-8;
    pub const MAX_EPSILON: f64 = 1e-4;

    pub fn new(epsilon: f64) -> Result<Self, NormError> {
        if !(epsilon > 0.0 && epsilon <= Self::MAX_EPSILON) {
            return Err(NormError::InvalidEpsilon(epsilon));
        }
        Ok(Self { epsilon })
    }

    /// No smoothing. Only valid for evaluating norm values.
    pub fn exact() -> Self {
        Self { epsilon: 0.0 }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        Self {
            epsilon: Self::DEFAULT_EPSILON,
        }
    }
}

/// Which norm to evaluate over a vector.
#[derive(Debug, Clone, PartialEq)]
pub enum NormSpec {
    /// `||z||_p`. `p = 1` is evaluated as the sum of singleton L2 norms so
    /// that it smooths the same way as the group norms.
    Plain { p: f64 },
    /// `||z||_{q,p|partition}`.
    TwoLevel {
        partition: Vec<Vec<usize>>,
        q: f64,
        p: f64,
    },
    /// `||z||_{r,q,p|inner,outer}`; `inner` must refine `outer`.
    ThreeLevel {
        outer: Vec<Vec<usize>>,
        inner: Vec<Vec<usize>>,
        r: f64,
        q: f64,
        p: f64,
    },
}

/// A norm with its index structure checked against a fixed dimension.
#[derive(Debug, Clone)]
pub struct CompiledNorm {
    dim: usize,
    /// outer set -> inner subset -> indices
    groups: Vec<Vec<Vec<usize>>>,
    r: f64,
    q: f64,
    p: f64,
}

fn check_exponent(e: f64) -> Result<(), NormError> {
    if e >= 1.0 && e.is_finite() {
        Ok(())
    } else {
        Err(NormError::InvalidExponent(e))
    }
}

fn check_cover(sets: &[Vec<usize>], dim: usize) -> Result<Vec<usize>, NormError> {
    let mut owner = vec![usize::MAX; dim];
    for (s, set) in sets.iter().enumerate() {
        for &k in set {
            if k >= dim {
                return Err(NormError::PartitionMismatch(format!(
                    "index {k} outside vector of length {dim}"
                )));
            }
            if owner[k] != usize::MAX {
                return Err(NormError::PartitionMismatch(format!(
                    "index {k} in sets {} and {s}",
                    owner[k]
                )));
            }
            owner[k] = s;
        }
    }
    if let Some(k) = owner.iter().position(|&o| o == usize::MAX) {
        return Err(NormError::PartitionMismatch(format!(
            "index {k} not covered"
        )));
    }
    Ok(owner)
}

impl CompiledNorm {
    pub fn new(spec: &NormSpec, dim: usize) -> Result<Self, NormError> {
        match spec {
            NormSpec::Plain { p } => {
                check_exponent(*p)?;
                if *p == 1.0 {
                    Ok(Self {
                        dim,
                        groups: (0..dim).map(|k| vec![vec![k]]).collect(),
                        r: 2.0,
                        q: 2.0,
                        p: 1.0,
                    })
                } else {
                    Ok(Self {
                        dim,
                        groups: vec![vec![(0..dim).collect()]],
                        r: *p,
                        q: *p,
                        p: *p,
                    })
                }
            }
            NormSpec::TwoLevel { partition, q, p } => {
                check_exponent(*q)?;
                check_exponent(*p)?;
                check_cover(partition, dim)?;
                Ok(Self {
                    dim,
                    groups: partition.iter().map(|s| vec![s.clone()]).collect(),
                    r: *q,
                    q: *q,
                    p: *p,
                })
            }
            NormSpec::ThreeLevel {
                outer,
                inner,
                r,
                q,
                p,
            } => {
                for e in [r, q, p] {
                    check_exponent(*e)?;
                }
                let owner = check_cover(outer, dim)?;
                check_cover(inner, dim)?;
                let mut groups: Vec<Vec<Vec<usize>>> = vec![Vec::new(); outer.len()];
                for (s, subset) in inner.iter().enumerate() {
                    let Some(&first) = subset.first() else {
                        continue;
                    };
                    let o = owner[first];
                    if subset.iter().any(|&k| owner[k] != o) {
                        return Err(NormError::NonRefiningPartition(s));
                    }
                    groups[o].push(subset.clone());
                }
                Ok(Self {
                    dim,
                    groups,
                    r: *r,
                    q: *q,
                    p: *p,
                })
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check_len(&self, z: &[f64]) -> Result<(), NormError> {
        if z.len() != self.dim {
            return Err(NormError::PartitionMismatch(format!(
                "vector length {} but partition covers {}",
                z.len(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn value(&self, z: &[f64], smoothing: SmoothingConfig) -> Result<f64, NormError> {
        self.check_len(z)?;
        let eps = smoothing.epsilon();
        let (r, q, p) = (self.r, self.q, self.p);
        let total: f64 = self
            .groups
            .iter()
            .map(|set| {
                let inner: f64 = set
                    .iter()
                    .map(|subset| {
                        let s: f64 = subset.iter().map(|&k| abs_pow(z[k], r)).sum();
                        spow(s, q / r, eps)
                    })
                    .sum();
                spow(inner, p / q, eps)
            })
            .sum();
        Ok(spow(total, 1.0 / p, eps))
    }

    /// Value plus `scale * gradient` accumulated into `grad`.
    pub fn accumulate(
        &self,
        z: &[f64],
        smoothing: SmoothingConfig,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64, NormError> {
        self.check_len(z)?;
        if grad.len() != self.dim {
            return Err(NormError::ShapeMismatch(format!(
                "gradient buffer length {} != {}",
                grad.len(),
                self.dim
            )));
        }
        let eps = smoothing.epsilon();
        if eps <= 0.0 {
            return Err(NormError::ZeroEpsilon);
        }
        let (r, q, p) = (self.r, self.q, self.p);

        // forward pass, keeping the per-subset and per-set sums
        let mut subset_sums: Vec<Vec<f64>> = Vec::with_capacity(self.groups.len());
        let mut set_sums = Vec::with_capacity(self.groups.len());
        let mut total = 0.0;
        for set in &self.groups {
            let sums: Vec<f64> = set
                .iter()
                .map(|subset| subset.iter().map(|&k| abs_pow(z[k], r)).sum())
                .collect();
            let inner: f64 = sums.iter().map(|&s| spow(s, q / r, eps)).sum();
            total += spow(inner, p / q, eps);
            set_sums.push(inner);
            subset_sums.push(sums);
        }
        let value = spow(total, 1.0 / p, eps);

        let d_total = scale * dspow(total, 1.0 / p, eps);
        for ((set, sums), &inner) in self.groups.iter().zip(&subset_sums).zip(&set_sums) {
            let d_set = d_total * dspow(inner, p / q, eps);
            for (subset, &s) in set.iter().zip(sums) {
                let d_subset = d_set * dspow(s, q / r, eps);
                for &k in subset {
                    grad[k] += d_subset * dabs_pow(z[k], r);
                }
            }
        }
        Ok(value)
    }
}

#[inline]
fn abs_pow(x: f64, e: f64) -> f64 {
    if e == 2.0 {
        x * x
    } else if e == 4.0 {
        let s = x * x;
        s * s
    } else if e == 1.0 {
        x.abs()
    } else {
        x.abs().powf(e)
    }
}

/// d/dx |x|^e; the subgradient 0 is used at x = 0 when e = 1.
#[inline]
fn dabs_pow(x: f64, e: f64) -> f64 {
    if e == 2.0 {
        2.0 * x
    } else if e == 4.0 {
        4.0 * x * x * x
    } else if e == 1.0 {
        if x == 0.0 {
            0.0
        } else {
            x.signum()
        }
    } else {
        e * x.abs().powf(e - 1.0) * x.signum()
    }
}

/// Smoothed power of a non-negative sum.
#[inline]
fn spow(s: f64, a: f64, eps: f64) -> f64 {
    if a == 1.0 {
        s
    } else if a < 1.0 {
        if a == 0.5 {
            (s + eps).sqrt()
        } else {
            (s + eps).powf(a)
        }
    } else {
        s.powf(a)
    }
}

#[inline]
fn dspow(s: f64, a: f64, eps: f64) -> f64 {
    if a == 1.0 {
        1.0
    } else if a < 1.0 {
        if a == 0.5 {
            0.5 / (s + eps).sqrt()
        } else {
            a * (s + eps).powf(a - 1.0)
        }
    } else {
        a * s.powf(a - 1.0)
    }
}

/// `||z||_{q,p|partition}`.
pub fn norm_lq_lp(
    z: &[f64],
    partition: &[Vec<usize>],
    q: f64,
    p: f64,
    smoothing: SmoothingConfig,
) -> Result<f64, NormError> {
    let spec = NormSpec::TwoLevel {
        partition: partition.to_vec(),
        q,
        p,
    };
    CompiledNorm::new(&spec, z.len())?.value(z, smoothing)
}

/// `||z||_{r,q,p|inner,outer}`.
pub fn norm_lr_lq_lp(
    z: &[f64],
    outer: &[Vec<usize>],
    inner: &[Vec<usize>],
    r: f64,
    q: f64,
    p: f64,
    smoothing: SmoothingConfig,
) -> Result<f64, NormError> {
    let spec = NormSpec::ThreeLevel {
        outer: outer.to_vec(),
        inner: inner.to_vec(),
        r,
        q,
        p,
    };
    CompiledNorm::new(&spec, z.len())?.value(z, smoothing)
}

pub fn norm_value(
    z: &[f64],
    spec: &NormSpec,
    smoothing: SmoothingConfig,
) -> Result<f64, NormError> {
    CompiledNorm::new(spec, z.len())?.value(z, smoothing)
}

/// Exact gradient of the smoothed norm. Requires `eps > 0`.
pub fn norm_gradient(
    z: &[f64],
    spec: &NormSpec,
    smoothing: SmoothingConfig,
) -> Result<Vec<f64>, NormError> {
    let norm = CompiledNorm::new(spec, z.len())?;
    let mut grad = vec![0.0; z.len()];
    norm.accumulate(z, smoothing, 1.0, &mut grad)?;
    Ok(grad)
}

/// `C x P` table of unsmoothed part magnitudes
/// `(sum_m ||w_c^{j,m}||_4^2)^(1/2)` for a `d x C` weight matrix.
pub fn group_magnitudes(
    w: ArrayView2<'_, f64>,
    layout: &FeatureLayout,
) -> Result<Array2<f64>, NormError> {
    if w.nrows() != layout.total_dim() {
        return Err(NormError::ShapeMismatch(format!(
            "weights have {} rows, layout has {} features",
            w.nrows(),
            layout.total_dim()
        )));
    }
    let classes = w.ncols();
    let mut out = Array2::zeros((classes, layout.num_parts()));
    for c in 0..classes {
        let col = w.column(c);
        for (j, part) in layout.parts().iter().enumerate() {
            let s: f64 = part
                .blocks
                .iter()
                .map(|b| {
                    (b.offset..b.offset + b.len)
                        .map(|k| abs_pow(col[k], 4.0))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum();
            out[[c, j]] = s.sqrt();
        }
    }
    Ok(out)
}
