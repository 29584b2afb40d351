//! Skeleton sequences to per-joint feature blocks: body-frame normalization
//! followed by a short-time Fourier temporal pyramid on every trajectory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::dataio::{DataError, FeatureBundle, SampleInfo};
use crate::layout::{validate_layout, FeatureLayout, LayoutDecl, LayoutError};

pub const NUM_JOINTS: usize = 20;

/// Joint order of the 20-joint Kinect skeleton; `y` is the vertical axis.
pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "hip_center",
    "spine",
    "shoulder_center",
    "head",
    "shoulder_left",
    "elbow_left",
    "wrist_left",
    "hand_left",
    "shoulder_right",
    "elbow_right",
    "wrist_right",
    "hand_right",
    "hip_left",
    "knee_left",
    "ankle_left",
    "foot_left",
    "hip_right",
    "knee_right",
    "ankle_right",
    "foot_right",
];

pub const HIP_CENTER: usize = 0;
pub const SPINE: usize = 1;
pub const HIP_LEFT: usize = 12;
pub const HIP_RIGHT: usize = 16;

/// Modality id of every skeleton-derived block.
pub const SKELETON_MODALITY: &str = "skeleton";
/// Part name of the body location/direction block.
pub const AUX_PART: &str = "body";
/// Trajectories in the auxiliary part: centroid x, y, z and facing angle.
pub const AUX_TRAJECTORIES: usize = 4;

/// Reference distances below this fraction of the body extent are degenerate.
const DEGENERACY_RATIO: f64 = 1e-6;

pub type Frame = [[f64; 3]; NUM_JOINTS];

#[derive(Debug, Error)]
pub enum SkeletonError {
    #[error("sequence '{id}' has {frames} frame(s); at least 2 are required")]
    TooFewFrames { id: String, frames: usize },
    #[error("sequence '{0}' contains a non-finite coordinate")]
    NonFinite(String),
    #[error("degenerate skeleton in '{id}': {reason}")]
    DegenerateSkeleton { id: String, reason: String },
    #[error("inconsistent sequences: {0}")]
    InconsistentSequences(String),
    #[error("invalid pyramid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub id: String,
    pub label: String,
    pub subject: u32,
    pub frames: Vec<Frame>,
}

impl SkeletonSequence {
    pub fn new(
        id: impl Into<String>,
        label: impl Into<String>,
        subject: u32,
        frames: Vec<Frame>,
    ) -> Result<Self, SkeletonError> {
        let seq = Self {
            id: id.into(),
            label: label.into(),
            subject,
            frames,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<(), SkeletonError> {
        if self.frames.len() < 2 {
            return Err(SkeletonError::TooFewFrames {
                id: self.id.clone(),
                frames: self.frames.len(),
            });
        }
        if self
            .frames
            .iter()
            .flatten()
            .flatten()
            .any(|v| !v.is_finite())
        {
            return Err(SkeletonError::NonFinite(self.id.clone()));
        }
        Ok(())
    }
}

/// Body-frame joint trajectories plus the removed location/direction signal.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedSkeleton {
    /// Per frame, joints relative to the hip center, rotated so the hips lie
    /// along `x` and divided by the mean hip-to-spine length.
    pub joints: Vec<Frame>,
    /// Per frame: raw joint centroid (x, y, z) and the unwrapped facing angle
    /// in radians.
    pub aux: Vec<[f64; AUX_TRAJECTORIES]>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Removes global position, horizontal heading and body size.
///
/// Origin is the hip center of each frame. Scale is the hip-to-spine distance
/// averaged over frames. Each frame is rotated about the vertical axis so that
/// the left-to-right hip vector points along `+x`.
pub fn normalize_skeleton(seq: &SkeletonSequence) -> Result<NormalizedSkeleton, SkeletonError> {
    seq.validate()?;
    let degenerate = |reason: String| SkeletonError::DegenerateSkeleton {
        id: seq.id.clone(),
        reason,
    };
    let t = seq.frames.len() as f64;
    let extent = seq
        .frames
        .iter()
        .map(|f| {
            f.iter()
                .map(|p| norm(sub(*p, f[HIP_CENTER])))
                .fold(0.0, f64::max)
        })
        .sum::<f64>()
        / t;
    let scale = seq
        .frames
        .iter()
        .map(|f| norm(sub(f[SPINE], f[HIP_CENTER])))
        .sum::<f64>()
        / t;
    if extent.is_nan() || extent <= 0.0 || scale < DEGENERACY_RATIO * extent {
        return Err(degenerate("hip center and spine coincide".into()));
    }

    let mut joints = Vec::with_capacity(seq.frames.len());
    let mut aux = Vec::with_capacity(seq.frames.len());
    let mut prev_angle: Option<f64> = None;
    for (i, f) in seq.frames.iter().enumerate() {
        let hips = sub(f[HIP_RIGHT], f[HIP_LEFT]);
        let horizontal = hips[0].hypot(hips[2]);
        if horizontal < DEGENERACY_RATIO * extent {
            return Err(degenerate(format!(
                "hip vector is vertical or zero in frame {i}"
            )));
        }
        let (c, s) = (hips[0] / horizontal, hips[2] / horizontal);
        let origin = f[HIP_CENTER];
        let mut out = [[0.0; 3]; NUM_JOINTS];
        for (o, p) in out.iter_mut().zip(f) {
            let v = sub(*p, origin);
            *o = [
                (c * v[0] + s * v[2]) / scale,
                v[1] / scale,
                (-s * v[0] + c * v[2]) / scale,
            ];
        }
        joints.push(out);

        let mut angle = hips[2].atan2(hips[0]);
        if let Some(prev) = prev_angle {
            let turns = ((prev - angle) / std::f64::consts::TAU).round();
            angle += turns * std::f64::consts::TAU;
        }
        prev_angle = Some(angle);
        let mut centroid = [0.0; 3];
        for p in f {
            for k in 0..3 {
                centroid[k] += p[k] / NUM_JOINTS as f64;
            }
        }
        aux.push([centroid[0], centroid[1], centroid[2], angle]);
    }
    Ok(NormalizedSkeleton { joints, aux })
}

/// Nested temporal segmentation: level `l` splits the series into `2^l`
/// equal parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PyramidConfig {
    pub levels: usize,
    pub coefficients: usize,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            coefficients: 4,
        }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<(), SkeletonError> {
        if self.levels == 0 || self.coefficients == 0 {
            return Err(SkeletonError::InvalidConfig(
                "levels and coefficients must be at least 1".into(),
            ));
        }
        if self.levels > 16 {
            return Err(SkeletonError::InvalidConfig("at most 16 levels".into()));
        }
        Ok(())
    }

    /// `1 + 2 + ... + 2^(levels-1)`.
    pub fn segments(&self) -> usize {
        (1 << self.levels) - 1
    }

    /// Output length for one scalar trajectory.
    pub fn output_len(&self) -> usize {
        self.segments() * self.coefficients
    }

    /// Dimension of a block built from `channels` trajectories.
    pub fn block_dim(&self, channels: usize) -> usize {
        channels * self.output_len()
    }
}

/// `(start, end)` sample ranges of every pyramid segment, coarse to fine.
/// Boundaries are `floor(i * T / 2^l)`, so short series give empty segments.
pub fn pyramid_segments(len: usize, levels: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for l in 0..levels {
        let parts = 1usize << l;
        for i in 0..parts {
            out.push((i * len / parts, (i + 1) * len / parts));
        }
    }
    out
}

/// Magnitudes of the first `coefficients` unnormalized DFT terms (DC first)
/// of every pyramid segment. Segments shorter than `coefficients` are
/// zero-padded to that length.
pub fn fourier_temporal_pyramid(series: &[f64], cfg: &PyramidConfig) -> Vec<f64> {
    let mut planner = FftPlanner::<f64>::new();
    let mut out = Vec::with_capacity(cfg.output_len());
    for (start, end) in pyramid_segments(series.len(), cfg.levels) {
        let n = (end - start).max(cfg.coefficients);
        let mut buf: Vec<Complex<f64>> = series[start..end]
            .iter()
            .map(|&v| Complex::new(v, 0.0))
            .collect();
        buf.resize(n, Complex::new(0.0, 0.0));
        planner.plan_fft_forward(n).process(&mut buf);
        out.extend(buf[..cfg.coefficients].iter().map(|z| z.norm()));
    }
    out
}

/// Layout of encoded skeleton features: one part per joint with three
/// coordinate trajectories, then the auxiliary body part.
pub fn skeleton_layout(cfg: &PyramidConfig) -> Result<FeatureLayout, SkeletonError> {
    cfg.validate()?;
    let joint = cfg.block_dim(3);
    let parts = JOINT_NAMES
        .iter()
        .map(|name| {
            (
                name.to_string(),
                vec![(SKELETON_MODALITY.to_string(), joint)],
            )
        })
        .chain(std::iter::once((
            AUX_PART.to_string(),
            vec![(
                SKELETON_MODALITY.to_string(),
                cfg.block_dim(AUX_TRAJECTORIES),
            )],
        )));
    Ok(validate_layout(LayoutDecl::sequential(parts))?)
}

/// Feature row for one sequence in [`skeleton_layout`] order.
pub fn encode_sequence(
    seq: &SkeletonSequence,
    cfg: &PyramidConfig,
) -> Result<Vec<f64>, SkeletonError> {
    cfg.validate()?;
    let norm = normalize_skeleton(seq)?;
    let mut row = Vec::with_capacity(cfg.block_dim(3 * NUM_JOINTS + AUX_TRAJECTORIES));
    let mut series = Vec::with_capacity(norm.joints.len());
    for j in 0..NUM_JOINTS {
        for k in 0..3 {
            series.clear();
            series.extend(norm.joints.iter().map(|f| f[j][k]));
            row.extend(fourier_temporal_pyramid(&series, cfg));
        }
    }
    for k in 0..AUX_TRAJECTORIES {
        series.clear();
        series.extend(norm.aux.iter().map(|a| a[k]));
        row.extend(fourier_temporal_pyramid(&series, cfg));
    }
    Ok(row)
}

/// Class names in sorted order, numerically when every label is an integer.
pub fn sorted_class_names<'a>(labels: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let set: BTreeSet<&str> = labels.into_iter().collect();
    let mut names: Vec<String> = set.into_iter().map(str::to_string).collect();
    if names.iter().all(|n| n.parse::<i64>().is_ok()) {
        names.sort_by_key(|n| n.parse::<i64>().expect("checked"));
    }
    names
}

/// Encodes every sequence into one bundle (rows follow input order).
pub fn encode_bundle(
    sequences: &[SkeletonSequence],
    cfg: &PyramidConfig,
) -> Result<FeatureBundle, SkeletonError> {
    if sequences.is_empty() {
        return Err(SkeletonError::InconsistentSequences("no sequences".into()));
    }
    let layout = skeleton_layout(cfg)?;
    let d = layout.total_dim();
    let class_names = sorted_class_names(sequences.iter().map(|s| s.label.as_str()));
    let mut x = Array2::zeros((sequences.len(), d));
    let mut samples = Vec::with_capacity(sequences.len());
    for (i, seq) in sequences.iter().enumerate() {
        let row = encode_sequence(seq, cfg)?;
        if row.len() != d {
            return Err(SkeletonError::InconsistentSequences(format!(
                "sequence '{}' encodes to {} values, expected {d}",
                seq.id,
                row.len()
            )));
        }
        x.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
        samples.push(SampleInfo {
            id: seq.id.clone(),
            label: class_names
                .iter()
                .position(|c| *c == seq.label)
                .expect("label collected above"),
            subject: seq.subject,
        });
    }
    let note = format!(
        "skeleton pyramid levels={} coefficients={}",
        cfg.levels, cfg.coefficients
    );
    Ok(FeatureBundle::new(
        x,
        layout,
        samples,
        class_names,
        vec![note],
    )?)
}

/// One frame per line, 60 whitespace-separated reals (joint-major x y z).
/// Blank lines and `#` comments are skipped.
pub fn parse_skeleton_text(text: &str, path: &Path) -> Result<Vec<Frame>, SkeletonError> {
    let mut frames = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| SkeletonError::Parse {
            path: path.to_path_buf(),
            line: ln + 1,
            msg,
        };
        let vals = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| err(format!("not a number: '{t}'")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if vals.len() != 3 * NUM_JOINTS {
            return Err(err(format!(
                "expected {} values, found {}",
                3 * NUM_JOINTS,
                vals.len()
            )));
        }
        let mut f = [[0.0; 3]; NUM_JOINTS];
        for (j, p) in f.iter_mut().enumerate() {
            p.copy_from_slice(&vals[3 * j..3 * j + 3]);
        }
        frames.push(f);
    }
    Ok(frames)
}

pub fn read_skeleton_file(path: impl AsRef<Path>) -> Result<Vec<Frame>, SkeletonError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_skeleton_text(&text, path)
}

/// Reads a manifest of `sample_id path class subject` lines; paths are
/// relative to the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<SkeletonSequence>, SkeletonError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| SkeletonError::Parse {
            path: path.to_path_buf(),
            line: ln + 1,
            msg,
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        let [id, file, class, subject] = toks[..] else {
            return Err(err("expected: sample_id path class subject".into()));
        };
        let subject = subject
            .parse::<u32>()
            .map_err(|_| err(format!("bad subject '{subject}'")))?;
        let frames = read_skeleton_file(base.join(file))?;
        out.push(SkeletonSequence::new(id, class, subject, frames)?);
    }
    Ok(out)
}
