//! Loss plus structured penalties for every training variant.
//!
//! `X` is stored `n x d` (one sample per row) and `W` is `d x C`, so the
//! residual is `X W - Y`. The loss is the summed squared residual, not a mean.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layout::FeatureLayout;
use crate::norms::{CompiledNorm, NormError, NormSpec, SmoothingConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("fine-tune objective requires an anchor weight matrix")]
    MissingAnchor,
    #[error("only the fine-tune objective takes an anchor")]
    UnexpectedAnchor,
    #[error("unknown objective variant '{0}'")]
    UnknownVariant(String),
    #[error("invalid labels: {0}")]
    InvalidLabels(String),
    #[error("{name} must be a finite non-negative number, got {value}")]
    InvalidLambda { name: &'static str, value: f64 },
    #[error("warm-start objective needs a single-modality layout")]
    NotSingleModality,
    #[error(transparent)]
    Norm(#[from] NormError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Element-wise L1 on each class column.
    PlainL1,
    /// L2 norm (not squared) of each class column.
    PlainL2,
    /// Part-level L1/L2 per class.
    Mp,
    /// Row-wise multitask L2/L1 plus the L1/L2/L4 part-modality norm.
    Mmmp,
    /// Per-modality solve: multitask L2/L1 plus part-level L1/L2.
    WarmStart,
    /// MMMP plus a squared Frobenius pull towards an anchor.
    FineTune,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::PlainL1,
        Variant::PlainL2,
        Variant::Mp,
        Variant::Mmmp,
        Variant::WarmStart,
        Variant::FineTune,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::PlainL1 => "l1",
            Variant::PlainL2 => "l2",
            Variant::Mp => "mp",
            Variant::Mmmp => "mmmp",
            Variant::WarmStart => "warm-start",
            Variant::FineTune => "fine-tune",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = ObjectiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "l1" | "plain-l1" => Ok(Variant::PlainL1),
            "l2" | "plain-l2" => Ok(Variant::PlainL2),
            "mp" => Ok(Variant::Mp),
            "mmmp" => Ok(Variant::Mmmp),
            "warm-start" | "warmstart" => Ok(Variant::WarmStart),
            "fine-tune" | "finetune" => Ok(Variant::FineTune),
            _ => Err(ObjectiveError::UnknownVariant(s.to_string())),
        }
    }
}

/// Penalty weights. `lambda2` doubles as the single regularization weight of
/// the plain L1/L2 and MP variants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda_hat1: f64,
    pub lambda_hat2: f64,
    pub variant: Variant,
    pub smoothing: SmoothingConfig,
}

impl ObjectiveConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            lambda_hat1: 0.0,
            lambda_hat2: 0.0,
            variant,
            smoothing: SmoothingConfig::default(),
        }
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        for (name, value) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda_hat1", self.lambda_hat1),
            ("lambda_hat2", self.lambda_hat2),
        ] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(ObjectiveError::InvalidLambda { name, value });
            }
        }
        if self.smoothing.epsilon() <= 0.0 {
            return Err(NormError::ZeroEpsilon.into());
        }
        Ok(())
    }

    /// Weights of the (multitask, structured) terms for the active variant.
    fn term_weights(&self) -> (f64, f64) {
        match self.variant {
            Variant::PlainL1 | Variant::PlainL2 | Variant::Mp => (0.0, self.lambda2),
            Variant::Mmmp | Variant::FineTune => (self.lambda1, self.lambda2),
            Variant::WarmStart => (self.lambda_hat1, self.lambda_hat2),
        }
    }
}

/// One-hot `n x C` label matrix; every row holds exactly one 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    y: Array2<f64>,
}

impl LabelMatrix {
    pub fn from_labels(labels: &[usize], classes: usize) -> Result<Self, ObjectiveError> {
        let mut y = Array2::zeros((labels.len(), classes));
        for (i, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(ObjectiveError::InvalidLabels(format!(
                    "sample {i} has label {l} but there are {classes} classes"
                )));
            }
            y[[i, l]] = 1.0;
        }
        Ok(Self { y })
    }

    pub fn from_matrix(y: Array2<f64>) -> Result<Self, ObjectiveError> {
        for (i, row) in y.rows().into_iter().enumerate() {
            if row.iter().any(|&v| v != 0.0 && v != 1.0) || row.sum() != 1.0 {
                return Err(ObjectiveError::InvalidLabels(format!(
                    "row {i} is not a one-hot indicator"
                )));
            }
        }
        Ok(Self { y })
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.y.view()
    }

    pub fn samples(&self) -> usize {
        self.y.nrows()
    }

    pub fn classes(&self) -> usize {
        self.y.ncols()
    }

    /// Same labels with the class columns reordered: new column `c` is old
    /// column `perm[c]`.
    pub fn permute_classes(&self, perm: &[usize]) -> Self {
        let y = Array2::from_shape_fn(self.y.dim(), |(i, c)| self.y[[i, perm[c]]]);
        Self { y }
    }
}

fn check_shapes(
    x: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    y: &LabelMatrix,
) -> Result<(), ObjectiveError> {
    if x.ncols() != w.nrows() || x.nrows() != y.samples() || w.ncols() != y.classes() {
        return Err(ObjectiveError::ShapeMismatch(format!(
            "X is {}x{}, W is {}x{}, Y is {}x{}",
            x.nrows(),
            x.ncols(),
            w.nrows(),
            w.ncols(),
            y.samples(),
            y.classes()
        )));
    }
    Ok(())
}

/// `||X W - Y||_F^2`.
pub fn squared_loss(
    x: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    y: &LabelMatrix,
) -> Result<f64, ObjectiveError> {
    check_shapes(x, w, y)?;
    let r = x.dot(&w) - &y.y;
    Ok(r.iter().map(|v| v * v).sum())
}

/// `sum_k ||w^k||_2` over the rows of `W`, smoothed.
pub fn multitask_row_penalty(w: ArrayView2<'_, f64>, smoothing: SmoothingConfig) -> f64 {
    let eps = smoothing.epsilon();
    w.rows()
        .into_iter()
        .map(|row| (row.iter().map(|v| v * v).sum::<f64>() + eps).sqrt())
        .sum()
}

fn multitask_accumulate(
    w: ArrayView2<'_, f64>,
    eps: f64,
    scale: f64,
    grad: &mut Array2<f64>,
) -> f64 {
    let mut total = 0.0;
    for (row, mut g) in w.rows().into_iter().zip(grad.rows_mut()) {
        let norm = (row.iter().map(|v| v * v).sum::<f64>() + eps).sqrt();
        total += norm;
        let f = scale / norm;
        Zip::from(&mut g).and(&row).for_each(|g, &v| *g += f * v);
    }
    total
}

/// Unweighted penalty values and the loss at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub loss: f64,
    pub multitask: f64,
    pub structured: f64,
    pub proximity: f64,
}

/// A ready-to-evaluate objective over fixed data.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    x: ArrayView2<'a, f64>,
    y: ArrayView2<'a, f64>,
    anchor: Option<ArrayView2<'a, f64>>,
    config: ObjectiveConfig,
    column_norm: CompiledNorm,
}

impl<'a> Objective<'a> {
    pub fn new(
        x: ArrayView2<'a, f64>,
        y: &'a LabelMatrix,
        layout: &FeatureLayout,
        config: ObjectiveConfig,
        anchor: Option<ArrayView2<'a, f64>>,
    ) -> Result<Self, ObjectiveError> {
        config.validate()?;
        let d = layout.total_dim();
        if x.ncols() != d || x.nrows() != y.samples() {
            return Err(ObjectiveError::ShapeMismatch(format!(
                "X is {}x{} but layout has {} features and there are {} label rows",
                x.nrows(),
                x.ncols(),
                d,
                y.samples()
            )));
        }
        match (config.variant, anchor) {
            (Variant::FineTune, None) => return Err(ObjectiveError::MissingAnchor),
            (Variant::FineTune, Some(a)) if a.dim() != (d, y.classes()) => {
                return Err(ObjectiveError::ShapeMismatch(format!(
                    "anchor is {}x{}, expected {}x{}",
                    a.nrows(),
                    a.ncols(),
                    d,
                    y.classes()
                )))
            }
            (Variant::FineTune, Some(_)) => {}
            (_, Some(_)) => return Err(ObjectiveError::UnexpectedAnchor),
            (_, None) => {}
        }
        let spec = match config.variant {
            Variant::PlainL1 => NormSpec::Plain { p: 1.0 },
            Variant::PlainL2 => NormSpec::Plain { p: 2.0 },
            Variant::Mp => NormSpec::TwoLevel {
                partition: layout.part_sets(),
                q: 2.0,
                p: 1.0,
            },
            Variant::WarmStart => {
                if !layout.is_single_modality() {
                    return Err(ObjectiveError::NotSingleModality);
                }
                NormSpec::TwoLevel {
                    partition: layout.part_sets(),
                    q: 2.0,
                    p: 1.0,
                }
            }
            Variant::Mmmp | Variant::FineTune => NormSpec::ThreeLevel {
                outer: layout.part_sets(),
                inner: layout.block_sets().into_iter().flatten().collect(),
                r: 4.0,
                q: 2.0,
                p: 1.0,
            },
        };
        Ok(Self {
            x,
            y: y.view(),
            anchor,
            config,
            column_norm: CompiledNorm::new(&spec, d)?,
        })
    }

    pub fn config(&self) -> &ObjectiveConfig {
        &self.config
    }

    /// `(d, C)`
    pub fn weight_shape(&self) -> (usize, usize) {
        (self.x.ncols(), self.y.ncols())
    }

    fn check_w(&self, w: ArrayView2<'_, f64>) -> Result<(), ObjectiveError> {
        if w.dim() != self.weight_shape() {
            return Err(ObjectiveError::ShapeMismatch(format!(
                "W is {}x{}, expected {}x{}",
                w.nrows(),
                w.ncols(),
                self.x.ncols(),
                self.y.ncols()
            )));
        }
        Ok(())
    }

    pub fn terms(&self, w: ArrayView2<'_, f64>) -> Result<ObjectiveTerms, ObjectiveError> {
        self.check_w(w)?;
        let mut r = self.x.dot(&w);
        r -= &self.y;
        let loss = r.iter().map(|v| v * v).sum();
        let multitask = match self.config.variant {
            Variant::Mmmp | Variant::FineTune | Variant::WarmStart => {
                multitask_row_penalty(w, self.config.smoothing)
            }
            _ => 0.0,
        };
        let mut structured = 0.0;
        let mut buf = vec![0.0; w.nrows()];
        for col in w.columns() {
            buf.iter_mut().zip(col.iter()).for_each(|(b, &v)| *b = v);
            structured += self.column_norm.value(&buf, self.config.smoothing)?;
        }
        let proximity = match self.anchor {
            Some(a) => w.iter().zip(a.iter()).map(|(v, a)| (v - a) * (v - a)).sum(),
            None => 0.0,
        };
        Ok(ObjectiveTerms {
            loss,
            multitask,
            structured,
            proximity,
        })
    }

    pub fn value(&self, w: ArrayView2<'_, f64>) -> Result<f64, ObjectiveError> {
        let t = self.terms(w)?;
        let (mt, st) = self.config.term_weights();
        let prox = if self.config.variant == Variant::FineTune {
            self.config.lambda3
        } else {
            0.0
        };
        Ok(t.loss + mt * t.multitask + st * t.structured + prox * t.proximity)
    }

    pub fn value_and_gradient(
        &self,
        w: ArrayView2<'_, f64>,
    ) -> Result<(f64, Array2<f64>), ObjectiveError> {
        self.check_w(w)?;
        let mut residual = self.x.dot(&w);
        residual -= &self.y;
        let mut value: f64 = residual.iter().map(|v| v * v).sum();
        let mut grad = self.x.t().dot(&residual);
        grad *= 2.0;

        let eps = self.config.smoothing.epsilon();
        let (mt, st) = self.config.term_weights();
        if mt > 0.0 {
            value += mt * multitask_accumulate(w, eps, mt, &mut grad);
        }
        if st > 0.0 {
            let d = w.nrows();
            let mut col_buf = vec![0.0; d];
            let mut grad_buf = vec![0.0; d];
            for (c, col) in w.columns().into_iter().enumerate() {
                col_buf
                    .iter_mut()
                    .zip(col.iter())
                    .for_each(|(b, &v)| *b = v);
                grad_buf.iter_mut().for_each(|g| *g = 0.0);
                value += st
                    * self.column_norm.accumulate(
                        &col_buf,
                        self.config.smoothing,
                        st,
                        &mut grad_buf,
                    )?;
                grad.column_mut(c)
                    .iter_mut()
                    .zip(&grad_buf)
                    .for_each(|(g, b)| *g += b);
            }
        }
        if let (Variant::FineTune, Some(anchor)) = (self.config.variant, self.anchor) {
            let l3 = self.config.lambda3;
            let mut prox = 0.0;
            Zip::from(&mut grad)
                .and(&w)
                .and(&anchor)
                .for_each(|g, &v, &a| {
                    let diff = v - a;
                    prox += diff * diff;
                    *g += 2.0 * l3 * diff;
                });
            value += l3 * prox;
        }
        Ok((value, grad))
    }

    /// Flat adapter for the optimizer: `w` and `grad` are row-major `d x C`.
    pub fn eval_flat(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        let view = ArrayView2::from_shape(self.weight_shape(), w).expect("flat weight length");
        let (value, g) = self
            .value_and_gradient(view)
            .expect("objective shapes are fixed at construction");
        grad.copy_from_slice(g.as_slice().expect("standard layout"));
        value
    }
}

/// One-shot evaluation of any variant.
pub fn objective_value_and_gradient(
    x: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    y: &LabelMatrix,
    layout: &FeatureLayout,
    config: ObjectiveConfig,
    anchor: Option<ArrayView2<'_, f64>>,
) -> Result<(f64, Array2<f64>), ObjectiveError> {
    check_shapes(x, w, y)?;
    Objective::new(x, y, layout, config, anchor)?.value_and_gradient(w)
}
