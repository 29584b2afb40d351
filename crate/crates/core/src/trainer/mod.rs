//! One-vs-all training: per-modality warm start, block stacking, anchored
//! multimodal fine-tune, prediction and evaluation.

mod evaluate;
mod model;

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use evaluate::{
    cross_validate, evaluate, format_mean_std, part_ranking_tsv, report_part_selection,
    select_lambda, CvSummary, EvalReport, LambdaScore, PartRanking, SplitOutcome, LAMBDA_GRID,
};
pub use model::{
    argmax, read_model, write_model, Prediction, Standardization, TrainedModel, MODEL_MAGIC,
    MODEL_VERSION,
};

use crate::dataio::{DataError, FeatureBundle};
use crate::layout::{validate_layout, FeatureLayout, LayoutError};
use crate::norms::{NormError, SmoothingConfig};
use crate::objective::{LabelMatrix, Objective, ObjectiveConfig, ObjectiveError, Variant};
use crate::optimizer::{
    minimize, LineSearchParams, OptimizationTrace, OptimizeError, OptimizerConfig, Termination,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error("unknown modality '{0}'")]
    UnknownModality(String),
    #[error("singular data: {0}")]
    SingularData(String),
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
}

/// Which regularizer family to train with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    L1,
    L2,
    Mp,
    Mmmp,
    /// Warm-start objective on one modality's features only.
    SingleModality,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::L1 => "l1",
            Method::L2 => "l2",
            Method::Mp => "mp",
            Method::Mmmp => "mmmp",
            Method::SingleModality => "single-modality",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "l1" => Ok(Method::L1),
            "l2" => Ok(Method::L2),
            "mp" => Ok(Method::Mp),
            "mmmp" => Ok(Method::Mmmp),
            "single-modality" | "single" => Ok(Method::SingleModality),
            _ => Err(TrainError::InvalidConfig(format!("unknown method '{s}'"))),
        }
    }
}

/// Everything that determines a training run.
///
/// Lambdas multiply a summed (not averaged) squared loss, so sensible values
/// grow with the number of training samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    /// Modality for [`Method::SingleModality`].
    pub modality: Option<String>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    /// Warm-start weights; default to `lambda1` / `lambda2`.
    pub lambda_hat1: Option<f64>,
    pub lambda_hat2: Option<f64>,
    pub epsilon: f64,
    /// Warm-start per modality and fine-tune (MMMP only).
    pub two_step: bool,
    pub standardize: bool,
    /// Append a constant-1 feature as its own part.
    pub bias: bool,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Mmmp,
            modality: None,
            lambda1: 4.0,
            lambda2: 40.0,
            lambda3: 1.0,
            lambda_hat1: None,
            lambda_hat2: None,
            epsilon: SmoothingConfig::DEFAULT_EPSILON,
            two_step: true,
            standardize: true,
            bias: false,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn objective(&self, variant: Variant) -> Result<ObjectiveConfig, TrainError> {
        let smoothing = SmoothingConfig::new(self.epsilon)?;
        let cfg = ObjectiveConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            lambda_hat1: self.lambda_hat1.unwrap_or(self.lambda1),
            lambda_hat2: self.lambda_hat2.unwrap_or(self.lambda2),
            variant,
            smoothing,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.objective(Variant::Mmmp)?;
        self.optimizer.validate()?;
        if self.method == Method::SingleModality && self.modality.is_none() {
            return Err(TrainError::InvalidConfig(
                "single-modality training needs a modality".into(),
            ));
        }
        Ok(())
    }

    /// Flat `key, value` pairs for file headers.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let o = &self.optimizer;
        let opt = |v: Option<f64>| v.map(|v| format!("{v:e}")).unwrap_or_else(|| "none".into());
        vec![
            ("method".into(), self.method.to_string()),
            (
                "modality".into(),
                self.modality.clone().unwrap_or_else(|| "none".into()),
            ),
            ("lambda1".into(), format!("{:e}", self.lambda1)),
            ("lambda2".into(), format!("{:e}", self.lambda2)),
            ("lambda3".into(), format!("{:e}", self.lambda3)),
            ("lambda_hat1".into(), opt(self.lambda_hat1)),
            ("lambda_hat2".into(), opt(self.lambda_hat2)),
            ("epsilon".into(), format!("{:e}", self.epsilon)),
            ("two_step".into(), self.two_step.to_string()),
            ("standardize".into(), self.standardize.to_string()),
            ("bias".into(), self.bias.to_string()),
            ("memory".into(), o.memory.to_string()),
            ("max_iters".into(), o.max_iters.to_string()),
            ("grad_tol".into(), format!("{:e}", o.grad_tol)),
            ("f_tol".into(), format!("{:e}", o.f_tol)),
            ("c1".into(), format!("{:e}", o.line_search.c1)),
            ("c2".into(), format!("{:e}", o.line_search.c2)),
            ("max_line_evals".into(), o.line_search.max_evals.to_string()),
        ]
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, TrainError> {
        let mut cfg = TrainConfig::default();
        let bad = |k: &str, v: &str| TrainError::InvalidConfig(format!("bad value '{v}' for {k}"));
        let f = |k: &str, v: &str| v.parse::<f64>().map_err(|_| bad(k, v));
        let u = |k: &str, v: &str| v.parse::<usize>().map_err(|_| bad(k, v));
        let b = |k: &str, v: &str| v.parse::<bool>().map_err(|_| bad(k, v));
        let opt = |k: &str, v: &str| {
            if v == "none" {
                Ok(None)
            } else {
                f(k, v).map(Some)
            }
        };
        let mut ls = LineSearchParams::default();
        for (k, v) in pairs {
            let (k, v) = (k.as_str(), v.as_str());
            match k {
                "method" => cfg.method = v.parse()?,
                "modality" => cfg.modality = (v != "none").then(|| v.to_string()),
                "lambda1" => cfg.lambda1 = f(k, v)?,
                "lambda2" => cfg.lambda2 = f(k, v)?,
                "lambda3" => cfg.lambda3 = f(k, v)?,
                "lambda_hat1" => cfg.lambda_hat1 = opt(k, v)?,
                "lambda_hat2" => cfg.lambda_hat2 = opt(k, v)?,
                "epsilon" => cfg.epsilon = f(k, v)?,
                "two_step" => cfg.two_step = b(k, v)?,
                "standardize" => cfg.standardize = b(k, v)?,
                "bias" => cfg.bias = b(k, v)?,
                "memory" => cfg.optimizer.memory = u(k, v)?,
                "max_iters" => cfg.optimizer.max_iters = u(k, v)?,
                "grad_tol" => cfg.optimizer.grad_tol = f(k, v)?,
                "f_tol" => cfg.optimizer.f_tol = f(k, v)?,
                "c1" => ls.c1 = f(k, v)?,
                "c2" => ls.c2 = f(k, v)?,
                "max_line_evals" => ls.max_evals = u(k, v)?,
                _ => return Err(TrainError::InvalidConfig(format!("unknown key '{k}'"))),
            }
        }
        cfg.optimizer.line_search = ls;
        Ok(cfg)
    }
}

/// Standardized training data ready for the objectives.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub x: Array2<f64>,
    pub labels: LabelMatrix,
    pub layout: FeatureLayout,
    pub standardization: Standardization,
}

/// Selects the training rows, appends the bias column when configured and
/// standardizes with statistics of those rows only.
pub fn prepare(
    bundle: &FeatureBundle,
    train: &[usize],
    cfg: &TrainConfig,
) -> Result<PreparedData, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    if bundle.num_classes() < 2 {
        return Err(LayoutError::TooFewClasses(bundle.num_classes()).into());
    }
    if let Some(&bad) = train.iter().find(|&&i| i >= bundle.num_samples()) {
        return Err(TrainError::ShapeMismatch(format!(
            "training index {bad} out of range"
        )));
    }
    let mut x = bundle.x().select(Axis(0), train);
    let mut layout = bundle.layout().clone();
    if cfg.bias {
        x = concatenate(Axis(1), &[x.view(), Array2::ones((x.nrows(), 1)).view()])
            .expect("same row count");
        let mut decl = layout.into_decl();
        decl.parts.push(crate::layout::PartDecl {
            name: "bias".into(),
            blocks: vec![crate::layout::BlockDecl {
                modality: "bias".into(),
                offset: decl.total_dim,
                len: 1,
            }],
        });
        decl.total_dim += 1;
        layout = validate_layout(decl)?;
    }
    let d = x.ncols();
    let mut standardization = if cfg.standardize {
        Standardization::fit(x.view())
    } else {
        Standardization::identity(d)
    };
    if cfg.bias {
        standardization.mean[d - 1] = 0.0;
        standardization.scale[d - 1] = 1.0;
        standardization.dropped.retain(|&k| k != d - 1);
    }
    if standardization.dropped.len() == d {
        return Err(TrainError::SingularData(
            "every feature is constant on the training rows".into(),
        ));
    }
    if !standardization.dropped.is_empty() {
        log::warn!(
            "{} constant feature(s) dropped after standardization",
            standardization.dropped.len()
        );
    }
    let x = standardization.apply(x.view());
    let labels = LabelMatrix::from_labels(
        &train
            .iter()
            .map(|&i| bundle.samples()[i].label)
            .collect::<Vec<_>>(),
        bundle.num_classes(),
    )?;
    Ok(PreparedData {
        x,
        labels,
        layout,
        standardization,
    })
}

/// Result of one optimizer run.
#[derive(Debug, Clone)]
pub struct Solution {
    pub weights: Array2<f64>,
    pub start_objective: f64,
    pub final_objective: f64,
    pub trace: OptimizationTrace,
}

/// Minimizes one objective variant from `w0`.
pub fn solve(
    x: ArrayView2<'_, f64>,
    labels: &LabelMatrix,
    layout: &FeatureLayout,
    objective: ObjectiveConfig,
    anchor: Option<ArrayView2<'_, f64>>,
    w0: Array2<f64>,
    optimizer: &OptimizerConfig,
) -> Result<Solution, TrainError> {
    let obj = Objective::new(x, labels, layout, objective, anchor)?;
    if w0.dim() != obj.weight_shape() {
        return Err(TrainError::ShapeMismatch(format!(
            "initial weights are {:?}, expected {:?}",
            w0.dim(),
            obj.weight_shape()
        )));
    }
    let w0 = w0.as_standard_layout().into_owned();
    let start_objective = obj.value(w0.view())?;
    let min = minimize(
        |w, g| obj.eval_flat(w, g),
        w0.as_slice().expect("standard layout"),
        optimizer,
    )?;
    if min.trace.termination == Termination::LineSearchFailure {
        log::warn!(
            "{} solve stopped on a line-search failure",
            objective.variant
        );
    }
    let weights =
        Array2::from_shape_vec(obj.weight_shape(), min.x).expect("optimizer keeps dimension");
    Ok(Solution {
        weights,
        start_objective,
        final_objective: min.value,
        trace: min.trace,
    })
}

/// Warm-start weights of one modality.
#[derive(Debug, Clone)]
pub struct WarmStartBlock {
    pub modality: String,
    /// Column in the full layout of each row of `weights`.
    pub columns: Vec<usize>,
    /// `d_m x C`.
    pub weights: Array2<f64>,
    pub objective: f64,
    pub trace: OptimizationTrace,
}

/// Per-modality warm starts, in modality order.
#[derive(Debug, Clone)]
pub struct WarmStartBundle {
    pub blocks: Vec<WarmStartBlock>,
}

impl WarmStartBundle {
    /// Places every modality block at its rows of a `d x C` matrix. Each
    /// feature row must be claimed by exactly one block.
    pub fn stack(&self, d: usize, classes: usize) -> Result<Array2<f64>, TrainError> {
        let mut w = Array2::zeros((d, classes));
        let mut claimed = vec![false; d];
        for block in &self.blocks {
            if block.weights.dim() != (block.columns.len(), classes) {
                return Err(TrainError::ShapeMismatch(format!(
                    "warm start for '{}' is {:?}, expected ({}, {classes})",
                    block.modality,
                    block.weights.dim(),
                    block.columns.len()
                )));
            }
            for (r, &k) in block.columns.iter().enumerate() {
                if k >= d || claimed[k] {
                    return Err(TrainError::ShapeMismatch(format!(
                        "warm start row {k} is out of range or claimed twice"
                    )));
                }
                claimed[k] = true;
                w.row_mut(k).assign(&block.weights.row(r));
            }
        }
        if let Some(k) = claimed.iter().position(|c| !c) {
            return Err(TrainError::ShapeMismatch(format!(
                "no warm start covers feature {k}"
            )));
        }
        Ok(w)
    }
}

fn modality_block(
    prep: &PreparedData,
    modality: &str,
    cfg: &TrainConfig,
) -> Result<WarmStartBlock, TrainError> {
    let (sub, columns) = prep
        .layout
        .modality_sublayout(modality)
        .map_err(|e| match e {
            LayoutError::UnknownModality(m) => TrainError::UnknownModality(m),
            other => other.into(),
        })?;
    let x = prep.x.select(Axis(1), &columns);
    let w0 = Array2::zeros((columns.len(), prep.labels.classes()));
    let sol = solve(
        x.view(),
        &prep.labels,
        &sub,
        cfg.objective(Variant::WarmStart)?,
        None,
        w0,
        &cfg.optimizer,
    )?;
    Ok(WarmStartBlock {
        modality: modality.to_string(),
        columns,
        weights: sol.weights,
        objective: sol.final_objective,
        trace: sol.trace,
    })
}

fn warm_start_prepared(
    prep: &PreparedData,
    cfg: &TrainConfig,
) -> Result<WarmStartBundle, TrainError> {
    let modalities = prep.layout.modality_ids();
    let results: Vec<Result<WarmStartBlock, TrainError>> = std::thread::scope(|s| {
        let handles: Vec<_> = modalities
            .iter()
            .map(|m| s.spawn(move || modality_block(prep, m, cfg)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("warm-start worker panicked"))
            .collect()
    });
    Ok(WarmStartBundle {
        blocks: results.into_iter().collect::<Result<_, _>>()?,
    })
}

/// Warm-start solve for one modality on the training rows.
pub fn train_single_modality(
    bundle: &FeatureBundle,
    train: &[usize],
    modality: &str,
    cfg: &TrainConfig,
) -> Result<WarmStartBlock, TrainError> {
    let prep = prepare(bundle, train, cfg)?;
    modality_block(&prep, modality, cfg)
}

/// Warm starts for every modality of the bundle.
pub fn warm_start(
    bundle: &FeatureBundle,
    train: &[usize],
    cfg: &TrainConfig,
) -> Result<WarmStartBundle, TrainError> {
    let prep = prepare(bundle, train, cfg)?;
    warm_start_prepared(&prep, cfg)
}

fn finish(
    prep: PreparedData,
    bundle: &FeatureBundle,
    cfg: &TrainConfig,
    sol: Solution,
) -> Result<TrainedModel, TrainError> {
    TrainedModel::new(
        sol.weights,
        prep.layout,
        prep.standardization,
        bundle.class_names().to_vec(),
        cfg.clone(),
        sol.start_objective,
        sol.final_objective,
        sol.trace.termination,
        sol.trace.iterations(),
    )
}

fn mmmp_prepared(
    prep: &PreparedData,
    cfg: &TrainConfig,
    warm: Option<&WarmStartBundle>,
) -> Result<Solution, TrainError> {
    let (d, c) = (prep.layout.total_dim(), prep.labels.classes());
    match warm {
        Some(w) => {
            let anchor = w.stack(d, c)?;
            solve(
                prep.x.view(),
                &prep.labels,
                &prep.layout,
                cfg.objective(Variant::FineTune)?,
                Some(anchor.view()),
                anchor.clone(),
                &cfg.optimizer,
            )
        }
        None => solve(
            prep.x.view(),
            &prep.labels,
            &prep.layout,
            cfg.objective(Variant::Mmmp)?,
            None,
            Array2::zeros((d, c)),
            &cfg.optimizer,
        ),
    }
}

/// Fine-tunes from a warm start when one is given (anchored at it), otherwise
/// solves the MMMP objective from zero.
pub fn train_mmmp(
    bundle: &FeatureBundle,
    train: &[usize],
    cfg: &TrainConfig,
    warm: Option<&WarmStartBundle>,
) -> Result<TrainedModel, TrainError> {
    cfg.validate()?;
    let prep = prepare(bundle, train, cfg)?;
    let sol = mmmp_prepared(&prep, cfg, warm)?;
    finish(prep, bundle, cfg, sol)
}

/// Trains the configured method on the given training rows.
pub fn train(
    bundle: &FeatureBundle,
    train: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainedModel, TrainError> {
    train_full(bundle, train, cfg).map(|o| o.model)
}

/// A trained model with the optimizer traces that produced it.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    /// Trace of the final solve (the fine-tune for two-step MMMP).
    pub trace: OptimizationTrace,
    /// Per-modality warm starts, for two-step MMMP only.
    pub warm: Option<WarmStartBundle>,
}

/// Like [`train`], keeping traces and warm starts.
pub fn train_full(
    bundle: &FeatureBundle,
    train: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let prep = prepare(bundle, train, cfg)?;
    let (d, c) = (prep.layout.total_dim(), prep.labels.classes());
    let single = |variant| {
        solve(
            prep.x.view(),
            &prep.labels,
            &prep.layout,
            cfg.objective(variant)?,
            None,
            Array2::zeros((d, c)),
            &cfg.optimizer,
        )
    };
    let mut warm = None;
    let sol = match cfg.method {
        Method::L1 => single(Variant::PlainL1)?,
        Method::L2 => single(Variant::PlainL2)?,
        Method::Mp => single(Variant::Mp)?,
        Method::Mmmp if cfg.two_step => {
            let w = warm_start_prepared(&prep, cfg)?;
            let sol = mmmp_prepared(&prep, cfg, Some(&w))?;
            warm = Some(w);
            sol
        }
        Method::Mmmp => mmmp_prepared(&prep, cfg, None)?,
        Method::SingleModality => {
            let modality = cfg.modality.as_deref().expect("validated");
            let block = modality_block(&prep, modality, cfg)?;
            let mut weights = Array2::zeros((d, c));
            for (r, &k) in block.columns.iter().enumerate() {
                weights.row_mut(k).assign(&block.weights.row(r));
            }
            let start = block
                .trace
                .records
                .first()
                .map(|r| r.value)
                .unwrap_or(f64::NAN);
            Solution {
                weights,
                start_objective: start,
                final_objective: block.objective,
                trace: block.trace,
            }
        }
    };
    let trace = sol.trace.clone();
    let model = finish(prep, bundle, cfg, sol)?;
    Ok(TrainOutcome { model, trace, warm })
}
