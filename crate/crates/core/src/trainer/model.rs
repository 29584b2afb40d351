use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::{TrainConfig, TrainError};
use crate::dataio::container::{
    escape_token, read_container, unescape_token, write_container, FormatError,
};
use crate::dataio::{layout_header_lines, parse_header, DataError};
use crate::layout::{validate_layout, FeatureLayout, LayoutDecl};
use crate::norms::group_magnitudes;
use crate::optimizer::Termination;

pub const MODEL_MAGIC: &str = "MMMP-MODEL";
pub const MODEL_VERSION: u32 = 1;

/// Per-feature affine transform estimated on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Features that were constant on the training rows; they map to 0.
    pub dropped: Vec<usize>,
}

impl Standardization {
    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            scale: vec![1.0; d],
            dropped: Vec::new(),
        }
    }

    /// Zero mean and unit (population) variance per column of `x`.
    pub fn fit(x: ArrayView2<'_, f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mut mean = Vec::with_capacity(x.ncols());
        let mut scale = Vec::with_capacity(x.ncols());
        let mut dropped = Vec::new();
        for (k, col) in x.axis_iter(Axis(1)).enumerate() {
            let m = col.sum() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let sd = var.sqrt();
            mean.push(m);
            if sd > 1e-12 * (1.0 + m.abs()) {
                scale.push(sd);
            } else {
                scale.push(1.0);
                dropped.push(k);
            }
        }
        Self {
            mean,
            scale,
            dropped,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.as_standard_layout().into_owned();
        for mut row in out.rows_mut() {
            self.apply_in_place(row.as_slice_mut().expect("owned rows are contiguous"));
        }
        out
    }

    pub fn apply_in_place(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
            *v = (*v - m) / s;
        }
        for &k in &self.dropped {
            row[k] = 0.0;
        }
    }
}

/// Argmax decision with its class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub scores: Vec<f64>,
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (c, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = c;
        }
    }
    best
}

/// A fitted one-vs-all classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    /// `d x C`, acting on standardized features.
    pub weights: Array2<f64>,
    pub layout: FeatureLayout,
    pub standardization: Standardization,
    pub class_names: Vec<String>,
    pub config: TrainConfig,
    /// `C x P` part magnitudes of `weights`.
    pub part_activations: Array2<f64>,
    /// Objective at the optimizer's starting point and at the solution.
    pub start_objective: f64,
    pub final_objective: f64,
    pub termination: Termination,
    pub iterations: usize,
}

impl TrainedModel {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new(
        weights: Array2<f64>,
        layout: FeatureLayout,
        standardization: Standardization,
        class_names: Vec<String>,
        config: TrainConfig,
        start_objective: f64,
        final_objective: f64,
        termination: Termination,
        iterations: usize,
    ) -> Result<Self, TrainError> {
        let part_activations = group_magnitudes(weights.view(), &layout)?;
        Ok(Self {
            weights,
            layout,
            standardization,
            class_names,
            config,
            part_activations,
            start_objective,
            final_objective,
            termination,
            iterations,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.ncols()
    }

    /// Length of the raw input vectors `predict` expects.
    pub fn input_dim(&self) -> usize {
        self.layout.total_dim() - usize::from(self.config.bias)
    }

    fn standardized(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>, TrainError> {
        if x.len() != self.input_dim() {
            return Err(TrainError::ShapeMismatch(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteInput);
        }
        let mut row: Vec<f64> = x.to_vec();
        if self.config.bias {
            row.push(1.0);
        }
        self.standardization.apply_in_place(&mut row);
        Ok(Array1::from(row))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction, TrainError> {
        let z = self.standardized(ArrayView1::from(x))?;
        let scores = z.dot(&self.weights).to_vec();
        Ok(Prediction {
            class: argmax(&scores),
            scores,
        })
    }

    /// Predicted class per row of `x` (`n x input_dim`).
    pub fn predict_rows(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>, TrainError> {
        x.rows()
            .into_iter()
            .map(|row| {
                let z = self.standardized(row)?;
                Ok(argmax(z.dot(&self.weights).as_slice().expect("contiguous")))
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (d, c) = self.weights.dim();
        let mut header = vec![format!("d {d}"), format!("classes {c}")];
        header.extend(
            self.class_names
                .iter()
                .map(|n| format!("class {}", escape_token(n))),
        );
        header.extend(layout_header_lines(&self.layout));
        for (k, v) in self.config.to_pairs() {
            header.push(format!("config {k} {}", escape_token(&v)));
        }
        header.push(format!("meta start_objective {:e}", self.start_objective));
        header.push(format!("meta final_objective {:e}", self.final_objective));
        header.push(format!("meta termination {}", self.termination));
        header.push(format!("meta iterations {}", self.iterations));
        let dropped: Vec<String> = self
            .standardization
            .dropped
            .iter()
            .map(|k| k.to_string())
            .collect();
        header.push(
            format!("dropped {}", dropped.join(" "))
                .trim_end()
                .to_string(),
        );

        let mut payload = Vec::with_capacity(2 * d + d * c);
        payload.extend_from_slice(&self.standardization.mean);
        payload.extend_from_slice(&self.standardization.scale);
        payload.extend(self.weights.iter().copied());
        let mut buf = Vec::new();
        write_container(&mut buf, MODEL_MAGIC, MODEL_VERSION, &header, &payload)
            .expect("in-memory write");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let container =
            read_container(bytes, MODEL_MAGIC, MODEL_VERSION).map_err(DataError::from)?;
        let corrupt =
            |m: String| TrainError::Data(DataError::Format(FormatError::CorruptHeader(m)));
        let fields = parse_header(&container.header, false)?;
        let d = fields.d.ok_or_else(|| corrupt("missing 'd' line".into()))?;
        let mut classes = None;
        let mut pairs = Vec::new();
        let mut meta = std::collections::HashMap::new();
        let mut dropped = Vec::new();
        for toks in &fields.extra {
            match toks[0].as_str() {
                "classes" if toks.len() == 2 => {
                    classes = Some(
                        toks[1]
                            .parse::<usize>()
                            .map_err(|_| corrupt("bad class count".into()))?,
                    )
                }
                "config" if toks.len() == 3 => pairs.push((
                    toks[1].clone(),
                    unescape_token(&toks[2]).map_err(DataError::from)?,
                )),
                "meta" if toks.len() == 3 => {
                    meta.insert(toks[1].clone(), toks[2].clone());
                }
                "dropped" => {
                    for t in &toks[1..] {
                        dropped.push(
                            t.parse::<usize>()
                                .map_err(|_| corrupt(format!("bad dropped index '{t}'")))?,
                        );
                    }
                }
                other => return Err(corrupt(format!("unexpected model header key '{other}'"))),
            }
        }
        let c = classes.ok_or_else(|| corrupt("missing 'classes' line".into()))?;
        if fields.classes.len() != c || container.payload.len() != 2 * d + d * c {
            return Err(corrupt(
                "model payload does not match declared shape".into(),
            ));
        }
        let layout = validate_layout(LayoutDecl {
            total_dim: d,
            parts: fields.parts,
        })?;
        let config = TrainConfig::from_pairs(&pairs)?;
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| corrupt(format!("missing meta {k}")))
        };
        let parse_f = |k: &str| -> Result<f64, TrainError> {
            get(k)?
                .parse::<f64>()
                .map_err(|_| corrupt(format!("bad meta {k}")))
        };
        let termination = match get("termination")?.as_str() {
            "gradient-tolerance" => Termination::GradientTolerance,
            "function-tolerance" => Termination::FunctionTolerance,
            "step-tolerance" => Termination::StepTolerance,
            "max-iterations" => Termination::MaxIterations,
            "line-search-failure" => Termination::LineSearchFailure,
            other => return Err(corrupt(format!("unknown termination '{other}'"))),
        };
        let iterations =
            usize::from_str(get("iterations")?).map_err(|_| corrupt("bad iterations".into()))?;
        let p = &container.payload;
        let standardization = Standardization {
            mean: p[..d].to_vec(),
            scale: p[d..2 * d].to_vec(),
            dropped,
        };
        let weights = Array2::from_shape_vec((d, c), p[2 * d..].to_vec()).expect("length checked");
        TrainedModel::new(
            weights,
            layout,
            standardization,
            fields.classes,
            config,
            parse_f("start_objective")?,
            parse_f("final_objective")?,
            termination,
            iterations,
        )
    }
}

pub fn write_model(model: &TrainedModel, path: impl AsRef<Path>) -> Result<(), TrainError> {
    let path = path.as_ref();
    fs::write(path, model.to_bytes()).map_err(|e| TrainError::Data(DataError::io(path, e)))
}

pub fn read_model(path: impl AsRef<Path>) -> Result<TrainedModel, TrainError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| TrainError::Data(DataError::io(path, e)))?;
    TrainedModel::from_bytes(&bytes)
}
