use std::collections::HashSet;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Axis};

use super::container::{
    escape_token, read_container, unescape_token, write_container, FormatError,
};
use super::DataError;
use crate::layout::{validate_layout, BlockDecl, FeatureLayout, LayoutDecl, PartDecl};

pub const BUNDLE_MAGIC: &str = "MMMP-BUNDLE";
pub const BUNDLE_VERSION: u32 = 1;

/// Per-sample metadata carried alongside the feature rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleInfo {
    pub id: String,
    pub label: usize,
    pub subject: u32,
}

/// `n x d` features with their layout, labels and subjects. Immutable after
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    x: Array2<f64>,
    layout: FeatureLayout,
    samples: Vec<SampleInfo>,
    class_names: Vec<String>,
    notes: Vec<String>,
}

impl FeatureBundle {
    pub fn new(
        x: Array2<f64>,
        layout: FeatureLayout,
        samples: Vec<SampleInfo>,
        class_names: Vec<String>,
        notes: Vec<String>,
    ) -> Result<Self, DataError> {
        if x.ncols() != layout.total_dim() {
            return Err(DataError::InvalidBundle(format!(
                "matrix has {} columns, layout declares {}",
                x.ncols(),
                layout.total_dim()
            )));
        }
        if x.nrows() != samples.len() {
            return Err(DataError::InvalidBundle(format!(
                "matrix has {} rows but {} samples are described",
                x.nrows(),
                samples.len()
            )));
        }
        if class_names.is_empty() {
            return Err(DataError::InvalidBundle("no class names".into()));
        }
        for (i, name) in class_names.iter().enumerate() {
            if class_names[..i].contains(name) {
                return Err(DataError::InvalidBundle(format!(
                    "duplicate class name '{name}'"
                )));
            }
        }
        for s in &samples {
            if s.label >= class_names.len() {
                return Err(DataError::InvalidBundle(format!(
                    "sample '{}' has label {} but only {} classes exist",
                    s.id,
                    s.label,
                    class_names.len()
                )));
            }
        }
        let mut ids = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !ids.insert(s.id.as_str()) {
                return Err(DataError::InvalidBundle(format!(
                    "duplicate sample id '{}'",
                    s.id
                )));
            }
        }
        let x = x.as_standard_layout().into_owned();
        Ok(Self {
            x,
            layout,
            samples,
            class_names,
            notes,
        })
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn samples(&self) -> &[SampleInfo] {
        &self.samples
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn subjects(&self) -> Vec<u32> {
        self.samples.iter().map(|s| s.subject).collect()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    pub fn num_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.x.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Rows `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureBundle {
        FeatureBundle {
            x: self.x.select(Axis(0), indices),
            layout: self.layout.clone(),
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            class_names: self.class_names.clone(),
            notes: self.notes.clone(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = vec![
            format!("n {}", self.num_samples()),
            format!("d {}", self.num_features()),
        ];
        header.extend(
            self.class_names
                .iter()
                .map(|c| format!("class {}", escape_token(c))),
        );
        header.extend(layout_header_lines(&self.layout));
        header.extend(
            self.samples
                .iter()
                .map(|s| format!("sample {} {} {}", escape_token(&s.id), s.label, s.subject)),
        );
        header.extend(
            self.notes
                .iter()
                .map(|n| format!("note {}", escape_token(n))),
        );
        let mut buf = Vec::new();
        write_container(
            &mut buf,
            BUNDLE_MAGIC,
            BUNDLE_VERSION,
            &header,
            self.x.as_slice().expect("standard layout"),
        )
        .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DataError> {
        let container = read_container(bytes, BUNDLE_MAGIC, BUNDLE_VERSION)?;
        let fields = parse_header(&container.header, true)?;
        let n = fields.n.ok_or_else(|| corrupt("missing 'n' line"))?;
        let d = fields.d.ok_or_else(|| corrupt("missing 'd' line"))?;
        if fields.samples.len() != n {
            return Err(corrupt(format!(
                "header declares n={n} but lists {} samples",
                fields.samples.len()
            )));
        }
        if container.payload.len() != n * d {
            return Err(corrupt(format!(
                "payload holds {} values, expected {n} x {d}",
                container.payload.len()
            )));
        }
        let layout = validate_layout(LayoutDecl {
            total_dim: d,
            parts: fields.parts,
        })?;
        let x = Array2::from_shape_vec((n, d), container.payload).expect("length checked above");
        FeatureBundle::new(x, layout, fields.samples, fields.classes, fields.notes)
    }
}

fn corrupt(msg: impl Into<String>) -> DataError {
    DataError::Format(FormatError::CorruptHeader(msg.into()))
}

pub(crate) fn layout_header_lines(layout: &FeatureLayout) -> Vec<String> {
    let mut lines = Vec::new();
    for part in layout.parts() {
        lines.push(format!("part {}", escape_token(&part.name)));
        for b in &part.blocks {
            lines.push(format!(
                "block {} {} {}",
                escape_token(&b.modality),
                b.offset,
                b.len
            ));
        }
    }
    lines
}

/// Fields shared by the bundle header and the text-import sidecar.
#[derive(Debug, Default)]
pub(crate) struct HeaderFields {
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub classes: Vec<String>,
    pub parts: Vec<PartDecl>,
    pub samples: Vec<SampleInfo>,
    pub notes: Vec<String>,
    /// Unrecognized lines, kept for callers with extra keys.
    pub extra: Vec<Vec<String>>,
}

/// Parses header lines. With `strict`, `block` lines must carry explicit
/// offsets and unknown keys are an error; otherwise `block <modality> <len>`
/// is laid out after the previous block and unknown keys go to `extra`.
pub(crate) fn parse_header(lines: &[String], strict: bool) -> Result<HeaderFields, DataError> {
    let mut f = HeaderFields::default();
    let mut next_offset = 0usize;
    for (lineno, line) in lines.iter().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let bad = |msg: &str| corrupt(format!("line {}: {msg}: '{line}'", lineno + 1));
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| bad("expected a non-negative integer"))
        };
        match toks[0] {
            "n" if toks.len() == 2 => f.n = Some(num(toks[1])?),
            "d" if toks.len() == 2 => f.d = Some(num(toks[1])?),
            "class" if toks.len() == 2 => f.classes.push(unescape_token(toks[1])?),
            "part" if toks.len() == 2 => f.parts.push(PartDecl {
                name: unescape_token(toks[1])?,
                blocks: Vec::new(),
            }),
            "block" if toks.len() == 4 || (!strict && toks.len() == 3) => {
                let (offset, len) = if toks.len() == 4 {
                    (num(toks[2])?, num(toks[3])?)
                } else {
                    (next_offset, num(toks[2])?)
                };
                next_offset = offset + len;
                let part = f
                    .parts
                    .last_mut()
                    .ok_or_else(|| bad("block before any part"))?;
                part.blocks.push(BlockDecl {
                    modality: unescape_token(toks[1])?,
                    offset,
                    len,
                });
            }
            "sample" if toks.len() == 4 => {
                let subject = toks[3].parse::<u32>().map_err(|_| bad("bad subject id"))?;
                f.samples.push(SampleInfo {
                    id: unescape_token(toks[1])?,
                    label: num(toks[2])?,
                    subject,
                });
            }
            "note" if toks.len() == 2 => f.notes.push(unescape_token(toks[1])?),
            _ if !strict => f.extra.push(toks.iter().map(|t| t.to_string()).collect()),
            _ => return Err(bad("unrecognized header line")),
        }
    }
    Ok(f)
}

pub fn write_bundle(bundle: &FeatureBundle, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    fs::write(path, bundle.to_bytes()).map_err(|e| DataError::io(path, e))
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<FeatureBundle, DataError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    FeatureBundle::from_bytes(&bytes)
}

/// Imports a delimiter-separated matrix (comma, semicolon, tab or spaces; one
/// sample per row) described by a sidecar text file using the bundle header
/// syntax: `class`, `part`, `block <modality> [<offset>] <len>`,
/// `sample <id> <label> <subject>` and `note` lines.
pub fn import_text(
    matrix: impl AsRef<Path>,
    sidecar: impl AsRef<Path>,
) -> Result<FeatureBundle, DataError> {
    let (matrix, sidecar) = (matrix.as_ref(), sidecar.as_ref());
    let side = fs::read_to_string(sidecar).map_err(|e| DataError::io(sidecar, e))?;
    let lines: Vec<String> = side.lines().map(str::to_string).collect();
    let fields = parse_header(&lines, false)?;
    if let Some(extra) = fields.extra.first() {
        return Err(DataError::Parse {
            path: sidecar.display().to_string(),
            line: 0,
            msg: format!("unrecognized sidecar line '{}'", extra.join(" ")),
        });
    }
    let text = fs::read_to_string(matrix).map_err(|e| DataError::io(matrix, e))?;
    let mut values = Vec::new();
    let mut rows = 0;
    let mut cols: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let before = values.len();
        for tok in line
            .split(|c: char| c == ',' || c == ';' || c.is_whitespace())
            .filter(|t| !t.is_empty())
        {
            values.push(tok.parse::<f64>().map_err(|_| DataError::Parse {
                path: matrix.display().to_string(),
                line: lineno + 1,
                msg: format!("'{tok}' is not a number"),
            })?);
        }
        let width = values.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(DataError::Parse {
                    path: matrix.display().to_string(),
                    line: lineno + 1,
                    msg: format!("row has {width} values, expected {c}"),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    let d = cols.unwrap_or(0);
    let total = fields
        .parts
        .iter()
        .flat_map(|p| &p.blocks)
        .map(|b| b.offset + b.len)
        .max()
        .unwrap_or(0);
    let layout = validate_layout(LayoutDecl {
        total_dim: fields.d.unwrap_or(total),
        parts: fields.parts,
    })?;
    let x = Array2::from_shape_vec((rows, d), values).expect("row widths checked");
    FeatureBundle::new(x, layout, fields.samples, fields.classes, fields.notes)
}
