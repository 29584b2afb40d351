//! C ABI over `mmmp-core`.
//!
//! Bundles and models are opaque heap handles created by `*_read`,
//! `*_generate` or `*_train` and released with the matching `*_free`.
//! Every fallible call returns an [`MmmpStatus`]; on failure a description is
//! available from [`mmmp_last_error_message`] on the same thread until the
//! next failing call. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mmmp_core::dataio::{
    generate_synthetic, read_bundle, write_bundle, DataError, FeatureBundle, SyntheticSpec,
};
use mmmp_core::trainer::{
    evaluate, read_model, train, write_model, Method, TrainConfig, TrainError, TrainedModel,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmmpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Data = 5,
    Numerical = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MmmpMethod {
    L1 = 0,
    L2 = 1,
    Mp = 2,
    Mmmp = 3,
}

/// Training options; obtain defaults from [`mmmp_train_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MmmpTrainOptions {
    pub method: MmmpMethod,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub epsilon: f64,
    pub max_iters: u32,
    /// Nonzero: warm start per modality, then fine-tune (MMMP only).
    pub two_step: u8,
    pub standardize: u8,
    pub bias: u8,
}

/// Planted-support synthetic data parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct MmmpSyntheticSpec {
    pub parts: usize,
    pub modalities: usize,
    pub noise_modalities: usize,
    pub block_dim: usize,
    pub classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub active_parts: usize,
    pub noise: f64,
    pub subjects: usize,
    pub seed: u64,
}

/// Opaque feature bundle.
pub struct MmmpBundle(FeatureBundle);

/// Opaque trained model.
pub struct MmmpModel(TrainedModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(MmmpStatus, String);

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        let status = match e {
            DataError::Io { .. } => MmmpStatus::Io,
            DataError::Format(_) => MmmpStatus::Format,
            DataError::InvalidSpec(_) => MmmpStatus::InvalidArgument,
            _ => MmmpStatus::Data,
        };
        Failure(status, e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Data(d) => d.into(),
            TrainError::InvalidConfig(_) | TrainError::Norm(_) => {
                Failure(MmmpStatus::InvalidArgument, e.to_string())
            }
            TrainError::Optimize(_) | TrainError::SingularData(_) | TrainError::NonFiniteInput => {
                Failure(MmmpStatus::Numerical, e.to_string())
            }
            _ => Failure(MmmpStatus::Data, e.to_string()),
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(MmmpStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(MmmpStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting failures and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MmmpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MmmpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MmmpStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failure on this thread, or null if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mmmp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mmmp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be null or point to writable memory for one options struct.
#[no_mangle]
pub unsafe extern "C" fn mmmp_train_options_default(out: *mut MmmpTrainOptions) -> MmmpStatus {
    guard(|| {
        let d = TrainConfig::default();
        *out_arg(out, "out")? = MmmpTrainOptions {
            method: MmmpMethod::Mmmp,
            lambda1: d.lambda1,
            lambda2: d.lambda2,
            lambda3: d.lambda3,
            epsilon: d.epsilon,
            max_iters: d.optimizer.max_iters as u32,
            two_step: d.two_step as u8,
            standardize: d.standardize as u8,
            bias: d.bias as u8,
        };
        Ok(())
    })
}

/// # Safety
/// `out` must be null or point to writable memory for one spec struct.
#[no_mangle]
pub unsafe extern "C" fn mmmp_synthetic_spec_default(out: *mut MmmpSyntheticSpec) -> MmmpStatus {
    guard(|| {
        let s = SyntheticSpec::default();
        *out_arg(out, "out")? = MmmpSyntheticSpec {
            parts: s.parts,
            modalities: s.modalities,
            noise_modalities: s.noise_modalities,
            block_dim: s.block_dim,
            classes: s.classes,
            n_train: s.n_train,
            n_test: s.n_test,
            active_parts: s.active_parts,
            noise: s.noise,
            subjects: s.subjects,
            seed: s.seed,
        };
        Ok(())
    })
}

/// Generates a synthetic bundle. Training rows come first (`n_train` of
/// them), then test rows.
///
/// # Safety
/// `spec` must be null or valid; `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn mmmp_synthetic_generate(
    spec: *const MmmpSyntheticSpec,
    out: *mut *mut MmmpBundle,
) -> MmmpStatus {
    guard(|| {
        let s = spec.as_ref().ok_or_else(|| null("spec"))?;
        let out = out_arg(out, "out")?;
        let data = generate_synthetic(&SyntheticSpec {
            parts: s.parts,
            modalities: s.modalities,
            noise_modalities: s.noise_modalities,
            block_dim: s.block_dim,
            classes: s.classes,
            n_train: s.n_train,
            n_test: s.n_test,
            active_parts: s.active_parts,
            noise: s.noise,
            subjects: s.subjects,
            seed: s.seed,
        })?;
        *out = Box::into_raw(Box::new(MmmpBundle(data.bundle)));
        Ok(())
    })
}

/// # Safety
/// `path` must be null or a NUL-terminated string; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn mmmp_bundle_read(
    path: *const c_char,
    out: *mut *mut MmmpBundle,
) -> MmmpStatus {
    guard(|| {
        let path = path_arg(path)?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(MmmpBundle(read_bundle(path)?)));
        Ok(())
    })
}

/// # Safety
/// `bundle` must be null or a live handle; `path` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mmmp_bundle_write(
    bundle: *const MmmpBundle,
    path: *const c_char,
) -> MmmpStatus {
    guard(|| {
        let b = bundle.as_ref().ok_or_else(|| null("bundle"))?;
        write_bundle(&b.0, path_arg(path)?)?;
        Ok(())
    })
}

/// Releases a bundle; null is ignored.
///
/// # Safety
/// `bundle` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mmmp_bundle_free(bundle: *mut MmmpBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}

/// Sample count; 0 for null.
///
/// # Safety
/// `bundle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmmp_bundle_num_samples(bundle: *const MmmpBundle) -> usize {
    bundle.as_ref().map_or(0, |b| b.0.num_samples())
}

/// Feature count; 0 for null.
///
/// # Safety
/// `bundle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmmp_bundle_num_features(bundle: *const MmmpBundle) -> usize {
    bundle.as_ref().map_or(0, |b| b.0.num_features())
}

/// Class count; 0 for null.
///
/// # Safety
/// `bundle` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmmp_bundle_num_classes(bundle: *const MmmpBundle) -> usize {
    bundle.as_ref().map_or(0, |b| b.0.num_classes())
}

/// Copies row `row` into `out`, which must hold exactly
/// `mmmp_bundle_num_features` values, and optionally its label.
///
/// # Safety
/// `out` must be valid for `len` writes; `label` null or writable.
#[no_mangle]
pub unsafe extern "C" fn mmmp_bundle_row(
    bundle: *const MmmpBundle,
    row: usize,
    out: *mut f64,
    len: usize,
    label: *mut usize,
) -> MmmpStatus {
    guard(|| {
        let b = &bundle.as_ref().ok_or_else(|| null("bundle"))?.0;
        if row >= b.num_samples() {
            return Err(invalid(format!(
                "row {row} out of range ({} samples)",
                b.num_samples()
            )));
        }
        if len != b.num_features() {
            return Err(invalid(format!(
                "buffer holds {len} values, row has {}",
                b.num_features()
            )));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let dst = std::slice::from_raw_parts_mut(out, len);
        for (d, s) in dst.iter_mut().zip(b.x().row(row)) {
            *d = *s;
        }
        if let Some(l) = label.as_mut() {
            *l = b.samples()[row].label;
        }
        Ok(())
    })
}

fn train_config(o: &MmmpTrainOptions) -> TrainConfig {
    let mut cfg = TrainConfig {
        method: match o.method {
            MmmpMethod::L1 => Method::L1,
            MmmpMethod::L2 => Method::L2,
            MmmpMethod::Mp => Method::Mp,
            MmmpMethod::Mmmp => Method::Mmmp,
        },
        lambda1: o.lambda1,
        lambda2: o.lambda2,
        lambda3: o.lambda3,
        epsilon: o.epsilon,
        two_step: o.two_step != 0,
        standardize: o.standardize != 0,
        bias: o.bias != 0,
        ..TrainConfig::default()
    };
    cfg.optimizer.max_iters = o.max_iters as usize;
    cfg
}

/// Trains on the listed rows (all rows when `rows` is null and `n_rows` 0).
///
/// # Safety
/// Handles must be live; `rows` valid for `n_rows` reads; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mmmp_model_train(
    bundle: *const MmmpBundle,
    options: *const MmmpTrainOptions,
    rows: *const usize,
    n_rows: usize,
    out: *mut *mut MmmpModel,
) -> MmmpStatus {
    guard(|| {
        let b = &bundle.as_ref().ok_or_else(|| null("bundle"))?.0;
        let opts = options.as_ref().ok_or_else(|| null("options"))?;
        let out = out_arg(out, "out")?;
        let all: Vec<usize>;
        let rows = if rows.is_null() && n_rows == 0 {
            all = (0..b.num_samples()).collect();
            &all[..]
        } else {
            slice_arg(rows, n_rows, "rows")?
        };
        let model = train(b, rows, &train_config(opts))?;
        *out = Box::into_raw(Box::new(MmmpModel(model)));
        Ok(())
    })
}

/// # Safety
/// `path` null or NUL-terminated; `out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn mmmp_model_read(
    path: *const c_char,
    out: *mut *mut MmmpModel,
) -> MmmpStatus {
    guard(|| {
        let path = path_arg(path)?;
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(MmmpModel(read_model(path)?)));
        Ok(())
    })
}

/// # Safety
/// `model` null or live; `path` null or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mmmp_model_write(
    model: *const MmmpModel,
    path: *const c_char,
) -> MmmpStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        write_model(&m.0, path_arg(path)?)?;
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mmmp_model_free(model: *mut MmmpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmmp_model_num_classes(model: *const MmmpModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.num_classes())
}

/// Length of the raw feature vectors `mmmp_model_predict` expects.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmmp_model_num_features(model: *const MmmpModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.input_dim())
}

/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmmp_model_num_parts(model: *const MmmpModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.layout.num_parts())
}

/// Predicts the class of one raw feature vector. `scores` may be null;
/// otherwise it receives `scores_len == num_classes` values.
///
/// # Safety
/// `x` valid for `len` reads; `class_out` writable; `scores` null or valid
/// for `scores_len` writes.
#[no_mangle]
pub unsafe extern "C" fn mmmp_model_predict(
    model: *const MmmpModel,
    x: *const f64,
    len: usize,
    class_out: *mut usize,
    scores: *mut f64,
    scores_len: usize,
) -> MmmpStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let x = slice_arg(x, len, "x")?;
        let class_out = out_arg(class_out, "class_out")?;
        let p = m.predict(x)?;
        if !scores.is_null() {
            if scores_len != p.scores.len() {
                return Err(invalid(format!(
                    "scores buffer holds {scores_len}, need {}",
                    p.scores.len()
                )));
            }
            std::slice::from_raw_parts_mut(scores, scores_len).copy_from_slice(&p.scores);
        }
        *class_out = p.class;
        Ok(())
    })
}

/// Magnitude of `part` in the weights of `class`.
///
/// # Safety
/// `model` null or live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mmmp_model_part_activation(
    model: *const MmmpModel,
    class: usize,
    part: usize,
    out: *mut f64,
) -> MmmpStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let out = out_arg(out, "out")?;
        let a = &m.part_activations;
        if class >= a.nrows() || part >= a.ncols() {
            return Err(invalid(format!("class {class} / part {part} out of range")));
        }
        *out = a[[class, part]];
        Ok(())
    })
}

/// Accuracy of the model on the listed rows of a bundle.
///
/// # Safety
/// Handles live; `rows` valid for `n_rows` reads; `accuracy` writable.
#[no_mangle]
pub unsafe extern "C" fn mmmp_model_evaluate(
    model: *const MmmpModel,
    bundle: *const MmmpBundle,
    rows: *const usize,
    n_rows: usize,
    accuracy: *mut f64,
) -> MmmpStatus {
    guard(|| {
        let m = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let b = &bundle.as_ref().ok_or_else(|| null("bundle"))?.0;
        let rows = slice_arg(rows, n_rows, "rows")?;
        let acc = out_arg(accuracy, "accuracy")?;
        *acc = evaluate(m, b, rows)?.accuracy;
        Ok(())
    })
}
