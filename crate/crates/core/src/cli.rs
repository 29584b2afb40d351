//! The `mmmp` command-line tool. Every command writes its outputs and an
//! echo of its effective configuration under `--out`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigError, RunConfig};
use crate::dataio::container::file_checksum;
use crate::dataio::{
    generate_synthetic, import_text, make_split, merge_modalities, read_bundle, write_bundle,
    DataError, FeatureBundle, Split, SplitRule,
};
use crate::layout::{FeatureLayout, LayoutError};
use crate::norms::{NormError, SmoothingConfig};
use crate::objective::{LabelMatrix, Objective, ObjectiveConfig, ObjectiveError, Variant};
use crate::optimizer::{check_gradient, OptimizeError};
use crate::skeleton::{encode_bundle, read_manifest, SkeletonError};
use crate::trainer::{
    cross_validate, evaluate, part_ranking_tsv, read_model, report_part_selection, select_lambda,
    train_full, write_model, Method, TrainError, LAMBDA_GRID,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub const BUNDLE_FILE: &str = "bundle.bin";
pub const MODEL_FILE: &str = "model.bin";
pub const CONFIG_ECHO: &str = "config.toml";

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: msg.into(),
        }
    }
    fn data(msg: impl ToString) -> Self {
        Self {
            code: EXIT_DATA,
            message: msg.to_string(),
        }
    }
    fn numeric(msg: impl ToString) -> Self {
        Self {
            code: EXIT_NUMERIC,
            message: msg.to_string(),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::data(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Data(d) => d.into(),
            other => CliError::usage(other.to_string()),
        }
    }
}

impl From<SkeletonError> for CliError {
    fn from(e: SkeletonError) -> Self {
        match e {
            SkeletonError::InvalidConfig(_) => CliError::usage(e.to_string()),
            SkeletonError::DegenerateSkeleton { .. } => CliError::numeric(e),
            _ => CliError::data(e),
        }
    }
}

fn objective_code(e: &ObjectiveError) -> i32 {
    match e {
        ObjectiveError::InvalidLambda { .. } | ObjectiveError::UnknownVariant(_) => EXIT_USAGE,
        ObjectiveError::Norm(n) => norm_code(n),
        ObjectiveError::ShapeMismatch(_)
        | ObjectiveError::InvalidLabels(_)
        | ObjectiveError::NotSingleModality
        | ObjectiveError::MissingAnchor
        | ObjectiveError::UnexpectedAnchor => EXIT_DATA,
    }
}

fn norm_code(e: &NormError) -> i32 {
    match e {
        NormError::ZeroEpsilon | NormError::InvalidEpsilon(_) | NormError::InvalidExponent(_) => {
            EXIT_USAGE
        }
        _ => EXIT_DATA,
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let code = match &e {
            TrainError::Data(_)
            | TrainError::Layout(_)
            | TrainError::UnknownModality(_)
            | TrainError::EmptySplit(_)
            | TrainError::ShapeMismatch(_) => EXIT_DATA,
            TrainError::InvalidConfig(_)
            | TrainError::Optimize(OptimizeError::InvalidConfig(_)) => EXIT_USAGE,
            TrainError::Objective(o) => objective_code(o),
            TrainError::Norm(n) => norm_code(n),
            TrainError::Optimize(_) | TrainError::SingularData(_) | TrainError::NonFiniteInput => {
                EXIT_NUMERIC
            }
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<LayoutError> for CliError {
    fn from(e: LayoutError) -> Self {
        CliError::data(e)
    }
}

impl From<ObjectiveError> for CliError {
    fn from(e: ObjectiveError) -> Self {
        CliError {
            code: objective_code(&e),
            message: e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "mmmp",
    version,
    about = "Structured-sparsity multimodal part learning"
)]
pub struct Cli {
    /// TOML config with [run], [train], [pyramid] and [synth] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode skeleton sequences listed in a manifest into a bundle.
    Encode {
        manifest: PathBuf,
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long)]
        coefficients: Option<usize>,
    },
    /// Import a delimiter-separated matrix with a layout sidecar.
    Import { matrix: PathBuf, sidecar: PathBuf },
    /// Merge single-modality bundles of the same samples.
    Merge {
        #[arg(required = true, num_args = 2..)]
        bundles: Vec<PathBuf>,
    },
    /// Generate a planted-support synthetic bundle.
    Synth(SynthArgs),
    /// Train on the training side of a split and report on its test side.
    Train {
        bundle: PathBuf,
        #[command(flatten)]
        opts: TrainArgs,
    },
    /// Evaluate a saved model on the test side of a split.
    Eval {
        model: PathBuf,
        bundle: PathBuf,
        #[arg(long)]
        split: Option<String>,
    },
    /// Train and evaluate every split of a rule (default: all 5-of-N).
    Cv {
        bundle: PathBuf,
        #[command(flatten)]
        opts: TrainArgs,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Pick lambda by grid search on an inner subject split.
    Select {
        bundle: PathBuf,
        #[command(flatten)]
        opts: TrainArgs,
    },
    /// Compare analytic and finite-difference gradients of every objective.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        points: usize,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
}

#[derive(Debug, Args, Default)]
pub struct SynthArgs {
    #[arg(long)]
    pub parts: Option<usize>,
    #[arg(long)]
    pub modalities: Option<usize>,
    #[arg(long)]
    pub noise_modalities: Option<usize>,
    #[arg(long)]
    pub block_dim: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub active_parts: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub subjects: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    /// l1, l2, mp, mmmp or single-modality.
    #[arg(long)]
    pub variant: Option<String>,
    /// Modality for single-modality training.
    #[arg(long)]
    pub modality: Option<String>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    #[arg(long)]
    pub lambda3: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Solve MMMP directly from zero instead of warm start plus fine-tune.
    #[arg(long)]
    pub no_two_step: bool,
    #[arg(long)]
    pub bias: bool,
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// first-five, first:K, odd, k-of-n:K, subjects:1,2,3 or file:PATH.
    #[arg(long)]
    pub split: Option<String>,
}

impl TrainArgs {
    fn apply(&self, cfg: &mut RunConfig) -> CliResult {
        let t = &mut cfg.train;
        if let Some(v) = &self.variant {
            t.method = v
                .parse::<Method>()
                .map_err(|e| CliError::usage(e.to_string()))?;
        }
        if let Some(m) = &self.modality {
            t.modality = Some(m.clone());
        }
        set(&mut t.lambda1, self.lambda1);
        set(&mut t.lambda2, self.lambda2);
        set(&mut t.lambda3, self.lambda3);
        set(&mut t.epsilon, self.epsilon);
        set(&mut t.optimizer.max_iters, self.max_iters);
        t.two_step &= !self.no_two_step;
        t.bias |= self.bias;
        t.standardize &= !self.no_standardize;
        if let Some(s) = &self.split {
            cfg.run.split = s.clone();
        }
        Ok(())
    }
}

fn set<T: Copy>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn write_out(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> CliResult {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::data(DataError::io(&path, e)))
}

fn load_bundle(path: &Path) -> CliResult<FeatureBundle> {
    Ok(read_bundle(path)?)
}

fn single_split(bundle: &FeatureBundle, rule: &SplitRule) -> CliResult<Split> {
    let mut splits = make_split(bundle, rule)?;
    if splits.len() != 1 {
        return Err(CliError::usage(format!(
            "split rule yields {} splits; use the cv command for multi-split rules",
            splits.len()
        )));
    }
    Ok(splits.remove(0))
}

pub fn execute(cli: &Cli) -> CliResult {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.run.seed, cli.seed);
    cfg.synth.seed = cfg.run.seed;
    let out = &cli.out;
    fs::create_dir_all(out).map_err(|e| CliError::data(DataError::io(out, e)))?;

    match &cli.command {
        Command::Encode {
            manifest,
            levels,
            coefficients,
        } => {
            set(&mut cfg.pyramid.levels, *levels);
            set(&mut cfg.pyramid.coefficients, *coefficients);
            cfg.pyramid.validate()?;
            let sequences = read_manifest(manifest)?;
            let bundle = encode_bundle(&sequences, &cfg.pyramid)?;
            finish_bundle(out, &bundle, &cfg)
        }
        Command::Import { matrix, sidecar } => {
            let bundle = import_text(matrix, sidecar)?;
            finish_bundle(out, &bundle, &cfg)
        }
        Command::Merge { bundles } => {
            let loaded = bundles
                .iter()
                .map(|p| load_bundle(p))
                .collect::<CliResult<Vec<_>>>()?;
            let bundle = merge_modalities(&loaded)?;
            finish_bundle(out, &bundle, &cfg)
        }
        Command::Synth(a) => {
            let s = &mut cfg.synth;
            set(&mut s.parts, a.parts);
            set(&mut s.modalities, a.modalities);
            set(&mut s.noise_modalities, a.noise_modalities);
            set(&mut s.block_dim, a.block_dim);
            set(&mut s.classes, a.classes);
            set(&mut s.n_train, a.n_train);
            set(&mut s.n_test, a.n_test);
            set(&mut s.active_parts, a.active_parts);
            set(&mut s.noise, a.noise);
            set(&mut s.subjects, a.subjects);
            let data = generate_synthetic(&cfg.synth).map_err(|e| match e {
                DataError::InvalidSpec(m) => CliError::usage(m),
                other => other.into(),
            })?;
            let mut truth = String::from("class\tactive_parts\n");
            for (c, parts) in data.active_parts.iter().enumerate() {
                let ids: Vec<String> = parts.iter().map(|p| p.to_string()).collect();
                let _ = writeln!(truth, "{}\t{}", data.bundle.class_names()[c], ids.join(","));
            }
            write_out(out, "truth.tsv", truth)?;
            finish_bundle(out, &data.bundle, &cfg)
        }
        Command::Train { bundle, opts } => {
            opts.apply(&mut cfg)?;
            let bundle = load_bundle(bundle)?;
            let split = single_split(&bundle, &cfg.split_rule()?)?;
            write_out(out, CONFIG_ECHO, cfg.to_toml())?;
            let outcome = train_full(&bundle, &split.train, &cfg.train)?;
            let model = &outcome.model;
            write_model(model, out.join(MODEL_FILE))?;
            write_out(
                out,
                "parts.tsv",
                part_ranking_tsv(&report_part_selection(model)),
            )?;
            let mut log = String::new();
            if let Some(warm) = &outcome.warm {
                for block in &warm.blocks {
                    let _ = writeln!(log, "# warm-start {}", block.modality);
                    log.push_str(&block.trace.to_log());
                }
                log.push_str("# fine-tune\n");
            }
            log.push_str(&outcome.trace.to_log());
            write_out(out, "trace.log", log)?;
            println!(
                "trained {} on {} samples: objective {:.6e} -> {:.6e} ({}, {} iterations)",
                cfg.train.method,
                split.train.len(),
                model.start_objective,
                model.final_objective,
                model.termination,
                model.iterations
            );
            if !split.test.is_empty() {
                let report = evaluate(model, &bundle, &split.test)?;
                write_out(out, "report.tsv", report.to_tsv())?;
                println!(
                    "test accuracy {:.2}% on {} samples",
                    100.0 * report.accuracy,
                    report.n
                );
            }
            Ok(())
        }
        Command::Eval {
            model,
            bundle,
            split,
        } => {
            if let Some(s) = split {
                cfg.run.split = s.clone();
            }
            let model = read_model(model)?;
            let bundle = load_bundle(bundle)?;
            let split = single_split(&bundle, &cfg.split_rule()?)?;
            write_out(out, CONFIG_ECHO, cfg.to_toml())?;
            let report = evaluate(&model, &bundle, &split.test)?;
            write_out(out, "report.tsv", report.to_tsv())?;
            println!(
                "test accuracy {:.2}% on {} samples",
                100.0 * report.accuracy,
                report.n
            );
            Ok(())
        }
        Command::Cv {
            bundle,
            opts,
            workers,
        } => {
            if opts.split.is_none() && cfg.run.split == RunConfig::default().run.split {
                cfg.run.split = "k-of-n:5".into();
            }
            opts.apply(&mut cfg)?;
            set(&mut cfg.run.workers, *workers);
            let bundle = load_bundle(bundle)?;
            let rule = cfg.split_rule()?;
            write_out(out, CONFIG_ECHO, cfg.to_toml())?;
            let summary = cross_validate(&bundle, &rule, &cfg.train, cfg.run.workers)?;
            write_out(out, "cv.tsv", summary.to_tsv())?;
            println!("{} splits: {}", summary.outcomes.len(), summary.formatted());
            Ok(())
        }
        Command::Select { bundle, opts } => {
            opts.apply(&mut cfg)?;
            let bundle = load_bundle(bundle)?;
            let split = single_split(&bundle, &cfg.split_rule()?)?;
            let (scores, chosen) = select_lambda(&bundle, &split.train, &cfg.train, &LAMBDA_GRID)?;
            let mut tsv = String::from("t\tlambda1\tlambda2\tvalidation_accuracy\n");
            for s in &scores {
                let _ = writeln!(
                    tsv,
                    "{:e}\t{:.6e}\t{:.6e}\t{:.6}",
                    s.t, s.lambda1, s.lambda2, s.accuracy
                );
            }
            write_out(out, "lambda.tsv", tsv)?;
            cfg.train = chosen;
            write_out(out, CONFIG_ECHO, cfg.to_toml())?;
            println!(
                "selected lambda1 {:.6e} lambda2 {:.6e}",
                cfg.train.lambda1, cfg.train.lambda2
            );
            Ok(())
        }
        Command::Gradcheck { points, tolerance } => {
            write_out(out, CONFIG_ECHO, cfg.to_toml())?;
            let results = gradcheck_suite(cfg.run.seed, *points)?;
            let mut tsv = String::from("variant\tmax_relative_error\n");
            let mut worst: f64 = 0.0;
            for (v, err) in &results {
                println!("{:<12} max relative error {err:.3e}", v.as_str());
                let _ = writeln!(tsv, "{}\t{err:.6e}", v.as_str());
                worst = worst.max(*err);
            }
            write_out(out, "gradcheck.tsv", tsv)?;
            if worst < *tolerance {
                Ok(())
            } else {
                Err(CliError::numeric(format!(
                    "gradient check failed: max error {worst:.3e} >= {tolerance:e}"
                )))
            }
        }
    }
}

fn finish_bundle(out: &Path, bundle: &FeatureBundle, cfg: &RunConfig) -> CliResult {
    write_bundle(bundle, out.join(BUNDLE_FILE))?;
    write_out(out, CONFIG_ECHO, cfg.to_toml())?;
    let bytes = bundle.to_bytes();
    println!(
        "wrote {} samples x {} features, {} parts, checksum {:08x}",
        bundle.num_samples(),
        bundle.num_features(),
        bundle.layout().num_parts(),
        file_checksum(&bytes)
    );
    Ok(())
}

/// Maximum relative gradient error of every objective variant over `points`
/// random problems (n=8, 4 parts x 2 modalities x 3 features, 3 classes).
pub fn gradcheck_suite(seed: u64, points: usize) -> CliResult<Vec<(Variant, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = FeatureLayout::uniform(4, &[("a", 3), ("b", 3)])?;
    let (sub, _) = layout.modality_sublayout("a")?;
    let (n, c) = (8, 3);
    let mut out = Vec::new();
    for variant in Variant::ALL {
        let lay = if variant == Variant::WarmStart {
            &sub
        } else {
            &layout
        };
        let d = lay.total_dim();
        let mut worst: f64 = 0.0;
        for _ in 0..points {
            let x = Array2::from_shape_simple_fn((n, d), || rng.gen_range(-1.0..1.0));
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
            let y = LabelMatrix::from_labels(&labels, c)?;
            let mut oc = ObjectiveConfig::new(variant);
            oc.lambda1 = rng.gen_range(0.1..2.0);
            oc.lambda2 = rng.gen_range(0.1..2.0);
            oc.lambda3 = rng.gen_range(0.1..2.0);
            oc.lambda_hat1 = rng.gen_range(0.1..2.0);
            oc.lambda_hat2 = rng.gen_range(0.1..2.0);
            oc.smoothing = SmoothingConfig::default();
            let anchor = Array2::from_shape_simple_fn((d, c), || rng.gen_range(-1.0..1.0));
            let anchor_view = (variant == Variant::FineTune).then(|| anchor.view());
            let obj = Objective::new(x.view(), &y, lay, oc, anchor_view)?;
            let w: Vec<f64> = (0..d * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
            worst = worst.max(check_gradient(|w, g| obj.eval_flat(w, g), &w, 1e-6));
        }
        out.push((variant, worst));
    }
    Ok(out)
}
