use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::{Array2, Axis};

use super::{train, TrainConfig, TrainError, TrainedModel};
use crate::dataio::{make_split, FeatureBundle, SplitRule};

/// Test-set accuracy with its per-class breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `None` for classes absent from the test rows.
    pub per_class: Vec<Option<f64>>,
    /// Rows are true classes, columns predictions.
    pub confusion: Array2<usize>,
    pub n: usize,
    pub class_names: Vec<String>,
}

impl EvalReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "metric\tclass\tvalue");
        let _ = writeln!(s, "accuracy\tall\t{:.6}", self.accuracy);
        let _ = writeln!(s, "samples\tall\t{}", self.n);
        for (c, acc) in self.per_class.iter().enumerate() {
            let v = acc
                .map(|a| format!("{a:.6}"))
                .unwrap_or_else(|| "nan".into());
            let _ = writeln!(s, "class_accuracy\t{}\t{v}", self.class_names[c]);
        }
        for (c, row) in self.confusion.axis_iter(Axis(0)).enumerate() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "confusion\t{}\t{}", self.class_names[c], cells.join(","));
        }
        s
    }
}

/// Scores the model on the listed rows of `bundle`.
pub fn evaluate(
    model: &TrainedModel,
    bundle: &FeatureBundle,
    test: &[usize],
) -> Result<EvalReport, TrainError> {
    if test.is_empty() {
        return Err(TrainError::EmptySplit("test"));
    }
    let c = model.num_classes();
    if bundle.num_classes() != c {
        return Err(TrainError::ShapeMismatch(format!(
            "bundle has {} classes, model has {c}",
            bundle.num_classes()
        )));
    }
    if let Some(&bad) = test.iter().find(|&&i| i >= bundle.num_samples()) {
        return Err(TrainError::ShapeMismatch(format!(
            "test index {bad} out of range"
        )));
    }
    let x = bundle.x().select(Axis(0), test);
    let predicted = model.predict_rows(x.view())?;
    let mut confusion = Array2::zeros((c, c));
    for (&i, &p) in test.iter().zip(&predicted) {
        confusion[[bundle.samples()[i].label, p]] += 1;
    }
    let correct: usize = (0..c).map(|k| confusion[[k, k]]).sum();
    let per_class = (0..c)
        .map(|k| {
            let total: usize = confusion.row(k).sum();
            (total > 0).then(|| confusion[[k, k]] as f64 / total as f64)
        })
        .collect();
    Ok(EvalReport {
        accuracy: correct as f64 / test.len() as f64,
        per_class,
        confusion,
        n: test.len(),
        class_names: model.class_names.clone(),
    })
}

/// Parts of one class ordered by decreasing magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct PartRanking {
    pub class: usize,
    pub class_name: String,
    /// `(part index, part name, magnitude)`, largest first, ties in index order.
    pub parts: Vec<(usize, String, f64)>,
}

impl PartRanking {
    pub fn total(&self) -> f64 {
        self.parts.iter().map(|p| p.2).sum()
    }

    /// Share of the class's total magnitude held by its `k` strongest parts;
    /// 0 for an all-zero class.
    pub fn top_k_fraction(&self, k: usize) -> f64 {
        let total = self.total();
        if total <= 0.0 {
            return 0.0;
        }
        self.parts.iter().take(k).map(|p| p.2).sum::<f64>() / total
    }

    pub fn top_k(&self, k: usize) -> Vec<usize> {
        self.parts.iter().take(k).map(|p| p.0).collect()
    }
}

pub fn report_part_selection(model: &TrainedModel) -> Vec<PartRanking> {
    let act = &model.part_activations;
    (0..act.nrows())
        .map(|c| {
            let mut parts: Vec<(usize, String, f64)> = (0..act.ncols())
                .map(|j| (j, model.layout.part_name(j).to_string(), act[[c, j]]))
                .collect();
            parts.sort_by(|a, b| b.2.total_cmp(&a.2));
            PartRanking {
                class: c,
                class_name: model.class_names[c].clone(),
                parts,
            }
        })
        .collect()
}

/// Tabular part rankings: class, rank, part, magnitude, cumulative share.
pub fn part_ranking_tsv(rankings: &[PartRanking]) -> String {
    let mut s = String::from("class\trank\tpart\tmagnitude\tcumulative_fraction\n");
    for r in rankings {
        for (rank, (_, name, mag)) in r.parts.iter().enumerate() {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{:.6e}\t{:.6}",
                r.class_name,
                rank + 1,
                name,
                mag,
                r.top_k_fraction(rank + 1)
            );
        }
    }
    s
}

/// One train/test evaluation within a cross-validation sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub train_subjects: Vec<u32>,
    pub test_subjects: Vec<u32>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvSummary {
    pub outcomes: Vec<SplitOutcome>,
    pub mean: f64,
    /// Sample standard deviation; 0 with a single split.
    pub std: f64,
}

impl CvSummary {
    pub fn from_outcomes(outcomes: Vec<SplitOutcome>) -> Self {
        let n = outcomes.len() as f64;
        let mean = outcomes.iter().map(|o| o.accuracy).sum::<f64>() / n.max(1.0);
        let std = if outcomes.len() > 1 {
            (outcomes
                .iter()
                .map(|o| (o.accuracy - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0))
                .sqrt()
        } else {
            0.0
        };
        Self {
            outcomes,
            mean,
            std,
        }
    }

    /// Percentages as `mean±std%`.
    pub fn formatted(&self) -> String {
        format_mean_std(self.mean, self.std)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("split\ttrain_subjects\ttest_subjects\taccuracy\n");
        let ids = |v: &[u32]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        for (i, o) in self.outcomes.iter().enumerate() {
            let _ = writeln!(
                s,
                "{i}\t{}\t{}\t{:.6}",
                ids(&o.train_subjects),
                ids(&o.test_subjects),
                o.accuracy
            );
        }
        let _ = writeln!(s, "# mean_std {}", self.formatted());
        s
    }
}

/// Fractions rendered as percentages with two decimals, e.g. `74.86±2.34%`.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{:.2}±{:.2}%", 100.0 * mean, 100.0 * std)
}

/// Trains and scores every split of `rule` using up to `workers` threads.
/// Results keep split order regardless of scheduling.
pub fn cross_validate(
    bundle: &FeatureBundle,
    rule: &SplitRule,
    cfg: &TrainConfig,
    workers: usize,
) -> Result<CvSummary, TrainError> {
    let splits = make_split(bundle, rule)?;
    let slots: Vec<Mutex<Option<Result<SplitOutcome, TrainError>>>> =
        splits.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = workers.clamp(1, splits.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(split) = splits.get(i) else { break };
                let outcome = train(bundle, &split.train, cfg).and_then(|model| {
                    let report = evaluate(&model, bundle, &split.test)?;
                    Ok(SplitOutcome {
                        train_subjects: split.train_subjects.clone(),
                        test_subjects: split.test_subjects.clone(),
                        accuracy: report.accuracy,
                    })
                });
                *slots[i].lock().expect("slot lock") = Some(outcome);
            });
        }
    });
    let outcomes = slots
        .into_iter()
        .map(|m| {
            m.into_inner()
                .expect("slot lock")
                .expect("every split visited")
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CvSummary::from_outcomes(outcomes))
}

/// Validation accuracy of one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaScore {
    pub t: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub accuracy: f64,
}

/// Default multipliers at half-decade spacing. Each is scaled by a sample
/// count because the loss is a sum over samples.
pub const LAMBDA_GRID: [f64; 11] = [1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1, 1.0, 3.0, 1e1, 3e1, 1e2];

/// Grid search over `t`, setting `lambda2 = t * n_inner` and keeping the
/// configured `lambda1 / lambda2` ratio. The training rows are divided by
/// subject: the lower half of their sorted subject ids fits, the rest
/// validates. Returns all scores and the configuration for the best `t`
/// (earliest grid point on ties), rescaled to the full training-set size.
pub fn select_lambda(
    bundle: &FeatureBundle,
    train_rows: &[usize],
    cfg: &TrainConfig,
    grid: &[f64],
) -> Result<(Vec<LambdaScore>, TrainConfig), TrainError> {
    if train_rows.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    let mut subjects: Vec<u32> = train_rows
        .iter()
        .map(|&i| bundle.samples()[i].subject)
        .collect();
    subjects.sort_unstable();
    subjects.dedup();
    if subjects.len() < 2 {
        return Err(TrainError::EmptySplit("validation"));
    }
    let fit_subjects = &subjects[..subjects.len() / 2];
    let (inner, validation): (Vec<usize>, Vec<usize>) = train_rows
        .iter()
        .partition(|&&i| fit_subjects.contains(&bundle.samples()[i].subject));
    let ratio = if cfg.lambda2 > 0.0 {
        cfg.lambda1 / cfg.lambda2
    } else {
        0.0
    };
    let candidate = |t: f64, scale: f64| TrainConfig {
        lambda1: ratio * t * scale,
        lambda2: t * scale,
        lambda_hat1: None,
        lambda_hat2: None,
        ..cfg.clone()
    };
    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &t in grid {
        let trial = candidate(t, inner.len() as f64);
        let model = train(bundle, &inner, &trial)?;
        let acc = evaluate(&model, bundle, &validation)?.accuracy;
        log::info!("lambda grid t={t:e}: validation accuracy {acc:.4}");
        scores.push(LambdaScore {
            t,
            lambda1: trial.lambda1,
            lambda2: trial.lambda2,
            accuracy: acc,
        });
        if best.as_ref().is_none_or(|(a, _)| acc > *a) {
            best = Some((acc, t));
        }
    }
    let (_, t) = best.ok_or_else(|| TrainError::InvalidConfig("empty lambda grid".into()))?;
    Ok((scores, candidate(t, train_rows.len() as f64)))
}
