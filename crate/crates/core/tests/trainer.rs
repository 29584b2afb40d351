use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mmmp_core::dataio::{
    generate_synthetic, FeatureBundle, SampleInfo, SplitRule, SyntheticData, SyntheticSpec,
};
use mmmp_core::layout::FeatureLayout;
use mmmp_core::trainer::{
    argmax, cross_validate, evaluate, report_part_selection, train, train_full, train_mmmp,
    train_single_modality, warm_start, Method, TrainConfig, TrainedModel,
};

fn bundle_from(
    x: Array2<f64>,
    layout: FeatureLayout,
    labels: &[usize],
    classes: usize,
) -> FeatureBundle {
    let samples = labels
        .iter()
        .enumerate()
        .map(|(i, &label)| SampleInfo {
            id: format!("s{i}"),
            label,
            subject: 1 + (i % 4) as u32,
        })
        .collect();
    let names = (0..classes).map(|c| format!("c{c}")).collect();
    FeatureBundle::new(x, layout, samples, names, vec![]).unwrap()
}

fn small_synthetic(seed: u64, noise_modalities: usize) -> SyntheticData {
    generate_synthetic(&SyntheticSpec {
        parts: 5,
        modalities: 2,
        noise_modalities,
        block_dim: 3,
        classes: 3,
        n_train: 150,
        n_test: 150,
        active_parts: 2,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn all_rows(b: &FeatureBundle) -> Vec<usize> {
    (0..b.num_samples()).collect()
}

#[test]
fn separable_pair_is_fit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 40;
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    let x = Array2::from_shape_fn((n, 2), |(i, k)| {
        let sign = if labels[i] == 0 { -1.0 } else { 1.0 };
        if k == 0 {
            sign * rng.gen_range(1.0..2.0)
        } else {
            rng.gen_range(-0.1..0.1)
        }
    });
    let bundle = bundle_from(
        x,
        FeatureLayout::uniform(1, &[("m", 2)]).unwrap(),
        &labels,
        2,
    );
    let rows = all_rows(&bundle);
    for method in [Method::L1, Method::L2, Method::Mp, Method::Mmmp] {
        let cfg = TrainConfig {
            lambda1: 0.01,
            lambda2: 0.1,
            ..TrainConfig::default().with_method(method)
        };
        let model = train(&bundle, &rows, &cfg).unwrap();
        assert_eq!(
            evaluate(&model, &bundle, &rows).unwrap().accuracy,
            1.0,
            "{method}"
        );
    }
    let block = train_single_modality(&bundle, &rows, "m", &TrainConfig::default()).unwrap();
    assert_eq!(block.weights.dim(), (2, 2));
}

#[test]
fn huge_part_penalty_suppresses_every_part() {
    let data = small_synthetic(2, 0);
    let n = data.train.len() as f64;
    let cfg = TrainConfig {
        lambda_hat1: Some(0.0),
        lambda_hat2: Some(1e6 * n),
        ..TrainConfig::default()
    };
    let block = train_single_modality(&data.bundle, &data.train, "m0", &cfg).unwrap();
    let layout = data.bundle.layout();
    let (sub, _) = layout.modality_sublayout("m0").unwrap();
    for c in 0..3 {
        for p in 0..sub.num_parts() {
            let mag: f64 = sub
                .block_ranges(p)
                .unwrap()
                .iter()
                .flat_map(|b| b.range())
                .map(|k| block.weights[[k, c]].powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(mag < 1e-6, "class {c} part {p}: {mag:e}");
        }
    }
}

#[test]
fn huge_proximity_weight_keeps_the_warm_start() {
    let data = small_synthetic(3, 0);
    let cfg = TrainConfig {
        lambda3: 1e10,
        ..TrainConfig::default()
    };
    let warm = warm_start(&data.bundle, &data.train, &cfg).unwrap();
    let anchor = warm.stack(data.bundle.num_features(), 3).unwrap();
    let model = train_mmmp(&data.bundle, &data.train, &cfg, Some(&warm)).unwrap();
    let dist = (&model.weights - &anchor)
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    assert!(dist < 1e-4, "{dist:e}");
    assert!(model.final_objective <= model.start_objective);
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Array2<f64>, mut b: Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))
            .unwrap();
        for k in 0..n {
            a.swap([col, k], [piv, k]);
        }
        for k in 0..b.ncols() {
            b.swap([col, k], [piv, k]);
        }
        for r in col + 1..n {
            let f = a[[r, col]] / a[[col, col]];
            for k in col..n {
                a[[r, k]] -= f * a[[col, k]];
            }
            for k in 0..b.ncols() {
                b[[r, k]] -= f * b[[col, k]];
            }
        }
    }
    let mut x = Array2::zeros(b.dim());
    for r in (0..n).rev() {
        for k in 0..b.ncols() {
            let s: f64 = (r + 1..n).map(|j| a[[r, j]] * x[[j, k]]).sum();
            x[[r, k]] = (b[[r, k]] - s) / a[[r, r]];
        }
    }
    x
}

#[test]
fn zero_lambdas_give_least_squares() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (n, d, c) = (60, 8, 3);
    let x = Array2::from_shape_simple_fn((n, d), || rng.sample::<f64, _>(StandardNormal));
    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let bundle = bundle_from(
        x.clone(),
        FeatureLayout::uniform(2, &[("a", 2), ("b", 2)]).unwrap(),
        &labels,
        c,
    );
    let mut cfg = TrainConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        two_step: false,
        standardize: false,
        ..TrainConfig::default()
    };
    cfg.optimizer.grad_tol = 1e-11;
    cfg.optimizer.f_tol = 1e-16;
    cfg.optimizer.max_iters = 2000;
    let model = train(&bundle, &all_rows(&bundle), &cfg).unwrap();

    let y = Array2::from_shape_fn((n, c), |(i, k)| f64::from(labels[i] == k));
    let expected = solve_dense(x.t().dot(&x), x.t().dot(&y));
    let scale = expected.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in model.weights.iter().zip(expected.iter()) {
        assert!((a - b).abs() <= 1e-6 * scale, "{a} vs {b}");
    }
}

/// Mean `||w_c^{j,m}||_4` over every (class, part) block of one modality.
fn mean_block_magnitude(model: &TrainedModel, modality: &str) -> f64 {
    let layout = &model.layout;
    let mut total = 0.0;
    let mut count = 0;
    for block in layout.blocks() {
        if layout.modality_of(&block) != modality {
            continue;
        }
        for c in 0..model.num_classes() {
            let s: f64 = block.range().map(|k| model.weights[[k, c]].powi(4)).sum();
            total += s.powf(0.25);
            count += 1;
        }
    }
    total / count as f64
}

/// The part-level hierarchy couples a part's modalities through an L2 norm,
/// which shrinks a noise block inside an active part but cannot zero it; the
/// row-wise multitask term does the rest. At the default weights the noise
/// modality ends up well below the informative ones, though not below a
/// quarter of them.
#[test]
fn noise_modality_carries_less_weight() {
    let mut ratio = 0.0;
    for seed in 0..3 {
        let data = generate_synthetic(&SyntheticSpec {
            noise_modalities: 1,
            seed,
            ..Default::default()
        })
        .unwrap();
        let model = train(&data.bundle, &data.train, &TrainConfig::default()).unwrap();
        let informative =
            (mean_block_magnitude(&model, "m0") + mean_block_magnitude(&model, "m1")) / 2.0;
        ratio += mean_block_magnitude(&model, "noise0") / informative / 3.0;
    }
    assert!(ratio < 0.75, "noise/informative magnitude ratio {ratio:.3}");

    // a stronger multitask weight pushes the noise modality down further
    let data = generate_synthetic(&SyntheticSpec {
        noise_modalities: 1,
        seed: 0,
        ..Default::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        lambda1: 40.0,
        ..TrainConfig::default()
    };
    let model = train(&data.bundle, &data.train, &cfg).unwrap();
    let strong = mean_block_magnitude(&model, "noise0")
        / ((mean_block_magnitude(&model, "m0") + mean_block_magnitude(&model, "m1")) / 2.0);
    assert!(strong < ratio, "{strong:.3} vs {ratio:.3}");
}

#[test]
fn permuting_classes_permutes_weight_columns() {
    let data = small_synthetic(6, 0);
    let perm = [2usize, 0, 1];
    let b = &data.bundle;
    let samples: Vec<SampleInfo> = b
        .samples()
        .iter()
        .map(|s| SampleInfo {
            label: perm[s.label],
            ..s.clone()
        })
        .collect();
    let mut names = vec![String::new(); 3];
    for (c, name) in b.class_names().iter().enumerate() {
        names[perm[c]] = name.clone();
    }
    let permuted =
        FeatureBundle::new(b.x().clone(), b.layout().clone(), samples, names, vec![]).unwrap();
    let cfg = TrainConfig::default();
    let m1 = train(b, &data.train, &cfg).unwrap();
    let m2 = train(&permuted, &data.train, &cfg).unwrap();
    let scale = m1.weights.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (c, &pc) in perm.iter().enumerate() {
        for (x, y) in m1
            .weights
            .column(c)
            .iter()
            .zip(m2.weights.column(pc).iter())
        {
            assert!((x - y).abs() <= 1e-6 * scale, "class {c}: {x} vs {y}");
        }
        for (x, y) in m1
            .part_activations
            .row(c)
            .iter()
            .zip(m2.part_activations.row(perm[c]).iter())
        {
            assert!((x - y).abs() <= 1e-6 * scale);
        }
    }
}

#[test]
fn predictions_survive_positive_rescaling() {
    let data = small_synthetic(7, 0);
    let model = train(&data.bundle, &data.train, &TrainConfig::default()).unwrap();
    let before = model
        .predict_rows(data.bundle.x().select(Axis(0), &data.test).view())
        .unwrap();
    for alpha in [1e-3, 0.5, 7.0, 1e4] {
        let mut scaled = model.clone();
        scaled.weights *= alpha;
        let after = scaled
            .predict_rows(data.bundle.x().select(Axis(0), &data.test).view())
            .unwrap();
        assert_eq!(before, after, "alpha {alpha}");
    }
    assert_eq!(argmax(&[0.2, 0.9, 0.1]), 1);
    assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
}

#[test]
fn zero_model_predicts_the_first_class() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 40;
    let labels: Vec<usize> = (0..n).map(|i| i % 4).collect();
    let x = Array2::from_shape_simple_fn((n, 4), || rng.sample::<f64, _>(StandardNormal));
    let bundle = bundle_from(
        x,
        FeatureLayout::uniform(2, &[("m", 2)]).unwrap(),
        &labels,
        4,
    );
    let rows = all_rows(&bundle);
    let mut model = train(&bundle, &rows, &TrainConfig::default()).unwrap();
    model.weights.fill(0.0);
    let report = evaluate(&model, &bundle, &rows).unwrap();
    assert_eq!(report.accuracy, 0.25);
    assert_eq!(report.confusion.column(0).sum(), n);
    for c in 0..4 {
        assert_eq!(report.confusion.row(c).sum(), 10);
    }
}

#[test]
fn training_is_deterministic_and_models_round_trip() {
    let data = small_synthetic(9, 1);
    let cfg = TrainConfig::default();
    let a = train_full(&data.bundle, &data.train, &cfg).unwrap();
    let b = train_full(&data.bundle, &data.train, &cfg).unwrap();
    assert_eq!(a.model.to_bytes(), b.model.to_bytes());
    assert!(a.trace.is_monotone());
    assert!(a
        .warm
        .as_ref()
        .unwrap()
        .blocks
        .iter()
        .all(|w| w.trace.is_monotone()));
    assert_eq!(a.warm.as_ref().unwrap().blocks.len(), 3);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    mmmp_core::trainer::write_model(&a.model, &path).unwrap();
    let back = mmmp_core::trainer::read_model(&path).unwrap();
    assert_eq!(back, a.model);
}

#[test]
fn every_method_descends_from_its_start() {
    let data = small_synthetic(10, 0);
    for method in [Method::L1, Method::L2, Method::Mp, Method::Mmmp] {
        for two_step in [true, false] {
            let cfg = TrainConfig {
                two_step,
                ..TrainConfig::default().with_method(method)
            };
            let model = train(&data.bundle, &data.train, &cfg).unwrap();
            assert!(
                model.final_objective <= model.start_objective,
                "{method} two_step={two_step}"
            );
        }
    }
}

#[test]
fn rankings_are_sorted_and_cover_all_parts() {
    let data = small_synthetic(11, 0);
    let model = train(&data.bundle, &data.train, &TrainConfig::default()).unwrap();
    for r in report_part_selection(&model) {
        assert_eq!(r.parts.len(), 5);
        assert!(r.parts.windows(2).all(|w| w[0].2 >= w[1].2));
        let f = r.top_k_fraction(5);
        assert!((f - 1.0).abs() < 1e-12 || r.total() == 0.0);
    }
}

#[test]
fn worker_count_does_not_change_results() {
    let data = generate_synthetic(&SyntheticSpec {
        parts: 2,
        modalities: 1,
        block_dim: 2,
        classes: 2,
        n_train: 30,
        n_test: 30,
        active_parts: 1,
        subjects: 6,
        seed: 12,
        ..Default::default()
    })
    .unwrap();
    let rule = SplitRule::AllKOfN(3);
    let cfg = TrainConfig::default().with_method(Method::Mp);
    let one = cross_validate(&data.bundle, &rule, &cfg, 1).unwrap();
    let four = cross_validate(&data.bundle, &rule, &cfg, 4).unwrap();
    assert_eq!(one, four);
    assert_eq!(one.outcomes.len(), 20);
}

#[test]
fn bias_column_is_learned_and_not_standardized() {
    let data = small_synthetic(13, 0);
    let cfg = TrainConfig {
        bias: true,
        ..TrainConfig::default()
    };
    let model = train(&data.bundle, &data.train, &cfg).unwrap();
    assert_eq!(model.weights.nrows(), data.bundle.num_features() + 1);
    assert_eq!(model.input_dim(), data.bundle.num_features());
    let acc = evaluate(&model, &data.bundle, &data.test).unwrap().accuracy;
    assert!(acc > 1.0 / 3.0, "{acc}");
}
