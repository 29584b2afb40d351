//! Acceptance suite. Runs every criterion, prints one `PASS`/`FAIL` line per
//! criterion and exits nonzero when any criterion fails.
//!
//! Values are checked against oracles written here from the definitions
//! (explicit loops, direct DFT sums, central differences), never against the
//! library's own helpers.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mmmp_core::dataio::{
    generate_synthetic, make_split, FeatureBundle, SampleInfo, SplitRule, SyntheticData,
    SyntheticSpec,
};
use mmmp_core::layout::FeatureLayout;
use mmmp_core::norms::{norm_lq_lp, norm_lr_lq_lp, norm_value, NormSpec, SmoothingConfig};
use mmmp_core::objective::{LabelMatrix, Objective, ObjectiveConfig, Variant};
use mmmp_core::optimizer::{minimize, OptimizerConfig, Termination};
use mmmp_core::skeleton::{
    fourier_temporal_pyramid, normalize_skeleton, Frame, PyramidConfig, SkeletonSequence,
    HIP_CENTER, HIP_LEFT, HIP_RIGHT, NUM_JOINTS, SPINE,
};
use mmmp_core::trainer::{
    cross_validate, evaluate, prepare, report_part_selection, select_lambda, solve, train,
    train_full, Method, TrainConfig, TrainOutcome, LAMBDA_GRID,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn randn(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.sample::<f64, _>(StandardNormal))
}

fn random_labels(rng: &mut ChaCha8Rng, n: usize, classes: usize) -> LabelMatrix {
    // every class appears at least once
    let labels: Vec<usize> = (0..n)
        .map(|i| {
            if i < classes {
                i
            } else {
                rng.gen_range(0..classes)
            }
        })
        .collect();
    LabelMatrix::from_labels(&labels, classes).unwrap()
}

fn objective_config(variant: Variant, eps: f64) -> ObjectiveConfig {
    ObjectiveConfig {
        lambda1: 0.7,
        lambda2: 1.3,
        lambda3: 0.4,
        lambda_hat1: 0.9,
        lambda_hat2: 1.1,
        variant,
        smoothing: SmoothingConfig::new(eps).unwrap(),
    }
}

// ---------------------------------------------------------------------------
// 1. gradient correctness

fn central_difference_error(obj: &Objective<'_>, w: &Array2<f64>) -> f64 {
    let (_, analytic) = obj.value_and_gradient(w.view()).unwrap();
    let h = 1e-6;
    let mut probe = w.clone();
    let mut worst: f64 = 0.0;
    for k in 0..w.nrows() {
        for c in 0..w.ncols() {
            let orig = probe[[k, c]];
            probe[[k, c]] = orig + h;
            let up = obj.value(probe.view()).unwrap();
            probe[[k, c]] = orig - h;
            let down = obj.value(probe.view()).unwrap();
            probe[[k, c]] = orig;
            let fd = (up - down) / (2.0 * h);
            let g = analytic[[k, c]];
            worst = worst.max((g - fd).abs() / g.abs().max(fd.abs()).max(1.0));
        }
    }
    worst
}

fn criterion_gradients() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    // P=4 parts x M=2 modalities x 3 features: d=24
    let layout = FeatureLayout::uniform(4, &[("a", 3), ("b", 3)]).unwrap();
    let (sub, cols) = layout.modality_sublayout("a").unwrap();
    let (n, c) = (8, 3);
    let mut worst = vec![0.0f64; Variant::ALL.len()];
    for _ in 0..20 {
        let x = randn(&mut rng, (n, 24));
        let y = random_labels(&mut rng, n, c);
        let w = randn(&mut rng, (24, c));
        let anchor = randn(&mut rng, (24, c));
        let x_sub = x.select(Axis(1), &cols);
        let w_sub = w.select(Axis(0), &cols);
        for (vi, &variant) in Variant::ALL.iter().enumerate() {
            let cfg = objective_config(variant, 1e-8);
            let err = match variant {
                Variant::WarmStart => {
                    let obj = Objective::new(x_sub.view(), &y, &sub, cfg, None).unwrap();
                    central_difference_error(&obj, &w_sub)
                }
                Variant::FineTune => {
                    let obj =
                        Objective::new(x.view(), &y, &layout, cfg, Some(anchor.view())).unwrap();
                    central_difference_error(&obj, &w)
                }
                _ => {
                    let obj = Objective::new(x.view(), &y, &layout, cfg, None).unwrap();
                    central_difference_error(&obj, &w)
                }
            };
            worst[vi] = worst[vi].max(err);
        }
    }
    let max = worst.iter().cloned().fold(0.0, f64::max);
    let per: Vec<String> = Variant::ALL
        .iter()
        .zip(&worst)
        .map(|(v, e)| format!("{v}={e:.1e}"))
        .collect();
    verdict(
        max < 1e-5,
        format!("max relative error {max:.2e} < 1e-5 [{}]", per.join(" ")),
    )
}

// ---------------------------------------------------------------------------
// 2. norm identities

/// `(sum_i (sum_j (sum_k |z_k|^r)^(q/r))^(p/q))^(1/p)` by explicit loops.
fn oracle_three_level(z: &[f64], groups: &[Vec<Vec<usize>>], r: f64, q: f64, p: f64) -> f64 {
    let mut total = 0.0;
    for set in groups {
        let mut inner = 0.0;
        for subset in set {
            let mut s = 0.0;
            for &k in subset {
                s += z[k].abs().powf(r);
            }
            inner += s.powf(q / r);
        }
        total += inner.powf(p / q);
    }
    total.powf(1.0 / p)
}

fn oracle_two_level(z: &[f64], groups: &[Vec<usize>], q: f64, p: f64) -> f64 {
    let nested: Vec<Vec<Vec<usize>>> = groups.iter().map(|g| vec![g.clone()]).collect();
    oracle_three_level(z, &nested, q, q, p)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn criterion_norms() -> Verdict {
    let exact = SmoothingConfig::exact();
    let mut rng = ChaCha8Rng::seed_from_u64(202);

    // (a) reduction identity summed over class columns
    let layout = FeatureLayout::uniform(5, &[("a", 4), ("b", 3), ("c", 2)]).unwrap();
    let parts = layout.part_sets();
    let blocks: Vec<Vec<usize>> = layout.block_sets().into_iter().flatten().collect();
    let mut worst_a: f64 = 0.0;
    for _ in 0..100 {
        let w = randn(&mut rng, (layout.total_dim(), 4));
        let (mut three, mut two) = (0.0, 0.0);
        for col in w.columns() {
            let z = col.to_vec();
            three += norm_lr_lq_lp(&z, &parts, &blocks, 2.0, 2.0, 1.0, exact).unwrap();
            two += norm_lq_lp(&z, &parts, 2.0, 1.0, exact).unwrap();
        }
        worst_a = worst_a.max(rel(three, two));
    }

    // (b) worked examples, brute-force oracles, homogeneity, singleton collapse
    let mut worst_b: f64 = 0.0;
    let halves = vec![vec![0, 1], vec![2, 3]];
    worst_b = worst_b.max(rel(
        norm_lq_lp(&[3.0, 4.0, 0.0, 0.0], &halves, 2.0, 1.0, exact).unwrap(),
        5.0,
    ));
    worst_b = worst_b.max(rel(
        norm_lq_lp(&[1.0; 4], &halves, 2.0, 1.0, exact).unwrap(),
        2.0 * 2f64.sqrt(),
    ));
    worst_b = worst_b.max(rel(
        norm_lr_lq_lp(
            &[1.0; 4],
            &[vec![0, 1, 2, 3]],
            &halves,
            4.0,
            2.0,
            1.0,
            exact,
        )
        .unwrap(),
        2f64.powf(0.75),
    ));

    let thirds: Vec<Vec<usize>> = (0..3).map(|g| (4 * g..4 * g + 4).collect()).collect();
    let outer: Vec<Vec<usize>> = (0..2).map(|g| (12 * g..12 * g + 12).collect()).collect();
    let inner_nested: Vec<Vec<Vec<usize>>> = (0..2)
        .map(|g| {
            (0..3)
                .map(|h| (12 * g + 4 * h..12 * g + 4 * h + 4).collect())
                .collect()
        })
        .collect();
    let inner: Vec<Vec<usize>> = inner_nested.iter().flatten().cloned().collect();
    let specs = [
        NormSpec::Plain { p: 1.0 },
        NormSpec::Plain { p: 2.0 },
        NormSpec::TwoLevel {
            partition: outer.clone(),
            q: 2.0,
            p: 1.0,
        },
        NormSpec::ThreeLevel {
            outer: outer.clone(),
            inner: inner.clone(),
            r: 4.0,
            q: 2.0,
            p: 1.0,
        },
        NormSpec::ThreeLevel {
            outer: outer.clone(),
            inner: inner.clone(),
            r: 2.0,
            q: 2.0,
            p: 1.0,
        },
    ];
    for _ in 0..100 {
        let z12: Vec<f64> = (0..12).map(|_| rng.sample(StandardNormal)).collect();
        worst_b = worst_b.max(rel(
            norm_lq_lp(&z12, &thirds, 2.0, 1.0, exact).unwrap(),
            oracle_two_level(&z12, &thirds, 2.0, 1.0),
        ));
        let z24: Vec<f64> = (0..24).map(|_| rng.sample(StandardNormal)).collect();
        worst_b = worst_b.max(rel(
            norm_lr_lq_lp(&z24, &outer, &inner, 4.0, 2.0, 1.0, exact).unwrap(),
            oracle_three_level(&z24, &inner_nested, 4.0, 2.0, 1.0),
        ));

        let singletons: Vec<Vec<usize>> = (0..24).map(|k| vec![k]).collect();
        let l1: f64 = z24.iter().map(|v| v.abs()).sum();
        let l2: f64 = z24.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst_b = worst_b.max(rel(
            norm_lq_lp(&z24, &singletons, 2.0, 1.0, exact).unwrap(),
            l1,
        ));
        worst_b = worst_b.max(rel(
            norm_lq_lp(&z24, &[(0..24).collect()], 2.0, 1.0, exact).unwrap(),
            l2,
        ));

        let alpha: f64 = rng.gen_range(-5.0..5.0);
        for spec in &specs {
            let base = norm_value(&z24, spec, exact).unwrap();
            let scaled: Vec<f64> = z24.iter().map(|v| alpha * v).collect();
            let lhs = norm_value(&scaled, spec, exact).unwrap();
            worst_b = worst_b.max(rel(lhs, alpha.abs() * base));
        }
    }
    verdict(
        worst_a <= 1e-10 && worst_b <= 1e-12,
        format!(
            "reduction identity max rel diff {worst_a:.1e} <= 1e-10; examples/oracles/homogeneity/collapse max rel diff {worst_b:.1e} <= 1e-12"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. optimizer contract

fn criterion_optimizer() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;

    // f(w) = |w - a|^2 from the origin
    let a = [1.5, -2.0, 0.25, 3.0, -0.75];
    let cfg = OptimizerConfig::default();
    let m = minimize(
        |w, g| {
            let mut f = 0.0;
            for k in 0..w.len() {
                let r = w[k] - a[k];
                f += r * r;
                g[k] = 2.0 * r;
            }
            f
        },
        &[0.0; 5],
        &cfg,
    )
    .unwrap();
    let quad_ok = m.trace.termination == Termination::GradientTolerance
        && m.trace.iterations() <= 3
        && m.x.iter().zip(&a).all(|(x, a)| (x - a).abs() < 1e-5);
    pass &= quad_ok;
    notes.push(format!("quadratic {} iterations", m.trace.iterations()));

    // every variant's trace on random problems
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let layout = FeatureLayout::uniform(4, &[("a", 3), ("b", 3)]).unwrap();
    let (sub, cols) = layout.modality_sublayout("a").unwrap();
    let mut monotone = 0;
    let mut runs = 0;
    for _ in 0..5 {
        let x = randn(&mut rng, (30, 24));
        let y = random_labels(&mut rng, 30, 3);
        let anchor = randn(&mut rng, (24, 3));
        for &variant in &Variant::ALL {
            let oc = objective_config(variant, 1e-8);
            let sol = match variant {
                Variant::WarmStart => {
                    let xs = x.select(Axis(1), &cols);
                    solve(
                        xs.view(),
                        &y,
                        &sub,
                        oc,
                        None,
                        Array2::zeros((cols.len(), 3)),
                        &cfg,
                    )
                }
                Variant::FineTune => solve(
                    x.view(),
                    &y,
                    &layout,
                    oc,
                    Some(anchor.view()),
                    anchor.clone(),
                    &cfg,
                ),
                _ => solve(
                    x.view(),
                    &y,
                    &layout,
                    oc,
                    None,
                    Array2::zeros((24, 3)),
                    &cfg,
                ),
            }
            .unwrap();
            runs += 1;
            monotone += usize::from(sol.trace.is_monotone());
        }
    }
    pass &= monotone == runs;
    notes.push(format!("{monotone}/{runs} traces monotone"));

    // doubling the iteration budget
    let mut never_worse = 0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let x = randn(&mut rng, (40, 24));
        let y = random_labels(&mut rng, 40, 3);
        let oc = objective_config(Variant::Mmmp, 1e-8);
        let mut finals = Vec::new();
        for budget in [8usize, 16] {
            let c = OptimizerConfig {
                max_iters: budget,
                f_tol: 1e-15,
                ..Default::default()
            };
            let sol = solve(x.view(), &y, &layout, oc, None, Array2::zeros((24, 3)), &c).unwrap();
            finals.push(sol.final_objective);
        }
        never_worse += usize::from(finals[1] <= finals[0]);
    }
    pass &= never_worse == 10;
    notes.push(format!(
        "doubling budget never worse in {never_worse}/10 runs"
    ));
    verdict(pass, notes.join("; "))
}

// ---------------------------------------------------------------------------
// 4 and 6. planted-support recovery and two-step dominance

fn recovery(data: &SyntheticData, outcome: &TrainOutcome, k: usize) -> f64 {
    let ranks = report_part_selection(&outcome.model);
    let (mut hit, mut total) = (0, 0);
    for (c, r) in ranks.iter().enumerate() {
        let top = r.top_k(k);
        for p in &data.active_parts[c] {
            total += 1;
            hit += usize::from(top.contains(p));
        }
    }
    hit as f64 / total as f64
}

/// FINE_TUNE objective at its own anchor, by explicit loops: squared loss
/// plus both smoothed penalties (the proximity term vanishes there).
fn oracle_fine_tune_at_anchor(
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    layout: &FeatureLayout,
    w: &Array2<f64>,
    l1: f64,
    l2: f64,
    eps: f64,
) -> f64 {
    let (n, d, c) = (x.nrows(), w.nrows(), w.ncols());
    let mut loss = 0.0;
    for i in 0..n {
        for k in 0..c {
            let mut s = 0.0;
            for j in 0..d {
                s += x[[i, j]] * w[[j, k]];
            }
            let y = if labels[i] == k { 1.0 } else { 0.0 };
            loss += (s - y) * (s - y);
        }
    }
    let mut rows = 0.0;
    for j in 0..d {
        let mut s = 0.0;
        for k in 0..c {
            s += w[[j, k]] * w[[j, k]];
        }
        rows += (s + eps).sqrt();
    }
    let mut parts = 0.0;
    for k in 0..c {
        for p in 0..layout.num_parts() {
            let mut inner = 0.0;
            for b in layout.block_ranges(p).unwrap() {
                let s: f64 = b.range().map(|j| w[[j, k]].powi(4)).sum();
                inner += (s + eps).sqrt();
            }
            parts += (inner + eps).sqrt();
        }
    }
    loss + l1 * rows + l2 * parts
}

struct RecoveryRuns {
    verdict4: Verdict,
    verdict6: Verdict,
}

fn criteria_recovery_and_two_step() -> RecoveryRuns {
    let cfg = TrainConfig::default();
    let cold_cfg = TrainConfig {
        two_step: false,
        ..cfg.clone()
    };
    let mut recs = Vec::new();
    let mut accs = Vec::new();
    let mut cold_accs = Vec::new();
    let mut slowest: f64 = 0.0;
    let mut dominance = 0;
    let mut worst_gap = f64::NEG_INFINITY;
    for seed in 0..5 {
        let spec = SyntheticSpec {
            seed,
            ..Default::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        let t = Instant::now();
        let outcome = train_full(&data.bundle, &data.train, &cfg).unwrap();
        slowest = slowest.max(t.elapsed().as_secs_f64());
        recs.push(recovery(&data, &outcome, spec.active_parts));
        accs.push(
            evaluate(&outcome.model, &data.bundle, &data.test)
                .unwrap()
                .accuracy,
        );

        let prep = prepare(&data.bundle, &data.train, &cfg).unwrap();
        let (d, c) = (prep.layout.total_dim(), data.bundle.num_classes());
        let anchor = outcome.warm.as_ref().unwrap().stack(d, c).unwrap();
        let labels: Vec<usize> = data
            .train
            .iter()
            .map(|&i| data.bundle.samples()[i].label)
            .collect();
        let at_anchor = oracle_fine_tune_at_anchor(
            prep.x.view(),
            &labels,
            &prep.layout,
            &anchor,
            cfg.lambda1,
            cfg.lambda2,
            cfg.epsilon,
        );
        let gap = outcome.model.final_objective - at_anchor;
        worst_gap = worst_gap.max(gap / at_anchor.abs());
        dominance += usize::from(gap <= 1e-9 * at_anchor.abs());

        let cold = train(&data.bundle, &data.train, &cold_cfg).unwrap();
        cold_accs.push(evaluate(&cold, &data.bundle, &data.test).unwrap().accuracy);
    }
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|a| format!("{:.1}", 100.0 * a))
            .collect::<Vec<_>>()
            .join(",")
    };
    let min_rec = recs.iter().cloned().fold(f64::INFINITY, f64::min);
    let min_acc = accs.iter().cloned().fold(f64::INFINITY, f64::min);
    let verdict4 = verdict(
        min_rec >= 0.9 && min_acc >= 0.95 && slowest < 120.0,
        format!(
            "recovery % per seed [{}] (need >= 90); test accuracy % per seed [{}] (need >= 95); slowest seed {slowest:.1}s (need < 120s)",
            fmt(&recs),
            fmt(&accs)
        ),
    );
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (warm, cold) = (mean(&accs), mean(&cold_accs));
    let verdict6 = verdict(
        dominance == 5 && warm >= cold - 0.01,
        format!(
            "fine-tuned objective <= objective at stacked warm start in {dominance}/5 runs (largest relative gap {worst_gap:.2e}); warm mean accuracy {:.2}% vs cold {:.2}% (margin {:+.2} points, need >= -1)",
            100.0 * warm,
            100.0 * cold,
            100.0 * (warm - cold)
        ),
    );
    RecoveryRuns { verdict4, verdict6 }
}

// ---------------------------------------------------------------------------
// 5. variant ordering with a noise modality

fn criterion_ordering() -> Verdict {
    let methods = [Method::L2, Method::Mp, Method::Mmmp];
    let mut sums = [0.0; 3];
    for seed in 0..5 {
        let spec = SyntheticSpec {
            seed,
            noise_modalities: 1,
            ..Default::default()
        };
        let data = generate_synthetic(&spec).unwrap();
        for (mi, &m) in methods.iter().enumerate() {
            let base = TrainConfig::default().with_method(m);
            let (_, chosen) =
                select_lambda(&data.bundle, &data.train, &base, &LAMBDA_GRID).unwrap();
            let model = train(&data.bundle, &data.train, &chosen).unwrap();
            sums[mi] += evaluate(&model, &data.bundle, &data.test).unwrap().accuracy;
        }
    }
    let [l2, mp, mmmp] = sums.map(|s| s / 5.0);
    let (m1, m2) = (mmmp - mp, mp - l2);
    let flag = |m: f64| if m < 0.0 { " REGRESSION" } else { "" };
    verdict(
        m1 >= -0.005 && m2 >= -0.005,
        format!(
            "mean accuracy L2 {:.2}% MP {:.2}% MMMP {:.2}%; MMMP-MP {:+.2} points{}; MP-L2 {:+.2} points{} (non-inferiority within 0.5)",
            100.0 * l2,
            100.0 * mp,
            100.0 * mmmp,
            100.0 * m1,
            flag(m1),
            100.0 * m2,
            flag(m2)
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. pipeline determinism and formats

/// A standing figure (hips 0.3 apart, spine 0.3 above the hip center) whose
/// class decides which joint waves and how fast.
fn synthetic_frames(rng: &mut ChaCha8Rng, class: usize, len: usize) -> Vec<Frame> {
    let mut base = [[0.0; 3]; NUM_JOINTS];
    for (j, p) in base.iter_mut().enumerate() {
        *p = [
            rng.gen_range(-0.3..0.3),
            0.2 + 0.06 * j as f64,
            rng.gen_range(-0.1..0.1),
        ];
    }
    base[HIP_CENTER] = [0.0, 0.0, 0.0];
    base[SPINE] = [0.0, 0.3, 0.0];
    base[HIP_LEFT] = [-0.15, -0.05, 0.0];
    base[HIP_RIGHT] = [0.15, -0.05, 0.0];
    let heading: f64 = rng.gen_range(-PI..PI);
    let origin = [rng.gen_range(-1.0..1.0), 0.9, rng.gen_range(2.0..3.5)];
    let waving = 4 + 3 * class;
    (0..len)
        .map(|t| {
            let phase = 2.0 * PI * (class + 1) as f64 * t as f64 / len as f64;
            let (s, c) = heading.sin_cos();
            let mut f = base;
            f[waving][1] += 0.2 * phase.sin();
            for p in f.iter_mut() {
                for v in p.iter_mut() {
                    *v += 0.005 * rng.sample::<f64, _>(StandardNormal);
                }
                let (x, z) = (p[0], p[2]);
                *p = [
                    origin[0] + c * x + s * z,
                    origin[1] + p[1],
                    origin[2] - s * x + c * z,
                ];
            }
            f
        })
        .collect()
}

fn write_skeleton_corpus(dir: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut manifest = String::new();
    for subject in 1..=4u32 {
        for class in 0..3 {
            for rep in 0..2 {
                let id = format!("s{subject}c{class}r{rep}");
                let frames = synthetic_frames(&mut rng, class, 24 + 3 * rep + class);
                let text: String = frames
                    .iter()
                    .map(|f| {
                        let vals: Vec<String> =
                            f.iter().flatten().map(|v| format!("{v:.17e}")).collect();
                        vals.join(" ") + "\n"
                    })
                    .collect();
                std::fs::write(dir.join(format!("{id}.txt")), text).unwrap();
                manifest += &format!("{id} {id}.txt a{class} {subject}\n");
            }
        }
    }
    std::fs::write(dir.join("manifest.txt"), manifest).unwrap();

    // a second modality: two values per joint part, one CSV row per sample
    let mut sidecar = String::from("class a0\nclass a1\nclass a2\n");
    for j in 0..NUM_JOINTS {
        sidecar += &format!(
            "part {}\nblock depth 2\n",
            mmmp_core::skeleton::JOINT_NAMES[j]
        );
    }
    let mut matrix = String::new();
    for subject in 1..=4u32 {
        for class in 0..3 {
            for rep in 0..2 {
                sidecar += &format!("sample s{subject}c{class}r{rep} {class} {subject}\n");
                let row: Vec<String> = (0..2 * NUM_JOINTS)
                    .map(|k| {
                        let signal = if k / 2 == 4 + 3 * class { 1.0 } else { 0.0 };
                        format!(
                            "{:.17e}",
                            signal + 0.3 * rng.sample::<f64, _>(StandardNormal)
                        )
                    })
                    .collect();
                matrix += &(row.join(",") + "\n");
            }
        }
    }
    std::fs::write(dir.join("depth.csv"), matrix).unwrap();
    std::fs::write(dir.join("depth.txt"), sidecar).unwrap();
}

fn mmmp(args: &[&str], out: &Path) -> String {
    let o = Command::new(env!("CARGO_BIN_EXE_mmmp"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap();
    assert!(
        o.status.success(),
        "mmmp {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

/// Runs encode, import, merge, train and eval into `root`; returns every
/// line printed plus the bytes of the files that should be reproducible.
fn run_pipeline(corpus: &Path, root: &Path) -> (Vec<String>, Vec<(String, Vec<u8>)>) {
    let p = |s: &str| root.join(s);
    let c = |s: &str| corpus.join(s).to_str().unwrap().to_string();
    let mut printed = Vec::new();
    printed.push(mmmp(&["encode", &c("manifest.txt")], &p("skel")));
    printed.push(mmmp(
        &["import", &c("depth.csv"), &c("depth.txt")],
        &p("depth"),
    ));
    let skel = p("skel/bundle.bin");
    let depth = p("depth/bundle.bin");
    printed.push(mmmp(
        &["merge", skel.to_str().unwrap(), depth.to_str().unwrap()],
        &p("merged"),
    ));
    let merged = p("merged/bundle.bin");
    printed.push(mmmp(
        &[
            "train",
            merged.to_str().unwrap(),
            "--split",
            "first:2",
            "--max-iters",
            "60",
        ],
        &p("train"),
    ));
    let model = p("train/model.bin");
    printed.push(mmmp(
        &[
            "eval",
            model.to_str().unwrap(),
            merged.to_str().unwrap(),
            "--split",
            "first:2",
        ],
        &p("eval"),
    ));
    let files = [
        "skel/bundle.bin",
        "depth/bundle.bin",
        "merged/bundle.bin",
        "train/model.bin",
        "train/report.tsv",
        "train/parts.tsv",
        "eval/report.tsv",
    ]
    .iter()
    .map(|f| (f.to_string(), std::fs::read(p(f)).unwrap()))
    .collect();
    (printed, files)
}

fn bitwise_round_trip(bundle: &FeatureBundle) -> bool {
    let bytes = bundle.to_bytes();
    let back = FeatureBundle::from_bytes(&bytes).unwrap();
    back.to_bytes() == bytes
        && back.samples() == bundle.samples()
        && back.layout() == bundle.layout()
        && back.class_names() == bundle.class_names()
        && back
            .x()
            .iter()
            .zip(bundle.x().iter())
            .all(|(a, b)| a.to_bits() == b.to_bits())
}

fn criterion_pipeline() -> Verdict {
    let mut notes = Vec::new();
    let corpus = tempfile::tempdir().unwrap();
    write_skeleton_corpus(corpus.path());
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (print_a, files_a) = run_pipeline(corpus.path(), a.path());
    let (print_b, files_b) = run_pipeline(corpus.path(), b.path());
    let checksums: Vec<&str> = print_a
        .iter()
        .flat_map(|s| s.lines())
        .filter_map(|l| l.split("checksum ").nth(1))
        .collect();
    let accuracies: Vec<&str> = print_a
        .iter()
        .flat_map(|s| s.lines())
        .filter(|l| l.starts_with("test accuracy"))
        .collect();
    let same_files = files_a == files_b;
    let same_output = print_a == print_b;
    let distinct =
        checksums.len() == 3 && checksums[0] != checksums[1] && checksums[1] != checksums[2];
    let deterministic = same_files && same_output && distinct && accuracies.len() == 2;
    notes.push(format!(
        "two runs: identical output files {same_files}, identical printed checksums {:?} and accuracies {:?}",
        checksums,
        accuracies
            .iter()
            .map(|l| l.trim_start_matches("test accuracy ").split(' ').next().unwrap())
            .collect::<Vec<_>>()
    ));

    // lossless round trips, including awkward floating-point values
    let merged = mmmp_core::dataio::read_bundle(a.path().join("merged/bundle.bin")).unwrap();
    let mut x = Array2::zeros((3, 4));
    let awkward = [
        -0.0,
        f64::MIN_POSITIVE / 8.0,
        f64::MAX,
        -f64::MIN_POSITIVE,
        1.0 / 3.0,
        -1e-300,
        PI,
        1e300,
        0.1 + 0.2,
        -7.25,
        f64::EPSILON,
        2f64.powi(-1070),
    ];
    x.iter_mut().zip(awkward).for_each(|(v, a)| *v = a);
    let tricky = FeatureBundle::new(
        x,
        FeatureLayout::uniform(2, &[("m", 2)]).unwrap(),
        (0..3)
            .map(|i| SampleInfo {
                id: format!("odd id #{i}\t\"quoted\""),
                label: i % 2,
                subject: 10 + i as u32,
            })
            .collect(),
        vec!["first class".into(), "second\nclass".into()],
        vec!["note with spaces".into()],
    )
    .unwrap();
    let lossless = bitwise_round_trip(&merged) && bitwise_round_trip(&tricky);
    notes.push(format!("bundle round trip bitwise lossless {lossless}"));

    // 252 subject splits and the mean±std line
    let spec = SyntheticSpec {
        parts: 3,
        modalities: 2,
        block_dim: 2,
        classes: 3,
        n_train: 60,
        n_test: 60,
        active_parts: 1,
        subjects: 10,
        seed: 7,
        ..Default::default()
    };
    let data = generate_synthetic(&spec).unwrap();
    let rule = SplitRule::AllKOfN(5);
    let splits = make_split(&data.bundle, &rule).unwrap();
    let cfg = TrainConfig::default().with_method(Method::Mp);
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let summary = cross_validate(&data.bundle, &rule, &cfg, workers).unwrap();
    let line = summary.formatted();
    let format_ok = table_format(&line);
    notes.push(format!(
        "{} splits enumerated, {} evaluated, mean±std {line}",
        splits.len(),
        summary.outcomes.len()
    ));
    verdict(
        deterministic
            && lossless
            && splits.len() == 252
            && summary.outcomes.len() == 252
            && format_ok,
        notes.join("; "),
    )
}

/// `\d+\.\d{2}±\d+\.\d{2}%`
fn table_format(s: &str) -> bool {
    let fixed2 = |t: &str| {
        t.split_once('.').is_some_and(|(i, f)| {
            !i.is_empty()
                && i.bytes().all(|b| b.is_ascii_digit())
                && f.len() == 2
                && f.bytes().all(|b| b.is_ascii_digit())
        })
    };
    s.strip_suffix('%')
        .and_then(|s| s.split_once('±'))
        .is_some_and(|(m, d)| fixed2(m) && fixed2(d))
}

// ---------------------------------------------------------------------------
// 8. skeleton encoder

fn transform(frames: &[Frame], theta: f64, scale: f64, shift: [f64; 3]) -> Vec<Frame> {
    let (s, c) = theta.sin_cos();
    frames
        .iter()
        .map(|f| {
            let mut g = *f;
            for p in g.iter_mut() {
                let [x, y, z] = *p;
                *p = [
                    scale * (c * x + s * z) + shift[0],
                    scale * y + shift[1],
                    scale * (-s * x + c * z) + shift[2],
                ];
            }
            g
        })
        .collect()
}

fn max_joint_diff(a: &[Frame], b: &[Frame]) -> f64 {
    a.iter()
        .flatten()
        .flatten()
        .zip(b.iter().flatten().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Magnitudes of the first `k` DFT terms of every 1+2+4 segment, by direct
/// summation of `x_t * exp(-2 pi i f t / N)`.
fn oracle_pyramid(series: &[f64], levels: usize, k: usize) -> Vec<f64> {
    let t = series.len();
    let mut out = Vec::new();
    for l in 0..levels {
        let parts = 1 << l;
        for i in 0..parts {
            let seg = &series[i * t / parts..(i + 1) * t / parts];
            let n = seg.len().max(k);
            for f in 0..k {
                let (mut re, mut im) = (0.0, 0.0);
                for (s, v) in seg.iter().enumerate() {
                    let ang = -2.0 * PI * (f * s) as f64 / n as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                out.push(re.hypot(im));
            }
        }
    }
    out
}

fn criterion_skeleton() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst_inv: f64 = 0.0;
    for trial in 0..10 {
        let frames = synthetic_frames(&mut rng, trial % 3, 30);
        let base = normalize_skeleton(&SkeletonSequence::new("x", "a", 1, frames.clone()).unwrap())
            .unwrap();
        let shift = [
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
        ];
        for (theta, scale, shift) in [
            (0.0, 1.0, shift),
            (PI / 2.0, 1.0, [0.0; 3]),
            (rng.gen_range(-PI..PI), 1.0, [0.0; 3]),
            (0.0, rng.gen_range(0.2..5.0), [0.0; 3]),
            (rng.gen_range(-PI..PI), rng.gen_range(0.2..5.0), shift),
        ] {
            let moved = transform(&frames, theta, scale, shift);
            let norm =
                normalize_skeleton(&SkeletonSequence::new("x", "a", 1, moved).unwrap()).unwrap();
            worst_inv = worst_inv.max(max_joint_diff(&base.joints, &norm.joints));
        }
    }

    let mut worst_dft: f64 = 0.0;
    let cfg = PyramidConfig::default();
    for len in [32usize, 5, 13, 64, 97] {
        let series: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        let got = fourier_temporal_pyramid(&series, &cfg);
        let want = oracle_pyramid(&series, cfg.levels, cfg.coefficients);
        if got.len() != 28 || want.len() != 28 {
            worst_dft = f64::INFINITY;
            continue;
        }
        for (g, w) in got.iter().zip(&want) {
            worst_dft = worst_dft.max((g - w).abs());
        }
    }

    // 20 joints x 36-bin occupancy x 7 pyramid segments (one coefficient each)
    let lop = PyramidConfig {
        levels: 3,
        coefficients: 1,
    };
    let lop_dim = NUM_JOINTS * lop.block_dim(36);
    verdict(
        worst_inv <= 1e-10 && worst_dft <= 1e-10 && lop_dim == 5040,
        format!(
            "translation/rotation/scale invariance max diff {worst_inv:.1e} <= 1e-10; pyramid vs direct DFT max diff {worst_dft:.1e} <= 1e-10; 20x36x7 = {lop_dim} (want 5040)"
        ),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |n: usize, name: &str, v: Verdict, secs: f64| {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        if !v.pass {
            failed += 1;
        }
        println!("criterion {n} ({name}): {tag} in {secs:.1}s: {}", v.detail);
    };
    let timed = |f: &dyn Fn() -> Verdict| {
        let t = Instant::now();
        let v = f();
        (v, t.elapsed().as_secs_f64())
    };

    let (v, s) = timed(&criterion_gradients);
    let v = Verdict {
        pass: v.pass && s < 10.0,
        ..v
    };
    report(1, "gradient correctness", v, s);

    let (v, s) = timed(&criterion_norms);
    let v = Verdict {
        pass: v.pass && s < 5.0,
        ..v
    };
    report(2, "norm identities", v, s);

    let (v, s) = timed(&criterion_optimizer);
    report(3, "optimizer contract", v, s);

    let t = Instant::now();
    let runs = criteria_recovery_and_two_step();
    let s = t.elapsed().as_secs_f64();
    report(4, "planted-support recovery", runs.verdict4, s);

    let (v, s5) = timed(&criterion_ordering);
    report(5, "variant ordering", v, s5);

    report(6, "two-step dominance", runs.verdict6, s);

    let (v, s) = timed(&criterion_pipeline);
    report(7, "pipeline determinism and formats", v, s);

    let (v, s) = timed(&criterion_skeleton);
    report(8, "skeleton encoder", v, s);

    if failed > 0 {
        println!("{failed} of 8 criteria failed");
        std::process::exit(1);
    }
    println!("all 8 criteria passed");
}
