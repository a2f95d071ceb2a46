//! End-to-end acceptance checks, run in order by a plain `main` so every
//! criterion prints one `PASS`/`FAIL` line even under `cargo test`. Any
//! failure makes the process exit non-zero.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};

use pedcnn::data::synthetic::{synthetic_dataset, write_toy_coco, NOISE};
use pedcnn::data::{
    balance_train, prepare, stratified_split, AugmentRanges, DemographicClass, Origin, PrepareConfig, SampleRecord,
    Split, SplitRatios,
};
use pedcnn::gradcheck::{check_layer, random_tensor, EPS};
use pedcnn::layers::{BatchNorm, Conv2d, Dense, Layer, MaxPool2d, Mode};
use pedcnn::metrics::{aggregate, confusion, per_class, pr_curve};
use pedcnn::model::Model;
use pedcnn::optim::{apply_phase, OptimizerState, Phase};
use pedcnn::seed::rng;
use pedcnn::train::loss::one_hot;
use pedcnn::train::{
    cross_entropy_from_logits, cross_entropy_loss, train, train_step, Checkpoint, Control, Dataset, TrainConfig,
};
use pedcnn::{registry_lookup, zoo, Padding, Tensor};
use rand::Rng;

static REPORTED: AtomicBool = AtomicBool::new(false);

/// `; a; b` for a non-empty problem list, nothing otherwise.
fn listed(problems: &[String]) -> String {
    problems.iter().map(|p| format!("; {p}")).collect()
}

fn epoch(e: Option<usize>) -> String {
    e.map_or("never".into(), |e| format!("epoch {e}"))
}

fn verdict(id: &str, ok: bool, detail: &str) {
    REPORTED.store(true, Ordering::SeqCst);
    println!("{id} {} {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{id} failed: {detail}");
}

fn main() {
    let criteria: [(&str, fn()); 8] = [
        ("A1", a1_parameter_ledgers),
        ("A2", a2_gradients_match_finite_differences),
        ("A3", a3_compact_cnn_learns_synthetic_colours),
        ("A4", a4_metrics_match_counting_oracle),
        ("A5", a5_average_precision_properties),
        ("A6", a6_split_and_balance_counts),
        ("A7", a7_runs_are_reproducible),
        ("A8", a8_fine_tune_transition),
    ];
    let mut failed = Vec::new();
    for (id, check) in criteria {
        REPORTED.store(false, Ordering::SeqCst);
        let started = std::time::Instant::now();
        if catch_unwind(AssertUnwindSafe(check)).is_err() {
            if !REPORTED.load(Ordering::SeqCst) {
                println!("{id} FAIL panicked before reaching a verdict");
            }
            failed.push(id);
        }
        println!("   {id} took {:.1}s", started.elapsed().as_secs_f64());
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed.len(),
        criteria.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}

fn a1_parameter_ledgers() {
    let expected: [(u8, usize, usize); 8] = [
        (1, 24_639_878, 1_052_166),
        (2, 27_785_606, 4_197_894),
        (3, 24_639_878, 1_052_166),
        (4, 27_785_606, 4_197_894),
        (5, 524_998, 524_038),
        (6, 1_573_574, 1_572_614),
        (7, 524_998, 524_038),
        (8, 1_573_574, 1_572_614),
    ];
    let mut bad = Vec::new();
    for (id, total, trainable) in expected {
        let cfg = registry_lookup(id).unwrap();
        let mut model = zoo::build(&cfg, 0).unwrap();
        let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate).unwrap();
        apply_phase(&cfg, &mut model, &mut opt, Phase::One).unwrap();
        let s = model.summary();
        if (s.total, s.trainable) != (total, trainable) {
            bad.push(format!("model {id}: {} / {}", s.total, s.trainable));
        }
    }
    verdict(
        "A1",
        bad.is_empty(),
        &format!("parameter ledgers for models 1-8{}", listed(&bad)),
    );
}

const REL: f64 = 1e-4;
const ABS: f64 = 1e-6;

fn a2_gradients_match_finite_differences() {
    let x = random_tensor(&[2, 5, 5, 3], 1, -1.0, 1.0);
    let mut bn = Layer::batchnorm("batchnorm", BatchNorm::<f64>::new(3).unwrap());
    bn.params_mut()[0].1.value = random_tensor(&[3], 2, 0.5, 1.5);
    bn.params_mut()[1].1.value = random_tensor(&[3], 3, -0.5, 0.5);
    let cases: Vec<(Layer<f64>, Vec<Tensor<f64>>)> = vec![
        (
            Layer::conv2d(
                "conv_same",
                Conv2d::new(3, 4, (3, 3), 1, Padding::SamePreserving, 4).unwrap(),
            ),
            vec![x.clone()],
        ),
        (
            Layer::conv2d(
                "conv_strided",
                Conv2d::new(3, 2, (3, 3), 2, Padding::SameCeil, 5).unwrap(),
            ),
            vec![x.clone()],
        ),
        (
            Layer::conv2d("conv_7x7", Conv2d::new(3, 2, (7, 7), 2, Padding::SameCeil, 6).unwrap()),
            vec![random_tensor(&[1, 8, 8, 3], 7, -1.0, 1.0)],
        ),
        (bn, vec![random_tensor(&[2, 5, 5, 3], 8, -2.0, 2.0)]),
        (Layer::relu("relu"), vec![x.clone()]),
        (
            Layer::maxpool2d("maxpool_valid", MaxPool2d::new(2, 2, Padding::ValidFloor)),
            vec![x.clone()],
        ),
        (
            Layer::maxpool2d("maxpool_same", MaxPool2d::new(3, 2, Padding::SameCeil)),
            vec![x.clone()],
        ),
        (Layer::globalavgpool("gap"), vec![x.clone()]),
        (Layer::flatten("flatten"), vec![x.clone()]),
        (
            Layer::dense("dense", Dense::new(7, 5, 9).unwrap()),
            vec![random_tensor(&[3, 7], 10, -1.0, 1.0)],
        ),
        (Layer::dropout("dropout", 0.3).unwrap(), vec![x.clone()]),
        (Layer::softmax("softmax"), vec![random_tensor(&[4, 6], 11, -3.0, 3.0)]),
        (
            Layer::add("add"),
            vec![x.clone(), random_tensor(&[2, 5, 5, 3], 12, -1.0, 1.0)],
        ),
    ];
    let mut worst = 0.0f64;
    let mut worst_abs = 0.0f64;
    let mut failures = Vec::new();
    let mut kinds = Vec::new();
    for (mut layer, inputs) in cases {
        let report = check_layer(&mut layer, &inputs, Mode::Train, 13, EPS).unwrap();
        worst = report
            .comparisons
            .iter()
            .filter(|c| c.analytic.abs() > ABS)
            .map(|c| c.rel_error())
            .fold(worst, f64::max);
        worst_abs = report
            .comparisons
            .iter()
            .map(|c| c.abs_error())
            .fold(worst_abs, f64::max);
        let bad = report.failures(REL, ABS);
        if !bad.is_empty() {
            failures.push(format!("{} ({} entries)", layer.name(), bad.len()));
        }
        kinds.push(layer.kind().name());
    }
    let head = head_gradient_failures();
    if head > 0 {
        failures.push(format!("cross-entropy head ({head} entries)"));
    }
    kinds.dedup();
    verdict(
        "A2",
        failures.is_empty(),
        &format!(
            "{} layer kinds plus cross-entropy head, max abs err {worst_abs:.1e}, max rel err {worst:.1e}{}",
            kinds.len(),
            listed(&failures)
        ),
    );
}

/// Dense/ReLU/dropout/dense/softmax head under cross-entropy: analytic
/// gradients from the logit shortcut against finite differences of the loss
/// computed from the probabilities.
fn head_gradient_failures() -> usize {
    let mut m = Model::<f64>::new(&[3, 3, 4]);
    m.chain(Layer::flatten("flatten"), false).unwrap();
    m.chain(Layer::dense("hidden", Dense::new(36, 8, 1).unwrap()), false)
        .unwrap();
    m.chain(Layer::relu("hidden_relu"), false).unwrap();
    m.chain(Layer::dropout("dropout", 0.3).unwrap(), false).unwrap();
    m.chain(Layer::dense("out", Dense::new(8, 6, 2).unwrap()), false)
        .unwrap();
    m.chain(Layer::softmax("softmax"), false).unwrap();
    let x = random_tensor(&[3, 3, 3, 4], 3, -1.0, 1.0);
    let y: Tensor<f64> = one_hot(&[0, 4, 5], 6).unwrap();
    let seed = 21;

    m.zero_grad();
    let logits = m.forward_logits(&x, Mode::Train, seed).unwrap();
    let out = cross_entropy_from_logits(&logits, &y).unwrap();
    m.backward_logits(&out.grad).unwrap();
    m.clear_caches();
    let analytic: Vec<Vec<f64>> = m
        .named_params()
        .into_iter()
        .map(|(_, p)| p.grad.as_ref().unwrap().data().to_vec())
        .collect();
    let loss = |m: &mut Model<f64>| {
        let p = m.forward(&x, Mode::Train, seed).unwrap();
        m.clear_caches();
        cross_entropy_loss(&p, &y).unwrap()
    };
    let mut bad = 0;
    for (pi, grad) in analytic.iter().enumerate() {
        for (i, &g) in grad.iter().enumerate() {
            let orig = m.trainable_params_mut()[pi].1.value.data()[i];
            m.trainable_params_mut()[pi].1.value.data_mut()[i] = orig + EPS;
            let plus = loss(&mut m);
            m.trainable_params_mut()[pi].1.value.data_mut()[i] = orig - EPS;
            let minus = loss(&mut m);
            m.trainable_params_mut()[pi].1.value.data_mut()[i] = orig;
            let num = (plus - minus) / (2.0 * EPS);
            let err = (num - g).abs();
            if err > ABS && err / num.abs().max(g.abs()) > REL {
                bad += 1;
            }
        }
    }
    bad
}

fn a3_compact_cnn_learns_synthetic_colours() {
    let train_set = synthetic_dataset(20, NOISE, 1).unwrap();
    let val_set = synthetic_dataset(2, NOISE, 2).unwrap();
    assert_eq!(train_set.len(), 120);
    let cfg = registry_lookup(8).unwrap();
    let mut tc = TrainConfig::new(cfg, 7);
    tc.epochs = 30;
    tc.patience = 30;
    let mut model = zoo::build(&tc.model, tc.seed).unwrap();
    let mut first_90 = None;
    let mut first_99 = None;
    let outcome = train(&mut model, &tc, &train_set, &val_set, |r| {
        if r.train_accuracy >= 0.9 && first_90.is_none() {
            first_90 = Some(r.epoch);
        }
        if r.train_accuracy >= 0.99 && first_99.is_none() {
            first_99 = Some(r.epoch);
        }
        if first_99.is_some() {
            Control::Stop
        } else {
            Control::Continue
        }
    })
    .unwrap();
    let accs: Vec<String> = outcome
        .history
        .records
        .iter()
        .map(|r| format!("{:.3}", r.train_accuracy))
        .collect();
    verdict(
        "A3",
        first_90.is_some_and(|e| e <= 30),
        &format!(
            "90% train accuracy at {}, 99% at {}; per-epoch {}",
            epoch(first_90),
            epoch(first_99),
            accs.join(" ")
        ),
    );
    assert!(first_99.is_some_and(|e| e <= 10), "99% not reached within 10 epochs");
}

/// Counting oracle written against the definitions, sharing nothing with the
/// library.
fn brute_force(t: &[usize], p: &[usize]) -> (f64, Vec<[f64; 3]>, [f64; 3], [f64; 3]) {
    let n = t.len();
    let correct = (0..n).filter(|&i| t[i] == p[i]).count();
    let mut rows = Vec::new();
    let mut supports = Vec::new();
    for c in 0..6 {
        let tp = (0..n).filter(|&i| t[i] == c && p[i] == c).count() as f64;
        let pred = (0..n).filter(|&i| p[i] == c).count() as f64;
        let actual = (0..n).filter(|&i| t[i] == c).count() as f64;
        let prec = if pred > 0.0 { tp / pred } else { 0.0 };
        let rec = if actual > 0.0 { tp / actual } else { 0.0 };
        let f1 = if prec + rec > 0.0 {
            2.0 * prec * rec / (prec + rec)
        } else {
            0.0
        };
        rows.push([prec, rec, f1]);
        supports.push(actual);
    }
    let mut mac = [0.0; 3];
    let mut wtd = [0.0; 3];
    for (row, s) in rows.iter().zip(&supports) {
        for k in 0..3 {
            mac[k] += row[k] / 6.0;
            wtd[k] += row[k] * s / n as f64;
        }
    }
    (correct as f64 / n as f64, rows, mac, wtd)
}

fn a4_metrics_match_counting_oracle() {
    let mut r = rng(44);
    let t: Vec<usize> = (0..1000).map(|_| r.random_range(0..6)).collect();
    // Skew predictions toward the truth so every class gets a mix.
    let p: Vec<usize> = t
        .iter()
        .map(|&c| if r.random_bool(0.6) { c } else { r.random_range(0..6) })
        .collect();
    let cm = confusion(&t, &p, 6).unwrap();
    let classes = per_class(&cm);
    let (mac, wtd) = aggregate(&classes).unwrap();
    let acc = pedcnn::metrics::accuracy(&cm).unwrap();
    let (o_acc, o_rows, o_mac, o_wtd) = brute_force(&t, &p);

    let mut worst = (acc - o_acc).abs();
    for (m, o) in classes.iter().zip(&o_rows) {
        worst = worst
            .max((m.precision - o[0]).abs())
            .max((m.recall - o[1]).abs())
            .max((m.f1 - o[2]).abs());
    }
    for (a, o) in [(mac, o_mac), (wtd, o_wtd)] {
        worst = worst
            .max((a.precision - o[0]).abs())
            .max((a.recall - o[1]).abs())
            .max((a.f1 - o[2]).abs());
    }
    let recall_gap = (acc - wtd.recall).abs();
    verdict(
        "A4",
        worst <= 1e-12 && recall_gap <= 1e-12,
        &format!("1000 pairs: max deviation {worst:.1e}, |accuracy - weighted recall| {recall_gap:.1e}"),
    );
}

fn a5_average_precision_properties() {
    let mut r = rng(55);
    let y: Vec<usize> = (0..300).map(|_| r.random_range(0..6)).collect();

    let perfect: Vec<Vec<f64>> = y
        .iter()
        .map(|&c| {
            (0..6)
                .map(|k| {
                    if k == c {
                        0.5 + r.random::<f64>() / 2.0
                    } else {
                        r.random::<f64>() / 2.0
                    }
                })
                .collect()
        })
        .collect();
    let perfect_ok = (0..6).all(|c| pr_curve(&perfect, &y, c).unwrap().average_precision == Some(1.0));

    let flat = vec![vec![0.25; 6]; y.len()];
    let constant_ok = (0..6).all(|c| {
        let prevalence = y.iter().filter(|&&t| t == c).count() as f64 / y.len() as f64;
        pr_curve(&flat, &y, c).unwrap().average_precision == Some(prevalence)
    });

    let scores: Vec<Vec<f64>> = (0..y.len())
        .map(|_| (0..6).map(|_| r.random::<f64>()).collect())
        .collect();
    let base: Vec<f64> = (0..6)
        .map(|c| pr_curve(&scores, &y, c).unwrap().average_precision.unwrap())
        .collect();
    let mut worst = 0.0f64;
    for k in 0..10 {
        let a = r.random_range(0.5..5.0);
        let b = r.random_range(-2.0..2.0);
        let e = r.random_range(0.5..3.0);
        let f: Box<dyn Fn(f64) -> f64> = match k % 5 {
            0 => Box::new(move |s| a * s + b),
            1 => Box::new(move |s| (e * s).exp()),
            2 => Box::new(move |s| s.powf(e)),
            3 => Box::new(move |s| (s + a).ln()),
            _ => Box::new(move |s| (e * s).atan() + b),
        };
        let moved: Vec<Vec<f64>> = scores.iter().map(|row| row.iter().map(|&s| f(s)).collect()).collect();
        for (c, &before) in base.iter().enumerate() {
            let ap = pr_curve(&moved, &y, c).unwrap().average_precision.unwrap();
            worst = worst.max((ap - before).abs());
        }
    }
    verdict(
        "A5",
        perfect_ok && constant_ok && worst <= 1e-12,
        &format!("perfect AP = 1: {perfect_ok}, constant AP = prevalence: {constant_ok}, 10 monotone transforms max shift {worst:.1e}"),
    );
}

fn a6_split_and_balance_counts() {
    let counts = [700usize, 90, 40, 30, 25, 20];
    let mut samples = Vec::new();
    let mut id = 0;
    for (class, &n) in DemographicClass::ALL.iter().zip(&counts) {
        for _ in 0..n {
            id += 1;
            samples.push(SampleRecord {
                path: PathBuf::from(format!("crops/{}/{id:06}.ppm", class.slug())),
                class: *class,
                split: Split::Train,
                origin: Origin::Original,
                source_id: id,
            });
        }
    }
    let split = stratified_split(samples, &SplitRatios::default(), 6).unwrap();
    let mut problems = Vec::new();
    for (class, &n) in DemographicClass::ALL.iter().zip(&counts) {
        // Integer arithmetic keeps 0.7 * 30 from rounding down to 20.
        let train = n * 7 / 10;
        let val = n * 2 / 10;
        let want = (train, val, n - train - val);
        let got = (
            split.count(*class, Split::Train),
            split.count(*class, Split::Val),
            split.count(*class, Split::Test),
        );
        if got != want {
            problems.push(format!("{class}: split {got:?} != {want:?}"));
        }
    }
    let (balanced, _) = balance_train(&split, 50, 6, &AugmentRanges::default()).unwrap();
    for class in DemographicClass::ALL {
        let n = balanced.count(class, Split::Train);
        if n != 50 {
            problems.push(format!("{class}: {n} train after balancing"));
        }
    }
    let stray = balanced
        .records
        .iter()
        .filter(|r| r.origin == Origin::Augmented && r.split != Split::Train)
        .count();
    if stray > 0 {
        problems.push(format!("{stray} augmented records outside train"));
    }
    verdict(
        "A6",
        problems.is_empty(),
        &format!(
            "floor/floor/remainder split, 50 per class after balancing{}",
            listed(&problems)
        ),
    );
}

/// Prepare a toy corpus and train model 8 briefly; returns the manifest and
/// checkpoint bytes.
fn prepare_and_train(root: &std::path::Path) -> (Vec<u8>, Vec<u8>) {
    let (annotations, frames) = write_toy_coco(root, 6, 3).unwrap();
    let mut pc = PrepareConfig::new(annotations, frames, root.join("work"));
    pc.seed = 11;
    pc.target = 8;
    let report = prepare(&pc).unwrap();
    let train_set = Dataset::from_manifest(&report.manifest, Split::Train, &pc.workdir).unwrap();
    let val_set = Dataset::from_manifest(&report.manifest, Split::Val, &pc.workdir).unwrap();
    let mut tc = TrainConfig::new(registry_lookup(8).unwrap(), 11);
    tc.epochs = 2;
    let mut model = zoo::build(&tc.model, tc.seed).unwrap();
    let outcome = train(&mut model, &tc, &train_set, &val_set, |_| Control::Continue).unwrap();
    let ck_path = pc.workdir.join("checkpoint.pdcn");
    outcome.checkpoint.write(&ck_path).unwrap();
    (
        std::fs::read(pc.manifest_path()).unwrap(),
        std::fs::read(ck_path).unwrap(),
    )
}

fn a7_runs_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (m1, c1) = prepare_and_train(a.path());
    let (m2, c2) = prepare_and_train(b.path());
    let loaded = Checkpoint::from_bytes(&c1).unwrap();
    let resaved = loaded.to_bytes().unwrap();
    let (model, opt) = loaded.restore().unwrap();
    let recaptured = Checkpoint::capture(
        &loaded.meta.config,
        loaded.meta.seed,
        &model,
        &opt,
        loaded.meta.epoch,
        loaded.meta.phase,
        loaded.meta.history_digest.clone(),
    )
    .to_bytes()
    .unwrap();
    let manifests = m1 == m2;
    let checkpoints = c1 == c2;
    let roundtrip = resaved == c1 && recaptured == c1;
    verdict(
        "A7",
        manifests && checkpoints && roundtrip,
        &format!(
            "identical manifests: {manifests}, identical checkpoints ({} bytes): {checkpoints}, save-load-save: {roundtrip}",
            c1.len()
        ),
    );
}

fn a8_fine_tune_transition() {
    let mut problems = Vec::new();
    for (id, want_lr) in [(1u8, 1e-5), (4, 1e-3)] {
        let cfg = registry_lookup(id).unwrap();
        let mut model = zoo::build(&cfg, 8).unwrap();
        let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate).unwrap();
        apply_phase(&cfg, &mut model, &mut opt, Phase::One).unwrap();
        // One real step so the head's optimizer slots hold live values.
        let data = synthetic_dataset(1, NOISE, 3).unwrap();
        let (x, labels) = data.batch(&[0, 1]).unwrap();
        train_step(&mut model, &mut opt, &x, &labels, 1).unwrap();

        let before_tensors: BTreeMap<String, Vec<u32>> = bits(&model);
        let before_slots = opt.slots.clone();
        let before_t = opt.t;
        let frozen_before: Vec<usize> = model
            .backbone_indices()
            .into_iter()
            .filter(|&i| !model.layer(i).is_trainable())
            .collect();
        apply_phase(&cfg, &mut model, &mut opt, Phase::Two).unwrap();
        let unfrozen = frozen_before.iter().filter(|&&i| model.layer(i).is_trainable()).count();
        let still_frozen = model
            .backbone_indices()
            .into_iter()
            .filter(|&i| !model.layer(i).is_trainable())
            .count();

        if opt.learning_rate != want_lr {
            problems.push(format!("model {id}: lr {}", opt.learning_rate));
        }
        if unfrozen != 100 {
            problems.push(format!("model {id}: {unfrozen} backbone layers unfrozen"));
        }
        if still_frozen + 100 != frozen_before.len() {
            problems.push(format!(
                "model {id}: {still_frozen} of {} stay frozen",
                frozen_before.len()
            ));
        }
        if bits(&model) != before_tensors {
            problems.push(format!("model {id}: parameter buffers changed"));
        }
        let kept = before_slots.iter().all(|(k, v)| opt.slots.get(k) == Some(v));
        if !kept || opt.t != before_t {
            problems.push(format!("model {id}: optimizer state changed"));
        }
    }
    verdict(
        "A8",
        problems.is_empty(),
        &format!(
            "phase 2 lr and 100 unfrozen backbone layers for models 1 and 4, buffers bit-identical{}",
            listed(&problems)
        ),
    );
}

fn bits(model: &Model) -> BTreeMap<String, Vec<u32>> {
    model
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.data().iter().map(|v| v.to_bits()).collect()))
        .collect()
}
