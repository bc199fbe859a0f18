//! Acceptance criteria. Each test prints one `ACCEPTANCE <name>: PASS|FAIL`
//! line to the real stderr, so the verdicts stay visible under capture.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use respnet::dsp::{bandpass, AudioClip};
use respnet::metrics::icbhi_scores;
use respnet::models::{write_checkpoint, Model, ModelConfig, ModelKind};
use respnet::nn::gradcheck::run_suite;
use respnet::nn::{Graph, Mode, Tensor};
use respnet::pipeline::synthetic::{instances_from_clips, two_class_clips, write_corpus};
use respnet::pipeline::{
    aggregate_patches, ensemble, evaluate_instances, mixup_batch, mixup_with, predict_label, training_set_from_instances, Batch, Instance, SoftLabel,
    TrainConfig, Trainer,
};
use respnet::spectrogram::{cwt_scalogram, frame_count, gammatonegram, rescale_time, FrontEnd, FrontEndKind, Mother, SpectrogramImage};

fn verdict(name: &str, pass: bool, detail: &str) {
    let line = format!("ACCEPTANCE {name}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn finish(name: &str, start: Instant, budget: Duration, failures: &[String]) {
    let elapsed = start.elapsed();
    let mut failures = failures.to_vec();
    if elapsed >= budget {
        failures.push(format!("took {elapsed:.1?}, budget {budget:?}"));
    }
    let detail = if failures.is_empty() { format!("{elapsed:.2?}") } else { format!("{elapsed:.2?}; {}", failures.join("; ")) };
    verdict(name, failures.is_empty(), &detail);
    assert!(failures.is_empty(), "{name}: {}", failures.join("\n"));
}

// (table, system, spec, sen, AS, HS) as published.
const PUBLISHED: [(&str, &str, f64, f64, f64, f64); 24] = [
    ("inception task1", "Baseline", 0.68, 0.30, 0.49, 0.42),
    ("inception task1", "Inception-01", 0.73, 0.30, 0.52, 0.43),
    ("inception task1", "Inception-02", 0.70, 0.30, 0.50, 0.42),
    ("inception task1", "Inception-03", 0.69, 0.33, 0.51, 0.44),
    ("inception task1", "Inception-04", 0.70, 0.32, 0.51, 0.44),
    ("inception task2", "Baseline", 0.59, 0.75, 0.67, 0.66),
    ("inception task2", "Inception-01", 0.88, 0.81, 0.85, 0.84),
    ("inception task2", "Inception-02", 1.00, 0.75, 0.87, 0.85),
    ("inception task2", "Inception-03", 0.53, 0.83, 0.68, 0.64),
    ("inception task2", "Inception-04", 0.47, 0.81, 0.64, 0.59),
    ("ensemble task1", "Baseline", 0.68, 0.30, 0.49, 0.42),
    ("ensemble task1", "Two-Scal", 0.73, 0.29, 0.51, 0.41),
    ("ensemble task1", "Gam-Scal", 0.72, 0.31, 0.51, 0.43),
    ("ensemble task2", "Baseline", 0.59, 0.75, 0.67, 0.66),
    ("ensemble task2", "Two-Scal", 0.65, 0.79, 0.72, 0.71),
    ("ensemble task2", "Gam-Scal", 0.65, 0.76, 0.70, 0.70),
    ("comparison task1", "DT", 0.75, 0.12, 0.43, 0.15),
    ("comparison task1", "HMM", 0.38, 0.41, 0.39, 0.23),
    ("comparison task1", "SVM", 0.78, 0.20, 0.47, 0.24),
    ("comparison task1", "BRN", 0.69, 0.31, 0.50, 0.43),
    ("comparison task1", "CNN-RNN", 0.81, 0.28, 0.54, 0.42),
    ("comparison task1", "Final system", 0.73, 0.32, 0.53, 0.45),
    ("comparison task2", "CNN-MoE", 0.71, 0.98, 0.84, 0.82),
    ("comparison task2", "Final system", 0.88, 0.85, 0.86, 0.86),
];

const METRIC_TOL: f64 = 0.005 + 1e-9;

/// Range of (AS, HS) when spec and sen are only known to two decimals.
/// Both scores are monotone in each argument, so corners bound them.
fn interval_scores(spec: f64, sen: f64) -> ((f64, f64), (f64, f64)) {
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    let (lo, hi) = (icbhi_scores(clamp(sen - 0.005), clamp(spec - 0.005)), icbhi_scores(clamp(sen + 0.005), clamp(spec + 0.005)));
    ((lo.0, hi.0), (lo.1, hi.1))
}

#[test]
fn metric_oracle() {
    let start = Instant::now();
    let mut failures = Vec::new();
    for &(table, system, spec, sen, as_pub, hs_pub) in &PUBLISHED {
        let (a, h) = icbhi_scores(sen, spec);
        if (a - as_pub).abs() > METRIC_TOL || (h - hs_pub).abs() > METRIC_TOL {
            let ((alo, ahi), (hlo, hhi)) = interval_scores(spec, sen);
            let within = |v: f64, lo: f64, hi: f64| v >= lo - METRIC_TOL && v <= hi + METRIC_TOL;
            let interval = if within(as_pub, alo, ahi) && within(hs_pub, hlo, hhi) { "consistent" } else { "inconsistent" };
            failures.push(format!(
                "{table} {system} {spec:.2}/{sen:.2}: computed {a:.4}/{h:.4}, published {as_pub:.2}/{hs_pub:.2}, {interval} with two-decimal inputs"
            ));
        }
    }
    finish("metric_oracle", start, Duration::from_secs(1), &failures);
}

#[test]
fn shape_contract() {
    let start = Instant::now();
    let mut failures = Vec::new();
    for c in [3, 4] {
        let model = Model::new(ModelConfig::new(ModelKind::Baseline, c), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f32> = (0..124 * 154).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::new(model.store(), Mode::Eval);
        let x = g.input(Tensor::new(&[1, 124, 154, 1], data).unwrap());
        let fwd = model.forward(&mut g, x, &mut rng).unwrap();
        let expected: [(&str, Vec<usize>); 9] = [
            ("block1.core", vec![1, 124, 154, 64]),
            ("block1", vec![1, 62, 77, 64]),
            ("block2.core", vec![1, 62, 77, 128]),
            ("block2", vec![1, 31, 39, 128]),
            ("block3.core", vec![1, 31, 39, 256]),
            ("block3", vec![1, 16, 20, 256]),
            ("block4.core", vec![1, 16, 20, 512]),
            ("block4", vec![1, 512]),
            ("head.fc1", vec![1, 1024]),
        ];
        for (name, shape) in expected.iter().chain(std::iter::once(&("head.softmax", vec![1, c]))) {
            match fwd.shapes.iter().find(|s| s.name == *name) {
                Some(s) if s.shape == *shape => {}
                Some(s) => failures.push(format!("C={c} {name}: {:?}, want {shape:?}", s.shape)),
                None => failures.push(format!("C={c} {name}: not recorded")),
            }
        }
        let head = model.head_shapes();
        if head != [vec![512, 1024], vec![1024], vec![1024, c], vec![c]] {
            failures.push(format!("C={c} head weights {head:?}"));
        }
    }
    finish("shape_contract", start, Duration::from_secs(10), &failures);
}

#[test]
fn gradient_suite() {
    let start = Instant::now();
    let outcomes = run_suite(20, 1e-3, 1e-3).unwrap();
    let mut failures: Vec<String> = outcomes
        .iter()
        .filter(|o| !(o.seeds >= 20 && o.worst_rel_error < 1e-3))
        .map(|o| format!("{}: {:.3e} over {} seeds", o.layer, o.worst_rel_error, o.seeds))
        .collect();
    let layers: Vec<&str> = outcomes.iter().map(|o| o.layer).collect();
    for needed in ["conv2d", "batchnorm", "relu", "maxpool", "global_maxpool", "dense", "softmax+kl"] {
        if !layers.iter().any(|l| l.starts_with(needed)) {
            failures.push(format!("{needed}: not covered"));
        }
    }
    finish("gradient_suite", start, Duration::from_secs(120), &failures);
}

fn tone(freq: f64, rate: u32, seconds: f64) -> AudioClip {
    let n = (seconds * f64::from(rate)) as usize;
    AudioClip::new((0..n).map(|i| (2.0 * PI * freq * i as f64 / f64::from(rate)).sin() as f32).collect(), rate, "tone", None).unwrap()
}

fn rms(x: &[f32]) -> f64 {
    (x.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

const RESCALE_INPUT: [[f32; 5]; 2] = [[0.0, 1.0, 4.0, 9.0, 16.0], [3.0, -1.0, 2.5, 0.25, 7.0]];

// Aligned-corner linear interpolation of RESCALE_INPUT, computed in float64
// with numpy.interp.
fn rescale_oracle(target: usize) -> [Vec<f64>; 2] {
    match target {
        3 => [vec![0.0, 4.0, 16.0], vec![3.0, 2.5, 7.0]],
        9 => [vec![0.0, 0.5, 1.0, 2.5, 4.0, 6.5, 9.0, 12.5, 16.0], vec![3.0, 1.0, -1.0, 0.75, 2.5, 1.375, 0.25, 3.625, 7.0]],
        12 => [
            vec![
                0.0,
                0.36363636363636365,
                0.7272727272727273,
                1.2727272727272725,
                2.3636363636363638,
                3.454545454545455,
                4.909090909090908,
                6.727272727272727,
                8.545454545454547,
                10.90909090909091,
                13.454545454545457,
                16.0,
            ],
            vec![
                3.0,
                1.5454545454545454,
                0.09090909090909083,
                -0.6818181818181821,
                0.590909090909091,
                1.8636363636363642,
                2.0909090909090913,
                1.272727272727273,
                0.45454545454545414,
                2.090909090909092,
                4.545454545454548,
                7.0,
            ],
        ],
        _ => unreachable!(),
    }
}

#[test]
fn dsp_suite() {
    let start = Instant::now();
    let mut failures = Vec::new();

    let fe = FrontEnd::new(FrontEndKind::ScalMorse);
    for mother in [Mother::Morse, Mother::Amor] {
        for f in [200.0, 500.0, 1000.0, 1800.0] {
            let img = cwt_scalogram(&tone(f, 4000, 2.0), mother, fe.fmin, fe.fmax, fe.n_freq).unwrap();
            let means = img.row_means();
            let peak = (0..means.len()).max_by(|&a, &b| means[a].total_cmp(&means[b])).unwrap();
            let axis = img.freq_axis();
            let nearest = (0..axis.len()).min_by(|&a, &b| (axis[a] - f).abs().total_cmp(&(axis[b] - f).abs())).unwrap();
            if peak.abs_diff(nearest) > 1 {
                failures.push(format!("{mother:?} {f} Hz: peak row {peak} ({:.1} Hz), nearest row {nearest}", axis[peak]));
            }
        }
    }

    for len in [512, 513, 767, 768, 1023, 4000, 40_000] {
        let clip = AudioClip::new((0..len).map(|i| ((i * 37) % 101) as f32 / 101.0 - 0.5).collect(), 4000, "g", None).unwrap();
        let img = gammatonegram(&clip, 512, 256, 16, 100.0, 2000.0).unwrap();
        let want = (len - 512) / 256 + 1;
        if img.cols() != want || frame_count(len, 512, 256) != want {
            failures.push(format!("gammatone frames for {len} samples: {}, want {want}", img.cols()));
        }
    }

    let rate = 16_000;
    for (f, pass) in [(1000.0, true), (30.0, false), (3000.0, false)] {
        let clip = tone(f, rate, 4.0);
        let out = bandpass(&clip, 100.0, 2000.0).unwrap();
        let mid = rate as usize..3 * rate as usize;
        let gain = 20.0 * (rms(&out.samples()[mid.clone()]) / rms(&clip.samples()[mid])).log10();
        let ok = if pass { gain.abs() <= 3.0 } else { gain <= -20.0 };
        if !ok {
            failures.push(format!("band-pass gain at {f} Hz: {gain:.2} dB"));
        }
    }

    let values: Vec<f32> = RESCALE_INPUT.iter().flatten().copied().collect();
    let src = AudioClip::new(vec![0.0], 4000, "r", None).unwrap().source().clone();
    let img = SpectrogramImage::new(values, 2, 5, FrontEndKind::Gamma, vec![100.0, 200.0], src).unwrap();
    for target in [3, 9, 12] {
        let out = rescale_time(&img, target);
        let oracle = rescale_oracle(target);
        let worst =
            (0..2).flat_map(|r| out.row(r).iter().zip(&oracle[r]).map(|(&a, &b)| (f64::from(a) - b).abs()).collect::<Vec<_>>()).fold(0.0, f64::max);
        if out.cols() != target || worst >= 1e-6 {
            failures.push(format!("rescale to {target}: worst error {worst:.2e}"));
        }
    }

    finish("dsp_suite", start, Duration::from_secs(60), &failures);
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

fn label_fixtures() -> Vec<SoftLabel> {
    let raw: [&[f64]; 7] = [
        &[1.0, 0.0, 0.0, 0.0],
        &[0.25, 0.25, 0.25, 0.25],
        &[0.1, 0.2, 0.3, 0.4],
        &[0.7, 0.1, 0.1, 0.1],
        &[0.0, 0.5, 0.5, 0.0],
        &[0.05, 0.05, 0.0, 0.9],
        &[0.3, 0.3, 0.2, 0.2],
    ];
    raw.iter().map(|r| SoftLabel::new(r.to_vec()).unwrap()).collect()
}

#[test]
fn patch_and_ensemble_algebra() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let fixtures = label_fixtures();

    for n in 1..=5 {
        let rows = &fixtures[..n];
        let reference = aggregate_patches(rows).unwrap();
        for perm in permutations(n) {
            let shuffled: Vec<SoftLabel> = perm.iter().map(|&i| rows[i].clone()).collect();
            let got = aggregate_patches(&shuffled).unwrap();
            let err = got.probs().iter().zip(reference.probs()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if err > 1e-15 || predict_label(&got) != predict_label(&reference) {
                failures.push(format!("aggregation of {n} patches under {perm:?}: error {err:e}"));
            }
        }
    }

    for p in &fixtures {
        if ensemble(std::slice::from_ref(p)).unwrap() != *p {
            failures.push(format!("K=1 ensemble changed {:?}", p.probs()));
        }
    }

    for c in 2..=5usize {
        for mask in 1u32..(1 << c) {
            let top = 0.9 / mask.count_ones() as f64;
            let rest = (c as u32 - mask.count_ones()) as f64;
            let low = if rest > 0.0 { 0.1 / rest } else { 0.0 };
            let top = if rest > 0.0 { top } else { 1.0 / c as f64 };
            let probs: Vec<f64> = (0..c).map(|i| if mask >> i & 1 == 1 { top } else { low }).collect();
            let want = mask.trailing_zeros() as usize;
            let got = predict_label(&SoftLabel::new(probs.clone()).unwrap());
            if got != want {
                failures.push(format!("tie {probs:?}: predicted {got}, want {want}"));
            }
        }
    }

    let n = 4;
    let labels: Vec<f32> = fixtures[..n].iter().flat_map(|p| p.probs().iter().map(|&v| v as f32)).collect();
    let batch = Batch { inputs: (0..n * 3).map(|i| i as f32).collect(), labels, n, feature_len: 3, n_classes: 4 };
    let check_simplex = |mixed: &Batch, what: &str, failures: &mut Vec<String>| {
        for i in 0..mixed.n {
            let row = mixed.label_row(i);
            let sum: f32 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&v| v < 0.0) {
                failures.push(format!("{what}: row {i} {row:?}"));
            }
        }
    };
    for perm in permutations(n) {
        for step in 0..=10 {
            let lambda = f64::from(step) / 10.0;
            check_simplex(&mixup_with(&batch, lambda, &perm), &format!("lambda {lambda} perm {perm:?}"), &mut failures);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for alpha in [0.1, 0.4, 1.0, 4.0] {
        for _ in 0..50 {
            let (mixed, lambda) = mixup_batch(&batch, alpha, &mut rng).unwrap();
            check_simplex(&mixed, &format!("alpha {alpha} lambda {lambda}"), &mut failures);
        }
    }

    finish("patch_and_ensemble_algebra", start, Duration::from_secs(5), &failures);
}

fn accuracy(model: &Model, instances: &[Instance]) -> f64 {
    let recs = evaluate_instances(&[(model, instances)]).unwrap();
    recs.iter().filter(|r| r.predicted == r.true_class).count() as f64 / recs.len() as f64
}

fn checkpoint_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    write_checkpoint(model, &mut out).unwrap();
    out
}

const SMOKE_EPOCH_CAP: usize = 30;

fn smoke_config() -> TrainConfig {
    TrainConfig { epochs: SMOKE_EPOCH_CAP, batch_size: 20, lambda: 1e-4, mixup_alpha: 0.4, seed: 1, lr: 1e-3 }
}

/// Trains until eval-mode training accuracy reaches 0.9 or the cap.
fn train_to_threshold(kind: ModelKind, train: &[Instance]) -> (Model, usize, f64) {
    let data = training_set_from_instances(train, 2).unwrap();
    let mut trainer = Trainer::new(Model::new(ModelConfig::new(kind, 2), 1).unwrap(), smoke_config()).unwrap();
    let mut acc = 0.0;
    while trainer.epochs_done() < SMOKE_EPOCH_CAP {
        trainer.run_epoch(&data).unwrap();
        acc = accuracy(trainer.model(), train);
        if acc >= 0.9 {
            break;
        }
    }
    let epochs = trainer.epochs_done();
    (trainer.into_model(), epochs, acc)
}

fn retrain(kind: ModelKind, train: &[Instance], epochs: usize) -> Model {
    let data = training_set_from_instances(train, 2).unwrap();
    let mut trainer = Trainer::new(Model::new(ModelConfig::new(kind, 2), 1).unwrap(), smoke_config()).unwrap();
    for _ in 0..epochs {
        trainer.run_epoch(&data).unwrap();
    }
    trainer.into_model()
}

#[test]
fn end_to_end_smoke() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let clips = two_class_clips(200, 4000, 10.0, 11);
    let (train_clips, test_clips) = clips.split_at(160);
    let front = |kind| {
        let fe = FrontEnd::new(kind);
        (instances_from_clips(train_clips, &fe).unwrap(), instances_from_clips(test_clips, &fe).unwrap())
    };
    let (scal_train, scal_test) = front(FrontEndKind::ScalMorse);
    let (gam_train, gam_test) = front(FrontEndKind::Gamma);

    let mut scal_baseline = None;
    for kind in ModelKind::ALL {
        let (model, epochs, acc) = train_to_threshold(kind, &scal_train);
        eprintln!("smoke {kind} on scal-morse: train accuracy {acc:.3} after {epochs} epoch(s)");
        if acc < 0.9 {
            failures.push(format!("{kind}: train accuracy {acc:.3} after {epochs} epochs"));
        }
        if kind == ModelKind::Baseline {
            if checkpoint_bytes(&retrain(kind, &scal_train, epochs)) != checkpoint_bytes(&model) {
                failures.push(format!("{kind}: retraining with the same seed changed the weights"));
            }
            scal_baseline = Some(model);
        }
    }
    let scal_baseline = scal_baseline.unwrap();
    let (gam_baseline, epochs, acc) = train_to_threshold(ModelKind::Baseline, &gam_train);
    eprintln!("smoke baseline on gamma: train accuracy {acc:.3} after {epochs} epoch(s)");
    if acc < 0.9 {
        failures.push(format!("baseline on gamma: train accuracy {acc:.3} after {epochs} epochs"));
    }

    let members = [accuracy(&scal_baseline, &scal_test), accuracy(&gam_baseline, &gam_test)];
    let recs = evaluate_instances(&[(&scal_baseline, &scal_test), (&gam_baseline, &gam_test)]).unwrap();
    let ens = recs.iter().filter(|r| r.predicted == r.true_class).count() as f64 / recs.len() as f64;
    eprintln!("smoke held-out accuracy: scal-morse {:.3}, gamma {:.3}, ensemble {ens:.3}", members[0], members[1]);
    if ens < members[0].max(members[1]) {
        failures.push(format!("ensemble {ens:.3} below its best member {:.3}", members[0].max(members[1])));
    }

    finish("end_to_end_smoke", start, Duration::from_secs(15 * 60), &failures);
}

fn cli(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_respnet")).current_dir(dir).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

const RUN_ARGS: [&str; 8] = ["--task", "task1", "--frontend", "gamma", "--seed", "9", "--jobs", "1"];

fn prepared(dir: &Path) {
    let c = write_corpus(&dir.join("corpus"), 4, 2, 21).unwrap();
    let (d, s, g) = (c.data_dir.display().to_string(), c.split_file.display().to_string(), c.diagnosis_file.display().to_string());
    cli(dir, &["ingest", "--data-dir", &d, "--split-file", &s, "--diagnosis-file", &g]);
    cli(dir, &[&["prep"][..], &RUN_ARGS].concat());
}

fn full_run(dir: &Path) {
    prepared(dir);
    cli(dir, &[&["train"][..], &RUN_ARGS, &["--epochs", "2", "--batch-size", "8"]].concat());
    cli(dir, &[&["eval"][..], &RUN_ARGS].concat());
}

const ARTIFACTS: [&str; 8] = [
    "runs/gamma/final.ckpt",
    "runs/gamma/best.ckpt",
    "runs/gamma/run.conf",
    "runs/eval-task1-test/report.txt",
    "runs/eval-task1-test/scores.tsv",
    "runs/eval-task1-test/predictions.tsv",
    "runs/eval-task1-test/run.conf",
    "cache/task1/gamma/run.conf",
];

#[test]
fn reproducibility() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    full_run(a.path());
    full_run(b.path());
    for rel in ARTIFACTS {
        let (x, y) = (std::fs::read(a.path().join(rel)).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
        if x != y {
            failures.push(format!("{rel} differs between runs"));
        }
    }

    prepared(c.path());
    let conf = a.path().join("runs/gamma/run.conf").display().to_string();
    cli(c.path(), &["train", "--config", &conf]);
    for rel in ["runs/gamma/final.ckpt", "runs/gamma/run.conf"] {
        if std::fs::read(a.path().join(rel)).unwrap() != std::fs::read(c.path().join(rel)).unwrap() {
            failures.push(format!("{rel} differs when replayed from the saved config"));
        }
    }

    finish("reproducibility", start, Duration::from_secs(10 * 60), &failures);
}
