//! Drives the `pedcnn` binary end to end on toy corpora.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use pedcnn::data::synthetic::{class_image, write_toy_coco, NOISE};
use pedcnn::data::{write_ppm, DemographicClass};
use pedcnn::metrics::MetricsReport;
use pedcnn::train::EpochRecord;

fn pedcnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pedcnn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn history(path: &Path) -> Vec<EpochRecord> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// A toy corpus prepared once and a model 8 trained on it, shared by the
/// evaluate and infer tests.
struct Trained {
    _dir: tempfile::TempDir,
    work: PathBuf,
    out: PathBuf,
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let (ann, frames) = write_toy_coco(dir.path(), 20, 1).unwrap();
        let work = dir.path().join("work");
        let o = pedcnn(&[
            "prepare",
            "--annotations",
            s(&ann),
            "--frames",
            s(&frames),
            "--workdir",
            s(&work),
            "--target",
            "50",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let out = dir.path().join("run");
        let o = pedcnn(&[
            "train",
            "--workdir",
            s(&work),
            "--model",
            "8",
            "--epochs",
            "4",
            "--out",
            s(&out),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        Trained { _dir: dir, work, out }
    })
}

#[test]
fn inspect_prints_ledgers() {
    let o = pedcnn(&["inspect", "8"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("1,573,574 / 1,572,614"));
    let o = pedcnn(&["inspect", "1"]);
    assert!(stdout(&o).contains("24,639,878 / 1,052,166"));
    let body = |id: &str| {
        stdout(&pedcnn(&["inspect", id]))
            .lines()
            .skip(1)
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(body("5"), body("7"));
}

#[test]
fn bad_invocations_exit_2() {
    assert_eq!(pedcnn(&["inspect", "9"]).status.code(), Some(2));
    assert_eq!(pedcnn(&["inspect", "/no/such/checkpoint.pdcn"]).status.code(), Some(2));
    assert_eq!(pedcnn(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let o = pedcnn(&[
        "prepare",
        "--annotations",
        s(&missing),
        "--frames",
        s(dir.path()),
        "--workdir",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.json"));
}

#[test]
fn prepare_balances_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (ann, frames) = write_toy_coco(dir.path(), 20, 9).unwrap();
    let run = |work: &Path| {
        let o = pedcnn(&[
            "prepare",
            "--annotations",
            s(&ann),
            "--frames",
            s(&frames),
            "--workdir",
            s(work),
            "--target",
            "50",
            "--seed",
            "3",
        ]);
        assert_eq!(o.status.code(), Some(0));
        (stdout(&o), std::fs::read(work.join("manifest.tsv")).unwrap())
    };
    let (table, first) = run(&dir.path().join("a"));
    let (_, second) = run(&dir.path().join("b"));
    assert_eq!(first, second);
    for class in DemographicClass::ALL {
        let row = table.lines().find(|l| l.starts_with(class.name())).unwrap();
        let cols: Vec<&str> = row[class.name().len()..].split_whitespace().collect();
        assert_eq!(cols[0], "50", "{row}");
    }
}

#[test]
fn config_file_and_flags_resolve_in_order() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(
        &conf,
        format!(
            "workdir = {}\nmodel = 7\nepochs = 3\nbatch_size = 16\n",
            t.work.display()
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = pedcnn(&["train", "--config", s(&conf), "--epochs", "1", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(history(&out.join("history.jsonl")).len(), 1);
    let resolved = std::fs::read_to_string(out.join("run.conf")).unwrap();
    for line in ["model = 7", "epochs = 1", "batch_size = 16", "patience = 10"] {
        assert!(resolved.lines().any(|l| l == line), "{line} missing from\n{resolved}");
    }
}

#[test]
fn train_writes_history_and_learns() {
    let t = trained();
    let records = history(&t.out.join("history.jsonl"));
    assert_eq!(records.len(), 4);
    let last = records.last().unwrap();
    assert!(last.train_accuracy >= 0.9, "{last:?}");
    assert!(t.out.join("checkpoint.pdcn").is_file());
    let o = pedcnn(&["inspect", s(&t.out.join("checkpoint.pdcn"))]);
    assert!(stdout(&o).contains("1,573,574 / 1,572,614"));
}

#[test]
fn evaluate_writes_report() {
    let t = trained();
    let report_dir = t.out.join("eval");
    let o = pedcnn(&[
        "evaluate",
        "--checkpoint",
        s(&t.out.join("checkpoint.pdcn")),
        "--workdir",
        s(&t.work),
        "--split",
        "train",
        "--out",
        s(&report_dir),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("accuracy:") && text.contains("macro PR-AUC:"));
    let report =
        MetricsReport::from_json(&std::fs::read_to_string(report_dir.join("report_train.json")).unwrap()).unwrap();
    assert_eq!(report.model_id, 8);
    assert_eq!(report.confusion_matrix.len(), 6);
    assert!(report.confusion_matrix.iter().all(|r| r.len() == 6));
    assert_eq!(report.accuracy, 1.0, "trained model should fit its own train split");
    let csv = std::fs::read_to_string(report_dir.join("report_train_pr.csv")).unwrap();
    let mut sections: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    sections.dedup();
    assert_eq!(sections.len(), 6);
}

#[test]
fn infer_reports_each_image() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let class = DemographicClass::MaleChild;
    let img = dir.path().join("sample.ppm");
    write_ppm(&img, &class_image(class, NOISE, 77)).unwrap();
    let junk = dir.path().join("junk.ppm");
    std::fs::write(&junk, b"not an image").unwrap();
    let ck = t.out.join("checkpoint.pdcn");

    let o = pedcnn(&["infer", "--checkpoint", s(&ck), s(&img), s(&img)]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], lines[1]);
    let cols: Vec<&str> = lines[0].split('\t').collect();
    assert_eq!(cols.len(), 8);
    assert_eq!(cols[1], class.name());
    let sum: f64 = cols[2..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-6, "{sum}");

    let o = pedcnn(&["infer", "--checkpoint", s(&ck), s(&junk), s(&img)]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stdout(&o).lines().count(), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("junk.ppm"));

    let pixels = class_image(class, NOISE, 77);
    let raw: Vec<u8> = pixels
        .data()
        .iter()
        .map(|&v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    let (h, w) = (pixels.shape()[0] as u32, pixels.shape()[1] as u32);
    let png = dir.path().join("sample.png");
    image::RgbImage::from_raw(w, h, raw).unwrap().save(&png).unwrap();
    let o = pedcnn(&["infer", "--checkpoint", s(&ck), s(&png)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).split('\t').nth(1), Some(class.name()));
}

#[test]
fn resnet_history_has_both_phases() {
    let dir = tempfile::tempdir().unwrap();
    let (ann, frames) = write_toy_coco(dir.path(), 5, 2).unwrap();
    let work = dir.path().join("work");
    let o = pedcnn(&[
        "prepare",
        "--annotations",
        s(&ann),
        "--frames",
        s(&frames),
        "--workdir",
        s(&work),
        "--target",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let o = pedcnn(&[
        "train",
        "--workdir",
        s(&work),
        "--model",
        "3",
        "--epochs",
        "1",
        "--fine-tune-epochs",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let phases: Vec<u8> = history(&work.join("model3/history.jsonl"))
        .iter()
        .map(|r| r.phase.number())
        .collect();
    assert_eq!(phases, [1, 2]);
}
