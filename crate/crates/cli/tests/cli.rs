use std::path::Path;
use std::process::{Command, Output};

fn expressnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_expressnet")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn train_then_evaluate_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = expressnet(&["train", "--synthetic", "20,20", "--epochs", "20", "--seed", "7", "--out", "runs/a"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("epoch 20/20 loss"));
    assert!(d.join("runs/a/weights.exnw").is_file());
    let history = std::fs::read_to_string(d.join("runs/a/history.csv")).unwrap();
    assert!(history.starts_with("epoch,loss,train_acc,val_ace\n"));
    assert_eq!(history.lines().count(), 21);
    assert!(d.join("runs/a/checkpoints/epoch_0020.exnw").is_file());

    let args = ["eval", "--synthetic", "20,20", "--seed", "7", "--weights", "runs/a/weights.exnw"];
    let o = expressnet(&[&args[..], &["--out", "e1"]].concat(), d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("accuracy  100.00"), "{}", stdout(&o));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("e1/report.json")).unwrap()).unwrap();
    assert_eq!(report["accuracy"], 100.0);
    assert_eq!(report["live_total"].as_u64().unwrap() + report["spoof_total"].as_u64().unwrap(), 8);

    let o = expressnet(&[&args[..], &["--threshold", "0.9999999", "--out", "e2"]].concat(), d);
    assert!(o.status.success(), "{}", stderr(&o));
    let strict = std::fs::read_to_string(d.join("e2/report.json")).unwrap();
    assert_ne!(strict, std::fs::read_to_string(d.join("e1/report.json")).unwrap());

    let o = expressnet(&["det", "--synthetic", "20,20", "--seed", "7", "--weights", "runs/a/weights.exnw", "--grid", "51", "--out", "det"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(d.join("det/det.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("threshold,apcer,bpcer"));
    assert_eq!(csv.lines().count(), 52);
    assert!(d.join("det/det.png").is_file());

    let o = expressnet(&["eval", "--arch", "micro", "--synthetic", "20,20", "--weights", "runs/a/weights.exnw"], d);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("cls.") || stderr(&o).contains("gen."), "{}", stderr(&o));
}

#[test]
fn training_is_reproducible_and_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let base = ["train", "--synthetic", "4,4", "--epochs", "3", "--seed", "5", "--checkpoint-every", "1"];
    for out in ["a", "b"] {
        let o = expressnet(&[&base[..], &["--out", out]].concat(), d);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let read = |p: &str| std::fs::read(d.join(p)).unwrap();
    assert_eq!(read("a/history.csv"), read("b/history.csv"));
    assert_eq!(read("a/weights.exnw"), read("b/weights.exnw"));
    assert_eq!(read("a/checkpoints/epoch_0002.json"), read("b/checkpoints/epoch_0002.json"));

    let o = expressnet(&["train", "--resume", "a/checkpoints/epoch_0001.exnw", "--synthetic", "4,4", "--out", "c"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read("a/history.csv"), read("c/history.csv"));
    assert_eq!(read("a/weights.exnw"), read("c/weights.exnw"));
}

#[test]
fn missing_dataset_exits_with_data_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = expressnet(&["train", "--data", "no/such/dir", "--epochs", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no/such/dir"), "{}", stderr(&o));
}

#[test]
fn single_class_directory_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    for sub in ["live", "spoof"] {
        std::fs::create_dir_all(dir.path().join("set").join(sub)).unwrap();
    }
    image::GrayImage::new(8, 8).save(dir.path().join("set/live/a.png")).unwrap();
    let o = expressnet(&["train", "--data", "set", "--epochs", "1"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["frobnicate"][..],
        &["train", "--epochs", "many"],
        &["train", "--synthetic", "3"],
        &["train", "--synthetic", "2,2", "--lr", "0"],
        &["eval", "--synthetic", "2,2"],
        &["arch-report", "--size", "4"],
    ] {
        let o = expressnet(args, dir.path());
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn corrupt_weights_exit_with_model_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.exnw"), b"NOPE\x01\x00\x00\x00").unwrap();
    let o = expressnet(&["eval", "--synthetic", "2,2", "--weights", "bad.exnw"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("bad magic"), "{}", stderr(&o));
}

#[test]
fn arch_report_lists_both_block_counts() {
    let dir = tempfile::tempdir().unwrap();
    let o = expressnet(&["arch-report"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.lines().any(|l| l == "block convs: 48"));
    assert!(text.lines().any(|l| l == "block convs: 30"));
    assert_eq!(text.lines().filter(|l| l.starts_with("parameters: ")).count(), 2);
}

#[test]
fn heatmap_is_a_full_size_grayscale_png() {
    let dir = tempfile::tempdir().unwrap();
    image::GrayImage::from_fn(300, 200, |x, y| image::Luma([(x ^ y) as u8])).save(dir.path().join("finger.png")).unwrap();
    let o = expressnet(&["heatmap", "--arch", "full", "--input", "finger.png", "--out", "maps"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let img = image::open(dir.path().join("maps/finger_heatmap.png")).unwrap();
    assert_eq!((img.width(), img.height()), (512, 512));
    assert!(matches!(img.color(), image::ColorType::L8));
}

#[test]
fn config_file_values_are_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), "synthetic = 3,3\nepochs = 2\nseed = 4\nout = from_file\n").unwrap();
    let o = expressnet(&["--config", "run.cfg", "train", "--epochs", "1", "--arch", "micro"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let history = std::fs::read_to_string(dir.path().join("from_file/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 2);

    std::fs::write(dir.path().join("bad.cfg"), "colour = blue\n").unwrap();
    let o = expressnet(&["--config", "bad.cfg", "arch-report"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn thread_count_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |v: &str| {
        Command::new(env!("CARGO_BIN_EXE_expressnet"))
            .args(["arch-report", "--size", "224"])
            .env("EXPRESSNET_THREADS", v)
            .current_dir(dir.path())
            .output()
            .unwrap()
    };
    assert!(run("2").status.success());
    assert_eq!(run("zero").status.code(), Some(1));
}

#[test]
fn synth_materializes_both_splits() {
    let dir = tempfile::tempdir().unwrap();
    let o = expressnet(&["synth", "--synthetic", "5,5", "--seed", "1", "--size", "64", "--out", "syn"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let count = |p: &str| std::fs::read_dir(dir.path().join(p)).unwrap().count();
    assert_eq!(count("syn/train/live") + count("syn/train/spoof"), 8);
    assert_eq!(count("syn/test/live") + count("syn/test/spoof"), 2);
    let o = expressnet(&["eval", "--data", "syn/test", "--weights", "missing.exnw"], dir.path());
    assert_eq!(o.status.code(), Some(3));
}
