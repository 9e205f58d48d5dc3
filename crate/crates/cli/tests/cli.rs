use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use regionfer::data::read_manifest;
use regionfer::imaging::{write_gray, GrayImage};
use regionfer::regions::Region;
use regionfer::training::Checkpoint;
use tempfile::TempDir;

fn regionfer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regionfer"))
        .args(args)
        .env_remove("REGIONFER_OUT")
        .output()
        .expect("spawn regionfer")
}

fn ok(args: &[&str]) -> String {
    let out = regionfer(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, classes: usize, per_class: usize) -> PathBuf {
    let store = dir.join(format!("synth{classes}"));
    ok(&[
        "synth",
        "--classes",
        &classes.to_string(),
        "--per-class",
        &per_class.to_string(),
        "--out",
        p(&store),
    ]);
    store
}

const TINY_CLASSIFIER: &[&str] = &["--plan", "4/8", "--max-epochs", "2", "--runs", "1", "--quiet"];
const TINY_VISUALIZER: &[&str] = &[
    "--model",
    "visualizer",
    "--initial-channels",
    "4",
    "--blocks",
    "2",
    "--layers-per-block",
    "1",
    "--growth-rate",
    "4",
    "--max-epochs",
    "1",
    "--runs",
    "1",
    "--quiet",
];

fn train(store: &Path, region: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", p(store), "--region", region, "--out", p(out)];
    args.extend_from_slice(extra);
    regionfer(&args)
}

#[test]
fn synth_manifest_totals_match_parameters() {
    let dir = TempDir::new().unwrap();
    let store = synth(dir.path(), 4, 15);
    let m = read_manifest(&store).unwrap();
    assert_eq!(m.train_total() + m.test_total(), 60);
    assert_eq!(m.test_counts, vec![3; 4]);
}

#[test]
fn outputs_are_not_overwritten_without_force() {
    let dir = TempDir::new().unwrap();
    let store = synth(dir.path(), 3, 5);
    let again = regionfer(&["synth", "--per-class", "5", "--out", p(&store)]);
    assert_eq!(code(&again), 2);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    ok(&["synth", "--per-class", "5", "--out", p(&store), "--force"]);
}

#[test]
fn missing_label_file_exits_2_naming_the_path() {
    let dir = TempDir::new().unwrap();
    let labels = dir.path().join("absent_label.lst");
    let out = regionfer(&[
        "prepare",
        "expw",
        "--images",
        p(dir.path()),
        "--labels",
        p(&labels),
        "--out",
        p(&dir.path().join("store")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent_label.lst"));
}

#[test]
fn malformed_label_row_exits_2() {
    let dir = TempDir::new().unwrap();
    let labels = dir.path().join("label.lst");
    fs::write(&labels, "a.jpg 0 1 2 3\n").unwrap();
    let out = regionfer(&[
        "prepare",
        "expw",
        "--images",
        p(dir.path()),
        "--labels",
        p(&labels),
        "--out",
        p(&dir.path().join("store")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("label.lst:1"));
}

#[test]
fn expw_default_threshold_is_strictly_greater_than_60() {
    let dir = TempDir::new().unwrap();
    let images = dir.path().join("images");
    fs::create_dir(&images).unwrap();
    write_gray(&images.join("a.pgm"), &GrayImage::new(40, 40, 90)).unwrap();
    let labels = dir.path().join("label.lst");
    fs::write(
        &labels,
        "a.jpg 0 0 0 20 20 60 3\na.jpg 1 10 10 30 30 61 3\na.jpg 2 5 5 25 25 60.5 6\n",
    )
    .unwrap();
    let store = dir.path().join("store");
    let stdout = ok(&[
        "prepare",
        "expw",
        "--images",
        p(&images),
        "--labels",
        p(&labels),
        "--out",
        p(&store),
    ]);
    assert!(stdout.contains("discrepancy"), "{stdout}");
    let m = read_manifest(&store).unwrap();
    assert_eq!(m.train_total() + m.test_total(), 2);
    assert_eq!(m.filters["min_confidence_exclusive"], "60");
}

#[test]
fn regions_lists_index_sets() {
    let stdout = ok(&["regions", "--region", "mouth,nose"]);
    assert!(stdout.contains("mouth\t49,50,51,52,53,54,55,56,57,58,59,60,61,62,63,64,65,66,67,68"));
    assert!(stdout.contains("nose\t29,30,31,32,33,34,35,36"));
}

#[test]
fn regions_writes_crops_from_sidecar() {
    let dir = TempDir::new().unwrap();
    let store = synth(dir.path(), 3, 2);
    let image = store.join("images/000000.pgm");
    let crops = dir.path().join("crops");
    let stdout = ok(&["regions", "--image", p(&image), "--region", "mouth", "--out", p(&crops)]);
    assert!(stdout.lines().nth(1).unwrap().starts_with("mouth\t"));
    assert!(crops.join("000000.mouth.pgm").is_file());
}

#[test]
fn train_records_region_and_eval_reports() {
    let dir = TempDir::new().unwrap();
    let store = synth(dir.path(), 3, 10);
    let ckpt = dir.path().join("mouth.frxa");
    let out = train(&store, "mouth", &ckpt, TINY_CLASSIFIER);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let loaded = Checkpoint::load(&ckpt).unwrap();
    assert_eq!(loaded.input.region, Region::Mouth);
    assert!(loaded.input.padding);
    let log = fs::read_to_string(dir.path().join("mouth.frxa.log")).unwrap();
    assert_eq!(log.lines().filter(|l| l.starts_with("run=0 epoch=")).count(), 2);

    let eval_dir = dir.path().join("eval");
    let stdout = ok(&[
        "eval",
        "--data",
        p(&store),
        "--checkpoint",
        p(&ckpt),
        "--out",
        p(&eval_dir),
    ]);
    assert!(stdout.contains("mouth\t"));
    let report = fs::read_to_string(eval_dir.join("report.txt")).unwrap();
    assert!(report.contains("accuracy\t"));
    assert!(eval_dir.join("confusion.png").is_file() && eval_dir.join("confusion.pgm").is_file());
}

#[test]
fn no_padding_flag_is_recorded() {
    let dir = TempDir::new().unwrap();
    let store = synth(dir.path(), 3, 5);
    let ckpt = dir.path().join("np.frxa");
    let mut args = TINY_CLASSIFIER.to_vec();
    args.push("--no-padding");
    assert!(train(&store, "nose", &ckpt, &args).status.success());
    assert!(!Checkpoint::load(&ckpt).unwrap().input.padding);
}

#[test]
fn eval_compares_regions_in_fixed_order() {
    let dir = TempDir::new().unwrap();
    let store = synth(dir.path(), 3, 5);
    let eyes = dir.path().join("eyes.frxa");
    let mouth = dir.path().join("mouth.frxa");
    assert!(train(&store, "eyes", &eyes, TINY_CLASSIFIER).status.success());
    assert!(train(&store, "mouth", &mouth, TINY_CLASSIFIER).status.success());
    let out = dir.path().join("cmp");
    let stdout = ok(&[
        "eval",
        "--data",
        p(&store),
        "--checkpoint",
        p(&eyes),
        p(&mouth),
        "--out",
        p(&out),
    ]);
    let regions: Vec<&str> = stdout.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(
        regions,
        [
            "mouth",
            "nose",
            "eyes",
            "nose_mouth",
            "nose_eyes",
            "mouth_eyes",
            "whole_face"
        ]
    );
    assert!(stdout.contains("nose\tabsent"));
    assert!(out.join("confusion.eyes.png").is_file());
}

#[test]
fn class_mismatch_exits_3() {
    let dir = TempDir::new().unwrap();
    let three = synth(dir.path(), 3, 5);
    let four = synth(dir.path(), 4, 5);
    let ckpt = dir.path().join("m.frxa");
    assert!(train(&three, "mouth", &ckpt, TINY_CLASSIFIER).status.success());
    let out = regionfer(&[
        "eval",
        "--data",
        p(&four),
        "--checkpoint",
        p(&ckpt),
        "--out",
        p(&dir.path().join("e")),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn corrupt_checkpoint_exits_3() {
    let dir = TempDir::new().unwrap();
    let store = synth(dir.path(), 3, 2);
    let ckpt = dir.path().join("bad.frxa");
    fs::write(&ckpt, b"not a checkpoint").unwrap();
    let out = regionfer(&["eval", "--data", p(&store), "--checkpoint", p(&ckpt)]);
    assert_eq!(code(&out), 3);
}

#[test]
fn divergence_exits_4() {
    let dir = TempDir::new().unwrap();
    let store = synth(dir.path(), 3, 10);
    let args = [
        "--plan",
        "4/8",
        "--max-epochs",
        "3",
        "--runs",
        "1",
        "--quiet",
        "--lr0",
        "1e38",
    ];
    let out = train(&store, "mouth", &dir.path().join("d.frxa"), &args);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn cam_all_classes_writes_one_heatmap_per_class() {
    let dir = TempDir::new().unwrap();
    let store = synth(dir.path(), 7, 5);
    let ckpt = dir.path().join("vis.frxa");
    let out = train(&store, "whole_face", &ckpt, TINY_VISUALIZER);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let image = store.join("images/000000.pgm");
    let cams = dir.path().join("cams");
    ok(&[
        "cam",
        "--checkpoint",
        p(&ckpt),
        "--image",
        p(&image),
        "--classes",
        "all",
        "--out",
        p(&cams),
    ]);
    let count = |ext: &str| {
        fs::read_dir(&cams)
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == ext))
            .count()
    };
    assert_eq!((count("png"), count("ppm")), (7, 7));
}

#[test]
fn cam_rejects_classifier_with_exit_3() {
    let dir = TempDir::new().unwrap();
    let store = synth(dir.path(), 3, 5);
    let ckpt = dir.path().join("m.frxa");
    assert!(train(&store, "mouth", &ckpt, TINY_CLASSIFIER).status.success());
    let out = regionfer(&["cam", "--checkpoint", p(&ckpt), "--data", p(&store)]);
    assert_eq!(code(&out), 3);
}

#[test]
fn export_features_writes_header_and_rows() {
    let dir = TempDir::new().unwrap();
    let store = synth(dir.path(), 3, 5);
    let ckpt = dir.path().join("vis.frxa");
    assert!(train(&store, "mouth", &ckpt, TINY_VISUALIZER).status.success());
    let table = dir.path().join("f.tsv");
    ok(&[
        "export-features",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&store),
        "--out",
        p(&table),
    ]);
    let text = fs::read_to_string(&table).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "# classes\tbar\tdisk\tring");
    let width = lines.next().unwrap().split('\t').count();
    assert!(lines.all(|l| l.split('\t').count() == width));
}

#[test]
fn fixed_seed_commands_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let store = synth(dir.path(), 3, 6);
    let mut outputs = Vec::new();
    for attempt in 0..2 {
        let ckpt = dir.path().join(format!("v{attempt}.frxa"));
        assert!(train(&store, "mouth", &ckpt, TINY_VISUALIZER).status.success());
        let eval_dir = dir.path().join(format!("e{attempt}"));
        ok(&[
            "eval",
            "--data",
            p(&store),
            "--checkpoint",
            p(&ckpt),
            "--out",
            p(&eval_dir),
        ]);
        let cam_dir = dir.path().join(format!("c{attempt}"));
        ok(&[
            "cam",
            "--checkpoint",
            p(&ckpt),
            "--data",
            p(&store),
            "--limit",
            "2",
            "--out",
            p(&cam_dir),
        ]);
        outputs.push((
            fs::read(&ckpt).unwrap(),
            fs::read(eval_dir.join("report.txt")).unwrap(),
            fs::read(cam_dir.join("test-000000.bar.cam.ppm")).unwrap(),
            fs::read(cam_dir.join("test-000001.ring.cam.png")).unwrap(),
        ));
    }
    assert!(outputs[0] == outputs[1]);
}

#[test]
fn default_output_root_comes_from_environment() {
    let dir = TempDir::new().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_regionfer"))
        .args(["synth", "--per-class", "3"])
        .env("REGIONFER_OUT", dir.path())
        .output()
        .unwrap();
    assert!(status.status.success());
    assert!(dir.path().join("synthetic/manifest.json").is_file());
}
