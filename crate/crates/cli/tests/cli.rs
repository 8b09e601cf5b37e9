use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cxrage::dataset::parse_metadata;
use cxrage_cli::{disparity_csv, disparity_rows, Direction};
use tempfile::TempDir;

fn cxrage(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cxrage"))
        .args(args)
        .env_clear()
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cxrage(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = cxrage(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("error:"), "stderr: {stderr}");
    stderr
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, n: usize, size: usize, seed: u64) -> PathBuf {
    let out = dir.join(name);
    ok(&[
        "synth",
        "--out",
        s(&out),
        "--n",
        &n.to_string(),
        "--size",
        &size.to_string(),
        "--seed",
        &seed.to_string(),
    ]);
    out
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

/// Synthetic data plus a checkpoint trained on it for two epochs.
struct Fixture {
    dir: TempDir,
    data: PathBuf,
    ckpt: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let data = synth(dir.path(), "data", 40, 64, 1);
        let ckpt = dir.path().join("model.agsc");
        ok(&[
            "train",
            "--metadata",
            s(&data.join("metadata.csv")),
            "--images",
            s(&data),
            "--epochs",
            "2",
            "--patience",
            "1",
            "--batch-size",
            "8",
            "--out",
            s(&ckpt),
        ]);
        Fixture { dir, data, ckpt }
    }

    fn metadata(&self) -> PathBuf {
        self.data.join("metadata.csv")
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

#[test]
fn synth_writes_images_metadata_and_region() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a", 12, 16, 7);
    let names = files(&a);
    assert_eq!(names.iter().filter(|n| n.ends_with(".pgm")).count(), 12);
    assert!(names.contains(&"metadata.csv".to_string()));
    assert_eq!(fs::read_to_string(a.join("region.txt")).unwrap().trim(), "6,6,10,10");
    let recs = parse_metadata(&fs::read_to_string(a.join("metadata.csv")).unwrap()).unwrap();
    assert_eq!(recs.len(), 12);
    assert!(recs.iter().all(|r| r.patient_age <= 90));

    let b = synth(dir.path(), "b", 12, 16, 7);
    for name in &names {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn synth_rejects_bad_region_and_leaves_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bad");
    fails(&[
        "synth",
        "--out",
        s(&out),
        "--n",
        "4",
        "--size",
        "16",
        "--region",
        "0,0,16,16",
    ]);
    fails(&[
        "synth",
        "--out",
        s(&out),
        "--n",
        "4",
        "--size",
        "16",
        "--region",
        "1,2,3",
    ]);
    assert!(!out.exists());
    assert!(files(dir.path()).is_empty());
}

#[test]
fn synth_refuses_nonempty_output() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a", 4, 16, 0);
    let before = files(&a);
    fails(&["synth", "--out", s(&a), "--n", "4", "--size", "16"]);
    assert_eq!(files(&a), before);
}

#[test]
fn train_reports_empty_view_filter() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), "data", 10, 16, 0);
    let ckpt = dir.path().join("m.agsc");
    let err = fails(&[
        "train",
        "--metadata",
        s(&data.join("metadata.csv")),
        "--images",
        s(&data),
        "--view",
        "AP",
        "--out",
        s(&ckpt),
    ]);
    assert!(err.contains("empty after view filter"), "{err}");
    assert!(!ckpt.exists());
    assert!(!dir.path().join("m.agsc.stats.csv").exists());
}

#[test]
fn train_eval_saliency_and_disparity_pipeline() {
    let f = Fixture::new();
    let stats = fs::read_to_string(f.path("model.agsc.stats.csv")).unwrap();
    let mut lines = stats.lines();
    assert_eq!(lines.next(), Some("epoch,train_loss,val_loss,val_r2"));
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty() && rows.len() <= 2);
    for (i, row) in rows.iter().enumerate() {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 4);
        assert_eq!(cols[0], (i + 1).to_string());
        assert!(cols[1..].iter().all(|c| c.parse::<f64>().is_ok()));
    }

    // eval
    let report = f.path("report.json");
    let summary = ok(&[
        "eval",
        "--ckpt",
        s(&f.ckpt),
        "--metadata",
        s(&f.metadata()),
        "--images",
        s(&f.data),
        "--view",
        "PA",
        "--report",
        s(&report),
    ]);
    assert!(summary.contains("recall±9"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let mut keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort();
    assert_eq!(
        keys,
        [
            "mean_signed_error_years",
            "mse_normalized",
            "n",
            "r_squared",
            "recall_pm4",
            "recall_pm9",
            "view"
        ]
    );
    assert_eq!(json["n"], 40);
    assert_eq!(json["view"], "PA");
    assert!(json["recall_pm4"].as_f64().unwrap() <= json["recall_pm9"].as_f64().unwrap());

    // saliency, single image
    let one = f.path("sal1");
    ok(&[
        "saliency",
        "--ckpt",
        s(&f.ckpt),
        "--image",
        s(&f.data.join("synth_000003.pgm")),
        "--out",
        s(&one),
    ]);
    assert_eq!(files(&one), ["saliency.csv", "synth_000003.pgm.saliency.png"]);

    // saliency, five images with a region
    let five = f.path("sal5");
    ok(&[
        "saliency",
        "--ckpt",
        s(&f.ckpt),
        "--metadata",
        s(&f.metadata()),
        "--images",
        s(&f.data),
        "--limit",
        "5",
        "--region",
        s(&f.data.join("region.txt")),
        "--out",
        s(&five),
    ]);
    let pngs: Vec<String> = files(&five).into_iter().filter(|n| n.ends_with(".png")).collect();
    let expected: Vec<String> = (0..5).map(|i| format!("synth_{i:06}.pgm.saliency.png")).collect();
    assert_eq!(pngs, expected);
    let csv = fs::read_to_string(five.join("saliency.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("image_index,raw_max,region_ratio"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5);
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        assert!(cols[2].parse::<f64>().unwrap() > 0.0, "{row}");
    }

    // disparity
    let disp = f.path("disparity.csv");
    ok(&[
        "disparity",
        "--ckpt",
        s(&f.ckpt),
        "--metadata",
        s(&f.metadata()),
        "--images",
        s(&f.data),
        "--threshold",
        "10",
        "--out",
        s(&disp),
    ]);
    let text = fs::read_to_string(&disp).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("image_index,real_age,predicted_age,gap_years,direction")
    );
    let mut last = f64::INFINITY;
    for row in lines {
        let cols: Vec<&str> = row.split(',').collect();
        let gap: f64 = cols[3].parse().unwrap();
        assert!(gap.abs() > 10.0 && gap.abs() <= last);
        assert_eq!(cols[4], if gap > 0.0 { "OLDER" } else { "YOUNGER" });
        last = gap.abs();
    }
}

#[test]
fn checkpoint_defects_fail_cleanly() {
    let f = Fixture::new();
    let report = f.path("r.json");
    let data_args = |ckpt: &Path| -> Vec<String> {
        [
            "eval",
            "--ckpt",
            s(ckpt),
            "--metadata",
            s(&f.metadata()),
            "--images",
            s(&f.data),
            "--report",
            s(&report),
        ]
        .iter()
        .map(|a| a.to_string())
        .collect()
    };
    let run_fail = |ckpt: &Path| {
        let args = data_args(ckpt);
        fails(&args.iter().map(String::as_str).collect::<Vec<_>>())
    };

    let err = run_fail(&f.path("missing.agsc"));
    assert!(err.contains("missing.agsc"), "{err}");

    let mut bytes = fs::read(&f.ckpt).unwrap();
    bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
    let versioned = f.path("v2.agsc");
    fs::write(&versioned, &bytes).unwrap();
    let err = run_fail(&versioned);
    assert!(err.contains("version 2"), "{err}");

    let bytes = fs::read(&f.ckpt).unwrap();
    let truncated = f.path("cut.agsc");
    fs::write(&truncated, &bytes[..bytes.len() - 10]).unwrap();
    let err = run_fail(&truncated);
    assert!(err.contains("truncated"), "{err}");

    assert!(!report.exists());
    let err = fails(&[
        "saliency",
        "--ckpt",
        s(&f.path("missing.agsc")),
        "--image",
        "x.pgm",
        "--out",
        s(&f.path("o")),
    ]);
    assert!(err.contains("missing.agsc"));
    assert!(!f.path("o").exists());
}

#[test]
fn usage_errors_have_error_prefix() {
    fails(&["train"]);
    fails(&["synth", "--out", "x", "--n", "abc"]);
    fails(&["nonsense"]);
}

fn cases(pairs: &[(f64, f64)]) -> Vec<(String, f64, f64)> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, &(real, pred))| (format!("case{i:02}"), real, pred))
        .collect()
}

#[test]
fn disparity_reference_pairs() {
    let input = cases(&[
        (70.0, 50.0),
        (41.0, 56.0),
        (76.0, 61.0),
        (30.0, 40.0),
        (60.0, 50.0),
        (33.0, 36.0),
    ]);
    let rows = disparity_rows(&input, 10.0);
    let got: Vec<(f64, f64, f64, Direction)> = rows
        .iter()
        .map(|r| (r.real_age, r.predicted_age, r.gap_years, r.direction))
        .collect();
    assert_eq!(
        got,
        [
            (70.0, 50.0, -20.0, Direction::Younger),
            (41.0, 56.0, 15.0, Direction::Older),
            (76.0, 61.0, -15.0, Direction::Younger),
        ]
    );
    let csv = disparity_csv(&rows);
    assert_eq!(csv.lines().nth(1), Some("case00,70,50.0000,-20.0000,YOUNGER"));
}

#[test]
fn disparity_matches_brute_force() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
    let input: Vec<(String, f64, f64)> = (0..500)
        .map(|i| {
            let real = f64::from(rng.random_range(0u32..=90));
            let pred = match i % 5 {
                0 => real + 10.0,
                1 => real - 10.0,
                _ => real + rng.random_range(-25.0..25.0),
            };
            (format!("img{i:04}"), real, pred)
        })
        .collect();
    let rows = disparity_rows(&input, 10.0);

    let mut expected: Vec<&(String, f64, f64)> = Vec::new();
    for case in &input {
        let gap = case.2 - case.1;
        if !(-10.0..=10.0).contains(&gap) {
            expected.push(case);
        }
    }
    assert_eq!(rows.len(), expected.len());
    let mut got_ids: Vec<&str> = rows.iter().map(|r| r.image_index.as_str()).collect();
    let mut want_ids: Vec<&str> = expected.iter().map(|c| c.0.as_str()).collect();
    got_ids.sort();
    want_ids.sort();
    assert_eq!(got_ids, want_ids);
    assert!(rows.windows(2).all(|w| w[0].gap_years.abs() >= w[1].gap_years.abs()));
    assert!(rows.iter().all(|r| (r.gap_years.abs() - 10.0).abs() > 0.0));
}
