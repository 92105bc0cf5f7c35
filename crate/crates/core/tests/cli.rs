use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use occ_attrib::data::{draw_few_shot, ingest, manifest_rows, reserve_test, PreprocessSpec, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn write_pngs(dir: &Path, n: usize, colour: [u8; 3], seed: u64) {
    fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let img = image::RgbImage::from_fn(12, 12, |_, _| {
            image::Rgb(colour.map(|c| c.saturating_add(rng.random_range(0..20))))
        });
        img.save(dir.join(format!("img_{i:03}.png"))).unwrap();
    }
}

fn occ(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_occ"))
        .args(args)
        .output()
        .unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

fn fixture(test_sets: &[&str]) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    write_pngs(&root.join("sd"), 30, [200, 120, 40], 1);
    write_pngs(&root.join("coco"), 30, [40, 90, 180], 2);
    write_pngs(&root.join("glide"), 20, [150, 150, 40], 3);
    let tests: Vec<String> = test_sets.iter().map(|t| format!("{t:?}")).collect();
    let text = format!(
        r#"encoder_id = "toy:3"
target_dataset = "sd"
non_target_dataset = "coco"
test_non_target_datasets = [{}]
output_dir = "out"

[train]
epochs = 15
base_lr = 100.0
warm_lr = 10.0
shots = 5

[eval]
n_reps = 3
test_cap = 10
transforms = ["none"]

[sweep]
shots = [2, 5]
"#,
        tests.join(", ")
    );
    let config = root.join("exp.toml");
    fs::write(&config, text).unwrap();
    Fixture {
        _dir: dir,
        root,
        config,
    }
}

fn lines(p: &Path) -> Vec<String> {
    fs::read_to_string(p).unwrap().lines().map(String::from).collect()
}

#[test]
fn ingest_skips_undecodable_files() {
    let dir = tempfile::tempdir().unwrap();
    write_pngs(dir.path(), 5, [10, 20, 30], 0);
    fs::write(dir.path().join("img_002b.png"), b"not an image").unwrap();
    fs::write(dir.path().join("notes.txt"), b"x").unwrap();
    let h = ingest(dir.path(), "set").unwrap();
    assert_eq!(h.count(), 5);
    let ids = h.ids();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    let b = h.load_all(&PreprocessSpec::toy()).unwrap();
    assert_eq!(b.dims(), (5, 3, 8, 8));
    assert!(ingest(&dir.path().join("missing"), "x").is_err());
}

#[test]
fn train_and_test_images_never_overlap() {
    let dir = tempfile::tempdir().unwrap();
    write_pngs(&dir.path().join("a"), 30, [200, 0, 0], 4);
    write_pngs(&dir.path().join("b"), 30, [0, 0, 200], 5);
    let a = ingest(&dir.path().join("a"), "a").unwrap();
    let b = ingest(&dir.path().join("b"), "b").unwrap();
    let (a_train, a_test) = reserve_test(&a, 10);
    let (b_train, _) = reserve_test(&b, 10);
    for seed in 0..4 {
        let s = draw_few_shot(&a_train, &b_train, 5, seed, &PreprocessSpec::toy()).unwrap();
        for id in &s.target_ids {
            assert!(!a_test.ids().contains(id));
        }
    }
    let rows = manifest_rows(&a_test, &a_train, 5, &[0, 1, 2, 3]).unwrap();
    assert_eq!(rows.len(), 30);
    assert_eq!(rows.iter().filter(|r| r.split == Split::TestPool).count(), 10);
    let used: usize = rows.iter().map(|r| r.repetitions.len()).sum();
    assert_eq!(used, 20);
    assert!(rows.iter().all(|r| r.repetitions.len() <= 1));
}

#[test]
fn train_then_eval() {
    let f = fixture(&["coco", "glide"]);
    let cfg = f.config.to_str().unwrap();
    let out = occ(&["train", cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ck = f.root.join("out/checkpoints");
    let first: Vec<Vec<u8>> = (0..3).map(|r| fs::read(ck.join(format!("rep_{r}.json"))).unwrap()).collect();
    assert_eq!(lines(&f.root.join("out/logs/rep_0.jsonl")).len(), 15);
    assert!(f.root.join("out/manifest.tsv").exists());

    let again = occ(&["train", cfg]);
    assert!(again.status.success());
    for (r, bytes) in first.iter().enumerate() {
        assert_eq!(&fs::read(ck.join(format!("rep_{r}.json"))).unwrap(), bytes);
    }

    let out = occ(&["eval", cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let reports: Vec<Value> = lines(&f.root.join("out/results.jsonl"))
        .iter()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(reports.len(), 2);
    assert!(reports.iter().all(|r| r["per_run_auc"].as_array().unwrap().len() == 3));
    let table = lines(&f.root.join("out/results.tsv"));
    assert!(table[0].starts_with("# fingerprint\t"));
    assert_eq!(table[1], "transform\tcoco\tglide\tOverall");
    let cells: Vec<&str> = table[2].split('\t').collect();
    let means: Vec<f64> = reports.iter().map(|r| r["auc_mean"].as_f64().unwrap()).collect();
    let overall: f64 = cells[3].parse().unwrap();
    assert!((overall - (means[0] + means[1]) / 2.0).abs() < 1e-4);

    let flip = occ(&["eval", cfg, "eval.transforms=[\"flip\"]", "test_non_target_datasets=[\"glide\"]"]);
    assert!(flip.status.success());
    let r: Value = serde_json::from_str(&lines(&f.root.join("out/results.jsonl"))[0]).unwrap();
    assert_eq!(r["transform"], "flip");
    let table = lines(&f.root.join("out/results.tsv"));
    let cells: Vec<&str> = table[2].split('\t').collect();
    assert_eq!(cells[0], "flip");
    let single: f64 = cells[2].parse().unwrap();
    assert!((single - r["auc_mean"].as_f64().unwrap()).abs() < 1e-4);

    let missing = occ(&["eval", cfg, "eval.n_reps=5"]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("rep_3"));
}

#[test]
fn config_errors_exit_with_two() {
    let f = fixture(&[]);
    let cfg = f.config.to_str().unwrap();
    let out = occ(&["train", cfg, "non_target_dataset=nowhere"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere"));
    let out = occ(&["train", cfg, "train.shotz=4"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("shotz"));
    let out = occ(&["sweep", cfg, "--axis", "colour"]);
    assert_eq!(out.status.code(), Some(2));
    let out = occ(&["train", "/no/such/config.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweeps_cover_each_axis_value() {
    let f = fixture(&[]);
    let cfg = f.config.to_str().unwrap();
    for (axis, n) in [("epsilon", 6), ("proportion", 5), ("shots", 2)] {
        let out = occ(&["sweep", cfg, "--axis", axis, "eval.n_reps=1", "train.epochs=3"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let reports = lines(&f.root.join(format!("out/sweep_{axis}.jsonl")));
        assert_eq!(reports.len(), n, "{axis}");
        let table = lines(&f.root.join(format!("out/sweep_{axis}.tsv")));
        assert_eq!(table.len(), n + 2);
    }
    let out = occ(&["sweep", cfg, "--axis", "ada-mode", "eval.n_reps=1", "train.epochs=3"]);
    assert!(out.status.success());
    assert_eq!(lines(&f.root.join("out/sweep_ada_mode.jsonl")).len(), 5);
}

#[test]
fn attribute_writes_one_record_per_image() {
    let f = fixture(&[]);
    let cfg = f.config.to_str().unwrap();
    assert!(occ(&["train", cfg, "eval.n_reps=2"]).status.success());
    let manifest = f.root.join("ensemble.toml");
    fs::write(
        &manifest,
        "threshold = 0.5\n\n[[classes]]\nname = \"sd\"\ncheckpoint = \"out/checkpoints/rep_0.json\"\n\n[[classes]]\nname = \"sd_again\"\ncheckpoint = \"out/checkpoints/rep_1.json\"\n",
    )
    .unwrap();
    let imgs = f.root.join("query");
    write_pngs(&imgs, 3, [200, 120, 40], 9);
    fs::write(imgs.join("img_001x.png"), b"broken").unwrap();
    let out_file = f.root.join("records.jsonl");
    let out = occ(&[
        "attribute",
        manifest.to_str().unwrap(),
        imgs.to_str().unwrap(),
        "--out",
        out_file.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let recs: Vec<Value> = lines(&out_file).iter().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(recs.len(), 4);
    let names: Vec<&str> = recs.iter().map(|r| r["path"].as_str().unwrap()).collect();
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(names, sorted);
    for r in &recs {
        if r["path"].as_str().unwrap().ends_with("img_001x.png") {
            assert!(r["error"].is_string());
            assert!(r.get("scores").is_none());
        } else {
            assert_eq!(r["scores"].as_array().unwrap().len(), 2);
            assert_eq!(r["threshold"], 0.5);
            assert!(r["decision"].is_string());
        }
    }
    let bad = occ(&["attribute", manifest.to_str().unwrap(), imgs.join("img_001x.png").to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn export_embeddings_rows() {
    let f = fixture(&[]);
    let cfg = f.config.to_str().unwrap();
    let dest = f.root.join("emb.tsv");
    let args = ["export-embeddings", cfg, "--dataset", "sd", "--dataset", "glide", "--out", dest.to_str().unwrap()];
    let out = occ(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let first = fs::read(&dest).unwrap();
    let rows = lines(&dest);
    assert_eq!(rows.len(), 1 + 50);
    for r in &rows {
        assert_eq!(r.split('\t').count(), 256 + 2);
    }
    assert!(rows[1].starts_with("sd\t"));
    assert!(occ(&args).status.success());
    assert_eq!(fs::read(&dest).unwrap(), first);
}
