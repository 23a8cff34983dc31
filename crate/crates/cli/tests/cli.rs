use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cooc_core::cooc::{load_filter, make_filter, TRAINABLE_DIAG};
use cooc_core::synthetic::class_dataset;
use cooc_core::tensor::{load_tensor, save_tensor};
use cooc_core::{ActivationTensor, Descriptor, Shape, Tensor3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn cooc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cooc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cooc(args);
    assert!(
        out.status.success(),
        "cooc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn worked() -> ActivationTensor {
    Tensor3::from_vec(Shape::new(2, 1, 2), vec![10.0, 0.0, 0.0, 6.0]).unwrap()
}

fn descriptor(path: &Path) -> Vec<f64> {
    Descriptor::from_tensor(&load_tensor(path).unwrap())
        .unwrap()
        .into_vec()
}

fn write_groundtruth(dir: &Path, ids: &[String], labels: &[usize]) {
    fs::create_dir_all(dir).unwrap();
    for (i, id) in ids.iter().enumerate() {
        let positives: Vec<&str> = ids
            .iter()
            .zip(labels)
            .filter(|(other, &l)| *other != id && l == labels[i])
            .map(|(other, _)| other.as_str())
            .collect();
        fs::write(
            dir.join(format!("q{i:02}_query.txt")),
            format!("oxc1_{id} 0 0 1 1\n"),
        )
        .unwrap();
        fs::write(dir.join(format!("q{i:02}_good.txt")), positives.join("\n")).unwrap();
        fs::write(dir.join(format!("q{i:02}_ok.txt")), "").unwrap();
        fs::write(dir.join(format!("q{i:02}_junk.txt")), "").unwrap();
    }
}

fn read_map(csv: &Path) -> f64 {
    let text = fs::read_to_string(csv).unwrap();
    let last = text.lines().last().unwrap();
    let value = last.strip_prefix("mAP,").expect("final mAP line");
    value.parse().unwrap()
}

#[test]
fn ucrow_gives_channel_means() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("in");
    fs::create_dir(&input).unwrap();
    save_tensor(&worked(), input.join("w.cooct")).unwrap();
    let out = dir.path().join("out");
    ok(&["aggregate", p(&input), p(&out), "--pool", "ucrow"]);
    assert_eq!(descriptor(&out.join("w.cooct")), vec![5.0, 3.0]);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn chco_sct_reproduces_worked_chain() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("in");
    fs::create_dir(&input).unwrap();
    save_tensor(&worked(), input.join("w.cooct")).unwrap();

    let plain = dir.path().join("plain");
    ok(&[
        "aggregate",
        p(&input),
        p(&plain),
        "--radius",
        "1",
        "--thr",
        "4",
    ]);
    let f = descriptor(&plain.join("w.cooct"));
    assert!(
        (f[0] - 7.035).abs() < 1e-3 && (f[1] - 2.611).abs() < 1e-3,
        "{f:?}"
    );

    let masked = dir.path().join("masked");
    ok(&[
        "aggregate",
        p(&input),
        p(&masked),
        "--pool",
        "chco-sct",
        "--mask",
        "topdown",
        "--radius",
        "1",
        "--thr",
        "4",
    ]);
    let g = descriptor(&masked.join("w.cooct"));
    assert!(
        (g[0] - 7.035).abs() < 1e-3 && (g[1] - 2.611 / 2.0).abs() < 1e-3,
        "{g:?}"
    );

    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(masked.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "aggregate");
    assert_eq!(manifest["params"]["pool"], "chco-sct");
    assert_eq!(manifest["params"]["mask"], "topdown");
    assert_eq!(manifest["params"]["cooc"]["radius"], 1);
}

#[test]
fn usage_errors_exit_2() {
    let out = cooc(&["aggregate", "a", "b", "--pool", "maxpool"]);
    assert_eq!(out.status.code(), Some(2));
    let out = cooc(&["eval", "idx", "gt", "out", "--alphaqe", "5"]);
    assert_eq!(out.status.code(), Some(2));
    let out = cooc(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn aggregate_is_bit_exact_and_continues_past_bad_files() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("in");
    fs::create_dir(&input).unwrap();
    let data = class_dataset(3, 2, 3, Shape::new(5, 4, 8), 0.2);
    for (i, t) in data.tensors.iter().enumerate() {
        save_tensor(t, input.join(format!("img{i}.cooct"))).unwrap();
    }
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        ok(&[
            "aggregate",
            p(&input),
            p(out),
            "--pool",
            "cbp",
            "--sketch-dim",
            "64",
            "--seed",
            "7",
        ]);
    }
    for i in 0..data.tensors.len() {
        let name = format!("img{i}.cooct");
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap()
        );
    }

    fs::write(input.join("broken.cooct"), b"COOCT but not really").unwrap();
    let c = dir.path().join("c");
    let out = cooc(&["aggregate", p(&input), p(&c)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("1 of 7"));
    assert!(c.join("img5.cooct").exists());
    let manifest = fs::read_to_string(c.join("manifest.json")).unwrap();
    assert!(manifest.contains("broken.cooct"));
}

/// Aggregates a class dataset and writes ground truth with one query per
/// image. Returns (descriptor dir, ground-truth dir).
fn separable_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let tensors = dir.join("tensors");
    fs::create_dir(&tensors).unwrap();
    let data = class_dataset(61, 4, 6, Shape::new(6, 6, 16), 0.05);
    let ids: Vec<String> = (0..data.tensors.len())
        .map(|i| format!("img{i:03}"))
        .collect();
    for (id, t) in ids.iter().zip(&data.tensors) {
        save_tensor(t, tensors.join(format!("{id}.cooct"))).unwrap();
    }
    let descs = dir.join("descs");
    ok(&["aggregate", p(&tensors), p(&descs), "--radius", "2"]);
    let gt = dir.join("gt");
    write_groundtruth(&gt, &ids, &data.labels);
    (descs, gt)
}

#[test]
fn eval_separable_clusters_and_query_expansion() {
    let dir = TempDir::new().unwrap();
    let (descs, gt) = separable_fixture(dir.path());
    let index = dir.path().join("db.cooi");
    ok(&["index", "build", p(&descs), p(&index)]);
    assert!(dir.path().join("db.cooi.manifest.json").exists());

    let base = dir.path().join("base");
    let stdout = ok(&["eval", p(&index), p(&gt), p(&base)]);
    assert!(stdout.contains("mAP"));
    let m0 = read_map(&base.join("ap.csv"));
    assert!((m0 - 1.0).abs() < 1e-9, "separable mAP {m0}");
    let rows = fs::read_to_string(base.join("ap.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 24 + 1);

    let aqe = dir.path().join("aqe");
    ok(&["eval", p(&index), p(&gt), p(&aqe), "--aqe", "5"]);
    assert!(read_map(&aqe.join("ap.csv")) >= m0);
    let alpha = dir.path().join("alpha");
    ok(&["eval", p(&index), p(&gt), p(&alpha), "--alphaqe", "5,3"]);
    assert!(read_map(&alpha.join("ap.csv")) >= m0);
}

#[test]
fn eval_random_descriptors_near_class_prior() {
    let dir = TempDir::new().unwrap();
    let descs = dir.path().join("descs");
    fs::create_dir(&descs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 80;
    let ids: Vec<String> = (0..n).map(|i| format!("r{i:03}")).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    for id in &ids {
        let v: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        save_tensor(
            &Descriptor::new(v).to_tensor(),
            descs.join(format!("{id}.cooct")),
        )
        .unwrap();
    }
    let gt = dir.path().join("gt");
    write_groundtruth(&gt, &ids, &labels);
    let index = dir.path().join("db.cooi");
    ok(&["index", "build", p(&descs), p(&index)]);
    let out = dir.path().join("eval");
    ok(&["eval", p(&index), p(&gt), p(&out)]);
    let map = read_map(&out.join("ap.csv"));
    // 39 positives among 79 candidates.
    assert!((map - 0.5).abs() < 0.08, "random mAP {map}");
}

#[test]
fn eval_missing_groundtruth_fails() {
    let dir = TempDir::new().unwrap();
    let (descs, _) = separable_fixture(dir.path());
    let index = dir.path().join("db.cooi");
    ok(&["index", "build", p(&descs), p(&index)]);
    let missing = dir.path().join("nope");
    let out = cooc(&["eval", p(&index), p(&missing), p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = cooc(&["eval", p(&index), p(&empty), p(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn whitening_index_and_query_round_trip() {
    let dir = TempDir::new().unwrap();
    let (descs, gt) = separable_fixture(dir.path());
    let model = dir.path().join("w.coow");
    ok(&["whiten", "fit", p(&descs), p(&model), "--dim", "8"]);
    let whitened = dir.path().join("white");
    ok(&["whiten", "apply", p(&model), p(&descs), p(&whitened)]);
    let v = descriptor(&whitened.join("img000.cooct"));
    assert_eq!(v.len(), 8);
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-5);

    let index = dir.path().join("db.cooi");
    ok(&[
        "index",
        "build",
        p(&descs),
        p(&index),
        "--whiten",
        p(&model),
    ]);
    let ranks = dir.path().join("ranks.csv");
    ok(&[
        "index",
        "query",
        p(&index),
        p(&descs.join("img000.cooct")),
        "--whiten",
        p(&model),
        "--out",
        p(&ranks),
        "--top",
        "3",
    ]);
    let text = fs::read_to_string(&ranks).unwrap();
    let first = text.lines().nth(1).unwrap();
    assert!(first.starts_with("img000,1,img000,"), "{first}");
    assert_eq!(text.lines().count(), 4);

    let out = dir.path().join("eval");
    ok(&[
        "eval",
        p(&index),
        p(&gt),
        p(&out),
        "--queries",
        p(&descs),
        "--whiten",
        p(&model),
    ]);
    // Queries finished on the fly match the whitened index entries.
    let direct = dir.path().join("eval_direct");
    ok(&["eval", p(&index), p(&gt), p(&direct)]);
    assert_eq!(
        fs::read_to_string(out.join("ap.csv")).unwrap(),
        fs::read_to_string(direct.join("ap.csv")).unwrap()
    );
}

#[test]
fn multiscale_groups_scales() {
    let dir = TempDir::new().unwrap();
    let descs = dir.path().join("descs");
    fs::create_dir(&descs).unwrap();
    for (name, v) in [
        ("a@1", [1.0, 0.0]),
        ("a@0.5", [0.0, 1.0]),
        ("b@1", [1.0, 1.0]),
    ] {
        save_tensor(
            &Descriptor::new(v.to_vec()).to_tensor(),
            descs.join(format!("{name}.cooct")),
        )
        .unwrap();
    }
    let index = dir.path().join("db.cooi");
    let stdout = ok(&["index", "build", p(&descs), p(&index), "--ms"]);
    assert!(stdout.contains("indexed 2"), "{stdout}");
    let idx = cooc_core::retrieval::load_index(&index).unwrap();
    assert_eq!(idx.ids(), &["a".to_string(), "b".to_string()]);
}

#[test]
fn bench_reports_ratio() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("bench");
    let stdout = ok(&[
        "bench",
        "--shapes",
        "8x6x16,4x4x8",
        "--radius",
        "2",
        "--reps",
        "2",
        "--out",
        p(&out),
    ]);
    assert!(stdout.contains("8x6x16"));
    let csv = fs::read_to_string(out.join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(out.join("manifest.json").exists());
    let out = cooc(&[
        "bench",
        "--shapes",
        "8x6",
        "--out",
        p(&dir.path().join("b2")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn inspect_writes_alpha_and_correlation() {
    let dir = TempDir::new().unwrap();
    let t = dir.path().join("w.cooct");
    save_tensor(&worked(), &t).unwrap();
    let t2 = dir.path().join("w2.cooct");
    save_tensor(&worked(), &t2).unwrap();
    let out = dir.path().join("inspect");
    ok(&[
        "inspect",
        p(&t),
        p(&t2),
        "--out",
        p(&out),
        "--radius",
        "1",
        "--thr",
        "4",
    ]);

    let alpha: Vec<f64> = fs::read_to_string(out.join("w_alpha.csv"))
        .unwrap()
        .lines()
        .flat_map(|l| {
            l.split(',')
                .map(|v| v.parse::<f64>().unwrap())
                .collect::<Vec<_>>()
        })
        .collect();
    assert!(
        (alpha[0] - 0.7173).abs() < 1e-4 && (alpha[1] - 0.9260).abs() < 1e-4,
        "{alpha:?}"
    );

    let pgm = fs::read(out.join("w_alpha.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n1 2\n255\n"));
    assert_eq!(&pgm[pgm.len() - 2..], &[0, 255]);

    let corr = fs::read_to_string(out.join("cv_correlation.csv")).unwrap();
    for line in corr.lines().skip(1) {
        for v in line.split(',').skip(1) {
            assert!((v.parse::<f64>().unwrap() - 1.0).abs() < 1e-9, "{corr}");
        }
    }
}

fn toy_pairs(dir: &Path) -> PathBuf {
    let data = class_dataset(41, 2, 4, Shape::new(5, 5, 6), 0.4);
    let tdir = dir.join("t");
    fs::create_dir(&tdir).unwrap();
    for (i, t) in data.tensors.iter().enumerate() {
        save_tensor(t, tdir.join(format!("{i}.cooct"))).unwrap();
    }
    let mut lines = String::new();
    for i in 0..data.tensors.len() {
        for j in i + 1..data.tensors.len() {
            let label = u8::from(data.labels[i] == data.labels[j]);
            lines.push_str(&format!("t/{i}.cooct\tt/{j}.cooct\t{label}\n"));
        }
    }
    let list = dir.join("pairs.tsv");
    fs::write(&list, lines).unwrap();
    list
}

#[test]
fn train_writes_filter_and_decreasing_losses() {
    let dir = TempDir::new().unwrap();
    let list = toy_pairs(dir.path());
    let filter = dir.path().join("f.coof");
    ok(&[
        "train",
        p(&list),
        p(&filter),
        "--lr",
        "0.02",
        "--epochs",
        "4",
        "--radius",
        "1",
        "--sketch-dim",
        "128",
        "--val-fraction",
        "0",
    ]);
    let f = load_filter(&filter).unwrap();
    assert_eq!((f.depth(), f.radius()), (6, 1));
    let csv = fs::read_to_string(dir.path().join("f_loss.csv")).unwrap();
    let losses: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(losses.len(), 5);
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    assert!(dir.path().join("f.coof.manifest.json").exists());
}

#[test]
fn train_with_zero_lr_keeps_canonical_filter() {
    let dir = TempDir::new().unwrap();
    let list = toy_pairs(dir.path());
    let filter = dir.path().join("f.coof");
    ok(&[
        "train",
        p(&list),
        p(&filter),
        "--lr",
        "0",
        "--epochs",
        "2",
        "--radius",
        "1",
        "--sketch-dim",
        "64",
    ]);
    let trained = load_filter(&filter).unwrap();
    let canonical = make_filter(6, 1, TRAINABLE_DIAG).unwrap();
    // Stored as f32.
    for (a, b) in trained.to_dense().iter().zip(canonical.to_dense()) {
        assert_eq!(*a, f64::from(b as f32));
    }
}

#[test]
fn train_missing_pair_file_names_path() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("absent_pairs.tsv");
    let out = cooc(&["train", p(&missing), p(&dir.path().join("f.coof"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent_pairs.tsv"));
}

#[test]
fn thread_cap_is_honored_and_validated() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("in");
    fs::create_dir(&input).unwrap();
    save_tensor(&worked(), input.join("w.cooct")).unwrap();
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_cooc"))
            .env("COOC_THREADS", threads)
            .args([
                "aggregate",
                p(&input),
                p(&dir.path().join("o")),
                "--radius",
                "1",
            ])
            .output()
            .unwrap()
    };
    assert!(run("1").status.success());
    assert_eq!(run("0").status.code(), Some(1));
    assert_eq!(run("many").status.code(), Some(1));
}
