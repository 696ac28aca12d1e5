mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use strudel::ensemble::SharedMixture;
use strudel::{compile_clt, ChowLiuTree, Circuit, Dataset, Vtree};

fn strudel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_strudel"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = strudel(args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn value(stdout: &str, key: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(key)?.strip_prefix(' '))
        .unwrap_or_else(|| panic!("no `{key}` in\n{stdout}"))
        .parse()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Train/valid/test splits sampled from one random tree.
fn splits(dir: &Path, m: usize, n: usize, seed: u64) -> [PathBuf; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = ChowLiuTree::random(&mut rng, m, 0.05);
    let mut paths = Vec::new();
    for (name, rows) in [("train", n), ("valid", n / 4), ("test", n / 4)] {
        let p = dir.join(format!("{name}.data"));
        t.sample(&mut rng, rows).save(&p).unwrap();
        paths.push(p);
    }
    paths.try_into().unwrap()
}

fn learn(dir: &Path, data: &[PathBuf; 3], prefix: &str, extra: &[&str]) -> (PathBuf, String) {
    let out = dir.join(prefix);
    let mut args = vec![
        "learn",
        "--train",
        s(&data[0]),
        "--valid",
        s(&data[1]),
        "--out",
        s(&out),
    ];
    args.extend_from_slice(extra);
    let stdout = ok(&args);
    (out, stdout)
}

fn with(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

#[test]
fn learn_writes_circuit_vtree_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let data = splits(dir.path(), 8, 400, 3);
    let (out, stdout) = learn(dir.path(), &data, "m", &["--max-iters", "30", "--patience", "1000"]);
    let c = Circuit::load(with(&out, ".psc")).unwrap();
    let v = Vtree::load(with(&out, ".vtree")).unwrap();
    assert!(strudel::check_structure(&c, &v).all());
    assert_eq!(value(&stdout, "edges") as usize, c.num_edges());

    let log = fs::read_to_string(with(&out, ".log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("iteration,train_ll,valid_ll,edges,seconds"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 31);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0] as usize, i);
    }
    for w in rows.windows(2) {
        assert!(w[1][3] > w[0][3], "edge count must grow with every split");
        assert!(w[1][4] >= w[0][4]);
    }
    let best = value(&stdout, "best_iteration") as usize;
    let best_valid = rows.iter().map(|r| r[2]).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(rows[best][2], best_valid);
}

#[test]
fn zero_iterations_returns_the_compiled_tree() {
    let dir = tempfile::tempdir().unwrap();
    let data = splits(dir.path(), 7, 300, 4);
    let (out, stdout) = learn(dir.path(), &data, "z", &["--max-iters", "0"]);
    assert_eq!(value(&stdout, "iterations"), 0.0);
    let train = Dataset::load(&data[0]).unwrap();
    let t = strudel::learn_clt(&train, 1.0).unwrap();
    let v = Vtree::from_clt(&t);
    let c = compile_clt(&t, &v).unwrap();
    assert_eq!(fs::read_to_string(with(&out, ".psc")).unwrap(), c.to_text());
    assert_eq!(fs::read_to_string(with(&out, ".vtree")).unwrap(), v.to_text());
}

/// The log without its wall-clock column.
fn trajectory(prefix: &Path) -> Vec<String> {
    let log = fs::read_to_string(with(prefix, ".log.csv")).unwrap();
    log.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string()).collect()
}

#[test]
fn learning_is_reproducible_and_thread_count_free() {
    let dir = tempfile::tempdir().unwrap();
    let data = splits(dir.path(), 9, 500, 5);
    let args = [
        "--max-iters",
        "25",
        "--patience",
        "1000",
        "--heuristic",
        "erand-vrand",
        "--seed",
        "9",
    ];
    let (a, _) = learn(dir.path(), &data, "a", &args);
    let (b, _) = learn(dir.path(), &data, "b", &args);
    let mut single = vec!["--threads", "1"];
    single.extend_from_slice(&args);
    let (c, _) = learn(dir.path(), &data, "c", &single);
    let text = fs::read_to_string(with(&a, ".psc")).unwrap();
    assert_eq!(text, fs::read_to_string(with(&b, ".psc")).unwrap());
    assert_eq!(text, fs::read_to_string(with(&c, ".psc")).unwrap());
    assert_eq!(trajectory(&a), trajectory(&b));
    assert_eq!(trajectory(&a), trajectory(&c));

    let mut other = args;
    other[7] = "10";
    let (d, _) = learn(dir.path(), &data, "d", &other);
    assert_ne!(trajectory(&a), trajectory(&d));
}

#[test]
fn uniform_circuit_has_one_bit_per_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let m: usize = 6;
    let parent = (0..m).map(|i| i.checked_sub(1)).collect();
    let t = ChowLiuTree::new(0, parent, vec![[0.5, 0.5]; m]).unwrap();
    let c = compile_clt(&t, &Vtree::from_clt(&t)).unwrap();
    let psc = dir.path().join("u.psc");
    c.save(&psc).unwrap();
    let data = splits(dir.path(), m, 200, 6);
    let out = ok(&["eval", "--circuit", s(&psc), "--data", s(&data[0])]);
    assert_eq!(value(&out, "samples"), 200.0);
    assert!((value(&out, "bpd") - 1.0).abs() < 1e-12);
    assert!((value(&out, "mean_ll") + m as f64 * 2f64.ln()).abs() < 1e-12);
}

#[test]
fn single_component_mixture_matches_plain_circuit() {
    let dir = tempfile::tempdir().unwrap();
    let data = splits(dir.path(), 8, 300, 7);
    let (out, _) = learn(dir.path(), &data, "l", &["--max-iters", "10"]);
    let psc = with(&out, ".psc");
    let mix = dir.path().join("k1");
    ok(&[
        "em",
        "--circuit",
        s(&psc),
        "--train",
        s(&data[0]),
        "--components",
        "1",
        "--out",
        s(&mix),
    ]);

    let plain = ok(&["eval", "--circuit", s(&with(&mix, ".psc")), "--data", s(&data[2])]);
    let mixed = ok(&[
        "eval",
        "--circuit",
        s(&with(&mix, ".psc")),
        "--mixture",
        s(&with(&mix, ".mix")),
        "--data",
        s(&data[2]),
    ]);
    assert!((value(&plain, "total_ll") - value(&mixed, "total_ll")).abs() < 1e-9);
}

#[test]
fn bagged_em_concatenates_components() {
    let dir = tempfile::tempdir().unwrap();
    let data = splits(dir.path(), 8, 300, 8);
    let (out, _) = learn(dir.path(), &data, "l", &["--max-iters", "10"]);
    let mix = dir.path().join("bag");
    let stdout = ok(&[
        "bem",
        "--circuit",
        s(&with(&out, ".psc")),
        "--train",
        s(&data[0]),
        "--test",
        s(&data[2]),
        "--bags",
        "10",
        "--components",
        "3",
        "--iters",
        "5",
        "--out",
        s(&mix),
    ]);
    assert_eq!(value(&stdout, "components"), 30.0);
    let structure = Circuit::load(with(&mix, ".psc")).unwrap();
    let text = fs::read_to_string(with(&mix, ".mix")).unwrap();
    let m = SharedMixture::parse_params(structure, &text).unwrap();
    assert_eq!(m.components(), 30);
    let total: f64 = m.log_weights().iter().map(|w| w.exp()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert!(value(&stdout, "test_mean_ll").is_finite());
}

#[test]
fn grid_selects_the_best_validation_size() {
    let dir = tempfile::tempdir().unwrap();
    let data = splits(dir.path(), 8, 400, 9);
    let (out, _) = learn(dir.path(), &data, "l", &["--max-iters", "10"]);
    let psc = with(&out, ".psc");
    let common = [
        "--circuit",
        s(&psc),
        "--train",
        s(&data[0]),
        "--valid",
        s(&data[1]),
        "--iters",
        "8",
    ];
    let grid_out = dir.path().join("grid");
    let mut args = vec!["em"];
    args.extend_from_slice(&common);
    args.extend_from_slice(&["--grid", "1,2,4", "--out", s(&grid_out)]);
    let stdout = ok(&args);

    let mut best = (0, f64::NEG_INFINITY);
    for k in ["1", "2", "4"] {
        let o = dir.path().join(format!("k{k}"));
        let mut args = vec!["em"];
        args.extend_from_slice(&common);
        args.extend_from_slice(&["--components", k, "--out", s(&o)]);
        let ll = value(&ok(&args), "valid_mean_ll");
        let grid_ll = stdout
            .lines()
            .find_map(|l| l.strip_prefix(&format!("grid {k} ")))
            .unwrap()
            .parse::<f64>()
            .unwrap();
        assert!((ll - grid_ll).abs() < 1e-9, "k={k}: {ll} vs {grid_ll}");
        if ll > best.1 {
            best = (k.parse().unwrap(), ll);
        }
    }
    assert_eq!(value(&stdout, "selected_components") as usize, best.0);
    assert_eq!(value(&stdout, "components") as usize, best.0);
}

#[test]
fn validate_reports_and_sets_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let data = splits(dir.path(), 6, 200, 10);
    let (out, _) = learn(dir.path(), &data, "l", &["--max-iters", "5"]);
    let stdout = ok(&[
        "validate",
        "--circuit",
        s(&with(&out, ".psc")),
        "--vtree",
        s(&with(&out, ".vtree")),
    ]);
    assert!(stdout.contains("vtree ok"));

    // A vtree over a different variable order breaks structured decomposability.
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let other = Vtree::from_clt(&ChowLiuTree::random(&mut rng, 6, 0.05));
    let bad = dir.path().join("other.vtree");
    other.save(&bad).unwrap();
    let c = Circuit::load(with(&out, ".psc")).unwrap();
    if !strudel::check_structure(&c, &other).all() {
        let r = strudel(&["validate", "--circuit", s(&with(&out, ".psc")), "--vtree", s(&bad)]);
        assert_eq!(r.status.code(), Some(1));
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = splits(dir.path(), 5, 50, 11);
    assert_eq!(strudel(&["learn"]).status.code(), Some(2));
    assert_eq!(strudel(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        strudel(&[
            "learn",
            "--train",
            "x",
            "--valid",
            "y",
            "--out",
            "z",
            "--heuristic",
            "nope"
        ])
        .status
        .code(),
        Some(2)
    );
    assert_eq!(
        strudel(&["--threads", "0", "validate", "--circuit", "a", "--vtree", "b"])
            .status
            .code(),
        Some(2)
    );
    let missing = dir.path().join("missing.psc");
    let r = strudel(&["eval", "--circuit", s(&missing), "--data", s(&data[0])]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("missing.psc"));
    let r = strudel(&[
        "em",
        "--circuit",
        s(&missing),
        "--train",
        s(&data[0]),
        "--grid",
        "--out",
        "x",
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert_eq!(strudel(&["--help"]).status.code(), Some(0));
}

#[test]
fn bench_flows_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = splits(dir.path(), 10, 3000, 12);
    let (out, _) = learn(dir.path(), &data, "l", &["--max-iters", "10"]);
    let csv = dir.path().join("bench.csv");
    ok(&[
        "bench-flows",
        "--circuit",
        s(&with(&out, ".psc")),
        "--data",
        s(&data[0]),
        "--components",
        "1,3",
        "--repeats",
        "3",
        "--out",
        s(&csv),
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "k,flow_seconds,classical_seconds,speedup");
    assert_eq!(lines.len(), 3);
    for (line, k) in lines[1..].iter().zip(["1", "3"]) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[0], k);
        let v: Vec<f64> = f[1..].iter().map(|x| x.parse().unwrap()).collect();
        assert!(v.iter().all(|x| *x > 0.0));
    }
    // Sharing flows must not make a single component much slower.
    let k1: f64 = lines[1].rsplit(',').next().unwrap().parse().unwrap();
    assert!(k1 >= 0.5, "k=1 speedup {k1}");
}
