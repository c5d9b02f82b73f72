//! End-to-end runs of the `star` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tempfile::TempDir;

use star_regression::document::ModelDocument;
use star_regression::io::Table;
use star_regression::model::StarModel;
use star_regression::rounding::RoundingScheme;
use star_regression::transform::box_cox_transform;

const Y_MAX: u32 = 20;

fn star(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_star"))
        .args(args)
        .output()
        .expect("spawn star")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A CSV with a numeric covariate, a three-level factor, a noise column and
/// a bounded count response drawn from a sqrt-STAR model.
fn write_data(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scheme = RoundingScheme::bounded(Y_MAX).unwrap();
    let g = box_cox_transform(0.5, (0.0, 1.0), &scheme).unwrap();
    let truth = StarModel::new(vec![4.0, 1.0, -0.8, 0.6, 0.0], 1.0, g, scheme, None).unwrap();
    let levels = ["low", "mid", "high"];
    let mut rows: Vec<(f64, usize, f64)> = (0..n)
        .map(|_| (rng.sample(StandardNormal), rng.random_range(0..3), rng.sample(StandardNormal)))
        .collect();
    // Levels are encoded in first-seen order: "low" is the baseline, then
    // "mid", then "high".
    rows[0].1 = 0;
    rows[1].1 = 1;
    let x = DMatrix::from_fn(n, 5, |i, k| match k {
        0 => 1.0,
        1 => rows[i].0,
        2 => f64::from(u8::from(rows[i].1 == 1)),
        3 => f64::from(u8::from(rows[i].1 == 2)),
        _ => rows[i].2,
    });
    let y = truth.sample_with(&x, &mut rng).unwrap();
    let mut text = String::from("days,age,group,noise\n");
    for i in 0..n {
        text.push_str(&format!("{},{},{},{}\n", y[i], rows[i].0, levels[rows[i].1], rows[i].2));
    }
    let path = dir.join("data.csv");
    std::fs::write(&path, text).unwrap();
    path
}

struct Fitted {
    dir: TempDir,
    data: PathBuf,
    model: PathBuf,
}

fn fit(transform: &str) -> Fitted {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), 200, 17);
    let model = dir.path().join("model.json");
    let o = star(&[
        "fit",
        "--data",
        data.to_str().unwrap(),
        "--response",
        "days",
        "--y-max",
        &Y_MAX.to_string(),
        "--transform",
        transform,
        "--seed",
        "5",
        "--out",
        model.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    Fitted { dir, data, model }
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn predictions_match_the_library_bit_for_bit() {
    let f = fit("np");
    let out = f.dir.path().join("pred.csv");
    let o = star(&["predict", "--model", path_str(&f.model), "--data", path_str(&f.data), "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let doc = ModelDocument::load(&f.model).unwrap();
    let table = Table::read(&f.data).unwrap();
    let x = table.aligned_design(&doc.names(), &["days"]).unwrap();
    let expected = doc.model().unwrap().fitted_values(&x).unwrap();

    let pred = Table::read(&out).unwrap();
    assert_eq!(pred.headers, ["row", "expected", "q05", "q50", "q95"]);
    assert_eq!(pred.rows.len(), 200);
    for (i, row) in pred.rows.iter().enumerate() {
        assert_eq!(row[0], (i + 1).to_string());
        let e: f64 = row[1].parse().unwrap();
        assert_eq!(e.to_bits(), expected[i].to_bits(), "row {}", i + 1);
        assert!((0.0..=f64::from(Y_MAX)).contains(&e));
        let q: Vec<u32> = row[2..].iter().map(|v| v.parse().unwrap()).collect();
        assert!(q[0] <= q[1] && q[1] <= q[2] && q[2] <= Y_MAX, "{q:?}");
    }
}

#[test]
fn model_document_records_names_and_seed() {
    let f = fit("sqrt");
    let doc = ModelDocument::load(&f.model).unwrap();
    assert_eq!(doc.names(), ["(Intercept)", "age", "group=mid", "group=high", "noise"]);
    assert_eq!(doc.fit.seed, 5);
    assert_eq!(doc.fit.response, "days");
    assert!(doc.fit.converged);
    // Re-serializing the loaded document reproduces the file.
    assert_eq!(doc.to_json().unwrap(), std::fs::read_to_string(&f.model).unwrap());
}

#[test]
fn usage_and_data_errors_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), 40, 3);
    let out = dir.path().join("m.json");
    let d = path_str(&data);
    let o = star(&["fit", "--data", d, "--response", "days", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--seed"), "{}", stderr(&o));

    let o = star(&["fit", "--data", d, "--response", "nope", "--seed", "1", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope"));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "days,age\n3,0.1\n25,0.2\n1,0.3\n").unwrap();
    let o = star(&["fit", "--data", path_str(&bad), "--response", "days", "--y-max", "20", "--seed", "1", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("row 2"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn non_convergence_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), 100, 8);
    let out = dir.path().join("m.json");
    let o = star(&[
        "fit", "--data", path_str(&data), "--response", "days", "--y-max", "20", "--transform", "sqrt",
        "--max-iter", "2", "--seed", "1", "--out", path_str(&out),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    assert!(stdout(&o).contains("WARNING"));
    // The provisional model is still written.
    assert!(!ModelDocument::load(&out).unwrap().fit.converged);
}

#[test]
fn predict_rejects_mismatched_columns() {
    let f = fit("sqrt");
    let other = f.dir.path().join("other.csv");
    std::fs::write(&other, "age,group,weight\n0.5,low,70\n").unwrap();
    let o = star(&["predict", "--model", path_str(&f.model), "--data", path_str(&other)]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("noise") && err.contains("weight"), "{err}");
}

#[test]
fn diagnose_is_seeded_and_writes_ten_sets_by_default() {
    let f = fit("np");
    let run = |name: &str, seed: &str| {
        let out = f.dir.path().join(name);
        let o = star(&["diagnose", "--model", path_str(&f.model), "--data", path_str(&f.data), "--seed", seed, "--out", path_str(&out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        out
    };
    let a = run("a.csv", "11");
    let b = run("b.csv", "11");
    let c = run("c.csv", "12");
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(read(&f.dir.path().join("a_qq.csv")), read(&f.dir.path().join("b_qq.csv")));

    let t = Table::read(&a).unwrap();
    let expected: Vec<String> = std::iter::once("row".to_string()).chain((1..=10).map(|k| format!("r{k}"))).collect();
    assert_eq!(t.headers, expected);
    assert_eq!(t.rows.len(), 202);
    assert_eq!(t.rows[200][0], "ks_statistic");
    assert_eq!(t.rows[201][0], "ks_p_value");
    for row in &t.rows[..200] {
        assert!(row[1..].iter().all(|v| v.parse::<f64>().unwrap().is_finite()));
    }
    for p in &t.rows[201][1..] {
        let p: f64 = p.parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
}

fn lrt_row(f: &Fitted, drop: &[&str]) -> Vec<String> {
    let mut args = vec!["test", "--model", path_str(&f.model), "--data", path_str(&f.data), "--seed", "1", "--drop"];
    args.extend_from_slice(drop);
    let o = star(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let t = Table::from_reader(o.stdout.as_slice()).unwrap();
    assert_eq!(t.headers, ["dropped", "statistic", "df", "p_value", "full_loglik", "restricted_loglik"]);
    t.rows[0].clone()
}

#[test]
fn lrt_with_nothing_dropped_is_trivial() {
    let f = fit("sqrt");
    let row = lrt_row(&f, &[]);
    assert_eq!(row[1], "0");
    assert_eq!(row[2], "0");
    assert_eq!(row[3], "1");
}

#[test]
fn dropping_a_factor_removes_all_its_dummies() {
    let f = fit("sqrt");
    let row = lrt_row(&f, &["group"]);
    assert_eq!(row[0], "group=mid;group=high");
    assert_eq!(row[2], "2");
    let p: f64 = row[3].parse().unwrap();
    assert!(p < 1e-3, "group has a real effect, p = {p}");
    let noise = lrt_row(&f, &["noise"]);
    assert_eq!(noise[2], "1");
    assert!(noise[3].parse::<f64>().unwrap() > 1e-3);
}

#[test]
fn select_keeps_the_intercept_and_writes_a_loadable_model() {
    let f = fit("sqrt");
    let out = f.dir.path().join("selected.json");
    let o = star(&["select", "--model", path_str(&f.model), "--data", path_str(&f.data), "--seed", "1", "--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc = ModelDocument::load(&out).unwrap();
    let names = doc.names();
    assert_eq!(names[0], "(Intercept)");
    assert!(names.iter().any(|n| n == "age"), "{names:?}");
    let trace = Table::from_reader(o.stdout.as_slice()).unwrap();
    assert_eq!(trace.rows[0][1], "");
    let crit: Vec<f64> = trace.rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(crit.windows(2).all(|w| w[1] < w[0]), "{crit:?}");
}

#[test]
fn simulate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = star(&[
            "simulate", "--generator", "negbin", "--reps", "3", "--n", "80", "--p", "2", "--n-test", "40",
            "--methods", "star-sqrt,poisson", "--seed", "9", "--out", path_str(&out),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(stdout(&o).contains("star-sqrt"));
        std::fs::read_to_string(out).unwrap()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    assert!(a.lines().count() > 1);
}
