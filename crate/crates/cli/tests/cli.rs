use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use npaft::data::EncodedDataset;
use npaft::gibbs::io::{read_draws, write_draws};
use npaft::gibbs::FitConfig;
use npaft::hte::{partial_dependence, summarize, SummaryOptions};
use npaft::rng::seeded;
use npaft::sim::generators::{gen_null_aft, NullAftParams};
use npaft::sim::ResidualFamily;
use npaft_cli::commands::{full_grid, CalibrationReport, SummaryDocument};
use npaft_cli::manifest::{sha256_hex, RunManifest};
use tempfile::TempDir;

const QUICK: &str = "iterations = 60\nburn_in = 30\ncalibration_draws = 20000\n[prior]\nnum_trees = 20\n";

fn npaft(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npaft"))
        .current_dir(dir)
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn dataset(n: usize, seed: u64, censor_every: usize) -> EncodedDataset {
    let mut rng = seeded(seed);
    let mut ds = gen_null_aft(&NullAftParams::default(), ResidualFamily::Normal, n, &mut rng)
        .unwrap()
        .data;
    if censor_every > 0 {
        for i in (0..n).step_by(censor_every) {
            ds.delta[i] = false;
        }
    }
    ds
}

/// Writes `d.csv`, `s.toml` and `c.toml` into a fresh directory.
fn workspace(ds: &EncodedDataset) -> TempDir {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("d.csv"), ds.to_csv_string()).unwrap();
    fs::write(tmp.path().join("s.toml"), toml::to_string(&ds.schema).unwrap()).unwrap();
    fs::write(tmp.path().join("c.toml"), QUICK).unwrap();
    tmp
}

fn fit_dir(tmp: &Path, out: &str, extra: &[&str]) {
    let mut args = vec!["fit", "--data", "d.csv", "--schema", "s.toml", "--config", "c.toml", "--out", out, "--seed", "11"];
    args.extend_from_slice(extra);
    ok(&npaft(tmp, &args));
}

fn manifests_under(dir: &Path) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name() == "manifest.json")
        .count()
}

fn listing(dir: &Path) -> BTreeSet<PathBuf> {
    fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect()
}

#[test]
fn missing_input_exits_2() {
    let tmp = TempDir::new().unwrap();
    let out = npaft(tmp.path(), &["fit", "--data", "nope.csv", "--schema", "nope.toml", "--out", "o", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("input not found"), "{err}");
    assert!(err.contains("data-model"), "{err}");
}

#[test]
fn seed_is_required() {
    let ds = dataset(20, 1, 0);
    let tmp = workspace(&ds);
    let out = npaft(tmp.path(), &["fit", "--data", "d.csv", "--schema", "s.toml", "--config", "c.toml", "--out", "o"]);
    assert_eq!(out.status.code(), Some(4));
    fs::write(tmp.path().join("c2.toml"), format!("seed = 4\n{QUICK}")).unwrap();
    ok(&npaft(tmp.path(), &["fit", "--data", "d.csv", "--schema", "s.toml", "--config", "c2.toml", "--out", "o"]));
    assert_eq!(RunManifest::load(&tmp.path().join("o")).unwrap().seed, Some(4));
}

#[test]
fn bad_config_exits_4() {
    let ds = dataset(20, 1, 0);
    let tmp = workspace(&ds);
    fs::write(tmp.path().join("bad.toml"), "iterations = 10\nburn_in = 20\n").unwrap();
    let out = npaft(tmp.path(), &["fit", "--data", "d.csv", "--schema", "s.toml", "--config", "bad.toml", "--out", "o", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn fit_is_deterministic_and_manifest_matches_inputs() {
    let ds = dataset(30, 2, 4);
    let tmp = workspace(&ds);
    fit_dir(tmp.path(), "a", &["--retain-forests"]);
    fit_dir(tmp.path(), "b", &["--retain-forests"]);
    for f in ["draws.csv", "forests.jsonl", "diagnostics.csv"] {
        let a = fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = fs::read(tmp.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between identical runs");
    }
    let m = RunManifest::load(&tmp.path().join("a")).unwrap();
    assert_eq!(m.command, "fit");
    assert_eq!(m.seed, Some(11));
    let data = m.inputs.iter().find(|i| i.role == "data").unwrap();
    assert_eq!(data.sha256, sha256_hex(&fs::read(tmp.path().join("d.csv")).unwrap()));
    assert_eq!(manifests_under(&tmp.path().join("a")), 1);
    // the manifest echo reproduces the run
    let cfg: FitConfig = serde_json::from_value(m.config.clone()).unwrap();
    fs::write(tmp.path().join("echo.toml"), toml::to_string(&cfg).unwrap()).unwrap();
    ok(&npaft(tmp.path(), &["fit", "--data", "d.csv", "--schema", "s.toml", "--config", "echo.toml", "--out", "c"]));
    assert_eq!(
        fs::read(tmp.path().join("a/draws.csv")).unwrap(),
        fs::read(tmp.path().join("c/draws.csv")).unwrap()
    );
}

#[test]
fn smoke_fit_is_fast() {
    let ds = dataset(50, 3, 5);
    let tmp = workspace(&ds);
    let start = Instant::now();
    ok(&npaft(
        tmp.path(),
        &["fit", "--data", "d.csv", "--schema", "s.toml", "--out", "o", "--seed", "1", "--iterations", "100", "--burn-in", "50"],
    ));
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 10.0, "took {secs} s");
}

#[test]
fn commands_write_only_inside_out_dir() {
    let ds = dataset(30, 4, 3);
    let tmp = workspace(&ds);
    let before = listing(tmp.path());
    fit_dir(tmp.path(), "o", &[]);
    let after = listing(tmp.path());
    let added: Vec<_> = after.difference(&before).collect();
    assert_eq!(added, vec![&tmp.path().join("o")]);
    let out = npaft(tmp.path(), &["summarize", "--draws", "o", "--out", "o"]);
    assert_eq!(out.status.code(), Some(4), "one manifest per directory");
}

#[test]
fn summary_matches_library_and_schema() {
    let ds = dataset(40, 5, 4);
    let tmp = workspace(&ds);
    fit_dir(tmp.path(), "f", &[]);
    ok(&npaft(tmp.path(), &["summarize", "--draws", "f", "--out", "s", "--data", "d.csv", "--schema", "s.toml"]));
    let text = fs::read_to_string(tmp.path().join("s/summary.json")).unwrap();
    let doc: SummaryDocument = serde_json::from_str(&text).unwrap();
    let draws = read_draws(&tmp.path().join("f")).unwrap();
    let lib = summarize(&draws, &SummaryOptions::default()).unwrap();
    assert!(doc.summary == lib, "CLI summary differs from the library");
    assert!(doc.ranking.is_some());

    let schema: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas/summary.schema.json")).unwrap(),
    )
    .unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&value).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");

    for f in ["ite.csv", "benefit.csv", "effect_cdf.csv", "effect_density.csv", "survival.csv", "ranking.csv"] {
        assert!(tmp.path().join("s").join(f).exists(), "{f}");
    }
    let ite = fs::read_to_string(tmp.path().join("s/ite.csv")).unwrap();
    assert_eq!(ite.lines().count(), 41);
    let first: Vec<&str> = ite.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[1].parse::<f64>().unwrap(), lib.ite[0].mean);
}

#[test]
fn homogeneous_draws_report_the_equality_edge() {
    let ds = dataset(25, 6, 0);
    let tmp = workspace(&ds);
    fit_dir(tmp.path(), "f", &[]);
    let mut draws = read_draws(&tmp.path().join("f")).unwrap();
    for d in &mut draws.draws {
        // dyadic values keep m1 - m0 exactly constant
        d.m0 = d.m0.iter().map(|m| (m * 1024.0).round() / 1024.0).collect();
        d.m1 = d.m0.iter().map(|m| m + 0.5).collect();
    }
    write_draws(&tmp.path().join("h"), &draws).unwrap();
    ok(&npaft(tmp.path(), &["summarize", "--draws", "h", "--out", "s"]));
    let doc: SummaryDocument = serde_json::from_str(&fs::read_to_string(tmp.path().join("s/summary.json")).unwrap()).unwrap();
    // every θ equals its draw's mean, so D_i = 1 and D*_i = 1
    assert!(doc.summary.differential.d.iter().all(|&d| d == 1.0));
    assert_eq!(doc.summary.pct_strong, 100.0);
    assert!(doc.summary.effect_distribution.is_none());
    assert!(doc.summary.effect_distribution_note.is_some());
    assert!(!tmp.path().join("s/effect_cdf.csv").exists());
}

#[test]
fn corrupt_draws_fail_with_checksum_error() {
    let ds = dataset(20, 7, 0);
    let tmp = workspace(&ds);
    fit_dir(tmp.path(), "f", &[]);
    let path = tmp.path().join("f/draws.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let last = lines.len() - 1;
    lines[last] = lines[last].replacen(',', ",9", 3);
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let out = npaft(tmp.path(), &["summarize", "--draws", "f", "--out", "s"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corrupt"));
}

#[test]
fn pdp_needs_forests_and_matches_library() {
    let ds = dataset(30, 8, 0);
    let tmp = workspace(&ds);
    fit_dir(tmp.path(), "plain", &[]);
    let out = npaft(tmp.path(), &["pdp", "--draws", "plain", "--data", "d.csv", "--schema", "s.toml", "--covariate", "x1", "--out", "p"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("retain_forests"));

    fit_dir(tmp.path(), "full", &["--retain-forests"]);
    ok(&npaft(
        tmp.path(),
        &["pdp", "--draws", "full", "--data", "d.csv", "--schema", "s.toml", "--covariate", "x1", "--grid", "-1,0,1", "--out", "p"],
    ));
    let csv = fs::read_to_string(tmp.path().join("p/pdp.csv")).unwrap();
    let draws = read_draws(&tmp.path().join("full")).unwrap();
    let lib = partial_dependence(&draws, &ds.x, 0, &[-1.0, 0.0, 1.0]).unwrap();
    for (k, line) in csv.lines().skip(1).enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[1].parse::<f64>().unwrap(), lib.mean[k]);
        assert_eq!(f[2].parse::<f64>().unwrap(), lib.lower[k]);
        assert_eq!(f[3].parse::<f64>().unwrap(), lib.upper[k]);
    }
}

#[test]
fn survcurve_is_monotone_from_one_towards_zero() {
    let ds = dataset(30, 9, 3);
    let tmp = workspace(&ds);
    fit_dir(tmp.path(), "f", &["--retain-forests"]);
    for args in [vec!["--row", "3"], vec!["--covariates", "-0.1,-0.2,0.3,1,0"]] {
        let out_dir = format!("sc{}", args[0].len());
        let mut a = vec!["survcurve", "--draws", "f", "--out", out_dir.as_str()];
        a.extend(args.iter().copied());
        ok(&npaft(tmp.path(), &a));
        let csv = fs::read_to_string(tmp.path().join(&out_dir).join("survival.csv")).unwrap();
        for arm in ["0", "1"] {
            let s: Vec<f64> = csv
                .lines()
                .skip(1)
                .filter(|l| l.starts_with(&format!("{arm},")))
                .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
                .collect();
            assert_eq!(s.len(), 100);
            assert!(s.windows(2).all(|w| w[1] <= w[0]));
            assert!(s[0] > 0.99 && s[99] < 0.01, "{} .. {}", s[0], s[99]);
        }
    }
    let out = npaft(tmp.path(), &["survcurve", "--draws", "f", "--out", "bad", "--covariates", "0.1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn calibrate_agrees_with_fit() {
    let ds = dataset(30, 10, 0);
    let tmp = workspace(&ds);
    fit_dir(tmp.path(), "f", &[]);
    ok(&npaft(
        tmp.path(),
        &["calibrate", "--data", "d.csv", "--schema", "s.toml", "--config", "c.toml", "--seed", "11", "--out", "c"],
    ));
    let rep: CalibrationReport = serde_json::from_str(&fs::read_to_string(tmp.path().join("c/calibration.json")).unwrap()).unwrap();
    let draws = read_draws(&tmp.path().join("f")).unwrap();
    assert_eq!(rep.calibration, draws.calibration);
    assert_eq!(rep.sigma_w_hat, draws.transform.sigma_aft);
}

const SIM: &str = r#"
seed = 21
reps = 2
[fit]
iterations = 40
burn_in = 20
calibration_draws = 20000
[fit.prior]
num_trees = 10
[[scenarios]]
name = "smoke"
kind = "aft-linear-null"
n = 40
family = "gumbel"
censoring = "light"
"#;

#[test]
fn simulate_smoke_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("sim.toml"), SIM).unwrap();
    ok(&npaft(tmp.path(), &["simulate", "--config", "sim.toml", "--out", "a"]));
    ok(&npaft(tmp.path(), &["simulate", "--config", "sim.toml", "--out", "b", "--reps", "2"]));
    let a = fs::read_to_string(tmp.path().join("a/replications.csv")).unwrap();
    assert_eq!(a, fs::read_to_string(tmp.path().join("b/replications.csv")).unwrap());
    assert_eq!(a.lines().count(), 3);
    let summary = fs::read_to_string(tmp.path().join("a/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2, "one scenario row");
    assert!(fs::read_to_string(tmp.path().join("a/table.txt")).unwrap().contains("Gumbel"));

    // rerun from the manifest echo alone
    let m = RunManifest::load(&tmp.path().join("a")).unwrap();
    assert_eq!(m.seed, Some(21));
    let echo: toml::Value = toml::Value::try_from(&m.config).unwrap();
    fs::write(tmp.path().join("echo.toml"), toml::to_string(&echo).unwrap()).unwrap();
    ok(&npaft(tmp.path(), &["simulate", "--config", "echo.toml", "--out", "c"]));
    assert_eq!(a, fs::read_to_string(tmp.path().join("c/replications.csv")).unwrap());
}

fn cv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn crossval_two_folds_one_setting() {
    let ds = dataset(30, 12, 4);
    let tmp = workspace(&ds);
    let args = ["crossval", "--data", "d.csv", "--schema", "s.toml", "--config", "c.toml", "--seed", "5", "--folds", "2"];
    let mut a1 = args.to_vec();
    a1.extend(["--out", "a"]);
    ok(&npaft(tmp.path(), &a1));
    let mut a2 = args.to_vec();
    a2.extend(["--out", "b"]);
    ok(&npaft(tmp.path(), &a2));
    assert_eq!(fs::read(tmp.path().join("a/cv.csv")).unwrap(), fs::read(tmp.path().join("b/cv.csv")).unwrap());
    let rows = cv_rows(&tmp.path().join("a/cv.csv"));
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[2][4], "mean");
    let folds: Vec<f64> = rows[..2].iter().map(|r| r[5].parse().unwrap()).collect();
    let mean: f64 = rows[2][5].parse().unwrap();
    assert!((mean - (folds[0] + folds[1]) / 2.0).abs() < 1e-12);
}

#[test]
fn crossval_fold_without_events_is_named() {
    let mut ds = dataset(12, 13, 0);
    for i in 1..12 {
        ds.delta[i] = false;
    }
    let tmp = workspace(&ds);
    let out = npaft(
        tmp.path(),
        &["crossval", "--data", "d.csv", "--schema", "s.toml", "--config", "c.toml", "--seed", "1", "--folds", "2", "--out", "o"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fold"));
}

#[test]
fn crossval_full_grid_has_36_stable_settings() {
    let ds = dataset(24, 14, 0);
    let tmp = workspace(&ds);
    fs::write(tmp.path().join("tiny.toml"), "iterations = 6\nburn_in = 3\ncalibration_draws = 2000\n").unwrap();
    ok(&npaft(
        tmp.path(),
        &["crossval", "--data", "d.csv", "--schema", "s.toml", "--config", "tiny.toml", "--seed", "2", "--folds", "2", "--full-grid", "--out", "o"],
    ));
    let rows = cv_rows(&tmp.path().join("o/cv.csv"));
    let means: Vec<&Vec<String>> = rows.iter().filter(|r| r[4] == "mean").collect();
    assert_eq!(means.len(), 36);
    assert_eq!(rows.len(), 36 * 3);
    for (m, g) in means.iter().zip(full_grid()) {
        assert_eq!(m[1].parse::<f64>().unwrap(), g.q);
        assert_eq!(m[2].parse::<f64>().unwrap(), g.k);
        assert_eq!(m[3].parse::<usize>().unwrap(), g.trees);
    }
}
