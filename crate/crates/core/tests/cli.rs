use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn mmirt(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmirt"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn simulate(dir: &Path, items: &str) {
    let o = mmirt(
        dir,
        &["simulate", "--seed", "3", "--out-dir", "sim", "--subjects", "5", "--items", items, "--fraction", "0.5"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn fit(dir: &Path, grid: &str) {
    let o = mmirt(
        dir,
        &[
            "fit", "--seed", "3", "--out-dir", "fit", "--responses", "sim/responses.jsonl", "--q-grid", grid,
            "--max-epochs", "10",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_two() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&mmirt(d.path(), &["nonsense"])), 2);
    assert_eq!(code(&mmirt(d.path(), &["fit", "--max-epochs", "many"])), 2);
    assert_eq!(code(&mmirt(d.path(), &["fit", "--responses", "missing.jsonl"])), 2);
    assert_eq!(code(&mmirt(d.path(), &["fit"])), 2);
    assert_eq!(code(&mmirt(d.path(), &["simulate", "--jobs", "0"])), 2);
    assert_eq!(code(&mmirt(d.path(), &["simulate", "--fraction", "1.0"])), 2);
    assert_eq!(code(&mmirt(d.path(), &["evaluate", "--mode", "sideways"])), 2);
    assert_eq!(code(&mmirt(d.path(), &["--help"])), 0);
}

#[test]
fn runtime_errors_exit_one() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("blocker"), "a file, not a directory").unwrap();
    let o = mmirt(d.path(), &["simulate", "--out-dir", "blocker/out", "--subjects", "3", "--items", "4"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn simulate_counts_and_manifest() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "30");
    let labels = fs::read_to_string(d.path().join("sim/labels.jsonl")).unwrap();
    assert_eq!(labels.lines().count(), 60);
    assert_eq!(labels.lines().filter(|l| l.contains("\"original\"")).count(), 30);
    let m = json(&d.path().join("sim/manifest.json"));
    let files: Vec<&str> = m["files"].as_array().unwrap().iter().map(|f| f["path"].as_str().unwrap()).collect();
    assert_eq!(files, ["config.toml", "labels.jsonl", "responses.jsonl", "truth.json"]);
    for f in m["files"].as_array().unwrap() {
        assert_eq!(f["sha256"].as_str().unwrap().len(), 64);
    }
}

#[test]
fn zero_fraction_is_all_original() {
    let d = tempfile::tempdir().unwrap();
    let o = mmirt(d.path(), &["simulate", "--out-dir", "s", "--subjects", "3", "--items", "10", "--fraction", "0"]);
    assert_eq!(code(&o), 0);
    let labels = fs::read_to_string(d.path().join("s/labels.jsonl")).unwrap();
    assert_eq!(labels.lines().count(), 10);
    assert!(labels.lines().all(|l| l.contains("\"original\"")));
}

#[test]
fn config_file_and_flag_precedence() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("run.toml"), "seed = 11\n[simulate]\nsubjects = 4\nitems = 6\nfraction = 0.25\n").unwrap();
    let o = mmirt(d.path(), &["simulate", "--config", "run.toml", "--out-dir", "a", "--items", "9"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg: toml::Table = fs::read_to_string(d.path().join("a/config.toml")).unwrap().parse().unwrap();
    assert_eq!(cfg["seed"].as_integer(), Some(11));
    assert_eq!(cfg["simulate"]["subjects"].as_integer(), Some(4));
    assert_eq!(cfg["simulate"]["items"].as_integer(), Some(9));
    assert_eq!(cfg["simulate"]["fraction"].as_float(), Some(0.25));

    // the persisted config reproduces the run
    let o = mmirt(d.path(), &["simulate", "--config", "a/config.toml", "--out-dir", "b"]);
    assert_eq!(code(&o), 0);
    for f in ["responses.jsonl", "truth.json", "labels.jsonl"] {
        assert_eq!(fs::read(d.path().join("a").join(f)).unwrap(), fs::read(d.path().join("b").join(f)).unwrap());
    }

    fs::write(d.path().join("bad.toml"), "[simulate]\nsubjcts = 4\n").unwrap();
    assert_eq!(code(&mmirt(d.path(), &["simulate", "--config", "bad.toml", "--out-dir", "c"])), 2);
}

#[test]
fn fit_grid_rows_and_decompose() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "12");
    fit(d.path(), "2,4,8,16");
    let grid = fs::read_to_string(d.path().join("fit/grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 5);
    assert_eq!(grid.lines().filter(|l| l.ends_with("true")).count(), 1);

    let o = mmirt(d.path(), &["decompose", "--out-dir", "dec", "--model", "fit/model.json", "--k", "2"]);
    assert_eq!(code(&o), 0);
    let mut r = csv::Reader::from_path(d.path().join("dec/subjects.csv")).unwrap();
    let rows: Vec<Vec<f64>> = r
        .records()
        .map(|rec| rec.unwrap().iter().skip(1).map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 5);
    for w in rows.windows(2) {
        assert!(w[0][4] >= w[1][4]);
    }
    for row in &rows {
        assert!((row[..4].iter().sum::<f64>() - row[4]).abs() < 1e-12);
    }

    // extremes agree with a full sort of items.csv
    let mut r = csv::Reader::from_path(d.path().join("dec/items.csv")).unwrap();
    let mut items: Vec<(String, f64)> = r
        .records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[0].to_string(), rec[8].parse().unwrap())
        })
        .collect();
    items.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut r = csv::Reader::from_path(d.path().join("dec/extremes.csv")).unwrap();
    let ext: Vec<(String, String)> = r.records().map(|rec| (rec.as_ref().unwrap()[0].to_string(), rec.unwrap()[2].to_string())).collect();
    assert_eq!(ext.len(), 4);
    assert_eq!(ext[0].1, items[0].0);
    assert_eq!(ext[1].1, items[1].0);
    assert_eq!(ext[2].1, items[items.len() - 1].0);
    assert_eq!(ext[3].1, items[items.len() - 2].0);
}

#[test]
fn singleton_grid_has_one_row() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "8");
    fit(d.path(), "4");
    let grid = fs::read_to_string(d.path().join("fit/grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 2);
}

#[test]
fn select_budget_and_criteria() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "25");
    fit(d.path(), "4");
    let base = ["select", "--model", "fit/model.json", "--responses", "sim/responses.jsonl"];
    let run = |extra: &[&str], out: &str| {
        let mut args: Vec<&str> = base.to_vec();
        args.extend_from_slice(&["--out-dir", out]);
        args.extend_from_slice(extra);
        mmirt(d.path(), &args)
    };

    // 10% of a 50-item pool
    let o = run(&["--budget-fraction", "0.1", "--labels", "sim/labels.jsonl", "--subject", "m01"], "s1");
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let subset = fs::read_to_string(d.path().join("s1/subset.jsonl")).unwrap();
    assert_eq!(subset.lines().count(), 5);
    assert!(String::from_utf8_lossy(&o.stdout).contains("low-quality share"));

    for c in ["maxinfo", "doptimal"] {
        assert_eq!(code(&run(&["--budget", "3", "--criterion", c], c)), 0);
    }
    assert_eq!(code(&run(&["--budget", "3", "--criterion", "aoptimal"], "x1")), 2);
    assert_eq!(code(&run(&["--budget", "51"], "x2")), 2);
    assert_eq!(code(&run(&[], "x3")), 2);
    assert_eq!(code(&run(&["--budget", "2", "--subject", "nobody"], "x4")), 2);
}

#[test]
fn predict_writes_one_row_per_cell() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "6");
    fit(d.path(), "4");
    let o = mmirt(d.path(), &["predict", "--out-dir", "p", "--model", "fit/model.json", "--cells", "sim/responses.jsonl"]);
    assert_eq!(code(&o), 0);
    let mut r = csv::Reader::from_path(d.path().join("p/predictions.csv")).unwrap();
    let probs: Vec<f64> = r.records().map(|rec| rec.unwrap()[4].parse().unwrap()).collect();
    assert_eq!(probs.len(), 5 * 12 * 4);
    assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn evaluate_jobs_do_not_change_results() {
    let d = tempfile::tempdir().unwrap();
    simulate(d.path(), "20");
    let run = |jobs: &str, out: &str| {
        let o = mmirt(
            d.path(),
            &[
                "evaluate", "--seed", "2", "--jobs", jobs, "--out-dir", out, "--mode", "ranking", "--responses",
                "sim/responses.jsonl", "--labels", "sim/labels.jsonl", "--methods", "random,m2irt", "--fractions",
                "0.1,0.2,0.3,0.4,0.5", "--replicas", "3", "--max-epochs", "8",
            ],
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    };
    run("1", "e1");
    run("3", "e3");
    for f in ["ranking_spearman.csv", "ranking_gamma.csv", "ranking.json", "manifest.json"] {
        assert_eq!(fs::read(d.path().join("e1").join(f)).unwrap(), fs::read(d.path().join("e3").join(f)).unwrap(), "{f}");
    }
    // five fractions per method
    let csv = fs::read_to_string(d.path().join("e1/ranking_spearman.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 5);
    assert!(csv.starts_with("method,fraction_or_level,mean,std,replicas"));

    let o = mmirt(
        d.path(),
        &[
            "evaluate", "--out-dir", "pred", "--mode", "prediction", "--truth", "sim/truth.json", "--families", "irt,m3irt",
            "--levels", "0,0.5", "--replicas", "2", "--max-epochs", "8",
        ],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(d.path().join("pred/prediction_auc.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2);
}
