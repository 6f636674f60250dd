use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn rpn(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rpn"));
    cmd.args(args).env_remove("RPN_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL_E0: &str = r#"
seeds = [1, 0]
out = "run"

[model]
dims = [2, 2, 1]

[[model.heads]]
reconciliation = { kind = "lorr", r = 1 }

[model.heads.expansion]
kind = "extended"
children = [{ kind = "taylor", d = 2 }, { kind = "bspline", t = 5, d = 3 }]

[data]
source = "function"
id = "E.0"
n = 200

[train]
epochs = 15
batch_size = 25
optimizer = { kind = "adam", lr = 0.01 }
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn train_emits_mean_std_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "e0.toml", SMALL_E0);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let a = rpn(
        &["train", "--config", &cfg, "--out", out_a.to_str().unwrap()],
        &[("RPN_THREADS", "1")],
    );
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(stdout(&a).contains("±"));
    let b = rpn(
        &["train", "--config", &cfg, "--out", out_b.to_str().unwrap()],
        &[("RPN_THREADS", "2")],
    );
    assert!(b.status.success(), "{}", stderr(&b));

    let report = fs::read_to_string(out_a.join("report.txt")).unwrap();
    assert!(report.contains("mean ± std over 2 runs: 2 seeds x 1 folds) params=47"));
    // seeds are aggregated in ascending order whatever the config order
    assert!(report.find("# seed 0 fold 0").unwrap() < report.find("# seed 1 fold 0").unwrap());
    for f in [
        "report.txt",
        "summary.json",
        "history.csv",
        "checkpoints/seed0_fold0.json",
    ] {
        assert_eq!(
            fs::read(out_a.join(f)).unwrap(),
            fs::read(out_b.join(f)).unwrap(),
            "{f} differs between runs"
        );
    }
    let meta = fs::read_to_string(out_a.join("meta.json")).unwrap();
    assert!(meta.contains("\"threads\": 1"));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["param_count"], 47);
    assert_eq!(summary["runs"].as_array().unwrap().len(), 2);
}

#[test]
fn seed_flag_runs_one_seed_and_out_defaults_to_config_dir() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "e0.toml", SMALL_E0);
    let o = rpn(&["train", "--config", &cfg, "--seed", "7"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(dir.path().join("run/report.txt")).unwrap();
    assert!(report.contains("# seed 7 fold 0"));
    assert!(report.contains("1 seeds x 1 folds"));
}

#[test]
fn eval_identity_task_scores_zero() {
    let dir = TempDir::new().unwrap();
    let mut csv = String::from("x,y\n");
    for i in 0..20 {
        let v = i as f64 * 0.25 - 2.0;
        csv.push_str(&format!("{v},{v}\n"));
    }
    write(dir.path(), "line.csv", &csv);
    let cfg = write(
        dir.path(),
        "id.toml",
        r#"
[model]
dims = [1, 1]
[[model.heads]]
expansion = { kind = "identity" }
reconciliation = { kind = "identity" }
[data]
source = "csv"
path = "line.csv"
label = "y"
regression = true
[train]
epochs = 1
"#,
    );
    let ck = write(
        dir.path(),
        "ck.json",
        r#"{"seed": 0, "fold": 0, "param_count": 1, "params": [1.0]}"#,
    );
    let o = rpn(&["eval", "--config", &cfg, "--checkpoint", &ck], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("test_mse=0e0"), "{}", stdout(&o));
}

#[test]
fn eval_reproduces_the_training_score() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "e0.toml", SMALL_E0);
    assert!(rpn(&["train", "--config", &cfg], &[]).status.success());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("run/summary.json")).unwrap()).unwrap();
    let best = summary["runs"][0]["best_test_metric"].as_f64().unwrap();
    let ck = dir.path().join("run/checkpoints/seed0_fold0.json");
    let o = rpn(&["eval", "--config", &cfg, "--checkpoint", ck.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        stdout(&o).contains(&format!("test_mse={best:e}")),
        "{} vs {best:e}",
        stdout(&o)
    );
}

#[test]
fn missing_dataset_path_exits_2() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "bad.toml",
        &SMALL_E0.replace(
            "source = \"function\"\nid = \"E.0\"\nn = 200",
            "source = \"csv\"\npath = \"nowhere.csv\"\nlabel = \"y\"",
        ),
    );
    let o = rpn(&["train", "--config", &cfg], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere.csv"));
}

#[test]
fn unknown_key_exits_2_with_field_path() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "bad.toml",
        &SMALL_E0.replace("epochs = 15", "epochs = 15\nmomentum = 0.9"),
    );
    let o = rpn(&["train", "--config", &cfg], &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("train") && err.contains("momentum"), "{err}");

    let cfg = write(
        dir.path(),
        "bad2.toml",
        &SMALL_E0.replace("r = 1 }", "r = 1, rank = 2 }"),
    );
    let o = rpn(&["train", "--config", &cfg], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("model.heads[0].reconciliation"), "{}", stderr(&o));

    let cfg = write(
        dir.path(),
        "bad3.toml",
        &SMALL_E0.replace("dims = [2, 2, 1]", "dims = [3, 2, 1]"),
    );
    let o = rpn(&["train", "--config", &cfg], &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("E.0 takes 2 inputs"), "{}", stderr(&o));
}

#[test]
fn divergence_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "nan.toml",
        &SMALL_E0.replace("{ kind = \"adam\", lr = 0.01 }", "{ kind = \"sgd\", lr = 1e300 }"),
    );
    let o = rpn(&["train", "--config", &cfg], &[]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite loss at epoch"));
}

#[test]
fn gradcheck_passes_and_corruption_fails() {
    let o = rpn(&["gradcheck"], &[]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("1035/1035 triples pass"), "{}", stdout(&o));

    let o = rpn(&["gradcheck", "--corrupt"], &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("worst_param=0"));
}

#[test]
fn gradcheck_on_a_config_model() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "e0.toml", SMALL_E0);
    let o = rpn(&["gradcheck", "--config", &cfg], &[]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("47 parameters checked"));
    let o = rpn(&["gradcheck", "--config", &cfg, "--corrupt"], &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn equiv_targets() {
    let o = rpn(&["equiv", "--target", "mlp"], &[]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("mlp max_abs_diff="));
    assert!(stdout(&o).contains("PASS"));
    let o = rpn(&["equiv", "--target", "nb"], &[]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("argmax_agreement=1e0"));
    let o = rpn(&["equiv", "--target", "all"], &[]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 5);
    let o = rpn(&["equiv", "--target", "svm-rbf"], &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_recon_matches_closed_forms() {
    let o = rpn(&["bench", "--sweep", "recon"], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(!out.contains("MISMATCH"));
    let identity = out.lines().find(|l| l.starts_with("identity")).unwrap();
    assert!(identity.contains("1.000000"), "{identity}");
    let lorr = out.lines().find(|l| l.starts_with("lorr")).unwrap();
    let cols: Vec<&str> = lorr.split_whitespace().collect();
    assert_eq!(&cols[2..4], ["2", "8"]);
    assert_eq!(rpn(&["bench", "--sweep", "bogus"], &[]).status.code(), Some(2));
}

#[test]
fn gen_data_writes_csv() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("e0.csv");
    let o = rpn(
        &[
            "gen-data",
            "--function",
            "E.0",
            "--n",
            "50",
            "--out",
            out.to_str().unwrap(),
            "--seed",
            "3",
        ],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 51);
    assert_eq!(text.lines().next().unwrap(), "x0,x1,y0");

    let o = rpn(&["gen-data", "--list"], &[]);
    assert!(stdout(&o).lines().any(|l| l.starts_with("C.16")));
    assert_eq!(rpn(&["gen-data", "--function", "E.0"], &[]).status.code(), Some(2));
    assert_eq!(
        rpn(&["gen-data", "--function", "Z.9", "--n", "5", "--out", "x.csv"], &[])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn bad_thread_count_exits_2() {
    let o = rpn(&["equiv", "--target", "kernel"], &[("RPN_THREADS", "zero")]);
    assert_eq!(o.status.code(), Some(2));
}
