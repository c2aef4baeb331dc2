use std::path::Path;
use std::process::{Command, Output};

use fcmli::analysis::{self, ThdReport};
use fcmli::plant;

fn fcmli(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcmli"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = fcmli(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn thd_command_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["simulate", "--duration", "0.12", "--out", "runs", "--name", "nominal"], d);
    let csv = d.join("runs/nominal.csv");
    assert!(d.join("runs/nominal.meta.toml").exists());
    for channel in ["i_a", "i_c"] {
        let printed = ok(&["thd", "--input", csv.to_str().unwrap(), "--channel", channel], d);
        let (_, values) = plant::read_csv_channel(&csv, channel).unwrap();
        let expected = analysis::thd(&values, 1e-6, 50.0, 5, 100).unwrap();
        assert_eq!(printed, toml::to_string(&expected).unwrap());
        let parsed: ThdReport = toml::from_str(&printed).unwrap();
        assert_eq!(parsed.thd.to_bits(), expected.thd.to_bits());
    }
}

#[test]
fn bad_invocations_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cases: [&[&str]; 6] = [
        &["simulate", "--bogus"],
        &["thd"],
        &["thd", "--input", "missing.csv"],
        &["gen-dataset", "--conditions", "X9"],
        &["simulate", "--controller", "ann"],
        &["run-recipe", "no_such_recipe"],
    ];
    for args in cases {
        let out = fcmli(args, d);
        assert!(!out.status.success(), "{args:?} should fail");
        assert!(!out.stderr.is_empty(), "{args:?} should explain the failure");
    }
}

#[test]
fn dataset_pipeline_plumbing() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &["gen-dataset", "--conditions", "C1,C8", "--duration", "0.03", "--discard", "0.01", "--seed", "3", "--out", "data"],
        d,
    );
    assert!(d.join("data/manifest.toml").exists());
    let out = ok(&["split", "--input", "data/dataset.csv", "--seed", "3", "--out", "split"], d);
    let counts: Vec<usize> = out
        .lines()
        .map(|l| l.split_whitespace().nth(1).unwrap().parse().unwrap())
        .collect();
    let total = fcmli::dataset::Dataset::load_csv(d.join("data/dataset.csv")).unwrap().len();
    assert_eq!(counts.iter().sum::<usize>(), total);

    std::fs::write(
        d.join("train.toml"),
        "hidden_sizes = [4]\nmax_epochs = 5\npatience = 5\nseed = 0\nhidden_activation = \"tanh\"\n\n[optimizer]\nkind = \"scg\"\nsigma = 5e-5\nlambda = 5e-7\n",
    )
    .unwrap();
    ok(
        &[
            "train", "--train", "split/train.csv", "--val", "split/val.csv", "--test", "split/test.csv",
            "--config", "train.toml", "--out", "model",
        ],
        d,
    );
    assert!(d.join("model/report.toml").exists());
    let eval = ok(&["eval", "--model", "model/model.txt", "--input", "split/test.csv", "--out", "eval"], d);
    assert!(eval.starts_with("accuracy "));

    ok(&["simulate", "--duration", "0.11", "--scenario", "S2", "--out", "runs", "--name", "mpc"], d);
    ok(
        &[
            "simulate", "--duration", "0.11", "--scenario", "S2", "--controller", "ann", "--model", "model/model.txt",
            "--out", "runs", "--name", "ann",
        ],
        d,
    );
    let table = ok(&["compare", "runs/mpc.csv", "runs/ann.csv"], d);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("scenario_id,controller"));
}

#[test]
fn static_recipe_runs() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&["run-recipe", "table1_switching_states", "--out", "r"], dir.path());
    assert!(out.contains("table1_switching_states"));
    assert!(dir.path().join("r/table1_switching_states.summary.txt").exists());
}
