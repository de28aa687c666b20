//! End-to-end exercise of the command-line binary: simulate a small study,
//! tune a path, fit at fixed weights, and predict in every mode.

use std::fs;
use std::path::Path;
use std::process::Command;

fn ibmr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ibmr"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "command failed: {:?}\nstdout: {}\nstderr: {}",
        cmd,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn dataset_dirs(root: &Path) -> Vec<String> {
    let mut dirs: Vec<String> = fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path().to_string_lossy().into_owned())
        .collect();
    dirs.sort();
    dirs
}

#[test]
fn simulate_path_fit_predict_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("sim.conf");
    fs::write(&conf, "n=600\np=100\ns=10\nb=0.1\nseed=3\ntest_n=60\n").unwrap();
    let study = tmp.path().join("study");
    run_ok(
        ibmr()
            .args(["simulate", "--config"])
            .arg(&conf)
            .arg("--out")
            .arg(&study),
    );

    let train = dataset_dirs(&study.join("train"));
    let validation = dataset_dirs(&study.join("validation"));
    let binning = study.join("binning.tsv");

    let fit_dir = tmp.path().join("fit");
    run_ok(
        ibmr()
            .arg("path")
            .arg("--train")
            .args(&train)
            .arg("--validation")
            .args(&validation)
            .arg("--binning")
            .arg(&binning)
            .args([
                "--method",
                "IBMR-int",
                "--n-lambda",
                "4",
                "--lambda-min-ratio",
                "0.1",
                "--rhos",
                "1e-2",
            ])
            .arg("--out")
            .arg(&fit_dir),
    );
    let model = fit_dir.join("model.tsv");
    assert!(model.is_file());
    let path_report = fs::read_to_string(fit_dir.join("path_report.tsv")).unwrap();
    assert!(path_report.lines().count() == 5, "header plus four grid points");
    assert!(path_report.contains("selected"));

    // fixed-weight fit through the same front end
    let single = tmp.path().join("single");
    run_ok(
        ibmr()
            .arg("fit")
            .arg("--train")
            .args(&train)
            .arg("--binning")
            .arg(&binning)
            .args(["--method", "IBMR", "--lambda", "0.05", "--rho", "0.01"])
            .arg("--out")
            .arg(&single),
    );
    assert!(single.join("model.tsv").is_file());

    // predictions in all three modes against the simulated test set
    for mode in ["fine", "conditional", "coarse"] {
        let out = tmp.path().join(format!("pred_{mode}"));
        run_ok(
            ibmr()
                .arg("predict")
                .arg("--model")
                .arg(&model)
                .arg("--data")
                .arg(study.join("test"))
                .arg("--binning")
                .arg(study.join("test").join("binning.tsv"))
                .args(["--mode", mode])
                .arg("--out")
                .arg(&out),
        );
        let pred = fs::read_to_string(out.join("predictions.tsv")).unwrap();
        assert_eq!(pred.lines().count(), 61, "header plus one row per test case");
        assert!(out.join("confusion_matrix.tsv").is_file());
    }

    // usage errors exit with code 2, data errors with 3
    let bad = ibmr()
        .args(["fit", "--train", "nowhere", "--binning"])
        .arg(&binning)
        .args(["--lambda", "-1", "--out"])
        .arg(tmp.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
    let missing = ibmr()
        .args(["fit", "--train", "nowhere", "--binning"])
        .arg(&binning)
        .args(["--lambda", "0.1", "--out"])
        .arg(tmp.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(3));
}
