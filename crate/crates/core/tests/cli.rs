use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cofact::io::{read_matrix, RunConfig};

const SMALL: &str = "rows = 20\ncols = 20\nbands = 32\nextra_endmembers = 3\nK = 6\nseed = 1\n";

fn cofact(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cofact"))
        .args(args)
        .current_dir(dir)
        .env("COFACT_THREADS", "0")
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn synth_run_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), SMALL).unwrap();
    for sub in ["synth", "check"] {
        assert_eq!(cofact(dir.path(), &[sub, "--config", "c.cfg"]).status.code(), Some(0), "{sub}");
    }
    let run = cofact(dir.path(), &["run", "--config", "c.cfg", "--csv"]);
    assert_eq!(run.status.code(), Some(0));
    assert!(stdout(&run).contains("stop=converged"));
    for name in ["H", "B", "Z", "Q", "C", "W", "classmap"] {
        assert!(dir.path().join(format!("out/{name}.cofa")).exists(), "{name}.cofa");
        assert!(dir.path().join(format!("out/{name}.csv")).exists(), "{name}.csv");
    }
    let h = read_matrix(dir.path().join("out/H.cofa")).unwrap();
    assert_eq!(h.dim(), (9, 400));
    let trace = fs::read_to_string(dir.path().join("out/trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("iteration,total,repr,l1,clust,classif,weight_decay,vtv,rel_change"));

    let eval = cofact(dir.path(), &["eval", "--config", "c.cfg"]);
    assert_eq!(eval.status.code(), Some(0));
    let text = stdout(&eval);
    let keys: Vec<&str> = text.lines().map(|l| l.split_once('=').unwrap().0).collect();
    assert_eq!(keys, ["kappa", "f1_mean", "re", "rmse"]);
    for line in text.lines() {
        let value: f64 = line.split_once('=').unwrap().1.parse().unwrap();
        assert!(value.is_finite(), "{line}");
    }
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cofact(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    assert_eq!(cofact(dir.path(), &["run"]).status.code(), Some(1));
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cofact(dir.path(), &["run", "--config", "absent.cfg"]).status.code(), Some(2));
    fs::write(dir.path().join("c.cfg"), SMALL).unwrap();
    let out = cofact(dir.path(), &["run", "--config", "c.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Y.cofa"));
}

#[test]
fn bad_config_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), "colour = blue\n").unwrap();
    let out = cofact(dir.path(), &["check", "--config", "c.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
}

#[test]
fn written_config_reloads_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.cfg");
    let config = RunConfig { alpha_group: Some(0.25), ..RunConfig::parse(SMALL).unwrap() };
    fs::write(&path, config.to_string()).unwrap();
    let reloaded = RunConfig::load(&path).unwrap();
    assert_eq!(RunConfig { base_dir: config.base_dir.clone(), ..reloaded }, config);
}
