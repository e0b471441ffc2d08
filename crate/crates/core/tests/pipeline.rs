use std::process::Command;

use nupix::evalx::parse_scalars_csv;
use nupix::pipeline::{describe, run_pipeline, ExperimentConfig, PipelineError};
use nupix::trainer::load_checkpoint;

const TINY: &str = r#"
seed = 4
[dataset]
events = 90
calibration_events = 30
[train]
max_epochs = 2
split = { train = 0.8, val = 0.1, test = 0.1 }
"#;

fn nupix() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nupix"))
}

#[test]
fn tiny_run_writes_every_artifact() {
    let cfg = ExperimentConfig::from_toml_str(TINY).unwrap();
    let root = tempfile::tempdir().unwrap();
    let (summary, layout) = run_pipeline(&cfg, root.path(), &mut |_| {}).unwrap();
    assert_eq!(layout.root, root.path().join(cfg.run_dir_name()));
    assert_eq!(summary.split_sizes, [72, 9, 9]);
    for f in ["config.toml", "model.ckpt", "arch.toml", "history.jsonl", "split.json", "scores.tsv", "summary.json"] {
        assert!(layout.root.join(f).is_file(), "missing {f}");
    }
    for d in ["report", "report-decoded", "report-downsample2"] {
        for f in ["report.txt", "metrics.csv", "confusion.csv", "roc.csv", "report.jsonl"] {
            assert!(layout.root.join(d).join(f).is_file(), "missing {d}/{f}");
        }
    }
    let scalars = parse_scalars_csv(&std::fs::read_to_string(layout.root.join("report/metrics.csv")).unwrap()).unwrap();
    assert_eq!(scalars[0], ("events".to_string(), 9.0));
    assert_eq!(summary.generalization[0].factor, 1);
    assert_eq!(summary.generalization[0].accuracy_delta, 0.0);
    let model = load_checkpoint(layout.checkpoint()).unwrap();
    assert_eq!(model.config().init_seed, 4);
    // the written config resolves back to the same run directory
    let again = ExperimentConfig::load(layout.config()).unwrap();
    assert_eq!(again.run_dir_name(), cfg.run_dir_name());
}

#[test]
fn invalid_config_creates_nothing() {
    let cfg = ExperimentConfig::from_toml_str("[dataset]\nevents = 0\n[decode]\nbeam_width = 0\n").unwrap();
    let root = tempfile::tempdir().unwrap();
    match run_pipeline(&cfg, &root.path().join("out"), &mut |_| {}) {
        Err(PipelineError::Config(errs)) => {
            assert!(errs.iter().any(|e| e.starts_with("dataset.events")));
            assert!(errs.iter().any(|e| e.starts_with("decode.beam_width")));
        }
        other => panic!("{:?}", other.map(|r| r.0)),
    }
    assert!(!root.path().join("out").exists());
}

#[test]
fn seed_and_config_change_the_run_directory() {
    let a = ExperimentConfig::default();
    let b = ExperimentConfig::from_toml_str("seed = 2").unwrap();
    let c = ExperimentConfig::from_toml_str("[train]\npatience = 3").unwrap();
    assert!(a.run_dir_name().starts_with("seed1-"));
    assert!(b.run_dir_name().starts_with("seed2-"));
    assert_ne!(a.run_dir_name(), c.run_dir_name());
    assert_eq!(a.run_dir_name(), ExperimentConfig::default().run_dir_name());
}

#[test]
fn describe_reports_derived_sizes() {
    let text = describe(&ExperimentConfig::default()).unwrap();
    assert!(text.contains("train 3000 / val 300 / test 300"), "{text}");
    assert!(text.contains("45819 parameters"), "{text}");
    assert!(text.contains("nue_cc 1200"), "{text}");
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[train]\nlearning_rate = 1\n").unwrap();
    let out = nupix().args(["describe", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    let out = nupix().args(["describe"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("3000"));

    let out = nupix().args(["decode", "--model", "missing.ckpt", "--data", "missing", "--out", "x.tsv"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    let out = nupix().args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cli_stages_chain() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s);
    let ok = |c: &mut Command| {
        let out = c.output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8_lossy(&out.stdout).into_owned()
    };
    ok(nupix().args(["--threads", "1", "gen", "--events", "120", "--seed", "3", "--out"]).arg(p("data")));
    ok(nupix()
        .args(["train", "--max-epochs", "1", "--batch", "8", "--data"])
        .arg(p("data"))
        .arg("--out")
        .arg(p("model")));
    ok(nupix()
        .args(["decode", "--beam", "3", "--temperature", "5", "--model"])
        .arg(p("model/model.ckpt"))
        .arg("--data")
        .arg(p("data"))
        .arg("--split")
        .arg(p("model/split.json"))
        .arg("--out")
        .arg(p("scores.tsv")));
    let text = ok(nupix()
        .args(["eval", "--downsample", "2", "--model"])
        .arg(p("model/model.ckpt"))
        .arg("--data")
        .arg(p("data"))
        .arg("--out")
        .arg(p("report")));
    assert!(text.contains("downsample factor 2"));
    ok(nupix()
        .args(["eval", "--model"])
        .arg(p("model/model.ckpt"))
        .arg("--data")
        .arg(p("data"))
        .arg("--split")
        .arg(p("model/split.json"))
        .arg("--scores")
        .arg(p("scores.tsv"))
        .arg("--out")
        .arg(p("decoded")));
    assert!(p("decoded/roc.csv").is_file());
}
