mod common;

use std::process::Command;

use common::{tiny_config, toy_data};
use deskmt::cli::config::VocabMode;
use deskmt::cli::pipeline::{translation_path, Manifest, ExperimentReport, REPORT_JSON, REPORT_TSV};
use deskmt::cli::{resume, run_experiment, PipelineError};

fn quiet(_: &str) {}

#[test]
fn vanilla_pipeline_shape_and_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let data = toy_data(&tmp.path().join("data"));
    let exp = tmp.path().join("exp");
    let cfg = tiny_config(data);
    let first = run_experiment(&cfg, &exp, &mut quiet).unwrap();
    assert!(first.skipped.is_empty());
    for s in [1, 2, 3] {
        assert!(exp.join(format!("models/seed{s}.nmtb")).is_file());
        assert!(exp.join(translation_path(Some(s))).is_file());
    }
    assert!(exp.join(translation_path(None)).is_file());
    let report: ExperimentReport = serde_json::from_str(&std::fs::read_to_string(exp.join(REPORT_JSON)).unwrap()).unwrap();
    assert_eq!(report.systems.len(), 3);
    assert!(report.ensemble.is_some());
    assert!(std::fs::read_to_string(exp.join(REPORT_TSV)).unwrap().contains("+Ensemble"));

    let again = resume(&exp, &mut quiet).unwrap();
    assert!(again.executed.is_empty());
    assert_eq!(again.manifest_hash, first.manifest_hash);

    std::fs::remove_file(exp.join(translation_path(None))).unwrap();
    let partial = resume(&exp, &mut quiet).unwrap();
    assert_eq!(partial.executed, vec!["translate.ensemble".to_string()]);
    assert_eq!(partial.manifest_hash, first.manifest_hash);

    let text = std::fs::read_to_string(exp.join("config.toml")).unwrap();
    std::fs::write(exp.join("config.toml"), text.replace("beam = 2", "beam = 3")).unwrap();
    match resume(&exp, &mut quiet) {
        Err(e @ PipelineError::ConfigChanged { .. }) => {
            assert!(e.to_string().contains("+ beam = 3"));
            assert_eq!(e.exit_code(), 2);
        }
        other => panic!("expected refusal, got {other:?}"),
    }
    let mut changed = cfg.clone();
    changed.decode.beam = 3;
    assert!(matches!(run_experiment(&changed, &exp, &mut quiet), Err(PipelineError::ConfigChanged { .. })));
}

#[test]
fn bpe_pipeline_with_extensions() {
    let tmp = tempfile::tempdir().unwrap();
    let data = toy_data(&tmp.path().join("data"));
    let exp = tmp.path().join("exp");
    let mut cfg = tiny_config(data);
    cfg.seeds = vec![5];
    cfg.vocab = VocabMode::Bpe {
        merges: 20,
        map_singletons: true,
    };
    cfg.extensions.lexicon_bias = true;
    cfg.extensions.bootstrap = Some(10);
    cfg.extensions.dropout = 0.1;
    let s = run_experiment(&cfg, &exp, &mut quiet).unwrap();
    assert!(s.executed.contains(&"bias".to_string()));
    assert!(!s.executed.contains(&"translate.ensemble".to_string()));
    assert!(exp.join("vocab/merges.txt").is_file());
    assert!(exp.join("models/seed5.nmtb.lex").is_file());
    let boot = std::fs::read_to_string(exp.join("data/bootstrap.src")).unwrap();
    assert_eq!(boot.lines().count(), 70);
    let m = Manifest::load(&exp).unwrap();
    assert!(m.stages.contains_key("bootstrap"));
}

#[test]
fn invalid_configs_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let data = toy_data(&tmp.path().join("data"));
    let mut cfg = tiny_config(data);
    cfg.seeds.clear();
    let e = run_experiment(&cfg, &tmp.path().join("e"), &mut quiet).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    let mut cfg = tiny_config(toy_data(&tmp.path().join("data")));
    cfg.data.test_source = tmp.path().join("missing");
    assert!(matches!(run_experiment(&cfg, &tmp.path().join("e"), &mut quiet), Err(PipelineError::Config(_))));
}

fn deskmt() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_deskmt"));
    c.arg("--quiet");
    c
}

#[test]
fn binary_exit_codes_and_steps() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    toy_data(&d.join("data"));
    let p = |s: &str| d.join(s);

    assert_eq!(deskmt().arg("run").status().unwrap().code(), Some(2));
    std::fs::write(p("bad.toml"), "seeds = []\n").unwrap();
    let st = deskmt().args(["run", "--config"]).arg(p("bad.toml")).args(["--dir", "x"]).status().unwrap();
    assert_eq!(st.code(), Some(2));
    // A corrupt vocabulary makes the train step fail at run time.
    std::fs::write(p("broken.tsv"), "not a vocabulary").unwrap();
    let st = deskmt()
        .arg("train")
        .args(["--train-source", "data/train.src", "--train-target", "data/train.tgt"])
        .args(["--dev-source", "data/dev.src", "--dev-target", "data/dev.tgt"])
        .args(["--source-vocab", "broken.tsv", "--target-vocab", "broken.tsv", "-o", "m.nmtb"])
        .current_dir(d)
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(3));

    let ok = |c: &mut Command| assert!(c.current_dir(d).status().unwrap().success());
    ok(deskmt().args(["build-vocab", "-i", "data/train.src", "-o", "sv.tsv"]));
    ok(deskmt().args(["build-vocab", "-i", "data/train.tgt", "-o", "tv.tsv"]));
    ok(deskmt().args(["train-lexicon", "--source", "data/train.src", "--target", "data/train.tgt"]).args(["--table", "t.tsv", "--dictionary", "d.tsv"]));
    ok(deskmt()
        .arg("train")
        .args(["--train-source", "data/train.src", "--train-target", "data/train.tgt"])
        .args(["--dev-source", "data/dev.src", "--dev-target", "data/dev.tgt"])
        .args(["--source-vocab", "sv.tsv", "--target-vocab", "tv.tsv", "-o", "m.nmtb"])
        .args(["--embed", "8", "--hidden", "8", "--attention", "8", "--eval-interval", "30", "--patience", "1", "--rate", "0.01"]));
    ok(deskmt()
        .args(["translate", "--model", "m.nmtb", "m.nmtb", "--source-vocab", "sv.tsv", "--target-vocab", "tv.tsv"])
        .args(["-i", "data/test.src", "-o", "hyp.txt", "--dictionary", "d.tsv", "--beam", "2"]));
    assert_eq!(std::fs::read_to_string(p("hyp.txt")).unwrap().lines().count(), 6);
    std::fs::write(p("ref.txt"), "t1 t2 t3 t4 t5\n").unwrap();
    let out = deskmt()
        .args(["evaluate", "--hypothesis", "ref.txt", "--reference", "ref.txt"])
        .current_dir(d)
        .output()
        .unwrap();
    assert!(String::from_utf8(out.stdout).unwrap().contains("100.00"));
    ok(deskmt().args(["learn-bpe", "--source", "data/train.src", "--target", "data/train.tgt", "--merges", "10", "-o", "bpe.txt"]));
    ok(deskmt().args(["apply-bpe", "--merges", "bpe.txt", "-i", "data/test.src", "-o", "test.bpe"]));
    ok(deskmt()
        .args(["analyze", "--hypothesis", "hyp.txt", "--reference", "data/test.tgt", "--source", "data/test.src"])
        .args(["--vocab", "tv.tsv", "--merges", "bpe.txt", "--dictionary", "d.tsv", "--coverage-limit", "4"]));

    let exp = d.join("root");
    let st = deskmt()
        .env("DESKMT_ROOT", &exp)
        .args(["resume", "--dir", "nothing-here"])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(2));
}
