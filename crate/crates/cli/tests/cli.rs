use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use factgraph::checkpoint::save_checkpoint;
use factgraph::{EfpModel, ModelSpec, TrainConfig};

fn factgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_factgraph"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn desk_cfg() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.cfg")
}

/// Generates the default synthetic corpus into `dir/data`.
fn synth_corpus(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let o = factgraph(&["synth", "--seed", "2", "--out", p(&data)]);
    assert!(o.status.success(), "{}", stderr(&o));
    data
}

fn train_quick(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let emb = data.join("embeddings.txt");
    let cfg = desk_cfg();
    let mut args = vec![
        "train",
        "--config",
        p(&cfg),
        "--epochs",
        "3",
        "--out",
        p(out),
        "--data",
        p(data),
        "--embeddings",
        p(&emb),
    ];
    args.extend_from_slice(extra);
    factgraph(&args)
}

#[test]
fn train_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_corpus(dir.path());
    let out = dir.path().join("run");
    let o = train_quick(&data, &out, &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "model.ckpt",
        "train.log",
        "config.cfg",
        "test_predictions.tsv",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let log = fs::read_to_string(out.join("train.log")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[0].starts_with("1\t"));
    assert!(lines[3].starts_with("{\"best_epoch\":"));
    let best_epoch: usize = lines[3]
        .split("\"best_epoch\":")
        .nth(1)
        .unwrap()
        .split(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    let logged_dev: f64 = lines[best_epoch - 1]
        .split('\t')
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();

    let emb = data.join("embeddings.txt");
    let eval_out = dir.path().join("eval");
    let o = factgraph(&[
        "evaluate",
        "--checkpoint",
        p(&out.join("model.ckpt")),
        "--data",
        p(&data),
        "--embeddings",
        p(&emb),
        "--split",
        "dev",
        "--out",
        p(&eval_out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let printed = stdout(&o);
    let mae: f64 = printed.split('\t').next().unwrap().parse().unwrap();
    assert_eq!(mae, logged_dev);
    let dump = fs::read_to_string(eval_out.join("dev_predictions.tsv")).unwrap();
    assert_eq!(dump.lines().count(), 16);
    assert_eq!(dump.lines().next().unwrap().split('\t').count(), 5);
}

#[test]
fn reloaded_checkpoint_reproduces_test_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_corpus(dir.path());
    let out = dir.path().join("run");
    assert!(train_quick(&data, &out, &[]).status.success());
    let eval_out = dir.path().join("eval");
    let o = factgraph(&[
        "evaluate",
        "--config",
        p(&out.join("config.cfg")),
        "--checkpoint",
        p(&out.join("model.ckpt")),
        "--data",
        p(&data),
        "--embeddings",
        p(&data.join("embeddings.txt")),
        "--out",
        p(&eval_out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(out.join("test_predictions.tsv")).unwrap(),
        fs::read(eval_out.join("test_predictions.tsv")).unwrap()
    );
}

#[test]
fn ablation_flags_train() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_corpus(dir.path());
    for (name, flags) in [
        ("l1", &["--lambda", "1"][..]),
        ("l0", &["--lambda", "0"][..]),
        ("nostruct", &["--no-structure"][..]),
        ("noattn", &["--no-attention"][..]),
    ] {
        let out = dir.path().join(name);
        let o = train_quick(&data, &out, flags);
        assert!(o.status.success(), "{name}: {}", stderr(&o));
        let cfg = fs::read_to_string(out.join("config.cfg")).unwrap();
        match name {
            "l1" => assert!(cfg.contains("lambda = 1\n"), "{cfg}"),
            "l0" => assert!(cfg.contains("lambda = 0\n"), "{cfg}"),
            "nostruct" => assert!(cfg.contains("no_structure = true")),
            _ => assert!(cfg.contains("no_attention = true")),
        }
    }
}

#[test]
fn missing_embeddings_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = factgraph(&[
        "train",
        "--out",
        p(dir.path()),
        "--data",
        p(&fixtures().join("intro")),
        "--embeddings",
        p(&dir.path().join("absent.txt")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(
        err.contains("absent.txt") && err.contains("No such file"),
        "{err}"
    );
}

#[test]
fn lambda_out_of_range_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "lambda = 1.5\n").unwrap();
    let o = factgraph(&[
        "train",
        "--config",
        p(&cfg),
        "--out",
        p(dir.path()),
        "--data",
        p(&fixtures().join("intro")),
        "--embeddings",
        p(&fixtures().join("embeddings.txt")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("lambda must lie in [0, 1]"),
        "{}",
        stderr(&o)
    );

    let o = factgraph(&["gradcheck", "--lambda", "-0.1"]);
    assert_eq!(o.status.code(), Some(2));
}

fn fixture_checkpoint(dir: &Path) -> PathBuf {
    let out = dir.join("fixture_run");
    let o = factgraph(&[
        "train",
        "--config",
        p(&desk_cfg()),
        "--epochs",
        "2",
        "--out",
        p(&out),
        "--data",
        p(&fixtures().join("intro")),
        "--data",
        p(&fixtures().join("figure1")),
        "--embeddings",
        p(&fixtures().join("embeddings.txt")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("model.ckpt")
}

#[test]
fn dimension_mismatch_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = fixture_checkpoint(dir.path());
    let cfg = dir.path().join("h8.cfg");
    fs::write(&cfg, "hidden = 8\n").unwrap();
    let o = factgraph(&[
        "evaluate",
        "--config",
        p(&cfg),
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&fixtures().join("figure1")),
        "--embeddings",
        p(&fixtures().join("embeddings.txt")),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(
        err.contains("encoder.l0.fwd.w_hh: model [8, 32], checkpoint [16, 64]"),
        "{err}"
    );
}

#[test]
fn empty_split_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = fixture_checkpoint(dir.path());
    let o = factgraph(&[
        "evaluate",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&fixtures().join("intro")),
        "--embeddings",
        p(&fixtures().join("embeddings.txt")),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("test split is empty"), "{}", stderr(&o));
}

#[test]
fn constant_predictions_report_na() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_corpus(dir.path());
    let cfg = TrainConfig::default();
    let mut model = EfpModel::new(ModelSpec::from_config(&cfg, 16).unwrap(), 1);
    let id = model.params().find("head.ffn2.weight").unwrap();
    model.params_mut().get_mut(id).fill(0.0);
    let ckpt = dir.path().join("const.ckpt");
    save_checkpoint(&ckpt, &model, &cfg).unwrap();
    let o = factgraph(&[
        "evaluate",
        "--checkpoint",
        p(&ckpt),
        "--data",
        p(&data),
        "--embeddings",
        p(&data.join("embeddings.txt")),
        "--out",
        p(dir.path()),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).trim_end().ends_with("\tNA"), "{}", stdout(&o));
}

#[test]
fn predict_writes_dump_and_affinities() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = fixture_checkpoint(dir.path());
    let mentions = dir.path().join("mentions.tsv");
    fs::write(&mentions, "fig1\t8\nfig1\t11\t2.5\n").unwrap();
    let out = dir.path().join("pred");
    let o = factgraph(&[
        "predict",
        "--checkpoint",
        p(&ckpt),
        "--embeddings",
        p(&fixtures().join("embeddings.txt")),
        "--conllu",
        p(&fixtures().join("figure1/sentences.conllu")),
        "--mentions",
        p(&mentions),
        "--dump-affinity",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let dump = fs::read_to_string(out.join("predictions.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = dump.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][2], "NA");
    assert_eq!(rows[1][2], "2.5");
    assert_eq!(rows[0][4].split(',').count(), 15);
    let syn = fs::read_to_string(out.join("affinity/fig1_8_syntactic.tsv")).unwrap();
    let ones: usize = syn
        .lines()
        .map(|l| {
            assert_eq!(l.split('\t').count(), 15);
            l.split('\t').filter(|v| *v == "1").count()
        })
        .sum();
    assert_eq!(ones, 43);
    assert!(out.join("affinity/fig1_11_semantic.tsv").exists());
    assert!(out.join("affinity/fig1_11_blended.tsv").exists());

    fs::write(&mentions, "fig1\t40\n").unwrap();
    let o = factgraph(&[
        "predict",
        "--checkpoint",
        p(&ckpt),
        "--embeddings",
        p(&fixtures().join("embeddings.txt")),
        "--conllu",
        p(&fixtures().join("figure1/sentences.conllu")),
        "--mentions",
        p(&mentions),
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_exit_codes() {
    let o = factgraph(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let line = stdout(&o)
        .lines()
        .find(|l| l.starts_with("max relative error"))
        .unwrap()
        .to_string();
    let err: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(err < 1e-4);

    let o = factgraph(&["gradcheck", "--lambda", "0"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("semantic affinity parameters receive zero gradient"));

    let o = factgraph(&["gradcheck", "--inject-fault"]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn synth_is_deterministic_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(factgraph(&["synth", "--seed", "9", "--out", p(&a)])
        .status
        .success());
    assert!(factgraph(&["synth", "--seed", "9", "--out", p(&b)])
        .status
        .success());
    for f in [
        "sentences.conllu",
        "annotations.tsv",
        "splits.tsv",
        "embeddings.txt",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }

    let spec = dir.path().join("none.spec");
    fs::write(&spec, "cues = none\n").unwrap();
    let c = dir.path().join("c");
    let o = factgraph(&["synth", "--spec", p(&spec), "--out", p(&c)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ann = fs::read_to_string(c.join("annotations.tsv")).unwrap();
    assert!(ann.lines().all(|l| l.ends_with("\t3")), "{ann}");

    fs::write(&spec, "placement = sideways\n").unwrap();
    let o = factgraph(&["synth", "--spec", p(&spec), "--out", p(&c)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn selfcheck_passes() {
    let o = factgraph(&["selfcheck"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(
        stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(),
        3
    );
}

#[test]
fn usage_error_exit_2() {
    assert_eq!(factgraph(&["train"]).status.code(), Some(2));
    assert_eq!(factgraph(&["frobnicate"]).status.code(), Some(2));
}
