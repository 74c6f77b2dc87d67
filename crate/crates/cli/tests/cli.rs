use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn treeprobe(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_treeprobe"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = treeprobe(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], cwd: &Path) -> (i32, String) {
    let out = treeprobe(args, cwd);
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// UD-style treebank: `count` chain-shaped sentences of 3..=20 words ending in
/// a PUNCT token, one multiword range line each, plus one 60-word sentence.
fn ud_fixture(count: usize) -> String {
    let mut text = String::new();
    for k in 0..count {
        let n = 3 + k % 18;
        text.push_str(&format!("# sent_id = ud-{k}\n# text = ...\n"));
        text.push_str("1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n");
        for i in 1..=n {
            let (upos, head) = if i == n {
                ("PUNCT", 1)
            } else {
                ("NOUN", i - 1)
            };
            text.push_str(&format!("{i}\tw{i}\tw\t{upos}\t_\t_\t{head}\tdep\t_\t_\n"));
        }
        text.push('\n');
    }
    text.push_str("# sent_id = too-long\n");
    for i in 1..=60 {
        text.push_str(&format!("{i}\tw\tw\tX\t_\t_\t{}\tdep\t_\t_\n", i - 1));
    }
    text.push('\n');
    text
}

fn sentence_count(path: &Path) -> usize {
    fs::read_to_string(path)
        .unwrap()
        .matches("# sent_id")
        .count()
}

#[test]
fn prepare_splits_and_logs() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("ud.conllu"), ud_fixture(100)).unwrap();
    ok(
        &[
            "prepare",
            "--treebank",
            "ud.conllu",
            "--out",
            "a",
            "--seed",
            "3",
        ],
        dir.path(),
    );
    let counts: Vec<usize> = ["train", "dev", "test"]
        .iter()
        .map(|p| sentence_count(&dir.path().join(format!("a/{p}.conllu"))))
        .collect();
    assert_eq!(counts, [80, 10, 10]);
    let log = fs::read_to_string(dir.path().join("a/filter.log")).unwrap();
    assert_eq!(log, "too-long\tlength>50\n");
    assert!(dir.path().join("a/prepare.manifest.json").exists());

    ok(
        &[
            "prepare",
            "--treebank",
            "ud.conllu",
            "--out",
            "b",
            "--seed",
            "3",
        ],
        dir.path(),
    );
    for f in ["train.conllu", "dev.conllu", "test.conllu", "filter.log"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f} differs on rerun"
        );
    }
}

#[test]
fn prepare_reports_parse_errors_with_line() {
    let dir = TempDir::new().unwrap();
    fs::write(
        dir.path().join("bad.conllu"),
        "1\tx\t_\tX\t_\t_\t0\t_\t_\t_\n2\ty\t_\tX\n",
    )
    .unwrap();
    let (status, err) = code(
        &["prepare", "--treebank", "bad.conllu", "--out", "o"],
        dir.path(),
    );
    assert_eq!(status, 2);
    assert!(
        err.contains("bad.conllu") && err.contains("line 2"),
        "{err}"
    );
}

#[test]
fn synth_single_pair() {
    let dir = TempDir::new().unwrap();
    ok(
        &[
            "synth",
            "--count",
            "1",
            "--min-len",
            "2",
            "--max-len",
            "2",
            "--dim",
            "4",
            "--out",
            "s",
        ],
        dir.path(),
    );
    let out = ok(&["inspect", "s/synth.sdeb"], dir.path());
    assert_eq!(out, "format\tSDEB\nversion\t1\ncount\t1\ndim\t4\n");
    let conllu = fs::read_to_string(dir.path().join("s/synth.conllu")).unwrap();
    assert_eq!(
        conllu
            .lines()
            .filter(|l| l.starts_with(char::is_numeric))
            .count(),
        2
    );
}

#[test]
fn synth_rejects_small_dim() {
    let dir = TempDir::new().unwrap();
    let (status, err) = code(
        &["synth", "--max-len", "15", "--dim", "8", "--out", "s"],
        dir.path(),
    );
    assert_eq!(status, 1);
    assert!(err.contains("dim"), "{err}");

    fs::write(dir.path().join("ud.conllu"), ud_fixture(20)).unwrap();
    let (status, err) = code(
        &[
            "synth",
            "--source",
            "from-treebank",
            "--treebank",
            "ud.conllu",
            "--dim",
            "8",
            "--out",
            "s",
        ],
        dir.path(),
    );
    assert_eq!(status, 2);
    assert!(err.contains("dimension"), "{err}");
}

/// Synthetic train/dev/test directory built through the CLI.
fn synthetic_data(dir: &Path, count: usize, dim: usize) -> PathBuf {
    ok(
        &[
            "synth",
            "--count",
            &count.to_string(),
            "--max-len",
            &(dim + 1).min(15).to_string(),
            "--dim",
            &dim.to_string(),
            "--seed",
            "2",
            "--out",
            "raw",
        ],
        dir,
    );
    ok(
        &[
            "prepare",
            "--treebank",
            "raw/synth.conllu",
            "--ratios",
            "8:1:1",
            "--seed",
            "2",
            "--out",
            "split",
        ],
        dir,
    );
    ok(
        &[
            "synth",
            "--source",
            "from-treebank",
            "--treebank",
            "split/train.conllu",
            "--treebank",
            "split/dev.conllu",
            "--treebank",
            "split/test.conllu",
            "--dim",
            &dim.to_string(),
            "--seed",
            "2",
            "--out",
            "data",
        ],
        dir,
    );
    dir.join("data")
}

#[test]
fn train_eval_compare_round() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    synthetic_data(p, 60, 16);
    fs::write(p.join("run.toml"), "max_epochs = 3\nlearning_rate = 0.5\n").unwrap();
    ok(
        &[
            "train",
            "--data",
            "data",
            "--config",
            "run.toml",
            "--learning-rate",
            "0.01",
            "--out",
            "m",
        ],
        p,
    );
    let config = fs::read_to_string(p.join("m/config.toml")).unwrap();
    assert!(
        config.contains("learning_rate = 0.01\n") && config.contains("max_epochs = 3\n"),
        "{config}"
    );
    let report = fs::read_to_string(p.join("m/train_report.tsv")).unwrap();
    assert!(report.starts_with("model_kind\tprobe\n"), "{report}");

    let summary = ok(
        &[
            "eval",
            "--checkpoint",
            "m/model.spbm",
            "--data",
            "data",
            "--out",
            "m",
        ],
        p,
    );
    assert!(summary.starts_with("uuas_micro\t"));
    let eval = fs::read_to_string(p.join("m/eval_report.tsv")).unwrap();
    assert!(eval.contains("\nid\tn\tcorrect\ttotal\tdspr\tdspr_pfw\tflags\n"));
    assert!(p.join("m/train.manifest.json").exists() && p.join("m/eval.manifest.json").exists());

    let table = ok(
        &[
            "compare",
            "--run",
            "same=m/eval_report.tsv,m/eval_report.tsv",
            "--out",
            "c",
        ],
        p,
    );
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("same\t"));
    let deltas: Vec<&str> = lines[1].split('\t').skip(3).step_by(3).collect();
    assert_eq!(deltas, ["0", "0", "0", "0"]);
    assert_eq!(
        lines[2],
        "mean_delta\truns=1\tuuas_micro=0\tuuas_macro=0\tdspr_macro=0\tdspr_pfw_macro=0"
    );
    assert!(p.join("c/compare.tsv").exists() && p.join("c/sentences_same.tsv").exists());
}

#[test]
fn search_writes_best_trial() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    synthetic_data(p, 40, 8);
    ok(
        &[
            "search",
            "--data",
            "data",
            "--trials",
            "3",
            "--rank-choices",
            "4,full",
            "--max-epochs",
            "2",
            "--jobs",
            "2",
            "--out",
            "s",
        ],
        p,
    );
    let report = fs::read_to_string(p.join("s/search_report.tsv")).unwrap();
    assert!(report.starts_with("best_trial\t"));
    assert_eq!(report.lines().filter(|l| l.ends_with("\tok")).count(), 3);
    assert!(p.join("s/model.spbm").exists());
}

#[test]
fn eval_names_both_dims_on_mismatch() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    synthetic_data(p, 40, 16);
    ok(
        &["train", "--data", "data", "--max-epochs", "1", "--out", "m"],
        p,
    );
    ok(
        &[
            "synth",
            "--source",
            "from-treebank",
            "--treebank",
            "split/test.conllu",
            "--dim",
            "20",
            "--out",
            "wide",
        ],
        p,
    );
    fs::copy(p.join("split/test.conllu"), p.join("wide/test.conllu")).unwrap();
    let (status, err) = code(
        &[
            "eval",
            "--checkpoint",
            "m/model.spbm",
            "--data",
            "wide",
            "--out",
            "e",
        ],
        p,
    );
    assert_eq!(status, 2);
    assert!(err.contains("d=16") && err.contains("d=20"), "{err}");
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    synthetic_data(p, 40, 8);

    let (status, err) = code(
        &["train", "--data", "data", "--rank", "banana", "--out", "m"],
        p,
    );
    assert_eq!(status, 1, "{err}");
    fs::write(p.join("bad.toml"), "learnig_rate = 0.1\n").unwrap();
    let (status, err) = code(
        &[
            "train", "--data", "data", "--config", "bad.toml", "--out", "m",
        ],
        p,
    );
    assert_eq!(status, 1);
    assert!(err.contains("learnig_rate"), "{err}");
    assert_eq!(code(&["train", "--no-such-flag"], p).0, 1);

    let (status, err) = code(
        &[
            "train",
            "--data",
            "data",
            "--learning-rate",
            "1e300",
            "--out",
            "m",
        ],
        p,
    );
    assert_eq!(status, 3, "{err}");

    fs::write(p.join("data/dev.sdeb"), b"SDEB\x01\x00\x00\x00").unwrap();
    let (status, err) = code(&["train", "--data", "data", "--out", "m"], p);
    assert_eq!(status, 2, "{err}");
    assert_eq!(code(&["inspect", "raw/synth.conllu"], p).0, 2);
}

#[test]
fn skip_list_drops_sentences_from_the_treebank_side() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    synthetic_data(p, 40, 8);
    ok(
        &["train", "--data", "data", "--max-epochs", "1", "--out", "m"],
        p,
    );

    // Rebuild the test container without its first sentence, as the extractor would.
    let test = fs::read_to_string(p.join("data/test.conllu")).unwrap();
    let first_id = test
        .lines()
        .next()
        .unwrap()
        .trim_start_matches("# sent_id = ")
        .to_string();
    let rest: String = test.split("\n\n").skip(1).collect::<Vec<_>>().join("\n\n");
    fs::create_dir(p.join("partial")).unwrap();
    fs::write(p.join("partial/rest.conllu"), rest).unwrap();
    ok(
        &[
            "synth",
            "--source",
            "from-treebank",
            "--treebank",
            "partial/rest.conllu",
            "--dim",
            "8",
            "--out",
            "partial",
        ],
        p,
    );
    fs::rename(p.join("partial/rest.sdeb"), p.join("partial/test.sdeb")).unwrap();
    fs::copy(p.join("data/test.conllu"), p.join("partial/test.conllu")).unwrap();

    let (status, err) = code(
        &[
            "eval",
            "--checkpoint",
            "m/model.spbm",
            "--data",
            "partial",
            "--out",
            "e",
        ],
        p,
    );
    assert_eq!(status, 2);
    assert!(err.contains("alignment"), "{err}");

    fs::write(p.join("skip.txt"), format!("{first_id}\n")).unwrap();
    ok(
        &[
            "eval",
            "--checkpoint",
            "m/model.spbm",
            "--data",
            "partial",
            "--skip-list",
            "skip.txt",
            "--out",
            "e",
        ],
        p,
    );
    let eval = fs::read_to_string(p.join("e/eval_report.tsv")).unwrap();
    assert!(!eval.contains(&format!("\n{first_id}\t")));
}
