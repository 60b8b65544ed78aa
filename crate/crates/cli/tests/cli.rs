use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
# tiny run
candidates = 8
anchors = 4
evals = 4
pretrain = 20
train_epochs = 3
finetune_epochs = 1
verify_pairs = 10
verify_epochs = 1
";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_icp-lab"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn unknown_config_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.txt"), "learning_rate = 3\n").unwrap();
    let o = run(dir.path(), &["--config", "c.txt", "train"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn bad_flags_exit_one_and_help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["train", "--bogus"])), 1);
    assert_eq!(code(&run(dir.path(), &["score", "--methods", "magic"])), 1);
    assert_eq!(code(&run(dir.path(), &["--seed", "x", "train"])), 1);
    assert_eq!(code(&run(dir.path(), &["--help"])), 0);
}

#[test]
fn missing_checkpoint_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["--out", "o", "score"])), 1);
    assert_eq!(code(&run(dir.path(), &["--out", "o", "eval", "--checkpoint", "o/none.ckpt"])), 1);
}

#[test]
fn full_flow_writes_the_output_layout() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.txt"), SMALL).unwrap();
    let base = ["--config", "c.txt", "--out", "o", "--seed", "3", "--workers", "1"];
    let step = |extra: &[&str]| {
        let args: Vec<&str> = base.iter().chain(extra).copied().collect();
        let o = run(dir.path(), &args);
        assert_eq!(code(&o), 0, "{extra:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    };
    step(&["train"]);
    step(&["score", "--methods", "icp,infl_ip"]);
    step(&["compare", "--a", "icp", "--b", "infl_ip"]);
    step(&["select", "--method", "icp"]);
    step(&["finetune", "--subset", "o/subsets/icp/le0.5.txt"]);
    step(&["eval", "--checkpoint", "o/checkpoints/ft.icp.le0.5.ckpt"]);

    let out = dir.path().join("o");
    let copy = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(copy.contains("seed = 3"));
    assert!(copy.contains("candidates = 8"));
    for p in [
        "checkpoints/base.ckpt",
        "scores/scores.csv",
        "reports/icp_vs_infl_ip.txt",
        "subsets/icp/le0.5.txt",
        "subsets/icp/infl_ip/le0.5.txt",
        "evals/icp.le0.5.csv",
    ] {
        assert!(out.join(p).is_file(), "{p}");
    }
    let scores = fs::read_to_string(out.join("scores/scores.csv")).unwrap();
    let ids: Vec<&str> = scores.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    assert_eq!(ids.len(), 8);
}
