use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--syn_n_per_fine",
    "10",
    "--syn_dim",
    "8",
    "--epochs",
    "2",
    "--batch_size",
    "16",
    "--bank_size",
    "32",
    "--encoder_hidden",
    "16",
    "--feat_dim",
    "8",
    "--proj_hidden",
    "16",
    "--proj_dim",
    "8",
];

fn maskcon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maskcon"))
        .args(args)
        .output()
        .expect("spawn maskcon")
}

fn train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out", out.to_str().unwrap()];
    args.extend_from_slice(TINY);
    args.extend_from_slice(extra);
    let o = maskcon(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    o
}

#[test]
fn train_writes_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(dir.path(), &[]);
    for f in ["metrics.csv", "model.ckpt", "config.txt", "train.vds", "test.vds"] {
        assert!(dir.path().join(f).is_file(), "missing {f}");
    }
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("k,score\n1,"));
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
}

#[test]
fn identical_seeds_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train(&a, &["--objective", "maskcon"]);
    train(&b, &["--objective", "maskcon"]);
    for f in ["metrics.csv", "model.ckpt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    let o = maskcon(&[&["train", "--seed", "7", "--out", c.to_str().unwrap()], TINY].concat());
    assert!(o.status.success());
    assert_ne!(std::fs::read(a.join("model.ckpt")).unwrap(), std::fs::read(c.join("model.ckpt")).unwrap());
}

#[test]
fn eval_reproduces_final_training_recall() {
    let dir = tempfile::tempdir().unwrap();
    let trained = train(dir.path(), &[]);
    let ckpt = dir.path().join("model.ckpt");
    let data = dir.path().join("test.vds");
    let report = dir.path().join("recall.csv");
    let o = maskcon(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(o.stdout, trained.stdout);
    assert_eq!(std::fs::read(&report).unwrap(), o.stdout);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("tau,d_z_sup,d_z_mask\n"));
}

#[test]
fn vds_round_trip_trains_identically() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("data");
    let mut args = vec!["gen-data", "--out", gen.to_str().unwrap()];
    args.extend_from_slice(TINY);
    assert!(maskcon(&args).status.success());

    let synthetic = dir.path().join("syn");
    let from_files = dir.path().join("vds");
    train(&synthetic, &[]);
    let train_path = gen.join("train.vds");
    let test_path = gen.join("test.vds");
    train(
        &from_files,
        &[
            "--data",
            "vds",
            "--train_path",
            train_path.to_str().unwrap(),
            "--test_path",
            test_path.to_str().unwrap(),
        ],
    );
    assert_eq!(
        std::fs::read(synthetic.join("metrics.csv")).unwrap(),
        std::fs::read(from_files.join("metrics.csv")).unwrap()
    );
}

#[test]
fn single_cell_sweep_matches_train() {
    let dir = tempfile::tempdir().unwrap();
    let single = dir.path().join("train");
    train(&single, &["--w", "0.5", "--tau", "0.1"]);
    let sweep = dir.path().join("sweep");
    let mut args = vec!["sweep", "--w", "0.5", "--tau", "0.1", "--out", sweep.to_str().unwrap()];
    args.extend_from_slice(TINY);
    let o = maskcon(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(single.join("metrics.csv")).unwrap(),
        std::fs::read(sweep.join("w0.5_tau0.1/metrics.csv")).unwrap()
    );
    let csv = std::fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(maskcon(&["train", "--out", out, "--no_such_key", "1"]).status.code(), Some(2));
    assert_eq!(maskcon(&["train", "--out", out, "--tau", "-1"]).status.code(), Some(2));
    assert_eq!(maskcon(&["train", "--out", out, "--w"]).status.code(), Some(2));
    let missing = dir.path().join("missing.ckpt");
    let o = maskcon(&["eval", "--checkpoint", missing.to_str().unwrap(), "--data", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));

    let garbage = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let o = maskcon(&["eval", "--checkpoint", garbage.to_str().unwrap(), "--data", garbage.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn one_epoch_on_hundred_samples() {
    let dir = tempfile::tempdir().unwrap();
    let o = maskcon(&[
        "train",
        "--out",
        dir.path().to_str().unwrap(),
        "--epochs",
        "1",
        "--syn_m_coarse",
        "2",
        "--syn_fine_per_coarse",
        "2",
        "--syn_n_per_fine",
        "25",
        "--syn_dim",
        "16",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert!(dir.path().join("model.ckpt").is_file());
}
