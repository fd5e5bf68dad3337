use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_flhb");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const SMALL: &[&str] = &[
    "--set",
    "n_realizations=6",
    "--set",
    "g_noisy_copies=3",
    "--set",
    "rounds=3",
];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().chain(SMALL).copied().collect()
}

#[test]
fn gen_data_counts_and_echoes_header() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_small(&["gen-data", "--out", "a.bin"]));
    let bytes = std::fs::read(dir.path().join("a.bin")).unwrap();
    assert_eq!(&bytes[..8], b"FLHBDSET");
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    assert_eq!((u32_at(12), u32_at(16), u32_at(20), u32_at(24), u32_at(28)), (16, 4, 4, 16, 4));
    let count = u64::from_le_bytes(bytes[32..40].try_into().unwrap());
    assert_eq!(count, 6 * 3 * 4);
    assert_eq!(bytes.len(), 48 + 72 * (8 + 48 * 4));

    ok(dir.path(), &with_small(&["gen-data", "--out", "b.bin"]));
    assert_eq!(bytes, std::fs::read(dir.path().join("b.bin")).unwrap());
}

#[test]
fn corrupt_archive_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_small(&["gen-data", "--out", "a.bin"]));
    let path = dir.path().join("a.bin");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'Z';
    std::fs::write(&path, bytes).unwrap();
    let out = run(dir.path(), &with_small(&["train", "--data", "a.bin"]));
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn train_writes_metrics_and_counts_uplink() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_small(&["gen-data", "--out", "a.bin"]));
    ok(
        dir.path(),
        &with_small(&["train", "--data", "a.bin", "--out-checkpoint", "m.ckpt", "--out-metrics", "m.csv"]),
    );
    let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "round,mode,K,loss,val_acc,user_acc_1,user_acc_2,user_acc_3,user_acc_4,uplink_elems");
    assert_eq!(lines.len(), 4);
    let p = flhb::cnn::param_count_actual(&flhb::cnn::ModelSpec::desk(16).unwrap()).unwrap() as u64;
    let last: u64 = lines[3].rsplit(',').next().unwrap().parse().unwrap();
    assert_eq!(last, 3 * 4 * p);
    assert!(lines[3].starts_with("3,fl,4,"));
}

#[test]
fn cml_runs_repeat_exactly() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_small(&["gen-data", "--out", "a.bin"]));
    for name in ["x", "y"] {
        let ck = format!("{name}.ckpt");
        let m = format!("{name}.csv");
        ok(
            dir.path(),
            &with_small(&["train", "--mode", "cml", "--data", "a.bin", "--out-checkpoint", &ck, "--out-metrics", &m]),
        );
    }
    let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
    assert_eq!(read("x.csv"), read("y.csv"));
    assert_eq!(read("x.ckpt"), read("y.ckpt"));
}

#[test]
fn eval_writes_one_row_per_snr_and_method() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_small(&["gen-data", "--out", "a.bin"]));
    ok(dir.path(), &with_small(&["train", "--data", "a.bin", "--out-checkpoint", "m.ckpt", "--out-metrics", "m.csv"]));
    ok(
        dir.path(),
        &with_small(&[
            "eval",
            "--data",
            "a.bin",
            "--checkpoint",
            "m.ckpt",
            "--snr-test",
            "-20,-15,-10,-5,0,5,10,15,20",
            "--out",
            "r.csv",
        ]),
    );
    let csv = std::fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "snr_db,method,mean_sum_rate,accuracy");
    assert_eq!(lines.len(), 1 + 9 * 4);
    assert!(lines[1].starts_with("-20,flhb,"));
    let methods: Vec<&str> = lines[1..5].iter().map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(methods, vec!["flhb", "somp", "oracle", "random"]);
}

#[test]
fn eval_without_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_small(&["gen-data", "--out", "a.bin"]));
    let out = run(dir.path(), &with_small(&["eval", "--data", "a.bin", "--checkpoint", "missing.ckpt"]));
    assert_eq!(out.status.code(), Some(3));
    assert!(!out.stderr.is_empty());
}

#[test]
fn eval_rejects_foreign_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_small(&["gen-data", "--out", "a.bin"]));
    ok(dir.path(), &with_small(&["train", "--data", "a.bin", "--out-checkpoint", "m.ckpt", "--out-metrics", "m.csv"]));
    let mut args = with_small(&["eval", "--data", "a.bin", "--checkpoint", "m.ckpt"]);
    args.extend(["--set", "filters=4"]);
    assert_eq!(run(dir.path(), &args).status.code(), Some(3));
}

fn overhead_rows(dir: &Path, args: &[&str]) -> Vec<Vec<String>> {
    let out = ok(dir, args);
    String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn overhead_scales_linearly() {
    let dir = tempfile::tempdir().unwrap();
    let base = overhead_rows(dir.path(), &["overhead", "--n-t", "100"]);
    assert_eq!(base.len(), 3);
    assert_eq!(base[0][6], "18109440");
    let ratios: Vec<f64> = base.iter().map(|r| r[8].parse().unwrap()).collect();
    for (r, expect) in ratios.iter().zip([6.63, 13.25, 19.88]) {
        assert!((r - expect).abs() < 0.01);
    }
    let doubled = overhead_rows(dir.path(), &["overhead", "--n-t", "100", "--rounds", "60"]);
    assert_eq!(doubled[0][6], "36218880");
    assert_eq!(doubled[0][7], base[0][7]);
    let wide = overhead_rows(dir.path(), &["overhead", "--n-t", "200"]);
    assert_eq!(wide[0][7].parse::<u64>().unwrap(), 2 * base[0][7].parse::<u64>().unwrap());
    assert_eq!(wide[0][6], base[0][6]);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["gen-data", "--set", "colour=1"],
        vec!["gen-data", "--set", "split_fraction=1.5"],
        vec!["quant-sweep", "--bits", "0..4"],
        vec!["quant-sweep", "--bits", "17"],
        vec!["train", "--mode", "gossip"],
        vec!["bogus-subcommand"],
    ] {
        assert_eq!(run(dir.path(), &args).status.code(), Some(2), "{args:?}");
    }
    std::fs::write(dir.path().join("bad.toml"), "[dataset]\nn_t = 16\n").unwrap();
    assert_eq!(run(dir.path(), &["gen-data", "--config", "bad.toml"]).status.code(), Some(2));
}

#[test]
fn archive_and_config_must_agree() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_small(&["gen-data", "--out", "a.bin"]));
    let mut args = with_small(&["train", "--data", "a.bin"]);
    args.extend(["--set", "q_classes=8"]);
    assert_eq!(run(dir.path(), &args).status.code(), Some(2));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["desk.toml", "acceptance.toml"] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = root.join(name);
        let cfg = cfg.to_str().unwrap();
        let out = run(
            dir.path(),
            &["gen-data", "--config", cfg, "--set", "n_realizations=2", "--out", "a.bin"],
        );
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn quant_sweep_labels_each_depth() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &with_small(&["gen-data", "--out", "a.bin"]));
    ok(dir.path(), &with_small(&["quant-sweep", "--data", "a.bin", "--bits", "1,4", "--out", "q.csv"]));
    let csv = std::fs::read_to_string(dir.path().join("q.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("bits,round,mode,K,"));
    assert_eq!(lines.len(), 1 + 3 * 3);
    let labels: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(labels, vec!["none", "none", "none", "1", "1", "1", "4", "4", "4"]);
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["verify", "--seeds", "3"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 3 + 6);
    assert!(!text.contains("FAIL"));
}
