use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use odenet::trainer::TrainRun;
use odenet_lab::{EXIT_CONFIG, EXIT_FLAGGED, EXIT_NUMERICAL, EXIT_OK};

fn lab(cmd: &str, config: &str, dir: &Path, extra: &[&str]) -> (Output, PathBuf) {
    let cfg = dir.join(format!("{cmd}.toml"));
    fs::write(&cfg, config).unwrap();
    let out = dir.join(format!("out-{cmd}"));
    let output = Command::new(env!("CARGO_BIN_EXE_odenet-lab"))
        .args([cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .args(extra)
        .output()
        .unwrap();
    (output, out)
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'));
    text.lines().map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn integrate_forward_euler_compound_decay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[integrate]\nproblem = 'exp_decay'\nscheme = 'forward_euler'\ndt = 0.1\nt_end = 1.0\n";
    let (o, out) = lab("integrate", cfg, dir.path(), &[]);
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    let r = rows(&out.join("trajectory.csv"));
    assert_eq!(r[0], ["step", "t", "u_0"]);
    assert_eq!(r.len(), 12);
    let last: f64 = r[11][2].parse().unwrap();
    assert!((last - 0.9f64.powi(10)).abs() < 1e-12);
    assert!(out.join("config.resolved.toml").exists());
    assert_eq!(fs::read_to_string(out.join("VERSION")).unwrap(), format!("{}\n", odenet_lab::VERSION));
}

#[test]
fn integrate_zero_horizon_is_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[integrate]\nproblem = 'harmonic'\nscheme = 'rk4'\ndt = 0.1\nt_end = 0.0\n";
    let (o, out) = lab("integrate", cfg, dir.path(), &[]);
    assert_eq!(code(&o), EXIT_OK);
    assert_eq!(rows(&out.join("trajectory.csv")), [vec!["step", "t", "u_0", "u_1"], vec!["0", "0", "1", "0"]]);
}

#[test]
fn config_errors_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = lab("integrate", "[integrate]\nproblem = 'exp_decay'\nscheme = 'rk5'\ndt = 0.1\n", dir.path(), &[]);
    assert_eq!(code(&o), EXIT_CONFIG);
    let msg = stderr(&o);
    assert!(msg.contains("integrate.scheme") && msg.contains("forward_euler") && msg.contains("rk4"), "{msg}");

    let (o, _) = lab("integrate", "[integrate]\nproblem = 'exp_decay'\nscheme = 'rk4'\ndt = 0.1\nsteps = 4\n", dir.path(), &[]);
    assert_eq!(code(&o), EXIT_CONFIG);
    assert!(stderr(&o).contains("steps"));

    let (o, _) = lab("order", "seed = 1\n", dir.path(), &[]);
    assert_eq!(code(&o), EXIT_CONFIG);
    assert!(stderr(&o).contains("[order]"));
}

#[test]
fn integrate_overflow_names_the_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[integrate]\nproblem = 'exp_decay'\nscheme = 'forward_euler'\ndt = 1e6\nt_end = 1e9\nu0 = [1e300]\n";
    let (o, _) = lab("integrate", cfg, dir.path(), &[]);
    assert_eq!(code(&o), EXIT_NUMERICAL);
    assert!(stderr(&o).contains("at step"), "{}", stderr(&o));
}

fn slope(path: &Path) -> f64 {
    let r = rows(path);
    let s = r.iter().find(|row| row[0] == "slope").unwrap();
    s[1].parse().unwrap()
}

#[test]
fn order_reports_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let dts = "[0.0625, 0.03125, 0.015625, 0.0078125, 0.00390625, 0.001953125]";
    for (scheme, reference, expected) in
        [("forward_euler", "exact", 1.0), ("forward_euler", "modified", 2.0), ("rk4", "exact", 4.0)]
    {
        let cfg = format!("[order]\nproblem = 'exp_decay'\nscheme = '{scheme}'\nreference = '{reference}'\ndts = {dts}\n");
        let (o, out) = lab("order", &cfg, dir.path(), &[]);
        assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
        let r = rows(&out.join("order.csv"));
        assert_eq!(r[0], ["dt", "error"]);
        assert_eq!(r.len(), 1 + 6 + 2);
        assert_eq!(r[8][0], "r_squared");
        let s = slope(&out.join("order.csv"));
        assert!((s - expected).abs() < 0.15, "{scheme} vs {reference}: {s}");
    }
}

#[test]
fn order_flags_poor_fit_but_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[order]\nproblem = 'harmonic'\nscheme = 'forward_euler'\ndts = [2.0, 1.0, 0.5, 0.25]\n";
    let (o, out) = lab("order", cfg, dir.path(), &[]);
    assert_eq!(code(&o), EXIT_FLAGGED);
    assert_eq!(rows(&out.join("order.csv")).len(), 7);

    let (o, _) = lab("order", "[order]\nproblem = 'harmonic'\nscheme = 'rk4'\ndts = [0.1, 0.05, 0.025]\n", dir.path(), &[]);
    assert_eq!(code(&o), EXIT_CONFIG);
}

#[test]
fn weak_twin_sweep_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "seed = 7\n[weak]\nincrement = 'gaussian'\ncompare_with = 'two_point'\ndts = [0.5, 0.25, 0.125]\npaths = 20000\n";
    let (o, out) = lab("weak", cfg, dir.path(), &[]);
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    let r = rows(&out.join("weak.csv"));
    assert_eq!(r[0][..5], ["dt", "estimate", "ci_halfwidth", "analytic", "abs_bias"]);
    assert_eq!(r[0][8], "agree");
    for row in &r[1..4] {
        assert_eq!(row[8], "true");
    }
    assert_eq!(r[4][0], "slope");
}

#[test]
fn weak_rejects_zero_paths_and_flags_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    let (o, _) = lab("weak", "[weak]\ndts = [0.1]\npaths = 0\n", dir.path(), &[]);
    assert_eq!(code(&o), EXIT_CONFIG);
    assert!(stderr(&o).contains("weak.paths"));

    // Bias ~0.008 at dt = 0.01 is far below the half-width of 200 paths.
    let (o, out) = lab("weak", "[weak]\ndts = [0.01]\npaths = 200\n", dir.path(), &[]);
    assert_eq!(code(&o), EXIT_FLAGGED);
    assert_eq!(rows(&out.join("weak.csv"))[2], ["slope", "NA", "", "", ""]);
}

const SMALL_TRAIN: &str = "[train]\nn = 200\nkind = 'lm_resnet'\ndepth = 3\nwidth = 8\nbatch_size = 16\n";

#[test]
fn train_zero_epochs_writes_initial_row() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = lab("train", &format!("{SMALL_TRAIN}epochs = 0\n"), dir.path(), &[]);
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    let r = rows(&out.join("curves.csv"));
    assert_eq!(r.len(), 2);
    assert_eq!(r[0], ["epoch", "train_loss", "train_acc", "test_loss", "test_acc"]);
    assert_eq!(r[1][0], "0");
    assert_eq!(rows(&out.join("k.csv")).len(), 1 + 3);
}

#[test]
fn train_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{SMALL_TRAIN}epochs = 3\npolicy = 'stochastic_depth'\n");
    let (a, out_a) = lab("train", &cfg, dir.path(), &["--seed", "5"]);
    assert_eq!(code(&a), EXIT_OK, "{}", stderr(&a));
    let first: Vec<Vec<u8>> = ["run.json", "curves.csv", "k.csv", "params.ckpt", "config.resolved.toml"]
        .iter()
        .map(|f| fs::read(out_a.join(f)).unwrap())
        .collect();
    fs::remove_dir_all(&out_a).unwrap();
    let (b, out_b) = lab("train", &cfg, dir.path(), &["--seed", "5"]);
    assert_eq!(code(&b), EXIT_OK);
    for (f, bytes) in ["run.json", "curves.csv", "k.csv", "params.ckpt", "config.resolved.toml"].iter().zip(&first) {
        assert_eq!(&fs::read(out_b.join(f)).unwrap(), bytes, "{f} differs");
    }
    let run = TrainRun::from_json(&fs::read_to_string(out_b.join("run.json")).unwrap()).unwrap();
    assert_eq!(run.seed, 5);
    assert_eq!(run.k.as_ref().unwrap().len(), 3);
    assert_eq!(rows(&out_b.join("curves.csv")).len(), 1 + 4);
    let ckpt = odenet::archblocks::load_checkpoint(&out_b.join("params.ckpt")).unwrap();
    assert!(ckpt.contains("block1.k"));
}

#[test]
fn train_divergence_records_failure() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = lab("train", &format!("{SMALL_TRAIN}epochs = 5\nlr = 1e6\nmomentum = 0.0\n"), dir.path(), &[]);
    assert_eq!(code(&o), EXIT_NUMERICAL, "{}", stderr(&o));
    let run = TrainRun::from_json(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    let f = run.failure.unwrap();
    assert_eq!(run.epochs.len(), f.epoch - 1);
}

fn compare_config(second_kind: &str, second_seeds: Option<&str>) -> String {
    let seeds = second_seeds.map(|s| format!("seeds = {s}\n")).unwrap_or_default();
    format!(
        "[compare]\nseeds = [3, 1, 2]\n[compare.base]\nn = 200\ndepth = 2\nwidth = 8\nepochs = 2\n\
         [[compare.groups]]\nname = 'a'\nkind = 'resnet'\n[[compare.groups]]\nname = 'b'\nkind = '{second_kind}'\n{seeds}"
    )
}

#[test]
fn compare_identical_groups_have_zero_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = lab("compare", &compare_config("resnet", None), dir.path(), &[]);
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    let r = rows(&out.join("compare.csv"));
    assert_eq!(r[0], ["seed", "a_test_acc", "b_test_acc", "delta_b_vs_a"]);
    assert_eq!(r[1..].iter().map(|row| row[0].as_str()).collect::<Vec<_>>(), ["1", "2", "3"]);
    for row in &r[1..] {
        assert_eq!(row[3], "0");
    }
    let s = rows(&out.join("summary.csv"));
    assert_eq!(s[2][4], "0");
    assert!(out.join("runs/b/seed_2/curves.csv").exists());
    assert_eq!(rows(&out.join("k_audit.csv")).len(), 1);
}

#[test]
fn compare_lm_lists_k_audit() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = lab("compare", &compare_config("lm_resnet", None), dir.path(), &[]);
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    let k = rows(&out.join("k_audit.csv"));
    assert_eq!(k[0], ["group", "seed", "layer", "k_value", "status"]);
    assert_eq!(k.len(), 1 + 3 * 2);
    assert!(k[1..].iter().all(|row| row[0] == "b" && row[4] == "inside"));
}

#[test]
fn compare_rejects_mismatched_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let (o, out) = lab("compare", &compare_config("resnet", Some("[1, 2, 4]")), dir.path(), &[]);
    assert_eq!(code(&o), EXIT_CONFIG);
    assert!(stderr(&o).contains("compare.groups[1].seeds"), "{}", stderr(&o));
    assert!(!out.join("compare.csv").exists());
}
