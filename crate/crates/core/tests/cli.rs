use std::path::Path;
use std::process::{Command, Output};

fn mimcap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mimcap")).args(args).output().unwrap()
}

fn mimcap_in(dir: &Path, args: &[&str]) -> Output {
    let mut full: Vec<&str> = args.to_vec();
    let out = dir.to_str().unwrap();
    full.extend(["--out", out]);
    mimcap(&full)
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(mimcap(&[]).status.code(), Some(2));
    assert_eq!(mimcap(&["frobnicate"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    // missing seed
    assert_eq!(mimcap_in(dir.path(), &["estimate", "--d", "2", "--snr-db", "0"]).status.code(), Some(2));
    // unknown setting
    let out = mimcap_in(dir.path(), &["estimate", "--seed", "1", "--d", "2", "--snr-db", "0", "--set", "bogus=1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
    // unknown estimator
    let out = mimcap_in(dir.path(), &["estimate", "--seed", "1", "--d", "2", "--snr-db", "0", "--est", "magic"]);
    assert_eq!(out.status.code(), Some(2));
    // M not a power of two
    let out = mimcap_in(dir.path(), &["capacity", "--seed", "1", "--M", "6", "--snr-db", "5"]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn help_and_version_exit_0() {
    assert_eq!(mimcap(&["--help"]).status.code(), Some(0));
    assert_eq!(mimcap(&["--version"]).status.code(), Some(0));
    assert_eq!(mimcap(&["capacity", "--help"]).status.code(), Some(0));
}

#[test]
fn estimate_recovers_ln_2_at_0_db() {
    let dir = tempfile::tempdir().unwrap();
    let out = mimcap_in(
        dir.path(),
        &[
            "estimate", "--seed", "9", "--est", "mmie", "--d", "2", "--snr-db", "0",
            "--set", "train_iterations=1500", "--set", "n_test_batches=10",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("estimate.csv")).unwrap();
    assert!(csv.starts_with("# mimcap "));
    for key in ["# command: estimate", "# config_hash: ", "# seed: 9"] {
        assert!(csv.contains(key), "{key} missing from\n{csv}");
    }
    let rows = data_lines(&csv);
    assert_eq!(rows[0], mimcap::benchmark::REPORT_HEADER);
    let mean: f64 = rows[1].split(',').nth(4).unwrap().parse().unwrap();
    assert!((mean - 2f64.ln()).abs() < 0.2, "{mean}");
}

#[test]
fn benchmark_grid_and_bits() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "benchmark", "--seed", "2", "--est", "ksg", "--d", "1,2", "--snr-db", "0,10",
        "--set", "n_estimators=1", "--set", "n_test_batches=2", "--set", "batch_size=128",
    ];
    let out = mimcap_in(dir.path(), &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let nats = std::fs::read_to_string(dir.path().join("benchmark.csv")).unwrap();
    assert_eq!(data_lines(&nats).len(), 1 + 4);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("benchmark.json")).unwrap()).unwrap();
    assert_eq!(json["meta"]["seed"], 2);
    assert_eq!(json["cells"].as_array().unwrap().len(), 4);

    let bits_dir = tempfile::tempdir().unwrap();
    let mut bits_args = args.to_vec();
    bits_args.push("--bits");
    assert!(mimcap_in(bits_dir.path(), &bits_args).status.success());
    let bits = std::fs::read_to_string(bits_dir.path().join("benchmark.csv")).unwrap();
    assert!(bits.contains("# units: bits"));
    let mean_of = |text: &str| -> f64 { data_lines(text)[1].split(',').nth(4).unwrap().parse().unwrap() };
    assert!((mean_of(&bits) - mean_of(&nats) / 2f64.ln()).abs() < 1e-9);
}

#[test]
fn capacity_writes_eight_point_codebook() {
    let dir = tempfile::tempdir().unwrap();
    let out = mimcap_in(
        dir.path(),
        &[
            "capacity", "--seed", "3", "--mode", "discrete", "--M", "8", "--snr-db", "10",
            "--set", "total_disc_iters=100", "--set", "disc_iters_per_gen_iter=5",
            "--set", "batch_size=128", "--set", "n_mc=10000", "--set", "final_window=10",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let book = std::fs::read_to_string(dir.path().join("codebook.csv")).unwrap();
    let rows = data_lines(&book);
    assert_eq!(rows.len(), 1 + 8, "{book}");
    let codebook = mimcap::channels::Codebook::from_csv(&book).unwrap();
    assert_eq!((codebook.len(), codebook.dim()), (8, 2));

    let result: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("result.json")).unwrap()).unwrap();
    let mi = result["result"]["supportive_estimate"].as_f64().unwrap();
    assert!((0.0..=8f64.ln()).contains(&mi), "{mi}");
    let traj = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(data_lines(&traj)[0], mimcap::capacity::TRAJECTORY_HEADER);
}

#[test]
fn config_file_and_set_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# ksg run\nest = ksg\nd = 1\nsnr_db = 0\nseed = 5\nn_test_batches = 2\nbatch_size = 100\n").unwrap();
    let cfg = cfg.to_str().unwrap();
    let a = tempfile::tempdir().unwrap();
    assert!(mimcap_in(a.path(), &["estimate", "--config", cfg]).status.success());
    let b = tempfile::tempdir().unwrap();
    assert!(mimcap_in(b.path(), &["estimate", "--config", cfg, "--set", "d=2", "--seed", "6"]).status.success());
    let read = |p: &Path| std::fs::read_to_string(p.join("estimate.csv")).unwrap();
    let (ra, rb) = (read(a.path()), read(b.path()));
    assert!(ra.contains("# seed: 5") && rb.contains("# seed: 6"));
    assert!(data_lines(&ra)[1].starts_with("ksg(k=3),1,"));
    assert!(data_lines(&rb)[1].starts_with("ksg(k=3),2,"));
}
