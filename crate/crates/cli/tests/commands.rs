mod common;

use common::{run, small_config, snapshot, COMMANDS};

#[test]
fn every_command_writes_config_and_version() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    for cmd in COMMANDS {
        let out = dir.path().join(cmd);
        let res = run(cmd, &config, &out, &[]);
        assert!(res.status.success(), "{cmd}: {}", String::from_utf8_lossy(&res.stderr));
        assert!(out.join("config.toml").is_file() && out.join("VERSION").is_file(), "{cmd}");
    }
    assert!(dir.path().join("train-score/model.json").is_file());
    assert!(dir.path().join("sample-bridge/bridge_001.csv").is_file());
    assert!(dir.path().join("simulate/path_001.csv").is_file());
    assert!(dir.path().join("align/aligned_000.csv").is_file());
}

#[test]
fn sweep_csv_has_one_row_per_grid_value() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out = dir.path().join("sweep");
    assert!(run("loglik-sweep", &config, &out, &[]).status.success());
    let mut rd = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), ["v", "loglik", "ess"]);
    let vs: Vec<f64> = rd.records().map(|r| r.unwrap()[0].parse().unwrap()).collect();
    assert_eq!(vs.len(), 5);
    assert!(vs.windows(2).all(|w| w[1] > w[0]));
    assert_eq!((vs[0], vs[4]), (0.01, 1.0));
}

#[test]
fn rerun_from_resolved_config_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    for cmd in ["loglik-sweep", "sample-bridge", "train-score"] {
        let first = dir.path().join(format!("{cmd}-1"));
        let second = dir.path().join(format!("{cmd}-2"));
        assert!(run(cmd, &config, &first, &[]).status.success());
        assert!(run(cmd, &first.join("config.toml"), &second, &[]).status.success());
        assert_eq!(snapshot(&first), snapshot(&second), "{cmd}");
    }
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let one = dir.path().join("one");
    let two = dir.path().join("two");
    assert!(run("loglik-sweep", &config, &one, &["--threads", "1"]).status.success());
    assert!(run("loglik-sweep", &config, &two, &["--threads", "3"]).status.success());
    assert_eq!(snapshot(&one), snapshot(&two));
}

#[test]
fn seed_and_mode_overrides_land_in_the_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let base = dir.path().join("base");
    let other = dir.path().join("other");
    assert!(run("loglik-sweep", &config, &base, &[]).status.success());
    assert!(run("loglik-sweep", &config, &other, &["--seed", "99", "--mode", "variance_profile"]).status.success());
    let resolved = std::fs::read_to_string(other.join("config.toml")).unwrap();
    assert!(resolved.contains("seed = 99") && resolved.contains("variance_profile"));
    assert_ne!(snapshot(&base)[std::path::Path::new("sweep.csv")], snapshot(&other)[std::path::Path::new("sweep.csv")]);
}

#[test]
fn unknown_key_fails_with_structured_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let text = std::fs::read_to_string(&config).unwrap().replace("[sweep]", "[sweep]\npoint = 3");
    std::fs::write(&config, text).unwrap();
    let res = run("loglik-sweep", &config, &dir.path().join("out"), &[]);
    assert!(!res.status.success());
    let report: serde_json::Value = serde_json::from_slice(res.stderr.trim_ascii()).unwrap();
    assert_eq!(report["error"], "config");
}

#[test]
fn missing_section_and_bad_mode_fail() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let text = std::fs::read_to_string(&config).unwrap().replace("[infer_variance]\ninit_v = 0.5", "");
    std::fs::write(&config, text).unwrap();
    assert!(!run("infer-variance", &config, &dir.path().join("a"), &[]).status.success());
    assert!(!run("loglik-sweep", &config, &dir.path().join("b"), &["--mode", "exact"]).status.success());
}

#[test]
fn diffusion_mean_trajectory_schema() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out = dir.path().join("mean");
    assert!(run("diffusion-mean", &config, &out, &[]).status.success());
    let mut rd = csv::Reader::from_path(out.join("trajectory.csv")).unwrap();
    assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), ["iteration", "loglik", "l0_d0", "l0_d1"]);
    let last: Vec<f64> = rd.records().last().unwrap().unwrap().iter().map(|c| c.parse().unwrap()).collect();
    // one landmark makes the kernel constant, so the mean is the midpoint
    assert!((last[2] - (-0.1)).abs() < 1e-3 && (last[3] - 0.4).abs() < 1e-3, "{last:?}");
}
