use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rpu_core::dataset::Dataset;
use rpu_harness::config::RunConfig;
use rpu_harness::experiments::{load_data, merged_csv, run_sweep, sweep_points, train_run, SweepKind};
use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_rpu");

/// Tiny 4x4 digit set: class `k` lights pixel `k` on top of dim noise.
fn write_toy_mnist(dir: &Path) {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let mut make = |n: usize| {
        let labels: Vec<u8> = (0..n).map(|k| (k % 10) as u8).collect();
        let mut pixels = Vec::with_capacity(n * 16);
        for &l in &labels {
            for p in 0..16 {
                pixels.push(if p == l as usize { 230 } else { r.gen_range(0..60) });
            }
        }
        Dataset::from_raw(4, 4, pixels, labels)
    };
    make(300).write_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte")).unwrap();
    make(100).write_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte")).unwrap();
}

fn toy_overrides(data: &Path) -> Vec<String> {
    vec![
        format!("data.dir={}", serde_json::Value::String(data.display().to_string())),
        "network.layer_sizes=[16,12,10]".into(),
        "train.epochs=3".into(),
        "train.base_lr=0.1".into(),
        "train.lr_drop_epochs=[1,2]".into(),
    ]
}

fn rpu(args: &[&str], sets: &[String]) -> std::process::Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args);
    for s in sets {
        cmd.arg("--set").arg(s);
    }
    cmd.output().unwrap()
}

#[test]
fn characterize_passes_check_and_prints_every_row() {
    let out = tempfile::tempdir().unwrap();
    let o = rpu(&["characterize", "--check", "--out", out.path().to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    for row in ["Storage capacity", "Update pulse duration", "Average device resistance", "On/off ratio", "Up/down symmetry"] {
        assert!(text.lines().any(|l| l.starts_with(row) && l.ends_with("pass")), "{row} missing or failing:\n{text}");
    }
    assert!(text.lines().any(|l| l.starts_with("Device area") && l.contains("not modeled")));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("characterize.json")).unwrap()).unwrap();
    assert_eq!(json["report"]["levels"], 1000);
}

#[test]
fn characterize_flags_soft_knee_and_slow_pulses() {
    let out = tempfile::tempdir().unwrap();
    let o = rpu(&["characterize", "--check", "--out", out.path().to_str().unwrap()], &["curve.v_knee=0.12".into()]);
    assert_eq!(o.status.code(), Some(3));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("Up/down symmetry") && l.ends_with("FAIL")), "{text}");

    let o = rpu(&["characterize", "--out", out.path().to_str().unwrap()], &["cell.t_pulse=2e-9".into()]);
    assert_eq!(o.status.code(), Some(0), "without --check thresholds do not set the status");
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("Update pulse duration") && l.ends_with("FAIL")), "{text}");
}

#[test]
fn pulse_sweep_trace_and_drift() {
    let out = tempfile::tempdir().unwrap();
    let dir = out.path().to_str().unwrap();
    let o = rpu(&["pulse-sweep", "--check", "--out", dir], &["curve.kind=flat".into()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.path().join("pulse-sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("pulse_index,v_cap,i_read"));
    let params = rpu_core::CellParams::default();
    let mut n = 0;
    for line in lines {
        let f: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
        let want = params.read_current(f[1], 0.1).unwrap();
        assert!((f[2] - want).abs() <= 1e-15 * want.abs().max(1e-20));
        n += 1;
    }
    assert_eq!(n, 20_001);

    // The knee curve walks toward the center, so the drift check fails.
    let o = rpu(&["pulse-sweep", "--check", "--out", dir], &[]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn exit_codes_for_config_and_io_errors() {
    let o = rpu(&["characterize"], &["leak.no_such_key=1".into()]);
    assert_eq!(o.status.code(), Some(1));
    let o = rpu(&["config", "--config", "/nonexistent/run.json"], &[]);
    assert_eq!(o.status.code(), Some(2));
    let out = tempfile::tempdir().unwrap();
    let o = rpu(
        &["train", "--out", out.path().to_str().unwrap()],
        &["data.dir=\"/nonexistent/mnist\"".into()],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_writes_run_directory_and_echo_reproduces_it() {
    let data = tempfile::tempdir().unwrap();
    write_toy_mnist(data.path());
    let out = tempfile::tempdir().unwrap();
    let mut sets = toy_overrides(data.path());
    sets.push("data.train_subset=null".into());
    let o = rpu(&["train", "--mode", "analog", "--case", "b", "--tau", "1e5", "--seed", "4", "--out", out.path().to_str().unwrap()], &sets);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let run = out.path().join("s4-analog-B-tau1e5");
    for f in ["config.json", "metrics.csv", "summary.json", "weights.rpuw"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,lr,train_error_pct,test_error_pct,saturation_events,clip_events,wall_ms\n"));
    assert_eq!(metrics.lines().count(), 4);

    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["seed"], 4);
    assert_eq!(summary["config"]["leak"]["tau"], 1e5);
    assert_eq!(summary["dataset"]["files"].as_array().unwrap().len(), 4);
    assert_eq!(summary["dataset"]["files"][0]["sha256"].as_str().unwrap().len(), 64);

    let layers = rpu_core::checkpoint::read_checkpoint(std::fs::File::open(run.join("weights.rpuw")).unwrap()).unwrap();
    assert_eq!(layers.iter().map(|l| (l.rows, l.cols)).collect::<Vec<_>>(), vec![(17, 12), (13, 10)]);

    // Re-running from the echoed config alone reproduces the metrics.
    let again = tempfile::tempdir().unwrap();
    let o = rpu(
        &["train", "--config", run.join("config.json").to_str().unwrap(), "--out", again.path().to_str().unwrap()],
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rerun = std::fs::read(again.path().join("s4-analog-B-tau1e5").join("metrics.csv")).unwrap();
    assert_eq!(rerun, metrics.into_bytes());
}

#[test]
fn sweep_results_do_not_depend_on_parallelism() {
    let data = tempfile::tempdir().unwrap();
    write_toy_mnist(data.path());
    let mut sets = toy_overrides(data.path());
    sets.push("sweep.with_variation=true".into());
    sets.push("sweep.taus=[1e3, \"inf\"]".into());
    sets.push("sweep.variation_taus=[1e3]".into());
    let cfg = RunConfig::default().with_overrides(&sets).unwrap();
    let data = load_data(&cfg).unwrap();

    let mut points = sweep_points(&cfg, SweepKind::Retention);
    let serial = run_sweep(&points, &data, None, 1, |_| {}).unwrap();
    points.reverse();
    let parallel = run_sweep(&points, &data, None, 3, |_| {}).unwrap();
    assert_eq!(merged_csv(&serial), merged_csv(&parallel));
    let ids: Vec<&str> = serial.iter().map(|r| r.run_id.as_str()).collect();
    assert_eq!(ids, ["s1-analog-B-tau1e3", "s1-analog-B-tau1e3-var30", "s1-analog-B-tauinf"]);

    // A sweep point run on its own matches its sweep result.
    let alone = train_run(&points[0], &data, None, |_| {}).unwrap();
    let in_sweep = serial.iter().find(|r| r.run_id == alone.run_id).unwrap();
    assert_eq!(alone.metrics_csv, in_sweep.metrics_csv);
}

#[test]
fn sweep_command_writes_merged_csv() {
    let data = tempfile::tempdir().unwrap();
    write_toy_mnist(data.path());
    let out = tempfile::tempdir().unwrap();
    let o = rpu(&["sweep", "asymmetry", "--jobs", "2", "--out", out.path().to_str().unwrap()], &toy_overrides(data.path()));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.path().join("sweep-asymmetry.csv")).unwrap();
    let ids: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ids.len(), 12);
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);
    for id in ["s1-fp", "s1-analog-A-tauinf", "s1-analog-B-tauinf", "s1-analog-C-tauinf"] {
        assert!(out.path().join(id).join("metrics.csv").is_file());
    }
}
