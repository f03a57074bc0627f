//! End-to-end runs of the `cwc` binary on the bundled MNIST fixture.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/mnist-5k")
}

fn cwc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cwc")).args(args).output().unwrap()
}

/// Small but real federation: 2 clients, 2 rounds, narrow network.
fn run_args<'a>(out: &'a str, data: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![
        "run",
        "--data-dir",
        data,
        "--output-dir",
        out,
        "--max-samples",
        "600",
        "--holdout-per-class",
        "10",
        "--num-clients",
        "2",
        "--rounds",
        "2",
        "--hidden",
        "16",
        "--alpha",
        "0.5",
    ];
    v.extend_from_slice(extra);
    v
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn run_writes_expected_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cwc");
    let data = fixture();
    let o = cwc(&run_args(out.to_str().unwrap(), data.to_str().unwrap(), &["--scheduler", "cwc"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("scheduler=cwc rounds_completed=2"));

    let csv = read(&out.join("run.csv"));
    let global_acc: Vec<_> = csv.lines().filter(|l| l.contains(",global,acc,")).collect();
    assert_eq!(global_acc.len(), 4);
    let epochs: Vec<&str> = global_acc.iter().map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(epochs, ["1", "2", "3", "4"]);

    let manifest = read(&out.join("manifest.txt"));
    assert!(manifest.contains("client,class,count\n1,0,"));
    assert_eq!(manifest.lines().filter(|l| l.starts_with("2,")).count(), 10);
    assert!(read(&out.join("curve.svg")).starts_with("<svg"));
}

#[test]
fn replay_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let data = fixture();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for dir in [&a, &b] {
        let o = cwc(&run_args(dir.to_str().unwrap(), data.to_str().unwrap(), &["--scheduler", "fedavg"]));
        assert!(o.status.success());
    }
    assert_eq!(fs::read(a.join("run.csv")).unwrap(), fs::read(b.join("run.csv")).unwrap());
    assert_eq!(fs::read(a.join("manifest.txt")).unwrap(), fs::read(b.join("manifest.txt")).unwrap());
}

#[test]
fn exit_codes_distinguish_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    let out = out.to_str().unwrap();

    let missing = tmp.path().join("no-such-dir");
    let o = cwc(&run_args(out, missing.to_str().unwrap(), &[]));
    assert_eq!(o.status.code(), Some(3));

    let data = fixture();
    let o = cwc(&run_args(out, data.to_str().unwrap(), &["--rounds", "0"]));
    assert_eq!(o.status.code(), Some(2));
    let o = cwc(&run_args(out, data.to_str().unwrap(), &["--no-such-key", "1"]));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));
}

#[test]
fn config_file_and_overrides_combine() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.cfg");
    fs::write(
        &cfg,
        format!(
            "# tiny run\ndata_dir = {}\nmax_samples = 300\nholdout_per_class = 5\nnum_clients = 3\nhidden = 8\nrounds = 5\n",
            fixture().display()
        ),
    )
    .unwrap();
    let out = tmp.path().join("p");
    let o = cwc(&["partition", "-c", cfg.to_str().unwrap(), "--output-dir", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = read(&out.join("manifest.txt"));
    assert!(manifest.contains("num_clients = 3"));
    assert!(manifest.contains("pool_size = 250"));
    assert!(manifest.contains("global_test_size = 50"));
    let total: usize = manifest
        .lines()
        .skip_while(|l| *l != "client,class,count")
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 250);
}

#[test]
fn zero_sigma_sweep_entry_matches_cwt_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = fixture();
    let sweep_dir = tmp.path().join("sweep");
    let cwt_dir = tmp.path().join("cwt");
    let mut argv = run_args(
        sweep_dir.to_str().unwrap(),
        data.to_str().unwrap(),
        &["--scheduler", "cwc", "--sweep-axis", "sigma", "--sweep-values", "0,0.1"],
    );
    argv[0] = "sweep";
    let o = cwc(&argv);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(stdout.starts_with("axis,value,best_acc"));
    assert_eq!(stdout.lines().count(), 3);
    let o = cwc(&run_args(cwt_dir.to_str().unwrap(), data.to_str().unwrap(), &["--scheduler", "cwt"]));
    assert!(o.status.success());

    let sweep_log = read(&sweep_dir.join("sigma_0").join("run.csv"));
    let cwt_log = read(&cwt_dir.join("run.csv"));
    assert_eq!(sweep_log, cwt_log);
    assert!(sweep_dir.join("sweep.csv").exists());
}

#[test]
fn plot_merges_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("run.csv");
    fs::write(
        &csv,
        "round,site,epoch_global,split,metric,value\n1,1,1,global,acc,0.400000\n1,2,2,global,acc,0.600000\n",
    )
    .unwrap();
    let svg = tmp.path().join("out.svg");
    let c = csv.to_str().unwrap();
    let o = cwc(&["plot", "-i", c, "-i", c, "--label", "a", "--label", "b", "-o", svg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read(&svg).matches("<polyline").count(), 2);

    fs::write(&csv, "not a csv\n").unwrap();
    let o = cwc(&["plot", "-i", c, "-o", svg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
}
