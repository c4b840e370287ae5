use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn mscd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mscd"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn report_value<'a>(text: &'a str, key: &str) -> &'a str {
    let prefix = format!("{key} = ");
    text.lines()
        .find_map(|l| l.strip_prefix(prefix.as_str()))
        .unwrap_or_else(|| panic!("no `{key}` line in:\n{text}"))
}

#[test]
fn sweep_smoke_run() {
    let start = Instant::now();
    let o = mscd(&["sweep", "--trials", "100", "--alpha", "0.1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(start.elapsed() < Duration::from_secs(10));
    let csv = stdout(&o);
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("scheme,setting,L,rho,lambda,mu,alpha,beta"));
    assert_eq!(lines.count(), 1);
}

#[test]
fn sweep_is_repeatable() {
    let args = [
        "sweep",
        "--trials",
        "200",
        "--alpha",
        "0.1,0.01",
        "--set",
        "setting=[\"centralized\",\"us\"]",
    ];
    let a = mscd(&args);
    let b = mscd(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn out_file_holds_the_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("curve.csv");
    let o = mscd(&[
        "sweep",
        "--trials",
        "100",
        "--alpha",
        "0.1",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let written = std::fs::read_to_string(&path).unwrap();
    assert_eq!(written.lines().count(), 2);
    assert!(!stdout(&o).starts_with("scheme,"));
}

#[test]
fn config_errors_exit_2_and_name_the_key() {
    let o = mscd(&["sweep", "--set", "trials=5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("trials"), "{}", stderr(&o));

    let o = mscd(&["sweep", "--set", "lcsh.nonsense=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nonsense"), "{}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "rho = \"often\"\n").unwrap();
    let o = mscd(&["sweep", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rho"), "{}", stderr(&o));

    let o = mscd(&["sweep", "--config", "/nonexistent/experiment.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let o = mscd(&["dp-offline", "--set", "dp.table=\"/nonexistent/table.csv\""]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn help_lists_keys_with_defaults() {
    let o = mscd(&["--help"]);
    assert!(o.status.success());
    let help = stdout(&o);
    for key in [
        "sensors",
        "rho",
        "lambda",
        "lcsh.delta",
        "lcsh.target_rate",
        "dp.resolution",
        "dp.cost",
    ] {
        assert!(help.lines().any(|l| l.trim_start().starts_with(key)), "missing {key}");
    }
    assert!(help.contains("[default: 0.01]"));
}

#[test]
fn optimize_quantizer_reports_binary_optimum() {
    let o = mscd(&["optimize-quantizer"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let t: f64 = report_value(&out, "observation_thresholds").parse().unwrap();
    assert!((t - 0.794_100).abs() < 1e-3);
    assert_eq!(report_value(&out, "kl"), "0.318566");
}

#[test]
fn calibrate_delta_reports_rate() {
    let o = mscd(&[
        "calibrate-delta",
        "--trials",
        "200",
        "--set",
        "lcsh.rate_tol=0.1",
        "--set",
        "lambda=0.9",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let delta: f64 = report_value(&out, "delta").parse().unwrap();
    let rate: f64 = report_value(&out, "rate").parse().unwrap();
    assert!(delta > 0.0);
    assert!((rate - 1.0).abs() <= 0.1, "rate {rate}");
}

fn read_table(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn dp_offline_writes_and_reloads_table() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("table.csv");
    let o = mscd(&[
        "dp-offline",
        "--set",
        "dp.resolution=8",
        "--out",
        first.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = read_table(&first);
    assert_eq!(rows[0][..5], ["i0", "i1", "i2", "J", "A"]);
    let m = 8.0;
    for row in &rows[1..] {
        let q0 = row[0].parse::<f64>().unwrap() / m;
        let j: f64 = row[3].parse().unwrap();
        assert!((0.0..=q0 + 1e-9).contains(&j), "J {j} at q0 {q0}");
    }
    let j_vertex = report_value(&stdout(&o), "J_vertex").to_string();

    let second = dir.path().join("again.csv");
    let set = format!("dp.table=\"{}\"", first.display());
    let o = mscd(&["dp-offline", "--set", &set, "--out", second.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(read_table(&first), read_table(&second));
    assert_eq!(report_value(&stdout(&o), "J_vertex"), j_vertex);
}

#[test]
fn simulate_one_traces_slots() {
    let o = mscd(&[
        "simulate-one",
        "--set",
        "scheme=\"estimation-based\"",
        "--set",
        "setting=\"lcsh\"",
        "--set",
        "lcsh.delta=0.5",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = stdout(&o);
    let mut lines = trace.lines();
    assert_eq!(
        lines.next().unwrap(),
        "k,scheme,setting,stat,winning_chart,cusum,estimate,burst_bits,levels"
    );
    let steps = lines.count() as u64;
    let tau: u64 = report_value(&stderr(&o), "tau").parse().unwrap();
    assert_eq!(steps, tau);
}
