use std::fs;
use std::process::{Command, Output};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sobolev-lab")).args(args).output().expect("spawn sobolev-lab")
}

fn data_rows(csv: &str) -> Vec<&str> {
    csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

#[test]
fn beta_below_gate_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin(&["--n", "3", "--beta", "3", "--out", tmp.path().to_str().unwrap(), "geometry"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("beta >= n+1"));
    assert!(fs::read_dir(tmp.path()).unwrap().next().is_none(), "nothing written on a config error");
}

#[test]
fn unknown_key_is_a_config_error() {
    let out = bin(&["--set", "colour=red", "geometry"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn geometry_writes_exact_volumes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin(&["--n", "3", "--beta", "4", "--K", "3", "--out", tmp.path().to_str().unwrap(), "geometry"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("volumes.csv")).unwrap();
    assert!(csv.starts_with("# sobolev-lab geometry\n# n=3 beta=4"));
    assert!(csv.contains("\n# generation_volume_exact: "));
    // k = 0..3 for three families
    assert_eq!(data_rows(&csv).len(), 12);
    // k = 1 for C_A: 8 cubes of side 2 r_1, total 2^3 alpha_1^3 = (17/16)^3
    assert!(data_rows(&csv).iter().any(|r| r.starts_with("1,A,8,1.199462890625,4913/2^12,4913/2^12,")), "{csv}");
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("summary_geometry.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
    assert_eq!(summary["config"]["K"], 3);
}

#[test]
fn config_file_then_flag_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "# lusin profile\nn = 3\nbeta = 4\nK = 4\n").unwrap();
    let out = bin(&["--config", cfg.to_str().unwrap(), "--K", "2", "--out", tmp.path().to_str().unwrap(), "lusin"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("lusin_report.csv")).unwrap();
    assert!(csv.contains("n=3 beta=4 p=1.5 K=2"));
    assert_eq!(data_rows(&csv).len(), 2);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("PASS upsilon_halves")), "{stdout}");
}

#[test]
fn gnuplot_companions() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin(&["--K", "2", "--gnuplot", "--out", tmp.path().to_str().unwrap(), "geometry"]);
    assert_eq!(out.status.code(), Some(0));
    let gp = fs::read_to_string(tmp.path().join("volumes.gp")).unwrap();
    assert!(gp.contains("'volumes.csv' using 1:4"));
}
