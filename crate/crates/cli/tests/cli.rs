// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn scmmi(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scmmi"))
        .args(args)
        .current_dir(dir)
        .env_remove("MMI_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn short_config(dir: &Path, seconds: f64) -> String {
    let path = dir.join("short.cfg");
    fs::write(&path, format!("[simulation]\nduration = {seconds}\n")).unwrap();
    path.to_string_lossy().into_owned()
}

fn header(csv: &Path) -> Vec<String> {
    let text = fs::read_to_string(csv).unwrap();
    text.lines().next().unwrap().split(',').map(str::to_string).collect()
}

#[test]
fn design_five_level() {
    let dir = tempfile::tempdir().unwrap();
    let o = scmmi(&["design", "--levels", "5", "--phases", "3", "--vdc", "600"], dir.path());
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("7 switches, 2 capacitors"), "{out}");
    assert!(out.contains("levels: -400 -200 0 200 400 V"), "{out}");
    assert!(out.contains("boost: no"));
    assert!(out.contains("    2    +   0  1  1  0  1  0  0"), "{out}");
}

#[test]
fn design_three_level_and_boost() {
    let dir = tempfile::tempdir().unwrap();
    let o = scmmi(&["design", "--levels", "3", "--phases", "1", "--vdc", "100"], dir.path());
    let out = stdout(&o);
    assert!(out.contains("4 switches, 1 capacitor\n"), "{out}");
    assert!(out.contains("boost: no"));
    let o = scmmi(&["design", "--levels", "9", "--phases", "3", "--vdc", "300"], dir.path());
    assert!(stdout(&o).contains("boost: yes"));
}

#[test]
fn design_state_census() {
    let dir = tempfile::tempdir().unwrap();
    let o = scmmi(&["design", "--levels", "5", "--phases", "3", "--vdc", "600", "--states"], dir.path());
    assert!(stdout(&o).contains("128 raw vectors: 6 legal"));
}

#[test]
fn design_rejects_even_levels() {
    let dir = tempfile::tempdir().unwrap();
    let o = scmmi(&["design", "--levels", "4", "--phases", "3", "--vdc", "600"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("invalid level count 4"));
}

#[test]
fn simulate_preset_channels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 0.02);
    let o = scmmi(&["simulate", "--scenario", "five-level-steady", "--config", &cfg, "--out", "five.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = stdout(&o);
    assert!(summary.contains("20000 steps") && summary.contains("rebuilds") && summary.contains("energy residual"));
    let cols = header(&dir.path().join("five.csv"));
    assert_eq!(cols[0], "time_s");
    for want in ["V_1_V", "V_2_V", "V_3_V", "V_C11_V", "V_C32_V", "I_C11_A", "I_C32_A"] {
        assert!(cols.iter().any(|c| c == want), "missing {want}");
    }
}

#[test]
fn perturbation_starts_high() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 0.005);
    let o = scmmi(&["simulate", "--scenario", "perturbation", "--config", &cfg, "--out", "p.csv"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("p.csv")).unwrap();
    let cols: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let first: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    for name in ["V_C11_V", "V_C12_V"] {
        let k = cols.iter().position(|c| *c == name).unwrap();
        assert!((first[k] - 300.0).abs() < 1.0, "{name} = {}", first[k]);
    }
}

#[test]
fn simulate_is_deterministic_under_thread_caps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 0.01);
    let run = |threads: &str, out: &str| {
        Command::new(env!("CARGO_BIN_EXE_scmmi"))
            .args(["simulate", "--config", &cfg, "--out", out])
            .current_dir(dir.path())
            .env("MMI_THREADS", threads)
            .output()
            .unwrap()
    };
    assert!(run("1", "a.csv").status.success());
    assert!(run("4", "b.csv").status.success());
    assert_eq!(fs::read(dir.path().join("a.csv")).unwrap(), fs::read(dir.path().join("b.csv")).unwrap());
    assert_eq!(run("zero", "c.csv").status.code(), Some(2));
}

#[test]
fn all_scenarios_writes_every_preset() {
    let dir = tempfile::tempdir().unwrap();
    let o = scmmi(&["simulate", "--all-scenarios", "--out", "runs"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    for name in ["five-level-steady", "seven-level-steady", "perturbation", "imbalanced-load"] {
        assert!(dir.path().join("runs").join(format!("{name}.csv")).exists());
        assert!(out.contains(name));
    }
    assert!(!out.contains("miss"), "{out}");
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = scmmi(&["simulate", "--config", "missing.cfg", "--out", "x.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.cfg"));

    fs::write(dir.path().join("bad.cfg"), "[system]\nv_dc = abc\n").unwrap();
    let o = scmmi(&["simulate", "--config", "bad.cfg", "--out", "x.csv"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2"));
}

#[test]
fn solver_errors_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("neg.cfg"), "[simulation]\nduration = 0.01\nperturb_phase = 1\nperturb_delta_v = -500\n")
        .unwrap();
    let o = scmmi(&["simulate", "--config", "neg.cfg", "--out", "x.csv"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("perturbation"));
}

#[test]
fn analyze_constant_channel() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("time_s,V_C11_V\n");
    for k in 0..4000 {
        csv.push_str(&format!("{:.9},200.000000\n", k as f64 * 1e-5));
    }
    fs::write(dir.path().join("c.csv"), csv).unwrap();
    let o = scmmi(&["analyze", "c.csv", "--fundamental-f", "50", "--report", "r.json"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    let ch = &report["channels"][0];
    assert_eq!(ch["ripple"]["value"].as_f64(), Some(0.0));
    assert_eq!(ch["ripple_percent"]["unit"].as_str(), Some("%"));
    assert_eq!(ch["levels"].as_array().unwrap().len(), 1);
    assert_eq!(ch["mean"]["unit"].as_str(), Some("V"));
}

#[test]
fn analyze_round_trip_with_plots() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 0.06);
    let o = scmmi(&["simulate", "--scenario", "five-level-steady", "--config", &cfg, "--out", "f.csv"], dir.path());
    assert!(o.status.success());
    let o = scmmi(&["analyze", "f.csv", "--fundamental-f", "50", "--plot", "plots"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let mean = report["channels"].as_array().unwrap().iter().find(|c| c["channel"] == "V_C11").unwrap()["mean"]
        ["value"]
        .as_f64()
        .unwrap();
    assert!((mean - 200.0).abs() < 4.0, "mean {mean}");
    assert!(report["phases"][0]["thd"]["value"].as_f64().unwrap() > 0.0);
    for svg in ["phase_voltages.svg", "capacitor_voltages.svg", "spectrum.svg"] {
        let text = fs::read_to_string(dir.path().join("plots").join(svg)).unwrap();
        assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"), "{svg}");
    }
}

#[test]
fn analyze_errors_exit_four() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("m.csv"), "time_s,V_1_V\n0.0,1\n0.1,zz\n").unwrap();
    let o = scmmi(&["analyze", "m.csv", "--fundamental-f", "50"], dir.path());
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("row 3"));
    let o = scmmi(&["analyze", "nope.csv", "--fundamental-f", "50"], dir.path());
    assert_eq!(o.status.code(), Some(4));
}
