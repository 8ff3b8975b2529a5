//! Black-box tests of the command-line interface: exit codes, stdout
//! contracts, and config echoing.

use std::path::Path;
use std::process::{Command, Output};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rve-manifold"))
        .args(args)
        .output()
        .expect("spawn CLI")
}

fn gen_small(dir: &Path) {
    let out = cli(&[
        "gen-data",
        "--n",
        "12",
        "--mesh-n",
        "16",
        "--rve-size",
        "125",
        "--seed",
        "3",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn mesh_too_coarse_is_a_config_error() {
    // h = 1000/8 = 125 > l/2 = 20.
    let tmp = tempfile::tempdir().unwrap();
    let out = cli(&[
        "gen-data",
        "--n",
        "4",
        "--mesh-n",
        "8",
        "--rve-size",
        "500",
        "--out",
        tmp.path().join("d").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("error:"), "stderr: {msg}");
}

#[test]
fn missing_dataset_is_a_format_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cli(&[
        "train",
        "--data",
        tmp.path().join("nope").to_str().unwrap(),
        "--k1",
        "4",
        "--dims",
        "2",
        "--out",
        tmp.path().join("m").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn unknown_flag_is_rejected() {
    let out = cli(&["gen-data", "--does-not-exist", "1"]);
    assert!(!out.status.success());
}

#[test]
fn corrupted_dataset_is_a_format_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data);
    let xpath = data.join("X.f64");
    let mut bytes = std::fs::read(&xpath).unwrap();
    bytes[3] ^= 0xff;
    std::fs::write(&xpath, &bytes).unwrap();
    let out = cli(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--k1",
        "4",
        "--dims",
        "2",
        "--out",
        tmp.path().join("m").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
}

#[test]
fn reconstruct_training_point_prints_reconstruct_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data);

    let model = tmp.path().join("model");
    let out = cli(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--k1",
        "4",
        "--dims",
        "3",
        "--out",
        model.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(model.join("manifest.json").exists());
    assert!(model.join("embedding_2d.csv").exists());
    assert!(model.join("config.json").exists());

    let report = tmp.path().join("gate");
    let out = cli(&[
        "reconstruct",
        "--model",
        model.to_str().unwrap(),
        "--train",
        data.to_str().unwrap(),
        "--inputs",
        data.to_str().unwrap(),
        "--k2",
        "4",
        "--tau",
        "0.5",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 12, "one line per input: {stdout}");
    for line in &lines {
        // Training points lie on the manifold: distance 0, accepted.
        assert!(line.contains("distance=0"), "line: {line}");
        assert!(line.contains("verdict=Reconstruct"), "line: {line}");
    }
    assert!(report.join("gate_report.csv").exists());
}

#[test]
fn config_is_echoed_into_output_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen_small(&data);
    let text = std::fs::read_to_string(data.join("config.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let args = &v["gen_data"];
    assert_eq!(args["n"], 12);
    assert_eq!(args["mesh_n"], 16);
    assert_eq!(args["seed"], 3);
}
