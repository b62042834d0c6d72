//! Black-box tests of the binary: exit codes, artifact round trips, and
//! run-to-run determinism of outputs.

use std::path::Path;
use std::process::{Command, Output};

fn gsqt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gsqt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&gsqt(&["--help"])), 0);
    assert_eq!(code(&gsqt(&["--version"])), 0);
    assert_eq!(code(&gsqt(&["train", "--help"])), 0);
}

#[test]
fn usage_problems_exit_one() {
    assert_eq!(code(&gsqt(&["--bogus"])), 1);
    assert_eq!(code(&gsqt(&[])), 1);
    assert_eq!(code(&gsqt(&["quantize", "--out", "/tmp/x.gseb"])), 1);
    assert_eq!(code(&gsqt(&["train", "--notation", "3-9-9", "--steps", "1"])), 1);
}

#[test]
fn config_file_problems_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");

    std::fs::write(&bad, "{").unwrap();
    assert_eq!(code(&gsqt(&["train", "--config", bad.to_str().unwrap()])), 1);

    // Unknown fields are rejected, not ignored.
    std::fs::write(&bad, r#"{"mystery_field": 1}"#).unwrap();
    assert_eq!(code(&gsqt(&["train", "--config", bad.to_str().unwrap()])), 1);

    let missing = dir.path().join("absent.json");
    assert_eq!(
        code(&gsqt(&["train", "--config", missing.to_str().unwrap()])),
        1
    );
}

#[test]
fn runtime_problems_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.gsqt");
    // Input file does not exist.
    assert_eq!(
        code(&gsqt(&[
            "dequantize",
            "--input",
            dir.path().join("no.gseb").to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ])),
        2
    );
    // Input file is garbage.
    let junk = dir.path().join("junk.gseb");
    std::fs::write(&junk, b"not a tensor").unwrap();
    assert_eq!(
        code(&gsqt(&[
            "dequantize",
            "--input",
            junk.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ])),
        2
    );
}

#[test]
fn quantize_dequantize_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let packed = dir.path().join("t.gseb");
    let dense = dir.path().join("m.gsqt");
    let out = gsqt(&[
        "quantize",
        "--random",
        "16x40",
        "--seed",
        "7",
        "--bits",
        "8",
        "--group-size",
        "8",
        "--out",
        packed.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("packed 16x40"));

    let out = gsqt(&[
        "dequantize",
        "--input",
        packed.to_str().unwrap(),
        "--out",
        dense.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);

    // Decoded data re-quantizes exactly: measuring it under the same
    // format reports an infinite signal-to-noise ratio.
    let out = gsqt(&[
        "formats-compare",
        "--input",
        dense.to_str().unwrap(),
        "--group-size",
        "8",
    ]);
    assert_eq!(code(&out), 0);
    let line = stdout(&out)
        .lines()
        .find(|l| l.starts_with("input,gse-int8,"))
        .expect("int8 row present")
        .to_string();
    assert!(line.ends_with(",inf,0.000e0"), "{line}");
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn train_artifact_is_deterministic_modulo_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let run = gsqt(&[
            "train",
            "--notation",
            "4-5-6",
            "--rank",
            "3",
            "--steps",
            "25",
            "--seed",
            "11",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    }
    let mut ja = read_json(&a);
    let mut jb = read_json(&b);
    assert_eq!(ja["notation"], "4-5-6");
    assert!(ja["wall_ms"].is_u64());
    ja["wall_ms"] = 0.into();
    jb["wall_ms"] = 0.into();
    assert_eq!(ja, jb);
}

#[test]
fn train_config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        r#"{
            "config": {"act_bits": 6, "grad_bits": 6, "adapter_bits": 6,
                       "group_size": 16, "rank": 2},
            "task": {"kind": "low_rank_regression", "in_features": 8,
                     "out_features": 8},
            "seed": 1, "steps": 30, "batch_size": 8, "lr": 0.01
        }"#,
    )
    .unwrap();
    let artifact = dir.path().join("run_out.json");
    let out = gsqt(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--steps",
        "5",
        "--out",
        artifact.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run = read_json(&artifact);
    assert_eq!(run["params"]["steps"], 5);
    assert_eq!(run["params"]["config"]["act_bits"], 6);
    assert_eq!(run["steps"].as_array().unwrap().len(), 5);
}

#[test]
fn sweep_csv_has_the_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("sweep.csv");
    let out = gsqt(&[
        "sweep",
        "--bits",
        "5,8",
        "--ranks",
        "2",
        "--seeds",
        "2",
        "--steps",
        "10",
        "--features",
        "8",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "bits,rank,group,seed,final_loss,memory_bytes,dominated,wall_ms"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 4, "2 bits x 1 rank x 2 seeds");
    for row in rows {
        assert_eq!(row.split(',').count(), 8, "{row}");
    }
}

#[test]
fn gradcheck_identity_passes_and_reports() {
    let out = gsqt(&["gradcheck", "--seeds", "3"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("OK"));
}

#[test]
fn mem_json_includes_both_estimates() {
    let out = gsqt(&["mem", "--bits", "5", "--rank", "64", "--json"]);
    assert_eq!(code(&out), 0);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(doc["quantized"]["total_bytes"].as_u64().unwrap() > 0);
    assert!(
        doc["dense_f16"]["total_bytes"].as_u64().unwrap()
            > doc["quantized"]["total_bytes"].as_u64().unwrap()
    );
    let ratio = doc["dense_over_quantized"].as_f64().unwrap();
    assert!(ratio > 1.0 && ratio < 3.0, "{ratio}");
}

#[test]
fn workers_env_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_gsqt"))
        .args(["mem"])
        .env("GSQT_WORKERS", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(out.status.code().unwrap(), 1);
}

#[test]
fn quantize_reports_round_trip_error() {
    let dir = tempfile::tempdir().unwrap();
    let packed = dir.path().join("r.gseb");
    let out = gsqt(&[
        "quantize", "--random", "16x32", "--bits", "6", "--out",
        packed.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let line = text
        .lines()
        .find(|l| l.starts_with("round trip:"))
        .expect("error stats reported");
    assert!(line.contains("max abs error"), "{line}");
    assert!(line.contains("mean abs error"), "{line}");
}

#[test]
fn formats_compare_flags_all_zero_input_instead_of_failing() {
    let dir = tempfile::tempdir().unwrap();
    let zeros = dir.path().join("zeros.gsqt");
    gsqt::io::write_mat_file(&zeros, &gsqt::Mat::zeros(4, 64), gsqt::io::Dtype::F64).unwrap();
    let out = gsqt(&["formats-compare", "--input", zeros.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let err = String::from_utf8_lossy(&out.stderr).to_string();
    assert!(err.contains("all zero"), "{err}");
    // Exact reconstruction everywhere: infinite SQNR, zero max error.
    for line in stdout(&out).lines().skip(1) {
        assert!(line.contains(",inf,0.000e0"), "{line}");
    }
}

#[test]
fn formats_compare_json_covers_every_format_and_locality_is_optional() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("formats.json");
    let out = gsqt(&[
        "formats-compare", "--len", "256", "--json",
        "--locality-threshold", "0.5",
        "--out", report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc = read_json(&report);
    assert_eq!(doc["config"]["len"], 256);
    let cases = doc["cases"].as_array().unwrap();
    assert!(!cases.is_empty());
    for case in cases {
        let formats = case["formats"].as_array().unwrap();
        let names: Vec<&str> = formats
            .iter()
            .map(|f| f["format"].as_str().unwrap())
            .collect();
        for expect in [
            "gse-int5", "gse-int6", "gse-int7", "gse-int8",
            "fp8-e4m3", "fp8-e5m2", "fp7-e3m3", "fp6-e3m2",
            "uniform-int8", "nf4",
        ] {
            assert!(names.contains(&expect), "missing {expect}");
        }
    }
    // The locality table lands on stdout when no file is given for it.
    let text = stdout(&out);
    assert!(text.contains("case,groups,mean_group_std,fraction_below"), "{text}");
}

#[test]
fn single_point_sweep_writes_one_row_and_plot_and_meta() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("sweep.csv");
    let plot_path = dir.path().join("plot.csv");
    let meta_path = dir.path().join("meta.json");
    let out = gsqt(&[
        "sweep", "--bits", "6", "--ranks", "4", "--seeds", "1",
        "--steps", "8", "--features", "8",
        "--out", csv_path.to_str().unwrap(),
        "--plot", plot_path.to_str().unwrap(),
        "--meta", meta_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(csv.lines().count(), 2, "header plus exactly one data row");

    let plot = std::fs::read_to_string(&plot_path).unwrap();
    let mut lines = plot.lines();
    assert_eq!(
        lines.next().unwrap(),
        "memory_bytes,mean_final_loss,bits,rank,dominated"
    );
    let row = lines.next().unwrap();
    assert!(row.ends_with(",6,4,false"), "single point is undominated: {row}");
    assert!(lines.next().is_none());

    let meta = read_json(&meta_path);
    assert_eq!(meta["grid"]["bits"], serde_json::json!([6]));
    assert_eq!(meta["grid"]["base"]["steps"], 8);
    assert_eq!(meta["cells"].as_array().unwrap().len(), 1);
    assert_eq!(meta["cells"][0]["dominated"], false);
}

#[test]
fn curve_file_puts_the_plotted_series_first() {
    let dir = tempfile::tempdir().unwrap();
    let curve = dir.path().join("curve.csv");
    let out = gsqt(&[
        "train", "--steps", "3", "--features", "8",
        "--curve", curve.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&curve).unwrap();
    assert_eq!(text.lines().next().unwrap(), "step,loss,lr");
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn gradcheck_and_mem_accept_config_files_and_write_reports() {
    let dir = tempfile::tempdir().unwrap();

    let gc_config = dir.path().join("gc.json");
    std::fs::write(&gc_config, r#"{"mode": "quantized", "seeds": 2, "bits": [8]}"#).unwrap();
    let gc_report = dir.path().join("gc_report.json");
    let out = gsqt(&[
        "gradcheck",
        "--config", gc_config.to_str().unwrap(),
        "--out", gc_report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("bits,mean_rel_error"));
    let report = read_json(&gc_report);
    assert_eq!(report["config"]["mode"], "quantized");
    assert_eq!(report["rows"].as_array().unwrap().len(), 1);
    assert!(report["rows"][0]["mean_rel_error"].as_f64().unwrap() > 0.0);

    let mem_config = dir.path().join("mem.json");
    std::fs::write(&mem_config, r#"{"rank": 16, "accounting": "per-module"}"#).unwrap();
    let mem_report = dir.path().join("mem_report.json");
    let out = gsqt(&[
        "mem",
        "--config", mem_config.to_str().unwrap(),
        "--rank", "64",
        "--out", mem_report.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&mem_report);
    // The flag overrides the file; the echoed config shows the winner.
    assert_eq!(report["config"]["rank"], 64);
    assert_eq!(report["config"]["accounting"], "per-module");
    assert!(report["dense_over_quantized"].as_f64().unwrap() > 1.0);
}
