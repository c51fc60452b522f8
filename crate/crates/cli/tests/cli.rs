use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn modelrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modelrec")).args(args).env("SOURCE_DATE_EPOCH", "1700000000").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = modelrec(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fails_with(args: &[&str], code: i32) -> String {
    let out = modelrec(args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stderr).unwrap()
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas/v1").join(name);
    let schema: Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    jsonschema::validator_for(&schema).unwrap()
}

fn assert_valid(schema_name: &str, file: &Path) {
    let doc: Value = serde_json::from_str(&fs::read_to_string(file).unwrap()).unwrap();
    let v = schema(schema_name);
    let errors: Vec<String> = v.iter_errors(&doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{} against {schema_name}: {errors:?}", file.display());
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn lv_data(dir: &Path) -> PathBuf {
    let csv = dir.join("lv.csv");
    ok(&["generate", "--system", "lotka_volterra", "--y0", "1,1", "--steps", "200", "--out", p(&csv)]);
    csv
}

#[test]
fn generate_lorenz_shape_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("lorenz.csv");
    ok(&["generate", "--system", "lorenz", "--steps", "1000", "--sigma", "0", "--out", p(&csv)]);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 1001);
    assert_eq!(lines[0], "t,y1,y2,y3");
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 4));
    let manifest = dir.path().join("lorenz.csv.manifest.json");
    assert_valid("manifest.schema.json", &manifest);
}

#[test]
fn generate_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        ok(&["generate", "--system", "lotka_volterra", "--sigma", "0.05", "--seed", seed, "--out", p(&out)]);
        fs::read(&out).unwrap()
    };
    assert_eq!(run("a.csv", "3"), run("b.csv", "3"));
    assert_ne!(run("a.csv", "3"), run("c.csv", "4"));
}

#[test]
fn generate_rejects_bad_arguments() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let err = fails_with(&["generate", "--system", "lorenz", "--sigma", "-1", "--out", p(&out)], 2);
    assert!(err.contains("sigma"), "{err}");
    let err = fails_with(&["generate", "--system", "no_such_system", "--out", p(&out)], 2);
    assert!(err.contains("no_such_system"), "{err}");
    fails_with(&["generate", "--system", "lorenz", "--y0", "1,2", "--out", p(&out)], 2);
    fails_with(&["generate", "--out", p(&out)], 2);
}

#[test]
fn generate_from_system_file_with_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let sys = dir.path().join("forced.sys");
    fs::write(&sys, "name = forced\nn = 1\nm = 1\nM = 1\n0 1 0 -0.5\n0 0 1 2.0\n").unwrap();
    let csv = dir.path().join("forced.csv");
    ok(&["generate", "--system", p(&sys), "--steps", "10", "--input", "step", "--out", p(&csv)]);
    assert!(fs::read_to_string(&csv).unwrap().starts_with("t,y1,u1\n"));
}

#[test]
fn recover_single_frozen_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let csv = lv_data(dir.path());
    let cfg = dir.path().join("cfg.toml");
    fs::write(&cfg, "epochs = 1\nlearning_rate = 0.0\nwindow = 10\nhidden = 4\ndense_hidden = [4]\n").unwrap();
    let run = dir.path().join("run");
    let stdout = ok(&["recover", "--data", p(&csv), "--config", p(&cfg), "--system", "lotka_volterra", "--out", p(&run)]);
    assert!(stdout.contains("reconstruction_mse"), "{stdout}");
    let loss = fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 2, "{loss}");
    assert_valid("eval_report.schema.json", &run.join("eval.json"));
    assert_valid("manifest.schema.json", &run.join("manifest.json"));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["settings"]["batch_size"], 8);
    assert_eq!(manifest["config_path"], p(&cfg));

    let report = dir.path().join("eval.json");
    let stdout = ok(&["eval", "--checkpoint", p(&run.join("checkpoint.json")), "--data", p(&csv), "--out", p(&report)]);
    assert!(stdout.contains("reconstruction_mse"));
    assert_valid("eval_report.schema.json", &report);
    let again: Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let first: Value = serde_json::from_str(&fs::read_to_string(run.join("eval.json")).unwrap()).unwrap();
    assert_eq!(again["reconstruction_mse"], first["reconstruction_mse"]);
}

#[test]
fn recover_reports_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let csv = lv_data(dir.path());
    let run = dir.path().join("run");

    let truncated = dir.path().join("truncated.csv");
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines: Vec<&str> = text.lines().take(40).collect();
    lines.push("0.4,1.2");
    fs::write(&truncated, lines.join("\n")).unwrap();
    let err = fails_with(&["recover", "--data", p(&truncated), "--out", p(&run)], 3);
    assert!(err.contains("line 41"), "{err}");

    let cfg = dir.path().join("dt.toml");
    fs::write(&cfg, "dt = 0.02\n").unwrap();
    let err = fails_with(&["recover", "--data", p(&csv), "--config", p(&cfg), "--out", p(&run)], 2);
    assert!(err.contains("`dt`"), "{err}");

    let err = fails_with(&["recover", "--data", p(&csv), "--system", "lorenz", "--out", p(&run)], 2);
    assert!(err.contains("y1..y3") && err.contains("y1..y2"), "{err}");

    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "window = 10\nepochs = many\n").unwrap();
    let err = fails_with(&["recover", "--data", p(&csv), "--config", p(&cfg), "--out", p(&run)], 2);
    assert!(err.contains("epochs"), "{err}");
}

#[test]
fn fpga_estimate_matches_measured_pipeline_design() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("est.json");
    let table = ok(&["fpga", "estimate", "--dim", "30", "--strategy", "pipeline_unroll", "--json", p(&json)]);
    assert!(table.contains("pipeline_unroll"));
    assert_valid("cost_report.schema.json", &json);
    let report: Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    let cycles = report["cycles"].as_f64().unwrap();
    assert!((cycles / 28_336.0 - 1.0).abs() <= 0.10, "{cycles}");
    assert_valid("manifest.schema.json", &dir.path().join("est.json.manifest.json"));
}

#[test]
fn fpga_sweep_cycles_are_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("sweep.json");
    ok(&["fpga", "sweep", "--dims", "20..150", "--json", p(&json)]);
    assert_valid("cost_report.schema.json", &json);
    let reports: Vec<Value> = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(reports.len(), 14);
    let cycles: Vec<u64> = reports.iter().map(|r| r["cycles"].as_u64().unwrap()).collect();
    assert!(cycles.windows(2).all(|w| w[0] < w[1]), "{cycles:?}");

    let speed = dir.path().join("speedup.json");
    ok(&["fpga", "sweep", "--dims", "30,150", "--speedup", "--json", p(&speed)]);
    assert_valid("speedup_report.schema.json", &speed);
}

#[test]
fn fpga_hazard_and_calibration_errors() {
    let err = fails_with(&["fpga", "estimate", "--dim", "30", "--ii", "1", "--reduction-distance", "2", "--check-hazards"], 2);
    assert!(err.contains("initiation interval"), "{err}");
    ok(&["fpga", "estimate", "--dim", "30", "--ii", "2", "--reduction-distance", "2", "--check-hazards"]);
    fails_with(&["fpga", "estimate", "--dim", "30", "--ii", "4"], 2);
    fails_with(&["fpga", "estimate", "--dim", "30", "--strategy", "fastest"], 2);

    let dir = tempfile::tempdir().unwrap();
    let rows = dir.path().join("rows.csv");
    fs::write(&rows, "d,cycles,lut,dsp,bram_kb,fpga_s\n20,17019,314433,2419,95,0.0408\n30,28336,463953,3745,135,0.0680\n").unwrap();
    let err = fails_with(&["fpga", "calibrate", "--rows", p(&rows)], 3);
    assert!(err.contains("insufficient data"), "{err}");
}

#[test]
fn fpga_calibrate_reports_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("cal.json");
    let text = ok(&["fpga", "calibrate", "--json", p(&json)]);
    assert!(text.contains("seconds per cycle"));
    assert_valid("calibration.schema.json", &json);
    let cal: Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(cal["residuals"].as_array().unwrap().len(), 11);
}

#[test]
fn help_lists_every_subcommand_and_flag() {
    let top = ok(&["--help"]);
    for cmd in ["generate", "recover", "eval", "fpga", "--seed"] {
        assert!(top.contains(cmd), "{cmd} missing from\n{top}");
    }
    let est = ok(&["fpga", "estimate", "--help"]);
    for flag in ["--dim", "--strategy", "--ii", "--unroll", "--no-partition", "--check-hazards", "--rows", "--anchor-seconds", "--json"] {
        assert!(est.contains(flag), "{flag} missing from\n{est}");
    }
}
