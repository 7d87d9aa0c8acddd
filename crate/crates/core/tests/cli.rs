use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use panel_mmle::montecarlo::McTable;
use panel_mmle::PanelDataset;

const BIN: &str = env!("CARGO_BIN_EXE_panel-mmle");

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("PANEL_MMLE_THREADS").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const SMOKE: &str = r#"{"seed": 5, "blocks": [{"design": "S", "n_periods": [4], "n_units": [50],
    "rho": [0.5, 1.0], "n_reps": 100, "estimators": ["lsdv", "mmle_c"],
    "tests": [{"kind": "qlm_true_rho"}, {"kind": "wald"}]}]}"#;

#[test]
fn three_unit_panel_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let text = "unit,period,y\na,0,0.1\na,1,0.7\na,2,0.2\na,3,1.1\nb,0,-0.4\nb,1,0.3\nb,2,-0.9\nb,3,0.05\n\
                c,0,1.2\nc,1,0.4\nc,2,1.6\nc,3,0.8\n";
    let data = write(dir.path(), "p.csv", text);
    let o = run(&["estimate", "--data", &data, "--estimator", "lsdv,c"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["n_units"], 3);
    assert!(v["estimates"][1]["rho_hat"].is_f64());
}

#[test]
fn missing_period_row_names_unit_and_period() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "p.csv", "unit,period,y\na,0,1\na,1,2\na,2,3\nb,0,1\nb,2,2\n");
    let o = run(&["estimate", "--data", &data]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("\"b\"") && e.contains("period 1"), "{e}");
}

#[test]
fn parse_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(dir.path(), "p.csv", "unit,period,y\na,0,1\na,1,oops\na,2,3\n");
    let o = run(&["estimate", "--data", &data]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["estimate"]).status.code(), Some(2));
    assert_eq!(run(&["estimate", "--data", "/nonexistent.csv"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    // a lagged series without within variation cannot be fitted
    let flat = write(dir.path(), "flat.csv", "unit,period,y\na,0,1\na,1,1\na,2,1\nb,0,2\nb,1,2\nb,2,2\n");
    let o = run(&["estimate", "--data", &flat]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let sample = root().join("examples/data/sample_panel.csv");
    let o = run(&["test", "--data", sample.to_str().unwrap(), "--h0", "q=1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn estimate_output_matches_golden_file() {
    let sample = root().join("examples/data/sample_panel.csv");
    let o = run(&["estimate", "--data", sample.to_str().unwrap(), "--estimator", "lsdv,lsdv_bc,c,w,f"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let golden = root().join("tests/golden/estimate_sample.json");
    if !golden.exists() {
        std::fs::write(&golden, &o.stdout).unwrap();
    }
    assert_eq!(stdout(&o), std::fs::read_to_string(&golden).unwrap());
}

#[test]
fn config_errors_report_a_json_pointer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", &SMOKE.replace("[0.5, 1.0]", "[0.5, 1.5]"));
    let o = run(&["experiment", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/blocks/0/rho/1"), "{}", stderr(&o));
    let cfg = write(dir.path(), "d.json", &SMOKE.replace("\"S\"", "\"Q\""));
    let o = run(&["experiment", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/blocks/0/design"), "{}", stderr(&o));
}

#[test]
fn thread_count_does_not_change_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMOKE);
    let one = run(&["--threads", "1", "experiment", "--config", &cfg]);
    let eight = run(&["--threads", "8", "experiment", "--config", &cfg]);
    assert_eq!(one.status.code(), Some(0), "{}", stderr(&one));
    assert!(!one.stdout.is_empty());
    assert_eq!(one.stdout, eight.stdout);
    let env = Command::new(BIN).args(["experiment", "--config", &cfg]).env("PANEL_MMLE_THREADS", "3").output().unwrap();
    assert_eq!(one.stdout, env.stdout);
}

#[test]
fn outputs_round_trip_through_the_readers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", SMOKE);
    let csv_out = dir.path().join("t.csv");
    let o = run(&["experiment", "--config", &cfg, "--reps", "10", "--out", csv_out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&csv_out).unwrap();
    let table = McTable::read_csv(text.as_bytes()).unwrap();
    assert!(!table.rows.is_empty());
    assert_eq!(table.to_csv_string().unwrap(), text);

    let json_out = dir.path().join("t.json");
    let o = run(&["experiment", "--config", &cfg, "--reps", "10", "--format", "json", "--out", json_out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let back: McTable = serde_json::from_str(&std::fs::read_to_string(&json_out).unwrap()).unwrap();
    assert_eq!(back.to_csv_string().unwrap(), text);

    let sample = root().join("examples/data/sample_panel.csv");
    let est = run(&["estimate", "--data", sample.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(est.status.code(), Some(0));
    csv::Reader::from_reader(est.stdout.as_slice()).records().for_each(|r| {
        r.unwrap();
    });
    let data = PanelDataset::read_csv(std::fs::File::open(&sample).unwrap()).unwrap();
    let mut buf = Vec::new();
    data.write_csv(&mut buf).unwrap();
    let again = PanelDataset::read_csv(buf.as_slice()).unwrap();
    assert_eq!((again.n_units(), again.n_periods()), (data.n_units(), data.n_periods()));
    assert_eq!(again.y_unit(0), data.y_unit(0));

    let lim = dir.path().join("l.csv");
    let o = run(&["limitdist", "--T", "4", "--draws", "1000", "--out", lim.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["draws"], 1000);
    let n = csv::Reader::from_path(&lim).unwrap().records().filter(|r| r.is_ok()).count();
    assert_eq!(n, 1000);
}

#[test]
fn tests_subcommand_reports_json() {
    let sample = root().join("examples/data/sample_panel.csv");
    let s = sample.to_str().unwrap();
    for args in [
        vec!["test", "--data", s, "--h0", "rho=0.5"],
        vec!["test", "--data", s, "--test", "wald"],
        vec!["test", "--data", s, "--test", "confset", "--grid", "-0.5:1:0.05"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", stderr(&o));
        let _: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    }
}

#[test]
fn bundled_table_configs_parse() {
    for i in 1..=8 {
        let p = root().join(format!("configs/paper/table{i}.json"));
        let cfg = panel_mmle::config::ExperimentConfig::from_json(&std::fs::read_to_string(&p).unwrap());
        assert!(cfg.is_ok(), "table{i}: {:?}", cfg.err());
    }
}
