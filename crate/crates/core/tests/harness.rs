use std::fs;
use std::path::Path;

use filament_lab::error::LabError;
use filament_lab::harness::{self, ExperimentConfig};

fn configs_dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs"))
}

#[test]
fn empty_sweep_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse("kind = \"profile\"\nalpha = 0.4\n[sweep]\nalpha = []\n", &[]).unwrap();
    let rep = harness::sweep(&cfg, dir.path(), configs_dir()).unwrap();
    assert_eq!(rep.exit_code(), 0);
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv, "alpha,status\n");
}

#[test]
fn alpha_grid_gives_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::load(&configs_dir().join("alpha_sweep.toml"), &["grid.x_max=60".into(), "grid.h=2e-3".into()])
        .unwrap();
    let rep = harness::sweep(&cfg, dir.path(), configs_dir()).unwrap();
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("alpha,status,"));
    for (line, alpha) in lines[1..].iter().zip([0.2, 0.4, 0.6, 0.8]) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0].parse::<f64>().unwrap(), alpha);
        assert_eq!(cells[1], "0", "{line}");
    }
    assert_eq!(rep.runs.len(), 4);
    for i in 0..4 {
        assert!(dir.path().join(format!("run-{i:03}/report.json")).exists());
    }
}

#[test]
fn unknown_key_is_rejected_with_its_line() {
    let err = ExperimentConfig::parse("kind = \"profile\"\nalpa = 0.4\n", &[]).unwrap_err();
    match err {
        LabError::Config { line, message } => {
            assert_eq!(line, Some(2));
            assert!(message.contains("alpa"), "{message}");
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn out_of_range_override_is_a_config_error() {
    let err = ExperimentConfig::parse("kind = \"profile\"\nalpha = 0.4\n", &["alpha=3".into()]).unwrap_err();
    assert!(matches!(err, LabError::Config { .. }));
    assert_eq!(harness::error_exit_code(&err), 2);
}
