use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::io::write_json;

use super::config::{set_dotted, ExperimentConfig};
use super::{error_exit_code, run_unlocked, DirLock, RunReport, Status};

/// Outcome of a sweep: one entry per grid point, in grid order.
#[derive(Debug)]
pub struct SweepReport {
    pub keys: Vec<String>,
    pub points: Vec<Vec<toml::Value>>,
    pub runs: Vec<std::result::Result<RunReport, LabError>>,
}

impl SweepReport {
    /// Worst exit status over the sub-runs; 0 for an empty grid.
    pub fn exit_code(&self) -> i32 {
        self.runs
            .iter()
            .map(|r| match r {
                Ok(rep) => rep.exit_code(),
                Err(e) => error_exit_code(e),
            })
            .max()
            .unwrap_or(0)
    }
}

#[derive(Serialize)]
struct SubRunError {
    index: usize,
    message: String,
}

/// Cartesian product of the value lists, last key varying fastest.
fn grid_points(lists: &[Vec<toml::Value>]) -> Vec<Vec<toml::Value>> {
    if lists.is_empty() || lists.iter().any(|l| l.is_empty()) {
        return Vec::new();
    }
    let mut points = vec![Vec::new()];
    for list in lists {
        points = points
            .into_iter()
            .flat_map(|p| {
                list.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push(v.clone());
                    q
                })
            })
            .collect();
    }
    points
}

fn cell(v: &toml::Value) -> String {
    match v {
        toml::Value::Float(f) => format!("{f:.16e}"),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn status_code(r: &std::result::Result<RunReport, LabError>) -> u8 {
    match r {
        Ok(rep) => match rep.status() {
            Status::Pass => 0,
            Status::Warn => 1,
            Status::Fail => 2,
        },
        Err(_) => 3,
    }
}

/// Runs every point of `base.sweep` as an independent sub-run in
/// `out/run-NNN`, then writes `sweep.csv` with one row per point.
///
/// Columns are the swept keys, `status` (0 pass, 1 warn, 2 fail, 3 error) and
/// the measured value of every check seen in any sub-run. A failing sub-run is
/// recorded and the sweep goes on.
pub fn sweep(base: &ExperimentConfig, out: &Path, base_dir: &Path) -> Result<SweepReport> {
    let _lock = DirLock::acquire(out)?;
    let keys: Vec<String> = base.sweep.keys().cloned().collect();
    let lists: Vec<Vec<toml::Value>> = base.sweep.values().cloned().collect();
    let points = grid_points(&lists);
    let mut template = base.clone();
    template.sweep.clear();
    template.out = None;
    let template = template.to_table();

    let runs: Vec<_> = points
        .par_iter()
        .enumerate()
        .map(|(i, point)| {
            let mut table = template.clone();
            for (k, v) in keys.iter().zip(point) {
                set_dotted(&mut table, k, v.clone())?;
            }
            let cfg = ExperimentConfig::from_table(table)?;
            cfg.validate().map_err(|(key, message)| LabError::Config { line: None, message: format!("`{key}`: {message}") })?;
            run_unlocked(&cfg, &out.join(format!("run-{i:03}")), base_dir)
        })
        .collect();

    let mut names: Vec<String> = Vec::new();
    for rep in runs.iter().flatten() {
        for c in &rep.checks {
            if !names.contains(&c.name) {
                names.push(c.name.clone());
            }
        }
    }
    let mut csv = keys.iter().cloned().chain(["status".to_string()]).chain(names.iter().cloned()).collect::<Vec<_>>().join(",");
    csv.push('\n');
    for (point, r) in points.iter().zip(&runs) {
        let mut cells: Vec<String> = point.iter().map(cell).collect();
        cells.push(status_code(r).to_string());
        for n in &names {
            let v = r.as_ref().ok().and_then(|rep| rep.check(n)).map_or(f64::NAN, |c| c.measured);
            cells.push(format!("{v:.16e}"));
        }
        let _ = writeln!(csv, "{}", cells.join(","));
    }
    fs::write(out.join("sweep.csv"), csv)?;
    let errors: Vec<SubRunError> = runs
        .iter()
        .enumerate()
        .filter_map(|(index, r)| r.as_ref().err().map(|e| SubRunError { index, message: e.to_string() }))
        .collect();
    write_json(&out.join("sweep_errors.json"), &errors)?;
    Ok(SweepReport { keys, points, runs })
}
