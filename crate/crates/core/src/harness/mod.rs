//! Experiment orchestration: configuration, runs, sweeps and reports.
//!
//! This is the only module that writes files on its own initiative. Data files
//! (CSV, `report.json`) depend on the configuration alone; wall-clock timings go
//! to a separate `timings.json`.

pub mod config;
mod experiments;
pub mod families;
mod sweep;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::io;

pub use config::{ExperimentConfig, ExperimentKind};
pub use sweep::{sweep, SweepReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Warn,
    Fail,
}

/// One measured quantity against its admissible range.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    pub status: Status,
    /// A missed soft check is reported as a warning.
    pub soft: bool,
}

/// Collects checks, applying target overrides from the configuration.
///
/// An override `name` replaces the single bound of a one-sided check;
/// `name.min` and `name.max` address the bounds of a two-sided one.
#[derive(Debug, Clone, Default)]
pub struct Checks {
    pub list: Vec<Check>,
    overrides: BTreeMap<String, f64>,
}

impl Checks {
    pub fn new(overrides: &BTreeMap<String, f64>) -> Self {
        Self { list: Vec::new(), overrides: overrides.clone() }
    }

    fn push(&mut self, name: &str, measured: f64, min: Option<f64>, max: Option<f64>, soft: bool) {
        assert!(self.list.iter().all(|c| c.name != name), "check {name} recorded twice");
        let two_sided = min.is_some() && max.is_some();
        let pick = |bound: Option<f64>, suffix: &str| {
            bound.map(|b| {
                let key = if two_sided { format!("{name}.{suffix}") } else { name.to_string() };
                self.overrides.get(&key).copied().unwrap_or(b)
            })
        };
        let (min, max) = (pick(min, "min"), pick(max, "max"));
        let ok = measured.is_finite() || measured == f64::INFINITY && max.is_none();
        let ok = ok && min.is_none_or(|m| measured >= m) && max.is_none_or(|m| measured <= m);
        let status = match (ok, soft) {
            (true, _) => Status::Pass,
            (false, true) => Status::Warn,
            (false, false) => Status::Fail,
        };
        self.list.push(Check { name: name.into(), measured, min, max, status, soft });
    }

    pub fn at_most(&mut self, name: &str, measured: f64, max: f64) {
        self.push(name, measured, None, Some(max), false);
    }

    pub fn at_least(&mut self, name: &str, measured: f64, min: f64) {
        self.push(name, measured, Some(min), None, false);
    }

    pub fn between(&mut self, name: &str, measured: f64, min: f64, max: f64) {
        self.push(name, measured, Some(min), Some(max), false);
    }

    pub fn soft_at_most(&mut self, name: &str, measured: f64, max: f64) {
        self.push(name, measured, None, Some(max), true);
    }

    pub fn fail(&mut self, name: &str, measured: f64) {
        self.push(name, measured, None, Some(f64::NEG_INFINITY), false);
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
    pub total_s: f64,
}

/// Stage stopwatch.
pub struct Timer {
    start: Instant,
    last: Instant,
    pub timings: Timings,
}

impl Timer {
    pub fn new() -> Self {
        let now = Instant::now();
        Self { start: now, last: now, timings: Timings::default() }
    }

    pub fn stage(&mut self, name: &str) {
        let now = Instant::now();
        self.timings.stages.push((name.into(), (now - self.last).as_secs_f64()));
        self.last = now;
    }

    fn finish(mut self) -> Timings {
        self.timings.total_s = self.start.elapsed().as_secs_f64();
        self.timings
    }
}

impl Default for Timer {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub kind: String,
    pub config: ExperimentConfig,
    pub input_hash: String,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    #[serde(skip)]
    pub timings: Timings,
}

impl RunReport {
    pub fn status(&self) -> Status {
        self.checks.iter().map(|c| c.status).max().unwrap_or(Status::Pass)
    }

    /// 0 when no check failed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.status() == Status::Fail {
            1
        } else {
            0
        }
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Exit status for an error: 2 for configuration problems, 3 otherwise.
pub fn error_exit_code(e: &LabError) -> i32 {
    match e {
        LabError::Config { .. } => 2,
        _ => 3,
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over git-style blobs (`blob <len>\0<bytes>`) of the canonical
/// configuration and every input file it names.
pub fn input_hash(cfg: &ExperimentConfig, base_dir: &Path) -> Result<String> {
    let mut canon = cfg.clone();
    canon.out = None;
    let mut blobs = vec![canon.to_toml().into_bytes()];
    for p in [&cfg.curvature.path, &cfg.torsion.path].into_iter().flatten() {
        let p = if p.is_absolute() { p.clone() } else { base_dir.join(p) };
        blobs.push(fs::read(&p)?);
    }
    let mut h = Sha256::new();
    for b in blobs {
        h.update(format!("blob {}\0", b.len()).as_bytes());
        h.update(&b);
    }
    Ok(hex(&h.finalize()))
}

/// Exclusive claim on an output directory, released on drop.
pub struct DirLock {
    path: PathBuf,
    _file: File,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(".filament-lab.lock");
        let file = OpenOptions::new().write(true).create_new(true).open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                LabError::Contract(format!("{} is locked by another run ({})", dir.display(), path.display()))
            } else {
                e.into()
            }
        })?;
        Ok(Self { path, _file: file })
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Default output directory for a configuration.
pub fn output_dir(cfg: &ExperimentConfig, base_dir: &Path) -> PathBuf {
    match &cfg.out {
        Some(p) if p.is_absolute() => p.clone(),
        Some(p) => base_dir.join(p),
        None => PathBuf::from("runs").join(cfg.kind.name()),
    }
}

/// Runs one experiment without taking the directory lock.
pub(crate) fn run_unlocked(cfg: &ExperimentConfig, out: &Path, base_dir: &Path) -> Result<RunReport> {
    fs::create_dir_all(out)?;
    let mut timer = Timer::new();
    let mut checks = Checks::new(&cfg.tolerances);
    let mut notes = Vec::new();
    let input_hash = input_hash(cfg, base_dir)?;
    experiments::run_kind(cfg, out, base_dir, &mut checks, &mut notes, &mut timer)?;
    let mut echo = cfg.clone();
    echo.out = None;
    let report = RunReport {
        kind: cfg.kind.name().into(),
        config: echo,
        input_hash,
        checks: checks.list,
        notes,
        timings: timer.finish(),
    };
    io::write_json(&out.join("report.json"), &report)?;
    io::write_json(&out.join("timings.json"), &report.timings)?;
    Ok(report)
}

/// Runs one experiment into `out`, holding the directory lock.
///
/// Relative input paths in the configuration resolve against `base_dir`.
pub fn run(cfg: &ExperimentConfig, out: &Path, base_dir: &Path) -> Result<RunReport> {
    let _lock = DirLock::acquire(out)?;
    run_unlocked(cfg, out, base_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checks_apply_overrides_and_severity() {
        let mut o = BTreeMap::new();
        o.insert("a".to_string(), 2.0);
        o.insert("b.max".to_string(), 0.7);
        let mut c = Checks::new(&o);
        c.at_most("a", 1.5, 1.0);
        c.between("b", 0.65, 0.4, 0.6);
        c.soft_at_most("c", 3.0, 1.0);
        c.at_least("d", f64::NAN, 0.0);
        let s: Vec<Status> = c.list.iter().map(|k| k.status).collect();
        assert_eq!(s, vec![Status::Pass, Status::Pass, Status::Warn, Status::Fail]);
    }

    #[test]
    fn lock_rejects_a_second_holder() {
        let dir = tempfile::tempdir().unwrap();
        let a = DirLock::acquire(dir.path()).unwrap();
        assert!(DirLock::acquire(dir.path()).is_err());
        drop(a);
        assert!(DirLock::acquire(dir.path()).is_ok());
    }
}
