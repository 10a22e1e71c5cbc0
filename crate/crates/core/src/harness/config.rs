//! Experiment configuration: TOML text with dotted sections, strict keys.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Profile,
    AngleSweep,
    NlsValidate,
    Recover,
    Rates,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Profile => "profile",
            ExperimentKind::AngleSweep => "angle-sweep",
            ExperimentKind::NlsValidate => "nls-validate",
            ExperimentKind::Recover => "recover",
            ExperimentKind::Rates => "rates",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Profile, Self::AngleSweep, Self::NlsValidate, Self::Recover, Self::Rates]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CurvatureFamily {
    #[default]
    Zero,
    /// `β x² e^{−x²}`.
    Gauss2,
    /// `β x² (1 − x²/w²)⁴` on `|x| < w`.
    Bump,
    /// `β e^{−x²}`; violates the `x⁻²` weight.
    Badgauss,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurvatureSpec {
    #[serde(default)]
    pub family: CurvatureFamily,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default = "two")]
    pub width: f64,
    /// Two columns `x, c` with a header line; used when `family = "csv"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for CurvatureSpec {
    fn default() -> Self {
        Self { family: CurvatureFamily::Zero, beta: 1.0, width: 2.0, path: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TorsionFamily {
    #[default]
    Zero,
    Constant,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TorsionSpec {
    #[serde(default)]
    pub family: TorsionFamily,
    #[serde(default)]
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

/// Grid parameters. `l`, `n` describe the periodic box of the wave solvers,
/// `h`, `x_max` the symmetric curve grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_decade: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub curvature: CurvatureSpec,
    #[serde(default)]
    pub torsion: TorsionSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub time: TimeSpec,
    /// Replacement targets keyed by check name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tolerances: BTreeMap<String, f64>,
    /// Parameter grid for `sweep`: dotted key to list of values.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sweep: BTreeMap<String, Vec<toml::Value>>,
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

fn config_error(line: Option<usize>, message: impl Into<String>) -> LabError {
    LabError::Config { line, message: message.into() }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Line on which `section.key` (or a top-level `key`) is assigned.
fn locate(text: &str, dotted: &str) -> Option<usize> {
    let (section, key) = match dotted.rsplit_once('.') {
        Some((s, k)) => (s, k),
        None => ("", dotted),
    };
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else { continue };
        let lhs = lhs.trim();
        if (current == section && lhs == key) || (current.is_empty() && lhs == dotted) {
            return Some(i + 1);
        }
    }
    None
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Sets `dotted` in `table`, creating intermediate sections.
pub fn set_dotted(table: &mut toml::Table, dotted: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = dotted.split('.').collect();
    let last = parts.pop().filter(|k| !k.is_empty()).ok_or_else(|| config_error(None, format!("empty key in `{dotted}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| config_error(None, format!("`{p}` in `{dotted}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl ExperimentConfig {
    /// Parses and validates configuration text, then applies `key=value` overrides.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let base: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(text, s.start));
            config_error(line, e.message().trim().to_string())
        })?;
        let cfg = if overrides.is_empty() {
            base
        } else {
            let mut table: toml::Table = toml::from_str(text).map_err(|e| config_error(None, e.message().to_string()))?;
            for o in overrides {
                let (k, v) = o
                    .split_once('=')
                    .ok_or_else(|| config_error(None, format!("override `{o}` is not key=value")))?;
                set_dotted(&mut table, k.trim(), parse_value(v.trim()))?;
            }
            Self::from_table(table).map_err(|e| match e {
                LabError::Config { message, .. } => config_error(None, format!("after overrides: {message}")),
                other => other,
            })?
        };
        cfg.validate().map_err(|(key, message)| config_error(locate(text, key), format!("`{key}`: {message}")))?;
        Ok(cfg)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| config_error(None, e.message().trim().to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(None, format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, overrides).map_err(|e| match e {
            LabError::Config { line, message } => config_error(line, format!("{}: {message}", path.display())),
            other => other,
        })
    }

    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("config serializes to a table")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Range checks; returns the offending dotted key and a message.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let finite = |v: f64| v.is_finite();
        if !finite(self.alpha) || !(0.0..=1.5).contains(&self.alpha) {
            return Err(("alpha", format!("{} outside [0, 1.5]", self.alpha)));
        }
        if let Some(a) = self.alphas.iter().find(|a| !(0.0..=1.5).contains(*a)) {
            return Err(("alphas", format!("{a} outside [0, 1.5]")));
        }
        if self.kind == ExperimentKind::Rates && self.alpha == 0.0 {
            return Err(("alpha", "rates needs a positive alpha".into()));
        }
        if self.kind == ExperimentKind::AngleSweep && self.alphas.is_empty() {
            return Err(("alphas", "angle-sweep needs at least one alpha".into()));
        }
        if !finite(self.gamma) {
            return Err(("gamma", "must be finite".into()));
        }
        let c = &self.curvature;
        if !finite(c.beta) || c.beta < 0.0 {
            return Err(("curvature.beta", format!("{} must be finite and non-negative", c.beta)));
        }
        if !(c.width > 0.0) || !finite(c.width) {
            return Err(("curvature.width", format!("{} must be positive", c.width)));
        }
        if c.family == CurvatureFamily::Csv && c.path.is_none() {
            return Err(("curvature.path", "family csv needs a path".into()));
        }
        if self.torsion.family == TorsionFamily::Csv && self.torsion.path.is_none() {
            return Err(("torsion.path", "family csv needs a path".into()));
        }
        if !finite(self.torsion.value) {
            return Err(("torsion.value", "must be finite".into()));
        }
        let g = &self.grid;
        if let Some(n) = g.n {
            if !n.is_power_of_two() || !(16..=1 << 22).contains(&n) {
                return Err(("grid.n", format!("{n} must be a power of two in [16, 2^22]")));
            }
        }
        if let Some(l) = g.l {
            if !(l > 0.0) || !finite(l) {
                return Err(("grid.l", format!("{l} must be positive")));
            }
        }
        if let Some(h) = g.h {
            if !(h > 0.0) || h > 0.1 {
                return Err(("grid.h", format!("{h} must lie in (0, 0.1]")));
            }
        }
        if let Some(x) = g.x_max {
            if !(x > 0.0) || !finite(x) {
                return Err(("grid.x_max", format!("{x} must be positive")));
            }
            if let Some(h) = g.h {
                if x / h > 1e7 {
                    return Err(("grid.x_max", format!("x_max / h = {} exceeds 1e7 nodes", x / h)));
                }
            }
        }
        let t = &self.time;
        if let Some(t0) = t.t0 {
            if !(t0 > 0.0) || t0 > 10.0 {
                return Err(("time.t0", format!("{t0} must lie in (0, 10]")));
            }
        }
        if let Some(tm) = t.t_min {
            if !(tm > 0.0) || tm >= t.t0.unwrap_or(0.5) {
                return Err(("time.t_min", format!("{tm} must lie in (0, t0)")));
            }
        }
        if let Some(p) = t.per_decade {
            if !(1..=100).contains(&p) {
                return Err(("time.per_decade", format!("{p} must lie in [1, 100]")));
            }
        }
        if let Some(dt) = t.dt {
            if !(dt > 0.0) || dt > 1.0 {
                return Err(("time.dt", format!("{dt} must lie in (0, 1]")));
            }
        }
        if let Some(v) = self.tolerances.values().find(|v| !v.is_finite()) {
            return Err(("tolerances", format!("non-finite target {v}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_names_key_and_line() {
        let text = "kind = \"profile\"\nalpa = 0.3\n";
        match ExperimentConfig::parse(text, &[]) {
            Err(LabError::Config { line, message }) => {
                assert_eq!(line, Some(2));
                assert!(message.contains("alpa"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn range_errors_point_at_the_line() {
        let text = "kind = \"recover\"\nalpha = 0.3\n\n[grid]\nn = 1000\n";
        match ExperimentConfig::parse(text, &[]) {
            Err(LabError::Config { line, message }) => {
                assert_eq!(line, Some(5));
                assert!(message.contains("grid.n"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides_replace_nested_values() {
        let text = "kind = \"recover\"\nalpha = 0.3\n[curvature]\nfamily = \"gauss2\"\nbeta = 0.1\n";
        let cfg = ExperimentConfig::parse(text, &["curvature.beta=0.2".into(), "grid.n=4096".into()]).unwrap();
        assert_eq!(cfg.curvature.beta, 0.2);
        assert_eq!(cfg.grid.n, Some(4096));
        assert!(ExperimentConfig::parse(text, &["bogus.key=1".into()]).is_err());
        let back = ExperimentConfig::parse(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(back, cfg);
    }
}
