//! Experiment files: flat `key = value` lines, `#` starts a comment.

use std::path::{Path, PathBuf};

use fedsim_core::simulator::{Algorithm, SimConfig};

use crate::error::CliError;

/// A parsed experiment: simulator settings plus front-end options.
#[derive(Debug, Clone, Default)]
pub struct Experiment {
    pub sim: SimConfig,
    pub out: Option<PathBuf>,
    pub compare: Vec<Algorithm>,
}

fn parse_algorithms(value: &str) -> Result<Vec<Algorithm>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect()
}

impl Experiment {
    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "out" => self.out = Some(PathBuf::from(value)),
            "compare.algorithms" => self.compare = parse_algorithms(value)?,
            _ => self.sim.set(key, value).map_err(|e| e.to_string().replace("configuration error: ", ""))?,
        }
        Ok(())
    }

    /// Parses experiment text. Errors name the offending line.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut exp = Experiment::default();
        let mut seen = std::collections::BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line_no = no + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config(format!("line {line_no}: expected `key = value`, got `{line}`")));
            };
            let key = key.trim();
            if let Some(first) = seen.insert(key.to_string(), line_no) {
                return Err(CliError::Config(format!("line {line_no}: `{key}` already set on line {first}")));
            }
            exp.set(key, value.trim())
                .map_err(|e| CliError::Config(format!("line {line_no}: {e}")))?;
        }
        Ok(exp)
    }

    /// Reads `path` (defaults only when `None`) and applies `overrides` on top.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut exp = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::parse(&text).map_err(|e| match e {
                    CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                    other => other,
                })?
            }
            None => Experiment::default(),
        };
        for o in overrides {
            let Some((key, value)) = o.split_once('=') else {
                return Err(CliError::Config(format!("--set {o}: expected key=value")));
            };
            exp.set(key.trim(), value.trim())
                .map_err(|e| CliError::Config(format!("--set {o}: {e}")))?;
        }
        exp.sim.validate()?;
        Ok(exp)
    }
}
