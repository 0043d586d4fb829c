//! On-disk layout shared by the subcommands.
//!
//! A simulated directory holds `manifest.toml`, `graph.txt`, and
//! `<scenario>/rep_<r>/{data.csv,truth.csv}`. A fit directory mirrors the
//! scenario and replicate folders with `<MODEL>.trace.csv` and
//! `<MODEL>.schema.toml`, plus a run-level `summary.csv`.

use crate::{CliError, CliResult};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const MANIFEST: &str = "manifest.toml";
pub const GRAPH: &str = "graph.txt";
pub const DATA: &str = "data.csv";
pub const TRUTH: &str = "truth.csv";
pub const SUMMARY: &str = "summary.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub lambda: Option<f64>,
    pub inv_phi: Option<f64>,
}

impl Scenario {
    pub fn study2(lambda: f64, inv_phi: f64) -> Self {
        Scenario { name: format!("lambda_{lambda}_invphi_{inv_phi}"), lambda: Some(lambda), inv_phi: Some(inv_phi) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub preset: String,
    pub seed: u64,
    pub replicates: usize,
    pub scenarios: Vec<Scenario>,
}

impl Manifest {
    pub fn read(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, dir: &Path) -> CliResult<()> {
        let text = toml::to_string(self).map_err(|e| CliError::data(e.to_string()))?;
        std::fs::write(dir.join(MANIFEST), text)?;
        Ok(())
    }
}

pub fn replicate_dir(root: &Path, scenario: &str, replicate: usize) -> PathBuf {
    root.join(scenario).join(format!("rep_{replicate:03}"))
}

pub fn trace_paths(dir: &Path, model: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{model}.trace.csv")), dir.join(format!("{model}.schema.toml")))
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::data(format!("cannot create {}: {e}", dir.display())))
}
