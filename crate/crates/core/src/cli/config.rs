//! The JSON experiment document.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::featlib::{LibrarySpec, Scaling};
use crate::sigstats::{ExperimentPlan, Redraw};
use crate::sparsesolve::SolverSettings;
use crate::synthgen::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LibrarySource {
    Inline(LibrarySpec),
    /// Path to a JSON library spec, relative to the config file.
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(flatten)]
    pub settings: SolverSettings,
    #[serde(default)]
    pub scaling: Scaling,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { settings: SolverSettings::default(), scaling: Scaling::None }
    }
}

fn default_runs() -> usize {
    10
}

fn default_alpha() -> f64 {
    0.05
}

fn default_alternatives() -> Vec<usize> {
    vec![0]
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(rename = "J", alias = "rows")]
    pub rows: usize,
    #[serde(rename = "R", alias = "replicates")]
    pub replicates: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    #[serde(default)]
    pub redraw: Redraw,
    pub library: LibrarySource,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Zero-based alternatives to solve.
    #[serde(default = "default_alternatives")]
    pub alternatives: Vec<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    /// Reads, resolves the library reference and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let LibrarySource::Path(p) = &config.library {
            let resolved = path.parent().unwrap_or(Path::new(".")).join(p);
            let text = std::fs::read_to_string(&resolved)
                .with_context(|| format!("reading library spec {}", resolved.display()))?;
            let spec: LibrarySpec = serde_json::from_str(&text)
                .with_context(|| format!("featlib: parsing library spec {}", resolved.display()))?;
            config.library = LibrarySource::Inline(spec);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn library_spec(&self) -> Result<&LibrarySpec> {
        match &self.library {
            LibrarySource::Inline(spec) => Ok(spec),
            LibrarySource::Path(p) => bail!("library spec {} was not resolved", p.display()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            bail!("config: n_runs must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            bail!("config: alpha must lie in (0, 1), got {}", self.alpha);
        }
        self.plan()?.validate().context("config")?;
        Ok(())
    }

    pub fn plan(&self) -> Result<ExperimentPlan> {
        Ok(ExperimentPlan {
            scenario: self.scenario,
            rows: self.rows,
            replicates: self.replicates,
            library: self.library_spec()?.clone(),
            scaling: self.solver.scaling,
            solver: self.solver.settings,
            alternatives: self.alternatives.clone(),
            redraw: self.redraw,
        })
    }
}
