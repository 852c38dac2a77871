use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use zapfield::d2r::EvalConfig;
use zapfield::evolve::{EsConfig, GaConfig};
use zapfield::p2i::ArchConfig;
use zapfield::sim::SimConfig;
use zapfield::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Es,
    Ga,
}

impl Optimizer {
    pub fn as_str(self) -> &'static str {
        match self {
            Optimizer::Es => "es",
            Optimizer::Ga => "ga",
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Optimizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "es" => Ok(Optimizer::Es),
            "ga" => Ok(Optimizer::Ga),
            other => Err(format!("unknown optimizer {other:?}, expected es or ga")),
        }
    }
}

/// Everything an `evolve` campaign needs. Serialized verbatim into manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub prompt: String,
    pub grid_sizes: Vec<usize>,
    pub seeds: usize,
    pub base_seed: u64,
    pub optimizer: Optimizer,
    pub hidden_dims: Vec<usize>,
    pub sim: SimConfig,
    pub eval: EvalConfig,
    pub es: EsConfig,
    pub ga: GaConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// Laptop-sized profile: 10 seeds, 5 epochs, 30 ES generations.
    pub fn desk() -> Self {
        ExperimentConfig {
            prompt: "cluster".into(),
            grid_sizes: vec![2, 3, 5, 10],
            seeds: 10,
            base_seed: 0,
            optimizer: Optimizer::Es,
            hidden_dims: ArchConfig::default().hidden_dims,
            sim: SimConfig::default(),
            eval: EvalConfig {
                epochs: 5,
                ..EvalConfig::default()
            },
            es: EsConfig::default(),
            ga: GaConfig::default(),
            output_dir: PathBuf::from("runs"),
        }
    }

    /// Full-size profile: 30 seeds, 30 epochs, 50 generations for both optimizers.
    pub fn full_scale() -> Self {
        let mut cfg = Self::desk();
        cfg.seeds = 30;
        cfg.eval.epochs = 30;
        cfg.es.generations = 50;
        cfg
    }

    /// Start from `base` and overlay the keys present in the JSON file.
    pub fn overlay_file(base: &Self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let patch: Value =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut merged = serde_json::to_value(base)?;
        merge(&mut merged, patch);
        serde_json::from_value(merged).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn arch(&self, grid_n: usize) -> ArchConfig {
        ArchConfig {
            hidden_dims: self.hidden_dims.clone(),
            ..ArchConfig::for_grid(grid_n)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_sizes.is_empty() {
            return Err(Error::Config("at least one grid size is required".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("at least one seed is required".into()));
        }
        for &n in &self.grid_sizes {
            self.arch(n).validate()?;
        }
        self.sim.validate()?;
        self.eval.validate()?;
        match self.optimizer {
            Optimizer::Es => self.es.validate(),
            Optimizer::Ga => self.ga.validate(),
        }
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
