use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::SimConfig;
use crate::error::Result;
use crate::io::{fmt17, ser_points, write_atomic, write_json_atomic};
use crate::Vec2;

/// The recorded outcome of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Average pairwise distance after initialization and after each step.
    pub d_avg_series: Vec<f64>,
    pub final_positions: Vec<Vec2>,
    pub seed: u64,
}

#[derive(Serialize)]
struct TrajectoryJson<'a> {
    seed: u64,
    config: &'a SimConfig,
    #[serde(serialize_with = "ser_points")]
    final_positions: &'a [Vec2],
}

impl Trajectory {
    /// CSV with header `step,d_avg`, one row per recorded step.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,d_avg\n");
        for (step, d) in self.d_avg_series.iter().enumerate() {
            writeln!(out, "{step},{}", fmt17(*d)).unwrap();
        }
        out
    }

    pub fn to_json(&self, config: &SimConfig) -> Result<String> {
        let doc = TrajectoryJson {
            seed: self.seed,
            config,
            final_positions: &self.final_positions,
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn write_json(&self, path: &Path, config: &SimConfig) -> Result<()> {
        write_json_atomic(
            path,
            &TrajectoryJson {
                seed: self.seed,
                config,
                final_positions: &self.final_positions,
            },
        )
    }
}
