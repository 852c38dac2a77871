//! Evolutionary search over controller genomes: a (1+1) evolution strategy
//! with success-window step-size control and a real-valued genetic
//! algorithm with tournament selection and arithmetic crossover.
//!
//! Both optimizers maximize. Every individual is evaluated exactly once,
//! with an evaluation seed fixed by the run seed and the individual's
//! position in the run, so stochastic fitness functions stay reproducible.

mod es;
mod ga;
mod operators;

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::{fmt17, write_atomic};
use crate::p2i::{new_model, ArchConfig, Genome};

pub use es::{adapt_step_size, run_es, run_es_with, EsConfig, SuccessWindow};
pub use ga::{run_ga, run_ga_with, GaConfig};
pub use operators::{arithmetic_crossover, mutate_gaussian, mutate_gaussian_with_rate, tournament_select};

/// Scalar fitness plus the two reward components when known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Evaluation {
    pub fitness: f64,
    pub r_distance: Option<f64>,
    pub r_position: Option<f64>,
}

impl Evaluation {
    pub fn scalar(fitness: f64) -> Self {
        Evaluation {
            fitness,
            r_distance: None,
            r_position: None,
        }
    }
}

/// Anything that scores a genome under a given evaluation seed.
pub trait Fitness: Sync {
    fn evaluate(&self, genome: &Genome, seed: u64) -> Result<Evaluation>;
}

impl<F> Fitness for F
where
    F: Fn(&Genome, u64) -> Result<Evaluation> + Sync,
{
    fn evaluate(&self, genome: &Genome, seed: u64) -> Result<Evaluation> {
        self(genome, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub best_r_distance: Option<f64>,
    pub best_r_position: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionLog {
    /// One record per generation, generation 0 first.
    pub records: Vec<GenerationRecord>,
    pub best_genome: Genome,
    pub best: Evaluation,
    /// Number of fitness evaluations performed.
    pub evaluations: usize,
}

/// A run stopped by a fitness error, with everything logged before it.
#[derive(Debug)]
pub struct Aborted {
    pub partial: Box<EvolutionLog>,
    pub error: Error,
}

impl std::fmt::Display for Aborted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "run aborted after {} generations: {}",
            self.partial.records.len(),
            self.error
        )
    }
}

impl std::error::Error for Aborted {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Aborted> for Error {
    fn from(a: Aborted) -> Self {
        a.error
    }
}

pub const LOG_HEADER: &str = "generation,best_fitness,mean_fitness,best_r_distance,best_r_position,sigma";

fn opt17(v: Option<f64>) -> String {
    v.map(fmt17).unwrap_or_default()
}

impl EvolutionLog {
    pub fn best_fitness_curve(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.best_fitness).collect()
    }

    pub fn to_csv(&self) -> String {
        records_to_csv(&self.records)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }
}

pub fn records_to_csv(records: &[GenerationRecord]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.generation,
            fmt17(r.best_fitness),
            fmt17(r.mean_fitness),
            opt17(r.best_r_distance),
            opt17(r.best_r_position),
            opt17(r.sigma)
        )
        .unwrap();
    }
    out
}

/// Parse a log CSV written by [`EvolutionLog::to_csv`].
pub fn parse_log_csv(text: &str) -> Result<Vec<GenerationRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == LOG_HEADER => {}
        other => return Err(Error::Format(format!("unexpected log header {other:?}"))),
    }
    let num = |field: &str, line: usize| -> Result<Option<f64>> {
        if field.is_empty() {
            return Ok(None);
        }
        field
            .parse::<f64>()
            .map(Some)
            .map_err(|_| Error::Format(format!("line {line}: bad number {field:?}")))
    };
    let mut records = Vec::new();
    for (k, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let lineno = k + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Format(format!(
                "line {lineno}: expected 6 fields, got {}",
                fields.len()
            )));
        }
        let required = |v: Option<f64>| v.ok_or_else(|| Error::Format(format!("line {lineno}: missing value")));
        records.push(GenerationRecord {
            generation: fields[0]
                .parse()
                .map_err(|_| Error::Format(format!("line {lineno}: bad generation {:?}", fields[0])))?,
            best_fitness: required(num(fields[1], lineno)?)?,
            mean_fitness: required(num(fields[2], lineno)?)?,
            best_r_distance: num(fields[3], lineno)?,
            best_r_position: num(fields[4], lineno)?,
            sigma: num(fields[5], lineno)?,
        });
    }
    Ok(records)
}

/// Initial genomes drawn from the controller's own initializer.
pub fn p2i_initializer(arch: &ArchConfig) -> impl Fn(u64) -> Genome + '_ {
    move |seed| {
        new_model(arch, seed)
            .expect("architecture validated before the run")
            .flatten()
    }
}

// Seed-derivation tags.
const TAG_INIT: u64 = 1;
const TAG_EVAL: u64 = 2;
const TAG_MUTATE: u64 = 3;
const TAG_SELECT: u64 = 4;
const TAG_REEVAL: u64 = 5;
