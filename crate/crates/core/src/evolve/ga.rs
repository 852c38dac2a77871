use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    arithmetic_crossover, mutate_gaussian_with_rate, p2i_initializer, tournament_select, Aborted, Evaluation,
    EvolutionLog, Fitness, GenerationRecord, TAG_EVAL, TAG_INIT, TAG_MUTATE, TAG_SELECT,
};
use crate::error::{Error, Result};
use crate::p2i::{ArchConfig, Genome};
use crate::seed::mix_all;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub pop_size: usize,
    pub tournament_k: usize,
    pub mutation_sigma: f64,
    pub generations: usize,
    pub elitism: usize,
    pub crossover_rate: f64,
    /// Per-gene probability of receiving mutation noise.
    pub mutation_rate: f64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            pop_size: 20,
            tournament_k: 8,
            mutation_sigma: 0.1,
            generations: 50,
            elitism: 1,
            crossover_rate: 1.0,
            mutation_rate: 1.0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.pop_size == 0 {
            return bad("population must be non-empty".into());
        }
        if self.tournament_k == 0 || self.tournament_k > self.pop_size {
            return bad(format!(
                "tournament size {} not in 1..={}",
                self.tournament_k, self.pop_size
            ));
        }
        if self.elitism >= self.pop_size {
            return bad(format!(
                "elitism {} must be below the population size {}",
                self.elitism, self.pop_size
            ));
        }
        if !(self.mutation_sigma > 0.0 && self.mutation_sigma.is_finite()) {
            return bad(format!("mutation_sigma must be positive, got {}", self.mutation_sigma));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) || !(0.0..=1.0).contains(&self.mutation_rate) {
            return bad("crossover_rate and mutation_rate must lie in [0, 1]".into());
        }
        Ok(())
    }

    /// Fitness evaluations used by a full run (elites are not re-scored).
    pub fn evaluation_budget(&self) -> usize {
        self.pop_size + self.generations * (self.pop_size - self.elitism)
    }
}

pub fn run_ga(cfg: &GaConfig, arch: &ArchConfig, fitness: &impl Fitness, seed: u64) -> Result<EvolutionLog, Aborted> {
    if let Err(error) = arch.validate() {
        return Err(Aborted {
            partial: Box::new(EvolutionLog {
                records: Vec::new(),
                best_genome: Genome::zeros(0),
                best: Evaluation::scalar(f64::NEG_INFINITY),
                evaluations: 0,
            }),
            error,
        });
    }
    run_ga_with(cfg, p2i_initializer(arch), fitness, seed)
}

fn summarize(generation: usize, evals: &[Evaluation]) -> (usize, GenerationRecord) {
    let best = (0..evals.len())
        .reduce(|b, i| if evals[i].fitness > evals[b].fitness { i } else { b })
        .expect("non-empty population");
    let mean = evals.iter().map(|e| e.fitness).sum::<f64>() / evals.len() as f64;
    let record = GenerationRecord {
        generation,
        best_fitness: evals[best].fitness,
        mean_fitness: mean,
        best_r_distance: evals[best].r_distance,
        best_r_position: evals[best].r_position,
        sigma: None,
    };
    (best, record)
}

/// Evaluate `genomes` in parallel; results come back in index order.
fn evaluate_all(
    genomes: &[Genome],
    fitness: &impl Fitness,
    seed: u64,
    generation: u64,
    offset: usize,
) -> Result<Vec<Evaluation>> {
    genomes
        .par_iter()
        .enumerate()
        .map(|(i, g)| fitness.evaluate(g, mix_all(seed, &[TAG_EVAL, generation, (offset + i) as u64])))
        .collect()
}

/// Generational GA with elitism from a caller-supplied initializer.
pub fn run_ga_with(
    cfg: &GaConfig,
    init: impl Fn(u64) -> Genome,
    fitness: &impl Fitness,
    seed: u64,
) -> Result<EvolutionLog, Aborted> {
    let mut population: Vec<Genome> = (0..cfg.pop_size as u64)
        .map(|i| init(mix_all(seed, &[TAG_INIT, i])))
        .collect();
    let mut log = EvolutionLog {
        records: Vec::new(),
        best_genome: population[0].clone(),
        best: Evaluation::scalar(f64::NEG_INFINITY),
        evaluations: 0,
    };
    macro_rules! attempt {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => {
                    return Err(Aborted {
                        partial: Box::new(log),
                        error,
                    })
                }
            }
        };
    }
    attempt!(cfg.validate());

    let mut evals = attempt!(evaluate_all(&population, fitness, seed, 0, 0));
    log.evaluations = evals.len();
    let (best, record) = summarize(0, &evals);
    log.records.push(record);
    log.best = evals[best];
    log.best_genome = population[best].clone();

    for g in 1..=cfg.generations as u64 {
        let fits: Vec<f64> = evals.iter().map(|e| e.fitness).collect();
        let mut ranked: Vec<usize> = (0..population.len()).collect();
        // Stable sort keeps the lower index first among equal fitness.
        ranked.sort_by(|&a, &b| fits[b].total_cmp(&fits[a]));

        let mut next: Vec<Genome> = ranked[..cfg.elitism].iter().map(|&i| population[i].clone()).collect();
        let mut next_evals: Vec<Evaluation> = ranked[..cfg.elitism].iter().map(|&i| evals[i]).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(mix_all(seed, &[TAG_SELECT, g]));
        let mut children = Vec::with_capacity(cfg.pop_size - cfg.elitism);
        for c in 0..(cfg.pop_size - cfg.elitism) as u64 {
            let a = attempt!(tournament_select(&fits, cfg.tournament_k, &mut rng));
            let b = attempt!(tournament_select(&fits, cfg.tournament_k, &mut rng));
            let alpha: f64 = rng.random_range(0.0..=1.0);
            let child = if rng.random_bool(cfg.crossover_rate) {
                attempt!(arithmetic_crossover(&population[a], &population[b], alpha))
            } else {
                population[a].clone()
            };
            children.push(attempt!(mutate_gaussian_with_rate(
                &child,
                cfg.mutation_sigma,
                cfg.mutation_rate,
                mix_all(seed, &[TAG_MUTATE, g, c])
            )));
        }
        let child_evals = attempt!(evaluate_all(&children, fitness, seed, g, cfg.elitism));
        log.evaluations += child_evals.len();
        next.extend(children);
        next_evals.extend(child_evals);
        population = next;
        evals = next_evals;

        let (best, record) = summarize(g as usize, &evals);
        log.records.push(record);
        log.best = evals[best];
        log.best_genome = population[best].clone();
    }
    Ok(log)
}
