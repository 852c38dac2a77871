use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{
    mutate_gaussian, p2i_initializer, Aborted, Evaluation, EvolutionLog, Fitness, GenerationRecord, TAG_EVAL, TAG_INIT,
    TAG_MUTATE, TAG_REEVAL,
};
use crate::error::{Error, Result};
use crate::p2i::{ArchConfig, Genome};
use crate::seed::mix_all;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EsConfig {
    pub sigma0: f64,
    pub p_target: f64,
    pub window: usize,
    pub generations: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub shrink: f64,
    pub grow: f64,
    /// Re-score the parent every generation instead of keeping its first score.
    pub reevaluate_parent: bool,
}

impl Default for EsConfig {
    fn default() -> Self {
        EsConfig {
            sigma0: 0.1,
            p_target: 0.2,
            window: 5,
            generations: 30,
            sigma_min: 1e-6,
            sigma_max: 5.0,
            shrink: 0.9,
            grow: 1.1,
            reevaluate_parent: false,
        }
    }
}

impl EsConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0 < self.sigma_min && self.sigma_min < self.sigma_max) {
            return bad(format!(
                "need 0 < sigma_min < sigma_max, got [{}, {}]",
                self.sigma_min, self.sigma_max
            ));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return bad(format!("sigma0 must be positive, got {}", self.sigma0));
        }
        if !(0.0 < self.p_target && self.p_target < 1.0) {
            return bad(format!("p_target must lie in (0, 1), got {}", self.p_target));
        }
        if self.window == 0 {
            return bad("success window must hold at least one entry".into());
        }
        if !(self.shrink > 0.0 && self.grow > 0.0) {
            return bad("step-size factors must be positive".into());
        }
        Ok(())
    }
}

/// The most recent success/failure outcomes, at most `capacity` of them.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessWindow {
    outcomes: VecDeque<bool>,
    capacity: usize,
}

impl SuccessWindow {
    pub fn new(capacity: usize) -> Self {
        SuccessWindow {
            outcomes: VecDeque::with_capacity(capacity + 1),
            capacity,
        }
    }

    pub fn from_outcomes(capacity: usize, outcomes: &[bool]) -> Self {
        let mut w = Self::new(capacity);
        outcomes.iter().for_each(|&o| w.push(o));
        w
    }

    /// Append an outcome, dropping the oldest when over capacity.
    pub fn push(&mut self, success: bool) {
        self.outcomes.push_back(success);
        if self.outcomes.len() > self.capacity {
            self.outcomes.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn success_rate(&self) -> Option<f64> {
        if self.outcomes.is_empty() {
            return None;
        }
        let hits = self.outcomes.iter().filter(|&&s| s).count();
        Some(hits as f64 / self.outcomes.len() as f64)
    }
}

/// Shrink `sigma` when the windowed success rate exceeds the target,
/// otherwise grow it, then clamp to `[sigma_min, sigma_max]`.
pub fn adapt_step_size(sigma: f64, window: &SuccessWindow, cfg: &EsConfig) -> Result<f64> {
    let rate = window
        .success_rate()
        .ok_or_else(|| Error::Contract("step-size adaptation on an empty success window".into()))?;
    let next = if rate > cfg.p_target {
        sigma * cfg.shrink
    } else {
        sigma * cfg.grow
    };
    Ok(next.clamp(cfg.sigma_min, cfg.sigma_max))
}

/// (1+1)-ES with initial genomes from the controller initializer.
pub fn run_es(cfg: &EsConfig, arch: &ArchConfig, fitness: &impl Fitness, seed: u64) -> Result<EvolutionLog, Aborted> {
    if let Err(error) = arch.validate() {
        return Err(Aborted {
            partial: Box::new(empty_log(Genome::zeros(0))),
            error,
        });
    }
    run_es_with(cfg, p2i_initializer(arch), fitness, seed)
}

fn empty_log(genome: Genome) -> EvolutionLog {
    EvolutionLog {
        records: Vec::new(),
        best_genome: genome,
        best: Evaluation::scalar(f64::NEG_INFINITY),
        evaluations: 0,
    }
}

/// (1+1)-ES from a caller-supplied initializer (`seed -> genome`).
pub fn run_es_with(
    cfg: &EsConfig,
    init: impl Fn(u64) -> Genome,
    fitness: &impl Fitness,
    seed: u64,
) -> Result<EvolutionLog, Aborted> {
    let mut parent = init(mix_all(seed, &[TAG_INIT, 0]));
    let mut log = empty_log(parent.clone());
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

    let mut parent_eval = attempt!(fitness.evaluate(&parent, mix_all(seed, &[TAG_EVAL, 0])));
    log.evaluations = 1;
    let mut sigma = cfg.sigma0;
    let mut window = SuccessWindow::new(cfg.window);
    let record = |generation, best: &Evaluation, mean, sigma| GenerationRecord {
        generation,
        best_fitness: best.fitness,
        mean_fitness: mean,
        best_r_distance: best.r_distance,
        best_r_position: best.r_position,
        sigma: Some(sigma),
    };
    log.records.push(record(0, &parent_eval, parent_eval.fitness, sigma));
    log.best = parent_eval;

    for g in 1..=cfg.generations as u64 {
        if cfg.reevaluate_parent {
            parent_eval = attempt!(fitness.evaluate(&parent, mix_all(seed, &[TAG_REEVAL, g])));
            log.evaluations += 1;
        }
        let offspring = attempt!(mutate_gaussian(&parent, sigma, mix_all(seed, &[TAG_MUTATE, g])));
        let offspring_eval = attempt!(fitness.evaluate(&offspring, mix_all(seed, &[TAG_EVAL, g])));
        log.evaluations += 1;
        let mean = 0.5 * (parent_eval.fitness + offspring_eval.fitness);
        let success = offspring_eval.fitness >= parent_eval.fitness;
        if success {
            parent = offspring;
            parent_eval = offspring_eval;
        }
        window.push(success);
        sigma = attempt!(adapt_step_size(sigma, &window, cfg));
        log.records.push(record(g as usize, &parent_eval, mean, sigma));
        log.best = parent_eval;
        log.best_genome = parent.clone();
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn window(bits: &[u8]) -> SuccessWindow {
        SuccessWindow::from_outcomes(5, &bits.iter().map(|&b| b == 1).collect::<Vec<_>>())
    }

    fn sphere(g: &Genome, _seed: u64) -> Result<Evaluation> {
        Ok(Evaluation::scalar(-g.norm_sq()))
    }

    fn gaussian_init(seed: u64) -> Genome {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Genome::new((0..10).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn adaptation_table() {
        let cfg = EsConfig::default();
        let shrunk = adapt_step_size(0.1, &window(&[1, 1, 0, 0, 0]), &cfg).unwrap();
        assert_eq!(shrunk, 0.1 * 0.9);
        assert!((shrunk - 0.09).abs() < 1e-15);
        let grown = adapt_step_size(0.1, &window(&[0, 0, 0, 0, 0]), &cfg).unwrap();
        assert_eq!(grown, 0.1 * 1.1);
        assert_eq!(adapt_step_size(4.8, &window(&[0, 0, 0, 0, 0]), &cfg).unwrap(), 5.0);
        assert_eq!(adapt_step_size(1.05e-6, &window(&[1, 1, 1, 1, 1]), &cfg).unwrap(), 1e-6);
        // p == p_target falls on the grow side.
        assert_eq!(
            adapt_step_size(0.1, &window(&[1, 0, 0, 0, 0]), &cfg).unwrap(),
            0.1 * 1.1
        );
        assert!(matches!(
            adapt_step_size(0.1, &SuccessWindow::new(5), &cfg),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn window_keeps_most_recent() {
        let w = window(&[1, 1, 1, 1, 1, 0, 0, 0]);
        assert_eq!(w.len(), 5);
        assert_eq!(w.success_rate(), Some(0.4));
    }

    #[test]
    fn constant_fitness_accepts_everything() {
        let cfg = EsConfig {
            generations: 200,
            ..EsConfig::default()
        };
        let flat = |_: &Genome, _: u64| Ok(Evaluation::scalar(1.0));
        let log = run_es_with(&cfg, gaussian_init, &flat, 3).unwrap();
        assert_eq!(log.records.len(), 201);
        let sigmas: Vec<f64> = log.records.iter().map(|r| r.sigma.unwrap()).collect();
        for w in sigmas.windows(2) {
            assert!(w[1] == (w[0] * 0.9).max(1e-6), "{w:?}");
        }
        assert_eq!(*sigmas.last().unwrap(), 1e-6);
        assert_ne!(log.best_genome, gaussian_init(mix_all(3, &[TAG_INIT, 0])));
    }

    #[test]
    fn zero_generations() {
        let cfg = EsConfig {
            generations: 0,
            ..EsConfig::default()
        };
        let log = run_es_with(&cfg, gaussian_init, &sphere, 1).unwrap();
        assert_eq!(log.records.len(), 1);
        assert_eq!(log.records[0].generation, 0);
        assert_eq!(log.evaluations, 1);
    }

    #[test]
    fn sphere_improves_monotonically() {
        let cfg = EsConfig {
            generations: 200,
            ..EsConfig::default()
        };
        for seed in 0..10 {
            let log = run_es_with(&cfg, gaussian_init, &sphere, seed).unwrap();
            let curve = log.best_fitness_curve();
            assert!(curve.windows(2).all(|w| w[1] >= w[0]));
            assert!(curve[200] > curve[0]);
            assert_eq!(log.best.fitness, sphere(&log.best_genome, 0).unwrap().fitness);
            let sigmas = log.records.iter().map(|r| r.sigma.unwrap());
            assert!(sigmas.clone().all(|s| (1e-6..=5.0).contains(&s)));
        }
    }

    #[test]
    fn reproducible_and_parent_cached() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let calls = AtomicUsize::new(0);
        let counting = |g: &Genome, s: u64| {
            calls.fetch_add(1, Ordering::Relaxed);
            sphere(g, s)
        };
        let cfg = EsConfig {
            generations: 25,
            ..EsConfig::default()
        };
        let a = run_es_with(&cfg, gaussian_init, &counting, 8).unwrap();
        assert_eq!(calls.load(Ordering::Relaxed), 26);
        assert_eq!(a.evaluations, 26);
        let b = run_es_with(&cfg, gaussian_init, &sphere, 8).unwrap();
        assert_eq!(a, b);

        let re = EsConfig {
            reevaluate_parent: true,
            ..cfg
        };
        assert_eq!(run_es_with(&re, gaussian_init, &sphere, 8).unwrap().evaluations, 51);
    }

    #[test]
    fn fitness_error_aborts_with_partial_log() {
        let cfg = EsConfig {
            generations: 10,
            ..EsConfig::default()
        };
        let failing = |_: &Genome, s: u64| {
            if s == mix_all(4, &[TAG_EVAL, 3]) {
                Err(Error::Evaluator("boom".into()))
            } else {
                Ok(Evaluation::scalar(0.0))
            }
        };
        let aborted = run_es_with(&cfg, gaussian_init, &failing, 4).unwrap_err();
        assert_eq!(aborted.partial.records.len(), 3);
        assert!(matches!(aborted.error, Error::Evaluator(_)));
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = EsConfig {
            sigma_min: 1.0,
            sigma_max: 0.5,
            ..EsConfig::default()
        };
        assert!(matches!(
            run_es_with(&cfg, gaussian_init, &sphere, 0).unwrap_err().error,
            Error::Config(_)
        ));
    }
}
