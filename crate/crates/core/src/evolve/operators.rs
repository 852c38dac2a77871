use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::p2i::Genome;

/// Add i.i.d. `N(0, sigma^2)` noise to every entry.
pub fn mutate_gaussian(genome: &Genome, sigma: f64, seed: u64) -> Result<Genome> {
    mutate_gaussian_with_rate(genome, sigma, 1.0, seed)
}

/// Add `N(0, sigma^2)` noise to each entry independently with probability
/// `rate`. At `rate == 1` no Bernoulli draws are made.
pub fn mutate_gaussian_with_rate(genome: &Genome, sigma: f64, rate: f64, seed: u64) -> Result<Genome> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Contract(format!("mutation sigma must be positive, got {sigma}")));
    }
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Contract(format!("mutation rate must lie in [0, 1], got {rate}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    let values = genome
        .as_slice()
        .iter()
        .map(|&v| {
            if rate >= 1.0 || rng.random_bool(rate) {
                v + normal.sample(&mut rng)
            } else {
                v
            }
        })
        .collect();
    Genome::new(values)
}

/// Draw `k` distinct indices uniformly and return the fittest, the lowest
/// index winning ties.
pub fn tournament_select<R: Rng + ?Sized>(fitnesses: &[f64], k: usize, rng: &mut R) -> Result<usize> {
    let n = fitnesses.len();
    if k == 0 || k > n {
        return Err(Error::Input(format!("tournament size {k} not in 1..={n}")));
    }
    let winner = sample(rng, n, k)
        .into_iter()
        .reduce(|best, i| {
            if fitnesses[i] > fitnesses[best] || (fitnesses[i] == fitnesses[best] && i < best) {
                i
            } else {
                best
            }
        })
        .expect("k >= 1");
    Ok(winner)
}

/// `alpha * p1 + (1 - alpha) * p2`, elementwise.
pub fn arithmetic_crossover(p1: &Genome, p2: &Genome, alpha: f64) -> Result<Genome> {
    if p1.len() != p2.len() {
        return Err(Error::Input(format!(
            "crossover parents differ in length: {} vs {}",
            p1.len(),
            p2.len()
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Input(format!("crossover alpha must lie in [0, 1], got {alpha}")));
    }
    let values = p1
        .as_slice()
        .iter()
        .zip(p2.as_slice())
        .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
        .collect();
    Genome::new(values)
}
