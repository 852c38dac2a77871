//! Paired significance testing, slopes and run aggregation.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::evolve::EvolutionLog;
use crate::io::fmt17;

/// Largest number of non-zero differences for which the exact null
/// distribution is enumerated.
pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSamples {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl PairedSamples {
    pub fn new(first: Vec<f64>, second: Vec<f64>) -> Result<Self> {
        if first.len() != second.len() {
            return Err(Error::Input(format!(
                "paired samples differ in length: {} vs {}",
                first.len(),
                second.len()
            )));
        }
        if first.iter().chain(&second).any(|v| !v.is_finite()) {
            return Err(Error::Input("paired samples must be finite".into()));
        }
        Ok(PairedSamples { first, second })
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// `second` tends to exceed `first`.
    Greater,
    /// `second` tends to fall below `first`.
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub p_value: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Number of non-zero differences used.
    pub n: usize,
    pub exact: bool,
}

/// Average ranks (1-based) of `values`, ties sharing the mean of their
/// positions. Also returns the tie-group sizes.
fn average_ranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        if end - start > 1 {
            ties.push(end - start);
        }
        start = end;
    }
    (ranks, ties)
}

/// Null distribution of the doubled positive-rank sum: `counts[s]` is the
/// number of sign assignments whose doubled `W+` equals `s`.
fn exact_counts(doubled_ranks: &[usize]) -> Vec<f64> {
    let total: usize = doubled_ranks.iter().sum();
    let mut counts = vec![0.0; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in doubled_ranks {
        reach += r;
        for s in (r..=reach).rev() {
            counts[s] += counts[s - r];
        }
    }
    counts
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn wilcoxon_signed_rank(samples: &PairedSamples) -> Result<WilcoxonResult> {
    wilcoxon_signed_rank_with(samples, Alternative::TwoSided)
}

/// Wilcoxon signed-rank test on `second - first`. Zero differences are
/// dropped; tied magnitudes get average ranks. Exact up to
/// [`EXACT_MAX_N`] usable pairs, otherwise a normal approximation with tie
/// and continuity corrections.
pub fn wilcoxon_signed_rank_with(samples: &PairedSamples, alternative: Alternative) -> Result<WilcoxonResult> {
    let diffs: Vec<f64> = samples
        .second
        .iter()
        .zip(&samples.first)
        .map(|(b, a)| b - a)
        .filter(|&d| d != 0.0)
        .collect();
    let n = diffs.len();
    if n < 5 {
        return Err(Error::InsufficientData(format!(
            "Wilcoxon test needs at least 5 non-zero differences, got {n} of {} pairs",
            samples.len()
        )));
    }
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = average_ranks(&magnitudes);
    let w_plus: f64 = ranks.iter().zip(&diffs).filter(|(_, &d)| d > 0.0).map(|(r, _)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let statistic = w_plus.min(w_minus);

    let exact = n <= EXACT_MAX_N;
    let p_value = if exact {
        // Average ranks are multiples of 1/2, so doubling makes them integral.
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let counts = exact_counts(&doubled);
        let all: f64 = counts.iter().sum();
        let observed = (2.0 * w_plus).round() as usize;
        let cdf = counts[..=observed].iter().sum::<f64>() / all;
        let sf = counts[observed..].iter().sum::<f64>() / all;
        match alternative {
            Alternative::TwoSided => (2.0 * cdf.min(sf)).min(1.0),
            Alternative::Greater => sf,
            Alternative::Less => cdf,
        }
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
        let sd = (nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term).sqrt();
        let z = |w: f64| {
            let centered = w - mean;
            let correction = if centered == 0.0 { 0.0 } else { 0.5 * centered.signum() };
            (centered - correction) / sd
        };
        match alternative {
            Alternative::TwoSided => (2.0 * normal_cdf(z(statistic))).min(1.0),
            Alternative::Greater => 1.0 - normal_cdf(z(w_plus)),
            Alternative::Less => normal_cdf(z(w_plus)),
        }
    };
    Ok(WilcoxonResult {
        statistic,
        p_value,
        w_plus,
        w_minus,
        n,
        exact,
    })
}

/// Ordinary least-squares slope of `series` against `0..len`.
pub fn linreg_slope(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 2 {
        return Err(Error::Input(format!("slope needs at least 2 points, got {n}")));
    }
    let x_mean = (n - 1) as f64 / 2.0;
    let y_mean = series.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &y) in series.iter().enumerate() {
        let dx = i as f64 - x_mean;
        sxy += dx * (y - y_mean);
        sxx += dx * dx;
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GenerationSummary {
    pub generation: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Per-index mean, population standard deviation, min and max across
/// equally long curves.
pub fn summarize_curves(curves: &[Vec<f64>]) -> Result<Vec<GenerationSummary>> {
    let first = curves
        .first()
        .ok_or_else(|| Error::Input("no curves to summarize".into()))?;
    if let Some(bad) = curves.iter().position(|c| c.len() != first.len()) {
        return Err(Error::Input(format!(
            "curve {bad} has {} points, expected {}",
            curves[bad].len(),
            first.len()
        )));
    }
    let count = curves.len() as f64;
    Ok((0..first.len())
        .map(|g| {
            let column = curves.iter().map(|c| c[g]);
            let mean = column.clone().sum::<f64>() / count;
            let var = column.clone().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
            GenerationSummary {
                generation: g,
                mean,
                std: var.sqrt(),
                min: column.clone().fold(f64::INFINITY, f64::min),
                max: column.fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect())
}

pub fn summarize_runs(logs: &[EvolutionLog]) -> Result<Vec<GenerationSummary>> {
    let curves: Vec<Vec<f64>> = logs.iter().map(|l| l.best_fitness_curve()).collect();
    summarize_curves(&curves)
}

/// CSV with header `generation,mean,std,min,max`.
pub fn summary_csv(rows: &[GenerationSummary]) -> String {
    let mut out = String::from("generation,mean,std,min,max\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.generation,
            fmt17(r.mean),
            fmt17(r.std),
            fmt17(r.min),
            fmt17(r.max)
        )
        .unwrap();
    }
    out
}
