//! Dynamics-to-response evaluation: label an episode as clustering or
//! scattering, compare against the prompt and aggregate binary rewards.
//!
//! Two criteria are scored per epoch. The distance criterion reads the
//! trend of the average-pairwise-distance series; the position criterion
//! reads the final layout. By default both are decided by deterministic
//! oracle classifiers; an external vision-language service can be plugged
//! in through [`external::ExternalEvaluator`].

pub mod external;
pub mod render;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedder, PromptEmbedding};
use crate::error::{Error, Result};
use crate::evolve::{Evaluation, Fitness};
use crate::p2i::{load_weights, ArchConfig, Genome};
use crate::seed::mix;
use crate::sim::{run_episode, SimConfig, Trajectory, VectorField};
use crate::stats::linreg_slope;
use crate::Vec2;

use external::ExternalEvaluator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BehaviorLabel {
    Clustering,
    Scattering,
}

impl BehaviorLabel {
    pub fn opposite(self) -> Self {
        match self {
            BehaviorLabel::Clustering => BehaviorLabel::Scattering,
            BehaviorLabel::Scattering => BehaviorLabel::Clustering,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BehaviorLabel::Clustering => "clustering",
            BehaviorLabel::Scattering => "scattering",
        }
    }
}

impl fmt::Display for BehaviorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BehaviorLabel {
    type Err = Error;

    /// Accepts exactly the two label words, in any case.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "clustering" => Ok(BehaviorLabel::Clustering),
            "scattering" => Ok(BehaviorLabel::Scattering),
            other => Err(Error::Evaluator(format!(
                "reply {other:?} is neither clustering nor scattering"
            ))),
        }
    }
}

/// Target behavior named by a prompt: "cluster*" means clustering,
/// "scatter*" or "spread" means scattering. Matching is a case-insensitive
/// substring test; prompts naming neither, or both, are rejected.
pub fn target_label(prompt: &str) -> Result<BehaviorLabel> {
    let p = prompt.to_lowercase();
    let cluster = p.contains("cluster");
    let scatter = p.contains("scatter") || p.contains("spread");
    match (cluster, scatter) {
        (true, false) => Ok(BehaviorLabel::Clustering),
        (false, true) => Ok(BehaviorLabel::Scattering),
        (true, true) => Err(Error::Config(format!("prompt {prompt:?} names both behaviors"))),
        (false, false) => Err(Error::Config(format!("prompt {prompt:?} names no known behavior"))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluatorMode {
    #[default]
    Oracle,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub epochs: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Normalized slope (fraction of the initial distance per step) below
    /// whose negative a series counts as clustering.
    pub slope_threshold: f64,
    /// Linkage radius in units of one cell diameter.
    pub cluster_link_factor: f64,
    pub evaluator: EvaluatorMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            epochs: 30,
            alpha: 0.5,
            beta: 0.5,
            slope_threshold: 1e-4,
            cluster_link_factor: 3.0,
            evaluator: EvaluatorMode::Oracle,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("at least one epoch is required".into());
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && (self.alpha + self.beta - 1.0).abs() < 1e-12) {
            return bad(format!(
                "alpha and beta must be non-negative and sum to 1, got {} + {}",
                self.alpha, self.beta
            ));
        }
        if !(self.slope_threshold > 0.0 && self.cluster_link_factor > 0.0) {
            return bad("thresholds must be positive".into());
        }
        Ok(())
    }

    pub fn link_radius(&self, sim: &SimConfig) -> f64 {
        self.cluster_link_factor * 2.0 * sim.radius
    }
}

/// Least-squares slope of the series, relative to its first value.
pub fn normalized_slope(series: &[f64]) -> Result<f64> {
    if series.len() < 2 {
        return Err(Error::Input(format!(
            "trend needs at least 2 points, got {}",
            series.len()
        )));
    }
    if series[0].is_nan() || series[0] <= 0.0 {
        return Err(Error::Input(format!(
            "trend needs a positive initial value, got {}",
            series[0]
        )));
    }
    Ok(linreg_slope(series)? / series[0])
}

pub fn classify_distance_trend(series: &[f64], cfg: &EvalConfig) -> Result<BehaviorLabel> {
    Ok(if normalized_slope(series)? < -cfg.slope_threshold {
        BehaviorLabel::Clustering
    } else {
        BehaviorLabel::Scattering
    })
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Number of connected components of the graph linking positions at
/// distance `<= link_radius`.
pub fn linkage_components(positions: &[Vec2], link_radius: f64) -> usize {
    let n = positions.len();
    let mut parent: Vec<usize> = (0..n).collect();
    let mut components = n;
    let r_sq = link_radius * link_radius;
    for i in 0..n {
        for j in (i + 1)..n {
            if (positions[i] - positions[j]).norm_sq() <= r_sq {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                    components -= 1;
                }
            }
        }
    }
    components
}

/// Clustering iff every cell belongs to one linkage component.
pub fn classify_final_layout(positions: &[Vec2], cfg: &EvalConfig, sim: &SimConfig) -> Result<BehaviorLabel> {
    if positions.len() < 2 {
        return Err(Error::Input(format!(
            "layout needs at least 2 cells, got {}",
            positions.len()
        )));
    }
    Ok(if linkage_components(positions, cfg.link_radius(sim)) == 1 {
        BehaviorLabel::Clustering
    } else {
        BehaviorLabel::Scattering
    })
}

/// Per-criterion binary match against the target.
pub fn epoch_reward(target: BehaviorLabel, trend: BehaviorLabel, layout: BehaviorLabel) -> (u8, u8) {
    (u8::from(trend == target), u8::from(layout == target))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitnessReport {
    pub r_distance: f64,
    pub r_position: f64,
    pub r_combined: f64,
    pub per_epoch: Vec<(u8, u8)>,
    /// External-evaluator failures, each scored as a zero reward.
    pub incidents: Vec<String>,
}

impl FitnessReport {
    pub fn from_epochs(per_epoch: Vec<(u8, u8)>, cfg: &EvalConfig) -> Result<Self> {
        if per_epoch.is_empty() {
            return Err(Error::Input("no epochs to aggregate".into()));
        }
        let e = per_epoch.len() as f64;
        let r_distance = per_epoch.iter().map(|p| f64::from(p.0)).sum::<f64>() / e;
        let r_position = per_epoch.iter().map(|p| f64::from(p.1)).sum::<f64>() / e;
        Ok(FitnessReport {
            r_distance,
            r_position,
            r_combined: cfg.alpha * r_distance + cfg.beta * r_position,
            per_epoch,
            incidents: Vec::new(),
        })
    }

    pub fn evaluation(&self) -> Evaluation {
        Evaluation {
            fitness: self.r_combined,
            r_distance: Some(self.r_distance),
            r_position: Some(self.r_position),
        }
    }
}

/// Labels for one epoch; errors are scored as mismatches.
pub struct EpochLabels {
    pub trend: Result<BehaviorLabel>,
    pub layout: Result<BehaviorLabel>,
}

/// Something that reads an episode and names the behavior it shows.
pub trait BehaviorClassifier: Sync {
    fn classify(&self, trajectory: &Trajectory, field: &VectorField, sim: &SimConfig, cfg: &EvalConfig) -> EpochLabels;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OracleClassifier;

impl BehaviorClassifier for OracleClassifier {
    fn classify(&self, t: &Trajectory, _field: &VectorField, sim: &SimConfig, cfg: &EvalConfig) -> EpochLabels {
        EpochLabels {
            trend: classify_distance_trend(&t.d_avg_series, cfg),
            layout: classify_final_layout(&t.final_positions, cfg, sim),
        }
    }
}

/// Scores genomes against one prompt. Implements [`Fitness`] so it plugs
/// straight into the optimizers.
pub struct PromptFitness {
    pub prompt: String,
    pub target: BehaviorLabel,
    pub embedding: PromptEmbedding,
    pub arch: ArchConfig,
    pub sim: SimConfig,
    pub eval: EvalConfig,
    external: Option<ExternalEvaluator>,
}

impl PromptFitness {
    pub fn new(prompt: &str, arch: &ArchConfig, sim: &SimConfig, eval: &EvalConfig) -> Result<Self> {
        Self::with_embedder(prompt, arch, sim, eval, &Embedder::new())
    }

    pub fn with_embedder(
        prompt: &str,
        arch: &ArchConfig,
        sim: &SimConfig,
        eval: &EvalConfig,
        embedder: &Embedder,
    ) -> Result<Self> {
        arch.validate()?;
        sim.validate()?;
        eval.validate()?;
        let embedding = embedder.embed(prompt)?;
        if embedding.vector().len() != arch.input_dim {
            return Err(Error::Config(format!(
                "embedding dimension {} does not match controller input {}",
                embedding.vector().len(),
                arch.input_dim
            )));
        }
        if eval.evaluator == EvaluatorMode::External {
            return Err(Error::Config(
                "external evaluator mode requires an endpoint; use with_external".into(),
            ));
        }
        Ok(PromptFitness {
            prompt: prompt.to_string(),
            target: target_label(prompt)?,
            embedding,
            arch: arch.clone(),
            sim: sim.clone(),
            eval: eval.clone(),
            external: None,
        })
    }

    /// Route classification through an external evaluator.
    pub fn with_external(mut self, evaluator: ExternalEvaluator) -> Self {
        self.eval.evaluator = EvaluatorMode::External;
        self.external = Some(evaluator);
        self
    }

    pub fn field_for(&self, genome: &Genome) -> Result<VectorField> {
        load_weights(&self.arch, genome)?.forward(&self.embedding)
    }

    /// Run every epoch and aggregate the rewards. Epochs run in parallel and
    /// are reduced in epoch order.
    pub fn report(&self, genome: &Genome, base_seed: u64) -> Result<FitnessReport> {
        let field = self.field_for(genome)?;
        let classifier: &dyn BehaviorClassifier = match &self.external {
            Some(ext) => ext,
            None => &OracleClassifier,
        };
        let epochs: Vec<(u8, u8, Vec<String>)> = (1..=self.eval.epochs as u64)
            .into_par_iter()
            .map(|i| {
                let trajectory = run_episode(epoch_seed(base_seed, i), &field, &self.sim)?;
                let labels = classifier.classify(&trajectory, &field, &self.sim, &self.eval);
                let mut incidents = Vec::new();
                let mut score = |label: Result<BehaviorLabel>, criterion: &str| match label {
                    Ok(l) => u8::from(l == self.target),
                    Err(e) => {
                        incidents.push(format!("epoch {i} {criterion}: {e}"));
                        0
                    }
                };
                let r_dist = score(labels.trend, "distance");
                let r_pos = score(labels.layout, "position");
                Ok((r_dist, r_pos, incidents))
            })
            .collect::<Result<_>>()?;
        let mut incidents = Vec::new();
        let pairs = epochs
            .into_iter()
            .map(|(d, p, inc)| {
                incidents.extend(inc);
                (d, p)
            })
            .collect();
        let mut report = FitnessReport::from_epochs(pairs, &self.eval)?;
        report.incidents = incidents;
        Ok(report)
    }
}

impl Fitness for PromptFitness {
    fn evaluate(&self, genome: &Genome, seed: u64) -> Result<Evaluation> {
        Ok(self.report(genome, seed)?.evaluation())
    }
}

/// Seed of epoch `index` (1-based) within an evaluation.
pub fn epoch_seed(base_seed: u64, index: u64) -> u64 {
    mix(base_seed, index)
}

/// Score `genome` on `prompt` with the oracle evaluator.
pub fn evaluate_fitness(
    genome: &Genome,
    prompt: &str,
    arch: &ArchConfig,
    sim: &SimConfig,
    cfg: &EvalConfig,
    base_seed: u64,
) -> Result<FitnessReport> {
    PromptFitness::new(prompt, arch, sim, cfg)?.report(genome, base_seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::p2i::param_count;
    use proptest::prelude::*;

    fn cfg() -> EvalConfig {
        EvalConfig::default()
    }

    #[test]
    fn prompt_mapping() {
        assert_eq!(target_label("Cluster!").unwrap(), BehaviorLabel::Clustering);
        assert_eq!(target_label("clustering slowly").unwrap(), BehaviorLabel::Clustering);
        assert_eq!(target_label("SCATTER").unwrap(), BehaviorLabel::Scattering);
        assert_eq!(target_label("spread out").unwrap(), BehaviorLabel::Scattering);
        assert!(matches!(target_label("dance"), Err(Error::Config(_))));
        assert!(matches!(target_label("cluster then scatter"), Err(Error::Config(_))));
    }

    #[test]
    fn trend_classification() {
        let down: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        assert_eq!(
            classify_distance_trend(&down, &cfg()).unwrap(),
            BehaviorLabel::Clustering
        );
        assert_eq!(
            classify_distance_trend(&[5.0; 50], &cfg()).unwrap(),
            BehaviorLabel::Scattering
        );
        let up: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(classify_distance_trend(&up, &cfg()).unwrap(), BehaviorLabel::Scattering);
        assert!(matches!(classify_distance_trend(&[1.0], &cfg()), Err(Error::Input(_))));
        assert!(classify_distance_trend(&[0.0, 1.0], &cfg()).is_err());
    }

    #[test]
    fn layout_classification() {
        let sim = SimConfig::default();
        let tight: Vec<Vec2> = (0..10).map(|k| Vec2::new(100.0 + k as f64, 100.0)).collect();
        assert_eq!(
            classify_final_layout(&tight, &cfg(), &sim).unwrap(),
            BehaviorLabel::Clustering
        );

        let mut groups = tight.clone();
        groups.extend((0..10).map(|k| Vec2::new(300.0 + k as f64, 100.0)));
        assert_eq!(linkage_components(&groups, 30.0), 2);
        assert_eq!(
            classify_final_layout(&groups, &cfg(), &sim).unwrap(),
            BehaviorLabel::Scattering
        );

        let pair = [Vec2::new(0.0, 0.0), Vec2::new(30.0, 0.0)];
        assert_eq!(
            classify_final_layout(&pair, &cfg(), &sim).unwrap(),
            BehaviorLabel::Clustering
        );
        let apart = [Vec2::new(0.0, 0.0), Vec2::new(30.000001, 0.0)];
        assert_eq!(
            classify_final_layout(&apart, &cfg(), &sim).unwrap(),
            BehaviorLabel::Scattering
        );
        assert!(classify_final_layout(&pair[..1], &cfg(), &sim).is_err());
    }

    #[test]
    fn rewards() {
        use BehaviorLabel::*;
        assert_eq!(epoch_reward(Clustering, Clustering, Clustering), (1, 1));
        assert_eq!(epoch_reward(Clustering, Clustering, Scattering), (1, 0));
        assert_eq!(epoch_reward(Scattering, Clustering, Clustering), (0, 0));
        for t in [Clustering, Scattering] {
            for l in [Clustering, Scattering] {
                for target in [Clustering, Scattering] {
                    let (a, b) = epoch_reward(target, t, l);
                    let (c, d) = epoch_reward(target.opposite(), t, l);
                    assert_eq!((a + c, b + d), (1, 1));
                }
            }
        }
    }

    #[test]
    fn aggregation() {
        let r = FitnessReport::from_epochs(vec![(1, 1), (1, 0), (0, 0), (1, 1)], &cfg()).unwrap();
        assert_eq!((r.r_distance, r.r_position, r.r_combined), (0.75, 0.5, 0.625));
        let r = FitnessReport::from_epochs(vec![(1, 0)], &cfg()).unwrap();
        assert_eq!(r.r_combined, 0.5);
        assert!(FitnessReport::from_epochs(vec![], &cfg()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(EvalConfig { alpha: 0.7, ..cfg() }.validate().is_err());
        assert!(EvalConfig { epochs: 0, ..cfg() }.validate().is_err());
        assert!(EvalConfig {
            slope_threshold: 0.0,
            ..cfg()
        }
        .validate()
        .is_err());
        assert!(EvalConfig {
            alpha: 0.25,
            beta: 0.75,
            ..cfg()
        }
        .validate()
        .is_ok());
    }

    /// Genome whose output layer is zero except the biases, which encode
    /// `flat` directly.
    fn constant_genome(arch: &ArchConfig, flat: &[f64]) -> Genome {
        let mut values = vec![0.0; param_count(arch)];
        let len = values.len();
        values[len - flat.len()..].copy_from_slice(flat);
        Genome::new(values).unwrap()
    }

    #[test]
    fn inward_field_scores_perfectly() {
        let arch = ArchConfig::for_grid(2);
        // Node order: (col 0,row 0), (1,0), (0,1), (1,1); each points at the center.
        let g = 3.0;
        let flat = [g, g, -g, g, g, -g, -g, -g];
        let genome = constant_genome(&arch, &flat);
        let eval = EvalConfig { epochs: 6, ..cfg() };
        let report = evaluate_fitness(&genome, "cluster", &arch, &SimConfig::default(), &eval, 11).unwrap();
        assert_eq!(report.r_combined, 1.0, "{report:?}");
        let again = evaluate_fitness(&genome, "cluster", &arch, &SimConfig::default(), &eval, 11).unwrap();
        assert_eq!(report, again);
        // Same behavior scored against the opposite prompt.
        let scatter = evaluate_fitness(&genome, "scatter", &arch, &SimConfig::default(), &eval, 11).unwrap();
        assert_eq!(scatter.r_combined, 0.0);
    }

    #[test]
    fn unknown_prompt_is_config_error() {
        let arch = ArchConfig::for_grid(2);
        let g = Genome::zeros(param_count(&arch));
        let err = evaluate_fitness(&g, "wiggle", &arch, &SimConfig::default(), &cfg(), 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    proptest! {
        #[test]
        fn layout_matches_brute_force(pts in proptest::collection::vec((0.0f64..120.0, 0.0f64..120.0), 2..=12)) {
            let positions: Vec<Vec2> = pts.into_iter().map(|(x, y)| Vec2::new(x, y)).collect();
            let n = positions.len();
            // Reachability closure from cell 0 by repeated relaxation.
            let mut reached = vec![false; n];
            reached[0] = true;
            loop {
                let mut changed = false;
                for i in 0..n {
                    for j in 0..n {
                        let d = ((positions[i].x - positions[j].x).powi(2) + (positions[i].y - positions[j].y).powi(2)).sqrt();
                        if reached[i] && !reached[j] && d <= 30.0 {
                            reached[j] = true;
                            changed = true;
                        }
                    }
                }
                if !changed { break; }
            }
            let brute = if reached.iter().all(|&r| r) { BehaviorLabel::Clustering } else { BehaviorLabel::Scattering };
            prop_assert_eq!(classify_final_layout(&positions, &cfg(), &SimConfig::default()).unwrap(), brute);
        }

        #[test]
        fn shrinking_keeps_clusters(pts in proptest::collection::vec((0.0f64..200.0, 0.0f64..200.0), 2..=12), factor in 0.0f64..1.0) {
            let positions: Vec<Vec2> = pts.into_iter().map(|(x, y)| Vec2::new(x, y)).collect();
            let sim = SimConfig::default();
            let centroid = positions.iter().fold(Vec2::ZERO, |a, &p| a + p) * (1.0 / positions.len() as f64);
            let shrunk: Vec<Vec2> = positions.iter().map(|&p| centroid + (p - centroid) * factor).collect();
            if classify_final_layout(&positions, &cfg(), &sim).unwrap() == BehaviorLabel::Clustering {
                prop_assert_eq!(classify_final_layout(&shrunk, &cfg(), &sim).unwrap(), BehaviorLabel::Clustering);
            }
        }
    }
}
