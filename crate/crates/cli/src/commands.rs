use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use zapfield::d2r::external::{ExternalEvaluator, ENDPOINT_ENV};
use zapfield::d2r::render::{render_distance_plot, render_layout_plot};
use zapfield::d2r::{EvaluatorMode, PromptFitness};
use zapfield::embedding::{cosine_similarity, Embedder};
use zapfield::evolve::{parse_log_csv, run_es, run_ga, Aborted, EvolutionLog};
use zapfield::io::{fmt17, read_json, write_atomic, write_json_atomic};
use zapfield::p2i::{Genome, GenomeFile};
use zapfield::seed::mix_all;
use zapfield::sim::{run_episode, SimConfig, VectorField};
use zapfield::stats::{summarize_curves, summary_csv, wilcoxon_signed_rank_with, PairedSamples};
use zapfield::{Error, Vec2};

use crate::config::{ExperimentConfig, Optimizer};
use crate::{CompareArgs, EmbedArgs, EvaluateArgs, EvolveArgs, SimulateArgs};

pub enum CliError {
    Usage(String),
    Run(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Run(Error::Config(_)) => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn usage(e: impl fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn embedder(table: &Option<PathBuf>) -> CliResult<Embedder> {
    match table {
        Some(p) => Embedder::from_file(p).map_err(usage),
        None => Ok(Embedder::new()),
    }
}

fn external_from_env() -> CliResult<ExternalEvaluator> {
    ExternalEvaluator::from_env()
        .map_err(|_| CliError::Usage(format!("external evaluator requested but {ENDPOINT_ENV} is not set")))
}

fn load_genome(path: &Path) -> CliResult<GenomeFile> {
    GenomeFile::load(path).map_err(|e| CliError::Usage(format!("cannot read genome {}: {e}", path.display())))
}

pub fn simulate(a: SimulateArgs) -> CliResult {
    let mut sim: SimConfig = match &a.config {
        Some(p) => read_json(p).map_err(usage)?,
        None => SimConfig::default(),
    };
    if let Some(steps) = a.steps {
        sim.steps = steps;
    }
    if let Some(n) = a.n {
        sim.n_cells = n;
    }
    sim.validate()?;

    let field = match (&a.genome, a.constant_field) {
        (Some(path), _) => {
            let model = load_genome(path)?.into_model().map_err(usage)?;
            let emb = embedder(&a.embeddings)?.embed(&a.prompt)?;
            model.forward(&emb)?
        }
        (None, Some((dx, dy))) => VectorField::constant(a.grid, Vec2::new(dx, dy)).map_err(usage)?,
        (None, None) => {
            return Err(CliError::Usage(
                "either --genome or --constant-field is required".into(),
            ))
        }
    };

    let trajectory = run_episode(a.seed, &field, &sim)?;
    let csv = a.out.join("trajectory.csv");
    trajectory.write_csv(&csv)?;
    trajectory.write_json(&a.out.join("trajectory.json"), &sim)?;
    if a.render {
        write_atomic(
            &a.out.join("distance.png"),
            &render_distance_plot(&trajectory.d_avg_series)?,
        )?;
        write_atomic(
            &a.out.join("layout.png"),
            &render_layout_plot(&trajectory.final_positions, &field, &sim)?,
        )?;
    }
    println!("{}", csv.display());
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> CliResult {
    let file = load_genome(&a.genome)?;
    let genome = Genome::new(file.values.clone()).map_err(usage)?;
    let eval = zapfield::d2r::EvalConfig {
        epochs: a.epochs,
        ..Default::default()
    };
    let mut fitness = PromptFitness::with_embedder(
        &a.prompt,
        &file.arch,
        &SimConfig::default(),
        &eval,
        &embedder(&a.embeddings)?,
    )?;
    if a.external {
        fitness = fitness.with_external(external_from_env()?);
    }
    let report = fitness.report(&genome, a.seed)?;
    let doc = json!({
        "prompt": a.prompt,
        "target": fitness.target,
        "seed": a.seed,
        "epochs": a.epochs,
        "deterministic": !a.external,
        "report": report,
    });
    if let Some(out) = &a.out {
        write_json_atomic(out, &doc)?;
    }
    println!("{}", serde_json::to_string_pretty(&doc).map_err(Error::from)?);
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "lowercase")]
enum RunStatus {
    Running,
    Complete,
    Failed,
}

/// Per-run manifest. `settings` holds everything the run's outcome depends on.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    status: RunStatus,
    optimizer: Optimizer,
    grid_size: usize,
    seed_index: usize,
    run_seed: u64,
    deterministic: bool,
    settings: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    redo: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    evaluations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wall_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    artifacts: Value,
}

#[derive(Serialize)]
struct RunEntry {
    grid_size: usize,
    seed_index: usize,
    run_seed: u64,
    dir: PathBuf,
    status: RunStatus,
    skipped: bool,
}

const LOG_FILE: &str = "log.csv";
const GENOME_FILE: &str = "best_genome.json";
const MANIFEST_FILE: &str = "manifest.json";

/// Seed of run `k` on an `n`×`n` grid.
pub fn run_seed(base_seed: u64, grid_size: usize, k: usize) -> u64 {
    mix_all(base_seed, &[grid_size as u64, k as u64])
}

fn resolve(a: &EvolveArgs) -> CliResult<ExperimentConfig> {
    let base = if a.paper_scale {
        ExperimentConfig::full_scale()
    } else {
        ExperimentConfig::desk()
    };
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::overlay_file(&base, p)?,
        None => base,
    };
    if let Some(o) = a.optimizer {
        cfg.optimizer = o;
    }
    if let Some(g) = &a.grids {
        cfg.grid_sizes = g.clone();
    }
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    if let Some(s) = a.base_seed {
        cfg.base_seed = s;
    }
    if let Some(g) = a.generations {
        match cfg.optimizer {
            Optimizer::Es => cfg.es.generations = g,
            Optimizer::Ga => cfg.ga.generations = g,
        }
    }
    if let Some(e) = a.epochs {
        cfg.eval.epochs = e;
    }
    if let Some(p) = &a.prompt {
        cfg.prompt = p.clone();
    }
    if let Some(p) = a.pop_size {
        cfg.ga.pop_size = p;
    }
    if let Some(k) = a.tournament_k {
        cfg.ga.tournament_k = k;
    }
    if let Some(d) = &a.output_dir {
        cfg.output_dir = d.clone();
    }
    if a.external {
        cfg.eval.evaluator = EvaluatorMode::External;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn settings(cfg: &ExperimentConfig, grid_size: usize) -> Value {
    let optimizer = match cfg.optimizer {
        Optimizer::Es => serde_json::to_value(&cfg.es),
        Optimizer::Ga => serde_json::to_value(&cfg.ga),
    }
    .expect("configs serialize");
    json!({
        "prompt": cfg.prompt,
        "arch": cfg.arch(grid_size),
        "sim": cfg.sim,
        "eval": cfg.eval,
        "optimizer": optimizer,
    })
}

fn read_manifest(dir: &Path) -> Option<RunManifest> {
    read_json(&dir.join(MANIFEST_FILE)).ok()
}

pub fn evolve(a: EvolveArgs) -> CliResult {
    let cfg = resolve(&a)?;
    let external = cfg.eval.evaluator == EvaluatorMode::External;
    let embedder = embedder(&a.embeddings)?;
    let ext_endpoint = if external {
        Some(external_from_env()?.endpoint().to_string())
    } else {
        None
    };

    let mut oracle_eval = cfg.eval.clone();
    oracle_eval.evaluator = EvaluatorMode::Oracle;
    let fitnesses = cfg
        .grid_sizes
        .iter()
        .map(|&n| {
            let f = PromptFitness::with_embedder(&cfg.prompt, &cfg.arch(n), &cfg.sim, &oracle_eval, &embedder)?;
            Ok(match &ext_endpoint {
                Some(url) => f.with_external(ExternalEvaluator::new(url.clone())),
                None => f,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;

    let root = cfg.output_dir.join(cfg.optimizer.as_str());
    let jobs: Vec<(usize, usize)> = (0..cfg.grid_sizes.len())
        .flat_map(|gi| (0..cfg.seeds).map(move |k| (gi, k)))
        .collect();

    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Run(Error::Config(format!("cannot start worker pool: {e}"))))?;

    let started = Instant::now();
    let entries: Vec<Result<RunEntry, Error>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(gi, k)| {
                let n = cfg.grid_sizes[gi];
                let dir = root.join(format!("grid{n}")).join(format!("seed{k:03}"));
                execute_run(&cfg, &fitnesses[gi], n, k, &dir, !external)
            })
            .collect()
    });

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for e in entries {
        match e {
            Ok(entry) => {
                if entry.status == RunStatus::Failed {
                    failures.push(format!("{}", entry.dir.display()));
                }
                runs.push(entry);
            }
            Err(e) => failures.push(e.to_string()),
        }
    }
    write_json_atomic(
        &root.join(MANIFEST_FILE),
        &json!({
            "config": cfg,
            "deterministic": !external,
            "seed_scheme": "run_seed = mix_all(base_seed, [grid_size, seed_index])",
            "wall_seconds": started.elapsed().as_secs_f64(),
            "runs": runs,
        }),
    )?;
    if failures.is_empty() {
        println!("{}", root.display());
        Ok(())
    } else {
        Err(CliError::Run(Error::Evaluator(format!(
            "{} run(s) failed: {}",
            failures.len(),
            failures.join("; ")
        ))))
    }
}

fn execute_run(
    cfg: &ExperimentConfig,
    fitness: &PromptFitness,
    n: usize,
    k: usize,
    dir: &Path,
    deterministic: bool,
) -> Result<RunEntry, Error> {
    let seed = run_seed(cfg.base_seed, n, k);
    let settings = settings(cfg, n);
    let entry = |status, skipped| RunEntry {
        grid_size: n,
        seed_index: k,
        run_seed: seed,
        dir: dir.to_path_buf(),
        status,
        skipped,
    };

    let previous = read_manifest(dir);
    let redo = match &previous {
        None => None,
        Some(m) if m.settings != settings || m.run_seed != seed || m.optimizer != cfg.optimizer => {
            Some("settings changed".to_string())
        }
        Some(m) if m.status == RunStatus::Complete => {
            if dir.join(LOG_FILE).is_file() && dir.join(GENOME_FILE).is_file() {
                eprintln!("{} grid {n} seed {k}: complete, skipped", cfg.optimizer);
                return Ok(entry(RunStatus::Complete, true));
            }
            Some("artifacts missing".to_string())
        }
        Some(m) => Some(format!("previous attempt left status {:?}", m.status).to_lowercase()),
    };

    let mut manifest = RunManifest {
        status: RunStatus::Running,
        optimizer: cfg.optimizer,
        grid_size: n,
        seed_index: k,
        run_seed: seed,
        deterministic,
        settings,
        redo,
        evaluations: None,
        wall_seconds: None,
        error: None,
        artifacts: json!({ "log": LOG_FILE, "best_genome": GENOME_FILE }),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    write_json_atomic(&manifest_path, &manifest)?;

    let t = Instant::now();
    let arch = cfg.arch(n);
    let outcome: Result<EvolutionLog, Aborted> = match cfg.optimizer {
        Optimizer::Es => run_es(&cfg.es, &arch, fitness, seed),
        Optimizer::Ga => run_ga(&cfg.ga, &arch, fitness, seed),
    };
    let (log, error) = match outcome {
        Ok(log) => (log, None),
        Err(Aborted { partial, error }) => (*partial, Some(error.to_string())),
    };
    log.write_csv(&dir.join(LOG_FILE))?;
    GenomeFile::new(&arch, &log.best_genome).save(&dir.join(GENOME_FILE))?;

    manifest.status = if error.is_some() {
        RunStatus::Failed
    } else {
        RunStatus::Complete
    };
    manifest.evaluations = Some(log.evaluations);
    manifest.wall_seconds = Some(t.elapsed().as_secs_f64());
    manifest.error = error;
    write_json_atomic(&manifest_path, &manifest)?;
    match &manifest.error {
        None => eprintln!(
            "{} grid {n} seed {k}: best {:.3} after {} evaluations ({:.1} s)",
            cfg.optimizer,
            log.best.fitness,
            log.evaluations,
            t.elapsed().as_secs_f64()
        ),
        Some(e) => eprintln!("{} grid {n} seed {k}: failed: {e}", cfg.optimizer),
    }
    Ok(entry(manifest.status.clone(), false))
}

fn find_logs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), Error> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            find_logs(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == LOG_FILE) {
            out.push(path);
        }
    }
    Ok(())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        (values[m - 1] + values[m]) / 2.0
    }
}

pub fn compare(a: CompareArgs) -> CliResult {
    if !a.input.is_dir() {
        return Err(CliError::Usage(format!("{} is not a directory", a.input.display())));
    }
    let mut paths = Vec::new();
    find_logs(&a.input, &mut paths)?;
    paths.sort();
    // Only completed runs count; a log without a manifest is taken as is.
    paths.retain(|p| {
        let manifest = p.with_file_name(MANIFEST_FILE);
        !manifest.exists() || read_json::<Value>(&manifest).is_ok_and(|m| m["status"] == "complete")
    });

    let mut curves = Vec::new();
    let mut final_positions = Vec::new();
    for p in &paths {
        let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let records = parse_log_csv(&text).map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
        if records.is_empty() {
            return Err(Error::Format(format!("{}: no generation records", p.display())).into());
        }
        final_positions.push(records.last().and_then(|r| r.best_r_position));
        curves.push(records.iter().map(|r| r.best_fitness).collect::<Vec<f64>>());
    }
    if curves.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "found {} completed run log(s) under {}; at least 5 are needed",
            curves.len(),
            a.input.display()
        ))
        .into());
    }

    let initial: Vec<f64> = curves.iter().map(|c| c[0]).collect();
    let last: Vec<f64> = curves.iter().map(|c| *c.last().unwrap()).collect();
    let count = curves.len() as f64;
    let mean_initial = initial.iter().sum::<f64>() / count;
    let mean_final = last.iter().sum::<f64>() / count;
    let result = wilcoxon_signed_rank_with(&PairedSamples::new(initial, last)?, a.alternative)?;
    let median_final_position = final_positions
        .iter()
        .copied()
        .collect::<Option<Vec<f64>>>()
        .map(|mut v| median(&mut v));

    let report = json!({
        "n": curves.len(),
        "W": result.statistic,
        "p_value": result.p_value,
        "mean_initial": mean_initial,
        "mean_final": mean_final,
        "w_plus": result.w_plus,
        "w_minus": result.w_minus,
        "nonzero_differences": result.n,
        "exact": result.exact,
        "alternative": a.alternative,
        "median_final_position": median_final_position,
        "logs": paths,
    });
    if let Some(out) = &a.out {
        write_json_atomic(out, &report)?;
    }
    if let Some(path) = &a.summary {
        write_atomic(path, summary_csv(&summarize_curves(&curves)?).as_bytes())?;
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
    } else {
        println!("runs: {}", curves.len());
        println!("mean best fitness: {} -> {}", fmt17(mean_initial), fmt17(mean_final));
        println!(
            "Wilcoxon signed-rank ({}, {}): W = {}, p = {}, {} non-zero differences",
            match a.alternative {
                zapfield::stats::Alternative::TwoSided => "two-sided",
                zapfield::stats::Alternative::Greater => "greater",
                zapfield::stats::Alternative::Less => "less",
            },
            if result.exact { "exact" } else { "normal approximation" },
            result.statistic,
            fmt17(result.p_value),
            result.n
        );
        if let Some(m) = median_final_position {
            println!("median final position score: {m}");
        }
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn embed(a: EmbedArgs) -> CliResult {
    let embedder = embedder(&a.embeddings)?;
    let embeddings = a
        .prompts
        .iter()
        .map(|p| embedder.embed(p))
        .collect::<Result<Vec<_>, Error>>()?;
    let mut out = String::from("prompt");
    for p in &a.prompts {
        out.push(',');
        out.push_str(&csv_field(p));
    }
    out.push('\n');
    for (p, ea) in a.prompts.iter().zip(&embeddings) {
        out.push_str(&csv_field(p));
        for eb in &embeddings {
            out.push(',');
            out.push_str(&fmt17(cosine_similarity(ea, eb)));
        }
        out.push('\n');
    }
    print!("{out}");
    Ok(())
}
