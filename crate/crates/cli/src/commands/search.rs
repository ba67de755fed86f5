use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::Args;
use earn_core::search::RunResult;
use earn_core::{EarnConfig, ObjectiveSet, Search, SizeMode, Split};
use serde::{Deserialize, Serialize};

use super::{context, default_platform, open_pool, size_mode};
use crate::output::{read_text, write_atomic, write_json};
use crate::{Global, UsageError};

pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Args, Debug)]
pub struct SearchArgs {
    /// Pool manifest (pool.json); optional with --from-manifest.
    #[arg(long)]
    pub pool: Option<PathBuf>,

    /// JSON file with any subset of the search settings.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Repeat a previous run from its run_manifest.json; other flags override.
    #[arg(long, conflicts_with = "config")]
    pub from_manifest: Option<PathBuf>,

    /// Comma-separated subset of error,latency,size.
    #[arg(long)]
    pub objectives: Option<ObjectiveSet>,

    #[arg(long)]
    pub platform: Option<String>,

    /// Split the search optimizes on.
    #[arg(long)]
    pub split: Option<Split>,

    /// Count every classifier node towards size instead of distinct models.
    #[arg(long)]
    pub size_per_node: bool,

    /// Protocol switches may pick any of the six protocols.
    #[arg(long)]
    pub mutate_all_protocols: bool,

    /// Stop early once the archive hypervolume stagnates.
    #[arg(long)]
    pub stop_on_stagnation: bool,

    #[arg(long)]
    pub population_limit: Option<usize>,
    #[arg(long)]
    pub offspring_limit: Option<usize>,
    #[arg(long)]
    pub tournament_size: Option<usize>,
    #[arg(long)]
    pub mutation_rate: Option<f64>,
    #[arg(long)]
    pub node_mutation_prob: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub threshold_step: Option<f64>,
    #[arg(long)]
    pub initial_threshold: Option<f64>,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long)]
    pub hv_epsilon: Option<f64>,
    #[arg(long)]
    pub hv_patience: Option<usize>,
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub pool: PathBuf,
    pub split: Split,
    pub platform: String,
    pub objectives: ObjectiveSet,
    pub size_mode: SizeMode,
    pub config: EarnConfig,
    pub jobs: usize,
    pub output: PathBuf,
    pub started_unix_s: u64,
    pub finished_unix_s: Option<u64>,
    pub elapsed_s: Option<f64>,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn apply_overrides(config: &mut EarnConfig, a: &SearchArgs, g: &Global) {
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = a.$field {
                config.$field = v;
            }
        )*};
    }
    set!(
        population_limit,
        offspring_limit,
        tournament_size,
        mutation_rate,
        node_mutation_prob,
        iterations,
        threshold_step,
        initial_threshold,
        max_depth,
        hv_epsilon,
        hv_patience
    );
    if a.mutate_all_protocols {
        config.mutate_all_protocols = true;
    }
    if a.stop_on_stagnation {
        config.stop_on_stagnation = true;
    }
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
}

pub fn run(a: SearchArgs, g: &Global) -> Result<()> {
    let previous: Option<RunManifest> = match &a.from_manifest {
        Some(path) => Some(
            serde_json::from_str(&read_text(path)?)
                .with_context(|| format!("parsing {}", path.display()))?,
        ),
        None => None,
    };
    let mut config = match (&previous, &a.config) {
        (Some(m), _) => m.config.clone(),
        (None, Some(path)) => serde_json::from_str(&read_text(path)?)
            .with_context(|| format!("parsing {}", path.display()))?,
        (None, None) => EarnConfig::default(),
    };
    apply_overrides(&mut config, &a, g);

    let pool_path = a
        .pool
        .clone()
        .or_else(|| previous.as_ref().map(|m| m.pool.clone()))
        .ok_or_else(|| UsageError("--pool is required unless --from-manifest is given".into()))?;
    let pool = open_pool(&pool_path)?;
    let split = a
        .split
        .or(previous.as_ref().map(|m| m.split))
        .unwrap_or(Split::Validation);
    let platform = a
        .platform
        .clone()
        .or_else(|| previous.as_ref().map(|m| m.platform.clone()))
        .unwrap_or_else(|| default_platform(&pool));
    let objectives = a
        .objectives
        .clone()
        .or_else(|| previous.as_ref().map(|m| m.objectives.clone()))
        .unwrap_or_default();
    let size = if a.size_per_node {
        SizeMode::PerNode
    } else {
        previous.as_ref().map_or(size_mode(false), |m| m.size_mode)
    };
    let out = g
        .output
        .clone()
        .or_else(|| previous.as_ref().map(|m| m.output.clone()))
        .unwrap_or_else(|| PathBuf::from("earn-run"));

    let ctx = context(&pool, split, Some(&platform), objectives.clone(), size)?;
    let search = Search::new(ctx, config.clone())?.with_jobs(g.jobs);

    let mut manifest = RunManifest {
        tool: "earn".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        pool: std::fs::canonicalize(&pool_path).unwrap_or(pool_path),
        split,
        platform,
        objectives: objectives.clone(),
        size_mode: size,
        config,
        jobs: g.jobs,
        output: out.clone(),
        started_unix_s: unix_now(),
        finished_unix_s: None,
        elapsed_s: None,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;

    let clock = Instant::now();
    let result = search.run()?;
    write_outputs(&result, &search, &out)?;

    manifest.finished_unix_s = Some(unix_now());
    manifest.elapsed_s = Some(clock.elapsed().as_secs_f64());
    write_json(&out.join(MANIFEST_FILE), &manifest)?;

    let last = result.history.last().expect("history has the initial row");
    eprintln!(
        "{} generations, {} offspring evaluated, archive {} (hypervolume {:.6e}, best error {:.4}) in {:.1} s",
        last.generation,
        last.evaluations,
        result.archive.len(),
        last.hypervolume,
        last.best_error,
        clock.elapsed().as_secs_f64()
    );
    println!("{}", out.display());
    Ok(())
}

fn write_outputs(result: &RunResult, search: &Search<'_>, out: &std::path::Path) -> Result<()> {
    let ctx = search.evaluator().ctx();
    write_json(&out.join("archive.json"), &result.archive.to_json(&ctx.objectives))?;
    let mut csv = Vec::new();
    result.archive.write_csv(&mut csv)?;
    write_atomic(&out.join("archive.csv"), &csv)?;
    let mut history = Vec::new();
    result.write_history_csv(&mut history)?;
    write_atomic(&out.join("history.csv"), &history)?;
    write_json(&out.join("population.json"), &result.population_json(ctx))?;
    Ok(())
}
