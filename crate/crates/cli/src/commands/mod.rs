pub mod enumerate;
pub mod eval;
pub mod pool;
pub mod report;
pub mod search;

use std::path::Path;

use anyhow::Result;
use clap::Args;
use earn_core::pool::load_pool;
use earn_core::{EvalContext, ModelPool, ObjectiveSet, SizeMode, Split};

/// Evaluation settings shared by `eval`, `enumerate` and `report`.
#[derive(Args, Debug, Clone)]
pub struct EvalOptions {
    /// Pool manifest (pool.json).
    #[arg(long)]
    pub pool: std::path::PathBuf,

    /// Latency platform; defaults to `gpu` when present, else the first listed.
    #[arg(long)]
    pub platform: Option<String>,

    /// Count every classifier node towards size instead of distinct models.
    #[arg(long)]
    pub size_per_node: bool,

    /// Depth limit applied when reading ensembles.
    #[arg(long, default_value_t = earn_core::graph::DEFAULT_MAX_DEPTH)]
    pub max_depth: usize,
}

pub fn open_pool(path: &Path) -> Result<ModelPool> {
    Ok(load_pool(path)?)
}

pub fn default_platform(pool: &ModelPool) -> String {
    if pool.has_platform("gpu") {
        "gpu".to_string()
    } else {
        pool.platforms().first().cloned().unwrap_or_default()
    }
}

pub fn size_mode(per_node: bool) -> SizeMode {
    if per_node {
        SizeMode::PerNode
    } else {
        SizeMode::Distinct
    }
}

pub fn context<'p>(
    pool: &'p ModelPool,
    split: Split,
    platform: Option<&str>,
    objectives: ObjectiveSet,
    size: SizeMode,
) -> Result<EvalContext<'p>> {
    let platform = platform.map_or_else(|| default_platform(pool), str::to_string);
    Ok(EvalContext::new(pool, split, &platform)?
        .with_objectives(objectives)
        .with_size_mode(size))
}
