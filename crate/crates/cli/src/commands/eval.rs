use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use earn_core::graph::validate;
use earn_core::{EnsembleGraph, Error, Evaluator, ObjectiveSet, Split};

use super::{context, size_mode, EvalOptions};
use crate::output::read_text;
use crate::Global;

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Ensemble JSON: a graph, or an object with a `graph` field.
    pub graph: PathBuf,

    #[command(flatten)]
    pub opts: EvalOptions,

    #[arg(long, default_value_t = Split::Test)]
    pub split: Split,
}

pub fn run(a: EvalArgs, _g: &Global) -> Result<()> {
    let pool = super::open_pool(&a.opts.pool)?;
    let ctx = context(
        &pool,
        a.split,
        a.opts.platform.as_deref(),
        ObjectiveSet::default(),
        size_mode(a.opts.size_per_node),
    )?;
    let value: serde_json::Value = serde_json::from_str(&read_text(&a.graph)?).map_err(Error::from)?;
    let node = value.get("graph").cloned().unwrap_or(value);
    let graph: EnsembleGraph = serde_json::from_value(node).map_err(Error::from)?;
    validate(&graph, &pool, a.opts.max_depth)
        .map_err(|v| Error::Graph(v.into_iter().map(|v| v.to_string()).collect()))?;
    let evaluator = Evaluator::new(ctx);
    let v = evaluator.evaluate(&graph)?;
    let out = serde_json::json!({
        "hash": graph.hash(),
        "split": a.split,
        "platform": evaluator.ctx().platform(),
        "error": v.error,
        "accuracy": v.accuracy(),
        "latency": v.latency,
        "size": v.size,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}
