use std::io::Write;

use anyhow::Result;
use clap::Args;
use earn_core::enumerate::{default_grid, grid, pareto_filter, write_csv, EnumSpec, Strategy};
use earn_core::{Evaluator, MergeProtocol, ObjectiveSet, Split};

use super::{context, size_mode, EvalOptions};
use crate::output::write_atomic;
use crate::{Global, UsageError};

#[derive(Args, Debug)]
pub struct EnumerateArgs {
    #[command(flatten)]
    pub opts: EvalOptions,

    #[arg(long)]
    pub strategy: Strategy,

    /// Ensemble size for bagging and boosting.
    #[arg(long, default_value_t = 3)]
    pub k: usize,

    /// Comma-separated merge protocols; defaults to average for bagging and
    /// weighted_average for boosting.
    #[arg(long, value_delimiter = ',')]
    pub protocols: Vec<MergeProtocol>,

    /// Threshold grid step for chains (default grid: 0.00 to 0.99).
    #[arg(long, conflicts_with = "thresholds")]
    pub grid_step: Option<f64>,

    /// Include 1.0 in a stepped grid.
    #[arg(long, requires = "grid_step")]
    pub grid_inclusive: bool,

    /// Explicit comma-separated thresholds for chains.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Vec<f64>,

    /// Keep only the Pareto-optimal rows.
    #[arg(long)]
    pub pareto: bool,

    /// Objectives used by --pareto.
    #[arg(long, default_value_t = ObjectiveSet::default())]
    pub objectives: ObjectiveSet,

    #[arg(long, default_value_t = Split::Validation)]
    pub split: Split,
}

pub fn run(a: EnumerateArgs, g: &Global) -> Result<()> {
    let pool = super::open_pool(&a.opts.pool)?;
    let ctx = context(
        &pool,
        a.split,
        a.opts.platform.as_deref(),
        a.objectives.clone(),
        size_mode(a.opts.size_per_node),
    )?;
    let spec = match a.strategy {
        Strategy::Chain2 => {
            let thresholds = if !a.thresholds.is_empty() {
                a.thresholds.clone()
            } else if let Some(step) = a.grid_step {
                grid(step, a.grid_inclusive)?
            } else {
                default_grid()
            };
            EnumSpec::chain2(thresholds)
        }
        s => {
            if a.grid_step.is_some() || !a.thresholds.is_empty() {
                return Err(UsageError(format!("{s} takes no threshold grid")).into());
            }
            let mut spec = if s == Strategy::Bagging {
                EnumSpec::bagging(a.k)
            } else {
                EnumSpec::boosting(a.k)
            };
            if !a.protocols.is_empty() {
                spec.protocols = a.protocols.clone();
            }
            spec
        }
    };
    let evaluator = Evaluator::new(ctx);
    let mut rows = spec.run(&evaluator, g.jobs)?;
    let total = rows.len();
    if a.pareto {
        rows = pareto_filter(&rows, &a.objectives);
    }
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf)?;
    match &g.output {
        Some(path) => write_atomic(path, &buf)?,
        None => std::io::stdout().lock().write_all(&buf)?,
    }
    eprintln!("{total} ensembles evaluated, {} written", rows.len());
    Ok(())
}
