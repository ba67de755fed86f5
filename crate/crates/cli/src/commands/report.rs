use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::Args;
use earn_core::enumerate::read_csv;
use earn_core::report::{
    candidates_from_archive_csv, candidates_from_enumeration, candidates_from_json, front_2d, summarize,
    write_points_csv, Candidate, FRONT_PAIRS,
};
use earn_core::{Error, Evaluator, ObjectiveSet, Split};

use super::{context, size_mode, EvalOptions};
use crate::output::{read_text, write_atomic, write_json};
use crate::{Global, UsageError};

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    pub opts: EvalOptions,

    /// Search output: archive.csv, archive.json or population.json.
    #[arg(long)]
    pub archive: Vec<PathBuf>,

    /// CSV written by `earn enumerate`.
    #[arg(long)]
    pub enumeration: Vec<PathBuf>,

    /// Split every ensemble is re-evaluated on.
    #[arg(long, default_value_t = Split::Test)]
    pub split: Split,
}

fn label(path: &Path) -> String {
    path.file_name()
        .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn open(path: &Path) -> Result<File> {
    File::open(path)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
        .map_err(Into::into)
}

pub fn run(a: ReportArgs, g: &Global) -> Result<()> {
    if a.archive.is_empty() && a.enumeration.is_empty() {
        return Err(UsageError("give at least one --archive or --enumeration file".into()).into());
    }
    let pool = super::open_pool(&a.opts.pool)?;
    let ctx = context(
        &pool,
        a.split,
        a.opts.platform.as_deref(),
        ObjectiveSet::default(),
        size_mode(a.opts.size_per_node),
    )?;
    let evaluator = Evaluator::new(ctx);
    let depth = a.opts.max_depth;

    let mut candidates: Vec<Candidate> = Vec::new();
    for path in &a.archive {
        let name = label(path);
        let found = if path.extension().is_some_and(|e| e == "json") {
            candidates_from_json(&read_text(path)?, &name, &evaluator, depth)?
        } else {
            candidates_from_archive_csv(open(path)?, &name, &evaluator, depth)?
        };
        candidates.extend(found);
    }
    for path in &a.enumeration {
        let records = read_csv(open(path)?)?;
        candidates.extend(candidates_from_enumeration(&records, &label(path), &evaluator)?);
    }

    let summary = summarize(&candidates, &evaluator)?;
    print!("{summary}");
    if let Some(dir) = &g.output {
        write_atomic(&dir.join("summary.txt"), summary.to_string().as_bytes())?;
        write_json(&dir.join("summary.json"), &summary)?;
        let mut buf = Vec::new();
        write_points_csv(&candidates, &mut buf)?;
        write_atomic(&dir.join("points.csv"), &buf)?;
        for (x, y) in FRONT_PAIRS {
            let mut buf = Vec::new();
            write_points_csv(front_2d(&candidates, x, y), &mut buf)?;
            let name = format!("front_{}_{}.csv", x.as_str(), y.as_str());
            write_atomic(&dir.join(name), &buf)?;
        }
    }
    Ok(())
}
