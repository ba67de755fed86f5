use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Subcommand};
use earn_core::pool::{
    encode_labels, encode_predictions, read_labels, read_predictions, stratified_half_split_indices,
    synth_pool, write_pool, PredictionSet,
};
use earn_core::Split;

use super::open_pool;
use crate::output::write_atomic;
use crate::{Global, UsageError};

#[derive(Subcommand, Debug)]
pub enum PoolCommand {
    /// Load a pool and print per-model statistics.
    Validate {
        /// Pool manifest (pool.json).
        manifest: PathBuf,
    },
    /// Write a deterministic synthetic pool to the output directory.
    Synth(SynthArgs),
    /// Stratified half split of prediction files into validation and test.
    Split(SplitArgs),
    /// Convert CSV matrices into binary prediction and label files.
    ImportCsv(ImportArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    pub models: usize,
    /// Samples per split.
    #[arg(long, default_value_t = 500)]
    pub samples: usize,
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    /// Label file (.elbl) shared by every prediction file.
    #[arg(long)]
    pub labels: PathBuf,
    /// Prediction files (.eprd) to split with the same indices.
    #[arg(long, required = true)]
    pub probs: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ImportArgs {
    /// One row per sample, one column per class.
    #[arg(long)]
    pub probs: PathBuf,
    /// One integer label per row.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Skip the first row of each CSV.
    #[arg(long)]
    pub header: bool,
}

pub fn run(cmd: PoolCommand, g: &Global) -> Result<()> {
    match cmd {
        PoolCommand::Validate { manifest } => validate(&manifest),
        PoolCommand::Synth(a) => synth(&a, g),
        PoolCommand::Split(a) => split(&a, g),
        PoolCommand::ImportCsv(a) => import(&a, g),
    }
}

fn required_output(g: &Global, what: &str) -> Result<PathBuf> {
    g.output
        .clone()
        .ok_or_else(|| UsageError(format!("--output is required ({what})")).into())
}

fn validate(manifest: &Path) -> Result<()> {
    let pool = open_pool(manifest)?;
    eprintln!(
        "{}: dataset {}, {} models, {} classes, {} validation / {} test samples",
        manifest.display(),
        pool.dataset(),
        pool.len(),
        pool.n_classes(),
        pool.n_samples(Split::Validation),
        pool.n_samples(Split::Test)
    );
    for m in pool.models() {
        let latencies: Vec<String> = pool
            .platforms()
            .iter()
            .map(|p| format!("{p}={:.6}", m.latency(p).unwrap_or(f64::NAN)))
            .collect();
        println!(
            "{}\tparams={}\tvalidation_acc={:.4}\ttest_acc={:.4}\tlatency_s {}",
            m.id,
            m.params,
            m.validation.accuracy(),
            m.test.accuracy(),
            latencies.join(" ")
        );
    }
    Ok(())
}

fn synth(a: &SynthArgs, g: &Global) -> Result<()> {
    let dir = required_output(g, "pool directory")?;
    let pool = synth_pool(a.models, a.samples, a.classes, g.seed.unwrap_or(0))?;
    let manifest = write_pool(&pool, &dir)?;
    println!("{}", manifest.display());
    Ok(())
}

fn split(a: &SplitArgs, g: &Global) -> Result<()> {
    let dir = required_output(g, "split directory")?;
    let labels = read_labels(&a.labels)?;
    let sets = a
        .probs
        .iter()
        .map(|p| {
            let (n, k, probs) = read_predictions(p)?;
            if n != labels.len() {
                return Err(UsageError(format!(
                    "{}: {n} samples but {} labels",
                    p.display(),
                    labels.len()
                ))
                .into());
            }
            Ok((p, PredictionSet::new(k, probs, labels.clone())?))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = sets[0].1.n_classes();
    let (first, second) = stratified_half_split_indices(&labels, k, g.seed.unwrap_or(0))?;
    for (split, idx) in [(Split::Validation, &first), (Split::Test, &second)] {
        let l: Vec<u32> = idx.iter().map(|&i| labels[i]).collect();
        write_atomic(&dir.join(format!("{split}.elbl")), &encode_labels(&l))?;
        for (path, set) in &sets {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("predictions");
            let part = set.select(idx);
            let out = dir.join(format!("{stem}.{split}.eprd"));
            write_atomic(&out, &encode_predictions(part.n_classes(), part.probs()))?;
        }
    }
    println!("validation {} / test {} samples", first.len(), second.len());
    Ok(())
}

fn read_rows(path: &Path, header: bool) -> Result<Vec<csv::StringRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(reader.records().collect::<Result<Vec<_>, _>>()?)
}

fn import(a: &ImportArgs, g: &Global) -> Result<()> {
    let prefix = required_output(g, "output path prefix")?;
    let rows = read_rows(&a.probs, a.header)?;
    let k = rows.first().map_or(0, |r| r.len());
    let mut probs = Vec::with_capacity(rows.len() * k);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != k {
            return Err(earn_core::Error::Pool(format!(
                "{}: row {i} has {} columns, expected {k}",
                a.probs.display(),
                row.len()
            ))
            .into());
        }
        for field in row {
            let x: f32 = field.parse().with_context(|| {
                format!("{}: row {i}: {field:?} is not a number", a.probs.display())
            })?;
            probs.push(x);
        }
    }
    let labels = match &a.labels {
        Some(path) => read_rows(path, a.header)?
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r.get(0)
                    .unwrap_or("")
                    .parse::<u32>()
                    .with_context(|| format!("{}: row {i}: bad label", path.display()))
            })
            .collect::<Result<Vec<_>>>()?,
        // Unlabelled import: placeholder zeros.
        None => vec![0; rows.len()],
    };
    let set = PredictionSet::new(k, probs, labels)?;
    let eprd = prefix.with_extension("eprd");
    write_atomic(&eprd, &encode_predictions(k, set.probs()))?;
    println!("{}", eprd.display());
    if a.labels.is_some() {
        let elbl = prefix.with_extension("elbl");
        write_atomic(&elbl, &encode_labels(set.labels()))?;
        println!("{}", elbl.display());
    }
    Ok(())
}
