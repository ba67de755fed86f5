//! Comparison of searched or enumerated ensembles against the pool's most
//! accurate single model, plus plot-ready two-objective fronts.

use std::cmp::Ordering;
use std::fmt::{self, Write as _};
use std::io;

use serde::{Deserialize, Serialize};

use crate::enumerate::EnumRecord;
use crate::error::{Error, Result};
use crate::evaluator::{Evaluator, Objective, ObjectiveVector};
use crate::graph::{validate, EnsembleGraph};
use crate::moo::pareto_front;

/// An ensemble re-evaluated on the report split.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Where the ensemble came from, e.g. an input file name.
    pub source: String,
    pub graph: EnsembleGraph,
    pub objectives: ObjectiveVector,
}

impl Candidate {
    pub fn evaluate(source: impl Into<String>, graph: EnsembleGraph, evaluator: &Evaluator<'_>) -> Result<Self> {
        let objectives = evaluator.evaluate(&graph)?;
        Ok(Candidate {
            source: source.into(),
            graph,
            objectives,
        })
    }
}

#[derive(Deserialize)]
struct ArchiveRow {
    graph_json: String,
}

/// Reads the `graph_json` column of an archive CSV and re-evaluates each
/// graph.
pub fn candidates_from_archive_csv<R: io::Read>(
    input: R,
    source: &str,
    evaluator: &Evaluator<'_>,
    max_depth: usize,
) -> Result<Vec<Candidate>> {
    let mut out = Vec::new();
    for row in csv::Reader::from_reader(input).deserialize::<ArchiveRow>() {
        let graph = EnsembleGraph::from_json(&row?.graph_json, evaluator.pool(), max_depth)?;
        out.push(Candidate::evaluate(source, graph, evaluator)?);
    }
    Ok(out)
}

/// Accepts either an array of graphs or an array of objects with a `graph`
/// field (the archive and population JSON layouts).
pub fn candidates_from_json(
    text: &str,
    source: &str,
    evaluator: &Evaluator<'_>,
    max_depth: usize,
) -> Result<Vec<Candidate>> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let items = value
        .as_array()
        .ok_or_else(|| Error::Config(format!("{source}: expected a JSON array")))?;
    let mut out = Vec::new();
    for item in items {
        let node = item.get("graph").unwrap_or(item);
        let graph: EnsembleGraph = serde_json::from_value(node.clone())?;
        validate(&graph, evaluator.pool(), max_depth).map_err(|v| {
            Error::Graph(v.into_iter().map(|v| v.to_string()).collect())
        })?;
        out.push(Candidate::evaluate(source, graph, evaluator)?);
    }
    Ok(out)
}

pub fn candidates_from_enumeration(
    records: &[EnumRecord],
    source: &str,
    evaluator: &Evaluator<'_>,
) -> Result<Vec<Candidate>> {
    records
        .iter()
        .map(|r| {
            let graph = r.graph(evaluator)?;
            validate(&graph, evaluator.pool(), usize::MAX)
                .map_err(|v| Error::Graph(v.into_iter().map(|v| v.to_string()).collect()))?;
            Candidate::evaluate(source, graph, evaluator)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reference {
    pub model: String,
    pub objectives: ObjectiveVector,
}

/// The most accurate single model on the evaluator's split. Ties go to lower
/// latency, then smaller size, then pool order.
pub fn reference_model(evaluator: &Evaluator<'_>) -> Result<Reference> {
    let mut best: Option<Reference> = None;
    for m in evaluator.pool().models() {
        let objectives = evaluator.evaluate(&EnsembleGraph::single(m.id.clone()))?;
        let better = best
            .as_ref()
            .is_none_or(|b| by_error(&objectives, &b.objectives) == Ordering::Less);
        if better {
            best = Some(Reference {
                model: m.id.clone(),
                objectives,
            });
        }
    }
    best.ok_or_else(|| Error::Pool("pool has no models".into()))
}

fn by_error(a: &ObjectiveVector, b: &ObjectiveVector) -> Ordering {
    a.error
        .total_cmp(&b.error)
        .then(a.latency.total_cmp(&b.latency))
        .then(a.size.cmp(&b.size))
}

fn by_latency(a: &ObjectiveVector, b: &ObjectiveVector) -> Ordering {
    a.latency
        .total_cmp(&b.latency)
        .then(a.error.total_cmp(&b.error))
        .then(a.size.cmp(&b.size))
}

fn by_size(a: &ObjectiveVector, b: &ObjectiveVector) -> Ordering {
    a.size
        .cmp(&b.size)
        .then(a.error.total_cmp(&b.error))
        .then(a.latency.total_cmp(&b.latency))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pick {
    pub source: String,
    pub graph: EnsembleGraph,
    pub objectives: ObjectiveVector,
    /// Accuracy minus the reference accuracy, as a fraction.
    pub accuracy_gain: f64,
    /// Reference latency over ensemble latency.
    pub speedup: f64,
    /// Reference size over ensemble size.
    pub size_reduction: f64,
}

impl Pick {
    fn new(c: &Candidate, reference: &ObjectiveVector) -> Self {
        Pick {
            source: c.source.clone(),
            graph: c.graph.clone(),
            objectives: c.objectives,
            accuracy_gain: c.objectives.accuracy() - reference.accuracy(),
            speedup: reference.latency / c.objectives.latency,
            size_reduction: reference.size as f64 / c.objectives.size as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub split: String,
    pub platform: String,
    pub reference: Reference,
    pub candidates: usize,
    /// Highest accuracy overall.
    pub most_accurate: Option<Pick>,
    /// Lowest latency among ensembles at least as accurate as the reference.
    pub fastest: Option<Pick>,
    /// Smallest among ensembles at least as accurate as the reference.
    pub smallest: Option<Pick>,
    /// Candidates containing a merger weight below zero (a member worse than
    /// chance).
    pub negative_weights: usize,
}

pub fn summarize(candidates: &[Candidate], evaluator: &Evaluator<'_>) -> Result<Summary> {
    let reference = reference_model(evaluator)?;
    let r = reference.objectives;
    let pick = |pool: &mut dyn Iterator<Item = &Candidate>, order: fn(&ObjectiveVector, &ObjectiveVector) -> Ordering| {
        pool.min_by(|a, b| order(&a.objectives, &b.objectives))
            .map(|c| Pick::new(c, &r))
    };
    let matching = || candidates.iter().filter(|c| c.objectives.error <= r.error);
    Ok(Summary {
        split: evaluator.ctx().split().to_string(),
        platform: evaluator.ctx().platform().to_string(),
        candidates: candidates.len(),
        most_accurate: pick(&mut candidates.iter(), by_error),
        fastest: pick(&mut matching(), by_latency),
        smallest: pick(&mut matching(), by_size),
        negative_weights: candidates
            .iter()
            .filter(|c| c.graph.root.has_negative_weights())
            .count(),
        reference,
    })
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = &self.reference;
        writeln!(f, "split {} / platform {}", self.split, self.platform)?;
        writeln!(
            f,
            "reference {}: accuracy {:.4}, latency {:.6} s, size {}",
            r.model,
            r.objectives.accuracy(),
            r.objectives.latency,
            r.objectives.size
        )?;
        writeln!(f, "candidates {}", self.candidates)?;
        for (label, p) in [
            ("most accurate", &self.most_accurate),
            ("fastest matching reference accuracy", &self.fastest),
            ("smallest matching reference accuracy", &self.smallest),
        ] {
            match p {
                None => writeln!(f, "{label}: none")?,
                Some(p) => {
                    let mut line = String::new();
                    write!(
                        line,
                        "{label}: accuracy {:.4} ({:+.2} pp), latency {:.6} s ({:.2}x), size {} ({:.2}x) [{}]",
                        p.objectives.accuracy(),
                        100.0 * p.accuracy_gain,
                        p.objectives.latency,
                        p.speedup,
                        p.objectives.size,
                        p.size_reduction,
                        p.source
                    )?;
                    writeln!(f, "{line}")?;
                    writeln!(f, "  {}", p.graph)?;
                }
            }
        }
        if self.negative_weights > 0 {
            writeln!(
                f,
                "warning: {} candidates carry negative merger weights",
                self.negative_weights
            )?;
        }
        Ok(())
    }
}

/// Non-dominated candidates on the `(x, y)` pair, sorted by `x` then `y`.
pub fn front_2d(candidates: &[Candidate], x: Objective, y: Objective) -> Vec<&Candidate> {
    let points: Vec<[f64; 2]> = candidates
        .iter()
        .map(|c| [c.objectives.get(x), c.objectives.get(y)])
        .collect();
    let mut front: Vec<usize> = pareto_front(&points);
    front.sort_by(|&a, &b| {
        points[a][0]
            .total_cmp(&points[b][0])
            .then(points[a][1].total_cmp(&points[b][1]))
            .then(a.cmp(&b))
    });
    front.into_iter().map(|i| &candidates[i]).collect()
}

/// CSV with columns `source,error,accuracy,latency_s,size_params,graph_json`.
pub fn write_points_csv<'a, W: io::Write>(
    points: impl IntoIterator<Item = &'a Candidate>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["source", "error", "accuracy", "latency_s", "size_params", "graph_json"])?;
    for c in points {
        w.write_record([
            c.source.clone(),
            c.objectives.error.to_string(),
            c.objectives.accuracy().to_string(),
            c.objectives.latency.to_string(),
            c.objectives.size.to_string(),
            c.graph.to_json(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// The three objective pairs plotted by the report.
pub const FRONT_PAIRS: [(Objective, Objective); 3] = [
    (Objective::Latency, Objective::Error),
    (Objective::Size, Objective::Error),
    (Objective::Size, Objective::Latency),
];
