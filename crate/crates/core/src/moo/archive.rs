use std::collections::HashSet;
use std::io;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::Result;
use crate::evaluator::{ObjectiveSet, ObjectiveVector};
use crate::graph::{EnsembleGraph, StructuralHash};

use super::{dominates_unchecked, hypervolume_clipped};

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveEntry {
    pub hash: StructuralHash,
    pub graph: EnsembleGraph,
    pub objectives: ObjectiveVector,
    /// Projection of `objectives` onto the enabled objectives.
    pub point: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Insertion {
    Inserted { evicted: usize },
    Duplicate,
    Dominated,
}

impl Insertion {
    pub fn inserted(self) -> bool {
        matches!(self, Insertion::Inserted { .. })
    }
}

/// Mutually non-dominated ensembles accumulated over a whole run.
#[derive(Debug, Clone, Default)]
pub struct ParetoArchive {
    entries: Vec<ArchiveEntry>,
    hashes: HashSet<StructuralHash>,
}

impl ParetoArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn contains(&self, hash: StructuralHash) -> bool {
        self.hashes.contains(&hash)
    }

    /// Inserts unless the hash is already present or some entry dominates the
    /// candidate; entries the candidate dominates are evicted.
    pub fn insert(&mut self, candidate: ArchiveEntry) -> Insertion {
        if self.hashes.contains(&candidate.hash) {
            return Insertion::Duplicate;
        }
        if self
            .entries
            .iter()
            .any(|e| dominates_unchecked(&e.point, &candidate.point))
        {
            return Insertion::Dominated;
        }
        let before = self.entries.len();
        let hashes = &mut self.hashes;
        self.entries.retain(|e| {
            let keep = !dominates_unchecked(&candidate.point, &e.point);
            if !keep {
                hashes.remove(&e.hash);
            }
            keep
        });
        let evicted = before - self.entries.len();
        self.hashes.insert(candidate.hash);
        self.entries.push(candidate);
        Insertion::Inserted { evicted }
    }

    pub fn hypervolume(&self, reference: &[f64]) -> f64 {
        let points: Vec<&[f64]> = self.entries.iter().map(|e| e.point.as_slice()).collect();
        hypervolume_clipped(&points, reference)
    }

    /// Entries ordered by point (lexicographic), then hash.
    pub fn sorted(&self) -> Vec<&ArchiveEntry> {
        let mut out: Vec<&ArchiveEntry> = self.entries.iter().collect();
        out.sort_by(|a, b| {
            a.point
                .iter()
                .zip(&b.point)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.hash.cmp(&b.hash))
        });
        out
    }

    /// JSON array of `{hash, graph, objectives, metrics}`; `objectives` holds
    /// only the enabled objectives, `metrics` all three.
    pub fn to_json(&self, objectives: &ObjectiveSet) -> Value {
        #[derive(Serialize)]
        struct Row<'a> {
            hash: StructuralHash,
            graph: &'a EnsembleGraph,
            objectives: Map<String, Value>,
            metrics: &'a ObjectiveVector,
        }
        let rows: Vec<Row<'_>> = self
            .sorted()
            .into_iter()
            .map(|e| Row {
                hash: e.hash,
                graph: &e.graph,
                objectives: objectives
                    .iter()
                    .map(|o| (o.as_str().to_string(), Value::from(e.objectives.get(o))))
                    .collect(),
                metrics: &e.objectives,
            })
            .collect();
        serde_json::to_value(rows).expect("archive rows serialize")
    }

    /// CSV with columns `error,latency_s,size_params,graph_json`.
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["error", "latency_s", "size_params", "graph_json"])?;
        for e in self.sorted() {
            w.write_record([
                e.objectives.error.to_string(),
                e.objectives.latency.to_string(),
                e.objectives.size.to_string(),
                e.graph.to_json(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}
