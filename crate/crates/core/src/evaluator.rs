//! Objective computation from cached predictions.
//!
//! Merger children are always combined (and their activations reported) in
//! canonical order (see [`graph::canonical_order`]), which makes every objective
//! bit-identical under any permutation of merger children.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{canonical_order, structural_hash, Chain, EnsembleGraph, MergeProtocol, Merger, Node, StructuralHash};
use crate::pool::{ModelPool, Split};

/// Clamp applied to member error rates before computing SAMME weights.
pub const SAMME_EPSILON: f64 = 1e-6;

/// `ln((1 - err) / err) + ln(n_classes - 1)`, with `err` clamped to
/// `[SAMME_EPSILON, 1 - SAMME_EPSILON]`. Negative for members worse than chance.
pub fn samme_weight(err: f64, n_classes: usize) -> f64 {
    let err = err.clamp(SAMME_EPSILON, 1.0 - SAMME_EPSILON);
    ((1.0 - err) / err).ln() + ((n_classes as f64) - 1.0).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Error,
    Latency,
    Size,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Error => "error",
            Objective::Latency => "latency",
            Objective::Size => "size",
        }
    }
}

/// Non-empty set of enabled objectives, kept in canonical (error, latency, size) order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Objective>", into = "Vec<Objective>")]
pub struct ObjectiveSet(Vec<Objective>);

impl ObjectiveSet {
    pub fn all() -> Self {
        ObjectiveSet(vec![Objective::Error, Objective::Latency, Objective::Size])
    }

    pub fn new(mut objectives: Vec<Objective>) -> Result<Self> {
        objectives.sort();
        objectives.dedup();
        if objectives.is_empty() {
            return Err(Error::Config("at least one objective must be enabled".into()));
        }
        Ok(ObjectiveSet(objectives))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Objective> + '_ {
        self.0.iter().copied()
    }

    pub fn project(&self, v: &ObjectiveVector) -> Vec<f64> {
        self.0.iter().map(|&o| v.get(o)).collect()
    }
}

impl Default for ObjectiveSet {
    fn default() -> Self {
        Self::all()
    }
}

impl TryFrom<Vec<Objective>> for ObjectiveSet {
    type Error = Error;

    fn try_from(v: Vec<Objective>) -> Result<Self> {
        ObjectiveSet::new(v)
    }
}

impl From<ObjectiveSet> for Vec<Objective> {
    fn from(s: ObjectiveSet) -> Self {
        s.0
    }
}

impl FromStr for ObjectiveSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let objectives = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| match t {
                "error" => Ok(Objective::Error),
                "latency" => Ok(Objective::Latency),
                "size" => Ok(Objective::Size),
                other => Err(Error::Config(format!("unknown objective {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        ObjectiveSet::new(objectives)
    }
}

impl fmt::Display for ObjectiveSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.0.iter().map(|o| o.as_str()).collect();
        f.write_str(&names.join(","))
    }
}

/// All three objectives of one ensemble, each minimized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveVector {
    /// `1 - accuracy` on the evaluated split.
    pub error: f64,
    /// Expected seconds per 128-sample batch on the evaluated platform.
    pub latency: f64,
    /// Trainable parameters.
    pub size: u64,
}

impl ObjectiveVector {
    pub fn get(&self, o: Objective) -> f64 {
        match o {
            Objective::Error => self.error,
            Objective::Latency => self.latency,
            Objective::Size => self.size as f64,
        }
    }

    pub fn accuracy(&self) -> f64 {
        1.0 - self.error
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeMode {
    /// Each distinct model counts once.
    #[default]
    Distinct,
    /// Every classifier node counts.
    PerNode,
}

#[derive(Debug, Clone)]
pub struct EvalContext<'p> {
    pool: &'p ModelPool,
    split: Split,
    platform: String,
    latencies: Vec<f64>,
    pub objectives: ObjectiveSet,
    pub size_mode: SizeMode,
}

impl<'p> EvalContext<'p> {
    pub fn new(pool: &'p ModelPool, split: Split, platform: &str) -> Result<Self> {
        if !pool.has_platform(platform) {
            return Err(Error::Config(format!(
                "unknown platform {platform:?}; pool declares {:?}",
                pool.platforms()
            )));
        }
        let latencies = pool
            .models()
            .iter()
            .map(|m| m.latency(platform).expect("validated pool"))
            .collect();
        Ok(EvalContext {
            pool,
            split,
            platform: platform.to_string(),
            latencies,
            objectives: ObjectiveSet::all(),
            size_mode: SizeMode::Distinct,
        })
    }

    pub fn with_objectives(mut self, objectives: ObjectiveSet) -> Self {
        self.objectives = objectives;
        self
    }

    pub fn with_size_mode(mut self, mode: SizeMode) -> Self {
        self.size_mode = mode;
        self
    }

    pub fn with_split(&self, split: Split) -> Self {
        EvalContext {
            split,
            ..self.clone()
        }
    }

    pub fn pool(&self) -> &'p ModelPool {
        self.pool
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn platform(&self) -> &str {
        &self.platform
    }

    pub fn n_samples(&self) -> usize {
        self.pool.n_samples(self.split)
    }

    pub fn labels(&self) -> &'p [u32] {
        self.pool.labels(self.split)
    }

    pub fn latency_of(&self, model: usize) -> f64 {
        self.latencies[model]
    }

    fn resolve(&self, id: &str) -> Result<usize> {
        self.pool
            .index_of(id)
            .ok_or_else(|| Error::Graph(vec![format!("unknown model id {id:?}")]))
    }
}

/// Which samples reached one classifier node.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    /// Pool index of the model.
    pub model: usize,
    pub mask: Vec<bool>,
}

impl Activation {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }
}

/// Per-sample output of a node: row-major `n_samples x n_classes`
/// probabilities, plus one activation record per classifier node.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub n_classes: usize,
    pub probs: Vec<f64>,
    pub activations: Vec<Activation>,
}

impl Prediction {
    pub fn row(&self, sample: usize) -> &[f64] {
        &self.probs[sample * self.n_classes..(sample + 1) * self.n_classes]
    }

    pub fn argmax(&self) -> Vec<usize> {
        self.probs.chunks_exact(self.n_classes).map(argmax).collect()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..row.len() {
        if row[i] > row[best] {
            best = i;
        }
    }
    best
}

pub fn predict(node: &Node, ctx: &EvalContext<'_>) -> Result<Prediction> {
    let mut activations = Vec::new();
    let probs = predict_into(node, ctx, &mut activations)?;
    Ok(Prediction {
        n_classes: ctx.pool.n_classes(),
        probs,
        activations,
    })
}

fn predict_into(node: &Node, ctx: &EvalContext<'_>, acts: &mut Vec<Activation>) -> Result<Vec<f64>> {
    let n = ctx.n_samples();
    match node {
        Node::Classifier(c) => {
            let model = ctx.resolve(&c.model)?;
            let probs = ctx.pool.model(model).split(ctx.split).probs();
            acts.push(Activation {
                model,
                mask: vec![true; n],
            });
            Ok(probs.iter().map(|&p| p as f64).collect())
        }
        Node::Chain(chain) => predict_chain(chain, ctx, acts),
        Node::Merger(m) => predict_merger(m, ctx, acts),
    }
}

fn predict_chain(chain: &Chain, ctx: &EvalContext<'_>, acts: &mut Vec<Activation>) -> Result<Vec<f64>> {
    let n = ctx.n_samples();
    let k = ctx.pool.n_classes();
    let mut out = vec![0.0; n * k];
    let mut active: Vec<usize> = (0..n).collect();
    let last = chain.stages.len() - 1;
    for (i, stage) in chain.stages.iter().enumerate() {
        let model = ctx.resolve(&stage.model)?;
        let probs = ctx.pool.model(model).split(ctx.split).probs();
        let mut mask = vec![false; n];
        let mut forwarded = Vec::new();
        for &s in &active {
            mask[s] = true;
            let row = &probs[s * k..(s + 1) * k];
            // Forward while the threshold is at least the top activation.
            if i < last {
                let top = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
                if chain.thresholds[i] >= top {
                    forwarded.push(s);
                    continue;
                }
            }
            for (o, &p) in out[s * k..(s + 1) * k].iter_mut().zip(row) {
                *o = p as f64;
            }
        }
        acts.push(Activation { model, mask });
        active = forwarded;
    }
    Ok(out)
}

fn predict_merger(m: &Merger, ctx: &EvalContext<'_>, acts: &mut Vec<Activation>) -> Result<Vec<f64>> {
    let n = ctx.n_samples();
    let k = ctx.pool.n_classes();
    let order = canonical_order(m);
    let mut children = Vec::with_capacity(order.len());
    let mut weights = Vec::with_capacity(order.len());
    for &(i, _, w) in &order {
        children.push(predict_into(&m.children[i], ctx, acts)?);
        weights.push(w.unwrap_or(1.0));
    }
    let mut out = vec![0.0; n * k];
    let mut rows: Vec<&[f64]> = Vec::with_capacity(children.len());
    for s in 0..n {
        rows.clear();
        rows.extend(children.iter().map(|c| &c[s * k..(s + 1) * k]));
        combine_row(m.protocol, &rows, &weights, &mut out[s * k..(s + 1) * k]);
    }
    Ok(out)
}

/// Merges one sample's child rows under `protocol`. `weights` is ignored by
/// the unweighted protocols. Weighted results are clipped at zero and
/// renormalized; a row with no positive mass falls back to the unweighted rule.
pub fn combine_row(protocol: MergeProtocol, rows: &[&[f64]], weights: &[f64], out: &mut [f64]) {
    use MergeProtocol::*;
    let n = rows.len() as f64;
    out.fill(0.0);
    match protocol {
        Average => {
            for row in rows {
                for (o, &p) in out.iter_mut().zip(*row) {
                    *o += p;
                }
            }
            out.iter_mut().for_each(|o| *o /= n);
        }
        Voting => {
            for row in rows {
                out[argmax(row)] += 1.0;
            }
            out.iter_mut().for_each(|o| *o /= n);
        }
        Max => {
            out.copy_from_slice(rows[0]);
            for row in &rows[1..] {
                for (o, &p) in out.iter_mut().zip(*row) {
                    *o = o.max(p);
                }
            }
            normalize(out);
        }
        WeightedAverage => {
            for (row, &w) in rows.iter().zip(weights) {
                for (o, &p) in out.iter_mut().zip(*row) {
                    *o += w * p;
                }
            }
            if !normalize(out) {
                combine_row(Average, rows, weights, out);
            }
        }
        WeightedVoting => {
            for (row, &w) in rows.iter().zip(weights) {
                out[argmax(row)] += w;
            }
            if !normalize(out) {
                combine_row(Voting, rows, weights, out);
            }
        }
        WeightedMax => {
            for (o, &p) in out.iter_mut().zip(rows[0]) {
                *o = weights[0] * p;
            }
            for (row, &w) in rows[1..].iter().zip(&weights[1..]) {
                for (o, &p) in out.iter_mut().zip(*row) {
                    *o = o.max(w * p);
                }
            }
            if !normalize(out) {
                combine_row(Max, rows, weights, out);
            }
        }
    }
}

/// Clips negatives to zero and scales to unit sum. Returns false (leaving the
/// row unspecified) when no positive finite mass remains.
fn normalize(row: &mut [f64]) -> bool {
    let mut sum = 0.0;
    for v in row.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
        sum += *v;
    }
    if !(sum > 0.0 && sum.is_finite()) {
        return false;
    }
    row.iter_mut().for_each(|v| *v /= sum);
    true
}

/// Objectives of `graph` under `ctx`, computed from scratch.
pub fn evaluate(graph: &EnsembleGraph, ctx: &EvalContext<'_>) -> Result<ObjectiveVector> {
    let pred = predict(&graph.root, ctx)?;
    Ok(objectives_of(&pred, ctx))
}

pub fn objectives_of(pred: &Prediction, ctx: &EvalContext<'_>) -> ObjectiveVector {
    let labels = ctx.labels();
    let n = labels.len();
    let wrong = pred
        .probs
        .chunks_exact(pred.n_classes)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) != l as usize)
        .count();
    let error = if n == 0 { 0.0 } else { wrong as f64 / n as f64 };

    let mut latency = 0.0;
    for a in &pred.activations {
        let fraction = a.count() as f64 / n as f64;
        latency += fraction * ctx.latency_of(a.model);
    }

    let size = match ctx.size_mode {
        SizeMode::PerNode => pred.activations.iter().map(|a| ctx.pool.model(a.model).params).sum(),
        SizeMode::Distinct => {
            let mut models: Vec<usize> = pred.activations.iter().map(|a| a.model).collect();
            models.sort_unstable();
            models.dedup();
            models.iter().map(|&m| ctx.pool.model(m).params).sum()
        }
    };
    ObjectiveVector { error, latency, size }
}

/// Memoizing evaluator shared by the search and enumeration drivers.
///
/// Objective vectors are cached by whole-graph structural hash; validation
/// errors of merger children are cached separately for SAMME weighting.
pub struct Evaluator<'p> {
    ctx: EvalContext<'p>,
    validation: EvalContext<'p>,
    objectives: Mutex<HashMap<StructuralHash, ObjectiveVector>>,
    validation_errors: Mutex<HashMap<StructuralHash, f64>>,
}

impl<'p> Evaluator<'p> {
    pub fn new(ctx: EvalContext<'p>) -> Self {
        let validation = ctx.with_split(Split::Validation);
        Evaluator {
            ctx,
            validation,
            objectives: Mutex::new(HashMap::new()),
            validation_errors: Mutex::new(HashMap::new()),
        }
    }

    pub fn ctx(&self) -> &EvalContext<'p> {
        &self.ctx
    }

    pub fn pool(&self) -> &'p ModelPool {
        self.ctx.pool
    }

    pub fn cached(&self, hash: StructuralHash) -> Option<ObjectiveVector> {
        self.objectives.lock().unwrap().get(&hash).copied()
    }

    pub fn insert(&self, hash: StructuralHash, v: ObjectiveVector) {
        self.objectives.lock().unwrap().insert(hash, v);
    }

    pub fn evaluate(&self, graph: &EnsembleGraph) -> Result<ObjectiveVector> {
        let hash = graph.hash();
        if let Some(v) = self.cached(hash) {
            return Ok(v);
        }
        let v = evaluate(graph, &self.ctx)?;
        self.insert(hash, v);
        Ok(v)
    }

    /// Evaluates a batch, returning objective vectors in input order and the
    /// number of graphs served from the memo (repeats within the batch
    /// included). Misses are computed on `threads` when given; the memo is
    /// filled in input order either way.
    pub fn evaluate_all(
        &self,
        graphs: &[EnsembleGraph],
        threads: Option<&rayon::ThreadPool>,
    ) -> Result<(Vec<ObjectiveVector>, usize)> {
        let mut pending: Vec<&EnsembleGraph> = Vec::new();
        let mut scheduled = std::collections::HashSet::new();
        let mut hits = 0;
        for g in graphs {
            let h = g.hash();
            if self.cached(h).is_some() || !scheduled.insert(h) {
                hits += 1;
            } else {
                pending.push(g);
            }
        }
        let ctx = &self.ctx;
        let fresh: Vec<ObjectiveVector> = match threads {
            Some(pool) => pool.install(|| {
                pending
                    .par_iter()
                    .map(|g| evaluate(g, ctx))
                    .collect::<Result<Vec<_>>>()
            })?,
            None => pending.iter().map(|g| evaluate(g, ctx)).collect::<Result<Vec<_>>>()?,
        };
        {
            let mut memo = self.objectives.lock().unwrap();
            for (g, v) in pending.iter().zip(fresh) {
                memo.insert(g.hash(), v);
            }
        }
        let memo = self.objectives.lock().unwrap();
        let out = graphs.iter().map(|g| memo[&g.hash()]).collect();
        Ok((out, hits))
    }

    /// Validation-split error of a subtree, used to weight it inside a merger.
    pub fn validation_error(&self, node: &Node) -> Result<f64> {
        let hash = structural_hash(node);
        if let Some(&e) = self.validation_errors.lock().unwrap().get(&hash) {
            return Ok(e);
        }
        let pred = predict(node, &self.validation)?;
        let e = objectives_of(&pred, &self.validation).error;
        self.validation_errors.lock().unwrap().insert(hash, e);
        Ok(e)
    }

    pub fn samme_weights(&self, children: &[Node]) -> Result<Vec<f64>> {
        let k = self.ctx.pool.n_classes();
        children
            .iter()
            .map(|c| Ok(samme_weight(self.validation_error(c)?, k)))
            .collect()
    }

    /// Recomputes SAMME weights of every weighted merger (children first) and
    /// drops stray weights from unweighted ones.
    pub fn refresh_weights(&self, node: &mut Node) -> Result<()> {
        if let Node::Merger(m) = node {
            for c in &mut m.children {
                self.refresh_weights(c)?;
            }
            m.weights = if m.protocol.is_weighted() {
                Some(self.samme_weights(&m.children)?)
            } else {
                None
            };
        }
        Ok(())
    }
}

/// A worker pool for `jobs > 1`; `None` means evaluate on the calling thread.
pub fn thread_pool(jobs: usize) -> Result<Option<rayon::ThreadPool>> {
    if jobs <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map(Some)
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}
