#![allow(dead_code)]

use earn_core::evaluator::{evaluate, predict};
use earn_core::graph::{canonical_order, Merger};
use earn_core::{EnsembleGraph, EvalContext, MergeProtocol, ModelPool, Node, Split};
use rand::Rng;

/// Threshold draw mixing the endpoints, a coarse grid and arbitrary values.
pub fn threshold<R: Rng>(rng: &mut R) -> f64 {
    match rng.random_range(0..4) {
        0 => [0.0, 1.0][rng.random_range(0..2)],
        1 => rng.random_range(0..=10) as f64 / 10.0,
        _ => rng.random::<f64>(),
    }
}

fn model<R: Rng>(rng: &mut R, pool: &ModelPool) -> String {
    pool.model(rng.random_range(0..pool.len())).id.clone()
}

pub fn random_chain<R: Rng>(rng: &mut R, pool: &ModelPool, max_stages: usize) -> Node {
    let n = rng.random_range(2..=max_stages.max(2));
    let models: Vec<String> = (0..n).map(|_| model(rng, pool)).collect();
    let thresholds = (0..n - 1).map(|_| threshold(rng)).collect();
    Node::chain(models, thresholds)
}

/// A valid random node no deeper than `depth`, over all node kinds and all
/// six protocols. Weighted mergers get arbitrary weights, some negative.
pub fn random_node<R: Rng>(rng: &mut R, pool: &ModelPool, depth: usize) -> Node {
    let kind = if depth >= 2 { rng.random_range(0..3) } else { 0 };
    match kind {
        0 => Node::classifier(model(rng, pool)),
        1 => random_chain(rng, pool, 4),
        _ => {
            let n = rng.random_range(2..=4);
            let children: Vec<Node> = (0..n).map(|_| random_node(rng, pool, depth - 1)).collect();
            let protocol = MergeProtocol::ALL[rng.random_range(0..6)];
            if protocol.is_weighted() {
                let weights = (0..n).map(|_| rng.random_range(-0.5..2.0)).collect();
                Node::weighted_merger(protocol, children, weights)
            } else {
                Node::merger(protocol, children)
            }
        }
    }
}

pub fn random_graph<R: Rng>(rng: &mut R, pool: &ModelPool, depth: usize) -> EnsembleGraph {
    EnsembleGraph::new(random_node(rng, pool, depth))
}

/// Shuffles the children (and weights) of every merger, recursively.
pub fn permute_children<R: Rng>(node: &Node, rng: &mut R) -> Node {
    match node {
        Node::Merger(m) => {
            let mut idx: Vec<usize> = (0..m.children.len()).collect();
            for i in (1..idx.len()).rev() {
                idx.swap(i, rng.random_range(0..=i));
            }
            Node::Merger(Merger {
                protocol: m.protocol,
                children: idx.iter().map(|&i| permute_children(&m.children[i], rng)).collect(),
                weights: m.weights.as_ref().map(|w| idx.iter().map(|&i| w[i]).collect()),
            })
        }
        other => other.clone(),
    }
}

/// Per-sample walk of a graph: returns the output row and appends one flag per
/// activation slot (classifier, chain stage) in canonical traversal order.
pub struct Walker<'a> {
    pub pool: &'a ModelPool,
    pub split: Split,
}

impl Walker<'_> {
    fn row(&self, id: &str, sample: usize) -> Vec<f64> {
        let set = self.pool.get(id).unwrap().split(self.split);
        set.row(sample).iter().map(|&p| p as f64).collect()
    }

    pub fn walk(&self, node: &Node, sample: usize, slots: &mut Vec<(String, bool)>) -> Vec<f64> {
        match node {
            Node::Classifier(c) => {
                slots.push((c.model.clone(), true));
                self.row(&c.model, sample)
            }
            Node::Chain(ch) => {
                let mut out = None;
                for (i, stage) in ch.stages.iter().enumerate() {
                    if out.is_some() {
                        slots.push((stage.model.clone(), false));
                        continue;
                    }
                    slots.push((stage.model.clone(), true));
                    let raw = self.pool.get(&stage.model).unwrap().split(self.split).row(sample);
                    let top = raw.iter().cloned().fold(f32::MIN, f32::max);
                    let last = i + 1 == ch.stages.len();
                    if last || (top as f64) > ch.thresholds[i] {
                        out = Some(self.row(&stage.model, sample));
                    }
                }
                out.unwrap()
            }
            Node::Merger(m) => {
                let order = canonical_order(m);
                let rows: Vec<Vec<f64>> = order
                    .iter()
                    .map(|&(i, _, _)| self.walk(&m.children[i], sample, slots))
                    .collect();
                let weights: Vec<f64> = order.iter().map(|&(_, _, w)| w.unwrap_or(1.0)).collect();
                merge(m.protocol, &rows, &weights)
            }
        }
    }
}

pub fn top_index(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn unit_sum(mut v: Vec<f64>) -> Option<Vec<f64>> {
    for x in v.iter_mut() {
        *x = x.max(0.0);
    }
    let s: f64 = v.iter().sum();
    if s > 0.0 && s.is_finite() {
        Some(v.into_iter().map(|x| x / s).collect())
    } else {
        None
    }
}

/// Reference merge semantics, written independently of the evaluator.
pub fn merge(protocol: MergeProtocol, rows: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    use MergeProtocol::*;
    let k = rows[0].len();
    let n = rows.len() as f64;
    let weighted_sum = |w: &dyn Fn(usize) -> f64| {
        let mut acc = vec![0.0; k];
        for (i, r) in rows.iter().enumerate() {
            for c in 0..k {
                acc[c] += w(i) * r[c];
            }
        }
        acc
    };
    let votes = |w: &dyn Fn(usize) -> f64| {
        let mut acc = vec![0.0; k];
        for (i, r) in rows.iter().enumerate() {
            acc[top_index(r)] += w(i);
        }
        acc
    };
    let peak = |w: &dyn Fn(usize) -> f64| {
        (0..k)
            .map(|c| {
                rows.iter()
                    .enumerate()
                    .map(|(i, r)| w(i) * r[c])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect::<Vec<f64>>()
    };
    match protocol {
        Average => {
            let mut acc = vec![0.0; k];
            for r in rows {
                for c in 0..k {
                    acc[c] += r[c];
                }
            }
            acc.into_iter().map(|x| x / n).collect()
        }
        Voting => votes(&|_| 1.0).into_iter().map(|x| x / n).collect(),
        Max => unit_sum(peak(&|_| 1.0)).unwrap(),
        WeightedAverage => unit_sum(weighted_sum(&|i| weights[i])).unwrap_or_else(|| merge(Average, rows, weights)),
        WeightedVoting => unit_sum(votes(&|i| weights[i])).unwrap_or_else(|| merge(Voting, rows, weights)),
        WeightedMax => unit_sum(peak(&|i| weights[i])).unwrap_or_else(|| merge(Max, rows, weights)),
    }
}

/// Asserts that the evaluator agrees with the per-sample walk on rows, error,
/// activation fractions, latency and size.
pub fn check_against_walk(graph: &EnsembleGraph, pool: &ModelPool, split: Split) {
    let ctx = EvalContext::new(pool, split, "gpu").unwrap();
    let pred = predict(&graph.root, &ctx).unwrap();
    let v = evaluate(graph, &ctx).unwrap();
    let walker = Walker { pool, split };
    let labels = pool.labels(split);
    let n = labels.len();

    let mut counts: Vec<usize> = Vec::new();
    let mut slot_models: Vec<String> = Vec::new();
    let mut wrong = 0;
    for s in 0..n {
        let mut slots = Vec::new();
        let row = walker.walk(&graph.root, s, &mut slots);
        assert_eq!(pred.row(s), row.as_slice(), "sample {s} of {graph}");
        if top_index(&row) != labels[s] as usize {
            wrong += 1;
        }
        if s == 0 {
            counts = vec![0; slots.len()];
            slot_models = slots.iter().map(|(m, _)| m.clone()).collect();
        }
        for (i, (_, on)) in slots.iter().enumerate() {
            counts[i] += *on as usize;
        }
    }
    assert_eq!(v.error, wrong as f64 / n as f64);
    assert_eq!(pred.activations.len(), counts.len());
    let mut latency = 0.0;
    for (a, (c, id)) in pred.activations.iter().zip(counts.iter().zip(&slot_models)) {
        assert_eq!(&pool.model(a.model).id, id);
        let got = a.count() as f64 / n as f64;
        let want = *c as f64 / n as f64;
        assert!((got - want).abs() <= 1e-12);
        latency += want * pool.get(id).unwrap().latency("gpu").unwrap();
    }
    assert!((v.latency - latency).abs() <= 1e-12 * latency.max(1.0));
    let mut ids = slot_models.clone();
    ids.sort();
    ids.dedup();
    let size: u64 = ids.iter().map(|id| pool.get(id).unwrap().params).sum();
    assert_eq!(v.size, size);
}
