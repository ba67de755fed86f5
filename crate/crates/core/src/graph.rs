//! Ensemble genome: a rooted tree of classifier, chain and merger nodes.
//!
//! Chains hold only classifier stages with one threshold trigger between
//! consecutive stages. Mergers hold any node kind, including nested mergers.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pool::ModelPool;

pub const DEFAULT_MAX_DEPTH: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeProtocol {
    Average,
    Voting,
    Max,
    WeightedAverage,
    WeightedVoting,
    WeightedMax,
}

impl MergeProtocol {
    pub const ALL: [MergeProtocol; 6] = [
        MergeProtocol::Average,
        MergeProtocol::Voting,
        MergeProtocol::Max,
        MergeProtocol::WeightedAverage,
        MergeProtocol::WeightedVoting,
        MergeProtocol::WeightedMax,
    ];

    pub fn is_weighted(self) -> bool {
        matches!(
            self,
            MergeProtocol::WeightedAverage | MergeProtocol::WeightedVoting | MergeProtocol::WeightedMax
        )
    }

    /// The same merge rule with the weighting toggled.
    pub fn toggle_weighting(self) -> MergeProtocol {
        use MergeProtocol::*;
        match self {
            Average => WeightedAverage,
            Voting => WeightedVoting,
            Max => WeightedMax,
            WeightedAverage => Average,
            WeightedVoting => Voting,
            WeightedMax => Max,
        }
    }

    pub fn unweighted(self) -> MergeProtocol {
        if self.is_weighted() {
            self.toggle_weighting()
        } else {
            self
        }
    }

    pub fn as_str(self) -> &'static str {
        use MergeProtocol::*;
        match self {
            Average => "average",
            Voting => "voting",
            Max => "max",
            WeightedAverage => "weighted_average",
            WeightedVoting => "weighted_voting",
            WeightedMax => "weighted_max",
        }
    }

    fn tag(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for MergeProtocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MergeProtocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MergeProtocol::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown merge protocol {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub model: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    pub stages: Vec<Classifier>,
    /// `thresholds[i]` gates the hand-off from stage `i` to stage `i + 1`.
    pub thresholds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Merger {
    pub protocol: MergeProtocol,
    pub children: Vec<Node>,
    /// Per-child weights; present iff the protocol is weighted.
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WireNode", into = "WireNode")]
pub enum Node {
    Classifier(Classifier),
    Chain(Chain),
    Merger(Merger),
}

impl Node {
    pub fn classifier(model: impl Into<String>) -> Node {
        Node::Classifier(Classifier {
            model: model.into(),
        })
    }

    pub fn chain<S: Into<String>>(models: impl IntoIterator<Item = S>, thresholds: Vec<f64>) -> Node {
        Node::Chain(Chain {
            stages: models
                .into_iter()
                .map(|m| Classifier { model: m.into() })
                .collect(),
            thresholds,
        })
    }

    /// Unweighted merger; see [`Node::weighted_merger`] for the weighted protocols.
    pub fn merger(protocol: MergeProtocol, children: Vec<Node>) -> Node {
        Node::Merger(Merger {
            protocol,
            children,
            weights: None,
        })
    }

    pub fn weighted_merger(protocol: MergeProtocol, children: Vec<Node>, weights: Vec<f64>) -> Node {
        Node::Merger(Merger {
            protocol,
            children,
            weights: Some(weights),
        })
    }

    /// Classifier = 1, chain = 2, merger = 1 + deepest child.
    pub fn depth(&self) -> usize {
        match self {
            Node::Classifier(_) => 1,
            Node::Chain(_) => 2,
            Node::Merger(m) => 1 + m.children.iter().map(Node::depth).max().unwrap_or(0),
        }
    }

    /// Model ids of every classifier node, in pre-order (duplicates kept).
    pub fn model_ids(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_ids(&mut out);
        out
    }

    fn collect_ids<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Node::Classifier(c) => out.push(&c.model),
            Node::Chain(ch) => out.extend(ch.stages.iter().map(|s| s.model.as_str())),
            Node::Merger(m) => m.children.iter().for_each(|c| c.collect_ids(out)),
        }
    }

    pub fn classifier_count(&self) -> usize {
        match self {
            Node::Classifier(_) => 1,
            Node::Chain(ch) => ch.stages.len(),
            Node::Merger(m) => m.children.iter().map(Node::classifier_count).sum(),
        }
    }

    /// The node reached by following merger child indices from `self`.
    pub fn at(&self, path: &[usize]) -> Option<&Node> {
        match path.split_first() {
            None => Some(self),
            Some((&i, rest)) => match self {
                Node::Merger(m) => m.children.get(i)?.at(rest),
                _ => None,
            },
        }
    }

    pub fn at_mut(&mut self, path: &[usize]) -> Option<&mut Node> {
        match path.split_first() {
            None => Some(self),
            Some((&i, rest)) => match self {
                Node::Merger(m) => m.children.get_mut(i)?.at_mut(rest),
                _ => None,
            },
        }
    }

    pub fn has_negative_weights(&self) -> bool {
        match self {
            Node::Merger(m) => {
                m.weights.iter().flatten().any(|&w| w < 0.0)
                    || m.children.iter().any(Node::has_negative_weights)
            }
            _ => false,
        }
    }
}

/// An ensemble candidate. Cheap to clone relative to evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnsembleGraph {
    pub root: Node,
}

impl EnsembleGraph {
    pub fn new(root: Node) -> Self {
        EnsembleGraph { root }
    }

    pub fn single(model: impl Into<String>) -> Self {
        EnsembleGraph::new(Node::classifier(model))
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn hash(&self) -> StructuralHash {
        structural_hash(&self.root)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph serialization is infallible")
    }

    /// Parses the JSON wire form without checking it against a pool.
    pub fn parse_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Parses and validates against `pool`.
    pub fn from_json(text: &str, pool: &ModelPool, max_depth: usize) -> Result<Self> {
        let graph = Self::parse_json(text)?;
        validate(&graph, pool, max_depth).map_err(|v| {
            Error::Graph(v.into_iter().map(|v| v.to_string()).collect())
        })?;
        Ok(graph)
    }
}

impl fmt::Display for EnsembleGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn write(node: &Node, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            match node {
                Node::Classifier(c) => f.write_str(&c.model),
                Node::Chain(ch) => {
                    f.write_str("chain(")?;
                    for (i, s) in ch.stages.iter().enumerate() {
                        if i > 0 {
                            write!(f, " >{}> ", ch.thresholds.get(i - 1).copied().unwrap_or(f64::NAN))?;
                        }
                        f.write_str(&s.model)?;
                    }
                    f.write_str(")")
                }
                Node::Merger(m) => {
                    write!(f, "{}(", m.protocol)?;
                    for (i, c) in m.children.iter().enumerate() {
                        if i > 0 {
                            f.write_str(", ")?;
                        }
                        write(c, f)?;
                    }
                    f.write_str(")")
                }
            }
        }
        write(&self.root, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Returns every invariant violation found, each tagged with its node path.
pub fn validate(
    graph: &EnsembleGraph,
    pool: &ModelPool,
    max_depth: usize,
) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    let depth = graph.depth();
    if depth > max_depth {
        out.push(Violation {
            path: "root".into(),
            message: format!("depth {depth} exceeds max_depth {max_depth}"),
        });
    }
    validate_node(&graph.root, pool, "root".to_string(), &mut out);
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

fn validate_node(node: &Node, pool: &ModelPool, path: String, out: &mut Vec<Violation>) {
    let mut push = |path: &str, message: String| {
        out.push(Violation {
            path: path.to_string(),
            message,
        })
    };
    match node {
        Node::Classifier(c) => {
            if pool.index_of(&c.model).is_none() {
                push(&path, format!("unknown model id {:?}", c.model));
            }
        }
        Node::Chain(ch) => {
            if ch.stages.len() < 2 {
                push(&path, format!("chain requires ≥ 2 stages, found {}", ch.stages.len()));
            }
            if ch.thresholds.len() + 1 != ch.stages.len() {
                push(
                    &path,
                    format!(
                        "chain with {} stages needs {} thresholds, found {}",
                        ch.stages.len(),
                        ch.stages.len().saturating_sub(1),
                        ch.thresholds.len()
                    ),
                );
            }
            for (i, t) in ch.thresholds.iter().enumerate() {
                if !(0.0..=1.0).contains(t) {
                    push(&format!("{path}/thresholds[{i}]"), format!("threshold {t} outside [0, 1]"));
                }
            }
            for (i, s) in ch.stages.iter().enumerate() {
                if pool.index_of(&s.model).is_none() {
                    push(&format!("{path}/stages[{i}]"), format!("unknown model id {:?}", s.model));
                }
            }
        }
        Node::Merger(m) => {
            if m.children.len() < 2 {
                push(&path, format!("merger requires ≥ 2 children, found {}", m.children.len()));
            }
            match (&m.weights, m.protocol.is_weighted()) {
                (None, true) => push(&path, format!("protocol {} requires per-child weights", m.protocol)),
                (Some(_), false) => push(&path, format!("protocol {} takes no weights", m.protocol)),
                (Some(w), true) => {
                    if w.len() != m.children.len() {
                        push(
                            &path,
                            format!("{} weights for {} children", w.len(), m.children.len()),
                        );
                    }
                    if w.iter().any(|w| !w.is_finite()) {
                        push(&path, "non-finite weight".to_string());
                    }
                }
                (None, false) => {}
            }
            for (i, c) in m.children.iter().enumerate() {
                validate_node(c, pool, format!("{path}/children[{i}]"), out);
            }
        }
    }
}

/// 64-bit digest of a graph's structure.
///
/// Thresholds and weights are quantized to 1e-6. Merger children are sorted by
/// their own digest (paired with their weight), so child order never matters;
/// chain stage order does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StructuralHash(pub u64);

impl fmt::Display for StructuralHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl FromStr for StructuralHash {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        u64::from_str_radix(s, 16)
            .map(StructuralHash)
            .map_err(|_| Error::Config(format!("bad structural hash {s:?}")))
    }
}

impl Serialize for StructuralHash {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StructuralHash {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// FNV-1a, stable across platforms and process runs.
struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.bytes(s.as_bytes());
    }
}

pub fn quantize(x: f64) -> i64 {
    (x * 1e6).round() as i64
}

pub fn structural_hash(node: &Node) -> StructuralHash {
    let mut h = Fnv::new();
    match node {
        Node::Classifier(c) => {
            h.bytes(b"C");
            h.str(&c.model);
        }
        Node::Chain(ch) => {
            h.bytes(b"H");
            h.u64(ch.stages.len() as u64);
            for s in &ch.stages {
                h.str(&s.model);
            }
            h.u64(ch.thresholds.len() as u64);
            for &t in &ch.thresholds {
                h.u64(quantize(t) as u64);
            }
        }
        Node::Merger(m) => {
            h.bytes(b"M");
            h.bytes(&[m.protocol.tag()]);
            for (child, weight) in canonical_children(m) {
                h.u64(child.0);
                if let Some(w) = weight {
                    h.u64(quantize(w) as u64);
                }
            }
            h.u64(m.children.len() as u64);
        }
    }
    StructuralHash(h.0)
}

/// Merger children as `(digest, weight)` in canonical order, together with
/// their original index. Evaluation combines children in this order so that
/// floating-point results do not depend on how children were listed.
pub fn canonical_order(m: &Merger) -> Vec<(usize, StructuralHash, Option<f64>)> {
    let mut keyed: Vec<(usize, StructuralHash, Option<f64>)> = m
        .children
        .iter()
        .enumerate()
        .map(|(i, c)| (i, structural_hash(c), m.weights.as_ref().and_then(|w| w.get(i).copied())))
        .collect();
    keyed.sort_by(|a, b| {
        a.1.cmp(&b.1)
            .then_with(|| a.2.map(quantize).cmp(&b.2.map(quantize)))
            .then_with(|| a.2.map(f64::to_bits).cmp(&b.2.map(f64::to_bits)))
    });
    keyed
}

fn canonical_children(m: &Merger) -> impl Iterator<Item = (StructuralHash, Option<f64>)> {
    canonical_order(m).into_iter().map(|(_, h, w)| (h, w))
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum WireNode {
    Classifier {
        model: String,
    },
    Chain {
        stages: Vec<WireNode>,
        thresholds: Vec<f64>,
    },
    Merger {
        protocol: MergeProtocol,
        children: Vec<WireNode>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
    },
}

impl TryFrom<WireNode> for Node {
    type Error = String;

    fn try_from(w: WireNode) -> std::result::Result<Self, String> {
        Ok(match w {
            WireNode::Classifier { model } => Node::Classifier(Classifier { model }),
            WireNode::Chain { stages, thresholds } => Node::Chain(Chain {
                stages: stages
                    .into_iter()
                    .map(|s| match s {
                        WireNode::Classifier { model } => Ok(Classifier { model }),
                        _ => Err("chain stages must be classifier nodes".to_string()),
                    })
                    .collect::<std::result::Result<_, _>>()?,
                thresholds,
            }),
            WireNode::Merger {
                protocol,
                children,
                weights,
            } => Node::Merger(Merger {
                protocol,
                children: children
                    .into_iter()
                    .map(Node::try_from)
                    .collect::<std::result::Result<_, _>>()?,
                weights,
            }),
        })
    }
}

impl From<Node> for WireNode {
    fn from(n: Node) -> Self {
        match n {
            Node::Classifier(c) => WireNode::Classifier { model: c.model },
            Node::Chain(ch) => WireNode::Chain {
                stages: ch
                    .stages
                    .into_iter()
                    .map(|s| WireNode::Classifier { model: s.model })
                    .collect(),
                thresholds: ch.thresholds,
            },
            Node::Merger(m) => WireNode::Merger {
                protocol: m.protocol,
                children: m.children.into_iter().map(WireNode::from).collect(),
                weights: m.weights,
            },
        }
    }
}
