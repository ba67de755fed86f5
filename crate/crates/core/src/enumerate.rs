//! Exhaustive baselines: every k-model merger and every two-stage chain.

use std::fmt;
use std::io;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::{thread_pool, Evaluator, ObjectiveSet, ObjectiveVector};
use crate::graph::{EnsembleGraph, MergeProtocol, Node};
use crate::moo::pareto_front;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Bagging,
    Boosting,
    Chain2,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Bagging => "bagging",
            Strategy::Boosting => "boosting",
            Strategy::Chain2 => "chain2",
        }
    }

    /// Protocols enumerated when none are given.
    pub fn default_protocols(self) -> Vec<MergeProtocol> {
        match self {
            Strategy::Bagging => vec![MergeProtocol::Average],
            Strategy::Boosting => vec![MergeProtocol::WeightedAverage],
            Strategy::Chain2 => vec![],
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bagging" => Ok(Strategy::Bagging),
            "boosting" => Ok(Strategy::Boosting),
            "chain2" => Ok(Strategy::Chain2),
            other => Err(Error::Config(format!(
                "unknown strategy {other:?} (expected bagging, boosting or chain2)"
            ))),
        }
    }
}

/// `{0.00, 0.01, ..., 0.99}`.
pub fn default_grid() -> Vec<f64> {
    (0..100).map(|i| i as f64 / 100.0).collect()
}

/// `{0, step, 2 step, ...}` strictly below 1, plus 1 when `inclusive`.
pub fn grid(step: f64, inclusive: bool) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Config(format!("grid step {step} outside (0, 1]")));
    }
    let n = (1.0 / step).round();
    let mut out: Vec<f64> = if (n * step - 1.0).abs() < 1e-9 {
        (0..n as usize).map(|i| i as f64 / n).collect()
    } else {
        (0..).map(|i| i as f64 * step).take_while(|t| *t < 1.0).collect()
    };
    if inclusive {
        out.push(1.0);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnumSpec {
    pub strategy: Strategy,
    pub k: usize,
    pub protocols: Vec<MergeProtocol>,
    pub grid: Vec<f64>,
}

impl EnumSpec {
    pub fn bagging(k: usize) -> Self {
        Self::merged(Strategy::Bagging, k)
    }

    pub fn boosting(k: usize) -> Self {
        Self::merged(Strategy::Boosting, k)
    }

    fn merged(strategy: Strategy, k: usize) -> Self {
        EnumSpec {
            strategy,
            k,
            protocols: strategy.default_protocols(),
            grid: vec![],
        }
    }

    pub fn chain2(grid: Vec<f64>) -> Self {
        EnumSpec {
            strategy: Strategy::Chain2,
            k: 2,
            protocols: vec![],
            grid,
        }
    }

    pub fn check(&self) -> Result<()> {
        match self.strategy {
            Strategy::Chain2 => {
                if self.k != 2 {
                    return Err(Error::Config("chain2 requires k = 2".into()));
                }
                if let Some(t) = self.grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
                    return Err(Error::Config(format!("threshold {t} outside [0, 1]")));
                }
            }
            _ => {
                if self.protocols.is_empty() {
                    return Err(Error::Config("no merge protocols given".into()));
                }
            }
        }
        Ok(())
    }

    pub fn run(&self, evaluator: &Evaluator<'_>, jobs: usize) -> Result<Vec<Enumerated>> {
        self.check()?;
        match self.strategy {
            Strategy::Chain2 => enumerate_chains2(evaluator, &self.grid, jobs),
            _ => enumerate_merged(evaluator, self.k, &self.protocols, jobs),
        }
    }
}

/// One enumerated ensemble with its objectives.
#[derive(Debug, Clone, PartialEq)]
pub struct Enumerated {
    pub strategy: Strategy,
    pub members: Vec<String>,
    pub protocol: Option<MergeProtocol>,
    pub tau: Option<f64>,
    pub graph: EnsembleGraph,
    pub objectives: ObjectiveVector,
}

impl Enumerated {
    pub fn record(&self) -> EnumRecord {
        EnumRecord {
            strategy: self.strategy,
            members: self.members.join(";"),
            protocol: self.protocol,
            tau: self.tau,
            error: self.objectives.error,
            latency_s: self.objectives.latency,
            size_params: self.objectives.size,
        }
    }
}

/// CSV row of an enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumRecord {
    pub strategy: Strategy,
    /// Model ids joined by `;`, in chain order for chains.
    pub members: String,
    pub protocol: Option<MergeProtocol>,
    pub tau: Option<f64>,
    pub error: f64,
    pub latency_s: f64,
    pub size_params: u64,
}

impl EnumRecord {
    pub fn member_ids(&self) -> Vec<&str> {
        self.members.split(';').collect()
    }

    /// Rebuilds the ensemble; weighted mergers get SAMME weights from
    /// `evaluator`.
    pub fn graph(&self, evaluator: &Evaluator<'_>) -> Result<EnsembleGraph> {
        let ids = self.member_ids();
        let mut root = match (self.strategy, self.protocol, self.tau) {
            (Strategy::Chain2, _, Some(tau)) => Node::chain(ids, vec![tau]),
            (Strategy::Chain2, _, None) => {
                return Err(Error::Config(format!("chain row {:?} has no tau", self.members)))
            }
            (_, Some(p), _) => Node::merger(p, ids.into_iter().map(Node::classifier).collect()),
            (_, None, _) => {
                return Err(Error::Config(format!("merger row {:?} has no protocol", self.members)))
            }
        };
        evaluator.refresh_weights(&mut root)?;
        Ok(EnsembleGraph::new(root))
    }
}

/// Lexicographic k-combinations of `0..n`.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k == 0 || k > n {
        return out;
    }
    let mut c: Vec<usize> = (0..k).collect();
    loop {
        out.push(c.clone());
        let Some(i) = (0..k).rev().find(|&i| c[i] != i + n - k) else {
            return out;
        };
        c[i] += 1;
        for j in i + 1..k {
            c[j] = c[j - 1] + 1;
        }
    }
}

fn evaluated(
    evaluator: &Evaluator<'_>,
    items: Vec<(Strategy, Vec<String>, Option<MergeProtocol>, Option<f64>, EnsembleGraph)>,
    jobs: usize,
) -> Result<Vec<Enumerated>> {
    let threads = thread_pool(jobs)?;
    let graphs: Vec<EnsembleGraph> = items.iter().map(|i| i.4.clone()).collect();
    let (objectives, _) = evaluator.evaluate_all(&graphs, threads.as_ref())?;
    Ok(items
        .into_iter()
        .zip(objectives)
        .map(|((strategy, members, protocol, tau, graph), objectives)| Enumerated {
            strategy,
            members,
            protocol,
            tau,
            graph,
            objectives,
        })
        .collect())
}

/// Every combination of `k` distinct pool models under every protocol, in
/// lexicographic combination order, then protocol order as given.
pub fn enumerate_merged(
    evaluator: &Evaluator<'_>,
    k: usize,
    protocols: &[MergeProtocol],
    jobs: usize,
) -> Result<Vec<Enumerated>> {
    let pool = evaluator.pool();
    if k < 2 || k > pool.len() {
        return Err(Error::Config(format!(
            "ensemble size {k} outside [2, {}]",
            pool.len()
        )));
    }
    let mut items = Vec::new();
    for combo in combinations(pool.len(), k) {
        let members: Vec<String> = combo.iter().map(|&i| pool.model(i).id.clone()).collect();
        for &p in protocols {
            let mut root = Node::merger(p, members.iter().map(|m| Node::classifier(m.clone())).collect());
            evaluator.refresh_weights(&mut root)?;
            let strategy = if p.is_weighted() {
                Strategy::Boosting
            } else {
                Strategy::Bagging
            };
            items.push((strategy, members.clone(), Some(p), None, EnsembleGraph::new(root)));
        }
    }
    evaluated(evaluator, items, jobs)
}

/// One chain per unordered model pair and threshold. The smaller model
/// (by params, then id) runs first.
pub fn enumerate_chains2(evaluator: &Evaluator<'_>, grid: &[f64], jobs: usize) -> Result<Vec<Enumerated>> {
    let pool = evaluator.pool();
    if pool.len() < 2 {
        return Err(Error::Config("chain enumeration needs at least 2 models".into()));
    }
    let mut items = Vec::new();
    for pair in combinations(pool.len(), 2) {
        let (mut a, mut b) = (pool.model(pair[0]), pool.model(pair[1]));
        if (b.params, &b.id) < (a.params, &a.id) {
            std::mem::swap(&mut a, &mut b);
        }
        let members = vec![a.id.clone(), b.id.clone()];
        for &tau in grid {
            let graph = EnsembleGraph::new(Node::chain(members.clone(), vec![tau]));
            items.push((Strategy::Chain2, members.clone(), None, Some(tau), graph));
        }
    }
    evaluated(evaluator, items, jobs)
}

/// The rank-0 subset over `objectives`, in input order.
pub fn pareto_filter(rows: &[Enumerated], objectives: &ObjectiveSet) -> Vec<Enumerated> {
    let points: Vec<Vec<f64>> = rows.iter().map(|r| objectives.project(&r.objectives)).collect();
    pareto_front(&points).into_iter().map(|i| rows[i].clone()).collect()
}

pub fn write_csv<W: io::Write>(rows: &[Enumerated], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r.record())?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv<R: io::Read>(input: R) -> Result<Vec<EnumRecord>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}
