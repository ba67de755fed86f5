//! Variation and selection operators on ensemble graphs.

use rand::Rng;

use crate::error::Result;
use crate::evaluator::Evaluator;
use crate::graph::{Classifier, EnsembleGraph, MergeProtocol, Node};
use super::{EarnConfig, Individual};

/// Walks (and crossover site draws) attempted before falling back.
pub const MAX_ATTEMPTS: usize = 10;

/// Fitter wins: lower rank, then larger crowding, then lower structural hash.
pub fn fitter(a: &Individual, b: &Individual) -> bool {
    match a.fitness.compare(&b.fitness) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => a.hash < b.hash,
    }
}

/// Samples `k` members uniformly with replacement and returns the index of
/// the fittest.
pub fn tournament_select<R: Rng>(population: &[Individual], k: usize, rng: &mut R) -> usize {
    assert!(!population.is_empty(), "tournament over an empty population");
    let mut best = rng.random_range(0..population.len());
    for _ in 1..k.max(1) {
        let challenger = rng.random_range(0..population.len());
        if fitter(&population[challenger], &population[best]) {
            best = challenger;
        }
    }
    best
}

/// A mutable position in a graph, addressed by merger child indices.
#[derive(Debug, Clone, PartialEq)]
enum Site {
    Merger { path: Vec<usize> },
    /// Classifier that is the root or a merger child.
    Classifier { path: Vec<usize> },
    Stage { path: Vec<usize>, stage: usize },
    Trigger { path: Vec<usize>, trigger: usize },
}

/// Pre-order listing of every mutable site. Chain members are interleaved as
/// stage 0, trigger 0, stage 1, ...
fn sites(node: &Node, path: &mut Vec<usize>, out: &mut Vec<Site>) {
    match node {
        Node::Classifier(_) => out.push(Site::Classifier { path: path.clone() }),
        Node::Chain(ch) => {
            for i in 0..ch.stages.len() {
                out.push(Site::Stage {
                    path: path.clone(),
                    stage: i,
                });
                if i < ch.thresholds.len() {
                    out.push(Site::Trigger {
                        path: path.clone(),
                        trigger: i,
                    });
                }
            }
        }
        Node::Merger(m) => {
            out.push(Site::Merger { path: path.clone() });
            for (i, c) in m.children.iter().enumerate() {
                path.push(i);
                sites(c, path, out);
                path.pop();
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    AddMember,
    SwitchProtocol,
    NudgeThreshold,
    Replace,
    ExtendChain,
    /// Turns a standalone classifier into a two-member average merger.
    StartMerger,
}

struct Mutator<'a, R> {
    config: &'a EarnConfig,
    models: Vec<&'a str>,
    rng: &'a mut R,
}

impl<R: Rng> Mutator<'_, R> {
    fn ops(&self, site: &Site) -> Vec<Op> {
        let can_replace = self.models.len() > 1;
        match site {
            Site::Merger { .. } => vec![Op::AddMember, Op::SwitchProtocol],
            Site::Trigger { .. } => vec![Op::NudgeThreshold],
            Site::Stage { .. } => {
                let mut ops = vec![Op::ExtendChain];
                if can_replace {
                    ops.insert(0, Op::Replace);
                }
                ops
            }
            Site::Classifier { path } => {
                let mut ops = Vec::new();
                if can_replace {
                    ops.push(Op::Replace);
                }
                // A chain or a merger adds one level below this position.
                if self.config.max_depth >= path.len() + 2 {
                    ops.push(Op::ExtendChain);
                    ops.push(Op::StartMerger);
                }
                ops
            }
        }
    }

    fn random_model(&mut self) -> String {
        self.models[self.rng.random_range(0..self.models.len())].to_string()
    }

    fn other_model(&mut self, current: &str) -> String {
        let others: Vec<&str> = self.models.iter().copied().filter(|m| *m != current).collect();
        others[self.rng.random_range(0..others.len())].to_string()
    }

    fn switch_protocol(&mut self, current: MergeProtocol) -> MergeProtocol {
        if self.config.mutate_all_protocols {
            let others: Vec<MergeProtocol> = MergeProtocol::ALL
                .into_iter()
                .filter(|&p| p != current)
                .collect();
            others[self.rng.random_range(0..others.len())]
        } else {
            current.toggle_weighting()
        }
    }

    /// Applies a uniformly chosen applicable operator. Returns false when the
    /// site has none.
    fn apply(&mut self, root: &mut Node, site: &Site) -> bool {
        let ops = self.ops(site);
        if ops.is_empty() {
            return false;
        }
        let op = ops[self.rng.random_range(0..ops.len())];
        match site {
            Site::Merger { path } => {
                let fresh = Node::classifier(self.random_model());
                let protocol = match root.at(path) {
                    Some(Node::Merger(m)) => m.protocol,
                    _ => unreachable!("merger site"),
                };
                let next = (op == Op::SwitchProtocol).then(|| self.switch_protocol(protocol));
                let Some(Node::Merger(m)) = root.at_mut(path) else {
                    unreachable!("merger site")
                };
                match next {
                    Some(p) => m.protocol = p,
                    None => {
                        m.children.push(fresh);
                        if let Some(w) = &mut m.weights {
                            w.push(0.0);
                        }
                    }
                }
            }
            Site::Trigger { path, trigger } => {
                let up = self.rng.random_bool(0.5);
                let step = if up {
                    self.config.threshold_step
                } else {
                    -self.config.threshold_step
                };
                let Some(Node::Chain(ch)) = root.at_mut(path) else {
                    unreachable!("trigger site")
                };
                let t = &mut ch.thresholds[*trigger];
                *t = snap((*t + step).clamp(0.0, 1.0));
            }
            Site::Stage { path, stage } => {
                let current = match root.at(path) {
                    Some(Node::Chain(ch)) => ch.stages[*stage].model.clone(),
                    _ => unreachable!("stage site"),
                };
                let model = if op == Op::Replace {
                    self.other_model(&current)
                } else {
                    self.random_model()
                };
                let tau = self.config.initial_threshold;
                let Some(Node::Chain(ch)) = root.at_mut(path) else {
                    unreachable!("stage site")
                };
                if op == Op::Replace {
                    ch.stages[*stage].model = model;
                } else {
                    // The extended stage keeps its own gate; the new stage
                    // gets a fresh one.
                    let at = (*stage + 1).min(ch.thresholds.len());
                    ch.thresholds.insert(at, tau);
                    ch.stages.insert(*stage + 1, Classifier { model });
                }
            }
            Site::Classifier { path } => {
                let node = root.at_mut(path).expect("classifier site");
                let Node::Classifier(c) = node else {
                    unreachable!("classifier site")
                };
                let current = c.model.clone();
                *node = match op {
                    Op::Replace => Node::classifier(self.other_model(&current)),
                    Op::ExtendChain => {
                        Node::chain([current, self.random_model()], vec![self.config.initial_threshold])
                    }
                    _ => Node::merger(
                        MergeProtocol::Average,
                        vec![Node::classifier(current), Node::classifier(self.random_model())],
                    ),
                };
            }
        }
        true
    }
}

fn snap(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Mutates a copy of `parent`: every site independently mutates with
/// probability `node_mutation_prob`, choosing uniformly among its applicable
/// operators. A walk that changes nothing is retried; after
/// [`MAX_ATTEMPTS`] walks one random site is forced to mutate. SAMME weights
/// are refreshed on the result.
pub fn mutate<R: Rng>(
    parent: &EnsembleGraph,
    config: &EarnConfig,
    evaluator: &Evaluator<'_>,
    rng: &mut R,
) -> Result<EnsembleGraph> {
    let pool = evaluator.pool();
    let mut mutator = Mutator {
        config,
        models: pool.models().iter().map(|m| m.id.as_str()).collect(),
        rng,
    };
    let original = parent.hash();
    let mut all = Vec::new();
    sites(&parent.root, &mut Vec::new(), &mut all);

    for _ in 0..MAX_ATTEMPTS {
        let chosen: Vec<&Site> = all
            .iter()
            .filter(|_| mutator.rng.random::<f64>() < config.node_mutation_prob)
            .collect();
        if chosen.is_empty() {
            continue;
        }
        let mut root = parent.root.clone();
        let mut changed = false;
        // Reverse pre-order keeps every remaining site's address valid.
        for site in chosen.into_iter().rev() {
            changed |= mutator.apply(&mut root, site);
        }
        if changed {
            evaluator.refresh_weights(&mut root)?;
            let child = EnsembleGraph::new(root);
            if child.hash() != original {
                return Ok(child);
            }
        }
    }

    let mutable: Vec<&Site> = all.iter().filter(|s| !mutator.ops(s).is_empty()).collect();
    if mutable.is_empty() {
        return Ok(parent.clone());
    }
    for _ in 0..MAX_ATTEMPTS {
        let site = mutable[mutator.rng.random_range(0..mutable.len())];
        let mut root = parent.root.clone();
        mutator.apply(&mut root, site);
        evaluator.refresh_weights(&mut root)?;
        let child = EnsembleGraph::new(root);
        if child.hash() != original {
            return Ok(child);
        }
    }
    Ok(parent.clone())
}

/// Swap point in a graph: any node slot (root or merger child) or a chain stage.
#[derive(Debug, Clone, PartialEq)]
enum Slot {
    Node(Vec<usize>),
    Stage(Vec<usize>, usize),
}

fn slots(node: &Node, path: &mut Vec<usize>, out: &mut Vec<Slot>) {
    out.push(Slot::Node(path.clone()));
    match node {
        Node::Classifier(_) => {}
        Node::Chain(ch) => {
            out.extend((0..ch.stages.len()).map(|i| Slot::Stage(path.clone(), i)));
        }
        Node::Merger(m) => {
            for (i, c) in m.children.iter().enumerate() {
                path.push(i);
                slots(c, path, out);
                path.pop();
            }
        }
    }
}

fn subtree(root: &Node, slot: &Slot) -> Node {
    match slot {
        Slot::Node(path) => root.at(path).expect("slot").clone(),
        Slot::Stage(path, i) => match root.at(path) {
            Some(Node::Chain(ch)) => Node::Classifier(ch.stages[*i].clone()),
            _ => unreachable!("stage slot"),
        },
    }
}

fn put(root: &mut Node, slot: &Slot, node: Node) {
    match slot {
        Slot::Node(path) => *root.at_mut(path).expect("slot") = node,
        Slot::Stage(path, i) => match (root.at_mut(path), node) {
            (Some(Node::Chain(ch)), Node::Classifier(c)) => ch.stages[*i] = c,
            _ => unreachable!("stage slots only take classifiers"),
        },
    }
}

/// Single-point subtree crossover. Slots are drawn uniformly in each parent
/// until a type-compatible pair turns up (chain stages accept only
/// classifiers). Identical parents, no compatible pair within
/// [`MAX_ATTEMPTS`] draws, or a child deeper than `max_depth` all yield clones
/// of the parents.
pub fn crossover<R: Rng>(
    first: &EnsembleGraph,
    second: &EnsembleGraph,
    config: &EarnConfig,
    evaluator: &Evaluator<'_>,
    rng: &mut R,
) -> Result<(EnsembleGraph, EnsembleGraph)> {
    let clones = || (first.clone(), second.clone());
    if first.hash() == second.hash() {
        return Ok(clones());
    }
    let (mut a_slots, mut b_slots) = (Vec::new(), Vec::new());
    slots(&first.root, &mut Vec::new(), &mut a_slots);
    slots(&second.root, &mut Vec::new(), &mut b_slots);

    for _ in 0..MAX_ATTEMPTS {
        let a = &a_slots[rng.random_range(0..a_slots.len())];
        let b = &b_slots[rng.random_range(0..b_slots.len())];
        let (from_a, from_b) = (subtree(&first.root, a), subtree(&second.root, b));
        let fits = |slot: &Slot, incoming: &Node| {
            !matches!(slot, Slot::Stage(..)) || matches!(incoming, Node::Classifier(_))
        };
        if !(fits(a, &from_b) && fits(b, &from_a)) {
            continue;
        }
        let (mut ra, mut rb) = (first.root.clone(), second.root.clone());
        put(&mut ra, a, from_b);
        put(&mut rb, b, from_a);
        if ra.depth() > config.max_depth || rb.depth() > config.max_depth {
            return Ok(clones());
        }
        evaluator.refresh_weights(&mut ra)?;
        evaluator.refresh_weights(&mut rb)?;
        return Ok((EnsembleGraph::new(ra), EnsembleGraph::new(rb)));
    }
    Ok(clones())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::evaluator::{samme_weight, EvalContext};
    use crate::graph::{validate, StructuralHash};
    use crate::moo::Fitness;
    use crate::pool::{synth_pool, ModelPool, Split};

    fn pool() -> ModelPool {
        synth_pool(5, 60, 3, 4).unwrap()
    }

    fn individual(graph: EnsembleGraph, rank: usize, crowding: f64) -> Individual {
        Individual {
            hash: graph.hash(),
            graph,
            objectives: Default::default(),
            point: vec![],
            fitness: Fitness { rank, crowding },
        }
    }

    #[test]
    fn tournament_prefers_rank_then_crowding() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pop = vec![
            individual(EnsembleGraph::single("a"), 2, f64::INFINITY),
            individual(EnsembleGraph::single("b"), 0, 0.1),
        ];
        for _ in 0..50 {
            let i = tournament_select(&pop, 10, &mut rng);
            assert_eq!(i, 1);
        }
        let pop = vec![
            individual(EnsembleGraph::single("a"), 1, 1.3),
            individual(EnsembleGraph::single("b"), 1, f64::INFINITY),
        ];
        assert_eq!(tournament_select(&pop, 64, &mut rng), 1);
    }

    #[test]
    fn tournament_of_one_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pop: Vec<Individual> = (0..4)
            .map(|i| individual(EnsembleGraph::single(format!("m{i}")), i, 0.0))
            .collect();
        let mut counts = [0usize; 4];
        for _ in 0..4000 {
            counts[tournament_select(&pop, 1, &mut rng)] += 1;
        }
        assert!(counts.iter().all(|&c| (850..1150).contains(&c)), "{counts:?}");
    }

    #[test]
    fn equal_fitness_falls_back_to_hash() {
        let a = individual(EnsembleGraph::single("a"), 0, 1.0);
        let b = individual(EnsembleGraph::single("b"), 0, 1.0);
        assert_eq!(fitter(&a, &b), a.hash < b.hash);
        let _: StructuralHash = a.hash;
    }

    fn forced(config: &EarnConfig, graph: &EnsembleGraph, site: Site, seed: u64, pool: &ModelPool) -> Node {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Mutator {
            config,
            models: pool.models().iter().map(|m| m.id.as_str()).collect(),
            rng: &mut rng,
        };
        let mut root = graph.root.clone();
        assert!(m.apply(&mut root, &site));
        root
    }

    #[test]
    fn classifier_extension_builds_half_threshold_chain() {
        let pool = pool();
        let config = EarnConfig::default();
        let g = EnsembleGraph::single("m00");
        let mut saw_chain = false;
        for seed in 0..40 {
            if let Node::Chain(ch) = forced(&config, &g, Site::Classifier { path: vec![] }, seed, &pool) {
                assert_eq!(ch.stages[0].model, "m00");
                assert_eq!(ch.thresholds, vec![0.5]);
                saw_chain = true;
            }
        }
        assert!(saw_chain);
    }

    #[test]
    fn trigger_nudge_clamps() {
        let pool = pool();
        let config = EarnConfig::default();
        let g = EnsembleGraph::new(Node::chain(["m00", "m01"], vec![0.95]));
        let mut seen = Vec::new();
        for seed in 0..20 {
            let Node::Chain(ch) = forced(&config, &g, Site::Trigger { path: vec![], trigger: 0 }, seed, &pool) else {
                unreachable!()
            };
            seen.push(ch.thresholds[0]);
        }
        assert!(seen.contains(&1.0), "{seen:?}");
        assert!(seen.contains(&0.85), "{seen:?}");
        assert!(seen.iter().all(|t| *t == 1.0 || *t == 0.85));
    }

    #[test]
    fn stage_extension_inserts_after_stage() {
        let pool = pool();
        let config = EarnConfig::default();
        let g = EnsembleGraph::new(Node::chain(["m00", "m01"], vec![0.3]));
        for seed in 0..20 {
            let Node::Chain(ch) = forced(&config, &g, Site::Stage { path: vec![], stage: 0 }, seed, &pool) else {
                unreachable!()
            };
            if ch.stages.len() == 3 {
                assert_eq!(ch.stages[0].model, "m00");
                assert_eq!(ch.stages[2].model, "m01");
                assert_eq!(ch.thresholds, vec![0.3, 0.5]);
                return;
            }
        }
        panic!("extension never chosen");
    }

    #[test]
    fn protocol_switch_recomputes_weights() {
        let pool = pool();
        let ev = Evaluator::new(EvalContext::new(&pool, Split::Validation, "gpu").unwrap());
        let config = EarnConfig::default();
        let g = EnsembleGraph::new(Node::merger(
            MergeProtocol::Average,
            vec![Node::classifier("m00"), Node::classifier("m03")],
        ));
        for seed in 0..40 {
            let mut root = forced(&config, &g, Site::Merger { path: vec![] }, seed, &pool);
            ev.refresh_weights(&mut root).unwrap();
            let Node::Merger(m) = &root else { unreachable!() };
            if m.protocol == MergeProtocol::WeightedAverage {
                assert_eq!(m.children.len(), 2);
                let expect: Vec<f64> = ["m00", "m03"]
                    .iter()
                    .map(|id| samme_weight(1.0 - pool.get(id).unwrap().validation.accuracy(), 3))
                    .collect();
                assert_eq!(m.weights.as_ref().unwrap(), &expect);
                return;
            }
        }
        panic!("switch never chosen");
    }

    #[test]
    fn all_protocols_flag_widens_switch() {
        let pool = pool();
        let config = EarnConfig {
            mutate_all_protocols: true,
            ..EarnConfig::default()
        };
        let g = EnsembleGraph::new(Node::merger(
            MergeProtocol::Average,
            vec![Node::classifier("m00"), Node::classifier("m03")],
        ));
        let mut seen = std::collections::HashSet::new();
        for seed in 0..200 {
            if let Node::Merger(m) = forced(&config, &g, Site::Merger { path: vec![] }, seed, &pool) {
                if m.children.len() == 2 {
                    seen.insert(m.protocol);
                }
            }
        }
        assert_eq!(seen.len(), 5, "{seen:?}");
    }

    #[test]
    fn mutation_always_changes_and_validates() {
        let pool = pool();
        let ev = Evaluator::new(EvalContext::new(&pool, Split::Validation, "gpu").unwrap());
        let config = EarnConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut g = EnsembleGraph::single("m02");
        for _ in 0..300 {
            let child = mutate(&g, &config, &ev, &mut rng).unwrap();
            assert_ne!(child.hash(), g.hash());
            validate(&child, &pool, config.max_depth).unwrap();
            // unselected walks grow without bound
            g = if child.root.classifier_count() > 12 {
                EnsembleGraph::single("m02")
            } else {
                child
            };
        }
    }

    #[test]
    fn single_model_depth_one_cannot_mutate() {
        let pool = synth_pool(1, 10, 2, 0).unwrap();
        let ev = Evaluator::new(EvalContext::new(&pool, Split::Validation, "gpu").unwrap());
        let config = EarnConfig {
            max_depth: 1,
            ..EarnConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = EnsembleGraph::single("m00");
        assert_eq!(mutate(&g, &config, &ev, &mut rng).unwrap(), g);
    }

    #[test]
    fn crossover_of_two_singles_swaps_them() {
        let pool = pool();
        let ev = Evaluator::new(EvalContext::new(&pool, Split::Validation, "gpu").unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = (EnsembleGraph::single("m00"), EnsembleGraph::single("m01"));
        let (x, y) = crossover(&a, &b, &EarnConfig::default(), &ev, &mut rng).unwrap();
        assert_eq!((x, y), (b, a));
    }

    #[test]
    fn crossover_identical_parents_returns_clones() {
        let pool = pool();
        let ev = Evaluator::new(EvalContext::new(&pool, Split::Validation, "gpu").unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = EnsembleGraph::new(Node::merger(
            MergeProtocol::Average,
            vec![Node::chain(["m00", "m01"], vec![0.5]), Node::classifier("m02")],
        ));
        let (x, y) = crossover(&g, &g, &EarnConfig::default(), &ev, &mut rng).unwrap();
        assert_eq!((x, y), (g.clone(), g));
    }

    #[test]
    fn crossover_moves_chain_into_merger_slot() {
        let pool = pool();
        let ev = Evaluator::new(EvalContext::new(&pool, Split::Validation, "gpu").unwrap());
        let config = EarnConfig::default();
        let merger = EnsembleGraph::new(Node::merger(
            MergeProtocol::Average,
            vec![Node::classifier("m00"), Node::classifier("m01")],
        ));
        let chain = EnsembleGraph::new(Node::chain(["m02", "m03"], vec![0.5]));
        let mut found = false;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, y) = crossover(&merger, &chain, &config, &ev, &mut rng).unwrap();
            validate(&x, &pool, config.max_depth).unwrap();
            validate(&y, &pool, config.max_depth).unwrap();
            if let Node::Merger(m) = &x.root {
                if m.children.iter().any(|c| matches!(c, Node::Chain(_))) {
                    found = true;
                }
            }
        }
        assert!(found);
    }
}
