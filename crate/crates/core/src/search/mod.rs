//! The EARN generational loop.

mod operators;

pub use operators::{crossover, fitter, mutate, tournament_select, MAX_ATTEMPTS};

use std::collections::HashSet;
use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::evaluator::{thread_pool, EvalContext, Evaluator, ObjectiveVector};
use crate::graph::{validate, EnsembleGraph, StructuralHash, DEFAULT_MAX_DEPTH};
use crate::moo::{assign_fitness, ArchiveEntry, Fitness, ParetoArchive};

/// Consecutive duplicate offspring discarded before one is accepted anyway.
pub const MAX_DUPLICATE_STREAK: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarnConfig {
    pub population_limit: usize,
    pub offspring_limit: usize,
    pub tournament_size: usize,
    /// Per-decision probability of mutation; crossover gets the rest.
    pub mutation_rate: f64,
    pub node_mutation_prob: f64,
    pub iterations: usize,
    pub threshold_step: f64,
    pub initial_threshold: f64,
    pub max_depth: usize,
    /// Stop once relative hypervolume gain stays below `hv_epsilon` for
    /// `hv_patience` generations in a row.
    pub stop_on_stagnation: bool,
    pub hv_epsilon: f64,
    pub hv_patience: usize,
    /// Protocol switch draws from all six protocols instead of toggling
    /// weighting.
    pub mutate_all_protocols: bool,
    pub seed: u64,
}

impl Default for EarnConfig {
    fn default() -> Self {
        EarnConfig {
            population_limit: 500,
            offspring_limit: 200,
            tournament_size: 10,
            mutation_rate: 0.4,
            node_mutation_prob: 0.6,
            iterations: 100,
            threshold_step: 0.1,
            initial_threshold: 0.5,
            max_depth: DEFAULT_MAX_DEPTH,
            stop_on_stagnation: false,
            hv_epsilon: 1e-4,
            hv_patience: 10,
            mutate_all_protocols: false,
            seed: 0,
        }
    }
}

impl EarnConfig {
    pub fn crossover_rate(&self) -> f64 {
        1.0 - self.mutation_rate
    }

    pub fn check(&self) -> Result<()> {
        let unit = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {x} outside [0, 1]")))
            }
        };
        unit("mutation_rate", self.mutation_rate)?;
        unit("node_mutation_prob", self.node_mutation_prob)?;
        unit("initial_threshold", self.initial_threshold)?;
        if !(self.threshold_step.is_finite() && self.threshold_step > 0.0) {
            return Err(Error::Config(format!(
                "threshold_step = {} must be positive",
                self.threshold_step
            )));
        }
        for (name, v) in [
            ("population_limit", self.population_limit),
            ("offspring_limit", self.offspring_limit),
            ("tournament_size", self.tournament_size),
            ("max_depth", self.max_depth),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.hv_epsilon >= 0.0) {
            return Err(Error::Config("hv_epsilon must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub graph: EnsembleGraph,
    pub hash: StructuralHash,
    pub objectives: ObjectiveVector,
    /// Projection onto the enabled objectives.
    pub point: Vec<f64>,
    pub fitness: Fitness,
}

impl Individual {
    fn new(graph: EnsembleGraph, objectives: ObjectiveVector, ctx: &EvalContext<'_>) -> Self {
        Individual {
            hash: graph.hash(),
            point: ctx.objectives.project(&objectives),
            graph,
            objectives,
            fitness: Fitness::UNRANKED,
        }
    }

    fn entry(&self) -> ArchiveEntry {
        ArchiveEntry {
            hash: self.hash,
            graph: self.graph.clone(),
            objectives: self.objectives,
            point: self.point.clone(),
        }
    }
}

fn rank(members: &mut [Individual]) {
    let points: Vec<&[f64]> = members.iter().map(|m| m.point.as_slice()).collect();
    let fitness = assign_fitness(&points);
    for (m, f) in members.iter_mut().zip(fitness) {
        m.fitness = f;
    }
}

/// One single-classifier individual per pool model, evaluated and ranked.
pub fn initialize(evaluator: &Evaluator<'_>) -> Result<Vec<Individual>> {
    let mut members = evaluator
        .pool()
        .models()
        .iter()
        .map(|m| {
            let g = EnsembleGraph::single(m.id.clone());
            let v = evaluator.evaluate(&g)?;
            Ok(Individual::new(g, v, evaluator.ctx()))
        })
        .collect::<Result<Vec<_>>>()?;
    rank(&mut members);
    Ok(members)
}

/// Componentwise worst initial value scaled by 1.1; non-positive worsts map
/// to 1.0.
pub fn reference_point(initial: &[Individual]) -> Vec<f64> {
    let arity = initial.first().map_or(0, |m| m.point.len());
    (0..arity)
        .map(|i| {
            let worst = initial
                .iter()
                .map(|m| m.point[i])
                .fold(f64::NEG_INFINITY, f64::max);
            if worst > 0.0 {
                worst * 1.1
            } else {
                1.0
            }
        })
        .collect()
}

/// Keeps the `limit` fittest members; ties after fitness go to the lower hash,
/// then the earlier position.
pub fn survive(mut members: Vec<Individual>, limit: usize) -> Vec<Individual> {
    let mut order: Vec<usize> = (0..members.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&members[a], &members[b]);
        x.fitness
            .compare(&y.fitness)
            .then(x.hash.cmp(&y.hash))
            .then(a.cmp(&b))
    });
    order.truncate(limit);
    order.sort_unstable();
    let keep: HashSet<usize> = order.into_iter().collect();
    let mut i = 0;
    members.retain(|_| {
        i += 1;
        keep.contains(&(i - 1))
    });
    members
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationStats {
    pub generation: usize,
    /// Offspring evaluated so far, initial population excluded.
    pub evaluations: usize,
    pub mutations: usize,
    pub crossovers: usize,
    pub duplicates_discarded: usize,
    pub cache_hits: usize,
    pub cache_hit_rate: f64,
    pub population: usize,
    pub archive_size: usize,
    pub best_error: f64,
    pub hypervolume: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub population: Vec<Individual>,
    pub archive: ParetoArchive,
    pub history: Vec<GenerationStats>,
    pub reference: Vec<f64>,
}

impl RunResult {
    pub fn evaluations(&self) -> usize {
        self.history.last().map_or(0, |h| h.evaluations)
    }

    pub fn write_history_csv<W: io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for h in &self.history {
            w.serialize(h)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Final population as JSON, fittest first.
    pub fn population_json(&self, ctx: &EvalContext<'_>) -> Value {
        let mut members: Vec<&Individual> = self.population.iter().collect();
        members.sort_by(|a, b| a.fitness.compare(&b.fitness).then(a.hash.cmp(&b.hash)));
        let rows: Vec<Value> = members
            .into_iter()
            .map(|m| {
                let objectives: Map<String, Value> = ctx
                    .objectives
                    .iter()
                    .map(|o| (o.as_str().to_string(), Value::from(m.objectives.get(o))))
                    .collect();
                serde_json::json!({
                    "hash": m.hash,
                    "graph": m.graph,
                    "objectives": objectives,
                    "metrics": m.objectives,
                    "rank": m.fitness.rank,
                    "crowding": if m.fitness.crowding.is_finite() {
                        Value::from(m.fitness.crowding)
                    } else {
                        Value::from("inf")
                    },
                })
            })
            .collect();
        Value::Array(rows)
    }
}

pub struct Search<'p> {
    config: EarnConfig,
    evaluator: Evaluator<'p>,
    jobs: usize,
}

impl<'p> Search<'p> {
    pub fn new(ctx: EvalContext<'p>, config: EarnConfig) -> Result<Self> {
        config.check()?;
        if ctx.pool().is_empty() {
            return Err(Error::Pool("pool has no models".into()));
        }
        Ok(Search {
            config,
            evaluator: Evaluator::new(ctx),
            jobs: 1,
        })
    }

    /// Worker threads for offspring evaluation; results do not depend on it.
    pub fn with_jobs(mut self, jobs: usize) -> Self {
        self.jobs = jobs.max(1);
        self
    }

    pub fn config(&self) -> &EarnConfig {
        &self.config
    }

    pub fn evaluator(&self) -> &Evaluator<'p> {
        &self.evaluator
    }

    pub fn run(&self) -> Result<RunResult> {
        let threads = thread_pool(self.jobs)?;
        let config = &self.config;
        let ctx = self.evaluator.ctx();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

        let mut population = initialize(&self.evaluator)?;
        let reference = reference_point(&population);
        let mut archive = ParetoArchive::new();
        for m in &population {
            archive.insert(m.entry());
        }
        let mut history = vec![GenerationStats {
            generation: 0,
            evaluations: 0,
            mutations: 0,
            crossovers: 0,
            duplicates_discarded: 0,
            cache_hits: 0,
            cache_hit_rate: 0.0,
            population: population.len(),
            archive_size: archive.len(),
            best_error: best_error(&archive),
            hypervolume: archive.hypervolume(&reference),
        }];

        let mut evaluations = 0;
        let mut stagnant = 0;
        for generation in 1..=config.iterations {
            let batch = self.breed(&population, &mut rng)?;
            let (objectives, cache_hits) = self
                .evaluator
                .evaluate_all(&batch.offspring, threads.as_ref())?;
            let offspring: Vec<Individual> = batch
                .offspring
                .into_iter()
                .zip(objectives)
                .map(|(g, v)| Individual::new(g, v, ctx))
                .collect();
            evaluations += offspring.len();
            for o in &offspring {
                archive.insert(o.entry());
            }
            let mut present: HashSet<StructuralHash> = population.iter().map(|m| m.hash).collect();
            population.extend(offspring.into_iter().filter(|o| present.insert(o.hash)));
            rank(&mut population);
            population = survive(population, config.population_limit);

            let previous = history.last().expect("initial row").hypervolume;
            let hv = archive.hypervolume(&reference);
            let n = config.offspring_limit;
            history.push(GenerationStats {
                generation,
                evaluations,
                mutations: batch.mutations,
                crossovers: batch.crossovers,
                duplicates_discarded: batch.duplicates,
                cache_hits,
                cache_hit_rate: cache_hits as f64 / n as f64,
                population: population.len(),
                archive_size: archive.len(),
                best_error: best_error(&archive),
                hypervolume: hv,
            });

            if config.stop_on_stagnation {
                let gain = if previous > 0.0 {
                    (hv - previous) / previous
                } else if hv > previous {
                    f64::INFINITY
                } else {
                    0.0
                };
                stagnant = if gain < config.hv_epsilon { stagnant + 1 } else { 0 };
                if stagnant >= config.hv_patience {
                    break;
                }
            }
        }

        debug_assert!(population
            .iter()
            .all(|m| validate(&m.graph, ctx.pool(), config.max_depth).is_ok()));
        Ok(RunResult {
            population,
            archive,
            history,
            reference,
        })
    }

    /// Produces exactly `offspring_limit` graphs from the current population.
    fn breed(&self, population: &[Individual], rng: &mut ChaCha8Rng) -> Result<Batch> {
        let config = &self.config;
        let ev = &self.evaluator;
        let k = config.tournament_size;
        let mut seen: HashSet<StructuralHash> = population.iter().map(|m| m.hash).collect();
        let mut batch = Batch::default();
        let mut streak = 0;
        while batch.offspring.len() < config.offspring_limit {
            let children = if rng.random::<f64>() < config.mutation_rate {
                batch.mutations += 1;
                let parent = &population[tournament_select(population, k, rng)];
                vec![mutate(&parent.graph, config, ev, rng)?]
            } else {
                batch.crossovers += 1;
                let a = &population[tournament_select(population, k, rng)];
                let b = &population[tournament_select(population, k, rng)];
                let (x, y) = crossover(&a.graph, &b.graph, config, ev, rng)?;
                vec![x, y]
            };
            for child in children {
                if batch.offspring.len() == config.offspring_limit {
                    break;
                }
                let h = child.hash();
                if seen.contains(&h) && streak < MAX_DUPLICATE_STREAK {
                    streak += 1;
                    batch.duplicates += 1;
                    continue;
                }
                streak = 0;
                seen.insert(h);
                batch.offspring.push(child);
            }
        }
        Ok(batch)
    }
}

#[derive(Default)]
struct Batch {
    offspring: Vec<EnsembleGraph>,
    mutations: usize,
    crossovers: usize,
    duplicates: usize,
}

fn best_error(archive: &ParetoArchive) -> f64 {
    archive
        .entries()
        .iter()
        .map(|e| e.objectives.error)
        .fold(f64::INFINITY, f64::min)
}
