use std::collections::HashSet;

use earn_core::graph::validate;
use earn_core::moo::dominates;
use earn_core::pool::synth_pool;
use earn_core::search::{crossover, mutate, tournament_select};
use earn_core::{EarnConfig, EvalContext, Evaluator, ObjectiveSet, Search, Split};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(seed: u64) -> EarnConfig {
    EarnConfig {
        population_limit: 50,
        offspring_limit: 25,
        iterations: 12,
        seed,
        ..EarnConfig::default()
    }
}

#[test]
fn runs_respect_limits_and_stay_valid() {
    let pool = synth_pool(7, 120, 4, 1).unwrap();
    for seed in 0..3 {
        let ctx = EvalContext::new(&pool, Split::Validation, "gpu").unwrap();
        let c = config(seed);
        let r = Search::new(ctx, c.clone()).unwrap().run().unwrap();
        assert_eq!(r.history.len(), c.iterations + 1);
        assert_eq!(r.evaluations(), c.iterations * c.offspring_limit);
        assert!(r.population.len() <= c.population_limit);
        for w in r.history.windows(2) {
            assert!(w[1].hypervolume >= w[0].hypervolume);
            assert_eq!(w[1].evaluations - w[0].evaluations, c.offspring_limit);
        }
        for m in &r.population {
            validate(&m.graph, &pool, c.max_depth).unwrap();
            assert_eq!(m.hash, m.graph.hash());
        }
        for e in r.archive.entries() {
            for f in r.archive.entries() {
                assert!(!dominates(&e.point, &f.point).unwrap());
            }
        }
        let front: Vec<_> = r.population.iter().filter(|m| m.fitness.rank == 0).collect();
        for a in &front {
            for b in &r.population {
                assert!(!dominates(&b.point, &a.point).unwrap());
            }
        }
    }
}

#[test]
fn two_objective_runs_use_projected_points() {
    let pool = synth_pool(5, 100, 3, 2).unwrap();
    let ctx = EvalContext::new(&pool, Split::Validation, "gpu")
        .unwrap()
        .with_objectives("error,size".parse::<ObjectiveSet>().unwrap());
    let r = Search::new(ctx, config(4)).unwrap().run().unwrap();
    assert_eq!(r.reference.len(), 2);
    assert!(r.archive.entries().iter().all(|e| e.point.len() == 2));
}

#[test]
fn operators_produce_valid_offspring() {
    let pool = synth_pool(6, 80, 3, 3).unwrap();
    let ev = Evaluator::new(EvalContext::new(&pool, Split::Validation, "gpu").unwrap());
    let c = EarnConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ctx = EvalContext::new(&pool, Split::Validation, "gpu").unwrap();
    let r = Search::new(ctx, config(9)).unwrap().run().unwrap();
    let mut seen = HashSet::new();
    for _ in 0..300 {
        let a = &r.population[tournament_select(&r.population, c.tournament_size, &mut rng)];
        let b = &r.population[tournament_select(&r.population, c.tournament_size, &mut rng)];
        let m = mutate(&a.graph, &c, &ev, &mut rng).unwrap();
        validate(&m, &pool, c.max_depth).unwrap();
        let (x, y) = crossover(&a.graph, &b.graph, &c, &ev, &mut rng).unwrap();
        validate(&x, &pool, c.max_depth).unwrap();
        validate(&y, &pool, c.max_depth).unwrap();
        seen.insert(m.hash());
    }
    assert!(seen.len() > 100);
}
