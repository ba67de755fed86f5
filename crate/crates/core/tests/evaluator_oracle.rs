mod common;

use common::{check_against_walk, permute_children, random_chain, random_graph};
use earn_core::evaluator::{evaluate, predict};
use earn_core::pool::synth_pool;
use earn_core::{EnsembleGraph, EvalContext, Node, SizeMode, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn random_graphs_match_per_sample_walk() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for p in 0..4 {
        let pool = synth_pool(3 + p, 100 + 150 * p, 2 + 2 * p, p as u64).unwrap();
        for _ in 0..15 {
            let g = random_graph(&mut rng, &pool, 4);
            check_against_walk(&g, &pool, Split::Validation);
            check_against_walk(&g, &pool, Split::Test);
        }
    }
}

#[test]
fn merger_permutations_are_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let pool = synth_pool(6, 200, 5, 3).unwrap();
    let ctx = EvalContext::new(&pool, Split::Test, "gpu").unwrap();
    let mut mergers = 0;
    while mergers < 40 {
        let g = random_graph(&mut rng, &pool, 4);
        if !matches!(g.root, Node::Merger(_)) {
            continue;
        }
        mergers += 1;
        let base = predict(&g.root, &ctx).unwrap();
        for _ in 0..3 {
            let p = EnsembleGraph::new(permute_children(&g.root, &mut rng));
            assert_eq!(p.hash(), g.hash());
            let other = predict(&p.root, &ctx).unwrap();
            assert_eq!(other, base);
            assert_eq!(evaluate(&p, &ctx).unwrap(), evaluate(&g, &ctx).unwrap());
        }
    }
}

#[test]
fn per_node_size_counts_duplicates() {
    let pool = synth_pool(3, 50, 3, 4).unwrap();
    let ctx = EvalContext::new(&pool, Split::Test, "gpu").unwrap();
    let per_node = ctx.with_split(Split::Test).with_size_mode(SizeMode::PerNode);
    let g = EnsembleGraph::new(Node::chain(["m00", "m01", "m00"], vec![0.4, 0.6]));
    let p = |id: &str| pool.get(id).unwrap().params;
    assert_eq!(evaluate(&g, &ctx).unwrap().size, p("m00") + p("m01"));
    assert_eq!(evaluate(&g, &per_node).unwrap().size, 2 * p("m00") + p("m01"));
}

#[test]
fn chain_latency_is_monotone_in_thresholds() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let pool = synth_pool(5, 300, 4, 5).unwrap();
    let ctx = EvalContext::new(&pool, Split::Validation, "gpu").unwrap();
    for _ in 0..20 {
        let Node::Chain(mut ch) = random_chain(&mut rng, &pool, 4) else { unreachable!() };
        let which = rng.random_range(0..ch.thresholds.len());
        let mut previous = f64::NEG_INFINITY;
        for step in 0..=100 {
            ch.thresholds[which] = step as f64 / 100.0;
            let v = evaluate(&EnsembleGraph::new(Node::Chain(ch.clone())), &ctx).unwrap();
            assert!(v.latency >= previous, "{} < {previous}", v.latency);
            previous = v.latency;
        }
    }
}
