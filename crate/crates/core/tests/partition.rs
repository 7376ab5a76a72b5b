use proptest::prelude::*;
use quadrag_core::gfm::{augment_with_inverses, forward, GfmInputs, GfmParams};
use quadrag_core::numerics::{Matrix, NumericMode};
use quadrag_core::partition::{
    build_shards, distributed_forward, estimate_workers, max_part_size, partition_graph, plan_stats,
    random_balanced_plan, PartitionError, PartitionPlan,
};
use quadrag_core::quadgraph::{Edge, NodeRecord, NodeType, QuadGraph};
use quadrag_core::synthetic::random_graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn entity_graph(n: usize, edges: Vec<(u32, u32)>) -> QuadGraph {
    QuadGraph::build(
        (0..n as u32).map(|i| NodeRecord::new(i, NodeType::Entity, format!("n{i}"))).collect(),
        vec!["r".into()],
        edges.into_iter().map(|(s, t)| Edge::new(s, 0, t)).collect(),
    )
    .unwrap()
}

fn two_cliques() -> QuadGraph {
    let mut edges = Vec::new();
    for base in [0u32, 50] {
        for i in 0..50 {
            for j in i + 1..50 {
                edges.push((base + i, base + j));
            }
        }
    }
    entity_graph(100, edges)
}

struct Inputs<T> {
    nodes: Matrix<T>,
    relations: Matrix<T>,
    query: Vec<T>,
    seeds: Vec<u32>,
}

fn inputs(graph: &QuadGraph, d: usize, seed: u64) -> Inputs<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = graph.n_nodes();
    let r = 2 * graph.n_relations();
    let mut m = |rows: usize| Matrix::from_vec(rows, d, (0..rows * d).map(|_| rng.gen_range(-0.5..0.5)).collect()).unwrap();
    let nodes = m(n);
    let relations = m(r);
    let query = m(1).into_vec();
    let seeds = (0..n as u32).filter(|v| v % 7 == 0).collect();
    Inputs { nodes, relations, query, seeds }
}

impl<T: quadrag_core::Real> Inputs<T> {
    fn view(&self) -> GfmInputs<'_, T> {
        GfmInputs {
            nodes: &self.nodes,
            relations: &self.relations,
            query: &self.query,
            seeds: &self.seeds,
        }
    }

    fn cast<U: quadrag_core::Real>(&self) -> Inputs<U> {
        Inputs {
            nodes: self.nodes.cast(),
            relations: self.relations.cast(),
            query: self.query.iter().map(|&x| U::from_f64(x.as_f64())).collect(),
            seeds: self.seeds.clone(),
        }
    }
}

#[test]
fn single_part_has_no_cut() {
    let g = random_graph(60, 150, 3);
    let plan = partition_graph(&g, 1, 0).unwrap();
    assert_eq!(plan.edge_cut, 0);
    assert!(plan.boundary_edges.is_empty());
    assert_eq!(plan.part_sizes, vec![60]);
}

#[test]
fn disconnected_cliques_split_cleanly() {
    let plan = partition_graph(&two_cliques(), 2, 0).unwrap();
    assert_eq!(plan.edge_cut, 0);
    assert_eq!(plan.part_sizes, vec![50, 50]);
    assert_ne!(plan.part_of(0), plan.part_of(50));
}

#[test]
fn sizes_and_stats() {
    let g = random_graph(100, 300, 11);
    let plan = partition_graph(&g, 4, 2).unwrap();
    assert_eq!(max_part_size(100, 4), 26);
    for &s in &plan.part_sizes {
        assert!(s <= 26, "{:?}", plan.part_sizes);
    }
    assert_eq!(plan.part_sizes.iter().sum::<usize>(), 100);

    // cut recomputed by hand
    let cut = g.edges().iter().filter(|e| plan.part_of(e.src) != plan.part_of(e.dst)).count();
    assert_eq!(plan.edge_cut, cut);
    let stats = plan_stats(&plan);
    let messages: usize = stats.boundary_messages.iter().map(|(_, c)| c).sum();
    assert_eq!(messages, 2 * cut);
    let largest = *plan.part_sizes.iter().max().unwrap() as f64;
    assert_eq!(stats.balance, largest / 25.0);

    let view = augment_with_inverses(&g);
    let shards = build_shards(&view, &plan);
    assert_eq!(shards.iter().map(|s| s.nodes.len()).sum::<usize>(), 100);
    assert_eq!(shards.iter().map(|s| s.edges.len()).sum::<usize>(), view.n_edges());
}

#[test]
fn beats_random_balanced_assignment() {
    for gseed in 0..3 {
        let g = random_graph(200, 600, 100 + gseed);
        let ours = partition_graph(&g, 4, 0).unwrap().edge_cut as f64;
        let random: f64 = (0..20)
            .map(|s| random_balanced_plan(&g, 4, s).unwrap().edge_cut as f64)
            .sum::<f64>()
            / 20.0;
        assert!(ours <= random, "graph {gseed}: {ours} vs {random}");
    }
}

#[test]
fn plan_rejections_and_round_trip() {
    let g = random_graph(10, 20, 0);
    assert!(matches!(partition_graph(&g, 11, 0), Err(PartitionError::TooManyParts { .. })));
    assert!(matches!(partition_graph(&g, 0, 0), Err(PartitionError::ZeroParts)));
    assert!(matches!(
        PartitionPlan::new(&g, 2, vec![0; 9], 0),
        Err(PartitionError::PlanMismatch { .. })
    ));
    assert!(matches!(
        PartitionPlan::new(&g, 2, vec![2; 10], 0),
        Err(PartitionError::InvalidAssignment { .. })
    ));

    let plan = partition_graph(&g, 3, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("plan.json");
    plan.save(&path).unwrap();
    assert_eq!(PartitionPlan::load(&path, &g).unwrap(), plan);
    let other = random_graph(12, 20, 0);
    assert!(PartitionPlan::load(&path, &other).is_err());
}

#[test]
fn path_split_across_two_workers() {
    let g = entity_graph(3, vec![(0, 1), (1, 2)]);
    let view = augment_with_inverses(&g);
    let x = inputs(&g, 4, 1);
    let params = GfmParams::<f64>::new(2, 4, 3).unwrap();
    let (single, _) = forward(&view, x.view(), &params, NumericMode::DETERMINISTIC).unwrap();
    let plan = PartitionPlan::new(&g, 2, vec![0, 1, 0], 0).unwrap();
    let dist = distributed_forward(&view, &plan, x.view(), &params, NumericMode::DETERMINISTIC).unwrap();
    assert_eq!(single, dist);
}

#[test]
fn distributed_matches_single_worker() {
    for (i, &(n, m)) in [(40usize, 120usize), (200, 700), (500, 1500)].iter().enumerate() {
        let g = random_graph(n, m, 40 + i as u64);
        let view = augment_with_inverses(&g);
        let x = inputs(&g, 8, i as u64);
        let p64 = GfmParams::<f64>::new(2, 8, i as u64).unwrap();
        let (s64, _) = forward(&view, x.view(), &p64, NumericMode::DETERMINISTIC).unwrap();
        let x32 = x.cast::<f32>();
        let p32 = p64.cast::<f32>();
        let (s32, _) = forward(&view, x32.view(), &p32, NumericMode::FAST).unwrap();
        for parts in [1, 2, 4, 8] {
            let plan = partition_graph(&g, parts, 0).unwrap();
            let d64 = distributed_forward(&view, &plan, x.view(), &p64, NumericMode::DETERMINISTIC).unwrap();
            assert_eq!(d64, s64, "n={n} N={parts}");
            let d32 = distributed_forward(&view, &plan, x32.view(), &p32, NumericMode::FAST).unwrap();
            for (a, b) in d32.iter().zip(&s32) {
                assert!((a - b).abs() <= 1e-5, "n={n} N={parts}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn distributed_half_storage_matches() {
    let g = random_graph(80, 200, 5);
    let view = augment_with_inverses(&g);
    let x = inputs(&g, 8, 5).cast::<f32>();
    let p = GfmParams::<f32>::new(2, 8, 5).unwrap();
    let (single, _) = forward(&view, x.view(), &p, NumericMode::HALF_STORAGE).unwrap();
    let plan = partition_graph(&g, 4, 0).unwrap();
    let dist = distributed_forward(&view, &plan, x.view(), &p, NumericMode::HALF_STORAGE).unwrap();
    for (a, b) in dist.iter().zip(&single) {
        assert!((a - b).abs() <= 1e-3, "{a} vs {b}");
    }
}

#[test]
fn estimator_paper_case() {
    assert_eq!(estimate_workers(800_000, 8192, 80.0).unwrap(), 32);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn estimator_is_monotone(n in 1u64..10_000_000, d in 1u64..16_384, mem in 1.0f64..200.0, dn in 0u64..1_000_000, dd in 0u64..1024, dm in 0.0f64..100.0) {
        let base = estimate_workers(n, d, mem).unwrap();
        prop_assert!(base >= 1);
        prop_assert!(estimate_workers(n + dn, d, mem).unwrap() >= base);
        prop_assert!(estimate_workers(n, d + dd, mem).unwrap() >= base);
        prop_assert!(estimate_workers(n, d, mem + dm).unwrap() <= base);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn partitions_respect_size_bound(n in 8usize..120, density in 1usize..5, parts in 1usize..8, seed in 0u64..1000) {
        let g = random_graph(n, n * density, seed);
        let plan = partition_graph(&g, parts, seed).unwrap();
        let bound = max_part_size(n, parts);
        prop_assert_eq!(plan.part_sizes.len(), parts);
        prop_assert!(plan.part_sizes.iter().all(|&s| s <= bound), "{:?} > {}", plan.part_sizes, bound);
        prop_assert_eq!(plan.part_sizes.iter().sum::<usize>(), n);
    }
}
