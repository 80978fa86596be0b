mod common;

use common::{oracle_mismatches, random_dag, warshall};
use proptest::prelude::*;
use transitive_embed::{Closure, NodeId, Pair};

#[test]
fn matches_warshall_on_random_dags() {
    for seed in 0..200u64 {
        let n = 1 + (seed as usize * 7) % 50;
        let density = 0.3 * ((seed % 10) as f64 + 1.0) / 10.0;
        let edges = random_dag(n, density, seed);
        let closure = Closure::from_pairs(&edges, n).unwrap();
        let oracle = warshall(n, &edges);
        assert_eq!(oracle_mismatches(&closure, &oracle), 0, "seed {seed}, n {n}");
        let expected: usize = oracle.iter().flatten().filter(|&&b| b).count();
        assert_eq!(closure.len(), expected);
    }
}

#[test]
fn matches_warshall_on_sparse_wide_dags() {
    // Few descendants per node over many nodes exercises the sorted-list sets.
    for seed in 0..5u64 {
        let n = 400;
        let edges = random_dag(n, 0.004, seed);
        let closure = Closure::from_pairs(&edges, n).unwrap();
        assert_eq!(oracle_mismatches(&closure, &warshall(n, &edges)), 0, "seed {seed}");
    }
}

#[test]
fn pairs_are_sorted_and_complete() {
    let edges = random_dag(40, 0.2, 99);
    let closure = Closure::from_pairs(&edges, 40).unwrap();
    let pairs: Vec<Pair> = closure.pairs().collect();
    assert!(pairs.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(pairs.len(), closure.len());
    assert!(pairs.iter().all(|&(x, y)| closure.holds(x, y) && x != y));
}

fn dag_strategy() -> impl Strategy<Value = (usize, Vec<Pair>)> {
    (2usize..40, 0.0f64..0.3, any::<u64>()).prop_map(|(n, d, seed)| (n, random_dag(n, d, seed)))
}

proptest! {
    #[test]
    fn closure_is_idempotent((n, edges) in dag_strategy()) {
        let once = Closure::from_pairs(&edges, n).unwrap();
        let pairs: Vec<Pair> = once.pairs().collect();
        let twice = Closure::from_pairs(&pairs, n).unwrap();
        prop_assert_eq!(pairs, twice.pairs().collect::<Vec<_>>());
    }

    #[test]
    fn closure_is_transitive((n, edges) in dag_strategy()) {
        let c = Closure::from_pairs(&edges, n).unwrap();
        for (x, y) in c.pairs() {
            for z in c.reachable(y) {
                prop_assert!(c.holds(x, z));
            }
        }
    }

    #[test]
    fn closure_is_monotone((n, edges) in dag_strategy(), keep in proptest::collection::vec(any::<bool>(), 0..1200)) {
        let sub: Vec<Pair> = edges.iter().enumerate()
            .filter(|(i, _)| keep.get(*i).copied().unwrap_or(false))
            .map(|(_, &p)| p)
            .collect();
        let small = Closure::from_pairs(&sub, n).unwrap();
        let big = Closure::from_pairs(&edges, n).unwrap();
        for (x, y) in small.pairs() {
            prop_assert!(big.holds(x, y));
        }
    }

    #[test]
    fn closure_is_irreflexive((n, edges) in dag_strategy()) {
        let c = Closure::from_pairs(&edges, n).unwrap();
        for i in 0..n as u32 {
            prop_assert!(!c.contains(NodeId(i), NodeId(i)).unwrap());
        }
    }
}
