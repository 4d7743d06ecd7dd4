use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;
use sessrec::dataset::SessionCorpus;
use sessrec::graphs::*;

fn corpus_strategy() -> impl Strategy<Value = SessionCorpus> {
    (1usize..10).prop_flat_map(|n| {
        prop::collection::vec(prop::collection::vec(0..n, 1..9), 1..15).prop_map(|sessions| {
            let raw: Vec<Vec<String>> =
                sessions.into_iter().map(|s| s.into_iter().map(|i| format!("i{i}")).collect()).collect();
            SessionCorpus::from_raw_sessions(&raw)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matches_brute_force(corpus in corpus_strategy(), eps in 1usize..4) {
        let graph = build_global_graph(&corpus, eps, 1000).unwrap();
        prop_assert_eq!(graph.pair_table(), oracle_pair_table(&brute_force_global_oracle(&corpus, eps)));
        prop_assert!(graph.validate().is_ok());
    }

    #[test]
    fn directions_mirror(corpus in corpus_strategy(), eps in 1usize..4) {
        let table = build_global_graph(&corpus, eps, 1000).unwrap().pair_table();
        for (&(i, j), &(kind, w, mu)) in &table {
            let mirror = match kind {
                EdgeKind::In => EdgeKind::Out,
                EdgeKind::Out => EdgeKind::In,
                k => k,
            };
            let back = table[&(j, i)];
            prop_assert_eq!(back.0, mirror);
            prop_assert_eq!(back.1, w);
            prop_assert_eq!(back.2, mu);
            prop_assert!(i != j);
        }
    }

    #[test]
    fn truncation_keeps_heaviest(corpus in corpus_strategy(), eps in 1usize..4, cap in 1usize..4) {
        let full = build_global_graph(&corpus, eps, 1000).unwrap();
        let cut = build_global_graph(&corpus, eps, cap).unwrap();
        for (a, b) in full.neighbors.iter().zip(&cut.neighbors) {
            for kind in [EdgeKind::In, EdgeKind::Out, EdgeKind::InOut] {
                let (fa, fb) = (a.by_kind(kind), b.by_kind(kind));
                prop_assert_eq!(fb.len(), fa.len().min(cap));
                prop_assert_eq!(fb, &fa[..fb.len()]);
                prop_assert!(fa.windows(2).all(|w| w[0].weight >= w[1].weight));
                let unique: HashSet<_> = fb.iter().map(|n| n.item).collect();
                prop_assert_eq!(unique.len(), fb.len());
            }
        }
    }

    #[test]
    fn sampling_is_seeded_and_bounded(corpus in corpus_strategy(), seed in any::<u64>(), cap in 1usize..5) {
        let graph = build_global_graph(&corpus, 3, 1000).unwrap();
        for item in 0..corpus.num_items() {
            let a = sample_neighbors(&graph, item, cap, seed);
            prop_assert_eq!(&a, &sample_neighbors(&graph, item, cap, seed));
            for kind in [EdgeKind::In, EdgeKind::Out, EdgeKind::InOut] {
                let all = graph.neighbors[item].by_kind(kind);
                let got = a.by_kind(kind);
                prop_assert_eq!(got.len(), all.len().min(cap));
                // nothing left out outweighs anything kept
                let kept: HashSet<_> = got.iter().map(|n| n.item).collect();
                let min_kept = got.iter().map(|n| n.weight).min().unwrap_or(u64::MAX);
                prop_assert!(all.iter().filter(|n| !kept.contains(&n.item)).all(|n| n.weight <= min_kept));
            }
        }
    }

    #[test]
    fn session_graph_shape(items in prop::collection::vec(0usize..6, 1..12)) {
        let g = build_session_graph(&items);
        let unique: HashSet<_> = items.iter().collect();
        prop_assert_eq!(g.nodes.len(), unique.len());
        prop_assert_eq!(g.alias.len(), items.len());
        for (pos, &a) in g.alias.iter().enumerate() {
            prop_assert_eq!(g.nodes[a], items[pos]);
        }
        let view = g.neighbor_view();
        let kinds: BTreeMap<(usize, usize), EdgeKind> = view.iter().map(|n| ((n.node, n.neighbor), n.kind)).collect();
        prop_assert_eq!(kinds.len(), view.len());
        for n in 0..g.nodes.len() {
            prop_assert_eq!(kinds.get(&(n, n)), Some(&EdgeKind::SelfLoop));
        }
        let steps: HashSet<(usize, usize)> =
            g.alias.windows(2).map(|w| (w[0], w[1])).filter(|(a, b)| a != b).collect();
        for (&(a, b), &kind) in &kinds {
            if a == b {
                continue;
            }
            let want = match (steps.contains(&(a, b)), steps.contains(&(b, a))) {
                (true, true) => EdgeKind::InOut,
                (true, false) => EdgeKind::Out,
                (false, true) => EdgeKind::In,
                (false, false) => unreachable!("neighbor without a transition"),
            };
            prop_assert_eq!(kind, want);
        }
        prop_assert_eq!(kinds.len() - g.nodes.len(), steps.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect::<HashSet<_>>().len() * 2);
    }
}

#[test]
fn worked_example_weight_and_distance() {
    let corpus = SessionCorpus::from_raw_sessions(&[vec!["v1", "v2", "v3", "v4"], vec!["v3", "v9", "v4"]]);
    let graph = build_global_graph(&corpus, 2, 12).unwrap();
    let ix = |s| corpus.vocab.index_of(s).unwrap();
    assert_eq!(graph.pair_table()[&(ix("v3"), ix("v4"))], (EdgeKind::Out, 2, 1));
    assert_eq!(graph.pair_table()[&(ix("v4"), ix("v3"))], (EdgeKind::In, 2, 1));
}

#[test]
fn empty_and_self_only_corpora() {
    let empty = SessionCorpus::from_raw_sessions::<&str>(&[]);
    assert!(oracle_pair_table(&brute_force_global_oracle(&empty, 2)).is_empty());
    assert!(build_global_graph(&empty, 2, 12).unwrap().pair_table().is_empty());

    let same = SessionCorpus::from_raw_sessions(&[vec!["a", "a", "a"]]);
    let tuples = brute_force_global_oracle(&same, 1);
    assert!(!tuples.is_empty());
    assert!(oracle_pair_table(&tuples).is_empty());
    let graph = build_global_graph(&same, 1, 12).unwrap();
    assert!(graph.neighbors[0].is_empty());
}

#[test]
fn twenty_out_neighbors_truncate_to_twelve() {
    let mut sessions = Vec::new();
    for j in 0..20 {
        for _ in 0..=j {
            sessions.push(vec!["hub".to_string(), format!("n{j}")]);
        }
    }
    let corpus = SessionCorpus::from_raw_sessions(&sessions);
    let graph = build_global_graph(&corpus, 1, 12).unwrap();
    let out = graph.neighbors[0].by_kind(EdgeKind::Out);
    assert_eq!(out.len(), 12);
    let weights: Vec<u64> = out.iter().map(|n| n.weight).collect();
    assert_eq!(weights, (9..=20).rev().collect::<Vec<u64>>());
}

#[test]
fn file_round_trip_preserves_graph() {
    let corpus = SessionCorpus::from_raw_sessions(&[vec!["a", "b", "c", "a"], vec!["c", "b"]]);
    let graph = build_global_graph(&corpus, 3, 12).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.jsonl");
    graph.write_jsonl(&path).unwrap();
    assert_eq!(GlobalGraph::read_jsonl(&path).unwrap(), graph);
    std::fs::write(&path, "{\"format\":\"nope\"}\n").unwrap();
    assert!(GlobalGraph::read_jsonl(&path).is_err());
}
