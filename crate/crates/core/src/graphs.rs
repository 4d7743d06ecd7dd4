//! Session graphs and the position-aware global item graph.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ItemIdx, SessionCorpus};
use crate::error::{Error, Result};
use crate::hashing::corpus_hash;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    In,
    Out,
    InOut,
    SelfLoop,
}

impl EdgeKind {
    pub fn index(self) -> usize {
        match self {
            EdgeKind::In => 0,
            EdgeKind::Out => 1,
            EdgeKind::InOut => 2,
            EdgeKind::SelfLoop => 3,
        }
    }
}

/// `mu` value carried by in-out neighbors, which have no distance label.
pub const IO_POS: u32 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalNeighbor {
    pub item: ItemIdx,
    pub kind: EdgeKind,
    /// Co-occurrence count of the pair within `epsilon`, over all sessions.
    pub weight: u64,
    /// Most frequent distance (`1..=epsilon`), or [`IO_POS`] for in-out neighbors.
    pub mu: u32,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NeighborLists {
    pub incoming: Vec<GlobalNeighbor>,
    pub outgoing: Vec<GlobalNeighbor>,
    pub in_out: Vec<GlobalNeighbor>,
}

impl NeighborLists {
    pub fn by_kind(&self, kind: EdgeKind) -> &[GlobalNeighbor] {
        match kind {
            EdgeKind::In => &self.incoming,
            EdgeKind::Out => &self.outgoing,
            EdgeKind::InOut => &self.in_out,
            EdgeKind::SelfLoop => &[],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.incoming.is_empty() && self.outgoing.is_empty() && self.in_out.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalGraph {
    pub neighbors: Vec<NeighborLists>,
    pub epsilon: usize,
    pub num_items: usize,
    pub max_neighbors: usize,
    pub corpus_hash: String,
}

fn heaviest_first(list: &mut [GlobalNeighbor]) {
    list.sort_by(|a, b| b.weight.cmp(&a.weight).then(a.item.cmp(&b.item)));
}

/// Index of the largest count; the smallest distance wins ties.
fn modal_distance(counts: &[u64]) -> u32 {
    let mut best = 0;
    for (d, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = d;
        }
    }
    best as u32 + 1
}

/// Builds the global graph from (training) sessions. Every ordered pair of
/// distinct items at distance `1..=epsilon` is counted; pairs seen in both
/// orders anywhere in the corpus become in-out neighbors. Each per-kind
/// list keeps its `max_neighbors` heaviest entries.
pub fn build_global_graph(corpus: &SessionCorpus, epsilon: usize, max_neighbors: usize) -> Result<GlobalGraph> {
    if epsilon < 1 {
        return Err(Error::Config(format!("epsilon must be >= 1, got {epsilon}")));
    }
    if max_neighbors < 1 {
        return Err(Error::Config(format!("max_neighbors must be >= 1, got {max_neighbors}")));
    }
    corpus.validate()?;
    let n = corpus.num_items();

    // (earlier, later) -> count per distance
    let mut ordered: HashMap<(ItemIdx, ItemIdx), Vec<u64>> = HashMap::new();
    for s in &corpus.sessions {
        let items = &s.items;
        for t in 0..items.len() {
            for d in 1..=epsilon {
                let Some(&later) = items.get(t + d) else { break };
                if later == items[t] {
                    continue;
                }
                ordered.entry((items[t], later)).or_insert_with(|| vec![0; epsilon])[d - 1] += 1;
            }
        }
    }

    let mut neighbors = vec![NeighborLists::default(); n];
    let mut keys: Vec<_> = ordered.keys().copied().collect();
    keys.sort_unstable();
    for (a, b) in keys {
        let fwd = &ordered[&(a, b)];
        match ordered.get(&(b, a)) {
            Some(bwd) => {
                // visit each unordered pair once
                if a > b {
                    continue;
                }
                let weight = fwd.iter().sum::<u64>() + bwd.iter().sum::<u64>();
                for (x, y) in [(a, b), (b, a)] {
                    neighbors[x].in_out.push(GlobalNeighbor {
                        item: y,
                        kind: EdgeKind::InOut,
                        weight,
                        mu: IO_POS,
                    });
                }
            }
            None => {
                let weight = fwd.iter().sum();
                let mu = modal_distance(fwd);
                neighbors[a].outgoing.push(GlobalNeighbor {
                    item: b,
                    kind: EdgeKind::Out,
                    weight,
                    mu,
                });
                neighbors[b].incoming.push(GlobalNeighbor {
                    item: a,
                    kind: EdgeKind::In,
                    weight,
                    mu,
                });
            }
        }
    }
    for lists in neighbors.iter_mut() {
        for list in [&mut lists.incoming, &mut lists.outgoing, &mut lists.in_out] {
            heaviest_first(list);
            list.truncate(max_neighbors);
        }
    }
    Ok(GlobalGraph {
        neighbors,
        epsilon,
        num_items: n,
        max_neighbors,
        corpus_hash: corpus_hash(corpus),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SampledNeighbors {
    pub incoming: Vec<GlobalNeighbor>,
    pub outgoing: Vec<GlobalNeighbor>,
    pub in_out: Vec<GlobalNeighbor>,
}

impl SampledNeighbors {
    pub fn by_kind(&self, kind: EdgeKind) -> &[GlobalNeighbor] {
        match kind {
            EdgeKind::In => &self.incoming,
            EdgeKind::Out => &self.outgoing,
            EdgeKind::InOut => &self.in_out,
            EdgeKind::SelfLoop => &[],
        }
    }
}

fn top_by_weight(list: &[GlobalNeighbor], max_n: usize, rng: &mut ChaCha8Rng) -> Vec<GlobalNeighbor> {
    if list.len() <= max_n {
        return list.to_vec();
    }
    if max_n == 0 {
        return Vec::new();
    }
    // list is sorted heaviest first; only the group tied at the cut is random
    let cut = list[max_n - 1].weight;
    let mut kept: Vec<GlobalNeighbor> = list.iter().filter(|g| g.weight > cut).copied().collect();
    let mut tied: Vec<GlobalNeighbor> = list.iter().filter(|g| g.weight == cut).copied().collect();
    tied.shuffle(rng);
    kept.extend(tied.into_iter().take(max_n - kept.len()));
    heaviest_first(&mut kept);
    kept
}

/// Top-`max_n` stored neighbors of each kind by weight. The seed only
/// decides between neighbors tied at the cut-off weight.
pub fn sample_neighbors(graph: &GlobalGraph, item: ItemIdx, max_n: usize, seed: u64) -> SampledNeighbors {
    let Some(lists) = graph.neighbors.get(item) else {
        return SampledNeighbors::default();
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (item as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    SampledNeighbors {
        incoming: top_by_weight(&lists.incoming, max_n, &mut rng),
        outgoing: top_by_weight(&lists.outgoing, max_n, &mut rng),
        in_out: top_by_weight(&lists.in_out, max_n, &mut rng),
    }
}

impl GlobalGraph {
    /// Flattens the graph into `(item, neighbor) -> (kind, weight, mu)`.
    pub fn pair_table(&self) -> BTreeMap<(ItemIdx, ItemIdx), (EdgeKind, u64, u32)> {
        let mut out = BTreeMap::new();
        for (i, lists) in self.neighbors.iter().enumerate() {
            for g in lists.incoming.iter().chain(&lists.outgoing).chain(&lists.in_out) {
                out.insert((i, g.item), (g.kind, g.weight, g.mu));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.neighbors.len() != self.num_items {
            return Err(Error::Data(format!(
                "graph has {} neighbor records for {} items",
                self.neighbors.len(),
                self.num_items
            )));
        }
        for (i, lists) in self.neighbors.iter().enumerate() {
            for g in lists.incoming.iter().chain(&lists.outgoing) {
                if g.item >= self.num_items || g.mu < 1 || g.mu as usize > self.epsilon || g.weight == 0 {
                    return Err(Error::Data(format!("item {i}: corrupt neighbor {g:?}")));
                }
            }
            for g in &lists.in_out {
                if g.item >= self.num_items || g.mu != IO_POS || g.weight == 0 {
                    return Err(Error::Data(format!("item {i}: corrupt in-out neighbor {g:?}")));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// serialized form

pub const GRAPH_FORMAT: &str = "sessrec-global-graph";
pub const GRAPH_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct GraphHeader {
    format: String,
    version: u32,
    epsilon: usize,
    num_items: usize,
    max_neighbors: usize,
    corpus_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphRecord {
    item: ItemIdx,
    #[serde(rename = "in")]
    incoming: Vec<(ItemIdx, u64, u32)>,
    #[serde(rename = "out")]
    outgoing: Vec<(ItemIdx, u64, u32)>,
    io: Vec<(ItemIdx, u64)>,
}

impl GlobalGraph {
    /// JSON Lines: a header line followed by one record per item.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = GraphHeader {
            format: GRAPH_FORMAT.to_string(),
            version: GRAPH_VERSION,
            epsilon: self.epsilon,
            num_items: self.num_items,
            max_neighbors: self.max_neighbors,
            corpus_hash: self.corpus_hash.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        for (item, lists) in self.neighbors.iter().enumerate() {
            let triple = |l: &[GlobalNeighbor]| l.iter().map(|g| (g.item, g.weight, g.mu)).collect();
            let rec = GraphRecord {
                item,
                incoming: triple(&lists.incoming),
                outgoing: triple(&lists.outgoing),
                io: lists.in_out.iter().map(|g| (g.item, g.weight)).collect(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Data(format!("{}: empty graph file", path.display())))?
            .map_err(|e| Error::io(path, e))?;
        let header: GraphHeader = serde_json::from_str(&first)?;
        if header.format != GRAPH_FORMAT || header.version != GRAPH_VERSION {
            return Err(Error::Data(format!(
                "{}: unsupported graph format {} v{}",
                path.display(),
                header.format,
                header.version
            )));
        }
        let mut neighbors = vec![NeighborLists::default(); header.num_items];
        let mut seen = vec![false; header.num_items];
        for line in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: GraphRecord = serde_json::from_str(&line)?;
            if rec.item >= header.num_items || seen[rec.item] {
                return Err(Error::Data(format!("{}: bad or repeated record for item {}", path.display(), rec.item)));
            }
            seen[rec.item] = true;
            let with_kind = |v: Vec<(ItemIdx, u64, u32)>, kind| {
                v.into_iter()
                    .map(|(item, weight, mu)| GlobalNeighbor { item, kind, weight, mu })
                    .collect()
            };
            neighbors[rec.item] = NeighborLists {
                incoming: with_kind(rec.incoming, EdgeKind::In),
                outgoing: with_kind(rec.outgoing, EdgeKind::Out),
                in_out: rec
                    .io
                    .into_iter()
                    .map(|(item, weight)| GlobalNeighbor {
                        item,
                        kind: EdgeKind::InOut,
                        weight,
                        mu: IO_POS,
                    })
                    .collect(),
            };
        }
        let graph = GlobalGraph {
            neighbors,
            epsilon: header.epsilon,
            num_items: header.num_items,
            max_neighbors: header.max_neighbors,
            corpus_hash: header.corpus_hash,
        };
        graph.validate()?;
        Ok(graph)
    }
}

// ---------------------------------------------------------------------------
// brute-force oracle

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    /// `from` precedes `to`.
    Forward,
    /// `from` follows `to`.
    Backward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairTuple {
    pub from: ItemIdx,
    pub to: ItemIdx,
    pub direction: Direction,
    pub distance: usize,
}

/// Exhaustive double loop over every session position and offset
/// `1..=epsilon`, emitting each co-occurrence once from each side.
/// Self pairs are included.
pub fn brute_force_global_oracle(corpus: &SessionCorpus, epsilon: usize) -> Vec<PairTuple> {
    let mut out = Vec::new();
    for s in &corpus.sessions {
        let n = s.items.len();
        for t in 0..n {
            for d in 1..=epsilon {
                if t + d >= n {
                    continue;
                }
                let (a, b) = (s.items[t], s.items[t + d]);
                out.push(PairTuple { from: a, to: b, direction: Direction::Forward, distance: d });
                out.push(PairTuple { from: b, to: a, direction: Direction::Backward, distance: d });
            }
        }
    }
    out
}

/// Neighbor table implied by oracle tuples, without truncation: kind,
/// weight and most frequent distance per `(item, neighbor)`, self pairs
/// dropped.
pub fn oracle_pair_table(tuples: &[PairTuple]) -> BTreeMap<(ItemIdx, ItemIdx), (EdgeKind, u64, u32)> {
    let mut forward: BTreeMap<(ItemIdx, ItemIdx), BTreeMap<usize, u64>> = BTreeMap::new();
    let mut backward: BTreeMap<(ItemIdx, ItemIdx), BTreeMap<usize, u64>> = BTreeMap::new();
    for t in tuples.iter().filter(|t| t.from != t.to) {
        let table = match t.direction {
            Direction::Forward => &mut forward,
            Direction::Backward => &mut backward,
        };
        *table.entry((t.from, t.to)).or_default().entry(t.distance).or_insert(0) += 1;
    }
    let mode = |hist: &BTreeMap<usize, u64>| -> u32 {
        let top = hist.values().copied().max().unwrap_or(0);
        *hist.iter().find(|(_, &c)| c == top).map(|(d, _)| d).unwrap_or(&0) as u32
    };
    let mut out = BTreeMap::new();
    let keys: std::collections::BTreeSet<_> = forward.keys().chain(backward.keys()).copied().collect();
    for key in keys {
        let f = forward.get(&key);
        let b = backward.get(&key);
        let total = |h: Option<&BTreeMap<usize, u64>>| h.map_or(0, |h| h.values().sum::<u64>());
        let entry = match (f, b) {
            (Some(_), Some(_)) => (EdgeKind::InOut, total(f) + total(b), IO_POS),
            (Some(h), None) => (EdgeKind::Out, total(f), mode(h)),
            (None, Some(h)) => (EdgeKind::In, total(b), mode(h)),
            (None, None) => unreachable!(),
        };
        out.insert(key, entry);
    }
    out
}

// ---------------------------------------------------------------------------
// session graph

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct SessionEdge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeKind,
}

/// Per-session graph over deduplicated items.
///
/// `edges` holds one entry per connected pair: `Out` means the session only
/// moves `src -> dst`, `InOut` that it moves both ways, and every node has a
/// `SelfLoop`. [`SessionGraph::neighbor_view`] expands this into each node's
/// typed neighbor list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionGraph {
    pub nodes: Vec<ItemIdx>,
    /// Node index of each session position.
    pub alias: Vec<usize>,
    pub edges: Vec<SessionEdge>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeNeighbor {
    pub node: usize,
    pub neighbor: usize,
    pub kind: EdgeKind,
}

pub fn build_session_graph(session: &[ItemIdx]) -> SessionGraph {
    let mut nodes: Vec<ItemIdx> = Vec::new();
    let mut index: HashMap<ItemIdx, usize> = HashMap::new();
    let alias: Vec<usize> = session
        .iter()
        .map(|&item| {
            *index.entry(item).or_insert_with(|| {
                nodes.push(item);
                nodes.len() - 1
            })
        })
        .collect();

    let mut transitions = std::collections::BTreeSet::new();
    for w in alias.windows(2) {
        if w[0] != w[1] {
            transitions.insert((w[0], w[1]));
        }
    }
    let mut edges = Vec::new();
    for &(a, b) in &transitions {
        if transitions.contains(&(b, a)) {
            if a < b {
                edges.push(SessionEdge { src: a, dst: b, kind: EdgeKind::InOut });
            }
        } else {
            edges.push(SessionEdge { src: a, dst: b, kind: EdgeKind::Out });
        }
    }
    edges.extend((0..nodes.len()).map(|i| SessionEdge { src: i, dst: i, kind: EdgeKind::SelfLoop }));
    SessionGraph { nodes, alias, edges }
}

impl SessionGraph {
    /// Every node's neighbors (self included), as seen from that node,
    /// sorted by `(node, neighbor)`.
    pub fn neighbor_view(&self) -> Vec<NodeNeighbor> {
        let mut out = Vec::with_capacity(self.edges.len() * 2);
        for e in &self.edges {
            match e.kind {
                EdgeKind::SelfLoop => out.push(NodeNeighbor { node: e.src, neighbor: e.src, kind: EdgeKind::SelfLoop }),
                EdgeKind::InOut => {
                    out.push(NodeNeighbor { node: e.src, neighbor: e.dst, kind: EdgeKind::InOut });
                    out.push(NodeNeighbor { node: e.dst, neighbor: e.src, kind: EdgeKind::InOut });
                }
                EdgeKind::Out | EdgeKind::In => {
                    out.push(NodeNeighbor { node: e.src, neighbor: e.dst, kind: EdgeKind::Out });
                    out.push(NodeNeighbor { node: e.dst, neighbor: e.src, kind: EdgeKind::In });
                }
            }
        }
        out.sort();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(sessions: &[&[&str]]) -> SessionCorpus {
        let owned: Vec<Vec<&str>> = sessions.iter().map(|s| s.to_vec()).collect();
        SessionCorpus::from_raw_sessions(&owned)
    }

    fn kind_of(g: &SessionGraph, a: usize, b: usize) -> Option<EdgeKind> {
        g.neighbor_view().into_iter().find(|n| n.node == a && n.neighbor == b).map(|n| n.kind)
    }

    #[test]
    fn session_graph_mixed_directions() {
        // [v1,v2,v3,v2]
        let g = build_session_graph(&[1, 2, 3, 2]);
        assert_eq!(g.nodes, vec![1, 2, 3]);
        assert_eq!(g.alias, vec![0, 1, 2, 1]);
        assert_eq!(kind_of(&g, 1, 2), Some(EdgeKind::InOut));
        assert_eq!(kind_of(&g, 2, 1), Some(EdgeKind::InOut));
        assert_eq!(kind_of(&g, 0, 1), Some(EdgeKind::Out));
        assert_eq!(kind_of(&g, 1, 0), Some(EdgeKind::In));
        assert_eq!(kind_of(&g, 0, 2), None);
        for i in 0..3 {
            assert_eq!(kind_of(&g, i, i), Some(EdgeKind::SelfLoop));
        }
        assert_eq!(g.edges.len(), 2 + 3);
    }

    #[test]
    fn session_graph_minimal_chain() {
        let g = build_session_graph(&[7, 9]);
        assert_eq!(kind_of(&g, 0, 1), Some(EdgeKind::Out));
        assert_eq!(kind_of(&g, 1, 0), Some(EdgeKind::In));
        assert_eq!(g.edges.iter().filter(|e| e.kind == EdgeKind::SelfLoop).count(), 2);
    }

    #[test]
    fn session_graph_adjacent_repeat_is_self_only() {
        let g = build_session_graph(&[4, 4]);
        assert_eq!(g.nodes, vec![4]);
        assert_eq!(g.edges, vec![SessionEdge { src: 0, dst: 0, kind: EdgeKind::SelfLoop }]);
    }

    #[test]
    fn global_graph_distance_tie_prefers_closer() {
        let c = corpus(&[&["v1", "v2", "v3", "v4"], &["v3", "v9", "v4"]]);
        let g = build_global_graph(&c, 2, 12).unwrap();
        let (v3, v4) = (c.vocab.index_of("v3").unwrap(), c.vocab.index_of("v4").unwrap());
        let out = g.neighbors[v3].outgoing.iter().find(|n| n.item == v4).unwrap();
        assert_eq!((out.weight, out.mu), (2, 1));
        let inc = g.neighbors[v4].incoming.iter().find(|n| n.item == v3).unwrap();
        assert_eq!((inc.weight, inc.mu), (2, 1));
    }

    #[test]
    fn global_graph_minimal() {
        let c = corpus(&[&["a", "b"]]);
        let g = build_global_graph(&c, 1, 12).unwrap();
        assert_eq!(
            g.neighbors[0].outgoing,
            vec![GlobalNeighbor { item: 1, kind: EdgeKind::Out, weight: 1, mu: 1 }]
        );
        assert_eq!(
            g.neighbors[1].incoming,
            vec![GlobalNeighbor { item: 0, kind: EdgeKind::In, weight: 1, mu: 1 }]
        );
    }

    #[test]
    fn global_graph_both_orders_collapse_to_in_out() {
        let c = corpus(&[&["a", "b"], &["b", "a"]]);
        let g = build_global_graph(&c, 3, 12).unwrap();
        for (x, y) in [(0, 1), (1, 0)] {
            assert!(g.neighbors[x].incoming.is_empty() && g.neighbors[x].outgoing.is_empty());
            assert_eq!(
                g.neighbors[x].in_out,
                vec![GlobalNeighbor { item: y, kind: EdgeKind::InOut, weight: 2, mu: IO_POS }]
            );
        }
        let table = oracle_pair_table(&brute_force_global_oracle(&c, 3));
        assert_eq!(table, g.pair_table());
    }

    #[test]
    fn epsilon_zero_rejected() {
        let c = corpus(&[&["a", "b"]]);
        assert!(matches!(build_global_graph(&c, 0, 12), Err(Error::Config(_))));
    }

    #[test]
    fn oracle_small_cases() {
        let c = corpus(&[&["a", "b", "c"]]);
        let mut fwd: Vec<_> = brute_force_global_oracle(&c, 2)
            .into_iter()
            .filter(|t| t.direction == Direction::Forward)
            .map(|t| (t.from, t.to, t.distance))
            .collect();
        fwd.sort();
        assert_eq!(fwd, vec![(0, 1, 1), (0, 2, 2), (1, 2, 1)]);
        assert_eq!(brute_force_global_oracle(&c, 2).len(), 6);

        let empty = SessionCorpus::from_raw_sessions::<&str>(&[]);
        assert!(brute_force_global_oracle(&empty, 3).is_empty());

        let selfs = corpus(&[&["a", "a", "a"]]);
        let tuples = brute_force_global_oracle(&selfs, 1);
        assert!(!tuples.is_empty() && tuples.iter().all(|t| t.from == t.to));
        assert!(oracle_pair_table(&tuples).is_empty());
        assert!(build_global_graph(&selfs, 1, 12).unwrap().neighbors[0].is_empty());
    }

    #[test]
    fn sampling_truncates_by_weight() {
        // hub "h" followed by 20 distinct items with weights 1..=20
        let mut sessions: Vec<Vec<String>> = Vec::new();
        for i in 0..20 {
            for _ in 0..=i {
                sessions.push(vec!["h".into(), format!("x{i}")]);
            }
        }
        sessions.push(vec!["y".into(), "h".into()]);
        sessions.push(vec!["z".into(), "h".into()]);
        let c = SessionCorpus::from_raw_sessions(&sessions);
        let g = build_global_graph(&c, 1, 100).unwrap();
        let h = c.vocab.index_of("h").unwrap();
        let s = sample_neighbors(&g, h, 12, 0);
        assert_eq!(s.outgoing.len(), 12);
        let weights: Vec<u64> = s.outgoing.iter().map(|n| n.weight).collect();
        assert_eq!(weights, (9..=20).rev().collect::<Vec<u64>>());
        assert_eq!(s.incoming.len(), 2);
        assert!(s.in_out.is_empty());

        let isolated = sample_neighbors(&g, 10_000, 12, 0);
        assert_eq!(isolated, SampledNeighbors::default());
    }

    #[test]
    fn sampling_ties_are_seeded() {
        let sessions: Vec<Vec<String>> = (0..10).map(|i| vec!["h".to_string(), format!("x{i}")]).collect();
        let c = SessionCorpus::from_raw_sessions(&sessions);
        let g = build_global_graph(&c, 1, 100).unwrap();
        let a = sample_neighbors(&g, 0, 3, 5);
        assert_eq!(a, sample_neighbors(&g, 0, 3, 5));
        assert_eq!(a.outgoing.len(), 3);
    }

    #[test]
    fn jsonl_round_trip() {
        let c = corpus(&[&["a", "b", "c", "a"], &["c", "b"], &["b", "d", "a"]]);
        let g = build_global_graph(&c, 3, 12).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.jsonl");
        g.write_jsonl(&path).unwrap();
        assert_eq!(GlobalGraph::read_jsonl(&path).unwrap(), g);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.lines().nth(1).unwrap().starts_with("{\"item\":0,\"in\":"));
    }
}
