#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sessrec::config::{CeMode, WeightScaling};
use sessrec::dataset::{augment_split, LabeledInstance, SessionCorpus};
use sessrec::graphs::{build_global_graph, GlobalGraph};
use sessrec::model::{ForwardOptions, ModelDims, ModelParams, NeighborCache, ObjectiveWeights};

pub fn toy_corpus() -> SessionCorpus {
    let sessions: Vec<Vec<&str>> = vec![
        vec!["a", "b", "c", "b", "d"],
        vec!["b", "c", "e", "a"],
        vec!["d", "a", "b", "f", "c"],
    ];
    SessionCorpus::from_raw_sessions(&sessions)
}

pub struct Toy {
    pub corpus: SessionCorpus,
    pub graph: GlobalGraph,
    pub cache: NeighborCache,
    pub params: ModelParams,
    pub instances: Vec<LabeledInstance>,
    pub opts: ForwardOptions,
}

pub fn toy_dims(num_items: usize) -> ModelDims {
    ModelDims { num_items, d: 6, num_factors: 2, d_p: 2, epsilon: 2, max_len: 8 }
}

pub fn toy(seed: u64, std: f64) -> Toy {
    let corpus = toy_corpus();
    let graph = build_global_graph(&corpus, 2, 12).unwrap();
    let cache = NeighborCache::build(&graph, 12, 0);
    let params = ModelParams::init(toy_dims(corpus.num_items()), std, seed).unwrap();
    let instances = corpus.sessions.iter().flat_map(|s| augment_split(&s.items)).collect();
    let opts = ForwardOptions { layers: 2, weight_scaling: WeightScaling::Raw, dropout: 0.0, ce_mode: CeMode::Binary };
    Toy { corpus, graph, cache, params, instances, opts }
}

pub fn weights(beta: f64, lambda: f64) -> ObjectiveWeights {
    ObjectiveWeights { beta, lambda }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
