//! Planted-factor synthetic sessions for learning checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::dataset::SessionCorpus;

/// Items `0..num_items` carry two latent factors: `i / group` and
/// `i % (num_items / group)`. Each next click stays within one factor
/// group of the current item, picked at random.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantedConfig {
    pub num_items: usize,
    pub group: usize,
    pub num_sessions: usize,
    pub min_len: usize,
    /// Extra length on top of `min_len` is `Binomial(extra_trials, 0.5)`.
    pub extra_trials: u64,
    /// Probability of following the first factor.
    pub first_factor: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig { num_items: 50, group: 5, num_sessions: 2000, min_len: 2, extra_trials: 6, first_factor: 0.5 }
    }
}

/// Items sharing a factor with `item` (excluding `item`), per factor.
pub fn factor_peers(cfg: &PlantedConfig, item: usize) -> [Vec<usize>; 2] {
    let stride = cfg.num_items / cfg.group;
    let a = (0..cfg.num_items).filter(|&j| j != item && j / cfg.group == item / cfg.group).collect();
    let b = (0..cfg.num_items).filter(|&j| j != item && j % stride == item % stride).collect();
    [a, b]
}

pub fn planted_sessions(cfg: &PlantedConfig, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extra = Binomial::new(cfg.extra_trials, 0.5).expect("valid binomial");
    let peers: Vec<[Vec<usize>; 2]> = (0..cfg.num_items).map(|i| factor_peers(cfg, i)).collect();
    (0..cfg.num_sessions)
        .map(|_| {
            let len = cfg.min_len + extra.sample(&mut rng) as usize;
            let mut s = vec![rng.random_range(0..cfg.num_items)];
            while s.len() < len {
                let cur = *s.last().unwrap();
                let f = if rng.random::<f64>() < cfg.first_factor { 0 } else { 1 };
                let group = &peers[cur][f];
                s.push(group[rng.random_range(0..group.len())]);
            }
            s
        })
        .collect()
}

/// The planted sessions as a corpus with raw ids `i0..`.
pub fn planted_corpus(cfg: &PlantedConfig, seed: u64) -> SessionCorpus {
    let raw: Vec<Vec<String>> = planted_sessions(cfg, seed)
        .into_iter()
        .map(|s| s.into_iter().map(|i| format!("i{i}")).collect())
        .collect();
    SessionCorpus::from_raw_sessions(&raw)
}
