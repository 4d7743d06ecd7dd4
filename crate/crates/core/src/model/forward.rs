use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::{CeMode, WeightScaling};
use crate::dataset::{ItemIdx, LabeledInstance};
use crate::error::{Error, Result};
use crate::graphs::{build_session_graph, sample_neighbors, EdgeKind, GlobalGraph, SampledNeighbors};
use crate::numerics::{Gradients, Tape, Tensor, Var};

use super::layers::*;
use super::params::ModelParams;

/// Sampled global neighbors of every item, computed once per run.
#[derive(Clone, Debug, Default)]
pub struct NeighborCache {
    pub lists: Vec<SampledNeighbors>,
}

impl NeighborCache {
    pub fn build(graph: &GlobalGraph, max_neighbors: usize, seed: u64) -> Self {
        NeighborCache {
            lists: (0..graph.num_items).map(|i| sample_neighbors(graph, i, max_neighbors, seed)).collect(),
        }
    }

    /// Neighbors of `item`; empty for items the graph has never seen.
    pub fn get(&self, item: ItemIdx) -> Option<&SampledNeighbors> {
        self.lists.get(item)
    }
}

/// Items needed per layer: `sets[L]` are the session's items, and each
/// `sets[l-1]` extends `sets[l]` with its neighbors (so `sets[l]` is a
/// prefix of `sets[l-1]`). `edges[l-1]` connects layer `l` targets to
/// layer `l-1` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Frontier {
    pub sets: Vec<Vec<ItemIdx>>,
    pub edges: Vec<[KindEdges; 3]>,
}

const KINDS: [EdgeKind; 3] = [EdgeKind::In, EdgeKind::Out, EdgeKind::InOut];

pub fn build_frontier(nodes: &[ItemIdx], cache: &NeighborCache, layers: usize, scaling: WeightScaling) -> Frontier {
    let mut sets = vec![Vec::new(); layers + 1];
    let mut edges = vec![<[KindEdges; 3]>::default(); layers];
    sets[layers] = nodes.to_vec();
    for l in (1..=layers).rev() {
        let mut set = sets[l].clone();
        let mut index: HashMap<ItemIdx, usize> = set.iter().enumerate().map(|(i, &x)| (x, i)).collect();
        let mut layer_edges = <[KindEdges; 3]>::default();
        for (t, &item) in sets[l].iter().enumerate() {
            let Some(nb) = cache.get(item) else { continue };
            for (r, kind) in KINDS.iter().enumerate() {
                for g in nb.by_kind(*kind) {
                    let src = *index.entry(g.item).or_insert_with(|| {
                        set.push(g.item);
                        set.len() - 1
                    });
                    layer_edges[r].push(t, src, scaling.apply(g.weight), g.mu);
                }
            }
        }
        sets[l - 1] = set;
        edges[l - 1] = layer_edges;
    }
    Frontier { sets, edges }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    pub layers: usize,
    pub weight_scaling: WeightScaling,
    pub dropout: f64,
    pub ce_mode: CeMode,
}

pub struct InstanceOutput {
    pub nodes: Vec<ItemIdx>,
    pub alias: Vec<usize>,
    pub local: LocalEmbedding,
    pub preference: Vec<Var>,
    /// Layer-0 chunks of the session's items, `K × [nodes, d/K]`.
    pub chunks: Vec<Var>,
    pub propagation: Vec<Propagation>,
    pub alphas: Vec<Var>,
    pub h_g: Var,
    pub inter: SessionEmbedding,
    pub intra: SessionEmbedding,
    pub l_cor: Var,
    pub scores: Scores,
}

fn dropout_mask(tape: &mut Tape<'_>, width: usize, p: f64, rng: &mut ChaCha8Rng) -> Var {
    let keep = 1.0 / (1.0 - p);
    let data = (0..width).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
    tape.constant(Tensor::matrix(1, width, data))
}

/// Full forward pass for one session prefix. Dropout is applied (to the
/// two session embeddings entering the prediction) only when `rng` is
/// given and `opts.dropout > 0`.
pub fn forward(
    tape: &mut Tape<'_>,
    mv: &ModelVars<'_>,
    prefix: &[ItemIdx],
    cache: &NeighborCache,
    opts: &ForwardOptions,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<InstanceOutput> {
    let dims = mv.params.dims;
    let ids = &mv.params.ids;
    let k = dims.num_factors;
    if prefix.is_empty() {
        return Err(Error::Data("empty session prefix".into()));
    }
    if let Some(&bad) = prefix.iter().find(|&&i| i >= dims.num_items) {
        return Err(Error::Data(format!("item index {bad} outside vocabulary of {}", dims.num_items)));
    }
    let prefix = &prefix[prefix.len().saturating_sub(dims.max_len)..];

    // local level
    let graph = build_session_graph(prefix);
    let base = tape.gather_rows(mv.v(ids.item_table), &graph.nodes)?;
    let local = local_item_embed(tape, mv, &graph, base)?;
    let preference = session_factor_preference(tape, local.h_s, &graph.alias, k)?;

    // global level
    let frontier = build_frontier(&graph.nodes, cache, opts.layers, opts.weight_scaling);
    let v0 = tape.gather_rows(mv.v(ids.item_table), &frontier.sets[0])?;
    let mut prev = chunk_embed(tape, mv, v0)?;
    let mut h_prev = tape.concat_cols(&prev)?;
    let n_nodes = graph.nodes.len();
    let chunks = if frontier.sets[0].len() == n_nodes {
        prev.clone()
    } else {
        let idx: Vec<usize> = (0..n_nodes).collect();
        prev.iter().map(|&c| tape.gather_rows(c, &idx)).collect::<Result<_>>()?
    };
    let l_cor = factor_independence_loss(tape, &chunks)?;

    let mut propagation = Vec::with_capacity(opts.layers);
    let mut alphas = Vec::with_capacity(opts.layers);
    for l in 1..=opts.layers {
        let targets = frontier.sets[l].len();
        let prop = propagate_neighbors(tape, mv, &prev, &preference, &frontier.edges[l - 1], targets)?;
        let own: Vec<Var> = prev.iter().map(|&c| prefix_rows(tape, c, targets)).collect::<Result<_>>()?;
        let h = update_node(tape, mv, &own, &prop.h_n)?;
        let hp = prefix_rows(tape, h_prev, targets)?;
        let (fused, alpha) = residual_fuse(tape, mv, h, hp)?;
        h_prev = fused;
        prev = (0..k)
            .map(|f| tape.slice_cols(fused, f * dims.chunk_dim(), (f + 1) * dims.chunk_dim()))
            .collect::<Result<_>>()?;
        propagation.push(prop);
        alphas.push(alpha);
    }
    let h_g = h_prev;

    let inter = session_embed(tape, mv, h_g, &graph.alias, SessionMode::Inter)?;
    let intra = session_embed(tape, mv, local.h_s, &graph.alias, SessionMode::Intra)?;
    let (mut s_g, mut s_l) = (inter.s, intra.s);
    if let Some(rng) = rng {
        if opts.dropout > 0.0 {
            let m = dropout_mask(tape, dims.d, opts.dropout, rng);
            s_g = tape.mul(s_g, m)?;
            let m = dropout_mask(tape, dims.d, opts.dropout, rng);
            s_l = tape.mul(s_l, m)?;
        }
    }
    let scores = predict_scores(tape, mv, s_g, s_l)?;
    Ok(InstanceOutput {
        nodes: graph.nodes,
        alias: graph.alias,
        local,
        preference,
        chunks,
        propagation,
        alphas,
        h_g,
        inter,
        intra,
        l_cor,
        scores,
    })
}

pub(crate) fn prefix_rows(tape: &mut Tape<'_>, x: Var, n: usize) -> Result<Var> {
    if tape.value(x).rows() == n {
        return Ok(x);
    }
    let idx: Vec<usize> = (0..n).collect();
    tape.gather_rows(x, &idx)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveWeights {
    pub beta: f64,
    pub lambda: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchLoss {
    pub total: f64,
    pub classification: f64,
    pub independence: f64,
    /// `None` when the batch is too small to corrupt or `λ = 0`.
    pub contrastive: Option<f64>,
}

/// Records the batch objective `mean_b(L_c + β L_cor) + λ L_con` on `tape`.
pub fn batch_objective(
    tape: &mut Tape<'_>,
    mv: &ModelVars<'_>,
    batch: &[&LabeledInstance],
    cache: &NeighborCache,
    opts: &ForwardOptions,
    weights: ObjectiveWeights,
    rng: &mut ChaCha8Rng,
) -> Result<(Var, BatchLoss)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let mut per_instance = Vec::with_capacity(batch.len());
    let (mut sg, mut sl) = (Vec::new(), Vec::new());
    let (mut lc_sum, mut cor_sum) = (0.0, 0.0);
    for inst in batch {
        let out = forward(tape, mv, &inst.prefix, cache, opts, Some(&mut *rng))?;
        let l_c = classification_loss(tape, out.scores.probs, inst.label, opts.ce_mode)?;
        lc_sum += tape.value(l_c).item();
        cor_sum += tape.value(out.l_cor).item();
        per_instance.push(total_loss(tape, l_c, out.l_cor, None, weights.beta, 0.0)?);
        sg.push(out.inter.s);
        sl.push(out.intra.s);
    }
    let stacked = tape.concat_rows(&per_instance)?;
    let mut loss = tape.mean(stacked);
    let mut contrastive = None;
    if batch.len() >= 2 && weights.lambda != 0.0 {
        let sg = tape.concat_rows(&sg)?;
        let sl = tape.concat_rows(&sl)?;
        let neg = corrupt_batch(tape, sg, rng)?;
        let con = contrastive_loss(tape, sg, sl, neg)?;
        contrastive = Some(tape.value(con).item());
        let con = tape.scale(con, weights.lambda);
        loss = tape.add(loss, con)?;
    }
    let b = batch.len() as f64;
    let summary = BatchLoss {
        total: tape.value(loss).item(),
        classification: lc_sum / b,
        independence: cor_sum / b,
        contrastive,
    };
    Ok((loss, summary))
}

/// Batch objective and its gradient with respect to every parameter, in
/// parameter order.
pub fn loss_and_gradients(
    params: &ModelParams,
    batch: &[&LabeledInstance],
    cache: &NeighborCache,
    opts: &ForwardOptions,
    weights: ObjectiveWeights,
    rng: &mut ChaCha8Rng,
) -> Result<(BatchLoss, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let mv = ModelVars::bind(params, &mut tape);
    let (loss, summary) = batch_objective(&mut tape, &mv, batch, cache, opts, weights, rng)?;
    let grads: Gradients = tape.backward(loss)?;
    let g = mv.vars.0.iter().map(|&v| grads.wrt(v)).collect();
    Ok((summary, g))
}

/// Inference-mode scores (logits over all items) for one prefix.
pub fn score_session(params: &ModelParams, prefix: &[ItemIdx], cache: &NeighborCache, layers: usize, scaling: WeightScaling) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let mv = ModelVars::bind(params, &mut tape);
    let opts = ForwardOptions { layers, weight_scaling: scaling, dropout: 0.0, ce_mode: CeMode::Binary };
    let out = forward(&mut tape, &mv, prefix, cache, &opts, None)?;
    Ok(tape.value(out.scores.logits).data().to_vec())
}

/// Mean over items of the mean pairwise `|cos|` between their layer-0
/// chunks.
pub fn mean_abs_chunk_cosine(params: &ModelParams) -> Result<f64> {
    let k = params.dims.num_factors;
    if k < 2 {
        return Ok(0.0);
    }
    let mut tape = Tape::new();
    let mv = ModelVars::bind(params, &mut tape);
    let chunks = chunk_embed(&mut tape, &mv, mv.v(params.ids.item_table))?;
    let n = params.dims.num_items;
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            let (a, b) = (tape.value(chunks[i]), tape.value(chunks[j]));
            for r in 0..n {
                let dot: f64 = a.row(r).iter().zip(b.row(r)).map(|(x, y)| x * y).sum();
                total += dot.abs();
            }
        }
    }
    Ok(total / (n * k * (k - 1) / 2) as f64)
}
