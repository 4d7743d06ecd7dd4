use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::config::CeMode;
use crate::error::{Error, Result};
use crate::graphs::{EdgeKind, SessionGraph};
use crate::numerics::{Tape, Tensor, Var};

use super::params::{ChannelIds, ModelParams, ParamVars};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-12;
pub const PROB_EPS: f64 = 1e-12;

/// Parameters bound to a tape.
pub struct ModelVars<'a> {
    pub params: &'a ModelParams,
    pub vars: ParamVars,
}

impl<'a> ModelVars<'a> {
    pub fn bind(params: &'a ModelParams, tape: &mut Tape<'a>) -> Self {
        ModelVars { params, vars: params.register(tape) }
    }

    pub fn v(&self, id: usize) -> Var {
        self.vars[id]
    }
}

fn factor_slices(tape: &mut Tape<'_>, x: Var, k: usize) -> Result<Vec<Var>> {
    let dk = tape.value(x).cols() / k;
    (0..k).map(|i| tape.slice_cols(x, i * dk, (i + 1) * dk)).collect()
}

/// Projects rows of `v` (`[m, d]`) into `K` unit-norm chunks of `[m, d/K]`.
pub fn chunk_embed(tape: &mut Tape<'_>, mv: &ModelVars<'_>, v: Var) -> Result<Vec<Var>> {
    let ids = &mv.params.ids;
    let mut out = Vec::with_capacity(ids.chunk_w.len());
    for (&w, &b) in ids.chunk_w.iter().zip(&ids.chunk_b) {
        let z = tape.matmul(v, mv.v(w))?;
        let z = tape.sigmoid(z);
        let z = tape.add_row(z, mv.v(b))?;
        #[cfg(debug_assertions)]
        {
            let zv = tape.value(z);
            if (0..zv.rows()).any(|r| zv.row(r).iter().all(|x| *x == 0.0)) {
                log::warn!("chunk_embed: zero vector before normalization");
            }
        }
        out.push(tape.l2_normalize(z, NORM_EPS));
    }
    Ok(out)
}

/// Mean over session positions of the local embeddings, split into `K`
/// factor slices of shape `[1, d/K]`.
pub fn session_factor_preference(
    tape: &mut Tape<'_>,
    local: Var,
    alias: &[usize],
    num_factors: usize,
) -> Result<Vec<Var>> {
    if alias.is_empty() {
        return Err(Error::Data("empty session".into()));
    }
    let per_pos = tape.gather_rows(local, alias)?;
    let mean = tape.mean_rows(per_pos);
    factor_slices(tape, mean, num_factors)
}

/// Neighbor edges of one kind for one layer: `source[e]` is a row of the
/// previous layer, `target[e]` a row of the current one.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KindEdges {
    pub target: Vec<usize>,
    pub source: Vec<usize>,
    pub weight: Vec<f64>,
    pub mu: Vec<u32>,
}

impl KindEdges {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn push(&mut self, target: usize, source: usize, weight: f64, mu: u32) {
        self.target.push(target);
        self.source.push(source);
        self.weight.push(weight);
        self.mu.push(mu);
    }
}

pub struct Propagation {
    /// Aggregated neighbor message per factor, `[targets, d/K]`.
    pub h_n: Vec<Var>,
    /// Attention weights per factor and kind (in, out, in-out), one entry
    /// per edge; `None` when the kind has no edges.
    pub weights: Vec<[Option<Var>; 3]>,
}

/// Position-aware attention over typed global neighbors.
///
/// `prev` holds the previous layer's chunks (`K × [M, d/K]`), `s` the
/// session factor preferences (`K × [1, d/K]`). Weights are normalized per
/// target within each kind; kinds are then summed.
pub fn propagate_neighbors(
    tape: &mut Tape<'_>,
    mv: &ModelVars<'_>,
    prev: &[Var],
    s: &[Var],
    edges: &[KindEdges; 3],
    num_targets: usize,
) -> Result<Propagation> {
    let dims = mv.params.dims;
    let ids = &mv.params.ids;
    let (dk, da) = (dims.chunk_dim(), dims.attention_dim());
    let k = prev.len();
    if s.len() != k {
        return Err(Error::Data(format!("{} chunk sets but {} preferences", k, s.len())));
    }
    let mut h_n: Vec<Option<Var>> = vec![None; k];
    let mut weights = vec![[None, None, None]; k];

    let scaled: Vec<Var> = (0..k).map(|f| tape.mul_row(prev[f], s[f])).collect::<Result<_>>()?;
    for (r, e) in edges.iter().enumerate() {
        if e.is_empty() {
            continue;
        }
        if r < 2 {
            if let Some(bad) = e.mu.iter().find(|&&m| m < 1 || m as usize > dims.epsilon) {
                return Err(Error::Data(format!("neighbor distance {bad} outside 1..={}", dims.epsilon)));
            }
        }
        let w_r = mv.v(ids.att_w[r]);
        let q_r = mv.v(ids.att_q[r]);
        let a = tape.slice_cols(w_r, 0, dk)?;
        let bw = tape.slice_cols(w_r, dk, dk + 1)?;
        let cp = tape.slice_cols(w_r, dk + 1, da)?;

        // factor-independent part: weight and position terms
        let wcol = tape.constant(Tensor::matrix(e.len(), 1, e.weight.clone()));
        let fixed = tape.matmul_t(wcol, bw)?;
        let fixed = if r == 2 {
            let p = tape.matmul_t(mv.v(ids.p_io), cp)?;
            tape.add_row(fixed, p)?
        } else {
            let table = mv.v(if r == 0 { ids.p_in } else { ids.p_out });
            let p = tape.matmul_t(table, cp)?;
            let rows: Vec<usize> = e.mu.iter().map(|&m| m as usize - 1).collect();
            let p = tape.gather_rows(p, &rows)?;
            tape.add(fixed, p)?
        };

        for f in 0..k {
            let y = tape.matmul_t(scaled[f], a)?;
            let y = tape.gather_rows(y, &e.source)?;
            let z = tape.add(y, fixed)?;
            let z = tape.leaky_relu(z, LEAKY_SLOPE);
            let z = tape.mul_row(z, q_r)?;
            let logits = tape.row_sum(z);
            let theta = tape.segment_softmax(logits, &e.target)?;
            let nbr = tape.gather_rows(prev[f], &e.source)?;
            let msg = tape.segment_weighted_sum(theta, nbr, &e.target, num_targets)?;
            h_n[f] = Some(match h_n[f] {
                Some(acc) => tape.add(acc, msg)?,
                None => msg,
            });
            weights[f][r] = Some(theta);
        }
    }
    let h_n = h_n
        .into_iter()
        .map(|h| h.unwrap_or_else(|| tape.constant(Tensor::zeros(&[num_targets, dk]))))
        .collect();
    Ok(Propagation { h_n, weights })
}

/// `relu([c_k ∥ hN_k] W_k1)` per factor, concatenated in factor order.
pub fn update_node(tape: &mut Tape<'_>, mv: &ModelVars<'_>, c: &[Var], h_n: &[Var]) -> Result<Var> {
    let mut parts = Vec::with_capacity(c.len());
    for (f, (&ck, &hk)) in c.iter().zip(h_n).enumerate() {
        let x = tape.concat_cols(&[ck, hk])?;
        let z = tape.matmul(x, mv.v(mv.params.ids.update_w[f]))?;
        parts.push(tape.relu(z));
    }
    tape.concat_cols(&parts)
}

/// Residual gate: returns the fused rows and the per-row gate `α`.
pub fn residual_fuse(tape: &mut Tape<'_>, mv: &ModelVars<'_>, h: Var, h_prev: Var) -> Result<(Var, Var)> {
    let ids = &mv.params.ids;
    let a = tape.matmul_t(h, mv.v(ids.res_wp))?;
    let b = tape.matmul_t(h_prev, mv.v(ids.res_wq))?;
    let g = tape.add(a, b)?;
    let g = tape.sigmoid(g);
    let alpha = tape.matmul_t(g, mv.v(ids.res_wf))?;
    let keep = tape.one_minus(alpha);
    let x = tape.mul_col(h, alpha)?;
    let y = tape.mul_col(h_prev, keep)?;
    Ok((tape.add(x, y)?, alpha))
}

/// Mean over rows of the summed pairwise chunk cosines.
pub fn factor_independence_loss(tape: &mut Tape<'_>, chunks: &[Var]) -> Result<Var> {
    let mut total: Option<Var> = None;
    for i in 0..chunks.len() {
        for j in i + 1..chunks.len() {
            let d = tape.row_dot(chunks[i], chunks[j])?;
            total = Some(match total {
                Some(t) => tape.add(t, d)?,
                None => d,
            });
        }
    }
    Ok(match total {
        Some(t) => tape.mean(t),
        None => tape.constant(Tensor::scalar(0.0)),
    })
}

pub struct LocalEmbedding {
    pub h_s: Var,
    /// Attention weight per entry of [`SessionGraph::neighbor_view`].
    pub weights: Var,
    pub segments: Vec<usize>,
}

/// Attention of each session node over its session-graph neighbors,
/// self loop included. `base` is `[nodes, d]`.
pub fn local_item_embed(
    tape: &mut Tape<'_>,
    mv: &ModelVars<'_>,
    graph: &SessionGraph,
    base: Var,
) -> Result<LocalEmbedding> {
    let view = graph.neighbor_view();
    let src: Vec<usize> = view.iter().map(|n| n.node).collect();
    let nbr: Vec<usize> = view.iter().map(|n| n.neighbor).collect();
    let kinds: Vec<usize> = view.iter().map(|n| n.kind.index()).collect();
    let lw = mv.params.ids.local_w.map(|id| mv.v(id));
    let table = tape.concat_rows(&lw)?;
    let sel = tape.gather_rows(table, &kinds)?;
    let hi = tape.gather_rows(base, &src)?;
    let hj = tape.gather_rows(base, &nbr)?;
    let x = tape.mul(hi, hj)?;
    let x = tape.mul(x, sel)?;
    let logits = tape.row_sum(x);
    let logits = tape.leaky_relu(logits, LEAKY_SLOPE);
    let weights = tape.segment_softmax(logits, &src)?;
    let h_s = tape.segment_weighted_sum(weights, hj, &src, graph.nodes.len())?;
    debug_assert!(view.iter().any(|n| n.kind == EdgeKind::SelfLoop));
    Ok(LocalEmbedding { h_s, weights, segments: src })
}

/// Soft-attention readout of one channel. `h_pos` is `[ι, w]` in session
/// order; `p_table` the reversed-position table of width `w`. Returns the
/// embedding `[1, w]` and the unnormalized weights `[ι, 1]`.
pub fn channel_embed(
    tape: &mut Tape<'_>,
    mv: &ModelVars<'_>,
    h_pos: Var,
    p_table: Var,
    ch: &ChannelIds,
) -> Result<(Var, Var)> {
    let len = tape.value(h_pos).rows();
    let max_len = tape.value(p_table).rows();
    if len == 0 || len > max_len {
        return Err(Error::Data(format!("session length {len} outside 1..={max_len}")));
    }
    let rev: Vec<usize> = (0..len).map(|i| len - 1 - i).collect();
    let p = tape.gather_rows(p_table, &rev)?;
    let x = tape.concat_cols(&[h_pos, p])?;
    let x = tape.matmul(x, mv.v(ch.w_fuse))?;
    let x = tape.add_row(x, mv.v(ch.b_fuse))?;
    let fused = tape.tanh(x);
    let mean = tape.mean_rows(h_pos);
    let g = tape.matmul_t(fused, mv.v(ch.w_item))?;
    let m = tape.matmul_t(mean, mv.v(ch.w_mean))?;
    let g = tape.add_row(g, m)?;
    let g = tape.add_row(g, mv.v(ch.b_gate))?;
    let g = tape.sigmoid(g);
    let g = tape.mul_row(g, mv.v(ch.q))?;
    let gamma = tape.row_sum(g);
    let weighted = tape.mul_col(h_pos, gamma)?;
    Ok((tape.sum_rows(weighted), gamma))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionMode {
    /// Factor-wise over global embeddings.
    Inter,
    /// Whole-vector over local embeddings.
    Intra,
}

pub struct SessionEmbedding {
    pub s: Var,
    /// Per-position weights; one per factor in inter mode.
    pub gammas: Vec<Var>,
}

/// Session embedding from per-node rows `items` (`[nodes, d]`) expanded
/// to session positions through `alias`.
pub fn session_embed(
    tape: &mut Tape<'_>,
    mv: &ModelVars<'_>,
    items: Var,
    alias: &[usize],
    mode: SessionMode,
) -> Result<SessionEmbedding> {
    let ids = &mv.params.ids;
    let h_pos = tape.gather_rows(items, alias)?;
    match mode {
        SessionMode::Intra => {
            let (s, gamma) = channel_embed(tape, mv, h_pos, mv.v(ids.p_l), &ids.intra)?;
            Ok(SessionEmbedding { s, gammas: vec![gamma] })
        }
        SessionMode::Inter => {
            let k = ids.inter.len();
            let slices = factor_slices(tape, h_pos, k)?;
            let mut parts = Vec::with_capacity(k);
            let mut gammas = Vec::with_capacity(k);
            for (f, hk) in slices.into_iter().enumerate() {
                let (s, gamma) = channel_embed(tape, mv, hk, mv.v(ids.p_g), &ids.inter[f])?;
                parts.push(s);
                gammas.push(gamma);
            }
            Ok(SessionEmbedding { s: tape.concat_cols(&parts)?, gammas })
        }
    }
}

fn non_identity_permutation(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    if n < 2 {
        return p;
    }
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().any(|(i, &x)| i != x) {
            return p;
        }
    }
}

/// Row permutation then column permutation of a `[B, d]` batch. Either
/// permutation is redrawn while it is the identity (when its size allows
/// anything else).
pub fn corruption_permutations(b: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if b < 2 {
        return Err(Error::Data(format!("corruption needs a batch of at least 2 sessions, got {b}")));
    }
    let rows = non_identity_permutation(b, rng);
    let cols = non_identity_permutation(d, rng);
    Ok((rows, cols))
}

pub fn corrupt_batch(tape: &mut Tape<'_>, s: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let (b, d) = (tape.value(s).rows(), tape.value(s).cols());
    let (rows, cols) = corruption_permutations(b, d, rng)?;
    let x = tape.gather_rows(s, &rows)?;
    tape.gather_cols(x, &cols)
}

/// `mean(-log σ(s_g·s_l) - log σ(1 - s̃_g·s_l))` over batch rows.
pub fn contrastive_loss(tape: &mut Tape<'_>, s_g: Var, s_l: Var, s_g_neg: Var) -> Result<Var> {
    let pos = tape.row_dot(s_g, s_l)?;
    let neg = tape.row_dot(s_g_neg, s_l)?;
    let neg = tape.one_minus(neg);
    let a = tape.log_sigmoid(pos);
    let b = tape.log_sigmoid(neg);
    let t = tape.add(a, b)?;
    let m = tape.mean(t);
    Ok(tape.scale(m, -1.0))
}

pub struct Scores {
    pub logits: Var,
    pub probs: Var,
}

/// Softmax over all items of `(s_g + s_l) · v_i`.
pub fn predict_scores(tape: &mut Tape<'_>, mv: &ModelVars<'_>, s_g: Var, s_l: Var) -> Result<Scores> {
    let s = tape.add(s_g, s_l)?;
    let logits = tape.matmul_t(s, mv.v(mv.params.ids.item_table))?;
    let probs = tape.softmax(logits);
    Ok(Scores { logits, probs })
}

pub fn classification_loss(tape: &mut Tape<'_>, probs: Var, target: usize, mode: CeMode) -> Result<Var> {
    match mode {
        CeMode::Binary => tape.binary_cross_entropy(probs, target, PROB_EPS),
        CeMode::Multiclass => tape.neg_log_likelihood(probs, target, PROB_EPS),
    }
}

/// `L_c + β L_cor + λ L_con`; a missing contrastive term counts as zero.
pub fn total_loss(
    tape: &mut Tape<'_>,
    l_c: Var,
    l_cor: Var,
    l_con: Option<Var>,
    beta: f64,
    lambda: f64,
) -> Result<Var> {
    let cor = tape.scale(l_cor, beta);
    let mut total = tape.add(l_c, cor)?;
    if let Some(con) = l_con {
        let con = tape.scale(con, lambda);
        total = tape.add(total, con)?;
    }
    Ok(total)
}
