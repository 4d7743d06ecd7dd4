use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{gaussian_from, Tape, Tensor, Var};

/// Sizes that fix every parameter shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ModelDims {
    pub num_items: usize,
    pub d: usize,
    pub num_factors: usize,
    /// Position-embedding width used by the global attention.
    pub d_p: usize,
    pub epsilon: usize,
    /// Rows of the reversed-position tables.
    pub max_len: usize,
}

impl ModelDims {
    pub fn chunk_dim(&self) -> usize {
        self.d / self.num_factors
    }

    /// Width of the attention input `[s ⊙ c ∥ w ∥ p]`.
    pub fn attention_dim(&self) -> usize {
        self.chunk_dim() + 1 + self.d_p
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_items == 0 || self.d == 0 || self.num_factors == 0 || self.d_p == 0 {
            return Err(Error::Config(format!("degenerate model dimensions {self:?}")));
        }
        if self.d % self.num_factors != 0 {
            return Err(Error::Config(format!("d = {} not divisible by K = {}", self.d, self.num_factors)));
        }
        if self.epsilon == 0 || self.max_len == 0 {
            return Err(Error::Config(format!("epsilon and max_len must be positive in {self:?}")));
        }
        Ok(())
    }
}

/// Indices of the session-embedding channel parameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelIds {
    /// Fusion of item embedding and reversed position.
    pub w_fuse: usize,
    pub b_fuse: usize,
    pub w_item: usize,
    pub w_mean: usize,
    pub q: usize,
    pub b_gate: usize,
}

/// Positions of each named parameter inside [`ModelParams::tensors`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamIds {
    pub item_table: usize,
    pub chunk_w: Vec<usize>,
    pub chunk_b: Vec<usize>,
    /// Global attention, indexed in, out, in-out.
    pub att_w: [usize; 3],
    pub att_q: [usize; 3],
    pub update_w: Vec<usize>,
    pub res_wp: usize,
    pub res_wq: usize,
    pub res_wf: usize,
    /// Local edge weights, indexed by [`crate::graphs::EdgeKind::index`].
    pub local_w: [usize; 4],
    pub inter: Vec<ChannelIds>,
    pub intra: ChannelIds,
    pub p_in: usize,
    pub p_out: usize,
    pub p_io: usize,
    pub p_g: usize,
    pub p_l: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub ids: ParamIds,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
}

/// Borrowed view of the position tables.
pub struct PositionTables<'a> {
    pub p_in: &'a Tensor,
    pub p_out: &'a Tensor,
    pub p_io: &'a Tensor,
    pub p_g: &'a Tensor,
    pub p_l: &'a Tensor,
}

struct Layout {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
}

impl Layout {
    fn add(&mut self, name: String, shape: Vec<usize>) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.names.len() - 1
    }
}

fn layout(dims: &ModelDims) -> (Layout, ParamIds) {
    let (n, d, k, dk, dp, eps, lm) =
        (dims.num_items, dims.d, dims.num_factors, dims.chunk_dim(), dims.d_p, dims.epsilon, dims.max_len);
    let da = dims.attention_dim();
    let mut l = Layout { names: Vec::new(), shapes: Vec::new() };
    let item_table = l.add("item_table".into(), vec![n, d]);
    let chunk_w = (0..k).map(|i| l.add(format!("chunk.{i}.w"), vec![d, dk])).collect();
    let chunk_b = (0..k).map(|i| l.add(format!("chunk.{i}.b"), vec![dk])).collect();
    let kinds = ["in", "out", "io"];
    let att_w = kinds.map(|r| l.add(format!("global_att.{r}.w"), vec![da, da]));
    let att_q = kinds.map(|r| l.add(format!("global_att.{r}.q"), vec![da]));
    let update_w = (0..k).map(|i| l.add(format!("update.{i}.w"), vec![2 * dk, dk])).collect();
    let res_wp = l.add("residual.w_p".into(), vec![d, d]);
    let res_wq = l.add("residual.w_q".into(), vec![d, d]);
    let res_wf = l.add("residual.w_f".into(), vec![1, d]);
    let local_w = ["in", "out", "io", "self"].map(|r| l.add(format!("local_att.{r}"), vec![1, d]));
    let mut channel = |prefix: String, width: usize| ChannelIds {
        w_fuse: l.add(format!("{prefix}.w_fuse"), vec![2 * width, width]),
        b_fuse: l.add(format!("{prefix}.b_fuse"), vec![width]),
        w_item: l.add(format!("{prefix}.w_item"), vec![width, width]),
        w_mean: l.add(format!("{prefix}.w_mean"), vec![width, width]),
        q: l.add(format!("{prefix}.q"), vec![width]),
        b_gate: l.add(format!("{prefix}.b_gate"), vec![width]),
    };
    let inter = (0..k).map(|i| channel(format!("inter.{i}"), dk)).collect();
    let intra = channel("intra".into(), d);
    let p_in = l.add("pos.in".into(), vec![eps, dp]);
    let p_out = l.add("pos.out".into(), vec![eps, dp]);
    let p_io = l.add("pos.io".into(), vec![dp]);
    let p_g = l.add("pos.global_rev".into(), vec![lm, dk]);
    let p_l = l.add("pos.local_rev".into(), vec![lm, d]);
    let ids = ParamIds {
        item_table,
        chunk_w,
        chunk_b,
        att_w,
        att_q,
        update_w,
        res_wp,
        res_wq,
        res_wf,
        local_w,
        inter,
        intra,
        p_in,
        p_out,
        p_io,
        p_g,
        p_l,
    };
    (l, ids)
}

impl ModelParams {
    /// Every parameter drawn from `N(0, std^2)`, in a fixed order.
    pub fn init(dims: ModelDims, std: f64, seed: u64) -> Result<Self> {
        dims.validate()?;
        let (l, ids) = layout(&dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = l.shapes.iter().map(|s| gaussian_from(&mut rng, s, 0.0, std)).collect();
        Ok(ModelParams { dims, ids, names: l.names, tensors })
    }

    /// Rebuilds from stored tensors, checking names and shapes.
    pub fn from_parts(dims: ModelDims, names: &[String], tensors: Vec<Tensor>) -> Result<Self> {
        dims.validate()?;
        let (l, ids) = layout(&dims);
        if names != l.names.as_slice() || tensors.len() != l.shapes.len() {
            return Err(Error::Mismatch("parameter names do not match the model layout".into()));
        }
        for ((name, want), t) in l.names.iter().zip(&l.shapes).zip(&tensors) {
            if t.shape() != want.as_slice() {
                return Err(Error::Mismatch(format!(
                    "parameter {name}: stored shape {:?}, model expects {want:?}",
                    t.shape()
                )));
            }
        }
        Ok(ModelParams { dims, ids, names: l.names, tensors })
    }

    pub fn positions(&self) -> PositionTables<'_> {
        let t = &self.tensors;
        PositionTables {
            p_in: &t[self.ids.p_in],
            p_out: &t[self.ids.p_out],
            p_io: &t[self.ids.p_io],
            p_g: &t[self.ids.p_g],
            p_l: &t[self.ids.p_l],
        }
    }

    pub fn get(&self, id: usize) -> &Tensor {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Registers every tensor on `tape`, in parameter order.
    pub fn register<'a>(&'a self, tape: &mut Tape<'a>) -> ParamVars {
        ParamVars(self.tensors.iter().map(|t| tape.param(t)).collect())
    }

    /// Same as [`ModelParams::register`] for a replacement tensor list of
    /// identical layout (used by finite-difference checks).
    pub fn register_tensors<'a>(tensors: &'a [Tensor], tape: &mut Tape<'a>) -> ParamVars {
        ParamVars(tensors.iter().map(|t| tape.param(t)).collect())
    }
}

/// Tape handles of the parameters, indexed like [`ModelParams::tensors`].
#[derive(Clone, Debug)]
pub struct ParamVars(pub Vec<Var>);

impl std::ops::Index<usize> for ParamVars {
    type Output = Var;
    fn index(&self, i: usize) -> &Var {
        &self.0[i]
    }
}
