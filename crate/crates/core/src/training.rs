//! Mini-batch training with Adam, step decay, early stopping and
//! checkpointing.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, EpochRecord, TrainProgress};
use crate::config::TrainConfig;
use crate::dataset::Bundle;
use crate::error::{Error, Result};
use crate::evaluation::evaluate;
use crate::graphs::GlobalGraph;
use crate::hashing::corpus_hash;
use crate::model::{loss_and_gradients, ForwardOptions, ModelDims, ModelParams, NeighborCache, ObjectiveWeights};
use crate::numerics::{adam_step, lr_at, AdamConfig, AdamState};

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const REPORT_FILE: &str = "report.json";
pub const SELECTION_K: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_valid_mrr20: Option<f64>,
    pub stopped_early: bool,
    pub wall_seconds: f64,
}

impl TrainReport {
    /// Copy with every timing field zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.wall_seconds = 0.0;
        r.epochs.iter_mut().for_each(|e| e.wall_seconds = 0.0);
        r
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub struct TrainOutcome {
    pub report: TrainReport,
    /// Parameters after the last completed epoch.
    pub params: ModelParams,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
}

pub fn model_dims(cfg: &TrainConfig, num_items: usize) -> ModelDims {
    ModelDims {
        num_items,
        d: cfg.d,
        num_factors: cfg.num_factors,
        d_p: cfg.position_dim(),
        epsilon: cfg.epsilon,
        max_len: cfg.max_session_len,
    }
}

pub fn forward_options(cfg: &TrainConfig) -> ForwardOptions {
    ForwardOptions {
        layers: cfg.layers,
        weight_scaling: cfg.weight_scaling,
        dropout: cfg.dropout,
        ce_mode: cfg.ce_mode,
    }
}

/// Checks that the graph was built from this bundle's training sessions
/// with a compatible distance window.
pub fn check_inputs(cfg: &TrainConfig, bundle: &Bundle, graph: &GlobalGraph) -> Result<String> {
    let hash = corpus_hash(&bundle.train_corpus());
    if graph.corpus_hash != hash {
        return Err(Error::Mismatch(
            "graph was not built from this bundle's training sessions (corpus hash differs)".into(),
        ));
    }
    if graph.num_items != bundle.num_items() {
        return Err(Error::Mismatch(format!(
            "graph covers {} items, bundle has {}",
            graph.num_items,
            bundle.num_items()
        )));
    }
    if graph.epsilon != cfg.epsilon {
        return Err(Error::Mismatch(format!(
            "config epsilon {} differs from graph epsilon {}",
            cfg.epsilon, graph.epsilon
        )));
    }
    Ok(hash)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

struct Run<'a> {
    cfg: TrainConfig,
    bundle: &'a Bundle,
    cache: NeighborCache,
    corpus_hash: String,
    out_dir: &'a Path,
    params: ModelParams,
    adam: AdamState,
    progress: TrainProgress,
}

impl Run<'_> {
    fn checkpoint(&self) -> Checkpoint {
        let mut progress = self.progress.clone();
        progress.history.iter_mut().for_each(|e| e.wall_seconds = 0.0);
        Checkpoint {
            config: self.cfg.clone(),
            vocab: self.bundle.vocab.ids().to_vec(),
            corpus_hash: self.corpus_hash.clone(),
            params: self.params.clone(),
            adam: self.adam.clone(),
            progress,
        }
    }

    fn train_epoch(&mut self, epoch: usize, lr: f64) -> Result<f64> {
        let cfg = &self.cfg;
        let opts = forward_options(cfg);
        let weights = ObjectiveWeights { beta: cfg.beta, lambda: cfg.lambda };
        let adam_cfg = AdamConfig { lr, weight_decay: cfg.weight_decay, ..AdamConfig::default() };
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order: Vec<usize> = (0..self.bundle.train.len()).collect();
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for (b, ids) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<_> = ids.iter().map(|&i| &self.bundle.train[i]).collect();
            let (loss, grads) = loss_and_gradients(&self.params, &batch, &self.cache, &opts, weights, &mut rng)?;
            let grads_finite = grads.iter().all(|g| g.iter().all(|x| x.is_finite()));
            if !loss.total.is_finite() || !grads_finite {
                let norms: Vec<String> = self
                    .params
                    .names
                    .iter()
                    .zip(&grads)
                    .map(|(n, g)| format!("{n}={:.3e}", g.iter().map(|x| x * x).sum::<f64>().sqrt()))
                    .collect();
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    detail: format!(
                        "loss {:?}, lr {lr}, instances {ids:?}, grad norms [{}]",
                        loss,
                        norms.join(", ")
                    ),
                });
            }
            // lr = 0 freezes the model; the optimizer itself rejects it
            if lr > 0.0 {
                adam_step(&mut self.params.tensors, &grads, &mut self.adam, &adam_cfg)?;
            }
            total += loss.total * ids.len() as f64;
            count += ids.len();
        }
        Ok(total / count.max(1) as f64)
    }

    fn run(mut self, progress_cb: &mut dyn FnMut(&EpochRecord)) -> Result<TrainOutcome> {
        let start = Instant::now();
        std::fs::create_dir_all(self.out_dir).map_err(|e| Error::io(self.out_dir, e))?;
        let best_path = self.out_dir.join(BEST_CHECKPOINT);
        let last_path = self.out_dir.join(LAST_CHECKPOINT);
        let cfg = self.cfg.clone();
        while !self.progress.stopped && self.progress.next_epoch < cfg.max_epochs {
            let epoch = self.progress.next_epoch;
            let epoch_start = Instant::now();
            let lr = lr_at(epoch, cfg.base_lr, cfg.lr_decay, cfg.lr_every);
            let train_loss = self.train_epoch(epoch, lr)?;
            let valid = evaluate(
                &self.params,
                &self.bundle.valid,
                &self.cache,
                cfg.layers,
                cfg.weight_scaling,
                SELECTION_K,
            )?;
            let record = EpochRecord {
                epoch,
                train_loss,
                valid_p20: valid.p_at_k,
                valid_mrr20: valid.mrr_at_k,
                lr,
                wall_seconds: epoch_start.elapsed().as_secs_f64(),
            };
            log::info!("epoch {epoch} done in {:.1}s", record.wall_seconds);
            progress_cb(&record);
            let p = &mut self.progress;
            p.history.push(record);
            p.next_epoch = epoch + 1;
            let improved = p.best_mrr.is_none_or(|b| valid.mrr_at_k > b);
            if improved {
                p.best_mrr = Some(valid.mrr_at_k);
                p.best_epoch = Some(epoch);
                p.epochs_without_improvement = 0;
            } else {
                p.epochs_without_improvement += 1;
                if p.epochs_without_improvement >= cfg.patience {
                    p.stopped = true;
                }
            }
            let ckpt = self.checkpoint();
            if improved {
                ckpt.save(&best_path)?;
            }
            ckpt.save(&last_path)?;
        }
        if !best_path.exists() {
            self.checkpoint().save(&best_path)?;
        }
        let report = TrainReport {
            epochs: self.progress.history.clone(),
            best_epoch: self.progress.best_epoch,
            best_valid_mrr20: self.progress.best_mrr,
            stopped_early: self.progress.stopped,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        report.write(&self.out_dir.join(REPORT_FILE))?;
        Ok(TrainOutcome { report, params: self.params, best_checkpoint: best_path, last_checkpoint: last_path })
    }
}

/// Trains from scratch, writing `best.ckpt`, `last.ckpt` and `report.json`
/// into `out_dir`. `progress` is called after every epoch.
pub fn train(
    cfg: &TrainConfig,
    bundle: &Bundle,
    graph: &GlobalGraph,
    out_dir: &Path,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let hash = check_inputs(cfg, bundle, graph)?;
    if bundle.train.is_empty() || bundle.valid.is_empty() {
        return Err(Error::Data("bundle needs training and validation instances".into()));
    }
    let params = ModelParams::init(model_dims(cfg, bundle.num_items()), cfg.init_std, cfg.seed)?;
    let adam = AdamState::new(&params.tensors);
    Run {
        cfg: cfg.clone(),
        bundle,
        cache: NeighborCache::build(graph, cfg.max_neighbors, cfg.seed),
        corpus_hash: hash,
        out_dir,
        params,
        adam,
        progress: TrainProgress {
            next_epoch: 0,
            best_mrr: None,
            best_epoch: None,
            epochs_without_improvement: 0,
            stopped: false,
            history: Vec::new(),
        },
    }
    .run(progress)
}

/// Continues a run from a checkpoint written by [`train`]. `max_epochs`
/// optionally extends the epoch budget; a finished or early-stopped run is
/// reopened when the budget grows.
pub fn resume(
    checkpoint: &Path,
    bundle: &Bundle,
    graph: &GlobalGraph,
    out_dir: &Path,
    max_epochs: Option<usize>,
    progress: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let mut cfg = ckpt.config.clone();
    if let Some(m) = max_epochs {
        cfg.max_epochs = m;
    }
    cfg.validate()?;
    let hash = check_inputs(&cfg, bundle, graph)?;
    if ckpt.vocab != bundle.vocab.ids() || ckpt.corpus_hash != hash {
        return Err(Error::Mismatch("checkpoint was trained on a different bundle".into()));
    }
    let mut progress_state = ckpt.progress;
    if max_epochs.is_some() {
        progress_state.stopped = false;
    }
    Run {
        cache: NeighborCache::build(graph, cfg.max_neighbors, cfg.seed),
        cfg,
        bundle,
        corpus_hash: hash,
        out_dir,
        params: ckpt.params,
        adam: ckpt.adam,
        progress: progress_state,
    }
    .run(progress)
}
