//! Representation learning with the margin objective.
//!
//! Every step runs message passing over the whole training graph; the batch
//! only selects which positive edges contribute to the loss.

use alloc::boxed::Box;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, NegativeSampler};
use crate::layers::{personalize_rows, EmbeddingTable, MessageGraph};
use crate::model::{encode_nodes, ModelConfig, ModelParams};
use crate::objectives::{margin_pairs_on_tape, MarginConfig};
use crate::optim::{Adam, AdamConfig};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub objective: MarginConfig,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            objective: MarginConfig::default(),
            optimizer: AdamConfig::default(),
            batch_size: 512,
            max_epochs: 10,
            patience: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.objective.validate()?;
        let lr = self.optimizer.learning_rate;
        if self.batch_size == 0 || self.patience == 0 || !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "batch size and patience must be positive and the learning rate finite: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub step_loss: Vec<f64>,
    pub epoch_train_loss: Vec<f64>,
    /// Held-out margin loss per epoch; empty without validation edges.
    pub epoch_val_loss: Vec<f64>,
    /// Epoch whose parameters were kept, `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    /// Filled in by callers that can read a clock.
    pub wall_time_secs: f64,
}

/// A run that stopped on a non-finite loss. Carries the last parameters whose
/// loss was finite.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("training diverged at step {step}: {cause}")]
pub struct Diverged {
    pub step: usize,
    pub cause: Error,
    pub params: Box<ModelParams>,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Invalid(#[from] Error),
    #[error(transparent)]
    Diverged(Box<Diverged>),
}

/// One scored edge set: positives with their sampled negatives.
struct Batch {
    customers: Arc<[usize]>,
    /// Stacked row of each positive skill.
    skills: Arc<[usize]>,
    /// Local edge index, selects the utterance feature.
    edges: Arc<[usize]>,
    negatives: Arc<[usize]>,
    owner: Arc<[usize]>,
}

impl Batch {
    fn draw(
        g: &BipartiteGraph,
        locals: &[usize],
        sampler: &NegativeSampler,
        k: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<Batch>> {
        let nu = g.n_customers();
        let (mut customers, mut skills, mut edges, mut negatives, mut owner) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for &l in locals {
            let e = g.edges()[l];
            let take = k.min(sampler.available(e.customer));
            if take == 0 {
                continue;
            }
            let slot = customers.len();
            customers.push(e.customer);
            skills.push(nu + e.skill);
            edges.push(l);
            for s in sampler.sample(e.customer, take, rng)? {
                negatives.push(nu + s);
                owner.push(slot);
            }
        }
        if customers.is_empty() {
            return Ok(None);
        }
        Ok(Some(Batch {
            customers: customers.into(),
            skills: skills.into(),
            edges: edges.into(),
            negatives: negatives.into(),
            owner: owner.into(),
        }))
    }
}

/// Margin loss of `batch` given stacked node embeddings `h` and the edge
/// features `e` that `batch.edges` indexes into.
fn batch_loss(tape: &mut Tape, p: &ModelParams<Var>, h: Var, e: Var, batch: &Batch, margin: f64) -> Result<Var> {
    let mut hu = tape.gather_rows(h, batch.customers.clone())?;
    if let Some(per) = &p.personalizer {
        let eb = tape.gather_rows(e, batch.edges.clone())?;
        hu = personalize_rows(tape, per, hu, eb)?;
    }
    let hs = tape.gather_rows(h, batch.skills.clone())?;
    let pos = tape.row_dot(hu, hs)?;
    let hu_rep = tape.gather_rows(hu, batch.owner.clone())?;
    let hn = tape.gather_rows(h, batch.negatives.clone())?;
    let neg = tape.row_dot(hu_rep, hn)?;
    margin_pairs_on_tape(tape, pos, neg, batch.owner.clone(), margin)
}

struct Trainer<'a> {
    cfg: TrainConfig,
    graph: &'a BipartiteGraph,
    mg: MessageGraph,
}

impl Trainer<'_> {
    /// Loss and gradients for one batch.
    fn step(&self, params: &ModelParams, batch: &Batch) -> Result<(f64, Vec<Tensor>)> {
        let mut tape = Tape::new();
        let bound = self.mg.bind(&mut tape);
        let p = params.map(&mut |t| tape.param(t.clone()));
        let xc = tape.constant(self.graph.features().customer.clone());
        let xs = tape.constant(self.graph.features().skill.clone());
        let h = encode_nodes(&mut tape, &p, &bound, xc, xs)?;
        let loss = batch_loss(&mut tape, &p, h, bound.edge_features, batch, self.cfg.objective.margin)?;
        let grads = tape.backward(loss)?;
        let g = p.tensors().into_iter().map(|&v| grads.get_or_zeros(&tape, v)).collect();
        Ok((tape.scalar(loss), g))
    }

    /// Margin loss of held-out edges scored with embeddings from the
    /// training graph.
    fn held_out_loss(&self, params: &ModelParams, held: &BipartiteGraph, batch: &Batch) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.mg.bind(&mut tape);
        let p = params.map(&mut |t| tape.constant(t.clone()));
        let xc = tape.constant(self.graph.features().customer.clone());
        let xs = tape.constant(self.graph.features().skill.clone());
        let h = encode_nodes(&mut tape, &p, &bound, xc, xs)?;
        let e = tape.constant(held.edge_features().clone());
        let loss = batch_loss(&mut tape, &p, h, e, batch, self.cfg.objective.margin)?;
        Ok(tape.scalar(loss))
    }
}

/// Trains on `g_train` alone; early stopping watches the epoch training loss.
pub fn train_representation(cfg: &TrainConfig, g_train: &BipartiteGraph) -> Result<(ModelParams, TrainHistory), TrainError> {
    train_with_validation(cfg, g_train, None)
}

/// Trains on `g_train`, early-stopping on the margin loss of `g_val`'s edges
/// when given. Negatives never include a positive of either graph. The
/// returned parameters are those of the best epoch.
pub fn train_with_validation(
    cfg: &TrainConfig,
    g_train: &BipartiteGraph,
    g_val: Option<&BipartiteGraph>,
) -> Result<(ModelParams, TrainHistory), TrainError> {
    cfg.validate()?;
    if g_train.n_edges() == 0 {
        return Err(Error::InvalidArgument("training graph has no edges".into()).into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let f = g_train.features();
    let mut params = ModelParams::init(cfg.model, f.customer.cols(), f.skill.cols(), g_train.edge_dim(), &mut rng)?;
    let mut history = TrainHistory::default();
    if cfg.max_epochs == 0 {
        return Ok((params, history));
    }

    let graphs: Vec<&BipartiteGraph> = core::iter::once(g_train).chain(g_val).collect();
    let sampler = NegativeSampler::new(&graphs)?;
    let k = cfg.objective.negatives;
    let trainer = Trainer { cfg: *cfg, graph: g_train, mg: MessageGraph::new(g_train) };
    let val = match g_val {
        Some(v) if v.n_edges() > 0 => {
            let mut vrng = ChaCha8Rng::seed_from_u64(cfg.seed ^ VALIDATION_STREAM);
            let all: Vec<usize> = (0..v.n_edges()).collect();
            Batch::draw(v, &all, &sampler, k, &mut vrng)?.map(|b| (v, b))
        }
        _ => None,
    };

    let mut adam = Adam::new(cfg.optimizer);
    let mut order: Vec<usize> = (0..g_train.n_edges()).collect();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut stale = 0;
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let Some(batch) = Batch::draw(g_train, chunk, &sampler, k, &mut rng)? else { continue };
            let step = history.step_loss.len();
            let (loss, grads) = match trainer.step(&params, &batch) {
                Ok(r) if r.0.is_finite() => r,
                Ok(_) => return Err(diverged(step, Error::NonFinite { op: "margin_loss" }, params, history)),
                Err(e @ Error::NonFinite { .. }) => return Err(diverged(step, e, params, history)),
                Err(e) => return Err(e.into()),
            };
            let before = params.clone();
            adam.step(&mut params.tensors_mut(), &grads)?;
            if params.tensors().iter().any(|t| t.data().iter().any(|x| !x.is_finite())) {
                return Err(diverged(step, Error::NonFinite { op: "adam" }, before, history));
            }
            history.step_loss.push(loss);
            sum += loss;
            count += 1;
        }
        let train_loss = if count > 0 { sum / count as f64 } else { 0.0 };
        history.epoch_train_loss.push(train_loss);
        let monitored = match &val {
            Some((v, b)) => {
                let l = trainer.held_out_loss(&params, v, b)?;
                history.epoch_val_loss.push(l);
                l
            }
            None => train_loss,
        };
        if best.as_ref().is_none_or(|(b, _)| monitored < *b) {
            best = Some((monitored, params.clone()));
            history.best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    let params = best.map(|(_, p)| p).unwrap_or(params);
    Ok((params, history))
}

/// Validation negatives come from their own stream so they stay fixed
/// across epochs.
const VALIDATION_STREAM: u64 = 0x5eed_7a11_da7e;

fn diverged(step: usize, cause: Error, params: ModelParams, history: TrainHistory) -> TrainError {
    TrainError::Diverged(Box::new(Diverged { step, cause, params: Box::new(params), history }))
}

/// Everything the downstream task reads from a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportedEmbeddings {
    /// `|U| × d_u`
    pub customer: Tensor,
    /// `|S| × d_s`
    pub skill: Tensor,
    /// Personalized customer embedding per interaction row, `|E| × d_u`.
    pub personalized: Option<Tensor>,
}

impl ExportedEmbeddings {
    pub fn from_table(table: EmbeddingTable, personalized: Option<Tensor>) -> Self {
        ExportedEmbeddings { customer: table.customer, skill: table.skill, personalized }
    }

    pub fn n_nodes(&self) -> usize {
        self.customer.rows() + self.skill.rows()
    }
}

/// `h^L` for every node of `g`, plus personalized rows for each of `g`'s
/// edges when the model has a personalizer.
pub fn export_embeddings(params: &ModelParams, g: &BipartiteGraph) -> Result<ExportedEmbeddings> {
    export_for_rows(params, g, g)
}

/// Like [`export_embeddings`], but message passing runs on `g_msg` while the
/// personalized rows follow the edges of `rows`.
pub fn export_for_rows(params: &ModelParams, g_msg: &BipartiteGraph, rows: &BipartiteGraph) -> Result<ExportedEmbeddings> {
    let table = params.node_embeddings(g_msg)?;
    let personalized = params.personalized(&table, rows)?;
    Ok(ExportedEmbeddings::from_table(table, personalized))
}
