//! Message-passing layers over a [`BipartiteGraph`].
//!
//! Customers and skills share one node space on the tape: rows `0..|U|` are
//! customers and rows `|U|..|U|+|S|` are skills. Each undirected interaction
//! carries a message in both directions, one per [`Relation`], and every layer
//! keeps a separate parameter set per relation.

mod attention;
mod nnconv;
mod personalizer;
mod rgcn;

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use attention::{attention_layer, edge_attention_forward, edge_attention_weights, EdgeAttnParams, EdgeAttnRelation};
pub use nnconv::{nnconv_forward, nnconv_layer, NnConvParams, NnConvRelation};
pub use personalizer::{personalize, personalize_rows, PersonalizerParams};
pub use rgcn::{rgcn_forward, rgcn_layer, RgcnParams};

use crate::error::{shape_err, Error, Result};
use crate::graph::{BipartiteGraph, NodeKind};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Message direction. Index `0` carries customer embeddings into skills,
/// index `1` skill embeddings into customers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    CustomerToSkill = 0,
    SkillToCustomer = 1,
}

/// Per-node embeddings at one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub customer: Tensor,
    pub skill: Tensor,
    pub layer: usize,
}

impl EmbeddingTable {
    pub fn new(customer: Tensor, skill: Tensor, layer: usize) -> Result<Self> {
        let (_, dc) = customer.dims2()?;
        let (_, ds) = skill.dims2()?;
        if dc != ds {
            return Err(shape_err("embedding_table", format!("customer dim {dc} vs skill dim {ds}")));
        }
        Ok(EmbeddingTable { customer, skill, layer })
    }

    pub fn dim(&self) -> usize {
        self.customer.cols()
    }

    /// Customers stacked above skills.
    pub fn stacked(&self) -> Tensor {
        let mut data = self.customer.data().to_vec();
        data.extend_from_slice(self.skill.data());
        Tensor::from_parts(alloc::vec![self.customer.rows() + self.skill.rows(), self.dim()], data)
    }

    pub fn from_stacked(t: &Tensor, n_customers: usize, layer: usize) -> Result<Self> {
        let (n, d) = t.dims2()?;
        if n_customers > n {
            return Err(shape_err("embedding_table", format!("{n_customers} customers in {n} rows")));
        }
        let (c, s) = t.data().split_at(n_customers * d);
        Ok(EmbeddingTable {
            customer: Tensor::from_parts(alloc::vec![n_customers, d], c.to_vec()),
            skill: Tensor::from_parts(alloc::vec![n - n_customers, d], s.to_vec()),
            layer,
        })
    }

    pub fn row(&self, kind: NodeKind, index: usize) -> &[f64] {
        match kind {
            NodeKind::Customer => self.customer.row(index),
            NodeKind::Skill => self.skill.row(index),
        }
    }

    pub(crate) fn check_against(&self, g: &MessageGraph) -> Result<()> {
        if self.customer.rows() != g.n_customers || self.skill.rows() != g.n_skills {
            return Err(shape_err(
                "embedding_table",
                format!(
                    "{}/{} rows for a graph with {}/{} customers/skills",
                    self.customer.rows(),
                    self.skill.rows(),
                    g.n_customers,
                    g.n_skills
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct RelationIndex {
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
}

/// Message-passing indices derived from a graph, built once and reused by
/// every tape.
#[derive(Debug, Clone)]
pub struct MessageGraph {
    n_customers: usize,
    n_skills: usize,
    relations: [RelationIndex; 2],
    edge_features: Tensor,
    isolated: Tensor,
}

impl MessageGraph {
    pub fn new(g: &BipartiteGraph) -> Self {
        let nu = g.n_customers();
        let customers: Arc<[usize]> = g.edges().iter().map(|e| e.customer).collect();
        let skills: Arc<[usize]> = g.edges().iter().map(|e| nu + e.skill).collect();
        let mut degree = alloc::vec![0usize; g.n_nodes()];
        for (&c, &s) in customers.iter().zip(skills.iter()) {
            degree[c] += 1;
            degree[s] += 1;
        }
        let isolated = degree.iter().map(|&d| if d == 0 { 1.0 } else { 0.0 }).collect();
        MessageGraph {
            n_customers: nu,
            n_skills: g.n_skills(),
            relations: [
                RelationIndex { src: customers.clone(), dst: skills.clone() },
                RelationIndex { src: skills, dst: customers },
            ],
            edge_features: g.edge_features().clone(),
            isolated: Tensor::from_parts(alloc::vec![g.n_nodes()], isolated),
        }
    }

    pub fn n_customers(&self) -> usize {
        self.n_customers
    }

    pub fn n_skills(&self) -> usize {
        self.n_skills
    }

    pub fn n_nodes(&self) -> usize {
        self.n_customers + self.n_skills
    }

    pub fn n_edges(&self) -> usize {
        self.edge_features.rows()
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_features.cols()
    }

    /// Registers the graph's constant tensors on `tape`.
    pub fn bind<'g>(&'g self, tape: &mut Tape) -> BoundGraph<'g> {
        BoundGraph {
            graph: self,
            edge_features: tape.constant(self.edge_features.clone()),
            isolated: tape.constant(self.isolated.clone()),
        }
    }

    pub(crate) fn relation(&self, r: Relation) -> &RelationIndex {
        &self.relations[r as usize]
    }
}

/// A [`MessageGraph`] whose constants live on a particular tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundGraph<'g> {
    pub graph: &'g MessageGraph,
    pub edge_features: Var,
    pub isolated: Var,
}

pub(crate) const RELATIONS: [Relation; 2] = [Relation::CustomerToSkill, Relation::SkillToCustomer];

pub(crate) fn check_matrix(op: &'static str, t: &Tensor, rows: usize, cols: usize, name: &str) -> Result<()> {
    match t.shape() {
        [r, c] if *r == rows && *c == cols => Ok(()),
        s => Err(shape_err(op, format!("{name} has shape {s:?}, expected [{rows}, {cols}]"))),
    }
}

pub(crate) fn check_len(op: &'static str, t: &Tensor, len: usize, name: &str) -> Result<()> {
    if t.len() == len {
        Ok(())
    } else {
        Err(shape_err(op, format!("{name} has {} entries, expected {len}", t.len())))
    }
}

/// Xavier/Glorot uniform init for a `rows×cols` weight (`fan_out = rows`,
/// `fan_in = cols`).
pub fn xavier_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = libm::sqrt(6.0 / (rows + cols) as f64);
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_parts(alloc::vec![rows, cols], data)
}

/// Which convolution a model stacks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Rgcn,
    #[serde(rename = "nnconv")]
    NnConv,
    #[serde(rename = "eattn")]
    EdgeAttention,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Rgcn => "rgcn",
            LayerKind::NnConv => "nnconv",
            LayerKind::EdgeAttention => "eattn",
        }
    }
}

impl core::str::FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgcn" => Ok(LayerKind::Rgcn),
            "nnconv" => Ok(LayerKind::NnConv),
            "eattn" => Ok(LayerKind::EdgeAttention),
            other => Err(Error::InvalidArgument(format!("unknown layer kind `{other}`"))),
        }
    }
}

/// Parameters of one convolution layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerParams<T = Tensor> {
    Rgcn(RgcnParams<T>),
    NnConv(NnConvParams<T>),
    EdgeAttention(EdgeAttnParams<T>),
}

impl<T> LayerParams<T> {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerParams::Rgcn(_) => LayerKind::Rgcn,
            LayerParams::NnConv(_) => LayerKind::NnConv,
            LayerParams::EdgeAttention(_) => LayerKind::EdgeAttention,
        }
    }

    pub fn tensors(&self) -> Vec<&T> {
        match self {
            LayerParams::Rgcn(p) => p.tensors(),
            LayerParams::NnConv(p) => p.tensors(),
            LayerParams::EdgeAttention(p) => p.tensors(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        match self {
            LayerParams::Rgcn(p) => p.tensors_mut(),
            LayerParams::NnConv(p) => p.tensors_mut(),
            LayerParams::EdgeAttention(p) => p.tensors_mut(),
        }
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> LayerParams<U> {
        match self {
            LayerParams::Rgcn(p) => LayerParams::Rgcn(p.map(f)),
            LayerParams::NnConv(p) => LayerParams::NnConv(p.map(f)),
            LayerParams::EdgeAttention(p) => LayerParams::EdgeAttention(p.map(f)),
        }
    }
}

impl LayerParams {
    /// Freshly initialized layer of `kind` for hidden width `d`, edge width
    /// `d_e` and attention width `d_a`.
    pub fn init(kind: LayerKind, d: usize, d_e: usize, d_a: usize, rng: &mut impl Rng) -> Self {
        match kind {
            LayerKind::Rgcn => LayerParams::Rgcn(RgcnParams::init(d, rng)),
            LayerKind::NnConv => LayerParams::NnConv(NnConvParams::init(d, d_e, rng)),
            LayerKind::EdgeAttention => LayerParams::EdgeAttention(EdgeAttnParams::init(d, d_e, d_a, rng)),
        }
    }
}

/// Applies one layer on a tape.
pub fn layer_on_tape(tape: &mut Tape, p: &LayerParams<Var>, g: &BoundGraph, h: Var) -> Result<Var> {
    match p {
        LayerParams::Rgcn(p) => rgcn_layer(tape, p, g, h),
        LayerParams::NnConv(p) => nnconv_layer(tape, p, g, h),
        LayerParams::EdgeAttention(p) => attention_layer(tape, p, g, h).map(|(h, _)| h),
    }
}

/// Runs `layers` in order starting from `h0` and returns the last table.
pub fn stack_forward(layers: &[LayerParams], g: &BipartiteGraph, h0: &EmbeddingTable) -> Result<EmbeddingTable> {
    if layers.is_empty() {
        return Err(Error::InvalidArgument("at least one layer is required".into()));
    }
    let mg = MessageGraph::new(g);
    h0.check_against(&mg)?;
    let mut tape = Tape::new();
    let bound = mg.bind(&mut tape);
    let mut h = tape.constant(h0.stacked());
    for p in layers {
        let p = p.map(&mut |t| tape.constant(t.clone()));
        h = layer_on_tape(&mut tape, &p, &bound, h)?;
    }
    EmbeddingTable::from_stacked(tape.value(h), mg.n_customers(), h0.layer + layers.len())
}

/// Shared driver for the single-layer public forwards.
pub(crate) fn run_single<P>(
    g: &BipartiteGraph,
    h: &EmbeddingTable,
    bind: impl FnOnce(&mut Tape) -> P,
    layer: impl FnOnce(&mut Tape, &P, &BoundGraph, Var) -> Result<Var>,
) -> Result<EmbeddingTable> {
    let mg = MessageGraph::new(g);
    h.check_against(&mg)?;
    let mut tape = Tape::new();
    let bound = mg.bind(&mut tape);
    let params = bind(&mut tape);
    let x = tape.constant(h.stacked());
    let out = layer(&mut tape, &params, &bound, x)?;
    EmbeddingTable::from_stacked(tape.value(out), mg.n_customers(), h.layer + 1)
}
