//! Edge-based attention.
//!
//! ```text
//! k_ij  = LeakyReLU(aᵀ [W_a[h_i ‖ e_ij] ‖ W_a[h_j ‖ e_ij]])
//! α_ij  = softmax over j ∈ N(i) of k_ij
//! h_i'  = Σ_j α_ij · W h_j
//! ```
//!
//! A single head. Nodes without neighbors keep their embedding, since the sum
//! is empty there.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_len, check_matrix, run_single, xavier_uniform, BoundGraph, EmbeddingTable, MessageGraph, RELATIONS};
use crate::error::{Error, Result};
use crate::graph::BipartiteGraph;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_SLOPE: f64 = 0.2;

/// Attention weights must sum to one per receiving node within this bound.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeAttnRelation<T = Tensor> {
    /// Message transform, `d × d`.
    pub w: T,
    /// Attention encoder over `[h ‖ e]`, `d_a × (d + d_e)`.
    pub w_a: T,
    /// Attention vector, `2·d_a`; the first half scores the receiving node.
    pub a: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeAttnParams<T = Tensor> {
    pub relations: [EdgeAttnRelation<T>; 2],
    pub slope: f64,
}

impl<T> EdgeAttnParams<T> {
    pub fn tensors(&self) -> Vec<&T> {
        self.relations.iter().flat_map(|r| [&r.w, &r.w_a, &r.a]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        self.relations.iter_mut().flat_map(|r| [&mut r.w, &mut r.w_a, &mut r.a]).collect()
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> EdgeAttnParams<U> {
        let mut rel = |r: &EdgeAttnRelation<T>| EdgeAttnRelation { w: f(&r.w), w_a: f(&r.w_a), a: f(&r.a) };
        let first = rel(&self.relations[0]);
        let second = rel(&self.relations[1]);
        EdgeAttnParams { relations: [first, second], slope: self.slope }
    }
}

impl EdgeAttnParams {
    pub fn init(d: usize, d_e: usize, d_a: usize, rng: &mut impl Rng) -> Self {
        let mut rel = || EdgeAttnRelation {
            w: xavier_uniform(d, d, rng),
            w_a: xavier_uniform(d_a, d + d_e, rng),
            a: xavier_uniform(1, 2 * d_a, rng).reshape(alloc::vec![2 * d_a]).expect("same length"),
        };
        EdgeAttnParams { relations: [rel(), rel()], slope: DEFAULT_SLOPE }
    }

    pub fn attention_dim(&self) -> usize {
        self.relations[0].w_a.rows()
    }

    pub(crate) fn check(&self, d: usize, d_e: usize) -> Result<()> {
        let d_a = self.attention_dim();
        for r in &self.relations {
            check_matrix("edge_attention", &r.w, d, d, "W")?;
            check_matrix("edge_attention", &r.w_a, d_a, d + d_e, "W_a")?;
            check_len("edge_attention", &r.a, 2 * d_a, "a")?;
        }
        if !(0.0..1.0).contains(&self.slope) {
            return Err(Error::InvalidArgument(format!("leaky slope {} outside [0, 1)", self.slope)));
        }
        Ok(())
    }
}

/// One attention layer on a tape. Returns the new node matrix and the
/// attention weights of each relation (one per edge, `m×1`).
pub fn attention_layer(tape: &mut Tape, p: &EdgeAttnParams<Var>, g: &BoundGraph, h: Var) -> Result<(Var, [Var; 2])> {
    let n = g.graph.n_nodes();
    let d = tape.value(h).cols();
    let d_e = g.graph.edge_dim();
    let mut out = tape.row_scale(h, g.isolated)?;
    let mut alphas = [out; 2];
    let ones = tape.constant(Tensor::from_parts(alloc::vec![1, 2], alloc::vec![1.0, 1.0]));
    for (slot, (r, rel)) in RELATIONS.iter().zip(&p.relations).enumerate() {
        let idx = g.graph.relation(*r);
        let d_a = tape.value(rel.w_a).rows();
        // aᵀ[W_a[h_i ‖ e] ‖ W_a[h_j ‖ e]] is linear in (h_i, h_j, e): with
        // V = [a₁; a₂]·W_a it equals V₁ₕ·h_i + V₂ₕ·h_j + (V₁ₑ + V₂ₑ)·e.
        let a = tape.reshape(rel.a, alloc::vec![2, d_a])?;
        let v = tape.matmul(a, rel.w_a)?;
        let v_node = tape.slice_cols(v, 0, d)?;
        let v_edge = tape.slice_cols(v, d, d + d_e)?;
        let v_edge = tape.matmul(ones, v_edge)?;
        let node_scores = tape.matmul_t(h, v_node)?;
        let recv = tape.slice_cols(node_scores, 0, 1)?;
        let send = tape.slice_cols(node_scores, 1, 2)?;
        let recv = tape.gather_rows(recv, idx.dst.clone())?;
        let send = tape.gather_rows(send, idx.src.clone())?;
        let edge_scores = tape.matmul_t(g.edge_features, v_edge)?;
        let score = tape.add(recv, send)?;
        let score = tape.add(score, edge_scores)?;
        let k = tape.leaky_relu(score, p.slope)?;
        let alpha = tape.segment_softmax(k, idx.dst.clone())?;
        check_normalized(tape.value(alpha).data(), &idx.dst, n)?;

        let wh = tape.matmul_t(h, rel.w)?;
        let msg = tape.gather_rows(wh, idx.src.clone())?;
        let msg = tape.row_scale(msg, alpha)?;
        let agg = tape.segment_sum(msg, idx.dst.clone(), n)?;
        out = tape.add(out, agg)?;
        alphas[slot] = alpha;
    }
    Ok((out, alphas))
}

fn check_normalized(alpha: &[f64], dst: &[usize], n: usize) -> Result<()> {
    let mut total = alloc::vec![0.0; n];
    let mut seen = alloc::vec![false; n];
    for (&a, &i) in alpha.iter().zip(dst) {
        total[i] += a;
        seen[i] = true;
    }
    match (0..n).find(|&i| seen[i] && (total[i] - 1.0).abs() > NORMALIZATION_TOLERANCE) {
        Some(i) => Err(Error::Invariant(format!("attention weights at node {i} sum to {}", total[i]))),
        None => Ok(()),
    }
}

pub fn edge_attention_forward(params: &EdgeAttnParams, g: &BipartiteGraph, h: &EmbeddingTable) -> Result<EmbeddingTable> {
    params.check(h.dim(), g.edge_dim())?;
    run_single(g, h, |t| params.map(&mut |x| t.constant(x.clone())), |t, p, b, x| {
        attention_layer(t, p, b, x).map(|(out, _)| out)
    })
}

/// Attention weights per local edge: `[customer→skill, skill→customer]`.
/// The first list normalizes over each skill's edges, the second over each
/// customer's edges.
pub fn edge_attention_weights(params: &EdgeAttnParams, g: &BipartiteGraph, h: &EmbeddingTable) -> Result<[Vec<f64>; 2]> {
    params.check(h.dim(), g.edge_dim())?;
    let mg = MessageGraph::new(g);
    h.check_against(&mg)?;
    let mut tape = Tape::new();
    let bound = mg.bind(&mut tape);
    let p = params.map(&mut |x| tape.constant(x.clone()));
    let x = tape.constant(h.stacked());
    let (_, [a, b]) = attention_layer(&mut tape, &p, &bound, x)?;
    Ok([tape.value(a).data().to_vec(), tape.value(b).data().to_vec()])
}
