//! Relational GCN baseline: `h_i' = ReLU(W_0 h_i + Σ_r mean_{j∈N_r(i)} W_r h_j)`.
//! Edge features are ignored.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_matrix, run_single, xavier_uniform, BoundGraph, EmbeddingTable, RELATIONS};
use crate::error::Result;
use crate::graph::BipartiteGraph;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RgcnParams<T = Tensor> {
    /// One `d×d` weight per relation.
    pub relations: [T; 2],
    pub w_self: T,
}

impl<T> RgcnParams<T> {
    pub fn tensors(&self) -> Vec<&T> {
        alloc::vec![&self.relations[0], &self.relations[1], &self.w_self]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        let [a, b] = &mut self.relations;
        alloc::vec![a, b, &mut self.w_self]
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> RgcnParams<U> {
        let a = f(&self.relations[0]);
        let b = f(&self.relations[1]);
        RgcnParams { relations: [a, b], w_self: f(&self.w_self) }
    }
}

impl RgcnParams {
    pub fn init(d: usize, rng: &mut impl Rng) -> Self {
        let a = xavier_uniform(d, d, rng);
        let b = xavier_uniform(d, d, rng);
        RgcnParams { relations: [a, b], w_self: xavier_uniform(d, d, rng) }
    }

    pub(crate) fn check(&self, d: usize) -> Result<()> {
        for w in self.tensors() {
            check_matrix("rgcn", w, d, d, "W")?;
        }
        Ok(())
    }
}

pub fn rgcn_layer(tape: &mut Tape, p: &RgcnParams<Var>, g: &BoundGraph, h: Var) -> Result<Var> {
    let n = g.graph.n_nodes();
    let mut pre = tape.matmul_t(h, p.w_self)?;
    for (r, w) in RELATIONS.iter().zip(&p.relations) {
        let idx = g.graph.relation(*r);
        let wh = tape.matmul_t(h, *w)?;
        let msg = tape.gather_rows(wh, idx.src.clone())?;
        let agg = tape.segment_mean(msg, idx.dst.clone(), n)?;
        pre = tape.add(pre, agg)?;
    }
    tape.relu(pre)
}

pub fn rgcn_forward(params: &RgcnParams, g: &BipartiteGraph, h: &EmbeddingTable) -> Result<EmbeddingTable> {
    params.check(h.dim())?;
    run_single(g, h, |t| params.map(&mut |x| t.constant(x.clone())), rgcn_layer)
}
