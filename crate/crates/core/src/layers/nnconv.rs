//! Edge-conditioned convolution.
//!
//! `h_i' = h_i + mean_{j∈N(i)} reshape(W_e·e_ij + b_e, d×d) · h_j`
//!
//! The edge network output is reshaped row-major, so entry `(a, b)` of the
//! edge matrix is row `a·d + b` of `W_e·e + b_e`. Nodes without neighbors keep
//! their embedding.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_len, check_matrix, run_single, xavier_uniform, BoundGraph, EmbeddingTable, RELATIONS};
use crate::error::Result;
use crate::graph::BipartiteGraph;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnConvRelation<T = Tensor> {
    /// `(d·d) × d_e`
    pub w_e: T,
    /// `d·d`
    pub b_e: T,
}

/// One [`NnConvRelation`] per message direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnConvParams<T = Tensor> {
    pub relations: [NnConvRelation<T>; 2],
}

impl<T> NnConvParams<T> {
    pub fn tensors(&self) -> Vec<&T> {
        self.relations.iter().flat_map(|r| [&r.w_e, &r.b_e]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        self.relations.iter_mut().flat_map(|r| [&mut r.w_e, &mut r.b_e]).collect()
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> NnConvParams<U> {
        let [a, b] = &self.relations;
        NnConvParams {
            relations: [
                NnConvRelation { w_e: f(&a.w_e), b_e: f(&a.b_e) },
                NnConvRelation { w_e: f(&b.w_e), b_e: f(&b.b_e) },
            ],
        }
    }
}

impl NnConvParams {
    pub fn init(d: usize, d_e: usize, rng: &mut impl Rng) -> Self {
        let mut rel = || NnConvRelation { w_e: xavier_uniform(d * d, d_e, rng), b_e: Tensor::zeros(&[d * d]) };
        NnConvParams { relations: [rel(), rel()] }
    }

    /// Every edge maps to the same `d×d` matrix `m`, whatever its feature.
    pub fn constant_map(m: &Tensor, d_e: usize) -> Result<Self> {
        let d = m.rows();
        check_matrix("nnconv", m, d, d, "edge matrix")?;
        let rel = NnConvRelation { w_e: Tensor::zeros(&[d * d, d_e]), b_e: m.clone().reshape(alloc::vec![d * d])? };
        Ok(NnConvParams { relations: [rel.clone(), rel] })
    }

    pub(crate) fn check(&self, d: usize, d_e: usize) -> Result<()> {
        for r in &self.relations {
            check_matrix("nnconv", &r.w_e, d * d, d_e, "W_e")?;
            check_len("nnconv", &r.b_e, d * d, "b_e")?;
        }
        Ok(())
    }
}

/// One NNConv layer on a tape; `h` is the stacked `n×d` node matrix.
pub fn nnconv_layer(tape: &mut Tape, p: &NnConvParams<Var>, g: &BoundGraph, h: Var) -> Result<Var> {
    let n = g.graph.n_nodes();
    let mut out = h;
    for (r, rel) in RELATIONS.iter().zip(&p.relations) {
        let idx = g.graph.relation(*r);
        let msg = tape.edge_conditioned(rel.w_e, rel.b_e, h, g.edge_features, idx.src.clone())?;
        let agg = tape.segment_mean(msg, idx.dst.clone(), n)?;
        out = tape.add(out, agg)?;
    }
    Ok(out)
}

pub fn nnconv_forward(params: &NnConvParams, g: &BipartiteGraph, h: &EmbeddingTable) -> Result<EmbeddingTable> {
    params.check(h.dim(), g.edge_dim())?;
    run_single(g, h, |t| params.map(&mut |x| t.constant(x.clone())), nnconv_layer)
}
