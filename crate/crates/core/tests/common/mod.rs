//! Random instances and naive term-by-term reference implementations.
#![allow(dead_code)]

use pdrfe_core::graph::{BipartiteGraph, EdgeInput, NodeFeatures};
use pdrfe_core::layers::{EdgeAttnParams, EmbeddingTable, NnConvParams, PersonalizerParams, RgcnParams};
use pdrfe_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Random edges with uniform features in `[-1, 1)`.
pub fn random_edges(rng: &mut impl Rng, n_c: usize, n_s: usize, m: usize, d_e: usize) -> Vec<EdgeInput> {
    (0..m)
        .map(|_| EdgeInput {
            customer: rng.random_range(0..n_c),
            skill: rng.random_range(0..n_s),
            feature: (0..d_e).map(|_| rng.random_range(-1.0..1.0)).collect(),
            defect: rng.random_range(0..2),
        })
        .collect()
}

pub fn graph_from(n_c: usize, n_s: usize, edges: &[EdgeInput], d_e: usize) -> BipartiteGraph {
    let features = NodeFeatures { customer: Tensor::zeros(&[n_c, 1]), skill: Tensor::zeros(&[n_s, 1]) };
    BipartiteGraph::from_edges(n_c, n_s, edges, d_e, features).unwrap()
}

pub fn random_graph(rng: &mut impl Rng, n_c: usize, n_s: usize, m: usize, d_e: usize) -> BipartiteGraph {
    let edges = random_edges(rng, n_c, n_s, m, d_e);
    graph_from(n_c, n_s, &edges, d_e)
}

pub fn random_table(rng: &mut impl Rng, n_c: usize, n_s: usize, d: usize) -> EmbeddingTable {
    EmbeddingTable::new(uniform(rng, &[n_c, d], 1.0), uniform(rng, &[n_s, d], 1.0), 0).unwrap()
}

/// Small random instance: `(graph, table)` with four to ten nodes.
pub fn small_instance(rng: &mut impl Rng, d: usize, d_e: usize) -> (BipartiteGraph, EmbeddingTable) {
    let n_c = rng.random_range(2..=5);
    let n_s = rng.random_range(2..=5);
    let m = rng.random_range(0..=12);
    let g = random_graph(rng, n_c, n_s, m, d_e);
    let h = random_table(rng, n_c, n_s, d);
    (g, h)
}

pub type Vector = Vec<f64>;

pub fn rows(t: &Tensor) -> Vec<Vector> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn mat_vec(w: &Tensor, x: &[f64]) -> Vector {
    let (r, c) = (w.rows(), w.cols());
    assert_eq!(c, x.len());
    (0..r).map(|i| (0..c).map(|j| w.data()[i * c + j] * x[j]).sum()).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn scale(a: &[f64], s: f64) -> Vector {
    a.iter().map(|x| x * s).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn concat(a: &[f64], b: &[f64]) -> Vector {
    a.iter().chain(b).copied().collect()
}

/// Incoming `(edge, sender row, relation)` for every stacked node row.
/// Relation 0 carries customers into skills, relation 1 skills into customers.
pub fn incoming(g: &BipartiteGraph) -> Vec<Vec<(usize, usize, usize)>> {
    let nu = g.n_customers();
    let mut inc = vec![Vec::new(); g.n_nodes()];
    for (k, e) in g.edges().iter().enumerate() {
        inc[nu + e.skill].push((k, e.customer, 0));
        inc[e.customer].push((k, nu + e.skill, 1));
    }
    inc
}

pub fn stacked(h: &EmbeddingTable) -> Vec<Vector> {
    let mut out = rows(&h.customer);
    out.extend(rows(&h.skill));
    out
}

/// `h_i + mean_j reshape(W_e e_ij + b_e) h_j`, the matrix built entry by entry.
pub fn naive_nnconv(p: &NnConvParams, g: &BipartiteGraph, h: &EmbeddingTable) -> Vec<Vector> {
    let x = stacked(h);
    let d = h.dim();
    incoming(g)
        .iter()
        .enumerate()
        .map(|(i, inc)| {
            if inc.is_empty() {
                return x[i].clone();
            }
            let mut acc = vec![0.0; d];
            for &(k, j, r) in inc {
                let rel = &p.relations[r];
                let flat = add(&mat_vec(&rel.w_e, g.edge_feature(k)), rel.b_e.data());
                for a in 0..d {
                    for b in 0..d {
                        acc[a] += flat[a * d + b] * x[j][b];
                    }
                }
            }
            add(&x[i], &scale(&acc, 1.0 / inc.len() as f64))
        })
        .collect()
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Attention weights per edge and relation, evaluating
/// `LeakyReLU(aᵀ[W_a[h_i ‖ e] ‖ W_a[h_j ‖ e]])` with explicit concatenations.
pub fn naive_attention_weights(p: &EdgeAttnParams, g: &BipartiteGraph, h: &EmbeddingTable) -> Vec<Vec<(usize, f64)>> {
    let x = stacked(h);
    incoming(g)
        .iter()
        .enumerate()
        .map(|(i, inc)| {
            let k: Vec<f64> = inc
                .iter()
                .map(|&(e, j, r)| {
                    let rel = &p.relations[r];
                    let zi = mat_vec(&rel.w_a, &concat(&x[i], g.edge_feature(e)));
                    let zj = mat_vec(&rel.w_a, &concat(&x[j], g.edge_feature(e)));
                    leaky(dot(rel.a.data(), &concat(&zi, &zj)), p.slope)
                })
                .collect();
            let max = k.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = k.iter().map(|v| (v - max).exp()).sum();
            inc.iter().zip(&k).map(|(&(e, _, _), v)| (e, (v - max).exp() / z)).collect()
        })
        .collect()
}

pub fn naive_attention(p: &EdgeAttnParams, g: &BipartiteGraph, h: &EmbeddingTable) -> Vec<Vector> {
    let x = stacked(h);
    let weights = naive_attention_weights(p, g, h);
    incoming(g)
        .iter()
        .enumerate()
        .map(|(i, inc)| {
            if inc.is_empty() {
                return x[i].clone();
            }
            let mut acc = vec![0.0; h.dim()];
            for (&(_, j, r), &(_, alpha)) in inc.iter().zip(&weights[i]) {
                acc = add(&acc, &scale(&mat_vec(&p.relations[r].w, &x[j]), alpha));
            }
            acc
        })
        .collect()
}

pub fn naive_rgcn(p: &RgcnParams, g: &BipartiteGraph, h: &EmbeddingTable) -> Vec<Vector> {
    let x = stacked(h);
    let d = h.dim();
    incoming(g)
        .iter()
        .enumerate()
        .map(|(i, inc)| {
            let mut pre = mat_vec(&p.w_self, &x[i]);
            for r in 0..2 {
                let js: Vec<usize> = inc.iter().filter(|t| t.2 == r).map(|t| t.1).collect();
                if js.is_empty() {
                    continue;
                }
                let mut acc = vec![0.0; d];
                for &j in &js {
                    acc = add(&acc, &mat_vec(&p.relations[r], &x[j]));
                }
                pre = add(&pre, &scale(&acc, 1.0 / js.len() as f64));
            }
            pre.iter().map(|v| v.max(0.0)).collect()
        })
        .collect()
}

pub fn naive_personalize(p: &PersonalizerParams, h_u: &[f64], e: &[f64]) -> Vector {
    let z: Vector = add(&mat_vec(&p.w1, &concat(h_u, e)), p.b1.data()).iter().map(|v| v.max(0.0)).collect();
    add(&mat_vec(&p.w2, &z), p.b2.data())
}

pub fn max_diff(a: &[Vector], t: &EmbeddingTable) -> f64 {
    let b = stacked(t);
    assert_eq!(a.len(), b.len());
    a.iter().zip(&b).flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs())).fold(0.0, f64::max)
}
