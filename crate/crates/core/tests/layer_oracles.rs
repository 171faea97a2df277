mod common;

use common::*;
use pdrfe_core::graph::EdgeInput;
use pdrfe_core::layers::{
    edge_attention_forward, edge_attention_weights, nnconv_forward, personalize, rgcn_forward, stack_forward,
    EdgeAttnParams, EdgeAttnRelation, EmbeddingTable, LayerParams, NnConvParams, NnConvRelation, PersonalizerParams,
    RgcnParams,
};
use pdrfe_core::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;

const INSTANCES: u64 = 60;
const TOL: f64 = 1e-10;

struct Instance {
    n_c: usize,
    n_s: usize,
    d: usize,
    d_e: usize,
    d_a: usize,
    edges: Vec<EdgeInput>,
    h: EmbeddingTable,
}

fn instance(seed: u64) -> Instance {
    let mut r = rng(seed);
    let (n_c, n_s) = (r.random_range(1..=6), r.random_range(1..=6));
    let (d, d_e, d_a) = (r.random_range(1..=8), r.random_range(1..=4), r.random_range(1..=4));
    let m = r.random_range(0..=25);
    let edges = random_edges(&mut r, n_c, n_s, m, d_e);
    let h = random_table(&mut r, n_c, n_s, d);
    Instance { n_c, n_s, d, d_e, d_a, edges, h }
}

fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::matrix(rows, cols, data.to_vec()).unwrap()
}

fn v(data: &[f64]) -> Tensor {
    Tensor::vector(data.to_vec()).unwrap()
}

fn table(customers: &[&[f64]], skills: &[&[f64]]) -> EmbeddingTable {
    let c: Vec<Vec<f64>> = customers.iter().map(|r| r.to_vec()).collect();
    let s: Vec<Vec<f64>> = skills.iter().map(|r| r.to_vec()).collect();
    EmbeddingTable::new(Tensor::from_rows(&c).unwrap(), Tensor::from_rows(&s).unwrap(), 0).unwrap()
}

fn edge(customer: usize, skill: usize, feature: &[f64]) -> EdgeInput {
    EdgeInput { customer, skill, feature: feature.to_vec(), defect: 0 }
}

fn random_nnconv(r: &mut impl Rng, d: usize, d_e: usize) -> NnConvParams {
    let mut p = NnConvParams::init(d, d_e, r);
    for rel in &mut p.relations {
        rel.b_e = uniform(r, &[d * d], 0.5);
    }
    p
}

#[test]
fn nnconv_matches_naive_oracle() {
    for seed in 0..INSTANCES {
        let inst = instance(seed);
        let mut r = rng(seed + 10_000);
        let g = graph_from(inst.n_c, inst.n_s, &inst.edges, inst.d_e);
        let p = random_nnconv(&mut r, inst.d, inst.d_e);
        let out = nnconv_forward(&p, &g, &inst.h).unwrap();
        let diff = max_diff(&naive_nnconv(&p, &g, &inst.h), &out);
        assert!(diff < TOL, "seed {seed}: {diff}");
        assert_eq!(out.layer, 1);
    }
}

#[test]
fn attention_matches_naive_oracle() {
    for seed in 0..INSTANCES {
        let inst = instance(seed);
        let mut r = rng(seed + 20_000);
        let g = graph_from(inst.n_c, inst.n_s, &inst.edges, inst.d_e);
        let p = EdgeAttnParams::init(inst.d, inst.d_e, inst.d_a, &mut r);
        let out = edge_attention_forward(&p, &g, &inst.h).unwrap();
        let diff = max_diff(&naive_attention(&p, &g, &inst.h), &out);
        assert!(diff < TOL, "seed {seed}: {diff}");

        // Weights per relation, indexed by local edge.
        let [to_skill, to_customer] = edge_attention_weights(&p, &g, &inst.h).unwrap();
        let naive = naive_attention_weights(&p, &g, &inst.h);
        let nu = inst.n_c;
        for (k, e) in g.edges().iter().enumerate() {
            let at_skill = naive[nu + e.skill].iter().find(|(x, _)| *x == k).unwrap().1;
            let at_customer = naive[e.customer].iter().find(|(x, _)| *x == k).unwrap().1;
            assert!((to_skill[k] - at_skill).abs() < TOL, "seed {seed} edge {k}");
            assert!((to_customer[k] - at_customer).abs() < TOL, "seed {seed} edge {k}");
        }
    }
}

#[test]
fn attention_weights_sum_to_one_per_node() {
    for seed in 0..INSTANCES {
        let inst = instance(seed);
        let mut r = rng(seed + 30_000);
        let g = graph_from(inst.n_c, inst.n_s, &inst.edges, inst.d_e);
        let mut p = EdgeAttnParams::init(inst.d, inst.d_e, inst.d_a, &mut r);
        // Large scores stress the max-shift.
        for rel in &mut p.relations {
            rel.a = uniform(&mut r, &[2 * inst.d_a], 30.0);
        }
        let [to_skill, to_customer] = edge_attention_weights(&p, &g, &inst.h).unwrap();
        let mut skill_sum = vec![0.0; inst.n_s];
        let mut customer_sum = vec![0.0; inst.n_c];
        for (k, e) in g.edges().iter().enumerate() {
            assert!(to_skill[k] > 0.0 && to_skill[k] <= 1.0);
            assert!(to_customer[k] > 0.0 && to_customer[k] <= 1.0);
            skill_sum[e.skill] += to_skill[k];
            customer_sum[e.customer] += to_customer[k];
        }
        for (s, total) in skill_sum.iter().enumerate() {
            if g.degree(pdrfe_core::graph::NodeId::skill(s)) > 0 {
                assert!((total - 1.0).abs() < 1e-9, "seed {seed} skill {s}: {total}");
            }
        }
        for (c, total) in customer_sum.iter().enumerate() {
            if g.degree(pdrfe_core::graph::NodeId::customer(c)) > 0 {
                assert!((total - 1.0).abs() < 1e-9, "seed {seed} customer {c}: {total}");
            }
        }
    }
}

#[test]
fn rgcn_matches_naive_oracle() {
    for seed in 0..INSTANCES {
        let inst = instance(seed);
        let mut r = rng(seed + 40_000);
        let g = graph_from(inst.n_c, inst.n_s, &inst.edges, inst.d_e);
        let p = RgcnParams::init(inst.d, &mut r);
        let out = rgcn_forward(&p, &g, &inst.h).unwrap();
        let diff = max_diff(&naive_rgcn(&p, &g, &inst.h), &out);
        assert!(diff < TOL, "seed {seed}: {diff}");
    }
}

#[test]
fn personalizer_is_a_plain_two_layer_mlp() {
    for seed in 0..INSTANCES {
        let mut r = rng(seed + 50_000);
        let (d, d_e, d_h) = (r.random_range(1..=8), r.random_range(1..=6), r.random_range(1..=8));
        let mut p = PersonalizerParams::init(d, d_e, d_h, &mut r);
        p.b1 = uniform(&mut r, &[d_h], 0.5);
        p.b2 = uniform(&mut r, &[d], 0.5);
        let h_u: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let e: Vec<f64> = (0..d_e).map(|_| r.random_range(-1.0..1.0)).collect();
        assert_eq!(personalize(&h_u, &e, &p).unwrap(), naive_personalize(&p, &h_u, &e), "seed {seed}");
    }
}

/// Edge storage order must not matter: mean and softmax are order-free.
#[test]
fn layers_are_invariant_to_edge_order() {
    for seed in 0..INSTANCES {
        let inst = instance(seed);
        let mut r = rng(seed + 60_000);
        let mut shuffled = inst.edges.clone();
        shuffled.shuffle(&mut r);
        let g = graph_from(inst.n_c, inst.n_s, &inst.edges, inst.d_e);
        let gs = graph_from(inst.n_c, inst.n_s, &shuffled, inst.d_e);
        let layers = [
            LayerParams::NnConv(random_nnconv(&mut r, inst.d, inst.d_e)),
            LayerParams::EdgeAttention(EdgeAttnParams::init(inst.d, inst.d_e, inst.d_a, &mut r)),
            LayerParams::Rgcn(RgcnParams::init(inst.d, &mut r)),
        ];
        for layer in &layers {
            let a = stack_forward(std::slice::from_ref(layer), &g, &inst.h).unwrap();
            let b = stack_forward(std::slice::from_ref(layer), &gs, &inst.h).unwrap();
            let diff = a.customer.max_abs_diff(&b.customer).max(a.skill.max_abs_diff(&b.skill));
            assert!(diff <= TOL, "seed {seed} {:?}: {diff}", layer.kind());
        }
    }
}

/// One layer reads only a node's own row and its direct neighbors.
#[test]
fn one_layer_is_local() {
    for seed in 0..INSTANCES {
        let inst = instance(seed);
        let mut r = rng(seed + 70_000);
        let g = graph_from(inst.n_c, inst.n_s, &inst.edges, inst.d_e);
        let inc = incoming(&g);
        let n = g.n_nodes();
        let i = r.random_range(0..n);
        let near: Vec<usize> = inc[i].iter().map(|t| t.1).chain([i]).collect();
        let far: Vec<usize> = (0..n).filter(|k| !near.contains(k)).collect();
        if far.is_empty() {
            continue;
        }
        let k = far[r.random_range(0..far.len())];
        let mut stacked = inst.h.stacked();
        for x in &mut stacked.data_mut()[k * inst.d..(k + 1) * inst.d] {
            *x += r.random_range(1.0..5.0);
        }
        let perturbed = EmbeddingTable::from_stacked(&stacked, inst.n_c, 0).unwrap();
        let layers = [
            LayerParams::NnConv(random_nnconv(&mut r, inst.d, inst.d_e)),
            LayerParams::EdgeAttention(EdgeAttnParams::init(inst.d, inst.d_e, inst.d_a, &mut r)),
            LayerParams::Rgcn(RgcnParams::init(inst.d, &mut r)),
        ];
        for layer in &layers {
            let a = stack_forward(std::slice::from_ref(layer), &g, &inst.h).unwrap().stacked();
            let b = stack_forward(std::slice::from_ref(layer), &g, &perturbed).unwrap().stacked();
            assert_eq!(a.row(i), b.row(i), "seed {seed} {:?}: node {i} moved when {k} changed", layer.kind());
        }
    }
}

#[test]
fn one_layer_stack_equals_single_call() {
    for seed in 0..10 {
        let inst = instance(seed);
        let mut r = rng(seed + 80_000);
        let g = graph_from(inst.n_c, inst.n_s, &inst.edges, inst.d_e);
        let nn = random_nnconv(&mut r, inst.d, inst.d_e);
        let at = EdgeAttnParams::init(inst.d, inst.d_e, inst.d_a, &mut r);
        let rg = RgcnParams::init(inst.d, &mut r);
        assert_eq!(stack_forward(&[LayerParams::NnConv(nn.clone())], &g, &inst.h).unwrap(), nnconv_forward(&nn, &g, &inst.h).unwrap());
        assert_eq!(
            stack_forward(&[LayerParams::EdgeAttention(at.clone())], &g, &inst.h).unwrap(),
            edge_attention_forward(&at, &g, &inst.h).unwrap()
        );
        assert_eq!(stack_forward(&[LayerParams::Rgcn(rg.clone())], &g, &inst.h).unwrap(), rgcn_forward(&rg, &g, &inst.h).unwrap());
    }
}

#[test]
fn two_nnconv_layers_on_a_path_compose() {
    let mut r = rng(7);
    // c0 - s0 - c1 - s1
    let edges = [edge(0, 0, &[0.3, -0.2]), edge(1, 0, &[0.9, 0.1]), edge(1, 1, &[-0.5, 0.4])];
    let g = graph_from(2, 2, &edges, 2);
    let h = random_table(&mut r, 2, 2, 3);
    let (p1, p2) = (random_nnconv(&mut r, 3, 2), random_nnconv(&mut r, 3, 2));
    let stacked = stack_forward(&[LayerParams::NnConv(p1.clone()), LayerParams::NnConv(p2.clone())], &g, &h).unwrap();
    let chained = nnconv_forward(&p2, &g, &nnconv_forward(&p1, &g, &h).unwrap()).unwrap();
    assert_eq!(stacked, chained);
    assert_eq!(stacked.layer, 2);
}

#[test]
fn two_attention_layers_match_chained_oracles() {
    for seed in 0..10 {
        let mut r = rng(seed + 90_000);
        let edges = random_edges(&mut r, 2, 2, 5, 3);
        let g = graph_from(2, 2, &edges, 3);
        let h = random_table(&mut r, 2, 2, 4);
        let (p1, p2) = (EdgeAttnParams::init(4, 3, 2, &mut r), EdgeAttnParams::init(4, 3, 2, &mut r));
        let out = stack_forward(&[LayerParams::EdgeAttention(p1.clone()), LayerParams::EdgeAttention(p2.clone())], &g, &h).unwrap();
        let mid = naive_attention(&p1, &g, &h);
        let mid_c: Vec<Vec<f64>> = mid[..2].to_vec();
        let mid_s: Vec<Vec<f64>> = mid[2..].to_vec();
        let mid = EmbeddingTable::new(Tensor::from_rows(&mid_c).unwrap(), Tensor::from_rows(&mid_s).unwrap(), 1).unwrap();
        let diff = max_diff(&naive_attention(&p2, &g, &mid), &out);
        assert!(diff < TOL, "seed {seed}: {diff}");
    }
}

mod nnconv_examples {
    use super::*;

    #[test]
    fn identity_edge_map_adds_neighbor_mean() {
        let mut r = rng(1);
        let edges = random_edges(&mut r, 3, 4, 9, 2);
        let g = graph_from(3, 4, &edges, 2);
        let h = random_table(&mut r, 3, 4, 3);
        let p = NnConvParams::constant_map(&Tensor::identity(3), 2).unwrap();
        let out = nnconv_forward(&p, &g, &h).unwrap();
        let x = stacked(&h);
        for (i, inc) in incoming(&g).iter().enumerate() {
            let mut want = x[i].clone();
            if !inc.is_empty() {
                let mut mean = vec![0.0; 3];
                for &(_, j, _) in inc {
                    mean = add(&mean, &x[j]);
                }
                want = add(&want, &scale(&mean, 1.0 / inc.len() as f64));
            }
            let got = out.stacked();
            for (a, b) in got.row(i).iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn isolated_node_keeps_its_embedding() {
        let g = graph_from(2, 1, &[edge(0, 0, &[1.0])], 1);
        let h = table(&[&[1.0, 2.0], &[-3.0, 0.5]], &[&[4.0, 4.0]]);
        let mut r = rng(2);
        let out = nnconv_forward(&random_nnconv(&mut r, 2, 1), &g, &h).unwrap();
        assert_eq!(out.customer.row(1), &[-3.0, 0.5]);
    }

    /// One customer joined to two skills; the expected rows are worked out by
    /// hand from the row-major reshape of `W_e e + b_e`.
    #[test]
    fn star_graph_by_hand() {
        let g = graph_from(1, 2, &[edge(0, 0, &[1.0, 0.0]), edge(0, 1, &[0.0, 1.0])], 2);
        let h = table(&[&[1.0, 2.0]], &[&[3.0, -1.0], &[0.0, 1.0]]);
        let p = NnConvParams {
            relations: [
                NnConvRelation { w_e: t(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0]), b_e: v(&[0.0; 4]) },
                NnConvRelation { w_e: t(4, 2, &[2.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0]), b_e: v(&[1.0, 0.0, 0.0, 1.0]) },
            ],
        };
        let out = nnconv_forward(&p, &g, &h).unwrap();
        // s0: [[1,0],[0,1]]·[1,2] = [1,2]; s1: [[0,1],[0,1]]·[1,2] = [2,2]
        // c0: mean([[3,0],[0,2]]·[3,-1], [[1,0],[1,1]]·[0,1]) = mean([9,-2], [0,1])
        assert_eq!(out.skill.data(), &[4.0, 1.0, 2.0, 3.0]);
        assert_eq!(out.customer.data(), &[5.5, 1.5]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let g = graph_from(1, 1, &[edge(0, 0, &[1.0, 0.0])], 2);
        let h = table(&[&[1.0, 2.0]], &[&[3.0, -1.0]]);
        let mut r = rng(3);
        assert!(nnconv_forward(&random_nnconv(&mut r, 3, 2), &g, &h).is_err());
        assert!(nnconv_forward(&random_nnconv(&mut r, 2, 3), &g, &h).is_err());
    }
}

mod attention_examples {
    use super::*;

    #[test]
    fn single_neighbor_takes_all_weight() {
        let mut r = rng(4);
        let g = graph_from(1, 1, &[edge(0, 0, &[0.2, -0.7])], 2);
        let h = random_table(&mut r, 1, 1, 3);
        let p = EdgeAttnParams::init(3, 2, 2, &mut r);
        let [a, b] = edge_attention_weights(&p, &g, &h).unwrap();
        assert_eq!((a[0], b[0]), (1.0, 1.0));
        let out = edge_attention_forward(&p, &g, &h).unwrap();
        let want_skill = mat_vec(&p.relations[0].w, h.customer.row(0));
        let want_customer = mat_vec(&p.relations[1].w, h.skill.row(0));
        for (x, y) in out.skill.row(0).iter().zip(&want_skill).chain(out.customer.row(0).iter().zip(&want_customer)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_parallel_edges_split_evenly() {
        let mut r = rng(5);
        let g = graph_from(1, 1, &[edge(0, 0, &[0.4, 0.1]), edge(0, 0, &[0.4, 0.1])], 2);
        let h = random_table(&mut r, 1, 1, 2);
        let p = EdgeAttnParams::init(2, 2, 3, &mut r);
        let [a, b] = edge_attention_weights(&p, &g, &h).unwrap();
        assert_eq!(a, vec![0.5, 0.5]);
        assert_eq!(b, vec![0.5, 0.5]);
    }

    /// `d = 2`, a skill with two distinct customer neighbors, every weight
    /// picked by hand.
    #[test]
    fn two_neighbors_hand_params() {
        let g = graph_from(2, 1, &[edge(0, 0, &[1.0]), edge(1, 0, &[-1.0])], 1);
        let h = table(&[&[1.0, 0.0], &[0.0, 2.0]], &[&[0.5, -0.5]]);
        let rel = EdgeAttnRelation { w: t(2, 2, &[1.0, 2.0, 0.0, 1.0]), w_a: t(1, 3, &[1.0, -1.0, 0.5]), a: v(&[0.3, 1.0]) };
        let p = EdgeAttnParams { relations: [rel.clone(), rel], slope: 0.2 };
        let [to_skill, _] = edge_attention_weights(&p, &g, &h).unwrap();
        // W_a[h_s ‖ e] = 1 ± 0.5, W_a[h_c0 ‖ 1] = 1.5, W_a[h_c1 ‖ -1] = -2.5
        let k0: f64 = 0.3 * 1.5 + 1.0 * 1.5;
        let k1: f64 = 0.2 * (0.3 * 0.5 - 2.5);
        let a0 = k0.exp() / (k0.exp() + k1.exp());
        assert!((to_skill[0] - a0).abs() < 1e-12);
        assert!((to_skill[1] - (1.0 - a0)).abs() < 1e-12);
        let out = edge_attention_forward(&p, &g, &h).unwrap();
        // W h_c0 = [1, 0], W h_c1 = [4, 2]
        let want = [a0 + 4.0 * (1.0 - a0), 2.0 * (1.0 - a0)];
        let naive = naive_attention(&p, &g, &h);
        for c in 0..2 {
            assert!((out.skill.row(0)[c] - want[c]).abs() < 1e-12);
            assert!((naive[2][c] - want[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn isolated_node_keeps_its_embedding() {
        let g = graph_from(2, 1, &[edge(0, 0, &[1.0])], 1);
        let h = table(&[&[1.0, 2.0], &[-3.0, 0.5]], &[&[4.0, 4.0]]);
        let mut r = rng(6);
        let out = edge_attention_forward(&EdgeAttnParams::init(2, 1, 2, &mut r), &g, &h).unwrap();
        assert_eq!(out.customer.row(1), &[-3.0, 0.5]);
    }

    #[test]
    fn bad_slope_is_rejected() {
        let g = graph_from(1, 1, &[edge(0, 0, &[1.0])], 1);
        let h = table(&[&[1.0]], &[&[2.0]]);
        let mut p = EdgeAttnParams::init(1, 1, 1, &mut rng(7));
        p.slope = 1.5;
        assert!(edge_attention_forward(&p, &g, &h).is_err());
    }
}

mod rgcn_examples {
    use super::*;

    fn three_nodes() -> (pdrfe_core::graph::BipartiteGraph, EmbeddingTable) {
        let g = graph_from(1, 2, &[edge(0, 0, &[0.0]), edge(0, 1, &[0.0]), edge(0, 1, &[0.0])], 1);
        let h = table(&[&[1.0, -2.0]], &[&[0.5, 3.0], &[-1.0, 1.0]]);
        (g, h)
    }

    #[test]
    fn zero_weights_give_zero() {
        let (g, h) = three_nodes();
        let z = Tensor::zeros(&[2, 2]);
        let p = RgcnParams { relations: [z.clone(), z.clone()], w_self: z };
        let out = rgcn_forward(&p, &g, &h).unwrap();
        assert!(out.customer.data().iter().chain(out.skill.data()).all(|x| *x == 0.0));
    }

    #[test]
    fn identity_self_path_keeps_nonnegative_rows() {
        let g = graph_from(1, 2, &[edge(0, 0, &[0.0])], 1);
        let h = table(&[&[1.0, 2.0]], &[&[0.5, 3.0], &[0.0, 1.0]]);
        let z = Tensor::zeros(&[2, 2]);
        let p = RgcnParams { relations: [z.clone(), z], w_self: Tensor::identity(2) };
        assert_eq!(rgcn_forward(&p, &g, &h).unwrap().stacked(), h.stacked());
    }

    #[test]
    fn three_node_instance_matches_double_loop() {
        let (g, h) = three_nodes();
        let p = RgcnParams {
            relations: [t(2, 2, &[1.0, 0.5, -1.0, 2.0]), t(2, 2, &[0.0, 1.0, 1.0, 0.0])],
            w_self: t(2, 2, &[0.5, 0.0, 0.0, -0.5]),
        };
        let out = rgcn_forward(&p, &g, &h).unwrap();
        assert!(max_diff(&naive_rgcn(&p, &g, &h), &out) < 1e-12);
        // customer: W_self h = [0.5, 1]; mean of W_1 h_s over (s0, s1, s1)
        // = mean([3, 0.5], [1, -1], [1, -1]) = [5/3, -0.5]
        let want = [0.5_f64 + 5.0 / 3.0, 0.5];
        for (got, want) in out.customer.row(0).iter().zip(want) {
            assert!((got - want).abs() < 1e-12);
        }
    }
}

mod personalizer_examples {
    use super::*;

    #[test]
    fn zero_params_give_zero() {
        let p = PersonalizerParams {
            w1: Tensor::zeros(&[3, 4]),
            b1: Tensor::zeros(&[3]),
            w2: Tensor::zeros(&[2, 3]),
            b2: Tensor::zeros(&[2]),
        };
        assert_eq!(personalize(&[1.0, -1.0], &[0.5, 0.5], &p).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_output_weight_gives_the_bias() {
        let mut p = PersonalizerParams::init(2, 3, 4, &mut rng(8));
        p.w2 = Tensor::zeros(&[2, 4]);
        p.b2 = v(&[0.25, -7.0]);
        for e in [[0.0, 1.0, 2.0], [-3.0, 0.5, 0.1]] {
            assert_eq!(personalize(&[0.3, 0.9], &e, &p).unwrap(), vec![0.25, -7.0]);
        }
    }

    #[test]
    fn different_utterances_move_the_embedding() {
        let mut r = rng(9);
        let p = PersonalizerParams::init(4, 3, 8, &mut r);
        let h_u = [0.2, -0.4, 0.9, 0.1];
        let a = personalize(&h_u, &[1.0, 0.0, 0.0], &p).unwrap();
        let b = personalize(&h_u, &[0.0, 0.0, 1.0], &p).unwrap();
        let dist: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(dist > 0.0);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let p = PersonalizerParams::init(4, 3, 8, &mut rng(10));
        assert!(personalize(&[1.0, 2.0], &[1.0, 0.0, 0.0], &p).is_err());
        assert!(personalize(&[1.0; 4], &[1.0, 0.0], &p).is_err());
    }
}
