mod common;

use std::sync::Arc;

use common::{rng, small_instance, uniform};
use pdrfe_core::downstream::{classifier_loss, ClassifierKind, ClassifierParams};
use pdrfe_core::gradcheck::{grad_check, DEFAULT_EPS};
use pdrfe_core::layers::{
    attention_layer, nnconv_layer, personalize_rows, rgcn_layer, EdgeAttnParams, MessageGraph, NnConvParams,
    PersonalizerParams, RgcnParams,
};
use pdrfe_core::layers::LayerKind;
use pdrfe_core::model::{encode_nodes, ModelConfig, ModelParams};
use pdrfe_core::objectives::{margin_loss_on_tape, margin_pairs_on_tape};
use pdrfe_core::{Result, Tape, Tensor, Var};
use rand::Rng;

const SEEDS: u64 = 24;
const TOL: f64 = 1e-4;

/// Objectives are scaled by this so one ulp of the objective, divided by
/// `2·eps`, stays far below the `1e-8` floor of the relative error. Without
/// it, directions the objective is flat in by construction (attention over
/// identical messages) report roundoff as a `~1e-3` error.
const OBJECTIVE_SCALE: f64 = 1e-3;

/// `s · Σ r ⊙ x` for a fixed random `r`, so every output entry gets its own
/// weight.
fn weighted_sum(t: &mut Tape, x: Var, r: &Tensor) -> Result<Var> {
    let rv = t.constant(r.clone());
    let m = t.mul(x, rv)?;
    let total = t.sum(m)?;
    t.scale(total, OBJECTIVE_SCALE)
}

fn check(name: &str, seed: u64, f: impl Fn(&mut Tape, &[Var]) -> Result<Var>, params: &[Tensor]) {
    let report = grad_check(f, params, DEFAULT_EPS).unwrap();
    assert!(report.entries > 0, "{name} seed {seed}: nothing probed");
    assert!(report.max_rel_error < TOL, "{name} seed {seed}: {report:?}");
}

/// Checks `SEEDS` instances drawn by `make`, which may decline a seed.
fn check_instances<F>(name: &str, base: u64, make: impl Fn(u64) -> Option<(Vec<Tensor>, F)>)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (mut accepted, mut seed) = (0, base);
    while accepted < SEEDS {
        seed += 1;
        let Some((params, f)) = make(seed) else { continue };
        check(name, seed, f, &params);
        accepted += 1;
    }
}

/// Rebuilds a parameter struct from the vars handed out by `grad_check`, in
/// `tensors()` order.
fn rebind<P>(map: impl FnOnce(&mut dyn FnMut() -> Var) -> P, vars: &[Var]) -> P {
    let mut it = vars.iter().copied();
    map(&mut || it.next().expect("enough vars"))
}

#[test]
fn nnconv_layer_gradients() {
    check_instances("nnconv", 0, |seed| {
        let mut r = rng(seed);
        let (d, d_e) = (r.random_range(1..=4), r.random_range(1..=3));
        let (g, h) = small_instance(&mut r, d, d_e);
        let mut p = NnConvParams::init(d, d_e, &mut r);
        for rel in &mut p.relations {
            rel.b_e = uniform(&mut r, &[d * d], 0.5);
        }
        let mg = MessageGraph::new(&g);
        let weights = uniform(&mut r, &[g.n_nodes(), d], 1.0);
        let mut params: Vec<Tensor> = p.tensors().into_iter().cloned().collect();
        params.push(h.stacked());
        let n = params.len();
        Some((params, move |t: &mut Tape, v: &[Var]| {
            let b = mg.bind(t);
            let pv = rebind(|next| p.map(&mut |_| next()), &v[..n - 1]);
            let out = nnconv_layer(t, &pv, &b, v[n - 1])?;
            weighted_sum(t, out, &weights)
        }))
    });
}

#[test]
fn attention_layer_gradients() {
    check_instances("attention", 100, |seed| {
        let mut r = rng(seed);
        let (d, d_e, d_a) = (r.random_range(1..=4), r.random_range(1..=3), r.random_range(1..=3));
        let (g, h) = small_instance(&mut r, d, d_e);
        let p = EdgeAttnParams::init(d, d_e, d_a, &mut r);
        let mg = MessageGraph::new(&g);
        let weights = uniform(&mut r, &[g.n_nodes(), d], 1.0);
        let mut params: Vec<Tensor> = p.tensors().into_iter().cloned().collect();
        params.push(h.stacked());
        let n = params.len();
        Some((params, move |t: &mut Tape, v: &[Var]| {
            let b = mg.bind(t);
            let pv = rebind(|next| p.map(&mut |_| next()), &v[..n - 1]);
            let (out, _) = attention_layer(t, &pv, &b, v[n - 1])?;
            weighted_sum(t, out, &weights)
        }))
    });
}

#[test]
fn rgcn_layer_gradients() {
    check_instances("rgcn", 200, |seed| {
        let mut r = rng(seed);
        let d = r.random_range(1..=5);
        let (g, h) = small_instance(&mut r, d, 2);
        let p = RgcnParams::init(d, &mut r);
        let mg = MessageGraph::new(&g);
        let weights = uniform(&mut r, &[g.n_nodes(), d], 1.0);
        let mut params: Vec<Tensor> = p.tensors().into_iter().cloned().collect();
        params.push(h.stacked());
        let n = params.len();
        Some((params, move |t: &mut Tape, v: &[Var]| {
            let b = mg.bind(t);
            let pv = rebind(|next| p.map(&mut |_| next()), &v[..n - 1]);
            let out = rgcn_layer(t, &pv, &b, v[n - 1])?;
            weighted_sum(t, out, &weights)
        }))
    });
}

#[test]
fn personalizer_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(300 + seed);
        let (d, d_e, d_h, m) = (r.random_range(1..=8), r.random_range(1..=4), r.random_range(1..=6), r.random_range(1..=6));
        let mut p = PersonalizerParams::init(d, d_e, d_h, &mut r);
        p.b1 = uniform(&mut r, &[d_h], 0.5);
        p.b2 = uniform(&mut r, &[d], 0.5);
        let weights = uniform(&mut r, &[m, d], 1.0);
        let mut params: Vec<Tensor> = p.tensors().into_iter().cloned().collect();
        params.push(uniform(&mut r, &[m, d], 1.0));
        params.push(uniform(&mut r, &[m, d_e], 1.0));
        check(
            "personalizer",
            seed,
            |t, v| {
                let pv = rebind(|next| p.map(&mut |_| next()), &v[..4]);
                let out = personalize_rows(t, &pv, v[4], v[5])?;
                weighted_sum(t, out, &weights)
            },
            &params,
        );
    }
}

#[test]
fn classifier_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(400 + seed);
        let kind = if seed % 2 == 0 { ClassifierKind::Logistic } else { ClassifierKind::Mlp2 };
        let (w, hidden, m) = (r.random_range(1..=8), r.random_range(1..=8), r.random_range(2..=10));
        let p = ClassifierParams::init(kind, w, hidden, &mut r);
        let y: Arc<[f64]> = (0..m).map(|_| f64::from(r.random_range(0..2u8))).collect();
        let mut params: Vec<Tensor> = p.tensors().into_iter().cloned().collect();
        params.push(uniform(&mut r, &[m, w], 2.0));
        let n = params.len();
        check(
            kind.name(),
            seed,
            |t, v| {
                let pv = rebind(|next| p.map(&mut |_| next()), &v[..n - 1]);
                classifier_loss(t, &pv, v[n - 1], y.clone())
            },
            &params,
        );
    }
}

/// Scores whose hinge arguments all stay clear of zero.
fn hinge_safe(pos: &Tensor, neg: &Tensor, k: usize, margin: f64) -> bool {
    neg.data().iter().enumerate().all(|(i, s)| (margin - pos.data()[i / k] + s).abs() > 1e-3)
}

#[test]
fn margin_loss_gradients() {
    let mut checked = 0;
    let mut seed = 500;
    while checked < SEEDS {
        seed += 1;
        let mut r = rng(seed);
        let (d, p, k) = (r.random_range(1..=8), r.random_range(1..=4), r.random_range(1..=5));
        let margin = r.random_range(0.2..2.0);
        let hu = uniform(&mut r, &[p, d], 1.0);
        let hs = uniform(&mut r, &[p, d], 1.0);
        let hn = uniform(&mut r, &[p * k, d], 1.0);
        let owner: Arc<[usize]> = (0..p * k).map(|i| i / k).collect();
        let score = |a: &Tensor, b: &Tensor, rows: &[usize]| -> Tensor {
            let v = rows.iter().enumerate().map(|(i, &j)| common::dot(a.row(j), b.row(i))).collect();
            Tensor::vector(v).unwrap()
        };
        let pos = score(&hu, &hs, &(0..p).collect::<Vec<_>>());
        let neg = score(&hu, &hn, &owner);
        if !hinge_safe(&pos, &neg, k, margin) {
            continue;
        }
        check(
            "margin",
            seed,
            |t, v| {
                let pos = t.row_dot(v[0], v[1])?;
                let rep = t.gather_rows(v[0], owner.clone())?;
                let neg = t.row_dot(rep, v[2])?;
                margin_loss_on_tape(t, pos, neg, k, margin)
            },
            &[hu, hs, hn],
        );
        checked += 1;
    }
}

#[test]
fn defect_ce_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(600 + seed);
        let m = r.random_range(1..=12);
        let y: Arc<[f64]> = (0..m).map(|_| f64::from(r.random_range(0..2u8))).collect();
        check(
            "defect_ce",
            seed,
            |t, v| {
                let p = t.sigmoid(v[0])?;
                t.binary_cross_entropy(p, y.clone())
            },
            &[uniform(&mut r, &[m, 1], 3.0)],
        );
    }
}

/// Input projections, two layers, personalizer and the pair-averaged hinge,
/// the same composition the trainer differentiates.
#[test]
fn full_model_gradients() {
    let kinds = [LayerKind::NnConv, LayerKind::EdgeAttention, LayerKind::Rgcn];
    check_instances("model", 700, |seed| {
        let mut r = rng(seed);
        let kind = kinds[seed as usize % 3];
        let config = ModelConfig {
            kind,
            layers: 2,
            hidden_dim: r.random_range(2..=4),
            attention_dim: 2,
            personalizer: seed % 2 == 0,
            personalizer_hidden: 3,
            backbone: kind != LayerKind::Rgcn && seed % 4 < 2,
        };
        let d_e = 2;
        let (g, _) = small_instance(&mut r, 1, d_e);
        if g.n_edges() == 0 {
            return None;
        }
        let xc = uniform(&mut r, &[g.n_customers(), 3], 1.0);
        let xs = uniform(&mut r, &[g.n_skills(), 2], 1.0);
        let params = ModelParams::init(config, 3, 2, d_e, &mut r).unwrap();
        let mg = MessageGraph::new(&g);
        let nu = g.n_customers();
        let customers: Arc<[usize]> = g.edges().iter().map(|e| e.customer).collect();
        let skills: Arc<[usize]> = g.edges().iter().map(|e| nu + e.skill).collect();
        let negatives: Arc<[usize]> = g.edges().iter().map(|e| nu + (e.skill + 1) % g.n_skills()).collect();
        let pairs: Arc<[usize]> = (0..g.n_edges()).collect();
        let tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
        Some((tensors, move |t: &mut Tape, v: &[Var]| {
            let b = mg.bind(t);
            let p = rebind(|next| params.map(&mut |_| next()), v);
            let xc = t.constant(xc.clone());
            let xs = t.constant(xs.clone());
            let h = encode_nodes(t, &p, &b, xc, xs)?;
            let mut hu = t.gather_rows(h, customers.clone())?;
            if let Some(per) = &p.personalizer {
                hu = personalize_rows(t, per, hu, b.edge_features)?;
            }
            let hs = t.gather_rows(h, skills.clone())?;
            let hn = t.gather_rows(h, negatives.clone())?;
            let pos = t.row_dot(hu, hs)?;
            let neg = t.row_dot(hu, hn)?;
            let loss = margin_pairs_on_tape(t, pos, neg, pairs.clone(), 1.0)?;
            t.scale(loss, OBJECTIVE_SCALE)
        }))
    });
}

mod ops {
    use super::*;

    fn sweep(name: &str, base: u64, build: impl Fn(&mut rand_chacha::ChaCha8Rng) -> (Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>)) {
        for seed in 0..SEEDS {
            let mut r = rng(base + seed);
            let (params, f) = build(&mut r);
            check(name, seed, |t, v| f(t, v), &params);
        }
    }

    fn dims(r: &mut impl Rng) -> (usize, usize, usize) {
        (r.random_range(1..=5), r.random_range(1..=5), r.random_range(1..=5))
    }

    fn segments(r: &mut impl Rng, m: usize, n: usize) -> Arc<[usize]> {
        (0..m).map(|_| r.random_range(0..n)).collect()
    }

    macro_rules! op_test {
        ($name:ident, $base:expr, |$r:ident| $body:block) => {
            #[test]
            fn $name() {
                sweep(stringify!($name), $base, |$r| $body);
            }
        };
    }

    op_test!(matmul, 1000, |r| {
        let (m, k, n) = dims(r);
        let w = uniform(r, &[m, n], 1.0);
        (vec![uniform(r, &[m, k], 1.0), uniform(r, &[k, n], 1.0)], Box::new(move |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y, &w)
        }))
    });

    op_test!(matmul_t, 1100, |r| {
        let (m, k, n) = dims(r);
        let w = uniform(r, &[m, n], 1.0);
        (vec![uniform(r, &[m, k], 1.0), uniform(r, &[n, k], 1.0)], Box::new(move |t, v| {
            let y = t.matmul_t(v[0], v[1])?;
            weighted_sum(t, y, &w)
        }))
    });

    op_test!(add_sub_mul, 1200, |r| {
        let (m, n, _) = dims(r);
        let w = uniform(r, &[m, n], 1.0);
        (vec![uniform(r, &[m, n], 1.0), uniform(r, &[m, n], 1.0)], Box::new(move |t, v| {
            let a = t.add(v[0], v[1])?;
            let s = t.sub(v[0], v[1])?;
            let y = t.mul(a, s)?;
            let y = t.mul(y, v[1])?;
            weighted_sum(t, y, &w)
        }))
    });

    op_test!(add_row_scale_shift, 1300, |r| {
        let (m, n, _) = dims(r);
        let w = uniform(r, &[m, n], 1.0);
        let (c, s) = (r.random_range(-2.0..2.0), r.random_range(-1.0..1.0));
        (vec![uniform(r, &[m, n], 1.0), uniform(r, &[n], 1.0)], Box::new(move |t, v| {
            let y = t.add_row(v[0], v[1])?;
            let y = t.scale(y, c)?;
            let y = t.add_scalar(y, s)?;
            let y = t.mul(y, y)?;
            weighted_sum(t, y, &w)
        }))
    });

    op_test!(activations, 1400, |r| {
        let (m, n, _) = dims(r);
        let w = uniform(r, &[m, n], 1.0);
        let slope = r.random_range(0.0..0.9);
        (vec![uniform(r, &[m, n], 2.0)], Box::new(move |t, v| {
            let a = t.relu(v[0])?;
            let b = t.leaky_relu(v[0], slope)?;
            let c = t.sigmoid(v[0])?;
            let y = t.add(a, b)?;
            let y = t.mul(y, c)?;
            weighted_sum(t, y, &w)
        }))
    });

    op_test!(reshape_slice_concat, 1500, |r| {
        let (m, n, k) = dims(r);
        let w = uniform(r, &[2 * m, n + k], 1.0);
        let cut = r.random_range(0..=n + k);
        let w2 = uniform(r, &[2 * m, n + k - cut], 1.0);
        (vec![uniform(r, &[m * n], 1.0), uniform(r, &[m, k], 1.0), uniform(r, &[m, n + k], 1.0)], Box::new(move |t, v| {
            let a = t.reshape(v[0], vec![m, n])?;
            let ab = t.concat_cols(a, v[1])?;
            let y = t.concat_rows(ab, v[2])?;
            let tail = t.slice_cols(y, cut, n + k)?;
            let s1 = weighted_sum(t, y, &w)?;
            let y2 = t.mul(tail, tail)?;
            let s2 = weighted_sum(t, y2, &w2)?;
            t.add(s1, s2)
        }))
    });

    op_test!(gather_and_segments, 1600, |r| {
        let (n, d, _) = dims(r);
        let m = r.random_range(1..=12);
        let idx = segments(r, m, n);
        let seg = segments(r, m, n + 1);
        let w = uniform(r, &[n + 1, d], 1.0);
        let w2 = uniform(r, &[n + 1, d], 1.0);
        (vec![uniform(r, &[n, d], 1.0)], Box::new(move |t, v| {
            let g = t.gather_rows(v[0], idx.clone())?;
            let g = t.mul(g, g)?;
            let s = t.segment_sum(g, seg.clone(), n + 1)?;
            let a = t.segment_mean(g, seg.clone(), n + 1)?;
            let s1 = weighted_sum(t, s, &w)?;
            let s2 = weighted_sum(t, a, &w2)?;
            t.add(s1, s2)
        }))
    });

    op_test!(segment_softmax, 1700, |r| {
        let m = r.random_range(1..=12);
        let seg = segments(r, m, 4);
        let w = uniform(r, &[m, 1], 1.0);
        (vec![uniform(r, &[m, 1], 3.0)], Box::new(move |t, v| {
            let y = t.segment_softmax(v[0], seg.clone())?;
            weighted_sum(t, y, &w)
        }))
    });

    op_test!(row_scale_and_dot, 1800, |r| {
        let (m, d, _) = dims(r);
        let w = uniform(r, &[m, d], 1.0);
        let w2 = uniform(r, &[m, 1], 1.0);
        (vec![uniform(r, &[m, d], 1.0), uniform(r, &[m, 1], 1.0), uniform(r, &[m, d], 1.0)], Box::new(move |t, v| {
            let y = t.row_scale(v[0], v[1])?;
            let dd = t.row_dot(y, v[2])?;
            let s1 = weighted_sum(t, y, &w)?;
            let s2 = weighted_sum(t, dd, &w2)?;
            t.add(s1, s2)
        }))
    });

    op_test!(sum_mean_bce, 1900, |r| {
        let m = r.random_range(1..=8);
        let y: Arc<[f64]> = (0..m).map(|_| f64::from(r.random_range(0..2u8))).collect();
        let p: Vec<f64> = (0..m).map(|_| r.random_range(0.05..0.95)).collect();
        (vec![Tensor::new(vec![m, 1], p).unwrap()], Box::new(move |t, v| {
            let a = t.binary_cross_entropy(v[0], y.clone())?;
            let sq = t.mul(v[0], v[0])?;
            let b = t.mean(sq)?;
            let c = t.sum(v[0])?;
            let ab = t.add(a, b)?;
            t.add(ab, c)
        }))
    });

    op_test!(edge_conditioned, 2000, |r| {
        let (n, d, d_e) = dims(r);
        let m = r.random_range(1..=8);
        let src = segments(r, m, n);
        let w = uniform(r, &[m, d], 1.0);
        (
            vec![uniform(r, &[d * d, d_e], 1.0), uniform(r, &[d * d], 1.0), uniform(r, &[n, d], 1.0), uniform(r, &[m, d_e], 1.0)],
            Box::new(move |t, v| {
                let y = t.edge_conditioned(v[0], v[1], v[2], v[3], src.clone())?;
                weighted_sum(t, y, &w)
            }),
        )
    });
}
