//! Synthetic interaction logs whose defect labels depend jointly on the
//! customer, the skill and the utterance.
//!
//! Customers and skills carry latent vectors `z`. Pairs are drawn with
//! probability proportional to `softplus(⟨z_u, z_s⟩)`. Each interaction picks
//! an utterance cluster `c` from a distribution that depends on both the skill
//! and the customer, and its text is drawn from that cluster's vocabulary,
//! which shares no token with any other cluster. The defect label is
//!
//! ```text
//! y ~ Bernoulli(sigmoid(logit(β) + γ·⟨z_u, M_c z_s⟩)),
//! M_c = √(1−ρ)·B + √ρ·C_c
//! ```
//!
//! with a shared matrix `B` and per-cluster matrices `C_c`, so a predictor
//! that ignores the utterance cannot reach the Bayes rate when `γ > 0`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encoder::EdgeEncoder;
use crate::error::{Error, Result};
use crate::graph::{build_graph, BipartiteGraph, Interaction, NodeCatalog, NodeFeatures};
use crate::objectives::defect_ce;
use crate::tape::sigmoid;
use crate::tensor::Tensor;

/// Metadata cardinalities of customers: business-review country, prime,
/// music subscriber, smart-home customer.
pub const CUSTOMER_METADATA: [usize; 4] = [19, 2, 2, 2];
/// Metadata cardinalities of skills: category, type, subcategory, reporting
/// category.
pub const SKILL_METADATA: [usize; 4] = [22, 7, 69, 28];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_customers: usize,
    pub n_skills: usize,
    pub n_interactions: usize,
    pub latent_dim: usize,
    pub n_clusters: usize,
    /// Base defect rate `β`.
    pub base_rate: f64,
    /// Context weight `γ`.
    pub gamma: f64,
    /// Share `ρ` of defect-logit variance that depends on the cluster.
    pub context_share: f64,
    /// Spread of the skill-specific cluster preferences.
    pub skill_cluster_spread: f64,
    /// Spread of the customer-specific cluster preferences.
    pub customer_cluster_spread: f64,
    pub vocab_per_cluster: usize,
    /// Width of the Gaussian node features.
    pub feature_dim: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_customers: 500,
            n_skills: 50,
            n_interactions: 50_000,
            latent_dim: 4,
            n_clusters: 4,
            base_rate: 0.2,
            gamma: 2.0,
            context_share: 0.75,
            skill_cluster_spread: 4.0,
            customer_cluster_spread: 2.0,
            vocab_per_cluster: 6,
            feature_dim: 16,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.n_customers,
            self.n_skills,
            self.n_interactions,
            self.latent_dim,
            self.n_clusters,
            self.vocab_per_cluster,
            self.feature_dim,
        ];
        if counts.contains(&0) {
            return Err(Error::InvalidArgument(format!("synthetic counts must be positive: {self:?}")));
        }
        if !(self.base_rate > 0.0 && self.base_rate < 1.0) {
            return Err(Error::InvalidArgument(format!("base rate {} outside (0, 1)", self.base_rate)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) || !(0.0..=1.0).contains(&self.context_share) {
            return Err(Error::InvalidArgument(format!("need γ ≥ 0 and ρ in [0, 1]: {self:?}")));
        }
        if !(self.skill_cluster_spread >= 0.0 && self.customer_cluster_spread >= 0.0) {
            return Err(Error::InvalidArgument("cluster spreads must be non-negative".into()));
        }
        Ok(())
    }
}

/// Side-channel record for one interaction row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub row: usize,
    pub cluster: usize,
    /// Label-generating probability.
    pub p_bayes: f64,
    /// Best probability available without the utterance:
    /// `Σ_c P(c | u, s)·p(u, s, c)`.
    pub p_context_free: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthData {
    pub config: SynthConfig,
    pub customers: Vec<String>,
    pub skills: Vec<String>,
    pub interactions: Vec<Interaction>,
    pub truth: Vec<TruthRow>,
    pub customer_latent: Tensor,
    pub skill_latent: Tensor,
    pub customer_metadata: Vec<Vec<usize>>,
    pub skill_metadata: Vec<Vec<usize>>,
    pub customer_features: Tensor,
    pub skill_features: Tensor,
}

impl SynthData {
    pub fn catalog(&self) -> Result<NodeCatalog> {
        NodeCatalog::new(self.customers.clone(), self.skills.clone())
    }

    pub fn gaussian_features(&self) -> NodeFeatures {
        NodeFeatures { customer: self.customer_features.clone(), skill: self.skill_features.clone() }
    }

    pub fn metadata_features(&self) -> Result<NodeFeatures> {
        Ok(NodeFeatures {
            customer: NodeFeatures::one_hot(&self.customer_metadata, &CUSTOMER_METADATA)?,
            skill: NodeFeatures::one_hot(&self.skill_metadata, &SKILL_METADATA)?,
        })
    }

    /// Interaction graph with the given node features.
    pub fn graph(&self, encoder: &dyn EdgeEncoder, features: NodeFeatures) -> Result<BipartiteGraph> {
        build_graph(&self.catalog()?, &self.interactions, encoder, features)
    }

    pub fn labels(&self) -> Vec<u8> {
        self.interactions.iter().map(|r| r.defect).collect()
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn gaussian_matrix(rows: usize, cols: usize, sd: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..rows * cols).map(|_| sd * normal(rng)).collect()
}

fn logit(p: f64) -> f64 {
    libm::log(p / (1.0 - p))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        libm::log1p(libm::exp(x))
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / core::f64::consts::SQRT_2))
}

/// Index drawn from unnormalized cumulative weights.
fn pick(cumulative: &[f64], rng: &mut impl Rng) -> usize {
    let total = *cumulative.last().expect("nonempty weights");
    let t = rng.random::<f64>() * total;
    cumulative.partition_point(|&c| c <= t).min(cumulative.len() - 1)
}

fn cumsum(w: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    w.map(|x| {
        acc += x;
        acc
    })
    .collect()
}

/// Categorical metadata derived from latents: each attribute bins a noisy
/// random projection of `z` into equal-probability bins.
fn metadata(z: &[f64], n: usize, d: usize, cards: &[usize], rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let dirs: Vec<Vec<f64>> = cards
        .iter()
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| normal(rng)).collect();
            let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>()).max(1e-12);
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let zsd = latent_sd(d);
    (0..n)
        .map(|i| {
            let zi = &z[i * d..(i + 1) * d];
            dirs.iter()
                .zip(cards)
                .map(|(v, &k)| {
                    let proj: f64 = zi.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / zsd;
                    let t = (proj + 0.5 * normal(rng)) / libm::sqrt(1.25);
                    ((std_normal_cdf(t) * k as f64) as usize).min(k - 1)
                })
                .collect()
        })
        .collect()
}

/// Latent scale giving `⟨z_u, z_s⟩` a standard deviation of 2.
fn latent_sd(d: usize) -> f64 {
    libm::pow(4.0 / d as f64, 0.25)
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (nu, ns, d, nc) = (cfg.n_customers, cfg.n_skills, cfg.latent_dim, cfg.n_clusters);
    let zsd = latent_sd(d);
    let zu = gaussian_matrix(nu, d, zsd, &mut rng);
    let zs = gaussian_matrix(ns, d, zsd, &mut rng);

    // Entry scale giving ⟨z_u, M z_s⟩ unit variance.
    let msd = 1.0 / (2.0 * libm::sqrt(d as f64));
    let shared = gaussian_matrix(d, d, msd, &mut rng);
    let (a, b) = (libm::sqrt(1.0 - cfg.context_share), libm::sqrt(cfg.context_share));
    let mats: Vec<Vec<f64>> = (0..nc)
        .map(|_| {
            let own = gaussian_matrix(d, d, msd, &mut rng);
            shared.iter().zip(&own).map(|(x, y)| a * x + b * y).collect()
        })
        .collect();
    let skill_pref = gaussian_matrix(ns, nc, cfg.skill_cluster_spread, &mut rng);
    let cust_pref = gaussian_matrix(nu, nc, cfg.customer_cluster_spread, &mut rng);

    let customer_metadata = metadata(&zu, nu, d, &CUSTOMER_METADATA, &mut rng);
    let skill_metadata = metadata(&zs, ns, d, &SKILL_METADATA, &mut rng);
    let customer_features = Tensor::from_parts(vec![nu, cfg.feature_dim], gaussian_matrix(nu, cfg.feature_dim, 1.0, &mut rng));
    let skill_features = Tensor::from_parts(vec![ns, cfg.feature_dim], gaussian_matrix(ns, cfg.feature_dim, 1.0, &mut rng));

    let pair_weights = cumsum((0..nu * ns).map(|k| {
        let (u, s) = (k / ns, k % ns);
        softplus(dot(&zu[u * d..(u + 1) * d], &zs[s * d..(s + 1) * d]))
    }));

    let base = logit(cfg.base_rate);
    let bilinear = |u: usize, s: usize, c: usize| -> f64 {
        let (x, y, m) = (&zu[u * d..(u + 1) * d], &zs[s * d..(s + 1) * d], &mats[c]);
        (0..d).map(|i| x[i] * dot(&m[i * d..(i + 1) * d], y)).sum()
    };

    let customers: Vec<String> = (0..nu).map(|i| format!("C{i:05}")).collect();
    let skills: Vec<String> = (0..ns).map(|i| format!("S{i:04}")).collect();
    let mut interactions = Vec::with_capacity(cfg.n_interactions);
    let mut truth = Vec::with_capacity(cfg.n_interactions);
    for row in 0..cfg.n_interactions {
        let k = pick(&pair_weights, &mut rng);
        let (u, s) = (k / ns, k % ns);
        let logits: Vec<f64> = (0..nc).map(|c| skill_pref[s * nc + c] + cust_pref[u * nc + c]).collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let probs: Vec<f64> = logits.iter().map(|l| libm::exp(l - top)).collect();
        let c = pick(&cumsum(probs.iter().copied()), &mut rng);

        let len = rng.random_range(2..=5);
        let words: Vec<String> =
            (0..len).map(|_| format!("w{c}x{}", rng.random_range(0..cfg.vocab_per_cluster))).collect();

        let per_cluster: Vec<f64> = (0..nc).map(|cc| sigmoid(base + cfg.gamma * bilinear(u, s, cc))).collect();
        let z: f64 = probs.iter().sum();
        let p_context_free = probs.iter().zip(&per_cluster).map(|(w, p)| w * p).sum::<f64>() / z;
        let p_bayes = per_cluster[c];
        let defect = u8::from(rng.random::<f64>() < p_bayes);

        interactions.push(Interaction {
            cid: customers[u].clone(),
            sid: skills[s].clone(),
            utterance: words.join(" "),
            defect,
        });
        truth.push(TruthRow { row, cluster: c, p_bayes, p_context_free });
    }

    Ok(SynthData {
        config: *cfg,
        customers,
        skills,
        interactions,
        truth,
        customer_latent: Tensor::from_parts(vec![nu, d], zu),
        skill_latent: Tensor::from_parts(vec![ns, d], zs),
        customer_metadata,
        skill_metadata,
        customer_features,
        skill_features,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean cross-entropy of the label-generating probabilities on `rows`.
pub fn bayes_ce(truth: &[TruthRow], labels: &[u8], rows: &[usize]) -> f64 {
    rows.iter().map(|&r| defect_ce(truth[r].p_bayes, labels[r])).sum::<f64>() / rows.len().max(1) as f64
}

/// Mean cross-entropy of the best utterance-blind probabilities on `rows`.
pub fn context_free_ce(truth: &[TruthRow], labels: &[u8], rows: &[usize]) -> f64 {
    rows.iter().map(|&r| defect_ce(truth[r].p_context_free, labels[r])).sum::<f64>() / rows.len().max(1) as f64
}

/// Plug-in mutual information (nats) between cluster and label.
pub fn cluster_label_information(truth: &[TruthRow], labels: &[u8], n_clusters: usize) -> f64 {
    let n = truth.len() as f64;
    let mut joint = vec![[0.0f64; 2]; n_clusters];
    for (t, &y) in truth.iter().zip(labels) {
        joint[t.cluster][y as usize] += 1.0;
    }
    let py = [0, 1].map(|y| joint.iter().map(|j| j[y]).sum::<f64>() / n);
    let mut mi = 0.0;
    for j in &joint {
        let pc = (j[0] + j[1]) / n;
        for y in 0..2 {
            let p = j[y] / n;
            if p > 0.0 {
                mi += p * libm::log(p / (pc * py[y]));
            }
        }
    }
    mi
}
