//! Bipartite customer–skill multigraph with CSR adjacency in both directions.
//!
//! Every interaction is its own edge, so a customer and a skill may be joined
//! by several parallel edges, each with its own utterance feature and defect
//! label. `edge_id` is the interaction's row in the source log and survives
//! [`split_edges`]; the position of an edge inside a graph is its *local*
//! index, which is what CSR lists and [`BipartiteGraph::neighbors`] return.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::EdgeEncoder;
use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Customer,
    Skill,
}

impl NodeKind {
    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Customer => "customer",
            NodeKind::Skill => "skill",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub kind: NodeKind,
    pub index: usize,
}

impl NodeId {
    pub fn customer(index: usize) -> Self {
        NodeId { kind: NodeKind::Customer, index }
    }

    pub fn skill(index: usize) -> Self {
        NodeId { kind: NodeKind::Skill, index }
    }
}

/// One interaction: a customer–skill edge with its defect label. The
/// utterance feature lives in [`BipartiteGraph::edge_feature`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub customer: usize,
    pub skill: usize,
    pub defect: u8,
    pub edge_id: usize,
}

impl EdgeRecord {
    pub fn customer_id(&self) -> NodeId {
        NodeId::customer(self.customer)
    }

    pub fn skill_id(&self) -> NodeId {
        NodeId::skill(self.skill)
    }
}

/// An edge before the graph is assembled.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeInput {
    pub customer: usize,
    pub skill: usize,
    pub feature: Vec<f64>,
    pub defect: u8,
}

/// Initial node feature tables (`h⁰` before the input projection).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeFeatures {
    pub customer: Tensor,
    pub skill: Tensor,
}

impl NodeFeatures {
    /// One-hot encodes categorical metadata. `values[i][a]` is node `i`'s
    /// category for attribute `a`, with `cardinalities[a]` categories; the
    /// attribute blocks are concatenated.
    pub fn one_hot(values: &[Vec<usize>], cardinalities: &[usize]) -> Result<Tensor> {
        let width: usize = cardinalities.iter().sum();
        let mut data = vec![0.0; values.len() * width];
        for (i, row) in values.iter().enumerate() {
            if row.len() != cardinalities.len() {
                return Err(shape_err(
                    "one_hot",
                    format!("node {i} has {} attributes, expected {}", row.len(), cardinalities.len()),
                ));
            }
            let mut offset = 0;
            for (&v, &card) in row.iter().zip(cardinalities) {
                if v >= card {
                    return Err(Error::InvalidArgument(format!("node {i}: category {v} >= cardinality {card}")));
                }
                data[i * width + offset + v] = 1.0;
                offset += card;
            }
        }
        Tensor::matrix(values.len(), width, data)
    }

    /// Seeded standard-normal features.
    pub fn gaussian(rows: usize, dim: usize, rng: &mut impl Rng) -> Tensor {
        let data = (0..rows * dim).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        Tensor::from_parts(vec![rows, dim], data)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Csr {
    offsets: Vec<usize>,
    edges: Vec<usize>,
}

impl Csr {
    fn build(n: usize, endpoints: impl Iterator<Item = usize> + Clone) -> Csr {
        let mut offsets = vec![0usize; n + 1];
        for v in endpoints.clone() {
            offsets[v + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut edges = vec![0usize; offsets[n]];
        for (e, v) in endpoints.enumerate() {
            edges[cursor[v]] = e;
            cursor[v] += 1;
        }
        Csr { offsets, edges }
    }

    fn row(&self, v: usize) -> &[usize] {
        &self.edges[self.offsets[v]..self.offsets[v + 1]]
    }
}

/// Immutable bipartite interaction graph.
#[derive(Clone, Debug, PartialEq)]
pub struct BipartiteGraph {
    n_customers: usize,
    n_skills: usize,
    edges: Vec<EdgeRecord>,
    edge_features: Tensor,
    by_customer: Csr,
    by_skill: Csr,
    features: NodeFeatures,
}

impl BipartiteGraph {
    /// Assembles a graph from index-level edges. `edge_dim` fixes the
    /// feature width (needed when there are no edges).
    pub fn from_edges(
        n_customers: usize,
        n_skills: usize,
        edges: &[EdgeInput],
        edge_dim: usize,
        features: NodeFeatures,
    ) -> Result<Self> {
        let mut records = Vec::with_capacity(edges.len());
        let mut feats = Vec::with_capacity(edges.len() * edge_dim);
        for (row, e) in edges.iter().enumerate() {
            if e.customer >= n_customers {
                return Err(Error::DanglingNode { row, kind: "customer", id: format!("{}", e.customer) });
            }
            if e.skill >= n_skills {
                return Err(Error::DanglingNode { row, kind: "skill", id: format!("{}", e.skill) });
            }
            if e.feature.len() != edge_dim {
                return Err(shape_err(
                    "build_graph",
                    format!("row {row}: edge feature of length {}, expected {edge_dim}", e.feature.len()),
                ));
            }
            if e.defect > 1 {
                return Err(Error::InvalidArgument(format!("row {row}: defect label {} not in {{0,1}}", e.defect)));
            }
            records.push(EdgeRecord { customer: e.customer, skill: e.skill, defect: e.defect, edge_id: row });
            feats.extend_from_slice(&e.feature);
        }
        let edge_features = Tensor::matrix(edges.len(), edge_dim, feats)?;
        Self::assemble(n_customers, n_skills, records, edge_features, features)
    }

    fn assemble(
        n_customers: usize,
        n_skills: usize,
        edges: Vec<EdgeRecord>,
        edge_features: Tensor,
        features: NodeFeatures,
    ) -> Result<Self> {
        if features.customer.rows() != n_customers || features.skill.rows() != n_skills {
            return Err(shape_err(
                "build_graph",
                format!(
                    "feature tables have {}/{} rows for {n_customers} customers / {n_skills} skills",
                    features.customer.rows(),
                    features.skill.rows()
                ),
            ));
        }
        features.customer.dims2()?;
        features.skill.dims2()?;
        let by_customer = Csr::build(n_customers, edges.iter().map(|e| e.customer));
        let by_skill = Csr::build(n_skills, edges.iter().map(|e| e.skill));
        Ok(BipartiteGraph { n_customers, n_skills, edges, edge_features, by_customer, by_skill, features })
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
        self.edges.len()
    }

    pub fn edges(&self) -> &[EdgeRecord] {
        &self.edges
    }

    /// `|E| × d_e` utterance features, row `k` for local edge `k`.
    pub fn edge_features(&self) -> &Tensor {
        &self.edge_features
    }

    pub fn edge_feature(&self, local: usize) -> &[f64] {
        self.edge_features.row(local)
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_features.cols()
    }

    pub fn features(&self) -> &NodeFeatures {
        &self.features
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.incident(node).len()
    }

    /// Local indices of the edges incident to `node`, in CSR order.
    pub fn incident(&self, node: NodeId) -> &[usize] {
        match node.kind {
            NodeKind::Customer => self.by_customer.row(node.index),
            NodeKind::Skill => self.by_skill.row(node.index),
        }
    }

    /// `(local edge index, other endpoint)` for every edge at `node`; parallel
    /// edges appear once each.
    pub fn neighbors(&self, node: NodeId) -> Result<Vec<(usize, NodeId)>> {
        self.check_node(node)?;
        Ok(self
            .incident(node)
            .iter()
            .map(|&e| {
                let rec = &self.edges[e];
                let other = match node.kind {
                    NodeKind::Customer => rec.skill_id(),
                    NodeKind::Skill => rec.customer_id(),
                };
                (e, other)
            })
            .collect())
    }

    pub fn check_node(&self, node: NodeId) -> Result<()> {
        let count = match node.kind {
            NodeKind::Customer => self.n_customers,
            NodeKind::Skill => self.n_skills,
        };
        if node.index < count {
            Ok(())
        } else {
            Err(Error::NodeOutOfRange { kind: node.kind.name(), index: node.index, count })
        }
    }

    /// Distinct skills joined to customer `u`.
    pub fn skill_set(&self, u: usize) -> Vec<bool> {
        let mut seen = vec![false; self.n_skills];
        for &e in self.by_customer.row(u) {
            seen[self.edges[e].skill] = true;
        }
        seen
    }

    /// Subgraph with the given local edges (in the given order) and every
    /// node.
    pub fn with_edges(&self, locals: &[usize]) -> Result<Self> {
        let d = self.edge_dim();
        let mut feats = Vec::with_capacity(locals.len() * d);
        let mut edges = Vec::with_capacity(locals.len());
        for &k in locals {
            edges.push(self.edges[k]);
            feats.extend_from_slice(self.edge_feature(k));
        }
        let edge_features = Tensor::matrix(locals.len(), d, feats)?;
        Self::assemble(self.n_customers, self.n_skills, edges, edge_features, self.features.clone())
    }
}

/// Declared node ids and the string → index maps for both kinds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct NodeCatalog {
    customers: Vec<String>,
    skills: Vec<String>,
    customer_index: BTreeMap<String, usize>,
    skill_index: BTreeMap<String, usize>,
}

impl NodeCatalog {
    pub fn new(customers: Vec<String>, skills: Vec<String>) -> Result<Self> {
        let customer_index = index_of(&customers, "customer")?;
        let skill_index = index_of(&skills, "skill")?;
        Ok(NodeCatalog { customers, skills, customer_index, skill_index })
    }

    /// Declares nodes in order of first appearance in `rows`.
    pub fn from_interactions(rows: &[Interaction]) -> Self {
        let mut cat = NodeCatalog::default();
        for r in rows {
            if !cat.customer_index.contains_key(&r.cid) {
                cat.customer_index.insert(r.cid.clone(), cat.customers.len());
                cat.customers.push(r.cid.clone());
            }
            if !cat.skill_index.contains_key(&r.sid) {
                cat.skill_index.insert(r.sid.clone(), cat.skills.len());
                cat.skills.push(r.sid.clone());
            }
        }
        cat
    }

    pub fn customers(&self) -> &[String] {
        &self.customers
    }

    pub fn skills(&self) -> &[String] {
        &self.skills
    }

    pub fn customer(&self, cid: &str) -> Option<usize> {
        self.customer_index.get(cid).copied()
    }

    pub fn skill(&self, sid: &str) -> Option<usize> {
        self.skill_index.get(sid).copied()
    }

    /// Printable id of a node.
    pub fn name(&self, node: NodeId) -> Option<&str> {
        match node.kind {
            NodeKind::Customer => self.customers.get(node.index),
            NodeKind::Skill => self.skills.get(node.index),
        }
        .map(String::as_str)
    }
}

fn index_of(ids: &[String], kind: &str) -> Result<BTreeMap<String, usize>> {
    let mut map = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        if map.insert(id.clone(), i).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate {kind} id `{id}`")));
        }
    }
    Ok(map)
}

/// One row of an interaction log.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub cid: String,
    pub sid: String,
    pub utterance: String,
    pub defect: u8,
}

/// Builds the interaction graph: every row becomes an edge whose feature is
/// the encoded utterance.
pub fn build_graph(
    catalog: &NodeCatalog,
    rows: &[Interaction],
    encoder: &dyn EdgeEncoder,
    features: NodeFeatures,
) -> Result<BipartiteGraph> {
    let mut edges = Vec::with_capacity(rows.len());
    for (row, r) in rows.iter().enumerate() {
        let customer = catalog
            .customer(&r.cid)
            .ok_or_else(|| Error::DanglingNode { row, kind: "customer", id: r.cid.clone() })?;
        let skill = catalog
            .skill(&r.sid)
            .ok_or_else(|| Error::DanglingNode { row, kind: "skill", id: r.sid.clone() })?;
        let feature = encoder.encode(&r.utterance)?.into_data();
        edges.push(EdgeInput { customer, skill, feature, defect: r.defect });
    }
    BipartiteGraph::from_edges(catalog.customers().len(), catalog.skills().len(), &edges, encoder.dim(), features)
}

/// Uniform random partition of the edges into `(train, test)` with
/// `|train| = round(fraction·|E|)`. Both halves keep every node and list their
/// edges in original order.
pub fn split_edges(g: &BipartiteGraph, train_fraction: f64, seed: u64) -> Result<(BipartiteGraph, BipartiteGraph)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let m = g.n_edges();
    let n_train = libm::round(train_fraction * m as f64) as usize;
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, test) = order.split_at_mut(n_train);
    train.sort_unstable();
    test.sort_unstable();
    Ok((g.with_edges(train)?, g.with_edges(test)?))
}

/// `k` distinct skills drawn uniformly from those not joined to customer `u`.
pub fn sample_negatives(g: &BipartiteGraph, u: NodeId, k: usize, rng: &mut impl Rng) -> Result<Vec<NodeId>> {
    if u.kind != NodeKind::Customer {
        return Err(Error::InvalidArgument(format!("negatives are drawn for customers, got {u:?}")));
    }
    g.check_node(u)?;
    let candidates: Vec<usize> =
        g.skill_set(u.index).iter().enumerate().filter(|(_, &linked)| !linked).map(|(s, _)| s).collect();
    draw(&candidates, u.index, k, rng).map(|v| v.into_iter().map(NodeId::skill).collect())
}

fn draw(candidates: &[usize], customer: usize, k: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if candidates.len() < k {
        return Err(Error::NotEnoughNegatives { customer, available: candidates.len(), requested: k });
    }
    Ok(index::sample(rng, candidates.len(), k).into_iter().map(|i| candidates[i]).collect())
}

/// Negative sampler with the non-neighbor lists precomputed.
///
/// Positives are the union over all `graphs`, so held-out edges can be kept
/// out of the negative pool.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    non_neighbors: Vec<Vec<usize>>,
}

impl NegativeSampler {
    pub fn new(graphs: &[&BipartiteGraph]) -> Result<Self> {
        let first = graphs.first().ok_or_else(|| Error::InvalidArgument("no graphs".into()))?;
        let (nu, ns) = (first.n_customers(), first.n_skills());
        if graphs.iter().any(|g| g.n_customers() != nu || g.n_skills() != ns) {
            return Err(Error::InvalidArgument("graphs disagree on node counts".into()));
        }
        let non_neighbors = (0..nu)
            .map(|u| {
                let mut linked = vec![false; ns];
                for g in graphs {
                    for (s, l) in g.skill_set(u).into_iter().enumerate() {
                        linked[s] |= l;
                    }
                }
                (0..ns).filter(|&s| !linked[s]).collect()
            })
            .collect();
        Ok(NegativeSampler { non_neighbors })
    }

    pub fn available(&self, customer: usize) -> usize {
        self.non_neighbors[customer].len()
    }

    pub fn sample(&self, customer: usize, k: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        draw(&self.non_neighbors[customer], customer, k, rng)
    }
}
