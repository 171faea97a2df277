//! A full representation model: input projections, a stack of convolution
//! layers and an optional personalizer.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graph::BipartiteGraph;
use crate::layers::{
    layer_on_tape, personalize_rows, xavier_uniform, BoundGraph, EmbeddingTable, LayerKind, LayerParams,
    MessageGraph, PersonalizerParams,
};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: LayerKind,
    pub layers: usize,
    pub hidden_dim: usize,
    pub attention_dim: usize,
    pub personalizer: bool,
    pub personalizer_hidden: usize,
    /// Make the last layer an RGCN layer, so `kind` is added to an RGCN
    /// backbone rather than replacing it.
    pub backbone: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: LayerKind::NnConv,
            layers: 2,
            hidden_dim: 128,
            attention_dim: 32,
            personalizer: true,
            personalizer_hidden: 128,
            backbone: false,
        }
    }
}

impl ModelConfig {
    /// Layer kinds in application order.
    pub fn stack(&self) -> Vec<LayerKind> {
        let mut kinds = alloc::vec![self.kind; self.layers];
        if self.backbone {
            if let Some(last) = kinds.last_mut() {
                *last = LayerKind::Rgcn;
            }
        }
        kinds
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden_dim == 0 || self.attention_dim == 0 || self.personalizer_hidden == 0 {
            return Err(Error::InvalidArgument(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T = Tensor> {
    pub config: ModelConfig,
    pub edge_dim: usize,
    /// `d × f_u`, maps customer input features to the hidden width.
    pub input_customer: T,
    /// `d × f_s`
    pub input_skill: T,
    pub layers: Vec<LayerParams<T>>,
    pub personalizer: Option<PersonalizerParams<T>>,
}

impl<T> ModelParams<T> {
    /// Every learnable tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&T> {
        let mut out = alloc::vec![&self.input_customer, &self.input_skill];
        for l in &self.layers {
            out.extend(l.tensors());
        }
        if let Some(p) = &self.personalizer {
            out.extend(p.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        let mut out = alloc::vec![&mut self.input_customer, &mut self.input_skill];
        for l in &mut self.layers {
            out.extend(l.tensors_mut());
        }
        if let Some(p) = &mut self.personalizer {
            out.extend(p.tensors_mut());
        }
        out
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ModelParams<U> {
        let input_customer = f(&self.input_customer);
        let input_skill = f(&self.input_skill);
        let layers = self.layers.iter().map(|l| l.map(f)).collect();
        let personalizer = self.personalizer.as_ref().map(|p| p.map(f));
        ModelParams { config: self.config, edge_dim: self.edge_dim, input_customer, input_skill, layers, personalizer }
    }
}

impl ModelParams {
    /// Xavier-initialized model for input widths `f_u`, `f_s` and edge width `d_e`.
    pub fn init(config: ModelConfig, f_u: usize, f_s: usize, d_e: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim;
        let input_customer = xavier_uniform(d, f_u, rng);
        let input_skill = xavier_uniform(d, f_s, rng);
        let layers = config
            .stack()
            .into_iter()
            .map(|kind| LayerParams::init(kind, d, d_e, config.attention_dim, rng))
            .collect();
        let personalizer =
            config.personalizer.then(|| PersonalizerParams::init(d, d_e, config.personalizer_hidden, rng));
        Ok(ModelParams { config, edge_dim: d_e, input_customer, input_skill, layers, personalizer })
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn check_graph(&self, g: &BipartiteGraph) -> Result<()> {
        let f = g.features();
        if f.customer.cols() != self.input_customer.cols() || f.skill.cols() != self.input_skill.cols() {
            return Err(shape_err(
                "model",
                format!(
                    "graph features {}/{} wide, model expects {}/{}",
                    f.customer.cols(),
                    f.skill.cols(),
                    self.input_customer.cols(),
                    self.input_skill.cols()
                ),
            ));
        }
        if g.edge_dim() != self.edge_dim {
            return Err(shape_err("model", format!("edge width {} vs {}", g.edge_dim(), self.edge_dim)));
        }
        Ok(())
    }

    /// Final node embeddings `h^L` on graph `g`.
    pub fn node_embeddings(&self, g: &BipartiteGraph) -> Result<EmbeddingTable> {
        self.check_graph(g)?;
        let mg = MessageGraph::new(g);
        let mut tape = Tape::new();
        let bound = mg.bind(&mut tape);
        let p = self.map(&mut |t| tape.constant(t.clone()));
        let xc = tape.constant(g.features().customer.clone());
        let xs = tape.constant(g.features().skill.clone());
        let h = encode_nodes(&mut tape, &p, &bound, xc, xs)?;
        EmbeddingTable::from_stacked(tape.value(h), g.n_customers(), self.layers.len())
    }

    /// Personalized customer embedding for every edge of `rows`, using
    /// customer embeddings from `table`. `None` without a personalizer.
    pub fn personalized(&self, table: &EmbeddingTable, rows: &BipartiteGraph) -> Result<Option<Tensor>> {
        let Some(p) = &self.personalizer else { return Ok(None) };
        if rows.n_customers() != table.customer.rows() {
            return Err(shape_err("personalized", format!("{} customers vs {} rows", rows.n_customers(), table.customer.rows())));
        }
        let mut tape = Tape::new();
        let pv = p.map(&mut |t| tape.constant(t.clone()));
        let hc = tape.constant(table.customer.clone());
        let idx: alloc::sync::Arc<[usize]> = rows.edges().iter().map(|e| e.customer).collect();
        let hu = tape.gather_rows(hc, idx)?;
        let e = tape.constant(rows.edge_features().clone());
        let out = personalize_rows(&mut tape, &pv, hu, e)?;
        Ok(Some(tape.value(out).clone()))
    }
}

/// Stacked node matrix after the input projections and every layer.
pub fn encode_nodes(tape: &mut Tape, p: &ModelParams<Var>, g: &BoundGraph, xc: Var, xs: Var) -> Result<Var> {
    let hc = tape.matmul_t(xc, p.input_customer)?;
    let hs = tape.matmul_t(xs, p.input_skill)?;
    let mut h = tape.concat_rows(hc, hs)?;
    for l in &p.layers {
        h = layer_on_tape(tape, l, g, h)?;
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EdgeInput, NodeFeatures};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> BipartiteGraph {
        let edges = [(0, 0, [1.0, 0.0]), (0, 1, [0.0, 1.0]), (1, 1, [0.6, 0.8])]
            .iter()
            .map(|&(c, s, f)| EdgeInput { customer: c, skill: s, feature: f.to_vec(), defect: 0 })
            .collect::<Vec<_>>();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let features = NodeFeatures { customer: NodeFeatures::gaussian(2, 3, &mut rng), skill: NodeFeatures::gaussian(3, 4, &mut rng) };
        BipartiteGraph::from_edges(2, 3, &edges, 2, features).unwrap()
    }

    #[test]
    fn every_kind_produces_a_table() {
        let g = toy();
        for kind in [LayerKind::Rgcn, LayerKind::NnConv, LayerKind::EdgeAttention] {
            let cfg = ModelConfig { kind, layers: 2, hidden_dim: 4, attention_dim: 3, personalizer: true, personalizer_hidden: 5, backbone: false };
            let m = ModelParams::init(cfg, 3, 4, 2, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
            let t = m.node_embeddings(&g).unwrap();
            assert_eq!((t.customer.rows(), t.skill.rows(), t.dim()), (2, 3, 4));
            let p = m.personalized(&t, &g).unwrap().unwrap();
            assert_eq!(p.shape(), &[3, 4]);
            assert_eq!(m.tensors().len(), m.map(&mut |t| t.len()).tensors().len());
        }
    }

    #[test]
    fn rejects_wrong_feature_width() {
        let cfg = ModelConfig { hidden_dim: 4, ..ModelConfig::default() };
        let m = ModelParams::init(cfg, 5, 4, 2, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(matches!(m.node_embeddings(&toy()), Err(Error::Shape { .. })));
    }
}
