//! Defect prediction from exported embeddings.
//!
//! Each interaction row becomes `x = [customer ‖ skill]`, where the customer
//! part is the personalized embedding of that row when one exists. Rows are
//! split 6:2:2 and scored by a logistic or two-layer classifier.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graph::BipartiteGraph;
use crate::layers::xavier_uniform;
use crate::objectives::mean_defect_ce;
use crate::optim::{Adam, AdamConfig};
use crate::tape::{sigmoid, Tape, Var};
use crate::tensor::Tensor;
use crate::trainer::ExportedEmbeddings;

#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamRow {
    pub x: Vec<f64>,
    pub y: u8,
}

/// Rows stored as one feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSet {
    pub features: Tensor,
    pub labels: Vec<u8>,
    /// Interaction id of every row.
    pub edge_ids: Vec<usize>,
}

impl RowSet {
    pub fn new(features: Tensor, labels: Vec<u8>, edge_ids: Vec<usize>) -> Result<Self> {
        let (n, _) = features.dims2()?;
        if labels.len() != n || edge_ids.len() != n {
            return Err(shape_err("row_set", format!("{n} feature rows, {} labels, {} ids", labels.len(), edge_ids.len())));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
        }
        Ok(RowSet { features, labels, edge_ids })
    }

    pub fn from_rows(rows: &[DownstreamRow]) -> Result<Self> {
        let width = rows.first().map_or(0, |r| r.x.len());
        if let Some(r) = rows.iter().find(|r| r.x.len() != width) {
            return Err(shape_err("row_set", format!("row of width {} among rows of width {width}", r.x.len())));
        }
        let data = rows.iter().flat_map(|r| r.x.iter().copied()).collect();
        Self::new(Tensor::matrix(rows.len(), width, data)?, rows.iter().map(|r| r.y).collect(), (0..rows.len()).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.cols()
    }

    pub fn row(&self, i: usize) -> DownstreamRow {
        DownstreamRow { x: self.features.row(i).to_vec(), y: self.labels[i] }
    }

    pub fn positive_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.labels.iter().map(|&y| y as f64).sum::<f64>() / self.len() as f64
    }

    pub fn select(&self, idx: &[usize]) -> RowSet {
        let w = self.width();
        let mut data = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            data.extend_from_slice(self.features.row(i));
        }
        RowSet {
            features: Tensor::from_parts(alloc::vec![idx.len(), w], data),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            edge_ids: idx.iter().map(|&i| self.edge_ids[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownstreamSplit {
    pub train: RowSet,
    pub val: RowSet,
    pub test: RowSet,
}

/// Seeded uniform 6:2:2 partition of `0..n`. Validation and test sizes are
/// `round(0.2·n)`; the remainder goes to training.
pub fn split_rows(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let fifth = libm::round(0.2 * n as f64) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order.split_off(n - fifth);
    let val = order.split_off(n - 2 * fifth);
    (order, val, test)
}

/// Feature rows for every edge of `rows`.
pub fn downstream_rows(emb: &ExportedEmbeddings, rows: &BipartiteGraph) -> Result<RowSet> {
    let (nu, du) = emb.customer.dims2()?;
    let (ns, ds) = emb.skill.dims2()?;
    if let Some(p) = &emb.personalized {
        if p.shape() != [rows.n_edges(), du] {
            return Err(shape_err("assemble_downstream", format!("personalized table {:?} for {} rows of width {du}", p.shape(), rows.n_edges())));
        }
    }
    let w = du + ds;
    let mut data = Vec::with_capacity(rows.n_edges() * w);
    for (i, e) in rows.edges().iter().enumerate() {
        if e.customer >= nu {
            return Err(Error::MissingEmbedding(format!("customer {}", e.customer)));
        }
        if e.skill >= ns {
            return Err(Error::MissingEmbedding(format!("skill {}", e.skill)));
        }
        match &emb.personalized {
            Some(p) => data.extend_from_slice(p.row(i)),
            None => data.extend_from_slice(emb.customer.row(e.customer)),
        }
        data.extend_from_slice(emb.skill.row(e.skill));
    }
    RowSet::new(
        Tensor::new(alloc::vec![rows.n_edges(), w], data)?,
        rows.edges().iter().map(|e| e.defect).collect(),
        rows.edges().iter().map(|e| e.edge_id).collect(),
    )
}

pub fn assemble_downstream(emb: &ExportedEmbeddings, rows: &BipartiteGraph, seed: u64) -> Result<DownstreamSplit> {
    let all = downstream_rows(emb, rows)?;
    let (train, val, test) = split_rows(all.len(), seed);
    Ok(DownstreamSplit { train: all.select(&train), val: all.select(&val), test: all.select(&test) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Logistic,
    Mlp2,
}

impl ClassifierKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Logistic => "logistic",
            ClassifierKind::Mlp2 => "mlp2",
        }
    }
}

impl core::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(ClassifierKind::Logistic),
            "mlp2" => Ok(ClassifierKind::Mlp2),
            other => Err(Error::InvalidArgument(format!("unknown classifier `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec {
            kind: ClassifierKind::Mlp2,
            hidden: 32,
            learning_rate: 1e-4,
            batch_size: 256,
            max_epochs: 100,
            patience: 2,
            seed: 0,
        }
    }
}

/// Dense layers `z ← W z + b` with ReLU between them; the last layer emits
/// one logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams<T = Tensor> {
    pub layers: Vec<(T, T)>,
}

impl<T> ClassifierParams<T> {
    pub fn tensors(&self) -> Vec<&T> {
        self.layers.iter().flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        self.layers.iter_mut().flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ClassifierParams<U> {
        ClassifierParams { layers: self.layers.iter().map(|(w, b)| (f(w), f(b))).collect() }
    }
}

impl ClassifierParams {
    pub fn init(kind: ClassifierKind, width: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let dims: Vec<usize> = match kind {
            ClassifierKind::Logistic => alloc::vec![width, 1],
            ClassifierKind::Mlp2 => alloc::vec![width, hidden, 1],
        };
        let layers =
            dims.windows(2).map(|w| (xavier_uniform(w[1], w[0], rng), Tensor::zeros(&[w[1]]))).collect();
        ClassifierParams { layers }
    }
}

/// Logits (`m×1`) of the classifier on a tape.
pub fn classifier_logits(tape: &mut Tape, p: &ClassifierParams<Var>, x: Var) -> Result<Var> {
    let mut z = x;
    for (i, (w, b)) in p.layers.iter().enumerate() {
        if i > 0 {
            z = tape.relu(z)?;
        }
        let lin = tape.matmul_t(z, *w)?;
        z = tape.add_row(lin, *b)?;
    }
    Ok(z)
}

/// Mean cross-entropy of the classifier on a tape.
pub fn classifier_loss(tape: &mut Tape, p: &ClassifierParams<Var>, x: Var, y: Arc<[f64]>) -> Result<Var> {
    let z = classifier_logits(tape, p, x)?;
    let prob = tape.sigmoid(z)?;
    tape.binary_cross_entropy(prob, y)
}

/// A trained classifier together with the training-set standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub spec: ClassifierSpec,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub params: ClassifierParams,
    pub epochs_run: usize,
    pub train_ce: f64,
}

impl Classifier {
    fn standardize(&self, x: &Tensor) -> Result<Tensor> {
        standardize(x, &self.mean, &self.scale)
    }

    /// Defect probability of every row.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        let xs = self.standardize(x)?;
        let mut tape = Tape::new();
        let p = self.params.map(&mut |t| tape.constant(t.clone()));
        let xv = tape.constant(xs);
        let z = classifier_logits(&mut tape, &p, xv)?;
        Ok(tape.value(z).data().iter().map(|&z| sigmoid(z)).collect())
    }
}

fn standardize(x: &Tensor, mean: &[f64], scale: &[f64]) -> Result<Tensor> {
    let (n, w) = x.dims2()?;
    if w != mean.len() {
        return Err(shape_err("classifier", format!("rows of width {w}, classifier expects {}", mean.len())));
    }
    let mut data = x.data().to_vec();
    for row in data.chunks_mut(w.max(1)).take(n) {
        for ((v, m), s) in row.iter_mut().zip(mean).zip(scale) {
            *v = (*v - m) / s;
        }
    }
    Ok(Tensor::from_parts(alloc::vec![n, w], data))
}

fn column_stats(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (n, w) = (x.rows(), x.cols());
    let mut mean = alloc::vec![0.0; w];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n.max(1) as f64);
    let mut var = alloc::vec![0.0; w];
    for i in 0..n {
        for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale = var
        .iter()
        .map(|s| {
            let sd = libm::sqrt(s / n.max(1) as f64);
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

fn mean_ce(p: &ClassifierParams, x: &Tensor, y: &[u8]) -> Result<f64> {
    let mut tape = Tape::new();
    let pv = p.map(&mut |t| tape.constant(t.clone()));
    let xv = tape.constant(x.clone());
    let z = classifier_logits(&mut tape, &pv, xv)?;
    let probs: Vec<f64> = tape.value(z).data().iter().map(|&z| sigmoid(z)).collect();
    mean_defect_ce(&probs, y)
}

/// Minimizes mean cross-entropy with Adam. With a validation set, training
/// stops once validation CE fails to improve for `patience` epochs and the
/// best-validation parameters are kept.
pub fn train_classifier(spec: &ClassifierSpec, train: &RowSet, val: Option<&RowSet>) -> Result<Classifier> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let positives = train.labels.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == train.len() {
        return Err(Error::SingleClass);
    }
    if spec.batch_size == 0 || spec.hidden == 0 || spec.patience == 0 {
        return Err(Error::InvalidArgument(format!("classifier sizes must be positive: {spec:?}")));
    }
    let (mean, scale) = column_stats(&train.features);
    let x = standardize(&train.features, &mean, &scale)?;
    let xv = match val {
        Some(v) if !v.is_empty() => Some((standardize(&v.features, &mean, &scale)?, &v.labels)),
        _ => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut params = ClassifierParams::init(spec.kind, train.width(), spec.hidden, &mut rng);
    let mut adam = Adam::new(AdamConfig { learning_rate: spec.learning_rate, ..AdamConfig::default() });
    let mut order: Vec<usize> = (0..train.len()).collect();
    let w = train.width();
    let mut best: Option<(f64, ClassifierParams)> = None;
    let (mut stale, mut epochs_run) = (0, 0);
    for _ in 0..spec.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(spec.batch_size) {
            let mut data = Vec::with_capacity(chunk.len() * w);
            for &i in chunk {
                data.extend_from_slice(x.row(i));
            }
            let y: Arc<[f64]> = chunk.iter().map(|&i| train.labels[i] as f64).collect();
            let mut tape = Tape::new();
            let pv = params.map(&mut |t| tape.param(t.clone()));
            let xb = tape.constant(Tensor::from_parts(alloc::vec![chunk.len(), w], data));
            let loss = classifier_loss(&mut tape, &pv, xb, y)?;
            let grads = tape.backward(loss)?;
            let g: Vec<Tensor> = pv.tensors().into_iter().map(|&v| grads.get_or_zeros(&tape, v)).collect();
            adam.step(&mut params.tensors_mut(), &g)?;
        }
        epochs_run += 1;
        let Some((vx, vy)) = &xv else { continue };
        let ce = mean_ce(&params, vx, vy)?;
        if best.as_ref().is_none_or(|(b, _)| ce < *b) {
            best = Some((ce, params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= spec.patience {
                break;
            }
        }
    }
    let params = best.map(|(_, p)| p).unwrap_or(params);
    let train_ce = mean_ce(&params, &x, &train.labels)?;
    Ok(Classifier { spec: *spec, mean, scale, params, epochs_run, train_ce })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub classifier: String,
    pub seed: u64,
    pub test_ce: f64,
    /// `None` when the test rows hold a single class.
    pub test_auc: Option<f64>,
    pub positive_rate: f64,
    pub n_test: usize,
}

/// Scores `test` with `classifier`. The model name and seed are left for the
/// caller to fill in.
pub fn evaluate(classifier: &Classifier, test: &RowSet) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let p = classifier.predict(&test.features)?;
    Ok(metrics(&p, &test.labels, classifier.spec.kind.name(), classifier.spec.seed))
}

/// Metrics for given probabilities.
pub fn metrics(p: &[f64], y: &[u8], classifier: &str, seed: u64) -> MetricsReport {
    let n = y.len();
    MetricsReport {
        model: String::new(),
        classifier: classifier.into(),
        seed,
        test_ce: mean_defect_ce(p, y).unwrap_or(f64::NAN),
        test_auc: auc(p, y),
        positive_rate: y.iter().map(|&v| v as f64).sum::<f64>() / n.max(1) as f64,
        n_test: n,
    }
}

/// Rank-based area under the ROC curve with ties sharing their mean rank.
pub fn auc(scores: &[f64], y: &[u8]) -> Option<f64> {
    let n_pos = y.iter().filter(|&&v| v == 1).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 || scores.len() != y.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| y[k] == 1).count() as f64 * mid;
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}
