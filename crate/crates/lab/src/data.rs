//! Materializes a plan's data source into an interaction graph.

use std::path::Path;

use pdrfe_core::encoder::{EncoderSpec, HashingEncoder};
use pdrfe_core::graph::{build_graph, BipartiteGraph, Interaction, NodeCatalog, NodeFeatures};
use pdrfe_core::synth::{generate, SynthData, TruthRow};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{LabError, Result};
use crate::io::{read_interactions, read_json, read_pre_encoded, read_truth, write_interactions, write_json, write_truth, NodeMetadata, NodeVectors};
use crate::plan::DataSpec;

/// Seed of the Gaussian node features generated for logs without them.
pub const NODE_FEATURE_SEED: u64 = 0x6e_0de5;

pub struct Dataset {
    pub catalog: NodeCatalog,
    pub interactions: Vec<Interaction>,
    /// Full interaction graph carrying the representation input features.
    pub graph: BipartiteGraph,
    /// Metadata one-hots, when metadata is known.
    pub onehot: Option<NodeFeatures>,
    pub truth: Option<Vec<TruthRow>>,
}

impl Dataset {
    pub fn load(spec: &DataSpec, encoder: &EncoderSpec) -> Result<Self> {
        if let Some(cfg) = &spec.synth {
            return Dataset::from_synth(&generate(cfg)?, encoder);
        }
        let log = spec.log.as_deref().ok_or_else(|| LabError::Config("no interaction log given".into()))?;
        let interactions = read_interactions(log)?;
        let metadata = spec.metadata.as_deref().map(read_json::<NodeMetadata>).transpose()?;
        let catalog = match &metadata {
            Some(m) => m.catalog()?,
            None => NodeCatalog::from_interactions(&interactions),
        };
        let onehot = metadata.as_ref().map(|m| m.features(&catalog)).transpose()?;
        let features = match &spec.node_features {
            Some(p) => read_json::<NodeVectors>(p)?.features(&catalog)?,
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(NODE_FEATURE_SEED);
                let customer = NodeFeatures::gaussian(catalog.customers().len(), spec.gaussian_dim, &mut rng);
                let skill = NodeFeatures::gaussian(catalog.skills().len(), spec.gaussian_dim, &mut rng);
                NodeFeatures { customer, skill }
            }
        };
        let graph = match &spec.utterance_vectors {
            Some(p) => build_graph(&catalog, &interactions, &read_pre_encoded(p)?, features)?,
            None => build_graph(&catalog, &interactions, &hashing(encoder)?, features)?,
        };
        let truth = match &spec.truth {
            Some(p) => Some(checked_truth(p, read_truth(p)?, interactions.len())?),
            None => None,
        };
        Ok(Dataset { catalog, interactions, graph, onehot, truth })
    }

    pub fn from_synth(data: &SynthData, encoder: &EncoderSpec) -> Result<Self> {
        let graph = data.graph(&hashing(encoder)?, data.gaussian_features())?;
        Ok(Dataset {
            catalog: data.catalog()?,
            interactions: data.interactions.clone(),
            graph,
            onehot: Some(data.metadata_features()?),
            truth: Some(data.truth.clone()),
        })
    }

    pub fn labels(&self) -> Vec<u8> {
        self.interactions.iter().map(|r| r.defect).collect()
    }
}

fn hashing(spec: &EncoderSpec) -> Result<HashingEncoder> {
    HashingEncoder::try_new(*spec).map_err(|e| LabError::Config(e.to_string()))
}

fn checked_truth(path: &Path, truth: Vec<TruthRow>, rows: usize) -> Result<Vec<TruthRow>> {
    if truth.len() != rows {
        return Err(LabError::format(path, 0, format!("{} truth rows for {rows} interactions", truth.len())));
    }
    Ok(truth)
}

/// Files written by [`write_synth`].
pub struct SynthFiles;

impl SynthFiles {
    pub const LOG: &'static str = "interactions.csv";
    pub const TRUTH: &'static str = "truth.jsonl";
    pub const METADATA: &'static str = "metadata.json";
    pub const NODE_FEATURES: &'static str = "node_features.json";
    pub const CONFIG: &'static str = "synth.json";
}

/// Writes a generated data set as files a log-based plan can read back.
pub fn write_synth(dir: &Path, data: &SynthData) -> Result<()> {
    write_interactions(&dir.join(SynthFiles::LOG), &data.interactions)?;
    write_truth(&dir.join(SynthFiles::TRUTH), &data.truth)?;
    write_json(&dir.join(SynthFiles::METADATA), &NodeMetadata::from_synth(data))?;
    let catalog = data.catalog()?;
    write_json(&dir.join(SynthFiles::NODE_FEATURES), &NodeVectors::from_features(&catalog, &data.gaussian_features()))?;
    write_json(&dir.join(SynthFiles::CONFIG), &data.config)?;
    Ok(())
}

/// A log-based data spec pointing at the files of [`write_synth`].
pub fn synth_files_spec(dir: &Path) -> DataSpec {
    DataSpec {
        synth: None,
        log: Some(dir.join(SynthFiles::LOG)),
        metadata: Some(dir.join(SynthFiles::METADATA)),
        node_features: Some(dir.join(SynthFiles::NODE_FEATURES)),
        truth: Some(dir.join(SynthFiles::TRUTH)),
        ..DataSpec::default()
    }
}
