//! Experiment plans: which variants, classifiers and seeds to run, and on what
//! data. Plans are TOML files; relative paths resolve against the plan's
//! directory.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pdrfe_core::downstream::{ClassifierKind, ClassifierSpec};
use pdrfe_core::encoder::EncoderSpec;
use pdrfe_core::layers::LayerKind;
use pdrfe_core::model::ModelConfig;
use pdrfe_core::optim::AdamConfig;
use pdrfe_core::synth::SynthConfig;
use pdrfe_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{LabError, Result};
use crate::io::read_toml;

/// A model compared in the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// Metadata one-hots fed to the classifier without representation training.
    #[serde(rename = "onehot")]
    OneHot,
    #[serde(rename = "rgcn")]
    Rgcn,
    #[serde(rename = "rgcn+ec")]
    RgcnEc,
    #[serde(rename = "rgcn+eatt")]
    RgcnEatt,
    #[serde(rename = "rgcn+per")]
    RgcnPer,
    #[serde(rename = "pdrfe-nnconv")]
    PdrfeNnConv,
    #[serde(rename = "pdrfe-eattn")]
    PdrfeEattn,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::OneHot,
        Variant::Rgcn,
        Variant::RgcnEc,
        Variant::RgcnEatt,
        Variant::RgcnPer,
        Variant::PdrfeNnConv,
        Variant::PdrfeEattn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::OneHot => "onehot",
            Variant::Rgcn => "rgcn",
            Variant::RgcnEc => "rgcn+ec",
            Variant::RgcnEatt => "rgcn+eatt",
            Variant::RgcnPer => "rgcn+per",
            Variant::PdrfeNnConv => "pdrfe-nnconv",
            Variant::PdrfeEattn => "pdrfe-eattn",
        }
    }

    /// Display name built from the ablation legend (RGCN, EC, EAtt, Per).
    pub fn legend(self) -> &'static str {
        match self {
            Variant::OneHot => "One-hot",
            Variant::Rgcn => "RGCN",
            Variant::RgcnEc => "RGCN+EC",
            Variant::RgcnEatt => "RGCN+EAtt",
            Variant::RgcnPer => "RGCN+Per",
            Variant::PdrfeNnConv => "PDRFE (RGCN+EC+Per)",
            Variant::PdrfeEattn => "PDRFE (RGCN+EAtt+Per)",
        }
    }

    pub fn is_pdrfe(self) -> bool {
        matches!(self, Variant::PdrfeNnConv | Variant::PdrfeEattn)
    }

    /// Representation model for this variant, `None` for one-hot. Edge
    /// convolutions sit on top of an RGCN output layer when `backbone` holds.
    pub fn model_config(self, base: &ModelConfig, backbone: bool) -> Option<ModelConfig> {
        let (kind, personalizer) = match self {
            Variant::OneHot => return None,
            Variant::Rgcn => (LayerKind::Rgcn, false),
            Variant::RgcnEc => (LayerKind::NnConv, false),
            Variant::RgcnEatt => (LayerKind::EdgeAttention, false),
            Variant::RgcnPer => (LayerKind::Rgcn, true),
            Variant::PdrfeNnConv => (LayerKind::NnConv, true),
            Variant::PdrfeEattn => (LayerKind::EdgeAttention, true),
        };
        let backbone = backbone && kind != LayerKind::Rgcn;
        Some(ModelConfig { kind, personalizer, backbone, ..*base })
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                LabError::Config(format!("unknown variant `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

/// With/without comparison against the RGCN backbone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationPair {
    pub component: &'static str,
    pub with: Variant,
    pub without: Variant,
}

pub const ABLATION_PAIRS: [AblationPair; 3] = [
    AblationPair { component: "Per", with: Variant::RgcnPer, without: Variant::Rgcn },
    AblationPair { component: "EC", with: Variant::RgcnEc, without: Variant::Rgcn },
    AblationPair { component: "EAtt", with: Variant::RgcnEatt, without: Variant::Rgcn },
];

/// Where interactions come from: a generator config or files on disk.
/// Exactly one of `synth` and `log` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub synth: Option<SynthConfig>,
    /// Interaction log, CSV or JSON lines.
    pub log: Option<PathBuf>,
    /// Pre-encoded utterance vectors replacing the hashing encoder.
    pub utterance_vectors: Option<PathBuf>,
    /// Categorical node metadata; required by the one-hot variant.
    pub metadata: Option<PathBuf>,
    /// Initial node features as JSON; seeded Gaussian features otherwise.
    pub node_features: Option<PathBuf>,
    /// Ground-truth probabilities, enabling the Bayes check.
    pub truth: Option<PathBuf>,
    /// Width of generated Gaussian node features.
    pub gaussian_dim: usize,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            synth: None,
            log: None,
            utterance_vectors: None,
            metadata: None,
            node_features: None,
            truth: None,
            gaussian_dim: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub name: String,
    pub variants: Vec<Variant>,
    pub classifiers: Vec<ClassifierKind>,
    pub seeds: Vec<u64>,
    pub edge_train_fraction: f64,
    /// Stack edge convolutions on an RGCN output layer.
    pub backbone: bool,
    pub data: DataSpec,
    pub encoder: EncoderSpec,
    /// Template for every representation run; kind, personalizer and seed
    /// are set per cell.
    pub train: TrainConfig,
    /// Template for every classifier; kind and seed are set per cell.
    pub classifier: ClassifierSpec,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        let model = ModelConfig { hidden_dim: 16, attention_dim: 16, personalizer_hidden: 16, ..ModelConfig::default() };
        ExperimentPlan {
            name: "default".into(),
            variants: Variant::ALL.to_vec(),
            classifiers: vec![ClassifierKind::Logistic, ClassifierKind::Mlp2],
            seeds: vec![0, 1, 2],
            edge_train_fraction: 0.8,
            backbone: true,
            data: DataSpec { synth: Some(SynthConfig::default()), ..DataSpec::default() },
            encoder: EncoderSpec::default(),
            train: TrainConfig {
                model,
                optimizer: AdamConfig { learning_rate: 1e-2, ..AdamConfig::default() },
                batch_size: 4096,
                ..TrainConfig::default()
            },
            classifier: ClassifierSpec { learning_rate: 1e-3, ..ClassifierSpec::default() },
        }
    }
}

impl ExperimentPlan {
    /// Reads a plan and resolves its relative paths against the plan's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut plan: ExperimentPlan = read_toml(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let d = &mut plan.data;
        for p in [&mut d.log, &mut d.utterance_vectors, &mut d.metadata, &mut d.node_features, &mut d.truth]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(LabError::Config("plan needs at least one seed".into()));
        }
        if self.variants.is_empty() {
            return Err(LabError::Config("plan needs at least one variant".into()));
        }
        if self.classifiers.is_empty() {
            return Err(LabError::Config("plan needs at least one classifier".into()));
        }
        if !(self.edge_train_fraction > 0.0 && self.edge_train_fraction < 1.0) {
            return Err(LabError::Config(format!("edge_train_fraction {} outside (0, 1)", self.edge_train_fraction)));
        }
        match (&self.data.synth, &self.data.log) {
            (Some(s), None) => s.validate().map_err(|e| LabError::Config(e.to_string()))?,
            (None, Some(_)) => {}
            _ => return Err(LabError::Config("data needs exactly one of `synth` or `log`".into())),
        }
        if self.data.gaussian_dim == 0 {
            return Err(LabError::Config("gaussian_dim must be positive".into()));
        }
        self.train.validate().map_err(|e| LabError::Config(e.to_string()))?;
        Ok(())
    }

    /// Training config for one representation cell.
    pub fn train_config(&self, variant: Variant, seed: u64) -> Option<TrainConfig> {
        let model = variant.model_config(&self.train.model, self.backbone)?;
        Some(TrainConfig { model, seed, ..self.train })
    }

    pub fn classifier_spec(&self, kind: ClassifierKind, seed: u64) -> ClassifierSpec {
        ClassifierSpec { kind, seed, ..self.classifier }
    }

    /// Hex SHA-256 prefix of the plan's canonical JSON form.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("plan serializes");
        let digest = Sha256::digest(json.as_bytes());
        format!("{digest:x}")[..16].to_string()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("plan serializes")
    }
}

/// Crate version plus the source revision it was built from.
pub fn artifact_version() -> String {
    format!("v{}-g{}", env!("CARGO_PKG_VERSION"), env!("PDRFE_GIT_REV"))
}
