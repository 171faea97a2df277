#![allow(dead_code)]

use pdrfe_core::downstream::ClassifierSpec;
use pdrfe_core::model::ModelConfig;
use pdrfe_core::synth::SynthConfig;
use pdrfe_core::trainer::TrainConfig;
use pdrfe_lab::plan::DataSpec;
use pdrfe_lab::ExperimentPlan;

pub fn tiny_synth() -> SynthConfig {
    SynthConfig { n_customers: 40, n_skills: 8, n_interactions: 800, seed: 3, ..SynthConfig::default() }
}

/// A plan over a small synthetic log that runs in well under a second per cell.
pub fn tiny_plan() -> ExperimentPlan {
    let base = ExperimentPlan::default();
    ExperimentPlan {
        name: "tiny".into(),
        seeds: vec![0, 1],
        data: DataSpec { synth: Some(tiny_synth()), gaussian_dim: 4, ..DataSpec::default() },
        train: TrainConfig {
            model: ModelConfig { hidden_dim: 6, attention_dim: 4, personalizer_hidden: 6, ..base.train.model },
            batch_size: 256,
            max_epochs: 2,
            ..base.train
        },
        classifier: ClassifierSpec { max_epochs: 5, hidden: 8, ..base.classifier },
        ..base
    }
}
