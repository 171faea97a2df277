//! Experiment and ablation runs over a grid of variants, classifiers and
//! seeds.
//!
//! Each seed fixes the edge split, the representation initialization and
//! batching, the downstream row split and the classifier. A failing cell is
//! recorded with its error and the run moves on.

use std::time::Instant;

use pdrfe_core::downstream::{assemble_downstream, evaluate, train_classifier, ClassifierKind, DownstreamSplit, MetricsReport};
use pdrfe_core::graph::split_edges;
use pdrfe_core::synth::bayes_ce;
use pdrfe_core::trainer::{export_for_rows, train_with_validation, ExportedEmbeddings, TrainHistory};
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{LabError, Result};
use crate::plan::{artifact_version, AblationPair, ExperimentPlan, Variant, ABLATION_PAIRS};

/// Metrics of one successful cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellMetrics {
    pub report: MetricsReport,
    /// Cross-entropy of the true probabilities on the same test rows.
    pub bayes_ce: Option<f64>,
    /// Representation training time, shared by the classifiers of a variant.
    pub train_secs: f64,
}

impl CellMetrics {
    /// `false` when the test CE beats the Bayes CE, which no learned model
    /// can do in expectation.
    pub fn bayes_ok(&self) -> Option<bool> {
        self.bayes_ce.map(|b| self.report.test_ce >= b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub variant: Variant,
    pub classifier: ClassifierKind,
    pub seed: u64,
    pub result: Result<CellMetrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunHistory {
    pub variant: Variant,
    pub seed: u64,
    pub history: TrainHistory,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub plan: ExperimentPlan,
    pub config_hash: String,
    pub artifact_version: String,
    pub cells: Vec<CellOutcome>,
    pub histories: Vec<RunHistory>,
}

impl ExperimentReport {
    pub fn cell(&self, variant: Variant, classifier: ClassifierKind, seed: u64) -> Option<&CellOutcome> {
        self.cells.iter().find(|c| c.variant == variant && c.classifier == classifier && c.seed == seed)
    }

    /// Test CE per plan seed, `None` for failed cells.
    pub fn seed_values(&self, variant: Variant, classifier: ClassifierKind) -> Vec<(u64, Option<f64>)> {
        self.plan
            .seeds
            .iter()
            .map(|&s| {
                let ce = self.cell(variant, classifier, s).and_then(|c| c.result.as_ref().ok()).map(|m| m.report.test_ce);
                (s, ce)
            })
            .collect()
    }

    /// Median test CE over the seeds that succeeded.
    pub fn median_ce(&self, variant: Variant, classifier: ClassifierKind) -> Option<f64> {
        median(self.seed_values(variant, classifier).into_iter().filter_map(|(_, v)| v).collect())
    }

    pub fn failures(&self) -> impl Iterator<Item = &CellOutcome> {
        self.cells.iter().filter(|c| c.result.is_err())
    }

    pub fn bayes_violations(&self) -> Vec<&CellOutcome> {
        self.cells
            .iter()
            .filter(|c| matches!(&c.result, Ok(m) if m.bayes_ok() == Some(false)))
            .collect()
    }

    /// Error for a run in which nothing succeeded or a cell beat the Bayes CE.
    pub fn check(&self) -> Result<()> {
        if !self.cells.is_empty() && self.cells.iter().all(|c| c.result.is_err()) {
            let first = self.cells[0].result.as_ref().err().cloned().unwrap_or_default();
            return Err(LabError::AllCellsFailed(first));
        }
        let v = self.bayes_violations().len();
        if v > 0 {
            return Err(LabError::BayesViolation(v));
        }
        Ok(())
    }
}

/// Median of `values`; the mean of the middle pair for even counts.
pub fn median(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

/// Progress sink; the CLI prints to stderr, tests pass a no-op.
pub type Progress<'a> = &'a mut dyn FnMut(&str);

/// Runs every cell of `plan` in memory.
pub fn execute(plan: &ExperimentPlan, progress: Progress<'_>) -> Result<ExperimentReport> {
    plan.validate()?;
    let data = Dataset::load(&plan.data, &plan.encoder)?;
    execute_on(plan, &data, progress)
}

/// Runs every cell of `plan` on already loaded data.
pub fn execute_on(plan: &ExperimentPlan, data: &Dataset, progress: Progress<'_>) -> Result<ExperimentReport> {
    plan.validate()?;
    let labels = data.labels();
    let mut cells = Vec::new();
    let mut histories = Vec::new();
    for &seed in &plan.seeds {
        let split = split_edges(&data.graph, plan.edge_train_fraction, seed);
        for &variant in &plan.variants {
            let started = Instant::now();
            let embeddings: Result<ExportedEmbeddings, String> = match (&split, plan.train_config(variant, seed)) {
                (Err(e), _) => Err(format!("edge split: {e}")),
                (Ok(_), None) => data
                    .onehot
                    .clone()
                    .map(|f| ExportedEmbeddings { customer: f.customer, skill: f.skill, personalized: None })
                    .ok_or_else(|| "the one-hot variant needs node metadata".to_string()),
                (Ok((train, test)), Some(cfg)) => match train_with_validation(&cfg, train, Some(test)) {
                    Ok((params, mut history)) => {
                        history.wall_time_secs = started.elapsed().as_secs_f64();
                        histories.push(RunHistory { variant, seed, history });
                        export_for_rows(&params, train, &data.graph).map_err(|e| format!("export: {e}"))
                    }
                    Err(e) => Err(format!("training: {e}")),
                },
            };
            let train_secs = started.elapsed().as_secs_f64();
            let rows: Result<DownstreamSplit, String> =
                embeddings.and_then(|e| assemble_downstream(&e, &data.graph, seed).map_err(|e| format!("downstream rows: {e}")));
            for &kind in &plan.classifiers {
                let result = rows.as_ref().map_err(Clone::clone).and_then(|rows| {
                    let spec = plan.classifier_spec(kind, seed);
                    let clf = train_classifier(&spec, &rows.train, Some(&rows.val)).map_err(|e| format!("classifier: {e}"))?;
                    let mut report = evaluate(&clf, &rows.test).map_err(|e| format!("evaluate: {e}"))?;
                    report.model = variant.name().into();
                    report.seed = seed;
                    let bayes_ce = data.truth.as_ref().map(|t| bayes_ce(t, &labels, &rows.test.edge_ids));
                    Ok(CellMetrics { report, bayes_ce, train_secs })
                });
                match &result {
                    Ok(m) => progress(&format!(
                        "seed {seed} {:<13} {:<9} test CE {:.4}{}",
                        variant.name(),
                        kind.name(),
                        m.report.test_ce,
                        m.bayes_ce.map(|b| format!(" (Bayes {b:.4})")).unwrap_or_default()
                    )),
                    Err(e) => progress(&format!("seed {seed} {:<13} {:<9} FAILED: {e}", variant.name(), kind.name())),
                }
                cells.push(CellOutcome { variant, classifier: kind, seed, result });
            }
        }
    }
    Ok(ExperimentReport {
        plan: plan.clone(),
        config_hash: plan.config_hash(),
        artifact_version: artifact_version(),
        cells,
        histories,
    })
}

/// One with/without comparison for one classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationEntry {
    pub pair: AblationPair,
    pub classifier: ClassifierKind,
    pub with_ce: Vec<(u64, Option<f64>)>,
    pub without_ce: Vec<(u64, Option<f64>)>,
    pub median_with: Option<f64>,
    pub median_without: Option<f64>,
}

impl AblationEntry {
    /// `(without - with) / without` on the medians.
    pub fn relative_improvement(&self) -> Option<f64> {
        match (self.median_with, self.median_without) {
            (Some(w), Some(wo)) if wo > 0.0 => Some((wo - w) / wo),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub entries: Vec<AblationEntry>,
}

impl AblationReport {
    /// Pairs whose variants both ran in `report`.
    pub fn from_report(report: &ExperimentReport) -> Self {
        let ran = |v: Variant| report.plan.variants.contains(&v);
        let mut entries = Vec::new();
        for pair in ABLATION_PAIRS.into_iter().filter(|p| ran(p.with) && ran(p.without)) {
            for &classifier in &report.plan.classifiers {
                entries.push(AblationEntry {
                    pair,
                    classifier,
                    with_ce: report.seed_values(pair.with, classifier),
                    without_ce: report.seed_values(pair.without, classifier),
                    median_with: report.median_ce(pair.with, classifier),
                    median_without: report.median_ce(pair.without, classifier),
                });
            }
        }
        AblationReport { entries }
    }

    pub fn pairs(&self) -> Vec<AblationPair> {
        let mut out: Vec<AblationPair> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.pair) {
                out.push(e.pair);
            }
        }
        out
    }

    pub fn entry(&self, component: &str, classifier: ClassifierKind) -> Option<&AblationEntry> {
        self.entries.iter().find(|e| e.pair.component == component && e.classifier == classifier)
    }
}

/// The plan restricted to the backbone and the component variants it names.
pub fn ablation_plan(plan: &ExperimentPlan) -> Result<ExperimentPlan> {
    let pairs: Vec<AblationPair> = ABLATION_PAIRS.into_iter().filter(|p| plan.variants.contains(&p.with)).collect();
    if pairs.is_empty() {
        return Err(LabError::Config("ablation needs at least one of rgcn+per, rgcn+ec, rgcn+eatt".into()));
    }
    let variants = Variant::ALL
        .into_iter()
        .filter(|v| pairs.iter().any(|p| p.with == *v || p.without == *v))
        .collect();
    Ok(ExperimentPlan { variants, ..plan.clone() })
}

pub fn run_experiment(plan: &ExperimentPlan, out: &std::path::Path, progress: Progress<'_>) -> Result<ExperimentReport> {
    let report = execute(plan, progress)?;
    crate::report::write_experiment(&report, out)?;
    report.check()?;
    Ok(report)
}

pub fn run_ablation(
    plan: &ExperimentPlan,
    out: &std::path::Path,
    progress: Progress<'_>,
) -> Result<(ExperimentReport, AblationReport)> {
    let report = execute(&ablation_plan(plan)?, progress)?;
    let ablation = AblationReport::from_report(&report);
    crate::report::write_ablation(&report, &ablation, out)?;
    report.check()?;
    Ok((report, ablation))
}
