//! The `pdrfe` command line.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 when a
//! run fails.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use pdrfe_core::downstream::{assemble_downstream, evaluate, train_classifier};
use pdrfe_core::graph::split_edges;
use pdrfe_core::synth::{bayes_ce, context_free_ce, generate, SynthConfig};
use pdrfe_core::trainer::{export_for_rows, train_with_validation, TrainError};

use crate::checkpoint::{save_embeddings, Checkpoint};
use crate::data::{write_synth, Dataset};
use crate::error::{LabError, Result};
use crate::harness::{run_ablation, run_experiment};
use crate::io::{read_toml, write_csv, write_json};
use crate::plan::{ExperimentPlan, Variant};
use crate::report::{write_history, ABLATION_CSV, TABLE_CSV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "pdrfe", version, about = "Edge-featured graph representations for defect prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML file: a generator config for `gen`, an experiment plan otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "pdrfe-out")]
    pub out: PathBuf,
    /// Seed override; repeatable for `compare` and `ablate`.
    #[arg(long)]
    pub seed: Vec<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic interaction log with ground truth.
    Gen(Common),
    /// Train one representation model; writes a checkpoint and its history.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "pdrfe-nnconv")]
        variant: Variant,
    },
    /// Evaluate a checkpoint on the downstream defect task.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/checkpoint.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the model comparison table.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Restrict the plan to these variants; repeatable.
        #[arg(long)]
        variant: Vec<Variant>,
    },
    /// Run the component ablation against the RGCN backbone.
    Ablate(Common),
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen(c) => gen(&c),
        Command::Train { common, variant } => train(&common, variant),
        Command::Eval { common, checkpoint } => eval(&common, checkpoint),
        Command::Compare { common, variant } => compare(&common, &variant),
        Command::Ablate(c) => ablate(&c),
    }
}

fn single_seed(c: &Common) -> Result<Option<u64>> {
    match c.seed.as_slice() {
        [] => Ok(None),
        [s] => Ok(Some(*s)),
        _ => Err(LabError::Config("this command takes a single --seed".into())),
    }
}

fn load_plan(c: &Common) -> Result<ExperimentPlan> {
    let mut plan = match &c.config {
        Some(p) if !p.exists() => return Err(LabError::Config(format!("config file {} not found", p.display()))),
        Some(p) => ExperimentPlan::load(p)?,
        None => ExperimentPlan::default(),
    };
    if !c.seed.is_empty() {
        plan.seeds = c.seed.clone();
    }
    plan.validate()?;
    Ok(plan)
}

fn stderr_progress() -> impl FnMut(&str) {
    |line: &str| eprintln!("{line}")
}

fn gen(c: &Common) -> Result<()> {
    let mut cfg: SynthConfig = match &c.config {
        Some(p) if !p.exists() => return Err(LabError::Config(format!("config file {} not found", p.display()))),
        Some(p) => read_toml(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = single_seed(c)? {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| LabError::Config(e.to_string()))?;
    let data = generate(&cfg)?;
    write_synth(&c.out, &data)?;
    let labels = data.labels();
    let all: Vec<usize> = (0..labels.len()).collect();
    println!(
        "wrote {} interactions to {}; Bayes CE {:.4}, context-free CE {:.4}",
        data.interactions.len(),
        c.out.display(),
        bayes_ce(&data.truth, &labels, &all),
        context_free_ce(&data.truth, &labels, &all)
    );
    Ok(())
}

fn train(c: &Common, variant: Variant) -> Result<()> {
    let plan = load_plan(c)?;
    let seed = single_seed(c)?.unwrap_or(plan.seeds[0]);
    let cfg = plan
        .train_config(variant, seed)
        .ok_or_else(|| LabError::Config(format!("variant `{variant}` has no representation to train")))?;
    let data = Dataset::load(&plan.data, &plan.encoder)?;
    let (train_g, test_g) = split_edges(&data.graph, plan.edge_train_fraction, seed)?;
    let started = std::time::Instant::now();
    let outcome = train_with_validation(&cfg, &train_g, Some(&test_g));
    let (params, mut history) = match outcome {
        Ok(r) => r,
        Err(TrainError::Diverged(d)) => {
            let ckpt = Checkpoint::new((*d.params).clone(), Some(variant), seed, plan.config_hash());
            ckpt.save(&c.out.join("checkpoint.diverged.json"))?;
            write_history(&c.out, "history", variant.name(), seed, &d.history)?;
            return Err(TrainError::Diverged(d).into());
        }
        Err(e) => return Err(e.into()),
    };
    history.wall_time_secs = started.elapsed().as_secs_f64();
    write_history(&c.out, "history", variant.name(), seed, &history)?;
    let emb = export_for_rows(&params, &train_g, &data.graph)?;
    save_embeddings(&c.out.join("embeddings.json"), &emb)?;
    Checkpoint::new(params, Some(variant), seed, plan.config_hash()).save(&c.out.join("checkpoint.json"))?;
    println!(
        "trained {variant} (seed {seed}) for {} epochs, best epoch {:?}; wrote {}",
        history.epoch_train_loss.len(),
        history.best_epoch,
        c.out.display()
    );
    Ok(())
}

#[derive(serde::Serialize)]
struct EvalRow {
    model: String,
    classifier: &'static str,
    seed: u64,
    test_ce: f64,
    test_auc: Option<f64>,
    n_test: usize,
    bayes_ce: Option<f64>,
    config_hash: String,
    artifact_version: String,
}

fn eval(c: &Common, checkpoint: Option<PathBuf>) -> Result<()> {
    let plan = load_plan(c)?;
    let path = checkpoint.unwrap_or_else(|| c.out.join("checkpoint.json"));
    if !path.exists() {
        return Err(LabError::Config(format!("checkpoint {} not found", path.display())));
    }
    let ckpt = Checkpoint::load(&path)?;
    let seed = single_seed(c)?.unwrap_or(ckpt.seed);
    let data = Dataset::load(&plan.data, &plan.encoder)?;
    let (train_g, _) = split_edges(&data.graph, plan.edge_train_fraction, seed)?;
    let emb = export_for_rows(&ckpt.params, &train_g, &data.graph)?;
    let rows = assemble_downstream(&emb, &data.graph, seed)?;
    let labels = data.labels();
    let model = ckpt.variant.map_or("checkpoint".to_string(), |v| v.name().to_string());
    let mut out_rows = Vec::new();
    for &kind in &plan.classifiers {
        let clf = train_classifier(&plan.classifier_spec(kind, seed), &rows.train, Some(&rows.val))?;
        let mut report = evaluate(&clf, &rows.test)?;
        report.model = model.clone();
        report.seed = seed;
        write_json(&c.out.join("metrics").join(format!("{}.json", kind.name())), &report)?;
        let bayes = data.truth.as_ref().map(|t| bayes_ce(t, &labels, &rows.test.edge_ids));
        println!("{model} {:<9} test CE {:.4}{}", kind.name(), report.test_ce, bayes.map(|b| format!(" (Bayes {b:.4})")).unwrap_or_default());
        out_rows.push(EvalRow {
            model: model.clone(),
            classifier: kind.name(),
            seed,
            test_ce: report.test_ce,
            test_auc: report.test_auc,
            n_test: report.n_test,
            bayes_ce: bayes,
            config_hash: plan.config_hash(),
            artifact_version: crate::plan::artifact_version(),
        });
    }
    write_csv(&c.out.join("metrics.csv"), &out_rows)?;
    let violations = out_rows.iter().filter(|r| r.bayes_ce.is_some_and(|b| r.test_ce < b)).count();
    if violations > 0 {
        return Err(LabError::BayesViolation(violations));
    }
    Ok(())
}

fn compare(c: &Common, variants: &[Variant]) -> Result<()> {
    let mut plan = load_plan(c)?;
    if !variants.is_empty() {
        plan.variants = variants.to_vec();
    }
    let report = run_experiment(&plan, &c.out, &mut stderr_progress())?;
    print_failures(&report);
    println!("wrote {}", c.out.join(TABLE_CSV).display());
    print!("{}", std::fs::read_to_string(c.out.join(TABLE_CSV)).unwrap_or_default());
    Ok(())
}

fn ablate(c: &Common) -> Result<()> {
    let plan = load_plan(c)?;
    let (report, ablation) = run_ablation(&plan, &c.out, &mut stderr_progress())?;
    print_failures(&report);
    for e in &ablation.entries {
        println!(
            "{:<5} {:<9} with {} without {} improvement {}",
            e.pair.component,
            e.classifier.name(),
            fmt_opt(e.median_with),
            fmt_opt(e.median_without),
            e.relative_improvement().map_or("n/a".into(), |x| format!("{:.1}%", 100.0 * x))
        );
    }
    println!("wrote {}", c.out.join(ABLATION_CSV).display());
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("n/a".into(), |v| format!("{v:.4}"))
}

fn print_failures(report: &crate::harness::ExperimentReport) {
    for f in report.failures() {
        if let Err(e) = &f.result {
            eprintln!("cell {} / {} / seed {} failed: {e}", f.variant, f.classifier.name(), f.seed);
        }
    }
}
