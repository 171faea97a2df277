//! Report files. Every CSV row carries the plan's config hash and the
//! artifact version so results stay attributable after they leave the run
//! directory.

use std::fmt::Write as _;
use std::path::Path;

use pdrfe_core::trainer::TrainHistory;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::harness::{AblationReport, ExperimentReport, RunHistory};
use crate::io::{write_csv, write_json, write_text};

pub const CELLS_CSV: &str = "cells.csv";
pub const TABLE_CSV: &str = "table.csv";
pub const CHART_SVG: &str = "chart.svg";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const ABLATION_SEEDS_CSV: &str = "ablation_seeds.csv";
pub const ABLATION_SVG: &str = "ablation.svg";
pub const PLAN_TOML: &str = "plan.toml";

/// Baselines of the original comparison that this tool does not train.
pub const NOT_IMPLEMENTED: [&str; 2] = ["PinSage", "Revised PinSage"];

#[derive(Serialize)]
struct CellRow<'a> {
    config_hash: &'a str,
    artifact_version: &'a str,
    seed: u64,
    variant: &'static str,
    legend: &'static str,
    classifier: &'static str,
    status: &'static str,
    test_ce: Option<f64>,
    test_auc: Option<f64>,
    positive_rate: Option<f64>,
    n_test: Option<usize>,
    bayes_ce: Option<f64>,
    bayes_ok: Option<bool>,
    train_secs: Option<f64>,
    error: &'a str,
}

fn cell_rows(r: &ExperimentReport) -> Vec<CellRow<'_>> {
    r.cells
        .iter()
        .map(|c| {
            let m = c.result.as_ref().ok();
            CellRow {
                config_hash: &r.config_hash,
                artifact_version: &r.artifact_version,
                seed: c.seed,
                variant: c.variant.name(),
                legend: c.variant.legend(),
                classifier: c.classifier.name(),
                status: if m.is_some() { "ok" } else { "failed" },
                test_ce: m.map(|m| m.report.test_ce),
                test_auc: m.and_then(|m| m.report.test_auc),
                positive_rate: m.map(|m| m.report.positive_rate),
                n_test: m.map(|m| m.report.n_test),
                bayes_ce: m.and_then(|m| m.bayes_ce),
                bayes_ok: m.and_then(|m| m.bayes_ok()),
                train_secs: m.map(|m| m.train_secs),
                error: c.result.as_ref().err().map_or("", String::as_str),
            }
        })
        .collect()
}

fn seeds_field(r: &ExperimentReport) -> String {
    r.plan.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" ")
}

/// Model × classifier table of seed-median test CE.
pub fn comparison_table(r: &ExperimentReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["model".to_string(), "variant".into()];
    header.extend(r.plan.classifiers.iter().map(|c| format!("{}_median_ce", c.name())));
    header.extend(["seeds".into(), "config_hash".into(), "artifact_version".into()]);
    let seeds = seeds_field(r);
    let mut records = vec![header];
    for name in NOT_IMPLEMENTED {
        let mut row = vec![name.to_string(), String::new()];
        row.extend(r.plan.classifiers.iter().map(|_| "not implemented".to_string()));
        row.extend([seeds.clone(), r.config_hash.clone(), r.artifact_version.clone()]);
        records.push(row);
    }
    for &v in &r.plan.variants {
        let mut row = vec![v.legend().to_string(), v.name().to_string()];
        row.extend(r.plan.classifiers.iter().map(|&c| r.median_ce(v, c).map_or("failed".into(), |x| x.to_string())));
        row.extend([seeds.clone(), r.config_hash.clone(), r.artifact_version.clone()]);
        records.push(row);
    }
    for rec in records {
        w.write_record(&rec).map_err(|e| LabError::Config(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| LabError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Serialize)]
struct StepRow {
    step: usize,
    loss: f64,
}

#[derive(Serialize)]
struct HistorySummary<'a> {
    variant: &'static str,
    seed: u64,
    steps: usize,
    final_step_loss: Option<f64>,
    #[serde(flatten)]
    history: HistoryView<'a>,
}

#[derive(Serialize)]
struct HistoryView<'a> {
    epoch_train_loss: &'a [f64],
    epoch_val_loss: &'a [f64],
    best_epoch: Option<usize>,
    wall_time_secs: f64,
}

/// Writes `history.csv` (step, loss) and `history.json` under `stem`.
pub fn write_history(dir: &Path, stem: &str, variant: &'static str, seed: u64, h: &TrainHistory) -> Result<()> {
    let steps: Vec<StepRow> = h.step_loss.iter().enumerate().map(|(step, &loss)| StepRow { step, loss }).collect();
    write_csv(&dir.join(format!("{stem}.csv")), &steps)?;
    let summary = HistorySummary {
        variant,
        seed,
        steps: h.step_loss.len(),
        final_step_loss: h.step_loss.last().copied(),
        history: HistoryView {
            epoch_train_loss: &h.epoch_train_loss,
            epoch_val_loss: &h.epoch_val_loss,
            best_epoch: h.best_epoch,
            wall_time_secs: h.wall_time_secs,
        },
    };
    write_json(&dir.join(format!("{stem}.json")), &summary)
}

fn file_stem(name: &str) -> String {
    name.replace('+', "_")
}

fn write_common(r: &ExperimentReport, out: &Path) -> Result<()> {
    write_csv(&out.join(CELLS_CSV), &cell_rows(r))?;
    write_text(&out.join(PLAN_TOML), &r.plan.to_toml())?;
    for c in &r.cells {
        if let Ok(m) = &c.result {
            let name = format!("{}_{}_seed{}.json", file_stem(c.variant.name()), c.classifier.name(), c.seed);
            write_json(&out.join("metrics").join(name), &m.report)?;
        }
    }
    for RunHistory { variant, seed, history } in &r.histories {
        let stem = format!("{}_seed{seed}", file_stem(variant.name()));
        write_history(&out.join("history"), &stem, variant.name(), *seed, history)?;
    }
    Ok(())
}

pub fn write_experiment(r: &ExperimentReport, out: &Path) -> Result<()> {
    write_common(r, out)?;
    write_text(&out.join(TABLE_CSV), &comparison_table(r)?)?;
    let groups = r
        .plan
        .variants
        .iter()
        .map(|&v| {
            let bars = r.plan.classifiers.iter().filter_map(|&c| r.median_ce(v, c).map(|x| (c.name().to_string(), x))).collect();
            (v.legend().to_string(), bars)
        })
        .collect::<Vec<_>>();
    let chart = bar_chart("Median test cross-entropy (lower is better)", &groups, Some((std::f64::consts::LN_2, "ln 2")));
    write_text(&out.join(CHART_SVG), &chart)
}

#[derive(Serialize)]
struct AblationRow<'a> {
    config_hash: &'a str,
    artifact_version: &'a str,
    seeds: &'a str,
    component: &'static str,
    with: &'static str,
    without: &'static str,
    classifier: &'static str,
    median_with: Option<f64>,
    median_without: Option<f64>,
    relative_improvement: Option<f64>,
}

#[derive(Serialize)]
struct AblationSeedRow<'a> {
    config_hash: &'a str,
    artifact_version: &'a str,
    seed: u64,
    component: &'static str,
    classifier: &'static str,
    with_ce: Option<f64>,
    without_ce: Option<f64>,
}

pub fn write_ablation(r: &ExperimentReport, a: &AblationReport, out: &Path) -> Result<()> {
    write_common(r, out)?;
    let seeds = seeds_field(r);
    let rows: Vec<AblationRow> = a
        .entries
        .iter()
        .map(|e| AblationRow {
            config_hash: &r.config_hash,
            artifact_version: &r.artifact_version,
            seeds: &seeds,
            component: e.pair.component,
            with: e.pair.with.name(),
            without: e.pair.without.name(),
            classifier: e.classifier.name(),
            median_with: e.median_with,
            median_without: e.median_without,
            relative_improvement: e.relative_improvement(),
        })
        .collect();
    write_csv(&out.join(ABLATION_CSV), &rows)?;
    let mut raw = Vec::new();
    for e in &a.entries {
        for ((seed, with_ce), (_, without_ce)) in e.with_ce.iter().zip(&e.without_ce) {
            raw.push(AblationSeedRow {
                config_hash: &r.config_hash,
                artifact_version: &r.artifact_version,
                seed: *seed,
                component: e.pair.component,
                classifier: e.classifier.name(),
                with_ce: *with_ce,
                without_ce: *without_ce,
            });
        }
    }
    write_csv(&out.join(ABLATION_SEEDS_CSV), &raw)?;
    let groups = a
        .pairs()
        .iter()
        .map(|p| {
            let bars = a
                .entries
                .iter()
                .filter(|e| e.pair == *p)
                .filter_map(|e| e.relative_improvement().map(|x| (e.classifier.name().to_string(), 100.0 * x)))
                .collect();
            (format!("+{}", p.component), bars)
        })
        .collect::<Vec<_>>();
    write_text(&out.join(ABLATION_SVG), &bar_chart("Relative CE improvement over RGCN (%)", &groups, None))
}

const PALETTE: [&str; 4] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped vertical bar chart as standalone SVG. Each group is a label with
/// `(series, value)` bars; an optional horizontal reference line is drawn.
pub fn bar_chart(title: &str, groups: &[(String, Vec<(String, f64)>)], reference: Option<(f64, &str)>) -> String {
    let series: Vec<&str> = {
        let mut s: Vec<&str> = Vec::new();
        for (_, bars) in groups {
            for (name, _) in bars {
                if !s.contains(&name.as_str()) {
                    s.push(name);
                }
            }
        }
        s
    };
    let values = groups.iter().flat_map(|(_, b)| b.iter().map(|(_, v)| *v)).chain(reference.map(|r| r.0));
    let (lo, hi) = values.fold((0.0f64, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = if hi - lo > 0.0 { (hi - lo) * 1.1 } else { 1.0 };
    let top = if hi > 0.0 { hi + 0.05 * span } else { 0.05 * span };
    let (left, plot_h, bar_w, gap) = (60.0, 260.0, 22.0, 26.0);
    let group_w = bar_w * series.len().max(1) as f64 + gap;
    let width = left + group_w * groups.len().max(1) as f64 + 20.0;
    let height = plot_h + 130.0;
    let y = |v: f64| 40.0 + (top - v) / span * plot_h;
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{left}" y="20" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(svg, r#"<line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#, y(0.0), width - 20.0, y(0.0));
    let _ = writeln!(svg, r#"<line x1="{left}" y1="40" x2="{left}" y2="{:.1}" stroke="black"/>"#, 40.0 + plot_h);
    for i in 0..=4 {
        let v = top - span * i as f64 / 4.0;
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"#, left - 4.0, y(v) + 4.0);
    }
    for (g, (label, bars)) in groups.iter().enumerate() {
        let x0 = left + gap / 2.0 + g as f64 * group_w;
        for (name, v) in bars {
            let k = series.iter().position(|s| s == name).unwrap_or(0);
            let x = x0 + k as f64 * bar_w;
            let (y0, y1) = (y(v.max(0.0)), y(v.min(0.0)));
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.1}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>{}: {v:.4}</title></rect>"#,
                bar_w - 2.0,
                (y1 - y0).max(0.5),
                PALETTE[k % PALETTE.len()],
                escape(name)
            );
        }
        let cx = x0 + bar_w * series.len() as f64 / 2.0;
        let ly = 40.0 + plot_h + 14.0;
        let _ = writeln!(svg, r#"<text x="{cx:.1}" y="{ly:.1}" text-anchor="end" transform="rotate(-35 {cx:.1} {ly:.1})">{}</text>"#, escape(label));
    }
    if let Some((v, label)) = reference {
        let _ = writeln!(svg, r#"<line x1="{left}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="gray" stroke-dasharray="4 3"/>"#, y(v), width - 20.0);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end" fill="gray">{}</text>"#, width - 22.0, y(v) - 3.0, escape(label));
    }
    for (k, name) in series.iter().enumerate() {
        let lx = left + 10.0 + k as f64 * 90.0;
        let ly = height - 12.0;
        let _ = writeln!(svg, r#"<rect x="{lx:.1}" y="{:.1}" width="10" height="10" fill="{}"/>"#, ly - 9.0, PALETTE[k % PALETTE.len()]);
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#, lx + 14.0, escape(name));
    }
    svg.push_str("</svg>\n");
    svg
}
