//! Rendering of output artifacts: CSV files at full precision, fixed-width
//! text tables rounded to three decimals, and the run manifest.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::balance::{BalanceReport, BalanceRowKind, BalanceTableRow, LovePlotRow};
use crate::covariate::Covariate;
use crate::montecarlo::{BiasDraw, FitDiagnostics, SummaryTable};
use crate::population::Cohort;
use crate::study::SkipRecord;

/// Cell token for a structurally unmeasured characteristic in the population table.
pub const UNMEASURED_CELL: &str = "—";

pub const SUMMARY_TABLE: &str = "summary_table.csv";
pub const BIAS_DRAWS: &str = "bias_draws.csv";
pub const SKIP_LOG: &str = "skip_log.csv";
pub const BALANCE_TABLE: &str = "balance_table.csv";
pub const LOVE_PLOT_DATA: &str = "love_plot_data.csv";
pub const POPULATION_TABLE: &str = "population_table.csv";
pub const DIAGNOSTICS: &str = "diagnostics.csv";
pub const TEXT_TABLES: &str = "summary_tables.txt";
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const MANIFEST: &str = "manifest.json";

/// Shortest text that parses back to the same `f64`.
pub fn full(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(full).unwrap_or_default()
}

fn csv<I, R>(header: &[&str], rows: I) -> Vec<u8>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn summary_table_csv(table: &SummaryTable) -> Vec<u8> {
    csv(
        &[
            "scenario",
            "effect_scale",
            "weighting_model",
            "target",
            "pate_mean",
            "pate_sd",
            "bias_mean",
            "bias_sd",
        ],
        table.rows.iter().map(|r| {
            [
                r.scenario.clone(),
                full(r.effect_scale),
                r.estimator.weighting_label().to_string(),
                r.estimator.target_label().to_string(),
                full(r.pate_mean),
                full(r.pate_sd),
                full(r.bias_mean),
                full(r.bias_sd),
            ]
        }),
    )
}

pub fn bias_draws_csv(draws: &[BiasDraw]) -> Vec<u8> {
    csv(
        &["scenario", "effect_scale", "weighting_model", "target", "rep", "bias"],
        draws.iter().map(|d| {
            [
                d.scenario.clone(),
                full(d.effect_scale),
                d.estimator.weighting_label().to_string(),
                d.estimator.target_label().to_string(),
                d.rep.to_string(),
                full(d.bias),
            ]
        }),
    )
}

pub fn skip_log_csv(skips: &[SkipRecord]) -> Vec<u8> {
    csv(
        &["weighting_model", "target", "reason"],
        skips
            .iter()
            .map(|s| [s.weighting.clone(), s.target.clone(), s.reason.clone()]),
    )
}

/// Wide balance table: one row per covariate, then the aggregate rows. Covariate
/// rows leave `scenario` and `weighting_model` empty; aggregate rows have
/// `row = aggregate`. Blank cells mean unmeasured (or not applicable).
pub fn balance_table_csv(report: &BalanceReport, rows: &[BalanceTableRow]) -> Vec<u8> {
    let mut header = vec!["row", "scenario", "weighting_model"];
    header.extend(report.populations.iter().map(String::as_str));
    csv(
        &header,
        rows.iter().map(|r| {
            let mut out = match &r.kind {
                BalanceRowKind::Covariate(c) => vec![c.name().to_string(), String::new(), String::new()],
                BalanceRowKind::Aggregate { scenario, weighting } => {
                    vec!["aggregate".to_string(), scenario.clone(), weighting.clone()]
                }
            };
            out.extend(r.values.iter().map(|v| opt(*v)));
            out
        }),
    )
}

pub fn love_plot_csv(rows: &[LovePlotRow]) -> Vec<u8> {
    csv(
        &["population", "covariate", "signed_smd", "abs_smd"],
        rows.iter().map(|r| {
            [
                r.population.clone(),
                r.covariate.name().to_string(),
                opt(r.signed_smd),
                opt(r.abs_smd),
            ]
        }),
    )
}

fn count_cell(count: usize, n: usize) -> String {
    let pct = if n == 0 { 0.0 } else { 100.0 * count as f64 / n as f64 };
    format!("{count} ({pct:.1}%)")
}

/// Characteristic rows of the population table: label and one cell per cohort.
pub fn population_rows(cohorts: &[Cohort]) -> Vec<(String, Vec<String>)> {
    let mut rows = Vec::new();
    rows.push((
        "N (simulated)".to_string(),
        cohorts.iter().map(|c| c.len().to_string()).collect(),
    ));
    rows.push((
        Covariate::Age.label().to_string(),
        cohorts
            .iter()
            .map(|c| {
                let m = crate::stats::mean(c.age()).unwrap_or(f64::NAN);
                format!("{m:.1} ({:.1})", crate::stats::sample_sd(c.age()))
            })
            .collect(),
    ));
    let binary_row = |c: Covariate| -> Vec<String> {
        cohorts
            .iter()
            .map(|k| {
                k.count(c)
                    .map_or_else(|| UNMEASURED_CELL.to_string(), |x| count_cell(x, k.len()))
            })
            .collect()
    };
    rows.push((Covariate::Female.label().to_string(), binary_row(Covariate::Female)));
    rows.push((
        "Race: White".to_string(),
        cohorts
            .iter()
            .map(
                |k| match (k.count(Covariate::RaceBlack), k.count(Covariate::RaceOther)) {
                    (Some(b), Some(o)) => count_cell(k.len() - b - o, k.len()),
                    _ => UNMEASURED_CELL.to_string(),
                },
            )
            .collect(),
    ));
    for c in &Covariate::BINARY[1..] {
        rows.push((c.label().to_string(), binary_row(*c)));
    }
    rows
}

pub fn population_table_csv(cohorts: &[Cohort]) -> Vec<u8> {
    let mut header = vec!["characteristic"];
    header.extend(cohorts.iter().map(Cohort::spec_name));
    csv(
        &header,
        population_rows(cohorts).into_iter().map(|(label, cells)| {
            let mut out = vec![label];
            out.extend(cells);
            out
        }),
    )
}

pub fn diagnostics_csv(fits: &[FitDiagnostics]) -> Vec<u8> {
    let mut header = vec![
        "rep",
        "weighting_model",
        "target",
        "converged",
        "iterations",
        "max_abs_score",
        "intercept",
    ];
    let coef_names: Vec<String> = Covariate::ALL.iter().map(|c| format!("coef_{}", c.name())).collect();
    header.extend(coef_names.iter().map(String::as_str));
    header.extend(["ess", "min_weight", "max_weight", "max_abs_weighted_smd"]);
    csv(
        &header,
        fits.iter().map(|f| {
            let mut row = vec![
                f.rep_index.to_string(),
                f.weighting.clone(),
                f.target.clone(),
                f.converged.to_string(),
                f.iterations.to_string(),
                full(f.max_abs_score),
                full(f.intercept),
            ];
            row.extend(
                Covariate::ALL
                    .iter()
                    .map(|c| opt(f.coefficients.iter().find(|(k, _)| k == c).map(|(_, v)| *v))),
            );
            row.extend([
                full(f.ess),
                full(f.min_weight),
                full(f.max_weight),
                full(f.max_abs_weighted_smd),
            ]);
            row
        }),
    )
}

fn pad_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                let fill = w - c.chars().count();
                if i == 0 {
                    format!("{c}{}", " ".repeat(fill))
                } else {
                    format!("{}{c}", " ".repeat(fill))
                }
            })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

fn three(v: f64) -> String {
    // avoid printing "-0.000"
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".to_string()
    } else {
        s
    }
}

/// Balance table and Monte Carlo summaries rounded to three decimals.
pub fn text_tables(report: &BalanceReport, balance_rows: &[BalanceTableRow], summary: &SummaryTable) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "Standardized mean differences relative to {}\n\n",
        report.reference_name
    ));
    let mut header = vec![String::new()];
    header.extend(report.populations.iter().cloned());
    let rows: Vec<Vec<String>> = balance_rows
        .iter()
        .map(|r| {
            let mut cells = vec![match &r.kind {
                BalanceRowKind::Covariate(c) => c.label().to_string(),
                BalanceRowKind::Aggregate { scenario, weighting } => format!("Sum over {scenario} ({weighting})"),
            }];
            cells.extend(r.values.iter().map(|v| v.map(three).unwrap_or_default()));
            cells
        })
        .collect();
    out.push_str(&pad_table(&header, &rows));

    let header: Vec<String> = ["Weighting", "Target", "PATE mean", "PATE SD", "Bias mean", "Bias SD"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut blocks: Vec<(&str, f64)> = Vec::new();
    for r in &summary.rows {
        if !blocks.iter().any(|(s, k)| *s == r.scenario && *k == r.effect_scale) {
            blocks.push((&r.scenario, r.effect_scale));
        }
    }
    for (scenario, k) in blocks {
        let rows: Vec<Vec<String>> = summary
            .rows
            .iter()
            .filter(|r| r.scenario == scenario && r.effect_scale == k)
            .map(|r| {
                vec![
                    r.estimator.weighting_label().to_string(),
                    r.estimator.target_label().to_string(),
                    three(r.pate_mean),
                    three(r.pate_sd),
                    three(r.bias_mean),
                    three(r.bias_sd),
                ]
            })
            .collect();
        let reps = summary.rows.first().map_or(0, |r| r.replications);
        out.push_str(&format!(
            "\nScenario {scenario}, effect scale {k} ({reps} replications)\n\n"
        ));
        out.push_str(&pad_table(&header, &rows));
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub master_seed: u64,
    pub replications: usize,
    pub diagnostics: bool,
    pub started_at: String,
    pub finished_at: String,
    /// Resolved configuration, identical to the emitted TOML file.
    pub config: String,
    pub warnings: Vec<String>,
    pub skipped_pairings: Vec<SkipEntry>,
    pub files: Vec<FileDigest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkipEntry {
    pub weighting_model: String,
    pub target: String,
    pub reason: String,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

pub fn skip_entries(skips: &[SkipRecord]) -> Vec<SkipEntry> {
    skips
        .iter()
        .map(|s| SkipEntry {
            weighting_model: s.weighting.clone(),
            target: s.target.clone(),
            reason: s.reason.clone(),
        })
        .collect()
}
