//! End-to-end study execution: validate, sample, balance, Monte Carlo, emit.
//!
//! Every artifact is rendered in memory before anything is written. If a write
//! fails, files already written by this run are removed so the output
//! directory never holds a partial set.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};

use crate::balance::{balance_table, BalanceReport, BalanceTableRow};
use crate::config::to_toml;
use crate::montecarlo::{run_monte_carlo, sample_study_cohorts, MonteCarloOutput, RunOptions};
use crate::report::{self, FileDigest, RunManifest};
use crate::study::{StudyConfig, StudyPlan};
use crate::Error;

/// Parameter-based balance report against the reference population, with the
/// table rows (covariates plus aggregates) in display order.
pub fn balance_artifacts(plan: &StudyPlan) -> Result<(BalanceReport, Vec<BalanceTableRow>), Error> {
    let config = &plan.config;
    let reference = &config.populations[plan.reference];
    let report = BalanceReport::from_specs(reference, &config.populations)?;
    let rows = balance_table(
        &report,
        &config.scenarios,
        &config.weightings,
        &config.reference_weighting,
        &plan.analytic_spec().name,
    );
    Ok((report, rows))
}

/// Files of a completed run, ready to be written.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedStudy {
    pub files: Vec<(String, Vec<u8>)>,
    pub warnings: Vec<String>,
    pub monte_carlo: Option<MonteCarloOutput>,
}

type Files = Vec<(String, Vec<u8>)>;

fn render_common(plan: &StudyPlan) -> Result<(Files, BalanceReport, Vec<BalanceTableRow>), Error> {
    let (report, rows) = balance_artifacts(plan)?;
    let cohorts = sample_study_cohorts(plan, 0)?;
    let files = vec![
        (
            report::BALANCE_TABLE.to_string(),
            report::balance_table_csv(&report, &rows),
        ),
        (
            report::LOVE_PLOT_DATA.to_string(),
            report::love_plot_csv(&report.love_plot_data()),
        ),
        (
            report::POPULATION_TABLE.to_string(),
            report::population_table_csv(&cohorts),
        ),
        (report::SKIP_LOG.to_string(), report::skip_log_csv(&plan.skips)),
        (report::RESOLVED_CONFIG.to_string(), to_toml(&plan.config).into_bytes()),
    ];
    Ok((files, report, rows))
}

/// Runs the whole study in memory.
pub fn render_study(config: &StudyConfig, opts: &RunOptions) -> Result<RenderedStudy, Error> {
    let plan = config.plan()?;
    let (mut files, report, rows) = render_common(&plan)?;
    let mc = run_monte_carlo(config, opts)?;
    files.push((
        report::SUMMARY_TABLE.to_string(),
        report::summary_table_csv(&mc.summary),
    ));
    files.push((report::BIAS_DRAWS.to_string(), report::bias_draws_csv(&mc.draws)));
    if opts.diagnostics {
        files.push((
            report::DIAGNOSTICS.to_string(),
            report::diagnostics_csv(&mc.diagnostics),
        ));
    }
    files.push((
        report::TEXT_TABLES.to_string(),
        report::text_tables(&report, &rows, &mc.summary).into_bytes(),
    ));
    Ok(RenderedStudy {
        files,
        warnings: mc.warnings.clone(),
        monte_carlo: Some(mc),
    })
}

/// Balance and population tables only; no outcomes are simulated.
pub fn render_balance(config: &StudyConfig) -> Result<RenderedStudy, Error> {
    let plan = config.plan()?;
    let (files, _, _) = render_common(&plan)?;
    Ok(RenderedStudy {
        files,
        warnings: Vec::new(),
        monte_carlo: None,
    })
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `files` and then the manifest into `out_dir`. On failure every file
/// written here is removed again.
pub fn write_outputs(
    out_dir: &Path,
    files: &[(String, Vec<u8>)],
    manifest: impl FnOnce(Vec<FileDigest>) -> RunManifest,
) -> Result<RunManifest, Error> {
    fs::create_dir_all(out_dir).map_err(|e| io_error(out_dir, e))?;
    let mut written: Vec<PathBuf> = Vec::new();
    let result = (|| {
        let mut digests = Vec::with_capacity(files.len());
        for (name, bytes) in files {
            let path = out_dir.join(name);
            written.push(path.clone());
            fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
            digests.push(FileDigest {
                name: name.clone(),
                bytes: bytes.len(),
                sha256: report::sha256_hex(bytes),
            });
        }
        let manifest = manifest(digests);
        let path = out_dir.join(report::MANIFEST);
        written.push(path.clone());
        fs::write(&path, manifest.to_json()).map_err(|e| io_error(&path, e))?;
        Ok(manifest)
    })();
    if result.is_err() {
        for path in &written {
            let _ = fs::remove_file(path);
        }
    }
    result
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn finish(
    command: &str,
    config: &StudyConfig,
    diagnostics: bool,
    started_at: String,
    rendered: &RenderedStudy,
    out_dir: &Path,
) -> Result<RunManifest, Error> {
    let plan = config.plan()?;
    write_outputs(out_dir, &rendered.files, |files| RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        master_seed: config.master_seed,
        replications: config.replications,
        diagnostics,
        started_at,
        finished_at: now(),
        config: to_toml(config),
        warnings: rendered.warnings.clone(),
        skipped_pairings: report::skip_entries(&plan.skips),
        files,
    })
}

/// Runs the full study and writes every artifact plus the manifest.
pub fn run_study(config: &StudyConfig, opts: &RunOptions, out_dir: &Path) -> Result<RunManifest, Error> {
    let started_at = now();
    let rendered = render_study(config, opts)?;
    finish("run", config, opts.diagnostics, started_at, &rendered, out_dir)
}

/// Writes the balance, Love-plot and population tables plus the manifest.
pub fn run_balance(config: &StudyConfig, out_dir: &Path) -> Result<RunManifest, Error> {
    let started_at = now();
    let rendered = render_balance(config)?;
    finish("balance", config, false, started_at, &rendered, out_dir)
}
