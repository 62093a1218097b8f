//! Summary JSON and plot-data emission for a stored experiment.

use std::path::Path;

use imp_rg_core::imp::{identify_winning_tickets, ImpTrace};
use imp_rg_core::rg::{
    detect_critical_region, fit_power_law, sigma_report, CriticalRegion, Direction, PowerLawFit,
};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::harness::{self, AVERAGED_DIR, RUN_FILE, STATS_FILE, TRACE_FILE, TRANSFER_FILE};
use crate::io::{self, StatsRow};
use crate::{HarnessError, FORMAT_VERSION};

pub const SUMMARY_FILE: &str = "summary.json";
pub const PLOTS_DIR: &str = "plots";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawSummary {
    pub d_l: f64,
    pub d_c: f64,
    pub gamma: f64,
    pub r2: f64,
    pub slope_stderr: f64,
    pub points: usize,
}

impl From<&PowerLawFit> for PowerLawSummary {
    fn from(fit: &PowerLawFit) -> Self {
        Self {
            d_l: fit.region.d_l,
            d_c: fit.region.d_c,
            gamma: fit.gamma,
            r2: fit.r2,
            slope_stderr: fit.slope_stderr,
            points: fit.points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaEntry {
    pub layer: usize,
    pub lambda: f64,
    pub stderr: f64,
    pub sigma: f64,
    pub class: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ticket {
    pub iter: usize,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedRun {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunsSummary {
    pub requested: usize,
    pub completed: usize,
    pub failed: Vec<FailedRun>,
    /// False when any run failed and the averages cover fewer than
    /// `requested` runs.
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub format_version: String,
    pub config_echo: ExperimentConfig,
    pub runs: RunsSummary,
    pub full_model_loss: Option<f64>,
    /// Absent when disabled, when no critical region exists or when the fit
    /// failed; see `notes`.
    pub power_law: Option<PowerLawSummary>,
    pub sigma: Option<Vec<SigmaEntry>>,
    pub tickets: Vec<Ticket>,
    pub notes: Vec<String>,
}

/// Analyses of an averaged trace, shared by the summary and the plots.
struct Analysis {
    fit: Option<PowerLawFit>,
    sigma: Option<Vec<SigmaEntry>>,
    tickets: Vec<Ticket>,
    notes: Vec<String>,
}

fn analyze_trace(config: &ExperimentConfig, trace: &ImpTrace) -> Result<Analysis, HarnessError> {
    let mut notes = Vec::new();
    let fit = if config.analysis.power_law {
        let region: Option<CriticalRegion> = match config.region_override()? {
            Some(r) => Some(r),
            None => match detect_critical_region(trace, config.region_rule()) {
                Ok(r) => r,
                Err(e) => {
                    notes.push(format!("power_law: {e}"));
                    None
                }
            },
        };
        match region {
            Some(r) => match fit_power_law(trace, r) {
                Ok(fit) => Some(fit),
                Err(e) => {
                    notes.push(format!("power_law: {e}"));
                    None
                }
            },
            None => {
                if notes.is_empty() {
                    notes.push("power_law: no critical region".into());
                }
                None
            }
        }
    } else {
        None
    };
    let sigma = if config.analysis.sigma {
        match sigma_report(
            trace,
            config.analysis.marginal_tolerance,
            config.analysis.lambda_estimator,
        ) {
            Ok(report) => Some(
                report
                    .layers
                    .iter()
                    .map(|l| SigmaEntry {
                        layer: l.layer,
                        lambda: l.lambda,
                        stderr: l.stderr,
                        sigma: l.sigma,
                        class: l.class,
                    })
                    .collect(),
            ),
            Err(e) => {
                notes.push(format!("sigma: {e}"));
                None
            }
        }
    } else {
        None
    };
    let tickets = match trace.full_model_loss() {
        Some(full) => identify_winning_tickets(trace, full, config.analysis.ticket_tolerance)?
            .into_iter()
            .map(|(iter, density)| Ticket { iter, density })
            .collect(),
        None => Vec::new(),
    };
    Ok(Analysis {
        fit,
        sigma,
        tickets,
        notes,
    })
}

fn runs_summary(config: &ExperimentConfig, dir: &Path) -> Result<RunsSummary, HarnessError> {
    let mut failed = Vec::new();
    let mut completed = 0;
    for index in 0..config.run.repeats {
        let status: harness::RunStatus =
            io::read_json(&harness::run_dir(dir, index).join(RUN_FILE))?;
        match status.error {
            Some(error) => failed.push(FailedRun {
                seed: status.seed,
                error,
            }),
            None => completed += 1,
        }
    }
    Ok(RunsSummary {
        requested: config.run.repeats,
        completed,
        complete: failed.is_empty(),
        failed,
    })
}

fn averaged_trace(config: &ExperimentConfig, dir: &Path) -> Result<ImpTrace, HarnessError> {
    let records = io::read_trace(&dir.join(AVERAGED_DIR).join(TRACE_FILE))?;
    Ok(ImpTrace {
        records,
        masks: Vec::new(),
        init_fingerprint: 0,
        config: config.imp_config(config.run.seed)?,
    })
}

/// Runs the enabled analyses on a stored experiment without writing.
pub fn analyze(dir: &Path) -> Result<Summary, HarnessError> {
    let config = harness::load_config(dir)?;
    let trace = averaged_trace(&config, dir)?;
    Ok(build_summary(
        &config,
        dir,
        &trace,
        analyze_trace(&config, &trace)?,
    )?)
}

fn build_summary(
    config: &ExperimentConfig,
    dir: &Path,
    trace: &ImpTrace,
    analysis: Analysis,
) -> Result<Summary, HarnessError> {
    Ok(Summary {
        format_version: FORMAT_VERSION.into(),
        config_echo: config.clone(),
        runs: runs_summary(config, dir)?,
        full_model_loss: trace.full_model_loss(),
        power_law: analysis.fit.as_ref().map(PowerLawSummary::from),
        sigma: analysis.sigma,
        tickets: analysis.tickets,
        notes: analysis.notes,
    })
}

/// Writes `summary.json` and the plot tables under `plots/`:
/// `loss_vs_density.csv` always, `magnitude_fractions.csv` with the sigma
/// analysis, `power_law.csv` with a successful fit and `transfer.csv` when a
/// comparison table exists.
pub fn emit_report(dir: &Path) -> Result<Summary, HarnessError> {
    let config = harness::load_config(dir)?;
    let trace = averaged_trace(&config, dir)?;
    let analysis = analyze_trace(&config, &trace)?;
    let plots = dir.join(PLOTS_DIR);
    io::create_dir(&plots)?;

    let stats_path = dir.join(AVERAGED_DIR).join(STATS_FILE);
    let stderr: Vec<f64> = if stats_path.exists() {
        read_loss_stderr(&stats_path)?
    } else {
        vec![0.0; trace.records.len()]
    };
    let rows: Vec<Vec<f64>> = trace
        .records
        .iter()
        .zip(&stderr)
        .map(|(r, s)| vec![r.iteration as f64, r.density, r.final_loss, *s])
        .collect();
    io::write_table(
        &plots.join("loss_vs_density.csv"),
        &["iter", "density", "loss_mean", "loss_stderr"],
        &rows,
    )?;

    if analysis.sigma.is_some() {
        let layers = trace.num_layers();
        let names: Vec<String> = (0..layers).map(|l| format!("m_frac_layer{l}")).collect();
        let mut header = vec!["iter", "density"];
        header.extend(names.iter().map(String::as_str));
        let rows: Vec<Vec<f64>> = trace
            .records
            .iter()
            .map(|r| {
                let mut row = vec![r.iteration as f64, r.density];
                row.extend(&r.magnitude_fractions);
                row
            })
            .collect();
        io::write_table(&plots.join("magnitude_fractions.csv"), &header, &rows)?;
    }

    if let Some(fit) = &analysis.fit {
        let rows: Vec<Vec<f64>> = trace
            .records
            .iter()
            .filter(|r| fit.region.admits(r.density))
            .map(|r| {
                let distance = fit.region.d_c - r.density;
                let fitted = (fit.intercept + fit.slope * distance.ln()).exp();
                vec![r.density, distance, r.final_loss, fitted]
            })
            .collect();
        io::write_table(
            &plots.join("power_law.csv"),
            &["density", "distance_to_critical", "loss", "fitted_loss"],
            &rows,
        )?;
    }

    let transfer_path = dir.join(TRANSFER_FILE);
    if transfer_path.exists() {
        let rows: Vec<Vec<f64>> = io::read_transfer(&transfer_path)?
            .iter()
            .filter_map(|r| {
                Some(vec![
                    r.source_iter as f64,
                    r.density,
                    r.transferred_loss?,
                    r.native_loss?,
                ])
            })
            .collect();
        io::write_table(
            &plots.join("transfer.csv"),
            &["source_iter", "density", "transferred_loss", "native_loss"],
            &rows,
        )?;
    }

    let summary = build_summary(&config, dir, &trace, analysis)?;
    io::write_json(&dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

fn read_loss_stderr(path: &Path) -> Result<Vec<f64>, HarnessError> {
    let mut r =
        csv::Reader::from_path(path).map_err(|e| HarnessError::format(path, e.to_string()))?;
    let col = r
        .headers()
        .map_err(|e| HarnessError::format(path, e.to_string()))?
        .iter()
        .position(|h| h == "loss_stderr")
        .ok_or_else(|| HarnessError::format(path, "missing loss_stderr column"))?;
    r.records()
        .map(|row| {
            let row = row.map_err(|e| HarnessError::format(path, e.to_string()))?;
            row[col]
                .parse()
                .map_err(|_| HarnessError::format(path, "bad loss_stderr value"))
        })
        .collect()
}

pub fn read_summary(dir: &Path) -> Result<Summary, HarnessError> {
    io::read_json(&dir.join(SUMMARY_FILE))
}

/// Stats rows are only needed by callers that want per-point errors.
pub fn read_stats(dir: &Path) -> Result<Vec<StatsRow>, HarnessError> {
    let path = dir.join(AVERAGED_DIR).join(STATS_FILE);
    let mut r =
        csv::Reader::from_path(&path).map_err(|e| HarnessError::format(&path, e.to_string()))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| HarnessError::format(&path, e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let layers = header.len().saturating_sub(5) / 2;
    let mut rows = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| HarnessError::format(&path, e.to_string()))?;
        let f = |i: usize| -> Result<f64, HarnessError> {
            row[i]
                .parse()
                .map_err(|_| HarnessError::format(&path, format!("bad value `{}`", &row[i])))
        };
        rows.push(StatsRow {
            iteration: f(0)? as usize,
            density: f(1)?,
            runs: f(2)? as usize,
            loss_mean: f(3)?,
            loss_stderr: f(4)?,
            m_frac_mean: (0..layers)
                .map(|l| f(5 + 2 * l))
                .collect::<Result<_, _>>()?,
            m_frac_stderr: (0..layers)
                .map(|l| f(6 + 2 * l))
                .collect::<Result<_, _>>()?,
        });
    }
    Ok(rows)
}
