//! Multi-seed experiment batches, run averaging and mask transfer.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use imp_rg_core::imp::{run_imp, ImpRecord, ImpTrace};
use imp_rg_core::nn::{init_network, train, Mask, TrainOutcome};
use imp_rg_core::transfer::{self, MaskTransferPlan, TransferRow};
use imp_rg_core::{mean, standard_error};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::io::{self, StatsRow};
use crate::report::{self, Summary};
use crate::{HarnessError, FORMAT_VERSION};

pub const WORKERS_ENV: &str = "IMP_RG_WORKERS";

pub const CONFIG_FILE: &str = "config.json";
pub const RUN_FILE: &str = "run.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const MASKS_FILE: &str = "masks.csv";
pub const STATS_FILE: &str = "stats.csv";
pub const AVERAGED_DIR: &str = "averaged";
pub const TRANSFER_FILE: &str = "transfer.csv";

pub fn run_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("run_{index:03}"))
}

/// Outcome of one seeded run, persisted as `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub index: usize,
    pub seed: u64,
    /// Hex fingerprint of the initial parameters.
    pub init_fingerprint: String,
    pub error: Option<String>,
}

/// Everything an experiment produced, also persisted under `dir`.
#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub dir: PathBuf,
    pub config: ExperimentConfig,
    pub runs: Vec<RunStatus>,
    /// Completed traces in seed order, masks included.
    pub traces: Vec<ImpTrace>,
    pub averaged: ImpTrace,
    pub stats: Vec<StatsRow>,
    pub transfer: Option<Vec<TransferRow>>,
    pub summary: Summary,
}

#[derive(Debug, Serialize, Deserialize)]
struct ConfigEcho {
    format_version: String,
    config: ExperimentConfig,
}

/// Worker cap: `IMP_RG_WORKERS` if set, else the available parallelism,
/// never more than `jobs`.
pub fn worker_count(jobs: usize) -> usize {
    let cap = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    cap.min(jobs).max(1)
}

/// Applies `f` to every item on up to `workers` threads, preserving order.
fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if workers <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// Trains a single dense network from `seed`.
pub fn train_single(config: &ExperimentConfig, seed: u64) -> Result<TrainOutcome, HarnessError> {
    let spec = config.spec()?;
    let init = init_network(&spec, seed)?;
    let task = config.task_binding()?;
    Ok(train(
        &init,
        &Mask::ones(&spec),
        &task,
        &config.train_config(),
    )?)
}

/// One IMP run from `seed`.
pub fn run_single(config: &ExperimentConfig, seed: u64) -> Result<ImpTrace, HarnessError> {
    let spec = config.spec()?;
    let init = init_network(&spec, seed)?;
    let task = config.task_binding()?;
    Ok(run_imp(&init, &task, &config.imp_config(seed)?)?)
}

pub fn write_run(dir: &Path, trace: &ImpTrace) -> Result<(), HarnessError> {
    io::create_dir(dir)?;
    io::write_trace(&dir.join(TRACE_FILE), &trace.records)?;
    io::write_masks(&dir.join(MASKS_FILE), &trace.masks)
}

/// Reloads a run written by [`run_experiment`].
pub fn load_run(
    config: &ExperimentConfig,
    dir: &Path,
) -> Result<(RunStatus, Option<ImpTrace>), HarnessError> {
    let status: RunStatus = io::read_json(&dir.join(RUN_FILE))?;
    if status.error.is_some() {
        return Ok((status, None));
    }
    let records = io::read_trace(&dir.join(TRACE_FILE))?;
    let shapes = config.spec()?.layer_shapes();
    let masks = io::read_masks(&dir.join(MASKS_FILE), &shapes)?;
    let init_fingerprint = u64::from_str_radix(&status.init_fingerprint, 16)
        .map_err(|_| HarnessError::format(&dir.join(RUN_FILE), "bad fingerprint"))?;
    let trace = ImpTrace {
        records,
        masks,
        init_fingerprint,
        config: config.imp_config(status.seed)?,
    };
    Ok((status, Some(trace)))
}

pub fn load_config(dir: &Path) -> Result<ExperimentConfig, HarnessError> {
    let path = dir.join(CONFIG_FILE);
    let echo: ConfigEcho = io::read_json(&path)?;
    if echo.format_version != FORMAT_VERSION {
        return Err(HarnessError::format(
            &path,
            format!("format version {}", echo.format_version),
        ));
    }
    echo.config.validate()?;
    Ok(echo.config)
}

/// Executes `config.run.repeats` IMP runs with seeds `seed, seed+1, …`,
/// persists every trace and the average, runs the optional mask transfer
/// and writes the report. A failed run is recorded in its `run.json` and
/// left out of the average.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifact, HarnessError> {
    config.validate()?;
    let dir = config.run.output_dir.clone();
    io::create_dir(&dir)?;
    io::write_json(
        &dir.join(CONFIG_FILE),
        &ConfigEcho {
            format_version: FORMAT_VERSION.into(),
            config: config.clone(),
        },
    )?;

    let seeds: Vec<(usize, u64)> = config.seeds().into_iter().enumerate().collect();
    let spec = config.spec()?;
    let results = parallel_map(&seeds, worker_count(seeds.len()), |&(_, seed)| {
        run_single(config, seed)
    });

    let mut runs = Vec::new();
    let mut traces = Vec::new();
    for (&(index, seed), result) in seeds.iter().zip(results) {
        let run_path = run_dir(&dir, index);
        io::create_dir(&run_path)?;
        let fingerprint = init_network(&spec, seed)?.fingerprint();
        let error = match result {
            Ok(trace) => {
                write_run(&run_path, &trace)?;
                traces.push(trace);
                None
            }
            Err(e) => Some(e.to_string()),
        };
        let status = RunStatus {
            index,
            seed,
            init_fingerprint: format!("{fingerprint:016x}"),
            error,
        };
        io::write_json(&run_path.join(RUN_FILE), &status)?;
        runs.push(status);
    }
    if traces.is_empty() {
        return Err(HarnessError::NoCompletedRuns(runs.len()));
    }

    let averaged = average_runs(&traces)?;
    let stats = run_stats(&traces)?;
    let avg_dir = dir.join(AVERAGED_DIR);
    io::create_dir(&avg_dir)?;
    io::write_trace(&avg_dir.join(TRACE_FILE), &averaged.records)?;
    io::write_stats(&avg_dir.join(STATS_FILE), &stats)?;

    let transfer = match &config.transfer {
        Some(t) => {
            let rows = transfer_rows(config, &t.source_dir, t.min_density, &traces, &averaged)?;
            io::write_transfer(&dir.join(TRANSFER_FILE), &rows)?;
            Some(rows)
        }
        None => None,
    };

    let summary = report::emit_report(&dir)?;
    Ok(RunArtifact {
        dir,
        config: config.clone(),
        runs,
        traces,
        averaged,
        stats,
        transfer,
        summary,
    })
}

/// Runs the mask transfer for an experiment whose native runs are already
/// on disk, then refreshes its report. Source rounds below `min_density`
/// are skipped.
pub fn run_transfer(
    dir: &Path,
    source_dir: &Path,
    min_density: Option<f64>,
) -> Result<Vec<TransferRow>, HarnessError> {
    let config = load_config(dir)?;
    let traces = load_traces(&config, dir)?;
    let averaged = average_runs(&traces)?;
    let rows = transfer_rows(&config, source_dir, min_density, &traces, &averaged)?;
    io::write_transfer(&dir.join(TRANSFER_FILE), &rows)?;
    report::emit_report(dir)?;
    Ok(rows)
}

/// Completed traces of a stored experiment in run order.
pub fn load_traces(config: &ExperimentConfig, dir: &Path) -> Result<Vec<ImpTrace>, HarnessError> {
    let mut traces = Vec::new();
    for index in 0..config.run.repeats {
        if let (_, Some(trace)) = load_run(config, &run_dir(dir, index))? {
            traces.push(trace);
        }
    }
    if traces.is_empty() {
        return Err(HarnessError::NoCompletedRuns(config.run.repeats));
    }
    Ok(traces)
}

/// Pairs source run `i` with target seed `i`, transfers every source mask
/// at or above `min_density`, trains the target under it and
/// averages the rows across runs. Rows compare against the averaged native
/// trace; a row counts as winning when its mean loss is within the ticket
/// tolerance of the native full-model loss.
fn transfer_rows(
    config: &ExperimentConfig,
    source_dir: &Path,
    min_density: Option<f64>,
    native: &[ImpTrace],
    averaged: &ImpTrace,
) -> Result<Vec<TransferRow>, HarnessError> {
    let source_config = load_config(source_dir)?;
    let sources = load_traces(&source_config, source_dir)?;
    let plan = MaskTransferPlan::between(&source_config.spec()?, &config.spec()?)?;
    let task = config.task_binding()?;
    let train = config.train_config();
    let floor = min_density.unwrap_or(0.0);

    let runs = sources.len().min(native.len());
    let rounds: Vec<usize> = sources[0]
        .records
        .iter()
        .filter(|r| r.density >= floor)
        .map(|r| r.iteration)
        .collect();
    let mut jobs = Vec::new();
    for run in 0..runs {
        for &round in &rounds {
            jobs.push((run, round));
        }
    }
    let spec = config.spec()?;
    let seeds = config.seeds();
    let results = parallel_map(&jobs, worker_count(jobs.len()), |&(run, round)| {
        let mask = plan.apply(&sources[run].masks[round])?;
        let init = init_network(&spec, seeds[run])?;
        let loss = transfer::transferred_loss(&init, &mask, &task, &train).ok();
        Ok::<_, HarnessError>((imp_rg_core::imp::density(&mask), loss))
    });

    let mut by_round: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); rounds.len()];
    for (&(_, round), result) in jobs.iter().zip(results) {
        let (density, loss) = result?;
        let slot = rounds.iter().position(|&r| r == round).unwrap();
        by_round[slot].0.push(density);
        by_round[slot].1.extend(loss);
    }
    let baseline = averaged.full_model_loss();
    Ok(rounds
        .iter()
        .zip(by_round)
        .map(|(&round, (densities, losses))| {
            let density = mean(&densities);
            let loss = (!losses.is_empty()).then(|| mean(&losses));
            let paired = transfer::nearest_density(averaged, density).map(|i| &averaged.records[i]);
            let winning = match (loss, baseline) {
                (Some(l), Some(b)) => l <= config.analysis.ticket_tolerance * b,
                _ => false,
            };
            TransferRow {
                source_iter: round,
                density,
                transferred_loss: loss,
                native_density: paired.map(|r| r.density),
                native_loss: paired.map(|r| r.final_loss),
                winning,
            }
        })
        .collect())
}

fn check_shapes(traces: &[ImpTrace]) -> Result<(), HarnessError> {
    let first = traces
        .first()
        .ok_or_else(|| HarnessError::Average("no traces".into()))?;
    for t in &traces[1..] {
        let (a, b) = (&first.config, &t.config);
        if t.records.len() != first.records.len() {
            return Err(HarnessError::Average(format!(
                "trace lengths {} and {}",
                first.records.len(),
                t.records.len()
            )));
        }
        if a.prune_fraction != b.prune_fraction
            || a.scope != b.scope
            || a.iterations != b.iterations
        {
            return Err(HarnessError::Average(
                "traces come from different IMP settings".into(),
            ));
        }
        if t.num_layers() != first.num_layers() {
            return Err(HarnessError::Average(
                "traces disagree on layer count".into(),
            ));
        }
    }
    Ok(())
}

/// Per-iteration arithmetic mean of losses and magnitude fractions.
/// Densities, survivor counts, masks and the remaining metadata come from
/// the first trace.
pub fn average_runs(traces: &[ImpTrace]) -> Result<ImpTrace, HarnessError> {
    check_shapes(traces)?;
    let first = &traces[0];
    let layers = first.num_layers();
    let records = first
        .records
        .iter()
        .enumerate()
        .map(|(n, r)| {
            let losses: Vec<f64> = traces.iter().map(|t| t.records[n].final_loss).collect();
            ImpRecord {
                iteration: r.iteration,
                density: r.density,
                final_loss: mean(&losses),
                magnitude_fractions: (0..layers)
                    .map(|l| {
                        let v: Vec<f64> = traces
                            .iter()
                            .map(|t| t.records[n].magnitude_fractions[l])
                            .collect();
                        mean(&v)
                    })
                    .collect(),
                surviving: r.surviving.clone(),
            }
        })
        .collect();
    Ok(ImpTrace {
        records,
        masks: first.masks.clone(),
        init_fingerprint: first.init_fingerprint,
        config: first.config,
    })
}

/// Mean and standard error of every averaged quantity.
pub fn run_stats(traces: &[ImpTrace]) -> Result<Vec<StatsRow>, HarnessError> {
    check_shapes(traces)?;
    let layers = traces[0].num_layers();
    Ok(traces[0]
        .records
        .iter()
        .enumerate()
        .map(|(n, r)| {
            let losses: Vec<f64> = traces.iter().map(|t| t.records[n].final_loss).collect();
            let fracs: Vec<Vec<f64>> = (0..layers)
                .map(|l| {
                    traces
                        .iter()
                        .map(|t| t.records[n].magnitude_fractions[l])
                        .collect()
                })
                .collect();
            StatsRow {
                iteration: r.iteration,
                density: r.density,
                runs: traces.len(),
                loss_mean: mean(&losses),
                loss_stderr: standard_error(&losses),
                m_frac_mean: fracs.iter().map(|v| mean(v)).collect(),
                m_frac_stderr: fracs.iter().map(|v| standard_error(v)).collect(),
            }
        })
        .collect())
}
