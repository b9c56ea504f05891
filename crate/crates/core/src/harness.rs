//! Experiment harness: sweeps, seeded trials, CSV logs, summaries, plots, replay.
//!
//! Output layout of `run_experiment` under `out_dir`:
//!
//! * `config.txt`: the canonical config, preceded by its `# config_hash:` line;
//! * `<cell>.csv`: one row per (trial, round), columns [`CELL_HEADER`];
//! * `summary.csv`: mean and sample std of final and half-horizon regret per cell;
//! * `regret.svg`: mean cumulative-regret curves, one series per cell.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::bandit::{prepare, run, Regime, RunConfig, RunRecord};
use crate::config::{recorded_hash, ExperimentSpec};
use crate::error::{Error, Result};
use crate::features::ApproxCertificate;
use crate::rng::trial_seed;
use crate::svg::{line_chart, Series};

pub const CELL_HEADER: &str = "trial,round,action_id,reward,inst_regret,cum_regret,beta_t";
pub const SUMMARY_HEADER: &str =
    "cell,regime,alpha,beta_priv,trials,mean_final_regret,std_final_regret,mean_half_regret,std_half_regret";
const MAX_PLOT_POINTS: usize = 256;

/// Float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// File-name-safe identifier of a sweep cell.
pub fn cell_name(cfg: &RunConfig) -> String {
    match cfg.regime {
        Regime::NonPrivate => "non_private".to_string(),
        r => format!("{}_alpha-{}_beta-{}", r.as_str(), cfg.alpha, cfg.beta_priv),
    }
}

fn cell_label(cfg: &RunConfig) -> String {
    match cfg.regime {
        Regime::NonPrivate => "non-private".to_string(),
        r => format!("{} a={} b={}", r.as_str(), cfg.alpha, cfg.beta_priv),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub config: RunConfig,
    pub records: Vec<RunRecord>,
}

impl CellResult {
    pub fn name(&self) -> String {
        cell_name(&self.config)
    }

    /// Mean cumulative regret after each round.
    pub fn mean_curve(&self) -> Vec<f64> {
        let n = self.records.len() as f64;
        let horizon = self.config.horizon;
        (0..horizon)
            .map(|t| {
                self.records
                    .iter()
                    .map(|r| r.rounds[t].cum_regret)
                    .sum::<f64>()
                    / n
            })
            .collect()
    }

    pub fn finals(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(RunRecord::cumulative_regret)
            .collect()
    }

    /// Cumulative regret after `horizon / 2` rounds (at least one).
    pub fn halves(&self) -> Vec<f64> {
        let h = (self.config.horizon / 2).max(1);
        self.records
            .iter()
            .map(|r| r.rounds[h - 1].cum_regret)
            .collect()
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub name: String,
    pub regime: Regime,
    pub alpha: f64,
    pub beta_priv: f64,
    pub trials: usize,
    pub mean_final: f64,
    pub std_final: f64,
    pub mean_half: f64,
    pub std_half: f64,
}

impl CellSummary {
    pub fn of(cell: &CellResult) -> Self {
        let (mean_final, std_final) = mean_std(&cell.finals());
        let (mean_half, std_half) = mean_std(&cell.halves());
        Self {
            name: cell.name(),
            regime: cell.config.regime,
            alpha: cell.config.alpha,
            beta_priv: cell.config.beta_priv,
            trials: cell.records.len(),
            mean_final,
            std_final,
            mean_half,
            std_half,
        }
    }
}

fn pool(parallel: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| Error::InvalidState(format!("cannot start worker pool: {e}")))
}

/// Runs every (cell, trial) pair on `parallel` workers. Results are ordered by cell,
/// then trial, independent of completion order.
pub fn run_cells(spec: &ExperimentSpec, parallel: usize) -> Result<Vec<CellResult>> {
    spec.validate()?;
    let cells = spec.cells();
    let jobs: Vec<(usize, RunConfig)> = cells
        .iter()
        .enumerate()
        .flat_map(|(c, cfg)| {
            (0..spec.trials).map(move |i| {
                (
                    c,
                    RunConfig {
                        seed: trial_seed(spec.master_seed, i as u64),
                        ..cfg.clone()
                    },
                )
            })
        })
        .collect();
    let records: Vec<(usize, RunRecord)> = pool(parallel)?.install(|| {
        jobs.par_iter()
            .map(|(c, cfg)| run(cfg).map(|r| (*c, r)))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut out: Vec<CellResult> = cells
        .into_iter()
        .map(|config| CellResult {
            config,
            records: Vec::with_capacity(spec.trials),
        })
        .collect();
    for (c, rec) in records {
        out[c].records.push(rec);
    }
    Ok(out)
}

pub fn cell_csv(cell: &CellResult) -> String {
    let mut s = String::with_capacity(cell.records.len() * cell.config.horizon * 120);
    s.push_str(CELL_HEADER);
    s.push('\n');
    for (trial, rec) in cell.records.iter().enumerate() {
        for (i, r) in rec.rounds.iter().enumerate() {
            let _ = writeln!(
                s,
                "{trial},{},{},{},{},{},{}",
                i + 1,
                r.action_id,
                fmt_f64(r.reward),
                fmt_f64(r.inst_regret),
                fmt_f64(r.cum_regret),
                fmt_f64(r.beta)
            );
        }
    }
    s
}

pub fn summary_csv(summaries: &[CellSummary]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for c in summaries {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            c.name,
            c.regime.as_str(),
            fmt_f64(c.alpha),
            fmt_f64(c.beta_priv),
            c.trials,
            fmt_f64(c.mean_final),
            fmt_f64(c.std_final),
            fmt_f64(c.mean_half),
            fmt_f64(c.std_half)
        );
    }
    s
}

/// Mean cumulative regret with a one-std band, downsampled to at most 256 rounds.
pub fn regret_plot(cells: &[CellResult], title: &str) -> String {
    let series: Vec<Series> = cells
        .iter()
        .map(|cell| {
            let horizon = cell.config.horizon;
            let stride = horizon.div_ceil(MAX_PLOT_POINTS).max(1);
            let mut idx: Vec<usize> = (0..horizon).step_by(stride).collect();
            if idx.last() != Some(&(horizon - 1)) {
                idx.push(horizon - 1);
            }
            let (mut ys, mut band) = (vec![], vec![]);
            for &t in &idx {
                let v: Vec<f64> = cell
                    .records
                    .iter()
                    .map(|r| r.rounds[t].cum_regret)
                    .collect();
                let (m, s) = mean_std(&v);
                ys.push(m);
                band.push(s);
            }
            Series {
                label: cell_label(&cell.config),
                xs: idx.iter().map(|t| (t + 1) as f64).collect(),
                ys,
                band: Some(band),
            }
        })
        .collect();
    line_chart(title, "round", "mean cumulative regret", &series)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn archived_config(spec: &ExperimentSpec) -> String {
    format!(
        "# config_hash: {}\n{}",
        spec.hash(),
        spec.to_config_string()
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub out_dir: PathBuf,
    pub cells: Vec<CellResult>,
    pub summaries: Vec<CellSummary>,
    pub files: Vec<PathBuf>,
}

/// Runs the sweep and writes config, per-cell CSVs, the summary and the plot.
pub fn run_experiment(spec: &ExperimentSpec, parallel: usize) -> Result<ExperimentOutput> {
    let out_dir = spec.out_dir.clone();
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let cells = run_cells(spec, parallel)?;
    let mut files = Vec::new();
    let cfg_path = out_dir.join("config.txt");
    write(&cfg_path, &archived_config(spec))?;
    files.push(cfg_path);
    for cell in &cells {
        let path = out_dir.join(format!("{}.csv", cell.name()));
        write(&path, &cell_csv(cell))?;
        files.push(path);
    }
    let summaries: Vec<CellSummary> = cells.iter().map(CellSummary::of).collect();
    let path = out_dir.join("summary.csv");
    write(&path, &summary_csv(&summaries))?;
    files.push(path);
    let title = format!(
        "T = {}, {} trials, m_bar = {}",
        spec.base.horizon, spec.trials, spec.base.m_bar
    );
    let path = out_dir.join("regret.svg");
    write(&path, &regret_plot(&cells, &title))?;
    files.push(path);
    Ok(ExperimentOutput {
        out_dir,
        cells,
        summaries,
        files,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub cells: Vec<CellResult>,
    /// Set when the config file carries a hash that differs from its contents.
    pub hash_mismatch: Option<(String, String)>,
    /// `(cell file, identical)` for every archived CSV found next to the config.
    pub comparisons: Vec<(PathBuf, bool)>,
}

impl ReplayReport {
    pub fn all_identical(&self) -> bool {
        self.comparisons.iter().all(|(_, same)| *same)
    }
}

/// Re-executes an archived config with master seed `seed` and compares every cell's
/// CSV bytes against the archive in `out_dir` when the seed matches the archived one.
pub fn replay(config_path: &Path, seed: u64, parallel: usize) -> Result<ReplayReport> {
    let text = std::fs::read_to_string(config_path).map_err(|e| Error::io(config_path, e))?;
    let mut spec = ExperimentSpec::parse(&text)?;
    let hash_mismatch = recorded_hash(&text).and_then(|h| {
        let now = spec.hash();
        (h != now).then_some((h, now))
    });
    let archived_seed = spec.master_seed;
    spec.master_seed = seed;
    spec.base.seed = seed;
    let cells = run_cells(&spec, parallel)?;
    let mut comparisons = Vec::new();
    if seed == archived_seed {
        for cell in &cells {
            let path = spec.out_dir.join(format!("{}.csv", cell.name()));
            if let Ok(old) = std::fs::read(&path) {
                comparisons.push((path, old == cell_csv(cell).into_bytes()));
            }
        }
    }
    Ok(ReplayReport {
        cells,
        hash_mismatch,
        comparisons,
    })
}

/// Feature-map certificate of the base configuration on its action domain.
pub fn certify(spec: &ExperimentSpec) -> Result<(RunConfig, ApproxCertificate)> {
    let cfg = RunConfig {
        seed: trial_seed(spec.master_seed, 0),
        ..spec.base.clone()
    };
    let (_, _, cert) = prepare(&cfg)?;
    Ok((cfg, cert))
}
