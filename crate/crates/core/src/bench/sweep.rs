//! Parameter sweeps comparing SMCTS against the MCTS baseline.
//!
//! A sweep crosses instances × M × surrogate error × seeds. Each run solves
//! the instance twice (SMCTS and MCTS with the same seed) and records the
//! surrogate ratio, the Dice similarity of the two closure sets, both losses
//! and the number of re-evaluated children. Runs are independent and execute
//! on a rayon pool; results keep the nested-loop order.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{dice_coefficient, surrogate_ratio};
use crate::error::{Error, Result};
use crate::evaluation::{calibrate_sigma, LossModel, MainModel, NaiveSurrogate, NoisySurrogate};
use crate::ingest::{counties, filter_county, generate_synthetic, SyntheticSpec};
use crate::network::StoreNetwork;
use crate::search::{run_mcts, run_smcts};
use crate::tree::SearchConfig;

pub const RUNS_HEADER: [&str; 10] = [
    "instance",
    "M",
    "nrmse",
    "seed",
    "ratio",
    "dice",
    "loss_smcts",
    "loss_mcts",
    "reevals",
    "secs",
];
pub const SUMMARY_HEADER: [&str; 9] = [
    "M",
    "nrmse",
    "runs",
    "ratio",
    "dice",
    "loss_smcts",
    "loss_mcts",
    "reevals",
    "secs",
];
pub const FAILURES_HEADER: [&str; 5] = ["instance", "M", "nrmse", "seed", "error"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSource {
    /// One generated network per spec.
    Synthetic { specs: Vec<SyntheticSpec> },
    /// County sub-networks of a network JSON file. Either list `counties`
    /// explicitly or draw `sample_counties` of them with `sample_seed`.
    Network {
        path: PathBuf,
        #[serde(default)]
        counties: Vec<String>,
        #[serde(default)]
        sample_counties: Option<usize>,
        #[serde(default)]
        sample_seed: u64,
        /// Counties with fewer stores are not sampled.
        #[serde(default)]
        min_stores: usize,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    Naive,
    #[default]
    Noisy,
}

fn default_calibration_samples() -> usize {
    200
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub instances: InstanceSource,
    #[serde(rename = "M_values", alias = "m_values")]
    pub m_values: Vec<usize>,
    /// Target normalized RMSEs for the noisy surrogate; must be empty for
    /// the naive one.
    #[serde(default)]
    pub nrmse_values: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub surrogate: SurrogateKind,
    /// Template; `closures` and `seed` are overwritten per run.
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default = "default_calibration_samples")]
    pub calibration_samples: usize,
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_values.is_empty() {
            return Err(Error::Config("M_values must not be empty".into()));
        }
        if self.m_values.contains(&0) {
            return Err(Error::Config("M_values entries must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        match self.surrogate {
            SurrogateKind::Noisy if self.nrmse_values.is_empty() => {
                return Err(Error::Config(
                    "nrmse_values must not be empty for the noisy surrogate".into(),
                ));
            }
            SurrogateKind::Naive if !self.nrmse_values.is_empty() => {
                return Err(Error::Config(
                    "nrmse_values must be empty for the naive surrogate".into(),
                ));
            }
            _ => {}
        }
        if let Some(bad) = self.nrmse_values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Config(format!(
                "nrmse_values entry {bad} must be finite and >= 0"
            )));
        }
        if self.calibration_samples == 0 {
            return Err(Error::Config("calibration_samples must be >= 1".into()));
        }
        match &self.instances {
            InstanceSource::Synthetic { specs } if specs.is_empty() => {
                Err(Error::Config("instances.specs must not be empty".into()))
            }
            InstanceSource::Synthetic { specs } => specs.iter().try_for_each(SyntheticSpec::validate),
            InstanceSource::Network {
                counties,
                sample_counties,
                ..
            } => {
                if counties.is_empty() && sample_counties.is_none() {
                    Err(Error::Config("instances needs `counties` or `sample_counties`".into()))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Materializes the instances as `(id, network)` pairs.
    pub fn load_instances(&self) -> Result<Vec<(String, StoreNetwork<f64>)>> {
        match &self.instances {
            InstanceSource::Synthetic { specs } => specs
                .iter()
                .map(|s| Ok((format!("synthetic-n{}-s{}", s.n_stores, s.seed), generate_synthetic(s)?)))
                .collect(),
            InstanceSource::Network {
                path,
                counties: listed,
                sample_counties,
                sample_seed,
                min_stores,
            } => {
                let network = StoreNetwork::<f64>::read_json(path)?;
                let names = match sample_counties {
                    Some(k) => {
                        let pool: Vec<String> = counties(&network)
                            .into_iter()
                            .filter(|c| filter_county(&network, c).is_ok_and(|sub| sub.len() >= *min_stores))
                            .collect();
                        if *k > pool.len() {
                            return Err(Error::Config(format!(
                                "sample_counties = {k} but only {} counties qualify",
                                pool.len()
                            )));
                        }
                        let mut rng = ChaCha8Rng::seed_from_u64(*sample_seed);
                        let mut picked: Vec<String> = index::sample(&mut rng, pool.len(), *k)
                            .into_iter()
                            .map(|i| pool[i].clone())
                            .collect();
                        picked.sort();
                        picked
                    }
                    None => listed.clone(),
                };
                names
                    .into_iter()
                    .map(|c| Ok((c.clone(), filter_county(&network, &c)?)))
                    .collect()
            }
        }
    }
}

/// One SMCTS-vs-MCTS comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub instance: String,
    #[serde(rename = "M")]
    pub m: usize,
    /// Target NRMSE (noisy) or calibrated NRMSE (naive).
    pub nrmse: f64,
    #[serde(skip)]
    pub nrmse_index: usize,
    pub seed: u64,
    pub ratio: f64,
    pub dice: f64,
    pub loss_smcts: f64,
    pub loss_mcts: f64,
    pub reevals: u64,
    /// SMCTS wall time.
    pub secs: f64,
    pub secs_mcts: f64,
    pub sigma_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepFailure {
    pub instance: String,
    #[serde(rename = "M")]
    pub m: usize,
    pub nrmse: Option<f64>,
    pub seed: u64,
    pub error: String,
}

/// Means over all runs sharing `(M, nrmse grid point)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    #[serde(rename = "M")]
    pub m: usize,
    pub nrmse: f64,
    pub runs: usize,
    pub ratio: f64,
    pub dice: f64,
    pub loss_smcts: f64,
    pub loss_mcts: f64,
    pub reevals: f64,
    pub secs: f64,
}

#[derive(Clone, Debug, Default)]
pub struct SweepOutcome {
    pub records: Vec<SweepRecord>,
    pub failures: Vec<SweepFailure>,
}

struct Cell<'a> {
    instance: &'a str,
    network: &'a StoreNetwork<f64>,
    m: usize,
    nrmse: Option<(usize, f64)>,
    seed: u64,
}

fn run_cell(spec: &SweepSpec, cell: &Cell<'_>) -> Result<SweepRecord> {
    let network = cell.network;
    let config = SearchConfig {
        closures: cell.m,
        seed: cell.seed,
        ..spec.search.clone()
    };
    config.validate(network.len())?;

    let noisy;
    let surrogate: &dyn LossModel<f64> = match cell.nrmse {
        Some((_, target)) => {
            noisy = NoisySurrogate::new(network, target, cell.seed)?;
            &noisy
        }
        None => &NaiveSurrogate,
    };
    let report = calibrate_sigma(surrogate, &MainModel, network, spec.calibration_samples, cell.seed)?;
    let smcts = run_smcts(network, &MainModel, surrogate, report.sigma_s, &config)?;
    let mcts = run_mcts(network, &MainModel, &config)?;

    Ok(SweepRecord {
        instance: cell.instance.to_string(),
        m: cell.m,
        nrmse: cell.nrmse.map_or_else(|| report.nrmse_surrogate(), |(_, v)| v),
        nrmse_index: cell.nrmse.map_or(0, |(i, _)| i),
        seed: cell.seed,
        ratio: surrogate_ratio(&smcts)?,
        dice: dice_coefficient(&smcts.best_closure_set, &mcts.best_closure_set),
        loss_smcts: smcts.best_loss_main,
        loss_mcts: mcts.best_loss_main,
        reevals: smcts.reevaluated_children,
        secs: smcts.wall_seconds,
        secs_mcts: mcts.wall_seconds,
        sigma_s: report.sigma_s,
    })
}

/// Runs every cell of the sweep. `jobs` bounds the worker threads
/// (`None` = rayon's default). Individual run failures are collected, not
/// propagated.
pub fn run_sweep(spec: &SweepSpec, jobs: Option<usize>) -> Result<SweepOutcome> {
    spec.validate()?;
    let instances = spec.load_instances()?;
    let nrmse_axis: Vec<Option<(usize, f64)>> = match spec.surrogate {
        SurrogateKind::Naive => vec![None],
        SurrogateKind::Noisy => spec.nrmse_values.iter().copied().enumerate().map(Some).collect(),
    };

    let mut cells = Vec::new();
    for (instance, network) in &instances {
        for &m in &spec.m_values {
            for &nrmse in &nrmse_axis {
                for &seed in &spec.seeds {
                    cells.push(Cell {
                        instance,
                        network,
                        m,
                        nrmse,
                        seed,
                    });
                }
            }
        }
    }

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = jobs {
        builder = builder.num_threads(jobs.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<SweepRecord>> = pool.install(|| cells.par_iter().map(|c| run_cell(spec, c)).collect());

    let mut outcome = SweepOutcome::default();
    for (cell, result) in cells.iter().zip(results) {
        match result {
            Ok(record) => outcome.records.push(record),
            Err(e) => {
                log::warn!("run {} M={} seed={} failed: {e}", cell.instance, cell.m, cell.seed);
                outcome.failures.push(SweepFailure {
                    instance: cell.instance.to_string(),
                    m: cell.m,
                    nrmse: cell.nrmse.map(|(_, v)| v),
                    seed: cell.seed,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(outcome)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

impl SweepOutcome {
    /// Cell means ordered by M, then nrmse grid position.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut keys: Vec<(usize, usize)> = self.records.iter().map(|r| (r.m, r.nrmse_index)).collect();
        keys.sort_unstable();
        keys.dedup();
        keys.into_iter()
            .map(|(m, idx)| {
                let group: Vec<&SweepRecord> = self
                    .records
                    .iter()
                    .filter(|r| r.m == m && r.nrmse_index == idx)
                    .collect();
                let avg = |f: fn(&SweepRecord) -> f64| mean(group.iter().map(|r| f(r)));
                SummaryRow {
                    m,
                    nrmse: avg(|r| r.nrmse),
                    runs: group.len(),
                    ratio: avg(|r| r.ratio),
                    dice: avg(|r| r.dice),
                    loss_smcts: avg(|r| r.loss_smcts),
                    loss_mcts: avg(|r| r.loss_mcts),
                    reevals: avg(|r| r.reevals as f64),
                    secs: avg(|r| r.secs),
                }
            })
            .collect()
    }

    /// Writes `runs.csv`, `summary.csv` and `failures.csv` into `dir`.
    /// `failures.csv` holds only its header when every run succeeded.
    pub fn write_csvs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let mut runs = csv_writer(&dir.join("runs.csv"))?;
        runs.write_record(RUNS_HEADER)?;
        for r in &self.records {
            runs.write_record([
                r.instance.clone(),
                r.m.to_string(),
                r.nrmse.to_string(),
                r.seed.to_string(),
                r.ratio.to_string(),
                r.dice.to_string(),
                r.loss_smcts.to_string(),
                r.loss_mcts.to_string(),
                r.reevals.to_string(),
                r.secs.to_string(),
            ])?;
        }
        runs.flush().map_err(|e| Error::io(dir.join("runs.csv"), e))?;

        let mut summary = csv_writer(&dir.join("summary.csv"))?;
        summary.write_record(SUMMARY_HEADER)?;
        for s in self.summary() {
            summary.write_record([
                s.m.to_string(),
                s.nrmse.to_string(),
                s.runs.to_string(),
                s.ratio.to_string(),
                s.dice.to_string(),
                s.loss_smcts.to_string(),
                s.loss_mcts.to_string(),
                s.reevals.to_string(),
                s.secs.to_string(),
            ])?;
        }
        summary.flush().map_err(|e| Error::io(dir.join("summary.csv"), e))?;

        let failures_path = dir.join("failures.csv");
        let mut failures = csv_writer(&failures_path)?;
        failures.write_record(FAILURES_HEADER)?;
        for f in &self.failures {
            failures.write_record([
                f.instance.clone(),
                f.m.to_string(),
                f.nrmse.map(|v| v.to_string()).unwrap_or_default(),
                f.seed.to_string(),
                f.error.clone(),
            ])?;
        }
        failures.flush().map_err(|e| Error::io(&failures_path, e))?;
        Ok(())
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}
