//! Experiment runner behind the `pdsim` binary.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use pdsim::engine::write_event_log;
use pdsim::metrics::{read_sweep_csv, write_requests_csv, write_sweep_csv};
use pdsim::{SimError, Simulation, SweepRow};
use rayon::prelude::*;
use thiserror::Error;

pub use config::{ExperimentConfig, PolicyPair, QpsSweep, WorkloadSource};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad or missing input; exit status 2.
    #[error("{0}")]
    Invalid(String),
    /// The simulator refused the configuration; exit status 3.
    #[error("simulation: {0}")]
    Simulation(SimError),
    #[error("writing {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CliError::Invalid(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Simulation(_) => 3,
            CliError::Output { .. } => 1,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub events: bool,
    pub out: Option<PathBuf>,
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers never see a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let err = |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    };
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(err)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
    tmp.write_all(bytes).map_err(err)?;
    tmp.persist(path).map_err(|e| err(e.error))?;
    Ok(())
}

fn sim_bytes(f: impl FnOnce(&mut Vec<u8>) -> pdsim::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("serializing to memory cannot fail");
    buf
}

/// Directory name for one sweep point.
pub fn point_dir(out: &Path, pair: &PolicyPair, qps: f64) -> PathBuf {
    out.join(pair.name()).join(format!("qps_{qps}"))
}

/// Runs every (policy pair, rate) point and writes per-point outputs plus
/// `sweep.csv`. Returns the sweep rows in file order: rate ascending as
/// listed, then policy pairs in config order.
pub fn run_experiment(mut cfg: ExperimentConfig, opts: &RunOptions) -> Result<Vec<SweepRow>, CliError> {
    if let Some(seed) = opts.seed {
        cfg.override_seed(seed);
    }
    cfg.validate()?;
    let out = opts.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let base = cfg.base_workload()?;
    let qps_points = cfg.qps_sweep.points()?;

    let jobs: Vec<(f64, PolicyPair)> = qps_points
        .iter()
        .flat_map(|&q| cfg.policies.iter().map(move |&p| (q, p)))
        .collect();

    let rows = jobs
        .par_iter()
        .map(|&(qps, pair)| -> Result<SweepRow, CliError> {
            let workload = config::workload_at(&base, qps)?;
            let cluster = cfg.cluster.clone().with_policies(pair.0, pair.1);
            let mut sim = Simulation::new(cluster, workload).map_err(CliError::Simulation)?;
            if opts.events {
                sim = sim.with_event_log();
            }
            let outcome = sim.run().map_err(CliError::Simulation)?;
            log::info!(
                "{} qps={qps}: e2e attainment {:.4}",
                pair.name(),
                outcome.report.summary.e2e_attainment
            );

            let dir = point_dir(&out, &pair, qps);
            let csv = sim_bytes(|b| write_requests_csv(b, &outcome.report.rows));
            write_atomic(&dir.join("requests.csv"), &csv)?;
            let mut json = serde_json::to_vec_pretty(&outcome.report.summary).expect("summary serializes");
            json.push(b'\n');
            write_atomic(&dir.join("report.json"), &json)?;
            if opts.events {
                let log = sim_bytes(|b| write_event_log(b, &outcome.log));
                write_atomic(&dir.join("events.jsonl"), &log)?;
            }
            Ok(SweepRow::new(qps, pair.name(), &outcome.report.summary))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let sweep = sim_bytes(|b| write_sweep_csv(b, &rows));
    write_atomic(&out.join("sweep.csv"), &sweep)?;
    Ok(rows)
}

/// Concatenates sweep CSVs, ordered by rate and then policy pair.
pub fn merge_sweeps(paths: &[PathBuf]) -> Result<Vec<SweepRow>, CliError> {
    let mut rows = Vec::new();
    for p in paths {
        let file = fs::File::open(p).map_err(|e| CliError::invalid(format!("{}: {e}", p.display())))?;
        let mut part = read_sweep_csv(file).map_err(|e| CliError::invalid(format!("{}: {e}", p.display())))?;
        rows.append(&mut part);
    }
    rows.sort_by(|a, b| a.qps.total_cmp(&b.qps).then_with(|| a.policy_pair.cmp(&b.policy_pair)));
    Ok(rows)
}

pub fn sweep_csv_bytes(rows: &[SweepRow]) -> Vec<u8> {
    sim_bytes(|b| write_sweep_csv(b, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested/file.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::invalid("x").exit_code(), 2);
        assert_eq!(CliError::Simulation(SimError::config("x")).exit_code(), 3);
    }
}
