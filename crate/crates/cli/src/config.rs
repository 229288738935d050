use std::fs;
use std::path::{Path, PathBuf};

use pdsim::workload::{gen_longtail, load_trace, rescale_qps};
use pdsim::{ClusterConfig, DecodePolicy, DecodeProfile, LongTailSpec, PrefillPolicy, Request};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Where the requests come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadSource {
    /// JSONL trace file, relative to the config file.
    Trace(PathBuf),
    LongTail(LongTailSpec),
}

impl Default for WorkloadSource {
    fn default() -> Self {
        WorkloadSource::LongTail(LongTailSpec::default())
    }
}

/// Either an explicit list of rates or an inclusive range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QpsSweep {
    List(Vec<f64>),
    Range { start: f64, stop: f64, step: f64 },
}

impl QpsSweep {
    /// Expands the sweep. Range points are rounded to 1e-9 so that
    /// accumulated float error does not leak into file names.
    pub fn points(&self) -> Result<Vec<f64>, CliError> {
        let pts = match self {
            QpsSweep::List(v) => v.clone(),
            QpsSweep::Range { start, stop, step } => {
                if !(step.is_finite() && *step > 0.0 && start.is_finite() && stop.is_finite() && start <= stop) {
                    return Err(CliError::invalid("qps_sweep range needs start <= stop and step > 0"));
                }
                let n = ((stop - start) / step + 1e-9).floor() as usize;
                (0..=n)
                    .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
                    .collect()
            }
        };
        if pts.is_empty() {
            return Err(CliError::invalid("qps_sweep has no points"));
        }
        if let Some(bad) = pts.iter().find(|q| !(q.is_finite() && **q > 0.0)) {
            return Err(CliError::invalid(format!("qps point {bad} must be > 0")));
        }
        Ok(pts)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyPair(pub PrefillPolicy, pub DecodePolicy);

impl PolicyPair {
    pub fn name(&self) -> String {
        format!("{}+{}", self.0, self.1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub workload: WorkloadSource,
    pub qps_sweep: QpsSweep,
    pub policies: Vec<PolicyPair>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            cluster: ClusterConfig::default(),
            workload: WorkloadSource::default(),
            qps_sweep: QpsSweep::Range {
                start: 0.25,
                stop: 3.0,
                step: 0.25,
            },
            policies: vec![
                PolicyPair(PrefillPolicy::Fcfs, DecodePolicy::Continuous),
                PolicyPair(PrefillPolicy::KairosUrgency, DecodePolicy::KairosSlack),
            ],
            output_dir: default_output_dir(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a config file. Relative paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::invalid(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let WorkloadSource::Trace(p) = &mut self.workload {
            fix(p);
        }
        if let DecodeProfile::Path { path } = &mut self.cluster.decode_profile {
            fix(path);
        }
    }

    /// Applies a seed override to both the workload generator and the engine.
    pub fn override_seed(&mut self, seed: u64) {
        self.cluster.seed = seed;
        if let WorkloadSource::LongTail(spec) = &mut self.workload {
            spec.seed = seed;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.policies.is_empty() {
            return Err(CliError::invalid("policies must list at least one pair"));
        }
        self.qps_sweep.points()?;
        if let WorkloadSource::Trace(p) = &self.workload {
            if !p.is_file() {
                return Err(CliError::invalid(format!("trace file {} does not exist", p.display())));
            }
        }
        if let DecodeProfile::Path { path } = &self.cluster.decode_profile {
            if !path.is_file() {
                return Err(CliError::invalid(format!(
                    "profile file {} does not exist",
                    path.display()
                )));
            }
        }
        self.cluster.validate().map_err(|e| CliError::invalid(e.to_string()))
    }

    /// The base workload, before any rate rescaling.
    pub fn base_workload(&self) -> Result<Vec<Request>, CliError> {
        match &self.workload {
            WorkloadSource::Trace(p) => load_trace(p).map_err(|e| CliError::invalid(e.to_string())),
            WorkloadSource::LongTail(spec) => gen_longtail(spec).map_err(|e| CliError::invalid(e.to_string())),
        }
    }
}

/// Scales `base` to the requested arrival rate.
pub fn workload_at(base: &[Request], qps: f64) -> Result<Vec<Request>, CliError> {
    if base.len() < 2 {
        return Ok(base.to_vec());
    }
    rescale_qps(base, qps).map_err(|e| CliError::invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_points_are_clean() {
        let pts = QpsSweep::Range {
            start: 2.0,
            stop: 5.0,
            step: 0.2,
        }
        .points()
        .unwrap();
        assert_eq!(pts.len(), 16);
        assert_eq!(pts[1], 2.2);
        assert_eq!(pts[15], 5.0);
        assert!(QpsSweep::List(vec![]).points().is_err());
        assert!(QpsSweep::List(vec![0.0]).points().is_err());
        assert!(QpsSweep::Range {
            start: 3.0,
            stop: 2.0,
            step: 0.1
        }
        .points()
        .is_err());
    }

    #[test]
    fn parses_minimal_config() {
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"qps_sweep": [1.0, 2.0], "policies": [["fcfs", "continuous"], ["kairos-urgency", "kairos-slack"]],
                "workload": {"long_tail": {"n_requests": 10}}}"#,
        )
        .unwrap();
        assert_eq!(cfg.policies[1].name(), "kairos-urgency+kairos-slack");
        assert_eq!(cfg.cluster, ClusterConfig::default());
        let WorkloadSource::LongTail(spec) = &cfg.workload else {
            panic!()
        };
        assert_eq!(spec.n_requests, 10);
        assert_eq!(spec.qps, LongTailSpec::default().qps);
    }

    #[test]
    fn unknown_fields_and_policies_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"qps_sweep": [1], "policies": [], "bogus": 1}"#).is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(
            r#"{"qps_sweep": [1], "policies": [["lifo", "continuous"]]}"#
        )
        .is_err());
    }

    #[test]
    fn shipped_default_config_matches_builtin() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/default.json");
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn seed_override_reaches_workload_and_engine() {
        let mut cfg = ExperimentConfig::default();
        cfg.override_seed(77);
        assert_eq!(cfg.cluster.seed, 77);
        let WorkloadSource::LongTail(spec) = &cfg.workload else {
            panic!()
        };
        assert_eq!(spec.seed, 77);
    }
}
