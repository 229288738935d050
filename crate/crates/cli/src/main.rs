use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pdsim::costmodel::{reference_anchors, reference_prefill_anchors, LutAnchor, ProfileFile, SynthProfile};
use pdsim::workload::{gen_longtail, write_trace};
use pdsim::LongTailSpec;
use pdsim_cli::{merge_sweeps, run_experiment, sweep_csv_bytes, write_atomic, CliError, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "pdsim", version, about = "Prefill/decode serving simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment sweep.
    Run {
        /// Experiment config (JSON). Built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides both the workload and engine seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write events.jsonl for every sweep point.
        #[arg(long)]
        events: bool,
        /// Output directory (overrides output_dir from the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic long-tail trace as JSONL.
    GenTrace {
        /// Generator parameters (JSON); missing fields take defaults.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        qps: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a decode step-time profile from solo-batch anchors.
    ProfileSynth {
        /// JSON list of {"bsz", "seq_len", "step_time"} anchors (step_time in
        /// microseconds). Reference anchors when omitted.
        #[arg(long)]
        anchors: Option<PathBuf>,
        /// Relative step-time growth per extra request in a batch.
        #[arg(long, default_value_t = 0.03)]
        gamma: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the built-in experiment config as JSON.
    PrintConfig,
    /// Merge sweep CSVs into one table.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&PathBuf>, bytes: &[u8]) -> Result<(), CliError> {
    match out {
        Some(p) => write_atomic(p, bytes),
        None => std::io::stdout().write_all(bytes).map_err(|source| CliError::Output {
            path: "<stdout>".into(),
            source,
        }),
    }
}

fn execute(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run {
            config,
            seed,
            events,
            out,
        } => {
            let cfg = match &config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::default(),
            };
            let rows = run_experiment(cfg, &RunOptions { seed, events, out })?;
            for r in rows {
                println!(
                    "{:>8} {:<40} e2e={:.4} ttft={:.4} tpot={:.4}",
                    r.qps, r.policy_pair, r.e2e_att, r.ttft_att, r.tpot_att
                );
            }
            Ok(())
        }
        Command::GenTrace {
            spec,
            n,
            qps,
            seed,
            out,
        } => {
            let mut s: LongTailSpec = match &spec {
                Some(p) => read_json(p)?,
                None => LongTailSpec::default(),
            };
            s.n_requests = n.unwrap_or(s.n_requests);
            s.qps = qps.unwrap_or(s.qps);
            s.seed = seed.unwrap_or(s.seed);
            let w = gen_longtail(&s).map_err(|e| CliError::invalid(e.to_string()))?;
            let mut buf = Vec::new();
            write_trace(&mut buf, &w).map_err(|e| CliError::invalid(e.to_string()))?;
            emit(out.as_ref(), &buf)
        }
        Command::ProfileSynth { anchors, gamma, out } => {
            let anchors: Vec<LutAnchor> = match &anchors {
                Some(p) => read_json(p)?,
                None => reference_anchors(),
            };
            let profile = SynthProfile {
                anchors,
                batch_growth: gamma,
                ..SynthProfile::default()
            };
            let lut = profile.build().map_err(|e| CliError::invalid(e.to_string()))?;
            let file = ProfileFile::from_lut(&lut, reference_prefill_anchors()[0]);
            let mut bytes = serde_json::to_vec_pretty(&file).expect("profile serializes");
            bytes.push(b'\n');
            emit(out.as_ref(), &bytes)
        }
        Command::PrintConfig => {
            let mut bytes = serde_json::to_vec_pretty(&ExperimentConfig::default()).expect("config serializes");
            bytes.push(b'\n');
            emit(None, &bytes)
        }
        Command::Report { inputs, out } => {
            let rows = merge_sweeps(&inputs)?;
            emit(out.as_ref(), &sweep_csv_bytes(&rows))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pdsim: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
