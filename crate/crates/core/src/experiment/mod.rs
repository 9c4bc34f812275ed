//! Config-driven experiments and their on-disk outputs.

mod config;
mod sweep;

pub use config::{EvictionSetSpec, ExperimentConfig, ExperimentKind, SweepGrid, ValidateConfig};
pub use sweep::{run_sweep, SweepRow, SweepSummaryRow};

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::addressing::hex_list;
use crate::agents::{derive_seed, AgentSpec, Role, MESSAGE_STREAM};
use crate::analytics::{analytical_nrfm_exact, DosReport};
use crate::channel::{run_channel, ChannelReport};
use crate::dos::{run_dos, DosConfig};
use crate::dram::CommandRecord;
use crate::error::{Error, Result};
use crate::rfm::RfmParams;
use crate::system::SystemConfig;
use crate::trace::write_trace;

/// `(file name, records)` of one command trace.
pub type NamedTrace = (String, Vec<CommandRecord>);

pub const SIMULATOR: &str = "rfm-sim";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// One row of the model validation table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelRow {
    pub raaimt: u32,
    /// Exact model value as `numerator/denominator`.
    pub analytical_exact: String,
    pub analytical_nrfm: f64,
    pub simulated_nrfm: f64,
    /// `(simulated - analytical) / analytical`.
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ExperimentResult {
    Channel(Box<ChannelReport>),
    Dos(Box<DosReport>),
    Model { rows: Vec<ModelRow> },
    Sweep { points: usize, failed: usize },
}

/// Machine-readable run report. Wall-clock time is left out so identical
/// runs give identical bytes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub simulator: String,
    pub version: String,
    pub kind: ExperimentKind,
    pub seed: u64,
    /// Fully resolved input; rerunning it reproduces `result`.
    pub config: ExperimentConfig,
    pub result: ExperimentResult,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// A report plus the files that go next to it.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub traces: Vec<NamedTrace>,
    /// `(file name, contents)`.
    pub tables: Vec<(String, String)>,
}

impl ExperimentOutput {
    /// Write `report.json`, the tables, and (when asked) the traces into
    /// `dir`. Returns the written paths.
    pub fn write(&self, dir: &Path, traces: bool) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let path = dir.join("report.json");
        fs::write(&path, self.report.to_json())?;
        written.push(path);
        for (name, text) in &self.tables {
            let path = dir.join(name);
            fs::write(&path, text)?;
            written.push(path);
        }
        if traces {
            for (name, recs) in &self.traces {
                let path = dir.join(name);
                write_trace(std::io::BufWriter::new(fs::File::create(&path)?), recs)?;
                written.push(path);
            }
        }
        Ok(written)
    }
}

/// The message a covert run transmits.
pub fn message_bits(cfg: &ExperimentConfig) -> Vec<bool> {
    match &cfg.message {
        Some(m) => m.chars().map(|c| c == '1').collect(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, MESSAGE_STREAM));
            (0..cfg.message_bits).map(|_| rng.random()).collect()
        }
    }
}

/// Resolve and run one experiment of any kind.
pub fn run_experiment(cfg: ExperimentConfig) -> Result<ExperimentOutput> {
    let cfg = cfg.resolve()?;
    let mut traces = Vec::new();
    let mut tables = Vec::new();
    let result = match cfg.kind {
        ExperimentKind::Covert | ExperimentKind::CovertRfmsb => {
            let run = run_channel(&cfg.system(), &cfg.channel, &message_bits(&cfg), cfg.seed)?;
            traces.push(("trace.csv".to_string(), run.trace));
            ExperimentResult::Channel(Box::new(run.report))
        }
        ExperimentKind::Dos => {
            let run = run_dos(&cfg.system(), &cfg.dos, cfg.seed)?;
            traces.push(("trace.csv".to_string(), run.trace));
            ExperimentResult::Dos(Box::new(run.report))
        }
        ExperimentKind::ValidateModel => {
            let (rows, tr) = validate_model(&cfg.system(), &cfg.validate.raaimt, &cfg.dos, cfg.seed)?;
            tables.push(("model.csv".to_string(), model_csv(&rows)?));
            traces.extend(tr);
            ExperimentResult::Model { rows }
        }
        ExperimentKind::Sweep => {
            let (rows, summary) = run_sweep(&cfg)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            tables.push(("sweep.csv".to_string(), sweep::rows_csv(&rows)?));
            tables.push(("sweep_summary.csv".to_string(), sweep::rows_csv(&summary)?));
            ExperimentResult::Sweep {
                points: rows.len(),
                failed,
            }
        }
    };
    if let (Some(map), Some(spec)) = (&cfg.addressing, &cfg.eviction_set) {
        let set = map.build_eviction_set(spec.target(), spec.size)?;
        tables.push(("eviction_set.txt".to_string(), hex_list(&set, map.address_bits)));
    }
    let report = ExperimentReport {
        simulator: SIMULATOR.to_string(),
        version: VERSION.to_string(),
        kind: cfg.kind,
        seed: cfg.seed,
        config: cfg,
        result,
    };
    Ok(ExperimentOutput { report, traces, tables })
}

/// Analytical against simulated nRFM for each RAAIMT, with the DOS agents
/// of `sys` alone on the rank.
pub fn validate_model(
    sys: &SystemConfig,
    raaimts: &[u32],
    dos: &DosConfig,
    seed: u64,
) -> Result<(Vec<ModelRow>, Vec<NamedTrace>)> {
    let attackers: Vec<AgentSpec> = sys.agents.iter().filter(|a| a.role == Role::Dos).cloned().collect();
    if attackers.is_empty() {
        return Err(Error::invalid("agents", "model validation needs a dos agent"));
    }
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for &raaimt in raaimts {
        let s = SystemConfig {
            rfm: RfmParams {
                policy: sys.rfm.policy,
                ..RfmParams::with_raaimt(raaimt)
            },
            agents: attackers.clone(),
            ..sys.clone()
        };
        let run = run_dos(&s, dos, seed)?;
        let r = &run.report;
        let exact = analytical_nrfm_exact(&crate::analytics::NrfmModelInput::new(&s.timing, raaimt));
        rows.push(ModelRow {
            raaimt,
            analytical_exact: format!("{}/{}", exact.numer(), exact.denom()),
            analytical_nrfm: r.analytical_nrfm,
            simulated_nrfm: r.simulated_nrfm,
            relative_error: if r.analytical_nrfm > 0.0 {
                (r.simulated_nrfm - r.analytical_nrfm) / r.analytical_nrfm
            } else {
                0.0
            },
        });
        traces.push((format!("trace_raaimt{raaimt}.csv"), run.trace));
    }
    Ok((rows, traces))
}

impl sweep::CsvRow for ModelRow {
    const HEADER: &'static [&'static str] = &[
        "raaimt",
        "analytical_exact",
        "analytical_nrfm",
        "simulated_nrfm",
        "relative_error",
    ];
}

fn model_csv(rows: &[ModelRow]) -> Result<String> {
    sweep::rows_csv(rows)
}
