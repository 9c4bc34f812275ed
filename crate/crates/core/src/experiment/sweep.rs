//! Grid sweeps. Grid points run in parallel as independent simulations;
//! rows come back in grid order.

use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, ExperimentKind};
use super::message_bits;
use crate::channel::run_channel;
use crate::dos::run_dos;
use crate::error::{Error, Result};
use crate::rfm::RfmParams;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub point: usize,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub noise_rate: f64,
    pub resync_interval: u32,
    pub raaimt: u32,
    pub limiter: bool,
    pub accuracy: Option<f64>,
    pub bits_sent: Option<u64>,
    pub gap_ns: Option<f64>,
    pub rfm_commands: Option<u64>,
    pub analytical_nrfm: Option<f64>,
    pub simulated_nrfm: Option<f64>,
    /// Mean over the victims.
    pub victim_slowdown: Option<f64>,
    pub attacker_denials: Option<u64>,
    /// Why the point produced no measurement.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummaryRow {
    pub noise_rate: f64,
    pub resync_interval: u32,
    pub raaimt: u32,
    pub limiter: bool,
    pub points: usize,
    pub failed: usize,
    pub mean_accuracy: Option<f64>,
    pub mean_simulated_nrfm: Option<f64>,
    pub mean_victim_slowdown: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Point {
    seed: u64,
    noise_rate: Option<f64>,
    resync: u32,
    raaimt: u32,
    limiter: bool,
}

fn dim<T: Clone>(v: &Option<Vec<T>>, base: T) -> Vec<T> {
    v.clone().unwrap_or_else(|| vec![base])
}

fn points(cfg: &ExperimentConfig) -> Vec<Point> {
    let g = cfg.sweep.as_ref().expect("sweep grid");
    let rfm = cfg.rfm.as_ref().expect("resolved");
    let noise: Vec<Option<f64>> = match &g.noise_rates {
        Some(v) => v.iter().copied().map(Some).collect(),
        None => vec![cfg.noise_rate],
    };
    let mut out = Vec::new();
    for &noise_rate in &noise {
        for &resync in &dim(&g.resync_intervals, cfg.channel.resync_interval) {
            for &raaimt in &dim(&g.raaimt, rfm.raaimt) {
                for &limiter in &dim(&g.limiter, cfg.limiter.enabled) {
                    for &seed in &dim(&g.seeds, cfg.seed) {
                        out.push(Point {
                            seed,
                            noise_rate,
                            resync,
                            raaimt,
                            limiter,
                        });
                    }
                }
            }
        }
    }
    out
}

fn point_config(cfg: &ExperimentConfig, p: &Point) -> Result<ExperimentConfig> {
    let base = cfg.sweep.as_ref().expect("sweep grid").base;
    let mut c = ExperimentConfig {
        kind: base,
        sweep: None,
        seed: p.seed,
        noise_rate: p.noise_rate,
        ..cfg.clone()
    };
    c.channel.resync_interval = p.resync;
    c.limiter.enabled = p.limiter;
    let policy = c.rfm.as_ref().expect("resolved").policy;
    c.rfm = Some(RfmParams {
        policy,
        ..RfmParams::with_raaimt(p.raaimt)
    });
    c.resolve()
}

fn run_point(cfg: &ExperimentConfig, i: usize, p: &Point) -> Result<SweepRow> {
    let c = point_config(cfg, p)?;
    let mut row = SweepRow {
        point: i,
        kind: c.kind,
        seed: p.seed,
        noise_rate: c.noise_rate.unwrap_or(0.0),
        resync_interval: p.resync,
        raaimt: p.raaimt,
        limiter: p.limiter,
        accuracy: None,
        bits_sent: None,
        gap_ns: None,
        rfm_commands: None,
        analytical_nrfm: None,
        simulated_nrfm: None,
        victim_slowdown: None,
        attacker_denials: None,
        error: None,
    };
    let outcome = match c.kind {
        ExperimentKind::Dos => run_dos(&c.system(), &c.dos, c.seed).map(|run| {
            let r = run.report;
            row.analytical_nrfm = Some(r.analytical_nrfm);
            row.simulated_nrfm = Some(r.simulated_nrfm);
            row.attacker_denials = Some(r.attacker_denials);
            if !r.victims.is_empty() {
                row.victim_slowdown = Some(r.victims.iter().map(|v| v.slowdown).sum::<f64>() / r.victims.len() as f64);
            }
        }),
        _ => run_channel(&c.system(), &c.channel, &message_bits(&c), c.seed).map(|run| {
            let r = run.report;
            row.accuracy = Some(r.accuracy);
            row.bits_sent = Some(r.bits_sent);
            row.gap_ns = r.gap_ns;
            row.rfm_commands = Some(r.rfm_commands);
        }),
    };
    match outcome {
        Ok(()) => Ok(row),
        // Configuration problems stop the sweep; measurement failures are
        // data.
        Err(e @ (Error::ConfigParse(_) | Error::InvalidConfig { .. } | Error::Io(_))) => Err(e),
        Err(e) => {
            row.error = Some(e.to_string());
            Ok(row)
        }
    }
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (n, s) = v.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x));
    (n > 0).then(|| s / n as f64)
}

fn summarize(rows: &[SweepRow]) -> Vec<SweepSummaryRow> {
    let mut out: Vec<SweepSummaryRow> = Vec::new();
    let key = |r: &SweepRow| (r.noise_rate.to_bits(), r.resync_interval, r.raaimt, r.limiter);
    let mut keys: Vec<_> = Vec::new();
    for r in rows {
        if !keys.contains(&key(r)) {
            keys.push(key(r));
        }
    }
    for k in keys {
        let group: Vec<&SweepRow> = rows.iter().filter(|r| key(r) == k).collect();
        let ok = || group.iter().filter(|r| r.error.is_none());
        out.push(SweepSummaryRow {
            noise_rate: group[0].noise_rate,
            resync_interval: k.1,
            raaimt: k.2,
            limiter: k.3,
            points: group.len(),
            failed: group.len() - ok().count(),
            mean_accuracy: mean(ok().filter_map(|r| r.accuracy)),
            mean_simulated_nrfm: mean(ok().filter_map(|r| r.simulated_nrfm)),
            mean_victim_slowdown: mean(ok().filter_map(|r| r.victim_slowdown)),
        });
    }
    out
}

/// Run every grid point of a resolved sweep config.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<(Vec<SweepRow>, Vec<SweepSummaryRow>)> {
    let pts = points(cfg);
    let rows: Vec<Result<SweepRow>> = pts.par_iter().enumerate().map(|(i, p)| run_point(cfg, i, p)).collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    let summary = summarize(&rows);
    Ok((rows, summary))
}

/// Column names of a row type, for tables with no rows.
pub(crate) trait CsvRow: Serialize {
    const HEADER: &'static [&'static str];
}

impl CsvRow for SweepRow {
    const HEADER: &'static [&'static str] = &[
        "point",
        "kind",
        "seed",
        "noise_rate",
        "resync_interval",
        "raaimt",
        "limiter",
        "accuracy",
        "bits_sent",
        "gap_ns",
        "rfm_commands",
        "analytical_nrfm",
        "simulated_nrfm",
        "victim_slowdown",
        "attacker_denials",
        "error",
    ];
}

impl CsvRow for SweepSummaryRow {
    const HEADER: &'static [&'static str] = &[
        "noise_rate",
        "resync_interval",
        "raaimt",
        "limiter",
        "points",
        "failed",
        "mean_accuracy",
        "mean_simulated_nrfm",
        "mean_victim_slowdown",
    ];
}

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// CSV with a header row, also when `rows` is empty.
pub(crate) fn rows_csv<T: CsvRow>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(T::HEADER).map_err(io_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(io_err)?;
    }
    let bytes = w.into_inner().map_err(io_err)?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}
