//! Denial-of-service experiment: a hammering agent next to closed-loop
//! victims, compared with the victims running alone.

use serde::{Deserialize, Serialize};

use crate::agents::Role;
use crate::analytics::{
    analytical_nrfm, measure_nrfm, measure_slowdown, predicted_max_slowdown, rfm_per_interval, rfm_time_fraction,
    DosReport, NrfmModelInput, VictimResult,
};
use crate::channel::add_background;
use crate::dram::CommandRecord;
use crate::error::{Error, Result};
use crate::system::{SystemConfig, World};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DosConfig {
    /// Leading refresh intervals excluded from every measurement.
    pub warmup_intervals: usize,
    pub window_intervals: usize,
}

impl Default for DosConfig {
    fn default() -> Self {
        DosConfig {
            warmup_intervals: 10,
            window_intervals: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DosRun {
    pub report: DosReport,
    /// Command trace of the run with the attacker present.
    pub trace: Vec<CommandRecord>,
}

struct Outcome {
    trace: Vec<CommandRecord>,
    /// (core, completed requests in the window) per victim.
    victims: Vec<(u32, u64)>,
    denials: Vec<u64>,
}

fn simulate(sys: &SystemConfig, cfg: &DosConfig, seed: u64) -> Result<Outcome> {
    let mut world = World::new(&sys.timing, &sys.rfm, &sys.limiter)?;
    add_background(&mut world, sys, seed);
    let sched = sys.timing.schedule();
    let from = sched.issue(cfg.warmup_intervals as u64);
    let to = sched.issue((cfg.warmup_intervals + cfg.window_intervals) as u64);
    world.run_until(to);
    let mut victims = Vec::new();
    let mut denials = Vec::new();
    for (spec, agent) in sys.agents.iter().zip(world.agents()) {
        let lim = world.controller(spec.subchannel).limiter();
        denials.push(lim.map_or(0, |l| l.denials(spec.core)));
        if let crate::agents::Agent::Victim(v) = agent {
            victims.push((spec.core, v.completed_between(from, to)));
        }
    }
    Ok(Outcome {
        trace: world.trace(),
        victims,
        denials,
    })
}

pub fn run_dos(sys: &SystemConfig, cfg: &DosConfig, seed: u64) -> Result<DosRun> {
    sys.validate()?;
    if cfg.window_intervals == 0 {
        return Err(Error::invalid("dos.window_intervals", "must be positive"));
    }
    let attacker = sys
        .agents
        .iter()
        .position(|a| a.role == Role::Dos)
        .ok_or_else(|| Error::invalid("agents", "a DOS run needs a dos agent"))?;
    if sys
        .agents
        .iter()
        .any(|a| matches!(a.role, Role::Sender | Role::Receiver))
    {
        return Err(Error::invalid(
            "agents",
            "sender and receiver agents belong in covert runs",
        ));
    }
    let attacked = simulate(sys, cfg, seed)?;
    let alone = SystemConfig {
        agents: sys.agents.iter().filter(|a| a.role != Role::Dos).cloned().collect(),
        ..sys.clone()
    };
    let baseline = simulate(&alone, cfg, seed)?;

    let window = cfg.window_intervals as f64;
    let victim_specs: Vec<_> = sys.agents.iter().filter(|a| a.role == Role::Victim).collect();
    let mut victims = Vec::new();
    for (i, spec) in victim_specs.iter().enumerate() {
        let base = baseline.victims[i].1 as f64 / window;
        let att = attacked.victims[i].1 as f64 / window;
        let idx = sys
            .agents
            .iter()
            .position(|a| std::ptr::eq(a, *spec))
            .expect("victim in roster");
        victims.push(VictimResult {
            core: spec.core,
            banks: spec.banks.clone(),
            think_ns: spec.think_ns.unwrap_or(0),
            baseline_throughput: base,
            attacked_throughput: att,
            slowdown: measure_slowdown(base, att)?,
            denials: attacked.denials[idx],
        });
    }
    let sc = sys.agents[attacker].subchannel;
    let model = NrfmModelInput::new(&sys.timing, sys.rfm.raaimt);
    let per = rfm_per_interval(&attacked.trace, sc);
    let report = DosReport {
        raaimt: sys.rfm.raaimt,
        limiter: sys.limiter.enabled,
        warmup_intervals: cfg.warmup_intervals,
        window_intervals: cfg.window_intervals,
        analytical_nrfm: analytical_nrfm(&model),
        simulated_nrfm: measure_nrfm(&attacked.trace, sc, cfg.warmup_intervals, cfg.window_intervals)?,
        rfm_time_fraction: rfm_time_fraction(&model),
        predicted_max_slowdown: predicted_max_slowdown(&model),
        attacker_denials: attacked.denials[attacker],
        victims,
        rfm_per_interval: per[cfg.warmup_intervals..cfg.warmup_intervals + cfg.window_intervals].to_vec(),
    };
    Ok(DosRun {
        report,
        trace: attacked.trace,
    })
}
