//! Covert-channel protocol: refresh synchronization, threshold calibration,
//! decoding, and the end-to-end channel run.
//!
//! A run synchronizes both parties to the REF grid, spends two slots
//! bringing the sender's counter to steady state, transmits an alternating
//! preamble used to calibrate the decode threshold, then the message.

use serde::{Deserialize, Serialize};

use crate::agents::{
    derive_seed, Agent, AgentSpec, ClosedLoop, Noise, ProbeOutcome, Prober, Receiver, ReceiverLayout, Role, RowCursor,
    Sender, SenderPlan, SlotPacer, INIT_SLOTS,
};
use crate::dram::{CommandRecord, TimingParams};
use crate::error::{Error, Result};
use crate::rfm::RfmPolicy;
use crate::sim::SimTime;
use crate::system::{SystemConfig, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// All-bank RFM, one bit per refresh period.
    #[default]
    Rfmab,
    /// Same-bank RFM under fine-granularity refresh, one bit per half period.
    Rfmsb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncMode {
    /// Both parties are handed the true REF phase.
    #[default]
    Oracle,
    /// Both parties probe for a REF before transmitting.
    Probe,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub mode: ChannelMode,
    /// Alternating bits (starting with '1') sent before the message.
    pub preamble_bits: u32,
    /// Re-anchor to the REF grid every this many bits; 0 disables.
    pub resync_interval: u32,
    /// Fixed decode threshold; calibrated from the preamble when absent.
    pub threshold_ns: Option<u64>,
    pub sync: SyncMode,
    /// With probing, transmission starts at the first slot after this many
    /// refresh periods so probe ACTs have drained from the counters.
    pub settle_periods: u32,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            mode: ChannelMode::Rfmab,
            preamble_bits: 16,
            resync_interval: 0,
            threshold_ns: None,
            sync: SyncMode::Oracle,
            settle_periods: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncEstimate {
    /// Estimated issue time of a REF.
    pub ref_issue: SimTime,
    pub phase: u64,
    /// When the estimate became available.
    pub detected_at: SimTime,
}

/// Probe for a REF with each prober concurrently.
pub fn synchronize_all(world: &mut World, probers: Vec<Prober>) -> Result<Vec<SyncEstimate>> {
    let start = world.now();
    let period = world.timing().ref_period();
    let ids: Vec<usize> = probers
        .into_iter()
        .map(|p| world.add_agent(Agent::Prober(p), start))
        .collect();
    let all_done = |w: &World| ids.iter().all(|&i| w.agent(i).is_done());
    world.run_while_pending(period / 4, start + 4 * period, all_done);
    ids.iter()
        .map(|&i| match world.agent(i) {
            Agent::Prober(p) => match p.outcome() {
                Some(ProbeOutcome::Detected { ref_issue, phase, .. }) => Ok(SyncEstimate {
                    ref_issue,
                    phase,
                    detected_at: world.now(),
                }),
                Some(ProbeOutcome::Failed { probed_until }) => Err(Error::Sync(format!(
                    "no REF detected between t={start} and t={probed_until} ns (two refresh periods)"
                ))),
                None => Err(Error::Sync("probe did not complete".into())),
            },
            _ => unreachable!(),
        })
        .collect()
}

/// Probe for a REF with one prober and return the inferred phase.
pub fn synchronize_to_ref(world: &mut World, prober: Prober) -> Result<SyncEstimate> {
    Ok(synchronize_all(world, vec![prober])?.remove(0))
}

/// Midpoint of the two cluster means, rounded down.
pub fn calibrate_threshold(zeros: &[u64], ones: &[u64], min_separation: u64) -> Result<u64> {
    let (Some(m0), Some(m1)) = (mean(zeros), mean(ones)) else {
        return Err(Error::Calibration("preamble lacks a '0' or a '1' measurement".into()));
    };
    if m1 - m0 < min_separation as f64 {
        return Err(Error::Calibration(format!(
            "'1' mean {m1:.1} ns and '0' mean {m0:.1} ns are closer than {min_separation} ns"
        )));
    }
    Ok(((m0 + m1) / 2.0).floor() as u64)
}

pub fn decode_bit(elapsed: u64, threshold: u64) -> bool {
    elapsed > threshold
}

fn mean(xs: &[u64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().map(|&x| x as f64).sum::<f64>() / xs.len() as f64)
}

/// Raw channel bandwidth of one sub-channel in bytes per second.
pub fn raw_bandwidth(bit_period_ns: u64) -> f64 {
    1e9 / (8.0 * bit_period_ns as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub mode: ChannelMode,
    pub bits_sent: u64,
    pub bits_correct: u64,
    pub accuracy: f64,
    pub bit_period_ns: u64,
    pub raw_bandwidth_bytes_per_s: f64,
    pub raw_bandwidth_kib_per_s: f64,
    /// Raw bandwidth with one channel per sub-channel.
    pub total_raw_bandwidth_kib_per_s: f64,
    /// Message bits over the whole run from the first slot, including
    /// initialization and preamble.
    pub effective_bandwidth_bytes_per_s: f64,
    pub threshold_ns: u64,
    pub zero_mean_ns: Option<f64>,
    pub one_mean_ns: Option<f64>,
    /// Mean '1' minus mean '0' elapsed time over the message.
    pub gap_ns: Option<f64>,
    /// Smallest '1' minus largest '0' elapsed time over the message.
    pub separation_ns: Option<i64>,
    pub sync: SyncMode,
    pub sender_ref_estimate: SimTime,
    pub receiver_ref_estimate: SimTime,
    pub resyncs: u64,
    pub skipped_slots: u64,
    pub unsent_bits: u64,
    pub rfm_commands: u64,
    pub sent: String,
    pub decoded: String,
    pub elapsed_ns: Vec<Option<u64>>,
}

/// Report plus the raw material tests and tools need.
#[derive(Debug, Clone)]
pub struct ChannelRun {
    pub report: ChannelReport,
    pub trace: Vec<CommandRecord>,
    /// Sender-bank counter after each REF completion from the first slot on.
    pub sender_counters: Vec<u32>,
    /// `(slot, start)` of each sender slot.
    pub sender_slots: Vec<(u64, SimTime)>,
    pub origin: SimTime,
}

fn first_grid_at_or_after(est: SimTime, period: u64, t: SimTime) -> SimTime {
    if est >= t {
        est - (est - t) / period * period
    } else {
        est + (t - est).div_ceil(period) * period
    }
}

fn bits_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

pub fn preamble(len: u32) -> Vec<bool> {
    (0..len).map(|i| i % 2 == 0).collect()
}

/// Run the channel in the mode given by `ch`.
pub fn run_channel(sys: &SystemConfig, ch: &ChannelConfig, message: &[bool], seed: u64) -> Result<ChannelRun> {
    run(sys, ch, message, seed, true)
}

/// Run the same-bank variant. Requires fine-granularity refresh, the
/// same-bank policy, and sender and receiver in one bank-set.
pub fn run_channel_rfmsb(sys: &SystemConfig, ch: &ChannelConfig, message: &[bool], seed: u64) -> Result<ChannelRun> {
    let ch = ChannelConfig {
        mode: ChannelMode::Rfmsb,
        ..ch.clone()
    };
    run(sys, &ch, message, seed, true)
}

/// As [`run_channel`] but without the bank-set placement check, to observe
/// a receiver the sender's RFMsb cannot reach.
pub fn run_channel_unchecked(
    sys: &SystemConfig,
    ch: &ChannelConfig,
    message: &[bool],
    seed: u64,
) -> Result<ChannelRun> {
    run(sys, ch, message, seed, false)
}

struct Parties<'a> {
    sender: &'a AgentSpec,
    receiver: &'a AgentSpec,
}

fn parties(sys: &SystemConfig) -> Result<Parties<'_>> {
    let find = |role: Role, name: &str| -> Result<&AgentSpec> {
        let mut it = sys.agents.iter().filter(|a| a.role == role);
        let a = it
            .next()
            .ok_or_else(|| Error::invalid("agents", format!("a covert run needs one {name}")))?;
        if it.next().is_some() {
            return Err(Error::invalid(
                "agents",
                format!("a covert run takes exactly one {name}"),
            ));
        }
        Ok(a)
    };
    let sender = find(Role::Sender, "sender")?;
    let receiver = find(Role::Receiver, "receiver")?;
    if sender.subchannel != receiver.subchannel {
        return Err(Error::invalid("agents", "sender and receiver must share a sub-channel"));
    }
    Ok(Parties { sender, receiver })
}

fn check_mode(
    timing: &TimingParams,
    policy: RfmPolicy,
    ch: &ChannelConfig,
    p: &Parties,
    check_placement: bool,
) -> Result<u64> {
    match ch.mode {
        ChannelMode::Rfmab => {
            if policy != RfmPolicy::AllBank {
                return Err(Error::invalid("rfm.policy", "RFMab mode needs the all_bank policy"));
            }
            Ok(timing.t_rfc)
        }
        ChannelMode::Rfmsb => {
            if !timing.fgr_enabled {
                return Err(Error::invalid(
                    "timing.fgr_enabled",
                    "RFMsb mode requires fine-granularity refresh",
                ));
            }
            if policy != RfmPolicy::SameBank {
                return Err(Error::invalid("rfm.policy", "RFMsb mode needs the same_bank policy"));
            }
            let (s, r) = (timing.bank_set(p.sender.banks[0]), timing.bank_set(p.receiver.banks[0]));
            if check_placement && s != r {
                return Err(Error::invalid(
                    "agents",
                    format!("receiver bank-set {r} is outside the sender's RFMsb bank-set {s}"),
                ));
            }
            Ok(timing.t_rfc_sb)
        }
    }
}

/// Add every non-channel agent of the roster at t = 0.
pub(crate) fn add_background(world: &mut World, sys: &SystemConfig, seed: u64) {
    let slot = sys.timing.t_rc;
    for (i, a) in sys.agents.iter().enumerate() {
        let rows = |b: u32| RowCursor::new(b, a.rows);
        let agent = match a.role {
            Role::Sender | Role::Receiver => continue,
            Role::Noise => Agent::Noise(Box::new(Noise::new(
                a.core,
                a.subchannel,
                a.banks.iter().map(|&b| rows(b)).collect(),
                a.rate.unwrap_or(0.0),
                a.burst.clone(),
                slot,
                derive_seed(seed, i as u64),
            ))),
            Role::Dos => Agent::Dos(ClosedLoop::new(a.core, a.subchannel, rows(a.banks[0]), 0)),
            Role::Victim => Agent::Victim(ClosedLoop::spread(
                a.core,
                a.subchannel,
                a.banks.iter().map(|&b| rows(b)).collect(),
                a.think_ns.unwrap_or(0),
            )),
        };
        world.add_agent(agent, 0);
    }
}

fn run(
    sys: &SystemConfig,
    ch: &ChannelConfig,
    message: &[bool],
    seed: u64,
    check_placement: bool,
) -> Result<ChannelRun> {
    sys.validate()?;
    let timing = &sys.timing;
    let p = parties(sys)?;
    let stall = check_mode(timing, sys.rfm.policy, ch, &p, check_placement)?;
    let period = timing.ref_period();
    let raaimt = sys.rfm.raaimt;
    let plan = SenderPlan::for_raaimt(raaimt);
    if timing.t_rfc + u64::from(plan.one_acts) * timing.t_rc + stall > period {
        return Err(Error::invalid(
            "rfm.raaimt",
            format!(
                "a '1' slot ({} ACTs plus the stall) does not fit the {period} ns bit period",
                plan.one_acts
            ),
        ));
    }
    let layout = ReceiverLayout::plan(timing, raaimt, stall, period)?;

    let mut world = World::new(timing, &sys.rfm, &sys.limiter)?;
    add_background(&mut world, sys, seed);

    let (s_est, r_est, start_after) = match ch.sync {
        SyncMode::Oracle => (timing.ref_phase, timing.ref_phase, 0),
        SyncMode::Probe => {
            let est = synchronize_all(
                &mut world,
                vec![
                    Prober::new(
                        p.sender.core,
                        p.sender.subchannel,
                        p.sender.banks[0],
                        timing.t_rc,
                        timing.t_rfc,
                        period,
                    ),
                    Prober::new(
                        p.receiver.core,
                        p.receiver.subchannel,
                        p.receiver.banks[0],
                        timing.t_rc,
                        timing.t_rfc,
                        period,
                    ),
                ],
            )?;
            let after = (u64::from(ch.settle_periods) * period).max(world.now());
            (est[0].ref_issue, est[1].ref_issue, after)
        }
    };
    let s_origin = first_grid_at_or_after(s_est, period, start_after);
    let r_origin = first_grid_at_or_after(r_est, period, start_after);

    let mut bits = preamble(ch.preamble_bits);
    bits.extend_from_slice(message);
    let total = bits.len();
    let sc = p.sender.subchannel;
    let s_bank = p.sender.banks[0];

    let sender = Sender::new(
        p.sender.core,
        sc,
        RowCursor::new(s_bank, p.sender.rows),
        plan,
        bits.clone(),
        SlotPacer::new(s_origin, period, ch.resync_interval, INIT_SLOTS),
    );
    let receiver = Receiver::new(
        p.receiver.core,
        sc,
        RowCursor::new(p.receiver.banks[0], p.receiver.rows),
        layout,
        timing.t_rc,
        total,
        SlotPacer::new(r_origin, period, ch.resync_interval, INIT_SLOTS),
    );
    let now = world.now();
    let sid = world.add_agent(Agent::Sender(sender), now);
    let rid = world.add_agent(Agent::Receiver(receiver), now);

    let slots = INIT_SLOTS + total as u64;
    let cap = s_origin.max(r_origin) + 3 * (slots + 8) * period;
    let finished = world.run_while_pending(64 * period, cap, |w| w.agent(sid).is_done() && w.agent(rid).is_done());
    if !finished {
        return Err(Error::Measurement(format!("channel run did not finish by t={cap} ns")));
    }
    let end = world.now();

    let (Agent::Sender(sender), Agent::Receiver(receiver)) = (world.agent(sid), world.agent(rid)) else {
        unreachable!()
    };
    let elapsed = receiver.elapsed().to_vec();
    let pre = ch.preamble_bits as usize;

    let threshold = match ch.threshold_ns {
        Some(t) => t,
        None => {
            let (mut zeros, mut ones) = (Vec::new(), Vec::new());
            for (i, e) in elapsed[..pre].iter().enumerate() {
                if let Some(e) = *e {
                    if bits[i] {
                        ones.push(e)
                    } else {
                        zeros.push(e)
                    }
                }
            }
            calibrate_threshold(&zeros, &ones, stall / 2)?
        }
    };

    let decoded: Vec<bool> = elapsed[pre..]
        .iter()
        .map(|e| e.is_some_and(|e| decode_bit(e, threshold)))
        .collect();
    let correct = decoded.iter().zip(message).filter(|(a, b)| a == b).count() as u64;
    let (mut zeros, mut ones) = (Vec::new(), Vec::new());
    for (e, &b) in elapsed[pre..].iter().zip(message) {
        if let Some(e) = *e {
            if b {
                ones.push(e)
            } else {
                zeros.push(e)
            }
        }
    }
    let (m0, m1) = (mean(&zeros), mean(&ones));
    let separation = match (zeros.iter().max(), ones.iter().min()) {
        (Some(&z), Some(&o)) => Some(o as i64 - z as i64),
        _ => None,
    };

    let origin = s_origin.min(r_origin);
    let raw = raw_bandwidth(period);
    let trace = world.trace();
    let ctl = world.controller(sc);
    let first_ref = ctl.schedule().first_index_at_or_after(s_origin);
    let sender_counters = ctl
        .snapshots()
        .iter()
        .filter(|s| s.ref_index >= first_ref)
        .map(|s| s.counters[s_bank as usize])
        .collect();
    let n = message.len() as u64;
    let report = ChannelReport {
        mode: ch.mode,
        bits_sent: n,
        bits_correct: correct,
        accuracy: if n == 0 { 1.0 } else { correct as f64 / n as f64 },
        bit_period_ns: period,
        raw_bandwidth_bytes_per_s: raw,
        raw_bandwidth_kib_per_s: raw / 1024.0,
        total_raw_bandwidth_kib_per_s: raw * f64::from(timing.subchannels) / 1024.0,
        effective_bandwidth_bytes_per_s: if end > origin {
            n as f64 / 8.0 / ((end - origin) as f64 * 1e-9)
        } else {
            0.0
        },
        threshold_ns: threshold,
        zero_mean_ns: m0,
        one_mean_ns: m1,
        gap_ns: m0.zip(m1).map(|(a, b)| b - a),
        separation_ns: separation,
        sync: ch.sync,
        sender_ref_estimate: s_est,
        receiver_ref_estimate: r_est,
        resyncs: receiver.pacer().resyncs(),
        skipped_slots: receiver.pacer().skipped(),
        unsent_bits: sender.sent()[pre..].iter().filter(|s| !**s).count() as u64,
        rfm_commands: trace
            .iter()
            .filter(|r| r.kind != crate::dram::CommandKind::Act && r.kind != crate::dram::CommandKind::Ref)
            .count() as u64,
        sent: bits_string(message),
        decoded: bits_string(&decoded),
        elapsed_ns: elapsed[pre..].to_vec(),
    };
    Ok(ChannelRun {
        report,
        trace,
        sender_counters,
        sender_slots: sender.slot_starts().to_vec(),
        origin,
    })
}
