//! DDR5 rank timing: timing constants, the static refresh schedule, per-bank
//! blocking windows, and the command records emitted by the controller.
//!
//! Only activation admission is modeled. Every request costs one ACT and the
//! bank is busy for `t_rc` after it; REF and RFMab block the whole rank,
//! RFMsb blocks the eight banks of one bank-set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::SimTime;

/// Timing constants for one DDR5 configuration. All values are integer ns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingParams {
    /// Row cycle time: minimum spacing of two ACTs to one bank.
    pub t_rc: u64,
    /// Duration of REF and RFMab (whole rank blocked).
    pub t_rfc: u64,
    /// Refresh interval.
    pub t_refi: u64,
    /// Duration of RFMsb (one bank-set blocked).
    pub t_rfc_sb: u64,
    /// Refresh window; rows are refreshed in `refresh_groups` REF commands.
    pub t_refw: u64,
    pub refresh_groups: u64,
    pub banks_per_rank: u32,
    pub bankgroups: u32,
    pub banks_per_group: u32,
    pub subchannels: u32,
    /// Fine-granularity refresh: REF every `t_refi / 2`.
    pub fgr_enabled: bool,
    /// Offset of the first REF from t = 0, in `[0, ref_period)`.
    pub ref_phase: u64,
}

impl Default for TimingParams {
    fn default() -> Self {
        TimingParams {
            t_rc: 48,
            t_rfc: 410,
            t_refi: 3900,
            t_rfc_sb: 190,
            t_refw: 32_000_000,
            refresh_groups: 8192,
            banks_per_rank: 32,
            bankgroups: 8,
            banks_per_group: 4,
            subchannels: 2,
            fgr_enabled: false,
            ref_phase: 0,
        }
    }
}

impl TimingParams {
    pub fn with_fgr(mut self) -> Self {
        self.fgr_enabled = true;
        self
    }

    pub fn with_phase(mut self, phase: u64) -> Self {
        self.ref_phase = phase;
        self
    }

    /// Spacing of REF commands: `t_refi`, or `t_refi / 2` with FGR.
    pub fn ref_period(&self) -> u64 {
        if self.fgr_enabled {
            self.t_refi / 2
        } else {
            self.t_refi
        }
    }

    /// Time between refresh groups over the refresh window. Fractional for
    /// the default constants, so it is only reported, never scheduled.
    pub fn refresh_group_interval(&self) -> f64 {
        self.t_refw as f64 / self.refresh_groups as f64
    }

    /// Bank-set of a bank: the same bank index across all bank groups.
    pub fn bank_set(&self, bank: u32) -> u32 {
        bank % self.banks_per_group
    }

    pub fn banks_in_set(&self, set: u32) -> impl Iterator<Item = u32> + '_ {
        (0..self.bankgroups).map(move |g| g * self.banks_per_group + set)
    }

    /// ACTs one bank can complete between two REFs with no other stall.
    pub fn max_acts_per_period(&self) -> u64 {
        (self.ref_period() - self.t_rfc) / self.t_rc
    }

    pub fn schedule(&self) -> RefreshSchedule {
        RefreshSchedule {
            phase: self.ref_phase,
            period: self.ref_period(),
            duration: self.t_rfc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("timing.t_rc", self.t_rc),
            ("timing.t_rfc", self.t_rfc),
            ("timing.t_refi", self.t_refi),
            ("timing.t_rfc_sb", self.t_rfc_sb),
            ("timing.refresh_groups", self.refresh_groups),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::invalid(field, "must be positive"));
            }
        }
        if self.bankgroups == 0 || self.banks_per_group == 0 || self.subchannels == 0 {
            return Err(Error::invalid(
                "timing.bankgroups",
                "bank groups, banks per group and sub-channels must be positive",
            ));
        }
        if self.banks_per_rank != self.bankgroups * self.banks_per_group {
            return Err(Error::invalid(
                "timing.banks_per_rank",
                format!(
                    "{} != bankgroups ({}) x banks_per_group ({})",
                    self.banks_per_rank, self.bankgroups, self.banks_per_group
                ),
            ));
        }
        if self.fgr_enabled && !self.t_refi.is_multiple_of(2) {
            return Err(Error::invalid("timing.t_refi", "must be even with FGR enabled"));
        }
        if self.t_rfc + self.t_rc > self.ref_period() {
            return Err(Error::invalid(
                "timing.t_rfc",
                "REF leaves no room for an ACT in the refresh period",
            ));
        }
        if self.ref_phase >= self.ref_period() {
            return Err(Error::invalid(
                "timing.ref_phase",
                format!("must be below the refresh period {}", self.ref_period()),
            ));
        }
        Ok(())
    }
}

/// Static REF timeline: REF `k` is issued at `phase + k * period` and keeps
/// the rank blocked for `duration`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefreshSchedule {
    pub phase: u64,
    pub period: u64,
    pub duration: u64,
}

impl RefreshSchedule {
    pub fn issue(&self, index: u64) -> SimTime {
        self.phase + index * self.period
    }

    pub fn completion(&self, index: u64) -> SimTime {
        self.issue(index) + self.duration
    }

    /// Refresh interval containing `t`; `-1` before the first REF.
    pub fn interval_of(&self, t: SimTime) -> i64 {
        if t < self.phase {
            -1
        } else {
            ((t - self.phase) / self.period) as i64
        }
    }

    /// Start of interval `index` (the REF issue time).
    pub fn interval_start(&self, index: i64) -> SimTime {
        debug_assert!(index >= 0);
        self.issue(index as u64)
    }

    /// First REF issue time at or after `t`.
    pub fn next_boundary(&self, t: SimTime) -> SimTime {
        if t <= self.phase {
            return self.phase;
        }
        let k = (t - self.phase).div_ceil(self.period);
        self.issue(k)
    }

    /// If `[start, start + len)` overlaps a REF window, the end of that window.
    pub fn conflict(&self, start: SimTime, len: u64) -> Option<SimTime> {
        // First REF whose window ends after `start`.
        let k = if start < self.phase + self.duration {
            0
        } else {
            (start + 1 - self.phase - self.duration).div_ceil(self.period)
        };
        let issue = self.issue(k);
        (issue < start + len).then(|| issue + self.duration)
    }

    /// Index of the first REF issued at or after `t`.
    pub fn first_index_at_or_after(&self, t: SimTime) -> u64 {
        if t <= self.phase {
            0
        } else {
            (t - self.phase).div_ceil(self.period)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CommandKind {
    Act,
    Ref,
    Rfmab,
    Rfmsb,
}

impl CommandKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CommandKind::Act => "ACT",
            CommandKind::Ref => "REF",
            CommandKind::Rfmab => "RFMAB",
            CommandKind::Rfmsb => "RFMSB",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ACT" => Some(CommandKind::Act),
            "REF" => Some(CommandKind::Ref),
            "RFMAB" => Some(CommandKind::Rfmab),
            "RFMSB" => Some(CommandKind::Rfmsb),
            _ => None,
        }
    }
}

/// One command on a sub-channel's command stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub kind: CommandKind,
    pub subchannel: u32,
    /// Target bank (ACT only).
    pub bank: Option<u32>,
    /// Target bank-set (RFMsb only).
    pub bank_set: Option<u32>,
    pub issue: SimTime,
    pub completion: SimTime,
    /// Agent whose ACT this is, or whose ACT forced the RFM.
    pub agent: Option<u32>,
}

/// Per-bank blocking state of one rank.
#[derive(Debug, Clone)]
pub struct RankState {
    /// Covers RFMab windows and the mandatory-RFM stall.
    pub rank_blocked_until: SimTime,
    /// Covers RFMsb windows and the mandatory-RFMsb stall.
    pub bank_blocked_until: Vec<SimTime>,
    pub last_act: Vec<Option<SimTime>>,
    /// Latest completion of any granted ACT.
    pub inflight_until: SimTime,
}

impl RankState {
    pub fn new(banks: u32) -> Self {
        RankState {
            rank_blocked_until: 0,
            bank_blocked_until: vec![0; banks as usize],
            last_act: vec![None; banks as usize],
            inflight_until: 0,
        }
    }

    /// Earliest time `>= t` satisfying the rank window, the bank window, tRC
    /// since the last ACT to `bank`, and not overlapping any REF window.
    pub fn earliest_act(&self, timing: &TimingParams, sched: &RefreshSchedule, bank: u32, t: SimTime) -> SimTime {
        let b = bank as usize;
        let mut g = t.max(self.rank_blocked_until).max(self.bank_blocked_until[b]);
        if let Some(last) = self.last_act[b] {
            g = g.max(last + timing.t_rc);
        }
        // ACTs complete before the next REF issues.
        while let Some(end) = sched.conflict(g, timing.t_rc) {
            g = end;
        }
        g
    }

    pub fn record_act(&mut self, timing: &TimingParams, bank: u32, at: SimTime) {
        let b = bank as usize;
        debug_assert!(self.last_act[b].is_none_or(|l| at >= l + timing.t_rc));
        self.last_act[b] = Some(at);
        self.inflight_until = self.inflight_until.max(at + timing.t_rc);
    }
}
