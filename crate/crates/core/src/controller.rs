//! Per-sub-channel memory controller: ACT admission against the rank state,
//! the static REF stream, mandatory RFM scheduling, and the optional
//! activation limiter.
//!
//! REF and RFM commands are not events in the queue. The controller is
//! advanced lazily to the time of each admission request and applies every
//! REF/RFM issue and completion up to that instant in time order, with
//! completions ahead of issues at equal times.

use std::collections::VecDeque;

use crate::dram::{CommandKind, CommandRecord, RankState, RefreshSchedule, TimingParams};
use crate::error::{Error, Result};
use crate::rfm::{Limiter, LimiterDecision, LimiterParams, RaaState, RfmParams, RfmPolicy};
use crate::sim::SimTime;

/// Outcome of one admission attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Granted(SimTime),
    /// Timing constraints hold the request until the given time.
    Wait(SimTime),
    /// The limiter refused the request; retry at the next interval.
    Denied(SimTime),
}

/// RAA counters of every bank, captured right after a REF decrement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterSnapshot {
    pub ref_index: u64,
    pub time: SimTime,
    pub counters: Vec<u32>,
}

#[derive(Debug, Clone)]
struct PendingRfm {
    kind: CommandKind,
    bank_set: Option<u32>,
    issue: SimTime,
    completion: SimTime,
    agent: Option<u32>,
    issued: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Step {
    // Order matters: completions first at equal times.
    RefDone,
    RfmDone,
    RefIssue,
    RfmIssue,
}

#[derive(Debug, Clone)]
pub struct Controller {
    timing: TimingParams,
    sched: RefreshSchedule,
    subchannel: u32,
    rank: RankState,
    raa: RaaState,
    limiter: Option<Limiter>,
    now: SimTime,
    next_ref_issue: u64,
    next_ref_done: u64,
    pending: VecDeque<PendingRfm>,
    trace: Vec<CommandRecord>,
    record_acts: bool,
    snapshots: Vec<CounterSnapshot>,
    acts: u64,
}

impl Controller {
    pub fn new(timing: &TimingParams, rfm: &RfmParams, limiter: &LimiterParams, subchannel: u32) -> Self {
        Controller {
            sched: timing.schedule(),
            timing: timing.clone(),
            subchannel,
            rank: RankState::new(timing.banks_per_rank),
            raa: RaaState::new(rfm.clone(), timing.banks_per_rank),
            limiter: limiter
                .enabled
                .then(|| Limiter::new(limiter.resolved_budget(rfm), limiter.grace_intervals)),
            now: 0,
            next_ref_issue: 0,
            next_ref_done: 0,
            pending: VecDeque::new(),
            trace: Vec::new(),
            record_acts: true,
            snapshots: Vec::new(),
            acts: 0,
        }
    }

    /// Keep ACT records out of the trace (REF/RFM records are always kept).
    pub fn without_act_records(mut self) -> Self {
        self.record_acts = false;
        self
    }

    pub fn timing(&self) -> &TimingParams {
        &self.timing
    }

    pub fn schedule(&self) -> &RefreshSchedule {
        &self.sched
    }

    pub fn subchannel(&self) -> u32 {
        self.subchannel
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn raa(&self) -> &RaaState {
        &self.raa
    }

    pub fn rank(&self) -> &RankState {
        &self.rank
    }

    pub fn limiter(&self) -> Option<&Limiter> {
        self.limiter.as_ref()
    }

    pub fn trace(&self) -> &[CommandRecord] {
        &self.trace
    }

    pub fn take_trace(&mut self) -> Vec<CommandRecord> {
        std::mem::take(&mut self.trace)
    }

    pub fn snapshots(&self) -> &[CounterSnapshot] {
        &self.snapshots
    }

    pub fn acts(&self) -> u64 {
        self.acts
    }

    fn rfm_duration(&self) -> u64 {
        match self.raa.params().policy {
            RfmPolicy::AllBank => self.timing.t_rfc,
            RfmPolicy::SameBank => self.timing.t_rfc_sb,
        }
    }

    fn next_step(&self) -> Option<(SimTime, Step)> {
        let mut steps = vec![
            (self.sched.completion(self.next_ref_done), Step::RefDone),
            (self.sched.issue(self.next_ref_issue), Step::RefIssue),
        ];
        if let Some(p) = self.pending.front() {
            if p.issued {
                steps.push((p.completion, Step::RfmDone));
            } else {
                steps.push((p.issue, Step::RfmIssue));
            }
        }
        steps.into_iter().min()
    }

    /// Apply every REF/RFM issue and completion at or before `t`.
    pub fn advance(&mut self, t: SimTime) {
        while let Some((at, step)) = self.next_step() {
            if at > t {
                break;
            }
            match step {
                Step::RefIssue => {
                    let k = self.next_ref_issue;
                    self.trace.push(CommandRecord {
                        kind: CommandKind::Ref,
                        subchannel: self.subchannel,
                        bank: None,
                        bank_set: None,
                        issue: self.sched.issue(k),
                        completion: self.sched.completion(k),
                        agent: None,
                    });
                    self.next_ref_issue += 1;
                }
                Step::RefDone => {
                    self.raa.apply_ref_decrement();
                    self.snapshots.push(CounterSnapshot {
                        ref_index: self.next_ref_done,
                        time: at,
                        counters: self.raa.counters().to_vec(),
                    });
                    self.next_ref_done += 1;
                }
                Step::RfmIssue => {
                    let p = self.pending.front_mut().expect("pending RFM");
                    p.issued = true;
                    let rec = CommandRecord {
                        kind: p.kind,
                        subchannel: self.subchannel,
                        bank: None,
                        bank_set: p.bank_set,
                        issue: p.issue,
                        completion: p.completion,
                        agent: p.agent,
                    };
                    self.trace.push(rec);
                }
                Step::RfmDone => {
                    let p = self.pending.pop_front().expect("pending RFM");
                    match p.bank_set {
                        None => self.raa.apply_rfmab_decrement(),
                        Some(set) => self.raa.apply_rfmsb_decrement(&self.timing, set),
                    }
                }
            }
        }
        self.now = self.now.max(t);
    }

    /// One admission attempt by `core` for `bank` at time `t` (clamped to the
    /// controller clock). On a grant the ACT is recorded and counted.
    pub fn request(&mut self, core: u32, bank: u32, t: SimTime) -> Admission {
        assert!(
            bank < self.timing.banks_per_rank,
            "bank {bank} out of range for a {}-bank rank",
            self.timing.banks_per_rank
        );
        let t = t.max(self.now);
        self.advance(t);
        let g = self.rank.earliest_act(&self.timing, &self.sched, bank, t);
        if g > t {
            return Admission::Wait(g);
        }
        if let Some(lim) = self.limiter.as_mut() {
            let interval = self.sched.interval_of(t);
            if lim.check(core, bank, interval) == LimiterDecision::DenyUntilNextInterval {
                lim.record_denial(core);
                return Admission::Denied(self.sched.issue((interval + 1) as u64));
            }
            lim.record_grant(core, bank, interval);
        }
        self.grant(core, bank, t);
        Admission::Granted(t)
    }

    /// Admit an ACT to `bank`, delaying it as long as needed. Returns the
    /// grant time.
    pub fn admit_act(&mut self, core: u32, bank: u32, requested_at: SimTime) -> SimTime {
        let mut t = requested_at;
        loop {
            match self.request(core, bank, t) {
                Admission::Granted(g) => return g,
                Admission::Wait(at) | Admission::Denied(at) => t = at,
            }
        }
    }

    fn grant(&mut self, core: u32, bank: u32, at: SimTime) {
        self.rank.record_act(&self.timing, bank, at);
        self.acts += 1;
        if self.record_acts {
            self.trace.push(CommandRecord {
                kind: CommandKind::Act,
                subchannel: self.subchannel,
                bank: Some(bank),
                bank_set: None,
                issue: at,
                completion: at + self.timing.t_rc,
                agent: Some(core),
            });
        }
        if self.raa.on_act(bank) == self.raa.params().raammt {
            self.trigger_rfm(core, bank, at);
        }
    }

    /// Schedule the mandatory RFM for a bank that saturated at `at`. It
    /// issues once the triggering ACT completes, after any earlier RFM and
    /// after a REF it would overlap. New ACTs to the affected banks stall
    /// from now until the RFM completes.
    fn trigger_rfm(&mut self, core: u32, bank: u32, at: SimTime) {
        let dur = self.rfm_duration();
        let mut x = at + self.timing.t_rc;
        if let Some(last) = self.pending.back() {
            x = x.max(last.completion);
        }
        while let Some(end) = self.sched.conflict(x, dur) {
            x = end;
        }
        let (kind, bank_set) = match self.raa.params().policy {
            RfmPolicy::AllBank => {
                self.rank.rank_blocked_until = self.rank.rank_blocked_until.max(x + dur);
                (CommandKind::Rfmab, None)
            }
            RfmPolicy::SameBank => {
                let set = self.timing.bank_set(bank);
                for b in self.timing.banks_in_set(set) {
                    let w = &mut self.rank.bank_blocked_until[b as usize];
                    *w = (*w).max(x + dur);
                }
                (CommandKind::Rfmsb, Some(set))
            }
        };
        if let Some(lim) = self.limiter.as_mut() {
            lim.record_trigger(self.sched.interval_of(at));
        }
        self.pending.push_back(PendingRfm {
            kind,
            bank_set,
            issue: x,
            completion: x + dur,
            agent: Some(core),
            issued: false,
        });
    }

    fn assert_free(&self, at: SimTime, dur: u64, what: &str) {
        assert!(
            at >= self.now,
            "{what} at t={at} is before the controller clock t={}",
            self.now
        );
        if let Some(end) = self.sched.conflict(at, dur) {
            panic!(
                "overlapping {what}: [{at}, {}) collides with a REF window ending at {end}",
                at + dur
            );
        }
        if let Some(p) = self.pending.iter().find(|p| at < p.completion && p.issue < at + dur) {
            panic!(
                "overlapping {what}: [{at}, {}) collides with an RFM window [{}, {})",
                at + dur,
                p.issue,
                p.completion
            );
        }
    }

    /// The REF record of refresh period `index`, advancing the controller
    /// to its issue time.
    pub fn refresh_tick(&mut self, index: u64) -> CommandRecord {
        let issue = self.sched.issue(index);
        self.advance(issue);
        CommandRecord {
            kind: CommandKind::Ref,
            subchannel: self.subchannel,
            bank: None,
            bank_set: None,
            issue,
            completion: issue + self.timing.t_rfc,
            agent: None,
        }
    }

    /// Issue an RFMab at `at`, outside the mandatory trigger path.
    ///
    /// # Panics
    ///
    /// If the window overlaps a REF or another RFM.
    pub fn issue_rfmab(&mut self, at: SimTime) -> CommandRecord {
        self.advance(at);
        let dur = self.timing.t_rfc;
        self.assert_free(at, dur, "RFMab");
        self.rank.rank_blocked_until = self.rank.rank_blocked_until.max(at + dur);
        self.push_manual(CommandKind::Rfmab, None, at, dur)
    }

    /// Issue an RFMsb to `bank_set` at `at`. Requires fine-granularity refresh.
    pub fn issue_rfmsb(&mut self, bank_set: u32, at: SimTime) -> Result<CommandRecord> {
        if !self.timing.fgr_enabled {
            return Err(Error::invalid(
                "timing.fgr_enabled",
                "RFMsb requires fine-granularity refresh",
            ));
        }
        if bank_set >= self.timing.banks_per_group {
            return Err(Error::invalid(
                "bank_set",
                format!(
                    "{bank_set} is not below banks_per_group ({})",
                    self.timing.banks_per_group
                ),
            ));
        }
        self.advance(at);
        let dur = self.timing.t_rfc_sb;
        self.assert_free(at, dur, "RFMsb");
        for b in self.timing.banks_in_set(bank_set) {
            let w = &mut self.rank.bank_blocked_until[b as usize];
            *w = (*w).max(at + dur);
        }
        Ok(self.push_manual(CommandKind::Rfmsb, Some(bank_set), at, dur))
    }

    fn push_manual(&mut self, kind: CommandKind, bank_set: Option<u32>, at: SimTime, dur: u64) -> CommandRecord {
        let p = PendingRfm {
            kind,
            bank_set,
            issue: at,
            completion: at + dur,
            agent: None,
            issued: false,
        };
        let rec = CommandRecord {
            kind,
            subchannel: self.subchannel,
            bank: None,
            bank_set,
            issue: at,
            completion: at + dur,
            agent: None,
        };
        let pos = self
            .pending
            .iter()
            .position(|q| q.issue > at)
            .unwrap_or(self.pending.len());
        self.pending.insert(pos, p);
        self.advance(at);
        rec
    }

    /// Advance to `t` so every command up to it is in the trace.
    pub fn finish(&mut self, t: SimTime) {
        self.advance(t);
    }
}
