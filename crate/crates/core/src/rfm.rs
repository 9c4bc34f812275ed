//! Refresh-management accounting: rolling accumulated ACT counters, the
//! mandatory-RFM trigger, the REF/RFM decrement rules, and the per-core
//! activation limiter.
//!
//! Counter rules:
//! - every ACT adds 1 to its bank's counter;
//! - reaching `raammt` makes an RFM mandatory before any further ACT;
//! - RFMab subtracts `raaimt` from every bank, RFMsb from one bank-set;
//! - REF subtracts `raaimt / 2` from every bank;
//! - all subtractions clamp at zero.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::dram::TimingParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfmParams {
    /// Decrement applied per RFM.
    pub raaimt: u32,
    /// Counter ceiling that forces an RFM.
    pub raammt: u32,
    /// Decrement applied per REF.
    pub ref_decrement: u32,
    pub policy: RfmPolicy,
}

impl Default for RfmParams {
    fn default() -> Self {
        RfmParams::with_raaimt(32)
    }
}

impl RfmParams {
    /// `raammt = 3 * raaimt`, `ref_decrement = raaimt / 2`.
    pub fn with_raaimt(raaimt: u32) -> Self {
        RfmParams {
            raaimt,
            raammt: 3 * raaimt,
            ref_decrement: raaimt / 2,
            policy: RfmPolicy::AllBank,
        }
    }

    pub fn same_bank(mut self) -> Self {
        self.policy = RfmPolicy::SameBank;
        self
    }

    pub fn validate(&self, timing: &TimingParams) -> Result<()> {
        if self.raaimt == 0 || !self.raaimt.is_multiple_of(2) {
            return Err(Error::invalid("rfm.raaimt", "must be a positive even count"));
        }
        if self.raammt <= self.raaimt {
            return Err(Error::invalid("rfm.raammt", "must exceed raaimt"));
        }
        if self.ref_decrement > self.raaimt {
            return Err(Error::invalid("rfm.ref_decrement", "must not exceed raaimt"));
        }
        if self.policy == RfmPolicy::SameBank && !timing.fgr_enabled {
            return Err(Error::invalid(
                "rfm.policy",
                "same-bank RFM requires fine-granularity refresh (timing.fgr_enabled)",
            ));
        }
        Ok(())
    }
}

/// Which RFM command the controller issues when a counter saturates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RfmPolicy {
    /// RFMab: blocks the rank for tRFC, decrements every bank.
    #[default]
    AllBank,
    /// RFMsb: blocks one bank-set for tRFCsb, decrements that set.
    SameBank,
}

/// Per-bank counters of one rank.
#[derive(Debug, Clone)]
pub struct RaaState {
    params: RfmParams,
    counters: Vec<u32>,
    /// Banks saturated since the last RFM that covered them.
    saturated: Vec<bool>,
}

impl RaaState {
    pub fn new(params: RfmParams, banks: u32) -> Self {
        RaaState {
            params,
            counters: vec![0; banks as usize],
            saturated: vec![false; banks as usize],
        }
    }

    pub fn params(&self) -> &RfmParams {
        &self.params
    }

    pub fn counter(&self, bank: u32) -> u32 {
        self.counters[bank as usize]
    }

    pub fn counters(&self) -> &[u32] {
        &self.counters
    }

    /// True while any bank waits for a mandatory RFM.
    pub fn mandatory_pending(&self) -> bool {
        self.saturated.iter().any(|&s| s)
    }

    pub fn is_saturated(&self, bank: u32) -> bool {
        self.saturated[bank as usize]
    }

    /// Count one ACT. Returns the new counter value; when it equals
    /// `raammt` the caller must issue an RFM before admitting more ACTs.
    ///
    /// # Panics
    ///
    /// Incrementing a saturated counter is a scheduler bug.
    pub fn on_act(&mut self, bank: u32) -> u32 {
        let b = bank as usize;
        assert!(
            self.counters[b] < self.params.raammt,
            "RFM protocol violation: ACT to bank {bank} with counter at RAAMMT={}",
            self.params.raammt
        );
        self.counters[b] += 1;
        if self.counters[b] == self.params.raammt {
            self.saturated[b] = true;
        }
        self.counters[b]
    }

    pub fn apply_rfmab_decrement(&mut self) {
        let d = self.params.raaimt;
        for c in &mut self.counters {
            *c = c.saturating_sub(d);
        }
        self.saturated.fill(false);
    }

    pub fn apply_ref_decrement(&mut self) {
        let d = self.params.ref_decrement;
        for c in &mut self.counters {
            *c = c.saturating_sub(d);
        }
    }

    pub fn apply_rfmsb_decrement(&mut self, timing: &TimingParams, bank_set: u32) {
        let d = self.params.raaimt;
        for b in timing.banks_in_set(bank_set) {
            let b = b as usize;
            self.counters[b] = self.counters[b].saturating_sub(d);
            self.saturated[b] = false;
        }
    }

    #[cfg(test)]
    pub(crate) fn set_counter(&mut self, bank: u32, value: u32) {
        self.counters[bank as usize] = value;
        self.saturated[bank as usize] = value == self.params.raammt;
    }
}

/// Activation-limiter settings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimiterParams {
    pub enabled: bool,
    /// ACTs per (core, bank) per refresh interval; `None` means
    /// `raaimt + raaimt / 2`.
    pub budget: Option<u32>,
    /// Intervals without any RFM after which limits are lifted.
    pub grace_intervals: u32,
}

impl Default for LimiterParams {
    fn default() -> Self {
        LimiterParams {
            enabled: false,
            budget: None,
            grace_intervals: 16,
        }
    }
}

impl LimiterParams {
    pub fn enabled() -> Self {
        LimiterParams {
            enabled: true,
            ..Default::default()
        }
    }

    pub fn resolved_budget(&self, rfm: &RfmParams) -> u32 {
        self.budget.unwrap_or(rfm.raaimt + rfm.raaimt / 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimiterDecision {
    Allow,
    /// Hold the request until the next refresh interval starts.
    DenyUntilNextInterval,
}

/// Per-(core, bank) ACT budget per refresh interval, active only while an
/// RFM has been triggered recently on this sub-channel.
#[derive(Debug, Clone)]
pub struct Limiter {
    budget: u32,
    grace: i64,
    last_trigger_interval: Option<i64>,
    used: HashMap<(u32, u32), (i64, u32)>,
    denials: HashMap<u32, u64>,
}

impl Limiter {
    pub fn new(budget: u32, grace_intervals: u32) -> Self {
        Limiter {
            budget,
            grace: grace_intervals as i64,
            last_trigger_interval: None,
            used: HashMap::new(),
            denials: HashMap::new(),
        }
    }

    pub fn budget(&self) -> u32 {
        self.budget
    }

    /// Limits apply when an RFM was triggered in this interval or any of
    /// the previous `grace` intervals.
    pub fn restricted(&self, interval: i64) -> bool {
        self.last_trigger_interval
            .is_some_and(|last| interval - last <= self.grace)
    }

    pub fn used(&self, core: u32, bank: u32, interval: i64) -> u32 {
        match self.used.get(&(core, bank)) {
            Some(&(i, n)) if i == interval => n,
            _ => 0,
        }
    }

    pub fn check(&self, core: u32, bank: u32, interval: i64) -> LimiterDecision {
        if !self.restricted(interval) || self.used(core, bank, interval) < self.budget {
            LimiterDecision::Allow
        } else {
            LimiterDecision::DenyUntilNextInterval
        }
    }

    pub fn record_grant(&mut self, core: u32, bank: u32, interval: i64) {
        let e = self.used.entry((core, bank)).or_insert((interval, 0));
        if e.0 != interval {
            *e = (interval, 0);
        }
        e.1 += 1;
    }

    pub fn record_denial(&mut self, core: u32) {
        *self.denials.entry(core).or_default() += 1;
    }

    pub fn record_trigger(&mut self, interval: i64) {
        self.last_trigger_interval = Some(interval);
    }

    pub fn denials(&self, core: u32) -> u64 {
        self.denials.get(&core).copied().unwrap_or(0)
    }

    pub fn total_denials(&self) -> u64 {
        self.denials.values().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(raaimt: u32) -> RaaState {
        RaaState::new(RfmParams::with_raaimt(raaimt), 32)
    }

    #[test]
    fn thresholds_follow_raaimt() {
        let p = RfmParams::with_raaimt(32);
        assert_eq!((p.raammt, p.ref_decrement), (96, 16));
        let p = RfmParams::with_raaimt(16);
        assert_eq!((p.raammt, p.ref_decrement), (48, 8));
    }

    #[test]
    fn saturation_sets_the_mandatory_flag() {
        let mut s = state(32);
        s.set_counter(0, 95);
        assert_eq!(s.on_act(0), 96);
        assert!(s.mandatory_pending());

        let mut s = state(32);
        assert_eq!(s.on_act(3), 1);
        assert!(!s.mandatory_pending());

        let mut s = state(16);
        s.set_counter(5, 47);
        assert_eq!(s.on_act(5), 48);
        assert!(s.is_saturated(5));
    }

    #[test]
    #[should_panic(expected = "protocol violation")]
    fn increment_past_raammt_aborts() {
        let mut s = state(32);
        s.set_counter(0, 96);
        s.on_act(0);
    }

    #[test]
    fn rfmab_decrement_clamps_and_clears() {
        let mut s = state(32);
        s.set_counter(0, 96);
        s.set_counter(1, 10);
        s.apply_rfmab_decrement();
        assert_eq!(&s.counters()[..3], &[64, 0, 0]);
        assert!(!s.mandatory_pending());

        let mut z = state(32);
        z.apply_rfmab_decrement();
        assert!(z.counters().iter().all(|&c| c == 0));
    }

    #[test]
    fn ref_decrement_is_half_raaimt() {
        let mut s = state(32);
        s.set_counter(0, 48);
        s.set_counter(1, 5);
        s.apply_ref_decrement();
        assert_eq!((s.counter(0), s.counter(1)), (32, 0));

        let mut s = state(16);
        s.set_counter(0, 48);
        s.apply_ref_decrement();
        assert_eq!(s.counter(0), 40);
    }

    #[test]
    fn rfmsb_decrement_touches_one_bank_set() {
        let t = TimingParams::default().with_fgr();
        let mut s = state(32);
        for b in 0..32 {
            s.set_counter(b, 48);
        }
        s.set_counter(4, 96);
        s.apply_rfmsb_decrement(&t, 0);
        for b in 0..32 {
            let expect = match b {
                4 => 64,
                b if b % 4 == 0 => 16,
                _ => 48,
            };
            assert_eq!(s.counter(b), expect, "bank {b}");
        }
        assert!(!s.is_saturated(4));

        let mut z = state(32);
        z.apply_rfmsb_decrement(&t, 1);
        assert!(z.counters().iter().all(|&c| c == 0));
    }

    #[test]
    fn steady_state_cycle_returns_to_64() {
        // '1': 32 ACTs -> RFMab -> 16 ACTs -> REF. '0': 16 ACTs -> REF.
        for bit in [true, false] {
            let mut s = state(32);
            s.set_counter(0, 64);
            if bit {
                for _ in 0..32 {
                    s.on_act(0);
                }
                assert_eq!(s.counter(0), 96);
                s.apply_rfmab_decrement();
            }
            for _ in 0..16 {
                s.on_act(0);
            }
            s.apply_ref_decrement();
            assert_eq!(s.counter(0), 64);
        }
    }

    #[test]
    fn limiter_grace_window() {
        let mut l = Limiter::new(48, 16);
        for _ in 0..48 {
            l.record_grant(0, 0, 5);
        }
        // No RFM yet: unrestricted even with the budget exhausted.
        assert_eq!(l.check(0, 0, 5), LimiterDecision::Allow);
        l.record_trigger(2);
        assert_eq!(l.check(0, 0, 5), LimiterDecision::DenyUntilNextInterval);
        // Fresh interval, fresh budget.
        assert_eq!(l.check(0, 0, 6), LimiterDecision::Allow);
        // Another core has its own budget.
        assert_eq!(l.check(1, 0, 5), LimiterDecision::Allow);
        // 17 intervals after the trigger the limits lift.
        for _ in 0..48 {
            l.record_grant(0, 0, 19);
        }
        assert_eq!(l.check(0, 0, 18), LimiterDecision::Allow);
        assert_eq!(l.check(0, 0, 19), LimiterDecision::Allow);
        for _ in 0..48 {
            l.record_grant(0, 0, 18);
        }
        assert_eq!(l.check(0, 0, 18), LimiterDecision::DenyUntilNextInterval);
    }

    #[test]
    fn default_budget_is_one_and_a_half_raaimt() {
        let p = LimiterParams::enabled();
        assert_eq!(p.resolved_budget(&RfmParams::with_raaimt(32)), 48);
        assert_eq!(p.resolved_budget(&RfmParams::with_raaimt(16)), 24);
        let l = Limiter::new(48, 16);
        assert_eq!(l.check(0, 0, 0), LimiterDecision::Allow);
    }

    proptest::proptest! {
        // Counters stay within [0, raammt] under any mix of ACTs and
        // decrements when the caller honours the mandatory flag.
        #[test]
        fn counters_stay_in_range(ops in proptest::collection::vec((0u8..4, 0u32..8), 0..400), raaimt in proptest::sample::select(vec![16u32, 32])) {
            let t = TimingParams::default().with_fgr();
            let mut s = state(raaimt);
            let (mut incs, mut decs_applied, mut clamp_loss) = (0u64, 0u64, 0u64);
            for (op, bank) in ops {
                let before = s.counter(0);
                match op {
                    0 | 1 if !s.mandatory_pending() => { s.on_act(bank); if bank == 0 { incs += 1; } }
                    0 | 1 => { s.apply_rfmab_decrement(); decs_applied += u64::from(raaimt.min(before)); clamp_loss += u64::from(raaimt.saturating_sub(before)); }
                    2 => { s.apply_ref_decrement(); decs_applied += u64::from((raaimt / 2).min(before)); clamp_loss += u64::from((raaimt / 2).saturating_sub(before)); }
                    _ => { s.apply_rfmsb_decrement(&t, bank % 4); if bank % 4 == 0 { decs_applied += u64::from(raaimt.min(before)); clamp_loss += u64::from(raaimt.saturating_sub(before)); } }
                }
                proptest::prop_assert!(s.counters().iter().all(|&c| c <= 3 * raaimt));
            }
            // Conservation: increments = effective decrements + final counter.
            proptest::prop_assert_eq!(incs, decs_applied + u64::from(s.counter(0)));
            let _ = clamp_loss;
        }
    }
}
