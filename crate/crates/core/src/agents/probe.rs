//! Refresh probing: back-to-back ACTs alternating between two rows of one
//! bank. A completion gap much longer than tRC means a REF sat in between.

use super::{Ctx, RowCursor};
use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeOutcome {
    Detected {
        /// Estimated issue time of the detected REF.
        ref_issue: SimTime,
        /// `ref_issue` modulo the refresh period.
        phase: u64,
        /// Completions observed before detection.
        probes: u64,
    },
    Failed {
        probed_until: SimTime,
    },
}

#[derive(Debug, Clone)]
pub struct Prober {
    pub core: u32,
    pub subchannel: u32,
    rows: RowCursor,
    t_rc: u64,
    t_rfc: u64,
    period: u64,
    gap_threshold: u64,
    deadline: SimTime,
    prev: Option<SimTime>,
    probes: u64,
    outcome: Option<ProbeOutcome>,
}

impl Prober {
    /// Gap threshold defaults to `t_rc + t_rfc / 2`; probing gives up after
    /// two refresh periods.
    pub fn new(core: u32, subchannel: u32, bank: u32, t_rc: u64, t_rfc: u64, period: u64) -> Self {
        Prober {
            core,
            subchannel,
            rows: RowCursor::new(bank, 2),
            t_rc,
            t_rfc,
            period,
            gap_threshold: t_rc + t_rfc / 2,
            deadline: 0,
            prev: None,
            probes: 0,
            outcome: None,
        }
    }

    pub fn with_gap_threshold(mut self, ns: u64) -> Self {
        self.gap_threshold = ns;
        self
    }

    pub fn outcome(&self) -> Option<ProbeOutcome> {
        self.outcome
    }

    pub(crate) fn on_start(&mut self, ctx: &mut Ctx) {
        self.deadline = ctx.now + 2 * self.period;
        ctx.activate(self.rows.bank, self.rows.advance());
    }

    pub(crate) fn on_wake(&mut self, _ctx: &mut Ctx, _token: u64) {}

    pub(crate) fn on_complete(&mut self, ctx: &mut Ctx, _grant: SimTime) {
        let now = ctx.now;
        self.probes += 1;
        if let Some(prev) = self.prev {
            if now - prev > self.gap_threshold {
                // The ACT after the REF was granted at REF completion.
                let ref_issue = now.saturating_sub(self.t_rc + self.t_rfc).max(prev);
                self.outcome = Some(ProbeOutcome::Detected {
                    ref_issue,
                    phase: ref_issue % self.period,
                    probes: self.probes,
                });
                return;
            }
        }
        if now >= self.deadline {
            self.outcome = Some(ProbeOutcome::Failed { probed_until: now });
            return;
        }
        self.prev = Some(now);
        ctx.activate(self.rows.bank, self.rows.advance());
    }
}
