//! Covert-channel sender and receiver.
//!
//! Both parties work on a shared grid of slots, one per refresh period,
//! starting at a REF issue time. Slots `0..init_slots` bring the sender's
//! counter to its steady state; each later slot carries one bit.

use std::ops::Range;

use super::{Ctx, RowCursor};
use crate::dram::TimingParams;
use crate::error::{Error, Result};
use crate::sim::SimTime;

const TOKEN_SLOT: u64 = 0;
const TOKEN_LOAD: u64 = 1;

/// Slot bookkeeping for one party.
///
/// Between resynchronizations a party paces itself relative to its own
/// previous slot: the next slot starts one period after the previous one,
/// or when the previous one finished if it overran. At a resync slot the
/// party snaps back to its phase estimate, skipping slots it is late for.
#[derive(Debug, Clone)]
pub struct SlotPacer {
    origin: SimTime,
    period: u64,
    resync_interval: u32,
    init_slots: u64,
    slot: u64,
    anchor: SimTime,
    resyncs: u64,
    skipped: u64,
}

impl SlotPacer {
    pub fn new(origin: SimTime, period: u64, resync_interval: u32, init_slots: u64) -> Self {
        SlotPacer {
            origin,
            period,
            resync_interval,
            init_slots,
            slot: 0,
            anchor: origin,
            resyncs: 0,
            skipped: 0,
        }
    }

    /// Start at `slot` on the grid instead of slot 0.
    pub fn starting_at(mut self, slot: u64) -> Self {
        self.slot = slot;
        self.anchor = self.grid(slot);
        self
    }

    pub fn grid(&self, slot: u64) -> SimTime {
        self.origin + slot * self.period
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn anchor(&self) -> SimTime {
        self.anchor
    }

    /// Bit carried by the current slot, if it is past initialization.
    pub fn bit_index(&self) -> Option<usize> {
        self.slot.checked_sub(self.init_slots).map(|b| b as usize)
    }

    pub fn resyncs(&self) -> u64 {
        self.resyncs
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn is_resync_slot(&self, slot: u64) -> bool {
        self.resync_interval > 0
            && slot > self.init_slots
            && (slot - self.init_slots).is_multiple_of(u64::from(self.resync_interval))
    }

    /// Move past the slot that finished at `finish`. Returns the slots that
    /// were skipped.
    pub fn advance(&mut self, finish: SimTime) -> Range<u64> {
        let next = self.slot + 1;
        if self.is_resync_slot(next) {
            self.resyncs += 1;
            let mut j = next;
            if finish > self.grid(next) {
                j = (finish - self.origin).div_ceil(self.period);
            }
            self.skipped += j - next;
            self.slot = j;
            self.anchor = self.grid(j);
            return next..j;
        }
        self.slot = next;
        self.anchor = (self.anchor + self.period).max(finish);
        next..next
    }
}

/// ACT counts per slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SenderPlan {
    pub init_acts: u32,
    pub one_acts: u32,
    pub zero_acts: u32,
}

impl SenderPlan {
    /// `1.5 * raaimt` ACTs for init and '1' slots, `raaimt / 2` for '0'.
    pub fn for_raaimt(raaimt: u32) -> Self {
        SenderPlan {
            init_acts: raaimt + raaimt / 2,
            one_acts: raaimt + raaimt / 2,
            zero_acts: raaimt / 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Sender {
    pub core: u32,
    pub subchannel: u32,
    rows: RowCursor,
    plan: SenderPlan,
    bits: Vec<bool>,
    pacer: SlotPacer,
    remaining: u32,
    done: bool,
    sent: Vec<bool>,
    slot_starts: Vec<(u64, SimTime)>,
}

pub const INIT_SLOTS: u64 = 2;

impl Sender {
    pub fn new(
        core: u32,
        subchannel: u32,
        rows: RowCursor,
        plan: SenderPlan,
        bits: Vec<bool>,
        pacer: SlotPacer,
    ) -> Self {
        let n = bits.len();
        Sender {
            core,
            subchannel,
            rows,
            plan,
            bits,
            pacer,
            remaining: 0,
            done: false,
            sent: vec![false; n],
            slot_starts: Vec::new(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Which bits were actually transmitted (false for skipped slots).
    pub fn sent(&self) -> &[bool] {
        &self.sent
    }

    pub fn pacer(&self) -> &SlotPacer {
        &self.pacer
    }

    /// `(slot, anchor)` for every slot the sender worked on.
    pub fn slot_starts(&self) -> &[(u64, SimTime)] {
        &self.slot_starts
    }

    fn acts_for_current(&self) -> u32 {
        match self.pacer.bit_index() {
            None => self.plan.init_acts,
            Some(i) if self.bits[i] => self.plan.one_acts,
            Some(_) => self.plan.zero_acts,
        }
    }

    fn total_slots(&self) -> u64 {
        INIT_SLOTS + self.bits.len() as u64
    }

    pub(crate) fn on_start(&mut self, ctx: &mut Ctx) {
        if self.bits.is_empty() && INIT_SLOTS == 0 {
            self.done = true;
            return;
        }
        ctx.wake_at(self.pacer.anchor().max(ctx.now), TOKEN_SLOT);
    }

    pub(crate) fn on_wake(&mut self, ctx: &mut Ctx, _token: u64) {
        self.slot_starts.push((self.pacer.slot(), ctx.now));
        self.remaining = self.acts_for_current();
        if self.remaining == 0 {
            self.finish_slot(ctx);
        } else {
            ctx.activate(self.rows.bank, self.rows.advance());
        }
    }

    pub(crate) fn on_complete(&mut self, ctx: &mut Ctx, _grant: SimTime) {
        self.remaining -= 1;
        if self.remaining > 0 {
            ctx.activate(self.rows.bank, self.rows.advance());
        } else {
            self.finish_slot(ctx);
        }
    }

    fn finish_slot(&mut self, ctx: &mut Ctx) {
        if let Some(i) = self.pacer.bit_index() {
            self.sent[i] = true;
        }
        self.pacer.advance(ctx.now);
        if self.pacer.slot() >= self.total_slots() {
            self.done = true;
        } else {
            ctx.wake_at(self.pacer.anchor(), TOKEN_SLOT);
        }
    }
}

/// Where the receiver's loads sit inside a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReceiverLayout {
    pub loads: u32,
    /// Grant-to-grant spacing of consecutive loads when nothing stalls.
    pub spacing: u64,
    /// First load request, relative to the slot start.
    pub first_offset: u64,
}

impl ReceiverLayout {
    /// Place `raaimt / 2` evenly spaced loads so that one load is requested
    /// one ns after the sender's saturating ACT of a '1' slot, the first
    /// load follows the REF, and a '1' slot's stalled loads still complete
    /// before the next REF. The spacing is maximized over the index of the
    /// stalled load.
    pub fn plan(timing: &TimingParams, raaimt: u32, stall: u64, period: u64) -> Result<Self> {
        let n = u64::from(raaimt / 2);
        if n == 0 {
            return Err(Error::invalid("rfm.raaimt", "receiver needs at least one load"));
        }
        let trc = timing.t_rc;
        // Grant offset of the sender's saturating ACT in a '1' slot.
        let z = timing.t_rfc + u64::from(raaimt - 1) * trc;
        let probe = z + 1;
        let tail = z + 2 * trc + stall;
        if tail > period || probe < timing.t_rfc {
            return Err(Error::invalid(
                "covert",
                format!("a stalled load cannot finish inside the {period} ns slot"),
            ));
        }
        let mut best: Option<(u64, u64)> = None;
        for k0 in 0..n {
            let before = k0;
            let after = n - 1 - k0;
            let mut s = u64::MAX;
            if let Some(q) = (probe - timing.t_rfc).checked_div(before) {
                s = s.min(q);
            }
            if let Some(q) = (period - tail).checked_div(after) {
                s = s.min(q);
            }
            if n == 1 {
                s = trc;
            }
            if best.is_none_or(|(bs, _)| s > bs) {
                best = Some((s, k0));
            }
        }
        let (spacing, k0) = best.expect("at least one load");
        if spacing < trc {
            return Err(Error::invalid(
                "covert",
                format!("receiver load spacing {spacing} ns is below tRC"),
            ));
        }
        Ok(ReceiverLayout {
            loads: n as u32,
            spacing,
            first_offset: probe - k0 * spacing,
        })
    }

    /// Elapsed time of an unstalled measurement.
    pub fn quiet_elapsed(&self, timing: &TimingParams) -> u64 {
        u64::from(self.loads - 1) * self.spacing + timing.t_rc
    }
}

#[derive(Debug, Clone)]
pub struct Receiver {
    pub core: u32,
    pub subchannel: u32,
    rows: RowCursor,
    layout: ReceiverLayout,
    t_rc: u64,
    pacer: SlotPacer,
    total_bits: usize,
    loads_done: u32,
    first_request: SimTime,
    elapsed: Vec<Option<u64>>,
    done: bool,
}

impl Receiver {
    pub fn new(
        core: u32,
        subchannel: u32,
        rows: RowCursor,
        layout: ReceiverLayout,
        t_rc: u64,
        total_bits: usize,
        pacer: SlotPacer,
    ) -> Self {
        Receiver {
            core,
            subchannel,
            rows,
            layout,
            t_rc,
            pacer: pacer.starting_at(INIT_SLOTS),
            total_bits,
            loads_done: 0,
            first_request: 0,
            elapsed: vec![None; total_bits],
            done: false,
        }
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Measured elapsed time per bit; `None` for skipped slots.
    pub fn elapsed(&self) -> &[Option<u64>] {
        &self.elapsed
    }

    pub fn pacer(&self) -> &SlotPacer {
        &self.pacer
    }

    pub fn layout(&self) -> &ReceiverLayout {
        &self.layout
    }

    pub(crate) fn on_start(&mut self, ctx: &mut Ctx) {
        if self.total_bits == 0 {
            self.done = true;
            return;
        }
        ctx.wake_at(
            (self.pacer.anchor() + self.layout.first_offset).max(ctx.now),
            TOKEN_LOAD,
        );
    }

    pub(crate) fn on_wake(&mut self, ctx: &mut Ctx, _token: u64) {
        if self.loads_done == 0 {
            self.first_request = ctx.now;
        }
        ctx.activate(self.rows.bank, self.rows.advance());
    }

    pub(crate) fn on_complete(&mut self, ctx: &mut Ctx, _grant: SimTime) {
        self.loads_done += 1;
        if self.loads_done < self.layout.loads {
            ctx.wake_at(ctx.now + self.layout.spacing - self.t_rc, TOKEN_LOAD);
            return;
        }
        let bit = self.pacer.bit_index().expect("receiver slots carry bits");
        self.elapsed[bit] = Some(ctx.now - self.first_request);
        self.loads_done = 0;
        self.pacer.advance(ctx.now);
        if self.pacer.slot() >= INIT_SLOTS + self.total_bits as u64 {
            self.done = true;
        } else {
            ctx.wake_at(self.pacer.anchor() + self.layout.first_offset, TOKEN_LOAD);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout() {
        let t = TimingParams::default();
        let l = ReceiverLayout::plan(&t, 32, t.t_rfc, 3900).unwrap();
        assert_eq!(
            l,
            ReceiverLayout {
                loads: 16,
                spacing: 187,
                first_offset: 590
            }
        );
        assert_eq!(l.quiet_elapsed(&t), 2853);
    }

    #[test]
    fn raaimt16_layouts() {
        let t = TimingParams::default();
        let l = ReceiverLayout::plan(&t, 16, t.t_rfc, 3900).unwrap();
        assert_eq!((l.loads, l.spacing), (8, 377));
        let f = TimingParams::default().with_fgr();
        let l = ReceiverLayout::plan(&f, 16, f.t_rfc_sb, 1950).unwrap();
        assert_eq!((l.loads, l.spacing, l.first_offset), (8, 178, 1131 - 4 * 178));
    }

    #[test]
    fn raaimt32_does_not_fit_a_half_period_slot() {
        let f = TimingParams::default().with_fgr();
        assert!(ReceiverLayout::plan(&f, 32, f.t_rfc_sb, 1950).is_err());
    }

    // Independent check of the layout constraints by exhaustive search.
    #[test]
    fn layout_is_the_widest_feasible_spacing() {
        let t = TimingParams::default();
        for (raaimt, stall, period) in [(32u32, 410u64, 3900u64), (16, 410, 3900), (16, 190, 1950)] {
            let l = ReceiverLayout::plan(&t, raaimt, stall, period).unwrap();
            let n = u64::from(raaimt / 2);
            let z = 410 + u64::from(raaimt - 1) * 48;
            let feasible = |s: u64, first: u64| {
                // Some load lands exactly at z + 1; unstalled loads start after the REF;
                // with that load delayed by 48 + stall - 1 the last one ends by `period`.
                (0..n).any(|k| first + k * s == z + 1) && first >= 410 && {
                    let k0 = (z + 1 - first) / s;
                    first + (n - 1) * s + 48 + (48 + stall - 1) <= period && k0 < n
                }
            };
            assert!(feasible(l.spacing, l.first_offset));
            let wider =
                (l.spacing + 1..l.spacing + 400).any(|s| (0..n).any(|k| z + 1 >= k * s && feasible(s, z + 1 - k * s)));
            assert!(!wider, "raaimt {raaimt}: a wider spacing exists");
        }
    }

    #[test]
    fn pacer_relative_and_resync() {
        let mut p = SlotPacer::new(100, 1000, 3, 2);
        assert_eq!((p.slot(), p.anchor()), (0, 100));
        p.advance(900);
        assert_eq!((p.slot(), p.anchor()), (1, 1100));
        // Overrun drifts the next slot.
        p.advance(2150);
        assert_eq!((p.slot(), p.anchor()), (2, 2150));
        p.advance(2900);
        assert_eq!((p.slot(), p.anchor()), (3, 3150));
        p.advance(3900);
        assert_eq!((p.slot(), p.anchor()), (4, 4150));
        // Slot 5 = bit 3 is a resync slot: snap back to the grid.
        assert!(p.is_resync_slot(5));
        let skipped = p.advance(5000);
        assert_eq!((p.slot(), p.anchor(), skipped), (5, 5100, 5..5));
        // Late for a resync slot: skip to the next grid slot.
        p.advance(6000);
        p.advance(7000);
        let skipped = p.advance(8200);
        assert_eq!((p.slot(), p.anchor(), skipped), (9, 9100, 8..9));
        assert_eq!((p.resyncs(), p.skipped()), (2, 1));
    }

    #[test]
    fn sender_plan_scales_with_raaimt() {
        assert_eq!(
            SenderPlan::for_raaimt(32),
            SenderPlan {
                init_acts: 48,
                one_acts: 48,
                zero_acts: 16
            }
        );
        assert_eq!(
            SenderPlan::for_raaimt(16),
            SenderPlan {
                init_acts: 24,
                one_acts: 24,
                zero_acts: 8
            }
        );
    }
}
