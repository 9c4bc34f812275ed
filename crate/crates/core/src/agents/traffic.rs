//! Background traffic: closed-loop requesters (DOS attacker, victim) and
//! open-loop Bernoulli noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};

use super::{Burst, Ctx, RowCursor};
use crate::sim::SimTime;

/// Issues the next ACT `think_ns` after the previous one completes, cycling
/// through its banks. With one bank and zero think time this is the DOS
/// access loop.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub core: u32,
    pub subchannel: u32,
    banks: Vec<RowCursor>,
    next_bank: usize,
    think_ns: u64,
    grants: Vec<SimTime>,
}

impl ClosedLoop {
    pub fn new(core: u32, subchannel: u32, rows: RowCursor, think_ns: u64) -> Self {
        Self::spread(core, subchannel, vec![rows], think_ns)
    }

    pub fn spread(core: u32, subchannel: u32, banks: Vec<RowCursor>, think_ns: u64) -> Self {
        assert!(!banks.is_empty(), "closed-loop agent needs a bank");
        ClosedLoop {
            core,
            subchannel,
            banks,
            next_bank: 0,
            think_ns,
            grants: Vec::new(),
        }
    }

    pub fn banks(&self) -> impl Iterator<Item = u32> + '_ {
        self.banks.iter().map(|c| c.bank)
    }

    /// Grant time of every completed request, in order.
    pub fn grants(&self) -> &[SimTime] {
        &self.grants
    }

    /// Completed requests granted in `[from, to)`.
    pub fn completed_between(&self, from: SimTime, to: SimTime) -> u64 {
        let lo = self.grants.partition_point(|&g| g < from);
        let hi = self.grants.partition_point(|&g| g < to);
        (hi - lo) as u64
    }

    fn activate(&mut self, ctx: &mut Ctx) {
        let cur = &mut self.banks[self.next_bank];
        let (bank, row) = (cur.bank, cur.advance());
        self.next_bank = (self.next_bank + 1) % self.banks.len();
        ctx.activate(bank, row);
    }

    pub(crate) fn on_start(&mut self, ctx: &mut Ctx) {
        self.activate(ctx);
    }

    pub(crate) fn on_wake(&mut self, ctx: &mut Ctx, _token: u64) {
        self.activate(ctx);
    }

    pub(crate) fn on_complete(&mut self, ctx: &mut Ctx, grant: SimTime) {
        self.grants.push(grant);
        if self.think_ns == 0 {
            self.activate(ctx);
        } else {
            ctx.wake_at(ctx.now + self.think_ns, 0);
        }
    }
}

const TOKEN_ARRIVAL: u64 = 0;
const TOKEN_REDRAW: u64 = 1;

/// Memoryless traffic: each tRC slot carries an arrival with probability
/// `rate`. One arrival may wait while the previous ACT is outstanding;
/// further ones are dropped. Banks are used round-robin.
#[derive(Debug, Clone)]
pub struct Noise {
    pub core: u32,
    pub subchannel: u32,
    banks: Vec<RowCursor>,
    next_bank: usize,
    rate: f64,
    burst: Option<Burst>,
    slot_ns: u64,
    rng: ChaCha8Rng,
    busy: bool,
    waiting: bool,
    issued: u64,
    dropped: u64,
}

impl Noise {
    pub fn new(
        core: u32,
        subchannel: u32,
        banks: Vec<RowCursor>,
        rate: f64,
        burst: Option<Burst>,
        slot_ns: u64,
        seed: u64,
    ) -> Self {
        assert!(!banks.is_empty(), "noise agent needs a bank");
        Noise {
            core,
            subchannel,
            banks,
            next_bank: 0,
            rate,
            burst,
            slot_ns,
            rng: ChaCha8Rng::seed_from_u64(seed),
            busy: false,
            waiting: false,
            issued: 0,
            dropped: 0,
        }
    }

    pub fn issued(&self) -> u64 {
        self.issued
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    fn rate_at(&self, t: SimTime) -> f64 {
        match &self.burst {
            Some(b) if (b.start_ns..b.end_ns).contains(&t) => b.rate,
            _ => self.rate,
        }
    }

    /// Next rate change strictly after `t`.
    fn next_change(&self, t: SimTime) -> Option<SimTime> {
        let b = self.burst.as_ref()?;
        [b.start_ns, b.end_ns].into_iter().find(|&x| x > t)
    }

    /// Draw the next arrival at or after slot `from_slot`.
    fn schedule_from(&mut self, ctx: &mut Ctx, from_slot: u64) {
        let t0 = from_slot * self.slot_ns;
        let rate = self.rate_at(t0);
        let change = self.next_change(t0);
        if rate <= 0.0 {
            if let Some(c) = change {
                ctx.wake_at(c.max(ctx.now), TOKEN_REDRAW);
            }
            return;
        }
        let gap = Geometric::new(rate.min(1.0))
            .expect("rate in (0, 1]")
            .sample(&mut self.rng);
        let at = from_slot.saturating_add(gap).saturating_mul(self.slot_ns);
        match change {
            Some(c) if c < at => ctx.wake_at(c.max(ctx.now), TOKEN_REDRAW),
            _ => ctx.wake_at(at.max(ctx.now), TOKEN_ARRIVAL),
        }
    }

    pub(crate) fn on_start(&mut self, ctx: &mut Ctx) {
        let slot = ctx.now.div_ceil(self.slot_ns);
        self.schedule_from(ctx, slot);
    }

    pub(crate) fn on_wake(&mut self, ctx: &mut Ctx, token: u64) {
        let slot = ctx.now.div_ceil(self.slot_ns);
        if token == TOKEN_REDRAW {
            self.schedule_from(ctx, slot);
            return;
        }
        if !self.busy {
            self.issue(ctx);
        } else if !self.waiting {
            self.waiting = true;
        } else {
            self.dropped += 1;
        }
        self.schedule_from(ctx, slot + 1);
    }

    fn issue(&mut self, ctx: &mut Ctx) {
        self.busy = true;
        self.issued += 1;
        let cur = &mut self.banks[self.next_bank];
        let (bank, row) = (cur.bank, cur.advance());
        self.next_bank = (self.next_bank + 1) % self.banks.len();
        ctx.activate(bank, row);
    }

    pub(crate) fn on_complete(&mut self, ctx: &mut Ctx, _grant: SimTime) {
        self.busy = false;
        if self.waiting {
            self.waiting = false;
            self.issue(ctx);
        }
    }
}
