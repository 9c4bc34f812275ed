//! Traffic agents. Each agent owns one or more banks on one sub-channel and
//! keeps at most one ACT request outstanding. Agents never see addresses:
//! every request names a (bank, row) pair and costs exactly one ACT.

mod covert;
mod probe;
mod traffic;

pub use covert::{Receiver, ReceiverLayout, Sender, SenderPlan, SlotPacer, INIT_SLOTS};
pub use probe::{ProbeOutcome, Prober};
pub use traffic::{ClosedLoop, Noise};

use serde::{Deserialize, Serialize};

use crate::dram::{RefreshSchedule, TimingParams};
use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Sender,
    Receiver,
    Dos,
    Victim,
    Noise,
}

/// Temporary change of a noise agent's rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Burst {
    pub start_ns: SimTime,
    pub end_ns: SimTime,
    pub rate: f64,
}

/// One roster entry of the experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub role: Role,
    /// Core issuing the requests; the limiter budgets per core.
    pub core: u32,
    #[serde(default)]
    pub subchannel: u32,
    pub banks: Vec<u32>,
    /// Rows cycled through round-robin.
    #[serde(default = "default_rows")]
    pub rows: u32,
    /// NOISE: ACT probability per tRC slot.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burst: Option<Burst>,
    /// VICTIM: idle time between a completion and the next request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub think_ns: Option<u64>,
}

fn default_rows() -> u32 {
    1024
}

impl AgentSpec {
    pub fn new(role: Role, core: u32, subchannel: u32, banks: Vec<u32>) -> Self {
        AgentSpec {
            role,
            core,
            subchannel,
            banks,
            rows: default_rows(),
            rate: None,
            burst: None,
            think_ns: None,
        }
    }

    pub fn noise(core: u32, subchannel: u32, banks: Vec<u32>, rate: f64) -> Self {
        AgentSpec {
            rate: Some(rate),
            ..AgentSpec::new(Role::Noise, core, subchannel, banks)
        }
    }

    pub fn victim(core: u32, subchannel: u32, bank: u32, think_ns: u64) -> Self {
        AgentSpec {
            think_ns: Some(think_ns),
            ..AgentSpec::new(Role::Victim, core, subchannel, vec![bank])
        }
    }
}

/// Round-robin row selection within one bank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowCursor {
    pub bank: u32,
    pub next_row: u32,
    pub row_count: u32,
}

impl RowCursor {
    pub fn new(bank: u32, row_count: u32) -> Self {
        assert!(row_count >= 2, "a row cursor needs at least two rows");
        RowCursor {
            bank,
            next_row: 0,
            row_count,
        }
    }

    pub fn advance(&mut self) -> u32 {
        let r = self.next_row;
        self.next_row = (self.next_row + 1) % self.row_count;
        r
    }
}

/// Per-agent seed: SplitMix64 finalizer over `seed + stream * golden`.
/// Streams are the agent index in the roster; reserved streams use high
/// values (see `MESSAGE_STREAM`).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream used for randomly generated covert-channel messages.
pub const MESSAGE_STREAM: u64 = u64::MAX - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Action {
    Act { bank: u32, row: u32 },
    Wake { at: SimTime, token: u64 },
}

/// What an agent callback can see and do.
pub struct Ctx<'a> {
    pub now: SimTime,
    pub timing: &'a TimingParams,
    pub schedule: RefreshSchedule,
    pub(crate) actions: &'a mut Vec<Action>,
}

impl Ctx<'_> {
    pub fn activate(&mut self, bank: u32, row: u32) {
        self.actions.push(Action::Act { bank, row });
    }

    pub fn wake_at(&mut self, at: SimTime, token: u64) {
        debug_assert!(at >= self.now);
        self.actions.push(Action::Wake { at, token });
    }
}

#[derive(Debug, Clone)]
pub enum Agent {
    Sender(Sender),
    Receiver(Receiver),
    Dos(ClosedLoop),
    Victim(ClosedLoop),
    Noise(Box<Noise>),
    Prober(Prober),
}

macro_rules! dispatch {
    ($self:expr, $a:ident => $e:expr) => {
        match $self {
            Agent::Sender($a) => $e,
            Agent::Receiver($a) => $e,
            Agent::Dos($a) | Agent::Victim($a) => $e,
            Agent::Noise($a) => $e,
            Agent::Prober($a) => $e,
        }
    };
}

impl Agent {
    pub fn core(&self) -> u32 {
        dispatch!(self, a => a.core)
    }

    pub fn subchannel(&self) -> u32 {
        dispatch!(self, a => a.subchannel)
    }

    pub fn on_start(&mut self, ctx: &mut Ctx) {
        dispatch!(self, a => a.on_start(ctx))
    }

    pub fn on_wake(&mut self, ctx: &mut Ctx, token: u64) {
        dispatch!(self, a => a.on_wake(ctx, token))
    }

    /// The outstanding ACT, granted at `grant`, completed at `ctx.now`.
    pub fn on_complete(&mut self, ctx: &mut Ctx, grant: SimTime) {
        dispatch!(self, a => a.on_complete(ctx, grant))
    }

    /// True once the agent will issue no further requests.
    pub fn is_done(&self) -> bool {
        match self {
            Agent::Sender(a) => a.is_done(),
            Agent::Receiver(a) => a.is_done(),
            Agent::Prober(a) => a.outcome().is_some(),
            Agent::Dos(_) | Agent::Victim(_) | Agent::Noise(_) => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_cursor_cycles_distinct_rows() {
        let mut c = RowCursor::new(3, 4);
        let rows: Vec<u32> = (0..6).map(|_| c.advance()).collect();
        assert_eq!(rows, [0, 1, 2, 3, 0, 1]);
        assert!(rows.windows(2).all(|w| w[0] != w[1]));
    }

    #[test]
    fn derived_seeds_differ_per_stream() {
        let a: Vec<u64> = (0..64).map(|s| derive_seed(7, s)).collect();
        let mut b = a.clone();
        b.sort();
        b.dedup();
        assert_eq!(a.len(), b.len());
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
        assert_ne!(derive_seed(7, 3), derive_seed(8, 3));
    }
}
