//! The simulated system: one controller per sub-channel, a roster of agents,
//! and the event loop that connects them.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::agents::{Action, Agent, AgentSpec, Ctx, Role};
use crate::controller::{Admission, Controller};
use crate::dram::{CommandRecord, RefreshSchedule, TimingParams};
use crate::error::{Error, Result};
use crate::rfm::{LimiterParams, RfmParams};
use crate::sim::{EventQueue, SimTime};

/// Memory configuration plus the agent roster.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub timing: TimingParams,
    pub rfm: RfmParams,
    pub limiter: LimiterParams,
    pub agents: Vec<AgentSpec>,
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        self.timing.validate()?;
        self.rfm.validate(&self.timing)?;
        validate_roster(&self.timing, &self.agents)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    Start(usize),
    Try(usize),
    Done(usize),
    Wake(usize, u64),
}

#[derive(Debug, Clone, Copy)]
struct Inflight {
    bank: u32,
    granted: Option<SimTime>,
}

pub struct World {
    timing: TimingParams,
    sched: RefreshSchedule,
    queue: EventQueue<Event>,
    controllers: Vec<Controller>,
    agents: Vec<Agent>,
    inflight: Vec<Option<Inflight>>,
    actions: Vec<Action>,
}

impl World {
    pub fn new(timing: &TimingParams, rfm: &RfmParams, limiter: &LimiterParams) -> Result<Self> {
        timing.validate()?;
        rfm.validate(timing)?;
        Ok(World {
            timing: timing.clone(),
            sched: timing.schedule(),
            queue: EventQueue::new(),
            controllers: (0..timing.subchannels)
                .map(|sc| Controller::new(timing, rfm, limiter, sc))
                .collect(),
            agents: Vec::new(),
            inflight: Vec::new(),
            actions: Vec::new(),
        })
    }

    /// Drop ACT records from the command traces.
    pub fn without_act_records(mut self) -> Self {
        self.controllers = self
            .controllers
            .into_iter()
            .map(Controller::without_act_records)
            .collect();
        self
    }

    pub fn timing(&self) -> &TimingParams {
        &self.timing
    }

    pub fn now(&self) -> SimTime {
        self.queue.now()
    }

    pub fn events_processed(&self) -> u64 {
        self.queue.processed()
    }

    /// Add an agent whose first callback runs at `start_at`.
    pub fn add_agent(&mut self, agent: Agent, start_at: SimTime) -> usize {
        assert!(
            agent.subchannel() < self.timing.subchannels,
            "agent on sub-channel {} of {}",
            agent.subchannel(),
            self.timing.subchannels
        );
        let id = self.agents.len();
        self.agents.push(agent);
        self.inflight.push(None);
        self.queue.schedule(Event::Start(id), start_at.max(self.queue.now()));
        id
    }

    pub fn agent(&self, id: usize) -> &Agent {
        &self.agents[id]
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn controller(&self, subchannel: u32) -> &Controller {
        &self.controllers[subchannel as usize]
    }

    /// Process every event up to `deadline`, then bring the controllers'
    /// command streams up to the same time.
    pub fn run_until(&mut self, deadline: SimTime) {
        let World {
            timing,
            sched,
            queue,
            controllers,
            agents,
            inflight,
            actions,
        } = self;
        queue.run_until(deadline, |q, ev| {
            let now = q.now();
            let id = match ev {
                Event::Start(id) | Event::Done(id) | Event::Wake(id, _) => id,
                Event::Try(id) => {
                    let a = &agents[id];
                    let req = inflight[id].as_mut().expect("request outstanding");
                    let ctl = &mut controllers[a.subchannel() as usize];
                    match ctl.request(a.core(), req.bank, now) {
                        Admission::Granted(g) => {
                            req.granted = Some(g);
                            q.schedule(Event::Done(id), g + timing.t_rc);
                        }
                        Admission::Wait(at) | Admission::Denied(at) => q.schedule(Event::Try(id), at),
                    }
                    return;
                }
            };
            let mut ctx = Ctx {
                now,
                timing,
                schedule: *sched,
                actions,
            };
            match ev {
                Event::Start(_) => agents[id].on_start(&mut ctx),
                Event::Wake(_, token) => agents[id].on_wake(&mut ctx, token),
                Event::Done(_) => {
                    let req = inflight[id].take().expect("completed request");
                    agents[id].on_complete(&mut ctx, req.granted.expect("granted"));
                }
                Event::Try(_) => unreachable!(),
            }
            for act in actions.drain(..) {
                match act {
                    Action::Act { bank, row: _ } => {
                        assert!(inflight[id].is_none(), "agent {id} issued a second outstanding request");
                        inflight[id] = Some(Inflight { bank, granted: None });
                        q.schedule(Event::Try(id), now);
                    }
                    Action::Wake { at, token } => q.schedule(Event::Wake(id, token), at),
                }
            }
        });
        let now = self.queue.now();
        for c in &mut self.controllers {
            c.finish(now);
        }
    }

    /// Run in steps of `step` until `done` holds or the clock passes `cap`.
    /// Returns whether `done` held.
    pub fn run_while_pending(&mut self, step: u64, cap: SimTime, done: impl Fn(&World) -> bool) -> bool {
        while !done(self) {
            if self.now() >= cap {
                return false;
            }
            let next = (self.now() + step).min(cap);
            self.run_until(next);
        }
        true
    }

    /// Command records of every sub-channel, ordered by issue time, then
    /// sub-channel.
    pub fn trace(&self) -> Vec<CommandRecord> {
        let mut all: Vec<CommandRecord> = self
            .controllers
            .iter()
            .flat_map(|c| c.trace().iter().copied())
            .collect();
        all.sort_by_key(|r| (r.issue, r.subchannel));
        all
    }
}

/// Enforce bank partitioning and role placement rules on a roster.
pub fn validate_roster(timing: &TimingParams, agents: &[AgentSpec]) -> Result<()> {
    let mut owner: HashMap<(u32, u32), usize> = HashMap::new();
    for (i, a) in agents.iter().enumerate() {
        let field = |f: &str| format!("agents[{i}].{f}");
        if a.subchannel >= timing.subchannels {
            return Err(Error::invalid(
                field("subchannel"),
                format!("{} is not below {}", a.subchannel, timing.subchannels),
            ));
        }
        if a.banks.is_empty() {
            return Err(Error::invalid(field("banks"), "at least one bank is required"));
        }
        if a.rows < 2 {
            return Err(Error::invalid(field("rows"), "at least two rows are required"));
        }
        if !matches!(a.role, Role::Noise | Role::Victim) && a.banks.len() != 1 {
            return Err(Error::invalid(
                field("banks"),
                "only noise and victim agents may own several banks",
            ));
        }
        for &b in &a.banks {
            if b >= timing.banks_per_rank {
                return Err(Error::invalid(
                    field("banks"),
                    format!("bank {b} does not exist (rank has {})", timing.banks_per_rank),
                ));
            }
            if let Some(j) = owner.insert((a.subchannel, b), i) {
                return Err(Error::invalid(
                    field("banks"),
                    format!(
                        "bank {b} on sub-channel {} is already owned by agents[{j}]",
                        a.subchannel
                    ),
                ));
            }
        }
        match a.role {
            Role::Noise => match a.rate {
                Some(r) if (0.0..=1.0).contains(&r) => {}
                _ => return Err(Error::invalid(field("rate"), "noise rate must be in [0, 1]")),
            },
            _ if a.rate.is_some() => {
                return Err(Error::invalid(field("rate"), "only noise agents take a rate"));
            }
            _ => {}
        }
        if let Some(b) = &a.burst {
            if a.role != Role::Noise {
                return Err(Error::invalid(field("burst"), "only noise agents take a burst"));
            }
            if b.end_ns <= b.start_ns || !(0.0..=1.0).contains(&b.rate) {
                return Err(Error::invalid(
                    field("burst"),
                    "needs start_ns < end_ns and rate in [0, 1]",
                ));
            }
        }
        if a.think_ns.is_some() && a.role != Role::Victim {
            return Err(Error::invalid(field("think_ns"), "only victims take a think time"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{ClosedLoop, RowCursor};

    fn world() -> World {
        World::new(
            &TimingParams::default(),
            &RfmParams::default(),
            &LimiterParams::default(),
        )
        .unwrap()
    }

    #[test]
    fn lone_memory_bound_agent_hits_72_per_interval() {
        // The REF decrement outpaces 72 ACTs, so no RFM ever fires.
        let rfm = RfmParams::with_raaimt(160);
        let mut w = World::new(&TimingParams::default(), &rfm, &LimiterParams::default()).unwrap();
        let id = w.add_agent(Agent::Victim(ClosedLoop::new(0, 0, RowCursor::new(4, 64), 0)), 0);
        w.run_until(3900 * 50);
        let Agent::Victim(v) = w.agent(id) else { unreachable!() };
        for k in 1..40u64 {
            assert_eq!(v.completed_between(k * 3900, (k + 1) * 3900), 72, "interval {k}");
        }
        assert!(w.trace().iter().all(|r| r.kind != crate::dram::CommandKind::Rfmab));
    }

    #[test]
    fn lone_memory_bound_agent_triggers_rfm_at_default_threshold() {
        let mut w = world();
        let id = w.add_agent(Agent::Victim(ClosedLoop::new(0, 0, RowCursor::new(4, 64), 0)), 0);
        w.run_until(3900 * 50);
        let Agent::Victim(v) = w.agent(id) else { unreachable!() };
        assert!(v.completed_between(3900 * 10, 3900 * 40) < 30 * 72);
        assert!(w.trace().iter().any(|r| r.kind == crate::dram::CommandKind::Rfmab));
    }

    #[test]
    fn roster_rejects_shared_banks() {
        let t = TimingParams::default();
        let r = vec![
            AgentSpec::new(Role::Sender, 0, 0, vec![0]),
            AgentSpec::new(Role::Receiver, 1, 0, vec![0]),
        ];
        let err = validate_roster(&t, &r).unwrap_err().to_string();
        assert!(err.contains("agents[1].banks"), "{err}");
        // Same bank number on the other sub-channel is a different bank.
        let r = vec![
            AgentSpec::new(Role::Dos, 0, 0, vec![0]),
            AgentSpec::new(Role::Victim, 1, 1, vec![0]),
        ];
        validate_roster(&t, &r).unwrap();
    }

    #[test]
    fn roster_rejects_missing_banks() {
        let t = TimingParams::default();
        let r = vec![AgentSpec::new(Role::Dos, 0, 0, vec![32])];
        assert!(validate_roster(&t, &r).is_err());
        let r = vec![AgentSpec::noise(0, 0, vec![1], 1.5)];
        assert!(validate_roster(&t, &r).is_err());
    }
}
