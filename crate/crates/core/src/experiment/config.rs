//! Experiment configuration files (TOML) and their resolution into a fully
//! specified run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::addressing::{AddressMap, BankAddress};
use crate::agents::{AgentSpec, Role};
use crate::channel::{ChannelConfig, ChannelMode};
use crate::dos::DosConfig;
use crate::dram::TimingParams;
use crate::error::{Error, Result};
use crate::rfm::{LimiterParams, RfmParams};
use crate::system::SystemConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[serde(alias = "COVERT")]
    Covert,
    #[serde(alias = "COVERT_RFMSB")]
    CovertRfmsb,
    #[serde(alias = "DOS")]
    Dos,
    #[serde(alias = "VALIDATE_MODEL")]
    ValidateModel,
    #[serde(alias = "SWEEP")]
    Sweep,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Covert => "covert",
            ExperimentKind::CovertRfmsb => "covert_rfmsb",
            ExperimentKind::Dos => "dos",
            ExperimentKind::ValidateModel => "validate_model",
            ExperimentKind::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    pub raaimt: Vec<u32>,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        ValidateConfig { raaimt: vec![16, 32] }
    }
}

/// Parameter grid of a sweep. An absent dimension keeps the base value; a
/// present but empty one makes the grid empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    /// Experiment run at every grid point: `covert`, `covert_rfmsb` or `dos`.
    pub base: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_rates: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resync_intervals: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raaimt: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limiter: Option<Vec<bool>>,
}

/// Target of an exported eviction set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvictionSetSpec {
    #[serde(default)]
    pub subchannel: u64,
    #[serde(default)]
    pub rank: u64,
    pub bank_group: u64,
    pub bank: u64,
    pub size: usize,
}

impl EvictionSetSpec {
    pub fn target(&self) -> BankAddress {
        BankAddress {
            subchannel: self.subchannel,
            rank: self.rank,
            bank_group: self.bank_group,
            bank: self.bank,
        }
    }
}

fn default_seed() -> u64 {
    1
}

fn default_message_bits() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rfm: Option<RfmParams>,
    #[serde(default)]
    pub limiter: LimiterParams,
    #[serde(default)]
    pub channel: ChannelConfig,
    /// Random message length when `message` is absent.
    #[serde(default = "default_message_bits")]
    pub message_bits: usize,
    /// Explicit message as a string of '0' and '1'.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    /// Rate applied to every noise agent; adds one when the roster has none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_rate: Option<f64>,
    #[serde(default)]
    pub dos: DosConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepGrid>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub addressing: Option<AddressMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eviction_set: Option<EvictionSetSpec>,
    #[serde(default)]
    pub agents: Vec<AgentSpec>,
}

impl ExperimentConfig {
    pub fn new(kind: ExperimentKind) -> Self {
        ExperimentConfig {
            kind,
            seed: default_seed(),
            timing: None,
            rfm: None,
            limiter: LimiterParams::default(),
            channel: ChannelConfig::default(),
            message_bits: default_message_bits(),
            message: None,
            noise_rate: None,
            dos: DosConfig::default(),
            validate: ValidateConfig::default(),
            sweep: None,
            addressing: None,
            eviction_set: None,
            agents: Vec::new(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    /// Config embedded under the `config` key of a JSON report.
    pub fn from_report_json(text: &str) -> Result<Self> {
        let mut v: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        let cfg = v
            .get_mut("config")
            .map(serde_json::Value::take)
            .ok_or_else(|| Error::ConfigParse("report has no `config` key".into()))?;
        serde_json::from_value(cfg).map_err(|e| Error::ConfigParse(format!("config: {e}")))
    }

    /// Read a TOML config, or a JSON report (by `.json` extension) to rerun
    /// its echoed config.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_report_json(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Fill every defaulted part for this kind, then validate. Resolving a
    /// resolved config changes nothing.
    pub fn resolve(mut self) -> Result<Self> {
        let kind = match (self.kind, &self.sweep) {
            (ExperimentKind::Sweep, Some(g)) => g.base,
            (ExperimentKind::Sweep, None) => return Err(Error::invalid("sweep", "a sweep needs a [sweep] grid")),
            (k, _) => k,
        };
        if self.kind == ExperimentKind::Sweep
            && !matches!(
                kind,
                ExperimentKind::Covert | ExperimentKind::CovertRfmsb | ExperimentKind::Dos
            )
        {
            return Err(Error::invalid("sweep.base", "must be covert, covert_rfmsb or dos"));
        }
        let rfmsb = kind == ExperimentKind::CovertRfmsb;
        self.timing.get_or_insert_with(|| {
            if rfmsb {
                TimingParams::default().with_fgr()
            } else {
                TimingParams::default()
            }
        });
        self.rfm.get_or_insert_with(|| {
            if rfmsb {
                RfmParams::with_raaimt(16).same_bank()
            } else {
                RfmParams::default()
            }
        });
        match kind {
            ExperimentKind::Covert => self.channel.mode = ChannelMode::Rfmab,
            ExperimentKind::CovertRfmsb => self.channel.mode = ChannelMode::Rfmsb,
            _ => {}
        }
        if self.agents.is_empty() {
            self.agents = default_roster(kind);
        }
        if let Some(rate) = self.noise_rate {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::invalid("noise_rate", format!("{rate} is not in [0, 1]")));
            }
            let mut found = false;
            for a in self.agents.iter_mut().filter(|a| a.role == Role::Noise) {
                a.rate = Some(rate);
                found = true;
            }
            if !found && rate > 0.0 {
                let noise = default_noise(&self.agents, self.timing.as_ref().expect("resolved"), rate)?;
                self.agents.push(noise);
            }
        }
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        self.system().validate()?;
        if let Some(m) = &self.message {
            if let Some(c) = m.chars().find(|c| !matches!(c, '0' | '1')) {
                return Err(Error::invalid("message", format!("`{c}` is not a bit")));
            }
        }
        if self.dos.window_intervals == 0 {
            return Err(Error::invalid("dos.window_intervals", "must be positive"));
        }
        if let Some(&r) = self.validate.raaimt.iter().find(|&&r| r == 0 || r % 2 != 0) {
            return Err(Error::invalid(
                "validate.raaimt",
                format!("{r} is not a positive even count"),
            ));
        }
        if let Some(g) = &self.sweep {
            if let Some(&r) = g.noise_rates.iter().flatten().find(|r| !(0.0..=1.0).contains(*r)) {
                return Err(Error::invalid("sweep.noise_rates", format!("{r} is not in [0, 1]")));
            }
            if let Some(&r) = g.raaimt.iter().flatten().find(|&&r| r == 0 || r % 2 != 0) {
                return Err(Error::invalid(
                    "sweep.raaimt",
                    format!("{r} is not a positive even count"),
                ));
            }
        }
        if let Some(a) = &self.addressing {
            a.validate()?;
        }
        if self.eviction_set.is_some() && self.addressing.is_none() {
            return Err(Error::invalid("eviction_set", "needs an [addressing] layout"));
        }
        Ok(())
    }

    /// The memory system and roster. Call on a resolved config.
    pub fn system(&self) -> SystemConfig {
        SystemConfig {
            timing: self.timing.clone().unwrap_or_default(),
            rfm: self.rfm.clone().unwrap_or_default(),
            limiter: self.limiter.clone(),
            agents: self.agents.clone(),
        }
    }
}

fn default_roster(kind: ExperimentKind) -> Vec<AgentSpec> {
    match kind {
        ExperimentKind::Covert => vec![
            AgentSpec::new(Role::Sender, 0, 0, vec![0]),
            AgentSpec::new(Role::Receiver, 1, 0, vec![1]),
        ],
        ExperimentKind::CovertRfmsb => vec![
            AgentSpec::new(Role::Sender, 0, 0, vec![0]),
            AgentSpec::new(Role::Receiver, 1, 0, vec![4]),
        ],
        ExperimentKind::Dos => vec![
            AgentSpec::new(Role::Dos, 0, 0, vec![0]),
            AgentSpec {
                banks: (8..20).collect(),
                ..AgentSpec::victim(1, 0, 8, 0)
            },
        ],
        ExperimentKind::ValidateModel | ExperimentKind::Sweep => vec![AgentSpec::new(Role::Dos, 0, 0, vec![0])],
    }
}

/// A one-bank noise agent on sub-channel 0, on the lowest free bank.
fn default_noise(agents: &[AgentSpec], timing: &TimingParams, rate: f64) -> Result<AgentSpec> {
    let used = |b: u32| agents.iter().any(|a| a.subchannel == 0 && a.banks.contains(&b));
    let bank = (0..timing.banks_per_rank)
        .find(|&b| !used(b))
        .ok_or_else(|| Error::invalid("noise_rate", "no free bank on sub-channel 0 for a noise agent"))?;
    let core = agents.iter().map(|a| a.core + 1).max().unwrap_or(0);
    Ok(AgentSpec::noise(core, 0, vec![bank], rate))
}
