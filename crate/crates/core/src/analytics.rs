//! Closed-form RFM rate model for a single-bank hammering loop, and the
//! measurements it is validated against.
//!
//! Per refresh interval the attacker spends `t_rfc` on the REF plus
//! `raaimt / 2` ACTs the REF decrement pays for, and `t_rfc + raaimt * t_rc`
//! per RFM cycle. Solving for the cycle count gives
//!
//! ```text
//! nRFM = (tREFI - tRFC - tRC * RAAIMT / 2) / (RAAIMT * tRC + tRFC)
//! ```

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::dram::{CommandKind, CommandRecord, TimingParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NrfmModelInput {
    pub t_refi: u64,
    pub t_rfc: u64,
    pub t_rc: u64,
    pub raaimt: u32,
}

impl NrfmModelInput {
    pub fn new(timing: &TimingParams, raaimt: u32) -> Self {
        NrfmModelInput {
            t_refi: timing.t_refi,
            t_rfc: timing.t_rfc,
            t_rc: timing.t_rc,
            raaimt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_refi == 0 || self.t_rfc == 0 || self.t_rc == 0 || self.raaimt == 0 {
            return Err(Error::invalid("model", "all inputs must be strictly positive"));
        }
        if self.t_rfc >= self.t_refi {
            return Err(Error::invalid("model.t_rfc", "must be below t_refi"));
        }
        Ok(())
    }
}

/// Exact RFMs per refresh interval, floored at zero.
pub fn analytical_nrfm_exact(m: &NrfmModelInput) -> Ratio<i64> {
    let (refi, rfc, rc, raa) = (m.t_refi as i64, m.t_rfc as i64, m.t_rc as i64, i64::from(m.raaimt));
    // Doubled so an odd RAAIMT stays integral.
    let num = 2 * (refi - rfc) - rc * raa;
    let den = 2 * (raa * rc + rfc);
    if num <= 0 {
        Ratio::from_integer(0)
    } else {
        Ratio::new(num, den)
    }
}

pub fn analytical_nrfm(m: &NrfmModelInput) -> f64 {
    let r = analytical_nrfm_exact(m);
    *r.numer() as f64 / *r.denom() as f64
}

/// Share of issuable time one RFM takes: `t_rfc / (t_refi - t_rfc)`.
pub fn rfm_time_fraction(m: &NrfmModelInput) -> f64 {
    m.t_rfc as f64 / (m.t_refi - m.t_rfc) as f64
}

/// Throughput loss of a memory-bound co-runner if every RFM stalls it.
pub fn predicted_max_slowdown(m: &NrfmModelInput) -> f64 {
    analytical_nrfm(m) * rfm_time_fraction(m)
}

/// Number of RFMab commands issued in each refresh interval of
/// `subchannel`, indexed by the REF that opens the interval. RFMs before
/// the first REF are ignored.
pub fn rfm_per_interval(trace: &[CommandRecord], subchannel: u32) -> Vec<u32> {
    let mut counts: Vec<u32> = Vec::new();
    for r in trace.iter().filter(|r| r.subchannel == subchannel) {
        match r.kind {
            CommandKind::Ref => counts.push(0),
            CommandKind::Rfmab => {
                if let Some(c) = counts.last_mut() {
                    *c += 1;
                }
            }
            _ => {}
        }
    }
    counts
}

/// Mean RFMab count per interval over `window` intervals after skipping
/// `warmup`. The trace must cover all of them, plus the REF that closes
/// the last one.
pub fn measure_nrfm(trace: &[CommandRecord], subchannel: u32, warmup: usize, window: usize) -> Result<f64> {
    if window == 0 {
        return Err(Error::Measurement("window must cover at least one interval".into()));
    }
    let per = rfm_per_interval(trace, subchannel);
    // The last entry's interval may be cut short by the end of the trace.
    if per.len() < warmup + window + 1 {
        return Err(Error::Measurement(format!(
            "trace holds {} complete refresh intervals, {} needed",
            per.len().saturating_sub(1),
            warmup + window
        )));
    }
    let total: u64 = per[warmup..warmup + window].iter().map(|&c| u64::from(c)).sum();
    Ok(total as f64 / window as f64)
}

/// `1 - attacked / baseline`, clamped to `[0, 1)`.
pub fn measure_slowdown(baseline: f64, attacked: f64) -> Result<f64> {
    if baseline.is_nan() || baseline <= 0.0 {
        return Err(Error::Measurement(format!(
            "baseline throughput {baseline} is not positive"
        )));
    }
    let s = 1.0 - attacked / baseline;
    Ok(s.clamp(0.0, 1.0 - f64::EPSILON))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VictimResult {
    pub core: u32,
    pub banks: Vec<u32>,
    pub think_ns: u64,
    /// Completed requests per refresh interval, alone.
    pub baseline_throughput: f64,
    /// Completed requests per refresh interval, next to the attacker.
    pub attacked_throughput: f64,
    pub slowdown: f64,
    pub denials: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DosReport {
    pub raaimt: u32,
    pub limiter: bool,
    pub warmup_intervals: usize,
    pub window_intervals: usize,
    pub analytical_nrfm: f64,
    pub simulated_nrfm: f64,
    pub rfm_time_fraction: f64,
    pub predicted_max_slowdown: f64,
    pub attacker_denials: u64,
    pub victims: Vec<VictimResult>,
    /// RFMab count of each measured interval.
    pub rfm_per_interval: Vec<u32>,
}

/// Time-identity slack of a trace: for `n` intervals containing `k` RFMs in
/// total, returns `n * (t_rfc + t_rc * raaimt / 2) + k * (t_rfc + raaimt *
/// t_rc) - n * t_refi`. The closed-form model assumes this is at most zero
/// up to a few ACTs of carry-over.
pub fn interval_time_excess(m: &NrfmModelInput, intervals: u64, rfms: u64) -> i64 {
    let (refi, rfc, rc, raa) = (m.t_refi as i64, m.t_rfc as i64, m.t_rc as i64, i64::from(m.raaimt));
    let n = intervals as i64;
    let k = rfms as i64;
    n * (rfc + rc * raa / 2) + k * (rfc + raa * rc) - n * refi
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(raaimt: u32) -> NrfmModelInput {
        NrfmModelInput::new(&TimingParams::default(), raaimt)
    }

    #[test]
    fn exact_values_for_default_timing() {
        assert_eq!(analytical_nrfm_exact(&input(32)), Ratio::new(2722, 1946));
        assert_eq!(analytical_nrfm_exact(&input(16)), Ratio::new(3106, 1178));
        assert!((analytical_nrfm(&input(32)) - 1.399).abs() < 5e-4);
        assert!((analytical_nrfm(&input(16)) - 2.637).abs() < 5e-4);
    }

    #[test]
    fn degenerate_raaimt_gives_zero() {
        assert_eq!(analytical_nrfm_exact(&input(200)), Ratio::from_integer(0));
        assert_eq!(predicted_max_slowdown(&input(200)), 0.0);
    }

    #[test]
    fn predicted_slowdowns() {
        assert!((rfm_time_fraction(&input(32)) - 0.1175).abs() < 1e-4);
        assert!((predicted_max_slowdown(&input(32)) - 0.164).abs() < 1e-3);
        assert!((predicted_max_slowdown(&input(16)) - 0.310).abs() < 1e-3);
    }

    #[test]
    fn slowdown_bounds() {
        assert_eq!(measure_slowdown(72.0, 72.0).unwrap(), 0.0);
        assert!((measure_slowdown(72.0, 54.0).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(measure_slowdown(72.0, 80.0).unwrap(), 0.0);
        assert!(measure_slowdown(72.0, 0.0).unwrap() < 1.0);
        assert!(matches!(measure_slowdown(0.0, 1.0), Err(Error::Measurement(_))));
    }

    fn rec(kind: CommandKind, issue: u64) -> CommandRecord {
        CommandRecord {
            kind,
            subchannel: 0,
            bank: None,
            bank_set: None,
            issue,
            completion: issue + 410,
            agent: None,
        }
    }

    #[test]
    fn nrfm_counts_per_interval() {
        let mut t = Vec::new();
        for k in 0..5u64 {
            t.push(rec(CommandKind::Ref, k * 3900));
            for j in 0..(k % 3) {
                t.push(rec(CommandKind::Rfmab, k * 3900 + 500 + j * 1000));
            }
        }
        assert_eq!(rfm_per_interval(&t, 0), [0, 1, 2, 0, 1]);
        assert_eq!(measure_nrfm(&t, 0, 1, 3).unwrap(), 1.0);
        assert!(measure_nrfm(&t, 0, 1, 4).is_err());
        assert!(rfm_per_interval(&t, 1).is_empty());
    }

    #[test]
    fn idle_trace_measures_zero() {
        let t: Vec<_> = (0..20).map(|k| rec(CommandKind::Ref, k * 3900)).collect();
        assert_eq!(measure_nrfm(&t, 0, 2, 10).unwrap(), 0.0);
    }

    proptest::proptest! {
        #[test]
        fn nrfm_decreases_with_raaimt(a in 1u32..80, d in 1u32..80) {
            let (lo, hi) = (input(a), input(a + d));
            let (x, y) = (analytical_nrfm_exact(&lo), analytical_nrfm_exact(&hi));
            if x > Ratio::from_integer(0) {
                proptest::prop_assert!(y < x);
            } else {
                proptest::prop_assert_eq!(y, Ratio::from_integer(0));
            }
        }
    }
}
