//! One PASS/FAIL line per acceptance criterion; fails if any criterion does.

use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfm_sim::addressing::AddressMap;
use rfm_sim::agents::{AgentSpec, Prober, Role, INIT_SLOTS};
use rfm_sim::analytics::{analytical_nrfm, analytical_nrfm_exact, NrfmModelInput};
use rfm_sim::channel::{run_channel, synchronize_to_ref, ChannelConfig};
use rfm_sim::dos::{run_dos, DosConfig};
use rfm_sim::dram::{CommandKind, TimingParams};
use rfm_sim::experiment::{
    run_experiment, run_sweep, ExperimentConfig, ExperimentKind, ExperimentResult, SweepGrid, SweepRow,
};
use rfm_sim::rfm::{LimiterParams, RfmParams};
use rfm_sim::system::{SystemConfig, World};
use rfm_sim::trace::write_trace;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(x: f64, target: f64, rel: f64) -> bool {
    ((x - target) / target).abs() <= rel
}

fn random_bits(n: usize, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random()).collect()
}

fn covert_system(raaimt: u32) -> SystemConfig {
    let mut c = ExperimentConfig::new(ExperimentKind::Covert);
    c.rfm = Some(RfmParams::with_raaimt(raaimt));
    c.resolve().unwrap().system()
}

fn covert_channel() -> ChannelConfig {
    ExperimentConfig::new(ExperimentKind::Covert).resolve().unwrap().channel
}

/// Independent closed form: (tREFI - tRFC - tRC*raaimt/2) / (tRFC + raaimt*tRC).
fn nrfm_oracle(t: &TimingParams, raaimt: u32) -> Ratio<i64> {
    let (refi, rfc, rc, r) = (t.t_refi as i64, t.t_rfc as i64, t.t_rc as i64, i64::from(raaimt));
    Ratio::new(refi - rfc - rc * r / 2, rfc + r * rc)
}

fn dos_system(raaimt: u32, limiter: bool, agents: Vec<AgentSpec>) -> SystemConfig {
    SystemConfig {
        timing: TimingParams::default(),
        rfm: RfmParams::with_raaimt(raaimt),
        limiter: if limiter {
            LimiterParams::enabled()
        } else {
            LimiterParams::default()
        },
        agents,
    }
}

fn attacker() -> AgentSpec {
    AgentSpec::new(Role::Dos, 0, 0, vec![0])
}

fn c1_counter_golden() -> Outcome {
    let sys = covert_system(32);
    let ch = covert_channel();
    let patterns: Vec<(&str, Vec<bool>)> = vec![
        ("zeros", vec![false; 200]),
        ("ones", vec![true; 200]),
        ("alternating", (0..200).map(|i| i % 2 == 0).collect()),
        ("random", random_bits(500, 11)),
    ];
    let mut bad = Vec::new();
    for (name, bits) in &patterns {
        let run = run_channel(&sys, &ch, bits, 1).unwrap();
        // Boundaries from the first slot through the end of the last one.
        let slots = INIT_SLOTS as usize + ch.preamble_bits as usize + bits.len();
        let c = &run.sender_counters[..=slots];
        let ok = c[..3] == [0, 32, 64] && c[3..].iter().all(|&v| v == 64);
        if !ok {
            bad.push(format!("{name}: {:?}", c));
        }
    }
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!("0 -> 32 -> 64 -> 64... for {} bit patterns", patterns.len())
        } else {
            bad.join("; ")
        },
    )
}

fn c2_analytical_model() -> Outcome {
    let t = TimingParams::default();
    let mut parts = Vec::new();
    let mut pass = true;
    for (raaimt, exact, reported) in [(32u32, Ratio::new(2722, 1946), 1.37), (16, Ratio::new(3106, 1178), 2.6)] {
        let m = NrfmModelInput::new(&t, raaimt);
        let got = analytical_nrfm_exact(&m);
        let exact_ok = got == exact && got == nrfm_oracle(&t, raaimt);
        let model = *exact.numer() as f64 / *exact.denom() as f64;
        let sys = dos_system(raaimt, false, vec![attacker()]);
        let cfg = DosConfig {
            warmup_intervals: 10,
            window_intervals: 1000,
        };
        let sim = run_dos(&sys, &cfg, 1).unwrap().report.simulated_nrfm;
        let near_model = within(sim, model, 0.05);
        let near_reported = within(sim, reported, 0.10);
        pass &= exact_ok && near_model && near_reported && (analytical_nrfm(&m) - model).abs() < 1e-12;
        parts.push(format!(
            "raaimt {raaimt}: exact {} ({}), simulated {sim:.4} vs model {model:.4} ({:+.2}%, {}) vs reported {reported} ({:+.2}%, {})",
            got,
            if exact_ok { "ok" } else { "MISMATCH" },
            100.0 * (sim - model) / model,
            if near_model { "ok" } else { "outside 5%" },
            100.0 * (sim - reported) / reported,
            if near_reported { "ok" } else { "outside 10%" },
        ));
    }
    outcome(pass, parts.join("; "))
}

fn c3_noiseless_channel() -> Outcome {
    let t = TimingParams::default();
    let run = run_channel(&covert_system(32), &covert_channel(), &random_bits(10_000, 3), 1).unwrap();
    let r = &run.report;
    let (lo, hi) = (0.7 * t.t_rfc as f64, 1.2 * t.t_rfc as f64);
    let gap = r.gap_ns.unwrap_or(f64::NAN);
    let pass = r.bits_sent == 10_000 && r.accuracy == 1.0 && r.bits_correct == 10_000 && (lo..=hi).contains(&gap);
    outcome(
        pass,
        format!(
            "{} bits, accuracy {}, gap {gap:.1} ns in [{lo}, {hi}]",
            r.bits_sent, r.accuracy
        ),
    )
}

fn c4_bandwidth() -> Outcome {
    let t = TimingParams::default();
    let bits: Vec<bool> = random_bits(64, 5);
    let ab = run_channel(&covert_system(32), &covert_channel(), &bits, 1)
        .unwrap()
        .report;
    let mut c = ExperimentConfig::new(ExperimentKind::CovertRfmsb);
    c.message = Some(bits.iter().map(|&b| if b { '1' } else { '0' }).collect());
    let out = run_experiment(c).unwrap();
    let ExperimentResult::Channel(sb) = &out.report.result else {
        return outcome(false, "rfmsb run produced no channel report");
    };
    let expect = 1e9 / (8.0 * t.t_refi as f64);
    let kb = expect / 1024.0;
    let per_sc_ok = ab.raw_bandwidth_bytes_per_s == expect && (ab.raw_bandwidth_kib_per_s - kb).abs() < 1e-9;
    let rounded_ok = format!("{:.1}", ab.raw_bandwidth_kib_per_s) == "31.3"
        && format!("{:.1}", ab.total_raw_bandwidth_kib_per_s) == "62.6";
    let total_ok = ab.total_raw_bandwidth_kib_per_s == 2.0 * ab.raw_bandwidth_kib_per_s;
    let sb_ok = sb.raw_bandwidth_bytes_per_s == 2.0 * ab.raw_bandwidth_bytes_per_s && sb.accuracy == 1.0;
    outcome(
        per_sc_ok && rounded_ok && total_ok && sb_ok,
        format!(
            "RFMab {:.4} KB/s per sub-channel, {:.4} KB/s total; RFMsb {:.4} KB/s ({}x)",
            ab.raw_bandwidth_kib_per_s,
            ab.total_raw_bandwidth_kib_per_s,
            sb.raw_bandwidth_kib_per_s,
            sb.raw_bandwidth_bytes_per_s / ab.raw_bandwidth_bytes_per_s
        ),
    )
}

fn c5_noise() -> Outcome {
    let rates = [0.3, 0.35, 0.4, 0.45];
    let seeds: Vec<u64> = (1..=20).collect();
    let mut c = ExperimentConfig::new(ExperimentKind::Sweep);
    c.message_bits = 1000;
    c.sweep = Some(SweepGrid {
        base: ExperimentKind::Covert,
        seeds: Some(seeds.clone()),
        noise_rates: Some(rates.to_vec()),
        resync_intervals: Some(vec![0, 100]),
        raaimt: None,
        limiter: None,
    });
    let (rows, _) = run_sweep(&c.resolve().unwrap()).unwrap();
    let acc = |rate: f64, resync: u32, seed: u64| -> Option<f64> {
        rows.iter()
            .find(|r: &&SweepRow| r.noise_rate == rate && r.resync_interval == resync && r.seed == seed)
            .and_then(|r| r.accuracy)
    };
    let failed = rows.iter().filter(|r| r.accuracy.is_none()).count();
    let mean =
        |rate: f64, resync: u32| seeds.iter().filter_map(|&s| acc(rate, resync, s)).sum::<f64>() / seeds.len() as f64;
    let plain: Vec<f64> = rates.iter().map(|&r| mean(r, 0)).collect();
    let synced: Vec<f64> = rates.iter().map(|&r| mean(r, 100)).collect();
    let monotone = plain.windows(2).all(|w| w[1] <= w[0]) && synced.windows(2).all(|w| w[1] <= w[0]);
    let mut worse = 0;
    for &r in &rates {
        for &s in &seeds {
            if acc(r, 100, s) < acc(r, 0, s) {
                worse += 1;
            }
        }
    }
    let strict = synced[rates.len() - 1] > plain[rates.len() - 1];
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("/");
    outcome(
        failed == 0 && monotone && worse == 0 && strict,
        format!(
            "{} seeds x rates {:?}: mean accuracy {} without resync, {} with resync 100; {worse} pairs worse with resync, {failed} failed points",
            seeds.len(),
            rates,
            fmt(&plain),
            fmt(&synced)
        ),
    )
}

fn c6_dos_slowdown() -> Outcome {
    let mut parts = Vec::new();
    let mut slow = Vec::new();
    let mut pass = true;
    for raaimt in [16, 32] {
        let mut c = ExperimentConfig::new(ExperimentKind::Dos);
        c.rfm = Some(RfmParams::with_raaimt(raaimt));
        let c = c.resolve().unwrap();
        let r = run_dos(&c.system(), &c.dos, c.seed).unwrap().report;
        let v = &r.victims[0];
        let m = NrfmModelInput::new(&c.system().timing, raaimt);
        let n = nrfm_oracle(&c.system().timing, raaimt);
        let t = &c.system().timing;
        let bound = *n.numer() as f64 / *n.denom() as f64 * t.t_rfc as f64 / (t.t_refi - t.t_rfc) as f64;
        pass &= v.think_ns == 0 && v.slowdown > 0.0 && v.slowdown <= bound + 0.05;
        pass &= (r.predicted_max_slowdown - bound).abs() < 1e-12 && m.raaimt == raaimt;
        slow.push(v.slowdown);
        parts.push(format!(
            "raaimt {raaimt}: slowdown {:.4} (bound {:.4} + 0.05)",
            v.slowdown, bound
        ));
    }
    pass &= slow[0] > slow[1];
    outcome(pass, parts.join("; "))
}

fn c7_limiter() -> Outcome {
    let raaimt = 32u32;
    let t = TimingParams::default();
    let cfg = DosConfig {
        warmup_intervals: 10,
        window_intervals: 200,
    };
    let r = run_dos(&dos_system(raaimt, true, vec![attacker()]), &cfg, 1)
        .unwrap()
        .report;
    let rate = r.rfm_per_interval.iter().map(|&x| u64::from(x)).sum::<u64>() as f64 / r.rfm_per_interval.len() as f64;
    let rate_ok = r.rfm_per_interval.len() >= 160 && rate <= 1.05;

    // Closed loop at most raaimt/2 ACTs per tREFI: think + tRC >= tREFI / (raaimt/2).
    let think = (t.t_refi).div_ceil(u64::from(raaimt / 2)) - t.t_rc;
    let benign = AgentSpec::victim(1, 0, 8, think);
    let run = run_dos(&dos_system(raaimt, true, vec![attacker(), benign]), &cfg, 1).unwrap();
    let v = &run.report.victims[0];
    let sched = t.schedule();
    let mut per_interval = std::collections::BTreeMap::new();
    for rec in run
        .trace
        .iter()
        .filter(|r| r.kind == CommandKind::Act && r.agent == Some(1))
    {
        *per_interval.entry(sched.interval_of(rec.issue)).or_insert(0u32) += 1;
    }
    let max_acts = per_interval.values().copied().max().unwrap_or(0);
    let benign_ok = v.denials == 0 && max_acts <= raaimt / 2;
    outcome(
        rate_ok && benign_ok,
        format!(
            "attacker RFMab rate {rate:.4}/tREFI over {} tREFIs; benign agent (<= {} ACTs/tREFI, max seen {max_acts}) denials {}",
            r.rfm_per_interval.len(),
            raaimt / 2,
            v.denials
        ),
    )
}

fn c8_synchronization() -> Outcome {
    let base = TimingParams::default();
    let period = base.ref_period();
    let tol = 2 * base.t_rc;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0u64;
    let mut failures = 0;
    for _ in 0..100 {
        let phase = rng.random_range(0..period);
        let t = base.clone().with_phase(phase);
        let mut world = World::new(&t, &RfmParams::default(), &LimiterParams::default()).unwrap();
        match synchronize_to_ref(&mut world, Prober::new(0, 0, 0, t.t_rc, t.t_rfc, period)) {
            Ok(est) => {
                let d = est.phase.abs_diff(phase);
                worst = worst.max(d.min(period - d));
            }
            Err(_) => failures += 1,
        }
    }
    outcome(
        failures == 0 && worst <= tol,
        format!("100 random phases: worst error {worst} ns (tolerance {tol}), {failures} failed"),
    )
}

fn c9_addressing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut bad = 0;
    let mut checked = 0usize;
    for _ in 0..1000 {
        // 2^5 rows cover every size drawn below.
        let map = AddressMap::random(&mut rng, 5);
        let target = map
            .map_address(rng.random_range(0..1u64 << map.address_bits))
            .unwrap()
            .bank_address();
        let size = map.associativity as usize + rng.random_range(1..=8);
        let Ok(set) = map.build_eviction_set(target, size) else {
            continue;
        };
        let coords: Vec<_> = set.iter().map(|&a| map.map_address(a).unwrap()).collect();
        let sets: std::collections::BTreeSet<u64> = set.iter().map(|&a| map.llc_set(a).unwrap()).collect();
        let rows: std::collections::BTreeSet<u64> = coords.iter().map(|c| c.row).collect();
        let ok = set.len() == size
            && coords.iter().all(|c| c.bank_address() == target)
            && sets.len() == 1
            && rows.len() == size;
        if !ok {
            bad += 1;
        }
        checked += set.len();
    }
    outcome(
        bad == 0,
        format!("1000 layouts, {checked} addresses mapped, {bad} layouts violating one-bank/one-set/distinct-rows"),
    )
}

fn c10_determinism() -> Outcome {
    let mut configs = Vec::new();
    for kind in [ExperimentKind::Covert, ExperimentKind::CovertRfmsb] {
        let mut c = ExperimentConfig::new(kind);
        c.message_bits = 300;
        c.noise_rate = Some(0.3);
        c.channel.resync_interval = 50;
        configs.push(c);
    }
    let mut c = ExperimentConfig::new(ExperimentKind::Dos);
    c.dos.window_intervals = 100;
    configs.push(c.clone());
    c.limiter.enabled = true;
    configs.push(c.clone());
    c.kind = ExperimentKind::ValidateModel;
    configs.push(c);
    let mut c = ExperimentConfig::new(ExperimentKind::Sweep);
    c.message_bits = 100;
    c.sweep = Some(SweepGrid {
        base: ExperimentKind::Covert,
        seeds: Some(vec![1, 2, 3]),
        noise_rates: Some(vec![0.2, 0.4]),
        resync_intervals: None,
        raaimt: None,
        limiter: None,
    });
    configs.push(c);

    let render = |c: &ExperimentConfig| {
        let out = run_experiment(c.clone()).unwrap();
        let mut bytes = out.report.to_json().into_bytes();
        for (name, recs) in &out.traces {
            bytes.extend_from_slice(name.as_bytes());
            write_trace(&mut bytes, recs).unwrap();
        }
        for (name, text) in &out.tables {
            bytes.extend_from_slice(name.as_bytes());
            bytes.extend_from_slice(text.as_bytes());
        }
        bytes
    };
    let mut differing = Vec::new();
    for c in &configs {
        if render(c) != render(c) {
            differing.push(c.kind.as_str());
        }
    }
    outcome(
        differing.is_empty(),
        format!("{} configs run twice, differing: {:?}", configs.len(), differing),
    )
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 10] = [
        ("1 RFM counter golden trace", c1_counter_golden, Duration::from_secs(1)),
        ("2 analytical model", c2_analytical_model, Duration::from_secs(10)),
        (
            "3 noiseless covert channel",
            c3_noiseless_channel,
            Duration::from_secs(30),
        ),
        ("4 bandwidth arithmetic", c4_bandwidth, Duration::from_secs(10)),
        ("5 noise behavior", c5_noise, Duration::from_secs(300)),
        ("6 DOS slowdown", c6_dos_slowdown, Duration::from_secs(60)),
        ("7 countermeasure", c7_limiter, Duration::from_secs(60)),
        ("8 synchronization", c8_synchronization, Duration::from_secs(10)),
        ("9 addressing", c9_addressing, Duration::from_secs(10)),
        ("10 determinism", c10_determinism, Duration::from_secs(60)),
    ];
    let mut failed = Vec::new();
    for (name, check, budget) in criteria {
        let start = Instant::now();
        let o = check();
        let took = start.elapsed();
        let pass = o.pass && took <= budget;
        println!(
            "criterion {name}: {} [{:.2}s of {}s] {}",
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs(),
            o.detail
        );
        if !pass {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
