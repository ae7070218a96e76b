//! Seeded discrete-event simulator of a single 802.11 DCF uplink.
//!
//! The simulator consumes a probing schedule and a pathology scenario and
//! produces the trace a real receiver would have recorded, together with
//! per-packet ground truth (true first-transmission rate, retry count, true
//! wait and access delay). It is the oracle every diagnostic is verified
//! against.
//!
//! Packets of a train enter a FCFS sender queue at their user-level send
//! times; queueing wait emerges from occupancy. Each transmission attempt
//! runs the DCF sequence: busy-wait while a carrier-sensed contender holds
//! the channel, DIFS, a uniform backoff draw over the current contention
//! window, the frame itself, then SIFS plus the ACK slot (an equal-length
//! timeout when the attempt failed). The window doubles per retry up to
//! cw_max; a packet is dropped at layer 3 once it exhausts its retries.
//! The AP-to-server wired hop adds no jitter, so a packet's one-way delay
//! decomposes exactly into wait + first-transmission latency + access delay.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rate::{frame_bits, RateKbps};
use crate::schedule::{build_schedule, ProbeSchedule};
use crate::trace::{ProbeRecord, Trace, TraceMeta};

/// Spacing between user-level sends within a train, µs. Back-to-back sends
/// are not literally simultaneous; a small constant keeps send timestamps
/// strictly ordered.
pub const SEND_SPACING_US: i64 = 2;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Schedule(#[from] crate::schedule::ScheduleError),
}

/// 802.11 timing and protocol constants. Defaults follow 802.11g.
#[derive(Debug, Clone)]
pub struct ChannelModel {
    pub slot_us: i64,
    pub difs_us: i64,
    pub sifs_us: i64,
    /// ACK transmission time at the basic rate.
    pub ack_us: i64,
    pub cw_min: u32,
    pub cw_max: u32,
    /// Maximum retransmissions per packet; the packet is lost at layer 3
    /// after `retry_limit + 1` failed attempts in total.
    pub retry_limit: u32,
    pub rate_set: Vec<RateKbps>,
    pub l2_overhead: u32,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel {
            slot_us: 9,
            difs_us: 28,
            sifs_us: 10,
            ack_us: 30,
            cw_min: 15,
            cw_max: 1023,
            retry_limit: 7,
            rate_set: crate::rate::default_rate_set(),
            l2_overhead: crate::rate::DEFAULT_L2_OVERHEAD,
        }
    }
}

/// Driver rate-adaptation behavior for first transmissions.
#[derive(Debug, Clone, PartialEq)]
pub enum RateAdapter {
    Fixed(RateKbps),
    /// One rate per train, drawn from the pool at train start; every packet
    /// of the train uses it.
    Sticky(Vec<RateKbps>),
    /// Mostly `base`, but with probability `p_probe` a packet's first
    /// transmission samples one of `probe_rates`. Also the only adapter
    /// that reacts to failures: after every third consecutive failed
    /// attempt of a packet it steps down one rate in the standard set.
    Sampler { base: RateKbps, probe_rates: Vec<RateKbps>, p_probe: f64 },
}

/// Two-state burst-error channel: per-bit error probabilities per state,
/// exponential sojourn times.
#[derive(Debug, Clone, PartialEq)]
pub struct GilbertElliott {
    pub bit_error_good: f64,
    pub bit_error_bad: f64,
    pub mean_sojourn_good_us: f64,
    pub mean_sojourn_bad_us: f64,
}

/// Carrier-sensed, always-backlogged cross-traffic source.
#[derive(Debug, Clone, PartialEq)]
pub struct Contender {
    /// Target long-run share of channel time held by the contender; maps to
    /// the number of back-to-back frames sent per contention win.
    pub utilization: f64,
    pub frame_bytes: u32,
    pub rate: RateKbps,
}

impl Contender {
    fn frame_us(&self, l2_overhead: u32) -> i64 {
        self.rate.tx_us(frame_bits(self.frame_bytes, l2_overhead))
    }

    fn burst_frames(&self) -> u32 {
        ((self.utilization / (1.0 - self.utilization)).round() as u32).max(1)
    }
}

/// Out-of-range sender: its transmissions are invisible to carrier sensing
/// and corrupt any overlapping probe frame (and are corrupted by it, after
/// which the hidden node backs off).
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenContender {
    /// Mean idle gap between bursts, µs (exponentially distributed).
    pub mean_gap_us: f64,
    /// Burst duration, µs.
    pub burst_us: i64,
    /// Mean extra backoff after a collision, µs (exponential).
    pub mean_backoff_us: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pathology {
    None,
    LowSnr(GilbertElliott),
    Congestion(Contender),
    HiddenNode(HiddenContender),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    Normal,
    LowSnr,
    Congestion,
    Sht,
}

impl ScenarioKind {
    pub fn label(self) -> &'static str {
        match self {
            ScenarioKind::Normal => "normal",
            ScenarioKind::LowSnr => "low-snr",
            ScenarioKind::Congestion => "congestion",
            ScenarioKind::Sht => "sht",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Intensity {
    Mild,
    Severe,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub pathology: Pathology,
    pub adapter: RateAdapter,
    pub rng_seed: u64,
}

impl Scenario {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }
}

/// Canned scenarios used throughout testing and the CLI.
pub fn scenario_preset(kind: ScenarioKind, intensity: Intensity) -> Scenario {
    let severe = intensity == Intensity::Severe;
    match kind {
        ScenarioKind::Normal => Scenario {
            kind,
            pathology: Pathology::None,
            // Rates with enough relative distance to both ladder neighbors
            // that one backoff window of dispersion noise cannot shift the
            // train mode (5.5/6 and 11/12 sit only 9% apart and cannot be
            // told apart from 49 dispersions).
            adapter: RateAdapter::Sticky(vec![
                RateKbps(2_000),
                RateKbps(9_000),
                RateKbps(18_000),
            ]),
            rng_seed: 0,
        },
        ScenarioKind::LowSnr => Scenario {
            kind,
            // Degraded channels push real rate adapters down. 11 Mbps keeps
            // packet airtimes well inside the bad-state bursts (so the burst
            // correlation is visible across successive packets) while retry
            // chains remain short enough to produce genuine layer-3 drops.
            pathology: Pathology::LowSnr(GilbertElliott {
                bit_error_good: 1e-6,
                bit_error_bad: if severe { 5e-4 } else { 1e-4 },
                mean_sojourn_good_us: 60_000.0,
                mean_sojourn_bad_us: 20_000.0,
            }),
            adapter: RateAdapter::Sticky(vec![RateKbps(11_000)]),
            rng_seed: 0,
        },
        ScenarioKind::Congestion => Scenario {
            kind,
            pathology: Pathology::Congestion(Contender {
                utilization: if severe { 0.8 } else { 0.5 },
                frame_bytes: 1500,
                rate: RateKbps(6_000),
            }),
            adapter: RateAdapter::Sticky(vec![RateKbps(54_000)]),
            rng_seed: 0,
        },
        ScenarioKind::Sht => Scenario {
            kind,
            pathology: Pathology::HiddenNode(HiddenContender {
                mean_gap_us: if severe { 4_000.0 } else { 8_000.0 },
                burst_us: 228,
                mean_backoff_us: 3_000.0,
            }),
            adapter: RateAdapter::Sticky(vec![RateKbps(11_000), RateKbps(12_000)]),
            rng_seed: 0,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    None,
    BitError,
    Collision,
}

impl Cause {
    pub fn as_str(self) -> &'static str {
        match self {
            Cause::None => "none",
            Cause::BitError => "bit_error",
            Cause::Collision => "collision",
        }
    }
}

/// Hidden per-packet quantities the diagnostics are verified against.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketTruth {
    pub train: u32,
    pub seq: u32,
    /// First-transmission rate.
    pub rate: RateKbps,
    pub retries: u32,
    /// Sender-queue wait.
    pub wait_us: i64,
    /// First-transmission latency.
    pub tx_us: i64,
    /// True access delay: everything in the OWD except wait and first
    /// transmission. For lost packets, measured up to the drop instant.
    pub access_us: i64,
    pub cause: Cause,
    /// Backoff slots drawn per attempt, with the window each was drawn from.
    pub backoffs: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub scenario: String,
    pub seed: u64,
    pub packets: Vec<PacketTruth>,
}

struct GeState {
    params: GilbertElliott,
    bad: bool,
    next_flip_us: f64,
}

impl GeState {
    /// Microseconds of bad-state time overlapping [t0, t1). Queries must be
    /// time-monotone; state flips are drawn lazily.
    fn bad_exposure_us(&mut self, t0: i64, t1: i64, rng: &mut ChaCha8Rng) -> f64 {
        let mut bad_us = 0.0f64;
        let mut cursor = t0 as f64;
        let end = t1 as f64;
        loop {
            let seg_end = self.next_flip_us.min(end);
            if self.bad && seg_end > cursor {
                bad_us += seg_end - cursor;
            }
            if self.next_flip_us >= end {
                break;
            }
            cursor = self.next_flip_us;
            self.bad = !self.bad;
            let mean = if self.bad {
                self.params.mean_sojourn_bad_us
            } else {
                self.params.mean_sojourn_good_us
            };
            self.next_flip_us += exp_draw(mean, rng);
        }
        bad_us
    }

    fn attempt_error_prob(&mut self, t0: i64, t1: i64, bits: u64, rng: &mut ChaCha8Rng) -> f64 {
        let airtime = (t1 - t0).max(1) as f64;
        let bad_frac = (self.bad_exposure_us(t0, t1, rng) / airtime).clamp(0.0, 1.0);
        frame_error_prob(bits, bad_frac, &self.params)
    }
}

/// Per-attempt frame error probability: every bit fails independently at
/// the error rate of whichever channel state it was transmitted in, so a
/// frame spending its whole airtime in one state fails with
/// `1 - (1 - p_state)^bits`.
pub fn frame_error_prob(bits: u64, bad_fraction: f64, params: &GilbertElliott) -> f64 {
    let bits_bad = bits as f64 * bad_fraction;
    let bits_good = bits as f64 - bits_bad;
    let survive = (1.0 - params.bit_error_bad).powf(bits_bad)
        * (1.0 - params.bit_error_good).powf(bits_good);
    1.0 - survive
}

struct HiddenState {
    params: HiddenContender,
    burst_start_us: i64,
}

impl HiddenState {
    /// True when a hidden burst overlaps [t0, t1); on overlap the hidden
    /// node's next burst is pushed out by an exponential backoff.
    fn collides(&mut self, t0: i64, t1: i64, rng: &mut ChaCha8Rng) -> bool {
        while self.burst_start_us + self.params.burst_us <= t0 {
            self.burst_start_us +=
                self.params.burst_us + exp_draw(self.params.mean_gap_us, rng) as i64;
        }
        if self.burst_start_us < t1 {
            self.burst_start_us = t1
                + exp_draw(self.params.mean_backoff_us, rng) as i64
                + exp_draw(self.params.mean_gap_us, rng) as i64;
            true
        } else {
            false
        }
    }
}

fn exp_draw(mean: f64, rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.gen::<f64>();
    -mean * (1.0 - u).ln()
}

fn validate_scenario(scenario: &Scenario) -> Result<(), SimError> {
    match &scenario.pathology {
        Pathology::None => {}
        Pathology::LowSnr(ge) => {
            for (name, p) in
                [("good", ge.bit_error_good), ("bad", ge.bit_error_bad)]
            {
                if !(0.0..1.0).contains(&p) {
                    return Err(SimError::InvalidScenario(format!(
                        "{name}-state bit error probability {p} outside [0, 1)"
                    )));
                }
            }
            if ge.mean_sojourn_good_us <= 0.0 || ge.mean_sojourn_bad_us <= 0.0 {
                return Err(SimError::InvalidScenario("sojourn times must be positive".into()));
            }
        }
        Pathology::Congestion(c) => {
            if !(c.utilization > 0.0 && c.utilization < 1.0) {
                return Err(SimError::InvalidScenario(format!(
                    "utilization {} outside (0, 1)",
                    c.utilization
                )));
            }
        }
        Pathology::HiddenNode(h) => {
            if h.mean_gap_us <= 0.0 || h.burst_us <= 0 || h.mean_backoff_us < 0.0 {
                return Err(SimError::InvalidScenario("hidden-node parameters must be positive".into()));
            }
        }
    }
    match &scenario.adapter {
        RateAdapter::Fixed(_) => {}
        RateAdapter::Sticky(pool) => {
            if pool.is_empty() {
                return Err(SimError::InvalidScenario("sticky rate pool is empty".into()));
            }
        }
        RateAdapter::Sampler { probe_rates, p_probe, .. } => {
            if probe_rates.is_empty() {
                return Err(SimError::InvalidScenario("sampler probe rate set is empty".into()));
            }
            if !(0.0..=1.0).contains(p_probe) {
                return Err(SimError::InvalidScenario(format!(
                    "p_probe {p_probe} outside [0, 1]"
                )));
            }
        }
    }
    Ok(())
}

/// Next lower standard rate, `steps` below `rate` (saturating at the lowest).
fn step_down(rate_set: &[RateKbps], rate: RateKbps, steps: u32) -> RateKbps {
    let mut sorted = rate_set.to_vec();
    sorted.sort();
    let idx = sorted.iter().position(|&r| r >= rate).unwrap_or(0);
    sorted[idx.saturating_sub(steps as usize)]
}

/// Runs the scenario over the schedule. Deterministic in the scenario seed
/// and the schedule seed; same inputs give identical outputs.
pub fn simulate(
    schedule: &ProbeSchedule,
    scenario: &Scenario,
    channel: &ChannelModel,
) -> Result<(Trace, GroundTruth), SimError> {
    validate_scenario(scenario)?;
    let plans = build_schedule(schedule)?;
    // Distinct stream from the schedule layout even when seeds coincide.
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.rng_seed ^ 0x6a09_e667_f3bc_c908);

    let mut ge = match &scenario.pathology {
        Pathology::LowSnr(p) => Some(GeState {
            params: p.clone(),
            bad: false,
            next_flip_us: exp_draw(p.mean_sojourn_good_us, &mut rng),
        }),
        _ => None,
    };
    let mut hidden = match &scenario.pathology {
        Pathology::HiddenNode(p) => Some(HiddenState {
            burst_start_us: exp_draw(p.mean_gap_us, &mut rng) as i64,
            params: p.clone(),
        }),
        _ => None,
    };
    let contender = match &scenario.pathology {
        Pathology::Congestion(c) => Some(c.clone()),
        _ => None,
    };

    let meta =
        TraceMeta { trains: schedule.n_trains, packets_per_train: schedule.packets_per_train };
    let mut trace = Trace::new(meta);
    let mut truth = GroundTruth {
        scenario: scenario.kind.label().to_string(),
        seed: scenario.rng_seed,
        packets: Vec::with_capacity(schedule.total_packets() as usize),
    };

    let gap_us = (schedule.inter_train_gap_s * 1e6) as i64;
    let mut train_start_us = 0i64;
    let mut prev_done_us = 0i64;

    for (train_idx, plan) in plans.iter().enumerate() {
        let train_rate = match &scenario.adapter {
            RateAdapter::Sticky(pool) => Some(pool[rng.gen_range(0..pool.len())]),
            _ => None,
        };
        for (seq, spec) in plan.iter().enumerate() {
            let send_us = train_start_us + seq as i64 * SEND_SPACING_US;
            let first_rate = match &scenario.adapter {
                RateAdapter::Fixed(r) => *r,
                RateAdapter::Sticky(_) => train_rate.unwrap(),
                RateAdapter::Sampler { base, probe_rates, p_probe } => {
                    if rng.gen_bool(*p_probe) {
                        probe_rates[rng.gen_range(0..probe_rates.len())]
                    } else {
                        *base
                    }
                }
            };

            let bits = frame_bits(spec.size_ip(), channel.l2_overhead);
            let tx_first = first_rate.tx_us(bits);
            let start = send_us.max(prev_done_us);
            let wait_us = start - send_us;
            let fresh_arrival = send_us >= prev_done_us;

            let mut t = start;
            let mut cw = channel.cw_min;
            let mut backoffs = Vec::new();
            let mut cause = Cause::None;
            let mut delivered = None;
            let mut retries = 0u32;

            for attempt in 0..=channel.retry_limit {
                let attempt_rate = match &scenario.adapter {
                    RateAdapter::Sampler { .. } => {
                        step_down(&channel.rate_set, first_rate, attempt / 3)
                    }
                    _ => first_rate,
                };
                let tx = attempt_rate.tx_us(bits);

                if let Some(con) = &contender {
                    let frame = con.frame_us(channel.l2_overhead);
                    let burst = con.burst_frames() as i64;
                    let solo_util = frame as f64
                        / (frame + channel.difs_us + 8 * channel.slot_us) as f64;
                    if attempt == 0 && fresh_arrival && rng.gen_bool(solo_util) {
                        t += rng.gen_range(0..frame); // residual of the frame in flight
                    }
                    t += channel.difs_us;
                    let b = rng.gen_range(0..=cw);
                    backoffs.push((b, cw));
                    let mut remaining = b;
                    loop {
                        let c = rng.gen_range(0..=channel.cw_min);
                        if c <= remaining && remaining > 0 {
                            // Contender reaches zero first: probe counts
                            // down c slots, freezes through the burst,
                            // resumes after a DIFS.
                            t += c as i64 * channel.slot_us + burst * frame + channel.difs_us;
                            remaining -= c;
                        } else {
                            t += remaining as i64 * channel.slot_us;
                            break;
                        }
                    }
                } else {
                    t += channel.difs_us;
                    let b = rng.gen_range(0..=cw);
                    backoffs.push((b, cw));
                    t += b as i64 * channel.slot_us;
                }

                let tx_start = t;
                let tx_end = t + tx;
                let mut failed = false;
                if let Some(ge) = ge.as_mut() {
                    let p_fail = ge.attempt_error_prob(tx_start, tx_end, bits, &mut rng);
                    if rng.gen_bool(p_fail) {
                        failed = true;
                        cause = Cause::BitError;
                    }
                }
                if let Some(h) = hidden.as_mut() {
                    if h.collides(tx_start, tx_end, &mut rng) {
                        failed = true;
                        cause = Cause::Collision;
                    }
                }

                // SIFS + ACK on success; an equal ACK-timeout onf failure.
                t = tx_end + channel.sifs_us + channel.ack_us;

                if !failed {
                    delivered = Some(t);
                    retries = attempt;
                    break;
                }
                if attempt == channel.retry_limit {
                    retries = channel.retry_limit;
                } else {
                    cw = (2 * cw + 1).min(channel.cw_max);
                }
            }

            prev_done_us = t;
            let recv_us = delivered;
            let done = recv_us.unwrap_or(t);
            truth.packets.push(PacketTruth {
                train: train_idx as u32,
                seq: seq as u32,
                rate: first_rate,
                retries,
                wait_us,
                tx_us: tx_first,
                access_us: done - send_us - wait_us - tx_first,
                cause: if delivered.is_some() && retries == 0 { Cause::None } else { cause },
                backoffs,
            });
            trace.trains[train_idx].records.push(ProbeRecord {
                train: train_idx as u32,
                seq: seq as u32,
                size_ip: spec.size_ip(),
                tiny: spec.tiny,
                send_us,
                recv_us,
            });
        }
        train_start_us += schedule.packets_per_train as i64 * SEND_SPACING_US + gap_us;
    }
    Ok((trace, truth))
}

// ---------------------------------------------------------------------------
// Ground-truth persistence

pub const TRUTH_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TruthHeader {
    version: u32,
    scenario: String,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthLine {
    pub train: u32,
    pub seq: u32,
    pub rate_mbps: f64,
    pub retries: u32,
    pub access_us: i64,
    pub cause: String,
}

#[derive(Debug, Error)]
pub enum TruthError {
    #[error("malformed ground truth at line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("unsupported ground-truth schema version {found}")]
    SchemaVersionMismatch { found: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedTruth {
    pub scenario: String,
    pub seed: u64,
    pub lines: Vec<TruthLine>,
}

pub fn save_truth<W: std::io::Write>(truth: &GroundTruth, mut sink: W) -> Result<(), TruthError> {
    let header = TruthHeader {
        version: TRUTH_SCHEMA_VERSION,
        scenario: truth.scenario.clone(),
        seed: truth.seed,
    };
    writeln!(sink, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for p in &truth.packets {
        let line = TruthLine {
            train: p.train,
            seq: p.seq,
            rate_mbps: p.rate.as_mbps(),
            retries: p.retries,
            access_us: p.access_us,
            cause: p.cause.as_str().to_string(),
        };
        writeln!(sink, "{}", serde_json::to_string(&line).expect("line serializes"))?;
    }
    Ok(())
}

pub fn load_truth<R: std::io::BufRead>(source: R) -> Result<LoadedTruth, TruthError> {
    let mut lines = source.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or(TruthError::Malformed { line: 1, msg: "missing header line".into() })?;
    let header: TruthHeader = serde_json::from_str(&first?)
        .map_err(|e| TruthError::Malformed { line: 1, msg: format!("bad header: {e}") })?;
    if header.version != TRUTH_SCHEMA_VERSION {
        return Err(TruthError::SchemaVersionMismatch { found: header.version });
    }
    let mut out = LoadedTruth { scenario: header.scenario, seed: header.seed, lines: Vec::new() };
    for (idx, line) in lines {
        let parsed: TruthLine = serde_json::from_str(&line?)
            .map_err(|e| TruthError::Malformed { line: idx + 1, msg: e.to_string() })?;
        out.lines.push(parsed);
    }
    Ok(out)
}

pub fn load_truth_path(path: &std::path::Path) -> Result<LoadedTruth, TruthError> {
    let file = std::fs::File::open(path)?;
    load_truth(std::io::BufReader::new(file))
}
