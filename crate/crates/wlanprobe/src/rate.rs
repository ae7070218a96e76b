//! Per-packet first-transmission rate inference from receiver dispersions.
//!
//! For back-to-back packets the receiver-side dispersion of packet `i` is
//! its channel service time: first-transmission latency plus constant
//! framing latencies plus the variable busy-wait/backoff component. The
//! latter two are size-independent, so the median dispersion into
//! tiny-probes estimates them; subtracting it and dividing the frame size by
//! the remainder yields a raw rate estimate, which is snapped to the nearest
//! standard rate. Strong per-train temporal correlation of real rate
//! adaptation then justifies replacing every estimate with the train mode.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::median_f64;
use crate::trace::{Trace, Train, TINY_SIZE_IP};

/// An 802.11 transmission rate in kilobits per second.
///
/// Rates are kept in integer kbps so that equality, hashing and nearest-rate
/// ties are exact (5.5 Mbps = 5500 kbps).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct RateKbps(pub u32);

impl RateKbps {
    pub fn from_mbps(mbps: f64) -> Self {
        RateKbps((mbps * 1000.0).round() as u32)
    }

    pub fn as_mbps(self) -> f64 {
        self.0 as f64 / 1000.0
    }

    /// Transmission latency of `bits` at this rate, rounded to nearest µs.
    pub fn tx_us(self, bits: u64) -> i64 {
        let kbps = self.0 as u64;
        ((bits * 1000 + kbps / 2) / kbps) as i64
    }
}

impl std::fmt::Display for RateKbps {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} Mbps", self.as_mbps())
    }
}

/// 802.11b/g rate union, in Mbps: 1, 2, 5.5, 6, 9, 11, 12, 18, 24, 36, 48, 54.
pub fn default_rate_set() -> Vec<RateKbps> {
    [1_000, 2_000, 5_500, 6_000, 9_000, 11_000, 12_000, 18_000, 24_000, 36_000, 48_000, 54_000]
        .into_iter()
        .map(RateKbps)
        .collect()
}

/// Layer-2 framing bytes added on top of `size_ip`: MAC header 24, FCS 4,
/// LLC/SNAP 8.
pub const DEFAULT_L2_OVERHEAD: u32 = 36;

pub fn frame_bits(size_ip: u32, l2_overhead: u32) -> u64 {
    (size_ip + l2_overhead) as u64 * 8
}

#[derive(Debug, Error, PartialEq)]
pub enum RateError {
    #[error("train {0} has no usable tiny-probe pairs")]
    NoTinyPairs(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RateFlag {
    /// Unflagged: raw estimate considered trustworthy.
    Ok,
    Tiny,
    PredecessorLost,
    SubMinimum,
    /// Flagged in the first stage; final rate imputed from the train mode.
    Imputed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateEstimate {
    pub seq: u32,
    pub raw_mbps: Option<f64>,
    pub snapped: Option<RateKbps>,
    pub flag: RateFlag,
    pub final_rate: Option<RateKbps>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainRateStatus {
    Ok,
    TooNoisy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRateResult {
    pub train_id: u32,
    /// One estimate per received packet, in sequence order.
    pub estimates: Vec<RateEstimate>,
    pub mode: Option<RateKbps>,
    pub mode_fraction: f64,
    pub status: TrainRateStatus,
}

impl TrainRateResult {
    fn too_noisy(train_id: u32, estimates: Vec<RateEstimate>) -> Self {
        TrainRateResult {
            train_id,
            estimates,
            mode: None,
            mode_fraction: 0.0,
            status: TrainRateStatus::TooNoisy,
        }
    }

    /// Final rate for a given seq, if the train produced one.
    pub fn final_rate_for(&self, seq: u32) -> Option<RateKbps> {
        self.estimates.iter().find(|e| e.seq == seq).and_then(|e| e.final_rate)
    }
}

#[derive(Debug, Clone)]
pub struct RateConfig {
    pub l2_overhead: u32,
    pub rate_set: Vec<RateKbps>,
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig { l2_overhead: DEFAULT_L2_OVERHEAD, rate_set: default_rate_set() }
    }
}

/// Receiver-side dispersions, parallel to the train's records. `None` when
/// the packet or its predecessor was lost, and always for the first packet.
pub fn dispersions(train: &Train) -> Vec<Option<i64>> {
    train
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if i == 0 {
                return None;
            }
            match (train.records[i - 1].recv_us, r.recv_us) {
                (Some(prev), Some(curr)) => Some(curr - prev),
                _ => None,
            }
        })
        .collect()
}

/// Median dispersion over pairs whose second packet is a tiny-probe.
pub fn tiny_median_dispersion(train: &Train, disp: &[Option<i64>]) -> Result<f64, RateError> {
    let mut values: Vec<f64> = train
        .records
        .iter()
        .zip(disp)
        .filter(|(r, d)| r.tiny && d.is_some())
        .map(|(_, d)| d.unwrap() as f64)
        .collect();
    if values.is_empty() {
        return Err(RateError::NoTinyPairs(train.train_id));
    }
    Ok(median_f64(&mut values))
}

/// Raw rate estimation with flagging. Produces one estimate per received
/// packet; the first packet of a train has no dispersion and is flagged like
/// a packet with a lost predecessor.
pub fn estimate_raw_rates(
    train: &Train,
    disp: &[Option<i64>],
    delta_tiny: f64,
    cfg: &RateConfig,
) -> Vec<RateEstimate> {
    train
        .records
        .iter()
        .zip(disp)
        .filter(|(r, _)| !r.lost())
        .map(|(r, d)| {
            if r.tiny {
                return RateEstimate {
                    seq: r.seq,
                    raw_mbps: None,
                    snapped: None,
                    flag: RateFlag::Tiny,
                    final_rate: None,
                };
            }
            let Some(delta) = *d else {
                return RateEstimate {
                    seq: r.seq,
                    raw_mbps: None,
                    snapped: None,
                    flag: RateFlag::PredecessorLost,
                    final_rate: None,
                };
            };
            let denom = delta as f64 - delta_tiny;
            if denom <= 0.0 {
                return RateEstimate {
                    seq: r.seq,
                    raw_mbps: None,
                    snapped: None,
                    flag: RateFlag::SubMinimum,
                    final_rate: None,
                };
            }
            let raw = frame_bits(r.size_ip, cfg.l2_overhead) as f64 / denom;
            if raw < 1.0 {
                return RateEstimate {
                    seq: r.seq,
                    raw_mbps: Some(raw),
                    snapped: None,
                    flag: RateFlag::SubMinimum,
                    final_rate: None,
                };
            }
            RateEstimate {
                seq: r.seq,
                raw_mbps: Some(raw),
                snapped: Some(snap_to_standard(raw, &cfg.rate_set)),
                flag: RateFlag::Ok,
                final_rate: None,
            }
        })
        .collect()
}

/// Nearest standard rate; exact ties break toward the lower rate.
pub fn snap_to_standard(raw_mbps: f64, rate_set: &[RateKbps]) -> RateKbps {
    debug_assert!(!rate_set.is_empty());
    let raw_kbps = raw_mbps * 1000.0;
    let mut sorted: Vec<RateKbps> = rate_set.to_vec();
    sorted.sort();
    let mut best = sorted[0];
    let mut best_dist = (best.0 as f64 - raw_kbps).abs();
    for &rate in &sorted[1..] {
        let dist = (rate.0 as f64 - raw_kbps).abs();
        if dist < best_dist {
            best = rate;
            best_dist = dist;
        }
    }
    best
}

/// Mode correction: replaces every final rate with the train mode, or
/// rejects the train when the mode covers less than 30% of the unflagged
/// estimates (exactly 30% passes).
pub fn mode_correct(train_id: u32, mut estimates: Vec<RateEstimate>) -> TrainRateResult {
    let mut counts: BTreeMap<RateKbps, usize> = BTreeMap::new();
    let mut unflagged = 0usize;
    for e in &estimates {
        if e.flag == RateFlag::Ok {
            unflagged += 1;
            *counts.entry(e.snapped.expect("unflagged estimates are snapped")).or_insert(0) += 1;
        }
    }
    if unflagged == 0 {
        return TrainRateResult::too_noisy(train_id, estimates);
    }
    // BTreeMap iteration is ascending, so ties settle on the lower rate.
    let (&mode, &mode_count) =
        counts.iter().max_by_key(|&(rate, count)| (*count, std::cmp::Reverse(*rate))).unwrap();
    if 10 * mode_count < 3 * unflagged {
        return TrainRateResult::too_noisy(train_id, estimates);
    }
    for e in &mut estimates {
        e.final_rate = Some(mode);
        if e.flag != RateFlag::Ok {
            e.flag = RateFlag::Imputed;
        }
    }
    TrainRateResult {
        train_id,
        estimates,
        mode: Some(mode),
        mode_fraction: mode_count as f64 / unflagged as f64,
        status: TrainRateStatus::Ok,
    }
}

/// Second pass: subtract the tiny-probes' own (now estimable) transmission
/// latency from their dispersions, recompute the median and rerun the
/// estimation once. If the revision degrades the train to too-noisy, the
/// first pass stands.
pub fn revise_tiny_and_rerun(
    train: &Train,
    disp: &[Option<i64>],
    first: TrainRateResult,
    cfg: &RateConfig,
) -> TrainRateResult {
    let Some(mode) = first.mode else { return first };
    let correction = frame_bits(TINY_SIZE_IP, cfg.l2_overhead) as f64 / mode.as_mbps();
    let mut values: Vec<f64> = train
        .records
        .iter()
        .zip(disp)
        .filter(|(r, d)| r.tiny && d.is_some())
        .map(|(_, d)| d.unwrap() as f64 - correction)
        .collect();
    if values.is_empty() {
        return first;
    }
    let revised_tiny = median_f64(&mut values);
    let estimates = estimate_raw_rates(train, disp, revised_tiny, cfg);
    let second = mode_correct(train.train_id, estimates);
    match second.status {
        TrainRateStatus::Ok => second,
        TrainRateStatus::TooNoisy => first,
    }
}

/// Full per-train pipeline: tiny median, raw estimation, mode correction,
/// one tiny revision.
pub fn infer_train_rates(train: &Train, cfg: &RateConfig) -> TrainRateResult {
    let disp = dispersions(train);
    let Ok(delta_tiny) = tiny_median_dispersion(train, &disp) else {
        return TrainRateResult::too_noisy(train.train_id, Vec::new());
    };
    let estimates = estimate_raw_rates(train, &disp, delta_tiny, cfg);
    let first = mode_correct(train.train_id, estimates);
    match first.status {
        TrainRateStatus::Ok => revise_tiny_and_rerun(train, &disp, first, cfg),
        TrainRateStatus::TooNoisy => first,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentStatus {
    Ok,
    /// Strictly more than half the trains were too noisy: the rate adapter
    /// shows no usable temporal correlation, diagnosis stops.
    Abort,
}

#[derive(Debug, Clone)]
pub struct ExperimentRates {
    pub trains: Vec<TrainRateResult>,
    pub status: ExperimentStatus,
}

pub fn infer_experiment_rates(trace: &Trace, cfg: &RateConfig) -> ExperimentRates {
    let trains: Vec<TrainRateResult> =
        trace.trains.iter().map(|t| infer_train_rates(t, cfg)).collect();
    let noisy = trains.iter().filter(|t| t.status == TrainRateStatus::TooNoisy).count();
    let status = if 2 * noisy > trains.len() {
        ExperimentStatus::Abort
    } else {
        ExperimentStatus::Ok
    };
    ExperimentRates { trains, status }
}
