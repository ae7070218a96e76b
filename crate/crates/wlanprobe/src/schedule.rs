//! Probing schedule: which packets, what sizes, which ones are tiny.
//!
//! The schedule is materialized deterministically from its seed so that a
//! sender and a standalone receiver (or the simulator) can reconstruct the
//! identical per-packet layout without exchanging it.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::trace::{TINY_PAYLOAD_BYTES, UDP_IP_HEADER_BYTES};

/// Default UDP payload sizes for non-tiny probes, in bytes.
pub const DEFAULT_SIZE_SET: [u32; 7] = [208, 408, 608, 808, 1008, 1208, 1408];
/// Largest UDP payload that avoids IP fragmentation on a 1500-byte MTU.
pub const HT_PROFILE_PAYLOAD: u32 = 1472;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("invalid schedule config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSchedule {
    pub n_trains: u32,
    pub packets_per_train: u32,
    /// Fraction of each train sent as tiny-probes; the realized count per
    /// train is `round(tiny_fraction * packets_per_train)`, at least 1.
    pub tiny_fraction: f64,
    /// UDP payload sizes (bytes) for non-tiny probes, drawn uniformly.
    pub size_set: Vec<u32>,
    pub inter_train_gap_s: f64,
    pub rng_seed: u64,
}

impl Default for ProbeSchedule {
    fn default() -> Self {
        ProbeSchedule {
            n_trains: 100,
            packets_per_train: 50,
            tiny_fraction: 0.10,
            size_set: DEFAULT_SIZE_SET.to_vec(),
            inter_train_gap_s: 1.0,
            rng_seed: 0,
        }
    }
}

impl ProbeSchedule {
    /// Schedule variant for the hidden-terminal probing profile: every
    /// non-tiny payload is the largest unfragmented size.
    pub fn ht_profile(mut self) -> Self {
        self.size_set = vec![HT_PROFILE_PAYLOAD];
        self
    }

    pub fn total_packets(&self) -> u64 {
        self.n_trains as u64 * self.packets_per_train as u64
    }
}

/// One scheduled packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketSpec {
    /// UDP payload size in bytes.
    pub payload: u32,
    pub tiny: bool,
}

impl PacketSpec {
    pub fn size_ip(&self) -> u32 {
        self.payload + UDP_IP_HEADER_BYTES
    }
}

/// Per-train packet layouts, deterministic in `rng_seed`.
///
/// Tiny positions are a uniformly random subset of exactly
/// `round(tiny_fraction * packets_per_train)` slots (minimum 1, so every
/// train can anchor dispersion estimation); the remaining slots draw their
/// payload uniformly from `size_set`.
pub fn build_schedule(config: &ProbeSchedule) -> Result<Vec<Vec<PacketSpec>>, ScheduleError> {
    if config.size_set.is_empty() {
        return Err(ScheduleError::InvalidConfig("size_set is empty".into()));
    }
    if !(config.tiny_fraction > 0.0 && config.tiny_fraction < 1.0) {
        return Err(ScheduleError::InvalidConfig(format!(
            "tiny_fraction {} outside (0, 1)",
            config.tiny_fraction
        )));
    }
    if config.packets_per_train < 2 {
        return Err(ScheduleError::InvalidConfig("packets_per_train must be >= 2".into()));
    }
    if config.total_packets() > crate::trace::MAX_TRACE_PACKETS {
        return Err(ScheduleError::InvalidConfig(format!(
            "{} x {} packets exceeds the {} limit",
            config.n_trains,
            config.packets_per_train,
            crate::trace::MAX_TRACE_PACKETS
        )));
    }

    let ppt = config.packets_per_train as usize;
    let tiny_count =
        (((config.tiny_fraction * ppt as f64).round() as usize).max(1)).min(ppt - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut trains = Vec::with_capacity(config.n_trains as usize);
    let mut positions: Vec<usize> = (0..ppt).collect();
    for _ in 0..config.n_trains {
        let mut train = vec![PacketSpec { payload: TINY_PAYLOAD_BYTES, tiny: true }; ppt];
        positions.shuffle(&mut rng);
        let tiny_positions = &positions[..tiny_count];
        for (i, spec) in train.iter_mut().enumerate() {
            if !tiny_positions.contains(&i) {
                let payload = config.size_set[rng.gen_range(0..config.size_set.len())];
                *spec = PacketSpec { payload, tiny: false };
            }
        }
        trains.push(train);
    }
    Ok(trains)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_given_seed() {
        let config = ProbeSchedule { rng_seed: 7, ..Default::default() };
        let a = build_schedule(&config).unwrap();
        let b = build_schedule(&config).unwrap();
        assert_eq!(a, b);
        let other = build_schedule(&ProbeSchedule { rng_seed: 8, ..Default::default() }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn exactly_five_tiny_positions_per_train() {
        let config = ProbeSchedule::default();
        let trains = build_schedule(&config).unwrap();
        for train in &trains {
            assert_eq!(train.iter().filter(|p| p.tiny).count(), 5);
        }
    }

    #[test]
    fn tiny_count_never_zero() {
        let config = ProbeSchedule {
            packets_per_train: 10,
            tiny_fraction: 0.01,
            ..Default::default()
        };
        let trains = build_schedule(&config).unwrap();
        for train in &trains {
            assert_eq!(train.iter().filter(|p| p.tiny).count(), 1);
        }
    }

    #[test]
    fn size_histogram_near_uniform() {
        let config = ProbeSchedule { rng_seed: 42, ..Default::default() };
        let trains = build_schedule(&config).unwrap();
        let mut counts = std::collections::HashMap::new();
        let mut total = 0usize;
        for spec in trains.iter().flatten().filter(|p| !p.tiny) {
            *counts.entry(spec.payload).or_insert(0usize) += 1;
            total += 1;
        }
        assert_eq!(counts.len(), DEFAULT_SIZE_SET.len());
        let share = total as f64 / DEFAULT_SIZE_SET.len() as f64;
        for (&size, &count) in &counts {
            let ratio = count as f64 / share;
            assert!(
                (0.8..=1.2).contains(&ratio),
                "size {size} count {count} deviates more than 20% from uniform share {share}"
            );
        }
    }

    #[test]
    fn rejects_bad_config() {
        let empty = ProbeSchedule { size_set: vec![], ..Default::default() };
        assert!(build_schedule(&empty).is_err());
        let bad_fraction = ProbeSchedule { tiny_fraction: 1.0, ..Default::default() };
        assert!(build_schedule(&bad_fraction).is_err());
        let short = ProbeSchedule { packets_per_train: 1, ..Default::default() };
        assert!(build_schedule(&short).is_err());
    }

    #[test]
    fn ht_profile_uses_single_large_size() {
        let config = ProbeSchedule::default().ht_profile();
        let trains = build_schedule(&config).unwrap();
        for spec in trains.iter().flatten() {
            if !spec.tiny {
                assert_eq!(spec.payload, HT_PROFILE_PAYLOAD);
            }
        }
    }
}
