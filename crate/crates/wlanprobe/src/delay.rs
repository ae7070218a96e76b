//! Wireless access delay: the part of a packet's one-way delay left after
//! removing the sender-queue wait and the first transmission's latency.
//!
//! The access delay collects busy-wait, backoff, retransmissions and the
//! constant framing latencies: exactly the components that separate link
//! pathologies. It is computed from relative OWDs, so values are shifted by
//! each train's minimum OWD; all downstream statistics are shift-tolerant.

use serde::Serialize;

use crate::rate::{frame_bits, ExperimentRates, RateKbps, TrainRateStatus};
use crate::trace::{OwdSeries, Trace};

/// Per-packet access-delay record. `w_us`/`a_us` are `None` when the packet
/// is unusable (lost predecessor, or no rate available for its train).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AccessDelayRecord {
    pub train: u32,
    pub seq: u32,
    pub size_ip: u32,
    pub w_us: Option<i64>,
    pub tx_us: i64,
    pub a_us: Option<i64>,
    pub usable: bool,
}

/// Sender-queue wait before packet i reaches the head of the FCFS queue:
/// `max(d_prev - gap, 0)`.
pub fn wait_time(d_prev_us: i64, gap_us: i64) -> i64 {
    (d_prev_us - gap_us).max(0)
}

/// Transmission latency of an IP packet at a given layer-2 rate, µs.
pub fn tx_latency_us(size_ip: u32, rate: RateKbps, l2_overhead: u32) -> i64 {
    rate.tx_us(frame_bits(size_ip, l2_overhead))
}

/// Access delay `a = d - w - tx`. May be slightly negative when the rate is
/// overcorrected; values are preserved unclamped so percentile statistics
/// stay unbiased.
pub fn access_delay(d_us: i64, w_us: i64, size_ip: u32, rate: RateKbps, l2_overhead: u32) -> i64 {
    d_us - w_us - tx_latency_us(size_ip, rate, l2_overhead)
}

/// Assembles access-delay records for every received packet of every train
/// whose rate inference succeeded.
///
/// The first packet of each train uses `w = 0`: the inter-train idle time
/// guarantees an empty sender queue at train start. A packet whose
/// predecessor was lost has no wait estimate and is marked unusable.
/// Tiny-probes are included; their rate is the train mode.
pub fn compute_access_delays(
    trace: &Trace,
    owds: &[Option<OwdSeries>],
    rates: &ExperimentRates,
    l2_overhead: u32,
) -> Vec<AccessDelayRecord> {
    let mut out = Vec::new();
    for (train, (owd, rate_result)) in
        trace.trains.iter().zip(owds.iter().zip(&rates.trains))
    {
        if rate_result.status != TrainRateStatus::Ok {
            continue;
        }
        let Some(owd) = owd else { continue };
        for (i, record) in train.records.iter().enumerate() {
            let Some(d) = owd.d_us[i] else { continue };
            let Some(rate) = rate_result.final_rate_for(record.seq) else { continue };
            let tx = tx_latency_us(record.size_ip, rate, l2_overhead);
            let w = if i == 0 {
                Some(0)
            } else {
                owd.d_us[i - 1].map(|d_prev| wait_time(d_prev, owd.gap_us[i]))
            };
            let a = w.map(|w| d - w - tx);
            out.push(AccessDelayRecord {
                train: train.train_id,
                seq: record.seq,
                size_ip: record.size_ip,
                w_us: w,
                tx_us: tx,
                a_us: a,
                usable: a.is_some(),
            });
        }
    }
    out
}
