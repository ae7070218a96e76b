//! Probe records, trains, traces, persistence and clock-skew compensation.
//!
//! A [`Trace`] is the unit of diagnosis: an ordered list of [`Train`]s, each
//! holding the per-packet send/receive timestamps gathered by the prober (or
//! the simulator). Sender and receiver clocks are unsynchronized; only
//! *relative* one-way delays are meaningful, obtained per train by
//! subtracting the minimum OWD observed in that train ([`relative_owd`]).

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// UDP + IPv4 header bytes included in `size_ip` on top of the UDP payload.
pub const UDP_IP_HEADER_BYTES: u32 = 28;
/// Payload size of a tiny-probe: sequence number plus send timestamp.
pub const TINY_PAYLOAD_BYTES: u32 = 8;
/// `size_ip` of a tiny-probe.
pub const TINY_SIZE_IP: u32 = TINY_PAYLOAD_BYTES + UDP_IP_HEADER_BYTES;

/// Current trace file schema version.
pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// Upper bound on `trains * packets_per_train` accepted from a trace
/// header. Headers are untrusted input; without a cap a crafted header
/// forces a huge allocation before any record is read.
pub const MAX_TRACE_PACKETS: u64 = 50_000_000;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("train {0} has no received packets")]
    EmptyTrain(u32),
    #[error("malformed trace at line {line}: {msg}")]
    MalformedTrace { line: usize, msg: String },
    #[error("unsupported trace schema version {found} (expected {TRACE_SCHEMA_VERSION})")]
    SchemaVersionMismatch { found: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One probing packet as recorded on the wire.
///
/// `recv_us` is `None` when the packet never reached the receiver; such
/// packets count as layer-3 losses. Timestamps are integer microseconds on
/// the respective host clocks, which are offset but assumed drift-free over
/// a single train.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub train: u32,
    pub seq: u32,
    /// UDP payload plus UDP/IP headers, in bytes.
    pub size_ip: u32,
    pub tiny: bool,
    pub send_us: i64,
    pub recv_us: Option<i64>,
}

impl ProbeRecord {
    pub fn lost(&self) -> bool {
        self.recv_us.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Train {
    pub train_id: u32,
    pub records: Vec<ProbeRecord>,
}

impl Train {
    pub fn received_count(&self) -> usize {
        self.records.iter().filter(|r| !r.lost()).count()
    }
}

/// Probing direction. Only client-to-server probing is supported: the wired
/// server sits behind the AP and never replies, so reverse-path effects do
/// not contaminate the measurements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Direction {
    #[default]
    ClientToServer,
}

/// Schedule facts carried in the trace header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub trains: u32,
    pub packets_per_train: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub meta: TraceMeta,
    pub trains: Vec<Train>,
    pub direction: Direction,
}

impl Trace {
    pub fn new(meta: TraceMeta) -> Self {
        let trains = (0..meta.trains)
            .map(|train_id| Train { train_id, records: Vec::new() })
            .collect();
        Trace { meta, trains, direction: Direction::ClientToServer }
    }

    pub fn record_count(&self) -> usize {
        self.trains.iter().map(|t| t.records.len()).sum()
    }

    pub fn loss_count(&self) -> usize {
        self.trains
            .iter()
            .map(|t| t.records.iter().filter(|r| r.lost()).count())
            .sum()
    }
}

/// Per-train relative one-way delays and send-side gaps.
///
/// Entries are parallel to the train's record list. `d_us[i]` is `None` for
/// lost packets; the minimum over received packets is exactly 0 by
/// construction. `gap_us[0]` is 0: the first packet of a train has no
/// predecessor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OwdSeries {
    pub d_us: Vec<Option<i64>>,
    pub gap_us: Vec<i64>,
}

/// Compensates clock skew by subtracting the train's minimum raw OWD.
///
/// Fails with [`TraceError::EmptyTrain`] when no packet of the train was
/// received; such trains still contribute loss statistics elsewhere but
/// carry no delay information.
pub fn relative_owd(train: &Train) -> Result<OwdSeries, TraceError> {
    let raw: Vec<Option<i64>> = train
        .records
        .iter()
        .map(|r| r.recv_us.map(|recv| recv - r.send_us))
        .collect();
    let min = raw
        .iter()
        .flatten()
        .min()
        .copied()
        .ok_or(TraceError::EmptyTrain(train.train_id))?;
    let d_us = raw.iter().map(|o| o.map(|v| v - min)).collect();
    let gap_us = train
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| if i == 0 { 0 } else { r.send_us - train.records[i - 1].send_us })
        .collect();
    Ok(OwdSeries { d_us, gap_us })
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    trains: u32,
    packets_per_train: u32,
}

/// Writes a trace as JSON Lines: one header line, then one record per line
/// in (train, seq) order. UTF-8, LF line endings.
pub fn save_trace<W: Write>(trace: &Trace, mut sink: W) -> Result<(), TraceError> {
    let header = Header {
        version: TRACE_SCHEMA_VERSION,
        trains: trace.meta.trains,
        packets_per_train: trace.meta.packets_per_train,
    };
    writeln!(sink, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for train in &trace.trains {
        for record in &train.records {
            writeln!(sink, "{}", serde_json::to_string(record).expect("record serializes"))?;
        }
    }
    Ok(())
}

/// Parses a trace written by [`save_trace`].
///
/// Structural problems (bad JSON, out-of-range train/seq, duplicates) are
/// [`TraceError::MalformedTrace`] with the offending line number. Invariant
/// violations (wrong train lengths, missing tiny-probes, ...) are *not*
/// load errors; run [`validate_trace`] to enumerate them.
pub fn load_trace<R: BufRead>(source: R) -> Result<Trace, TraceError> {
    let mut lines = source.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or(TraceError::MalformedTrace { line: 1, msg: "missing header line".into() })?;
    let header: Header = serde_json::from_str(&first?)
        .map_err(|e| TraceError::MalformedTrace { line: 1, msg: format!("bad header: {e}") })?;
    if header.version != TRACE_SCHEMA_VERSION {
        return Err(TraceError::SchemaVersionMismatch { found: header.version });
    }
    if header.trains as u64 * header.packets_per_train as u64 > MAX_TRACE_PACKETS {
        return Err(TraceError::MalformedTrace {
            line: 1,
            msg: format!(
                "header declares {} x {} packets, above the {MAX_TRACE_PACKETS} limit",
                header.trains, header.packets_per_train
            ),
        });
    }

    let meta = TraceMeta { trains: header.trains, packets_per_train: header.packets_per_train };
    let mut trace = Trace::new(meta);
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let record: ProbeRecord = serde_json::from_str(&line?)
            .map_err(|e| TraceError::MalformedTrace { line: line_no, msg: e.to_string() })?;
        if record.train >= meta.trains {
            return Err(TraceError::MalformedTrace {
                line: line_no,
                msg: format!("train {} out of range (header declares {})", record.train, meta.trains),
            });
        }
        if record.seq >= meta.packets_per_train {
            return Err(TraceError::MalformedTrace {
                line: line_no,
                msg: format!(
                    "seq {} out of range (header declares {} packets per train)",
                    record.seq, meta.packets_per_train
                ),
            });
        }
        if !seen.insert((record.train, record.seq)) {
            return Err(TraceError::MalformedTrace {
                line: line_no,
                msg: format!("duplicate record for train {} seq {}", record.train, record.seq),
            });
        }
        trace.trains[record.train as usize].records.push(record);
    }
    for train in &mut trace.trains {
        train.records.sort_by_key(|r| r.seq);
    }
    Ok(trace)
}

pub fn load_trace_path(path: &Path) -> Result<Trace, TraceError> {
    let file = std::fs::File::open(path)?;
    load_trace(std::io::BufReader::new(file))
}

pub fn save_trace_path(trace: &Trace, path: &Path) -> Result<(), TraceError> {
    let file = std::fs::File::create(path)?;
    save_trace(trace, std::io::BufWriter::new(file))
}

/// One invariant violation found by [`validate_trace`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    TrainCount { expected: u32, found: u32 },
    TrainIdMismatch { index: u32, found: u32 },
    TrainLength { train: u32, expected: u32, found: u32 },
    NoTinyProbe { train: u32 },
    NonIncreasingSeq { train: u32, seq: u32 },
    DecreasingSendTs { train: u32, seq: u32 },
    TinySizeMismatch { train: u32, seq: u32, size_ip: u32 },
    SizeBelowHeaders { train: u32, seq: u32, size_ip: u32 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::TrainCount { expected, found } => {
                write!(f, "trace has {found} trains, header declares {expected}")
            }
            Violation::TrainIdMismatch { index, found } => {
                write!(f, "train at position {index} has id {found} (ids must be dense from 0)")
            }
            Violation::TrainLength { train, expected, found } => {
                write!(f, "train {train} length {found} != {expected}")
            }
            Violation::NoTinyProbe { train } => write!(f, "train {train} has no tiny-probe"),
            Violation::NonIncreasingSeq { train, seq } => {
                write!(f, "train {train}: seq {seq} not strictly increasing")
            }
            Violation::DecreasingSendTs { train, seq } => {
                write!(f, "train {train} seq {seq}: send timestamp decreases")
            }
            Violation::TinySizeMismatch { train, seq, size_ip } => {
                write!(f, "train {train} seq {seq}: tiny flag inconsistent with size_ip {size_ip}")
            }
            Violation::SizeBelowHeaders { train, seq, size_ip } => {
                write!(f, "train {train} seq {seq}: size_ip {size_ip} below header size")
            }
        }
    }
}

#[derive(Debug, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every structural invariant without mutating the trace.
pub fn validate_trace(trace: &Trace) -> ValidationReport {
    let mut report = ValidationReport::default();
    if trace.trains.len() != trace.meta.trains as usize {
        report.violations.push(Violation::TrainCount {
            expected: trace.meta.trains,
            found: trace.trains.len() as u32,
        });
    }
    for (index, train) in trace.trains.iter().enumerate() {
        let id = train.train_id;
        if id != index as u32 {
            report.violations.push(Violation::TrainIdMismatch { index: index as u32, found: id });
        }
        if train.records.len() != trace.meta.packets_per_train as usize {
            report.violations.push(Violation::TrainLength {
                train: id,
                expected: trace.meta.packets_per_train,
                found: train.records.len() as u32,
            });
        }
        if !train.records.iter().any(|r| r.tiny) {
            report.violations.push(Violation::NoTinyProbe { train: id });
        }
        for (i, record) in train.records.iter().enumerate() {
            if i > 0 {
                let prev = &train.records[i - 1];
                if record.seq <= prev.seq {
                    report
                        .violations
                        .push(Violation::NonIncreasingSeq { train: id, seq: record.seq });
                }
                if record.send_us < prev.send_us {
                    report
                        .violations
                        .push(Violation::DecreasingSendTs { train: id, seq: record.seq });
                }
            }
            if record.size_ip < TINY_SIZE_IP {
                report.violations.push(Violation::SizeBelowHeaders {
                    train: id,
                    seq: record.seq,
                    size_ip: record.size_ip,
                });
            } else if record.tiny != (record.size_ip == TINY_SIZE_IP) {
                report.violations.push(Violation::TinySizeMismatch {
                    train: id,
                    seq: record.seq,
                    size_ip: record.size_ip,
                });
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn train_from_owds(owds: &[Option<i64>]) -> Train {
        let records = owds
            .iter()
            .enumerate()
            .map(|(i, owd)| ProbeRecord {
                train: 0,
                seq: i as u32,
                size_ip: 236,
                tiny: false,
                send_us: 1000 * i as i64,
                recv_us: owd.map(|d| 1000 * i as i64 + d),
            })
            .collect();
        Train { train_id: 0, records }
    }

    #[test]
    fn relative_owd_subtracts_min() {
        let train = train_from_owds(&[Some(1100), Some(1000), Some(1500)]);
        let owd = relative_owd(&train).unwrap();
        assert_eq!(owd.d_us, vec![Some(100), Some(0), Some(500)]);
        assert_eq!(owd.gap_us, vec![0, 1000, 1000]);
    }

    #[test]
    fn relative_owd_constant_series() {
        let train = train_from_owds(&[Some(700), Some(700), Some(700)]);
        let owd = relative_owd(&train).unwrap();
        assert_eq!(owd.d_us, vec![Some(0), Some(0), Some(0)]);
    }

    #[test]
    fn relative_owd_min_over_received_subset() {
        let train = train_from_owds(&[Some(1000), None, Some(1300)]);
        let owd = relative_owd(&train).unwrap();
        assert_eq!(owd.d_us, vec![Some(0), None, Some(300)]);
    }

    #[test]
    fn relative_owd_empty_train() {
        let train = train_from_owds(&[None, None]);
        assert!(matches!(relative_owd(&train), Err(TraceError::EmptyTrain(0))));
    }

    fn sample_trace() -> Trace {
        let mut trace = Trace::new(TraceMeta { trains: 2, packets_per_train: 3 });
        for train_id in 0..2u32 {
            for seq in 0..3u32 {
                let tiny = seq == 1;
                trace.trains[train_id as usize].records.push(ProbeRecord {
                    train: train_id,
                    seq,
                    size_ip: if tiny { TINY_SIZE_IP } else { 436 },
                    tiny,
                    send_us: (train_id as i64) * 1_000_000 + (seq as i64) * 40,
                    recv_us: if train_id == 1 && seq == 2 {
                        None
                    } else {
                        Some((train_id as i64) * 1_000_000 + (seq as i64) * 40 + 800)
                    },
                });
            }
        }
        trace
    }

    #[test]
    fn round_trip_identity() {
        let trace = sample_trace();
        let mut buf = Vec::new();
        save_trace(&trace, &mut buf).unwrap();
        let loaded = load_trace(buf.as_slice()).unwrap();
        assert_eq!(loaded, trace);
    }

    #[test]
    fn round_trip_empty_trace() {
        let trace = Trace::new(TraceMeta { trains: 0, packets_per_train: 50 });
        let mut buf = Vec::new();
        save_trace(&trace, &mut buf).unwrap();
        let loaded = load_trace(buf.as_slice()).unwrap();
        assert_eq!(loaded, trace);
    }

    #[test]
    fn loss_marker_round_trips() {
        let trace = sample_trace();
        let mut buf = Vec::new();
        save_trace(&trace, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"recv_us\":null"));
        let loaded = load_trace(buf.as_slice()).unwrap();
        assert!(loaded.trains[1].records[2].lost());
    }

    #[test]
    fn load_rejects_bad_version() {
        let input = b"{\"version\":9,\"trains\":0,\"packets_per_train\":50}\n";
        assert!(matches!(
            load_trace(&input[..]),
            Err(TraceError::SchemaVersionMismatch { found: 9 })
        ));
    }

    #[test]
    fn load_rejects_oversized_header() {
        let input = b"{\"version\":1,\"trains\":4000000000,\"packets_per_train\":50000}\n";
        assert!(matches!(
            load_trace(&input[..]),
            Err(TraceError::MalformedTrace { line: 1, .. })
        ));
    }

    #[test]
    fn load_reports_line_numbers() {
        let input = b"{\"version\":1,\"trains\":1,\"packets_per_train\":2}\nnot json\n";
        match load_trace(&input[..]) {
            Err(TraceError::MalformedTrace { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected malformed trace, got {other:?}"),
        }
    }

    #[test]
    fn load_rejects_duplicates() {
        let input = concat!(
            "{\"version\":1,\"trains\":1,\"packets_per_train\":2}\n",
            "{\"train\":0,\"seq\":0,\"size_ip\":236,\"tiny\":false,\"send_us\":0,\"recv_us\":5}\n",
            "{\"train\":0,\"seq\":0,\"size_ip\":236,\"tiny\":false,\"send_us\":0,\"recv_us\":5}\n",
        );
        assert!(matches!(
            load_trace(input.as_bytes()),
            Err(TraceError::MalformedTrace { line: 3, .. })
        ));
    }

    #[test]
    fn validate_clean_trace() {
        let mut trace = sample_trace();
        trace.meta.packets_per_train = 3;
        assert!(validate_trace(&trace).is_clean());
    }

    #[test]
    fn validate_flags_short_train() {
        let mut trace = sample_trace();
        trace.trains[0].records.pop();
        let report = validate_trace(&trace);
        assert!(report
            .violations
            .contains(&Violation::TrainLength { train: 0, expected: 3, found: 2 }));
    }

    #[test]
    fn validate_flags_missing_tiny() {
        let mut trace = sample_trace();
        for r in &mut trace.trains[0].records {
            r.tiny = false;
            r.size_ip = 436;
        }
        let report = validate_trace(&trace);
        assert!(report.violations.contains(&Violation::NoTinyProbe { train: 0 }));
    }

    proptest! {
        #[test]
        fn prop_round_trip(trains in 0u32..4, ppt in 1u32..6, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut trace = Trace::new(TraceMeta { trains, packets_per_train: ppt });
            for train_id in 0..trains {
                let mut send = 0i64;
                for seq in 0..ppt {
                    send += rng.gen_range(0..500);
                    let tiny = rng.gen_bool(0.2);
                    trace.trains[train_id as usize].records.push(ProbeRecord {
                        train: train_id,
                        seq,
                        size_ip: if tiny { TINY_SIZE_IP } else { 236 + 200 * rng.gen_range(0..7) },
                        tiny,
                        send_us: send,
                        recv_us: rng.gen_bool(0.85).then(|| send + rng.gen_range(0..10_000)),
                    });
                }
            }
            let mut buf = Vec::new();
            save_trace(&trace, &mut buf).unwrap();
            let loaded = load_trace(buf.as_slice()).unwrap();
            prop_assert_eq!(loaded, trace);
        }

        #[test]
        fn prop_skew_compensation_idempotent(offset in -1_000_000i64..1_000_000, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let owds: Vec<Option<i64>> = (0..20)
                .map(|_| rng.gen_bool(0.8).then(|| rng.gen_range(500..50_000)))
                .collect();
            prop_assume!(owds.iter().any(Option::is_some));
            let base = train_from_owds(&owds);
            let mut shifted = base.clone();
            for r in &mut shifted.records {
                if let Some(recv) = r.recv_us.as_mut() {
                    *recv += offset;
                }
            }
            let a = relative_owd(&base).unwrap();
            let b = relative_owd(&shifted).unwrap();
            prop_assert_eq!(a.d_us, b.d_us);
            prop_assert_eq!(a.gap_us, b.gap_us);
        }

        #[test]
        fn prop_gaps_nonnegative(increments in proptest::collection::vec(0i64..5_000, 1..40)) {
            let mut send = 0;
            let records: Vec<ProbeRecord> = increments.iter().enumerate().map(|(i, inc)| {
                send += inc;
                ProbeRecord { train: 0, seq: i as u32, size_ip: 236, tiny: false, send_us: send, recv_us: Some(send + 100) }
            }).collect();
            let train = Train { train_id: 0, records };
            let owd = relative_owd(&train).unwrap();
            prop_assert!(owd.gap_us.iter().all(|g| *g >= 0));
        }
    }
}
