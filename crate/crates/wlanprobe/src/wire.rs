//! Probe wire format and the UDP sender/receiver pair.
//!
//! Each datagram carries an 8-byte header (big-endian u32 experiment-wide
//! sequence number, then big-endian u32 send timestamp in microseconds on
//! the sender's monotonic clock, modulo 2^32) followed by zero padding to the
//! scheduled payload size. The sequence number is global
//! (`train * packets_per_train + seq`) so a received datagram maps to
//! exactly one scheduled slot.
//!
//! The sender's own log keeps full 64-bit timestamps; the wire field lets a
//! standalone receiver assemble a trace without it, accepting a ~71-minute
//! wraparound horizon.

use std::net::{SocketAddr, UdpSocket};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::schedule::{build_schedule, PacketSpec, ProbeSchedule};
use crate::trace::{ProbeRecord, Trace, TraceMeta, UDP_IP_HEADER_BYTES};

pub const PROBE_HEADER_BYTES: usize = 8;
pub const DEFAULT_PORT: u16 = 9802;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("datagram too short: {0} bytes (need at least {PROBE_HEADER_BYTES})")]
    ShortDatagram(usize),
    #[error("encode size {total} below header size {PROBE_HEADER_BYTES}")]
    EncodeTooSmall { total: usize },
    #[error("failed to bind {addr}: {source}")]
    BindFailure { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Schedule(#[from] crate::schedule::ScheduleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Decoded probe header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbePayload {
    pub seq: u32,
    pub send_ts: u32,
}

pub fn encode_probe(payload: ProbePayload, total_size: usize) -> Result<Vec<u8>, WireError> {
    if total_size < PROBE_HEADER_BYTES {
        return Err(WireError::EncodeTooSmall { total: total_size });
    }
    let mut buf = vec![0u8; total_size];
    buf[..4].copy_from_slice(&payload.seq.to_be_bytes());
    buf[4..8].copy_from_slice(&payload.send_ts.to_be_bytes());
    Ok(buf)
}

/// Parses the 8-byte header; padding beyond it is ignored.
pub fn decode_probe(data: &[u8]) -> Result<ProbePayload, WireError> {
    if data.len() < PROBE_HEADER_BYTES {
        return Err(WireError::ShortDatagram(data.len()));
    }
    let seq = u32::from_be_bytes(data[..4].try_into().expect("4 bytes"));
    let send_ts = u32::from_be_bytes(data[4..8].try_into().expect("4 bytes"));
    Ok(ProbePayload { seq, send_ts })
}

/// Sender-side record of one transmitted probe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentProbe {
    pub train: u32,
    pub seq: u32,
    pub size_ip: u32,
    pub tiny: bool,
    /// Full-resolution send timestamp, microseconds since sender start.
    pub send_us: i64,
}

#[derive(Debug, Default)]
pub struct SendLog {
    pub probes: Vec<SentProbe>,
}

/// Sends every scheduled train back-to-back over UDP.
///
/// Packets within a train go out in a tight loop with no deliberate pacing;
/// the sender sleeps `inter_train_gap_s` between trains. Timestamps are
/// taken immediately before each send. Losses are the receiver's problem:
/// there is no acknowledgment or retransmission at this layer.
pub fn run_sender(schedule: &ProbeSchedule, dest: SocketAddr) -> Result<SendLog, WireError> {
    let trains = build_schedule(schedule)?;
    // Unconnected socket: ICMP port-unreachable must not abort the run when
    // no receiver is listening (losses are signal, not failure).
    let socket = UdpSocket::bind(local_any(dest))?;
    let epoch = Instant::now();
    let mut log = SendLog::default();
    let gap = Duration::from_secs_f64(schedule.inter_train_gap_s);

    for (train_idx, train) in trains.iter().enumerate() {
        if train_idx > 0 {
            std::thread::sleep(gap);
        }
        for (seq, spec) in train.iter().enumerate() {
            let global_seq = train_idx as u32 * schedule.packets_per_train + seq as u32;
            let send_us = micros_since(epoch);
            let payload = ProbePayload { seq: global_seq, send_ts: send_us as u32 };
            let buf = encode_probe(payload, spec.payload as usize)?;
            socket.send_to(&buf, dest)?;
            log.probes.push(SentProbe {
                train: train_idx as u32,
                seq: seq as u32,
                size_ip: spec.size_ip(),
                tiny: spec.tiny,
                send_us,
            });
        }
    }
    Ok(log)
}

fn local_any(dest: SocketAddr) -> SocketAddr {
    if dest.is_ipv4() { "0.0.0.0:0".parse().unwrap() } else { "[::]:0".parse().unwrap() }
}

fn micros_since(epoch: Instant) -> i64 {
    epoch.elapsed().as_micros() as i64
}

/// Receiver half of the probing pair. Bind first, then start the sender.
pub struct ProbeReceiver {
    socket: UdpSocket,
    schedule: ProbeSchedule,
    expected: Vec<Vec<PacketSpec>>,
}

impl ProbeReceiver {
    pub fn bind(listen: SocketAddr, schedule: ProbeSchedule) -> Result<Self, WireError> {
        let socket = UdpSocket::bind(listen)
            .map_err(|source| WireError::BindFailure { addr: listen, source })?;
        let expected = build_schedule(&schedule)?;
        Ok(ProbeReceiver { socket, schedule, expected })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.socket.local_addr()
    }

    /// Collects datagrams until the whole schedule arrived or the link has
    /// been idle for `idle_timeout`, then assembles the trace.
    ///
    /// Receive timestamps are taken immediately after each `recv`. Send
    /// timestamps come from the wire header; for lost packets (which carried
    /// theirs with them) the previous observed value is carried forward so
    /// the trace stays monotone. Unreceived slots are marked lost.
    pub fn run(self, idle_timeout: Duration) -> Result<Trace, WireError> {
        let total = self.schedule.total_packets() as usize;
        let ppt = self.schedule.packets_per_train;
        let mut slots: Vec<Option<(i64, u32, usize)>> = vec![None; total];
        let mut received = 0usize;

        self.socket.set_read_timeout(Some(Duration::from_millis(100)))?;
        let epoch = Instant::now();
        let mut last_activity = Instant::now();
        let mut buf = [0u8; 65535];
        while received < total {
            match self.socket.recv(&mut buf) {
                Ok(len) => {
                    let recv_us = micros_since(epoch);
                    last_activity = Instant::now();
                    let Ok(payload) = decode_probe(&buf[..len]) else { continue };
                    let idx = payload.seq as usize;
                    if idx >= total {
                        continue; // stray datagram from another run
                    }
                    // First arrival wins; UDP may duplicate.
                    if slots[idx].is_none() {
                        slots[idx] = Some((recv_us, payload.send_ts, len));
                        received += 1;
                    }
                }
                Err(e)
                    if e.kind() == std::io::ErrorKind::WouldBlock
                        || e.kind() == std::io::ErrorKind::TimedOut =>
                {
                    if last_activity.elapsed() >= idle_timeout {
                        break;
                    }
                }
                Err(e) => return Err(e.into()),
            }
        }

        let meta =
            TraceMeta { trains: self.schedule.n_trains, packets_per_train: ppt };
        let mut trace = Trace::new(meta);
        let mut last_send_us = 0i64;
        for (idx, slot) in slots.iter().enumerate() {
            let train = idx as u32 / ppt;
            let seq = idx as u32 % ppt;
            let spec = self.expected[train as usize][seq as usize];
            let record = match slot {
                Some((recv_us, wire_ts, len)) => {
                    last_send_us = *wire_ts as i64;
                    ProbeRecord {
                        train,
                        seq,
                        size_ip: *len as u32 + UDP_IP_HEADER_BYTES,
                        tiny: spec.tiny,
                        send_us: *wire_ts as i64,
                        recv_us: Some(*recv_us),
                    }
                }
                None => ProbeRecord {
                    train,
                    seq,
                    size_ip: spec.size_ip(),
                    tiny: spec.tiny,
                    send_us: last_send_us,
                    recv_us: None,
                },
            };
            trace.trains[train as usize].records.push(record);
        }
        Ok(trace)
    }
}
