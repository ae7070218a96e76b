//! User-level diagnosis of 802.11 uplink pathologies from UDP probe trains.
//!
//! The toolkit sends trains of back-to-back UDP probes from a wireless client
//! to a wired server, measures relative one-way delays and dispersions at the
//! receiver, infers the per-packet layer-2 transmission rate, derives a
//! per-packet *wireless access delay*, and classifies the link condition as
//! congestion, low SNR, or symmetric hidden terminals.
//!
//! A seeded discrete-event simulator of a single DCF uplink ([`sim`])
//! produces traces with per-packet ground truth, so every stage of the
//! analysis can be verified against known channel conditions.
//!
//! Pipeline overview:
//!
//! ```text
//! trace ─▶ relative OWDs ─▶ rate inference ─▶ access delays ─▶ decision tree
//!            (per train)      (per train)       (per packet)    (experiment)
//! ```
//!
//! ```
//! use wlanprobe::diagnose::{diagnose_trace, DiagnoseConfig, Verdict};
//! use wlanprobe::schedule::ProbeSchedule;
//! use wlanprobe::sim::{scenario_preset, simulate, ChannelModel, Intensity, ScenarioKind};
//!
//! let schedule = ProbeSchedule { rng_seed: 7, ..Default::default() };
//! let scenario = scenario_preset(ScenarioKind::Sht, Intensity::Severe).with_seed(7);
//! let (trace, truth) = simulate(&schedule, &scenario, &ChannelModel::default()).unwrap();
//! assert_eq!(trace.record_count(), 5000);
//!
//! let diagnosis = diagnose_trace(&trace, &DiagnoseConfig::default());
//! assert_eq!(diagnosis.verdict, Verdict::SymmetricHt);
//! assert_eq!(truth.scenario, "sht");
//! ```

pub mod delay;
pub mod diagnose;
pub mod kendall;
pub mod rate;
pub mod report;
pub mod schedule;
pub mod sim;
pub mod stats;
pub mod trace;
pub mod wire;

pub use diagnose::{diagnose_trace, DiagnoseConfig, Diagnosis, Verdict};
pub use rate::RateKbps;
pub use schedule::ProbeSchedule;
pub use sim::{simulate, scenario_preset, Intensity, Scenario, ScenarioKind};
pub use trace::{ProbeRecord, Trace, Train};
