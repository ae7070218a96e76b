//! The decision tree over a completed trace.
//!
//! Stage one asks whether access delays grow with packet size, using a
//! one-sided Kendall trend test on the per-size 95th-percentile access
//! delays. Size-independent inflation is congestion. Size-dependent
//! pathologies are split by the temporal correlation of extreme events:
//! the conditional probability that the successor of an outlier-delay or
//! lost packet is itself delayed or lost, relative to the unconditional
//! probability of such events. Exogenous channel problems (low SNR, fading,
//! interference) persist across consecutive packets; colliding hidden
//! terminals back off instead.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delay::{compute_access_delays, AccessDelayRecord};
use crate::kendall::{kendall_trend_test, TrendDecision, TrendResult};
use crate::rate::{infer_experiment_rates, ExperimentRates, ExperimentStatus, RateConfig, TrainRateStatus};
use crate::stats::{nearest_rank_percentile, sample_std};
use crate::trace::{relative_owd, OwdSeries, Trace, TINY_SIZE_IP, UDP_IP_HEADER_BYTES};

#[derive(Debug, Error, PartialEq)]
pub enum DiagnoseError {
    #[error("only {sizes} packet sizes have enough usable samples (need at least {need})")]
    InsufficientData { sizes: usize, need: usize },
    #[error("no outlier-delay or loss events with an in-train successor")]
    NoTriggers,
    #[error("no usable access delays in the experiment")]
    NoUsableDelays,
}

/// Probing profile the trace was collected with.
///
/// The standard profile mixes seven packet sizes and runs the full tree.
/// The hidden-terminal profile sends only maximum-size packets (collisions
/// are most likely for those), so the size-trend stage is skipped and the
/// trace goes straight to the correlation classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Profile {
    #[default]
    Standard,
    Ht,
}

#[derive(Debug, Clone)]
pub struct DiagnoseConfig {
    pub alpha: f64,
    pub ratio_threshold: f64,
    /// Minimum usable samples per packet size before its percentile counts.
    pub min_samples: usize,
    pub rate: RateConfig,
    pub profile: Profile,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        DiagnoseConfig {
            alpha: 0.01,
            ratio_threshold: 4.0,
            min_samples: 30,
            rate: RateConfig::default(),
            profile: Profile::Standard,
        }
    }
}

pub const MIN_TREND_SIZES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Congestion,
    LowSnr,
    SymmetricHt,
    Aborted,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Verdict::Congestion => "congestion",
            Verdict::LowSnr => "low-snr",
            Verdict::SymmetricHt => "symmetric-ht",
            Verdict::Aborted => "aborted",
        };
        f.write_str(s)
    }
}

/// 95th-percentile access delay for one packet size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeDelayPair {
    /// UDP payload bytes (size_ip minus transport headers).
    pub payload: u32,
    pub p95_us: i64,
    pub samples: usize,
}

/// Per-size nearest-rank 95th percentiles over usable, non-tiny records.
/// Sizes with fewer than `min_samples` usable records are dropped; at least
/// [`MIN_TREND_SIZES`] must survive.
pub fn percentile95_by_size(
    records: &[AccessDelayRecord],
    min_samples: usize,
) -> Result<Vec<SizeDelayPair>, DiagnoseError> {
    let mut by_size: std::collections::BTreeMap<u32, Vec<i64>> = std::collections::BTreeMap::new();
    for r in records {
        if r.size_ip == TINY_SIZE_IP {
            continue;
        }
        if let Some(a) = r.a_us {
            by_size.entry(r.size_ip - UDP_IP_HEADER_BYTES).or_default().push(a);
        }
    }
    let pairs: Vec<SizeDelayPair> = by_size
        .into_iter()
        .filter(|(_, delays)| delays.len() >= min_samples)
        .map(|(payload, mut delays)| {
            delays.sort_unstable();
            SizeDelayPair {
                payload,
                p95_us: nearest_rank_percentile(&delays, 95.0),
                samples: delays.len(),
            }
        })
        .collect();
    if pairs.len() < MIN_TREND_SIZES {
        return Err(DiagnoseError::InsufficientData {
            sizes: pairs.len(),
            need: MIN_TREND_SIZES,
        });
    }
    Ok(pairs)
}

/// Event classification of one packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PacketLabel {
    /// Outlier delay: above the experiment median plus three standard
    /// deviations.
    Od,
    /// Large delay: above the 90th percentile of non-outlier delays.
    Ld,
    Plain,
    /// Lost at layer 3.
    L3,
}

#[derive(Debug, Clone)]
pub struct EventLabels {
    /// Per train, per record position: `None` when the packet has no
    /// defined label (received but without a usable access delay).
    pub by_train: Vec<Vec<Option<PacketLabel>>>,
    pub od_threshold_us: f64,
    pub ld_threshold_us: Option<i64>,
}

/// Labels every packet of the experiment. Thresholds are derived from the
/// pooled usable access delays across all trains; losses are labeled L3
/// regardless of train quality.
pub fn label_events(
    trace: &Trace,
    records: &[AccessDelayRecord],
) -> Result<EventLabels, DiagnoseError> {
    let mut usable: Vec<i64> = records.iter().filter_map(|r| r.a_us).collect();
    if usable.is_empty() {
        return Err(DiagnoseError::NoUsableDelays);
    }
    usable.sort_unstable();
    let median = crate::stats::median_i64(&mut usable);
    let std = sample_std(&usable);
    let od_threshold = median + 3.0 * std;

    let non_od: Vec<i64> =
        usable.iter().copied().filter(|&a| (a as f64) <= od_threshold).collect();
    let ld_threshold = (!non_od.is_empty()).then(|| nearest_rank_percentile(&non_od, 90.0));

    let mut delay_of = std::collections::HashMap::new();
    for r in records {
        if let Some(a) = r.a_us {
            delay_of.insert((r.train, r.seq), a);
        }
    }

    let by_train = trace
        .trains
        .iter()
        .map(|train| {
            train
                .records
                .iter()
                .map(|record| {
                    if record.lost() {
                        return Some(PacketLabel::L3);
                    }
                    let a = *delay_of.get(&(record.train, record.seq))?;
                    if a as f64 > od_threshold {
                        Some(PacketLabel::Od)
                    } else if ld_threshold.is_some_and(|t| a > t) {
                        Some(PacketLabel::Ld)
                    } else {
                        Some(PacketLabel::Plain)
                    }
                })
                .collect()
        })
        .collect();

    Ok(EventLabels { by_train, od_threshold_us: od_threshold, ld_threshold_us: ld_threshold })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioResult {
    pub p_u: f64,
    pub p_c: f64,
    pub value: f64,
}

/// Unconditional vs conditional event probabilities.
///
/// `p_u` is the fraction of labeled packets that are OD or L3. `p_c` is the
/// fraction of those trigger packets whose immediate in-train successor is
/// LD or L3; successors across train boundaries do not exist, and a
/// successor without a defined label counts against the condition.
pub fn probability_ratio(
    by_train: &[Vec<Option<PacketLabel>>],
) -> Result<RatioResult, DiagnoseError> {
    let mut defined = 0usize;
    let mut triggers = 0usize;
    let mut with_successor = 0usize;
    let mut hits = 0usize;
    for train in by_train {
        for (i, label) in train.iter().enumerate() {
            let Some(label) = label else { continue };
            defined += 1;
            if !matches!(label, PacketLabel::Od | PacketLabel::L3) {
                continue;
            }
            triggers += 1;
            if i + 1 < train.len() {
                with_successor += 1;
                if matches!(train[i + 1], Some(PacketLabel::Ld) | Some(PacketLabel::L3)) {
                    hits += 1;
                }
            }
        }
    }
    if triggers == 0 || with_successor == 0 {
        return Err(DiagnoseError::NoTriggers);
    }
    let p_u = triggers as f64 / defined as f64;
    let p_c = hits as f64 / with_successor as f64;
    Ok(RatioResult { p_u, p_c, value: p_c / p_u })
}

/// Final branch of the tree: strong successor correlation means an
/// exogenous (low SNR) condition, weak correlation means colliding hidden
/// terminals. A ratio exactly at the threshold classifies as hidden
/// terminals.
pub fn classify_snr_ht(ratio: f64, threshold: f64) -> Verdict {
    if ratio > threshold {
        Verdict::LowSnr
    } else {
        Verdict::SymmetricHt
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KendallEvidence {
    #[serde(rename = "S")]
    pub s: i64,
    pub tau: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Thresholds {
    pub alpha: f64,
    pub ratio_threshold: f64,
    pub min_samples: usize,
    pub od_us: Option<f64>,
    pub ld_us: Option<i64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnosis {
    pub verdict: Verdict,
    pub scenario_label: Option<String>,
    pub kendall: Option<KendallEvidence>,
    pub ratio: Option<RatioResult>,
    pub rate_status: ExperimentStatus,
    pub trains_used: usize,
    pub thresholds: Thresholds,
    pub abort_reason: Option<String>,
}

/// Everything the pipeline computed, for callers that want the
/// intermediates as well as the verdict.
#[derive(Debug)]
pub struct Analysis {
    pub rates: ExperimentRates,
    pub delays: Vec<AccessDelayRecord>,
    pub diagnosis: Diagnosis,
}

pub fn analyze_trace(trace: &Trace, cfg: &DiagnoseConfig) -> Analysis {
    let owds: Vec<Option<OwdSeries>> =
        trace.trains.iter().map(|t| relative_owd(t).ok()).collect();
    let rates = infer_experiment_rates(trace, &cfg.rate);
    let trains_used =
        rates.trains.iter().filter(|t| t.status == TrainRateStatus::Ok).count();
    let mut thresholds = Thresholds {
        alpha: cfg.alpha,
        ratio_threshold: cfg.ratio_threshold,
        min_samples: cfg.min_samples,
        od_us: None,
        ld_us: None,
    };
    let mut diagnosis = Diagnosis {
        verdict: Verdict::Aborted,
        scenario_label: None,
        kendall: None,
        ratio: None,
        rate_status: rates.status,
        trains_used,
        thresholds: thresholds.clone(),
        abort_reason: None,
    };

    if rates.status == ExperimentStatus::Abort {
        diagnosis.abort_reason =
            Some("rate inference aborted: weak rate modes in a majority of trains".into());
        return Analysis { rates, delays: Vec::new(), diagnosis };
    }

    let delays = compute_access_delays(trace, &owds, &rates, cfg.rate.l2_overhead);

    if cfg.profile == Profile::Standard {
        let pairs = match percentile95_by_size(&delays, cfg.min_samples) {
            Ok(pairs) => pairs,
            Err(e) => {
                diagnosis.abort_reason = Some(e.to_string());
                return Analysis { rates, delays, diagnosis };
            }
        };
        let values: Vec<i64> = pairs.iter().map(|p| p.p95_us).collect();
        let trend: TrendResult = match kendall_trend_test(&values, cfg.alpha) {
            Ok(t) => t,
            Err(e) => {
                diagnosis.abort_reason = Some(e.to_string());
                return Analysis { rates, delays, diagnosis };
            }
        };
        diagnosis.kendall =
            Some(KendallEvidence { s: trend.score, tau: trend.tau, p: trend.p_value });
        if trend.decision == TrendDecision::SizeIndependent {
            diagnosis.verdict = Verdict::Congestion;
            return Analysis { rates, delays, diagnosis };
        }
    }

    let labels = match label_events(trace, &delays) {
        Ok(l) => l,
        Err(e) => {
            diagnosis.abort_reason = Some(e.to_string());
            return Analysis { rates, delays, diagnosis };
        }
    };
    thresholds.od_us = Some(labels.od_threshold_us);
    thresholds.ld_us = labels.ld_threshold_us;
    diagnosis.thresholds = thresholds;

    match probability_ratio(&labels.by_train) {
        Ok(ratio) => {
            diagnosis.verdict = classify_snr_ht(ratio.value, cfg.ratio_threshold);
            diagnosis.ratio = Some(ratio);
        }
        Err(e) => {
            diagnosis.abort_reason = Some(e.to_string());
        }
    }
    Analysis { rates, delays, diagnosis }
}

/// Runs the full decision tree and returns the verdict with its evidence.
pub fn diagnose_trace(trace: &Trace, cfg: &DiagnoseConfig) -> Diagnosis {
    analyze_trace(trace, cfg).diagnosis
}
