//! Aggregation of diagnosis reports into a scenario-by-verdict matrix.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::diagnose::{Diagnosis, Verdict};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no valid reports to summarize")]
    Empty,
}

const VERDICT_COLUMNS: [Verdict; 4] =
    [Verdict::Congestion, Verdict::LowSnr, Verdict::SymmetricHt, Verdict::Aborted];

/// Fraction of each verdict per labeled scenario. Reports without a label
/// fall into an "unlabeled" row.
pub fn verdict_matrix(reports: &[Diagnosis]) -> Result<String, ReportError> {
    if reports.is_empty() {
        return Err(ReportError::Empty);
    }
    let mut rows: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for report in reports {
        let label = report.scenario_label.clone().unwrap_or_else(|| "unlabeled".into());
        let counts = rows.entry(label).or_insert_with(|| vec![0; VERDICT_COLUMNS.len()]);
        let idx = VERDICT_COLUMNS.iter().position(|v| *v == report.verdict).expect("known verdict");
        counts[idx] += 1;
    }

    let mut out = String::new();
    out.push_str("| scenario | runs |");
    for v in VERDICT_COLUMNS {
        out.push_str(&format!(" {v} |"));
    }
    out.push('\n');
    out.push_str("|---|---|");
    for _ in VERDICT_COLUMNS {
        out.push_str("---|");
    }
    out.push('\n');
    for (label, counts) in &rows {
        let total: usize = counts.iter().sum();
        out.push_str(&format!("| {label} | {total} |"));
        for c in counts {
            out.push_str(&format!(" {:.2} |", *c as f64 / total as f64));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnose::Thresholds;
    use crate::rate::ExperimentStatus;

    fn report(label: Option<&str>, verdict: Verdict) -> Diagnosis {
        Diagnosis {
            verdict,
            scenario_label: label.map(String::from),
            kendall: None,
            ratio: None,
            rate_status: ExperimentStatus::Ok,
            trains_used: 100,
            thresholds: Thresholds {
                alpha: 0.01,
                ratio_threshold: 4.0,
                min_samples: 30,
                od_us: None,
                ld_us: None,
            },
            abort_reason: None,
        }
    }

    #[test]
    fn matrix_fractions() {
        let mut reports = vec![report(Some("low-snr"), Verdict::LowSnr); 9];
        reports.push(report(Some("low-snr"), Verdict::SymmetricHt));
        let table = verdict_matrix(&reports).unwrap();
        let row = table.lines().find(|l| l.starts_with("| low-snr")).unwrap();
        assert!(row.contains("| 10 |"), "{row}");
        assert!(row.contains(" 0.90 |"), "{row}");
        assert!(row.contains(" 0.10 |"), "{row}");
    }

    #[test]
    fn empty_input_errors() {
        assert!(matches!(verdict_matrix(&[]), Err(ReportError::Empty)));
    }

    #[test]
    fn one_row_per_scenario() {
        let reports = vec![
            report(Some("congestion"), Verdict::Congestion),
            report(Some("sht"), Verdict::SymmetricHt),
            report(None, Verdict::Aborted),
        ];
        let table = verdict_matrix(&reports).unwrap();
        assert!(table.contains("| congestion |"));
        assert!(table.contains("| sht |"));
        assert!(table.contains("| unlabeled |"));
    }
}
