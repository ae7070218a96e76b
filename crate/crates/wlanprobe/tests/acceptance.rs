//! Acceptance suite: every release gate in one place.
//!
//! Each test prints one `ACCEPTANCE <n> ... PASS/FAIL` line (visible with
//! `--nocapture`) and asserts the gate. Simulator-backed gates run 20 seeded
//! experiments per scenario preset; statistical bounds below are fixed, not
//! calibrated at runtime.

use std::time::Instant;

use wlanprobe::delay::{access_delay, tx_latency_us, wait_time};
use wlanprobe::diagnose::{
    analyze_trace, label_events, probability_ratio, DiagnoseConfig, PacketLabel, Verdict,
};
use wlanprobe::kendall::{kendall_score, kendall_trend_test};
use wlanprobe::rate::{RateKbps, TrainRateStatus};
use wlanprobe::schedule::ProbeSchedule;
use wlanprobe::sim::{
    scenario_preset, simulate, ChannelModel, Intensity, Pathology, RateAdapter, Scenario,
    ScenarioKind,
};
use wlanprobe::trace::validate_trace;

const SEEDS: std::ops::Range<u64> = 0..20;

fn run_scenario(kind: ScenarioKind, seed: u64) -> (wlanprobe::Trace, wlanprobe::sim::GroundTruth) {
    let schedule = ProbeSchedule { rng_seed: seed, ..Default::default() };
    let scenario = scenario_preset(kind, Intensity::Severe).with_seed(seed);
    simulate(&schedule, &scenario, &ChannelModel::default()).expect("simulation runs")
}

fn gate(id: u32, name: &str, pass: bool, detail: String) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {id} ({name}): {status} [{detail}]");
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

#[test]
fn criterion_1_trend_test_separation() {
    let started = Instant::now();
    let cfg = DiagnoseConfig::default();
    let mut low_snr_hits = 0;
    let mut congestion_hits = 0;
    for seed in SEEDS {
        let (trace, _) = run_scenario(ScenarioKind::LowSnr, seed);
        let d = analyze_trace(&trace, &cfg).diagnosis;
        if d.kendall.expect("trend computed").p < 0.01 {
            low_snr_hits += 1;
        }
        let (trace, _) = run_scenario(ScenarioKind::Congestion, seed);
        let d = analyze_trace(&trace, &cfg).diagnosis;
        if d.kendall.expect("trend computed").p > 0.1 {
            congestion_hits += 1;
        }
    }
    let elapsed = started.elapsed();
    let pass = low_snr_hits >= 19 && congestion_hits >= 19 && elapsed.as_secs() < 60;
    gate(
        1,
        "trend-test separation",
        pass,
        format!(
            "low-SNR p<0.01 in {low_snr_hits}/20, congestion p>0.1 in {congestion_hits}/20, \
             runtime {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_2_ratio_separation() {
    let cfg = DiagnoseConfig::default();
    let mut sht_below = 0;
    let mut low_snr_above = 0;
    for seed in SEEDS {
        // The ratio stage is evaluated directly for every run, regardless of
        // where the decision tree would have exited.
        let (trace, _) = run_scenario(ScenarioKind::Sht, seed);
        let analysis = analyze_trace(&trace, &cfg);
        let labels = label_events(&trace, &analysis.delays).expect("labels");
        let ratio = probability_ratio(&labels.by_train).expect("triggers present");
        if ratio.value < 5.0 {
            sht_below += 1;
        }
        let (trace, _) = run_scenario(ScenarioKind::LowSnr, seed);
        let analysis = analyze_trace(&trace, &cfg);
        let labels = label_events(&trace, &analysis.delays).expect("labels");
        let ratio = probability_ratio(&labels.by_train).expect("triggers present");
        if ratio.value > 5.0 {
            low_snr_above += 1;
        }
    }
    let pass = sht_below == 20 && low_snr_above >= 14;
    gate(
        2,
        "SNR/HT ratio separation",
        pass,
        format!("SHT ratio<5 in {sht_below}/20, low-SNR ratio>5 in {low_snr_above}/20"),
    );
}

#[test]
fn criterion_3_end_to_end_verdicts() {
    let cfg = DiagnoseConfig::default();
    let cases = [
        (ScenarioKind::Congestion, Verdict::Congestion),
        (ScenarioKind::LowSnr, Verdict::LowSnr),
        (ScenarioKind::Sht, Verdict::SymmetricHt),
    ];
    let mut detail = Vec::new();
    let mut pass = true;
    for (kind, expected) in cases {
        let mut hits = 0;
        for seed in SEEDS {
            let (trace, _) = run_scenario(kind, seed);
            if analyze_trace(&trace, &cfg).diagnosis.verdict == expected {
                hits += 1;
            }
        }
        pass &= hits >= 18;
        detail.push(format!("{}: {hits}/20", kind.label()));
    }
    gate(3, "end-to-end verdict accuracy", pass, detail.join(", "));
}

#[test]
fn criterion_4_rate_inference_accuracy() {
    let cfg = DiagnoseConfig::default();
    let mut total = 0u64;
    let mut matches = 0u64;
    let mut rel_err_sum = 0.0f64;
    for seed in 0..5u64 {
        let (trace, truth) = run_scenario(ScenarioKind::Normal, seed);
        let analysis = analyze_trace(&trace, &cfg);
        for p in &truth.packets {
            let train = &analysis.rates.trains[p.train as usize];
            if train.status != TrainRateStatus::Ok {
                continue;
            }
            if let Some(rate) = train.final_rate_for(p.seq) {
                total += 1;
                if rate == p.rate {
                    matches += 1;
                }
                rel_err_sum += (rate.as_mbps() - p.rate.as_mbps()).abs() / p.rate.as_mbps();
            }
        }
    }
    let match_frac = matches as f64 / total as f64;
    let mare = rel_err_sum / total as f64;

    // Sampler adapter: occasional probing at a neighboring rate must leave
    // most trains with a usable mode.
    let mut ok_trains = 0usize;
    let mut all_trains = 0usize;
    for seed in 0..3u64 {
        let schedule = ProbeSchedule { rng_seed: seed, ..Default::default() };
        let scenario = Scenario {
            kind: ScenarioKind::Normal,
            pathology: Pathology::None,
            adapter: RateAdapter::Sampler {
                base: RateKbps(18_000),
                probe_rates: vec![RateKbps(24_000)],
                p_probe: 0.15,
            },
            rng_seed: seed,
        };
        let (trace, _) = simulate(&schedule, &scenario, &ChannelModel::default()).unwrap();
        let analysis = analyze_trace(&trace, &cfg);
        all_trains += analysis.rates.trains.len();
        ok_trains +=
            analysis.rates.trains.iter().filter(|t| t.status == TrainRateStatus::Ok).count();
    }
    let sampler_ok = ok_trains as f64 / all_trains as f64;

    let pass = match_frac >= 0.95 && mare < 0.05 && sampler_ok >= 0.70;
    gate(
        4,
        "rate-inference accuracy",
        pass,
        format!(
            "sticky match {matches}/{total} = {match_frac:.4}, MARE {mare:.4}, \
             sampler trains ok {sampler_ok:.2}"
        ),
    );
}

#[test]
fn criterion_5_kendall_oracle_equivalence() {
    use itertools::Itertools;
    use rand::{Rng, SeedableRng};

    fn oracle_p(values: &[i64]) -> f64 {
        let observed = kendall_score(values);
        let n = values.len();
        let total: u64 = (1..=n as u64).product();
        let at_least = (0..n)
            .permutations(n)
            .filter(|perm| {
                let permuted: Vec<i64> = perm.iter().map(|&i| values[i]).collect();
                kendall_score(&permuted) >= observed
            })
            .count() as u64;
        at_least as f64 / total as f64
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xACCE);
    let mut checked = 0;
    for _ in 0..200 {
        let n = rng.gen_range(3..=8);
        // A small value range forces ties regularly.
        let values: Vec<i64> = (0..n).map(|_| rng.gen_range(0..12)).collect();
        let result = kendall_trend_test(&values, 0.01).expect("supported size");
        let oracle = oracle_p(&values);
        assert_eq!(
            result.p_value, oracle,
            "p-value mismatch for {values:?}: {} vs oracle {}",
            result.p_value, oracle
        );
        checked += 1;
    }
    gate(5, "Kendall oracle equivalence", checked == 200, format!("{checked}/200 exact matches"));
}

#[test]
fn criterion_6_formula_unit_suite() {
    // Sender-queue wait.
    assert_eq!(wait_time(5000, 2000), 3000);
    assert_eq!(wait_time(1000, 2000), 0);
    assert_eq!(wait_time(1500, 1500), 0);
    // Access delay from OWD, wait and transmission latency.
    assert_eq!(tx_latency_us(1464, RateKbps(12_000), 36), 1000);
    assert_eq!(access_delay(2000, 0, 1464, RateKbps(12_000), 36), 1000);
    assert_eq!(access_delay(1000, 0, 1464, RateKbps(12_000), 36), 0);

    // Simulator conservation: d = w + tx + a, exactly, for every received
    // packet of a 10-train run under every scenario.
    let mut checked = 0u64;
    for kind in
        [ScenarioKind::Normal, ScenarioKind::LowSnr, ScenarioKind::Congestion, ScenarioKind::Sht]
    {
        let schedule =
            ProbeSchedule { n_trains: 10, rng_seed: 42, ..Default::default() };
        let scenario = scenario_preset(kind, Intensity::Severe).with_seed(42);
        let (trace, truth) = simulate(&schedule, &scenario, &ChannelModel::default()).unwrap();
        for (record, p) in trace.trains.iter().flat_map(|t| &t.records).zip(&truth.packets) {
            if let Some(recv) = record.recv_us {
                assert_eq!(
                    recv - record.send_us,
                    p.wait_us + p.tx_us + p.access_us,
                    "conservation violated: {kind:?} train {} seq {}",
                    p.train,
                    p.seq
                );
                checked += 1;
            }
        }
    }
    gate(6, "formula unit suite", checked > 0, format!("{checked} packets conserve d = w+tx+a"));
}

#[test]
fn criterion_7_probability_ratio_oracle() {
    use rand::{Rng, SeedableRng};

    fn oracle(trains: &[Vec<Option<PacketLabel>>]) -> Option<(f64, f64)> {
        let (mut defined, mut triggers, mut denom, mut num) = (0u64, 0u64, 0u64, 0u64);
        for train in trains {
            for i in 0..train.len() {
                if train[i].is_some() {
                    defined += 1;
                }
                if matches!(train[i], Some(PacketLabel::Od) | Some(PacketLabel::L3)) {
                    triggers += 1;
                    if i + 1 < train.len() {
                        denom += 1;
                        if matches!(train[i + 1], Some(PacketLabel::Ld) | Some(PacketLabel::L3)) {
                            num += 1;
                        }
                    }
                }
            }
        }
        if triggers == 0 || denom == 0 {
            return None;
        }
        Some((triggers as f64 / defined as f64, num as f64 / denom as f64))
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let mut agreements = 0;
    for _ in 0..1000 {
        let trains: Vec<Vec<Option<PacketLabel>>> = (0..rng.gen_range(1..5))
            .map(|_| {
                (0..rng.gen_range(1..60))
                    .map(|_| match rng.gen_range(0..6) {
                        0 => Some(PacketLabel::Od),
                        1 => Some(PacketLabel::Ld),
                        2 | 3 => Some(PacketLabel::Plain),
                        4 => Some(PacketLabel::L3),
                        _ => None,
                    })
                    .collect()
            })
            .collect();
        match (probability_ratio(&trains), oracle(&trains)) {
            (Ok(result), Some((p_u, p_c))) => {
                assert_eq!(result.p_u, p_u);
                assert_eq!(result.p_c, p_c);
                assert_eq!(result.value, p_c / p_u);
                agreements += 1;
            }
            (Err(_), None) => agreements += 1,
            (got, want) => panic!("oracle mismatch: {got:?} vs {want:?}"),
        }
    }
    gate(7, "probability-ratio oracle", agreements == 1000, format!("{agreements}/1000 exact"));
}

#[test]
fn criterion_8_loopback_integration() {
    use std::io::BufRead;
    use std::process::{Command, Stdio};

    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let trace_path = dir.path().join("loopback.jsonl");

    let mut receiver = Command::new(env!("CARGO_BIN_EXE_wlanprobe"))
        .args([
            "probe",
            "recv",
            "--listen",
            "127.0.0.1:0",
            "--out",
            trace_path.to_str().unwrap(),
            "--timeout-s",
            "30",
        ])
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .expect("receiver starts");

    // The receiver announces its bound (ephemeral) port on stderr.
    let mut stderr = std::io::BufReader::new(receiver.stderr.take().unwrap());
    let mut line = String::new();
    stderr.read_line(&mut line).expect("receiver announces address");
    let addr = line.trim().strip_prefix("listening on ").unwrap_or_else(|| {
        panic!("unexpected receiver announcement: {line:?}");
    });

    let sender = Command::new(env!("CARGO_BIN_EXE_wlanprobe"))
        .args(["probe", "send", "--dest", addr])
        .stdout(Stdio::null())
        .status()
        .expect("sender runs");
    assert!(sender.success(), "sender exited with {sender:?}");
    let recv_status = receiver.wait().expect("receiver exits");
    assert!(recv_status.success(), "receiver exited with {recv_status:?}");

    let original = std::fs::read(&trace_path).unwrap();
    let trace = wlanprobe::trace::load_trace(original.as_slice()).expect("trace parses");
    let report = validate_trace(&trace);
    let mut rewritten = Vec::new();
    wlanprobe::trace::save_trace(&trace, &mut rewritten).unwrap();
    let elapsed = started.elapsed();

    let pass = trace.record_count() == 5000
        && trace.loss_count() == 0
        && report.is_clean()
        && rewritten == original
        && elapsed.as_secs() < 180;
    gate(
        8,
        "loopback integration",
        pass,
        format!(
            "{} records, {} losses, validator {}, round-trip {}, {:.1}s",
            trace.record_count(),
            trace.loss_count(),
            if report.is_clean() { "clean" } else { "violations" },
            if rewritten == original { "identical" } else { "mismatch" },
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_9_simulate_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let trace = dir.path().join(format!("trace-{tag}.jsonl"));
        let truth = dir.path().join(format!("truth-{tag}.jsonl"));
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_wlanprobe"))
            .args([
                "simulate",
                "--scenario",
                "low-snr",
                "--intensity",
                "severe",
                "--seed",
                "11",
                "--out",
                trace.to_str().unwrap(),
                "--truth",
                truth.to_str().unwrap(),
            ])
            .status()
            .expect("simulate runs");
        assert!(status.success());
        (std::fs::read(trace).unwrap(), std::fs::read(truth).unwrap())
    };
    let (trace_a, truth_a) = run("a");
    let (trace_b, truth_b) = run("b");
    let pass = trace_a == trace_b && truth_a == truth_b;
    gate(
        9,
        "simulate determinism",
        pass,
        format!("trace {} bytes, truth {} bytes, byte-identical across runs", trace_a.len(), truth_a.len()),
    );
}

#[test]
fn trace_invariants_on_simulated_runs() {
    // Supporting check: every simulated trace satisfies the validator.
    for kind in
        [ScenarioKind::Normal, ScenarioKind::LowSnr, ScenarioKind::Congestion, ScenarioKind::Sht]
    {
        let (trace, _) = run_scenario(kind, 3);
        let report = validate_trace(&trace);
        assert!(report.is_clean(), "{kind:?} trace violates invariants: {:?}", report.violations);
    }
}
