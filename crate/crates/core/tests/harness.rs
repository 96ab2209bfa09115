use most_core::harness::analysis::{convergence_after, detect_convergence, dwpd, lifespan_days};
use most_core::harness::compare::{compare, long_csv, summary_csv, Sweep};
use most_core::harness::histogram::LatencyHistogram;
use most_core::harness::metrics::{csv_header, to_csv};
use most_core::harness::{self, ExperimentConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN_HEADER: &str = include_str!("golden/metrics_header.csv");

fn short(policy: &str) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.set("policy", &format!("\"{policy}\"")).unwrap();
    c.set("workload.read_ratio", "0.8").unwrap();
    c.set("workload.phases", "[{ start_s = 0.0, workers = 96 }, { start_s = 1.5, workers = 24 }]").unwrap();
    c.engine.duration_s = 3.0;
    c
}

#[test]
fn csv_header_matches_the_golden_file() {
    assert_eq!(format!("{}\n", csv_header()), GOLDEN_HEADER);
    let (rows, _) = harness::run(&short("most")).unwrap();
    let csv = to_csv(&rows);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), GOLDEN_HEADER.trim_end());
    let width = GOLDEN_HEADER.trim_end().split(',').count();
    assert!(lines.all(|l| l.split(',').count() == width));
}

#[test]
fn same_config_and_seed_give_byte_identical_csv() {
    for p in ["most", "hemem", "nhc", "colloid++"] {
        let c = short(p);
        let a = to_csv(&harness::run(&c).unwrap().0);
        let b = to_csv(&harness::run(&c).unwrap().0);
        assert_eq!(a, b, "{p}");
        let mut other = c.clone();
        other.set("seed", "99").unwrap();
        assert_ne!(a, to_csv(&harness::run(&other).unwrap().0), "{p} ignores its seed");
    }
}

#[test]
fn rows_keep_counters_monotone_and_percentiles_ordered() {
    let (rows, summary) = harness::run(&short("most")).unwrap();
    assert_eq!(rows.len(), 15);
    for w in rows.windows(2) {
        assert!(w[1].time_s > w[0].time_s);
        assert!(w[1].mig_to_perf_bytes >= w[0].mig_to_perf_bytes);
        assert!(w[1].mig_to_cap_bytes >= w[0].mig_to_cap_bytes);
        assert!(w[1].mirror_bytes >= w[0].mirror_bytes);
        assert!(w[1].clean_bytes >= w[0].clean_bytes);
    }
    for r in &rows {
        if let (Some(a), Some(b), Some(c)) = (r.p50_us, r.p99_us, r.p999_us) {
            assert!(a <= b && b <= c, "{a} {b} {c}");
        }
        assert!(r.dev_util.iter().all(|u| (0.0..=1.0 + 1e-9).contains(u)));
    }
    let t = &summary.totals;
    assert!(t.accounting_closed && t.routing_violations == 0 && t.invariants.is_none());
}

#[test]
fn histogram_percentiles_land_in_the_exact_quantiles_bucket() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let n = rng.gen_range(1..5000);
        let mut xs: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.gen_range(0.0..6.5))).collect();
        let mut h = LatencyHistogram::new();
        xs.iter().for_each(|&x| h.record(x));
        xs.sort_by(f64::total_cmp);
        for q in [0.0, 0.5, 0.9, 0.99, 0.999, 1.0] {
            let rank = ((q * n as f64).ceil() as usize).max(1);
            let exact = xs[rank - 1];
            let got = h.percentile(q).unwrap();
            assert_eq!(LatencyHistogram::bucket_of(got), LatencyHistogram::bucket_of(exact), "q={q} n={n}");
            let (lo, hi) = LatencyHistogram::bucket_bounds(LatencyHistogram::bucket_of(exact));
            assert!(got / exact < hi / lo && exact / got < hi / lo);
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        assert!((h.mean().unwrap() - mean).abs() <= 1e-9 * mean);
    }
}

fn brute_force(series: &[f64], interval: f64, change: usize, target: f64) -> Option<f64> {
    let mut i = change;
    while i + 5 <= series.len() {
        let mut all = true;
        for v in &series[i..i + 5] {
            if (v - target).abs() > 0.05 * target {
                all = false;
            }
        }
        if all {
            return Some((i - change + 1) as f64 * interval);
        }
        i += 1;
    }
    None
}

#[test]
fn convergence_examples() {
    let step: Vec<f64> = (0..100).map(|i| if i < 50 { 100.0 } else { 300.0 }).collect();
    assert_eq!(convergence_after(&step, 0.2, 50, 100), Some(0.2));
    let ramp: Vec<f64> = (1..=200).map(|t| if t < 42 { 10.0 * t as f64 } else { 1000.0 }).collect();
    assert_eq!(detect_convergence(&ramp, 1.0, 0, 1000.0, 0.05, 5), Some(42.0));
}

proptest! {
    #[test]
    fn convergence_matches_a_brute_force_scan(
        noise in prop::collection::vec(-0.12f64..0.12, 40..300),
        settle in 0usize..200,
        change in 0usize..30,
    ) {
        let series: Vec<f64> = noise
            .iter()
            .enumerate()
            .map(|(i, e)| if i < change + settle { 500.0 * (1.0 + 3.0 * e) } else { 1000.0 * (1.0 + e / 3.0) })
            .collect();
        let change = change.min(series.len() - 1);
        let target = 1000.0;
        prop_assert_eq!(
            detect_convergence(&series, 0.2, change, target, 0.05, 5),
            brute_force(&series, 0.2, change, target)
        );
    }
}

#[test]
fn endurance_arithmetic() {
    assert!((dwpd(3_100_000_000_000, 1_000_000_000_000, 86_400.0) - 3.1).abs() < 1e-12);
    assert!((dwpd(62, 10, 172_800.0) - 3.1).abs() < 1e-12);
    let days = lifespan_days(0.37, 1095.0, 3.1);
    assert!((days - 129.0).abs() / 129.0 <= 0.02, "{days}");
    assert_eq!(lifespan_days(0.37, 1095.0, 0.37), 1095.0);
}

#[test]
fn config_errors_name_the_offending_key() {
    let mut c = ExperimentConfig::default();
    let err = c.set("workload.read_ratio", "1.5").unwrap_err().to_string();
    assert!(err.contains("workload.read_ratio"), "{err}");
    let err = c.set("engine.no_such_key", "1").unwrap_err().to_string();
    assert!(err.contains("no_such_key"), "{err}");
    let err = ExperimentConfig::from_toml(
        "[devices.performance]\npreset = \"floppy\"\ncapacity = 1073741824\n\n[devices.capacity]\npreset = \"sata\"\ncapacity = 1073741824\n",
    ).unwrap_err();
    assert!(err.to_string().contains("floppy"), "{err}");
    assert_eq!(c, ExperimentConfig::default());
}

#[test]
fn compare_sweeps_are_complete_and_reproducible() {
    let mut base = ExperimentConfig::default();
    base.engine.duration_s = 1.0;
    base.engine.calibration_duration_s = 0.5;
    base.workload.think_time_us = 2000.0;
    let sweeps: Vec<Sweep> =
        ["policy=most,hemem,striping", "intensity=0.5,1.0,1.5,2.0"].iter().map(|s| s.parse().unwrap()).collect();
    let a = compare(&base, &sweeps, true).unwrap();
    assert_eq!(a.len(), 12);
    let summary = summary_csv(&a);
    assert_eq!(summary.lines().count(), 13);
    let header: Vec<&str> = summary.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "calibrated_workers").unwrap();
    let workers: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').nth(col).unwrap()).collect();
    assert!(workers.iter().all(|w| !w.is_empty() && *w == workers[0]), "{workers:?}");

    let b = compare(&base, &sweeps, false).unwrap();
    assert_eq!(summary, summary_csv(&b));
    assert_eq!(long_csv(&a), long_csv(&b));
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(to_csv(&x.rows), to_csv(&y.rows));
        assert_eq!(x.summary.totals.request_hash, y.summary.totals.request_hash);
    }
}
