use std::cmp::Reverse;
use std::collections::BinaryHeap;

use most_core::devsim::{Device, DeviceSpec, IoRequest, OpKind, Tier};
use most_core::time::SimTime;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GIB: u64 = 1 << 30;

/// Published figures: (preset, 4K read latency us, read GB/s at 4K and 16K).
const TABLE: [(&str, f64, [f64; 2]); 5] = [
    ("optane", 11.0, [2.2, 2.4]),
    ("nvme-pcie4", 66.0, [1.5, 3.3]),
    ("nvme-pcie3", 82.0, [1.0, 1.6]),
    ("nvme-rdma", 88.0, [1.2, 2.7]),
    ("sata", 104.0, [0.38, 0.5]),
];

fn req(op: OpKind, len: u64, offset: u64, at: SimTime) -> IoRequest {
    IoRequest { device: Tier::Performance, op, offset, length: len, issue_time: at }
}

/// Runs `workers` closed-loop workers issuing `len`-byte requests for
/// `secs` and returns the achieved bytes per second.
fn closed_loop(spec: DeviceSpec, op: OpKind, len: u64, workers: u64, secs: f64) -> f64 {
    let mut dev = Device::new(Tier::Performance, spec).unwrap();
    for w in 0..workers {
        dev.submit(req(op, len, w * len, SimTime::ZERO), SimTime::ZERO, w).unwrap();
    }
    let end = SimTime::from_secs_f64(secs);
    let mut bytes = 0u64;
    while let Some(t) = dev.next_completion_time() {
        if t > end {
            break;
        }
        let c = dev.pop_due(t).unwrap().unwrap();
        bytes += c.request.length;
        dev.submit(req(op, len, c.request.offset, t), t, c.tag).unwrap();
    }
    bytes as f64 / secs
}

#[test]
fn idle_small_read_latency_matches_published_figures() {
    for (name, lat, _) in TABLE {
        let mut dev = Device::new(Tier::Performance, DeviceSpec::preset(name, GIB).unwrap()).unwrap();
        let done = dev.submit(req(OpKind::Read, 4096, 0, SimTime::ZERO), SimTime::ZERO, 0).unwrap();
        let us = done.as_micros_f64();
        assert!((us - lat).abs() / lat <= 0.05, "{name}: idle 4K read {us:.1} us vs {lat}");
    }
}

#[test]
fn optane_sixteen_k_closed_loop_reaches_its_bandwidth() {
    let bw = closed_loop(DeviceSpec::preset("optane", GIB).unwrap(), OpKind::Read, 16384, 32, 0.05);
    assert!((bw - 2.4e9).abs() / 2.4e9 <= 0.05, "{bw:.3e} B/s");
}

#[test]
fn every_preset_saturates_at_its_published_read_bandwidth() {
    for (name, _, bws) in TABLE {
        for (len, gbs) in [4096u64, 16384].into_iter().zip(bws) {
            let spec = DeviceSpec::preset(name, GIB).unwrap();
            let workers = 4 * spec.parallelism as u64;
            let got = closed_loop(spec, OpKind::Read, len, workers, 0.05);
            let want = gbs * 1e9;
            assert!((got - want).abs() / want <= 0.02, "{name} {len}B: {got:.3e} vs {want:.3e}");
        }
    }
}

/// Independent replay: each request takes the earliest-free server; the
/// completion order is by (completion time, submission order).
fn reference_order(spec: &DeviceSpec, reqs: &[(u64, OpKind, u64)]) -> Vec<(u64, u64)> {
    let mut servers: BinaryHeap<Reverse<u64>> = (0..spec.parallelism).map(|_| Reverse(0)).collect();
    let mut done: Vec<(u64, u64)> = reqs
        .iter()
        .enumerate()
        .map(|(i, &(at, op, len))| {
            let Reverse(free) = servers.pop().unwrap();
            let service = (spec.service_time_us(op, len) * 1000.0).round().max(1.0) as u64;
            let end = free.max(at) + service;
            servers.push(Reverse(end));
            (end, i as u64)
        })
        .collect();
    done.sort();
    done
}

#[test]
fn ten_thousand_random_requests_complete_in_reference_order() {
    let spec = DeviceSpec::preset("nvme-pcie3", GIB).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut at = 0u64;
    let reqs: Vec<(u64, OpKind, u64)> = (0..10_000)
        .map(|_| {
            at += rng.gen_range(0..20_000);
            let op = if rng.gen_bool(0.5) { OpKind::Read } else { OpKind::Write };
            (at, op, 4096 * rng.gen_range(1..=8u64))
        })
        .collect();
    let mut dev = Device::new(Tier::Performance, spec.clone()).unwrap();
    let mut got = Vec::new();
    for (i, &(at, op, len)) in reqs.iter().enumerate() {
        let now = SimTime(at);
        got.extend(dev.advance(now).unwrap().into_iter().map(|c| (c.completed_at.as_nanos(), c.tag)));
        dev.submit(req(op, len, 0, now), now, i as u64).unwrap();
    }
    got.extend(dev.advance(SimTime(u64::MAX)).unwrap().into_iter().map(|c| (c.completed_at.as_nanos(), c.tag)));
    assert_eq!(got, reference_order(&spec, &reqs));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_mean_latency_is_the_mean_over_completions(
        gaps in prop::collection::vec(0u64..50_000, 1..200),
        writes in prop::collection::vec(any::<bool>(), 200),
    ) {
        let mut dev = Device::new(Tier::Capacity, DeviceSpec::preset("sata", GIB).unwrap()).unwrap();
        let mut now = 0u64;
        for (i, gap) in gaps.iter().enumerate() {
            now += gap;
            let op = if writes[i] { OpKind::Write } else { OpKind::Read };
            dev.submit(req(op, 4096, 0, SimTime(now)), SimTime(now), i as u64).unwrap();
        }
        let done = dev.advance(SimTime(u64::MAX)).unwrap();
        prop_assert_eq!(done.len(), gaps.len());
        let lat: Vec<f64> = done.iter().map(|c| c.latency().as_micros_f64()).collect();
        let want = lat.iter().sum::<f64>() / lat.len() as f64;
        let reads: Vec<f64> = done.iter().filter(|c| c.request.op == OpKind::Read).map(|c| c.latency().as_micros_f64()).collect();
        let s = dev.sample_counters();
        prop_assert!((s.avg_latency_us.unwrap() - want).abs() < 1e-6);
        prop_assert_eq!(s.ops, gaps.len() as u64);
        match s.avg_read_latency_us {
            Some(r) => prop_assert!((r - reads.iter().sum::<f64>() / reads.len() as f64).abs() < 1e-6),
            None => prop_assert!(reads.is_empty()),
        }
        prop_assert_eq!(dev.sample_counters().avg_latency_us, None);
    }

    #[test]
    fn throughput_never_exceeds_the_closed_form_rate(workers in 1u64..64, big in any::<bool>()) {
        let len = if big { 16384 } else { 4096 };
        let spec = DeviceSpec::preset("optane", GIB).unwrap();
        let cap = spec.saturation_bandwidth(OpKind::Read, len);
        let got = closed_loop(spec, OpKind::Read, len, workers, 0.01);
        prop_assert!(got <= cap * 1.001, "{} > {}", got, cap);
    }

    #[test]
    fn accrued_busy_time_never_exceeds_server_time(
        gaps in prop::collection::vec(0u64..30_000, 1..300),
        probes in prop::collection::vec(0u64..5_000_000, 1..20),
    ) {
        let spec = DeviceSpec::preset("nvme-pcie3", GIB).unwrap();
        let p = spec.parallelism as u64;
        let mut dev = Device::new(Tier::Capacity, spec).unwrap();
        let mut now = 0u64;
        for (i, gap) in gaps.iter().enumerate() {
            now += gap;
            dev.submit(req(OpKind::Read, 16384, 0, SimTime(now)), SimTime(now), i as u64).unwrap();
        }
        let mut probes = probes;
        probes.sort_unstable();
        let mut last = (0u64, 0u64);
        for t in probes {
            let busy = dev.busy_ns_at(SimTime(t));
            prop_assert!(busy >= last.1);
            prop_assert!(busy - last.1 <= p * (t - last.0));
            last = (t, busy);
        }
        let total: u64 = dev.advance(SimTime(u64::MAX)).unwrap().iter().map(|c| c.service_ns).sum();
        prop_assert_eq!(dev.busy_ns_at(SimTime(u64::MAX)), total);
    }
}
