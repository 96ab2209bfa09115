//! Post-run analysis: convergence detection and flash endurance arithmetic.

/// First time after the change at which `series` stays within `band`
/// (relative) of `target` for `run` consecutive intervals.
///
/// `series[i]` describes the interval ending at `(i + 1) * interval_s`, and
/// the change happens at the start of interval `change_index`. The result is
/// measured from the change to the end of the first in-band interval.
pub fn detect_convergence(
    series: &[f64],
    interval_s: f64,
    change_index: usize,
    target: f64,
    band: f64,
    run: usize,
) -> Option<f64> {
    let ok = |v: f64| (v - target).abs() <= band * target.abs();
    let run = run.max(1);
    (change_index..series.len().saturating_sub(run - 1))
        .find(|&i| series[i..i + run].iter().all(|&v| ok(v)))
        .map(|i| (i - change_index + 1) as f64 * interval_s)
}

/// Convergence with the default 5% band over 5 intervals, against the mean
/// of the final third of the post-change window `[change_index, end_index)`.
pub fn convergence_after(series: &[f64], interval_s: f64, change_index: usize, end_index: usize) -> Option<f64> {
    let window = &series[change_index..end_index.min(series.len())];
    let target = super::metrics::steady_mean(window);
    detect_convergence(&series[..end_index.min(series.len())], interval_s, change_index, target, 0.05, 5)
}

/// Drive writes per day.
pub fn dwpd(bytes_written: u64, capacity: u64, duration_s: f64) -> f64 {
    assert!(capacity > 0 && duration_s > 0.0, "capacity and duration must be positive");
    bytes_written as f64 / (duration_s / 86_400.0) / capacity as f64
}

/// Days until the rated endurance (`rated_dwpd` sustained for `rated_days`)
/// is consumed at `actual_dwpd`.
pub fn lifespan_days(rated_dwpd: f64, rated_days: f64, actual_dwpd: f64) -> f64 {
    rated_dwpd * rated_days / actual_dwpd
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instant_step_converges_in_one_interval() {
        let s = [1.0, 1.0, 5.0, 5.0, 5.0, 5.0, 5.0, 5.0];
        assert_eq!(detect_convergence(&s, 1.0, 2, 5.0, 0.05, 5), Some(1.0));
    }

    #[test]
    fn ramp_reaches_band() {
        let s: Vec<f64> = (1..=100).map(|t| if t < 42 { t as f64 } else { 100.0 }).collect();
        assert_eq!(detect_convergence(&s, 1.0, 0, 100.0, 0.05, 5), Some(42.0));
    }

    #[test]
    fn never_settling_is_none() {
        let s: Vec<f64> = (0..50).map(|i| if i % 2 == 0 { 1.0 } else { 2.0 }).collect();
        assert_eq!(detect_convergence(&s, 1.0, 0, 1.5, 0.05, 5), None);
    }

    #[test]
    fn endurance_arithmetic() {
        assert!((dwpd(3_100_000_000_000, 1_000_000_000_000, 86_400.0) - 3.1).abs() < 1e-12);
        assert_eq!(lifespan_days(0.37, 1095.0, 0.37), 1095.0);
    }
}
