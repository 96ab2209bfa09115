//! Log-bucketed latency histogram: 1 µs to 10 s, ten buckets per decade.

const DECADES: usize = 7;
const PER_DECADE: usize = 10;
const BUCKETS: usize = DECADES * PER_DECADE;

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyHistogram {
    counts: [u64; BUCKETS],
    total: u64,
    sum_us: f64,
}

impl Default for LatencyHistogram {
    fn default() -> Self {
        LatencyHistogram { counts: [0; BUCKETS], total: 0, sum_us: 0.0 }
    }
}

impl LatencyHistogram {
    pub fn new() -> Self {
        Self::default()
    }

    /// Bucket `i` covers `[10^(i/10), 10^((i+1)/10))` microseconds; values
    /// outside the range land in the first or last bucket.
    pub fn bucket_of(us: f64) -> usize {
        if !(us > 1.0) {
            return 0;
        }
        ((us.log10() * PER_DECADE as f64).floor() as usize).min(BUCKETS - 1)
    }

    pub fn bucket_bounds(i: usize) -> (f64, f64) {
        let edge = |k: usize| 10f64.powf(k as f64 / PER_DECADE as f64);
        (edge(i), edge(i + 1))
    }

    pub fn record(&mut self, us: f64) {
        self.counts[Self::bucket_of(us)] += 1;
        self.total += 1;
        self.sum_us += us;
    }

    pub fn count(&self) -> u64 {
        self.total
    }

    pub fn mean(&self) -> Option<f64> {
        (self.total > 0).then(|| self.sum_us / self.total as f64)
    }

    pub fn merge(&mut self, other: &LatencyHistogram) {
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += b;
        }
        self.total += other.total;
        self.sum_us += other.sum_us;
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }

    /// Geometric midpoint of the bucket holding the `q`-quantile.
    pub fn percentile(&self, q: f64) -> Option<f64> {
        if self.total == 0 {
            return None;
        }
        let rank = ((q.clamp(0.0, 1.0) * self.total as f64).ceil() as u64).max(1);
        let mut seen = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            seen += c;
            if seen >= rank {
                let (lo, hi) = Self::bucket_bounds(i);
                return Some((lo * hi).sqrt());
            }
        }
        unreachable!("rank within total")
    }
}
