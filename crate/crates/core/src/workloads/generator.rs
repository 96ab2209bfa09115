use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Distribution, WorkloadSpec};
use crate::devsim::OpKind;

/// One block access.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Op {
    pub kind: OpKind,
    pub lba: u64,
    pub len: u64,
}

/// Immutable per-workload constants, shared by every worker.
#[derive(Clone, Debug)]
pub struct Sampler {
    spec: WorkloadSpec,
    blocks: u64,
    zipf: Option<Zipf>,
}

#[derive(Clone, Copy, Debug)]
struct Zipf {
    theta: f64,
    zetan: f64,
    alpha: f64,
    eta: f64,
    half_pow_theta: f64,
}

impl Zipf {
    fn new(n: u64, theta: f64) -> Self {
        let zeta = |n: u64| (1..=n).map(|i| (i as f64).powf(-theta)).sum::<f64>();
        let zetan = zeta(n);
        let zeta2 = zeta(2.min(n));
        let nf = n as f64;
        Zipf {
            theta,
            zetan,
            alpha: 1.0 / (1.0 - theta),
            eta: (1.0 - (2.0 / nf).powf(1.0 - theta)) / (1.0 - zeta2 / zetan),
            half_pow_theta: 0.5f64.powf(theta),
        }
    }

    /// Rank in `1..=n`.
    fn rank(&self, n: u64, u: f64) -> u64 {
        let uz = u * self.zetan;
        if uz < 1.0 {
            return 1;
        }
        if uz < 1.0 + self.half_pow_theta {
            return 2.min(n);
        }
        let r = 1 + (n as f64 * (self.eta * u - self.eta + 1.0).powf(self.alpha)) as u64;
        r.clamp(1, n)
    }
}

impl Sampler {
    pub fn new(spec: &WorkloadSpec) -> Self {
        let blocks = spec.blocks();
        let zipf = match spec.distribution {
            Distribution::Zipfian { theta } => Some(Zipf::new(blocks, theta)),
            _ => None,
        };
        Sampler { spec: spec.clone(), blocks, zipf }
    }

    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    pub fn blocks(&self) -> u64 {
        self.blocks
    }

    pub fn zipf_theta(&self) -> Option<f64> {
        self.zipf.map(|z| z.theta)
    }

    /// Independent generator for one worker.
    pub fn stream(&self, worker: u64, workers_hint: u64) -> WorkerStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(worker);
        let start = (worker % workers_hint.max(1)) * (self.blocks / workers_hint.max(1));
        WorkerStream { rng, cursor: start % self.blocks, log_head: start % self.blocks, written: 0 }
    }
}

/// Per-worker generator state.
#[derive(Clone, Debug)]
pub struct WorkerStream {
    rng: ChaCha8Rng,
    cursor: u64,
    log_head: u64,
    written: u64,
}

impl WorkerStream {
    pub fn next_op(&mut self, s: &Sampler) -> Op {
        let spec = &s.spec;
        let n = s.blocks;
        let kind = if spec.read_ratio >= 1.0 || self.rng.gen::<f64>() < spec.read_ratio {
            OpKind::Read
        } else {
            OpKind::Write
        };
        let block = match spec.distribution {
            Distribution::Uniform => self.rng.gen_range(0..n),
            Distribution::Hotset { hot_fraction, hot_probability } => {
                let hot = ((n as f64 * hot_fraction) as u64).clamp(1, n - 1);
                if self.rng.gen::<f64>() < hot_probability {
                    self.rng.gen_range(0..hot)
                } else {
                    self.rng.gen_range(hot..n)
                }
            }
            Distribution::Zipfian { .. } => {
                let z = s.zipf.as_ref().expect("zipf constants");
                z.rank(n, self.rng.gen::<f64>()) - 1
            }
            Distribution::Sequential => {
                let b = self.cursor;
                self.cursor = (self.cursor + 1) % n;
                b
            }
            Distribution::ReadLatest { hot_new_fraction, hot_probability, window_fraction } => match kind {
                OpKind::Write => {
                    let b = self.log_head;
                    self.log_head = (self.log_head + 1) % n;
                    self.written += 1;
                    b
                }
                OpKind::Read => {
                    let window = ((n as f64 * window_fraction) as u64).max(1);
                    let hot = ((window as f64 * hot_new_fraction) as u64).max(1).min(self.written);
                    if hot > 0 && self.rng.gen::<f64>() < hot_probability {
                        let back = self.rng.gen_range(1..=hot);
                        (self.log_head + n - back) % n
                    } else {
                        self.rng.gen_range(0..n)
                    }
                }
            },
        };
        Op { kind, lba: block * spec.access_size, len: spec.access_size }
    }
}
