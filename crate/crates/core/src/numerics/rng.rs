use std::f64::consts::PI;

use super::Tensor;

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based pseudo-random generator (splitmix over a Weyl sequence).
/// State is the pair (seed, counter), so identical seed plus identical call
/// sequence reproduces identical outputs on every platform, and the state
/// serializes into a checkpoint as two integers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeededRng {
    seed: u64,
    counter: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng { seed, counter: 0 }
    }

    /// Rebuild from a checkpointed (seed, counter) pair.
    pub fn restore(seed: u64, counter: u64) -> Self {
        SeededRng { seed, counter }
    }

    pub fn state(&self) -> (u64, u64) {
        (self.seed, self.counter)
    }

    /// Independent stream derived purely from labels; does not advance `self`
    /// and does not depend on the current counter.
    pub fn derive(&self, labels: &[u64]) -> SeededRng {
        let mut s = mix(self.seed ^ 0x5851_f42d_4c95_7f2d);
        for &l in labels {
            s = mix(s.wrapping_add(GAMMA) ^ mix(l));
        }
        SeededRng::new(s)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.seed.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform in [0, 1).
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1]; safe under ln().
    fn uniform_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n).
    pub fn range(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// One standard normal draw via Box-Muller (discards the paired draw).
    pub fn gaussian(&mut self) -> f64 {
        let u1 = self.uniform_open01();
        let u2 = self.uniform01();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    /// i.i.d. standard normal vector. Box-Muller pairs are consumed within
    /// the call; an odd dimension discards the spare draw rather than caching
    /// it across calls.
    pub fn gaussian_vector(&mut self, dim: usize) -> Tensor {
        let mut out = Vec::with_capacity(dim);
        while out.len() < dim {
            let u1 = self.uniform_open01();
            let u2 = self.uniform01();
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * PI * u2;
            out.push(r * theta.cos());
            if out.len() < dim {
                out.push(r * theta.sin());
            }
        }
        Tensor::vector(out)
    }
}
