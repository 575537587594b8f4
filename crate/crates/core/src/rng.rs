//! Deterministic, path-keyed random streams.
//!
//! Every source of randomness in the simulator is an [`RngStream`] identified
//! by a seed plus a path of integers (client, round, layer, purpose, ...).
//! Two streams with the same (seed, path) produce identical output on any
//! platform; streams with different paths are independent. Generation is
//! counter-based (SplitMix64-style finalizer over `key + i * GAMMA`), so a
//! stream's output does not depend on how many values sibling streams have
//! drawn — client work can be scheduled in any order without changing
//! results.
//!
//! Not cryptographically secure; simulation use only.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Well-known path elements naming what a child stream is for. Keeping them
/// distinct guarantees that e.g. the shuffle stream of client 3 never
/// collides with its noise stream.
pub mod purpose {
    pub const DATA: u64 = 0x01;
    pub const TEST_SPLIT: u64 = 0x02;
    pub const PARTITION: u64 = 0x03;
    pub const INIT: u64 = 0x04;
    pub const SAMPLING: u64 = 0x05;
    pub const CLIENT: u64 = 0x06;
    pub const SHUFFLE: u64 = 0x07;
    pub const NOISE: u64 = 0x08;
}

/// A deterministic random stream addressed by (seed, path).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    path: Vec<u64>,
    key: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            path: Vec::new(),
            key: mix64(seed ^ GAMMA),
            counter: 0,
        }
    }

    /// Derive the child stream for one more path element. Purely functional:
    /// the parent is unchanged and the child starts at counter zero.
    pub fn child(&self, element: u64) -> Self {
        let mut path = self.path.clone();
        path.push(element);
        Self {
            seed: self.seed,
            path,
            key: mix64(self.key ^ mix64(element.wrapping_add(GAMMA))),
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = mix64(
            self.key
                .wrapping_add(self.counter.wrapping_mul(GAMMA))
                .wrapping_add(GAMMA),
        );
        self.counter += 1;
        v
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1); rejects exact zeros so callers may take logs.
    #[inline]
    pub fn next_open_f64(&mut self) -> f64 {
        loop {
            let v = self.next_f64();
            if v > 0.0 {
                return v;
            }
        }
    }

    /// Uniform index in [0, n).
    #[inline]
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// One standard-normal draw via the polar Box-Muller transform.
    /// The spare of each generated pair is discarded, which keeps a stream's
    /// output a pure function of its counter history.
    pub fn next_standard_normal(&mut self) -> f64 {
        self.next_normal_pair().0
    }

    /// A pair of independent standard-normal draws (polar Box-Muller).
    pub fn next_normal_pair(&mut self) -> (f64, f64) {
        loop {
            let u = 2.0 * self.next_f64() - 1.0;
            let v = 2.0 * self.next_f64() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let m = (-2.0 * s.ln() / s).sqrt();
                return (u * m, v * m);
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, values: &mut [T]) {
        for i in (1..values.len()).rev() {
            let j = self.next_index(i + 1);
            values.swap(i, j);
        }
    }

    /// Sample `k` distinct indices from [0, n), returned in ascending order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        debug_assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.next_index(n - i);
            pool.swap(i, j);
        }
        let mut picked = pool[..k].to_vec();
        picked.sort_unstable();
        picked
    }
}
