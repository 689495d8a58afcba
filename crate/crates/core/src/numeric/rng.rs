//! Seeded pseudo-randomness with labeled substreams.
//!
//! The generator is ChaCha20 (`rand_chacha`). A root seed expands into a
//! 256-bit key via `SeedableRng::seed_from_u64`; each [`Stream`] label
//! selects a distinct ChaCha stream id under that key, so consumers never
//! share state. [`Rng::fork`] derives an indexed child (per epoch, per
//! example) from the seed and stream id alone, independent of how many
//! values the parent has already produced.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// Purpose labels for independent substreams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Init,
    Dropout,
    Masking,
    Shuffle,
    Synthesis,
    Split,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Dropout => 2,
            Stream::Masking => 3,
            Stream::Shuffle => 4,
            Stream::Synthesis => 5,
            Stream::Split => 6,
        }
    }
}

/// Single-owner random source. Not `Clone`: derive children with
/// [`Rng::substream`] or [`Rng::fork`] instead of copying state.
#[derive(Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha20Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fresh generator for `label`, starting at the beginning of its stream.
    pub fn substream(&self, label: Stream) -> Rng {
        Rng::with_stream(self.seed, label.id())
    }

    /// Deterministic child keyed by `(seed, stream, index)`.
    pub fn fork(&self, index: u64) -> Rng {
        let child = splitmix64(self.seed ^ splitmix64(index.wrapping_add(self.stream << 48)));
        Rng::with_stream(child, self.stream)
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform on [lo, hi).
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in [0, n). Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }

    /// `amount` distinct indices from `0..len`, uniformly without replacement.
    pub fn sample_indices(&mut self, len: usize, amount: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.inner, len, amount).into_vec()
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
