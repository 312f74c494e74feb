//! Splittable, counter-style random streams.
//!
//! A stream is identified by a 64-bit key. Children are derived by hashing the
//! parent key together with a structured label, so any node of the Monte-Carlo
//! recursion owns a stream that is a pure function of the root seed and the
//! path of labels leading to it. Draws within a stream follow the SplitMix64
//! sequence seeded by the key.
//!
//! Nothing here is shared mutably: handing a stream to a worker means copying
//! it, which is what makes batch results independent of the worker count.

use rand_core::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::real::Real;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
const LABEL_SALT: u64 = 0xd1b5_4a32_d192_ed03;

/// Stafford's "mix13" finalizer, also used by SplitMix64.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Role of a child stream inside one recursion node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Branch {
    /// Recursive estimate at the current level (`(l, i)` family).
    Main,
    /// Recursive estimate at the level below (`(l-1, -i)` family).
    Prev,
    /// Importance-sampled time point.
    Time,
    /// Brownian increment for a level sample.
    Path,
    /// Brownian increment for the terminal block.
    Terminal,
    /// Coordinate draws of a stochastic Laplacian inside the nonlinearity.
    Residual,
    /// Per-point stream of a batch.
    Point,
    /// Test-point sampling.
    TestPoints,
    /// Reference-solution sampling.
    Reference,
    /// Surrogate fitting.
    Fit,
    /// Inference randomness of a run.
    Inference,
    /// Free-form use (tests, diagnostics).
    Aux,
}

impl Branch {
    fn code(self) -> u64 {
        match self {
            Branch::Main => 1,
            Branch::Prev => 2,
            Branch::Time => 3,
            Branch::Path => 4,
            Branch::Terminal => 5,
            Branch::Residual => 6,
            Branch::Point => 7,
            Branch::TestPoints => 8,
            Branch::Reference => 9,
            Branch::Fit => 10,
            Branch::Inference => 11,
            Branch::Aux => 12,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Branch::Main => "main",
            Branch::Prev => "prev",
            Branch::Time => "time",
            Branch::Path => "path",
            Branch::Terminal => "terminal",
            Branch::Residual => "residual",
            Branch::Point => "point",
            Branch::TestPoints => "test-points",
            Branch::Reference => "reference",
            Branch::Fit => "fit",
            Branch::Inference => "inference",
            Branch::Aux => "aux",
        }
    }
}

/// Label of one derivation step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamLabel {
    pub level: u32,
    pub branch: Branch,
    pub index: u64,
}

impl StreamLabel {
    pub fn new(level: u32, branch: Branch, index: u64) -> Self {
        Self { level, branch, index }
    }
}

impl std::fmt::Display for StreamLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}#{}", self.level, self.branch.name(), self.index)
    }
}

/// Deterministic random stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngStream {
    key: u64,
    state: u64,
}

impl RngStream {
    /// Root stream of a run.
    pub fn new(seed: u64) -> Self {
        let key = mix64(seed ^ LABEL_SALT);
        Self { key, state: key }
    }

    /// Identity of the stream, independent of how many draws were consumed.
    pub fn key(&self) -> u64 {
        self.key
    }

    /// Child stream for `label`. Pure in (parent key, label); the draw
    /// position of the parent is ignored.
    pub fn derive(&self, label: StreamLabel) -> Self {
        let tag = mix64(
            (u64::from(label.level) << 40)
                ^ (label.branch.code() << 32)
                ^ LABEL_SALT.wrapping_mul(label.branch.code()),
        );
        let idx = mix64(label.index.wrapping_add(GOLDEN_GAMMA).wrapping_mul(GOLDEN_GAMMA));
        let key = mix64(mix64(self.key ^ tag).wrapping_add(idx));
        Self { key, state: key }
    }

    /// Shorthand for [`derive`](Self::derive).
    pub fn child(&self, level: u32, branch: Branch, index: u64) -> Self {
        self.derive(StreamLabel::new(level, branch, index))
    }

    #[inline]
    fn next(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform draw in the open interval (0, 1).
    pub fn uniform_open<T: Real>(&mut self) -> T {
        let bits = self.next() >> 11;
        T::lit((bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64))
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in<T: Real>(&mut self, lo: T, hi: T) -> T {
        let u: T = self.uniform_open();
        lo + (hi - lo) * u
    }

    /// Uniform integer in `0..n`, `n > 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "empty range");
        // Lemire's multiply-shift; bias is below 2^-64 * n, negligible here.
        ((u128::from(self.next()) * n as u128) >> 64) as usize
    }

    /// Standard Gaussian draw.
    pub fn normal<T: Real>(&mut self) -> T {
        let z: f64 = StandardNormal.sample(self);
        T::lit(z)
    }

    /// Fills `out` with independent standard Gaussians.
    pub fn fill_normal<T: Real>(&mut self, out: &mut [T]) {
        for v in out.iter_mut() {
            *v = self.normal();
        }
    }

    /// `k` distinct indices drawn uniformly from `0..n` (partial Fisher–Yates).
    pub fn distinct_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} distinct indices from {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for j in 0..k {
            let pick = j + self.below(n - j);
            pool.swap(j, pick);
        }
        pool.truncate(k);
        pool
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        (self.next() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
