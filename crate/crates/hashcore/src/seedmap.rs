//! Hash-seed field extraction and the deterministic PRNG used downstream.
//!
//! A 256-bit hash seed is carved into eight 32-bit fields, one per
//! performance-profile noise channel plus two PRNG seeds. Field `i` is the
//! big-endian unsigned interpretation of digest octets `[4i, 4i+4)`, so the
//! mapping is a bijection and bit-exact across implementations.

use crate::gate::Digest256;

/// The eight 32-bit fields carved from a hash seed, in digest octet order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedFields {
    pub ialu_noise: u32,
    pub imul_noise: u32,
    pub falu_noise: u32,
    pub load_noise: u32,
    pub store_noise: u32,
    pub branch_field: u32,
    pub bbv_seed: u32,
    pub mem_seed: u32,
}

impl SeedFields {
    /// Reassemble the original digest; inverse of [`split_seed`].
    pub fn to_digest(&self) -> Digest256 {
        let mut out = [0u8; 32];
        let fields = [
            self.ialu_noise,
            self.imul_noise,
            self.falu_noise,
            self.load_noise,
            self.store_noise,
            self.branch_field,
            self.bbv_seed,
            self.mem_seed,
        ];
        for (i, f) in fields.iter().enumerate() {
            out[4 * i..4 * i + 4].copy_from_slice(&f.to_be_bytes());
        }
        Digest256(out)
    }

    /// The five count-noise fields in category order (ialu, imul, falu, load, store).
    pub fn count_noise(&self) -> [u32; 5] {
        [
            self.ialu_noise,
            self.imul_noise,
            self.falu_noise,
            self.load_noise,
            self.store_noise,
        ]
    }
}

/// Split a hash seed into its eight big-endian 32-bit fields.
pub fn split_seed(seed: &Digest256) -> SeedFields {
    let b = seed.as_bytes();
    let field = |i: usize| u32::from_be_bytes([b[4 * i], b[4 * i + 1], b[4 * i + 2], b[4 * i + 3]]);
    SeedFields {
        ialu_noise: field(0),
        imul_noise: field(1),
        falu_noise: field(2),
        load_noise: field(3),
        store_noise: field(4),
        branch_field: field(5),
        bbv_seed: field(6),
        mem_seed: field(7),
    }
}

/// SplitMix64 state. A value type; callers thread it explicitly.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Prng {
    state: u64,
}

impl Prng {
    pub fn new(state: u64) -> Self {
        Prng { state }
    }

    /// Seed from a 32-bit field by zero extension.
    pub fn from_seed32(seed: u32) -> Self {
        Prng { state: seed as u64 }
    }

    /// SplitMix64 step.
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Draw in `[0, range)` by fixed-point scaling: `draw * range >> 64`.
    /// Rejection-free; bias is at most `range / 2^64`.
    #[inline]
    pub fn next_below(&mut self, range: u64) -> u64 {
        debug_assert!(range > 0);
        ((self.next_u64() as u128 * range as u128) >> 64) as u64
    }

    /// Draw in `[0, 1)` from the high 53 bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Fill a buffer with successive little-endian 64-bit draws.
    pub fn fill_bytes(&mut self, buf: &mut [u8]) {
        let mut chunks = buf.chunks_exact_mut(8);
        for chunk in &mut chunks {
            chunk.copy_from_slice(&self.next_u64().to_le_bytes());
        }
        let rem = chunks.into_remainder();
        if !rem.is_empty() {
            let word = self.next_u64().to_le_bytes();
            rem.copy_from_slice(&word[..rem.len()]);
        }
    }
}
