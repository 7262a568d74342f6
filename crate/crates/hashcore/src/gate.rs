//! Cryptographic hash gates.
//!
//! The production gate is SHA-256. A truncated gate keeps only the leading
//! `t` bits of the digest (zero-padding the rest back to 32 octets) so that
//! collisions become findable at desk scale for reduction testing.

use sha2::{Digest, Sha256};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

/// 32-octet hash-gate output; doubles as the hash seed for widget generation.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest256(pub [u8; 32]);

impl Digest256 {
    pub const LEN: usize = 32;

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let v = hex::decode(s)?;
        let arr: [u8; 32] = v
            .try_into()
            .map_err(|_| hex::FromHexError::InvalidStringLength)?;
        Ok(Digest256(arr))
    }
}

impl fmt::Debug for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest256({})", self.to_hex())
    }
}

impl fmt::Display for Digest256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// Which gate to apply: the full SHA-256 gate or a truncated test gate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateSpec {
    /// Standard SHA-256, all 256 bits significant.
    Full,
    /// Only the leading `bits` bits of the SHA-256 digest are significant;
    /// the remaining octets are zero. Effective codomain size 2^bits.
    Truncated { bits: u16 },
}

impl GateSpec {
    pub fn truncated(bits: u16) -> Result<Self, GateError> {
        if bits < 8 || bits > 256 || bits % 8 != 0 {
            return Err(GateError::BadTruncation(bits));
        }
        Ok(GateSpec::Truncated { bits })
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GateError {
    #[error("truncation width {0} must be a multiple of 8 in 8..=256")]
    BadTruncation(u16),
}

static GATE_CALLS: AtomicU64 = AtomicU64::new(0);

/// Number of gate invocations so far in this process. Test instrumentation.
#[doc(hidden)]
pub fn gate_call_count() -> u64 {
    GATE_CALLS.load(Ordering::Relaxed)
}

/// Apply a hash gate to arbitrary data. Empty input is allowed.
pub fn gate(spec: GateSpec, data: &[u8]) -> Digest256 {
    GATE_CALLS.fetch_add(1, Ordering::Relaxed);
    let full: [u8; 32] = Sha256::digest(data).into();
    match spec {
        GateSpec::Full => Digest256(full),
        GateSpec::Truncated { bits } => {
            let keep = (bits as usize) / 8;
            let mut out = [0u8; 32];
            out[..keep].copy_from_slice(&full[..keep]);
            Digest256(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_golden_vectors() {
        // FIPS 180-4 reference values
        assert_eq!(
            gate(GateSpec::Full, b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            gate(GateSpec::Full, b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(
            gate(GateSpec::Full, b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq").to_hex(),
            "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1"
        );
    }

    #[test]
    fn truncated_keeps_leading_bits_only() {
        let spec = GateSpec::truncated(16).unwrap();
        let d = gate(spec, b"abc");
        assert_eq!(&d.0[..2], &[0xba, 0x78]);
        assert!(d.0[2..].iter().all(|&b| b == 0));
    }

    #[test]
    fn truncated_prefix_matches_full() {
        for t in [8u16, 16, 24, 32, 64, 128, 256] {
            let spec = GateSpec::truncated(t).unwrap();
            for data in [&b""[..], b"abc", b"hashcore", &[0u8; 100]] {
                let full = gate(GateSpec::Full, data);
                let trunc = gate(spec, data);
                let keep = t as usize / 8;
                assert_eq!(&trunc.0[..keep], &full.0[..keep]);
                assert!(trunc.0[keep..].iter().all(|&b| b == 0));
            }
        }
    }

    #[test]
    fn bad_truncation_widths_rejected() {
        assert!(GateSpec::truncated(0).is_err());
        assert!(GateSpec::truncated(7).is_err());
        assert!(GateSpec::truncated(12).is_err());
        assert!(GateSpec::truncated(264).is_err());
        assert!(GateSpec::truncated(8).is_ok());
        assert!(GateSpec::truncated(256).is_ok());
    }

    #[test]
    fn gate_is_pure() {
        let a = gate(GateSpec::Full, b"repeat");
        let b = gate(GateSpec::Full, b"repeat");
        assert_eq!(a, b);
    }

    #[test]
    fn hex_round_trip() {
        let d = gate(GateSpec::Full, b"x");
        assert_eq!(Digest256::from_hex(&d.to_hex()).unwrap(), d);
        assert!(Digest256::from_hex("zz").is_err());
        assert!(Digest256::from_hex("ab").is_err());
    }
}
