//! 64-bit FNV-1a digests of tensors.

use crate::dense::DenseTensor;
use crate::scalar::Scalar;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Canonical byte stream of a dense tensor: rank as u64, each dim as u64,
/// then every element in row-major order, all little-endian.
pub fn canonical_bytes<T: Scalar>(t: &DenseTensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * (1 + t.shape().len()) + T::BYTES * t.len());
    out.extend_from_slice(&(t.shape().len() as u64).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.extend_le(&mut out);
    }
    out
}

pub fn tensor_digest<T: Scalar>(t: &DenseTensor<T>) -> u64 {
    fnv1a64(&canonical_bytes(t))
}
