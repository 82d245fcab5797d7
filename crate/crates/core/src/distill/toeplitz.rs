//! Privacy amplification by Toeplitz hashing over GF(2).
//!
//! The m×n matrix is T[i][j] = seed[i − j + n − 1], so output bit i is the
//! coefficient of z^(n−1+i) in the carry-less product seed(z)·x(z). The
//! product is computed with Karatsuba multiplication on 64-bit words.

use serde::{Deserialize, Serialize};

use super::cascade::ReconciledBlock;
use crate::bits::BitBuf;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecureKeyBlock {
    pub bits: BitBuf,
    pub toeplitz_seed: BitBuf,
}

/// Portable 64×64 → 128-bit carry-less multiply.
fn clmul_soft(a: u64, b: u64) -> (u64, u64) {
    let (mut lo, mut hi) = (0u64, 0u64);
    for i in 0..64 {
        if (a >> i) & 1 == 1 {
            lo ^= b << i;
            if i > 0 {
                hi ^= b >> (64 - i);
            }
        }
    }
    (lo, hi)
}

#[cfg(target_arch = "x86_64")]
mod hw {
    use std::arch::x86_64::*;

    /// Schoolbook product using PCLMULQDQ.
    ///
    /// # Safety
    /// The CPU must support `pclmulqdq` and `sse2`.
    #[target_feature(enable = "pclmulqdq,sse2")]
    pub unsafe fn schoolbook(a: &[u64], b: &[u64], out: &mut [u64]) {
        for (i, &x) in a.iter().enumerate() {
            if x == 0 {
                continue;
            }
            let xv = _mm_set_epi64x(0, x as i64);
            for (j, &y) in b.iter().enumerate() {
                let p = _mm_clmulepi64_si128(xv, _mm_set_epi64x(0, y as i64), 0x00);
                out[i + j] ^= _mm_cvtsi128_si64(p) as u64;
                out[i + j + 1] ^= _mm_extract_epi64(p, 1) as u64;
            }
        }
    }
}

fn schoolbook(a: &[u64], b: &[u64], out: &mut [u64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("pclmulqdq") && std::is_x86_feature_detected!("sse4.1") {
            // SAFETY: the required CPU features were just detected.
            unsafe { hw::schoolbook(a, b, out) };
            return;
        }
    }
    schoolbook_soft(a, b, out);
}

fn schoolbook_soft(a: &[u64], b: &[u64], out: &mut [u64]) {
    for (i, &x) in a.iter().enumerate() {
        if x == 0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            let (lo, hi) = clmul_soft(x, y);
            out[i + j] ^= lo;
            out[i + j + 1] ^= hi;
        }
    }
}

const KARATSUBA_THRESHOLD: usize = 32;

/// XORs a·b into `out` for equal-length operands.
fn karatsuba(a: &[u64], b: &[u64], out: &mut [u64]) {
    let n = a.len();
    debug_assert_eq!(n, b.len());
    if n <= KARATSUBA_THRESHOLD {
        schoolbook(a, b, out);
        return;
    }
    let k = n / 2;
    let (a0, a1) = a.split_at(k);
    let (b0, b1) = b.split_at(k);
    let hi_len = n - k;

    let mut z0 = vec![0u64; 2 * k];
    karatsuba(a0, b0, &mut z0);
    let mut z2 = vec![0u64; 2 * hi_len];
    karatsuba(a1, b1, &mut z2);
    let mut sa = a1.to_vec();
    let mut sb = b1.to_vec();
    for i in 0..k {
        sa[i] ^= a0[i];
        sb[i] ^= b0[i];
    }
    let mut z1 = vec![0u64; 2 * hi_len];
    karatsuba(&sa, &sb, &mut z1);
    for (i, v) in z0.iter().enumerate() {
        z1[i] ^= v;
    }
    for (i, v) in z2.iter().enumerate() {
        z1[i] ^= v;
    }
    for (i, v) in z0.iter().enumerate() {
        out[i] ^= v;
    }
    for (i, v) in z2.iter().enumerate() {
        out[2 * k + i] ^= v;
    }
    for (i, v) in z1.iter().enumerate() {
        out[k + i] ^= v;
    }
}

/// Full carry-less product of two word slices (little-endian bit order).
pub(crate) fn clmul(a: &[u64], b: &[u64]) -> Vec<u64> {
    let mut out = vec![0u64; a.len() + b.len()];
    if a.is_empty() || b.is_empty() {
        return out;
    }
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let width = short.len();
    let mut padded = vec![0u64; width];
    let mut scratch = vec![0u64; 2 * width];
    for (c, chunk) in long.chunks(width).enumerate() {
        padded[..chunk.len()].copy_from_slice(chunk);
        padded[chunk.len()..].fill(0);
        scratch.fill(0);
        karatsuba(short, &padded, &mut scratch);
        let offset = c * width;
        let end = (offset + 2 * width).min(out.len());
        for (o, s) in out[offset..end].iter_mut().zip(&scratch) {
            *o ^= s;
        }
    }
    out
}

/// Multiplies `input` (n bits) by the m×n Toeplitz matrix defined by `seed`.
pub fn toeplitz_hash(input: &BitBuf, m: usize, seed: &BitBuf) -> Result<BitBuf> {
    let n = input.len();
    if m == 0 {
        return Ok(BitBuf::new());
    }
    if m > n {
        return Err(Error::Domain(format!("output length {m} exceeds input length {n}")));
    }
    let expected = n + m - 1;
    if seed.len() != expected {
        return Err(Error::SeedLength {
            expected,
            actual: seed.len(),
        });
    }

    let product = clmul(input.words(), seed.words());
    let bit = |k: usize| (product[k / 64] >> (k % 64)) & 1 == 1;
    Ok((0..m).map(|i| bit(n - 1 + i)).collect())
}

/// Compresses the reconciled key to `m` bits.
pub fn toeplitz_amplify(block: &ReconciledBlock, m: usize, seed: &BitBuf) -> Result<SecureKeyBlock> {
    if m == 0 || m > block.bits.len() {
        return Err(Error::Domain(format!(
            "output length {m} outside 1..={}",
            block.bits.len()
        )));
    }
    Ok(SecureKeyBlock {
        bits: toeplitz_hash(&block.bits, m, seed)?,
        toeplitz_seed: seed.clone(),
    })
}
