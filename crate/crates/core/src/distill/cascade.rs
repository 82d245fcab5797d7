//! Cascade interactive error correction (original four-pass variant).
//!
//! Both parties run in one process: a "disclosed parity" is computed on
//! Alice's buffer directly and counted as one leaked bit. Pass 1 uses the
//! identity ordering; each later pass uses a fresh random permutation shared
//! by the two parties and doubles the block size. Every correction is
//! propagated to the blocks containing the flipped bit in all passes run so
//! far, which may expose further odd-parity blocks.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::sift::SiftedBlock;
use crate::bits::BitBuf;
use crate::error::{Error, Result};

pub const CASCADE_PASSES: usize = 4;
pub const MAX_CASCADE_QBER: f64 = 0.11;

/// First-pass block size for an expected error rate.
pub fn first_block_size(qber: f64) -> usize {
    (0.73 / qber).ceil() as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconciledBlock {
    pub bits: BitBuf,
    pub leaked_bits: u64,
    pub disclosed_sample_bits: u64,
    pub estimated_qber: f64,
}

/// Detailed outcome of one Cascade execution.
#[derive(Debug, Clone, PartialEq)]
pub struct CascadeRun {
    pub corrected: BitBuf,
    pub top_level_parities: u64,
    pub search_parities: u64,
    pub corrections: u64,
    pub verified: bool,
}

impl CascadeRun {
    pub fn leaked_bits(&self) -> u64 {
        self.top_level_parities + self.search_parities
    }
}

struct Pass {
    block_size: usize,
    /// Position within the pass -> key index.
    order: Vec<u32>,
    /// Key index -> position within the pass.
    position: Vec<u32>,
    /// Parity of (alice xor bob) for each block.
    odd: Vec<bool>,
}

impl Pass {
    fn block_of(&self, key_index: usize) -> usize {
        self.position[key_index] as usize / self.block_size
    }

    fn block_range(&self, block: usize) -> std::ops::Range<usize> {
        let start = block * self.block_size;
        start..(start + self.block_size).min(self.order.len())
    }
}

fn digest(bits: &BitBuf) -> [u8; 32] {
    Sha256::digest(bits.to_bytes()).into()
}

/// Runs Cascade with an explicit first-pass block size.
pub fn cascade_with_block_size<R: Rng + ?Sized>(
    alice: &BitBuf,
    bob: &BitBuf,
    first_block: usize,
    passes: usize,
    rng: &mut R,
) -> Result<CascadeRun> {
    if alice.len() != bob.len() {
        return Err(Error::LengthMismatch(format!(
            "alice holds {} bits, bob {}",
            alice.len(),
            bob.len()
        )));
    }
    if alice.is_empty() {
        return Err(Error::EmptyBlock("cascade on an empty block"));
    }
    let n = alice.len();
    let mut bob = bob.clone();
    let mut run = CascadeRun {
        corrected: BitBuf::new(),
        top_level_parities: 0,
        search_parities: 0,
        corrections: 0,
        verified: false,
    };
    let mut history: Vec<Pass> = Vec::with_capacity(passes);
    let mut pending: Vec<(usize, usize)> = Vec::new();

    for pass_index in 0..passes {
        let block_size = first_block.max(1).saturating_mul(1 << pass_index).min(n);
        let mut order: Vec<u32> = (0..n as u32).collect();
        if pass_index > 0 {
            order.shuffle(rng);
        }
        let mut position = vec![0u32; n];
        for (pos, &k) in order.iter().enumerate() {
            position[k as usize] = pos as u32;
        }
        let blocks = n.div_ceil(block_size);
        let odd: Vec<bool> = (0..blocks)
            .map(|b| {
                let start = b * block_size;
                order[start..(start + block_size).min(n)]
                    .iter()
                    .fold(false, |acc, &k| acc ^ alice.get(k as usize) ^ bob.get(k as usize))
            })
            .collect();
        run.top_level_parities += blocks as u64;
        pending.extend(odd.iter().enumerate().filter(|(_, &o)| o).map(|(b, _)| (pass_index, b)).rev());
        history.push(Pass {
            block_size,
            order,
            position,
            odd,
        });

        while let Some((p, b)) = pending.pop() {
            if !history[p].odd[b] {
                continue;
            }
            let (key_index, asked) = binary_search(alice, &bob, &history[p], b);
            run.search_parities += asked;
            run.corrections += 1;
            bob.flip(key_index);
            for (q, pass) in history.iter_mut().enumerate() {
                let blk = pass.block_of(key_index);
                pass.odd[blk] = !pass.odd[blk];
                if pass.odd[blk] {
                    pending.push((q, blk));
                }
            }
        }
    }

    run.verified = digest(alice) == digest(&bob);
    run.corrected = bob;
    Ok(run)
}

/// Locates one error inside an odd block by halving, disclosing one parity
/// per halving step. Returns the key index and the number of parities asked.
fn binary_search(alice: &BitBuf, bob: &BitBuf, pass: &Pass, block: usize) -> (usize, u64) {
    let range = pass.block_range(block);
    let mut slice = &pass.order[range];
    let mut asked = 0u64;
    while slice.len() > 1 {
        let (left, right) = slice.split_at(slice.len() / 2);
        asked += 1;
        let left_odd = left
            .iter()
            .fold(false, |acc, &k| acc ^ alice.get(k as usize) ^ bob.get(k as usize));
        slice = if left_odd { left } else { right };
    }
    (slice[0] as usize, asked)
}

/// Reconciles Bob's buffer to Alice's.
///
/// `estimated_qber` sets the first-pass block size and must lie in (0, 0.11].
/// Fails with [`Error::ReconciliationFailed`] when the final hash comparison
/// shows residual errors; the caller discards the block.
pub fn cascade_reconcile<R: Rng + ?Sized>(
    block: &SiftedBlock,
    estimated_qber: f64,
    rng: &mut R,
) -> Result<ReconciledBlock> {
    if !(estimated_qber > 0.0 && estimated_qber <= MAX_CASCADE_QBER) {
        return Err(Error::Domain(format!(
            "cascade needs an estimated QBER in (0, {MAX_CASCADE_QBER}], got {estimated_qber}"
        )));
    }
    let run = cascade_with_block_size(
        &block.alice,
        &block.bob,
        first_block_size(estimated_qber),
        CASCADE_PASSES,
        rng,
    )?;
    if !run.verified {
        return Err(Error::ReconciliationFailed {
            passes: CASCADE_PASSES,
        });
    }
    Ok(ReconciledBlock {
        leaked_bits: run.leaked_bits(),
        bits: run.corrected,
        disclosed_sample_bits: 0,
        estimated_qber,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::tests::planted_block;
    use crate::timebin::binary_entropy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straightforward reference: after each pass, repeatedly scan every
    /// block of every pass so far (recomputing parities from scratch) and
    /// bisect the first odd one found.
    fn reference_cascade(alice: &[bool], bob: &[bool], k1: usize, passes: usize, seed: u64) -> (Vec<bool>, u64) {
        let n = alice.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut bob = bob.to_vec();
        let mut orders: Vec<(usize, Vec<u32>)> = Vec::new();
        let mut leaked = 0u64;
        let parity = |ids: &[u32], bob: &[bool]| ids.iter().filter(|&&k| alice[k as usize] != bob[k as usize]).count() % 2 == 1;
        for p in 0..passes {
            let k = (k1 << p).min(n);
            let mut order: Vec<u32> = (0..n as u32).collect();
            if p > 0 {
                order.shuffle(&mut rng);
            }
            leaked += n.div_ceil(k) as u64;
            orders.push((k, order));
            loop {
                let mut found = None;
                'scan: for (k, order) in &orders {
                    for chunk in order.chunks(*k) {
                        if parity(chunk, &bob) {
                            found = Some(chunk.to_vec());
                            break 'scan;
                        }
                    }
                }
                let Some(mut ids) = found else { break };
                while ids.len() > 1 {
                    let half = ids.len() / 2;
                    leaked += 1;
                    ids = if parity(&ids[..half], &bob) {
                        ids[..half].to_vec()
                    } else {
                        ids[half..].to_vec()
                    };
                }
                let i = ids[0] as usize;
                bob[i] = !bob[i];
            }
        }
        (bob, leaked)
    }

    #[test]
    fn no_errors_leaks_only_top_level_parities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block = planted_block(10_000, 0, &mut rng);
        let r = cascade_reconcile(&block, 0.01, &mut rng).unwrap();
        assert_eq!(r.bits, block.alice);
        let k1 = first_block_size(0.01);
        let expected: usize = (0..4).map(|p| 10_000usize.div_ceil((k1 << p).min(10_000))).sum();
        assert_eq!(r.leaked_bits, expected as u64);
    }

    #[test]
    fn single_error_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let block = planted_block(1024, 1, &mut rng);
        let run = cascade_with_block_size(&block.alice, &block.bob, 64, 4, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        assert!(run.verified);
        assert_eq!(run.corrected, block.alice);
        let a: Vec<bool> = block.alice.iter().collect();
        let b: Vec<bool> = block.bob.iter().collect();
        let (ref_bob, ref_leak) = reference_cascade(&a, &b, 64, 4, 77);
        assert_eq!(ref_bob, a);
        assert_eq!(run.leaked_bits(), ref_leak);
        // 16 + 8 + 4 + 2 block parities plus a 6-step bisection of one 64-bit block.
        assert_eq!(run.leaked_bits(), 36);
    }

    #[test]
    fn multi_error_agrees_with_reference_on_result() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let block = planted_block(4000, 60, &mut rng);
            let run = cascade_with_block_size(&block.alice, &block.bob, 49, 4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let a: Vec<bool> = block.alice.iter().collect();
            let b: Vec<bool> = block.bob.iter().collect();
            let (ref_bob, _) = reference_cascade(&a, &b, 49, 4, seed);
            let ref_ok = ref_bob == a;
            assert_eq!(run.verified, ref_ok, "seed {seed}");
        }
    }

    #[test]
    fn corrects_typical_block_with_bounded_leakage() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let block = planted_block(n, 1700, &mut rng);
        let r = cascade_reconcile(&block, 0.017, &mut rng).unwrap();
        assert_eq!(r.bits, block.alice);
        let ratio = r.leaked_bits as f64 / n as f64;
        assert!(ratio <= 1.25 * binary_entropy(0.017).unwrap(), "{ratio}");
    }

    #[test]
    fn rejects_out_of_range_qber() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let block = planted_block(1000, 5, &mut rng);
        assert!(cascade_reconcile(&block, 0.0, &mut rng).is_err());
        assert!(cascade_reconcile(&block, 0.2, &mut rng).is_err());
    }

    #[test]
    fn reports_failure_when_errors_survive() {
        // One pass with a block spanning the key cannot fix an even error count.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let block = planted_block(256, 2, &mut rng);
        let run = cascade_with_block_size(&block.alice, &block.bob, 256, 1, &mut rng).unwrap();
        assert!(!run.verified);
    }
}
