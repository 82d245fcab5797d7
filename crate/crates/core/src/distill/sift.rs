use rand::seq::index;
use rand::Rng;

use crate::bits::BitBuf;
use crate::error::{Error, Result};
use crate::timebin::{Basis, WavelengthChannel};

/// Matching-basis key material held by both parties.
#[derive(Debug, Clone, PartialEq)]
pub struct SiftedBlock {
    pub alice: BitBuf,
    pub bob: BitBuf,
    pub channel: WavelengthChannel,
    /// First and last epoch (inclusive) contributing bits.
    pub epoch_range: (u64, u64),
}

impl SiftedBlock {
    pub fn new(alice: BitBuf, bob: BitBuf, channel: WavelengthChannel, epoch_range: (u64, u64)) -> Result<Self> {
        if alice.len() != bob.len() {
            return Err(Error::LengthMismatch(format!(
                "alice holds {} bits, bob {}",
                alice.len(),
                bob.len()
            )));
        }
        Ok(Self {
            alice,
            bob,
            channel,
            epoch_range,
        })
    }

    pub fn len(&self) -> usize {
        self.alice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alice.is_empty()
    }

    pub fn mismatches(&self) -> usize {
        self.alice.hamming_distance(&self.bob)
    }
}

/// Keeps the positions where both parties used the same basis.
///
/// Returns `Ok(None)` when no position survives.
pub fn sift(
    alice_bits: &BitBuf,
    alice_bases: &[Basis],
    bob_bits: &BitBuf,
    bob_bases: &[Basis],
    channel: WavelengthChannel,
    epoch_range: (u64, u64),
) -> Result<Option<SiftedBlock>> {
    let n = alice_bits.len();
    if alice_bases.len() != n || bob_bits.len() != n || bob_bases.len() != n {
        return Err(Error::LengthMismatch(format!(
            "sift inputs of lengths {n}, {}, {}, {}",
            alice_bases.len(),
            bob_bits.len(),
            bob_bases.len()
        )));
    }
    let keep = |i: usize| alice_bases[i] == bob_bases[i];
    let alice = alice_bits.select(keep);
    if alice.is_empty() {
        return Ok(None);
    }
    let bob = bob_bits.select(keep);
    SiftedBlock::new(alice, bob, channel, epoch_range).map(Some)
}

/// Random block of `n` bits whose Bob copy differs in exactly `errors`
/// uniformly placed positions. Stands in for recorded key material when only
/// counts are simulated.
pub fn synthetic_block<R: Rng + ?Sized>(
    n: usize,
    errors: usize,
    channel: WavelengthChannel,
    epoch_range: (u64, u64),
    rng: &mut R,
) -> Result<SiftedBlock> {
    if errors > n {
        return Err(Error::Domain(format!("{errors} errors in a block of {n} bits")));
    }
    let alice = BitBuf::random(n, rng);
    let mut bob = alice.clone();
    for i in index::sample(rng, n, errors) {
        bob.flip(i);
    }
    SiftedBlock::new(alice, bob, channel, epoch_range)
}

/// Result of publicly comparing a random sample of the sifted key.
#[derive(Debug, Clone, PartialEq)]
pub struct QberEstimate {
    pub estimated_qber: f64,
    pub remaining: SiftedBlock,
    pub disclosed: usize,
}

/// Discloses a uniformly random `sample_fraction` of the block, compares it,
/// and removes the disclosed positions from the key.
pub fn estimate_qber<R: Rng + ?Sized>(
    block: &SiftedBlock,
    sample_fraction: f64,
    sample_floor: usize,
    rng: &mut R,
) -> Result<QberEstimate> {
    if !(sample_fraction > 0.0 && sample_fraction < 1.0) {
        return Err(Error::Domain(format!("sample fraction {sample_fraction}")));
    }
    let n = block.len();
    let sample = (n as f64 * sample_fraction).round() as usize;
    if sample < sample_floor || sample == 0 {
        return Err(Error::BlockTooSmall {
            sample,
            floor: sample_floor,
        });
    }
    let mut disclosed = vec![false; n];
    let mut errors = 0usize;
    for i in index::sample(rng, n, sample) {
        disclosed[i] = true;
        if block.alice.get(i) != block.bob.get(i) {
            errors += 1;
        }
    }
    let remaining = SiftedBlock {
        alice: block.alice.select(|i| !disclosed[i]),
        bob: block.bob.select(|i| !disclosed[i]),
        channel: block.channel,
        epoch_range: block.epoch_range,
    };
    Ok(QberEstimate {
        estimated_qber: errors as f64 / sample as f64,
        remaining,
        disclosed: sample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::tests::planted_block;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ch() -> WavelengthChannel {
        WavelengthChannel::new(0, 1547.72).unwrap()
    }

    #[test]
    fn identity_and_complementary_sift() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = BitBuf::random(100, &mut rng);
        let b = BitBuf::random(100, &mut rng);
        let bases: Vec<Basis> = (0..100).map(|_| Basis::from_bit(rng.random())).collect();
        let s = sift(&a, &bases, &b, &bases, ch(), (0, 0)).unwrap().unwrap();
        assert_eq!(s.len(), 100);
        assert_eq!(s.alice, a);

        let flipped: Vec<Basis> = bases
            .iter()
            .map(|&x| if x == Basis::Time { Basis::Phase } else { Basis::Time })
            .collect();
        assert!(sift(&a, &bases, &b, &flipped, ch(), (0, 0)).unwrap().is_none());
        assert!(matches!(
            sift(&a, &bases[..99], &b, &bases, ch(), (0, 0)),
            Err(Error::LengthMismatch(_))
        ));
    }

    #[test]
    fn sift_preserves_order() {
        let a = BitBuf::parse("101100").unwrap();
        let b = BitBuf::parse("111000").unwrap();
        use Basis::*;
        let ab = [Time, Phase, Time, Time, Phase, Phase];
        let bb = [Time, Time, Time, Phase, Phase, Time];
        let s = sift(&a, &ab, &b, &bb, ch(), (3, 4)).unwrap().unwrap();
        assert_eq!(s.alice.to_string(), "110");
        assert_eq!(s.bob.to_string(), "110");
        assert_eq!(s.epoch_range, (3, 4));
    }

    #[test]
    fn random_bases_keep_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let a = BitBuf::random(n, &mut rng);
        let ab: Vec<Basis> = (0..n).map(|_| Basis::from_bit(rng.random())).collect();
        let bb: Vec<Basis> = (0..n).map(|_| Basis::from_bit(rng.random())).collect();
        let s = sift(&a, &ab, &a, &bb, ch(), (0, 0)).unwrap().unwrap();
        let frac = s.len() as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.01, "{frac}");
    }

    #[test]
    fn estimate_on_identical_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let block = planted_block(10_000, 0, &mut rng);
        let est = estimate_qber(&block, 0.05, 100, &mut rng).unwrap();
        assert_eq!(est.estimated_qber, 0.0);
        assert_eq!(est.disclosed, 500);
        assert_eq!(est.remaining.len(), 10_000 - est.disclosed);
    }

    #[test]
    fn estimate_planted_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 1_000_000;
        let block = planted_block(n, 17_000, &mut rng);
        let est = estimate_qber(&block, 0.05, 100, &mut rng).unwrap();
        assert!((est.estimated_qber - 0.017).abs() < 0.003);
        assert_eq!(est.remaining.len(), n - est.disclosed);
        // Removed errors are exactly the ones found in the sample.
        let found = (est.estimated_qber * est.disclosed as f64).round() as usize;
        assert_eq!(est.remaining.mismatches(), 17_000 - found);
    }

    #[test]
    fn estimate_rejects_small_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let block = planted_block(1000, 10, &mut rng);
        assert!(matches!(
            estimate_qber(&block, 0.05, 100, &mut rng),
            Err(Error::BlockTooSmall { sample: 50, floor: 100 })
        ));
        assert!(estimate_qber(&block, 1.0, 1, &mut rng).is_err());
    }
}
