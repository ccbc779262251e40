use rand::Rng;

use super::Threshold;

/// Outcome of small cell adjustment on one count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScaResult {
    pub masked: u64,
    /// Whether the `f <= K` branch fired. A count equal to K comes back as K
    /// with `randomized = true`, which the audit needs to tell apart from a
    /// large cell.
    pub randomized: bool,
}

/// Small cell adjustment.
///
/// Counts above K pass through. A count `f` in `0..=K` becomes K with
/// probability `f/K` and 0 otherwise, so the result is unbiased and never
/// more than `K - 1` away from `f`. Exactly one integer draw is consumed per
/// small count, which keeps seeded table builds reproducible.
pub fn apply_sca<R: Rng + ?Sized>(f: u64, k: Threshold, rng: &mut R) -> ScaResult {
    let k = k.get();
    if f > k {
        return ScaResult {
            masked: f,
            randomized: false,
        };
    }
    let masked = if rng.gen_range(0..k) < f { k } else { 0 };
    ScaResult {
        masked,
        randomized: true,
    }
}

/// Whether `masked` is a possible SCA output for true count `f`: zero only
/// from `f < K`, K only from `0 < f <= K`, anything above K unchanged.
pub fn is_sca_output(f: u64, masked: u64, k: Threshold) -> bool {
    let k = k.get();
    if f > k {
        masked == f
    } else {
        (masked == 0 && f < k) || (masked == k && f > 0)
    }
}
