use serde::{Deserialize, Serialize};

use super::{feasible_interval, FeasibleInterval, MaskError, SmallCellPartition, Threshold};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IlbaCase {
    /// No small cells, or they sum to zero.
    Empty,
    /// Exactly one small cell; its stored SCA mask is reused.
    Singleton,
    General,
}

/// Relocation of the candidate block in step 3.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shift {
    #[default]
    None,
    /// Block protruded below D and moved up by K ("type1").
    Type1Up,
    /// Block protruded above D and moved down by K ("type2").
    Type2Down,
}

/// Intermediate values of the general case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IlbaSteps {
    pub center1: u64,
    /// min(C) before shifting.
    pub candidate_low: u64,
    pub interval: FeasibleInterval,
    pub shift: Shift,
    pub center2: u64,
    pub post_processed: bool,
}

impl IlbaSteps {
    /// The K candidate sums around `center2`, i.e. the block after shifting.
    pub fn shifted_candidates(&self, k: Threshold) -> std::ops::RangeInclusive<u64> {
        let lo = self.center2 - k.half();
        lo..=lo + k.get() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IlbaTrace {
    pub case: IlbaCase,
    pub steps: Option<IlbaSteps>,
    /// The masked small-cell sum that gets released.
    pub masked_small: u64,
}

impl IlbaTrace {
    pub fn shift(&self) -> Shift {
        self.steps.map(|s| s.shift).unwrap_or_default()
    }

    pub fn post_processed(&self) -> bool {
        self.steps.is_some_and(|s| s.post_processed)
    }
}

/// Steps 1-4 for a group with at least two small cells and a positive
/// small-cell sum.
///
/// The candidate block C is the run of K consecutive integers
/// `qK+1 ..= qK+K` holding `f_small`. If C sticks out of D it is moved one
/// block inward, which always lands it inside D. A centre of `1 + ⌊K/2⌋`
/// would release a value in `1..K`, so it is lifted to K.
pub fn ilba_general(p: &SmallCellPartition, k: Threshold) -> Result<IlbaTrace, MaskError> {
    if p.small_count() < 2 {
        return Err(MaskError::Precondition(format!(
            "needs at least two small cells, got {}",
            p.small_count()
        )));
    }
    if p.f_small == 0 {
        return Err(MaskError::Precondition("small-cell sum is zero".into()));
    }
    let d = feasible_interval(p.s0_size, p.sk_size, k)?;
    if !d.contains(p.f_small) {
        return Err(MaskError::Precondition(format!(
            "small-cell sum {} outside feasible interval {}..={}",
            p.f_small, d.lower, d.upper
        )));
    }

    let kv = k.get();
    let half = k.half();
    // step 1
    let center1 = p.f_small - (p.f_small - 1) % kv + half;
    // step 2
    let candidate_low = center1 - half;
    let candidate_high = candidate_low + kv - 1;
    // step 3
    let (shift, center2) = if candidate_low < d.lower {
        (Shift::Type1Up, center1 + kv)
    } else if d.upper < candidate_high {
        (Shift::Type2Down, center1 - kv)
    } else {
        (Shift::None, center1)
    };
    // step 4
    let post_processed = center2 == 1 + half;
    let masked_small = if post_processed { kv } else { center2 };

    Ok(IlbaTrace {
        case: IlbaCase::General,
        steps: Some(IlbaSteps {
            center1,
            candidate_low,
            interval: d,
            shift,
            center2,
            post_processed,
        }),
        masked_small,
    })
}

/// Masks the small-cell sum of one aggregation group.
///
/// Pure in the partition: the singleton case reuses the stored mask and no
/// other branch draws randomness, so repeated calls always agree.
pub fn apply_ilba(p: &SmallCellPartition, k: Threshold) -> Result<IlbaTrace, MaskError> {
    if p.small_count() == 0 || p.f_small == 0 {
        return Ok(IlbaTrace {
            case: IlbaCase::Empty,
            steps: None,
            masked_small: 0,
        });
    }
    if p.small_count() == 1 {
        let masked_small = p
            .singleton_sca
            .ok_or_else(|| MaskError::Precondition("singleton partition without a stored SCA mask".into()))?;
        return Ok(IlbaTrace {
            case: IlbaCase::Singleton,
            steps: None,
            masked_small,
        });
    }
    ilba_general(p, k)
}

#[inline]
pub fn masked_aggregate(f_large: u64, masked_small: u64) -> u64 {
    f_large + masked_small
}
