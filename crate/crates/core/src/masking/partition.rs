use serde::{Deserialize, Serialize};

use super::{is_sca_output, MaskError, Threshold};

/// Split of an aggregation group into small cells masked to 0 (S₀), small
/// cells masked to K (S_K), and large cells, with the true sums over each
/// side.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SmallCellPartition {
    pub s0_size: u64,
    pub sk_size: u64,
    pub f_small: u64,
    pub f_large: u64,
    /// Stored SCA mask of the lone small cell when exactly one exists.
    pub singleton_sca: Option<u64>,
}

impl SmallCellPartition {
    /// Partition as seen by someone who only knows the slot counts, e.g. an
    /// attacker reading the masked finest table. The singleton mask follows
    /// from which side the lone cell sits on.
    pub fn from_counts(s0_size: u64, sk_size: u64, f_small: u64, f_large: u64, k: Threshold) -> Self {
        let singleton_sca = match (s0_size, sk_size) {
            (1, 0) => Some(0),
            (0, 1) => Some(k.get()),
            _ => None,
        };
        SmallCellPartition {
            s0_size,
            sk_size,
            f_small,
            f_large,
            singleton_sca,
        }
    }

    /// |S|
    #[inline]
    pub fn small_count(&self) -> u64 {
        self.s0_size + self.sk_size
    }

    pub fn true_total(&self) -> u64 {
        self.f_small + self.f_large
    }

    pub fn interval(&self, k: Threshold) -> Result<FeasibleInterval, MaskError> {
        feasible_interval(self.s0_size, self.sk_size, k)
    }
}

/// Incremental form of [`partition_small_cells`], used by the table engine
/// so groups can be accumulated without materializing cell lists.
#[derive(Debug, Clone)]
pub struct PartitionBuilder {
    k: Threshold,
    index: usize,
    last_small_mask: u64,
    acc: SmallCellPartition,
}

impl PartitionBuilder {
    pub fn new(k: Threshold) -> Self {
        PartitionBuilder {
            k,
            index: 0,
            last_small_mask: 0,
            acc: SmallCellPartition::default(),
        }
    }

    /// Adds one stored cell. Cells with a true count of zero stand for
    /// unobserved combinations and are skipped, so explicit zero rows never
    /// change a partition.
    pub fn push(&mut self, true_count: u64, masked: u64) -> Result<(), MaskError> {
        let k = self.k.get();
        let index = self.index;
        self.index += 1;
        let bad = || MaskError::InconsistentCell {
            index,
            true_count,
            masked,
            k,
        };
        if !is_sca_output(true_count, masked, self.k) {
            return Err(bad());
        }
        if true_count == 0 {
            return Ok(());
        }
        if true_count > k {
            self.acc.f_large += true_count;
            return Ok(());
        }
        if masked == 0 {
            self.acc.s0_size += 1;
        } else {
            self.acc.sk_size += 1;
        }
        self.acc.f_small += true_count;
        self.last_small_mask = masked;
        Ok(())
    }

    pub fn finish(self) -> SmallCellPartition {
        let mut p = self.acc;
        p.singleton_sca = (p.small_count() == 1).then_some(self.last_small_mask);
        p
    }
}

/// Partitions a group of stored `(true, masked)` cells.
///
/// A masked value that the SCA rule could not have produced for its true
/// count is rejected with the offending index.
pub fn partition_small_cells(cells: &[(u64, u64)], k: Threshold) -> Result<SmallCellPartition, MaskError> {
    let mut b = PartitionBuilder::new(k);
    for &(t, m) in cells {
        b.push(t, m)?;
    }
    Ok(b.finish())
}

/// The interval D of small-cell sums consistent with the masks: every S_K
/// cell holds 1..=K and every S₀ cell holds 0..=K-1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeasibleInterval {
    pub lower: u64,
    pub upper: u64,
}

impl FeasibleInterval {
    #[inline]
    pub fn contains(&self, v: u64) -> bool {
        self.lower <= v && v <= self.upper
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> u64 {
        self.upper - self.lower + 1
    }

    pub fn iter(&self) -> std::ops::RangeInclusive<u64> {
        self.lower..=self.upper
    }
}

pub fn feasible_interval(s0_size: u64, sk_size: u64, k: Threshold) -> Result<FeasibleInterval, MaskError> {
    if s0_size + sk_size == 0 {
        return Err(MaskError::EmptySmallCellSet);
    }
    let k = k.get();
    Ok(FeasibleInterval {
        lower: sk_size,
        upper: k * sk_size + (k - 1) * s0_size,
    })
}
