//! Integer-only masking primitives: small cell adjustment (SCA) for single
//! cells and loss-bounded aggregation (iLBA) for sums of small cells.
//!
//! Nothing in here knows about tables, files or schemas. The table engine
//! feeds groups of `(true, masked)` cell pairs through [`partition_small_cells`]
//! and [`apply_ilba`]; the audit module inverts the same functions.

mod ilba;
mod partition;
mod sca;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ilba::{apply_ilba, ilba_general, masked_aggregate, IlbaCase, IlbaSteps, IlbaTrace, Shift};
pub use partition::{feasible_interval, partition_small_cells, FeasibleInterval, PartitionBuilder, SmallCellPartition};
pub use sca::{apply_sca, is_sca_output, ScaResult};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MaskError {
    #[error("threshold K must be at least 2, got {0}")]
    ThresholdTooSmall(u64),
    #[error("cell {index}: masked value {masked} is not a valid SCA output for true count {true_count} with K={k}")]
    InconsistentCell {
        index: usize,
        true_count: u64,
        masked: u64,
        k: u64,
    },
    #[error("feasible interval is undefined for an empty small-cell set")]
    EmptySmallCellSet,
    #[error("iLBA general case precondition violated: {0}")]
    Precondition(String),
}

/// The anonymity threshold K.
///
/// Released counts must be 0 or at least K. Values below 2 are rejected; 2 is
/// accepted with a warning since the aggregation guarantees are only
/// established for K >= 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct Threshold(u64);

impl Threshold {
    pub const DEFAULT: Threshold = Threshold(5);

    pub fn new(k: u64) -> Result<Self, MaskError> {
        if k < 2 {
            return Err(MaskError::ThresholdTooSmall(k));
        }
        if k < 3 {
            log::warn!("K={k}: aggregation guarantees hold only for K >= 3");
        }
        Ok(Threshold(k))
    }

    #[inline]
    pub fn get(self) -> u64 {
        self.0
    }

    /// ⌊K/2⌋
    #[inline]
    pub fn half(self) -> u64 {
        self.0 / 2
    }

    /// True if a released value is 0 or at least K.
    #[inline]
    pub fn is_safe(self, released: u64) -> bool {
        released == 0 || released >= self.0
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl TryFrom<u64> for Threshold {
    type Error = MaskError;

    fn try_from(k: u64) -> Result<Self, Self::Error> {
        Threshold::new(k)
    }
}

impl From<Threshold> for u64 {
    fn from(k: Threshold) -> u64 {
        k.0
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}
