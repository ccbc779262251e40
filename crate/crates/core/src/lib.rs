//! Confidential release of frequency tables built from hierarchical
//! categorical microdata.
//!
//! The finest-level table is masked once with small cell adjustment and
//! persisted. Coarser tables and single-cell answers are derived from it with
//! loss-bounded aggregation, and [`audit`] replays a differencing attacker
//! against any release.

pub mod audit;
pub mod masking;
pub mod synth;
pub mod table;

pub use masking::{
    apply_ilba, apply_sca, partition_small_cells, IlbaTrace, MaskError, Shift, SmallCellPartition, Threshold,
};
