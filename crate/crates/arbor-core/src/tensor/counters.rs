//! Analytic scalar-op counters.
//!
//! Every op adds the number of scalar multiply-adds, comparisons, and
//! exponential/logarithm evaluations its loops actually perform. Counts are
//! exact functions of the input shapes, so the scaling benchmarks are
//! deterministic and independent of wall-clock noise. Zero-initialisation of
//! output buffers is allocation, not arithmetic, and is not counted.

use std::cell::Cell;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
    static CMPS: Cell<u64> = const { Cell::new(0) };
    static EXPS: Cell<u64> = const { Cell::new(0) };
}

/// Snapshot of the thread-local counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OpCounts {
    /// Scalar multiplies, adds, subtracts, divides (fused as one bucket).
    pub macs: u64,
    /// Scalar comparisons (max/min/threshold tests).
    pub cmps: u64,
    /// Scalar exp/ln/sqrt/pow evaluations.
    pub exps: u64,
}

impl OpCounts {
    pub fn total(&self) -> u64 {
        self.macs + self.cmps + self.exps
    }
}

impl std::ops::Sub for OpCounts {
    type Output = OpCounts;
    fn sub(self, rhs: OpCounts) -> OpCounts {
        OpCounts {
            macs: self.macs - rhs.macs,
            cmps: self.cmps - rhs.cmps,
            exps: self.exps - rhs.exps,
        }
    }
}

/// Resets all counters on this thread to zero.
pub fn reset() {
    MACS.with(|c| c.set(0));
    CMPS.with(|c| c.set(0));
    EXPS.with(|c| c.set(0));
}

/// Current counter values on this thread.
pub fn snapshot() -> OpCounts {
    OpCounts {
        macs: MACS.with(Cell::get),
        cmps: CMPS.with(Cell::get),
        exps: EXPS.with(Cell::get),
    }
}

#[inline]
pub(crate) fn add_macs(n: u64) {
    MACS.with(|c| c.set(c.get().wrapping_add(n)));
}

#[inline]
pub(crate) fn add_cmps(n: u64) {
    CMPS.with(|c| c.set(c.get().wrapping_add(n)));
}

#[inline]
pub(crate) fn add_exps(n: u64) {
    EXPS.with(|c| c.set(c.get().wrapping_add(n)));
}
