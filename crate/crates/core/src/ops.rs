//! Deterministic operation counters used in place of wall-clock profiling.

use core::ops::AddAssign;

/// Instrumented operation counts for one forward pass (or a sum of them).
///
/// `float_mults` counts floating-point multiplications and divisions,
/// `int_mults` counts integer multiply-accumulates, and `dequant`/`requant`
/// count elements crossing the int8/float boundary.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OpCounts {
    pub float_mults: u64,
    pub int_mults: u64,
    pub dequant: u64,
    pub requant: u64,
}

impl AddAssign for OpCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.float_mults += rhs.float_mults;
        self.int_mults += rhs.int_mults;
        self.dequant += rhs.dequant;
        self.requant += rhs.requant;
    }
}

impl OpCounts {
    pub fn float(n: u64) -> Self {
        OpCounts { float_mults: n, ..Default::default() }
    }
}
