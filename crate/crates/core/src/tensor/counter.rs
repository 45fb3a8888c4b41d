//! Runtime multiply-accumulate instrumentation.
//!
//! Matrix products and convolutions report their MAC count here when they
//! run forward. Counts are kept per thread; backward passes are not counted.

use std::cell::Cell;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn add_macs(n: u64) {
    MACS.with(|c| c.set(c.get() + n));
}

/// Runs `f` and returns its result with the number of MACs it executed.
///
/// Nested calls are supported; the outer scope also sees the inner count.
pub fn count_macs<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = MACS.with(|c| c.replace(0));
    let out = f();
    let inner = MACS.with(|c| c.get());
    MACS.with(|c| c.set(before + inner));
    (out, inner)
}
