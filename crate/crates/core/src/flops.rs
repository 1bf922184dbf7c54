//! Thread-local multiply-add counter.
//!
//! Kernels report work at inner-loop granularity (one call per dot product or
//! axpy, passing its length), so the overhead is a single add per inner loop.

use std::cell::Cell;

thread_local! {
    static MULTIPLY_ADDS: Cell<u64> = const { Cell::new(0) };
}

#[inline]
pub fn record(n: usize) {
    MULTIPLY_ADDS.with(|c| c.set(c.get() + n as u64));
}

pub fn reset() {
    MULTIPLY_ADDS.with(|c| c.set(0));
}

pub fn read() -> u64 {
    MULTIPLY_ADDS.with(|c| c.get())
}

/// Runs `f` and returns the number of multiply-adds it recorded on this thread.
pub fn count<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = read();
    let r = f();
    (r, read() - before)
}
