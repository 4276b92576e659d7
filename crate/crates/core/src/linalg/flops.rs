//! Floating-point operation counter.
//!
//! Every kernel in [`crate::linalg`] adds its nominal flop count to a per-thread
//! counter. Counts are exact integers and depend only on the matrix shapes that
//! reach the kernels, so they are reproducible across runs and machines.

use std::cell::Cell;

thread_local! {
    static COUNT: Cell<u64> = const { Cell::new(0) };
}

#[inline]
pub(crate) fn add(n: u64) {
    COUNT.with(|c| c.set(c.get().wrapping_add(n)));
}

/// Current value of this thread's counter.
pub fn read() -> u64 {
    COUNT.with(|c| c.get())
}

pub fn reset() {
    COUNT.with(|c| c.set(0));
}

/// Runs `f` and returns its result together with the flops it counted.
/// The surrounding count is preserved.
pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let before = read();
    let out = f();
    let after = read();
    (out, after.wrapping_sub(before))
}
