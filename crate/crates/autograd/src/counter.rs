//! Thread-local multiply-accumulate counter fed by the forward kernels.
//!
//! Used to cross-check analytic cost formulas against what a forward pass
//! actually executes.

use std::cell::Cell;

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

pub fn add(n: u64) {
    MACS.with(|c| c.set(c.get() + n));
}

pub fn get() -> u64 {
    MACS.with(Cell::get)
}

pub fn reset() {
    MACS.with(|c| c.set(0));
}

/// Runs `f` and returns its result together with the MACs it performed.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let before = get();
    let r = f();
    (r, get() - before)
}
