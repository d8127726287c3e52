//! Time source for trace timings.
//!
//! Traces record wall time, which would make otherwise deterministic runs
//! differ byte-for-byte. Callers pick the clock: the `vidqa` crate supplies a
//! system clock, and [`FrozenClock`] keeps mock runs reproducible.

pub trait Clock {
    /// Milliseconds since an arbitrary fixed origin.
    fn now_ms(&self) -> u64;
}

/// Always reports the same instant, so every measured duration is zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct FrozenClock(pub u64);

impl Clock for FrozenClock {
    fn now_ms(&self) -> u64 {
        self.0
    }
}

impl<C: Clock + ?Sized> Clock for &C {
    fn now_ms(&self) -> u64 {
        (**self).now_ms()
    }
}
