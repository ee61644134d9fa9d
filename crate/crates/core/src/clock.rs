//! Virtual clock ticks.

use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

/// Integer microseconds. All simulated timing is kept in ticks; millisecond
/// values are derived only for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Micros(pub u64);

impl Micros {
    pub const ZERO: Micros = Micros(0);

    /// Nearest tick to a non-negative millisecond value.
    pub fn from_ms(ms: f64) -> Self {
        debug_assert!(ms >= 0.0, "negative duration {ms}");
        Micros((ms.max(0.0) * 1000.0).round() as u64)
    }

    pub fn as_ms(self) -> f64 {
        self.0 as f64 / 1000.0
    }
}

impl Add for Micros {
    type Output = Micros;

    fn add(self, rhs: Micros) -> Micros {
        Micros(self.0 + rhs.0)
    }
}

impl Sub for Micros {
    type Output = Micros;

    fn sub(self, rhs: Micros) -> Micros {
        Micros(self.0 - rhs.0)
    }
}
