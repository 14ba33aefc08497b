//! Five-point rating scales and their numeric meaning.
//!
//! Two scales are used:
//!
//! * **absolute**: a single stimulus rated 1 (bad) … 5 (excellent), read as a
//!   posterior probability `0.00, 0.25, 0.50, 0.75, 1.00`;
//! * **paired**: two stimuli rated 1 ("the first one") … 3 ("equal") … 5
//!   ("the second one"), read as a posterior difference
//!   `1.0, 0.5, 0.0, -0.5, -1.0` in display order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("rating level {0} outside 1..=5")]
pub struct InvalidLevel(pub u8);

/// A rating on the five-point scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Level(u8);

impl Level {
    pub const ALL: [Level; 5] = [Level(1), Level(2), Level(3), Level(4), Level(5)];

    pub fn new(level: u8) -> Result<Self, InvalidLevel> {
        if (1..=5).contains(&level) {
            Ok(Level(level))
        } else {
            Err(InvalidLevel(level))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Absolute scale: posterior probability of the rated stimulus.
    pub fn absolute_posterior(self) -> f64 {
        const TABLE: [f64; 5] = [0.00, 0.25, 0.50, 0.75, 1.00];
        TABLE[usize::from(self.0 - 1)]
    }

    /// Paired scale: `D(first) - D(second)`.
    pub fn paired_delta(self) -> f64 {
        const TABLE: [f64; 5] = [1.0, 0.5, 0.0, -0.5, -1.0];
        TABLE[usize::from(self.0 - 1)]
    }

    /// The absolute level closest to `posterior` (ties toward the higher level).
    pub fn from_posterior(posterior: f64) -> Level {
        let step = (posterior.clamp(0.0, 1.0) * 4.0 + 0.5).floor() as u8;
        Level(step.min(4) + 1)
    }

    /// The paired level closest to `delta` (ties away from zero).
    pub fn from_delta(delta: f64) -> Level {
        let q = quantize_paired(delta);
        Level((3.0 - 2.0 * q) as u8)
    }
}

impl TryFrom<u8> for Level {
    type Error = InvalidLevel;
    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Level::new(v)
    }
}

impl From<Level> for u8 {
    fn from(l: Level) -> u8 {
        l.0
    }
}

/// Rounds a posterior to `{0, 0.25, 0.5, 0.75, 1}`; exact midpoints round up.
pub fn quantize_absolute(posterior: f64) -> f64 {
    Level::from_posterior(posterior).absolute_posterior()
}

/// Rounds a difference to `{-1, -0.5, 0, 0.5, 1}`; exact midpoints round away from zero.
pub fn quantize_paired(delta: f64) -> f64 {
    let d = delta.clamp(-1.0, 1.0);
    let magnitude = (d.abs() * 2.0 + 0.5).floor().min(2.0) / 2.0;
    if d < 0.0 {
        -magnitude
    } else {
        magnitude
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tables() {
        let abs: Vec<f64> = Level::ALL.iter().map(|l| l.absolute_posterior()).collect();
        assert_eq!(abs, [0.0, 0.25, 0.5, 0.75, 1.0]);
        let paired: Vec<f64> = Level::ALL.iter().map(|l| l.paired_delta()).collect();
        assert_eq!(paired, [1.0, 0.5, 0.0, -0.5, -1.0]);
        assert_eq!(Level::new(0), Err(InvalidLevel(0)));
        assert_eq!(Level::new(6), Err(InvalidLevel(6)));
    }

    #[test]
    fn absolute_rounding() {
        assert_eq!(quantize_absolute(1.0), 1.0);
        assert_eq!(quantize_absolute(0.30), 0.25);
        assert_eq!(quantize_absolute(0.125), 0.25);
        assert_eq!(quantize_absolute(0.0), 0.0);
    }

    #[test]
    fn paired_rounding() {
        assert_eq!(quantize_paired(0.7), 0.5);
        assert_eq!(quantize_paired(0.0), 0.0);
        assert_eq!(quantize_paired(0.25), 0.5);
        assert_eq!(quantize_paired(-0.25), -0.5);
        assert_eq!(quantize_paired(0.76), 1.0);
        assert_eq!(quantize_paired(-1.0), -1.0);
    }

    #[test]
    fn level_inverse_of_tables() {
        for l in Level::ALL {
            assert_eq!(Level::from_posterior(l.absolute_posterior()), l);
            assert_eq!(Level::from_delta(l.paired_delta()), l);
        }
    }

    proptest! {
        #[test]
        fn quantization_error_bounded(v in 0.0f64..=1.0, d in -1.0f64..=1.0) {
            prop_assert!((quantize_absolute(v) - v).abs() <= 0.125 + 1e-15);
            prop_assert!((quantize_paired(d) - d).abs() <= 0.25 + 1e-15);
            prop_assert_eq!(quantize_paired(-d), -quantize_paired(d));
        }
    }
}
