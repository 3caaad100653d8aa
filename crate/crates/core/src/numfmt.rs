//! Float formatting used by every serialised artifact.
//!
//! Reports and CSV files write floating-point values with 17 significant
//! digits, which is enough to round-trip any IEEE-754 double exactly, so
//! artifacts produced from the same inputs are byte-identical across runs.

/// Formats `x` with 17 significant digits in scientific notation.
pub fn float17(x: f64) -> String {
    format!("{x:.16e}")
}
