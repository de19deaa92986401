//! Closed-form solution of the one-dimensional bias flow.
//!
//! With a single cluster of `N` real points and truncation threshold `b`, a
//! point `x` is truncated once `x ≤ b`. While `n` points are truncated the
//! gap `y − b` decays like `e^{−(n/N)s}`, so the next point is reached after
//! `(N/n) ln((y − b)/(y − x_{n+1}))`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use num_traits::Float;

/// One interval of constant truncation count.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub start: f64,
    /// `+∞` for the final segment.
    pub end: f64,
    /// Number of truncated points.
    pub truncated: usize,
    /// Decay rate `n/N` of the gap.
    pub rate: f64,
    /// `y − b` at `start`.
    pub gap_at_start: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OneDimSolution {
    pub y: f64,
    /// Crossing time of every point that becomes truncated after `s = 0`, in
    /// order; the point index is `first_crossing + k`.
    pub crossings: Vec<f64>,
    /// Index of the first point not truncated at `s = 0`.
    pub first_crossing: usize,
    pub segments: Vec<Segment>,
    /// No point is truncated initially, so nothing ever moves.
    pub frozen: bool,
}

impl OneDimSolution {
    fn segment_at(&self, s: f64) -> &Segment {
        self.segments.iter().rev().find(|seg| seg.start <= s).unwrap_or(&self.segments[0])
    }

    /// `y − b(s)`
    pub fn gap(&self, s: f64) -> f64 {
        let seg = self.segment_at(s);
        seg.gap_at_start * (-seg.rate * (s - seg.start)).exp()
    }

    /// `b(s)`
    pub fn threshold(&self, s: f64) -> f64 {
        self.y - self.gap(s)
    }
}

/// Piecewise-exponential solution for sorted `points`, label `y` above all
/// of them and initial threshold `b0 < y`.
pub fn one_dim_flow(points: &[f64], y: f64, b0: f64) -> Result<OneDimSolution> {
    if points.is_empty() {
        return Err(Error::EmptyCluster { cluster: 0 });
    }
    for (k, w) in points.windows(2).enumerate() {
        if !(w[0] < w[1]) {
            return Err(Error::BadOrdering { index: k + 1 });
        }
    }
    let max = points[points.len() - 1];
    if !(y > max) {
        return Err(Error::LabelInsideData { label: y, max });
    }
    if !(b0 < y) {
        return Err(Error::InvalidArgument(alloc::format!("initial threshold {b0} must lie below the label {y}")));
    }
    let n_total = points.len();
    let n0 = points.iter().filter(|&&x| x <= b0).count();
    if n0 == 0 {
        let seg = Segment { start: 0.0, end: f64::INFINITY, truncated: 0, rate: 0.0, gap_at_start: y - b0 };
        return Ok(OneDimSolution { y, crossings: Vec::new(), first_crossing: 0, segments: alloc::vec![seg], frozen: true });
    }
    let nf = n_total as f64;
    let mut segments = Vec::new();
    let mut crossings = Vec::new();
    let mut s = 0.0;
    let mut gap = y - b0;
    for n in n0..n_total {
        let next_gap = y - points[n];
        let dt = (nf / n as f64) * (gap / next_gap).ln();
        segments.push(Segment { start: s, end: s + dt, truncated: n, rate: n as f64 / nf, gap_at_start: gap });
        s += dt;
        gap = next_gap;
        crossings.push(s);
    }
    segments.push(Segment { start: s, end: f64::INFINITY, truncated: n_total, rate: 1.0, gap_at_start: gap });
    Ok(OneDimSolution { y, crossings, first_crossing: n0, segments, frozen: false })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_ladder() {
        let sol = one_dim_flow(&[1.0, 2.0], 5.0, 1.0).unwrap();
        assert!(!sol.frozen);
        assert_eq!(sol.first_crossing, 1);
        assert_eq!(sol.crossings.len(), 1);
        assert!((sol.crossings[0] - 2.0 * (4.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((sol.crossings[0] - 0.5753641449035618).abs() < 1e-15);
        assert_eq!(sol.segments[0].rate, 0.5);
        assert_eq!(sol.segments[1].rate, 1.0);
        assert!((sol.threshold(sol.crossings[0]) - 2.0).abs() < 1e-14);
        let s = sol.crossings[0] + 0.7;
        assert!((sol.gap(s) - 3.0 * (-0.7f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn untruncated_start_is_frozen() {
        let sol = one_dim_flow(&[1.0, 2.0], 5.0, 0.5).unwrap();
        assert!(sol.frozen);
        assert_eq!(sol.gap(10.0), 4.5);
    }

    #[test]
    fn input_validation() {
        assert!(matches!(one_dim_flow(&[2.0, 1.0], 5.0, 1.0), Err(Error::BadOrdering { index: 1 })));
        assert!(matches!(one_dim_flow(&[1.0, 1.0], 5.0, 1.0), Err(Error::BadOrdering { .. })));
        assert!(matches!(one_dim_flow(&[1.0, 2.0], 2.0, 1.0), Err(Error::LabelInsideData { .. })));
    }
}
