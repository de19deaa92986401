//! Least-squares fitting of exponential decay rates.

use num_traits::Float;

/// Slope and intercept of the least-squares line through `(x, y)` pairs.
/// `None` with fewer than two distinct abscissae.
pub fn linear_fit(points: impl IntoIterator<Item = (f64, f64)>) -> Option<(f64, f64)> {
    let (mut n, mut sx, mut sy) = (0.0, 0.0, 0.0);
    let pts: alloc::vec::Vec<(f64, f64)> = points.into_iter().collect();
    for &(x, y) in &pts {
        n += 1.0;
        sx += x;
        sy += y;
    }
    if n < 2.0 {
        return None;
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in &pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if !(sxx > 0.0) {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Slope of `ln v` against `s` over the samples with `from ≤ s ≤ to` and
/// `v > 0`.
pub fn log_slope(samples: impl IntoIterator<Item = (f64, f64)>, from: f64, to: f64) -> Option<f64> {
    linear_fit(
        samples
            .into_iter()
            .filter(|&(s, v)| s >= from && s <= to && v > 0.0)
            .map(|(s, v)| (s, v.ln())),
    )
    .map(|(slope, _)| slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_line() {
        let (m, c) = linear_fit((0..5).map(|i| (i as f64, 3.0 * i as f64 - 1.0))).unwrap();
        assert!((m - 3.0).abs() < 1e-14 && (c + 1.0).abs() < 1e-14);
        assert!(linear_fit([(1.0, 2.0)]).is_none());
        assert!(linear_fit([(1.0, 2.0), (1.0, 3.0)]).is_none());
    }

    #[test]
    fn recovers_decay_rate() {
        let samples = (0..100).map(|i| {
            let s = i as f64 * 0.05;
            (s, 4.0 * (-0.75 * s).exp())
        });
        let slope = log_slope(samples, 1.0, 4.0).unwrap();
        assert!((slope + 0.75).abs() < 1e-12);
    }
}
