//! Standard-cost flow when every cluster has already collapsed to a point.
//!
//! With `B = [β⁽¹⁾ ⋯ β⁽Q⁾]`, output map `W` and labels `Y = [y₁ ⋯ y_Q]` the
//! cost is `½ ‖WB + Y‖_F²` and the flow is
//! `Ḃ = −Wᵀ(WB + Y)`, `Ẇ = −(WB + Y)Bᵀ`. `BBᵀ − WᵀW` is conserved.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::manifold::Matrix;

use super::integrate::IntegratorOptions;
use num_traits::Float;

#[derive(Clone, Debug, PartialEq)]
pub struct CollapsedState {
    pub b_matrix: Matrix,
    pub w_out: Matrix,
    pub y_matrix: Matrix,
}

impl CollapsedState {
    pub fn new(b_matrix: Matrix, w_out: Matrix, y_matrix: Matrix) -> Result<Self> {
        let q = b_matrix.rows();
        for m in [&b_matrix, &w_out, &y_matrix] {
            if !m.is_square() || m.rows() != q {
                return Err(Error::DimensionMismatch { expected: q, found: m.cols().max(m.rows()) });
            }
        }
        if q == 0 {
            return Err(Error::InvalidArgument("collapsed state needs Q ≥ 1".into()));
        }
        Ok(Self { b_matrix, w_out, y_matrix })
    }

    pub fn dim(&self) -> usize {
        self.b_matrix.rows()
    }

    /// `WB + Y`
    pub fn residual(&self) -> Matrix {
        &(&self.w_out * &self.b_matrix) + &self.y_matrix
    }

    /// `½ ‖WB + Y‖_F²`
    pub fn cost(&self) -> f64 {
        0.5 * self.residual().frobenius_norm().powi(2)
    }

    fn with(&self, b: Matrix, w: Matrix) -> Self {
        Self { b_matrix: b, w_out: w, y_matrix: self.y_matrix.clone() }
    }
}

/// `(Ḃ, Ẇ)`
pub fn collapsed_rhs(cs: &CollapsedState) -> (Matrix, Matrix) {
    let e = cs.residual();
    let b_dot = -&(&cs.w_out.transpose() * &e);
    let w_dot = -&(&e * &cs.b_matrix.transpose());
    (b_dot, w_dot)
}

/// `𝓘 = BBᵀ − WᵀW`
pub fn conserved_quantity(cs: &CollapsedState) -> Matrix {
    &(&cs.b_matrix * &cs.b_matrix.transpose()) - &(&cs.w_out.transpose() * &cs.w_out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollapsedSample {
    pub s: f64,
    pub state: CollapsedState,
    pub cost: f64,
    /// `‖𝓘(s) − 𝓘(0)‖_F`
    pub invariant_drift: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollapsedTrajectory {
    pub samples: Vec<CollapsedSample>,
    pub initial_invariant: Matrix,
}

impl CollapsedTrajectory {
    /// `max_s ‖𝓘(s) − 𝓘(0)‖_F / (1 + ‖𝓘(0)‖_F)`
    pub fn relative_drift(&self) -> f64 {
        let scale = 1.0 + self.initial_invariant.frobenius_norm();
        self.samples.iter().map(|s| s.invariant_drift).fold(0.0, f64::max) / scale
    }

    pub fn last(&self) -> &CollapsedSample {
        self.samples.last().expect("nonempty")
    }
}

fn rk4_step(cs: &CollapsedState, h: f64) -> CollapsedState {
    let stage = |base: &CollapsedState, k: &(Matrix, Matrix), a: f64| {
        let mut b = base.b_matrix.clone();
        b.add_scaled(a, &k.0);
        let mut w = base.w_out.clone();
        w.add_scaled(a, &k.1);
        base.with(b, w)
    };
    let k1 = collapsed_rhs(cs);
    let k2 = collapsed_rhs(&stage(cs, &k1, 0.5 * h));
    let k3 = collapsed_rhs(&stage(cs, &k2, 0.5 * h));
    let k4 = collapsed_rhs(&stage(cs, &k3, h));
    let mut b = cs.b_matrix.clone();
    let mut w = cs.w_out.clone();
    for (k, c) in [(&k1, 1.0), (&k2, 2.0), (&k3, 2.0), (&k4, 1.0)] {
        b.add_scaled(h * c / 6.0, &k.0);
        w.add_scaled(h * c / 6.0, &k.1);
    }
    cs.with(b, w)
}

fn error_norm(a: &CollapsedState, b: &CollapsedState, opts: &IntegratorOptions) -> f64 {
    let pairs = a
        .b_matrix
        .as_slice()
        .iter()
        .zip(b.b_matrix.as_slice())
        .chain(a.w_out.as_slice().iter().zip(b.w_out.as_slice()));
    let mut worst: f64 = 0.0;
    for (x, y) in pairs {
        let e = (x - y).abs() / (opts.atol + opts.rtol * x.abs().max(y.abs()));
        worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
    }
    worst
}

/// Classical RK4 with step-doubling error control; records a sample after
/// every accepted step.
pub fn integrate_collapsed(cs0: &CollapsedState, s_end: f64, opts: &IntegratorOptions) -> Result<CollapsedTrajectory> {
    if !(s_end > 0.0) || !s_end.is_finite() {
        return Err(Error::InvalidArgument(alloc::format!("s_end must be positive and finite, got {s_end}")));
    }
    let inv0 = conserved_quantity(cs0);
    let sample = |s: f64, cs: &CollapsedState| CollapsedSample {
        s,
        state: cs.clone(),
        cost: cs.cost(),
        invariant_drift: (&conserved_quantity(cs) - &inv0).frobenius_norm(),
    };
    let mut samples = alloc::vec![sample(0.0, cs0)];
    let mut cs = cs0.clone();
    let mut s = 0.0;
    let mut h = opts.initial_step.min(opts.max_step);
    let mut attempts = 0usize;
    while s_end - s > opts.min_step {
        attempts += 1;
        let remaining = s_end - s;
        let h_try = h.min(remaining);
        if h_try < opts.min_step || attempts > opts.max_steps {
            return Err(Error::StepUnderflow { s, step: h_try });
        }
        let big = rk4_step(&cs, h_try);
        let small = rk4_step(&rk4_step(&cs, 0.5 * h_try), 0.5 * h_try);
        let err = error_norm(&big, &small, opts);
        if !(err <= 1.0) || small.cost() > cs.cost() + opts.monotonicity_tol * (1.0 + cs.cost()) {
            h = 0.5 * h_try;
            continue;
        }
        s = if h_try == remaining { s_end } else { s + h_try };
        cs = small;
        samples.push(sample(s, &cs));
        h = if err < 1.0 / 32.0 { (2.0 * h_try).min(opts.max_step) } else { h_try };
    }
    Ok(CollapsedTrajectory { samples, initial_invariant: inv0 })
}
