//! Ground truth that shares no code path with the analytic vector fields:
//! central finite differences of the costs, and a fixed-step RK4 integrator
//! in ambient coordinates.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::flows::{CollapsedState, LayerRhs};
use crate::manifold::{expm_antisym, polar_decompose, AntisymmetricMatrix, Matrix, OrthogonalMatrix};
use crate::measures::TrainingSet;
use crate::model::{euclidean_cost, LayerParams, ModelState};
use crate::vector;
use num_traits::Float;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FDSettings {
    /// Central-difference increment.
    pub step: f64,
}

impl Default for FDSettings {
    fn default() -> Self {
        Self { step: 1e-5 }
    }
}

impl FDSettings {
    pub fn new(step: f64) -> Result<Self> {
        if (1e-9..=1e-2).contains(&step) {
            Ok(Self { step })
        } else {
            Err(Error::InvalidArgument(alloc::format!("finite-difference step {step} outside [1e-9, 1e-2]")))
        }
    }

    /// Pre-activations closer to zero than this make the stencil straddle a
    /// sector boundary.
    pub fn kink_threshold(&self, z_norm: f64) -> f64 {
        10.0 * self.step * z_norm.max(1.0)
    }
}

/// Fails with [`Error::NearKink`] if any pre-activation of any point, at any
/// layer of the chain, lies within the kink threshold of zero.
pub fn check_kink_free(state: &ModelState, data: &TrainingSet, settings: &FDSettings) -> Result<()> {
    for cluster in data.clusters() {
        for x in cluster {
            let mut t = x.clone();
            for layer in state.layers() {
                let z = layer.push(&t);
                let threshold = settings.kink_threshold(vector::norm(&z));
                if let Some(&v) = z.iter().find(|v| v.abs() <= threshold) {
                    return Err(Error::NearKink { value: v, threshold });
                }
                t = layer.pull(&vector::relu(&z));
            }
        }
    }
    Ok(())
}

fn with_layer(state: &ModelState, l: usize, layer: LayerParams) -> ModelState {
    let mut layers = state.layers().to_vec();
    layers[l] = layer;
    state.with_layers(layers)
}

fn check_layer(state: &ModelState, layer: usize) -> Result<()> {
    if layer >= state.depth() {
        return Err(Error::IndexRange { from: layer, to: layer + 1, layers: state.depth() });
    }
    Ok(())
}

/// `∂C/∂β⁽ℓ⁾` of the Euclidean cost by central differences.
pub fn fd_grad_beta(state: &ModelState, data: &TrainingSet, layer: usize, settings: &FDSettings) -> Result<Vec<f64>> {
    check_layer(state, layer)?;
    check_kink_free(state, data, settings)?;
    let h = settings.step;
    let base = state.layer(layer);
    (0..state.dim())
        .map(|r| {
            let shifted = |d: f64| -> Result<f64> {
                let mut beta = base.beta().to_vec();
                beta[r] += d;
                let s = with_layer(state, layer, LayerParams::new(base.rotation().clone(), beta)?);
                euclidean_cost(&s, data)
            };
            Ok((shifted(h)? - shifted(-h)?) / (2.0 * h))
        })
        .collect()
}

/// `d/dε C(exp(εω) R_ℓ)` at `ε = 0` by central differences.
pub fn fd_directional_rotation(
    state: &ModelState,
    data: &TrainingSet,
    layer: usize,
    omega: &AntisymmetricMatrix,
    settings: &FDSettings,
) -> Result<f64> {
    check_layer(state, layer)?;
    check_kink_free(state, data, settings)?;
    let h = settings.step;
    let base = state.layer(layer);
    let rotated = |e: f64| -> Result<f64> {
        let r = expm_antisym(&omega.scale(e)).compose(base.rotation());
        euclidean_cost(&with_layer(state, layer, LayerParams::new(r, base.beta().to_vec())?), data)
    };
    Ok((rotated(h)? - rotated(-h)?) / (2.0 * h))
}

/// The antisymmetric `G` with `tr(ω G) = d/dε C(exp(εω) R_ℓ)` for every
/// `ω ∈ o(Q)`, assembled from the basis `e_i e_jᵀ − e_j e_iᵀ`: since
/// `tr(ω_ij G) = −2 G_ij`, each directional derivative fixes one entry.
///
/// The descent flow `∂ₛR = ΩR` has `Ω = G`.
pub fn fd_grad_rotation(state: &ModelState, data: &TrainingSet, layer: usize, settings: &FDSettings) -> Result<AntisymmetricMatrix> {
    let q = state.dim();
    let mut g = Matrix::zeros(q, q);
    for i in 0..q {
        for j in i + 1..q {
            let d = fd_directional_rotation(state, data, layer, &AntisymmetricMatrix::basis(q, i, j), settings)?;
            g[(i, j)] = -0.5 * d;
            g[(j, i)] = 0.5 * d;
        }
    }
    AntisymmetricMatrix::new(g)
}

/// `(∂C/∂B, ∂C/∂W)` of `½‖WB + Y‖_F²` by entrywise central differences.
pub fn fd_grad_collapsed(cs: &CollapsedState, settings: &FDSettings) -> (Matrix, Matrix) {
    let h = settings.step;
    let q = cs.dim();
    let diff = |perturb: &dyn Fn(&mut CollapsedState, f64)| -> f64 {
        let mut plus = cs.clone();
        perturb(&mut plus, h);
        let mut minus = cs.clone();
        perturb(&mut minus, -h);
        (plus.cost() - minus.cost()) / (2.0 * h)
    };
    let gb = Matrix::from_fn(q, q, |i, j| diff(&|c: &mut CollapsedState, d| c.b_matrix[(i, j)] += d));
    let gw = Matrix::from_fn(q, q, |i, j| diff(&|c: &mut CollapsedState, d| c.w_out[(i, j)] += d));
    (gb, gw)
}

/// Classical RK4 at a fixed step on `ẏ = f(y)`.
pub fn reference_integrate_vec(f: impl Fn(&[f64]) -> Vec<f64>, y0: &[f64], s_end: f64, step: f64) -> Vec<f64> {
    let n = (s_end / step).ceil().max(1.0) as usize;
    let h = s_end / n as f64;
    let mut y = y0.to_vec();
    for _ in 0..n {
        let k1 = f(&y);
        let mut t = y.clone();
        vector::axpy(&mut t, 0.5 * h, &k1);
        let k2 = f(&t);
        let mut t = y.clone();
        vector::axpy(&mut t, 0.5 * h, &k2);
        let k3 = f(&t);
        let mut t = y.clone();
        vector::axpy(&mut t, h, &k3);
        let k4 = f(&t);
        for (c, k) in [(1.0, &k1), (2.0, &k2), (2.0, &k3), (1.0, &k4)] {
            vector::axpy(&mut y, h * c / 6.0, k);
        }
    }
    y
}

/// Default step of the reference integrators.
pub const REFERENCE_STEP: f64 = 1e-4;

fn ambient_shift(base: &ModelState, k: &[LayerRhs], a: f64) -> ModelState {
    let layers = base
        .layers()
        .iter()
        .zip(k)
        .map(|(layer, d)| {
            let r = layer.rotation().as_matrix();
            let mut rm = r.clone();
            rm.add_scaled(a, &(d.omega.as_matrix() * r));
            let mut beta = layer.beta().to_vec();
            vector::axpy(&mut beta, a, &d.beta_dot);
            LayerParams::new(OrthogonalMatrix::new_unchecked(rm), beta).expect("dimensions are preserved")
        })
        .collect();
    base.with_layers(layers)
}

/// Fixed-step classical RK4 on `(β, R)` treating `R` as a plain matrix with
/// `Ṙ = ΩR`, followed by a polar projection back onto `O(Q)` after every
/// step. Only meaningful where `rhs` is smooth along the path.
pub fn reference_integrate(
    rhs: impl Fn(&ModelState) -> Result<Vec<LayerRhs>>,
    state0: &ModelState,
    s_end: f64,
    step: f64,
) -> Result<ModelState> {
    let n = (s_end / step).ceil().max(1.0) as usize;
    let h = s_end / n as f64;
    let mut state = state0.clone();
    for _ in 0..n {
        let k1 = rhs(&state)?;
        let k2 = rhs(&ambient_shift(&state, &k1, 0.5 * h))?;
        let k3 = rhs(&ambient_shift(&state, &k2, 0.5 * h))?;
        let k4 = rhs(&ambient_shift(&state, &k3, h))?;
        let layers = state
            .layers()
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                let r = layer.rotation().as_matrix();
                let mut rm = r.clone();
                let mut beta = layer.beta().to_vec();
                for (c, k) in [(1.0, &k1), (2.0, &k2), (2.0, &k3), (1.0, &k4)] {
                    rm.add_scaled(h * c / 6.0, &(k[l].omega.as_matrix() * r));
                    vector::axpy(&mut beta, h * c / 6.0, &k[l].beta_dot);
                }
                let (_, rotation) = polar_decompose(&rm)?;
                LayerParams::new(rotation, beta)
            })
            .collect::<Result<Vec<_>>>()?;
        state = state.with_layers(layers);
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flows::{collapsed_rhs, effective_rhs};
    use alloc::vec;

    fn single(r: OrthogonalMatrix, beta: Vec<f64>, label: Vec<f64>, points: Vec<Vec<f64>>) -> (ModelState, TrainingSet) {
        let q = beta.len();
        let s = ModelState::new(vec![LayerParams::new(r, beta).unwrap()], Matrix::identity(q), vec![label]).unwrap();
        (s, TrainingSet::new(vec![points]).unwrap())
    }

    #[test]
    fn fully_truncated_gradient_is_the_gap() {
        let beta = vec![-10.0, -11.0];
        let label = vec![1.5, -0.5];
        let (s, d) = single(OrthogonalMatrix::givens(2, 0, 1, 0.3), beta.clone(), label.clone(), vec![vec![0.2, 0.1], vec![1.0, -1.0]]);
        let g = fd_grad_beta(&s, &d, 0, &FDSettings::default()).unwrap();
        let gap = vector::add(&beta, &label);
        assert!(vector::max_abs(&vector::sub(&g, &gap)) < 1e-5);
    }

    #[test]
    fn equilibrium_has_zero_gradient() {
        let (s, d) = single(OrthogonalMatrix::givens(2, 0, 1, 0.3), vec![10.0, 10.0], vec![0.0, 1.0], vec![vec![0.2, 0.1]]);
        let g = fd_grad_beta(&s, &d, 0, &FDSettings::default()).unwrap();
        assert!(vector::max_abs(&g) < 1e-8);
        let g = fd_grad_rotation(&s, &d, 0, &FDSettings::default()).unwrap();
        assert!(g.norm() < 1e-8);
    }

    #[test]
    fn single_mixed_point_rotation_gradient() {
        let (a, b) = (0.25, -0.75);
        let (s, d) = single(OrthogonalMatrix::identity(2), vec![0.0, 0.0], vec![a, b], vec![vec![1.0, -1.0]]);
        let g = fd_grad_rotation(&s, &d, 0, &FDSettings::default()).unwrap();
        let expected = (b - a + 1.0) / 2.0;
        assert!((g.as_matrix()[(0, 1)] - expected).abs() < 1e-8);
        let analytic = effective_rhs(&s, &d, 0).unwrap();
        assert!((&analytic.omega.into_matrix() - g.as_matrix()).max_abs() < 1e-8);
    }

    #[test]
    fn near_kink_is_rejected() {
        let (s, d) = single(OrthogonalMatrix::identity(2), vec![0.0, 0.0], vec![0.0, 0.0], vec![vec![1e-7, 1.0]]);
        assert!(matches!(fd_grad_beta(&s, &d, 0, &FDSettings::default()), Err(Error::NearKink { .. })));
        assert!(matches!(fd_grad_rotation(&s, &d, 0, &FDSettings::default()), Err(Error::NearKink { .. })));
    }

    #[test]
    fn collapsed_gradient_matches() {
        let b = Matrix::from_rows(&[[1.0, 0.3], [-0.2, 0.8]]).unwrap();
        let w = Matrix::from_rows(&[[0.5, 1.0], [0.0, 2.0]]).unwrap();
        let y = Matrix::from_rows(&[[0.1, -1.0], [1.0, 0.4]]).unwrap();
        let cs = CollapsedState::new(b, w, y).unwrap();
        let (gb, gw) = fd_grad_collapsed(&cs, &FDSettings::default());
        let (bd, wd) = collapsed_rhs(&cs);
        assert!((&gb + &bd).max_abs() < 1e-8);
        assert!((&gw + &wd).max_abs() < 1e-8);
    }

    #[test]
    fn settings_bounds() {
        assert!(FDSettings::new(1e-5).is_ok());
        assert!(FDSettings::new(1e-1).is_err());
        assert!(FDSettings::new(1e-12).is_err());
    }

    #[test]
    fn reference_vec_exponential() {
        let y = reference_integrate_vec(|y| vec![-y[0]], &[2.0], 1.0, 1e-3);
        assert!((y[0] - 2.0 * (-1.0f64).exp()).abs() < 1e-12);
    }
}
