//! Vector fields of the bias/rotation flows.
//!
//! Every field is the exact negative gradient of the Euclidean cost with the
//! sector pattern of each point held fixed. The public functions read the
//! pattern off the current state; the integrator freezes it over a step.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::manifold::{AntisymmetricMatrix, Matrix};
use crate::measures::{compute_moments, TrainingSet};
use crate::model::{heaviside_mask, LayerParams, ModelState, SectorMask};
use crate::vector;
use num_traits::Float;

/// Time derivative of one layer: `∂ₛβ = beta_dot`, `∂ₛR = Ω R`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerRhs {
    pub beta_dot: Vec<f64>,
    pub omega: AntisymmetricMatrix,
}

impl LayerRhs {
    pub fn zeros(dim: usize) -> Self {
        Self { beta_dot: vec![0.0; dim], omega: AntisymmetricMatrix::zeros(dim) }
    }

    /// `|β̇|² + ‖Ω‖_F²`, the layer's contribution to `−dC/ds`.
    pub fn squared_norm(&self) -> f64 {
        vector::dot(&self.beta_dot, &self.beta_dot) + self.omega.norm().powi(2)
    }
}

fn check_layer(state: &ModelState, data: &TrainingSet, layer: usize) -> Result<()> {
    if layer >= state.depth() || layer >= data.num_clusters() || layer >= state.labels().len() {
        return Err(Error::IndexRange { from: layer, to: layer + 1, layers: state.depth() });
    }
    if data.dim() != state.dim() {
        return Err(Error::DimensionMismatch { expected: state.dim(), found: data.dim() });
    }
    Ok(())
}

/// Effective field of one layer driven by its own cluster, with the sector
/// of every point given by `masks`.
pub(crate) fn effective_rhs_with(
    layer: &LayerParams,
    target: &[f64],
    cluster: &[Vec<f64>],
    masks: &[SectorMask],
) -> LayerRhs {
    let q = layer.dim();
    let inv_n = 1.0 / cluster.len() as f64;
    let u = layer.rotation().apply(&vector::add(layer.beta(), target));
    let mut j0_perp = vec![0.0; q];
    let mut omega = Matrix::zeros(q, q);
    for (x, mask) in cluster.iter().zip(masks) {
        for (r, jr) in j0_perp.iter_mut().enumerate() {
            if !mask.get(r) {
                *jr += inv_n;
            }
        }
        if !mask.is_mixed() {
            continue;
        }
        let z = layer.push(x);
        for i in 0..q {
            for j in i + 1..q {
                let dn = mask.indicator(i) - mask.indicator(j);
                if dn != 0.0 {
                    omega[(i, j)] += dn * inv_n * 0.5 * (z[i] * u[j] + u[i] * z[j] - z[i] * z[j]);
                }
            }
        }
    }
    let jv: Vec<f64> = j0_perp.iter().zip(&u).map(|(j, v)| -j * v).collect();
    let beta_dot = layer.rotation().apply_transpose(&jv);
    LayerRhs { beta_dot, omega: AntisymmetricMatrix::from_upper(q, |i, j| omega[(i, j)]) }
}

/// Field of layer `layer` under the cluster-separation assumption: only the
/// layer's own cluster drives it.
///
/// `β̇ = −Rᵀ J₀⊥ R (β + ỹ)` and, with `z = R(x + β)`, `u = R(β + ỹ)`,
/// `Ω_ij = (1/N) Σ (ν_i − ν_j) (z_i u_j + u_i z_j − z_i z_j) / 2`
/// summed over points in off-diagonal sectors.
pub fn effective_rhs(state: &ModelState, data: &TrainingSet, layer: usize) -> Result<LayerRhs> {
    check_layer(state, data, layer)?;
    let params = state.layer(layer);
    let cluster = data.cluster(layer);
    let masks: Vec<SectorMask> = cluster.iter().map(|x| heaviside_mask(&params.push(x))).collect();
    Ok(effective_rhs_with(params, state.pulled_label(layer), cluster, &masks))
}

/// The effective field assembled from the constrained moments `J₀⊥`,
/// `J₁,ν` and `J₂,ν` of the pushed-forward cluster.
pub fn moment_form_rhs(state: &ModelState, data: &TrainingSet, layer: usize) -> Result<LayerRhs> {
    check_layer(state, data, layer)?;
    let params = state.layer(layer);
    let q = params.dim();
    let m = compute_moments(params, data.cluster(layer))?;
    let u = params.rotation().apply(&vector::add(params.beta(), state.pulled_label(layer)));
    let jv: Vec<f64> = m.j0_perp.iter().zip(&u).map(|(j, v)| -j * v).collect();
    let beta_dot = params.rotation().apply_transpose(&jv);
    let omega = AntisymmetricMatrix::from_upper(q, |i, j| {
        m.j1_by_sector
            .iter()
            .zip(m.j2_by_sector.values())
            .map(|((nu, j1), j2)| {
                let dn = nu.indicator(i) - nu.indicator(j);
                dn * 0.5 * (j1[i] * u[j] + u[i] * j1[j] - j2[(i, j)])
            })
            .sum()
    });
    Ok(LayerRhs { beta_dot, omega })
}

/// Sector masks of one point along the whole chain, with the pre-activations
/// `z_k = R_k(t_{k−1} + β_k)` that produced them.
pub(crate) fn chain_masks(layers: &[LayerParams], x: &[f64]) -> Vec<SectorMask> {
    let mut t = x.to_vec();
    let mut masks = Vec::with_capacity(layers.len());
    for layer in layers {
        let z = layer.push(&t);
        let mask = heaviside_mask(&z);
        t = layer.pull(&mask.keep(&z));
        masks.push(mask);
    }
    masks
}

/// Accumulates the general field contribution of one point into `out`, using
/// `masks[k]` as the pattern of layer `k`. Returns the point's residual
/// `τ̲(x) − ỹ`.
fn general_point(layers: &[LayerParams], x: &[f64], target: &[f64], masks: &[SectorMask], w: f64, out: &mut [(Vec<f64>, Matrix)]) -> Vec<f64> {
    let q = x.len();
    let mut t = x.to_vec();
    let mut zs = Vec::with_capacity(layers.len());
    for (layer, mask) in layers.iter().zip(masks) {
        let z = layer.push(&t);
        t = layer.pull(&mask.keep(&z));
        zs.push(z);
    }
    let residual = vector::sub(&t, target);
    let mut g = residual.clone();
    for k in (0..layers.len()).rev() {
        let (layer, mask, z) = (&layers[k], &masks[k], &zs[k]);
        let p = layer.rotation().apply(&g);
        let (beta_acc, omega_acc) = &mut out[k];
        vector::axpy(beta_acc, w, &layer.rotation().apply_transpose(&mask.drop(&p)));
        if mask.is_mixed() {
            for i in 0..q {
                for j in i + 1..q {
                    let dn = mask.indicator(i) - mask.indicator(j);
                    if dn != 0.0 {
                        omega_acc[(i, j)] -= w * dn * 0.5 * (z[i] * p[j] + p[i] * z[j]);
                    }
                }
            }
        }
        g = layer.rotation().apply_transpose(&mask.keep(&p));
    }
    residual
}

/// General field for every layer, with `masks[c][i][k]` the pattern of point
/// `i` of cluster `c` at layer `k`.
pub(crate) fn general_rhs_with(state: &ModelState, data: &TrainingSet, masks: &[Vec<Vec<SectorMask>>]) -> Vec<LayerRhs> {
    let q = state.dim();
    let mut acc: Vec<(Vec<f64>, Matrix)> = (0..state.depth()).map(|_| (vec![0.0; q], Matrix::zeros(q, q))).collect();
    for (c, cluster) in data.clusters().iter().enumerate() {
        let w = 1.0 / cluster.len() as f64;
        for (x, m) in cluster.iter().zip(&masks[c]) {
            general_point(state.layers(), x, state.pulled_label(c), m, w, &mut acc);
        }
    }
    acc.into_iter()
        .map(|(beta_dot, omega)| LayerRhs { beta_dot, omega: AntisymmetricMatrix::from_upper(q, |i, j| omega[(i, j)]) })
        .collect()
}

/// Field of every layer with no separation assumption.
///
/// Each point is pushed through the whole chain `t_k = A_k t_{k−1} − A_k⊥ β_k`
/// with `A_k = R_kᵀ H_k R_k`; the residual `e = τ̲(x) − ỹ` is pulled back
/// through `g_{k−1} = A_k g_k`, and layer `k` receives `β̇_k += A_k⊥ g_k` and
/// `Ω_k −= [H_k, (z_k p_kᵀ + p_k z_kᵀ)/2]` with `p_k = R_k g_k`.
pub fn general_rhs(state: &ModelState, data: &TrainingSet) -> Result<Vec<LayerRhs>> {
    if data.dim() != state.dim() {
        return Err(Error::DimensionMismatch { expected: state.dim(), found: data.dim() });
    }
    if data.num_clusters() != state.labels().len() {
        return Err(Error::DimensionMismatch { expected: state.labels().len(), found: data.num_clusters() });
    }
    let masks: Vec<Vec<Vec<SectorMask>>> = data
        .clusters()
        .iter()
        .map(|c| c.iter().map(|x| chain_masks(state.layers(), x)).collect())
        .collect();
    Ok(general_rhs_with(state, data, &masks))
}

/// Chained projectors of a point over layers `from..to` (0-based, half-open).
#[derive(Clone, Debug, PartialEq)]
pub struct ChainedProjectors {
    /// `P⁺ = A_{to−1} ⋯ A_from`
    pub p_plus: Matrix,
    /// `P⁻_k = A_{to−1} ⋯ A_{k+1} A_k⊥` for `k` in `from..to`.
    pub p_minus: Vec<Matrix>,
}

impl ChainedProjectors {
    /// `P⁺x − Σ_k P⁻_k β_k`
    pub fn apply(&self, layers: &[LayerParams], from: usize, x: &[f64]) -> Vec<f64> {
        let mut t = self.p_plus.mul_vec(x);
        for (k, pm) in self.p_minus.iter().enumerate() {
            vector::axpy(&mut t, -1.0, &pm.mul_vec(layers[from + k].beta()));
        }
        t
    }
}

/// Writes the chain of truncations as products of the orthogonal projectors
/// `A_k = R_kᵀ H_k R_k`, with each `H_k` read at the point's truncation by
/// the preceding layers of the range.
pub fn chained_projectors(state: &ModelState, x: &[f64], from: usize, to: usize) -> Result<ChainedProjectors> {
    let layers = state.layers();
    if from > to || to > layers.len() {
        return Err(Error::IndexRange { from, to, layers: layers.len() });
    }
    if x.len() != state.dim() {
        return Err(Error::DimensionMismatch { expected: state.dim(), found: x.len() });
    }
    let q = state.dim();
    let ident = Matrix::identity(q);
    let mut p_plus = ident.clone();
    let mut p_minus: Vec<Matrix> = Vec::with_capacity(to - from);
    let mut t = x.to_vec();
    for layer in &layers[from..to] {
        let z = layer.push(&t);
        let mask = heaviside_mask(&z);
        let r = layer.rotation().as_matrix();
        let h = Matrix::diagonal(&(0..q).map(|i| mask.indicator(i)).collect::<Vec<_>>());
        let a = &(&r.transpose() * &h) * r;
        let a_perp = &ident - &a;
        for pm in p_minus.iter_mut() {
            *pm = &a * pm;
        }
        p_minus.push(a_perp);
        p_plus = &a * &p_plus;
        t = layer.pull(&mask.keep(&z));
    }
    Ok(ChainedProjectors { p_plus, p_minus })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::OrthogonalMatrix;
    use crate::model::chained_truncation;

    fn single_layer(r: OrthogonalMatrix, beta: Vec<f64>, label: Vec<f64>) -> ModelState {
        let q = beta.len();
        ModelState::new(vec![LayerParams::new(r, beta).unwrap()], Matrix::identity(q), vec![label]).unwrap()
    }

    #[test]
    fn untruncated_cluster_is_stationary() {
        let s = single_layer(OrthogonalMatrix::givens(2, 0, 1, 0.4), vec![10.0, 10.0], vec![1.0, -2.0]);
        let data = TrainingSet::new(vec![vec![vec![0.1, 0.3], vec![-0.5, 1.0]]]).unwrap();
        let rhs = effective_rhs(&s, &data, 0).unwrap();
        assert_eq!(rhs, LayerRhs::zeros(2));
    }

    #[test]
    fn truncated_cluster_contracts_the_bias() {
        let beta = vec![-10.0, -12.0];
        let label = vec![1.0, -2.0];
        let s = single_layer(OrthogonalMatrix::givens(2, 0, 1, 0.4), beta.clone(), label.clone());
        let data = TrainingSet::new(vec![vec![vec![0.1, 0.3], vec![-0.5, 1.0]]]).unwrap();
        let rhs = effective_rhs(&s, &data, 0).unwrap();
        let expected = vector::scale(&vector::add(&beta, &label), -1.0);
        assert!(vector::norm(&vector::sub(&rhs.beta_dot, &expected)) < 1e-14);
        assert_eq!(rhs.omega, AntisymmetricMatrix::zeros(2));
    }

    #[test]
    fn bias_at_label_has_no_drift() {
        let label = vec![0.3, -0.4];
        let s = single_layer(OrthogonalMatrix::givens(2, 0, 1, 0.9), vec![-0.3, 0.4], label);
        let data = TrainingSet::new(vec![vec![vec![1.0, -2.0], vec![-1.0, 0.5], vec![2.0, 2.0]]]).unwrap();
        let rhs = effective_rhs(&s, &data, 0).unwrap();
        assert!(vector::max_abs(&rhs.beta_dot) == 0.0);
    }

    #[test]
    fn single_mixed_point_by_hand() {
        // z = (1, −1) in sector (1, 0), u = (a, b): Ω₁₂ = (z₁b + a z₂ − z₁z₂)/2 = (b − a + 1)/2
        let (a, b) = (0.25, -0.75);
        let s = single_layer(OrthogonalMatrix::identity(2), vec![0.0, 0.0], vec![a, b]);
        let data = TrainingSet::new(vec![vec![vec![1.0, -1.0]]]).unwrap();
        let rhs = effective_rhs(&s, &data, 0).unwrap();
        assert!((rhs.omega.as_matrix()[(0, 1)] - (b - a + 1.0) / 2.0).abs() < 1e-15);
        assert!((rhs.omega.as_matrix()[(1, 0)] + (b - a + 1.0) / 2.0).abs() < 1e-15);
        let m = moment_form_rhs(&s, &data, 0).unwrap();
        assert!((&m.omega.into_matrix() - rhs.omega.as_matrix()).max_abs() < 1e-15);
    }

    #[test]
    fn moment_form_vanishes_on_diagonal_sectors() {
        let s = single_layer(OrthogonalMatrix::identity(2), vec![0.0, 0.0], vec![3.0, 1.0]);
        let data = TrainingSet::new(vec![vec![vec![1.0, 2.0], vec![-1.0, -2.0]]]).unwrap();
        let rhs = moment_form_rhs(&s, &data, 0).unwrap();
        assert_eq!(rhs.omega, AntisymmetricMatrix::zeros(2));
    }

    #[test]
    fn general_rhs_all_positive_is_zero() {
        let layers = vec![
            LayerParams::new(OrthogonalMatrix::givens(2, 0, 1, 0.2), vec![10.0, 10.0]).unwrap(),
            LayerParams::new(OrthogonalMatrix::givens(2, 0, 1, -0.7), vec![20.0, 20.0]).unwrap(),
        ];
        let s = ModelState::new(layers, Matrix::identity(2), vec![vec![1.0, 1.0], vec![0.0, -3.0]]).unwrap();
        let data = TrainingSet::new(vec![vec![vec![0.5, 0.5]], vec![vec![-1.0, 2.0], vec![0.3, 0.1]]]).unwrap();
        for rhs in general_rhs(&s, &data).unwrap() {
            assert_eq!(rhs, LayerRhs::zeros(2));
        }
    }

    #[test]
    fn projector_edge_cases() {
        let s = single_layer(OrthogonalMatrix::givens(2, 0, 1, 0.5), vec![10.0, 10.0], vec![0.0, 0.0]);
        let p = chained_projectors(&s, &[0.0, 0.0], 0, 1).unwrap();
        assert!((&p.p_plus - &Matrix::identity(2)).max_abs() < 1e-15);
        assert!(p.p_minus[0].max_abs() < 1e-15);

        let s = single_layer(OrthogonalMatrix::givens(2, 0, 1, 0.5), vec![-10.0, -10.0], vec![0.0, 0.0]);
        let p = chained_projectors(&s, &[0.0, 0.0], 0, 1).unwrap();
        assert_eq!(p.p_plus, Matrix::zeros(2, 2));
        assert!((&p.p_minus[0] - &Matrix::identity(2)).max_abs() < 1e-15);
        assert!(matches!(chained_projectors(&s, &[0.0, 0.0], 0, 2), Err(Error::IndexRange { .. })));
    }

    #[test]
    fn projector_expansion_reproduces_the_chain() {
        let layers = vec![
            LayerParams::new(OrthogonalMatrix::givens(3, 0, 1, 0.5), vec![0.1, -0.2, 0.3]).unwrap(),
            LayerParams::new(OrthogonalMatrix::givens(3, 1, 2, -1.1), vec![-0.4, 0.2, 0.0]).unwrap(),
            LayerParams::new(OrthogonalMatrix::givens(3, 0, 2, 2.0), vec![0.3, 0.3, -0.1]).unwrap(),
        ];
        let s = ModelState::new(layers, Matrix::identity(3), vec![vec![0.0; 3]]).unwrap();
        for x in [[0.7, -0.3, 0.2], [-1.0, 0.4, 0.9], [0.05, 0.05, -0.6]] {
            for (from, to) in [(0, 3), (1, 3), (0, 2), (2, 2)] {
                let p = chained_projectors(&s, &x, from, to).unwrap();
                let direct = chained_truncation(s.layers(), &x, from, to).unwrap();
                let expanded = p.apply(s.layers(), from, &x);
                assert!(vector::max_abs(&vector::sub(&direct, &expanded)) < 1e-12);
            }
        }
    }
}
