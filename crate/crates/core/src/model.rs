//! Network state in cumulative, activation-aligned parameters and the
//! truncation maps it induces on input space.
//!
//! A hidden layer is stored as `(R, β)` with `R ∈ O(Q)`. The positive
//! diagonal factor of an aligned cumulative weight `W = D R` never enters the
//! truncation map because `σ(Dx) = Dσ(x)`, so it is not stored.
//!
//! Sector convention: a coordinate equal to zero counts as truncated
//! (`h(0) = 0`). The negative sector is therefore the closed orthant `{≤ 0}`.

use alloc::vec;
use alloc::vec::Vec;


use crate::error::{Error, Result};
use crate::manifold::{decomp, Matrix, OrthogonalMatrix};
use crate::measures::TrainingSet;
use crate::vector;

/// Sign pattern `ν ∈ {0,1}^Q`; `true` marks a strictly positive coordinate.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SectorMask {
    bits: Vec<bool>,
}

impl SectorMask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_positive(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }

    pub fn is_negative(&self) -> bool {
        self.bits.iter().all(|&b| !b)
    }

    /// Neither the positive nor the negative orthant.
    pub fn is_mixed(&self) -> bool {
        !self.is_positive() && !self.is_negative()
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, positive: bool) {
        self.bits[i] = positive;
    }

    /// `h(x_i)` as a real number.
    pub fn indicator(&self, i: usize) -> f64 {
        if self.bits[i] { 1.0 } else { 0.0 }
    }

    /// Coordinatewise `H x` (keeps the untruncated coordinates).
    pub fn keep(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.bits).map(|(v, &b)| if b { *v } else { 0.0 }).collect()
    }

    /// Coordinatewise `H⊥ x` (keeps the truncated coordinates).
    pub fn drop(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.bits).map(|(v, &b)| if b { 0.0 } else { *v }).collect()
    }
}

/// Heaviside pattern of `x`: `x_i > 0` strictly.
pub fn heaviside_mask(x: &[f64]) -> SectorMask {
    SectorMask::new(x.iter().map(|&v| v > 0.0).collect())
}

/// One hidden layer in aligned cumulative form.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    rotation: OrthogonalMatrix,
    beta: Vec<f64>,
}

impl LayerParams {
    pub fn new(rotation: OrthogonalMatrix, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != rotation.dim() {
            return Err(Error::DimensionMismatch { expected: rotation.dim(), found: beta.len() });
        }
        Ok(Self { rotation, beta })
    }

    pub fn identity(dim: usize) -> Self {
        Self { rotation: OrthogonalMatrix::identity(dim), beta: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.beta.len()
    }

    pub fn rotation(&self) -> &OrthogonalMatrix {
        &self.rotation
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn set_rotation(&mut self, rotation: OrthogonalMatrix) {
        debug_assert_eq!(rotation.dim(), self.dim());
        self.rotation = rotation;
    }

    pub fn beta_mut(&mut self) -> &mut [f64] {
        &mut self.beta
    }

    /// The affine map `a(x) = R(x + β)` into the layer's activation frame.
    pub fn push(&self, x: &[f64]) -> Vec<f64> {
        self.rotation.apply(&vector::add(x, &self.beta))
    }

    /// The inverse affine map `a⁻¹(z) = Rᵀz − β`.
    pub fn pull(&self, z: &[f64]) -> Vec<f64> {
        vector::sub(&self.rotation.apply_transpose(z), &self.beta)
    }
}

fn check_len(x: &[f64], dim: usize) -> Result<()> {
    if x.len() == dim {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected: dim, found: x.len() })
    }
}

/// `τ(x) = Rᵀσ(R(x + β)) − β`.
pub fn truncation_map(layer: &LayerParams, x: &[f64]) -> Result<Vec<f64>> {
    check_len(x, layer.dim())?;
    Ok(layer.pull(&vector::relu(&layer.push(x))))
}

/// `h(R(x + β))`; all-true on the positive sector, all-false on the negative.
pub fn classify_sector(layer: &LayerParams, x: &[f64]) -> Result<SectorMask> {
    check_len(x, layer.dim())?;
    Ok(heaviside_mask(&layer.push(x)))
}

/// Composition of the truncation maps of `layers[from..to]` in ascending
/// order (0-based, half-open). An empty range returns `x`.
pub fn chained_truncation(layers: &[LayerParams], x: &[f64], from: usize, to: usize) -> Result<Vec<f64>> {
    if from > to || to > layers.len() {
        return Err(Error::IndexRange { from, to, layers: layers.len() });
    }
    let mut t = x.to_vec();
    for layer in &layers[from..to] {
        t = truncation_map(layer, &t)?;
    }
    Ok(t)
}

/// Full network state: hidden layers, fixed output map and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    layers: Vec<LayerParams>,
    output_map: Matrix,
    labels: Vec<Vec<f64>>,
    pulled_labels: Vec<Vec<f64>>,
}

/// Output maps with `σ_min/σ_max` at or below this are rejected.
pub const OUTPUT_MAP_MIN_CONDITION: f64 = 1e-12;

impl ModelState {
    /// Validates dimensions, checks that the output map is invertible and
    /// caches the pulled-back labels `ỹ = W⁻¹y` by a linear solve.
    pub fn new(layers: Vec<LayerParams>, output_map: Matrix, labels: Vec<Vec<f64>>) -> Result<Self> {
        let q = output_map.rows();
        if !output_map.is_square() || q == 0 {
            return Err(Error::DimensionMismatch { expected: output_map.rows(), found: output_map.cols() });
        }
        if layers.is_empty() {
            return Err(Error::InvalidArgument("a model needs at least one hidden layer".into()));
        }
        for layer in &layers {
            if layer.dim() != q {
                return Err(Error::DimensionMismatch { expected: q, found: layer.dim() });
            }
        }
        if labels.is_empty() {
            return Err(Error::InvalidArgument("a model needs at least one label".into()));
        }
        for y in &labels {
            check_len(y, q)?;
        }
        let svd = decomp::svd(&output_map)?;
        let ratio = svd.singular_values[q - 1] / svd.singular_values[0];
        if !(ratio > OUTPUT_MAP_MIN_CONDITION) {
            return Err(Error::SingularInput { ratio: if ratio.is_nan() { 0.0 } else { ratio } });
        }
        let lu = decomp::Lu::new(&output_map)?;
        let pulled_labels = labels.iter().map(|y| lu.solve_vec(y)).collect();
        Ok(Self { layers, output_map, labels, pulled_labels })
    }

    pub fn dim(&self) -> usize {
        self.output_map.rows()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn layer(&self, l: usize) -> &LayerParams {
        &self.layers[l]
    }

    pub fn layers_mut(&mut self) -> &mut [LayerParams] {
        &mut self.layers
    }

    pub fn output_map(&self) -> &Matrix {
        &self.output_map
    }

    pub fn labels(&self) -> &[Vec<f64>] {
        &self.labels
    }

    /// `ỹ_ℓ = (W⁽ᴼᵘᵗ⁾)⁻¹ y_ℓ`
    pub fn pulled_labels(&self) -> &[Vec<f64>] {
        &self.pulled_labels
    }

    pub fn pulled_label(&self, cluster: usize) -> &[f64] {
        &self.pulled_labels[cluster]
    }

    /// Same state with different hidden layers.
    pub fn with_layers(&self, layers: Vec<LayerParams>) -> Self {
        debug_assert_eq!(layers.len(), self.layers.len());
        Self { layers, ..self.clone() }
    }

    /// `τ̲(x)`: the chain of all hidden-layer truncations.
    pub fn full_truncation(&self, x: &[f64]) -> Result<Vec<f64>> {
        chained_truncation(&self.layers, x, 0, self.layers.len())
    }

    /// `‖β⁽ℓ⁾ + ỹ_ℓ‖`
    pub fn beta_gap(&self, layer: usize) -> f64 {
        vector::norm(&vector::add(self.layers[layer].beta(), &self.pulled_labels[layer]))
    }

    fn check_data(&self, data: &TrainingSet) -> Result<()> {
        if data.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: data.dim() });
        }
        if data.num_clusters() != self.labels.len() {
            return Err(Error::DimensionMismatch { expected: self.labels.len(), found: data.num_clusters() });
        }
        Ok(())
    }
}

/// `½ Σ_ℓ (1/N_ℓ) Σ_i |τ̲(x_ℓi) − ỹ_ℓ|²`, the cost measured in input space.
pub fn euclidean_cost(state: &ModelState, data: &TrainingSet) -> Result<f64> {
    state.check_data(data)?;
    let mut cost = 0.0;
    for (l, cluster) in data.clusters().iter().enumerate() {
        let target = state.pulled_label(l);
        let mut sum = 0.0;
        for x in cluster {
            let t = state.full_truncation(x)?;
            let d = vector::sub(&t, target);
            sum += vector::dot(&d, &d);
        }
        cost += 0.5 * sum / cluster.len() as f64;
    }
    Ok(cost)
}

/// `½ Σ_ℓ (1/N_ℓ) Σ_i |W(τ̲(x_ℓi) − ỹ_ℓ)|²`, the usual output-space cost.
pub fn standard_cost(state: &ModelState, data: &TrainingSet) -> Result<f64> {
    state.check_data(data)?;
    let w = state.output_map();
    let mut cost = 0.0;
    for (l, cluster) in data.clusters().iter().enumerate() {
        let target = state.pulled_label(l);
        let mut sum = 0.0;
        for x in cluster {
            let t = state.full_truncation(x)?;
            let d = w.mul_vec(&vector::sub(&t, target));
            sum += vector::dot(&d, &d);
        }
        cost += 0.5 * sum / cluster.len() as f64;
    }
    Ok(cost)
}
