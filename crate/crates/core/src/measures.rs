//! Training clusters viewed as empirical probability measures, and the free
//! and sector-constrained moments of their push-forwards under a layer's
//! affine map.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::manifold::Matrix;
use crate::model::{heaviside_mask, LayerParams, ModelState, SectorMask};

/// `Q` (or any number of) clusters of points in `ℝ^Q`. Each cluster is the
/// support of the uniform empirical measure `μ_ℓ`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    dim: usize,
    clusters: Vec<Vec<Vec<f64>>>,
}

impl TrainingSet {
    pub fn new(clusters: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let dim = clusters
            .iter()
            .flat_map(|c| c.first())
            .map(|p| p.len())
            .next()
            .ok_or(Error::EmptyCluster { cluster: 0 })?;
        if dim == 0 {
            return Err(Error::InvalidArgument("points must have at least one coordinate".into()));
        }
        for (l, cluster) in clusters.iter().enumerate() {
            if cluster.is_empty() {
                return Err(Error::EmptyCluster { cluster: l });
            }
            for p in cluster {
                if p.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, found: p.len() });
                }
            }
        }
        Ok(Self { dim, clusters })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn clusters(&self) -> &[Vec<Vec<f64>>] {
        &self.clusters
    }

    pub fn cluster(&self, l: usize) -> &[Vec<f64>] {
        &self.clusters[l]
    }

    /// `N_ℓ`
    pub fn count(&self, l: usize) -> usize {
        self.clusters[l].len()
    }

    pub fn counts(&self) -> Vec<usize> {
        self.clusters.iter().map(Vec::len).collect()
    }

    /// `N = Σ N_ℓ`
    pub fn total(&self) -> usize {
        self.clusters.iter().map(Vec::len).sum()
    }
}

/// Moments of the push-forward of one cluster under `a(x) = R(x + β)`.
///
/// Only occupied sectors appear as keys of the sector maps, so their size is
/// bounded by the cluster size rather than `2^Q`.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    /// Total mass, 1 for a probability measure.
    pub i0: f64,
    /// Mean of the pushed points.
    pub i1: Vec<f64>,
    /// Fraction of points with coordinate `r > 0`.
    pub j0: Vec<f64>,
    /// Fraction of points with coordinate `r ≤ 0`, i.e. `n_r / N_ℓ`.
    pub j0_perp: Vec<f64>,
    /// `(1/N_ℓ) Σ_{z ∈ ℝ^Q_ν} z`
    pub j1_by_sector: BTreeMap<SectorMask, Vec<f64>>,
    /// `(1/N_ℓ) Σ_{z ∈ ℝ^Q_ν} z zᵀ`, needed for the rotation generator.
    pub j2_by_sector: BTreeMap<SectorMask, Matrix>,
    /// `n_r`: number of points truncated in coordinate `r`.
    pub truncated_counts: Vec<usize>,
    /// `N_ℓ`
    pub count: usize,
}

/// `{R(x + β)}` for every point of the cluster.
pub fn pushforward_points(layer: &LayerParams, cluster: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    cluster
        .iter()
        .map(|x| {
            if x.len() != layer.dim() {
                Err(Error::DimensionMismatch { expected: layer.dim(), found: x.len() })
            } else {
                Ok(layer.push(x))
            }
        })
        .collect()
}

pub fn compute_moments(layer: &LayerParams, cluster: &[Vec<f64>]) -> Result<Moments> {
    if cluster.is_empty() {
        return Err(Error::EmptyCluster { cluster: 0 });
    }
    let q = layer.dim();
    let n = cluster.len();
    let inv_n = 1.0 / n as f64;
    let mut i1 = vec![0.0; q];
    let mut counts = vec![0usize; q];
    let mut j1: BTreeMap<SectorMask, Vec<f64>> = BTreeMap::new();
    let mut j2: BTreeMap<SectorMask, Matrix> = BTreeMap::new();
    for z in pushforward_points(layer, cluster)? {
        let mask = heaviside_mask(&z);
        for r in 0..q {
            i1[r] += z[r] * inv_n;
            if !mask.get(r) {
                counts[r] += 1;
            }
        }
        let m1 = j1.entry(mask.clone()).or_insert_with(|| vec![0.0; q]);
        crate::vector::axpy(m1, inv_n, &z);
        j2.entry(mask).or_insert_with(|| Matrix::zeros(q, q)).add_scaled(inv_n, &Matrix::outer(&z, &z));
    }
    let j0_perp: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let j0 = counts.iter().map(|&c| (n - c) as f64 / n as f64).collect();
    Ok(Moments {
        i0: 1.0,
        i1,
        j0,
        j0_perp,
        j1_by_sector: j1,
        j2_by_sector: j2,
        truncated_counts: counts,
        count: n,
    })
}

/// A point of `cluster` that is truncated by a foreign `layer`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeparationViolation {
    pub layer: usize,
    pub cluster: usize,
    pub point: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct SeparationReport {
    pub violations: Vec<SeparationViolation>,
}

impl SeparationReport {
    pub fn is_separated(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that each layer acts as the identity on every cluster except the
/// one sharing its index. Layers or clusters without a partner are checked
/// against all clusters, respectively all layers.
pub fn check_cluster_separation(state: &ModelState, data: &TrainingSet) -> SeparationReport {
    let mut violations = Vec::new();
    for (l, layer) in state.layers().iter().enumerate() {
        for (c, cluster) in data.clusters().iter().enumerate() {
            if c == l {
                continue;
            }
            for (i, x) in cluster.iter().enumerate() {
                if x.len() != layer.dim() || !heaviside_mask(&layer.push(x)).is_positive() {
                    violations.push(SeparationViolation { layer: l, cluster: c, point: i });
                }
            }
        }
    }
    SeparationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::OrthogonalMatrix;
    use crate::vector;

    #[test]
    fn pushforward_examples() {
        let cluster = vec![vec![1.0, -2.0], vec![0.5, 0.25]];
        let id = LayerParams::identity(2);
        assert_eq!(pushforward_points(&id, &cluster).unwrap(), cluster);

        let x = vec![0.3, -0.7];
        let l = LayerParams::new(OrthogonalMatrix::givens(2, 0, 1, 1.3), vec![-0.3, 0.7]).unwrap();
        assert_eq!(pushforward_points(&l, &[x]).unwrap(), vec![vec![0.0, 0.0]]);

        let l = LayerParams::new(OrthogonalMatrix::givens(2, 0, 1, 0.9), vec![0.2, 0.1]).unwrap();
        for (x, z) in cluster.iter().zip(pushforward_points(&l, &cluster).unwrap()) {
            assert!((vector::norm(&z) - vector::norm(&vector::add(x, l.beta()))).abs() < 1e-14);
        }
    }

    #[test]
    fn moments_of_positive_and_negative_clusters() {
        let id = LayerParams::identity(2);
        let pos = vec![vec![1.0, 2.0], vec![3.0, 0.5]];
        let m = compute_moments(&id, &pos).unwrap();
        assert_eq!(m.j0, vec![1.0, 1.0]);
        assert_eq!(m.j0_perp, vec![0.0, 0.0]);
        assert_eq!(m.j1_by_sector.len(), 1);
        assert_eq!(m.j1_by_sector[&SectorMask::new(vec![true, true])], m.i1);

        let neg = vec![vec![-1.0, -2.0], vec![0.0, -0.5]];
        let m = compute_moments(&id, &neg).unwrap();
        assert_eq!(m.j0_perp, vec![1.0, 1.0]);
    }

    #[test]
    fn truncated_fraction_counts_points() {
        let id = LayerParams::identity(2);
        let c = vec![vec![-1.0, 1.0], vec![0.0, 2.0], vec![-3.0, -1.0], vec![2.0, 1.0]];
        let m = compute_moments(&id, &c).unwrap();
        assert_eq!(m.j0_perp[0], 0.75);
        assert_eq!(m.truncated_counts, vec![3, 1]);
        let total: Vec<f64> = m.j1_by_sector.values().fold(vec![0.0; 2], |acc, v| vector::add(&acc, v));
        assert!(vector::norm(&vector::sub(&total, &m.i1)) < 1e-15);
        for r in 0..2 {
            assert_eq!(m.j0[r] + m.j0_perp[r], m.i0);
        }
    }

    #[test]
    fn empty_cluster_is_rejected() {
        assert!(matches!(compute_moments(&LayerParams::identity(2), &[]), Err(Error::EmptyCluster { .. })));
        assert!(matches!(TrainingSet::new(vec![vec![vec![1.0]], vec![]]), Err(Error::EmptyCluster { cluster: 1 })));
    }

    fn separated_two_cluster() -> (ModelState, TrainingSet) {
        let layers = vec![
            LayerParams::new(OrthogonalMatrix::identity(2), vec![0.0, 0.0]).unwrap(),
            LayerParams::new(OrthogonalMatrix::identity(2), vec![5.0, 5.0]).unwrap(),
        ];
        let state = ModelState::new(layers, Matrix::identity(2), vec![vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
        // cluster 0 straddles layer 0's boundary, every other pairing is strictly positive
        let data = TrainingSet::new(vec![
            vec![vec![6.0, -1.0], vec![7.0, 6.5]],
            vec![vec![4.0, 5.5], vec![6.0, 3.0]],
        ])
        .unwrap();
        (state, data)
    }

    #[test]
    fn separation_detects_violations() {
        let (state, data) = separated_two_cluster();
        assert!(check_cluster_separation(&state, &data).is_separated());

        let mut clusters = data.clusters().to_vec();
        clusters[1][0] = vec![4.0, -0.5];
        let moved = TrainingSet::new(clusters).unwrap();
        let report = check_cluster_separation(&state, &moved);
        assert_eq!(report.violations, vec![SeparationViolation { layer: 0, cluster: 1, point: 0 }]);
    }
}
