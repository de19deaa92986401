//! Gradient-flow dynamics of deep ReLU networks expressed in input space.
//!
//! Every hidden layer is reduced to an aligned pair `(R, β)` of a rotation and
//! a cumulative bias. The layer acts on input points through its truncation
//! map `x ↦ Rᵀσ(R(x + β)) − β`, and training by gradient descent becomes a
//! flow of these pairs driven by sector-constrained moments of the data
//! clusters.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the command line
//! front end and parallel verification live in the `truncflow` crate.
//!
//! Module map:
//!
//! * [`manifold`]: dense matrices, the orthogonal group, its Lie algebra.
//! * [`model`]: layer parameters, truncation maps, sectors and costs.
//! * [`measures`]: training clusters as empirical measures and their moments.
//! * [`flows`]: vector fields and integrators for every flow.
//! * [`oracle`]: finite-difference gradients and reference integration.
//! * [`scenario`]: seeded generators for initial data and test configurations.
//! * [`fit`]: least-squares decay-rate fitting.

#![no_std]
// when std is anywhere in the build graph (tests, dev-dependencies) its inherent
// float methods shadow `num_traits::Float`
#![allow(unused_imports)]

extern crate alloc;

pub mod error;
pub mod fit;
pub mod flows;
pub mod manifold;
pub mod measures;
pub mod model;
pub mod oracle;
pub mod scenario;
pub mod vector;

pub use error::{Error, Result};
pub use manifold::{AntisymmetricMatrix, Matrix, OrthogonalMatrix};
pub use measures::{Moments, TrainingSet};
pub use model::{LayerParams, ModelState, SectorMask};
