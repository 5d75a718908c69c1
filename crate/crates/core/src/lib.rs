//! Sound reachable-set over-approximation for smooth neural networks.
//!
//! The pipeline localizes activation slopes and curvatures with interval
//! propagation, bounds Lipschitz constants with loop transformation, bounds the
//! Hessian, and tightens first-order Taylor bounds inside a branch-and-bound
//! search. Polytopic reachable sets follow from solving one such problem per
//! template direction.

pub mod bnb;
pub mod error;
pub mod hessian;
pub mod localize;
pub mod lipschitz;
pub mod model;
pub mod oracle;
pub mod reach;
pub mod sets;
pub mod taylor;

pub use error::{Error, Result};
pub use hessian::HessianBound;
pub use lipschitz::{LipschitzReport, LoopTransform, Norm};
pub use localize::LocalBounds;
pub use model::{Activation, Layer, Network, ScalarNetwork};
pub use sets::{BoxRegion, InputSet, Zonotope};
