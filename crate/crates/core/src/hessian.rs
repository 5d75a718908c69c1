//! Certified Hessian bounds for scalar networks.
//!
//! Two-layer networks get a matrix sandwich `N ⪯ ∇²J ⪯ M`; deeper networks a
//! scalar `λ ≥ sup ‖∇²J‖₂` assembled from per-layer Lipschitz constants and the
//! weighted ℓ∞ norms of the suffix Jacobians.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::lipschitz::{
    jacobian_elementwise_bound, lipschitz_report, suffix_weighted_lipschitz, LipschitzMethod, LipschitzReport, Norm,
};
use crate::localize::LocalBounds;
use crate::model::ScalarNetwork;

#[derive(Debug, Clone, PartialEq)]
pub enum HessianBound {
    /// `N ⪯ ∇²J(x) ⪯ M` on the region.
    Matrix { m: DMatrix<f64>, n: DMatrix<f64> },
    /// `‖∇²J(x)‖₂ ≤ λ` on the region.
    Scalar(f64),
}

impl HessianBound {
    /// A scalar curvature bound valid in every direction: `δᵀ∇²Jδ ≤ λ‖δ‖²`.
    pub fn upper_curvature(&self) -> f64 {
        match self {
            HessianBound::Scalar(l) => *l,
            HessianBound::Matrix { m, .. } => m.symmetric_eigenvalues().max().max(0.0),
        }
    }

    /// Scalar bound on `‖∇²J‖₂` derived from either kind.
    pub fn spectral_bound(&self) -> f64 {
        match self {
            HessianBound::Scalar(l) => *l,
            HessianBound::Matrix { m, n } => {
                let top = m.symmetric_eigenvalues().max();
                let bottom = n.symmetric_eigenvalues().min();
                top.max(-bottom).max(0.0)
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            HessianBound::Matrix { .. } => "matrix",
            HessianBound::Scalar(_) => "scalar",
        }
    }
}

/// Matrix bounds for `J(x) = w₂ᵀσ(W₁x + b₁) + b₂`.
///
/// With `v = W₂ᵀ` (the single output row), unit `j` contributes
/// `σ″(z_j) v_j w_j w_jᵀ` where `w_j` is row `j` of `W₁`; the sign of `v_j`
/// decides which curvature endpoint bounds it from above.
pub fn hessian_two_layer(net: &ScalarNetwork, local: &LocalBounds) -> Result<HessianBound> {
    let inner = net.network();
    if inner.depth() != 2 {
        return Err(Error::InvalidInput(format!(
            "matrix Hessian bound needs exactly one hidden layer, got {}",
            inner.depth() - 1
        )));
    }
    local.check_against(inner)?;
    let w1 = &inner.layers()[0].weight;
    let v = inner.layers()[1].weight.row(0);
    let (lo, hi) = (&local.curv_lo[0], &local.curv_hi[0]);
    let mut mu = DVector::zeros(v.len());
    let mut nu = DVector::zeros(v.len());
    for j in 0..v.len() {
        let (pos, neg) = (v[j].max(0.0), v[j].min(0.0));
        mu[j] = hi[j] * pos + lo[j] * neg;
        nu[j] = lo[j] * pos + hi[j] * neg;
    }
    let m = weighted_gram(w1, &mu);
    let n = weighted_gram(w1, &nu);
    Ok(HessianBound::Matrix { m, n })
}

/// `W₁ᵀ diag(s) W₁`, symmetrized.
fn weighted_gram(w1: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut scaled = w1.clone();
    for (j, mut row) in scaled.row_iter_mut().enumerate() {
        row *= s[j];
    }
    let g = w1.tr_mul(&scaled);
    (&g + g.transpose()) * 0.5
}

/// `max_j h_j S_j` for every hidden layer, optionally tightened by the
/// suffix-network estimate.
pub fn weighted_suffix_factors(net: &ScalarNetwork, local: &LocalBounds, with_suffix: bool) -> Result<Vec<f64>> {
    let inner = net.network();
    (0..inner.depth() - 1)
        .map(|l| {
            let s = jacobian_elementwise_bound(inner, local, l)?;
            let f = s.component_mul(&local.h[l]).max().max(0.0);
            if with_suffix {
                Ok(f.min(suffix_weighted_lipschitz(inner, local, l)?))
            } else {
                Ok(f)
            }
        })
        .collect()
}

/// `λ = Σ_l L_l² · max_j h_j S_j` from ℓ2 subnetwork constants `lip.subnet`
/// and element-wise Jacobian bounds `jac[l]`.
pub fn hessian_norm_bound(
    net: &ScalarNetwork,
    local: &LocalBounds,
    lip: &LipschitzReport,
    jac: &[DVector<f64>],
) -> Result<HessianBound> {
    let factors: Vec<f64> = jac
        .iter()
        .zip(&local.h)
        .map(|(s, h)| {
            check_dim("jacobian bound width", h.len(), s.len())?;
            Ok(s.component_mul(h).max().max(0.0))
        })
        .collect::<Result<_>>()?;
    combine(net, local, lip, &factors)
}

fn combine(net: &ScalarNetwork, local: &LocalBounds, lip: &LipschitzReport, factors: &[f64]) -> Result<HessianBound> {
    let hidden = net.depth() - 1;
    local.check_against(net.network())?;
    if lip.norm != Norm::L2 {
        return Err(Error::InvalidInput("Hessian bound needs l2 subnetwork constants".into()));
    }
    if lip.subnet.len() != hidden || factors.len() != hidden {
        return Err(Error::InvalidInput(format!(
            "expected {hidden} subnetwork constants and factors, got {} and {}",
            lip.subnet.len(),
            factors.len()
        )));
    }
    let lambda: f64 = lip.subnet.iter().zip(factors).map(|(l, f)| l * l * f).sum();
    Ok(HessianBound::Scalar(lambda.max(0.0)))
}

/// Scalar bound computed end to end, with ℓ2 subnetwork constants from `method`.
pub fn scalar_hessian_bound(
    net: &ScalarNetwork,
    local: &LocalBounds,
    method: LipschitzMethod,
    with_suffix: bool,
) -> Result<HessianBound> {
    let lip = lipschitz_report(net.network(), local, Norm::L2, method)?;
    let factors = weighted_suffix_factors(net, local, with_suffix)?;
    combine(net, local, &lip, &factors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lipschitz::{liplt, LoopTransform};
    use crate::model::{Activation, Layer, Network};
    use crate::sets::BoxRegion;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn opposite_outputs_on_identity_weights() {
        let net = Network::new(vec![
            Layer::new(DMatrix::identity(2, 2), dv(&[0.0, 0.0]), Some(Activation::Tanh)),
            Layer::new(DMatrix::from_row_slice(1, 2, &[1.0, -1.0]), dv(&[0.0]), None),
        ])
        .unwrap();
        let j = ScalarNetwork::new(net).unwrap();
        let local = LocalBounds::global(j.network());
        let HessianBound::Matrix { m, n } = hessian_two_layer(&j, &local).unwrap() else {
            panic!("expected matrix kind")
        };
        let k = 4.0 / (3.0 * 3f64.sqrt());
        assert!((m - DMatrix::identity(2, 2) * k).amax() < 1e-12);
        assert!((n + DMatrix::identity(2, 2) * k).amax() < 1e-12);
    }

    #[test]
    fn linear_networks_have_zero_curvature() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::random(&[3, 5, 1], Activation::Identity, &mut rng);
        let j = ScalarNetwork::new(net).unwrap();
        let local = LocalBounds::global(j.network());
        let HessianBound::Matrix { m, n } = hessian_two_layer(&j, &local).unwrap() else {
            panic!()
        };
        assert_eq!(m.amax(), 0.0);
        assert_eq!(n.amax(), 0.0);
        let net = Network::random(&[3, 5, 4, 1], Activation::Identity, &mut rng);
        let j = ScalarNetwork::new(net).unwrap();
        let local = LocalBounds::global(j.network());
        assert_eq!(scalar_hessian_bound(&j, &local, LipschitzMethod::Liplt, true).unwrap(), HessianBound::Scalar(0.0));
    }

    #[test]
    fn matrix_bound_is_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let net = Network::random(&[3, 6, 1], Activation::Tanh, &mut rng);
            let j = ScalarNetwork::new(net).unwrap();
            let b = BoxRegion::new(dv(&[-1.0, -0.5, 0.0]), dv(&[0.0, 0.5, 1.0])).unwrap();
            let local = LocalBounds::localize(j.network(), &b).unwrap();
            let HessianBound::Matrix { m, n } = hessian_two_layer(&j, &local).unwrap() else {
                panic!()
            };
            assert!((m - n).symmetric_eigenvalues().min() >= -1e-9);
        }
    }

    #[test]
    fn deep_network_rejected_by_matrix_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Network::random(&[2, 4, 4, 1], Activation::Tanh, &mut rng);
        let j = ScalarNetwork::new(net).unwrap();
        assert!(hessian_two_layer(&j, &LocalBounds::global(j.network())).is_err());
    }

    #[test]
    fn explicit_assembly_matches_end_to_end() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Network::random(&[2, 8, 8, 1], Activation::Sigmoid, &mut rng);
        let j = ScalarNetwork::new(net).unwrap();
        let local = LocalBounds::global(j.network());
        let lip = liplt(j.network(), &local, &LoopTransform::default_for(&local), Norm::L2).unwrap();
        let jac: Vec<_> = (0..2)
            .map(|l| jacobian_elementwise_bound(j.network(), &local, l).unwrap())
            .collect();
        let a = hessian_norm_bound(&j, &local, &lip, &jac).unwrap().spectral_bound();
        let b = scalar_hessian_bound(&j, &local, LipschitzMethod::Liplt, false).unwrap().spectral_bound();
        let c = scalar_hessian_bound(&j, &local, LipschitzMethod::Liplt, true).unwrap().spectral_bound();
        assert_eq!(a, b);
        assert!(c <= b && c > 0.0);
    }

    #[test]
    fn missing_constants_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Network::random(&[2, 4, 4, 1], Activation::Tanh, &mut rng);
        let j = ScalarNetwork::new(net).unwrap();
        let local = LocalBounds::global(j.network());
        let lip = LipschitzReport {
            norm: Norm::L2,
            total: 1.0,
            subnet: vec![1.0],
        };
        let jac = vec![DVector::zeros(4), DVector::zeros(4)];
        assert!(hessian_norm_bound(&j, &local, &lip, &jac).is_err());
        let lip = LipschitzReport {
            norm: Norm::Inf,
            total: 1.0,
            subnet: vec![1.0, 1.0],
        };
        assert!(hessian_norm_bound(&j, &local, &lip, &jac).is_err());
    }
}
