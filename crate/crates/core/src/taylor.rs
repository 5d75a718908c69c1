//! Zeroth- and first-order bounds on `sup J` over a norm ball.
//!
//! The first-order upper bounds maximize the quadratic model
//! `J(y) + ∇J(y)ᵀ(x−y) + ½ (x−y)ᵀ M (x−y)` over the ball, with `M = λI` or a
//! matrix from [`crate::hessian`]. Lower bounds are exact evaluations at
//! feasible points.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::lipschitz::Norm;
use crate::model::ScalarNetwork;
use crate::sets::BoxRegion;

/// `{ x_c + δ : ‖δ‖_p ≤ ε }`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallRegion {
    center: DVector<f64>,
    eps: f64,
    p: Norm,
}

impl BallRegion {
    pub fn new(center: DVector<f64>, eps: f64, p: Norm) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidInput(format!("ball radius must be positive, got {eps}")));
        }
        if center.is_empty() || center.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("ball center must be a finite nonempty vector".into()));
        }
        Ok(Self { center, eps, p })
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn norm(&self) -> Norm {
        self.p
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn contains(&self, x: &DVector<f64>, slack: f64) -> bool {
        x.len() == self.dim() && self.p.vector_norm(&(x - &self.center)) <= self.eps + slack
    }

    /// For ℓ∞, the ball as a box.
    pub fn as_box(&self) -> Option<BoxRegion> {
        match self.p {
            Norm::Inf => BoxRegion::from_center_radius(&self.center, self.eps).ok(),
            Norm::L2 => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundMethod {
    Center,
    Candidate,
    Zeroth,
    FirstOrder,
    ShiftedCenter,
    MatrixDual,
    MatrixVertex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundPair {
    pub lb: f64,
    pub ub: f64,
    pub witness: DVector<f64>,
    pub lb_method: BoundMethod,
    pub ub_method: BoundMethod,
}

/// `(J(x_c), J(x_c) + Lε)`.
pub fn zeroth_bounds(j: &ScalarNetwork, region: &BallRegion, lip: f64) -> Result<BoundPair> {
    if !(lip >= 0.0) {
        return Err(Error::InvalidInput(format!("Lipschitz constant must be nonnegative, got {lip}")));
    }
    let v = j.eval(region.center())?;
    Ok(BoundPair {
        lb: v,
        ub: v + lip * region.eps(),
        witness: region.center().clone(),
        lb_method: BoundMethod::Center,
        ub_method: BoundMethod::Zeroth,
    })
}

/// `‖δ‖₂²` maximized over the unit-radius ball, times `ε²`: `1` for ℓ2, `n` for ℓ∞.
fn square_factor(p: Norm, n: usize) -> f64 {
    match p {
        Norm::L2 => 1.0,
        Norm::Inf => n as f64,
    }
}

/// Maximum of `v + gᵀ(x−y) + ½λ‖x−y‖²` over the ball, from the value and
/// gradient at `y`. Exact for both norms.
pub fn quadratic_model_upper(value_y: f64, grad_y: &DVector<f64>, region: &BallRegion, lambda: f64, y: &DVector<f64>) -> f64 {
    let s = y - region.center();
    let u = grad_y - &s * lambda;
    let eps = region.eps();
    value_y - grad_y.dot(&s)
        + 0.5 * lambda * s.norm_squared()
        + region.norm().dual_norm(&u) * eps
        + 0.5 * lambda * square_factor(region.norm(), region.dim()) * eps * eps
}

/// Maximum of `v + gᵀ(x−y) + ½λ‖x−y‖²` over a box, from the value and
/// gradient at `y ∈ box`, with the maximizing vertex. The model is separable
/// and convex per axis, so each axis takes its better endpoint.
pub fn box_model_upper(
    value_y: f64,
    grad_y: &DVector<f64>,
    region: &BoxRegion,
    lambda: f64,
    y: &DVector<f64>,
) -> (f64, DVector<f64>) {
    let (lo, hi) = (region.lower(), region.upper());
    let mut total = value_y;
    let mut arg = y.clone();
    for i in 0..y.len() {
        let term = |e: f64| {
            let s = e - y[i];
            grad_y[i] * s + 0.5 * lambda * s * s
        };
        let (a, b) = (term(lo[i]), term(hi[i]));
        if b >= a {
            total += b;
            arg[i] = hi[i];
        } else {
            total += a;
            arg[i] = lo[i];
        }
    }
    (total, arg)
}

/// First-order upper bound expanded at `y` with scalar curvature `λ`.
pub fn first_upper(j: &ScalarNetwork, region: &BallRegion, lambda: f64, y: &DVector<f64>) -> Result<f64> {
    check_dim("expansion point", region.dim(), y.len())?;
    if !region.contains(y, 1e-12 * (1.0 + region.eps())) {
        return Err(Error::InvalidInput("expansion point lies outside the region".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidInput(format!("curvature bound must be nonnegative, got {lambda}")));
    }
    let (v, g) = j.value_and_grad(y)?;
    Ok(quadratic_model_upper(v, &g, region, lambda, y))
}

/// Maximizer of the quadratic model expanded at `y`.
pub fn optimal_perturbation(
    x_c: &DVector<f64>,
    eps: f64,
    p: Norm,
    grad_y: &DVector<f64>,
    lambda: f64,
    y: &DVector<f64>,
) -> DVector<f64> {
    let u = grad_y - (y - x_c) * lambda;
    match p {
        Norm::L2 => {
            let nu = u.norm();
            if nu > 0.0 {
                x_c + u * (eps / nu)
            } else {
                let mut x = x_c.clone();
                x[0] += eps;
                x
            }
        }
        Norm::Inf => x_c + u.map(|v| if v >= 0.0 { eps } else { -eps }),
    }
}

/// Expansion point moved toward the ℓ∞ maximizer so the first-order bound can
/// only decrease.
pub fn shifted_center(x_c: &DVector<f64>, eps: f64, grad_c: &DVector<f64>, lambda: f64) -> DVector<f64> {
    shifted_center_box(x_c, &DVector::from_element(x_c.len(), eps), grad_c, lambda)
}

/// [`shifted_center`] for a box with per-axis radii.
pub fn shifted_center_box(x_c: &DVector<f64>, radii: &DVector<f64>, grad_c: &DVector<f64>, lambda: f64) -> DVector<f64> {
    if !(lambda > 0.0) {
        return x_c.clone();
    }
    let dhat = DVector::from_fn(x_c.len(), |i, _| if grad_c[i] >= 0.0 { radii[i] } else { -radii[i] });
    let dn = dhat.norm();
    let eta = (0..grad_c.len())
        .filter(|&i| dn + dhat[i].abs() > 0.0)
        .map(|i| grad_c[i].abs() / (lambda * (dn + dhat[i].abs())))
        .fold(1.0, f64::min);
    x_c + dhat * eta
}

/// Best exact evaluation among the center and the candidates clamped into `bounds`.
pub fn first_lower(j: &ScalarNetwork, center: &DVector<f64>, bounds: &BoxRegion, candidates: &[DVector<f64>]) -> Result<(f64, DVector<f64>)> {
    let mut best = (j.eval(center)?, center.clone());
    for c in candidates {
        check_dim("candidate point", bounds.dim(), c.len())?;
        let x = bounds.clamp(c);
        let v = j.eval_unchecked(&x);
        if v > best.0 {
            best = (v, x);
        }
    }
    Ok(best)
}

/// Radius below which the first-order bound at the center beats the zeroth-order one.
pub fn epsilon_crossover(lip: f64, grad_dual: f64, lambda: f64, p: Norm, n: usize) -> f64 {
    if lambda <= 0.0 {
        return f64::INFINITY;
    }
    (2.0 / (lambda * square_factor(p, n)) * (lip - grad_dual)).max(0.0)
}

/// Result of the trust-region dual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualOutcome {
    /// Upper bound on `max gᵀδ + ½δᵀMδ` over the ball (the `J(x_c)` offset excluded).
    pub value: f64,
    /// Minimizing multiplier.
    pub multiplier: f64,
    /// The minimum sits at the left end of the feasible multiplier range.
    pub hard_case: bool,
}

/// Upper bound on `max_{‖δ‖_p ≤ ε} gᵀδ + ½δᵀMδ` by bisection on the multiplier of
/// `min_{λI ≻ M/2} λε² + ¼ gᵀ(λI − M/2)⁻¹g`.
///
/// ℓ∞ balls are enclosed in the ℓ2 ball of radius `ε√n`. Every evaluated
/// multiplier gives a valid bound, so the returned value is sound regardless of
/// bisection accuracy.
pub fn two_layer_dual_upper(grad: &DVector<f64>, m: &DMatrix<f64>, eps: f64, p: Norm) -> Result<DualOutcome> {
    let n = grad.len();
    check_dim("dual Hessian rows", n, m.nrows())?;
    check_dim("dual Hessian cols", n, m.ncols())?;
    if !(eps > 0.0) {
        return Err(Error::InvalidInput(format!("radius must be positive, got {eps}")));
    }
    let r = match p {
        Norm::L2 => eps,
        Norm::Inf => eps * (n as f64).sqrt(),
    };
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mu: Vec<f64> = eig.eigenvalues.iter().map(|v| 0.5 * v).collect();
    let gp = eig.eigenvectors.tr_mul(grad);
    let mu_max = mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lam0 = mu_max.max(0.0);
    let scale = 1.0 + lam0.abs() + gp.norm();

    let phi = |lam: f64| -> f64 {
        lam * r * r + 0.25 * (0..n).map(|i| gp[i] * gp[i] / (lam - mu[i])).sum::<f64>()
    };
    let dphi = |lam: f64| -> f64 {
        r * r - 0.25 * (0..n).map(|i| (gp[i] / (lam - mu[i])).powi(2)).sum::<f64>()
    };

    // M ≺ 0 with an interior-free optimum: λ = 0 is feasible and the dual
    // function is the unconstrained maximum.
    if mu_max < 0.0 && dphi(0.0) >= 0.0 {
        return Ok(DualOutcome {
            value: phi(0.0),
            multiplier: 0.0,
            hard_case: false,
        });
    }
    let tau = 1e-13 * scale;
    let mut lo = lam0 + tau;
    if mu_max < 0.0 {
        lo = 0.0;
    }
    if dphi(lo) >= 0.0 {
        return Ok(DualOutcome {
            value: phi(lo),
            multiplier: lo,
            hard_case: mu_max >= 0.0,
        });
    }
    let mut hi = lam0 + gp.norm() / (2.0 * r) + 1.0;
    while dphi(hi) < 0.0 {
        hi = lam0 + 2.0 * (hi - lam0);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-15 * scale {
            break;
        }
        if dphi(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (a, b) = (phi(lo), phi(hi));
    let (value, multiplier) = if a <= b { (a, lo) } else { (b, hi) };
    Ok(DualOutcome {
        value,
        multiplier,
        hard_case: false,
    })
}

/// Exact maximum of `gᵀδ + ½δᵀMδ` over the vertices of `bounds` (δ-space),
/// which is the box maximum when `M ⪰ 0`. Vertices are visited in Gray-code
/// order with `Mδ` updated one column at a time.
pub fn vertex_upper(grad: &DVector<f64>, m: &DMatrix<f64>, bounds: &BoxRegion) -> Result<(f64, DVector<f64>)> {
    let n = grad.len();
    check_dim("vertex Hessian rows", n, m.nrows())?;
    check_dim("vertex Hessian cols", n, m.ncols())?;
    check_dim("vertex box", n, bounds.dim())?;
    if n > 20 {
        return Err(Error::Unsupported(format!("vertex enumeration in {n} dimensions")));
    }
    let min_eig = ((m + m.transpose()) * 0.5).symmetric_eigenvalues().min();
    if min_eig < -1e-9 * (1.0 + m.amax()) {
        return Err(Error::InvalidInput(format!("vertex bound needs M ⪰ 0, smallest eigenvalue {min_eig}")));
    }
    let (lo, hi) = (bounds.lower(), bounds.upper());
    let quad = |d: &DVector<f64>| grad.dot(d) + 0.5 * d.dot(&(m * d));
    let mut delta = lo.clone();
    let mut md = m * &delta;
    let mut val = quad(&delta);
    let mut best = (val, 0usize);
    let mut at_hi = vec![false; n];
    for k in 1usize..(1 << n) {
        let i = k.trailing_zeros() as usize;
        let target = if at_hi[i] { lo[i] } else { hi[i] };
        let step = target - delta[i];
        val += grad[i] * step + step * md[i] + 0.5 * m[(i, i)] * step * step;
        md += m.column(i) * step;
        delta[i] = target;
        at_hi[i] = !at_hi[i];
        if val > best.0 {
            best = (val, k ^ (k >> 1));
        }
    }
    let gray = best.1;
    let vertex = DVector::from_fn(n, |i, _| if gray >> i & 1 == 1 { hi[i] } else { lo[i] });
    Ok((quad(&vertex), vertex))
}
