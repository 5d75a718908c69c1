//! Lipschitz bounds: the naive layer product and the loop-transformed
//! recursion (local LipLT), plus the element-wise Jacobian recursion used for
//! the weighted ℓ∞ factors of the Hessian bound.
//!
//! Hidden layers are indexed from 0 throughout: `subnet[k]` is a constant for
//! `x ↦ z(k+1)(x)`, the preactivation of hidden layer `k`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::localize::LocalBounds;
use crate::model::Network;

/// Multiplicative margin applied to every computed spectral norm.
const NORM_MARGIN: f64 = 1.0 + 1e-9;

/// Norm of the input ball (and of the Lipschitz constants computed for it).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Norm {
    #[serde(rename = "2")]
    L2,
    #[serde(rename = "inf")]
    Inf,
}

impl Norm {
    pub fn vector_norm(self, v: &DVector<f64>) -> f64 {
        match self {
            Norm::L2 => v.norm(),
            Norm::Inf => v.amax(),
        }
    }

    /// Hölder-dual vector norm (`‖·‖₂` for ℓ2, `‖·‖₁` for ℓ∞).
    pub fn dual_norm(self, v: &DVector<f64>) -> f64 {
        match self {
            Norm::L2 => v.norm(),
            Norm::Inf => v.lp_norm(1),
        }
    }

    /// The numeric `p` (∞ as `f64::INFINITY`).
    pub fn p(self) -> f64 {
        match self {
            Norm::L2 => 2.0,
            Norm::Inf => f64::INFINITY,
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Norm::L2 => "2",
            Norm::Inf => "inf",
        })
    }
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2" | "l2" => Ok(Norm::L2),
            "inf" | "linf" | "infinity" => Ok(Norm::Inf),
            other => Err(Error::Unsupported(format!("norm {other:?} (use 2 or inf)"))),
        }
    }
}

/// Induced norm `‖A‖_{p→p}`.
///
/// ℓ∞ is the exact maximum absolute row sum. ℓ2 is the largest singular value,
/// obtained from the eigenvalues of the smaller Gram matrix and inflated by a
/// relative margin of 1e-9.
pub fn operator_norm(a: &DMatrix<f64>, p: Norm) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::InvalidInput("operator norm of an empty matrix".into()));
    }
    Ok(match p {
        Norm::Inf => a.row_iter().map(|r| r.abs().sum()).fold(0.0, f64::max),
        Norm::L2 => spectral_norm(a),
    })
}

fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 1 || a.ncols() == 1 {
        return a.norm() * NORM_MARGIN;
    }
    if a.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let gram = if a.nrows() <= a.ncols() {
        a * a.transpose()
    } else {
        a.tr_mul(a)
    };
    let top = gram.symmetric_eigenvalues().max().max(0.0);
    top.sqrt() * NORM_MARGIN
}

/// Loop transformation `d(l)` per hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopTransform {
    pub d: Vec<DVector<f64>>,
}

impl LoopTransform {
    /// `d = β/2`, clamped to `(α+β)/2` (vacuous when `α ≥ 0`).
    pub fn default_for(local: &LocalBounds) -> Self {
        Self {
            d: local
                .alpha
                .iter()
                .zip(&local.beta)
                .map(|(a, b)| b.zip_map(a, |bi, ai| (0.5 * bi).min(0.5 * (ai + bi))))
                .collect(),
        }
    }

    pub fn zero(local: &LocalBounds) -> Self {
        Self {
            d: local.beta.iter().map(|b| DVector::zeros(b.len())).collect(),
        }
    }

    /// `d = (α+β)/2`, the homogeneous-slope optimum.
    pub fn midpoint(local: &LocalBounds) -> Self {
        Self {
            d: local.alpha.iter().zip(&local.beta).map(|(a, b)| (a + b) * 0.5).collect(),
        }
    }

    /// Checks `0 ≤ d ≤ (α+β)/2` element-wise.
    pub fn validate(&self, local: &LocalBounds) -> Result<()> {
        check_dim("loop transform layers", local.hidden_layers(), self.d.len())?;
        for (l, d) in self.d.iter().enumerate() {
            check_dim("loop transform width", local.beta[l].len(), d.len())?;
            for i in 0..d.len() {
                let cap = 0.5 * (local.alpha[l][i] + local.beta[l][i]);
                if !(d[i] >= 0.0 && d[i] <= cap * (1.0 + 1e-15) + 1e-300) {
                    return Err(Error::InvalidInput(format!(
                        "loop transform d[{l}][{i}] = {} outside [0, {cap}]",
                        d[i]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Lipschitz constants of the full network and of every hidden preactivation map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub norm: Norm,
    pub total: f64,
    pub subnet: Vec<f64>,
}

/// Output of the core recursion over a bare chain of weights.
struct Recursion {
    total: f64,
    subnet: Vec<f64>,
}

fn scale_rows(m: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= s[i];
    }
    out
}

fn scale_cols(m: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= s[j];
    }
    out
}

/// The loop-transformed recursion over `weights[0..L]` with slope caps `beta`
/// and transforms `d` for the `L-1` hidden layers.
///
/// `m[k]` bounds `x ↦ D′(k) z(k)` with `D′ = diag(β − d)`; the last stage uses
/// `D′ = I`. The same partial products give the `z(k)` constants (`D′ = I` at
/// stage `k`), so both come out of one pass.
fn recursion(weights: &[&DMatrix<f64>], beta: &[DVector<f64>], d: &[DVector<f64>], p: Norm) -> Recursion {
    let depth = weights.len();
    let mut m = Vec::with_capacity(depth);
    let mut subnet = Vec::with_capacity(depth.saturating_sub(1));
    for k in 0..depth {
        let hidden = k + 1 < depth;
        let dprime = hidden.then(|| &beta[k] - &d[k]);
        let mut q = weights[k].clone();
        let mut acc = 0.0;
        let mut acc_z = 0.0;
        for j in (0..k).rev() {
            let nq = norm_unchecked(&q, p);
            if let Some(dp) = &dprime {
                acc += norm_unchecked(&scale_rows(&q, dp), p) * m[j];
            } else {
                acc += nq * m[j];
            }
            acc_z += nq * m[j];
            q = scale_cols(&q, &d[j]) * weights[j];
        }
        let nq = norm_unchecked(&q, p);
        match &dprime {
            Some(dp) => acc += norm_unchecked(&scale_rows(&q, dp), p),
            None => acc += nq,
        }
        acc_z += nq;
        if hidden {
            subnet.push(acc_z);
        }
        m.push(acc);
    }
    Recursion {
        total: m[depth - 1],
        subnet,
    }
}

fn norm_unchecked(a: &DMatrix<f64>, p: Norm) -> f64 {
    operator_norm(a, p).expect("weights are nonempty")
}

fn weights(net: &Network) -> Vec<&DMatrix<f64>> {
    net.layers().iter().map(|l| &l.weight).collect()
}

/// `‖W(L)‖ ∏ ‖diag(β(l)) W(l)‖`.
pub fn naive_lipschitz(net: &Network, local: &LocalBounds, p: Norm) -> Result<f64> {
    local.check_against(net)?;
    let layers = net.layers();
    let mut m = 1.0;
    for (k, layer) in layers.iter().enumerate() {
        let factor = if k + 1 < layers.len() {
            norm_unchecked(&scale_rows(&layer.weight, &local.beta[k]), p)
        } else {
            norm_unchecked(&layer.weight, p)
        };
        m = if k == 0 { factor } else { factor * m };
    }
    Ok(m)
}

/// Local LipLT with an explicit loop transformation.
pub fn liplt(net: &Network, local: &LocalBounds, lt: &LoopTransform, p: Norm) -> Result<LipschitzReport> {
    local.check_against(net)?;
    lt.validate(local)?;
    let r = recursion(&weights(net), &local.beta, &lt.d, p);
    Ok(LipschitzReport {
        norm: p,
        total: r.total,
        subnet: r.subnet,
    })
}

/// How the network Lipschitz constant is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LipschitzMethod {
    Naive,
    Liplt,
    LipltRefine,
}

impl LipschitzMethod {
    pub fn name(self) -> &'static str {
        match self {
            LipschitzMethod::Naive => "naive",
            LipschitzMethod::Liplt => "liplt",
            LipschitzMethod::LipltRefine => "liplt-refine",
        }
    }
}

impl std::str::FromStr for LipschitzMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(LipschitzMethod::Naive),
            "liplt" => Ok(LipschitzMethod::Liplt),
            "liplt-refine" => Ok(LipschitzMethod::LipltRefine),
            other => Err(Error::Unsupported(format!("Lipschitz method {other:?}"))),
        }
    }
}

/// Full report for `method`. The naive report is the recursion with `d = 0`,
/// whose total coincides with [`naive_lipschitz`].
pub fn lipschitz_report(net: &Network, local: &LocalBounds, p: Norm, method: LipschitzMethod) -> Result<LipschitzReport> {
    match method {
        LipschitzMethod::Naive => liplt(net, local, &LoopTransform::zero(local), p),
        LipschitzMethod::Liplt => liplt(net, local, &LoopTransform::default_for(local), p),
        LipschitzMethod::LipltRefine => {
            let (lt, _) = refine_loop_transform(net, local, p, 50)?;
            liplt(net, local, &lt, p)
        }
    }
}

/// Constant for `x ↦ z(l+1)(x)`, hidden layer `l` (0-based).
pub fn subnet_lipschitz(
    net: &Network,
    local: &LocalBounds,
    lt: &LoopTransform,
    p: Norm,
    l: usize,
) -> Result<f64> {
    if l + 1 >= net.depth() {
        return Err(Error::InvalidInput(format!(
            "hidden layer index {l} out of range (network has {} hidden layers)",
            net.depth() - 1
        )));
    }
    Ok(liplt(net, local, lt, p)?.subnet[l])
}

/// Projected coordinate descent on `d ∈ [0, (α+β)/2]`, started at `β/2`.
///
/// Each coordinate is minimized by golden-section search; a move is kept only
/// if it lowers the total bound, so the result never exceeds the `β/2` value.
pub fn refine_loop_transform(
    net: &Network,
    local: &LocalBounds,
    p: Norm,
    sweeps: usize,
) -> Result<(LoopTransform, f64)> {
    local.check_against(net)?;
    let ws = weights(net);
    let mut lt = LoopTransform::default_for(local);
    let eval = |lt: &LoopTransform| recursion(&ws, &local.beta, &lt.d, p).total;
    let mut best = eval(&lt);
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    for _ in 0..sweeps {
        let start = best;
        for l in 0..lt.d.len() {
            for i in 0..lt.d[l].len() {
                let cap = 0.5 * (local.alpha[l][i] + local.beta[l][i]);
                if cap <= 0.0 {
                    continue;
                }
                let mut trial = lt.clone();
                let mut f = |v: f64| {
                    trial.d[l][i] = v;
                    eval(&trial)
                };
                let (mut a, mut b) = (0.0, cap);
                let mut c = b - INV_PHI * (b - a);
                let mut e = a + INV_PHI * (b - a);
                let (mut fc, mut fe) = (f(c), f(e));
                for _ in 0..60 {
                    if fc <= fe {
                        b = e;
                        e = c;
                        fe = fc;
                        c = b - INV_PHI * (b - a);
                        fc = f(c);
                    } else {
                        a = c;
                        c = e;
                        fc = fe;
                        e = a + INV_PHI * (b - a);
                        fe = f(e);
                    }
                    if b - a <= 1e-12 * cap {
                        break;
                    }
                }
                let candidates = [0.0, cap, c, e];
                let (v, fv) = candidates
                    .iter()
                    .map(|&v| (v, f(v)))
                    .fold((lt.d[l][i], best), |acc, x| if x.1 < acc.1 { x } else { acc });
                lt.d[l][i] = v;
                best = fv;
            }
        }
        if start - best <= 1e-12 * start.abs() {
            break;
        }
    }
    Ok((lt, best))
}

/// Element-wise bound `S` on `|∂z(L)/∂a(l+1)|` for a scalar network.
///
/// `S = |W(L)| diag(β) |W(L-1)| ⋯ diag(β) |W(l+2)|`, evaluated right to left.
pub fn jacobian_elementwise_bound(net: &Network, local: &LocalBounds, l: usize) -> Result<DVector<f64>> {
    check_dim("jacobian bound output", 1, net.output_dim())?;
    local.check_against(net)?;
    let depth = net.depth();
    if l + 1 >= depth {
        return Err(Error::InvalidInput(format!("hidden layer index {l} out of range")));
    }
    let layers = net.layers();
    let mut s = layers[depth - 1].weight.row(0).abs().transpose();
    for k in (l + 1..depth - 1).rev() {
        let scaled = s.component_mul(&local.beta[k]);
        s = layers[k].weight.abs().tr_mul(&scaled);
    }
    Ok(s)
}

/// Alternative bound on `max_j h_j |∂z(L)/∂a(l+1)_j|`: the ℓ2 LipLT constant of
/// the suffix network whose first weight is scaled on the input side by `h`.
pub fn suffix_weighted_lipschitz(net: &Network, local: &LocalBounds, l: usize) -> Result<f64> {
    local.check_against(net)?;
    let depth = net.depth();
    if l + 1 >= depth {
        return Err(Error::InvalidInput(format!("hidden layer index {l} out of range")));
    }
    let layers = net.layers();
    let first = scale_cols(&layers[l + 1].weight, &local.h[l]);
    let mut ws: Vec<&DMatrix<f64>> = vec![&first];
    ws.extend(layers[l + 2..].iter().map(|layer| &layer.weight));
    let beta = &local.beta[l + 1..];
    let d: Vec<_> = local.alpha[l + 1..]
        .iter()
        .zip(beta)
        .map(|(a, b)| b.zip_map(a, |bi, ai| (0.5 * bi).min(0.5 * (ai + bi))))
        .collect();
    Ok(recursion(&ws, beta, &d, Norm::L2).total)
}
