//! Brute-force baselines: sampled maxima, finite differences and sampled
//! Lipschitz and Hessian-norm witnesses. Each value is one-sided (a lower bound
//! on the quantity it estimates) except the derivative approximations.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::lipschitz::Norm;
use crate::sets::BoxRegion;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub quantity: String,
    pub value: f64,
    pub samples: usize,
    pub seed: u64,
}

/// Largest value of `f` over a lattice with `n_per_axis` points per axis
/// (vertices included when `n_per_axis ≥ 2`) and `n_random` seeded uniform draws.
pub fn grid_max<F>(f: F, region: &BoxRegion, n_per_axis: usize, n_random: usize, seed: u64) -> (f64, DVector<f64>)
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = region.dim();
    let mut best = (f64::NEG_INFINITY, region.center());
    let mut consider = |x: DVector<f64>| {
        let v = f(&x);
        if v > best.0 {
            best = (v, x);
        }
    };
    consider(region.center());
    if n_per_axis >= 1 {
        let total = n_per_axis.checked_pow(n as u32).unwrap_or(usize::MAX);
        let (lo, hi) = (region.lower(), region.upper());
        if total <= 50_000_000 {
            let mut idx = vec![0usize; n];
            for _ in 0..total {
                consider(DVector::from_fn(n, |i, _| {
                    if n_per_axis == 1 {
                        0.5 * (lo[i] + hi[i])
                    } else {
                        lo[i] + (hi[i] - lo[i]) * idx[i] as f64 / (n_per_axis - 1) as f64
                    }
                }));
                for i in 0..n {
                    idx[i] += 1;
                    if idx[i] < n_per_axis {
                        break;
                    }
                    idx[i] = 0;
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_random {
        consider(region.sample(&mut rng));
    }
    best
}

/// Central-difference gradient.
pub fn fd_gradient<F>(f: F, x: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    DVector::from_fn(x.len(), |i, _| {
        let mut p = x.clone();
        let mut m = x.clone();
        p[i] += h;
        m[i] -= h;
        (f(&p) - f(&m)) / (2.0 * h)
    })
}

/// Central-difference Hessian, symmetrized.
pub fn fd_hessian<F>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> f64,
{
    let n = x.len();
    let f0 = f(x);
    let mut hess = DMatrix::zeros(n, n);
    let shifted = |i: usize, si: f64, j: usize, sj: f64| {
        let mut y = x.clone();
        y[i] += si;
        y[j] += sj;
        f(&y)
    };
    for i in 0..n {
        hess[(i, i)] = (shifted(i, h, i, 0.0) - 2.0 * f0 + shifted(i, -h, i, 0.0)) / (h * h);
        for j in 0..i {
            let v = (shifted(i, h, j, h) - shifted(i, h, j, -h) - shifted(i, -h, j, h) + shifted(i, -h, j, -h))
                / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    (&hess + hess.transpose()) * 0.5
}

/// Largest observed ratio `‖g(x) − g(y)‖_p / ‖x − y‖_p` over seeded pairs in
/// `region`. Half the pairs are independent draws, half are short steps from a
/// random point so that local slopes are probed as well.
pub fn sampled_lipschitz<G>(g: G, region: &BoxRegion, n_pairs: usize, p: Norm, seed: u64) -> f64
where
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = region.max_radius().max(f64::MIN_POSITIVE);
    let mut best: f64 = 0.0;
    for k in 0..n_pairs {
        let x = region.sample(&mut rng);
        let y = if k % 2 == 0 {
            region.sample(&mut rng)
        } else {
            let dir = DVector::from_fn(x.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
            region.clamp(&(&x + dir * (1e-3 * scale)))
        };
        let dx = p.vector_norm(&(&x - &y));
        if dx > 0.0 {
            best = best.max(p.vector_norm(&(g(&x) - g(&y))) / dx);
        }
    }
    best
}

/// Largest spectral norm of the finite-difference Hessian at seeded points
/// drawn from `region` shrunk by `2h` on every side.
pub fn sampled_hessian_norm<F>(f: F, region: &BoxRegion, n_points: usize, h: f64, seed: u64) -> f64
where
    F: Fn(&DVector<f64>) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inner_lo = DVector::from_fn(region.dim(), |i, _| {
        (region.lower()[i] + 2.0 * h).min(region.center()[i])
    });
    let inner_hi = DVector::from_fn(region.dim(), |i, _| {
        (region.upper()[i] - 2.0 * h).max(region.center()[i])
    });
    let inner = BoxRegion::new(inner_lo, inner_hi).expect("shrunk box is ordered");
    let mut best: f64 = 0.0;
    for _ in 0..n_points {
        let x = inner.sample(&mut rng);
        let hs = fd_hessian(&f, &x, h);
        let e = hs.symmetric_eigenvalues();
        best = best.max(e.max().abs()).max(e.min().abs());
    }
    best
}

/// Uniform point in the ℓ2 ball.
pub fn sample_l2_ball<R: Rng + ?Sized>(center: &DVector<f64>, radius: f64, rng: &mut R) -> DVector<f64> {
    let n = center.len();
    let dir = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let r = radius * rng.gen::<f64>().powf(1.0 / n as f64);
    center + dir.normalize() * r
}

/// Maximum of a smooth `f` over the ℓ2 ball: `n_samples` seeded draws (half in
/// the ball, half on the sphere), then projected gradient ascent from the best
/// `n_polish` of them. Every reported value is an exact evaluation at a
/// feasible point.
pub fn ball_max<F, G>(
    f: F,
    grad: G,
    center: &DVector<f64>,
    radius: f64,
    n_samples: usize,
    n_polish: usize,
    seed: u64,
) -> (f64, DVector<f64>)
where
    F: Fn(&DVector<f64>) -> f64,
    G: Fn(&DVector<f64>) -> DVector<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let project = |x: DVector<f64>| {
        let d = &x - center;
        let nd = d.norm();
        if nd > radius {
            center + d * (radius / nd)
        } else {
            x
        }
    };
    let mut pts: Vec<(f64, DVector<f64>)> = (0..n_samples)
        .map(|k| {
            let mut x = sample_l2_ball(center, radius, &mut rng);
            if k % 2 == 1 {
                let d = &x - center;
                let nd = d.norm();
                if nd > 0.0 {
                    x = center + d * (radius / nd);
                }
            }
            (f(&x), x)
        })
        .collect();
    pts.sort_by(|a, b| b.0.total_cmp(&a.0));
    pts.truncate(n_polish.max(1));
    let mut best = pts[0].clone();
    for (mut v, mut x) in pts {
        let mut step = radius;
        for _ in 0..2000 {
            let g = grad(&x);
            let trial = project(&x + &g * step);
            let tv = f(&trial);
            if tv > v {
                x = trial;
                v = tv;
                step *= 1.5;
            } else {
                step *= 0.5;
                if step < 1e-15 * (1.0 + radius) {
                    break;
                }
            }
        }
        if v > best.0 {
            best = (v, x);
        }
    }
    best
}
