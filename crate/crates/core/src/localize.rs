//! Interval bound propagation and localized activation constants.
//!
//! [`ibp_intervals`] pushes a box through the network with center/radius
//! arithmetic. [`LocalBounds`] turns the resulting preactivation intervals into
//! per-unit slope bounds `[α, β]` and curvature bounds `[α′, β′]`, using the
//! closed-form shape of each activation's first and second derivative.

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};
use crate::model::{Activation, Network};
use crate::sets::BoxRegion;

/// Relative widening applied to computed extrema and propagated radii.
const GUARD: f64 = 1e-12;

/// Preactivation intervals of the hidden layers, plus the output range.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerIntervals {
    pub lower: Vec<DVector<f64>>,
    pub upper: Vec<DVector<f64>>,
    pub output_lower: DVector<f64>,
    pub output_upper: DVector<f64>,
}

impl LayerIntervals {
    pub fn hidden_layers(&self) -> usize {
        self.lower.len()
    }
}

pub fn ibp_intervals(net: &Network, region: &BoxRegion) -> Result<LayerIntervals> {
    check_dim("ibp input box", net.input_dim(), region.dim())?;
    let mut center = region.center();
    let mut radius = region.radii();
    let mut lower = Vec::with_capacity(net.depth() - 1);
    let mut upper = Vec::with_capacity(net.depth() - 1);
    let layers = net.layers();
    for (l, layer) in layers.iter().enumerate() {
        let zc = &layer.weight * &center + &layer.bias;
        let mut zr = layer.weight.abs() * &radius;
        for i in 0..zr.len() {
            zr[i] += GUARD * (zr[i] + zc[i].abs());
        }
        let lo = &zc - &zr;
        let hi = &zc + &zr;
        if l + 1 == layers.len() {
            return Ok(LayerIntervals {
                lower,
                upper,
                output_lower: lo,
                output_upper: hi,
            });
        }
        let act = net.hidden_activation(l);
        let a_lo = lo.map(|t| act.value(t));
        let a_hi = hi.map(|t| act.value(t));
        center = (&a_lo + &a_hi) * 0.5;
        radius = (&a_hi - &a_lo) * 0.5;
        lower.push(lo);
        upper.push(hi);
    }
    unreachable!("network has at least one layer")
}

fn check_interval(lo: f64, hi: f64) -> Result<()> {
    if lo > hi || lo.is_nan() || hi.is_nan() {
        Err(Error::InvalidInput(format!("interval [{lo}, {hi}] is empty")))
    } else {
        Ok(())
    }
}

fn widen(lo: f64, hi: f64, global: (f64, f64)) -> (f64, f64) {
    let lo = (lo - GUARD * (1.0 + lo.abs())).max(global.0);
    let hi = (hi + GUARD * (1.0 + hi.abs())).min(global.1);
    (lo, hi)
}

/// Range `[α, β]` of `σ′` over `[lo, hi]`.
pub fn local_slope(kind: Activation, lo: f64, hi: f64) -> Result<(f64, f64)> {
    check_interval(lo, hi)?;
    let d = |t: f64| kind.derivative(t);
    let (min, max) = match kind {
        Activation::Identity => return Ok((1.0, 1.0)),
        // σ′ is even and unimodal with its peak at 0
        Activation::Tanh | Activation::Sigmoid => {
            let peak = if lo <= 0.0 && hi >= 0.0 {
                d(0.0)
            } else if hi < 0.0 {
                d(hi)
            } else {
                d(lo)
            };
            (d(lo).min(d(hi)), peak)
        }
        // σ′ is the logistic function, increasing
        Activation::Softplus => (d(lo), d(hi)),
    };
    Ok(widen(min, max, kind.global_slope()))
}

/// Range `[α′, β′]` of `σ″` over `[lo, hi]` and `h = max(|α′|, |β′|)`.
pub fn local_curvature(kind: Activation, lo: f64, hi: f64) -> Result<(f64, f64, f64)> {
    check_interval(lo, hi)?;
    let dd = |t: f64| kind.second_derivative(t);
    let (mut min, mut max) = (dd(lo).min(dd(hi)), dd(lo).max(dd(hi)));
    let mut include = |t: f64| {
        if lo <= t && t <= hi {
            let v = dd(t);
            min = min.min(v);
            max = max.max(v);
        }
    };
    match kind {
        Activation::Identity => return Ok((0.0, 0.0, 0.0)),
        Activation::Tanh => {
            // σ‴ = 0 where tanh² = 1/3
            let t = (1.0 / 3f64.sqrt()).atanh();
            include(-t);
            include(t);
        }
        Activation::Sigmoid => {
            // σ‴ = 0 where s = (3 ± √3)/6, i.e. x = ±ln(2 + √3)
            let t = (2.0 + 3f64.sqrt()).ln();
            include(-t);
            include(t);
        }
        Activation::Softplus => include(0.0),
    }
    let (a, b) = widen(min, max, kind.global_curvature());
    Ok((a, b, a.abs().max(b.abs())))
}

/// Localized slope and curvature vectors for each hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBounds {
    pub alpha: Vec<DVector<f64>>,
    pub beta: Vec<DVector<f64>>,
    pub curv_lo: Vec<DVector<f64>>,
    pub curv_hi: Vec<DVector<f64>>,
    pub h: Vec<DVector<f64>>,
}

impl LocalBounds {
    /// Builds bounds from explicit vectors, checking `0 ≤ α ≤ β` and `α′ ≤ β′`.
    pub fn new(
        alpha: Vec<DVector<f64>>,
        beta: Vec<DVector<f64>>,
        curv_lo: Vec<DVector<f64>>,
        curv_hi: Vec<DVector<f64>>,
    ) -> Result<Self> {
        let n = alpha.len();
        if beta.len() != n || curv_lo.len() != n || curv_hi.len() != n {
            return Err(Error::InvalidInput("local bounds: layer counts differ".into()));
        }
        for l in 0..n {
            let k = alpha[l].len();
            check_dim("local bounds width", k, beta[l].len())?;
            check_dim("local bounds width", k, curv_lo[l].len())?;
            check_dim("local bounds width", k, curv_hi[l].len())?;
            for i in 0..k {
                if !(0.0 <= alpha[l][i] && alpha[l][i] <= beta[l][i]) {
                    return Err(Error::InvalidInput(format!(
                        "slope bounds violate 0 <= alpha <= beta at layer {l}, unit {i}"
                    )));
                }
                if !(curv_lo[l][i] <= curv_hi[l][i]) {
                    return Err(Error::InvalidInput(format!(
                        "curvature bounds inverted at layer {l}, unit {i}"
                    )));
                }
            }
        }
        let h = curv_lo
            .iter()
            .zip(&curv_hi)
            .map(|(a, b)| a.zip_map(b, |x, y| x.abs().max(y.abs())))
            .collect();
        Ok(Self {
            alpha,
            beta,
            curv_lo,
            curv_hi,
            h,
        })
    }

    /// Slope-only bounds; curvature is set to zero (for Lipschitz-only use).
    pub fn from_slopes(alpha: Vec<DVector<f64>>, beta: Vec<DVector<f64>>) -> Result<Self> {
        let zeros: Vec<_> = alpha.iter().map(|a| DVector::zeros(a.len())).collect();
        Self::new(alpha, beta, zeros.clone(), zeros)
    }

    pub fn from_intervals(net: &Network, intervals: &LayerIntervals) -> Result<Self> {
        check_dim("local bounds layers", net.depth() - 1, intervals.hidden_layers())?;
        let mut out = Self {
            alpha: vec![],
            beta: vec![],
            curv_lo: vec![],
            curv_hi: vec![],
            h: vec![],
        };
        for l in 0..intervals.hidden_layers() {
            let act = net.hidden_activation(l);
            let (lo, hi) = (&intervals.lower[l], &intervals.upper[l]);
            let k = lo.len();
            let mut a = DVector::zeros(k);
            let mut b = DVector::zeros(k);
            let mut ca = DVector::zeros(k);
            let mut cb = DVector::zeros(k);
            let mut h = DVector::zeros(k);
            for i in 0..k {
                (a[i], b[i]) = local_slope(act, lo[i], hi[i])?;
                (ca[i], cb[i], h[i]) = local_curvature(act, lo[i], hi[i])?;
            }
            out.alpha.push(a);
            out.beta.push(b);
            out.curv_lo.push(ca);
            out.curv_hi.push(cb);
            out.h.push(h);
        }
        Ok(out)
    }

    /// IBP on `region` followed by [`LocalBounds::from_intervals`].
    pub fn localize(net: &Network, region: &BoxRegion) -> Result<Self> {
        Self::from_intervals(net, &ibp_intervals(net, region)?)
    }

    /// Activation-wide constants, valid on all of ℝⁿ.
    pub fn global(net: &Network) -> Self {
        let mut out = Self {
            alpha: vec![],
            beta: vec![],
            curv_lo: vec![],
            curv_hi: vec![],
            h: vec![],
        };
        for l in 0..net.depth() - 1 {
            let act = net.hidden_activation(l);
            let k = net.layers()[l].out_dim();
            let (a, b) = act.global_slope();
            let (ca, cb) = act.global_curvature();
            out.alpha.push(DVector::from_element(k, a));
            out.beta.push(DVector::from_element(k, b));
            out.curv_lo.push(DVector::from_element(k, ca));
            out.curv_hi.push(DVector::from_element(k, cb));
            out.h.push(DVector::from_element(k, ca.abs().max(cb.abs())));
        }
        out
    }

    pub fn hidden_layers(&self) -> usize {
        self.beta.len()
    }

    pub(crate) fn check_against(&self, net: &Network) -> Result<()> {
        check_dim("local bounds layers", net.depth() - 1, self.hidden_layers())?;
        for l in 0..self.hidden_layers() {
            check_dim("local bounds width", net.layers()[l].out_dim(), self.beta[l].len())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Layer;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ACTS: [Activation; 3] = [Activation::Tanh, Activation::Sigmoid, Activation::Softplus];

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn zero_weight_layer_gives_bias_interval() {
        let net = Network::new(vec![
            Layer::new(DMatrix::zeros(2, 2), dv(&[0.5, -1.0]), Some(Activation::Tanh)),
            Layer::new(DMatrix::identity(1, 2), dv(&[0.0]), None),
        ])
        .unwrap();
        let b = BoxRegion::new(dv(&[-3.0, -3.0]), dv(&[3.0, 3.0])).unwrap();
        let iv = ibp_intervals(&net, &b).unwrap();
        assert!((&iv.lower[0] - dv(&[0.5, -1.0])).amax() < 1e-11);
        assert!((&iv.upper[0] - dv(&[0.5, -1.0])).amax() < 1e-11);
    }

    #[test]
    fn difference_row_over_unit_square() {
        let net = Network::new(vec![Layer::new(
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            dv(&[0.0]),
            None,
        )])
        .unwrap();
        let b = BoxRegion::new(dv(&[0.0, 0.0]), dv(&[1.0, 1.0])).unwrap();
        let iv = ibp_intervals(&net, &b).unwrap();
        assert!((iv.output_lower[0] + 1.0).abs() < 1e-11);
        assert!((iv.output_upper[0] - 1.0).abs() < 1e-11);
    }

    #[test]
    fn ibp_contains_sampled_preactivations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Network::random(&[2, 8, 8, 1], Activation::Tanh, &mut rng);
        let b = BoxRegion::new(dv(&[-1.0, -1.0]), dv(&[1.0, 1.0])).unwrap();
        let iv = ibp_intervals(&net, &b).unwrap();
        for _ in 0..10_000 {
            let x = b.sample(&mut rng);
            let zs = net.preactivations(&x).unwrap();
            for l in 0..2 {
                for i in 0..8 {
                    assert!(zs[l][i] >= iv.lower[l][i] - 1e-9 && zs[l][i] <= iv.upper[l][i] + 1e-9);
                }
            }
        }
    }

    #[test]
    fn tanh_wide_interval_recovers_global_slope() {
        let (a, b) = local_slope(Activation::Tanh, -10.0, 10.0).unwrap();
        let sech2 = 1.0 / 10f64.cosh().powi(2);
        assert!((a - sech2).abs() < 1e-8 && (b - 1.0).abs() < 1e-8);
    }

    #[test]
    fn tanh_slope_on_one_two() {
        // dense-grid oracle over 10^6 points: (0.07065082485316447, 0.4199743416140261)
        let (a, b) = local_slope(Activation::Tanh, 1.0, 2.0).unwrap();
        assert!((a - 0.07065082485316447).abs() < 1e-9);
        assert!((b - 0.4199743416140261).abs() < 1e-9);
    }

    #[test]
    fn identity_constants() {
        assert_eq!(local_slope(Activation::Identity, -4.0, 9.0).unwrap(), (1.0, 1.0));
        assert_eq!(local_curvature(Activation::Identity, -4.0, 9.0).unwrap(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn tanh_curvature_global() {
        let h = 4.0 / (3.0 * 3f64.sqrt());
        let (a, b, hh) = local_curvature(Activation::Tanh, -20.0, 20.0).unwrap();
        assert!((a + h).abs() < 1e-11 && (b - h).abs() < 1e-11 && (hh - h).abs() < 1e-11);
        assert!((h - 0.769800358919501).abs() < 1e-12);
    }

    #[test]
    fn tanh_curvature_without_interior_critical_point() {
        // dense-grid oracle: min -0.3793723330256684, max -0.19735584350906518
        let (a, b, h) = local_curvature(Activation::Tanh, 0.1, 0.2).unwrap();
        assert!((a + 0.3793723330256684).abs() < 1e-9);
        assert!((b + 0.19735584350906518).abs() < 1e-9);
        assert!((h - 0.3793723330256684).abs() < 1e-9);
    }

    #[test]
    fn inverted_interval_is_an_error() {
        assert!(local_slope(Activation::Tanh, 1.0, 0.0).is_err());
        assert!(local_curvature(Activation::Sigmoid, 1.0, 0.0).is_err());
    }

    #[test]
    fn sampled_derivatives_respect_local_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for act in ACTS {
            for _ in 0..200 {
                let a = rng.gen_range(-6.0..6.0);
                let lo = a;
                let hi = a + rng.gen_range(0.0..4.0);
                let (sa, sb) = local_slope(act, lo, hi).unwrap();
                let (ca, cb, _) = local_curvature(act, lo, hi).unwrap();
                for _ in 0..50 {
                    let t = rng.gen_range(lo..=hi);
                    let d = act.derivative(t);
                    let dd = act.second_derivative(t);
                    assert!(sa - 1e-9 <= d && d <= sb + 1e-9, "{act:?} slope");
                    assert!(ca - 1e-9 <= dd && dd <= cb + 1e-9, "{act:?} curvature");
                }
                let g = act.global_slope();
                let gc = act.global_curvature();
                assert!(g.0 <= sa && sb <= g.1 && gc.0 <= ca && cb <= gc.1);
            }
        }
    }

    #[test]
    fn shrinking_never_widens() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for act in ACTS {
            for _ in 0..200 {
                let lo = rng.gen_range(-5.0..5.0);
                let hi = lo + rng.gen_range(0.0..5.0);
                let ilo = rng.gen_range(lo..=hi);
                let ihi = rng.gen_range(ilo..=hi);
                let outer = (local_slope(act, lo, hi).unwrap(), local_curvature(act, lo, hi).unwrap());
                let inner =
                    (local_slope(act, ilo, ihi).unwrap(), local_curvature(act, ilo, ihi).unwrap());
                assert!(outer.0 .0 <= inner.0 .0 && inner.0 .1 <= outer.0 .1);
                assert!(outer.1 .0 <= inner.1 .0 && inner.1 .1 <= outer.1 .1);
            }
        }
    }

    #[test]
    fn invalid_slope_vectors_rejected() {
        let r = LocalBounds::from_slopes(vec![dv(&[0.5])], vec![dv(&[0.2])]);
        assert!(r.is_err());
    }
}
