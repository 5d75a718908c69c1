//! Randomized soundness checks of every certified quantity against sampled
//! witnesses.

use hessreach::bnb::{solve, BnbConfig};
use hessreach::hessian::{hessian_two_layer, scalar_hessian_bound};
use hessreach::lipschitz::{liplt, naive_lipschitz, LipschitzMethod};
use hessreach::oracle::{fd_gradient, fd_hessian, grid_max, sampled_hessian_norm, sampled_lipschitz};
use hessreach::reach::{reach_polytope, DirectionTemplate};
use hessreach::taylor::{first_upper, zeroth_bounds, BallRegion};
use hessreach::{Activation, BoxRegion, HessianBound, InputSet, LocalBounds, LoopTransform, Network, Norm, ScalarNetwork};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn activation(k: u8) -> Activation {
    if k % 2 == 0 {
        Activation::Tanh
    } else {
        Activation::Sigmoid
    }
}

fn random_net(seed: u64, input: usize, hidden: &[usize], out: usize, act: Activation) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(out);
    Network::random(&dims, act, &mut rng)
}

fn random_box(seed: u64, n: usize, max_radius: f64) -> BoxRegion {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let r = DVector::from_fn(n, |_, _| rng.gen_range(0.01..max_radius));
    BoxRegion::new(&c - &r, &c + &r).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn sampled_slopes_stay_below_liplt(seed in any::<u64>(), n in 1usize..4, h1 in 2usize..12, h2 in 2usize..12, act in 0u8..2) {
        let net = random_net(seed, n, &[h1, h2], 2, activation(act));
        let region = random_box(seed ^ 1, n, 1.0);
        let local = LocalBounds::localize(&net, &region).unwrap();
        for p in [Norm::L2, Norm::Inf] {
            let bound = liplt(&net, &local, &LoopTransform::default_for(&local), p).unwrap().total;
            let seen = sampled_lipschitz(|x| net.eval(x).unwrap(), &region, 2000, p, seed);
            prop_assert!(seen <= bound + 1e-7, "{p}: sampled {seen} > bound {bound}");
        }
    }

    #[test]
    fn liplt_never_exceeds_naive(seed in any::<u64>(), depth in 1usize..5, width in 1usize..16, act in 0u8..2) {
        let hidden = vec![width; depth];
        let net = random_net(seed, 3, &hidden, 2, activation(act));
        let local = LocalBounds::global(&net);
        for p in [Norm::L2, Norm::Inf] {
            let naive = naive_lipschitz(&net, &local, p).unwrap();
            let lt = liplt(&net, &local, &LoopTransform::default_for(&local), p).unwrap().total;
            let zero = liplt(&net, &local, &LoopTransform::zero(&local), p).unwrap().total;
            prop_assert!(lt <= naive * (1.0 + 1e-12));
            prop_assert!((zero - naive).abs() <= 1e-12 * naive.max(1.0));
        }
    }

    #[test]
    fn scalar_hessian_dominates_finite_differences(seed in any::<u64>(), n in 1usize..4, h in 2usize..10, act in 0u8..2) {
        let net = random_net(seed, n, &[h, h], 1, activation(act));
        let j = ScalarNetwork::new(net).unwrap();
        let region = random_box(seed ^ 2, n, 0.8);
        let local = LocalBounds::localize(j.network(), &region).unwrap();
        for with_suffix in [false, true] {
            let lambda = scalar_hessian_bound(&j, &local, LipschitzMethod::Liplt, with_suffix).unwrap().spectral_bound();
            let seen = sampled_hessian_norm(|x| j.eval(x).unwrap(), &region, 60, 1e-4, seed);
            prop_assert!(seen <= lambda + 1e-6, "sampled {seen} > bound {lambda}");
        }
    }

    #[test]
    fn two_layer_sandwich_holds_pointwise(seed in any::<u64>(), n in 1usize..4, h in 1usize..10, act in 0u8..2) {
        let net = random_net(seed, n, &[h], 1, activation(act));
        let j = ScalarNetwork::new(net).unwrap();
        let region = random_box(seed ^ 3, n, 1.0);
        let local = LocalBounds::localize(j.network(), &region).unwrap();
        let HessianBound::Matrix { m, n: lower } = hessian_two_layer(&j, &local).unwrap() else {
            panic!("expected matrix kind")
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let x = region.sample(&mut rng);
            let h = exact_two_layer_hessian(&j, &x);
            prop_assert!((&m - &h).symmetric_eigenvalues().min() >= -1e-9);
            prop_assert!((&h - &lower).symmetric_eigenvalues().min() >= -1e-9);
        }
    }

    #[test]
    fn ball_bounds_bracket_samples(seed in any::<u64>(), n in 1usize..4, eps in 0.01f64..0.5, inf in any::<bool>()) {
        let net = random_net(seed, n, &[6, 6], 1, Activation::Tanh);
        let j = ScalarNetwork::new(net).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let p = if inf { Norm::Inf } else { Norm::L2 };
        let ball = BallRegion::new(c.clone(), eps, p).unwrap();
        let enclosing = BoxRegion::from_center_radius(&c, eps).unwrap();
        let local = LocalBounds::localize(j.network(), &enclosing).unwrap();
        let lip = liplt(j.network(), &local, &LoopTransform::default_for(&local), p).unwrap().total;
        let lambda = scalar_hessian_bound(&j, &local, LipschitzMethod::Liplt, true).unwrap().spectral_bound();
        let zeroth = zeroth_bounds(&j, &ball, lip).unwrap();
        let first = first_upper(&j, &ball, lambda, &c).unwrap();
        for _ in 0..500 {
            let mut x = enclosing.sample(&mut rng);
            if !ball.contains(&x, 0.0) {
                x = &c + (&x - &c) * (eps / p.vector_norm(&(&x - &c)));
            }
            let v = j.eval(&x).unwrap();
            prop_assert!(v <= zeroth.ub + 1e-9 && v <= first + 1e-9);
        }
    }

    #[test]
    fn finite_difference_gradient_matches(seed in any::<u64>(), n in 1usize..5) {
        let net = random_net(seed, n, &[8, 8], 1, Activation::Tanh);
        let j = ScalarNetwork::new(net).unwrap();
        let x = random_box(seed, n, 0.5).center();
        let g = j.grad(&x).unwrap();
        let fd = fd_gradient(|y| j.eval(y).unwrap(), &x, 1e-5);
        prop_assert!((&g - &fd).amax() <= 1e-5 * g.amax().max(1.0));
        let h = fd_hessian(|y| j.eval(y).unwrap(), &x, 1e-4);
        prop_assert!((&h - h.transpose()).amax() == 0.0);
    }
}

fn exact_two_layer_hessian(j: &ScalarNetwork, x: &DVector<f64>) -> nalgebra::DMatrix<f64> {
    let layers = j.network().layers();
    let (w1, b1) = (&layers[0].weight, &layers[0].bias);
    let v = layers[1].weight.row(0);
    let act = layers[0].activation.unwrap();
    let z = w1 * x + b1;
    let mut h = nalgebra::DMatrix::zeros(x.len(), x.len());
    for k in 0..z.len() {
        let row = w1.row(k).transpose();
        h += &row * row.transpose() * (act.second_derivative(z[k]) * v[k]);
    }
    h
}

#[test]
fn bnb_bracket_contains_sampled_max() {
    for seed in 0..6u64 {
        let net = random_net(seed, 2, &[8, 8], 1, Activation::Tanh);
        let j = ScalarNetwork::new(net).unwrap();
        let region = random_box(seed, 2, 1.0);
        let cfg = BnbConfig {
            eps_t: 1e-3,
            ..Default::default()
        };
        let r = solve(&j, &region, &cfg).unwrap();
        let (seen, _) = grid_max(|x| j.eval(x).unwrap(), &region, 100, 10_000, seed);
        assert!(r.lb - 1e-9 <= seen && seen <= r.ub + 1e-9, "seed {seed}: {seen} outside [{}, {}]", r.lb, r.ub);
        assert!(r.gap() <= 1e-3);
    }
}

#[test]
fn cached_certificates_stay_sound() {
    for seed in 0..4u64 {
        let net = random_net(seed, 3, &[6, 6], 1, Activation::Sigmoid);
        let j = ScalarNetwork::new(net).unwrap();
        let region = random_box(seed, 3, 0.7);
        let cfg = BnbConfig {
            eps_t: 1e-3,
            recompute: false,
            ..Default::default()
        };
        let r = solve(&j, &region, &cfg).unwrap();
        let (seen, _) = grid_max(|x| j.eval(x).unwrap(), &region, 25, 10_000, seed);
        assert!(seen <= r.ub + 1e-9);
    }
}

#[test]
fn reach_polytopes_contain_images() {
    for seed in 0..10u64 {
        let net = random_net(seed, 2, &[8, 8], 2, activation(seed as u8));
        let input = InputSet::Box(random_box(seed, 2, 0.5));
        let template = DirectionTemplate::uniform(8).unwrap();
        let poly = reach_polytope(&net, &input, &template, &BnbConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10_000 {
            let y = net.eval(&input.sample(&mut rng)).unwrap();
            assert!(poly.violation(&y) <= 1e-9);
        }
    }
}

#[test]
fn adding_directions_only_shrinks() {
    let net = random_net(11, 2, &[8], 2, Activation::Tanh);
    let input = InputSet::Box(random_box(11, 2, 0.5));
    let cfg = BnbConfig::default();
    let small = reach_polytope(&net, &input, &DirectionTemplate::axes(2), &cfg).unwrap();
    let mut dirs = DirectionTemplate::axes(2).dirs;
    dirs.extend(DirectionTemplate::uniform(8).unwrap().dirs);
    let large = reach_polytope(&net, &input, &DirectionTemplate::custom(dirs).unwrap(), &cfg).unwrap();
    for f in &small.faces {
        assert_eq!(large.offset_for(&DVector::from_column_slice(&f.c)), Some(f.d));
    }
}

#[test]
fn naive_bound_is_monotone_under_localization() {
    let net = random_net(5, 2, &[10, 10], 1, Activation::Tanh);
    let outer = random_box(5, 2, 1.0);
    let inner = BoxRegion::new(
        outer.lower() + outer.radii() * 0.3,
        outer.upper() - outer.radii() * 0.2,
    )
    .unwrap();
    for p in [Norm::L2, Norm::Inf] {
        let global = naive_lipschitz(&net, &LocalBounds::global(&net), p).unwrap();
        let big = naive_lipschitz(&net, &LocalBounds::localize(&net, &outer).unwrap(), p).unwrap();
        let small = naive_lipschitz(&net, &LocalBounds::localize(&net, &inner).unwrap(), p).unwrap();
        assert!(small <= big && big <= global);
    }
}

#[test]
fn liplt_with_half_slope_offset_is_not_monotone_in_the_slope_bound() {
    use hessreach::{Layer, Network};
    use nalgebra::DMatrix;
    let net = Network::new(vec![
        Layer::new(DMatrix::from_row_slice(2, 1, &[1.0, 1.0]), DVector::zeros(2), Some(Activation::Tanh)),
        Layer::new(DMatrix::from_row_slice(1, 2, &[1.0, -1.0]), DVector::zeros(1), None),
    ])
    .unwrap();
    let narrow = LocalBounds::from_slopes(vec![DVector::zeros(2)], vec![DVector::from_column_slice(&[1.0, 0.2])]).unwrap();
    let wide = LocalBounds::from_slopes(vec![DVector::zeros(2)], vec![DVector::from_column_slice(&[1.0, 1.0])]).unwrap();
    let at = |local: &LocalBounds| liplt(&net, local, &LoopTransform::default_for(local), Norm::L2).unwrap().total;
    assert!((at(&wide) - 1.0).abs() < 1e-8);
    assert!(at(&narrow) > at(&wide));
    assert!(naive_lipschitz(&net, &narrow, Norm::L2).unwrap() <= naive_lipschitz(&net, &wide, Norm::L2).unwrap());
}
