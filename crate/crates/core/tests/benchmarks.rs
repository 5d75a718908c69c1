//! Closed-loop benchmarks on the shipped double-integrator and quadrotor
//! controllers.

use hessreach::bnb::{BnbConfig, BnbStatus};
use hessreach::reach::{
    clears_sphere, closed_loop_reach, simulate, LinearSystem, NextSetMode, ReachConfig, StepResult, TemplateSpec,
};
use hessreach::{InputSet, Network};
use nalgebra::DVector;

fn load(name: &str) -> (LinearSystem, Network, InputSet) {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/data/");
    (
        LinearSystem::load(format!("{dir}{name}_system.json")).unwrap(),
        Network::load(format!("{dir}{name}_controller.json")).unwrap(),
        InputSet::load(format!("{dir}{name}_initial.json")).unwrap(),
    )
}

fn assert_contains_trajectories(steps: &[StepResult], trajectories: &[Vec<DVector<f64>>]) {
    for (t, step) in steps.iter().enumerate() {
        let worst = trajectories
            .iter()
            .map(|traj| step.polytope.violation(&traj[t + 1]))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(worst <= 1e-9, "step {t}: violation {worst}");
    }
}

fn di_config(first_order: bool) -> ReachConfig {
    ReachConfig {
        bnb: BnbConfig {
            eps_t: 1e-3,
            first_order,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn double_integrator_polytopes_contain_trajectories() {
    let (sys, ctrl, init) = load("di");
    assert_eq!(sys.horizon, 5);
    let steps = closed_loop_reach(&sys, &ctrl, &init, sys.horizon, &di_config(true)).unwrap();
    assert!(steps.iter().flat_map(|s| &s.polytope.faces).all(|f| f.status == BnbStatus::Converged));
    let sims = simulate(&sys, &ctrl, &init, sys.horizon, 10_000, 7).unwrap();
    assert_contains_trajectories(&steps, &sims);
}

#[test]
fn double_integrator_first_order_saves_branches() {
    let (sys, ctrl, init) = load("di");
    let count = |first| {
        closed_loop_reach(&sys, &ctrl, &init, sys.horizon, &di_config(first))
            .unwrap()
            .iter()
            .map(StepResult::branches)
            .sum::<usize>()
    };
    let (first, zeroth) = (count(true), count(false));
    assert!(first <= zeroth, "first-order {first} vs zeroth-order {zeroth}");
}

#[test]
fn double_integrator_pca_template_is_sound() {
    let (sys, ctrl, init) = load("di");
    let cfg = ReachConfig {
        template: TemplateSpec::Pca(2000),
        next_set: NextSetMode::PcaBox,
        ..di_config(true)
    };
    let steps = closed_loop_reach(&sys, &ctrl, &init, 3, &cfg).unwrap();
    let sims = simulate(&sys, &ctrl, &init, 3, 10_000, 8).unwrap();
    assert_contains_trajectories(&steps, &sims);
}

#[test]
fn quadrotor_avoids_both_obstacles() {
    let (sys, ctrl, init) = load("quad");
    assert_eq!(sys.horizon, 10);
    let cfg = ReachConfig {
        bnb: BnbConfig {
            eps_t: 1e-2,
            ..Default::default()
        },
        ..Default::default()
    };
    let steps = closed_loop_reach(&sys, &ctrl, &init, sys.horizon, &cfg).unwrap();
    let obstacles = [[2.0, 4.0, 3.0], [4.0, 2.0, 3.0]];
    for (t, step) in steps.iter().enumerate() {
        for o in &obstacles {
            assert!(clears_sphere(step, &[0, 1, 2], &DVector::from_column_slice(o), 1.0), "step {t} hits {o:?}");
        }
    }
    let sims = simulate(&sys, &ctrl, &init, sys.horizon, 10_000, 9).unwrap();
    assert_contains_trajectories(&steps, &sims);
}
