//! Actuator dynamics and the admissible guidance set.

use mobctl_core::fleet::{
    project_guidance, propagate, validate_guidance, ActuatorDynamics, FleetDynamics,
    GuidanceBounds, GuidanceProfile,
};
use mobctl_core::grid::TimeGrid;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// One single integrator and one damped double integrator with position
/// output, so the linearity checks see a nontrivial `α`.
fn mixed_fleet() -> FleetDynamics {
    let alpha = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.0, 0.0, 1.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, //
            0.0, 0.0, -0.5, 0.0, //
            0.0, 0.0, 0.0, -0.5,
        ],
    );
    let beta = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    FleetDynamics::new(vec![
        ActuatorDynamics::single_integrator([0.2, 0.3]),
        ActuatorDynamics {
            alpha,
            beta,
            initial: DVector::from_column_slice(&[0.7, 0.6, 0.1, -0.2]),
        },
    ])
    .unwrap()
}

fn profile(grid: TimeGrid, seed: &[f64]) -> GuidanceProfile {
    GuidanceProfile::new(
        grid,
        DMatrix::from_fn(4, grid.nodes(), |c, k| {
            let t = grid.time(k);
            seed[c] * (1.0 + t) + seed[(c + 1) % seed.len()] * (3.0 * t).sin()
        }),
    )
    .unwrap()
}

fn zero_ic(fleet: &FleetDynamics) -> FleetDynamics {
    FleetDynamics::new(
        fleet
            .actuators()
            .iter()
            .map(|a| ActuatorDynamics {
                initial: DVector::zeros(a.initial.len()),
                ..a.clone()
            })
            .collect(),
    )
    .unwrap()
}

#[test]
fn trajectory_satisfies_rk4_residual() {
    let fleet = mixed_fleet();
    let grid = TimeGrid::new(1.0, 200).unwrap();
    let p = profile(grid, &[0.3, -0.2, 0.5, 0.1]);
    let traj = propagate(&fleet, &p).unwrap();
    let h = grid.dt();
    for k in 0..grid.steps() {
        let x = traj.state(k);
        let (p0, pm, p1) = (p.at_half(2 * k), p.at_half(2 * k + 1), p.at_half(2 * k + 2));
        let k1 = fleet.rhs(&x, &p0);
        let k2 = fleet.rhs(&(&x + &k1 * (h / 2.0)), &pm);
        let k3 = fleet.rhs(&(&x + &k2 * (h / 2.0)), &pm);
        let k4 = fleet.rhs(&(&x + &k3 * h), &p1);
        let next = &x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        assert!((next - traj.state(k + 1)).amax() < 1e-13);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn propagation_is_affine(
        s1 in prop::array::uniform4(-1.0..1.0f64),
        s2 in prop::array::uniform4(-1.0..1.0f64),
        a in -2.0..2.0f64,
        b in -2.0..2.0f64,
    ) {
        let fleet = mixed_fleet();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let (p1, p2) = (profile(grid, &s1), profile(grid, &s2));
        let combo = GuidanceProfile::new(grid, p1.values() * a + p2.values() * b).unwrap();
        let free = propagate(&fleet, &GuidanceProfile::zeros(grid, 4)).unwrap();
        let forced = propagate(&fleet, &combo).unwrap();
        let z = zero_ic(&fleet);
        let r1 = propagate(&z, &p1).unwrap();
        let r2 = propagate(&z, &p2).unwrap();
        let lhs = forced.states() - free.states();
        let rhs = r1.states() * a + r2.states() * b;
        prop_assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn trajectory_map_is_lipschitz(
        s1 in prop::array::uniform4(-1.0..1.0f64),
        s2 in prop::array::uniform4(-1.0..1.0f64),
    ) {
        // With |α| ≤ 1 on the fleet above, ‖Tp₁ − Tp₂‖∞ ≤ e·t_f·‖p₁ − p₂‖∞.
        let fleet = mixed_fleet();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let (p1, p2) = (profile(grid, &s1), profile(grid, &s2));
        let t1 = propagate(&fleet, &p1).unwrap();
        let t2 = propagate(&fleet, &p2).unwrap();
        let gap = (t1.states() - t2.states()).amax();
        let dp = (p1.values() - p2.values()).amax();
        prop_assert!(gap <= std::f64::consts::E * 2.0 * dp + 1e-12);
    }

    #[test]
    fn projection_is_feasible_and_idempotent(
        raw in prop::collection::vec(-300.0..300.0f64, 4 * 21),
        a_max in 1.0..200.0f64,
    ) {
        let fleet = FleetDynamics::single_integrators(&[[0.1, 0.1], [0.5, 0.5]]).unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let bounds = GuidanceBounds::uniform(4, -100.0, 100.0, 100.0, a_max).unwrap();
        let p = GuidanceProfile::new(grid, DMatrix::from_vec(4, 21, raw)).unwrap();
        let once = project_guidance(&fleet, &bounds, &p);
        prop_assert!(validate_guidance(&fleet, &bounds, &once).is_empty());
        let twice = project_guidance(&fleet, &bounds, &once);
        prop_assert!((once.values() - twice.values()).amax() < 1e-12);
    }
}
