//! Adjoint gradient of the reduced objective against central differences.

use mobctl_core::exec::Exec;
use mobctl_core::fleet::{validate_guidance, FleetDynamics, GuidanceBounds, GuidanceProfile};
use mobctl_core::grid::TimeGrid;
use mobctl_core::riccati::{LqrWeights, RiccatiOptions};
use mobctl_core::spectral::{assemble_operator, project_field, BasisSet, BoundaryCondition};
use mobctl_core::sweep::{backward_costates, evaluate, ControlProblem, QuadraticMobility};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

const REL_TOL: f64 = 1e-3;

fn problem(bc: BoundaryCondition) -> ControlProblem {
    let basis = BasisSet::new(bc, 4).unwrap();
    let operator = assemble_operator(&basis, 0.05, [0.1, -0.1]).unwrap();
    let fleet = FleetDynamics::single_integrators(&[[0.3, 0.35], [0.6, 0.55]]).unwrap();
    let z0 = project_field(|x, y| 320.0 * (x - x * x) * (y - y * y), &basis);
    ControlProblem {
        weights: LqrWeights::identity(basis.dim(), 2, 0.1).unwrap(),
        operator,
        fleet,
        sigmas: vec![0.05; 2],
        mobility: Arc::new(QuadraticMobility::guidance_only(0.1).unwrap()),
        bounds: GuidanceBounds::uniform(4, -100.0, 100.0, 100.0, 100.0).unwrap(),
        z0,
        grid: TimeGrid::new(1.0, 100).unwrap(),
        riccati: RiccatiOptions::default(),
        exec: Exec::Sequential,
        basis,
    }
}

/// Smooth random guidance with small amplitude so the actuators stay well
/// inside the domain.
fn random_guidance(grid: TimeGrid, rng: &mut ChaCha8Rng) -> GuidanceProfile {
    let coeffs: Vec<[f64; 3]> = (0..4)
        .map(|_| {
            [
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(0.0..6.0),
            ]
        })
        .collect();
    let values = DMatrix::from_fn(4, grid.nodes(), |c, k| {
        let t = grid.time(k);
        let [a, b, phase] = coeffs[c];
        a + b * (2.0 * std::f64::consts::PI * t + phase).sin()
    });
    GuidanceProfile::new(grid, values).unwrap()
}

fn objective(problem: &ControlProblem, p: &GuidanceProfile) -> f64 {
    evaluate(problem, p).unwrap().0.objective()
}

#[test]
fn adjoint_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for bc in [BoundaryCondition::Dirichlet, BoundaryCondition::Neumann] {
        let problem = problem(bc);
        for trial in 0..5 {
            let p = random_guidance(problem.grid, &mut rng);
            assert!(validate_guidance(&problem.fleet, &problem.bounds, &p).is_empty());
            let (eval, inputs) = evaluate(&problem, &p).unwrap();
            let adjoint = backward_costates(&problem, eval, &inputs)
                .unwrap()
                .nodal_gradient;

            let eps = 1e-5;
            let mut fd = DMatrix::zeros(adjoint.nrows(), adjoint.ncols());
            for k in 0..adjoint.ncols() {
                for c in 0..adjoint.nrows() {
                    let mut up = p.clone();
                    up.values_mut()[(c, k)] += eps;
                    let mut dn = p.clone();
                    dn.values_mut()[(c, k)] -= eps;
                    fd[(c, k)] =
                        (objective(&problem, &up) - objective(&problem, &dn)) / (2.0 * eps);
                }
            }
            let rel = (&adjoint - &fd).norm() / fd.norm();
            println!("{bc} trial {trial}: relative gradient error {rel:.3e}");
            assert!(rel < REL_TOL, "{bc} trial {trial}: {rel:e}");
        }
    }
}
