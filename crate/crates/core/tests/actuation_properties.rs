//! Input operator: kernel mass, locality, continuity and location gradient.

use mobctl_core::actuation::{
    input_location_gradient, project_input, DisturbanceModel, GaussianKernel,
};
use mobctl_core::spectral::{BasisSet, BoundaryCondition};
use proptest::prelude::*;
use statrs::function::erf::erf;

#[test]
fn interior_kernel_mass() {
    // Separable Gaussian over the σ-box: (σ√π·erf(1))² / (2πσ²) = erf(1)²/2.
    let basis = BasisSet::new(BoundaryCondition::Neumann, 3).unwrap();
    let b = project_input(&[[0.4, 0.55]], &[0.05], &basis).unwrap();
    let k = basis.flat_index(0, 0).unwrap();
    let mass = b.matrix[(k, 0)];
    // statrs' erf carries a few 1e-12 of error of its own.
    assert!((mass - erf(1.0).powi(2) / 2.0).abs() < 1e-10, "{mass}");
}

#[test]
fn kernel_peak_and_support() {
    let k = GaussianKernel::new(0.05, [0.3, 0.6]).unwrap();
    assert!((k.value(0.3, 0.6) - 1.0 / (2.0 * std::f64::consts::PI * 0.0025)).abs() < 1e-12);
    assert_eq!(k.value(0.3 + 0.0501, 0.6), 0.0);
    assert_eq!(k.value(0.3, 0.6 - 0.0501), 0.0);
    assert!(k.value(0.3 + 0.0499, 0.6 + 0.0499) > 0.0);
}

#[test]
fn disturbance_stays_inside_domain() {
    let d = DisturbanceModel::default();
    for i in 0..=1000 {
        let [x, y] = d.position(i as f64 / 1000.0);
        assert!((0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y));
    }
}

#[test]
fn input_matrix_is_continuous_in_position() {
    let basis = BasisSet::new(BoundaryCondition::Dirichlet, 8).unwrap();
    let mut state = 0x2545_f491_u64;
    let mut next = || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state % 10_000) as f64 / 10_000.0
    };
    for _ in 0..20 {
        let p = [0.1 + 0.8 * next(), 0.1 + 0.8 * next()];
        let dir = [next() - 0.5, next() - 0.5];
        let base = project_input(&[p], &[0.05], &basis).unwrap().matrix;
        let mut last = f64::INFINITY;
        for delta in [1e-2, 1e-3, 1e-4, 1e-5] {
            let q = [p[0] + delta * dir[0], p[1] + delta * dir[1]];
            let moved = project_input(&[q], &[0.05], &basis).unwrap().matrix;
            let gap = (&moved - &base).norm();
            assert!(gap < last, "gap {gap} did not shrink below {last}");
            last = gap;
        }
        assert!(last < 1e-2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn perturbing_one_actuator_changes_one_column(
        pos in prop::collection::vec(prop::array::uniform2(0.0..1.0f64), 3),
        which in 0usize..3,
        shift in prop::array::uniform2(-0.05..0.05f64),
    ) {
        let basis = BasisSet::new(BoundaryCondition::Dirichlet, 6).unwrap();
        let sigmas = [0.05; 3];
        let base = project_input(&pos, &sigmas, &basis).unwrap().matrix;
        let mut moved_pos = pos.clone();
        moved_pos[which] = [
            (pos[which][0] + shift[0]).clamp(0.0, 1.0),
            (pos[which][1] + shift[1]).clamp(0.0, 1.0),
        ];
        let moved = project_input(&moved_pos, &sigmas, &basis).unwrap().matrix;
        for c in 0..3 {
            if c != which {
                prop_assert_eq!(base.column(c), moved.column(c));
            }
        }
    }

    #[test]
    fn location_gradient_matches_central_differences(
        x in 0.08..0.92f64,
        y in 0.08..0.92f64,
        neumann in any::<bool>(),
    ) {
        let bc = if neumann { BoundaryCondition::Neumann } else { BoundaryCondition::Dirichlet };
        let basis = BasisSet::new(bc, 7).unwrap();
        let (gx, gy) = input_location_gradient([x, y], 0.05, &basis).unwrap();
        let h = 1e-6;
        let col = |p: [f64; 2]| project_input(&[p], &[0.05], &basis).unwrap().matrix.column(0).into_owned();
        let fx = (col([x + h, y]) - col([x - h, y])) / (2.0 * h);
        let fy = (col([x, y + h]) - col([x, y - h])) / (2.0 * h);
        prop_assert!((&gx - &fx).norm() / fx.norm() < 1e-3);
        prop_assert!((&gy - &fy).norm() / fy.norm() < 1e-3);
    }
}
