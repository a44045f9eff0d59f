//! Mobile actuator team: linear dynamics, guidance profiles and the admissible set.

use nalgebra::{DMatrix, DVector};
use std::ops::Range;

use crate::grid::TimeGrid;
use crate::{Error, Result};

/// Dynamics `ξ̇_i = α_i ξ_i + β_i p_i` of one actuator. The first two state
/// components are the planar position.
#[derive(Debug, Clone, PartialEq)]
pub struct ActuatorDynamics {
    pub alpha: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    pub initial: DVector<f64>,
}

impl ActuatorDynamics {
    /// `α = 0₂ₓ₂`, `β = I₂`: the guidance is the velocity.
    pub fn single_integrator(position: [f64; 2]) -> Self {
        Self {
            alpha: DMatrix::zeros(2, 2),
            beta: DMatrix::identity(2, 2),
            initial: DVector::from_column_slice(&position),
        }
    }
}

/// Rank test on `[β, αβ, …, αⁿ⁻¹β]`.
pub fn is_controllable(alpha: &DMatrix<f64>, beta: &DMatrix<f64>) -> bool {
    let n = alpha.nrows();
    let m = beta.ncols();
    let mut ctrb = DMatrix::zeros(n, n * m);
    let mut block = beta.clone();
    for i in 0..n {
        ctrb.view_mut((0, i * m), (n, m)).copy_from(&block);
        block = alpha * block;
    }
    let scale = ctrb.amax().max(1.0);
    ctrb.svd(false, false).rank(1e-10 * scale) == n
}

/// Concatenated team dynamics `ξ̇ = αξ + βp` with position selector `M`.
#[derive(Debug, Clone)]
pub struct FleetDynamics {
    actuators: Vec<ActuatorDynamics>,
    alpha: DMatrix<f64>,
    beta: DMatrix<f64>,
    initial: DVector<f64>,
    selector: DMatrix<f64>,
    state_offsets: Vec<usize>,
    guidance_offsets: Vec<usize>,
}

impl FleetDynamics {
    pub fn new(actuators: Vec<ActuatorDynamics>) -> Result<Self> {
        if actuators.is_empty() {
            return Err(Error::invalid(
                "actuators",
                "fleet needs at least one actuator",
            ));
        }
        let mut state_offsets = vec![0];
        let mut guidance_offsets = vec![0];
        for (i, a) in actuators.iter().enumerate() {
            let ni = a.alpha.nrows();
            if ni < 2 || a.alpha.ncols() != ni || a.beta.nrows() != ni || a.initial.len() != ni {
                return Err(Error::invalid(
                    "actuators",
                    format!("actuator {i}: inconsistent α/β/ξ₀ shapes (need n_i ≥ 2)"),
                ));
            }
            if a.beta.ncols() == 0 {
                return Err(Error::invalid(
                    "actuators",
                    format!("actuator {i}: β has no columns"),
                ));
            }
            if !is_controllable(&a.alpha, &a.beta) {
                return Err(Error::invalid(
                    "actuators",
                    format!("actuator {i}: (α, β) is not controllable"),
                ));
            }
            state_offsets.push(state_offsets[i] + ni);
            guidance_offsets.push(guidance_offsets[i] + a.beta.ncols());
        }
        let n = *state_offsets.last().unwrap();
        let m = *guidance_offsets.last().unwrap();
        let mut alpha = DMatrix::zeros(n, n);
        let mut beta = DMatrix::zeros(n, m);
        let mut initial = DVector::zeros(n);
        let mut selector = DMatrix::zeros(2 * actuators.len(), n);
        for (i, a) in actuators.iter().enumerate() {
            let (s, g) = (state_offsets[i], guidance_offsets[i]);
            alpha.view_mut((s, s), a.alpha.shape()).copy_from(&a.alpha);
            beta.view_mut((s, g), a.beta.shape()).copy_from(&a.beta);
            initial.rows_mut(s, a.initial.len()).copy_from(&a.initial);
            selector[(2 * i, s)] = 1.0;
            selector[(2 * i + 1, s + 1)] = 1.0;
        }
        Ok(Self {
            actuators,
            alpha,
            beta,
            initial,
            selector,
            state_offsets,
            guidance_offsets,
        })
    }

    pub fn single_integrators(positions: &[[f64; 2]]) -> Result<Self> {
        Self::new(
            positions
                .iter()
                .map(|&p| ActuatorDynamics::single_integrator(p))
                .collect(),
        )
    }

    /// Number of actuators `m_a`.
    pub fn count(&self) -> usize {
        self.actuators.len()
    }

    pub fn state_dim(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn guidance_dim(&self) -> usize {
        self.beta.ncols()
    }

    pub fn actuators(&self) -> &[ActuatorDynamics] {
        &self.actuators
    }

    pub fn alpha(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    pub fn beta(&self) -> &DMatrix<f64> {
        &self.beta
    }

    pub fn initial_state(&self) -> &DVector<f64> {
        &self.initial
    }

    /// `M`, of shape `2m_a × n`.
    pub fn selector(&self) -> &DMatrix<f64> {
        &self.selector
    }

    pub fn state_range(&self, actuator: usize) -> Range<usize> {
        self.state_offsets[actuator]..self.state_offsets[actuator + 1]
    }

    pub fn guidance_range(&self, actuator: usize) -> Range<usize> {
        self.guidance_offsets[actuator]..self.guidance_offsets[actuator + 1]
    }

    /// Positions `Mξ` as points.
    pub fn positions(&self, state: &DVector<f64>) -> Vec<[f64; 2]> {
        (0..self.count())
            .map(|i| {
                let s = self.state_offsets[i];
                [state[s], state[s + 1]]
            })
            .collect()
    }

    pub fn rhs(&self, state: &DVector<f64>, guidance: &DVector<f64>) -> DVector<f64> {
        &self.alpha * state + &self.beta * guidance
    }
}

/// Guidance sampled on the nodes of a grid; linear in between.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceProfile {
    grid: TimeGrid,
    values: DMatrix<f64>,
}

impl GuidanceProfile {
    pub fn new(grid: TimeGrid, values: DMatrix<f64>) -> Result<Self> {
        if values.ncols() != grid.nodes() {
            return Err(Error::Dimension {
                context: "GuidanceProfile nodes",
                expected: grid.nodes(),
                actual: values.ncols(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        Self {
            grid,
            values: DMatrix::zeros(dim, grid.nodes()),
        }
    }

    /// Constant-in-time guidance.
    pub fn constant(grid: TimeGrid, value: &DVector<f64>) -> Self {
        Self {
            grid,
            values: DMatrix::from_fn(value.len(), grid.nodes(), |r, _| value[r]),
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.values
    }

    pub fn at_node(&self, k: usize) -> DVector<f64> {
        self.values.column(k).into_owned()
    }

    /// Value at half-step sample `s` (midpoints interpolate linearly).
    pub fn at_half(&self, s: usize) -> DVector<f64> {
        if s % 2 == 0 {
            self.at_node(s / 2)
        } else {
            (self.values.column(s / 2) + self.values.column(s / 2 + 1)) * 0.5
        }
    }
}

/// Actuator states on the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryProfile {
    grid: TimeGrid,
    states: DMatrix<f64>,
}

impl TrajectoryProfile {
    pub fn new(grid: TimeGrid, states: DMatrix<f64>) -> Result<Self> {
        if states.ncols() != grid.nodes() {
            return Err(Error::Dimension {
                context: "TrajectoryProfile nodes",
                expected: grid.nodes(),
                actual: states.ncols(),
            });
        }
        Ok(Self { grid, states })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    pub fn state(&self, k: usize) -> DVector<f64> {
        self.states.column(k).into_owned()
    }
}

/// RK4 integration of `ξ̇ = αξ + βp` with `p` linear between nodes; realizes
/// the trajectory map `T`.
pub fn propagate(fleet: &FleetDynamics, p: &GuidanceProfile) -> Result<TrajectoryProfile> {
    if p.dim() != fleet.guidance_dim() {
        return Err(Error::Dimension {
            context: "propagate guidance",
            expected: fleet.guidance_dim(),
            actual: p.dim(),
        });
    }
    Ok(propagate_from(fleet, fleet.initial_state(), p))
}

pub(crate) fn propagate_from(
    fleet: &FleetDynamics,
    initial: &DVector<f64>,
    p: &GuidanceProfile,
) -> TrajectoryProfile {
    let grid = *p.grid();
    let dt = grid.dt();
    let mut states = DMatrix::zeros(fleet.state_dim(), grid.nodes());
    let mut xi = initial.clone();
    states.set_column(0, &xi);
    for k in 0..grid.steps() {
        let p0 = p.at_half(2 * k);
        let pm = p.at_half(2 * k + 1);
        let p1 = p.at_half(2 * k + 2);
        let k1 = fleet.rhs(&xi, &p0);
        let k2 = fleet.rhs(&(&xi + &k1 * (0.5 * dt)), &pm);
        let k3 = fleet.rhs(&(&xi + &k2 * (0.5 * dt)), &pm);
        let k4 = fleet.rhs(&(&xi + &k3 * dt), &p1);
        xi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        states.set_column(k + 1, &xi);
    }
    TrajectoryProfile { grid, states }
}

/// Admissible set: per-component box `P`, per-actuator magnitude `p_max`, and
/// per-actuator rate `a_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceBounds {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    pub p_max: f64,
    pub a_max: f64,
}

impl GuidanceBounds {
    pub fn uniform(dim: usize, lower: f64, upper: f64, p_max: f64, a_max: f64) -> Result<Self> {
        let b = Self {
            lower: DVector::from_element(dim, lower),
            upper: DVector::from_element(dim, upper),
            p_max,
            a_max,
        };
        b.check()?;
        Ok(b)
    }

    pub fn check(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() {
            return Err(Error::invalid("bounds", "lower and upper differ in length"));
        }
        if self
            .lower
            .iter()
            .zip(self.upper.iter())
            .any(|(l, u)| !(l <= u))
        {
            return Err(Error::invalid("bounds", "guidance box needs lower ≤ upper"));
        }
        if self
            .lower
            .iter()
            .zip(self.upper.iter())
            .any(|(l, u)| *l > 0.0 || *u < 0.0)
        {
            return Err(Error::invalid("bounds", "guidance box must contain 0"));
        }
        if !(self.p_max > 0.0) || !(self.a_max > 0.0) {
            return Err(Error::invalid("bounds", "p_max and a_max must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ViolationKind {
    Box { component: usize },
    Magnitude { actuator: usize },
    Rate { actuator: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    pub node: usize,
    pub kind: ViolationKind,
    pub value: f64,
    pub limit: f64,
}

fn slack(limit: f64) -> f64 {
    1e-9 * limit.abs().max(1.0)
}

/// Every box, magnitude and rate violation; empty iff `p` is admissible.
pub fn validate_guidance(
    fleet: &FleetDynamics,
    bounds: &GuidanceBounds,
    p: &GuidanceProfile,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let v = p.values();
    let rate_limit = bounds.a_max * p.grid().dt();
    for k in 0..v.ncols() {
        for c in 0..v.nrows() {
            let x = v[(c, k)];
            let (lo, hi) = (bounds.lower[c], bounds.upper[c]);
            if x < lo - slack(lo) || x > hi + slack(hi) || !x.is_finite() {
                out.push(Violation {
                    node: k,
                    kind: ViolationKind::Box { component: c },
                    value: x,
                    limit: if x < lo { lo } else { hi },
                });
            }
        }
        for a in 0..fleet.count() {
            let r = fleet.guidance_range(a);
            let mag = v.view((r.start, k), (r.len(), 1)).norm();
            if mag > bounds.p_max + slack(bounds.p_max) {
                out.push(Violation {
                    node: k,
                    kind: ViolationKind::Magnitude { actuator: a },
                    value: mag,
                    limit: bounds.p_max,
                });
            }
            if k > 0 {
                let step = (v.view((r.start, k), (r.len(), 1))
                    - v.view((r.start, k - 1), (r.len(), 1)))
                .norm();
                if step > rate_limit + slack(rate_limit) {
                    out.push(Violation {
                        node: k,
                        kind: ViolationKind::Rate { actuator: a },
                        value: step,
                        limit: rate_limit,
                    });
                }
            }
        }
    }
    out
}

/// Clip to the box, shrink onto the `p_max` ball, then one forward pass that
/// limits each step to `a_max·Δt`. Feasible output; identity on feasible input.
pub fn project_guidance(
    fleet: &FleetDynamics,
    bounds: &GuidanceBounds,
    raw: &GuidanceProfile,
) -> GuidanceProfile {
    let mut v = raw.values().clone();
    let rate_limit = bounds.a_max * raw.grid().dt();
    for k in 0..v.ncols() {
        for c in 0..v.nrows() {
            let x = v[(c, k)];
            v[(c, k)] = if x.is_nan() {
                0.0
            } else {
                x.clamp(bounds.lower[c], bounds.upper[c])
            };
        }
        for a in 0..fleet.count() {
            let r = fleet.guidance_range(a);
            let mut block = v.view_mut((r.start, k), (r.len(), 1));
            let mag = block.norm();
            if mag > bounds.p_max {
                block *= bounds.p_max / mag;
            }
        }
    }
    for k in 1..v.ncols() {
        for a in 0..fleet.count() {
            let r = fleet.guidance_range(a);
            let prev = v.view((r.start, k - 1), (r.len(), 1)).into_owned();
            let step = v.view((r.start, k), (r.len(), 1)) - &prev;
            let len = step.norm();
            if len > rate_limit {
                let limited = prev + step * (rate_limit / len);
                v.view_mut((r.start, k), (r.len(), 1)).copy_from(&limited);
            }
        }
    }
    GuidanceProfile {
        grid: *raw.grid(),
        values: v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn four_actuator_fleet() -> FleetDynamics {
        FleetDynamics::single_integrators(&[[0.1, 0.1], [0.125, 0.1], [0.125, 0.125], [0.1, 0.125]])
            .unwrap()
    }

    fn bounds(m: usize) -> GuidanceBounds {
        GuidanceBounds::uniform(m, -100.0, 100.0, 100.0, 100.0).unwrap()
    }

    #[test]
    fn assembly_is_block_diagonal() {
        let f = four_actuator_fleet();
        assert_eq!(f.state_dim(), 8);
        assert_eq!(f.guidance_dim(), 8);
        assert_eq!(f.alpha().amax(), 0.0);
        assert_eq!(f.beta(), &DMatrix::identity(8, 8));
        assert_eq!(f.selector(), &DMatrix::identity(8, 8));
        assert_eq!(f.positions(f.initial_state())[2], [0.125, 0.125]);
    }

    #[test]
    fn rejects_uncontrollable_pair() {
        let a = ActuatorDynamics {
            alpha: DMatrix::zeros(2, 2),
            beta: DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            initial: DVector::zeros(2),
        };
        assert!(FleetDynamics::new(vec![a]).is_err());
        // double integrator with acceleration input is controllable
        let alpha = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.0, 0.0, 1.0, 0.0, //
                0.0, 0.0, 0.0, 1.0, //
                0.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0,
            ],
        );
        let beta = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        assert!(is_controllable(&alpha, &beta));
    }

    #[test]
    fn zero_guidance_keeps_state() {
        let f = four_actuator_fleet();
        let g = TimeGrid::new(1.0, 50).unwrap();
        let traj = propagate(&f, &GuidanceProfile::zeros(g, 8)).unwrap();
        for k in 0..g.nodes() {
            assert_eq!(&traj.state(k), f.initial_state());
        }
    }

    #[test]
    fn constant_velocity_is_exact() {
        let f = four_actuator_fleet();
        let g = TimeGrid::new(1.0, 10).unwrap();
        let v = DVector::from_fn(8, |i, _| 0.1 * i as f64 - 0.3);
        let traj = propagate(&f, &GuidanceProfile::constant(g, &v)).unwrap();
        for k in 0..g.nodes() {
            let expect = f.initial_state() + &v * g.time(k);
            assert!((traj.state(k) - expect).amax() < 1e-14);
        }
    }

    #[test]
    fn damped_dynamics_match_exponential() {
        let a = ActuatorDynamics {
            alpha: DMatrix::from_diagonal(&DVector::from_column_slice(&[-1.0, -2.0])),
            beta: DMatrix::identity(2, 2),
            initial: DVector::from_column_slice(&[1.0, 1.0]),
        };
        let f = FleetDynamics::new(vec![a]).unwrap();
        let g = TimeGrid::new(1.0, 100).unwrap();
        let traj = propagate(&f, &GuidanceProfile::zeros(g, 2)).unwrap();
        assert_relative_eq!(traj.state(100)[0], (-1.0f64).exp(), epsilon = 1e-9);
        assert_relative_eq!(traj.state(100)[1], (-2.0f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn zero_guidance_is_admissible() {
        let f = four_actuator_fleet();
        let g = TimeGrid::new(1.0, 1000).unwrap();
        assert!(validate_guidance(&f, &bounds(8), &GuidanceProfile::zeros(g, 8)).is_empty());
    }

    #[test]
    fn box_violation_is_located() {
        let f = four_actuator_fleet();
        let g = TimeGrid::new(1.0, 10).unwrap();
        let mut p = GuidanceProfile::zeros(g, 8);
        p.values_mut().row_mut(3).fill(150.0);
        let v = validate_guidance(
            &f,
            &GuidanceBounds::uniform(8, -100.0, 100.0, 1000.0, 1e9).unwrap(),
            &p,
        );
        assert!(v
            .iter()
            .all(|x| matches!(x.kind, ViolationKind::Box { component: 3 })));
        assert_eq!(v.len(), g.nodes());
    }

    #[test]
    fn step_of_thirty_breaks_rate_bound() {
        let f = four_actuator_fleet();
        let g = TimeGrid::new(1.0, 1000).unwrap();
        let mut p = GuidanceProfile::zeros(g, 8);
        for k in 500..g.nodes() {
            p.values_mut()[(0, k)] = 30.0;
        }
        let v = validate_guidance(&f, &bounds(8), &p);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].node, 500);
        assert_eq!(v[0].kind, ViolationKind::Rate { actuator: 0 });
        assert_relative_eq!(v[0].limit, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn projection_clips_and_is_idempotent() {
        let f = four_actuator_fleet();
        let g = TimeGrid::new(1.0, 20).unwrap();
        let mut raw = GuidanceProfile::zeros(g, 8);
        raw.values_mut()[(1, 0)] = 150.0;
        let b = GuidanceBounds::uniform(8, -100.0, 100.0, 1000.0, 1e9).unwrap();
        let p = project_guidance(&f, &b, &raw);
        assert_eq!(p.values()[(1, 0)], 100.0);
        assert_eq!(project_guidance(&f, &b, &p), p);
    }
}
