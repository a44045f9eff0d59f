//! Joint guidance/control optimization by a forward-backward sweep.
//!
//! For a fixed guidance `p` the inner LQR problem is solved exactly by the
//! Riccati equation, so the outer problem is
//!
//! ```text
//! minimize  Z₀ᵀ Π(0; p) Z₀ + J_m(ξ, p)   over admissible p,
//! ```
//!
//! which is attacked by projected gradient descent with an Armijo line search.
//! The gradient combines the PDE costate `λ` (sensitivity of the optimal PDE
//! cost to the input matrix) with the actuator costate `μ` propagated back
//! through the actuator dynamics.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt::Debug;
use std::sync::Arc;

use crate::actuation::{project_input, InputHistory};
use crate::exec::Exec;
use crate::fleet::{
    project_guidance, propagate, FleetDynamics, GuidanceBounds, GuidanceProfile, TrajectoryProfile,
};
use crate::grid::TimeGrid;
use crate::riccati::{
    pde_cost_via_riccati, simulate, solve_riccati, ControlLaw, GainSchedule, LqrWeights,
    OpenLoopControl, RiccatiOptions, RiccatiSolution, SimResult, VectorApply,
};
use crate::spectral::{BasisSet, CoefficientVector, GalerkinOperator};
use crate::{Error, Result};

/// Actuator motion cost `J_m = ∫ h(ξ, t) + g(p, t) dt + h_f(ξ(t_f))`.
pub trait MobilityCost: Debug + Send + Sync {
    fn running_state(&self, xi: &DVector<f64>, t: f64) -> f64;
    fn running_state_gradient(&self, xi: &DVector<f64>, t: f64) -> DVector<f64>;
    fn guidance(&self, p: &DVector<f64>, t: f64) -> f64;
    fn guidance_gradient(&self, p: &DVector<f64>, t: f64) -> DVector<f64>;
    fn terminal(&self, xi: &DVector<f64>) -> f64;
    fn terminal_gradient(&self, xi: &DVector<f64>) -> DVector<f64>;
    /// Constant `d₁` with `g(p, t) ≥ d₁ |p|²`.
    fn coercivity(&self) -> f64;
}

/// `h = a|ξ|²`, `g = b|p|²`, `h_f = c|ξ|²` with nonnegative weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticMobility {
    pub state: f64,
    pub guidance: f64,
    pub terminal: f64,
}

impl QuadraticMobility {
    pub fn new(state: f64, guidance: f64, terminal: f64) -> Result<Self> {
        let m = Self {
            state,
            guidance,
            terminal,
        };
        m.check()?;
        Ok(m)
    }

    /// Guidance effort only: `g = weight·pᵀp`, `h = h_f = 0`.
    pub fn guidance_only(weight: f64) -> Result<Self> {
        Self::new(0.0, weight, 0.0)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.state >= 0.0 && self.terminal >= 0.0) {
            return Err(Error::invalid(
                "mobility",
                "state and terminal weights must be nonnegative",
            ));
        }
        if !(self.guidance > 0.0) {
            return Err(Error::invalid(
                "mobility",
                "guidance weight must be positive",
            ));
        }
        Ok(())
    }
}

impl MobilityCost for QuadraticMobility {
    fn running_state(&self, xi: &DVector<f64>, _t: f64) -> f64 {
        self.state * xi.norm_squared()
    }

    fn running_state_gradient(&self, xi: &DVector<f64>, _t: f64) -> DVector<f64> {
        xi * (2.0 * self.state)
    }

    fn guidance(&self, p: &DVector<f64>, _t: f64) -> f64 {
        self.guidance * p.norm_squared()
    }

    fn guidance_gradient(&self, p: &DVector<f64>, _t: f64) -> DVector<f64> {
        p * (2.0 * self.guidance)
    }

    fn terminal(&self, xi: &DVector<f64>) -> f64 {
        self.terminal * xi.norm_squared()
    }

    fn terminal_gradient(&self, xi: &DVector<f64>) -> DVector<f64> {
        xi * (2.0 * self.terminal)
    }

    fn coercivity(&self) -> f64 {
        self.guidance
    }
}

/// Everything the sweep needs about one scenario.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub basis: BasisSet,
    pub operator: GalerkinOperator,
    pub fleet: FleetDynamics,
    pub sigmas: Vec<f64>,
    pub weights: LqrWeights,
    pub mobility: Arc<dyn MobilityCost>,
    pub bounds: GuidanceBounds,
    pub z0: CoefficientVector,
    pub grid: TimeGrid,
    pub riccati: RiccatiOptions,
    pub exec: Exec,
}

impl ControlProblem {
    pub fn check(&self) -> Result<()> {
        let n = self.basis.dim();
        let dims = [
            ("operator", self.operator.dim(), n),
            ("initial state", self.z0.len(), n),
            ("state weight", self.weights.state_dim(), n),
            ("kernel widths", self.sigmas.len(), self.fleet.count()),
            ("control weight", self.weights.inputs(), self.fleet.count()),
            (
                "guidance bounds",
                self.bounds.lower.len(),
                self.fleet.guidance_dim(),
            ),
        ];
        for (context, actual, expected) in dims {
            if actual != expected {
                return Err(Error::Dimension {
                    context,
                    expected,
                    actual,
                });
            }
        }
        self.bounds.check()
    }

    pub fn zero_guidance(&self) -> GuidanceProfile {
        GuidanceProfile::zeros(self.grid, self.fleet.guidance_dim())
    }

    pub fn input_history(&self, trajectory: &TrajectoryProfile) -> Result<InputHistory> {
        InputHistory::from_trajectory(
            &self.basis,
            &self.fleet,
            &self.sigmas,
            trajectory,
            self.exec,
        )
    }
}

/// Simpson weights on the half-step lattice.
fn simpson_weight(grid: &TimeGrid, s: usize) -> f64 {
    let h = grid.dt();
    if s % 2 == 1 {
        2.0 * h / 3.0
    } else if s == 0 || s == grid.half_samples() - 1 {
        h / 6.0
    } else {
        h / 3.0
    }
}

fn half_state(traj: &TrajectoryProfile, s: usize) -> DVector<f64> {
    if s % 2 == 0 {
        traj.state(s / 2)
    } else {
        (traj.states().column(s / 2) + traj.states().column(s / 2 + 1)) * 0.5
    }
}

/// `J_m` by Simpson's rule with `ξ`, `p` linear between nodes.
pub fn mobility_cost(
    mobility: &dyn MobilityCost,
    p: &GuidanceProfile,
    traj: &TrajectoryProfile,
) -> f64 {
    let grid = p.grid();
    let running: f64 = (0..grid.half_samples())
        .map(|s| {
            let t = grid.half_time(s);
            simpson_weight(grid, s)
                * (mobility.running_state(&half_state(traj, s), t)
                    + mobility.guidance(&p.at_half(s), t))
        })
        .sum();
    running + mobility.terminal(&traj.state(grid.steps()))
}

/// `⟨Z,QZ⟩ + uᵀRu + h + g + λᵀ(AZ + B(Mξ)u) + μᵀ(αξ + βp)`.
#[allow(clippy::too_many_arguments)]
pub fn hamiltonian(
    problem: &ControlProblem,
    z: &DVector<f64>,
    xi: &DVector<f64>,
    u: &DVector<f64>,
    p: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: &DVector<f64>,
    t: f64,
) -> Result<f64> {
    let w = &problem.weights;
    let mut h = z.dot(&(w.state() * z)) + u.dot(&(w.control() * u));
    h += problem.mobility.running_state(xi, t) + problem.mobility.guidance(p, t);
    if lambda.iter().any(|&l| l != 0.0) {
        let b = project_input(
            &problem.fleet.positions(xi),
            &problem.sigmas,
            &problem.basis,
        )?;
        h += lambda.dot(&(problem.operator.matrix() * z + b.matrix * u));
    }
    h += mu.dot(&problem.fleet.rhs(xi, p));
    Ok(h)
}

/// Forward pass at one guidance: trajectory, inputs, Riccati solution, costs.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub guidance: GuidanceProfile,
    pub trajectory: TrajectoryProfile,
    pub riccati: RiccatiSolution,
    pub pde_cost: f64,
    pub mobility_cost: f64,
}

impl Evaluation {
    pub fn objective(&self) -> f64 {
        self.pde_cost + self.mobility_cost
    }
}

pub fn evaluate(
    problem: &ControlProblem,
    p: &GuidanceProfile,
) -> Result<(Evaluation, InputHistory)> {
    let trajectory = propagate(&problem.fleet, p)?;
    let inputs = problem.input_history(&trajectory)?;
    let riccati = solve_riccati(
        &problem.operator,
        &inputs,
        &problem.weights,
        &problem.riccati,
    )?;
    let pde_cost = pde_cost_via_riccati(&problem.z0, &riccati);
    let mobility_cost = mobility_cost(problem.mobility.as_ref(), p, &trajectory);
    Ok((
        Evaluation {
            guidance: p.clone(),
            trajectory,
            riccati,
            pde_cost,
            mobility_cost,
        },
        inputs,
    ))
}

/// Forward and backward histories of one sweep.
#[derive(Debug, Clone)]
pub struct SweepState {
    pub evaluation: Evaluation,
    /// Optimal closed loop along the current trajectory (no disturbance).
    pub loop_result: SimResult,
    /// PDE costate `λ` on the half-step lattice.
    pub lambda: Vec<DVector<f64>>,
    /// Actuator costate `μ` at the nodes.
    pub mu: Vec<DVector<f64>>,
    /// `∂(objective)/∂p_k` for nodal guidance values.
    pub nodal_gradient: DMatrix<f64>,
}

/// `Z` on the half-step lattice; midpoints by cubic Hermite interpolation.
fn half_step_states<G: crate::riccati::Generator + ?Sized>(
    op: &G,
    inputs: &InputHistory,
    sim: &SimResult,
) -> Vec<DVector<f64>> {
    let grid = sim.grid();
    let h = grid.dt();
    let mut av = VectorApply::new(op);
    let slopes: Vec<DVector<f64>> = (0..grid.nodes())
        .map(|k| {
            let z = sim.state(k);
            let mut f = av.apply(&z);
            f.gemv(1.0, inputs.node(k), sim.control_at_node(k), 1.0);
            f
        })
        .collect();
    let mut out = Vec::with_capacity(grid.half_samples());
    for k in 0..grid.nodes() {
        if k > 0 {
            let (z0, z1) = (sim.state(k - 1), sim.state(k));
            out.push((z0 + z1) * 0.5 + (&slopes[k - 1] - &slopes[k]) * (h / 8.0));
        }
        out.push(sim.state(k));
    }
    out
}

/// Backward RK4 of `λ̇ = −2QZ − Aᵀλ`, `λ(t_f) = 2Q_f Z(t_f)`.
pub fn pde_costate(problem: &ControlProblem, z_half: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let grid = &problem.grid;
    let h = grid.dt();
    let steps = grid.steps();
    let q = problem.weights.state();
    let mut av = VectorApply::new(&problem.operator);
    let mut rhs = |s: usize, l: &DVector<f64>| -> DVector<f64> {
        av.apply_transpose(l) + (q * &z_half[s]) * 2.0
    };
    let mut out = vec![DVector::zeros(0); grid.half_samples()];
    let mut lam = (problem.weights.terminal() * &z_half[2 * steps]) * 2.0;
    out[2 * steps] = lam.clone();
    for k in (0..steps).rev() {
        let (se, sm, ss) = (2 * k + 2, 2 * k + 1, 2 * k);
        let k1 = rhs(se, &lam);
        let k2 = rhs(sm, &(&lam + &k1 * (0.5 * h)));
        let k3 = rhs(sm, &(&lam + &k2 * (0.5 * h)));
        let k4 = rhs(ss, &(&lam + &k3 * h));
        let next = &lam + (&k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * (h / 6.0);
        // midpoint by Hermite interpolation of the backward solution
        let f_end = &k1;
        let f_start = rhs(ss, &next);
        out[sm] = (&lam + &next) * 0.5 + (f_start - f_end) * (h / 8.0);
        out[ss] = next.clone();
        lam = next;
    }
    out
}

/// One RK4 step of the fleet as `ξ' = Φξ + Γ₀p_k + Γ₁p_{k+1}`.
fn fleet_step_matrices(
    fleet: &FleetDynamics,
    h: f64,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let alpha = fleet.alpha();
    let beta = fleet.beta();
    let n = fleet.state_dim();
    let m = fleet.guidance_dim();
    let step = |x: DMatrix<f64>, p0: DMatrix<f64>, p1: DMatrix<f64>| -> DMatrix<f64> {
        let pm = (&p0 + &p1) * 0.5;
        let k1 = alpha * &x + beta * &p0;
        let k2 = alpha * (&x + &k1 * (0.5 * h)) + beta * &pm;
        let k3 = alpha * (&x + &k2 * (0.5 * h)) + beta * &pm;
        let k4 = alpha * (&x + &k3 * h) + beta * &p1;
        &x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    };
    let phi = step(
        DMatrix::identity(n, n),
        DMatrix::zeros(m, n),
        DMatrix::zeros(m, n),
    );
    let g0 = step(
        DMatrix::zeros(n, m),
        DMatrix::identity(m, m),
        DMatrix::zeros(m, m),
    );
    let g1 = step(
        DMatrix::zeros(n, m),
        DMatrix::zeros(m, m),
        DMatrix::identity(m, m),
    );
    (phi, g0, g1)
}

/// Costates and the nodal guidance gradient at an evaluated guidance.
pub fn backward_costates(
    problem: &ControlProblem,
    evaluation: Evaluation,
    inputs: &InputHistory,
) -> Result<SweepState> {
    let grid = problem.grid;
    let steps = grid.steps();
    let fleet = &problem.fleet;
    let ma = fleet.count();
    let loop_result = simulate(
        &problem.operator,
        inputs,
        &problem.weights,
        ControlLaw::Feedback(evaluation.riccati.gains()),
        None,
        &problem.z0,
    )?;
    let z_half = half_step_states(&problem.operator, inputs, &loop_result);
    let lambda = pde_costate(problem, &z_half);

    // ∂V/∂B_s ≈ w_s λ_s u_sᵀ; midpoint inputs are nodal averages, so half of
    // each midpoint weight is attributed to either neighbour.
    let traj = &evaluation.trajectory;
    let p = &evaluation.guidance;
    let mob = problem.mobility.as_ref();
    let mut sens: Vec<DVector<f64>> = vec![DVector::zeros(fleet.state_dim()); grid.nodes()];
    for k in 0..grid.nodes() {
        let mut weighted = DMatrix::zeros(problem.basis.dim(), ma);
        let mut add = |s: usize, factor: f64| {
            let u = loop_result.controls().sample(s);
            weighted.ger(factor * simpson_weight(&grid, s), &lambda[s], u, 1.0);
        };
        add(2 * k, 1.0);
        if k > 0 {
            add(2 * k - 1, 0.5);
        }
        if k < steps {
            add(2 * k + 1, 0.5);
        }
        let (gx, gy) = (inputs.gradient_x(2 * k), inputs.gradient_y(2 * k));
        let mut pos = DVector::zeros(2 * ma);
        for i in 0..ma {
            pos[2 * i] = weighted.column(i).dot(&gx.column(i));
            pos[2 * i + 1] = weighted.column(i).dot(&gy.column(i));
        }
        let mut s_k = fleet.selector().tr_mul(&pos);

        // running state cost, Simpson with linear midpoints
        let xi = traj.state(k);
        s_k.axpy(
            simpson_weight(&grid, 2 * k),
            &mob.running_state_gradient(&xi, grid.time(k)),
            1.0,
        );
        for (s, other) in [
            (2 * k as isize - 1, k as isize - 1),
            (2 * k as isize + 1, k as isize + 1),
        ] {
            if other >= 0 && other <= steps as isize {
                let s = s as usize;
                let xm = half_state(traj, s);
                s_k.axpy(
                    0.5 * simpson_weight(&grid, s),
                    &mob.running_state_gradient(&xm, grid.half_time(s)),
                    1.0,
                );
            }
        }
        sens[k] = s_k;
    }

    let (phi, g0, g1) = fleet_step_matrices(fleet, grid.dt());
    let mut mu = vec![DVector::zeros(fleet.state_dim()); grid.nodes()];
    mu[steps] = mob.terminal_gradient(&traj.state(steps));
    for k in (0..steps).rev() {
        mu[k] = phi.tr_mul(&(&mu[k + 1] + &sens[k + 1]));
    }

    let m = fleet.guidance_dim();
    let mut nodal_gradient = DMatrix::zeros(m, grid.nodes());
    for k in 0..grid.nodes() {
        let mut g = p.at_node(k).map(|_| 0.0);
        g.axpy(
            simpson_weight(&grid, 2 * k),
            &mob.guidance_gradient(&p.at_node(k), grid.time(k)),
            1.0,
        );
        if k > 0 {
            let s = 2 * k - 1;
            g.axpy(
                0.5 * simpson_weight(&grid, s),
                &mob.guidance_gradient(&p.at_half(s), grid.half_time(s)),
                1.0,
            );
            g += g1.tr_mul(&(&mu[k] + &sens[k]));
        }
        if k < steps {
            let s = 2 * k + 1;
            g.axpy(
                0.5 * simpson_weight(&grid, s),
                &mob.guidance_gradient(&p.at_half(s), grid.half_time(s)),
                1.0,
            );
            g += g0.tr_mul(&(&mu[k + 1] + &sens[k + 1]));
        }
        nodal_gradient.set_column(k, &g);
    }

    Ok(SweepState {
        evaluation,
        loop_result,
        lambda,
        mu,
        nodal_gradient,
    })
}

/// L² gradient `∇g + βᵀμ` on the nodes: the nodal gradient divided by the
/// trapezoid weights.
pub fn guidance_gradient(sweep: &SweepState) -> DMatrix<f64> {
    let grid = sweep.evaluation.guidance.grid();
    let mut g = sweep.nodal_gradient.clone();
    for (k, mut col) in g.column_iter_mut().enumerate() {
        col /= grid.trapezoid_weight(k);
    }
    g
}

fn l2_inner(grid: &TimeGrid, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (0..grid.nodes())
        .map(|k| grid.trapezoid_weight(k) * a.column(k).dot(&b.column(k)))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Stop when the projected-gradient L² norm is below `tol·(1 + |J|)`.
    pub gradient_tol: f64,
    pub initial_step: f64,
    pub shrink: f64,
    pub sufficient_decrease: f64,
    pub max_backtracks: usize,
    /// Start each line search from the Barzilai-Borwein step instead of
    /// `initial_step`.
    pub barzilai_borwein: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            gradient_tol: 1e-4,
            initial_step: 1.0,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
            max_backtracks: 30,
            barzilai_borwein: true,
        }
    }
}

impl OptimizerConfig {
    pub fn check(&self) -> Result<()> {
        if self.max_iters == 0 || self.max_backtracks == 0 {
            return Err(Error::invalid(
                "optimizer",
                "iteration limits must be positive",
            ));
        }
        if !(self.gradient_tol > 0.0 && self.initial_step > 0.0 && self.sufficient_decrease > 0.0) {
            return Err(Error::invalid(
                "optimizer",
                "tolerances and steps must be positive",
            ));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::invalid(
                "optimizer",
                "backtracking factor must lie in (0, 1)",
            ));
        }
        if self.sufficient_decrease >= 1.0 {
            return Err(Error::invalid(
                "optimizer",
                "sufficient-decrease constant must be below 1",
            ));
        }
        Ok(())
    }
}

/// Result of [`optimize`].
#[derive(Debug, Clone)]
pub struct Solution {
    pub guidance: GuidanceProfile,
    pub trajectory: TrajectoryProfile,
    /// Optimal control sampled along the final trajectory.
    pub control: OpenLoopControl,
    /// Feedback gains along the final trajectory.
    pub gains: GainSchedule,
    pub pde_cost: f64,
    pub mobility_cost: f64,
    pub objective: f64,
    pub iterations: usize,
    /// Objective at every accepted iterate, starting with the initial guess.
    pub cost_history: Vec<f64>,
    pub gradient_norm: f64,
    pub converged: bool,
}

fn projected_gradient_norm(
    problem: &ControlProblem,
    p: &GuidanceProfile,
    grad: &DMatrix<f64>,
) -> f64 {
    let mut trial = p.clone();
    *trial.values_mut() -= grad;
    let projected = project_guidance(&problem.fleet, &problem.bounds, &trial);
    let diff = p.values() - projected.values();
    l2_inner(p.grid(), &diff, &diff).sqrt()
}

fn finish(
    sweep: SweepState,
    iterations: usize,
    cost_history: Vec<f64>,
    gradient_norm: f64,
    converged: bool,
) -> Solution {
    let e = sweep.evaluation;
    Solution {
        objective: e.objective(),
        pde_cost: e.pde_cost,
        mobility_cost: e.mobility_cost,
        control: sweep.loop_result.controls().clone(),
        gains: e.riccati.gains().clone(),
        guidance: e.guidance,
        trajectory: e.trajectory,
        iterations,
        cost_history,
        gradient_norm,
        converged,
    }
}

/// Projected gradient descent on the reduced objective.
pub fn optimize(
    problem: &ControlProblem,
    initial: &GuidanceProfile,
    cfg: &OptimizerConfig,
) -> Result<Solution> {
    problem.check()?;
    cfg.check()?;
    if initial.grid() != &problem.grid || initial.dim() != problem.fleet.guidance_dim() {
        return Err(Error::invalid(
            "initial",
            "guidance does not match the problem grid or fleet",
        ));
    }
    let grid = problem.grid;
    let p0 = project_guidance(&problem.fleet, &problem.bounds, initial);
    let (eval, inputs) = evaluate(problem, &p0)?;
    let mut sweep = backward_costates(problem, eval, &inputs)?;
    let mut grad = guidance_gradient(&sweep);
    let mut cost_history = vec![sweep.evaluation.objective()];
    let mut step = cfg.initial_step;

    for iter in 0..cfg.max_iters {
        let f = sweep.evaluation.objective();
        let p = sweep.evaluation.guidance.clone();
        let pg_norm = projected_gradient_norm(problem, &p, &grad);
        log::debug!(
            "iter {iter}: objective {f:.10e}, projected gradient {pg_norm:.3e}, step {step:.3e}"
        );
        if pg_norm <= cfg.gradient_tol * (1.0 + f.abs()) {
            return Ok(finish(sweep, iter, cost_history, pg_norm, true));
        }

        let mut accepted = None;
        let mut s = step;
        for _ in 0..cfg.max_backtracks {
            let mut trial = p.clone();
            *trial.values_mut() -= &grad * s;
            let trial = project_guidance(&problem.fleet, &problem.bounds, &trial);
            let delta = trial.values() - p.values();
            let slope = l2_inner(&grid, &grad, &delta);
            if delta.amax() == 0.0 {
                break;
            }
            let (eval, inputs) = evaluate(problem, &trial)?;
            if eval.objective() <= f + cfg.sufficient_decrease * slope && slope < 0.0 {
                accepted = Some((eval, inputs, s));
                break;
            }
            s *= cfg.shrink;
        }

        let Some((eval, inputs, s)) = accepted else {
            return Err(Error::Stalled {
                iteration: iter,
                objective: f,
                gradient_norm: pg_norm,
                best: Box::new(finish(sweep, iter, cost_history, pg_norm, false)),
            });
        };

        let next = backward_costates(problem, eval, &inputs)?;
        let next_grad = guidance_gradient(&next);
        cost_history.push(next.evaluation.objective());
        step = if cfg.barzilai_borwein {
            let dp = next.evaluation.guidance.values() - p.values();
            let dg = &next_grad - &grad;
            let curvature = l2_inner(&grid, &dp, &dg);
            let bb = l2_inner(&grid, &dp, &dp) / curvature;
            if curvature > 0.0 && bb.is_finite() {
                bb.clamp(1e-3 * cfg.initial_step, 1e3 * cfg.initial_step)
            } else {
                (s / cfg.shrink).min(1e3 * cfg.initial_step)
            }
        } else {
            cfg.initial_step
        };
        sweep = next;
        grad = next_grad;
    }
    let pg_norm = projected_gradient_norm(problem, &sweep.evaluation.guidance, &grad);
    let f = sweep.evaluation.objective();
    let converged = pg_norm <= cfg.gradient_tol * (1.0 + f.abs());
    Ok(finish(
        sweep,
        cfg.max_iters,
        cost_history,
        pg_norm,
        converged,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{assemble_operator, project_field, BoundaryCondition};
    use approx::assert_relative_eq;

    fn small_problem(steps: usize) -> ControlProblem {
        let basis = BasisSet::new(BoundaryCondition::Dirichlet, 4).unwrap();
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
            grid: TimeGrid::new(1.0, steps).unwrap(),
            riccati: RiccatiOptions::default(),
            exec: Exec::Sequential,
            basis,
        }
    }

    #[test]
    fn zero_costates_for_zero_state() {
        let mut problem = small_problem(20);
        problem.z0 = DVector::zeros(16);
        let (eval, inputs) = evaluate(&problem, &problem.zero_guidance()).unwrap();
        let sweep = backward_costates(&problem, eval, &inputs).unwrap();
        assert!(sweep.lambda.iter().all(|l| l.amax() == 0.0));
        assert!(sweep.mu.iter().all(|m| m.amax() == 0.0));
        assert_eq!(guidance_gradient(&sweep).amax(), 0.0);
    }

    #[test]
    fn guidance_gradient_of_effort_term() {
        let mut problem = small_problem(20);
        problem.z0 = DVector::zeros(16);
        let p = GuidanceProfile::constant(problem.grid, &DVector::from_element(4, 1.0));
        let (eval, inputs) = evaluate(&problem, &p).unwrap();
        let sweep = backward_costates(&problem, eval, &inputs).unwrap();
        let g = guidance_gradient(&sweep);
        assert!(g.iter().all(|&x| (x - 0.2).abs() < 1e-12));
    }

    #[test]
    fn reduced_objective_matches_feedback_cost() {
        let problem = small_problem(400);
        let p = GuidanceProfile::constant(
            problem.grid,
            &DVector::from_column_slice(&[0.1, 0.2, -0.1, 0.05]),
        );
        let (eval, inputs) = evaluate(&problem, &p).unwrap();
        let sweep = backward_costates(&problem, eval, &inputs).unwrap();
        assert_relative_eq!(
            sweep.loop_result.pde_cost() + sweep.evaluation.mobility_cost,
            sweep.evaluation.objective(),
            max_relative = 1e-3
        );
    }

    fn costate_mismatch(steps: usize) -> f64 {
        let mut problem = small_problem(steps);
        problem.riccati.keep_history = true;
        let (eval, inputs) = evaluate(&problem, &problem.zero_guidance()).unwrap();
        let hist: Vec<DMatrix<f64>> = eval.riccati.history().unwrap().to_vec();
        let sweep = backward_costates(&problem, eval, &inputs).unwrap();
        (0..=steps)
            .map(|k| {
                let expect = &hist[k] * sweep.loop_result.state(k) * 2.0;
                (&sweep.lambda[2 * k] - &expect).amax() / expect.amax()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn costate_mismatch_is_second_order() {
        let (coarse, fine) = (costate_mismatch(200), costate_mismatch(400));
        assert!(fine < 1e-4, "{fine}");
        assert!(fine < coarse / 3.0, "{coarse} -> {fine}");
    }

    #[test]
    fn hamiltonian_control_derivative() {
        let problem = small_problem(10);
        let z = DVector::from_fn(16, |i, _| (i as f64 * 0.37).sin());
        let xi = DVector::from_column_slice(&[0.3, 0.4, 0.7, 0.6]);
        let u = DVector::from_column_slice(&[0.5, -1.2]);
        let p = DVector::from_column_slice(&[1.0, 2.0, -1.0, 0.5]);
        let lambda = DVector::from_fn(16, |i, _| (i as f64 * 0.11).cos());
        let mu = DVector::from_column_slice(&[0.3, -0.2, 0.1, 0.4]);
        let b = project_input(
            &problem.fleet.positions(&xi),
            &problem.sigmas,
            &problem.basis,
        )
        .unwrap();
        let analytic = problem.weights.control() * &u * 2.0 + b.matrix.tr_mul(&lambda);
        for i in 0..2 {
            let eps = 1e-6;
            let mut up = u.clone();
            up[i] += eps;
            let mut dn = u.clone();
            dn[i] -= eps;
            let fd = (hamiltonian(&problem, &z, &xi, &up, &p, &lambda, &mu, 0.0).unwrap()
                - hamiltonian(&problem, &z, &xi, &dn, &p, &lambda, &mu, 0.0).unwrap())
                / (2.0 * eps);
            assert_relative_eq!(fd, analytic[i], max_relative = 1e-6);
        }
    }
}
