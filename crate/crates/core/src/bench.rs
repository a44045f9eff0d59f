//! Strategy comparison, Galerkin-dimension convergence study and field
//! snapshots.
//!
//! Five control/guidance pairs are compared on one scenario:
//!
//! - optimal feedback: Riccati gains along the optimized trajectory;
//! - optimal open-loop: the optimizer's control replayed without feedback;
//! - semi-naive: `u_i = −g·z(ξ_i)` riding the optimized trajectory;
//! - naive: the same local law on a straight constant-speed path `ξ₀ → 1 − ξ₀`;
//! - no control: actuators idle.
//!
//! All loops are simulated with the scenario's disturbance (if enabled), so the
//! two optimal rows differ only through disturbance rejection.

use crate::actuation::ForcingHistory;
use crate::config::ScenarioConfig;
use crate::exec::Exec;
use crate::fleet::{propagate, FleetDynamics, GuidanceProfile, TrajectoryProfile};
use crate::riccati::{simulate, ControlLaw, GainSchedule, SimResult};
use crate::spectral::{BasisSet, CoefficientVector};
use crate::sweep::{mobility_cost, optimize, ControlProblem, OptimizerConfig, Solution};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    OptFeedback,
    OptOpenLoop,
    SemiNaive,
    Naive,
    NoControl,
}

impl Strategy {
    /// Table order, best expected first.
    pub const ALL: [Strategy; 5] = [
        Strategy::OptFeedback,
        Strategy::OptOpenLoop,
        Strategy::SemiNaive,
        Strategy::Naive,
        Strategy::NoControl,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::OptFeedback => "opt-feedback",
            Strategy::OptOpenLoop => "opt-open-loop",
            Strategy::SemiNaive => "semi-naive",
            Strategy::Naive => "naive",
            Strategy::NoControl => "no-control",
        }
    }

    fn needs_optimum(self) -> bool {
        matches!(
            self,
            Strategy::OptFeedback | Strategy::OptOpenLoop | Strategy::SemiNaive
        )
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown {
    pub strategy: Strategy,
    pub pde_cost: f64,
    pub mobility_cost: f64,
    pub total: f64,
    /// `100 · total / total(no control)`.
    pub normalized_percent: f64,
}

/// One simulated strategy.
#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub strategy: Strategy,
    pub pde_cost: f64,
    pub mobility_cost: f64,
    pub guidance: GuidanceProfile,
    pub trajectory: TrajectoryProfile,
    pub sim: SimResult,
}

impl StrategyRun {
    pub fn total(&self) -> f64 {
        self.pde_cost + self.mobility_cost
    }
}

/// A guidance problem plus what the comparison needs on top of it.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub problem: ControlProblem,
    pub forcing: Option<ForcingHistory>,
    pub local_gain: f64,
}

impl Scenario {
    pub fn from_config(cfg: &ScenarioConfig, exec: Exec) -> Result<Self> {
        let problem = cfg.problem(exec)?;
        let forcing = cfg.forcing(&problem.basis, exec)?;
        Ok(Self {
            problem,
            forcing,
            local_gain: cfg.local_gain,
        })
    }

    /// Constant guidance carrying every actuator from `ξ₀` to `1 − ξ₀` over the
    /// horizon. Only defined for single-integrator actuators.
    pub fn naive_guidance(&self) -> Result<GuidanceProfile> {
        let fleet = &self.problem.fleet;
        if !is_single_integrator(fleet) {
            return Err(Error::invalid(
                "fleet",
                "the straight-line strategy needs single-integrator actuators",
            ));
        }
        let start = fleet.initial_state();
        let t_f = self.problem.grid.t_final();
        let velocity = start.map(|s| (1.0 - 2.0 * s) / t_f);
        Ok(GuidanceProfile::constant(self.problem.grid, &velocity))
    }

    fn simulate_with(
        &self,
        inputs: &crate::actuation::InputHistory,
        law: ControlLaw<'_>,
    ) -> Result<SimResult> {
        let p = &self.problem;
        simulate(
            &p.operator,
            inputs,
            &p.weights,
            law,
            self.forcing.as_ref(),
            &p.z0,
        )
    }
}

fn is_single_integrator(fleet: &FleetDynamics) -> bool {
    fleet.actuators().iter().all(|a| {
        a.alpha.iter().all(|&v| v == 0.0)
            && a.beta.shape() == (2, 2)
            && a.beta == DMatrix::identity(2, 2)
    })
}

/// Gains for `u_i = −g·z(ξ_i(t), t)`: row `i` is `g·φ(ξ_i)ᵀ`, or zero while the
/// actuator is outside the domain. Midpoint rows average the neighbouring
/// nodes, as the input history does.
pub fn local_gain_schedule(
    basis: &BasisSet,
    fleet: &FleetDynamics,
    trajectory: &TrajectoryProfile,
    gain: f64,
) -> Result<GainSchedule> {
    let grid = *trajectory.grid();
    let n = basis.dim();
    let m = fleet.count();
    let nodal: Vec<DMatrix<f64>> = (0..grid.nodes())
        .map(|k| {
            let mut row_block = DMatrix::zeros(m, n);
            for (i, [x, y]) in fleet
                .positions(&trajectory.state(k))
                .into_iter()
                .enumerate()
            {
                if (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y) {
                    row_block.set_row(i, &(basis.values_at(x, y) * gain).transpose());
                }
            }
            row_block
        })
        .collect();
    let mut gains = Vec::with_capacity(grid.half_samples());
    for k in 0..grid.nodes() {
        if k > 0 {
            gains.push((&nodal[k - 1] + &nodal[k]) * 0.5);
        }
        gains.push(nodal[k].clone());
    }
    GainSchedule::from_samples(grid, gains)
}

/// Run the guidance optimizer from `p ≡ 0`. A stalled line search is reported
/// through the log and its best iterate returned with `converged = false`.
pub fn solve_guidance(
    problem: &ControlProblem,
    initial: Option<&GuidanceProfile>,
    cfg: &OptimizerConfig,
) -> Result<Solution> {
    let zero = problem.zero_guidance();
    match optimize(problem, initial.unwrap_or(&zero), cfg) {
        Err(Error::Stalled {
            iteration,
            objective,
            gradient_norm,
            best,
        }) => {
            log::warn!(
                "line search stalled at iteration {iteration} (objective {objective:.6e}, projected gradient {gradient_norm:.3e}); using the best iterate"
            );
            Ok(*best)
        }
        other => other,
    }
}

/// Simulate one strategy. The three strategies that ride the optimized
/// trajectory need `optimum`.
pub fn run_strategy(
    strategy: Strategy,
    scenario: &Scenario,
    optimum: Option<&Solution>,
) -> Result<StrategyRun> {
    let problem = &scenario.problem;
    let optimum = match (strategy.needs_optimum(), optimum) {
        (true, None) => {
            return Err(Error::invalid(
                "optimum",
                format!("strategy {strategy} needs an optimized guidance"),
            ))
        }
        (_, o) => o,
    };
    let (guidance, trajectory) = match strategy {
        Strategy::OptFeedback | Strategy::OptOpenLoop | Strategy::SemiNaive => {
            let o = optimum.expect("checked above");
            (o.guidance.clone(), o.trajectory.clone())
        }
        Strategy::Naive => {
            let p = scenario.naive_guidance()?;
            let traj = propagate(&problem.fleet, &p)?;
            (p, traj)
        }
        Strategy::NoControl => {
            let p = problem.zero_guidance();
            let traj = propagate(&problem.fleet, &p)?;
            (p, traj)
        }
    };
    let inputs = problem.input_history(&trajectory)?;
    let sim = match strategy {
        Strategy::OptFeedback => scenario.simulate_with(
            &inputs,
            ControlLaw::Feedback(&optimum.expect("checked").gains),
        )?,
        Strategy::OptOpenLoop => scenario.simulate_with(
            &inputs,
            ControlLaw::OpenLoop(&optimum.expect("checked").control),
        )?,
        Strategy::SemiNaive | Strategy::Naive => {
            let gains = local_gain_schedule(
                &problem.basis,
                &problem.fleet,
                &trajectory,
                scenario.local_gain,
            )?;
            scenario.simulate_with(&inputs, ControlLaw::Feedback(&gains))?
        }
        Strategy::NoControl => scenario.simulate_with(&inputs, ControlLaw::None)?,
    };
    let mobility = match strategy {
        Strategy::NoControl => 0.0,
        _ => mobility_cost(problem.mobility.as_ref(), &guidance, &trajectory),
    };
    Ok(StrategyRun {
        strategy,
        pde_cost: sim.pde_cost(),
        mobility_cost: mobility,
        guidance,
        trajectory,
        sim,
    })
}

#[derive(Debug, Clone)]
pub struct StrategyTable {
    pub rows: Vec<CostBreakdown>,
    pub runs: Vec<StrategyRun>,
}

impl StrategyTable {
    /// Pairs of adjacent rows whose totals are not strictly increasing.
    pub fn ordering_violations(&self) -> Vec<(Strategy, Strategy)> {
        self.rows
            .windows(2)
            .filter(|w| !(w[0].total < w[1].total))
            .map(|w| (w[0].strategy, w[1].strategy))
            .collect()
    }

    pub fn ordering_holds(&self) -> bool {
        self.ordering_violations().is_empty()
    }

    pub fn row(&self, s: Strategy) -> &CostBreakdown {
        self.rows
            .iter()
            .find(|r| r.strategy == s)
            .expect("every strategy has a row")
    }

    pub fn run(&self, s: Strategy) -> &StrategyRun {
        self.runs
            .iter()
            .find(|r| r.strategy == s)
            .expect("every strategy has a run")
    }
}

/// All five strategies, normalized against the no-control total.
pub fn strategy_table(scenario: &Scenario, optimum: &Solution) -> Result<StrategyTable> {
    let runs = scenario.problem.exec.try_map(Strategy::ALL.len(), |i| {
        run_strategy(Strategy::ALL[i], scenario, Some(optimum))
    })?;
    let reference = runs
        .iter()
        .find(|r| r.strategy == Strategy::NoControl)
        .expect("no-control is in the table")
        .total();
    let rows = runs
        .iter()
        .map(|r| CostBreakdown {
            strategy: r.strategy,
            pde_cost: r.pde_cost,
            mobility_cost: r.mobility_cost,
            total: r.total(),
            normalized_percent: 100.0 * r.total() / reference,
        })
        .collect();
    let table = StrategyTable { rows, runs };
    for (a, b) in table.ordering_violations() {
        log::warn!("strategy ordering violated: {a} is not cheaper than {b}");
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub modes: usize,
    pub objective: f64,
    pub pde_cost: f64,
    pub mobility_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `100 · objective / objective(largest N)`.
    pub normalized_percent: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceReport {
    pub fn row(&self, modes: usize) -> Option<&ConvergenceRow> {
        self.rows.iter().find(|r| r.modes == modes)
    }

    /// Adjacent pairs whose optimal cost drops by more than `rel_tol` as `N`
    /// grows.
    pub fn monotonicity_violations(&self, rel_tol: f64) -> Vec<(usize, usize)> {
        self.rows
            .windows(2)
            .filter(|w| w[1].objective < w[0].objective * (1.0 - rel_tol))
            .map(|w| (w[0].modes, w[1].modes))
            .collect()
    }
}

/// Optimize independently at each Galerkin size. The guidance does not depend
/// on `N`, so `warm_start` (for instance the optimum at the scenario's own
/// size) may seed every run.
pub fn convergence_study(
    cfg: &ScenarioConfig,
    modes: &[usize],
    warm_start: Option<&GuidanceProfile>,
    optimizer: &OptimizerConfig,
    exec: Exec,
) -> Result<ConvergenceReport> {
    if modes.is_empty() {
        return Err(Error::invalid("modes", "need at least one Galerkin size"));
    }
    let mut sizes = modes.to_vec();
    sizes.sort_unstable();
    sizes.dedup();
    let solved = exec.try_map(sizes.len(), |i| {
        let problem = cfg.problem_with_modes(sizes[i], Exec::Sequential)?;
        let sol = solve_guidance(&problem, warm_start, optimizer)?;
        log::info!(
            "N = {}: objective {:.10e} after {} iterations",
            sizes[i],
            sol.objective,
            sol.iterations
        );
        Ok::<_, Error>(sol)
    })?;
    let reference = solved.last().expect("nonempty").objective;
    let rows = sizes
        .iter()
        .zip(&solved)
        .map(|(&n, s)| ConvergenceRow {
            modes: n,
            objective: s.objective,
            pde_cost: s.pde_cost,
            mobility_cost: s.mobility_cost,
            iterations: s.iterations,
            converged: s.converged,
            normalized_percent: 100.0 * s.objective / reference,
        })
        .collect();
    Ok(ConvergenceReport { rows })
}

/// `‖Z(t_k)‖` per node.
pub fn norm_history(sim: &SimResult) -> Vec<f64> {
    sim.norm_history()
}

/// Field values on a uniform `raster × raster` grid over the unit square.
/// Entry `(a, b)` is the field at `(a/(raster−1), b/(raster−1))`.
pub fn raster_field(
    c: &CoefficientVector,
    basis: &BasisSet,
    raster: usize,
) -> Result<DMatrix<f64>> {
    if raster < 2 {
        return Err(Error::invalid("raster", "need at least 2 points per axis"));
    }
    if c.len() != basis.dim() {
        return Err(Error::Dimension {
            context: "raster_field",
            expected: basis.dim(),
            actual: c.len(),
        });
    }
    let n = basis.modes_per_axis();
    let h = 1.0 / (raster - 1) as f64;
    let table = DMatrix::from_fn(raster, n, |a, s| {
        basis.boundary().axis_value(s, a as f64 * h)
    });
    let coeffs = DMatrix::from_fn(n, n, |i, j| c[i * n + j]);
    Ok(&table * coeffs * table.transpose())
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    /// Requested time.
    pub time: f64,
    /// Node actually sampled.
    pub node: usize,
    pub values: DMatrix<f64>,
}

/// Field snapshots at the nodes nearest to `times`.
pub fn snapshots(
    sim: &SimResult,
    basis: &BasisSet,
    times: &[f64],
    raster: usize,
) -> Result<Vec<Snapshot>> {
    times
        .iter()
        .map(|&t| {
            let node = sim.grid().nearest_node(t);
            let values = raster_field(&sim.state(node), basis, raster)?;
            Ok(Snapshot {
                time: t,
                node,
                values,
            })
        })
        .collect()
}

/// Largest control magnitude per actuator over nodes with `t > after`,
/// relative to that actuator's overall peak.
pub fn late_control_ratio(sim: &SimResult, after: f64) -> DVector<f64> {
    let grid = sim.grid();
    let m = sim.control_at_node(0).len();
    let mut peak = DVector::<f64>::zeros(m);
    let mut late = DVector::<f64>::zeros(m);
    for k in 0..grid.nodes() {
        let u = sim.control_at_node(k);
        for i in 0..m {
            peak[i] = peak[i].max(u[i].abs());
            if grid.time(k) > after {
                late[i] = late[i].max(u[i].abs());
            }
        }
    }
    late.zip_map(&peak, |l, p| if p > 0.0 { l / p } else { 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{project_field, BoundaryCondition};
    use approx::assert_relative_eq;

    fn small_config() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::dirichlet_paper();
        cfg.modes = 4;
        cfg.grid_steps = 100;
        cfg.optimizer.max_iters = 3;
        cfg
    }

    #[test]
    fn raster_matches_pointwise_evaluation() {
        let basis = BasisSet::new(BoundaryCondition::Neumann, 5).unwrap();
        let c = project_field(|x, y| (x - 0.3).powi(2) + x * y, &basis);
        let r = raster_field(&c, &basis, 11).unwrap();
        for (a, b) in [(0, 0), (3, 7), (10, 10), (5, 2)] {
            let expect =
                crate::spectral::evaluate_field(&c, &basis, a as f64 / 10.0, b as f64 / 10.0)
                    .unwrap();
            assert_relative_eq!(r[(a, b)], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn naive_path_ends_at_mirrored_start() {
        let scenario = Scenario::from_config(&small_config(), Exec::Sequential).unwrap();
        let p = scenario.naive_guidance().unwrap();
        let traj = propagate(&scenario.problem.fleet, &p).unwrap();
        let end = traj.state(scenario.problem.grid.steps());
        let start = scenario.problem.fleet.initial_state();
        for i in 0..start.len() {
            assert_relative_eq!(end[i], 1.0 - start[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn local_gain_reads_field_at_actuator() {
        let scenario = Scenario::from_config(&small_config(), Exec::Sequential).unwrap();
        let problem = &scenario.problem;
        let traj = propagate(&problem.fleet, &problem.zero_guidance()).unwrap();
        let gains = local_gain_schedule(&problem.basis, &problem.fleet, &traj, 0.1).unwrap();
        let u = gains.control(3, &problem.z0);
        for (i, [x, y]) in problem
            .fleet
            .positions(&traj.state(0))
            .into_iter()
            .enumerate()
        {
            let z = crate::spectral::evaluate_field(&problem.z0, &problem.basis, x, y).unwrap();
            assert_relative_eq!(u[i], -0.1 * z, epsilon = 1e-12);
        }
    }

    #[test]
    fn optimal_rows_require_optimum() {
        let scenario = Scenario::from_config(&small_config(), Exec::Sequential).unwrap();
        assert!(run_strategy(Strategy::SemiNaive, &scenario, None).is_err());
        let run = run_strategy(Strategy::NoControl, &scenario, None).unwrap();
        assert_eq!(run.mobility_cost, 0.0);
    }
}
