//! Finite-horizon LQR along a fixed actuator trajectory: backward differential
//! Riccati equation, feedback synthesis, and forward loop simulation.
//!
//! Time-varying inputs are sampled on the half-step lattice of a [`TimeGrid`]
//! (nodes and midpoints), which is exactly what a classical RK4 step consumes.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::actuation::{ForcingHistory, InputHistory};
use crate::grid::TimeGrid;
use crate::spectral::{GalerkinOperator, ModalFactors, OperatorWorkspace};
use crate::{Error, Result};

/// A linear generator `A` that can be applied to blocks of columns.
pub trait Generator: Sync {
    fn dim(&self) -> usize;
    /// `out = A X`.
    fn apply(&self, x: &DMatrix<f64>, out: &mut DMatrix<f64>, work: &mut OperatorWorkspace);
    /// `out = Aᵀ X`.
    fn apply_transpose(
        &self,
        x: &DMatrix<f64>,
        out: &mut DMatrix<f64>,
        work: &mut OperatorWorkspace,
    );
    /// Eigen-decomposition used by the fast Riccati path, if available.
    fn modal(&self) -> Option<&ModalFactors> {
        None
    }
}

impl Generator for GalerkinOperator {
    fn dim(&self) -> usize {
        GalerkinOperator::dim(self)
    }

    fn apply(&self, x: &DMatrix<f64>, out: &mut DMatrix<f64>, work: &mut OperatorWorkspace) {
        self.mul_into(x, out, work);
    }

    fn apply_transpose(
        &self,
        x: &DMatrix<f64>,
        out: &mut DMatrix<f64>,
        work: &mut OperatorWorkspace,
    ) {
        self.transpose_mul_into(x, out, work);
    }

    fn modal(&self) -> Option<&ModalFactors> {
        GalerkinOperator::modal(self)
    }
}

impl Generator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &DMatrix<f64>, out: &mut DMatrix<f64>, _work: &mut OperatorWorkspace) {
        out.gemm(1.0, self, x, 0.0);
    }

    fn apply_transpose(
        &self,
        x: &DMatrix<f64>,
        out: &mut DMatrix<f64>,
        _work: &mut OperatorWorkspace,
    ) {
        out.gemm_tr(1.0, self, x, 0.0);
    }
}

/// Column-vector products with reused buffers.
pub(crate) struct VectorApply<'a, G: Generator + ?Sized> {
    op: &'a G,
    input: DMatrix<f64>,
    output: DMatrix<f64>,
    work: OperatorWorkspace,
}

impl<'a, G: Generator + ?Sized> VectorApply<'a, G> {
    pub(crate) fn new(op: &'a G) -> Self {
        let n = op.dim();
        Self {
            op,
            input: DMatrix::zeros(n, 1),
            output: DMatrix::zeros(n, 1),
            work: OperatorWorkspace::new(n, 1),
        }
    }

    pub(crate) fn apply(&mut self, z: &DVector<f64>) -> DVector<f64> {
        self.input.copy_from_slice(z.as_slice());
        self.op.apply(&self.input, &mut self.output, &mut self.work);
        DVector::from_column_slice(self.output.as_slice())
    }

    pub(crate) fn apply_transpose(&mut self, z: &DVector<f64>) -> DVector<f64> {
        self.input.copy_from_slice(z.as_slice());
        self.op
            .apply_transpose(&self.input, &mut self.output, &mut self.work);
        DVector::from_column_slice(self.output.as_slice())
    }
}

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-10;
const PD_TOL: f64 = 1e-12;

/// Quadratic weights: state `Q`, terminal `Q_f`, control `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrWeights {
    state: DMatrix<f64>,
    terminal: DMatrix<f64>,
    control: DMatrix<f64>,
    control_inv: DMatrix<f64>,
}

fn check_symmetric(name: &'static str, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::invalid(name, "must be square"));
    }
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_TOL * m.amax().max(1.0) {
        return Err(Error::invalid(
            name,
            format!("not symmetric (max |M - Mᵀ| = {asym:e})"),
        ));
    }
    Ok(())
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().min()
}

impl LqrWeights {
    pub fn new(state: DMatrix<f64>, terminal: DMatrix<f64>, control: DMatrix<f64>) -> Result<Self> {
        check_symmetric("Q", &state)?;
        check_symmetric("Q_f", &terminal)?;
        check_symmetric("R", &control)?;
        if state.shape() != terminal.shape() {
            return Err(Error::Dimension {
                context: "LqrWeights Q_f",
                expected: state.nrows(),
                actual: terminal.nrows(),
            });
        }
        for (name, m) in [("Q", &state), ("Q_f", &terminal)] {
            let e = min_eigenvalue(m);
            if e < -PSD_TOL {
                return Err(Error::invalid(
                    name,
                    format!("not positive semidefinite (min eigenvalue {e:e})"),
                ));
            }
        }
        let e = min_eigenvalue(&control);
        if !(e > PD_TOL) {
            return Err(Error::invalid(
                "R",
                format!("not positive definite (min eigenvalue {e:e})"),
            ));
        }
        let control_inv = Cholesky::new(control.clone())
            .ok_or_else(|| Error::invalid("R", "Cholesky factorization failed"))?
            .inverse();
        Ok(Self {
            state,
            terminal,
            control,
            control_inv,
        })
    }

    /// `Q = Q_f = I_n`, `R = r·I_m`.
    pub fn identity(state_dim: usize, inputs: usize, r: f64) -> Result<Self> {
        Self::new(
            DMatrix::identity(state_dim, state_dim),
            DMatrix::identity(state_dim, state_dim),
            DMatrix::identity(inputs, inputs) * r,
        )
    }

    pub fn state(&self) -> &DMatrix<f64> {
        &self.state
    }

    pub fn terminal(&self) -> &DMatrix<f64> {
        &self.terminal
    }

    pub fn control(&self) -> &DMatrix<f64> {
        &self.control
    }

    pub fn control_inverse(&self) -> &DMatrix<f64> {
        &self.control_inv
    }

    pub fn state_dim(&self) -> usize {
        self.state.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.control.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiOptions {
    /// Abort when `max |Π|` exceeds this value.
    pub escape_ceiling: f64,
    /// Keep `Π(t_k)` at every node (memory `O(K n²)`).
    pub keep_history: bool,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        Self {
            escape_ceiling: 1e12,
            keep_history: false,
        }
    }
}

/// Feedback gains `K(t)` on the half-step lattice; the law is `u = −K(t) Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    grid: TimeGrid,
    gains: Vec<DMatrix<f64>>,
}

impl GainSchedule {
    pub fn from_samples(grid: TimeGrid, gains: Vec<DMatrix<f64>>) -> Result<Self> {
        if gains.len() != grid.half_samples() {
            return Err(Error::Dimension {
                context: "GainSchedule samples",
                expected: grid.half_samples(),
                actual: gains.len(),
            });
        }
        Ok(Self { grid, gains })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn gain(&self, s: usize) -> &DMatrix<f64> {
        &self.gains[s]
    }

    /// `u(t_s, Z) = −K_s Z`.
    pub fn control(&self, s: usize, z: &DVector<f64>) -> DVector<f64> {
        -(&self.gains[s] * z)
    }
}

/// Output of the backward Riccati solve.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    grid: TimeGrid,
    initial: DMatrix<f64>,
    gains: GainSchedule,
    history: Option<Vec<DMatrix<f64>>>,
    max_asymmetry: f64,
}

impl RiccatiSolution {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// `Π(0)`.
    pub fn initial(&self) -> &DMatrix<f64> {
        &self.initial
    }

    /// `K = R⁻¹ Bᵀ Π` on the half-step lattice; midpoints use the average of
    /// the neighbouring nodal `Π`.
    pub fn gains(&self) -> &GainSchedule {
        &self.gains
    }

    /// `Π(t_k)` for every node, when requested in [`RiccatiOptions`].
    pub fn history(&self) -> Option<&[DMatrix<f64>]> {
        self.history.as_deref()
    }

    /// Largest `|Π − Πᵀ|` seen before the per-step symmetrization.
    pub fn max_asymmetry(&self) -> f64 {
        self.max_asymmetry
    }
}

/// Right-hand side of the Riccati equation in backward time.
trait RiccatiRhs {
    /// `out = AᵀΠ + ΠA + Q − ΠBR⁻¹BᵀΠ` for symmetric `Π`.
    fn eval(&mut self, pi: &DMatrix<f64>, b: &DMatrix<f64>, out: &mut DMatrix<f64>);
    /// `ΠB` from the most recent [`RiccatiRhs::eval`].
    fn last_product(&self) -> &DMatrix<f64>;
}

fn subtract_gain_term(
    pi: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r_inv: &DMatrix<f64>,
    pb: &mut DMatrix<f64>,
    pbr: &mut DMatrix<f64>,
    out: &mut DMatrix<f64>,
) {
    pb.gemm(1.0, pi, b, 0.0);
    pbr.gemm(1.0, pb, r_inv, 0.0);
    out.gemm(-1.0, pbr, &pb.transpose(), 1.0);
}

struct GenericRhs<'a, G: Generator + ?Sized> {
    op: &'a G,
    q: &'a DMatrix<f64>,
    r_inv: &'a DMatrix<f64>,
    work: OperatorWorkspace,
    x: DMatrix<f64>,
    pb: DMatrix<f64>,
    pbr: DMatrix<f64>,
}

impl<G: Generator + ?Sized> RiccatiRhs for GenericRhs<'_, G> {
    fn eval(&mut self, pi: &DMatrix<f64>, b: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        let n = pi.nrows();
        self.op.apply_transpose(pi, &mut self.x, &mut self.work);
        for c in 0..n {
            for r in 0..n {
                out[(r, c)] = self.x[(r, c)] + self.x[(c, r)] + self.q[(r, c)];
            }
        }
        subtract_gain_term(pi, b, self.r_inv, &mut self.pb, &mut self.pbr, out);
    }

    fn last_product(&self) -> &DMatrix<f64> {
        &self.pb
    }
}

/// In eigen-coordinates of `A` the linear part is an elementwise scaling.
struct ModalRhs<'a> {
    lambda: DVector<f64>,
    q: DMatrix<f64>,
    r_inv: &'a DMatrix<f64>,
    pb: DMatrix<f64>,
    pbr: DMatrix<f64>,
}

impl RiccatiRhs for ModalRhs<'_> {
    fn eval(&mut self, pi: &DMatrix<f64>, b: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        let n = pi.nrows();
        let lam = self.lambda.as_slice();
        let cols = out
            .as_mut_slice()
            .chunks_exact_mut(n)
            .zip(pi.as_slice().chunks_exact(n))
            .zip(self.q.as_slice().chunks_exact(n));
        for (c, ((o, p), q)) in cols.enumerate() {
            let lc = lam[c];
            for r in 0..n {
                o[r] = (lam[r] + lc) * p[r] + q[r];
            }
        }
        subtract_gain_term(pi, b, self.r_inv, &mut self.pb, &mut self.pbr, out);
    }

    fn last_product(&self) -> &DMatrix<f64> {
        &self.pb
    }
}

fn symmetrize(m: &mut DMatrix<f64>) -> f64 {
    const TILE: usize = 32;
    let n = m.nrows();
    let s = m.as_mut_slice();
    let mut asym = 0.0f64;
    for cb in (0..n).step_by(TILE) {
        for rb in (cb..n).step_by(TILE) {
            for c in cb..(cb + TILE).min(n) {
                for r in rb.max(c + 1)..(rb + TILE).min(n) {
                    let (a, b) = (s[c * n + r], s[r * n + c]);
                    asym = asym.max((a - b).abs());
                    let avg = 0.5 * (a + b);
                    s[c * n + r] = avg;
                    s[r * n + c] = avg;
                }
            }
        }
    }
    asym
}

/// `out = x + a·y` elementwise.
fn combine(out: &mut DMatrix<f64>, x: &DMatrix<f64>, a: f64, y: &DMatrix<f64>) {
    for ((o, xi), yi) in out
        .as_mut_slice()
        .iter_mut()
        .zip(x.as_slice())
        .zip(y.as_slice())
    {
        *o = xi + a * yi;
    }
}

/// `x += h/6·(k1 + 2k2 + 2k3 + k4)`.
fn rk4_update(x: &mut DMatrix<f64>, h: f64, k: [&DMatrix<f64>; 4]) {
    let w = h / 6.0;
    let it = x
        .as_mut_slice()
        .iter_mut()
        .zip(k[0].as_slice())
        .zip(k[1].as_slice())
        .zip(k[2].as_slice())
        .zip(k[3].as_slice());
    for ((((xi, a), b), c), d) in it {
        *xi += w * (a + 2.0 * (b + c) + d);
    }
}

fn check_inputs(op_dim: usize, inputs: &InputHistory, weights: &LqrWeights) -> Result<()> {
    if inputs.state_dim() != op_dim {
        return Err(Error::Dimension {
            context: "input matrix rows",
            expected: op_dim,
            actual: inputs.state_dim(),
        });
    }
    if weights.state_dim() != op_dim {
        return Err(Error::Dimension {
            context: "state weight",
            expected: op_dim,
            actual: weights.state_dim(),
        });
    }
    if weights.inputs() != inputs.inputs() {
        return Err(Error::Dimension {
            context: "control weight",
            expected: inputs.inputs(),
            actual: weights.inputs(),
        });
    }
    Ok(())
}

/// Backward RK4 for `Π̇ = −AᵀΠ − ΠA − Q + ΠBR⁻¹BᵀΠ`, `Π(t_f) = Q_f`.
///
/// When the generator exposes [`ModalFactors`], the equation is integrated for
/// `WᵀΠW` in the eigenbasis `W` of `A`, where the linear part costs `O(n²)`
/// per stage; results are mapped back before they are returned.
pub fn solve_riccati<G: Generator + ?Sized>(
    op: &G,
    inputs: &InputHistory,
    weights: &LqrWeights,
    options: &RiccatiOptions,
) -> Result<RiccatiSolution> {
    solve_impl(op, inputs, weights, options, None)
}

/// [`solve_riccati`], calling `inspect(k, Π(t_k))` at every node from `K`
/// down to `0`.
pub fn solve_riccati_inspect<G, F>(
    op: &G,
    inputs: &InputHistory,
    weights: &LqrWeights,
    options: &RiccatiOptions,
    mut inspect: F,
) -> Result<RiccatiSolution>
where
    G: Generator + ?Sized,
    F: FnMut(usize, &DMatrix<f64>),
{
    solve_impl(op, inputs, weights, options, Some(&mut inspect))
}

type NodeCallback<'a> = Option<&'a mut dyn FnMut(usize, &DMatrix<f64>)>;

struct BackwardSweep {
    initial: DMatrix<f64>,
    /// `R⁻¹ BᵀΠ` in the integration coordinates.
    gains: Vec<DMatrix<f64>>,
    max_asymmetry: f64,
}

fn backward_rk4<R: RiccatiRhs>(
    grid: &TimeGrid,
    terminal: DMatrix<f64>,
    b: &dyn Fn(usize) -> DMatrix<f64>,
    r_inv: &DMatrix<f64>,
    rhs: &mut R,
    ceiling: f64,
    mut on_node: NodeCallback<'_>,
) -> Result<BackwardSweep> {
    let n = terminal.nrows();
    let m = r_inv.nrows();
    let h = grid.dt();
    let steps = grid.steps();
    let mut pi = terminal;
    let mut k1 = DMatrix::zeros(n, n);
    let mut k2 = DMatrix::zeros(n, n);
    let mut k3 = DMatrix::zeros(n, n);
    let mut k4 = DMatrix::zeros(n, n);
    let mut stage = DMatrix::zeros(n, n);

    // Π symmetric, so R⁻¹BᵀΠ = R⁻¹(ΠB)ᵀ
    let gain_from = |pb: &DMatrix<f64>| -> DMatrix<f64> { r_inv * pb.transpose() };
    let mut gains = vec![DMatrix::zeros(m, n); grid.half_samples()];
    let mut max_asymmetry = 0.0f64;
    let mut pb_mid = DMatrix::zeros(n, m);

    if let Some(cb) = on_node.as_mut() {
        cb(steps, &pi);
    }

    let mut b_end = b(2 * steps);
    for k in (0..steps).rev() {
        let b_mid = b(2 * k + 1);
        let b_start = b(2 * k);

        rhs.eval(&pi, &b_end, &mut k1);
        gains[2 * k + 2] = gain_from(rhs.last_product());
        pb_mid.gemm(0.5, &pi, &b_mid, 0.0);
        combine(&mut stage, &pi, 0.5 * h, &k1);
        rhs.eval(&stage, &b_mid, &mut k2);
        combine(&mut stage, &pi, 0.5 * h, &k2);
        rhs.eval(&stage, &b_mid, &mut k3);
        combine(&mut stage, &pi, h, &k3);
        rhs.eval(&stage, &b_start, &mut k4);
        rk4_update(&mut pi, h, [&k1, &k2, &k3, &k4]);
        max_asymmetry = max_asymmetry.max(symmetrize(&mut pi));

        let norm = pi.amax();
        if !norm.is_finite() || norm > ceiling {
            return Err(Error::RiccatiEscape {
                time: grid.time(k),
                norm,
                ceiling,
            });
        }

        // midpoint gain from the average of the neighbouring nodal Π
        pb_mid.gemm(0.5, &pi, &b_mid, 1.0);
        gains[2 * k + 1] = gain_from(&pb_mid);
        if let Some(cb) = on_node.as_mut() {
            cb(k, &pi);
        }
        b_end = b_start;
    }
    pb_mid.gemm(1.0, &pi, &b_end, 0.0);
    gains[0] = gain_from(&pb_mid);
    Ok(BackwardSweep {
        initial: pi,
        gains,
        max_asymmetry,
    })
}

fn solve_impl<G: Generator + ?Sized>(
    op: &G,
    inputs: &InputHistory,
    weights: &LqrWeights,
    options: &RiccatiOptions,
    mut inspect: NodeCallback<'_>,
) -> Result<RiccatiSolution> {
    let n = op.dim();
    check_inputs(n, inputs, weights)?;
    let grid = *inputs.grid();
    let m = inputs.inputs();
    let r_inv = weights.control_inverse();
    let mut history = options
        .keep_history
        .then(|| vec![DMatrix::zeros(0, 0); grid.nodes()]);
    let wants_nodes = history.is_some() || inspect.is_some();

    let Some(modal) = op.modal() else {
        let mut rhs = GenericRhs {
            op,
            q: weights.state(),
            r_inv,
            work: OperatorWorkspace::new(n, n),
            x: DMatrix::zeros(n, n),
            pb: DMatrix::zeros(n, m),
            pbr: DMatrix::zeros(n, m),
        };
        let mut record = |k: usize, pi: &DMatrix<f64>| {
            if let Some(cb) = inspect.as_mut() {
                cb(k, pi);
            }
            if let Some(hist) = history.as_mut() {
                hist[k] = pi.clone();
            }
        };
        let sweep = backward_rk4(
            &grid,
            weights.terminal().clone(),
            &|s| inputs.sample(s).clone(),
            r_inv,
            &mut rhs,
            options.escape_ceiling,
            wants_nodes.then_some(&mut record as &mut dyn FnMut(usize, &DMatrix<f64>)),
        )?;
        return Ok(RiccatiSolution {
            grid,
            initial: sweep.initial,
            gains: GainSchedule {
                grid,
                gains: sweep.gains,
            },
            history,
            max_asymmetry: sweep.max_asymmetry,
        });
    };

    let mut q = modal.congruence(weights.state());
    symmetrize(&mut q);
    let mut terminal = modal.congruence(weights.terminal());
    symmetrize(&mut terminal);
    let mut rhs = ModalRhs {
        lambda: DVector::from_fn(n, |k, _| modal.eigenvalue(k)),
        q,
        r_inv,
        pb: DMatrix::zeros(n, m),
        pbr: DMatrix::zeros(n, m),
    };
    let to_original = |pi: &DMatrix<f64>| {
        let mut p = modal.inverse_congruence(pi);
        symmetrize(&mut p);
        p
    };
    let steps = grid.steps();
    let mut record = |k: usize, pi: &DMatrix<f64>| {
        // The terminal node is known exactly; skip the basis round trip.
        let p = if k == steps {
            weights.terminal().clone()
        } else {
            to_original(pi)
        };
        if let Some(cb) = inspect.as_mut() {
            cb(k, &p);
        }
        if let Some(hist) = history.as_mut() {
            hist[k] = p;
        }
    };
    let sweep = backward_rk4(
        &grid,
        terminal,
        &|s| modal.to_modal(inputs.sample(s)),
        r_inv,
        &mut rhs,
        options.escape_ceiling,
        wants_nodes.then_some(&mut record as &mut dyn FnMut(usize, &DMatrix<f64>)),
    )?;

    // K = G̃ W⁻¹, i.e. Kᵀ = W⁻ᵀ G̃ᵀ, for all samples in one batch
    let samples = sweep.gains.len();
    let mut stacked = DMatrix::zeros(n, m * samples);
    for (s, g) in sweep.gains.iter().enumerate() {
        stacked.columns_mut(s * m, m).copy_from(&g.transpose());
    }
    let mapped = modal.inverse_transpose_mul(&stacked);
    let gains = (0..samples)
        .map(|s| mapped.columns(s * m, m).transpose())
        .collect();

    Ok(RiccatiSolution {
        grid,
        initial: to_original(&sweep.initial),
        gains: GainSchedule { grid, gains },
        history,
        max_asymmetry: sweep.max_asymmetry,
    })
}

/// Optimal PDE cost `Z₀ᵀ Π(0) Z₀`.
pub fn pde_cost_via_riccati(z0: &DVector<f64>, sol: &RiccatiSolution) -> f64 {
    z0.dot(&(sol.initial() * z0))
}

/// Open-loop control samples on the half-step lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoopControl {
    grid: TimeGrid,
    samples: Vec<DVector<f64>>,
}

impl OpenLoopControl {
    pub fn from_samples(grid: TimeGrid, samples: Vec<DVector<f64>>) -> Result<Self> {
        if samples.len() != grid.half_samples() {
            return Err(Error::Dimension {
                context: "OpenLoopControl samples",
                expected: grid.half_samples(),
                actual: samples.len(),
            });
        }
        Ok(Self { grid, samples })
    }

    pub fn zeros(grid: TimeGrid, inputs: usize) -> Self {
        Self {
            grid,
            samples: vec![DVector::zeros(inputs); grid.half_samples()],
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn sample(&self, s: usize) -> &DVector<f64> {
        &self.samples[s]
    }

    pub fn samples(&self) -> &[DVector<f64>] {
        &self.samples
    }
}

#[derive(Debug, Clone, Copy)]
pub enum ControlLaw<'a> {
    None,
    Feedback(&'a GainSchedule),
    OpenLoop(&'a OpenLoopControl),
}

/// Forward simulation record.
#[derive(Debug, Clone)]
pub struct SimResult {
    grid: TimeGrid,
    states: DMatrix<f64>,
    controls: OpenLoopControl,
    running_cost: Vec<f64>,
    terminal_cost: f64,
    pde_cost: f64,
}

impl SimResult {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// `Z(t_k)` as columns.
    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    pub fn state(&self, k: usize) -> DVector<f64> {
        self.states.column(k).into_owned()
    }

    /// Applied control on the half-step lattice. Midpoint samples of a
    /// feedback loop are taken at a cubic Hermite estimate of `Z`, so replaying
    /// them open-loop reproduces the run to the integrator's accuracy.
    pub fn controls(&self) -> &OpenLoopControl {
        &self.controls
    }

    pub fn control_at_node(&self, k: usize) -> &DVector<f64> {
        self.controls.sample(2 * k)
    }

    /// `ZᵀQZ + uᵀRu` at every node.
    pub fn running_cost(&self) -> &[f64] {
        &self.running_cost
    }

    pub fn terminal_cost(&self) -> f64 {
        self.terminal_cost
    }

    /// Trapezoid integral of the running cost plus the terminal cost.
    pub fn pde_cost(&self) -> f64 {
        self.pde_cost
    }

    /// `‖Z(t_k)‖`, which equals the field's L² norm in an orthonormal basis.
    pub fn norm_history(&self) -> Vec<f64> {
        self.states.column_iter().map(|c| c.norm()).collect()
    }
}

/// RK4 forward integration of `Ż = AZ + B(t)u + w(t)`.
pub fn simulate<G: Generator + ?Sized>(
    op: &G,
    inputs: &InputHistory,
    weights: &LqrWeights,
    law: ControlLaw<'_>,
    forcing: Option<&ForcingHistory>,
    z0: &DVector<f64>,
) -> Result<SimResult> {
    let n = op.dim();
    check_inputs(n, inputs, weights)?;
    if z0.len() != n {
        return Err(Error::Dimension {
            context: "initial state",
            expected: n,
            actual: z0.len(),
        });
    }
    let grid = *inputs.grid();
    let m = inputs.inputs();
    if let Some(w) = forcing {
        if w.len() != grid.half_samples() || w.sample(0).len() != n {
            return Err(Error::Dimension {
                context: "forcing samples",
                expected: grid.half_samples(),
                actual: w.len(),
            });
        }
    }
    match law {
        ControlLaw::Feedback(g) if g.grid() != &grid || g.gain(0).shape() != (m, n) => {
            return Err(Error::invalid(
                "law",
                "gain schedule does not match the input history",
            ));
        }
        ControlLaw::OpenLoop(c) if c.grid() != &grid || c.sample(0).len() != m => {
            return Err(Error::invalid(
                "law",
                "open-loop control does not match the input history",
            ));
        }
        _ => {}
    }

    let h = grid.dt();
    let mut av = VectorApply::new(op);
    let mut rhs = |s: usize, z: &DVector<f64>, u: &DVector<f64>| -> DVector<f64> {
        let mut f = av.apply(z);
        f.gemv(1.0, inputs.sample(s), u, 1.0);
        if let Some(w) = forcing {
            f += w.sample(s);
        }
        f
    };
    let control = |s: usize, z: &DVector<f64>| -> DVector<f64> {
        match law {
            ControlLaw::None => DVector::zeros(m),
            ControlLaw::Feedback(g) => g.control(s, z),
            ControlLaw::OpenLoop(c) => c.sample(s).clone(),
        }
    };
    let q = weights.state();
    let r = weights.control();
    let stage_cost = |z: &DVector<f64>, u: &DVector<f64>| z.dot(&(q * z)) + u.dot(&(r * u));

    let mut states = DMatrix::zeros(n, grid.nodes());
    let mut u_samples = vec![DVector::zeros(m); grid.half_samples()];
    let mut running = vec![0.0; grid.nodes()];

    let mut z = z0.clone();
    let u = control(0, &z);
    let mut f = rhs(0, &z, &u);
    states.set_column(0, &z);
    running[0] = stage_cost(&z, &u);
    u_samples[0] = u;

    for k in 0..grid.steps() {
        let (s_mid, s_end) = (2 * k + 1, 2 * k + 2);
        let z2 = &z + &f * (0.5 * h);
        let f2 = rhs(s_mid, &z2, &control(s_mid, &z2));
        let z3 = &z + &f2 * (0.5 * h);
        let f3 = rhs(s_mid, &z3, &control(s_mid, &z3));
        let z4 = &z + &f3 * h;
        let f4 = rhs(s_end, &z4, &control(s_end, &z4));
        let z_new = &z + (&f + &f2 * 2.0 + &f3 * 2.0 + &f4) * (h / 6.0);

        let u_new = control(s_end, &z_new);
        let f_new = rhs(s_end, &z_new, &u_new);
        let z_mid = (&z + &z_new) * 0.5 + (&f - &f_new) * (h / 8.0);
        u_samples[s_mid] = control(s_mid, &z_mid);

        states.set_column(k + 1, &z_new);
        running[k + 1] = stage_cost(&z_new, &u_new);
        u_samples[s_end] = u_new;
        z = z_new;
        f = f_new;
    }

    let terminal_cost = z.dot(&(weights.terminal() * &z));
    let integral: f64 = running
        .iter()
        .enumerate()
        .map(|(k, l)| grid.trapezoid_weight(k) * l)
        .sum();
    Ok(SimResult {
        grid,
        states,
        controls: OpenLoopControl {
            grid,
            samples: u_samples,
        },
        running_cost: running,
        terminal_cost,
        pde_cost: integral + terminal_cost,
    })
}
