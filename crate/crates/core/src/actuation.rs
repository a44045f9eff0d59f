//! Truncated Gaussian actuation and its Galerkin projection.
//!
//! Each actuator dispenses
//!
//! ```text
//! b(x, y) = exp(−(x−x_c)²/σ² − (y−y_c)²/σ²) / (2πσ²)   on |x−x_c| ≤ σ, |y−y_c| ≤ σ
//! ```
//!
//! and zero elsewhere. Both the kernel and the basis are separable, so the
//! projection onto `φ_{i,j}` is a product of two 1D integrals over the
//! σ-interval clipped to [0, 1], each done with a local Gauss rule.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::exec::Exec;
use crate::fleet::{FleetDynamics, TrajectoryProfile};
use crate::grid::TimeGrid;
use crate::quadrature::GaussLegendre;
use crate::spectral::{BasisSet, BoundaryCondition, CoefficientVector};
use crate::{Error, Result};

/// Gauss points per axis over the kernel support.
pub const DEFAULT_LOCAL_ORDER: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
    center: [f64; 2],
}

impl GaussianKernel {
    pub fn new(sigma: f64, center: [f64; 2]) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self { sigma, center })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn center(&self) -> [f64; 2] {
        self.center
    }

    pub fn peak(&self) -> f64 {
        1.0 / (2.0 * PI * self.sigma * self.sigma)
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        kernel_eval(self, x, y)
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(
            "sigma",
            format!("kernel width must be positive, got {sigma}"),
        ))
    }
}

/// Truncated Gaussian value; exactly zero outside the σ-box.
pub fn kernel_eval(k: &GaussianKernel, x: f64, y: f64) -> f64 {
    let dx = x - k.center[0];
    let dy = y - k.center[1];
    if dx.abs() > k.sigma || dy.abs() > k.sigma {
        return 0.0;
    }
    let s2 = k.sigma * k.sigma;
    k.peak() * (-(dx * dx) / s2 - (dy * dy) / s2).exp()
}

/// Projects kernels onto a basis with a local Gauss rule over the support.
#[derive(Debug, Clone)]
pub struct KernelProjector<'a> {
    basis: &'a BasisSet,
    local: GaussLegendre,
}

/// 1D factors `F_s(c) = ∫ exp(−(x−c)²/σ²) X_s(x) dx` over `[c−σ, c+σ] ∩ [0, 1]`
/// and their exact derivatives in `c`.
struct AxisFactors {
    values: DVector<f64>,
    derivs: DVector<f64>,
}

impl<'a> KernelProjector<'a> {
    pub fn new(basis: &'a BasisSet) -> Self {
        Self::with_order(basis, DEFAULT_LOCAL_ORDER).expect("default order is positive")
    }

    pub fn with_order(basis: &'a BasisSet, order: usize) -> Result<Self> {
        Ok(Self {
            basis,
            local: GaussLegendre::new(order)?,
        })
    }

    pub fn basis(&self) -> &BasisSet {
        self.basis
    }

    fn axis_factors(&self, sigma: f64, c: f64, with_derivs: bool) -> AxisFactors {
        let n = self.basis.modes_per_axis();
        let bc: BoundaryCondition = self.basis.boundary();
        let mut values = DVector::zeros(n);
        let mut derivs = DVector::zeros(n);
        let lo = (c - sigma).max(0.0);
        let hi = (c + sigma).min(1.0);
        if hi <= lo {
            return AxisFactors { values, derivs };
        }
        let s2 = sigma * sigma;
        for (x, w) in self.local.mapped(lo, hi) {
            let d = x - c;
            let g = (-(d * d) / s2).exp();
            let wv = w * g;
            let wd = w * g * 2.0 * d / s2;
            for s in 0..n {
                let xs = bc.axis_value(s, x);
                values[s] += wv * xs;
                if with_derivs {
                    derivs[s] += wd * xs;
                }
            }
        }
        if with_derivs {
            // Leibniz terms: an interval end moves with c unless it is clipped
            // by the domain.
            let edge = (-1.0f64).exp();
            if c + sigma < 1.0 {
                for s in 0..n {
                    derivs[s] += edge * bc.axis_value(s, c + sigma);
                }
            }
            if c - sigma > 0.0 {
                for s in 0..n {
                    derivs[s] -= edge * bc.axis_value(s, c - sigma);
                }
            }
        }
        AxisFactors { values, derivs }
    }

    /// Galerkin column `∫ b φ_k` of one kernel.
    pub fn column(&self, kernel: &GaussianKernel) -> CoefficientVector {
        let fx = self.axis_factors(kernel.sigma, kernel.center[0], false);
        let fy = self.axis_factors(kernel.sigma, kernel.center[1], false);
        outer_flat(kernel.peak(), &fx.values, &fy.values)
    }

    /// Column together with its derivatives in the kernel center.
    pub fn column_with_gradient(
        &self,
        kernel: &GaussianKernel,
    ) -> (CoefficientVector, CoefficientVector, CoefficientVector) {
        let fx = self.axis_factors(kernel.sigma, kernel.center[0], true);
        let fy = self.axis_factors(kernel.sigma, kernel.center[1], true);
        let peak = kernel.peak();
        (
            outer_flat(peak, &fx.values, &fy.values),
            outer_flat(peak, &fx.derivs, &fy.values),
            outer_flat(peak, &fx.values, &fy.derivs),
        )
    }
}

fn outer_flat(scale: f64, fx: &DVector<f64>, fy: &DVector<f64>) -> DVector<f64> {
    let n = fy.len();
    DVector::from_fn(fx.len() * n, |k, _| scale * fx[k / n] * fy[k % n])
}

/// Input matrix `B_N` at one instant: column `i` is actuator `i`'s projected kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct InputMatrix {
    pub matrix: DMatrix<f64>,
    pub positions: Vec<[f64; 2]>,
}

pub fn project_input(
    positions: &[[f64; 2]],
    sigmas: &[f64],
    basis: &BasisSet,
) -> Result<InputMatrix> {
    if positions.len() != sigmas.len() {
        return Err(Error::Dimension {
            context: "project_input sigmas",
            expected: positions.len(),
            actual: sigmas.len(),
        });
    }
    let proj = KernelProjector::new(basis);
    let mut matrix = DMatrix::zeros(basis.dim(), positions.len());
    for (i, (&p, &s)) in positions.iter().zip(sigmas).enumerate() {
        let col = proj.column(&GaussianKernel::new(s, p)?);
        matrix.set_column(i, &col);
    }
    Ok(InputMatrix {
        matrix,
        positions: positions.to_vec(),
    })
}

/// `(∂B_N/∂x_c, ∂B_N/∂y_c)` for one actuator column.
pub fn input_location_gradient(
    position: [f64; 2],
    sigma: f64,
    basis: &BasisSet,
) -> Result<(CoefficientVector, CoefficientVector)> {
    let proj = KernelProjector::new(basis);
    let (_, gx, gy) = proj.column_with_gradient(&GaussianKernel::new(sigma, position)?);
    Ok((gx, gy))
}

/// `B_N` and its location gradients on the half-step lattice of a grid.
///
/// Nodal samples are projected at the trajectory's positions; midpoint
/// samples are the average of the neighbouring nodes.
#[derive(Debug, Clone)]
pub struct InputHistory {
    grid: TimeGrid,
    samples: Vec<DMatrix<f64>>,
    grad_x: Vec<DMatrix<f64>>,
    grad_y: Vec<DMatrix<f64>>,
}

impl InputHistory {
    pub fn from_trajectory(
        basis: &BasisSet,
        fleet: &FleetDynamics,
        sigmas: &[f64],
        trajectory: &TrajectoryProfile,
        exec: Exec,
    ) -> Result<Self> {
        if sigmas.len() != fleet.count() {
            return Err(Error::Dimension {
                context: "InputHistory sigmas",
                expected: fleet.count(),
                actual: sigmas.len(),
            });
        }
        for &s in sigmas {
            check_sigma(s)?;
        }
        let grid = *trajectory.grid();
        let proj = KernelProjector::new(basis);
        let dim = basis.dim();
        let m = fleet.count();
        let nodal = exec.map(grid.nodes(), |k| {
            let positions = fleet.positions(&trajectory.state(k));
            let mut b = DMatrix::zeros(dim, m);
            let mut gx = DMatrix::zeros(dim, m);
            let mut gy = DMatrix::zeros(dim, m);
            for (i, &p) in positions.iter().enumerate() {
                let kernel = GaussianKernel {
                    sigma: sigmas[i],
                    center: p,
                };
                let (c, dx, dy) = proj.column_with_gradient(&kernel);
                b.set_column(i, &c);
                gx.set_column(i, &dx);
                gy.set_column(i, &dy);
            }
            (b, gx, gy)
        });
        let mut samples = Vec::with_capacity(grid.half_samples());
        let mut grad_x = Vec::with_capacity(grid.half_samples());
        let mut grad_y = Vec::with_capacity(grid.half_samples());
        for k in 0..grid.nodes() {
            if k > 0 {
                let (b0, x0, y0) = &nodal[k - 1];
                let (b1, x1, y1) = &nodal[k];
                samples.push((b0 + b1) * 0.5);
                grad_x.push((x0 + x1) * 0.5);
                grad_y.push((y0 + y1) * 0.5);
            }
            let (b, gx, gy) = &nodal[k];
            samples.push(b.clone());
            grad_x.push(gx.clone());
            grad_y.push(gy.clone());
        }
        Ok(Self {
            grid,
            samples,
            grad_x,
            grad_y,
        })
    }

    /// Time-invariant input (location gradients set to zero).
    pub fn constant(grid: TimeGrid, b: DMatrix<f64>) -> Self {
        let zeros = DMatrix::zeros(b.nrows(), b.ncols());
        Self {
            grid,
            samples: vec![b; grid.half_samples()],
            grad_x: vec![zeros.clone(); grid.half_samples()],
            grad_y: vec![zeros; grid.half_samples()],
        }
    }

    /// Arbitrary half-step samples; gradients are zero.
    pub fn from_samples(grid: TimeGrid, samples: Vec<DMatrix<f64>>) -> Result<Self> {
        if samples.len() != grid.half_samples() {
            return Err(Error::Dimension {
                context: "InputHistory samples",
                expected: grid.half_samples(),
                actual: samples.len(),
            });
        }
        let zeros = DMatrix::zeros(samples[0].nrows(), samples[0].ncols());
        Ok(Self {
            grid,
            grad_x: vec![zeros.clone(); samples.len()],
            grad_y: vec![zeros; samples.len()],
            samples,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn state_dim(&self) -> usize {
        self.samples[0].nrows()
    }

    pub fn inputs(&self) -> usize {
        self.samples[0].ncols()
    }

    /// `B_N` at half-step sample `s`.
    pub fn sample(&self, s: usize) -> &DMatrix<f64> {
        &self.samples[s]
    }

    pub fn node(&self, k: usize) -> &DMatrix<f64> {
        &self.samples[2 * k]
    }

    pub fn gradient_x(&self, s: usize) -> &DMatrix<f64> {
        &self.grad_x[s]
    }

    pub fn gradient_y(&self, s: usize) -> &DMatrix<f64> {
        &self.grad_y[s]
    }
}

/// Circular path `x_d(t) = c + r·(sin 2πft, cos 2πft)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircularPath {
    pub center: [f64; 2],
    pub radius: f64,
    pub frequency: f64,
}

impl CircularPath {
    pub fn position(&self, t: f64) -> [f64; 2] {
        let phase = 2.0 * PI * self.frequency * t;
        [
            self.center[0] + self.radius * phase.sin(),
            self.center[1] + self.radius * phase.cos(),
        ]
    }
}

/// Mobile disturbance `amplitude · b(x_d(t))` added to the PDE right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceModel {
    pub amplitude: f64,
    pub sigma: f64,
    pub path: CircularPath,
}

impl Default for DisturbanceModel {
    fn default() -> Self {
        Self {
            amplitude: 0.5,
            sigma: 0.05,
            path: CircularPath {
                center: [0.5, 0.5],
                radius: 0.3,
                frequency: 1.0,
            },
        }
    }
}

impl DisturbanceModel {
    pub fn position(&self, t: f64) -> [f64; 2] {
        self.path.position(t)
    }

    pub fn forcing(&self, projector: &KernelProjector<'_>, t: f64) -> Result<CoefficientVector> {
        let kernel = GaussianKernel::new(self.sigma, self.position(t))?;
        Ok(projector.column(&kernel) * self.amplitude)
    }

    pub fn history(&self, basis: &BasisSet, grid: &TimeGrid, exec: Exec) -> Result<ForcingHistory> {
        check_sigma(self.sigma)?;
        let proj = KernelProjector::new(basis);
        let samples = exec.try_map(grid.half_samples(), |s| {
            self.forcing(&proj, grid.half_time(s))
        })?;
        Ok(ForcingHistory { samples })
    }
}

/// Additive forcing in coefficient space on the half-step lattice.
#[derive(Debug, Clone)]
pub struct ForcingHistory {
    samples: Vec<CoefficientVector>,
}

impl ForcingHistory {
    pub fn from_samples(samples: Vec<CoefficientVector>) -> Self {
        Self { samples }
    }

    pub fn sample(&self, s: usize) -> &CoefficientVector {
        &self.samples[s]
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}
