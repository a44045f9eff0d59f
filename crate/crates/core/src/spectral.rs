//! Spectral Galerkin discretization on Ω = [0, 1]².
//!
//! The basis is the tensor product of one-dimensional Laplacian eigenfunctions,
//! `φ_{i,j}(x, y) = X_i(x) X_j(y)`, with
//!
//! - Dirichlet: `X_i(x) = √2 sin(π i x)`, `i = 1..=N`;
//! - Neumann:   `X_0 = 1`, `X_i(x) = √2 cos(π i x)`, `i = 0..N`.
//!
//! Modes are flattened x-major: zero-based slot `(s_i, s_j)` maps to
//! `k = s_i·N + s_j`. For Dirichlet this is the 1-based `k = (i-1)N + j`
//! shifted to zero.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

use crate::quadrature::QuadratureRule;
use crate::{Error, Result};

/// Tolerance the quadrature rule must meet on the Gram matrix.
pub const ORTHONORMALITY_TOL: f64 = 1e-10;

/// Tolerance for deciding that a point lies in Ω.
const DOMAIN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
}

impl BoundaryCondition {
    /// Wavenumber of the zero-based axis slot.
    pub fn wavenumber(self, slot: usize) -> usize {
        match self {
            BoundaryCondition::Dirichlet => slot + 1,
            BoundaryCondition::Neumann => slot,
        }
    }

    /// Value of the normalized 1D eigenfunction in `slot` at `x`.
    pub fn axis_value(self, slot: usize, x: f64) -> f64 {
        let w = PI * self.wavenumber(slot) as f64;
        match self {
            BoundaryCondition::Dirichlet => SQRT_2 * (w * x).sin(),
            BoundaryCondition::Neumann if slot == 0 => 1.0,
            BoundaryCondition::Neumann => SQRT_2 * (w * x).cos(),
        }
    }

    pub fn axis_derivative(self, slot: usize, x: f64) -> f64 {
        let w = PI * self.wavenumber(slot) as f64;
        match self {
            BoundaryCondition::Dirichlet => SQRT_2 * w * (w * x).cos(),
            BoundaryCondition::Neumann if slot == 0 => 0.0,
            BoundaryCondition::Neumann => -SQRT_2 * w * (w * x).sin(),
        }
    }
}

impl std::fmt::Display for BoundaryCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundaryCondition::Dirichlet => f.write_str("dirichlet"),
            BoundaryCondition::Neumann => f.write_str("neumann"),
        }
    }
}

/// Galerkin coefficients `Z_N` of a field in a [`BasisSet`].
pub type CoefficientVector = DVector<f64>;

/// Gauss points per axis used when none is given: enough for the Gram check
/// to pass at 1e-10 for every `N ≤ 20` under both boundary conditions.
pub fn default_quadrature_order(modes_per_axis: usize) -> usize {
    2 * modes_per_axis + 12
}

/// Orthonormal eigenfunction basis with its quadrature rule.
#[derive(Debug, Clone)]
pub struct BasisSet {
    bc: BoundaryCondition,
    modes: usize,
    rule: QuadratureRule,
    /// `X_slot(x_q)` at the rule's axis nodes, `N × q`.
    axis_table: DMatrix<f64>,
    orthonormality_error: f64,
}

/// Build the `N²`-dimensional basis and certify it against `quad_order`
/// Gauss points per axis.
pub fn build_basis(bc: BoundaryCondition, modes: usize, quad_order: usize) -> Result<BasisSet> {
    if modes == 0 {
        return Err(Error::invalid("N", "need at least one mode per axis"));
    }
    let rule = QuadratureRule::unit_square(quad_order)?;
    let axis_table = DMatrix::from_fn(modes, rule.order(), |s, q| {
        bc.axis_value(s, rule.axis_nodes()[q])
    });
    let mut basis = BasisSet {
        bc,
        modes,
        rule,
        axis_table,
        orthonormality_error: f64::NAN,
    };
    let err = basis.gram_deviation();
    if !(err <= ORTHONORMALITY_TOL) {
        return Err(Error::QuadratureTooCoarse {
            order: quad_order,
            deviation: err,
        });
    }
    basis.orthonormality_error = err;
    Ok(basis)
}

impl BasisSet {
    /// Basis with [`default_quadrature_order`].
    pub fn new(bc: BoundaryCondition, modes: usize) -> Result<Self> {
        build_basis(bc, modes, default_quadrature_order(modes))
    }

    pub fn boundary(&self) -> BoundaryCondition {
        self.bc
    }

    /// Modes per axis `N`.
    pub fn modes_per_axis(&self) -> usize {
        self.modes
    }

    /// Total dimension `N²`.
    pub fn dim(&self) -> usize {
        self.modes * self.modes
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn orthonormality_error(&self) -> f64 {
        self.orthonormality_error
    }

    /// Flat index of the mode with wavenumbers `(i, j)`, if it is in the basis.
    pub fn flat_index(&self, i: usize, j: usize) -> Option<usize> {
        let slot = |w: usize| match self.bc {
            BoundaryCondition::Dirichlet if w >= 1 && w <= self.modes => Some(w - 1),
            BoundaryCondition::Neumann if w < self.modes => Some(w),
            _ => None,
        };
        Some(slot(i)? * self.modes + slot(j)?)
    }

    /// Wavenumbers `(i, j)` of flat index `k`.
    pub fn wavenumbers(&self, k: usize) -> (usize, usize) {
        let (si, sj) = (k / self.modes, k % self.modes);
        (self.bc.wavenumber(si), self.bc.wavenumber(sj))
    }

    /// Amplitude of `φ_k`: 2, √2 with one zero wavenumber, 1 for the constant.
    pub fn normalization(&self, k: usize) -> f64 {
        let (i, j) = self.wavenumbers(k);
        match self.bc {
            BoundaryCondition::Dirichlet => 2.0,
            BoundaryCondition::Neumann => match (i == 0, j == 0) {
                (true, true) => 1.0,
                (true, false) | (false, true) => SQRT_2,
                (false, false) => 2.0,
            },
        }
    }

    /// `−π²(i² + j²)`, the Laplacian eigenvalue of `φ_k`.
    pub fn laplacian_eigenvalue(&self, k: usize) -> f64 {
        let (i, j) = self.wavenumbers(k);
        -PI * PI * (i * i + j * j) as f64
    }

    pub fn axis_values(&self, x: f64) -> DVector<f64> {
        DVector::from_fn(self.modes, |s, _| self.bc.axis_value(s, x))
    }

    pub fn axis_derivatives(&self, x: f64) -> DVector<f64> {
        DVector::from_fn(self.modes, |s, _| self.bc.axis_derivative(s, x))
    }

    /// `φ_k(x, y)`.
    pub fn value(&self, k: usize, x: f64, y: f64) -> f64 {
        let (si, sj) = (k / self.modes, k % self.modes);
        self.bc.axis_value(si, x) * self.bc.axis_value(sj, y)
    }

    /// All basis functions at one point, in flat order.
    pub fn values_at(&self, x: f64, y: f64) -> DVector<f64> {
        let vx = self.axis_values(x);
        let vy = self.axis_values(y);
        kron(&vx, &vy)
    }

    /// `(∂φ_k/∂x, ∂φ_k/∂y)` for all `k` at one point.
    pub fn gradients_at(&self, x: f64, y: f64) -> (DVector<f64>, DVector<f64>) {
        let vx = self.axis_values(x);
        let vy = self.axis_values(y);
        let dx = self.axis_derivatives(x);
        let dy = self.axis_derivatives(y);
        (kron(&dx, &vy), kron(&vx, &dy))
    }

    /// 1D Gram matrix `∫ X_s X_t` under the axis rule.
    pub fn axis_gram(&self) -> DMatrix<f64> {
        let w = DMatrix::from_diagonal(&DVector::from_column_slice(self.rule.axis_weights()));
        &self.axis_table * w * self.axis_table.transpose()
    }

    /// Full `N² × N²` Gram matrix. The tensor rule factorizes, so entry
    /// `((i,j),(i',j'))` is `G₁[i,i']·G₁[j,j']`.
    pub fn gram(&self) -> DMatrix<f64> {
        let g1 = self.axis_gram();
        g1.kronecker(&g1)
    }

    fn gram_deviation(&self) -> f64 {
        let g1 = self.axis_gram();
        let n = self.modes;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for ii in 0..n {
                for j in 0..n {
                    for jj in 0..n {
                        let target = if i == ii && j == jj { 1.0 } else { 0.0 };
                        worst = worst.max((g1[(i, ii)] * g1[(j, jj)] - target).abs());
                    }
                }
            }
        }
        worst
    }
}

fn kron(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let nb = b.len();
    DVector::from_fn(a.len() * nb, |k, _| a[k / nb] * b[k % nb])
}

fn check_in_domain(x: f64, y: f64) -> Result<()> {
    let inside = |v: f64| (-DOMAIN_SLACK..=1.0 + DOMAIN_SLACK).contains(&v);
    if inside(x) && inside(y) {
        Ok(())
    } else {
        Err(Error::OutsideDomain { x, y })
    }
}

/// `P_N f`: coefficients `c_k = ∫_Ω f φ_k` by the basis quadrature rule.
pub fn project_field<F: Fn(f64, f64) -> f64>(f: F, basis: &BasisSet) -> CoefficientVector {
    let rule = basis.rule();
    let q = rule.order();
    let (nodes, weights) = (rule.axis_nodes(), rule.axis_weights());
    let samples = DMatrix::from_fn(q, q, |a, b| weights[a] * weights[b] * f(nodes[a], nodes[b]));
    // C[i, j] = Σ_ab X_i(x_a) F[a, b] X_j(y_b); k = i·N + j is the column-major
    // flattening of Cᵀ.
    let t = &basis.axis_table;
    let c = t * samples * t.transpose();
    let n = basis.modes_per_axis();
    DVector::from_fn(n * n, |k, _| c[(k / n, k % n)])
}

/// `Σ_k c_k φ_k(x, y)`.
pub fn evaluate_field(c: &CoefficientVector, basis: &BasisSet, x: f64, y: f64) -> Result<f64> {
    check_in_domain(x, y)?;
    if c.len() != basis.dim() {
        return Err(Error::Dimension {
            context: "evaluate_field",
            expected: basis.dim(),
            actual: c.len(),
        });
    }
    Ok(field_value_unchecked(c, basis, x, y))
}

pub(crate) fn field_value_unchecked(
    c: &CoefficientVector,
    basis: &BasisSet,
    x: f64,
    y: f64,
) -> f64 {
    let n = basis.modes_per_axis();
    let vx = basis.axis_values(x);
    let vy = basis.axis_values(y);
    let mut acc = 0.0;
    for i in 0..n {
        let row = c.rows(i * n, n).dot(&vy);
        acc += vx[i] * row;
    }
    acc
}

/// Galerkin matrix of `a∇² − v·∇` with its Kronecker factors.
///
/// `A = diag(−aπ²(i²+j²)) − v₁ (D ⊗ I) − v₂ (I ⊗ D)` where
/// `D[s, t] = ∫₀¹ X_s X_t'` comes from the axis quadrature. The identity
/// factors are the axis Gram matrices, which the basis certifies to 1e-10.
#[derive(Debug, Clone)]
pub struct GalerkinOperator {
    modes: usize,
    diffusivity: f64,
    velocity: [f64; 2],
    matrix: DMatrix<f64>,
    diffusion: DVector<f64>,
    /// `D` and `Dᵀ` for the fast `A X` and `Aᵀ X` paths.
    axis_advection: DMatrix<f64>,
    axis_advection_t: DMatrix<f64>,
    /// Row permutation swapping the roles of the x and y slots.
    swap: Vec<usize>,
    modal: Option<ModalFactors>,
}

/// Assemble `A_N` with entries `∫_Ω φ_k (a∇²φ_l − v·∇φ_l)`.
pub fn assemble_operator(
    basis: &BasisSet,
    diffusivity: f64,
    velocity: [f64; 2],
) -> Result<GalerkinOperator> {
    if !(diffusivity > 0.0 && diffusivity.is_finite()) {
        return Err(Error::invalid(
            "a",
            format!("diffusivity must be positive, got {diffusivity}"),
        ));
    }
    if !velocity.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("v", "velocity must be finite"));
    }
    let n = basis.modes_per_axis();
    let dim = n * n;
    let rule = basis.rule();
    let bc = basis.boundary();
    let deriv_table = DMatrix::from_fn(n, rule.order(), |s, q| {
        bc.axis_derivative(s, rule.axis_nodes()[q])
    });
    let w = DMatrix::from_diagonal(&DVector::from_column_slice(rule.axis_weights()));
    let d = &basis.axis_table * w * deriv_table.transpose();

    let diffusion = DVector::from_fn(dim, |k, _| diffusivity * basis.laplacian_eigenvalue(k));
    let [v1, v2] = velocity;
    let mut matrix = DMatrix::from_diagonal(&diffusion);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for t in 0..n {
                matrix[(row, t * n + j)] -= v1 * d[(i, t)];
                matrix[(row, i * n + t)] -= v2 * d[(j, t)];
            }
        }
    }
    let swap = (0..dim).map(|r| (r % n) * n + r / n).collect();
    let axis_diffusion = DVector::from_fn(n, |s, _| {
        let w = PI * bc.wavenumber(s) as f64;
        -diffusivity * w * w
    });
    let modal = match (
        AxisModes::new(DMatrix::from_diagonal(&axis_diffusion) - &d * v1),
        AxisModes::new(DMatrix::from_diagonal(&axis_diffusion) - &d * v2),
    ) {
        (Some(x), Some(y)) => Some(ModalFactors { x, y }),
        _ => None,
    };
    Ok(GalerkinOperator {
        modes: n,
        diffusivity,
        velocity,
        matrix,
        diffusion,
        axis_advection_t: d.transpose(),
        axis_advection: d,
        swap,
        modal,
    })
}

/// Real eigen-decomposition `F = V diag(λ) V⁻¹` of one axis factor.
#[derive(Debug, Clone)]
pub struct AxisModes {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
    pub inverse: DMatrix<f64>,
}

const MODAL_RESIDUAL_TOL: f64 = 1e-11;
const MODAL_CONDITION_MAX: f64 = 1e6;

impl AxisModes {
    /// `None` when the spectrum is complex or the eigenbasis is
    /// ill-conditioned.
    pub fn new(f: DMatrix<f64>) -> Option<Self> {
        let n = f.nrows();
        let values = f.clone().schur().eigenvalues()?;
        let scale = f.amax().max(1.0);
        let mut vectors = DMatrix::zeros(n, n);
        for (c, &lambda) in values.iter().enumerate() {
            let shifted = &f - DMatrix::identity(n, n) * lambda;
            let svd = shifted.svd(false, true);
            let v_t = svd.v_t?;
            let (idx, _) = svd
                .singular_values
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(b.1))?;
            let v = v_t.row(idx).transpose();
            vectors.set_column(c, &v);
        }
        let svals = vectors.clone().svd(false, false).singular_values;
        let (smax, smin) = (svals.max(), svals.min());
        if !(smin > 0.0) || smax / smin > MODAL_CONDITION_MAX {
            return None;
        }
        let inverse = vectors.clone().try_inverse()?;
        let rebuilt = &vectors * DMatrix::from_diagonal(&values) * &inverse;
        if (rebuilt - &f).amax() > MODAL_RESIDUAL_TOL * scale {
            return None;
        }
        Some(Self {
            values,
            vectors,
            inverse,
        })
    }
}

/// `A = F_x ⊗ I + I ⊗ F_y` diagonalized by `W = V_x ⊗ V_y`.
#[derive(Debug, Clone)]
pub struct ModalFactors {
    pub x: AxisModes,
    pub y: AxisModes,
}

impl ModalFactors {
    pub fn modes_per_axis(&self) -> usize {
        self.x.values.len()
    }

    /// Eigenvalue of `A` for flat index `k`.
    pub fn eigenvalue(&self, k: usize) -> f64 {
        let n = self.modes_per_axis();
        self.x.values[k / n] + self.y.values[k % n]
    }

    /// `(P ⊗ Q) X` for x-major flattening.
    pub fn kron_apply(p: &DMatrix<f64>, q: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
        let n = p.nrows();
        assert_eq!(x.nrows(), n * n);
        let cols = x.ncols();
        let p_t = p.transpose();
        let mut out = DMatrix::zeros(n * n, cols);
        let mut tmp = DMatrix::zeros(n, n);
        let src = x.as_slice();
        let dst = out.as_mut_slice();
        for c in 0..cols {
            // column c reshaped column-major: rows are the fast (y) slot
            let range = c * n * n..(c + 1) * n * n;
            let m = DMatrixView::from_slice(&src[range.clone()], n, n);
            tmp.gemm(1.0, q, &m, 0.0);
            let mut d = DMatrixViewMut::from_slice(&mut dst[range], n, n);
            d.gemm(1.0, &tmp, &p_t, 0.0);
        }
        out
    }

    /// `W⁻¹ X`.
    pub fn to_modal(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        Self::kron_apply(&self.x.inverse, &self.y.inverse, x)
    }

    /// `W X`.
    pub fn from_modal(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        Self::kron_apply(&self.x.vectors, &self.y.vectors, x)
    }

    /// `Wᵀ X`.
    pub fn transpose_mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        Self::kron_apply(&self.x.vectors.transpose(), &self.y.vectors.transpose(), x)
    }

    /// `W⁻ᵀ X`.
    pub fn inverse_transpose_mul(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        Self::kron_apply(&self.x.inverse.transpose(), &self.y.inverse.transpose(), x)
    }

    /// Congruence `Wᵀ M W` for symmetric `M`.
    pub fn congruence(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self.transpose_mul(m);
        self.transpose_mul(&y.transpose())
    }

    /// Inverse congruence `W⁻ᵀ M W⁻¹` for symmetric `M`.
    pub fn inverse_congruence(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self.inverse_transpose_mul(m);
        self.inverse_transpose_mul(&y.transpose())
    }
}

/// Scratch buffers for [`GalerkinOperator::mul_into`] and [`GalerkinOperator::transpose_mul_into`].
#[derive(Debug, Clone)]
pub struct OperatorWorkspace {
    permuted: DMatrix<f64>,
    product: DMatrix<f64>,
}

impl OperatorWorkspace {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            permuted: DMatrix::zeros(rows, cols),
            product: DMatrix::zeros(rows, cols),
        }
    }
}

impl GalerkinOperator {
    pub fn dim(&self) -> usize {
        self.modes * self.modes
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn diffusion_diagonal(&self) -> &DVector<f64> {
        &self.diffusion
    }

    pub fn diffusivity(&self) -> f64 {
        self.diffusivity
    }

    pub fn velocity(&self) -> [f64; 2] {
        self.velocity
    }

    /// Eigen-decomposition of the Kronecker-sum factors, when both axis
    /// operators have a real, well-conditioned eigenbasis.
    pub fn modal(&self) -> Option<&ModalFactors> {
        self.modal.as_ref()
    }

    /// `out = A X` using the Kronecker structure.
    pub fn mul_into(&self, x: &DMatrix<f64>, out: &mut DMatrix<f64>, work: &mut OperatorWorkspace) {
        self.kron_apply(&self.axis_advection, x, out, work);
    }

    /// `out = Aᵀ X` using the Kronecker structure: `O(N⁵)` instead of `O(N⁶)`
    /// for square `X`.
    pub fn transpose_mul_into(
        &self,
        x: &DMatrix<f64>,
        out: &mut DMatrix<f64>,
        work: &mut OperatorWorkspace,
    ) {
        self.kron_apply(&self.axis_advection_t, x, out, work);
    }

    fn kron_apply(
        &self,
        factor: &DMatrix<f64>,
        x: &DMatrix<f64>,
        out: &mut DMatrix<f64>,
        work: &mut OperatorWorkspace,
    ) {
        let n = self.modes;
        let dim = n * n;
        let cols = x.ncols();
        assert_eq!(x.nrows(), dim);
        assert_eq!(out.shape(), x.shape());
        assert_eq!(work.permuted.shape(), x.shape());
        let [v1, v2] = self.velocity;

        // diagonal part
        for c in 0..cols {
            let src = x.column(c);
            let mut dst = out.column_mut(c);
            for r in 0..dim {
                dst[r] = self.diffusion[r] * src[r];
            }
        }

        // y-advection: contract the fast (j) index
        {
            let xr = DMatrixView::from_slice(x.as_slice(), n, n * cols);
            let mut or = DMatrixViewMut::from_slice(out.as_mut_slice(), n, n * cols);
            or.gemm(-v2, factor, &xr, 1.0);
        }

        // x-advection: swap slots so i becomes the fast index, contract, swap back
        for c in 0..cols {
            let src = x.column(c);
            let mut dst = work.permuted.column_mut(c);
            for r in 0..dim {
                dst[self.swap[r]] = src[r];
            }
        }
        {
            let pr = DMatrixView::from_slice(work.permuted.as_slice(), n, n * cols);
            let mut qr = DMatrixViewMut::from_slice(work.product.as_mut_slice(), n, n * cols);
            qr.gemm(-v1, factor, &pr, 0.0);
        }
        for c in 0..cols {
            let src = work.product.column(c);
            let mut dst = out.column_mut(c);
            for r in 0..dim {
                dst[r] += src[self.swap[r]];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rejects_zero_modes_and_coarse_rules() {
        assert!(build_basis(BoundaryCondition::Dirichlet, 0, 10).is_err());
        let err = build_basis(BoundaryCondition::Dirichlet, 13, 17).unwrap_err();
        assert!(matches!(err, Error::QuadratureTooCoarse { order: 17, .. }));
    }

    #[test]
    fn dirichlet_trace_vanishes() {
        let b = BasisSet::new(BoundaryCondition::Dirichlet, 5).unwrap();
        for s in 0..=20 {
            let x = s as f64 / 20.0;
            assert!(b.value(0, x, 0.0).abs() < 1e-12);
            assert!(b.value(0, 0.0, x).abs() < 1e-12);
            for k in 0..b.dim() {
                assert!(b.value(k, x, 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn neumann_zero_mode_is_unit_constant() {
        let b = BasisSet::new(BoundaryCondition::Neumann, 1).unwrap();
        assert_eq!(b.dim(), 1);
        for (x, y) in [(0.0, 0.0), (0.3, 0.7), (1.0, 0.5)] {
            assert_eq!(b.value(0, x, y), 1.0);
        }
        assert_eq!(b.normalization(0), 1.0);
    }

    #[test]
    fn neumann_normal_derivative_vanishes() {
        let b = BasisSet::new(BoundaryCondition::Neumann, 6).unwrap();
        for s in 0..=10 {
            let t = s as f64 / 10.0;
            for edge in [0.0, 1.0] {
                let (gx, _) = b.gradients_at(edge, t);
                let (_, gy) = b.gradients_at(t, edge);
                assert!(gx.amax() < 1e-10);
                assert!(gy.amax() < 1e-10);
            }
        }
    }

    #[test]
    fn center_value_of_first_mode() {
        let b = BasisSet::new(BoundaryCondition::Dirichlet, 3).unwrap();
        assert_relative_eq!(b.value(0, 0.5, 0.5), 2.0, epsilon = 1e-15);
        assert_eq!(b.flat_index(1, 1), Some(0));
        assert_eq!(b.flat_index(1, 2), Some(1));
        assert_eq!(b.flat_index(2, 1), Some(3));
        assert_eq!(b.flat_index(0, 1), None);
        assert_eq!(b.wavenumbers(5), (2, 3));
    }

    #[test]
    fn operator_is_diagonal_without_flow() {
        let b = BasisSet::new(BoundaryCondition::Dirichlet, 4).unwrap();
        let op = assemble_operator(&b, 0.05, [0.0, 0.0]).unwrap();
        let a = op.matrix();
        assert_relative_eq!(a[(0, 0)], -0.1 * PI * PI, epsilon = 1e-14);
        let off: f64 = (0..16)
            .flat_map(|r| (0..16).map(move |c| (r, c)))
            .filter(|(r, c)| r != c)
            .map(|(r, c)| a[(r, c)].abs())
            .fold(0.0, f64::max);
        assert_eq!(off, 0.0);
    }

    #[test]
    fn rejects_nonpositive_diffusivity() {
        let b = BasisSet::new(BoundaryCondition::Dirichlet, 2).unwrap();
        assert!(assemble_operator(&b, 0.0, [0.0, 0.0]).is_err());
    }

    #[test]
    fn fast_products_match_dense() {
        for bc in [BoundaryCondition::Dirichlet, BoundaryCondition::Neumann] {
            let b = BasisSet::new(bc, 5).unwrap();
            let op = assemble_operator(&b, 0.05, [0.1, -0.3]).unwrap();
            let x = DMatrix::from_fn(25, 7, |r, c| ((r * 13 + c * 7) % 11) as f64 - 5.0);
            let mut out = DMatrix::zeros(25, 7);
            let mut work = OperatorWorkspace::new(25, 7);
            op.transpose_mul_into(&x, &mut out, &mut work);
            let dense = op.matrix().transpose() * &x;
            assert!((&out - dense).amax() < 1e-12);
            op.mul_into(&x, &mut out, &mut work);
            let dense = op.matrix() * &x;
            assert!((&out - dense).amax() < 1e-12);
        }
    }

    #[test]
    fn modal_factors_diagonalize_operator() {
        for bc in [BoundaryCondition::Dirichlet, BoundaryCondition::Neumann] {
            let b = BasisSet::new(bc, 5).unwrap();
            let op = assemble_operator(&b, 0.05, [0.1, -0.1]).unwrap();
            let modal = op.modal().expect("real spectrum");
            let w = modal.from_modal(&DMatrix::identity(25, 25));
            let w_inv = modal.to_modal(&DMatrix::identity(25, 25));
            let lam = DMatrix::from_fn(
                25,
                25,
                |r, c| if r == c { modal.eigenvalue(r) } else { 0.0 },
            );
            assert!((&w * lam * &w_inv - op.matrix()).amax() < 1e-11);
            let m = DMatrix::from_fn(25, 25, |r, c| (r + c) as f64);
            assert!((modal.congruence(&m) - w.transpose() * &m * &w).amax() < 1e-10);
            assert!(
                (modal.inverse_congruence(&m) - w_inv.transpose() * &m * &w_inv).amax() < 1e-10
            );
        }
    }

    #[test]
    fn zero_field_projects_to_zero() {
        let b = BasisSet::new(BoundaryCondition::Neumann, 4).unwrap();
        let c = project_field(|_, _| 0.0, &b);
        assert_eq!(c.amax(), 0.0);
        assert_eq!(evaluate_field(&c, &b, 0.2, 0.9).unwrap(), 0.0);
    }

    #[test]
    fn evaluation_rejects_points_outside() {
        let b = BasisSet::new(BoundaryCondition::Dirichlet, 2).unwrap();
        let c = DVector::zeros(4);
        assert!(matches!(
            evaluate_field(&c, &b, 1.2, 0.5),
            Err(Error::OutsideDomain { .. })
        ));
        assert!(evaluate_field(&c, &b, 0.5, -0.01).is_err());
    }

    #[test]
    fn single_mode_evaluation() {
        let b = BasisSet::new(BoundaryCondition::Dirichlet, 3).unwrap();
        let mut c = DVector::zeros(9);
        c[b.flat_index(1, 1).unwrap()] = 1.0;
        assert_relative_eq!(
            evaluate_field(&c, &b, 0.5, 0.5).unwrap(),
            2.0,
            epsilon = 1e-14
        );
    }
}
