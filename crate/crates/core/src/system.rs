//! Domain model for the boundary value problem on the half line:
//! block signature `B = diag(B1, -B2)`, boundary matrix `H` with
//! `B1 = H* B2 H`, and the off-diagonal Hermitian potential `Q`.
//!
//! All types are immutable after construction and validate their structural
//! invariants when built. Operations are pure; everything is safe to share
//! across threads.

use crate::cmat::{CMat, LinalgError, ONE_C, ZERO_C};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative tolerance for the self-adjointness condition `B1 = H* B2 H`.
pub const EPS_BC: f64 = 1e-10;
/// Absolute per-entry tolerance for Hermiticity of inputs.
pub const EPS_HERM: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("boundary condition violated: |B1 - H*B2H|/|B1| = {residual:.3e} > {tol:.3e}")]
    BoundaryCondition { residual: f64, tol: f64 },
    #[error("boundary matrix H is singular")]
    SingularBoundary,
    #[error("potential sample {index} has nonzero diagonal block (magnitude {magnitude:.3e})")]
    DiagonalBlock { index: usize, magnitude: f64 },
    #[error("potential sample {index} is not Hermitian (residual {residual:.3e})")]
    NonHermitianSample { index: usize, residual: f64 },
    #[error("potential grid must be strictly increasing and start at 0")]
    BadPotentialGrid,
    #[error("potential sample {index} has dimension {actual}, expected {expected}")]
    SampleDimension {
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error(
        "potential undefined at x = {requested:.6}: sampled range ends at {available:.6}; \
         extend the sample grid to at least {requested:.6}"
    )]
    PotentialRange { requested: f64, available: f64 },
}

/// Continuity class of a potential; tracked as metadata only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SmoothnessClass {
    #[default]
    C0,
    C1,
    Smooth,
}

/// The pair of Hermitian positive-definite blocks `B1`, `B2` defining
/// `B = diag(B1, -B2)`, together with cached spectral data used for the
/// matrix exponentials `exp(i lambda B1^-1 x)`.
#[derive(Debug, Clone)]
pub struct BlockSignature {
    n: usize,
    b1: CMat,
    b2: CMat,
    b1_eigvals: Vec<f64>,
    b1_eigvecs: CMat,
    b2_eigvals: Vec<f64>,
    b2_eigvecs: CMat,
    b1_inv: CMat,
    b2_inv: CMat,
}

impl BlockSignature {
    pub fn new(b1: CMat, b2: CMat) -> Result<Self, SystemError> {
        let n = b1.rows();
        if !b1.is_square() || !b2.is_square() || b2.rows() != n || n == 0 {
            return Err(LinalgError::DimensionMismatch {
                context: "block_signature",
                expected: format!("two square {n}x{n} matrices"),
                actual: format!("{}x{} and {}x{}", b1.rows(), b1.cols(), b2.rows(), b2.cols()),
            }
            .into());
        }
        for (name, m) in [("B1", &b1), ("B2", &b2)] {
            let r = m.hermitian_residual();
            if r > EPS_HERM {
                return Err(LinalgError::NotHermitian {
                    name,
                    residual: r,
                    tol: EPS_HERM,
                }
                .into());
            }
            m.cholesky(name)?;
        }
        let b1 = b1.hermitize();
        let b2 = b2.hermitize();
        let (d1, v1) = b1.hermitian_eig()?;
        let (d2, v2) = b2.hermitian_eig()?;
        let b1_inv = b1.inverse()?;
        let b2_inv = b2.inverse()?;
        Ok(BlockSignature {
            n,
            b1,
            b2,
            b1_eigvals: d1,
            b1_eigvecs: v1,
            b2_eigvals: d2,
            b2_eigvecs: v2,
            b1_inv,
            b2_inv,
        })
    }

    /// Scalar Dirac signature: B1 = B2 = I_n.
    pub fn dirac(n: usize) -> Self {
        Self::new(CMat::identity(n), CMat::identity(n)).expect("identity blocks are valid")
    }

    /// Scalar blocks b1*I, b2*I (the r = 2 normal form).
    pub fn scalar(n: usize, b1: f64, b2: f64) -> Result<Self, SystemError> {
        Self::new(
            CMat::scalar(n, Complex64::new(b1, 0.0)),
            CMat::scalar(n, Complex64::new(b2, 0.0)),
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        2 * self.n
    }

    pub fn b1(&self) -> &CMat {
        &self.b1
    }

    pub fn b2(&self) -> &CMat {
        &self.b2
    }

    pub fn b1_inv(&self) -> &CMat {
        &self.b1_inv
    }

    pub fn b2_inv(&self) -> &CMat {
        &self.b2_inv
    }

    /// The 2n x 2n matrix B = diag(B1, -B2).
    pub fn b_full(&self) -> CMat {
        let mut b = CMat::zeros(2 * self.n, 2 * self.n);
        b.set_block(0, 0, &self.b1);
        b.set_block(self.n, self.n, &self.b2.scale(-ONE_C));
        b
    }

    /// B^-1 = diag(B1^-1, -B2^-1).
    pub fn b_inv_full(&self) -> CMat {
        let mut b = CMat::zeros(2 * self.n, 2 * self.n);
        b.set_block(0, 0, &self.b1_inv);
        b.set_block(self.n, self.n, &self.b2_inv.scale(-ONE_C));
        b
    }

    /// Slope of the free spectral function: B1^-1 / (2 pi).
    pub fn sigma0_slope(&self) -> CMat {
        self.b1_inv
            .scale(Complex64::new(1.0 / (2.0 * std::f64::consts::PI), 0.0))
    }

    /// exp(i. lambda B1^-1 x), from the cached eigendecomposition.
    pub fn exp_b1(&self, lambda: f64, x: f64) -> CMat {
        unitary_exp(&self.b1_eigvals, &self.b1_eigvecs, lambda * x)
    }

    /// exp(-i lambda B2^-1 x).
    pub fn exp_b2_neg(&self, lambda: f64, x: f64) -> CMat {
        unitary_exp(&self.b2_eigvals, &self.b2_eigvecs, -lambda * x)
    }

    /// Returns (b1, b2) when B1 = b1*I and B2 = b2*I, the r = 2 normal form
    /// required by the characteristic-based kernel solver.
    pub fn scalar_blocks(&self) -> Option<(f64, f64)> {
        let tol = 1e-12;
        let is_scalar = |m: &CMat| -> Option<f64> {
            let v = m[(0, 0)];
            if v.im.abs() > tol {
                return None;
            }
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    let want = if i == j { v } else { ZERO_C };
                    if (m[(i, j)] - want).norm() > tol * v.norm().max(1.0) {
                        return None;
                    }
                }
            }
            Some(v.re)
        };
        Some((is_scalar(&self.b1)?, is_scalar(&self.b2)?))
    }

    /// Smallest eigenvalue over both blocks; sets the fastest oscillatory
    /// phase exp(i lambda x / eig_min) seen by quadratures.
    pub fn min_block_eigenvalue(&self) -> f64 {
        self.b1_eigvals
            .iter()
            .chain(self.b2_eigvals.iter())
            .fold(f64::INFINITY, |m, &x| m.min(x))
    }
}

/// V exp(i t / d_k) V* for a Hermitian matrix with eigendata (d, V).
fn unitary_exp(d: &[f64], v: &CMat, t: f64) -> CMat {
    let n = d.len();
    let mut out = CMat::zeros(n, n);
    let phases: Vec<Complex64> = d
        .iter()
        .map(|&dk| Complex64::from_polar(1.0, t / dk))
        .collect();
    for i in 0..n {
        for j in 0..n {
            let mut s = ZERO_C;
            for (k, &ph) in phases.iter().enumerate() {
                s += v[(i, k)] * ph * v[(j, k)].conj();
            }
            out[(i, j)] = s;
        }
    }
    out
}

/// Report from checking the self-adjointness condition.
#[derive(Debug, Clone, Serialize)]
pub struct BcReport {
    pub valid: bool,
    pub residual: f64,
    pub h_condition: Option<f64>,
}

/// Checks whether `H` is invertible and `|B1 - H* B2 H| / |B1| <= EPS_BC`.
/// Dimension mismatches and non-Hermitian blocks are structured errors; an
/// out-of-tolerance residual is reported, not an error.
pub fn validate_bc(b1: &CMat, b2: &CMat, h: &CMat) -> Result<BcReport, SystemError> {
    let n = b1.rows();
    if !b1.is_square() || !b2.is_square() || !h.is_square() || b2.rows() != n || h.rows() != n {
        return Err(LinalgError::DimensionMismatch {
            context: "validate_bc",
            expected: format!("three {n}x{n} matrices"),
            actual: format!(
                "B1 {}x{}, B2 {}x{}, H {}x{}",
                b1.rows(),
                b1.cols(),
                b2.rows(),
                b2.cols(),
                h.rows(),
                h.cols()
            ),
        }
        .into());
    }
    for (name, m) in [("B1", b1), ("B2", b2)] {
        let r = m.hermitian_residual();
        if r > EPS_HERM {
            return Err(LinalgError::NotHermitian {
                name,
                residual: r,
                tol: EPS_HERM,
            }
            .into());
        }
    }
    let diff = b1.sub(&h.adjoint().matmul(b2).matmul(h));
    let residual = diff.frob_norm() / b1.frob_norm();
    let h_condition = match h.lu() {
        Ok(lu) => Some(lu.condition_1(h)?),
        Err(_) => None,
    };
    Ok(BcReport {
        valid: h_condition.is_some() && residual <= EPS_BC,
        residual,
        h_condition,
    })
}

/// Splits a 2n x 2n matrix into its four n x n blocks (M11, M12, M21, M22).
pub fn block_decompose(m: &CMat) -> Result<(CMat, CMat, CMat, CMat), SystemError> {
    if !m.is_square() || m.rows() % 2 != 0 {
        return Err(LinalgError::OddDimension { dim: m.rows() }.into());
    }
    let n = m.rows() / 2;
    Ok((
        m.block(0, 0, n, n),
        m.block(0, n, n, n),
        m.block(n, 0, n, n),
        m.block(n, n, n, n),
    ))
}

/// Reassembles four n x n blocks into a 2n x 2n matrix.
pub fn block_assemble(m11: &CMat, m12: &CMat, m21: &CMat, m22: &CMat) -> CMat {
    let n = m11.rows();
    let mut m = CMat::zeros(2 * n, 2 * n);
    m.set_block(0, 0, m11);
    m.set_block(0, n, m12);
    m.set_block(n, 0, m21);
    m.set_block(n, n, m22);
    m
}

/// The invertible matrix `H` in the boundary condition `f2(0) = H f1(0)`.
#[derive(Debug, Clone)]
pub struct BoundaryMatrix {
    h: CMat,
    h_adjoint: CMat,
    condition: f64,
    bc_residual: f64,
}

impl BoundaryMatrix {
    pub fn new(h: CMat, sig: &BlockSignature) -> Result<Self, SystemError> {
        let report = validate_bc(sig.b1(), sig.b2(), &h)?;
        let condition = report.h_condition.ok_or(SystemError::SingularBoundary)?;
        if report.residual > EPS_BC {
            return Err(SystemError::BoundaryCondition {
                residual: report.residual,
                tol: EPS_BC,
            });
        }
        let h_adjoint = h.adjoint();
        Ok(BoundaryMatrix {
            h,
            h_adjoint,
            condition,
            bc_residual: report.residual,
        })
    }

    pub fn identity(n: usize) -> Self {
        let sig = BlockSignature::dirac(n);
        Self::new(CMat::identity(n), &sig).expect("identity is a valid boundary matrix")
    }

    pub fn h(&self) -> &CMat {
        &self.h
    }

    pub fn h_adjoint(&self) -> &CMat {
        &self.h_adjoint
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn bc_residual(&self) -> f64 {
        self.bc_residual
    }

    /// The stacked 2n x n initial-value matrix (I over H).
    pub fn stacked(&self) -> CMat {
        let n = self.h.rows();
        let mut m = CMat::zeros(2 * n, n);
        m.set_block(0, 0, &CMat::identity(n));
        m.set_block(n, 0, &self.h);
        m
    }
}

/// A potential given by Hermitian off-diagonal samples on a grid, evaluated
/// off-grid by piecewise-linear interpolation.
#[derive(Debug, Clone)]
pub struct SampledPotential {
    xs: Vec<f64>,
    mats: Vec<CMat>,
    presym_residual: f64,
    diag_residual: f64,
    pub smoothness: SmoothnessClass,
}

impl SampledPotential {
    /// Validates Hermiticity and the off-diagonal block structure, then
    /// symmetrizes `Q <- (Q + Q*)/2` and zeroes the diagonal blocks. The
    /// pre-symmetrization residuals are kept for reporting.
    pub fn new(n: usize, xs: Vec<f64>, mats: Vec<CMat>) -> Result<Self, SystemError> {
        if xs.is_empty() || xs[0] != 0.0 || xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SystemError::BadPotentialGrid);
        }
        if xs.len() != mats.len() {
            return Err(LinalgError::DimensionMismatch {
                context: "sampled_potential",
                expected: format!("{} matrices", xs.len()),
                actual: format!("{}", mats.len()),
            }
            .into());
        }
        let dim = 2 * n;
        let mut presym = 0.0f64;
        let mut diag = 0.0f64;
        let mut clean = Vec::with_capacity(mats.len());
        for (index, q) in mats.into_iter().enumerate() {
            if q.rows() != dim || q.cols() != dim {
                return Err(SystemError::SampleDimension {
                    index,
                    expected: dim,
                    actual: q.rows(),
                });
            }
            let r = q.hermitian_residual();
            if r > EPS_HERM {
                return Err(SystemError::NonHermitianSample {
                    index,
                    residual: r,
                });
            }
            presym = presym.max(r);
            let mut q = q.hermitize();
            let mut dmax = 0.0f64;
            for bi in [0, n] {
                for i in 0..n {
                    for j in 0..n {
                        dmax = dmax.max(q[(bi + i, bi + j)].norm());
                    }
                }
            }
            if dmax > EPS_HERM {
                return Err(SystemError::DiagonalBlock {
                    index,
                    magnitude: dmax,
                });
            }
            diag = diag.max(dmax);
            for bi in [0, n] {
                for i in 0..n {
                    for j in 0..n {
                        q[(bi + i, bi + j)] = ZERO_C;
                    }
                }
            }
            clean.push(q);
        }
        Ok(SampledPotential {
            xs,
            mats: clean,
            presym_residual: presym,
            diag_residual: diag,
            smoothness: SmoothnessClass::C0,
        })
    }

    /// Same validation but with caller-specified residual tolerances; used by
    /// the inverse solver whose raw output carries discretization-level
    /// asymmetry rather than input rounding noise.
    pub fn from_reconstruction(
        n: usize,
        xs: Vec<f64>,
        mats: Vec<CMat>,
        tol: f64,
    ) -> Result<(Self, f64, f64), SystemError> {
        let dim = 2 * n;
        let mut presym = 0.0f64;
        let mut diag = 0.0f64;
        let mut clean = Vec::with_capacity(mats.len());
        for (index, q) in mats.into_iter().enumerate() {
            if q.rows() != dim || q.cols() != dim {
                return Err(SystemError::SampleDimension {
                    index,
                    expected: dim,
                    actual: q.rows(),
                });
            }
            let r = q.hermitian_residual();
            if r > tol {
                return Err(SystemError::NonHermitianSample {
                    index,
                    residual: r,
                });
            }
            presym = presym.max(r);
            let mut q = q.hermitize();
            let mut dmax = 0.0f64;
            for bi in [0, n] {
                for i in 0..n {
                    for j in 0..n {
                        dmax = dmax.max(q[(bi + i, bi + j)].norm());
                    }
                }
            }
            if dmax > tol {
                return Err(SystemError::DiagonalBlock {
                    index,
                    magnitude: dmax,
                });
            }
            diag = diag.max(dmax);
            for bi in [0, n] {
                for i in 0..n {
                    for j in 0..n {
                        q[(bi + i, bi + j)] = ZERO_C;
                    }
                }
            }
            clean.push(q);
        }
        let p = SampledPotential {
            xs,
            mats: clean,
            presym_residual: presym,
            diag_residual: diag,
            smoothness: SmoothnessClass::C0,
        };
        Ok((p, presym, diag))
    }

    pub fn grid(&self) -> &[f64] {
        &self.xs
    }

    pub fn samples(&self) -> &[CMat] {
        &self.mats
    }

    pub fn presym_residual(&self) -> f64 {
        self.presym_residual
    }

    pub fn diag_residual(&self) -> f64 {
        self.diag_residual
    }

    pub fn x_max(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    fn eval(&self, x: f64) -> Result<CMat, SystemError> {
        let last = self.x_max();
        if x < -1e-12 || x > last + 1e-9 {
            return Err(SystemError::PotentialRange {
                requested: x,
                available: last,
            });
        }
        let x = x.clamp(0.0, last);
        // binary search for the surrounding interval
        let k = match self
            .xs
            .binary_search_by(|v| v.partial_cmp(&x).unwrap())
        {
            Ok(k) => return Ok(self.mats[k].clone()),
            Err(k) => k,
        };
        let (k0, k1) = (k - 1, k);
        let u = (x - self.xs[k0]) / (self.xs[k1] - self.xs[k0]);
        let mut out = self.mats[k0].scale(Complex64::new(1.0 - u, 0.0));
        out.axpy(Complex64::new(u, 0.0), &self.mats[k1]);
        Ok(out)
    }
}

/// One rank-update level of a jump-chain potential. A level over the free
/// base has closed-form solution data; higher levels carry solution samples
/// on a grid.
#[derive(Debug, Clone)]
pub enum JumpLevel {
    Analytic {
        a: f64,
        sqrt_a: CMat,
        /// I + H*H, the constant Gram density of the free solution.
        gram_rate: CMat,
    },
    Sampled {
        a: f64,
        sqrt_a: CMat,
        grid_h: f64,
        /// Y1(x_i, a), 2n x n per grid point.
        y_samples: Vec<CMat>,
        /// Cumulative Gram T(x_i), n x n per grid point.
        t_samples: Vec<CMat>,
    },
}

impl JumpLevel {
    pub fn abscissa(&self) -> f64 {
        match self {
            JumpLevel::Analytic { a, .. } | JumpLevel::Sampled { a, .. } => *a,
        }
    }
}

/// A potential defined by iterated rank updates of the free system; each
/// level adds one spectral jump. Materialized at construction so evaluation
/// is pure and thread-safe.
#[derive(Debug, Clone)]
pub struct OraclePotential {
    pub(crate) sig: BlockSignature,
    pub(crate) bc: BoundaryMatrix,
    pub(crate) levels: Vec<JumpLevel>,
    pub(crate) x_max: f64,
}

impl OraclePotential {
    pub fn assemble(
        sig: BlockSignature,
        bc: BoundaryMatrix,
        levels: Vec<JumpLevel>,
        x_max: f64,
    ) -> Self {
        OraclePotential {
            sig,
            bc,
            levels,
            x_max,
        }
    }

    pub fn levels(&self) -> &[JumpLevel] {
        &self.levels
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    /// Q(x) = sum over levels of i(W_k B - B W_k), W_k = Y_k S_k Y_k*.
    pub fn eval(&self, x: f64) -> Result<CMat, SystemError> {
        if x < -1e-12 {
            return Err(SystemError::PotentialRange {
                requested: x,
                available: self.x_max,
            });
        }
        let x = x.max(0.0);
        let dim = self.sig.dim();
        let b = self.sig.b_full();
        let mut q = CMat::zeros(dim, dim);
        for level in &self.levels {
            let (y, t) = self.level_solution(level, x)?;
            let s = sandwich_inverse(&sqrt_level(level), &t);
            let w = y.matmul(&s).matmul(&y.adjoint());
            let wb = w.matmul(&b);
            let bw = b.matmul(&w);
            q.add_assign(&wb.sub(&bw).scale(crate::cmat::I_C));
        }
        Ok(q)
    }

    /// Y_k(x, a_k) and T_k(x) for one level.
    pub fn level_solution(
        &self,
        level: &JumpLevel,
        x: f64,
    ) -> Result<(CMat, CMat), SystemError> {
        match level {
            JumpLevel::Analytic { a, gram_rate, .. } => {
                let y = free_e0(&self.sig, &self.bc, x, *a);
                let t = gram_rate.scale(Complex64::new(x, 0.0));
                Ok((y, t))
            }
            JumpLevel::Sampled {
                grid_h,
                y_samples,
                t_samples,
                ..
            } => {
                let last = (y_samples.len() - 1) as f64 * grid_h;
                if x > last + 1e-9 {
                    return Err(SystemError::PotentialRange {
                        requested: x,
                        available: last,
                    });
                }
                let pos = (x / grid_h).min((y_samples.len() - 1) as f64);
                let k0 = (pos.floor() as usize).min(y_samples.len() - 2);
                let u = pos - k0 as f64;
                let lerp = |a: &CMat, b: &CMat| -> CMat {
                    let mut out = a.scale(Complex64::new(1.0 - u, 0.0));
                    out.axpy(Complex64::new(u, 0.0), b);
                    out
                };
                if y_samples.len() == 1 {
                    return Ok((y_samples[0].clone(), t_samples[0].clone()));
                }
                Ok((
                    lerp(&y_samples[k0], &y_samples[k0 + 1]),
                    lerp(&t_samples[k0], &t_samples[k0 + 1]),
                ))
            }
        }
    }
}

fn sqrt_level(level: &JumpLevel) -> CMat {
    match level {
        JumpLevel::Analytic { sqrt_a, .. } | JumpLevel::Sampled { sqrt_a, .. } => sqrt_a.clone(),
    }
}

/// S = A^{1/2} (I + A^{1/2} T A^{1/2})^{-1} A^{1/2}, computed from the PSD
/// square root; `I + A^{1/2} T A^{1/2} >= I` so the inverse always exists.
pub(crate) fn sandwich_inverse(sqrt_a: &CMat, t: &CMat) -> CMat {
    let n = sqrt_a.rows();
    let inner = CMat::identity(n).add(&sqrt_a.matmul(t).matmul(sqrt_a));
    let inv = inner
        .inverse()
        .expect("I + A^{1/2} T A^{1/2} is positive definite");
    sqrt_a.matmul(&inv).matmul(sqrt_a)
}

/// The free solution e0(x, lambda) = exp(i lambda B^-1 x) (I over H).
pub(crate) fn free_e0(sig: &BlockSignature, bc: &BoundaryMatrix, x: f64, lambda: f64) -> CMat {
    let n = sig.n();
    let top = sig.exp_b1(lambda, x);
    let bot = sig.exp_b2_neg(lambda, x).matmul(bc.h());
    let mut out = CMat::zeros(2 * n, n);
    out.set_block(0, 0, &top);
    out.set_block(n, 0, &bot);
    out
}

/// The potential of a system: zero, sampled, or a lazily evaluated jump
/// chain.
#[derive(Debug, Clone)]
pub enum PotentialSpec {
    Zero,
    Sampled(SampledPotential),
    Oracle(OraclePotential),
}

impl PotentialSpec {
    pub fn is_zero(&self) -> bool {
        matches!(self, PotentialSpec::Zero)
    }

    pub fn eval(&self, dim: usize, x: f64) -> Result<CMat, SystemError> {
        match self {
            PotentialSpec::Zero => Ok(CMat::zeros(dim, dim)),
            PotentialSpec::Sampled(p) => p.eval(x),
            PotentialSpec::Oracle(p) => p.eval(x),
        }
    }

    /// Largest x at which the potential is defined.
    pub fn x_max(&self) -> f64 {
        match self {
            PotentialSpec::Zero => f64::INFINITY,
            PotentialSpec::Sampled(p) => p.x_max(),
            PotentialSpec::Oracle(p) => p.x_max(),
        }
    }
}

/// The triple (B, H, Q) defining the boundary value problem.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub signature: BlockSignature,
    pub boundary: BoundaryMatrix,
    pub potential: PotentialSpec,
}

impl SystemSpec {
    pub fn new(
        signature: BlockSignature,
        boundary: BoundaryMatrix,
        potential: PotentialSpec,
    ) -> Result<Self, SystemError> {
        // Joint re-validation of the boundary condition against this
        // signature; BoundaryMatrix may have been built against another.
        let report = validate_bc(signature.b1(), signature.b2(), boundary.h())?;
        if !report.valid {
            return Err(SystemError::BoundaryCondition {
                residual: report.residual,
                tol: EPS_BC,
            });
        }
        if let PotentialSpec::Sampled(p) = &potential {
            if let Some(q) = p.samples().first() {
                if q.rows() != signature.dim() {
                    return Err(SystemError::SampleDimension {
                        index: 0,
                        expected: signature.dim(),
                        actual: q.rows(),
                    });
                }
            }
        }
        Ok(SystemSpec {
            signature,
            boundary,
            potential,
        })
    }

    /// Free scalar Dirac system of half-dimension n: B = diag(I, -I), H = I,
    /// Q = 0.
    pub fn free_dirac(n: usize) -> Self {
        let sig = BlockSignature::dirac(n);
        let bc = BoundaryMatrix::new(CMat::identity(n), &sig).unwrap();
        SystemSpec {
            signature: sig,
            boundary: bc,
            potential: PotentialSpec::Zero,
        }
    }

    pub fn n(&self) -> usize {
        self.signature.n()
    }

    pub fn dim(&self) -> usize {
        self.signature.dim()
    }
}
