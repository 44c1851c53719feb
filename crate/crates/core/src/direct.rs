//! Direct spectral side: the matrix initial value problem for Y(x, lambda),
//! the free solution, the generalized Fourier transform, and the Parseval
//! check against a spectral measure.
//!
//! Operations are pure; independent lambda values are processed in parallel.

use crate::cmat::{gemm_acc, CMat, I_C, ZERO_C};
use crate::kernel::{GridError, UniformGrid};
use crate::measure::SpectralMeasure;
use crate::system::{free_e0, BlockSignature, BoundaryMatrix, SystemError, SystemSpec};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DirectError {
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("lambda grid is empty")]
    EmptyLambdaGrid,
    #[error("test functions use different grid steps ({a} vs {b})")]
    StepMismatch { a: f64, b: f64 },
    #[error("test function values must have {expected} components, got {actual}")]
    ComponentCount { expected: usize, actual: usize },
}

/// Y(x, lambda) sampled on a uniform x-grid for one fixed lambda.
#[derive(Debug, Clone)]
pub struct MatrixSolution {
    pub lambda: f64,
    grid: UniformGrid,
    dim: usize,
    n: usize,
    /// Flat row-major (2n x n) matrices, one per grid point.
    values: Vec<Complex64>,
}

impl MatrixSolution {
    pub(crate) fn from_flat(
        lambda: f64,
        grid: UniformGrid,
        dim: usize,
        n: usize,
        values: Vec<Complex64>,
    ) -> Self {
        debug_assert_eq!(values.len(), grid.n_points() * dim * n);
        MatrixSolution {
            lambda,
            grid,
            dim,
            n,
            values,
        }
    }

    pub fn grid(&self) -> UniformGrid {
        self.grid
    }

    #[inline]
    pub fn sample(&self, i: usize) -> &[Complex64] {
        let s = self.dim * self.n;
        &self.values[i * s..(i + 1) * s]
    }

    pub fn sample_mat(&self, i: usize) -> CMat {
        let s = self.sample(i);
        CMat::from_fn(self.dim, self.n, |r, c| s[r * self.n + c])
    }

    pub fn n_points(&self) -> usize {
        self.grid.n_points()
    }
}

/// The free solution e0(x, lambda) = exp(i lambda B^-1 x) (I over H):
/// top block exp(i lambda B1^-1 x), bottom block exp(-i lambda B2^-1 x) H.
pub fn free_solution(sig: &BlockSignature, bc: &BoundaryMatrix, x: f64, lambda: f64) -> CMat {
    free_e0(sig, bc, x, lambda)
}

/// The potential pre-sampled on half-steps of a grid so the RK4 stages can
/// index it instead of re-interpolating per lambda.
pub(crate) struct PotentialTable {
    dim: usize,
    /// Q at x = 0, h/2, h, 3h/2, ..., N*h; empty when Q = 0.
    values: Vec<Complex64>,
}

impl PotentialTable {
    pub(crate) fn build(system: &SystemSpec, grid: UniformGrid) -> Result<Self, SystemError> {
        let dim = system.dim();
        if system.potential.is_zero() {
            return Ok(PotentialTable {
                dim,
                values: Vec::new(),
            });
        }
        let m = 2 * grid.n_steps + 1;
        let mut values = vec![ZERO_C; m * dim * dim];
        for k in 0..m {
            let x = k as f64 * grid.h / 2.0;
            let q = system.potential.eval(dim, x)?;
            let dst = &mut values[k * dim * dim..(k + 1) * dim * dim];
            for r in 0..dim {
                dst[r * dim..(r + 1) * dim].copy_from_slice(q.row(r));
            }
        }
        Ok(PotentialTable { dim, values })
    }

    #[inline]
    fn at(&self, half_step: usize) -> Option<&[Complex64]> {
        if self.values.is_empty() {
            None
        } else {
            let s = self.dim * self.dim;
            Some(&self.values[half_step * s..(half_step + 1) * s])
        }
    }
}

/// Fixed-step classical RK4 for Y' = i B^-1 (lambda I - Q(x)) Y with
/// Y(0) = (I over H); returns samples at every grid point. The stored initial
/// sample is the exact stacked matrix, not an integrator output.
pub fn solve_ivp(
    system: &SystemSpec,
    lambda: f64,
    x_max: f64,
    h: f64,
) -> Result<MatrixSolution, DirectError> {
    let grid = UniformGrid::new(x_max, h)?;
    let table = PotentialTable::build(system, grid)?;
    Ok(integrate_with_table(system, &table, lambda, grid))
}

pub(crate) fn integrate_with_table(
    system: &SystemSpec,
    table: &PotentialTable,
    lambda: f64,
    grid: UniformGrid,
) -> MatrixSolution {
    let dim = system.dim();
    let n = system.n();
    let s = dim * n;
    let b_inv = system.signature.b_inv_full();
    let mut b_inv_flat = vec![ZERO_C; dim * dim];
    for r in 0..dim {
        b_inv_flat[r * dim..(r + 1) * dim].copy_from_slice(b_inv.row(r));
    }
    let lam = Complex64::new(lambda, 0.0);

    let mut values = vec![ZERO_C; grid.n_points() * s];
    // initial condition (I over H), exact
    {
        let y0 = system.boundary.stacked();
        let dst = &mut values[0..s];
        for r in 0..dim {
            dst[r * n..(r + 1) * n].copy_from_slice(y0.row(r));
        }
    }

    let mut y = values[0..s].to_vec();
    let mut k1 = vec![ZERO_C; s];
    let mut k2 = vec![ZERO_C; s];
    let mut k3 = vec![ZERO_C; s];
    let mut k4 = vec![ZERO_C; s];
    let mut stage = vec![ZERO_C; s];
    let mut rhs = vec![ZERO_C; s];

    let mut deriv = |half_step: usize, yy: &[Complex64], out: &mut [Complex64]| {
        // rhs = lambda*y - Q*y ; out = i * Binv * rhs
        rhs.iter_mut().zip(yy).for_each(|(r, &v)| *r = lam * v);
        if let Some(q) = table.at(half_step) {
            // rhs -= Q y
            for i in 0..dim {
                let qrow = &q[i * dim..(i + 1) * dim];
                for (k, &qik) in qrow.iter().enumerate() {
                    if qik == ZERO_C {
                        continue;
                    }
                    let yrow = &yy[k * n..(k + 1) * n];
                    let rrow = &mut rhs[i * n..(i + 1) * n];
                    for (r, &v) in rrow.iter_mut().zip(yrow) {
                        *r -= qik * v;
                    }
                }
            }
        }
        out.iter_mut().for_each(|o| *o = ZERO_C);
        gemm_acc(out, &b_inv_flat, &rhs, dim, dim, n);
        out.iter_mut().for_each(|o| *o *= I_C);
    };

    let h = grid.h;
    for step in 0..grid.n_steps {
        let base = 2 * step;
        deriv(base, &y, &mut k1);
        stage
            .iter_mut()
            .zip(y.iter().zip(&k1))
            .for_each(|(st, (&yv, &kv))| *st = yv + 0.5 * h * kv);
        deriv(base + 1, &stage, &mut k2);
        stage
            .iter_mut()
            .zip(y.iter().zip(&k2))
            .for_each(|(st, (&yv, &kv))| *st = yv + 0.5 * h * kv);
        deriv(base + 1, &stage, &mut k3);
        stage
            .iter_mut()
            .zip(y.iter().zip(&k3))
            .for_each(|(st, (&yv, &kv))| *st = yv + h * kv);
        deriv(base + 2, &stage, &mut k4);
        for (idx, yv) in y.iter_mut().enumerate() {
            *yv += h / 6.0 * (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]);
        }
        values[(step + 1) * s..(step + 2) * s].copy_from_slice(&y);
    }

    MatrixSolution {
        lambda,
        grid,
        dim,
        n,
        values,
    }
}

/// Samples of Y(., lambda) on a grid: closed form for Q = 0, RK4 otherwise.
pub(crate) fn solution_samples(
    system: &SystemSpec,
    table: &PotentialTable,
    lambda: f64,
    grid: UniformGrid,
) -> MatrixSolution {
    if system.potential.is_zero() {
        free_samples(&system.signature, &system.boundary, lambda, grid)
    } else {
        integrate_with_table(system, table, lambda, grid)
    }
}

fn free_samples(
    sig: &BlockSignature,
    bc: &BoundaryMatrix,
    lambda: f64,
    grid: UniformGrid,
) -> MatrixSolution {
    let dim = sig.dim();
    let n = sig.n();
    let s = dim * n;
    let mut values = vec![ZERO_C; grid.n_points() * s];
    if let Some((b1, b2)) = sig.scalar_blocks() {
        // scalar blocks: plain phases, no eigen machinery
        let h = bc.h();
        for i in 0..grid.n_points() {
            let x = grid.x(i);
            let top = Complex64::from_polar(1.0, lambda * x / b1);
            let bot = Complex64::from_polar(1.0, -lambda * x / b2);
            let dst = &mut values[i * s..(i + 1) * s];
            for r in 0..n {
                dst[r * n + r] = top;
            }
            for r in 0..n {
                for c in 0..n {
                    dst[(n + r) * n + c] = bot * h[(r, c)];
                }
            }
        }
    } else {
        for i in 0..grid.n_points() {
            let e = free_e0(sig, bc, grid.x(i), lambda);
            let dst = &mut values[i * s..(i + 1) * s];
            for r in 0..dim {
                dst[r * n..(r + 1) * n].copy_from_slice(e.row(r));
            }
        }
    }
    MatrixSolution {
        lambda,
        grid,
        dim,
        n,
        values,
    }
}

/// Exact samples of the free solution e0(., lambda) on a grid, regardless of
/// the system's potential; the base input of the transformation operator.
pub fn free_solution_samples(
    system: &SystemSpec,
    lambda: f64,
    x_max: f64,
    h: f64,
) -> Result<MatrixSolution, DirectError> {
    let grid = UniformGrid::new(x_max, h)?;
    Ok(free_samples(
        &system.signature,
        &system.boundary,
        lambda,
        grid,
    ))
}

/// A compactly supported 2n-component function sampled on a uniform grid
/// over [0, b].
#[derive(Debug, Clone)]
pub struct TestFunction {
    pub b: f64,
    pub grid_step: f64,
    /// values[i] has 2n components at x = i * grid_step.
    pub values: Vec<Vec<Complex64>>,
}

impl TestFunction {
    pub fn from_fn(
        dim: usize,
        b: f64,
        grid_step: f64,
        mut f: impl FnMut(f64) -> Vec<Complex64>,
    ) -> Result<Self, DirectError> {
        let grid = UniformGrid::new(b, grid_step)?;
        let mut values = Vec::with_capacity(grid.n_points());
        for i in 0..grid.n_points() {
            let v = f(grid.x(i));
            if v.len() != dim {
                return Err(DirectError::ComponentCount {
                    expected: dim,
                    actual: v.len(),
                });
            }
            values.push(v);
        }
        Ok(TestFunction {
            b: grid.x_max(),
            grid_step,
            values,
        })
    }

    /// 1_[lo, hi] in component `coord`, sampled over [0, b].
    pub fn indicator(
        dim: usize,
        b: f64,
        grid_step: f64,
        coord: usize,
        lo: f64,
        hi: f64,
    ) -> Result<Self, DirectError> {
        Self::from_fn(dim, b, grid_step, |x| {
            let mut v = vec![ZERO_C; dim];
            if x >= lo - 1e-12 && x <= hi + 1e-12 {
                v[coord] = Complex64::new(1.0, 0.0);
            }
            v
        })
    }

    /// Hat function peaking at b/2 in component `coord`.
    pub fn hat(dim: usize, b: f64, grid_step: f64, coord: usize) -> Result<Self, DirectError> {
        Self::from_fn(dim, b, grid_step, |x| {
            let mut v = vec![ZERO_C; dim];
            let t = 1.0 - (2.0 * x / b - 1.0).abs();
            v[coord] = Complex64::new(t.max(0.0), 0.0);
            v
        })
    }

    /// Smooth seeded random function vanishing at both endpoints: a short
    /// random sine series per component.
    pub fn seeded_random(dim: usize, b: f64, grid_step: f64, seed: u64) -> Self {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let modes = 4;
        let coeffs: Vec<Vec<Complex64>> = (0..dim)
            .map(|_| {
                (1..=modes)
                    .map(|_| {
                        Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
                    })
                    .collect()
            })
            .collect();
        Self::from_fn(dim, b, grid_step, |x| {
            (0..dim)
                .map(|c| {
                    let mut s = ZERO_C;
                    for (m, coef) in coeffs[c].iter().enumerate() {
                        s += coef
                            * (std::f64::consts::PI * (m + 1) as f64 * x / b).sin();
                    }
                    s
                })
                .collect()
        })
        .expect("generator produces consistent dimensions")
    }

    pub fn n_points(&self) -> usize {
        self.values.len()
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, |v| v.len())
    }

    /// alpha*f + beta*g on a common grid.
    pub fn linear_combination(
        alpha: Complex64,
        f: &TestFunction,
        beta: Complex64,
        g: &TestFunction,
    ) -> Result<TestFunction, DirectError> {
        if f.grid_step != g.grid_step {
            return Err(DirectError::StepMismatch {
                a: f.grid_step,
                b: g.grid_step,
            });
        }
        let dim = f.dim().max(g.dim());
        let np = f.n_points().max(g.n_points());
        let mut values = vec![vec![ZERO_C; dim]; np];
        for (i, row) in values.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                let fv = f.values.get(i).and_then(|r| r.get(c)).copied().unwrap_or(ZERO_C);
                let gv = g.values.get(i).and_then(|r| r.get(c)).copied().unwrap_or(ZERO_C);
                *v = alpha * fv + beta * gv;
            }
        }
        Ok(TestFunction {
            b: f.b.max(g.b),
            grid_step: f.grid_step,
            values,
        })
    }
}

/// (f, g) = integral of f* g over the common support, composite trapezoid,
/// zero extension past each support.
pub fn inner_product(f: &TestFunction, g: &TestFunction) -> Result<Complex64, DirectError> {
    if (f.grid_step - g.grid_step).abs() > 1e-15 * f.grid_step.abs() {
        return Err(DirectError::StepMismatch {
            a: f.grid_step,
            b: g.grid_step,
        });
    }
    let np = f.n_points().min(g.n_points());
    let total = f.n_points().max(g.n_points());
    let mut acc = ZERO_C;
    for i in 0..np {
        let mut dot = ZERO_C;
        for (a, b) in f.values[i].iter().zip(&g.values[i]) {
            dot += a.conj() * b;
        }
        let w = if i == 0 || i == total - 1 { 0.5 } else { 1.0 };
        acc += w * dot * f.grid_step;
    }
    Ok(acc)
}

/// F(lambda) = (F_{H,Q} f)(lambda): n components per lambda node.
#[derive(Debug, Clone)]
pub struct TransformedFunction {
    pub lambda_grid: Vec<f64>,
    pub values: Vec<Vec<Complex64>>,
}

impl TransformedFunction {
    pub fn validate(&self) -> Result<(), DirectError> {
        if self.lambda_grid.is_empty() {
            return Err(DirectError::EmptyLambdaGrid);
        }
        Ok(())
    }
}

/// F(lambda) = integral over [0, b] of Y(x, lambda)* f(x) dx by composite
/// trapezoid on f's grid; Y from the closed form when Q = 0, RK4 otherwise.
pub fn fourier_transform(
    system: &SystemSpec,
    f: &TestFunction,
    lambda_grid: &[f64],
) -> Result<TransformedFunction, DirectError> {
    if lambda_grid.is_empty() {
        return Err(DirectError::EmptyLambdaGrid);
    }
    let grid = UniformGrid::new(f.b, f.grid_step)?;
    let table = PotentialTable::build(system, grid)?;
    let n = system.n();
    let values: Vec<Vec<Complex64>> = lambda_grid
        .par_iter()
        .map(|&lambda| {
            let y = solution_samples(system, &table, lambda, grid);
            transform_against(&y, f, n)
        })
        .collect();
    Ok(TransformedFunction {
        lambda_grid: lambda_grid.to_vec(),
        values,
    })
}

fn transform_against(y: &MatrixSolution, f: &TestFunction, n: usize) -> Vec<Complex64> {
    let np = f.n_points().min(y.n_points());
    let dim = f.dim();
    let mut out = vec![ZERO_C; n];
    for i in 0..np {
        let ys = y.sample(i);
        let fv = &f.values[i];
        let w = if i == 0 || i == f.n_points() - 1 {
            0.5
        } else {
            1.0
        } * f.grid_step;
        for c in 0..n {
            // (Y* f)_c = sum_r conj(Y_{r c}) f_r
            let mut s = ZERO_C;
            for r in 0..dim {
                s += ys[r * n + c].conj() * fv[r];
            }
            out[c] += w * s;
        }
    }
    out
}

/// Both sides of the Parseval identity and their difference.
#[derive(Debug, Clone)]
pub struct ParsevalReport {
    pub space_side: Complex64,
    pub sigma_side: Complex64,
    pub residual: f64,
    /// max(|F(+-Lambda)|, |G(+-Lambda)|): caller-facing truncation indicator.
    pub tail_indicator: f64,
    pub lambda_nodes: usize,
}

/// Evaluates (f, g) in space against the sigma-side quadrature form
/// [slope part over [-Lambda, Lambda]] + [jumps] + [density part].
pub fn parseval_residual(
    system: &SystemSpec,
    sigma: &SpectralMeasure,
    f: &TestFunction,
    g: &TestFunction,
    lambda_truncation: f64,
    lambda_step: f64,
) -> Result<ParsevalReport, DirectError> {
    if !(lambda_truncation > 0.0) || !(lambda_step > 0.0) {
        return Err(GridError::BadStep {
            h: lambda_step,
            x_max: lambda_truncation,
        }
        .into());
    }
    let space_side = inner_product(f, g)?;

    let m = ((2.0 * lambda_truncation / lambda_step).round() as usize).max(2);
    let step = 2.0 * lambda_truncation / m as f64;
    let mut lambdas: Vec<f64> = (0..=m).map(|k| -lambda_truncation + k as f64 * step).collect();
    let slope_nodes = lambdas.len();
    for j in sigma.jumps() {
        lambdas.push(j.a);
    }
    if let Some(d) = sigma.density() {
        lambdas.extend_from_slice(&d.lambda);
    }

    let same = std::ptr::eq(f, g) || (f.b == g.b && f.values == g.values);
    let ft = fourier_transform(system, f, &lambdas)?;
    let gt = if same {
        ft.clone()
    } else {
        fourier_transform(system, g, &lambdas)?
    };

    let slope = sigma.sigma0_slope();
    let n = sigma.n();
    let quad_form = |fv: &[Complex64], mat: &CMat, gv: &[Complex64]| -> Complex64 {
        let mut s = ZERO_C;
        for r in 0..n {
            for c in 0..n {
                s += fv[r].conj() * mat[(r, c)] * gv[c];
            }
        }
        s
    };

    let mut sigma_side = ZERO_C;
    for k in 0..slope_nodes {
        let w = if k == 0 || k == slope_nodes - 1 { 0.5 } else { 1.0 } * step;
        sigma_side += w * quad_form(&ft.values[k], slope, &gt.values[k]);
    }
    let mut idx = slope_nodes;
    for j in sigma.jumps() {
        sigma_side += quad_form(&ft.values[idx], &j.height, &gt.values[idx]);
        idx += 1;
    }
    if let Some(d) = sigma.density() {
        for (phi, &w) in d.phi.iter().zip(&d.weights) {
            sigma_side += w * quad_form(&ft.values[idx], phi, &gt.values[idx]);
            idx += 1;
        }
    }

    let vec_norm = |v: &[Complex64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let tail_indicator = [
        vec_norm(&ft.values[0]),
        vec_norm(&ft.values[slope_nodes - 1]),
        vec_norm(&gt.values[0]),
        vec_norm(&gt.values[slope_nodes - 1]),
    ]
    .into_iter()
    .fold(0.0, f64::max);

    Ok(ParsevalReport {
        space_side,
        sigma_side,
        residual: (space_side - sigma_side).norm(),
        tail_indicator,
        lambda_nodes: lambdas.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmat::ONE_C;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn free_solution_initial_condition() {
        let sys = SystemSpec::free_dirac(1);
        let e = free_solution(&sys.signature, &sys.boundary, 0.0, 3.7);
        assert_eq!(e[(0, 0)], ONE_C);
        assert_eq!(e[(1, 0)], ONE_C);
    }

    #[test]
    fn free_solution_scalar_phases() {
        let sys = SystemSpec::free_dirac(1);
        let e = free_solution(&sys.signature, &sys.boundary, 1.0, std::f64::consts::PI);
        assert!((e[(0, 0)] - c(-1.0, 0.0)).norm() < 1e-13);
        assert!((e[(1, 0)] - c(-1.0, 0.0)).norm() < 1e-13);

        let sig = BlockSignature::scalar(1, 2.0, 2.0).unwrap();
        let bc = BoundaryMatrix::new(CMat::identity(1), &sig).unwrap();
        let e = free_solution(&sig, &bc, 1.0, 2.0);
        assert!((e[(0, 0)] - Complex64::from_polar(1.0, 1.0)).norm() < 1e-13);
        assert!((e[(1, 0)] - Complex64::from_polar(1.0, -1.0)).norm() < 1e-13);
    }

    #[test]
    fn rk4_free_case_matches_closed_form_and_order() {
        let sys = SystemSpec::free_dirac(1);
        let lambda = 5.0;
        let err_at = |h: f64| -> f64 {
            let sol = solve_ivp(&sys, lambda, 2.0, h).unwrap();
            let mut worst = 0.0f64;
            for i in 0..sol.n_points() {
                let x = sol.grid().x(i);
                let exact = free_solution(&sys.signature, &sys.boundary, x, lambda);
                let got = sol.sample_mat(i);
                worst = worst.max(got.sub(&exact).max_abs());
            }
            worst
        };
        let e1 = err_at(4e-3);
        let e2 = err_at(2e-3);
        assert!(e1 < 1e-6, "coarse RK4 error {e1}");
        // fourth order: halving h cuts the error by ~16; required >= 8
        assert!(e1 / e2 >= 8.0, "halving ratio {}", e1 / e2);
    }

    #[test]
    fn ivp_initial_row_is_exact() {
        let sys = SystemSpec::free_dirac(2);
        let sol = solve_ivp(&sys, 1.3, 1.0, 0.01).unwrap();
        let y0 = sol.sample_mat(0);
        assert_eq!(y0, sys.boundary.stacked());
    }

    #[test]
    fn fourier_transform_indicator_closed_form() {
        let sys = SystemSpec::free_dirac(1);
        let f = TestFunction::indicator(2, 1.0, 1e-3, 0, 0.0, 1.0).unwrap();
        let lambdas = [0.0, 1.0, -2.5, 7.0];
        let t = fourier_transform(&sys, &f, &lambdas).unwrap();
        for (k, &l) in lambdas.iter().enumerate() {
            let exact = if l == 0.0 {
                ONE_C
            } else {
                let il = Complex64::new(0.0, l);
                (ONE_C - (-il).exp()) / il
            };
            assert!(
                (t.values[k][0] - exact).norm() < 1e-6,
                "lambda={l}: {:?} vs {exact:?}",
                t.values[k][0]
            );
        }
    }

    #[test]
    fn fourier_transform_zero_and_linearity() {
        let sys = SystemSpec::free_dirac(1);
        let z = TestFunction::from_fn(2, 1.0, 0.01, |_| vec![ZERO_C; 2]).unwrap();
        let t = fourier_transform(&sys, &z, &[0.3, 1.0]).unwrap();
        assert!(t.values.iter().flatten().all(|v| v.norm() == 0.0));

        let f = TestFunction::indicator(2, 1.0, 0.01, 0, 0.0, 1.0).unwrap();
        let g = TestFunction::hat(2, 1.0, 0.01, 1).unwrap();
        let (alpha, beta) = (c(0.7, -0.2), c(-1.1, 0.4));
        let combo = TestFunction::linear_combination(alpha, &f, beta, &g).unwrap();
        let lambdas = [0.0, 2.0, -3.5];
        let tf = fourier_transform(&sys, &f, &lambdas).unwrap();
        let tg = fourier_transform(&sys, &g, &lambdas).unwrap();
        let tc = fourier_transform(&sys, &combo, &lambdas).unwrap();
        for k in 0..lambdas.len() {
            let want = alpha * tf.values[k][0] + beta * tg.values[k][0];
            assert!((tc.values[k][0] - want).norm() < 1e-13);
        }
    }

    #[test]
    fn fourier_transform_rejects_empty_grid() {
        let sys = SystemSpec::free_dirac(1);
        let f = TestFunction::indicator(2, 1.0, 0.01, 0, 0.0, 1.0).unwrap();
        assert!(matches!(
            fourier_transform(&sys, &f, &[]),
            Err(DirectError::EmptyLambdaGrid)
        ));
    }

    #[test]
    fn solve_ivp_requires_covered_potential() {
        let q = CMat::from_rows(&[vec![c(0.0, 0.0), c(0.0, -1.0)], vec![c(0.0, 1.0), c(0.0, 0.0)]])
            .unwrap();
        let sig = BlockSignature::dirac(1);
        let bc = BoundaryMatrix::new(CMat::identity(1), &sig).unwrap();
        let pot = crate::system::SampledPotential::new(1, vec![0.0, 1.0], vec![q.clone(), q])
            .unwrap();
        let sys = SystemSpec::new(sig, bc, crate::system::PotentialSpec::Sampled(pot)).unwrap();
        let err = solve_ivp(&sys, 0.0, 2.0, 0.01).unwrap_err();
        assert!(matches!(
            err,
            DirectError::System(SystemError::PotentialRange { .. })
        ));
    }

    #[test]
    fn parseval_disjoint_supports() {
        let sys = SystemSpec::free_dirac(1);
        let sigma = SpectralMeasure::free(&sys.signature);
        let f = TestFunction::indicator(2, 3.0, 2e-3, 0, 0.0, 1.0).unwrap();
        let g = TestFunction::indicator(2, 3.0, 2e-3, 0, 2.0, 3.0).unwrap();
        let r = parseval_residual(&sys, &sigma, &f, &g, 200.0, 0.02).unwrap();
        assert!(r.space_side.norm() < 1e-14);
        assert!(r.residual < 5e-3, "residual {}", r.residual);
    }
}
