//! Transformation-operator machinery for the r = 2 block normal form
//! B = diag(b1*I_n, -b2*I_n): the triangular kernel K(x,t) with
//! Y = (I + K) e0, discrete Volterra inversion, and the kernel combination
//! F = R + R* + R R*.
//!
//! The kernel is built in two stages. A particular solution R of the
//! characteristic system is produced by Picard iteration on the triangular
//! grid, integrating along characteristics of slope t' = b_j/b_i with the
//! diagonal data fixed by the potential and the free diagonal-block data set
//! to zero on the edge t = 0 (the r = 2 specialization of the auxiliary
//! characteristic choice). A block-diagonal convolution correction Phi,
//! solved from a Volterra equation of the second kind by forward
//! substitution, then restores the boundary relation K(x,0) B (I over H) = 0
//! and makes the kernel unique.

use crate::cmat::{gemm_acc, CLu, CMat, I_C, ZERO_C};
use crate::direct::MatrixSolution;
use crate::kernel::{
    block_mul_acc_scaled, block_mul_adj_acc_scaled, FullKernelGrid, GridError, KernelGrid,
    UniformGrid,
};
use crate::system::{SystemError, SystemSpec};
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

/// Picard iteration budget for the characteristic integral equations.
pub const PICARD_MAX_ITER: usize = 200;
/// Max-norm stopping tolerance on successive Picard iterates.
pub const PICARD_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(
        "kernel solver requires scalar blocks B1 = b1*I, B2 = b2*I (the r = 2 normal form)"
    )]
    NonScalarBlocks,
    #[error(
        "Picard iteration did not contract within {iterations} sweeps (last delta {residual:.3e}); \
         increase the iteration budget for this x_max and potential size"
    )]
    PicardBudget { iterations: usize, residual: f64 },
    #[error("kernel grids do not match (h or N differ)")]
    KernelGridMismatch,
}

#[derive(Debug, Clone, Default)]
pub struct GoursatDiagnostics {
    pub iterations: usize,
    pub final_delta: f64,
    /// |K(x,x) - K(x,x)*| before the diagonal was symmetrized.
    pub diag_presym_residual: f64,
    /// max over x of |K(x,0) B (I over H)|.
    pub boundary_residual: f64,
}

pub struct GoursatKernel {
    pub kernel: KernelGrid,
    pub diagnostics: GoursatDiagnostics,
}

/// Triangular grid of n x n blocks; a lighter cousin of `KernelGrid` used for
/// the four block components of the auxiliary kernel.
struct TriBlocks {
    n: usize,
    np: usize,
    data: Vec<Complex64>,
}

impl TriBlocks {
    fn zeros(np: usize, n: usize) -> Self {
        TriBlocks {
            n,
            np,
            data: vec![ZERO_C; np * (np + 1) / 2 * n * n],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i < self.np);
        (i * (i + 1) / 2 + j) * self.n * self.n
    }

    #[inline]
    fn block(&self, i: usize, j: usize) -> &[Complex64] {
        let o = self.idx(i, j);
        &self.data[o..o + self.n * self.n]
    }

    #[inline]
    fn block_mut(&mut self, i: usize, j: usize) -> &mut [Complex64] {
        let o = self.idx(i, j);
        let nn = self.n * self.n;
        &mut self.data[o..o + nn]
    }

    fn max_delta(&self, other: &TriBlocks) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// Q12(x) and Q21(x) sampled wherever the characteristic scheme needs them:
/// on the grid and at the diagonal foot points of the off-diagonal
/// characteristics.
struct QSamples {
    n: usize,
    grid12: Vec<Complex64>,
    grid21: Vec<Complex64>,
    diag12: Vec<Complex64>,
    diag21: Vec<Complex64>,
}

fn q_blocks(system: &SystemSpec, x: f64) -> Result<(CMat, CMat), SystemError> {
    let n = system.n();
    let q = system.potential.eval(2 * n, x)?;
    Ok((q.block(0, n, n, n), q.block(n, 0, n, n)))
}

/// Inhomogeneous data of the characteristic system at one point.
#[inline]
fn copy_block(dst: &mut [Complex64], src: &CMat) {
    let n = src.rows();
    for r in 0..n {
        dst[r * n..(r + 1) * n].copy_from_slice(src.row(r));
    }
}

/// Linear interpolation of n x n blocks along row `i` of a triangle at
/// continuous t-index `pos` (in units of h).
#[inline]
fn row_interp(tri: &TriBlocks, i: usize, pos: f64, out: &mut [Complex64]) {
    let nn = tri.n * tri.n;
    if pos <= 0.0 {
        out.copy_from_slice(&tri.block(i, 0)[..nn]);
        return;
    }
    let imax = i as f64;
    if pos >= imax {
        out.copy_from_slice(&tri.block(i, i)[..nn]);
        return;
    }
    let j0 = pos.floor() as usize;
    let u = pos - j0 as f64;
    let a = tri.block(i, j0);
    let b = tri.block(i, j0 + 1);
    for k in 0..nn {
        out[k] = (1.0 - u) * a[k] + u * b[k];
    }
}

/// Linear interpolation of the diagonal blocks at continuous index `pos`.
#[inline]
fn diag_interp(tri: &TriBlocks, pos: f64, out: &mut [Complex64]) {
    let nn = tri.n * tri.n;
    let np = tri.np;
    if pos <= 0.0 {
        out.copy_from_slice(&tri.block(0, 0)[..nn]);
        return;
    }
    if pos >= (np - 1) as f64 {
        out.copy_from_slice(&tri.block(np - 1, np - 1)[..nn]);
        return;
    }
    let m = pos.floor() as usize;
    let u = pos - m as f64;
    let a = tri.block(m, m);
    let b = tri.block(m + 1, m + 1);
    for k in 0..nn {
        out[k] = (1.0 - u) * a[k] + u * b[k];
    }
}

/// Computes the transformation kernel K(x,t) for a potential over the scalar
/// two-block signature by solving the characteristic integral equations.
pub fn goursat_kernel(
    system: &SystemSpec,
    x_max: f64,
    h: f64,
) -> Result<GoursatKernel, TransformError> {
    let (b1, b2) = system
        .signature
        .scalar_blocks()
        .ok_or(TransformError::NonScalarBlocks)?;
    let lam1 = b1;
    let lam2 = -b2;
    let n = system.n();
    let grid = UniformGrid::new(x_max, h)?;
    let np = grid.n_points();

    // Pre-sample the potential blocks.
    let nn = n * n;
    let mut q = QSamples {
        n,
        grid12: vec![ZERO_C; np * nn],
        grid21: vec![ZERO_C; np * nn],
        diag12: vec![ZERO_C; np * (np + 1) / 2 * nn],
        diag21: vec![ZERO_C; np * (np + 1) / 2 * nn],
    };
    for m in 0..np {
        let (q12, q21) = q_blocks(system, grid.x(m))?;
        copy_block(&mut q.grid12[m * nn..(m + 1) * nn], &q12);
        copy_block(&mut q.grid21[m * nn..(m + 1) * nn], &q21);
    }
    // Diagonal foot points xi_ij = (lam_j x - lam_i t)/(lam_j - lam_i).
    let foot12 = |x: f64, t: f64| (lam2 * x - lam1 * t) / (lam2 - lam1);
    let foot21 = |x: f64, t: f64| (lam1 * x - lam2 * t) / (lam1 - lam2);
    for i in 0..np {
        for j in 0..=i {
            let (x, t) = (grid.x(i), grid.x(j));
            let o = (i * (i + 1) / 2 + j) * nn;
            let (q12, _) = q_blocks(system, foot12(x, t))?;
            copy_block(&mut q.diag12[o..o + nn], &q12);
            let (_, q21) = q_blocks(system, foot21(x, t))?;
            copy_block(&mut q.diag21[o..o + nn], &q21);
        }
    }

    let mut old = [
        TriBlocks::zeros(np, n),
        TriBlocks::zeros(np, n),
        TriBlocks::zeros(np, n),
        TriBlocks::zeros(np, n),
    ];
    let mut new = [
        TriBlocks::zeros(np, n),
        TriBlocks::zeros(np, n),
        TriBlocks::zeros(np, n),
        TriBlocks::zeros(np, n),
    ];

    let mut iterations = 0;
    let mut delta = f64::INFINITY;
    while iterations < PICARD_MAX_ITER {
        iterations += 1;
        picard_sweep(&old, &mut new, &q, grid, lam1, lam2);
        delta = new
            .iter()
            .zip(&old)
            .map(|(a, b)| a.max_delta(b))
            .fold(0.0, f64::max);
        for (o, nw) in old.iter_mut().zip(new.iter_mut()) {
            std::mem::swap(o, nw);
        }
        if delta <= PICARD_EPS {
            break;
        }
    }
    if delta > PICARD_EPS {
        return Err(TransformError::PicardBudget {
            iterations,
            residual: delta,
        });
    }

    // Assemble the 2n x 2n auxiliary kernel.
    let [r11, r12, r21, r22] = &old;
    let dim = 2 * n;
    let mut rhat = KernelGrid::zeros(grid, dim);
    for i in 0..np {
        for j in 0..=i {
            let dst = rhat.block_mut(i, j);
            let s11 = r11.block(i, j);
            let s12 = r12.block(i, j);
            let s21 = r21.block(i, j);
            let s22 = r22.block(i, j);
            for r in 0..n {
                for c in 0..n {
                    dst[r * dim + c] = s11[r * n + c];
                    dst[r * dim + n + c] = s12[r * n + c];
                    dst[(n + r) * dim + c] = s21[r * n + c];
                    dst[(n + r) * dim + n + c] = s22[r * n + c];
                }
            }
        }
    }
    drop(old);
    drop(new);

    let kernel = correct_with_convolution(system, &rhat, lam1, lam2)?;
    let mut kernel = kernel;
    let diag_presym_residual = kernel.symmetrize_diagonal();
    let boundary_residual = boundary_residual(&kernel, system);

    Ok(GoursatKernel {
        kernel,
        diagnostics: GoursatDiagnostics {
            iterations,
            final_delta: delta,
            diag_presym_residual,
            boundary_residual,
        },
    })
}

/// One Picard sweep: evaluates the characteristic integral equations with
/// `old` in the integrand, writing into `new`. Cumulative integrals along
/// each characteristic family are carried row to row, so a sweep is O(N^2).
fn picard_sweep(
    old: &[TriBlocks; 4],
    new: &mut [TriBlocks; 4],
    q: &QSamples,
    grid: UniformGrid,
    lam1: f64,
    lam2: f64,
) {
    let [o11, o12, o21, o22] = old;
    let n = q.n;
    let nn = n * n;
    let np = grid.n_points();
    let h = grid.h;
    let k12 = lam2 / lam1;
    let k21 = lam1 / lam2;
    // Diagonal data coefficients: R_ij(x,x) = -i Q_ij(x) / (lam_i - lam_j).
    let c12 = -I_C / Complex64::new(lam1 - lam2, 0.0);
    let c21 = -I_C / Complex64::new(lam2 - lam1, 0.0);
    let s11 = -I_C / Complex64::new(lam1, 0.0);
    let s22 = -I_C / Complex64::new(lam2, 0.0);

    // Rolling rows of the cumulative characteristic integrals.
    let mut prev: Vec<Vec<Complex64>> = (0..4).map(|_| vec![ZERO_C; np * nn]).collect();
    let mut cur: Vec<Vec<Complex64>> = (0..4).map(|_| vec![ZERO_C; np * nn]).collect();
    let mut f_prev = vec![ZERO_C; nn];
    let mut f_cur = vec![ZERO_C; nn];
    let mut interp = vec![ZERO_C; nn];

    for i in 0..np {
        let x = grid.x(i);
        for j in 0..=i {
            let t = grid.x(j);
            let qg_cur12 = &q.grid12[i * nn..(i + 1) * nn];
            let qg_cur21 = &q.grid21[i * nn..(i + 1) * nn];
            let tri_o = (i * (i + 1) / 2 + j) * nn;

            // --- block 11: slope +1 characteristic from (x - t, 0)
            {
                let dst = &mut cur[0][j * nn..(j + 1) * nn];
                if j == 0 {
                    dst.iter_mut().for_each(|z| *z = ZERO_C);
                } else {
                    // increment over [x_{i-1}, x_i] along the characteristic
                    let qg_prev = &q.grid12[(i - 1) * nn..i * nn];
                    f_prev.iter_mut().for_each(|z| *z = ZERO_C);
                    gemm_acc(&mut f_prev, qg_prev, o21.block(i - 1, j - 1), n, n, n);
                    f_cur.iter_mut().for_each(|z| *z = ZERO_C);
                    gemm_acc(&mut f_cur, qg_cur12, o21.block(i, j), n, n, n);
                    let base = &prev[0][(j - 1) * nn..j * nn];
                    for k in 0..nn {
                        dst[k] = base[k] + h / 2.0 * (f_prev[k] + f_cur[k]);
                    }
                }
                let src = &cur[0][j * nn..(j + 1) * nn];
                let out = new[0].block_mut(i, j);
                for k in 0..nn {
                    out[k] = s11 * src[k];
                }
            }

            // --- block 22: slope +1 characteristic from (x - t, 0)
            {
                let dst = &mut cur[3][j * nn..(j + 1) * nn];
                if j == 0 {
                    dst.iter_mut().for_each(|z| *z = ZERO_C);
                } else {
                    let qg_prev = &q.grid21[(i - 1) * nn..i * nn];
                    f_prev.iter_mut().for_each(|z| *z = ZERO_C);
                    gemm_acc(&mut f_prev, qg_prev, o12.block(i - 1, j - 1), n, n, n);
                    f_cur.iter_mut().for_each(|z| *z = ZERO_C);
                    gemm_acc(&mut f_cur, qg_cur21, o12.block(i, j), n, n, n);
                    let base = &prev[3][(j - 1) * nn..j * nn];
                    for k in 0..nn {
                        dst[k] = base[k] + h / 2.0 * (f_prev[k] + f_cur[k]);
                    }
                }
                let src = &cur[3][j * nn..(j + 1) * nn];
                let out = new[3].block_mut(i, j);
                for k in 0..nn {
                    out[k] = s22 * src[k];
                }
            }

            // --- block 12: negative slope k12, foot on the diagonal
            {
                let foot = (lam2 * x - lam1 * t) / (lam2 - lam1);
                let foot_pos = foot / h;
                let t_prev_pos = (t - k12 * (x - (x - h))) / h; // (t - k12*h)/h
                let dst = &mut cur[1][j * nn..(j + 1) * nn];
                if i > 0 && foot_pos <= (i - 1) as f64 + 1e-9 {
                    // integrand at the previous row, interpolated in t
                    row_interp(o22, i - 1, t_prev_pos, &mut interp);
                    let qg_prev = &q.grid12[(i - 1) * nn..i * nn];
                    f_prev.iter_mut().for_each(|z| *z = ZERO_C);
                    gemm_acc(&mut f_prev, qg_prev, &interp, n, n, n);
                    f_cur.iter_mut().for_each(|z| *z = ZERO_C);
                    gemm_acc(&mut f_cur, qg_cur12, o22.block(i, j), n, n, n);
                    row_interp_flat(&prev[1], i - 1, t_prev_pos, nn, &mut interp);
                    for k in 0..nn {
                        dst[k] = interp[k] + h / 2.0 * (f_prev[k] + f_cur[k]);
                    }
                } else {
                    // short segment from the diagonal foot point
                    let seg = x - foot;
                    diag_interp(o22, foot_pos, &mut interp);
                    let qd = &q.diag12[tri_o..tri_o + nn];
                    f_prev.iter_mut().for_each(|z| *z = ZERO_C);
                    gemm_acc(&mut f_prev, qd, &interp, n, n, n);
                    f_cur.iter_mut().for_each(|z| *z = ZERO_C);
                    gemm_acc(&mut f_cur, qg_cur12, o22.block(i, j), n, n, n);
                    for k in 0..nn {
                        dst[k] = seg / 2.0 * (f_prev[k] + f_cur[k]);
                    }
                }
                let src = &cur[1][j * nn..(j + 1) * nn];
                let qd = &q.diag12[tri_o..tri_o + nn];
                let out = new[1].block_mut(i, j);
                for k in 0..nn {
                    out[k] = c12 * qd[k] + s11 * src[k];
                }
            }

            // --- block 21: negative slope k21, foot on the diagonal
            {
                let foot = (lam1 * x - lam2 * t) / (lam1 - lam2);
                let foot_pos = foot / h;
                let t_prev_pos = (t - k21 * h) / h;
                let dst = &mut cur[2][j * nn..(j + 1) * nn];
                if i > 0 && foot_pos <= (i - 1) as f64 + 1e-9 {
                    row_interp(o11, i - 1, t_prev_pos, &mut interp);
                    let qg_prev = &q.grid21[(i - 1) * nn..i * nn];
                    f_prev.iter_mut().for_each(|z| *z = ZERO_C);
                    gemm_acc(&mut f_prev, qg_prev, &interp, n, n, n);
                    f_cur.iter_mut().for_each(|z| *z = ZERO_C);
                    gemm_acc(&mut f_cur, qg_cur21, o11.block(i, j), n, n, n);
                    row_interp_flat(&prev[2], i - 1, t_prev_pos, nn, &mut interp);
                    for k in 0..nn {
                        dst[k] = interp[k] + h / 2.0 * (f_prev[k] + f_cur[k]);
                    }
                } else {
                    let seg = x - foot;
                    diag_interp(o11, foot_pos, &mut interp);
                    let qd = &q.diag21[tri_o..tri_o + nn];
                    f_prev.iter_mut().for_each(|z| *z = ZERO_C);
                    gemm_acc(&mut f_prev, qd, &interp, n, n, n);
                    f_cur.iter_mut().for_each(|z| *z = ZERO_C);
                    gemm_acc(&mut f_cur, qg_cur21, o11.block(i, j), n, n, n);
                    for k in 0..nn {
                        dst[k] = seg / 2.0 * (f_prev[k] + f_cur[k]);
                    }
                }
                let src = &cur[2][j * nn..(j + 1) * nn];
                let qd = &q.diag21[tri_o..tri_o + nn];
                let out = new[2].block_mut(i, j);
                for k in 0..nn {
                    out[k] = c21 * qd[k] + s22 * src[k];
                }
            }
        }
        for (p, c) in prev.iter_mut().zip(cur.iter_mut()) {
            std::mem::swap(p, c);
        }
    }
}

/// Linear interpolation along a flat row buffer of nn-sized blocks at
/// continuous t-index `pos`, clamped to [0, i].
#[inline]
fn row_interp_flat(row: &[Complex64], i: usize, pos: f64, nn: usize, out: &mut [Complex64]) {
    if pos <= 0.0 {
        out.copy_from_slice(&row[0..nn]);
        return;
    }
    if pos >= i as f64 {
        out.copy_from_slice(&row[i * nn..(i + 1) * nn]);
        return;
    }
    let j0 = pos.floor() as usize;
    let u = pos - j0 as f64;
    let a = &row[j0 * nn..(j0 + 1) * nn];
    let b = &row[(j0 + 1) * nn..(j0 + 2) * nn];
    for k in 0..nn {
        out[k] = (1.0 - u) * a[k] + u * b[k];
    }
}

/// Solves the Volterra correction equation for the block-diagonal
/// convolution Phi and composes K = Rhat + Phi + Rhat * Phi.
fn correct_with_convolution(
    system: &SystemSpec,
    rhat: &KernelGrid,
    lam1: f64,
    lam2: f64,
) -> Result<KernelGrid, TransformError> {
    let n = system.n();
    let dim = 2 * n;
    let grid = rhat.grid();
    let np = grid.n_points();
    let h = grid.h;

    // BA = B (I over H): top b1*I, bottom -b2*H = lam2*H.
    let mut ba = CMat::zeros(dim, n);
    ba.set_block(0, 0, &CMat::scalar(n, Complex64::new(lam1, 0.0)));
    ba.set_block(n, 0, &system.boundary.h().scale(Complex64::new(lam2, 0.0)));
    let mut ba_flat = vec![ZERO_C; dim * n];
    copy_rect(&mut ba_flat, &ba);

    // Forward substitution for M(x_i) = Phi(x_i) B A.
    let mut m_vals = vec![ZERO_C; np * dim * n];
    let mut rhs = vec![ZERO_C; dim * n];
    for i in 0..np {
        rhs.iter_mut().for_each(|z| *z = ZERO_C);
        gemm_acc(&mut rhs, rhat.block(i, 0), &ba_flat, dim, dim, n);
        rhs.iter_mut().for_each(|z| *z = -*z);
        for m in 0..i {
            let w = grid.trapezoid_weight(m, i);
            let mm = &m_vals[m * dim * n..(m + 1) * dim * n];
            // rhs -= w * Rhat(i,m) * M_m
            let r = rhat.block(i, m);
            for rr in 0..dim {
                let rrow = &r[rr * dim..(rr + 1) * dim];
                for (k, &rik) in rrow.iter().enumerate() {
                    if rik == ZERO_C {
                        continue;
                    }
                    let mrow = &mm[k * n..(k + 1) * n];
                    let out = &mut rhs[rr * n..(rr + 1) * n];
                    for (o, &v) in out.iter_mut().zip(mrow) {
                        *o -= w * rik * v;
                    }
                }
            }
        }
        let wi = grid.trapezoid_weight(i, i.max(1)).min(h / 2.0);
        let wi = if i == 0 { 0.0 } else { wi };
        let lhs = CMat::identity(dim).add(&rhat.get(i, i).scale(Complex64::new(wi, 0.0)));
        let lu = CLu::factor(&lhs).map_err(SystemError::from)?;
        // columns of M_i solve lhs * col = rhs col
        let mut col = vec![ZERO_C; dim];
        for c in 0..n {
            for r in 0..dim {
                col[r] = rhs[r * n + c];
            }
            lu.solve_in_place(&mut col).map_err(SystemError::from)?;
            for r in 0..dim {
                m_vals[i * dim * n + r * n + c] = col[r];
            }
        }
    }

    // Phi(x_i) = diag(Phi1, Phi2): Phi1 = M_top / b1, Phi2 = -M_bot H^-1 / b2.
    let h_inv = system
        .boundary
        .h()
        .inverse()
        .map_err(SystemError::from)?;
    let mut phi = vec![ZERO_C; np * dim * dim];
    for i in 0..np {
        let m_i = &m_vals[i * dim * n..(i + 1) * dim * n];
        let top = CMat::from_fn(n, n, |r, c| m_i[r * n + c] / lam1);
        let bot_raw = CMat::from_fn(n, n, |r, c| m_i[(n + r) * n + c]);
        let bot = bot_raw.matmul(&h_inv).scale(Complex64::new(1.0 / lam2, 0.0));
        let dst = &mut phi[i * dim * dim..(i + 1) * dim * dim];
        for r in 0..n {
            for c in 0..n {
                dst[r * dim + c] = top[(r, c)];
                dst[(n + r) * dim + (n + c)] = bot[(r, c)];
            }
        }
    }

    // K(x,t) = Rhat(x,t) + Phi(x-t) + int_t^x Rhat(x,s) Phi(s-t) ds.
    let mut kgrid = KernelGrid::zeros(grid, dim);
    let dd = dim * dim;
    let rows = split_triangle_rows(&mut kgrid);
    rows.into_par_iter().for_each(|(i, row)| {
        for j in 0..=i {
            let dst = &mut row[j * dd..(j + 1) * dd];
            let rb = rhat.block(i, j);
            let pb = &phi[(i - j) * dd..(i - j + 1) * dd];
            for k in 0..dd {
                dst[k] = rb[k] + pb[k];
            }
            if i > j {
                for m in j..=i {
                    let w = if m == j || m == i { h / 2.0 } else { h };
                    let pm = &phi[(m - j) * dd..(m - j + 1) * dd];
                    block_mul_acc_scaled(dst, w, rhat.block(i, m), pm, dim);
                }
            }
        }
    });
    Ok(kgrid)
}

#[inline]
fn copy_rect(dst: &mut [Complex64], src: &CMat) {
    let c = src.cols();
    for r in 0..src.rows() {
        dst[r * c..(r + 1) * c].copy_from_slice(src.row(r));
    }
}

/// Splits a triangular kernel into (row index, mutable row slice) pairs for
/// row-parallel fills.
fn split_triangle_rows(k: &mut KernelGrid) -> Vec<(usize, &mut [Complex64])> {
    let np = k.n_steps() + 1;
    let mut out = Vec::with_capacity(np);
    for i in (0..np).rev() {
        // Repeatedly peel the last row off the flat buffer.
        let row = k.row_mut(i);
        // SAFETY: rows are disjoint ranges of the backing vec; the borrows
        // do not overlap and all live as long as `k`.
        let row = unsafe { std::slice::from_raw_parts_mut(row.as_mut_ptr(), row.len()) };
        out.push((i, row));
    }
    out.reverse();
    out
}

/// max over grid x of |K(x,0) B (I over H)|.
pub fn boundary_residual(k: &KernelGrid, system: &SystemSpec) -> f64 {
    let b = system.signature.b_full();
    let ba = b.matmul(&system.boundary.stacked());
    let mut worst = 0.0f64;
    for i in 0..=k.n_steps() {
        let v = k.get(i, 0).matmul(&ba);
        worst = worst.max(v.max_abs());
    }
    worst
}

/// (I + K) base: out(x) = base(x) + int_0^x K(x,t) base(t) dt by trapezoid.
pub fn apply_kernel(
    k: &KernelGrid,
    base: &MatrixSolution,
) -> Result<MatrixSolution, TransformError> {
    if base.grid() != k.grid() {
        return Err(TransformError::KernelGridMismatch);
    }
    let grid = k.grid();
    let dim = k.block_dim();
    let ncols = base.sample(0).len() / dim;
    let mut out_samples: Vec<Vec<Complex64>> = Vec::with_capacity(grid.n_points());
    for i in 0..grid.n_points() {
        let mut acc = base.sample(i).to_vec();
        for m in 0..=i {
            let w = grid.trapezoid_weight(m, i);
            if w == 0.0 {
                continue;
            }
            let kb = k.block(i, m);
            let bs = base.sample(m);
            for r in 0..dim {
                let krow = &kb[r * dim..(r + 1) * dim];
                for (kk, &krc) in krow.iter().enumerate() {
                    if krc == ZERO_C {
                        continue;
                    }
                    let brow = &bs[kk * ncols..(kk + 1) * ncols];
                    let arow = &mut acc[r * ncols..(r + 1) * ncols];
                    for (a, &bv) in arow.iter_mut().zip(brow) {
                        *a += w * krc * bv;
                    }
                }
            }
        }
        out_samples.push(acc);
    }
    let flat: Vec<Complex64> = out_samples.into_iter().flatten().collect();
    Ok(MatrixSolution::from_flat(
        base.lambda,
        grid,
        dim,
        ncols,
        flat,
    ))
}

/// Discrete Volterra inversion: R with (I + R)(I + K) = I on the grid, i.e.
/// R(x,t) + K(x,t) + int_t^x R(x,s) K(s,t) ds = 0 in the trapezoid
/// discretization. Solved row by row, descending in t.
pub fn volterra_invert(k: &KernelGrid) -> KernelGrid {
    let grid = k.grid();
    let dim = k.block_dim();
    let np = grid.n_points();
    let h = grid.h;
    // (I + (h/2) K(t_j, t_j))^T factorizations, shared across rows.
    let lus: Vec<CLu> = (0..np)
        .map(|j| {
            let a = CMat::identity(dim).add(&k.get(j, j).scale(Complex64::new(h / 2.0, 0.0)));
            CLu::factor(&a.adjoint()).expect("I + O(h) block is invertible")
        })
        .collect();

    let mut r = KernelGrid::zeros(grid, dim);
    let rows = split_triangle_rows(&mut r);
    rows.into_par_iter().for_each(|(i, row)| {
        let dd = dim * dim;
        let mut rhs = vec![ZERO_C; dd];
        for j in (0..=i).rev() {
            if j == i {
                let kb = k.block(i, i);
                let dst = &mut row[j * dd..(j + 1) * dd];
                for kk in 0..dd {
                    dst[kk] = -kb[kk];
                }
                continue;
            }
            rhs.copy_from_slice(k.block(i, j));
            rhs.iter_mut().for_each(|z| *z = -*z);
            for m in (j + 1)..=i {
                let w = if m == i { h / 2.0 } else { h };
                let rm = &row[m * dd..(m + 1) * dd];
                block_mul_acc_scaled(&mut rhs, -w, rm, k.block(m, j), dim);
            }
            // Unknown X solves X (I + h/2 K(j,j)) = rhs  =>  A^T X^T = rhs^T.
            let lu = &lus[j];
            let dst = &mut row[j * dd..(j + 1) * dd];
            let mut col = vec![ZERO_C; dim];
            for rr in 0..dim {
                for (cc, cv) in col.iter_mut().enumerate() {
                    // (rhs^T) column rr is rhs row rr... X^T columns indexed by X rows
                    *cv = rhs[rr * dim + cc].conj();
                }
                lu.solve_in_place(&mut col).expect("dimensions match");
                for (cc, cv) in col.iter().enumerate() {
                    dst[rr * dim + cc] = cv.conj();
                }
            }
        }
    });
    r
}

/// Discrete kernel composition (A B)(x,t) = int_t^x A(x,s) B(s,t) ds.
pub fn compose(a: &KernelGrid, b: &KernelGrid) -> Result<KernelGrid, TransformError> {
    if !a.same_layout(b) {
        return Err(TransformError::KernelGridMismatch);
    }
    let grid = a.grid();
    let dim = a.block_dim();
    let h = grid.h;
    let mut out = KernelGrid::zeros(grid, dim);
    let rows = split_triangle_rows(&mut out);
    rows.into_par_iter().for_each(|(i, row)| {
        let dd = dim * dim;
        for j in 0..=i {
            if i == j {
                continue;
            }
            let dst = &mut row[j * dd..(j + 1) * dd];
            for m in j..=i {
                let w = if m == j || m == i { h / 2.0 } else { h };
                block_mul_acc_scaled(dst, w, a.block(i, m), b.block(m, j), dim);
            }
        }
    });
    Ok(out)
}

/// F(x,t) = R(x,t) + int_0^t R(x,s) R(t,s)* ds for x > t, with Hermitian
/// reflection below the diagonal and the interior limit on the diagonal.
pub fn kernel_f_from_r(r: &KernelGrid) -> FullKernelGrid {
    let grid = r.grid();
    let dim = r.block_dim();
    let np = grid.n_points();
    let mut f = FullKernelGrid::zeros(grid, dim);
    let lower: Vec<(usize, usize, Vec<Complex64>)> = (0..np)
        .into_par_iter()
        .flat_map_iter(|i| {
            (0..=i).map(move |j| {
                let mut blk = r.block(i, j).to_vec();
                for m in 0..=j {
                    let w = grid.trapezoid_weight(m, j);
                    if w == 0.0 {
                        continue;
                    }
                    block_mul_adj_acc_scaled(&mut blk, w, r.block(i, m), r.block(j, m), dim);
                }
                (i, j, blk)
            })
        })
        .collect();
    for (i, j, blk) in lower {
        let m = CMat::from_fn(dim, dim, |rr, cc| blk[rr * dim + cc]);
        f.set(i, j, &m);
        if i != j {
            f.set(j, i, &m.adjoint());
        }
    }
    f.symmetrize();
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use crate::system::{BlockSignature, BoundaryMatrix, PotentialSpec};

    fn oracle_system() -> SystemSpec {
        // Free scalar Dirac base plus one jump of height 1 at a = 0.
        let base = crate::glsolve::BaseSystem::free(BlockSignature::dirac(1), BoundaryMatrix::identity(1));
        let chain = oracle::jump_chain(&base, &[(0.0, CMat::identity(1))]).unwrap();
        SystemSpec::new(
            BlockSignature::dirac(1),
            BoundaryMatrix::identity(1),
            PotentialSpec::Oracle(chain),
        )
        .unwrap()
    }

    #[test]
    fn zero_potential_gives_zero_kernel() {
        let sys = SystemSpec::free_dirac(1);
        let g = goursat_kernel(&sys, 1.0, 0.05).unwrap();
        assert!(g.kernel.max_abs() < 1e-14);
    }

    #[test]
    fn oracle_kernel_matches_closed_form() {
        let sys = oracle_system();
        let g = goursat_kernel(&sys, 1.0, 1.0 / 256.0).unwrap();
        let grid = g.kernel.grid();
        let mut worst = 0.0f64;
        for i in 0..grid.n_points() {
            for j in 0..=i {
                let x = grid.x(i);
                let s = -1.0 / (1.0 + 2.0 * x);
                let got = g.kernel.get(i, j);
                let want = CMat::from_fn(2, 2, |_, _| Complex64::new(s, 0.0));
                worst = worst.max(got.sub(&want).max_abs());
            }
        }
        assert!(worst < 1e-4, "kernel error {worst}");
        assert!(g.diagnostics.boundary_residual < 1e-4);
    }

    #[test]
    fn diagonal_relation_reproduces_potential() {
        let sys = oracle_system();
        let g = goursat_kernel(&sys, 1.0, 1.0 / 256.0).unwrap();
        let b = sys.signature.b_full();
        let grid = g.kernel.grid();
        let mut worst = 0.0f64;
        for i in 0..grid.n_points() {
            let kxx = g.kernel.get(i, i);
            let recon = b.matmul(&kxx).sub(&kxx.matmul(&b)).scale(I_C);
            let q = sys.potential.eval(2, grid.x(i)).unwrap();
            worst = worst.max(recon.sub(&q).max_abs());
        }
        assert!(worst < 1e-3, "diagonal relation residual {worst}");
    }

    #[test]
    fn volterra_invert_roundtrip() {
        let sys = oracle_system();
        let g = goursat_kernel(&sys, 1.0, 0.01).unwrap();
        let k = g.kernel;
        let r = volterra_invert(&k);
        // R + K + RK = 0 on the grid by construction
        let rk = compose(&r, &k).unwrap();
        let grid = k.grid();
        let mut worst = 0.0f64;
        for i in 0..grid.n_points() {
            for j in 0..=i {
                let mut resid = r.get(i, j).add(&k.get(i, j));
                resid.add_assign(&rk.get(i, j));
                worst = worst.max(resid.max_abs());
            }
        }
        assert!(worst < 1e-10, "inversion residual {worst}");
        // diagonal identity R(x,x) = -K(x,x), exact for this discretization
        for i in 0..grid.n_points() {
            let sum = r.get(i, i).add(&k.get(i, i));
            assert!(sum.max_abs() < 1e-8);
        }
    }

    /// Closed-form jump kernel K(x,t) = -s(x) * ones with s = A/(1 + 2Ax),
    /// sampled directly on a grid.
    fn jump_kernel(amp: f64, x_max: f64, h: f64) -> KernelGrid {
        let grid = UniformGrid::new(x_max, h).unwrap();
        let mut k = KernelGrid::zeros(grid, 2);
        for i in 0..grid.n_points() {
            let s = -amp / (1.0 + 2.0 * amp * grid.x(i));
            let m = CMat::from_fn(2, 2, |_, _| Complex64::new(s, 0.0));
            for j in 0..=i {
                k.set(i, j, &m);
            }
        }
        k
    }

    #[test]
    fn volterra_involution() {
        // The inverse is involutive in the continuum; the trapezoid
        // discretization reaches it at second order in h. At a small
        // amplitude and fine grid the defect sits below 1e-8.
        let involution_defect = |amp: f64, h: f64| -> f64 {
            let k = jump_kernel(amp, 1.0, h);
            let k2 = volterra_invert(&volterra_invert(&k));
            let grid = k.grid();
            let mut worst = 0.0f64;
            for i in 0..grid.n_points() {
                for j in 0..=i {
                    worst = worst.max(k2.get(i, j).sub(&k.get(i, j)).max_abs());
                }
            }
            worst
        };
        let d = involution_defect(0.1, 1e-3);
        assert!(d < 1e-8, "involution defect {d}");
        // second-order decay of the defect under grid halving
        let d1 = involution_defect(1.0, 0.02);
        let d2 = involution_defect(1.0, 0.01);
        assert!(d1 / d2 > 3.5, "involution defect order: {d1} vs {d2}");
    }

    #[test]
    fn apply_kernel_identity_when_zero() {
        let sys = SystemSpec::free_dirac(1);
        let base = crate::direct::solve_ivp(&sys, 1.0, 1.0, 0.05).unwrap();
        let k = KernelGrid::zeros(base.grid(), 2);
        let out = apply_kernel(&k, &base).unwrap();
        for i in 0..base.n_points() {
            assert_eq!(out.sample(i), base.sample(i));
        }
    }

    #[test]
    fn kernel_f_symmetry() {
        let sys = oracle_system();
        let g = goursat_kernel(&sys, 1.0, 0.02).unwrap();
        let r = volterra_invert(&g.kernel);
        let f = kernel_f_from_r(&r);
        assert!(f.symmetry_residual < 1e-8);
        assert!(f.conjugate_symmetry_residual() < 1e-12);
    }
}
