//! Grid-sampled matrix kernels: lower-triangular kernels K(x,t) on
//! 0 <= t <= x and full-square kernels F(x,t), stored as flat arrays of
//! row-major (2n)x(2n) blocks on a uniform grid.

use crate::cmat::{CMat, ZERO_C};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid mismatch: {context} requires h={expected_h}, N={expected_n}; got h={h}, N={n}")]
    Mismatch {
        context: &'static str,
        expected_h: f64,
        expected_n: usize,
        h: f64,
        n: usize,
    },
    #[error("step size and extent must be positive (h={h}, x_max={x_max})")]
    BadStep { h: f64, x_max: f64 },
}

/// Uniform grid x_i = i*h, i = 0..=n_steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformGrid {
    pub h: f64,
    pub n_steps: usize,
}

impl UniformGrid {
    /// Snaps x_max to a whole number of steps.
    pub fn new(x_max: f64, h: f64) -> Result<Self, GridError> {
        if !(h > 0.0) || !(x_max > 0.0) {
            return Err(GridError::BadStep { h, x_max });
        }
        let n_steps = (x_max / h).round().max(1.0) as usize;
        Ok(UniformGrid { h, n_steps })
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    pub fn x_max(&self) -> f64 {
        self.x(self.n_steps)
    }

    pub fn n_points(&self) -> usize {
        self.n_steps + 1
    }

    /// Trapezoid weight of node m on [0, x_i]; zero-length intervals get
    /// weight zero.
    pub fn trapezoid_weight(&self, m: usize, i: usize) -> f64 {
        if i == 0 {
            0.0
        } else if m == 0 || m == i {
            self.h / 2.0
        } else {
            self.h
        }
    }
}

#[inline]
pub(crate) fn tri_index(i: usize) -> usize {
    i * (i + 1) / 2
}

/// Lower-triangular sampling K(x_i, t_j), 0 <= j <= i <= N, of a matrix
/// kernel with (2n)x(2n) blocks.
#[derive(Debug, Clone)]
pub struct KernelGrid {
    grid: UniformGrid,
    block_dim: usize,
    data: Vec<Complex64>,
}

impl KernelGrid {
    pub fn zeros(grid: UniformGrid, block_dim: usize) -> Self {
        let blocks = tri_index(grid.n_points());
        KernelGrid {
            grid,
            block_dim,
            data: vec![ZERO_C; blocks * block_dim * block_dim],
        }
    }

    pub fn grid(&self) -> UniformGrid {
        self.grid
    }

    pub fn h(&self) -> f64 {
        self.grid.h
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i <= self.grid.n_steps);
        (tri_index(i) + j) * self.block_dim * self.block_dim
    }

    #[inline]
    pub fn block(&self, i: usize, j: usize) -> &[Complex64] {
        let o = self.offset(i, j);
        &self.data[o..o + self.block_dim * self.block_dim]
    }

    #[inline]
    pub fn block_mut(&mut self, i: usize, j: usize) -> &mut [Complex64] {
        let o = self.offset(i, j);
        let b = self.block_dim * self.block_dim;
        &mut self.data[o..o + b]
    }

    /// Row i as one contiguous slice of i+1 blocks.
    pub fn row(&self, i: usize) -> &[Complex64] {
        let b = self.block_dim * self.block_dim;
        let o = tri_index(i) * b;
        &self.data[o..o + (i + 1) * b]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [Complex64] {
        let b = self.block_dim * self.block_dim;
        let o = tri_index(i) * b;
        &mut self.data[o..o + (i + 1) * b]
    }

    pub fn get(&self, i: usize, j: usize) -> CMat {
        let m = self.block_dim;
        let s = self.block(i, j);
        CMat::from_fn(m, m, |r, c| s[r * m + c])
    }

    pub fn set(&mut self, i: usize, j: usize, v: &CMat) {
        let m = self.block_dim;
        let s = self.block_mut(i, j);
        for r in 0..m {
            for c in 0..m {
                s[r * m + c] = v[(r, c)];
            }
        }
    }

    /// Largest entry magnitude over the whole triangle.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// max over grid x of |K(x,x) - K(x,x)*|.
    pub fn diag_hermiticity_residual(&self) -> f64 {
        (0..self.grid.n_points())
            .map(|i| self.get(i, i).hermitian_residual())
            .fold(0.0, f64::max)
    }

    /// Symmetrizes every diagonal block in place; returns the largest
    /// pre-symmetrization residual.
    pub fn symmetrize_diagonal(&mut self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.grid.n_points() {
            let k = self.get(i, i);
            worst = worst.max(k.hermitian_residual());
            self.set(i, i, &k.hermitize());
        }
        worst
    }

    pub fn same_layout(&self, other: &KernelGrid) -> bool {
        self.grid == other.grid && self.block_dim == other.block_dim
    }
}

/// Full-square sampling F(x_i, t_j), 0 <= i,j <= N.
#[derive(Debug, Clone)]
pub struct FullKernelGrid {
    grid: UniformGrid,
    block_dim: usize,
    data: Vec<Complex64>,
    /// Largest conjugate-symmetry defect measured before symmetrization.
    pub symmetry_residual: f64,
}

impl FullKernelGrid {
    pub fn zeros(grid: UniformGrid, block_dim: usize) -> Self {
        let np = grid.n_points();
        FullKernelGrid {
            grid,
            block_dim,
            data: vec![ZERO_C; np * np * block_dim * block_dim],
            symmetry_residual: 0.0,
        }
    }

    pub fn grid(&self) -> UniformGrid {
        self.grid
    }

    pub fn h(&self) -> f64 {
        self.grid.h
    }

    pub fn n_steps(&self) -> usize {
        self.grid.n_steps
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= self.grid.n_steps && j <= self.grid.n_steps);
        (i * self.grid.n_points() + j) * self.block_dim * self.block_dim
    }

    #[inline]
    pub fn block(&self, i: usize, j: usize) -> &[Complex64] {
        let o = self.offset(i, j);
        &self.data[o..o + self.block_dim * self.block_dim]
    }

    #[inline]
    pub fn block_mut(&mut self, i: usize, j: usize) -> &mut [Complex64] {
        let o = self.offset(i, j);
        let b = self.block_dim * self.block_dim;
        &mut self.data[o..o + b]
    }

    pub fn get(&self, i: usize, j: usize) -> CMat {
        let m = self.block_dim;
        let s = self.block(i, j);
        CMat::from_fn(m, m, |r, c| s[r * m + c])
    }

    pub fn set(&mut self, i: usize, j: usize, v: &CMat) {
        let m = self.block_dim;
        let s = self.block_mut(i, j);
        for r in 0..m {
            for c in 0..m {
                s[r * m + c] = v[(r, c)];
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// max_{i,j} |F[i][j] - F[j][i]*|.
    pub fn conjugate_symmetry_residual(&self) -> f64 {
        let np = self.grid.n_points();
        let mut worst = 0.0f64;
        for i in 0..np {
            for j in 0..=i {
                let a = self.get(i, j);
                let b = self.get(j, i).adjoint();
                worst = worst.max(a.sub(&b).max_abs());
            }
        }
        worst
    }

    /// Makes the grid exactly Hermitian-symmetric, F <- (F + F^T*)/2,
    /// recording the prior defect in `symmetry_residual`.
    pub fn symmetrize(&mut self) {
        self.symmetry_residual = self.conjugate_symmetry_residual();
        let np = self.grid.n_points();
        for i in 0..np {
            for j in 0..=i {
                let avg = self
                    .get(i, j)
                    .add(&self.get(j, i).adjoint())
                    .scale(Complex64::new(0.5, 0.0));
                self.set(i, j, &avg);
                let adj = avg.adjoint();
                self.set(j, i, &adj);
            }
        }
    }

    pub fn same_layout(&self, k: &KernelGrid) -> bool {
        self.grid == k.grid() && self.block_dim == k.block_dim()
    }
}


/// out += s * a * b.
#[inline]
pub(crate) fn block_mul_acc_scaled(
    out: &mut [Complex64],
    s: f64,
    a: &[Complex64],
    b: &[Complex64],
    m: usize,
) {
    for r in 0..m {
        let arow = &a[r * m..(r + 1) * m];
        let orow = &mut out[r * m..(r + 1) * m];
        for (k, &ark) in arow.iter().enumerate() {
            let sa = s * ark;
            let brow = &b[k * m..(k + 1) * m];
            for (o, &bkc) in orow.iter_mut().zip(brow) {
                *o += sa * bkc;
            }
        }
    }
}

/// out += s * a * b^* (conjugate transpose of b).
#[inline]
pub(crate) fn block_mul_adj_acc_scaled(
    out: &mut [Complex64],
    s: f64,
    a: &[Complex64],
    b: &[Complex64],
    m: usize,
) {
    for r in 0..m {
        let arow = &a[r * m..(r + 1) * m];
        let orow = &mut out[r * m..(r + 1) * m];
        for (c, o) in orow.iter_mut().enumerate() {
            // (a b^*)_{rc} = sum_k a_{rk} conj(b_{ck})
            let brow = &b[c * m..(c + 1) * m];
            let mut acc = ZERO_C;
            for (&ark, &bck) in arow.iter().zip(brow) {
                acc += ark * bck.conj();
            }
            *o += s * acc;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_snaps_to_whole_steps() {
        let g = UniformGrid::new(2.0, 1e-3).unwrap();
        assert_eq!(g.n_steps, 2000);
        assert!((g.x_max() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn kernel_grid_set_get_roundtrip() {
        let g = UniformGrid::new(1.0, 0.25).unwrap();
        let mut k = KernelGrid::zeros(g, 2);
        let m = CMat::from_fn(2, 2, |r, c| Complex64::new(r as f64, c as f64));
        k.set(3, 1, &m);
        assert_eq!(k.get(3, 1), m);
        assert_eq!(k.get(3, 2), CMat::zeros(2, 2));
    }

    #[test]
    fn full_grid_symmetrize() {
        let g = UniformGrid::new(1.0, 0.5).unwrap();
        let mut f = FullKernelGrid::zeros(g, 1);
        f.set(1, 0, &CMat::scalar(1, Complex64::new(1.0, 2.0)));
        f.set(0, 1, &CMat::scalar(1, Complex64::new(1.0, -2.0 + 1e-3)));
        let defect = f.conjugate_symmetry_residual();
        assert!(defect > 0.9e-3 && defect < 1.1e-3);
        f.symmetrize();
        assert!(f.conjugate_symmetry_residual() < 1e-15);
        assert!(f.symmetry_residual > 0.9e-3);
    }
}
