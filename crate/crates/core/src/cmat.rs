//! Dense complex matrices at desk scale.
//!
//! Everything in this crate works with small (at most a few hundred rows)
//! dense complex matrices: block signatures, boundary matrices, potential
//! samples, kernel blocks. Storage is row-major `Vec<Complex64>`. The
//! factorizations here (partial-pivot LU, Cholesky, cyclic Jacobi for
//! Hermitian eigenproblems) are deliberately simple and deterministic; no
//! BLAS/LAPACK dependency.

use num_complex::Complex64;
use serde::de::{SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: {context} expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },
    #[error("matrix {name} is not Hermitian (residual {residual:.3e} exceeds {tol:.3e})")]
    NotHermitian {
        name: &'static str,
        residual: f64,
        tol: f64,
    },
    #[error("matrix {name} is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite {
        name: &'static str,
        pivot: f64,
        index: usize,
    },
    #[error("matrix is singular at pivot index {index}")]
    Singular { index: usize },
    #[error("matrix has odd dimension {dim}, cannot split into 2x2 blocks")]
    OddDimension { dim: usize },
    #[error("eigenvalue iteration did not converge (off-diagonal residual {residual:.3e})")]
    EigNoConvergence { residual: f64 },
}

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

pub const ZERO_C: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE_C: Complex64 = Complex64::new(1.0, 0.0);
pub const I_C: Complex64 = Complex64::new(0.0, 1.0);

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat {
            rows,
            cols,
            data: vec![ZERO_C; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE_C;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Build from nested rows; rows must have equal length.
    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self, LinalgError> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(LinalgError::DimensionMismatch {
                context: "from_rows",
                expected: format!("{c} columns in every row"),
                actual: "ragged rows".into(),
            });
        }
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        Ok(CMat {
            rows: r,
            cols: c,
            data,
        })
    }

    /// Real diagonal matrix.
    pub fn diag_real(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = Complex64::new(v, 0.0);
        }
        m
    }

    pub fn scalar(n: usize, v: Complex64) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [Complex64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn add(&self, other: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        CMat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, other: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        CMat {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&self, s: Complex64) -> CMat {
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &CMat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn axpy(&mut self, s: Complex64, other: &CMat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn matmul(&self, other: &CMat) -> CMat {
        assert_eq!(
            self.cols, other.rows,
            "matmul dimension mismatch {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = CMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let arow = self.row(i);
            for (k, &aik) in arow.iter().enumerate() {
                if aik == ZERO_C {
                    continue;
                }
                let brow = other.row(k);
                let orow = out.row_mut(i);
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += aik * b;
                }
            }
        }
        out
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> CMat {
        let mut out = CMat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Maximum absolute column sum.
    pub fn one_norm(&self) -> f64 {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, z) in sums.iter_mut().zip(self.row(i)) {
                *s += z.norm();
            }
        }
        sums.into_iter().fold(0.0, f64::max)
    }

    /// max_ij |a_ij - conj(a_ji)|.
    pub fn hermitian_residual(&self) -> f64 {
        assert!(self.is_square());
        let mut r = 0.0f64;
        for i in 0..self.rows {
            for j in 0..=i {
                r = r.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        r
    }

    /// (A + A*)/2.
    pub fn hermitize(&self) -> CMat {
        let adj = self.adjoint();
        self.add(&adj).scale(Complex64::new(0.5, 0.0))
    }

    pub fn block(&self, i0: usize, j0: usize, r: usize, c: usize) -> CMat {
        let mut out = CMat::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                out[(i, j)] = self[(i0 + i, j0 + j)];
            }
        }
        out
    }

    pub fn set_block(&mut self, i0: usize, j0: usize, b: &CMat) {
        for i in 0..b.rows {
            for j in 0..b.cols {
                self[(i0 + i, j0 + j)] = b[(i, j)];
            }
        }
    }

    pub fn lu(&self) -> Result<CLu, LinalgError> {
        CLu::factor(self)
    }

    /// Solve A x = b for a single right-hand side.
    pub fn solve_vec(&self, b: &[Complex64]) -> Result<Vec<Complex64>, LinalgError> {
        let lu = self.lu()?;
        let mut x = b.to_vec();
        lu.solve_in_place(&mut x)?;
        Ok(x)
    }

    pub fn inverse(&self) -> Result<CMat, LinalgError> {
        let lu = self.lu()?;
        lu.inverse()
    }

    /// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
    /// Returns eigenvalues in ascending order and the matching unitary `V`
    /// (columns are eigenvectors): `A = V diag(d) V*`.
    pub fn hermitian_eig(&self) -> Result<(Vec<f64>, CMat), LinalgError> {
        hermitian_eig_jacobi(self)
    }

    /// Cholesky test for Hermitian positive definiteness.
    pub fn cholesky(&self, name: &'static str) -> Result<CMat, LinalgError> {
        assert!(self.is_square());
        let n = self.rows;
        let mut l = CMat::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(LinalgError::NotPositiveDefinite {
                    name,
                    pivot: d,
                    index: j,
                });
            }
            let dj = d.sqrt();
            l[(j, j)] = Complex64::new(dj, 0.0);
            for i in (j + 1)..n {
                let mut s = self[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / dj;
            }
        }
        Ok(l)
    }

    /// Smallest eigenvalue of a Hermitian matrix.
    pub fn min_eigenvalue(&self) -> Result<f64, LinalgError> {
        let (d, _) = self.hermitian_eig()?;
        Ok(d.first().copied().unwrap_or(0.0))
    }

    /// PSD square root with an eigenvalue floor: eigenvalues in
    /// `[-floor_tol, 0)` are clipped to zero, anything below errors out.
    pub fn sqrt_psd(&self, name: &'static str, floor_tol: f64) -> Result<CMat, LinalgError> {
        let (d, v) = self.hermitian_eig()?;
        let scale = d.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let mut sq = Vec::with_capacity(d.len());
        for &x in &d {
            if x < -floor_tol * scale {
                return Err(LinalgError::NotPositiveDefinite {
                    name,
                    pivot: x,
                    index: 0,
                });
            }
            sq.push(x.max(0.0).sqrt());
        }
        let mut out = CMat::zeros(self.rows, self.rows);
        // V diag(sq) V*
        for i in 0..self.rows {
            for j in 0..self.rows {
                let mut s = ZERO_C;
                for (k, &sk) in sq.iter().enumerate() {
                    s += v[(i, k)] * sk * v[(j, k)].conj();
                }
                out[(i, j)] = s;
            }
        }
        Ok(out)
    }
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = Complex64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization with partial pivoting.
#[derive(Debug, Clone)]
pub struct CLu {
    lu: CMat,
    piv: Vec<usize>,
}

impl CLu {
    pub fn factor(a: &CMat) -> Result<Self, LinalgError> {
        if !a.is_square() {
            return Err(LinalgError::DimensionMismatch {
                context: "lu",
                expected: "square matrix".into(),
                actual: format!("{}x{}", a.rows, a.cols),
            });
        }
        let n = a.rows;
        let mut lu = a.clone();
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut pk = k;
            let mut pmax = lu[(k, k)].norm();
            for i in (k + 1)..n {
                let v = lu[(i, k)].norm();
                if v > pmax {
                    pmax = v;
                    pk = i;
                }
            }
            if pmax == 0.0 || !pmax.is_finite() {
                return Err(LinalgError::Singular { index: k });
            }
            if pk != k {
                piv.swap(k, pk);
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(pk, j)];
                    lu[(pk, j)] = tmp;
                }
            }
            let pivot = lu[(k, k)];
            for i in (k + 1)..n {
                let m = lu[(i, k)] / pivot;
                lu[(i, k)] = m;
                if m == ZERO_C {
                    continue;
                }
                for j in (k + 1)..n {
                    let v = lu[(k, j)];
                    lu[(i, j)] -= m * v;
                }
            }
        }
        Ok(CLu { lu, piv })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows()
    }

    pub fn solve_in_place(&self, b: &mut [Complex64]) -> Result<(), LinalgError> {
        let n = self.dim();
        if b.len() != n {
            return Err(LinalgError::DimensionMismatch {
                context: "lu_solve",
                expected: n.to_string(),
                actual: b.len().to_string(),
            });
        }
        let permuted: Vec<Complex64> = self.piv.iter().map(|&p| b[p]).collect();
        b.copy_from_slice(&permuted);
        for i in 1..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.lu[(i, k)] * b[k];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.lu[(i, k)] * b[k];
            }
            b[i] = s / self.lu[(i, i)];
        }
        Ok(())
    }

    pub fn inverse(&self) -> Result<CMat, LinalgError> {
        let n = self.dim();
        let mut out = CMat::zeros(n, n);
        let mut col = vec![ZERO_C; n];
        for j in 0..n {
            col.iter_mut().for_each(|z| *z = ZERO_C);
            col[j] = ONE_C;
            self.solve_in_place(&mut col)?;
            for i in 0..n {
                out[(i, j)] = col[i];
            }
        }
        Ok(out)
    }

    /// 1-norm condition estimate kappa_1 = |A|_1 |A^-1|_1 from the explicit
    /// inverse; fine at the matrix sizes this crate handles.
    pub fn condition_1(&self, a: &CMat) -> Result<f64, LinalgError> {
        Ok(a.one_norm() * self.inverse()?.one_norm())
    }
}

/// out += a * b for row-major flat buffers: a is r x k, b is k x c.
#[inline]
pub(crate) fn gemm_acc(
    out: &mut [Complex64],
    a: &[Complex64],
    b: &[Complex64],
    r: usize,
    k: usize,
    c: usize,
) {
    debug_assert_eq!(a.len(), r * k);
    debug_assert_eq!(b.len(), k * c);
    debug_assert_eq!(out.len(), r * c);
    for i in 0..r {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * c..(i + 1) * c];
        for (kk, &aik) in arow.iter().enumerate() {
            if aik == ZERO_C {
                continue;
            }
            let brow = &b[kk * c..(kk + 1) * c];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
}

fn hermitian_eig_jacobi(a: &CMat) -> Result<(Vec<f64>, CMat), LinalgError> {
    assert!(a.is_square());
    let n = a.rows();
    let mut m = a.clone();
    let mut v = CMat::identity(n);
    if n <= 1 {
        let d = if n == 1 { vec![m[(0, 0)].re] } else { vec![] };
        return Ok((d, v));
    }
    let off = |m: &CMat| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[(i, j)].norm_sqr();
                }
            }
        }
        s.sqrt()
    };
    let scale = a.max_abs().max(1e-300);
    let tol = 1e-14 * scale;
    let max_sweeps = 60;
    for _ in 0..max_sweeps {
        if off(&m) <= tol * (n as f64) {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.norm() <= tol * 1e-2 {
                    continue;
                }
                // Phase so the rotated off-diagonal entry is real, then a
                // standard symmetric 2x2 rotation.
                let phase = apq / apq.norm();
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                let tau = (aqq - app) / (2.0 * apq.norm());
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let sp = phase * s; // complex sine
                // Apply rotation on the left (rows p,q) and right (cols p,q):
                // new_col_p = c*col_p - conj(sp)*col_q ; new_col_q = sp*col_p + c*col_q
                for i in 0..n {
                    let aip = m[(i, p)];
                    let aiq = m[(i, q)];
                    m[(i, p)] = c * aip - sp.conj() * aiq;
                    m[(i, q)] = sp * aip + c * aiq;
                }
                for j in 0..n {
                    let apj = m[(p, j)];
                    let aqj = m[(q, j)];
                    m[(p, j)] = c * apj - sp * aqj;
                    m[(q, j)] = sp.conj() * apj + c * aqj;
                }
                for i in 0..n {
                    let vip = v[(i, p)];
                    let viq = v[(i, q)];
                    v[(i, p)] = c * vip - sp.conj() * viq;
                    v[(i, q)] = sp * vip + c * viq;
                }
            }
        }
    }
    let residual = off(&m);
    if residual > 1e-10 * scale * (n as f64) {
        return Err(LinalgError::EigNoConvergence { residual });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m[(i, i)].re).collect();
    idx.sort_by(|&i, &j| diag[i].partial_cmp(&diag[j]).unwrap());
    let d: Vec<f64> = idx.iter().map(|&i| diag[i]).collect();
    let mut vs = CMat::zeros(n, n);
    for (newc, &oldc) in idx.iter().enumerate() {
        for r in 0..n {
            vs[(r, newc)] = v[(r, oldc)];
        }
    }
    Ok((d, vs))
}

// Serialization contract: a complex number is always an {"re","im"} pair and
// a matrix is a nested array of rows.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ComplexRepr {
    pub re: f64,
    pub im: f64,
}

impl From<Complex64> for ComplexRepr {
    fn from(z: Complex64) -> Self {
        ComplexRepr { re: z.re, im: z.im }
    }
}

impl From<ComplexRepr> for Complex64 {
    fn from(r: ComplexRepr) -> Self {
        Complex64::new(r.re, r.im)
    }
}

impl Serialize for CMat {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.rows))?;
        for i in 0..self.rows {
            let row: Vec<ComplexRepr> = self.row(i).iter().map(|&z| z.into()).collect();
            seq.serialize_element(&row)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for CMat {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct MatVisitor;
        impl<'de> Visitor<'de> for MatVisitor {
            type Value = CMat;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "a nested array of {{re,im}} pairs")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<CMat, A::Error> {
                let mut rows: Vec<Vec<Complex64>> = Vec::new();
                while let Some(row) = seq.next_element::<Vec<ComplexRepr>>()? {
                    rows.push(row.into_iter().map(Complex64::from).collect());
                }
                CMat::from_rows(&rows).map_err(serde::de::Error::custom)
            }
        }
        deserializer.deserialize_seq(MatVisitor)
    }
}
