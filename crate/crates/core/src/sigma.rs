//! Constructors for spectral-measure inputs: the free measure, windowed
//! density perturbations, and the Rademacher construction that prescribes a
//! pointwise density rank p on a breakpoint window.

use crate::cmat::{CMat, LinalgError};
use crate::measure::{DensityPart, MeasureError, SpectralMeasure};
use crate::system::BlockSignature;
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SigmaError {
    #[error("multiplicity p = {p} out of range 1..={n}")]
    POutOfRange { p: usize, n: usize },
    #[error("breakpoint data not admissible: {clause}")]
    Breakpoints { clause: String },
    #[error("degenerate window: alpha = {alpha} must be strictly below beta = {beta}")]
    DegenerateWindow { alpha: f64, beta: f64 },
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// The free measure sigma0 with slope B1^-1/(2 pi).
pub fn sigma_free(sig: &BlockSignature) -> SpectralMeasure {
    SpectralMeasure::free(sig)
}

/// The period-one square wave: +1 on (0, 1/2], -1 on (1/2, 1].
pub fn rademacher_base(x: f64) -> f64 {
    let mut frac = x - x.floor();
    if frac == 0.0 {
        frac = 1.0;
    }
    if frac <= 0.5 {
        1.0
    } else {
        -1.0
    }
}

/// psi_j(x) = psi_1(2^j x) for j >= 1; the family is orthonormal on [0,1]
/// with zero mean.
pub fn rademacher(j: u32, x: f64) -> f64 {
    assert!(j >= 1, "rademacher index starts at 1");
    rademacher_base((2f64).powi(j as i32) * x)
}

/// Strictly increasing breakpoints x_nu over a finite index window with
/// x_0 = 0, plus the increasing values mu(a_{nu j}) at the refined abscissas
/// a_{nu j} = x_nu + j 2^{-n-p} (x_{nu+1} - x_nu).
#[derive(Debug, Clone)]
pub struct AdmissibleBreakpoints {
    xs: Vec<f64>,
    zero_index: usize,
    mu: Vec<f64>,
    /// refinement exponent n + p the mu grid was built for
    refine_exp: u32,
    sq_sum: f64,
}

impl AdmissibleBreakpoints {
    /// `xs` must contain 0 at `zero_index`; `mu` holds values at all refined
    /// abscissas in order, (len(xs)-1) * 2^refine_exp + 1 of them.
    pub fn new(
        xs: Vec<f64>,
        zero_index: usize,
        mu: Vec<f64>,
        refine_exp: u32,
    ) -> Result<Self, SigmaError> {
        if xs.len() < 2 {
            return Err(SigmaError::Breakpoints {
                clause: "need at least two breakpoints".into(),
            });
        }
        if xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SigmaError::Breakpoints {
                clause: "breakpoints must be strictly increasing".into(),
            });
        }
        if zero_index >= xs.len() || xs[zero_index] != 0.0 {
            return Err(SigmaError::Breakpoints {
                clause: "x_0 = 0 must be a breakpoint at zero_index".into(),
            });
        }
        let cells_per = 1usize << refine_exp;
        let want = (xs.len() - 1) * cells_per + 1;
        if mu.len() != want {
            return Err(SigmaError::Breakpoints {
                clause: format!("mu must have {want} refined values, got {}", mu.len()),
            });
        }
        if mu.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SigmaError::Breakpoints {
                clause: "mu must be strictly increasing at the refined abscissas".into(),
            });
        }
        let sq_sum = xs.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
        Ok(AdmissibleBreakpoints {
            xs,
            zero_index,
            mu,
            refine_exp,
            sq_sum,
        })
    }

    /// A strictly increasing mu is p-admissible for every p; this samples mu
    /// at the refined abscissas of `xs`.
    pub fn from_function(
        xs: Vec<f64>,
        zero_index: usize,
        refine_exp: u32,
        mu: impl Fn(f64) -> f64,
    ) -> Result<Self, SigmaError> {
        let cells_per = 1usize << refine_exp;
        let mut values = Vec::with_capacity((xs.len() - 1) * cells_per + 1);
        for k in 0..xs.len() - 1 {
            let w = xs[k + 1] - xs[k];
            for j in 0..cells_per {
                values.push(mu(xs[k] + j as f64 / cells_per as f64 * w));
            }
        }
        values.push(mu(*xs.last().unwrap()));
        Self::new(xs, zero_index, values, refine_exp)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.xs
    }

    pub fn zero_index(&self) -> usize {
        self.zero_index
    }

    /// Sum of squared gaps over the window.
    pub fn square_sum(&self) -> f64 {
        self.sq_sum
    }
}

/// One refined cell of the construction.
#[derive(Debug, Clone)]
pub struct MultiplicityCell {
    pub lambda_mid: f64,
    pub width: f64,
    /// sigma-density on the cell (constant), rank p PSD.
    pub phi: CMat,
    /// time-change density f = width / (mu increment) on the cell.
    pub f_value: f64,
}

/// The measure produced by the Rademacher construction, with the structural
/// quantities needed to verify it.
#[derive(Debug, Clone)]
pub struct MultiplicityMeasure {
    pub measure: SpectralMeasure,
    pub cells: Vec<MultiplicityCell>,
    pub p: usize,
    pub sq_sum: f64,
    /// max over breakpoints of |sigma(x_nu) - sigma0(x_nu)|.
    pub breakpoint_residual: f64,
    /// integral over the window of |sigma(l) - sigma0(l)| dl.
    pub tail_integral: f64,
    /// constant C with tail_integral <= C * sq_sum by construction.
    pub tail_constant: f64,
}

/// Builds the rank-p density measure: on every refined cell,
/// Phi = p^-1 (2 pi)^-1 B1^{-1/2} psi* psi B1^{-1/2} with psi the p x n
/// Rademacher block evaluated at the cell midpoint, and cell mass equal to
/// the cell width (the reparametrization fixes rho(a_{nu j}) = a_{nu j}).
pub fn multiplicity_measure(
    sig: &BlockSignature,
    p: usize,
    bp: &AdmissibleBreakpoints,
) -> Result<MultiplicityMeasure, SigmaError> {
    let n = sig.n();
    if p < 1 || p > n {
        return Err(SigmaError::POutOfRange { p, n });
    }
    let refine_exp = (n + p) as u32;
    if bp.refine_exp != refine_exp {
        return Err(SigmaError::Breakpoints {
            clause: format!(
                "mu was refined with exponent {}, construction needs n + p = {}",
                bp.refine_exp, refine_exp
            ),
        });
    }
    let cells_per = 1usize << refine_exp;
    let b1_inv_sqrt = sig.b1_inv().sqrt_psd("B1^-1", 1e-12)?;
    let slope = sig.sigma0_slope();
    let two_pi = 2.0 * std::f64::consts::PI;

    let mut cells = Vec::with_capacity((bp.xs.len() - 1) * cells_per);
    let mut lambda_mid = Vec::new();
    let mut phis_sigma = Vec::new();
    let mut weights = Vec::new();
    for k in 0..bp.xs.len() - 1 {
        let x0 = bp.xs[k];
        let w_int = bp.xs[k + 1] - x0;
        for j in 0..cells_per {
            let u_mid = (j as f64 + 0.5) / cells_per as f64;
            // psi0 block at the midpoint: entry (r,c) = psi_{r+c+1}(u)
            let psi = CMat::from_fn(p, n, |r, c| {
                Complex64::new(rademacher((r + c + 1) as u32, u_mid), 0.0)
            });
            let phi = b1_inv_sqrt
                .matmul(&psi.adjoint().matmul(&psi))
                .matmul(&b1_inv_sqrt)
                .scale(Complex64::new(1.0 / (p as f64 * two_pi), 0.0))
                .hermitize();
            let width = w_int / cells_per as f64;
            let mid = x0 + u_mid * w_int;
            let mu_lo = bp.mu[k * cells_per + j];
            let mu_hi = bp.mu[k * cells_per + j + 1];
            cells.push(MultiplicityCell {
                lambda_mid: mid,
                width,
                phi: phi.clone(),
                f_value: width / (mu_hi - mu_lo),
            });
            lambda_mid.push(mid);
            phis_sigma.push(phi.sub(&slope));
            weights.push(width);
        }
    }

    let density = DensityPart::with_weights(lambda_mid, phis_sigma, weights)?;
    let measure = SpectralMeasure::with_parts(sig, Vec::new(), Some(density))?;

    // Breakpoint identity: partial sums of (Phi - slope) * width vanish at
    // every breakpoint.
    let mut breakpoint_residual = 0.0f64;
    {
        let zero_cell = bp.zero_index * cells_per;
        let mut running = CMat::zeros(n, n);
        // forward from 0
        for (c, cell) in cells.iter().enumerate().skip(zero_cell) {
            running.add_assign(&cell.phi.sub(&slope).scale(Complex64::new(cell.width, 0.0)));
            if (c + 1) % cells_per == 0 {
                breakpoint_residual = breakpoint_residual.max(running.max_abs());
            }
        }
        // backward from 0
        let mut running = CMat::zeros(n, n);
        for c in (0..zero_cell).rev() {
            let cell = &cells[c];
            running.add_assign(&cell.phi.sub(&slope).scale(Complex64::new(cell.width, 0.0)));
            if c % cells_per == 0 {
                breakpoint_residual = breakpoint_residual.max(running.max_abs());
            }
        }
    }

    // Window tail bound: |sigma - sigma0| grows at most linearly from each
    // breakpoint with rate bounded by the construction constants.
    let c_phi = cells
        .iter()
        .map(|c| c.phi.frob_norm())
        .fold(0.0, f64::max);
    let tail_constant = (c_phi + slope.frob_norm()) / 2.0;
    let mut tail_integral = 0.0;
    {
        let zero_cell = bp.zero_index * cells_per;
        // piecewise-linear sigma - sigma0 inside cells; per-interval reset at
        // breakpoints is implicit in the exact breakpoint identity.
        let mut deficit = CMat::zeros(n, n);
        for cell in cells.iter().skip(zero_cell) {
            let rate = cell.phi.sub(&slope);
            let end = deficit.add(&rate.scale(Complex64::new(cell.width, 0.0)));
            tail_integral += (deficit.frob_norm() + end.frob_norm()) / 2.0 * cell.width;
            deficit = end;
        }
        let mut deficit = CMat::zeros(n, n);
        for c in (0..zero_cell).rev() {
            let cell = &cells[c];
            let rate = cell.phi.sub(&slope);
            let end = deficit.add(&rate.scale(Complex64::new(cell.width, 0.0)));
            tail_integral += (deficit.frob_norm() + end.frob_norm()) / 2.0 * cell.width;
            deficit = end;
        }
    }

    Ok(MultiplicityMeasure {
        measure,
        cells,
        p,
        sq_sum: bp.sq_sum,
        breakpoint_residual,
        tail_integral,
        tail_constant,
    })
}

/// sigma0 plus a density supported on [alpha, beta], sampled uniformly.
/// Signed samples are accepted as long as sigma stays increasing.
pub fn windowed_perturbation(
    sig: &BlockSignature,
    alpha: f64,
    beta: f64,
    phi: Vec<CMat>,
) -> Result<SpectralMeasure, SigmaError> {
    if !(alpha < beta) {
        return Err(SigmaError::DegenerateWindow { alpha, beta });
    }
    if phi.is_empty() {
        return Ok(SpectralMeasure::free(sig));
    }
    if phi.iter().all(|m| m.max_abs() == 0.0) {
        return Ok(SpectralMeasure::free(sig));
    }
    let m = phi.len().max(2);
    let mut phi = phi;
    if phi.len() == 1 {
        phi.push(phi[0].clone());
    }
    let lambda: Vec<f64> = (0..m)
        .map(|k| alpha + (beta - alpha) * k as f64 / (m - 1) as f64)
        .collect();
    let density = DensityPart::from_grid(lambda, phi)?;
    Ok(SpectralMeasure::with_parts(sig, Vec::new(), Some(density))?)
}
