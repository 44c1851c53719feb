//! Matrix spectral measures sigma = sigma0 + Sigma: the free part with slope
//! B1^-1/(2 pi), a finite list of jumps, and an optional sampled density for
//! the absolutely continuous part of the increment.

use crate::cmat::{CMat, LinalgError};
use crate::system::BlockSignature;
use num_complex::Complex64;
use thiserror::Error;

/// Eigenvalue slack accepted as rounding noise in PSD checks.
pub const PSD_EPS: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("jump {index} at a={a} has a non-PSD height (min eigenvalue {min_eig:.3e})")]
    NonPsdJump { index: usize, a: f64, min_eig: f64 },
    #[error("jump abscissas must be strictly increasing (violated at index {index})")]
    JumpOrder { index: usize },
    #[error("density grid must be strictly increasing with at least 2 nodes")]
    BadDensityGrid,
    #[error("density sample {index} violates the increasing-sigma gate: min eigenvalue of B1^-1/(2pi) + Phi is {min_eig:.3e}")]
    SigmaNotIncreasing { index: usize, min_eig: f64 },
    #[error("density sample {index} has dimension {actual}, expected {expected}")]
    DensityDimension {
        index: usize,
        expected: usize,
        actual: usize,
    },
    #[error("density weights must be positive and match the grid length")]
    BadDensityWeights,
}

/// One point mass: Sigma gains A * 1_[a, inf).
#[derive(Debug, Clone)]
pub struct Jump {
    pub a: f64,
    pub height: CMat,
}

/// Sampled density of the increment: d Sigma_ac = Phi(lambda) d lambda.
/// `weights` are the quadrature masses of each sample; when built from a
/// plain grid they are trapezoid weights, piecewise-constant constructions
/// supply cell masses directly.
#[derive(Debug, Clone)]
pub struct DensityPart {
    pub lambda: Vec<f64>,
    pub phi: Vec<CMat>,
    pub weights: Vec<f64>,
}

impl DensityPart {
    pub fn from_grid(lambda: Vec<f64>, phi: Vec<CMat>) -> Result<Self, MeasureError> {
        if lambda.len() < 2 || lambda.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MeasureError::BadDensityGrid);
        }
        if phi.len() != lambda.len() {
            return Err(MeasureError::BadDensityWeights);
        }
        let m = lambda.len();
        let mut weights = vec![0.0; m];
        for i in 0..m - 1 {
            let half = (lambda[i + 1] - lambda[i]) / 2.0;
            weights[i] += half;
            weights[i + 1] += half;
        }
        Ok(DensityPart {
            lambda,
            phi,
            weights,
        })
    }

    pub fn with_weights(
        lambda: Vec<f64>,
        phi: Vec<CMat>,
        weights: Vec<f64>,
    ) -> Result<Self, MeasureError> {
        if lambda.is_empty() || lambda.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MeasureError::BadDensityGrid);
        }
        if phi.len() != lambda.len()
            || weights.len() != lambda.len()
            || weights.iter().any(|&w| !(w > 0.0))
        {
            return Err(MeasureError::BadDensityWeights);
        }
        Ok(DensityPart {
            lambda,
            phi,
            weights,
        })
    }
}

/// sigma = sigma0 + Sigma. The base slope B1^-1/(2 pi) is copied out of the
/// signature at construction; jumps and density describe the increment.
#[derive(Debug, Clone)]
pub struct SpectralMeasure {
    n: usize,
    sigma0_slope: CMat,
    jumps: Vec<Jump>,
    density: Option<DensityPart>,
}

impl SpectralMeasure {
    /// The free measure: sigma = sigma0, empty increment.
    pub fn free(sig: &BlockSignature) -> Self {
        SpectralMeasure {
            n: sig.n(),
            sigma0_slope: sig.sigma0_slope(),
            jumps: Vec::new(),
            density: None,
        }
    }

    pub fn with_parts(
        sig: &BlockSignature,
        jumps: Vec<Jump>,
        density: Option<DensityPart>,
    ) -> Result<Self, MeasureError> {
        let mut m = SpectralMeasure {
            n: sig.n(),
            sigma0_slope: sig.sigma0_slope(),
            jumps,
            density,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&mut self) -> Result<(), MeasureError> {
        for idx in 1..self.jumps.len() {
            if self.jumps[idx - 1].a >= self.jumps[idx].a {
                return Err(MeasureError::JumpOrder { index: idx });
            }
        }
        for (index, j) in self.jumps.iter_mut().enumerate() {
            if j.height.rows() != self.n {
                return Err(LinalgError::DimensionMismatch {
                    context: "jump_height",
                    expected: format!("{0}x{0}", self.n),
                    actual: format!("{}x{}", j.height.rows(), j.height.cols()),
                }
                .into());
            }
            let min_eig = j.height.hermitize().min_eigenvalue()?;
            let scale = j.height.max_abs().max(1.0);
            if min_eig < -PSD_EPS * scale {
                return Err(MeasureError::NonPsdJump {
                    index,
                    a: j.a,
                    min_eig,
                });
            }
            j.height = j.height.hermitize();
        }
        if let Some(d) = &self.density {
            for (index, phi) in d.phi.iter().enumerate() {
                if phi.rows() != self.n || phi.cols() != self.n {
                    return Err(MeasureError::DensityDimension {
                        index,
                        expected: self.n,
                        actual: phi.rows(),
                    });
                }
                // Signed densities are fine as long as sigma stays
                // increasing: B1^-1/(2 pi) + Phi must be PSD pointwise.
                let total = self.sigma0_slope.add(&phi.hermitize());
                let min_eig = total.min_eigenvalue()?;
                let scale = total.max_abs().max(1.0);
                if min_eig < -PSD_EPS * scale {
                    return Err(MeasureError::SigmaNotIncreasing { index, min_eig });
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sigma0_slope(&self) -> &CMat {
        &self.sigma0_slope
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn density(&self) -> Option<&DensityPart> {
        self.density.as_ref()
    }

    pub fn is_trivial(&self) -> bool {
        self.jumps.is_empty() && self.density.is_none()
    }

    /// Adds one jump, keeping abscissas sorted; equal abscissas merge by
    /// summing heights.
    pub fn with_jump(&self, a: f64, height: CMat) -> Result<Self, MeasureError> {
        let mut jumps = self.jumps.clone();
        match jumps.binary_search_by(|j| j.a.partial_cmp(&a).unwrap()) {
            Ok(k) => jumps[k].height = jumps[k].height.add(&height),
            Err(k) => jumps.insert(
                k,
                Jump {
                    a,
                    height,
                },
            ),
        }
        let mut m = SpectralMeasure {
            n: self.n,
            sigma0_slope: self.sigma0_slope.clone(),
            jumps,
            density: self.density.clone(),
        };
        m.validate()?;
        Ok(m)
    }

    /// Increment Sigma(lambda) = sum of jump heights with a_j <= lambda plus
    /// the partial quadrature sum of the density. Exact for jumps; for the
    /// density part this is the discrete mass of samples up to lambda.
    pub fn increment_at(&self, lambda: f64) -> CMat {
        let mut s = CMat::zeros(self.n, self.n);
        for j in &self.jumps {
            if j.a <= lambda {
                s.add_assign(&j.height);
            }
        }
        if let Some(d) = &self.density {
            for ((&lm, phi), &w) in d.lambda.iter().zip(&d.phi).zip(&d.weights) {
                let signed = if lm >= 0.0 && lm <= lambda {
                    1.0
                } else if lm < 0.0 && lm > lambda {
                    -1.0
                } else {
                    0.0
                };
                if signed != 0.0 {
                    s.axpy(Complex64::new(signed * w, 0.0), phi);
                }
            }
        }
        s
    }
}
