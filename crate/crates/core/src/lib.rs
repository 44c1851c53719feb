//! Direct and inverse spectral problems for first-order 2n x 2n systems
//! L = B (1/i) d/dx + Q(x) on the half line, with B = diag(B1, -B2) and an
//! off-diagonal Hermitian potential Q.
//!
//! The crate covers both directions of the problem at desk scale:
//!
//! - `direct`: integrate the initial value problem for Y(x, lambda), apply
//!   the generalized Fourier transform, and check the Parseval identity
//!   against a matrix spectral measure.
//! - `transform`: the triangular transformation kernel K with
//!   Y = (I + K) e0, discrete Volterra inversion, and the kernel combination
//!   F = R + R* + R R*.
//! - `glsolve`: build the transition kernel from a measure increment, solve
//!   the Gelfand-Levitan equation, and extract the reconstructed potential.
//! - `oracle`: closed-form degenerate solutions (spectral jumps) used as
//!   ground truth everywhere else.
//! - `sigma`: constructors for measure inputs, including the Rademacher
//!   rank-p density construction and windowed density perturbations.
//!
//! All types are immutable after construction and all operations are pure;
//! everything can be shared across threads freely. Numeric paths are
//! deterministic: fixed quadratures, fixed iteration orders, no randomness.

pub mod cmat;
pub mod direct;
pub mod glsolve;
pub mod kernel;
pub mod measure;
pub mod oracle;
pub mod sigma;
pub mod system;
pub mod transform;

pub use cmat::{CMat, ComplexRepr, LinalgError};
pub use kernel::{FullKernelGrid, KernelGrid, UniformGrid};
pub use measure::{DensityPart, Jump, SpectralMeasure};
pub use system::{
    block_assemble, block_decompose, validate_bc, BlockSignature, BoundaryMatrix, PotentialSpec,
    SampledPotential, SystemSpec,
};
