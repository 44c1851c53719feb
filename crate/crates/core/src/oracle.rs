//! Closed-form solutions of the degenerate Gelfand-Levitan equation: a
//! measure increment with one jump of height A at abscissa a admits
//!
//!   K(x,t) = -Y1(x,a) S(x) Y1(t,a)*,
//!   S(x)   = A^{1/2} (I + A^{1/2} T(x) A^{1/2})^{-1} A^{1/2},
//!   T(x)   = integral of Y1(s,a)* Y1(s,a) over [0,x],
//!   Q(x)   = Q1(x) + i { Y1 S Y1* B - B Y1 S Y1* },
//!
//! over any base system (L1, sigma1). Iterating the construction adds jumps
//! one at a time; every other module uses these as ground truth.

use crate::cmat::{CMat, LinalgError};
use crate::direct::{solve_ivp, DirectError};
use crate::glsolve::{BaseSystem, GlError, SpotCheckConfig};
use crate::measure::{MeasureError, PSD_EPS};
use crate::system::{
    free_e0, sandwich_inverse, JumpLevel, OraclePotential, PotentialSpec, SystemError, SystemSpec,
};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("jump height is not positive semidefinite (min eigenvalue {min_eig:.3e})")]
    NonPsdHeight { min_eig: f64 },
    #[error("iterated jumps require a base with zero or jump-chain potential")]
    UnsupportedBase,
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Direct(#[from] DirectError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Gl(#[from] Box<GlError>),
}

/// Grid used to materialize solution samples of non-free levels.
#[derive(Debug, Clone, Copy)]
pub struct ChainGrid {
    pub x_max: f64,
    pub h: f64,
}

impl Default for ChainGrid {
    fn default() -> Self {
        ChainGrid { x_max: 4.0, h: 1e-3 }
    }
}

/// One validated rank update: base system plus (a, A) with A PSD.
pub struct RankJump {
    pub base: BaseSystem,
    pub a: f64,
    pub height: CMat,
    level: JumpLevel,
}

fn psd_sqrt(height: &CMat) -> Result<CMat, OracleError> {
    let min_eig = height.hermitize().min_eigenvalue()?;
    let scale = height.max_abs().max(1.0);
    if min_eig < -PSD_EPS * scale {
        return Err(OracleError::NonPsdHeight { min_eig });
    }
    Ok(height.hermitize().sqrt_psd("A", PSD_EPS)?)
}

/// Builds the solution data of one level over `base`: closed form for the
/// free base, cached grid samples otherwise.
fn build_level(
    base: &BaseSystem,
    a: f64,
    sqrt_a: CMat,
    grid: &ChainGrid,
) -> Result<JumpLevel, OracleError> {
    if base.system.potential.is_zero() {
        let h_adj_h = base
            .system
            .boundary
            .h_adjoint()
            .matmul(base.system.boundary.h());
        let gram_rate = CMat::identity(base.system.n()).add(&h_adj_h);
        return Ok(JumpLevel::Analytic {
            a,
            sqrt_a,
            gram_rate,
        });
    }
    let sol = solve_ivp(&base.system, a, grid.x_max, grid.h)?;
    let n = base.system.n();
    let dim = base.system.dim();
    let mut y_samples = Vec::with_capacity(sol.n_points());
    let mut t_samples = Vec::with_capacity(sol.n_points());
    let mut t = CMat::zeros(n, n);
    let mut prev_density: Option<CMat> = None;
    for i in 0..sol.n_points() {
        let y = sol.sample_mat(i);
        let density = y.adjoint().matmul(&y);
        if let Some(p) = prev_density.take() {
            let mut inc = p.add(&density);
            inc = inc.scale(Complex64::new(grid.h / 2.0, 0.0));
            t.add_assign(&inc);
        }
        prev_density = Some(density);
        y_samples.push(CMat::from_fn(dim, n, |r, c| y[(r, c)]));
        t_samples.push(t.hermitize());
    }
    Ok(JumpLevel::Sampled {
        a,
        sqrt_a,
        grid_h: grid.h,
        y_samples,
        t_samples,
    })
}

fn chain_of(base: &BaseSystem) -> Result<Vec<JumpLevel>, OracleError> {
    match &base.system.potential {
        PotentialSpec::Zero => Ok(Vec::new()),
        PotentialSpec::Oracle(p) => Ok(p.levels().to_vec()),
        PotentialSpec::Sampled(_) => Err(OracleError::UnsupportedBase),
    }
}

fn assemble_potential(base: &BaseSystem, levels: Vec<JumpLevel>) -> OraclePotential {
    let x_max = levels
        .iter()
        .map(|l| match l {
            JumpLevel::Analytic { .. } => f64::INFINITY,
            JumpLevel::Sampled {
                grid_h, y_samples, ..
            } => (y_samples.len() - 1) as f64 * grid_h,
        })
        .fold(f64::INFINITY, f64::min);
    OraclePotential::assemble(
        base.system.signature.clone(),
        base.system.boundary.clone(),
        levels,
        x_max,
    )
}

impl RankJump {
    pub fn new(
        base: BaseSystem,
        a: f64,
        height: CMat,
        grid: &ChainGrid,
    ) -> Result<Self, OracleError> {
        let sqrt_a = psd_sqrt(&height)?;
        let level = build_level(&base, a, sqrt_a, grid)?;
        Ok(RankJump {
            base,
            a,
            height,
            level,
        })
    }

    fn helper_potential(&self) -> OraclePotential {
        assemble_potential(&self.base, vec![self.level.clone()])
    }

    /// T(x) = integral of Y1(s,a)* Y1(s,a) ds over [0,x]; for the free base
    /// this is x (I + H*H) in closed form.
    pub fn gram_t(&self, x: f64) -> Result<CMat, OracleError> {
        let helper = self.helper_potential();
        let (_, t) = helper.level_solution(&self.level, x)?;
        Ok(t)
    }

    /// K(x,t) = -Y1(x,a) S(x) Y1(t,a)* for t <= x.
    pub fn closed_form_k(&self, x: f64, t: f64) -> Result<CMat, OracleError> {
        debug_assert!(t <= x + 1e-12);
        let helper = self.helper_potential();
        let (yx, tx) = helper.level_solution(&self.level, x)?;
        let (yt, _) = helper.level_solution(&self.level, t)?;
        let sqrt_a = match &self.level {
            JumpLevel::Analytic { sqrt_a, .. } | JumpLevel::Sampled { sqrt_a, .. } => sqrt_a,
        };
        let s = sandwich_inverse(sqrt_a, &tx);
        Ok(yx.matmul(&s).matmul(&yt.adjoint()).scale(-crate::cmat::ONE_C))
    }

    /// Q(x) = Q1(x) + i { Y1 S Y1* B - B Y1 S Y1* }.
    pub fn closed_form_q(&self, x: f64) -> Result<CMat, OracleError> {
        let helper = self.helper_potential();
        let mut q = helper.eval(x)?;
        if !self.base.system.potential.is_zero() {
            q.add_assign(&self.base.system.potential.eval(self.base.system.dim(), x)?);
        }
        Ok(q)
    }
}

/// Free-base closed form via the alternative algebraic route
/// Q(x) = i exp(i a B^-1 x) { S~(x) B - B S~(x) } exp(-i a B^-1 x) with
/// S~(x) = (I over H) A^{1/2}(I + x A^{1/2}(I + H*H)A^{1/2})^{-1} A^{1/2} (I, H*).
/// Kept separate from `closed_form_q` so the two routes can check each other.
pub fn free_case_q(
    sys: &SystemSpec,
    a: f64,
    height: &CMat,
    x: f64,
) -> Result<CMat, OracleError> {
    let n = sys.n();
    let sqrt_a = psd_sqrt(height)?;
    let h_adj_h = sys.boundary.h_adjoint().matmul(sys.boundary.h());
    let gram = CMat::identity(n).add(&h_adj_h).scale(Complex64::new(x, 0.0));
    let core = sandwich_inverse(&sqrt_a, &gram);
    // stacked (I over H) core (I, H*)
    let stacked = sys.boundary.stacked();
    let wide = stacked.adjoint(); // (I, H*) is the adjoint of (I over H)
    let s_tilde = stacked.matmul(&core).matmul(&wide);
    let b = sys.signature.b_full();
    let inner = s_tilde.matmul(&b).sub(&b.matmul(&s_tilde)).scale(crate::cmat::I_C);
    // conjugate by exp(i a B^-1 x) = diag(exp(i a B1^-1 x), exp(-i a B2^-1 x))
    let mut phase = CMat::zeros(2 * n, 2 * n);
    phase.set_block(0, 0, &sys.signature.exp_b1(a, x));
    phase.set_block(n, n, &sys.signature.exp_b2_neg(a, x));
    let phase_inv = phase.adjoint();
    Ok(phase.matmul(&inner).matmul(&phase_inv))
}

/// Builds the jump-chain potential for a list of (abscissa, height) updates
/// applied in the given order over `base` (levels beyond the first are
/// materialized on `grid`).
pub fn jump_chain_with_grid(
    base: &BaseSystem,
    jumps: &[(f64, CMat)],
    grid: &ChainGrid,
) -> Result<OraclePotential, OracleError> {
    let mut levels = chain_of(base)?;
    let mut current = base.clone();
    for (a, height) in jumps {
        let sqrt_a = psd_sqrt(height)?;
        let level = build_level(&current, *a, sqrt_a, grid)?;
        levels.push(level);
        let potential = assemble_potential(base, levels.clone());
        let sigma = current.sigma.with_jump(*a, height.clone())?;
        let system = SystemSpec::new(
            base.system.signature.clone(),
            base.system.boundary.clone(),
            PotentialSpec::Oracle(potential),
        )?;
        current = BaseSystem::perturbed_unchecked(system, sigma);
    }
    match current.system.potential {
        PotentialSpec::Oracle(p) => Ok(p),
        _ => unreachable!("chain always ends with an oracle potential"),
    }
}

pub fn jump_chain(
    base: &BaseSystem,
    jumps: &[(f64, CMat)],
) -> Result<OraclePotential, OracleError> {
    jump_chain_with_grid(base, jumps, &ChainGrid::default())
}

/// Adds one jump to a verified base pair: the returned pair carries the
/// closed-form potential and sigma + A 1_[a, inf), re-verified by a Parseval
/// spot check. A zero height returns the base unchanged.
pub fn add_jump(
    base: &BaseSystem,
    a: f64,
    height: CMat,
    grid: &ChainGrid,
    spot: &SpotCheckConfig,
) -> Result<BaseSystem, OracleError> {
    if height.max_abs() == 0.0 {
        return Ok(base.clone());
    }
    let mut levels = chain_of(base)?;
    let sqrt_a = psd_sqrt(&height)?;
    levels.push(build_level(base, a, sqrt_a, grid)?);
    let potential = assemble_potential(base, levels);
    let sigma = base.sigma.with_jump(a, height)?;
    let system = SystemSpec::new(
        base.system.signature.clone(),
        base.system.boundary.clone(),
        PotentialSpec::Oracle(potential),
    )?;
    BaseSystem::perturbed(system, sigma, spot).map_err(|e| OracleError::Gl(Box::new(e)))
}

/// Exact block closed form for a multi-jump increment over the FREE base:
/// with E(x) = [Y(x,a_1) ... Y(x,a_r)] and the block Gram
/// T(x) = [integral of Y(s,a_i)* Y(s,a_j) ds], the kernel is
/// K(x,t) = -E(x) S(x) E(t)* with the same sandwich formula on the stacked
/// height diag(A_1..A_r). Evaluated in exact arithmetic (closed-form Gram
/// entries), so it serves as a grid-error-free reference.
pub struct FreeMultiJump {
    sys: SystemSpec,
    jumps: Vec<(f64, CMat)>,
    stacked_sqrt: CMat,
}

impl FreeMultiJump {
    pub fn new(base: &BaseSystem, jumps: &[(f64, CMat)]) -> Result<Self, OracleError> {
        if !base.system.potential.is_zero() {
            return Err(OracleError::UnsupportedBase);
        }
        let n = base.system.n();
        let r = jumps.len();
        let mut stacked_sqrt = CMat::zeros(r * n, r * n);
        for (k, (_, height)) in jumps.iter().enumerate() {
            stacked_sqrt.set_block(k * n, k * n, &psd_sqrt(height)?);
        }
        Ok(FreeMultiJump {
            sys: base.system.clone(),
            jumps: jumps.to_vec(),
            stacked_sqrt,
        })
    }

    fn e_row(&self, x: f64) -> CMat {
        let n = self.sys.n();
        let dim = self.sys.dim();
        let mut e = CMat::zeros(dim, self.jumps.len() * n);
        for (k, (a, _)) in self.jumps.iter().enumerate() {
            let y = free_e0(&self.sys.signature, &self.sys.boundary, x, *a);
            e.set_block(0, k * n, &y);
        }
        e
    }

    /// Closed-form block Gram entry
    /// int_0^x e0(s,a_i)* e0(s,a_j) ds
    ///   = int exp(i(a_j - a_i) B1^-1 s) ds + H* int exp(-i(a_j - a_i) B2^-1 s) ds H.
    fn gram_entry(&self, ai: f64, aj: f64, x: f64) -> CMat {
        let sig = &self.sys.signature;
        let n = self.sys.n();
        let c = aj - ai;
        if c.abs() < 1e-300 {
            let h_adj_h = self.sys.boundary.h_adjoint().matmul(self.sys.boundary.h());
            return CMat::identity(n)
                .add(&h_adj_h)
                .scale(Complex64::new(x, 0.0));
        }
        // int_0^x exp(i c M s) ds = (i c M)^(-1) (exp(i c M x) - I) for
        // invertible Hermitian M; evaluate through the cached eigenbasis.
        let int_exp = |expm: &CMat, minv: &CMat| -> CMat {
            // expm = exp(i c M x); (exp - I) then multiply by (i c)^-1 M^-1
            let mut d = expm.clone();
            for k in 0..n {
                d[(k, k)] -= crate::cmat::ONE_C;
            }
            minv.matmul(&d).scale(1.0 / (Complex64::new(0.0, c)))
        };
        let top = int_exp(&sig.exp_b1(c, x), sig.b1_inv());
        let bot = int_exp(&sig.exp_b2_neg(c, x), &sig.b2_inv().scale(-crate::cmat::ONE_C));
        let h = self.sys.boundary.h();
        top.add(&self.sys.boundary.h_adjoint().matmul(&bot).matmul(h))
    }

    fn block_gram(&self, x: f64) -> CMat {
        let n = self.sys.n();
        let r = self.jumps.len();
        let mut t = CMat::zeros(r * n, r * n);
        for i in 0..r {
            for j in 0..r {
                let g = self.gram_entry(self.jumps[i].0, self.jumps[j].0, x);
                t.set_block(i * n, j * n, &g);
            }
        }
        t.hermitize()
    }

    pub fn kernel_at(&self, x: f64, t: f64) -> CMat {
        let s = sandwich_inverse(&self.stacked_sqrt, &self.block_gram(x));
        self.e_row(x)
            .matmul(&s)
            .matmul(&self.e_row(t).adjoint())
            .scale(-crate::cmat::ONE_C)
    }

    pub fn potential_at(&self, x: f64) -> CMat {
        let kxx = self.kernel_at(x, x);
        let b = self.sys.signature.b_full();
        b.matmul(&kxx).sub(&kxx.matmul(&b)).scale(crate::cmat::I_C)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmat::ONE_C;

    fn scalar_jump(a: f64, height: f64) -> (BaseSystem, RankJump) {
        let base = BaseSystem::free_dirac(1);
        let jump = RankJump::new(
            base.clone(),
            a,
            CMat::scalar(1, Complex64::new(height, 0.0)),
            &ChainGrid::default(),
        )
        .unwrap();
        (base, jump)
    }

    #[test]
    fn gram_t_free_closed_form() {
        let (_, jump) = scalar_jump(0.0, 1.0);
        assert!(jump.gram_t(0.0).unwrap().max_abs() == 0.0);
        let t = jump.gram_t(1.5).unwrap();
        assert!((t[(0, 0)] - Complex64::new(3.0, 0.0)).norm() < 1e-14, "T(x) = 2x");
        // Loewner monotone
        let t2 = jump.gram_t(2.0).unwrap();
        assert!(t2.sub(&t).min_eigenvalue().unwrap() >= 0.0);
    }

    #[test]
    fn closed_form_k_values() {
        let (_, jump) = scalar_jump(0.0, 1.0);
        for (x, t) in [(0.0, 0.0), (0.5, 0.2), (2.0, 1.0)] {
            let k = jump.closed_form_k(x, t).unwrap();
            let want = -1.0 / (1.0 + 2.0 * x);
            for r in 0..2 {
                for c in 0..2 {
                    assert!((k[(r, c)] - Complex64::new(want, 0.0)).norm() < 1e-13);
                }
            }
        }
        // A = 0 gives K = 0
        let base = BaseSystem::free_dirac(1);
        let z = RankJump::new(base, 0.0, CMat::zeros(1, 1), &ChainGrid::default()).unwrap();
        assert!(z.closed_form_k(1.0, 0.5).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn closed_form_q_values_and_two_routes() {
        let (base, jump) = scalar_jump(0.0, 1.0);
        let q0 = jump.closed_form_q(0.0).unwrap();
        assert!((q0[(0, 1)] - Complex64::new(0.0, -2.0)).norm() < 1e-13);
        assert!((q0[(1, 0)] - Complex64::new(0.0, 2.0)).norm() < 1e-13);
        let q1 = jump.closed_form_q(1.0).unwrap();
        assert!((q1[(0, 1)] - Complex64::new(0.0, -2.0 / 3.0)).norm() < 1e-13);

        // alternative free-case route agrees, including a /= 0 phases
        for a in [0.0, 1.0, -0.7] {
            let j = RankJump::new(base.clone(), a, CMat::scalar(1, ONE_C), &ChainGrid::default())
                .unwrap();
            for x in [0.0, 0.3, 1.7] {
                let q_a = j.closed_form_q(x).unwrap();
                let q_b = free_case_q(&base.system, a, &CMat::scalar(1, ONE_C), x).unwrap();
                assert!(q_a.sub(&q_b).max_abs() < 1e-12, "routes differ at a={a}, x={x}");
            }
        }
    }

    #[test]
    fn closed_form_q_at_nonzero_abscissa_phases() {
        let (_, jump) = scalar_jump(1.0, 1.0);
        let x = 0.8;
        let q = jump.closed_form_q(x).unwrap();
        let want = Complex64::new(0.0, -2.0) * Complex64::from_polar(1.0, 2.0 * x)
            / (1.0 + 2.0 * x);
        assert!((q[(0, 1)] - want).norm() < 1e-12);
    }

    #[test]
    fn closed_form_k_solves_gl_with_outer_f() {
        // K + int_0^x K(x,s) F(s,t) ds + F(x,t) = 0 with F = Y A Y*
        let (base, jump) = scalar_jump(0.7, 0.6);
        let x = 1.3;
        let t = 0.4;
        let m = 4000;
        let h = x / m as f64;
        let e = |s: f64| free_e0(&base.system.signature, &base.system.boundary, s, 0.7);
        let f = |sx: f64, st: f64| {
            e(sx)
                .matmul(&CMat::scalar(1, Complex64::new(0.6, 0.0)))
                .matmul(&e(st).adjoint())
        };
        let mut acc = CMat::zeros(2, 2);
        for i in 0..=m {
            let s = i as f64 * h;
            let w = if i == 0 || i == m { h / 2.0 } else { h };
            acc.add_assign(
                &jump
                    .closed_form_k(x, s)
                    .unwrap()
                    .matmul(&f(s, t))
                    .scale(Complex64::new(w, 0.0)),
            );
        }
        acc.add_assign(&jump.closed_form_k(x, t).unwrap());
        acc.add_assign(&f(x, t));
        assert!(acc.max_abs() < 1e-6, "GL residual {}", acc.max_abs());
    }

    #[test]
    fn s_matrix_is_psd_and_bounded() {
        let (_, jump) = scalar_jump(0.0, 0.8);
        for x in [0.0, 0.5, 3.0] {
            let t = jump.gram_t(x).unwrap();
            let sqrt_a = CMat::scalar(1, Complex64::new(0.8f64.sqrt(), 0.0));
            let s = sandwich_inverse(&sqrt_a, &t);
            let min = s.min_eigenvalue().unwrap();
            assert!(min >= -1e-14);
            assert!(s.max_abs() <= 0.8 + 1e-14);
        }
    }

    #[test]
    fn multi_jump_closed_form_matches_single() {
        let base = BaseSystem::free_dirac(1);
        let multi = FreeMultiJump::new(&base, &[(0.5, CMat::identity(1))]).unwrap();
        let single = RankJump::new(base, 0.5, CMat::identity(1), &ChainGrid::default()).unwrap();
        for (x, t) in [(0.3, 0.1), (1.9, 1.9), (1.0, 0.0)] {
            let a = multi.kernel_at(x, t);
            let b = single.closed_form_k(x, t).unwrap();
            assert!(a.sub(&b).max_abs() < 1e-12);
        }
    }

    #[test]
    fn add_jump_zero_height_is_identity() {
        let base = BaseSystem::free_dirac(1);
        let out = add_jump(
            &base,
            1.0,
            CMat::zeros(1, 1),
            &ChainGrid::default(),
            &SpotCheckConfig::default(),
        )
        .unwrap();
        assert!(out.is_free());
    }
}
