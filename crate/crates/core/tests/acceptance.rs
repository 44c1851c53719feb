//! Acceptance suite: every criterion runs at its stated tolerance and
//! prints one pass/fail line. Run with
//! `cargo test -p specline-core --test acceptance -- --nocapture`.

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use specline_core::direct::{
    free_solution_samples, parseval_residual, solve_ivp, TestFunction,
};
use specline_core::glsolve::{
    build_f, gl_residual, inverse_solve, BaseSystem, InverseConfig, SpotCheckConfig,
};
use specline_core::measure::{DensityPart, Jump};
use specline_core::oracle::{self, ChainGrid, FreeMultiJump, RankJump};
use specline_core::sigma::{multiplicity_measure, AdmissibleBreakpoints};
use specline_core::system::PotentialSpec;
use specline_core::transform::{apply_kernel, goursat_kernel, kernel_f_from_r, volterra_invert};
use specline_core::{
    BlockSignature, BoundaryMatrix, CMat, SampledPotential, SpectralMeasure, SystemSpec,
};
use std::time::{Duration, Instant};

struct Harness {
    failures: Vec<String>,
}

impl Harness {
    fn new() -> Self {
        Harness {
            failures: Vec::new(),
        }
    }

    fn criterion(
        &mut self,
        id: &str,
        limit: Option<Duration>,
        run: impl FnOnce() -> Result<String, String>,
    ) {
        let t0 = Instant::now();
        let outcome = run();
        let dt = t0.elapsed();
        match outcome {
            Ok(detail) => {
                let mut line = format!("criterion {id}: PASS - {detail} ({:.1} s)", dt.as_secs_f64());
                if let Some(lim) = limit {
                    if dt > lim {
                        line = format!(
                            "criterion {id}: FAIL - runtime {:.1} s exceeds {:.0} s ({detail})",
                            dt.as_secs_f64(),
                            lim.as_secs_f64()
                        );
                        self.failures.push(line.clone());
                    }
                }
                println!("{line}");
            }
            Err(reason) => {
                let line = format!("criterion {id}: FAIL - {reason} ({:.1} s)", dt.as_secs_f64());
                println!("{line}");
                self.failures.push(line);
            }
        }
    }
}

fn scalar(v: f64) -> CMat {
    CMat::scalar(1, Complex64::new(v, 0.0))
}

fn dirac_base() -> BaseSystem {
    BaseSystem::free_dirac(1)
}

/// criterion 1: free Parseval for the scalar Dirac system.
fn criterion_1() -> Result<String, String> {
    let system = SystemSpec::free_dirac(1);
    let sigma = SpectralMeasure::free(&system.signature);
    let f = TestFunction::indicator(2, 1.0, 1e-3, 0, 0.0, 1.0)
        .map_err(|e| e.to_string())?;
    let r = parseval_residual(&system, &sigma, &f, &f, 400.0, 0.01).map_err(|e| e.to_string())?;
    if (r.space_side - Complex64::new(1.0, 0.0)).norm() > 1e-12 {
        return Err(format!("space side {} differs from 1", r.space_side));
    }
    if r.residual <= 2e-3 {
        Ok(format!(
            "free Parseval residual {:.3e} <= 2e-3 (tail indicator {:.2e})",
            r.residual, r.tail_indicator
        ))
    } else {
        Err(format!("residual {:.3e} > 2e-3", r.residual))
    }
}

/// One degenerate round trip: inverse solve vs the closed form.
fn degenerate_roundtrip(a: f64, height: f64, h: f64) -> Result<f64, String> {
    let base = dirac_base();
    let sigma = base
        .sigma
        .clone()
        .with_jump(a, scalar(height))
        .map_err(|e| e.to_string())?;
    let sol = inverse_solve(&base, &sigma, 2.0, h, &InverseConfig::default())
        .map_err(|e| e.to_string())?;
    let jump = RankJump::new(base, a, scalar(height), &ChainGrid::default())
        .map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (x, q) in sol
        .potential
        .grid()
        .iter()
        .zip(sol.potential.samples())
    {
        let want = jump.closed_form_q(*x).map_err(|e| e.to_string())?;
        worst = worst.max(q.sub(&want).frob_norm());
    }
    Ok(worst)
}

/// criterion 2: degenerate round trips at h = 1e-3 on [0, 2].
fn criterion_2(harness: &mut Harness) {
    for (tag, a, height) in [("a=0 A=1", 0.0, 1.0), ("a=1 A=1", 1.0, 1.0), ("a=0 A=1/2", 0.0, 0.5)]
    {
        harness.criterion(
            &format!("2 [{tag}]"),
            Some(Duration::from_secs(60)),
            || {
                let err = degenerate_roundtrip(a, height, 1e-3)?;
                if err <= 1e-4 {
                    Ok(format!("max |Q_num - Q_oracle| = {err:.3e} <= 1e-4"))
                } else {
                    Err(format!("max |Q_num - Q_oracle| = {err:.3e} > 1e-4"))
                }
            },
        );
    }
}

/// criterion 3: two-jump measure vs two iterated closed-form additions.
fn criterion_3() -> Result<String, String> {
    let base = dirac_base();
    let h = 1e-3;
    let sigma = base
        .sigma
        .clone()
        .with_jump(-1.0, scalar(1.0))
        .map_err(|e| e.to_string())?
        .with_jump(1.0, scalar(1.0))
        .map_err(|e| e.to_string())?;
    let sol = inverse_solve(&base, &sigma, 2.0, h, &InverseConfig::default())
        .map_err(|e| e.to_string())?;
    let grid = ChainGrid { x_max: 2.0, h };
    let spot = SpotCheckConfig::default();
    let step1 =
        oracle::add_jump(&base, -1.0, scalar(1.0), &grid, &spot).map_err(|e| e.to_string())?;
    let step2 =
        oracle::add_jump(&step1, 1.0, scalar(1.0), &grid, &spot).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let dim = 2;
    for (x, q) in sol.potential.grid().iter().zip(sol.potential.samples()) {
        let want = step2
            .system
            .potential
            .eval(dim, *x)
            .map_err(|e| e.to_string())?;
        worst = worst.max(q.sub(&want).max_abs());
    }
    if worst <= 1e-3 {
        Ok(format!(
            "sup |Q_inverse - Q_iterated| = {worst:.3e} <= 1e-3 on [0,2]"
        ))
    } else {
        Err(format!("sup difference {worst:.3e} > 1e-3"))
    }
}

fn oracle_jump_system(a: f64, height: f64) -> SystemSpec {
    let base = dirac_base();
    let chain = oracle::jump_chain(&base, &[(a, scalar(height))]).unwrap();
    SystemSpec::new(
        base.system.signature.clone(),
        base.system.boundary.clone(),
        PotentialSpec::Oracle(chain),
    )
    .unwrap()
}

/// Max relative deviation between the kernel route (I + K) e0 and the
/// integrated solution over the grid.
fn cross_solver_deviation(
    system: &SystemSpec,
    kernel: &specline_core::KernelGrid,
    lambda: f64,
    x_max: f64,
    h: f64,
) -> Result<f64, String> {
    let e0 = free_solution_samples(system, lambda, x_max, h).map_err(|e| e.to_string())?;
    let via_kernel = apply_kernel(kernel, &e0).map_err(|e| e.to_string())?;
    let via_ivp = solve_ivp(system, lambda, x_max, h).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for i in 0..via_ivp.n_points() {
        let a = via_kernel.sample(i);
        let b = via_ivp.sample(i);
        let num: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let den: f64 = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        worst = worst.max(num / den.max(1.0));
    }
    Ok(worst)
}

/// criterion 4: transformation-operator route matches the integrator.
fn criterion_4() -> Result<String, String> {
    let system = oracle_jump_system(0.0, 1.0);
    let h = 1e-3;
    let g = goursat_kernel(&system, 2.0, h).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for lambda in [0.0, 1.0, -1.0, 5.0, -5.0] {
        let dev = cross_solver_deviation(&system, &g.kernel, lambda, 2.0, h)?;
        worst = worst.max(dev);
    }
    if worst <= 1e-3 {
        Ok(format!(
            "max relative deviation {worst:.3e} <= 1e-3 over lambda in {{0, +-1, +-5}}"
        ))
    } else {
        Err(format!("relative deviation {worst:.3e} > 1e-3"))
    }
}

/// criterion 5: measure-side F equals the kernel-algebra F on the square.
fn criterion_5() -> Result<String, String> {
    let base = dirac_base();
    let h = 5e-3;
    let sigma = base
        .sigma
        .clone()
        .with_jump(0.0, scalar(1.0))
        .map_err(|e| e.to_string())?;
    let (f_measure, _) = build_f(&base, &sigma, 2.0, h).map_err(|e| e.to_string())?;
    let sol = specline_core::glsolve::gl_solve(&f_measure, 1e12).map_err(|e| e.to_string())?;
    let r = volterra_invert(&sol.kernel);
    let f_algebra = kernel_f_from_r(&r);
    let np = f_measure.grid().n_points();
    let mut worst = 0.0f64;
    for i in 0..np {
        for j in 0..np {
            worst = worst.max(f_algebra.get(i, j).sub(&f_measure.get(i, j)).max_abs());
        }
    }
    if worst <= 1e-3 {
        Ok(format!(
            "max |F_algebra - F_measure| = {worst:.3e} <= 1e-3 on [0,2]^2"
        ))
    } else {
        Err(format!("kernel-algebra identity residual {worst:.3e} > 1e-3"))
    }
}

fn random_unitary_ish(rng: &mut ChaCha8Rng, n: usize) -> CMat {
    loop {
        let h = CMat::from_fn(n, n, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        if let Ok(lu) = h.lu() {
            if lu.condition_1(&h).map(|c| c < 50.0).unwrap_or(false) {
                return h;
            }
        }
    }
}

/// criterion 6: structural invariants across 20 seeded random inputs.
fn criterion_6() -> Result<String, String> {
    let mut worst_fsym = 0.0f64;
    let mut worst_presym = 0.0f64;
    let mut worst_boundary = 0.0f64;
    let mut worst_gl = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1 + (seed % 2) as usize;
        let c = CMat::from_fn(n, n, |_, _| {
            Complex64::new(rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7))
        });
        let b2 = c
            .adjoint()
            .matmul(&c)
            .add(&CMat::scalar(n, Complex64::new(rng.gen_range(0.5..1.5), 0.0)));
        let h_mat = random_unitary_ish(&mut rng, n);
        let b1 = h_mat.adjoint().matmul(&b2).matmul(&h_mat).hermitize();
        let sig = BlockSignature::new(b1, b2).map_err(|e| format!("seed {seed}: {e}"))?;
        let bc =
            BoundaryMatrix::new(h_mat, &sig).map_err(|e| format!("seed {seed}: {e}"))?;
        let base = BaseSystem::free(sig.clone(), bc);

        // 1 - 3 jumps, PSD heights of modest norm
        let n_jumps = 1 + (rng.gen_range(0..3) as usize);
        let mut jumps = Vec::new();
        let mut a = rng.gen_range(-2.0..-1.0);
        for _ in 0..n_jumps {
            let v = CMat::from_fn(n, 1, |_, _| {
                Complex64::new(rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7))
            });
            let height = v.matmul(&v.adjoint());
            jumps.push(Jump { a, height });
            a += rng.gen_range(0.5..1.5);
        }
        // half the seeds also carry a small density window
        let density = if seed % 2 == 0 {
            let m = 17;
            let lambda: Vec<f64> = (0..m).map(|k| -1.0 + 2.0 * k as f64 / (m - 1) as f64).collect();
            let amp = rng.gen_range(0.002..0.01);
            let phi: Vec<CMat> = lambda
                .iter()
                .map(|&l| CMat::scalar(n, Complex64::new(amp * (1.0 - l * l).max(0.0), 0.0)))
                .collect();
            Some(DensityPart::from_grid(lambda, phi).map_err(|e| format!("seed {seed}: {e}"))?)
        } else {
            None
        };
        let sigma = SpectralMeasure::with_parts(&sig, jumps, density)
            .map_err(|e| format!("seed {seed}: {e}"))?;

        let sol = inverse_solve(&base, &sigma, 2.0, 5e-3, &InverseConfig::default())
            .map_err(|e| format!("seed {seed}: {e}"))?;
        let d = &sol.diagnostics;
        worst_fsym = worst_fsym.max(d.f_symmetry_residual);
        worst_presym = worst_presym.max(d.k_diag_presym_max);
        worst_boundary = worst_boundary.max(d.k_boundary_residual);
        worst_gl = worst_gl.max(d.gl_residual_max);
        if d.f_symmetry_residual > 1e-8 {
            return Err(format!(
                "seed {seed}: F symmetry {:.3e} > 1e-8",
                d.f_symmetry_residual
            ));
        }
        if d.k_diag_presym_max > 1e-4 {
            return Err(format!(
                "seed {seed}: K(x,x) pre-symmetrization {:.3e} > 1e-4",
                d.k_diag_presym_max
            ));
        }
        if sol.kernel.diag_hermiticity_residual() > 1e-8 {
            return Err(format!("seed {seed}: post-symmetrization diagonal not Hermitian"));
        }
        if d.k_boundary_residual > 1e-3 {
            return Err(format!(
                "seed {seed}: boundary residual {:.3e} > 1e-3",
                d.k_boundary_residual
            ));
        }
        if d.gl_residual_max > 1e-12 {
            return Err(format!(
                "seed {seed}: GL residual {:.3e} > 1e-12",
                d.gl_residual_max
            ));
        }
        // extracted potential passes structural validation
        SampledPotential::new(
            n,
            sol.potential.grid().to_vec(),
            sol.potential.samples().to_vec(),
        )
        .map_err(|e| format!("seed {seed}: extracted potential fails validation: {e}"))?;
    }
    Ok(format!(
        "20 seeded inputs: F sym {worst_fsym:.1e} <= 1e-8, K diag presym {worst_presym:.1e} <= 1e-4, \
         boundary {worst_boundary:.1e} <= 1e-3, GL residual {worst_gl:.1e} <= 1e-12"
    ))
}

/// criterion 7: Rademacher rank-one density construction at n = 2, V = 10.
fn criterion_7() -> Result<String, String> {
    let sig = BlockSignature::dirac(2);
    let xs: Vec<f64> = (-10..=10)
        .map(|v| v as f64 + 0.2 * ((v as f64) * 1.7).sin() / (1.0 + (v as f64).powi(2) / 8.0))
        .collect();
    let zero_index = 10;
    if xs[zero_index] != 0.0 {
        // the perturbation vanishes at v = 0 by construction
        return Err("breakpoint window must contain 0".into());
    }
    let bp = AdmissibleBreakpoints::from_function(xs, zero_index, 3, |x| x + 0.1 * x.tanh())
        .map_err(|e| e.to_string())?;
    let mm = multiplicity_measure(&sig, 1, &bp).map_err(|e| e.to_string())?;
    let mut worst_second = 0.0f64;
    for cell in &mm.cells {
        let (eigs, _) = cell.phi.hermitian_eig().map_err(|e| e.to_string())?;
        if eigs[0] < -1e-12 {
            return Err(format!("cell at {} not PSD: {:?}", cell.lambda_mid, eigs));
        }
        worst_second = worst_second.max(eigs[0].abs());
        if eigs[1] <= 1e-6 {
            return Err(format!("cell at {} has rank < 1", cell.lambda_mid));
        }
    }
    if worst_second > 1e-12 {
        return Err(format!("second singular value {worst_second:.3e} > 1e-12"));
    }
    if mm.breakpoint_residual > 1e-12 {
        return Err(format!(
            "breakpoint identity residual {:.3e} > 1e-12",
            mm.breakpoint_residual
        ));
    }
    if mm.tail_integral > mm.tail_constant * mm.sq_sum + 1e-12 {
        return Err("square-summability tail bound violated".into());
    }
    // the emitted measure passes the inverse pipeline's gates
    let base = BaseSystem::free(sig.clone(), BoundaryMatrix::identity(2));
    let sol = inverse_solve(&base, &mm.measure, 2.0, 0.02, &InverseConfig::default())
        .map_err(|e| format!("inverse gates rejected the measure: {e}"))?;
    if sol.diagnostics.gl_residual_max > 1e-12 {
        return Err("GL residual above solver exactness".into());
    }
    Ok(format!(
        "rank-1 cells ({} of them, second eig <= {:.1e}), breakpoint identity {:.1e}, \
         tail {:.3e} <= C*sum {:.3e}, inverse gates accept",
        mm.cells.len(),
        worst_second,
        mm.breakpoint_residual,
        mm.tail_integral,
        mm.tail_constant * mm.sq_sum
    ))
}

/// criterion 8: observed convergence orders.
fn criterion_8() -> Result<String, String> {
    // RK4 free case: fourth order (>= 3.5 required)
    let sys = SystemSpec::free_dirac(1);
    let rk_err = |h: f64| -> Result<f64, String> {
        let sol = solve_ivp(&sys, 5.0, 2.0, h).map_err(|e| e.to_string())?;
        let mut worst = 0.0f64;
        for i in 0..sol.n_points() {
            let x = sol.grid().x(i);
            let exact =
                specline_core::direct::free_solution(&sys.signature, &sys.boundary, x, 5.0);
            worst = worst.max(sol.sample_mat(i).sub(&exact).max_abs());
        }
        Ok(worst)
    };
    let (r1, r2) = (rk_err(4e-3)?, rk_err(2e-3)?);
    let rk_order = (r1 / r2).log2();
    if rk_order < 3.5 {
        return Err(format!("RK4 order {rk_order:.2} < 3.5 ({r1:.2e} -> {r2:.2e})"));
    }

    // Nystrom order on the two-jump system against the exact block closed
    // form (the single-jump scalar Dirac systems of criterion 2 are solved
    // exactly by the trapezoid rule: their error is roundoff-flat).
    let base = dirac_base();
    let jumps = [(-1.0, scalar(1.0)), (1.0, scalar(1.0))];
    let reference = FreeMultiJump::new(&base, &jumps).map_err(|e| e.to_string())?;
    let nystrom_err = |h: f64| -> Result<f64, String> {
        let sigma = base
            .sigma
            .clone()
            .with_jump(-1.0, scalar(1.0))
            .and_then(|m| m.with_jump(1.0, scalar(1.0)))
            .map_err(|e| e.to_string())?;
        let sol = inverse_solve(&base, &sigma, 2.0, h, &InverseConfig::default())
            .map_err(|e| e.to_string())?;
        let mut worst = 0.0f64;
        for (x, q) in sol.potential.grid().iter().zip(sol.potential.samples()) {
            worst = worst.max(q.sub(&reference.potential_at(*x)).max_abs());
        }
        Ok(worst)
    };
    let (n1, n2) = (nystrom_err(4e-3)?, nystrom_err(2e-3)?);
    let ny_order = (n1 / n2).log2();
    if ny_order < 1.8 {
        return Err(format!(
            "Nystrom order {ny_order:.2} < 1.8 ({n1:.2e} -> {n2:.2e})"
        ));
    }

    // criterion-2 configuration: errors stay at the tolerance with h halved
    // (roundoff-flat here, as predicted by the constant Gram integrand)
    let c2_half = degenerate_roundtrip(1.0, 1.0, 2e-3)?;
    let c2_full = degenerate_roundtrip(1.0, 1.0, 4e-3)?;
    if c2_half > 1e-4 || c2_full > 1e-4 {
        return Err(format!(
            "criterion-2 config exceeded tolerance under refinement: {c2_full:.2e}, {c2_half:.2e}"
        ));
    }

    // criterion-4 cross-solver error: second order under halving
    let system = oracle_jump_system(0.0, 1.0);
    let cross_err = |h: f64| -> Result<f64, String> {
        let g = goursat_kernel(&system, 2.0, h).map_err(|e| e.to_string())?;
        cross_solver_deviation(&system, &g.kernel, 1.0, 2.0, h)
    };
    let (x1, x2) = (cross_err(4e-3)?, cross_err(2e-3)?);
    let cross_order = (x1 / x2).log2();
    if cross_order < 1.8 {
        return Err(format!(
            "cross-solver order {cross_order:.2} < 1.8 ({x1:.2e} -> {x2:.2e})"
        ));
    }

    Ok(format!(
        "RK4 order {rk_order:.2} >= 3.5, Nystrom order {ny_order:.2} >= 1.8, \
         cross-solver order {cross_order:.2} >= 1.8; criterion-2 config \
         roundoff-flat ({c2_full:.1e} -> {c2_half:.1e}, both <= 1e-4)"
    ))
}

#[test]
fn acceptance() {
    let mut h = Harness::new();
    h.criterion("1", Some(Duration::from_secs(10)), criterion_1);
    criterion_2(&mut h);
    h.criterion("3", Some(Duration::from_secs(120)), criterion_3);
    h.criterion("4", None, criterion_4);
    h.criterion("5", None, criterion_5);
    h.criterion("6", None, criterion_6);
    h.criterion("7", Some(Duration::from_secs(30)), criterion_7);
    h.criterion("8", None, criterion_8);
    assert!(
        h.failures.is_empty(),
        "acceptance failures:\n{}",
        h.failures.join("\n")
    );
}
