//! Manual timing probe for the inverse pipeline stages; run with
//! `cargo test -p specline-core --test bench_manual -- --ignored --nocapture`.

use num_complex::Complex64;
use specline_core::glsolve::{build_f, gl_solve, gl_residual, BaseSystem};
use specline_core::CMat;
use std::time::Instant;

#[test]
#[ignore]
fn stage_timings() {
    let base = BaseSystem::free_dirac(1);
    let sigma = base
        .sigma
        .clone()
        .with_jump(1.0, CMat::scalar(1, Complex64::new(1.0, 0.0)))
        .unwrap();
    let t0 = Instant::now();
    let (f, _) = build_f(&base, &sigma, 2.0, 1e-3).unwrap();
    eprintln!("build_f: {:?}", t0.elapsed());
    let t1 = Instant::now();
    let sol = gl_solve(&f, 1e12).unwrap();
    eprintln!("gl_solve: {:?}", t1.elapsed());
    let t2 = Instant::now();
    let rows: Vec<usize> = (0..f.grid().n_points()).step_by(64).collect();
    let r = gl_residual(&f, &sol.kernel, &rows);
    eprintln!("gl_residual({} rows): {:?}  max {r:.3e}", rows.len(), t2.elapsed());
}
