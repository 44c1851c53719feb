//! Command implementations. Every numeric artifact gets a `.meta.json`
//! sidecar carrying the parameters and diagnostics needed to re-run it.

use crate::error::{classify_direct, classify_gl, classify_system, CliError, Stage};
use crate::io;
use serde::Serialize;
use serde_json::json;
use specline_core::direct::{
    fourier_transform, parseval_residual, solve_ivp, TestFunction,
};
use specline_core::glsolve::{inverse_solve, InverseConfig};
use specline_core::oracle::{self, FreeMultiJump};
use specline_core::sigma::{multiplicity_measure, windowed_perturbation, AdmissibleBreakpoints};
use specline_core::system::PotentialSpec;
use specline_core::transform::goursat_kernel;
use specline_core::{validate_bc as core_validate_bc, CMat, UniformGrid};
use std::path::Path;

fn ensure_out(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::io(format!("creating {}: {e}", dir.display())))
}

fn write_meta<T: Serialize>(dir: &Path, name: &str, meta: &T) -> Result<(), CliError> {
    io::write_json(&dir.join(name), meta)
}

pub fn validate_bc(system_path: &Path, out: Option<&Path>) -> Result<u8, CliError> {
    let j: io::SystemJson = io::read_json(system_path)?;
    let report = core_validate_bc(&j.b1, &j.b2, &j.h).map_err(classify_system)?;
    let doc = json!({
        "valid": report.valid,
        "residual": report.residual,
        "h_condition": report.h_condition,
        "tolerance": specline_core::system::EPS_BC,
    });
    println!("{}", serde_json::to_string(&doc).unwrap());
    if let Some(dir) = out {
        ensure_out(dir)?;
        io::write_json(&dir.join("validate_bc.json"), &doc)?;
    }
    Ok(if report.valid { 0 } else { 2 })
}

fn parse_lambdas(spec: &str) -> Result<Vec<f64>, CliError> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| CliError::validation(format!("bad lambda {s:?}: {e}")))
        })
        .collect()
}

pub fn direct(
    system_path: &Path,
    lambda_spec: &str,
    h: f64,
    x_max: f64,
    out: &Path,
) -> Result<u8, CliError> {
    let system = io::load_system(system_path)?;
    let lambdas = parse_lambdas(lambda_spec)?;
    if lambdas.is_empty() {
        return Err(CliError::validation("no lambda values given".into()));
    }
    ensure_out(out)?;
    for (idx, &lambda) in lambdas.iter().enumerate() {
        let sol = solve_ivp(&system, lambda, x_max, h).map_err(classify_direct)?;
        let name = format!("y_{idx:03}.csv");
        io::write_solution_csv(&out.join(&name), &sol)?;
        write_meta(
            out,
            &format!("y_{idx:03}.meta.json"),
            &json!({
                "artifact": name,
                "lambda": lambda,
                "h": h,
                "x_max": x_max,
                "scheme": "rk4-fixed-step",
            }),
        )?;
    }
    Ok(0)
}

pub fn kernel(system_path: &Path, h: f64, x_max: f64, out: &Path) -> Result<u8, CliError> {
    let system = io::load_system(system_path)?;
    let g = goursat_kernel(&system, x_max, h).map_err(|e| match e {
        specline_core::transform::TransformError::PicardBudget { .. } => Stage::numerical(e),
        other => Stage::validation(other),
    })?;
    ensure_out(out)?;
    io::write_kernel_grid(&out.join("kernel.csv"), &g.kernel)?;
    write_meta(
        out,
        "kernel.meta.json",
        &json!({
            "artifact": "kernel.csv",
            "h": h,
            "x_max": x_max,
            "picard_iterations": g.diagnostics.iterations,
            "picard_final_delta": g.diagnostics.final_delta,
            "diag_presym_residual": g.diagnostics.diag_presym_residual,
            "boundary_residual": g.diagnostics.boundary_residual,
            "picard_eps": specline_core::transform::PICARD_EPS,
        }),
    )?;
    Ok(0)
}

pub fn inverse(
    system_path: &Path,
    sigma_path: &Path,
    h: f64,
    x_max: f64,
    tol: f64,
    out: &Path,
) -> Result<u8, CliError> {
    let system = io::load_system(system_path)?;
    let (measure, base) = io::load_sigma(sigma_path, &system)?;
    let cfg = InverseConfig {
        extract_tol: tol,
        ..InverseConfig::default()
    };
    let sol = inverse_solve(&base, &measure, x_max, h, &cfg).map_err(classify_gl)?;
    ensure_out(out)?;
    io::write_potential_csv(
        &out.join("potential.csv"),
        sol.potential.grid(),
        sol.potential.samples(),
    )?;
    io::write_kernel_grid(&out.join("kernel.csv"), &sol.kernel)?;
    let d = &sol.diagnostics;
    let diag = json!({
        "artifacts": ["potential.csv", "kernel.csv"],
        "h": h,
        "x_max": x_max,
        "extract_tol": tol,
        "cond_threshold": cfg.cond_threshold,
        "f_symmetry_residual": d.f_symmetry_residual,
        "density_sampling_warning": d.density_sampling_warning,
        "gl_condition_max": d.gl_condition_max,
        "gl_condition_argmax_x": d.gl_condition_argmax_x,
        "gl_residual_max": d.gl_residual_max,
        "k_diag_presym_max": d.k_diag_presym_max,
        "k_boundary_residual": d.k_boundary_residual,
        "q_asymmetry_max": d.q_asymmetry_max,
        "q_diag_block_max": d.q_diag_block_max,
    });
    io::write_json(&out.join("diagnostics.json"), &diag)?;
    println!("{}", serde_json::to_string(&diag).unwrap());
    Ok(0)
}

pub fn oracle(
    system_path: &Path,
    sigma_path: &Path,
    h: f64,
    x_max: f64,
    out: &Path,
) -> Result<u8, CliError> {
    let system = io::load_system(system_path)?;
    let (measure, base) = io::load_sigma(sigma_path, &system)?;
    if measure.density().is_some() {
        return Err(CliError::validation(
            "closed forms exist for step measures only; remove the density part".into(),
        ));
    }
    if measure.jumps().is_empty() {
        return Err(CliError::validation("no jumps in the measure".into()));
    }
    let jumps: Vec<(f64, CMat)> = measure
        .jumps()
        .iter()
        .map(|j| (j.a, j.height.clone()))
        .collect();
    let chain = oracle::jump_chain_with_grid(
        &base,
        &jumps,
        &oracle::ChainGrid { x_max, h },
    )
    .map_err(Stage::numerical)?;
    let grid = UniformGrid::new(x_max, h).map_err(Stage::validation)?;
    let dim = system.dim();
    let mut xs = Vec::with_capacity(grid.n_points());
    let mut mats = Vec::with_capacity(grid.n_points());
    for i in 0..grid.n_points() {
        let x = grid.x(i);
        xs.push(x);
        mats.push(chain.eval(x).map_err(classify_system)?);
    }
    ensure_out(out)?;
    io::write_potential_csv(&out.join("potential_oracle.csv"), &xs, &mats)?;
    write_meta(
        out,
        "potential_oracle.meta.json",
        &json!({
            "artifact": "potential_oracle.csv",
            "h": h,
            "x_max": x_max,
            "jumps": measure.jumps().len(),
            "dim": dim,
        }),
    )?;
    Ok(0)
}

pub struct ParsevalArgs<'a> {
    pub system: &'a Path,
    pub sigma: &'a Path,
    pub f: Option<&'a Path>,
    pub g: Option<&'a Path>,
    pub b: f64,
    pub h: f64,
    pub lambda_truncation: f64,
    pub lambda_step: f64,
    pub seed: u64,
    pub emit_transforms: bool,
    pub out: &'a Path,
}

pub fn parseval(args: ParsevalArgs) -> Result<u8, CliError> {
    let system = io::load_system(args.system)?;
    let (measure, _base) = io::load_sigma(args.sigma, &system)?;
    let f = match args.f {
        Some(p) => io::load_test_function(p, system.dim())?,
        None => TestFunction::seeded_random(system.dim(), args.b, args.h, args.seed),
    };
    let g = match args.g {
        Some(p) => Some(io::load_test_function(p, system.dim())?),
        None => None,
    };
    let g_ref = g.as_ref().unwrap_or(&f);
    let report = parseval_residual(
        &system,
        &measure,
        &f,
        g_ref,
        args.lambda_truncation,
        args.lambda_step,
    )
    .map_err(classify_direct)?;
    ensure_out(args.out)?;
    let doc = json!({
        "space_side": {"re": report.space_side.re, "im": report.space_side.im},
        "sigma_side": {"re": report.sigma_side.re, "im": report.sigma_side.im},
        "residual": report.residual,
        "tail_indicator": report.tail_indicator,
        "lambda_truncation": args.lambda_truncation,
        "lambda_step": args.lambda_step,
        "lambda_nodes": report.lambda_nodes,
        "seed": args.seed,
    });
    io::write_json(&args.out.join("parseval.json"), &doc)?;
    println!("{}", serde_json::to_string(&doc).unwrap());
    if args.emit_transforms {
        let m = ((2.0 * args.lambda_truncation / args.lambda_step).round() as usize).max(2);
        let step = 2.0 * args.lambda_truncation / m as f64;
        let lambdas: Vec<f64> = (0..=m)
            .map(|k| -args.lambda_truncation + k as f64 * step)
            .collect();
        let tf = fourier_transform(&system, &f, &lambdas).map_err(classify_direct)?;
        io::write_transform_csv(&args.out.join("f_transform.csv"), &tf)?;
        if let Some(gg) = &g {
            let tg = fourier_transform(&system, gg, &lambdas).map_err(classify_direct)?;
            io::write_transform_csv(&args.out.join("g_transform.csv"), &tg)?;
        }
    }
    Ok(0)
}

pub fn sigma_make(
    system_path: &Path,
    kind: &str,
    breakpoints: Option<&Path>,
    window: Option<&str>,
    phi_scale: f64,
    nodes: usize,
    out: &Path,
) -> Result<u8, CliError> {
    let system = io::load_system(system_path)?;
    let sig = &system.signature;
    ensure_out(out)?;
    let (sigma_doc, extra) = match kind {
        "free" => (
            io::SigmaJson {
                jumps: vec![],
                density: None,
                base: Some(io::BaseJson::Tag("free".into())),
            },
            None,
        ),
        "window" => {
            let w = window.ok_or_else(|| {
                CliError::validation("--window \"alpha,beta\" required for kind=window".into())
            })?;
            let parts: Vec<f64> = w
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| CliError::validation(format!("bad window bound {s:?}: {e}")))
                })
                .collect::<Result<_, _>>()?;
            if parts.len() != 2 {
                return Err(CliError::validation("window needs exactly two bounds".into()));
            }
            let phi = vec![
                CMat::scalar(sig.n(), num_complex::Complex64::new(phi_scale, 0.0));
                nodes.max(2)
            ];
            let measure = windowed_perturbation(sig, parts[0], parts[1], phi)
                .map_err(Stage::validation)?;
            (measure_to_json(&measure), None)
        }
        "multiplicity" => {
            let bp_path = breakpoints.ok_or_else(|| {
                CliError::validation("--breakpoints required for kind=multiplicity".into())
            })?;
            let bj: io::BreakpointsJson = io::read_json(bp_path)?;
            let zero_index = match bj.zero_index {
                Some(z) => z,
                None => bj
                    .x
                    .iter()
                    .position(|&v| v == 0.0)
                    .ok_or_else(|| CliError::validation("breakpoints must contain 0".into()))?,
            };
            let refine = (sig.n() + bj.p) as u32;
            let bp = AdmissibleBreakpoints::new(bj.x, zero_index, bj.mu, refine)
                .map_err(Stage::validation)?;
            let mm = multiplicity_measure(sig, bj.p, &bp).map_err(Stage::validation)?;
            let report = json!({
                "p": mm.p,
                "cells": mm.cells.len(),
                "square_sum": mm.sq_sum,
                "breakpoint_residual": mm.breakpoint_residual,
                "tail_integral": mm.tail_integral,
                "tail_constant": mm.tail_constant,
                "tail_bound_ok": mm.tail_integral <= mm.tail_constant * mm.sq_sum + 1e-12,
            });
            (measure_to_json(&mm.measure), Some(report))
        }
        other => {
            return Err(CliError::validation(format!(
                "unknown kind {other:?}; use free, window, or multiplicity"
            )))
        }
    };
    io::write_json(&out.join("sigma.json"), &sigma_doc)?;
    if let Some(report) = extra {
        io::write_json(&out.join("sigma_report.json"), &report)?;
    }
    Ok(0)
}

fn measure_to_json(m: &specline_core::SpectralMeasure) -> io::SigmaJson {
    io::SigmaJson {
        jumps: m
            .jumps()
            .iter()
            .map(|j| io::JumpJson {
                a: j.a,
                height: j.height.clone(),
            })
            .collect(),
        density: m.density().map(|d| io::DensityJson {
            lambda: d.lambda.clone(),
            phi: d.phi.clone(),
            weights: Some(d.weights.clone()),
        }),
        base: Some(io::BaseJson::Tag("free".into())),
    }
}

pub fn roundtrip(
    system_path: &Path,
    sigma_path: &Path,
    h: f64,
    x_max: f64,
    out: &Path,
) -> Result<u8, CliError> {
    let system = io::load_system(system_path)?;
    if !matches!(system.potential, PotentialSpec::Zero) {
        return Err(CliError::validation(
            "roundtrip compares against the free-base closed form; the system potential must be zero".into(),
        ));
    }
    let (measure, base) = io::load_sigma(sigma_path, &system)?;
    if measure.density().is_some() || measure.jumps().is_empty() {
        return Err(CliError::validation(
            "roundtrip needs a pure step measure with at least one jump".into(),
        ));
    }
    let sol = inverse_solve(&base, &measure, x_max, h, &InverseConfig::default())
        .map_err(classify_gl)?;
    let jumps: Vec<(f64, CMat)> = measure
        .jumps()
        .iter()
        .map(|j| (j.a, j.height.clone()))
        .collect();
    let reference = FreeMultiJump::new(&base, &jumps).map_err(Stage::validation)?;
    let mut max_err = 0.0f64;
    for (x, q) in sol.potential.grid().iter().zip(sol.potential.samples()) {
        let want = reference.potential_at(*x);
        max_err = max_err.max(q.sub(&want).max_abs());
    }
    ensure_out(out)?;
    io::write_potential_csv(
        &out.join("potential.csv"),
        sol.potential.grid(),
        sol.potential.samples(),
    )?;
    let d = &sol.diagnostics;
    let doc = json!({
        "max_q_error": max_err,
        "h": h,
        "x_max": x_max,
        "jumps": measure.jumps().len(),
        "gl_condition_max": d.gl_condition_max,
        "gl_residual_max": d.gl_residual_max,
        "k_boundary_residual": d.k_boundary_residual,
        "q_asymmetry_max": d.q_asymmetry_max,
    });
    io::write_json(&out.join("roundtrip.json"), &doc)?;
    println!("{}", serde_json::to_string(&doc).unwrap());
    Ok(0)
}
