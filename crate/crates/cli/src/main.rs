//! Batch command-line front end: parse specs, run pipelines, emit CSV/JSON
//! artifacts with sidecar metadata. Deterministic by construction: fixed
//! quadratures and iteration orders, randomness only through --seed.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "specline",
    about = "Direct and inverse spectral problems for first-order systems on the half line",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct GridArgs {
    /// Grid step size
    #[arg(long, default_value_t = 1e-3)]
    h: f64,
    /// Right endpoint of the x-grid
    #[arg(long, default_value_t = 2.0)]
    xmax: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Check the self-adjointness condition B1 = H* B2 H
    ValidateBc {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate Y(x, lambda) and write one CSV per lambda
    Direct {
        #[arg(long)]
        system: PathBuf,
        /// Comma-separated lambda values
        #[arg(long)]
        lambda: String,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the transformation kernel K(x,t) for the system's potential
    Kernel {
        #[arg(long)]
        system: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct the potential from a spectral measure
    Inverse {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        sigma: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        /// Solver tolerance gating the extracted potential's structure
        #[arg(long, default_value_t = specline_core::glsolve::DEFAULT_EXTRACT_TOL)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the closed-form potential and kernel for a step measure
    Oracle {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        sigma: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the Parseval identity for a pair of test functions
    Parseval {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        sigma: PathBuf,
        /// Test function JSON; a seeded random function when omitted
        #[arg(long)]
        f: Option<PathBuf>,
        /// Second test function; defaults to f
        #[arg(long)]
        g: Option<PathBuf>,
        /// Support of generated test functions
        #[arg(long, default_value_t = 1.0)]
        b: f64,
        /// x-grid step of generated test functions
        #[arg(long, default_value_t = 1e-3)]
        h: f64,
        /// Spectral truncation
        #[arg(long = "Lambda", default_value_t = 400.0)]
        lambda_truncation: f64,
        #[arg(long, default_value_t = 0.01)]
        lambda_step: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the transforms of f and g as CSV
        #[arg(long)]
        emit_transforms: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Construct spectral-measure inputs
    SigmaMake {
        #[arg(long)]
        system: PathBuf,
        /// One of: free, window, multiplicity
        #[arg(long)]
        kind: String,
        /// Breakpoints JSON for the multiplicity construction
        #[arg(long)]
        breakpoints: Option<PathBuf>,
        /// Window "alpha,beta" for the density perturbation
        #[arg(long)]
        window: Option<String>,
        /// Constant density scale c: Phi = c * I on the window
        #[arg(long, default_value_t = 0.01)]
        phi_scale: f64,
        /// Number of density sample nodes on the window
        #[arg(long, default_value_t = 41)]
        nodes: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inverse-solve a step measure and compare with the closed form
    Roundtrip {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        sigma: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::ValidateBc { system, out } => specline_cli::commands::validate_bc(&system, out.as_deref()),
        Command::Direct {
            system,
            lambda,
            grid,
            out,
        } => specline_cli::commands::direct(&system, &lambda, grid.h, grid.xmax, &out),
        Command::Kernel { system, grid, out } => {
            specline_cli::commands::kernel(&system, grid.h, grid.xmax, &out)
        }
        Command::Inverse {
            system,
            sigma,
            grid,
            tol,
            out,
        } => specline_cli::commands::inverse(&system, &sigma, grid.h, grid.xmax, tol, &out),
        Command::Oracle {
            system,
            sigma,
            grid,
            out,
        } => specline_cli::commands::oracle(&system, &sigma, grid.h, grid.xmax, &out),
        Command::Parseval {
            system,
            sigma,
            f,
            g,
            b,
            h,
            lambda_truncation,
            lambda_step,
            seed,
            emit_transforms,
            out,
        } => specline_cli::commands::parseval(specline_cli::commands::ParsevalArgs {
            system: &system,
            sigma: &sigma,
            f: f.as_deref(),
            g: g.as_deref(),
            b,
            h,
            lambda_truncation,
            lambda_step,
            seed,
            emit_transforms,
            out: &out,
        }),
        Command::SigmaMake {
            system,
            kind,
            breakpoints,
            window,
            phi_scale,
            nodes,
            out,
        } => specline_cli::commands::sigma_make(
            &system,
            &kind,
            breakpoints.as_deref(),
            window.as_deref(),
            phi_scale,
            nodes,
            &out,
        ),
        Command::Roundtrip {
            system,
            sigma,
            grid,
            out,
        } => specline_cli::commands::roundtrip(&system, &sigma, grid.h, grid.xmax, &out),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::from(e.code as u8)
        }
    }
}
