//! File formats: JSON schemas for systems, measures, test functions and
//! breakpoints; CSV writers with deterministic layout; the kernel-grid
//! interchange (one JSON header line followed by a CSV body).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use specline_core::direct::TestFunction;
use specline_core::glsolve::BaseSystem;
use specline_core::measure::{DensityPart, Jump, SpectralMeasure};
use specline_core::oracle;
use specline_core::system::{PotentialSpec, SampledPotential};
use specline_core::{
    BlockSignature, BoundaryMatrix, CMat, ComplexRepr, KernelGrid, SystemSpec, UniformGrid,
};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, Stage};

#[derive(Debug, Serialize, Deserialize)]
pub struct SystemJson {
    pub n: usize,
    #[serde(rename = "B1")]
    pub b1: CMat,
    #[serde(rename = "B2")]
    pub b2: CMat,
    #[serde(rename = "H")]
    pub h: CMat,
    #[serde(rename = "Q", default)]
    pub q: Option<PotentialJson>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PotentialJson {
    Zero,
    Sampled {
        grid: Vec<f64>,
        values: Vec<CMat>,
    },
    Oracle {
        jumps: Vec<JumpJson>,
        #[serde(default = "default_base")]
        base: String,
    },
}

fn default_base() -> String {
    "free".into()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JumpJson {
    pub a: f64,
    #[serde(rename = "A")]
    pub height: CMat,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DensityJson {
    pub lambda: Vec<f64>,
    #[serde(rename = "Phi")]
    pub phi: Vec<CMat>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SigmaJson {
    #[serde(default)]
    pub jumps: Vec<JumpJson>,
    #[serde(default)]
    pub density: Option<DensityJson>,
    /// "free" or an embedded base pair.
    #[serde(default)]
    pub base: Option<BaseJson>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BaseJson {
    Tag(String),
    Pair {
        system: Box<SystemJson>,
        sigma: Box<SigmaJson>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TestFunctionJson {
    pub b: f64,
    pub grid_step: f64,
    pub values: Vec<Vec<ComplexRepr>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BreakpointsJson {
    pub x: Vec<f64>,
    pub mu: Vec<f64>,
    pub p: usize,
    #[serde(default)]
    pub zero_index: Option<usize>,
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("parsing {}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::io(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))
}

pub fn load_system(path: &Path) -> Result<SystemSpec, CliError> {
    let j: SystemJson = read_json(path)?;
    system_from_json(&j)
}

pub fn system_from_json(j: &SystemJson) -> Result<SystemSpec, CliError> {
    let sig = BlockSignature::new(j.b1.clone(), j.b2.clone()).map_err(Stage::validation)?;
    if sig.n() != j.n {
        return Err(CliError::validation(format!(
            "declared n = {} does not match B1 dimension {}",
            j.n,
            sig.n()
        )));
    }
    let bc = BoundaryMatrix::new(j.h.clone(), &sig).map_err(Stage::validation)?;
    let potential = match &j.q {
        None | Some(PotentialJson::Zero) => PotentialSpec::Zero,
        Some(PotentialJson::Sampled { grid, values }) => PotentialSpec::Sampled(
            SampledPotential::new(j.n, grid.clone(), values.clone()).map_err(Stage::validation)?,
        ),
        Some(PotentialJson::Oracle { jumps, base }) => {
            if base != "free" {
                return Err(CliError::validation(
                    "oracle potentials support only the free base in system files".into(),
                ));
            }
            let free = BaseSystem::free(sig.clone(), bc.clone());
            let pairs: Vec<(f64, CMat)> =
                jumps.iter().map(|x| (x.a, x.height.clone())).collect();
            let chain = oracle::jump_chain(&free, &pairs).map_err(Stage::validation)?;
            PotentialSpec::Oracle(chain)
        }
    };
    SystemSpec::new(sig, bc, potential).map_err(Stage::validation)
}

/// Builds the measure sigma = sigma0 + Sigma described by a sigma file,
/// relative to the given signature, together with the base pair.
pub fn load_sigma(
    path: &Path,
    system: &SystemSpec,
) -> Result<(SpectralMeasure, BaseSystem), CliError> {
    let j: SigmaJson = read_json(path)?;
    sigma_from_json(&j, system)
}

pub fn sigma_from_json(
    j: &SigmaJson,
    system: &SystemSpec,
) -> Result<(SpectralMeasure, BaseSystem), CliError> {
    let sig = &system.signature;
    let jumps: Vec<Jump> = j
        .jumps
        .iter()
        .map(|x| Jump {
            a: x.a,
            height: x.height.clone(),
        })
        .collect();
    let density = match &j.density {
        None => None,
        Some(d) => Some(match &d.weights {
            Some(w) => {
                DensityPart::with_weights(d.lambda.clone(), d.phi.clone(), w.clone())
                    .map_err(Stage::validation)?
            }
            None => DensityPart::from_grid(d.lambda.clone(), d.phi.clone())
                .map_err(Stage::validation)?,
        }),
    };
    let measure = SpectralMeasure::with_parts(sig, jumps, density).map_err(Stage::validation)?;
    let base = match &j.base {
        None => BaseSystem {
            system: system.clone(),
            sigma: SpectralMeasure::free(sig),
        },
        Some(BaseJson::Tag(tag)) if tag == "free" => BaseSystem {
            system: system.clone(),
            sigma: SpectralMeasure::free(sig),
        },
        Some(BaseJson::Tag(tag)) => {
            return Err(CliError::validation(format!(
                "unknown base tag {tag:?}; use \"free\" or an embedded pair"
            )))
        }
        Some(BaseJson::Pair {
            system: bs,
            sigma: bsig,
        }) => {
            let bsys = system_from_json(bs)?;
            let (bmeasure, _) = sigma_from_json(bsig, &bsys)?;
            BaseSystem::perturbed(
                bsys,
                bmeasure,
                &specline_core::glsolve::SpotCheckConfig::default(),
            )
            .map_err(Stage::numerical)?
        }
    };
    Ok((measure, base))
}

pub fn load_test_function(path: &Path, dim: usize) -> Result<TestFunction, CliError> {
    let j: TestFunctionJson = read_json(path)?;
    let values: Vec<Vec<Complex64>> = j
        .values
        .iter()
        .map(|row| row.iter().map(|&c| Complex64::from(c)).collect())
        .collect();
    for (i, row) in values.iter().enumerate() {
        if row.len() != dim {
            return Err(CliError::validation(format!(
                "test function row {i} has {} components, system needs {dim}",
                row.len()
            )));
        }
    }
    Ok(TestFunction {
        b: j.b,
        grid_step: j.grid_step,
        values,
    })
}

fn push_f64(line: &mut String, v: f64) {
    // shortest round-trip formatting; deterministic
    write!(line, "{v}").unwrap();
}

/// Potential CSV: x, then 2(2n)^2 real columns (re/im per entry, row-major).
pub fn write_potential_csv(
    path: &Path,
    xs: &[f64],
    mats: &[CMat],
) -> Result<(), CliError> {
    let dim = mats.first().map_or(0, |m| m.rows());
    let mut out = String::new();
    out.push('x');
    for r in 0..dim {
        for c in 0..dim {
            write!(out, ",re_{r}_{c},im_{r}_{c}").unwrap();
        }
    }
    out.push('\n');
    for (x, m) in xs.iter().zip(mats) {
        push_f64(&mut out, *x);
        for r in 0..dim {
            for c in 0..dim {
                let z = m[(r, c)];
                out.push(',');
                push_f64(&mut out, z.re);
                out.push(',');
                push_f64(&mut out, z.im);
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))
}

/// Solution CSV: x, then re/im per entry of the 2n x n matrix, row-major.
pub fn write_solution_csv(
    path: &Path,
    sol: &specline_core::direct::MatrixSolution,
) -> Result<(), CliError> {
    let grid = sol.grid();
    let first = sol.sample(0);
    let ncols = first.len();
    let mut out = String::new();
    out.push('x');
    for k in 0..ncols {
        write!(out, ",re_{k},im_{k}").unwrap();
    }
    out.push('\n');
    for i in 0..grid.n_points() {
        push_f64(&mut out, grid.x(i));
        for z in sol.sample(i) {
            out.push(',');
            push_f64(&mut out, z.re);
            out.push(',');
            push_f64(&mut out, z.im);
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))
}

/// Transform CSV: lambda, re(F_1), im(F_1), ..., re(F_n), im(F_n).
pub fn write_transform_csv(
    path: &Path,
    t: &specline_core::direct::TransformedFunction,
) -> Result<(), CliError> {
    let n = t.values.first().map_or(0, |v| v.len());
    let mut out = String::new();
    out.push_str("lambda");
    for k in 1..=n {
        write!(out, ",re_F{k},im_F{k}").unwrap();
    }
    out.push('\n');
    for (l, row) in t.lambda_grid.iter().zip(&t.values) {
        push_f64(&mut out, *l);
        for z in row {
            out.push(',');
            push_f64(&mut out, z.re);
            out.push(',');
            push_f64(&mut out, z.im);
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))
}

#[derive(Debug, Serialize, Deserialize)]
struct KernelHeader {
    h: f64,
    #[serde(rename = "N")]
    n_steps: usize,
    n: usize,
}

/// Kernel interchange: one JSON header line {h, N, n}, then CSV rows
/// "i,j,<2(2n)^2 real columns>" over the lower triangle in row-major order.
pub fn write_kernel_grid(path: &Path, k: &KernelGrid) -> Result<(), CliError> {
    let dim = k.block_dim();
    let header = KernelHeader {
        h: k.h(),
        n_steps: k.n_steps(),
        n: dim / 2,
    };
    let mut out = serde_json::to_string(&header)
        .map_err(|e| CliError::io(format!("serializing kernel header: {e}")))?;
    out.push('\n');
    for i in 0..=k.n_steps() {
        for j in 0..=i {
            write!(out, "{i},{j}").unwrap();
            for z in k.block(i, j) {
                out.push(',');
                push_f64(&mut out, z.re);
                out.push(',');
                push_f64(&mut out, z.im);
            }
            out.push('\n');
        }
    }
    std::fs::write(path, out).map_err(|e| CliError::io(format!("writing {}: {e}", path.display())))
}

pub fn read_kernel_grid(path: &Path) -> Result<KernelGrid, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("reading {}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header: KernelHeader = serde_json::from_str(lines.next().unwrap_or_default())
        .map_err(|e| CliError::validation(format!("kernel header: {e}")))?;
    let grid = UniformGrid {
        h: header.h,
        n_steps: header.n_steps,
    };
    let dim = 2 * header.n;
    let mut k = KernelGrid::zeros(grid, dim);
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let i: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::validation("kernel row: bad i".into()))?;
        let j: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::validation("kernel row: bad j".into()))?;
        let blk = k.block_mut(i, j);
        for z in blk.iter_mut() {
            let re: f64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::validation("kernel row: bad entry".into()))?;
            let im: f64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::validation("kernel row: bad entry".into()))?;
            *z = Complex64::new(re, im);
        }
    }
    Ok(k)
}
