//! Fitted decoupled models, branch certification and the JSON model file.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::config::CmtfConfig;
use crate::bspline::{Representation, SplineBasis, SplineFunction};
use crate::error::{Error, Result};
use crate::tensor3::{CpdFactors, Tensor3};

/// Slope applied to negative inputs by the LeakyReLU fallback derivative.
pub const LEAKY_RELU_SLOPE: f64 = -0.5;

/// Coefficients of `g'` above this (negative) threshold count as nonnegative.
pub const CERTIFY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Certification {
    CertifiedIncreasing,
    NotCertified,
}

impl Certification {
    pub fn is_certified(self) -> bool {
        self == Certification::CertifiedIncreasing
    }
}

/// One internal function `g_i` of a decoupled model.
#[derive(Debug, Clone, PartialEq)]
pub enum Branch {
    Spline(SplineFunction),
    /// `g'(u) = u` for `u >= 0` and `slope * u` otherwise; `g(0) = 0`.
    LeakyRelu { slope: f64 },
}

impl Branch {
    pub fn eval(&self, u: &[f64]) -> Vec<f64> {
        match self {
            Branch::Spline(f) => f.eval(u),
            Branch::LeakyRelu { slope } => u.iter().map(|&v| leaky_relu_integral(v, *slope)).collect(),
        }
    }

    pub fn eval_derivative(&self, u: &[f64]) -> Vec<f64> {
        match self {
            Branch::Spline(f) => f.eval_derivative(u),
            Branch::LeakyRelu { slope } => u.iter().map(|&v| leaky_relu(v, *slope)).collect(),
        }
    }

    pub fn as_spline(&self) -> Option<&SplineFunction> {
        match self {
            Branch::Spline(f) => Some(f),
            Branch::LeakyRelu { .. } => None,
        }
    }
}

pub(crate) fn leaky_relu(u: f64, slope: f64) -> f64 {
    if u >= 0.0 {
        u
    } else {
        slope * u
    }
}

pub(crate) fn leaky_relu_integral(u: f64, slope: f64) -> f64 {
    if u >= 0.0 {
        0.5 * u * u
    } else {
        0.5 * slope * u * u
    }
}

/// Sufficient test for a nondecreasing spline: every B-spline coefficient
/// of `g'` is nonnegative (up to [`CERTIFY_TOL`]).
pub fn certify_monotone(f: &SplineFunction) -> Certification {
    if f.derivative_coefficients().iter().all(|&c| c >= -CERTIFY_TOL) {
        Certification::CertifiedIncreasing
    } else {
        Certification::NotCertified
    }
}

pub fn certify_branch(branch: &Branch) -> Certification {
    match branch {
        Branch::Spline(f) => certify_monotone(f),
        // slope <= 0 keeps g' = slope * u nonnegative on u < 0
        Branch::LeakyRelu { slope } if *slope <= 0.0 => Certification::CertifiedIncreasing,
        Branch::LeakyRelu { .. } => Certification::NotCertified,
    }
}

/// `f(x) ~ W1 g(W0 x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoupledModel {
    pub w1: DMatrix<f64>,
    pub w0: DMatrix<f64>,
    pub branches: Vec<Branch>,
    pub config: CmtfConfig,
}

impl DecoupledModel {
    pub fn new(w1: DMatrix<f64>, w0: DMatrix<f64>, branches: Vec<Branch>, config: CmtfConfig) -> Result<Self> {
        let r = branches.len();
        if w1.ncols() != r || w0.nrows() != r {
            return Err(Error::Shape(format!(
                "W1 {:?} and W0 {:?} do not match {r} branches",
                w1.shape(),
                w0.shape()
            )));
        }
        Ok(Self {
            w1,
            w0,
            branches,
            config,
        })
    }

    pub fn inputs(&self) -> usize {
        self.w0.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w1.nrows()
    }

    /// Branch values at `W0 X`, as an `r x T` matrix.
    pub fn branch_values(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.inputs() {
            return Err(Error::Shape(format!(
                "model takes {} inputs, got {} rows",
                self.inputs(),
                x.nrows()
            )));
        }
        let u = &self.w0 * x;
        let mut out = DMatrix::zeros(self.branches.len(), x.ncols());
        for (i, branch) in self.branches.iter().enumerate() {
            let row: Vec<f64> = u.row(i).iter().copied().collect();
            for (t, v) in branch.eval(&row).into_iter().enumerate() {
                out[(i, t)] = v;
            }
        }
        Ok(out)
    }

    /// Evaluates the model on the columns of `x` (`m x T`), giving `n x T`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(&self.w1 * self.branch_values(x)?)
    }

    /// Jacobians at the columns of `x`, stacked as frontal slices
    /// `W1 diag(g'(W0 x_t)) W0`.
    pub fn jacobian_tensor(&self, x: &DMatrix<f64>) -> Result<Tensor3> {
        self.branch_values(x)?;
        let u = &self.w0 * x;
        let mut gp = DMatrix::zeros(x.ncols(), self.branches.len());
        for (i, branch) in self.branches.iter().enumerate() {
            let row: Vec<f64> = u.row(i).iter().copied().collect();
            for (t, v) in branch.eval_derivative(&row).into_iter().enumerate() {
                gp[(t, i)] = v;
            }
        }
        Ok(CpdFactors::new(self.w1.clone(), self.w0.transpose(), gp)?.reconstruct())
    }

    pub fn certify(&self) -> Vec<Certification> {
        self.branches.iter().map(certify_branch).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.into_model()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

/// On-disk model layout. Matrices are row-major nested arrays; spline
/// `degree` is the degree of the stored basis and `coeffs` starts with the
/// constant term.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    outputs: usize,
    inputs: usize,
    rank: usize,
    w1: Vec<Vec<f64>>,
    w0: Vec<Vec<f64>>,
    branches: Vec<BranchFile>,
    config: CmtfConfig,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum BranchFile {
    Spline {
        representation: Representation,
        degree: usize,
        knots: Vec<f64>,
        coeffs: Vec<f64>,
    },
    LeakyRelu {
        slope: f64,
    },
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse(format!("{name} must be a nonempty rectangular array")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

impl From<&DecoupledModel> for ModelFile {
    fn from(m: &DecoupledModel) -> Self {
        let branches = m
            .branches
            .iter()
            .map(|b| match b {
                Branch::Spline(f) => BranchFile::Spline {
                    representation: f.representation(),
                    degree: f.basis().degree(),
                    knots: f.basis().knots().to_vec(),
                    coeffs: f.coeffs().to_vec(),
                },
                Branch::LeakyRelu { slope } => BranchFile::LeakyRelu { slope: *slope },
            })
            .collect();
        ModelFile {
            outputs: m.outputs(),
            inputs: m.inputs(),
            rank: m.branches.len(),
            w1: rows_of(&m.w1),
            w0: rows_of(&m.w0),
            branches,
            config: m.config.clone(),
        }
    }
}

impl ModelFile {
    fn into_model(self) -> Result<DecoupledModel> {
        let w1 = matrix_from_rows(&self.w1, "w1")?;
        let w0 = matrix_from_rows(&self.w0, "w0")?;
        if w1.shape() != (self.outputs, self.rank) || w0.shape() != (self.rank, self.inputs) {
            return Err(Error::Parse(format!(
                "matrix shapes {:?} / {:?} disagree with outputs={}, inputs={}, rank={}",
                w1.shape(),
                w0.shape(),
                self.outputs,
                self.inputs,
                self.rank
            )));
        }
        let branches = self
            .branches
            .into_iter()
            .map(|b| match b {
                BranchFile::Spline {
                    representation,
                    degree,
                    knots,
                    coeffs,
                } => {
                    let basis = SplineBasis::new(knots, degree)?;
                    Ok(Branch::Spline(SplineFunction::new(basis, coeffs, representation)?))
                }
                BranchFile::LeakyRelu { slope } => Ok(Branch::LeakyRelu { slope }),
            })
            .collect::<Result<Vec<_>>>()?;
        DecoupledModel::new(w1, w0, branches, self.config)
    }
}
