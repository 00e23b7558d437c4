//! Projection of the unstructured factors `G` and `R` onto B-spline
//! structure, one branch at a time.

use nalgebra::{DMatrix, DVector};

use super::config::{CmtfConfig, Constraint};
use super::model::{leaky_relu, leaky_relu_integral, Branch, LEAKY_RELU_SLOPE};
use crate::bspline::{augment, Augment, Representation, SplineBasis, SplineFunction};
use crate::error::{Error, Result};
use crate::solvers::{nnls_with_free, stack, stacked_lstsq};

/// Parameters of a projection step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionSettings {
    pub dof: usize,
    /// Degree of the branch function `g`.
    pub degree: usize,
    pub lambda: f64,
    pub representation: Representation,
    pub constraint: Constraint,
}

impl ProjectionSettings {
    pub fn from_config(config: &CmtfConfig, lambda: f64) -> Self {
        Self {
            dof: config.dof,
            degree: config.degree,
            lambda,
            representation: config.representation,
            constraint: config.constraint,
        }
    }

    fn basis_degree(&self) -> usize {
        match self.representation {
            Representation::G => self.degree,
            Representation::GPrime => self.degree - 1,
        }
    }
}

/// Design matrices of one branch: `g' = B c` and `g = B~ c`.
#[derive(Debug, Clone)]
pub struct BranchDesign {
    pub basis: SplineBasis,
    /// Maps `c` to `g'` at the samples (`S x (df+1)`, zero first column).
    pub derivative: DMatrix<f64>,
    /// Maps `c` to `g` at the samples (`S x (df+1)`, unit first column).
    pub value: DMatrix<f64>,
}

pub fn branch_design(u: &[f64], settings: &ProjectionSettings) -> Result<BranchDesign> {
    let basis = SplineBasis::from_quantiles(u, settings.dof, settings.basis_degree())?;
    let (derivative, value) = match settings.representation {
        Representation::G => (
            augment(&basis.derivative_design_matrix(u)?, Augment::Zeros),
            augment(&basis.design_matrix(u), Augment::Ones),
        ),
        Representation::GPrime => (
            augment(&basis.design_matrix(u), Augment::Zeros),
            augment(&basis.integral_design_matrix(u), Augment::Ones),
        ),
    };
    Ok(BranchDesign {
        basis,
        derivative,
        value,
    })
}

/// Outcome of projecting all branches.
#[derive(Debug, Clone)]
pub struct Projection {
    pub g: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub branches: Vec<Branch>,
    /// Branches whose knots coincide (reduced continuity).
    pub coincident_knots: Vec<usize>,
    /// Branches replaced by the LeakyReLU fallback.
    pub fallbacks: Vec<usize>,
    /// Branches whose coefficient solve was rank deficient.
    pub rank_deficient: Vec<usize>,
    /// Branches whose NNLS hit its iteration cap.
    pub nnls_capped: Vec<usize>,
}

/// Replaces the `g'` column by `L(u)` (identity for `u >= 0`, `slope * u`
/// below) and the `g` column by its antiderivative anchored at zero.
pub fn leaky_relu_fallback(u: &[f64], slope: f64) -> (Vec<f64>, Vec<f64>) {
    (
        u.iter().map(|&v| leaky_relu(v, slope)).collect(),
        u.iter().map(|&v| leaky_relu_integral(v, slope)).collect(),
    )
}

/// Solves, for every branch `j`,
/// `min_c ||G[:, j] - B c||^2 + lambda ||R[:, j] - B~ c||^2`
/// (with `c_1.. >= 0` under the monotone constraint) on knots placed at the
/// quantiles of row `j` of `xsamples`, then overwrites the columns with the
/// fitted `B c` and `B~ c`.
pub fn bspline_projection(
    g: &DMatrix<f64>,
    r: &DMatrix<f64>,
    xsamples: &DMatrix<f64>,
    settings: &ProjectionSettings,
) -> Result<Projection> {
    let (s, rank) = g.shape();
    if r.shape() != (s, rank) || xsamples.shape() != (rank, s) {
        return Err(Error::Shape(format!(
            "projection inputs: G {:?}, R {:?}, xSamples {:?}",
            g.shape(),
            r.shape(),
            xsamples.shape()
        )));
    }
    if settings.dof <= settings.degree || settings.degree == 0 {
        return Err(Error::Config(format!(
            "projection needs dof > degree >= 1, got dof={} degree={}",
            settings.dof, settings.degree
        )));
    }
    let mut out = Projection {
        g: g.clone(),
        r: r.clone(),
        branches: Vec::with_capacity(rank),
        coincident_knots: Vec::new(),
        fallbacks: Vec::new(),
        rank_deficient: Vec::new(),
        nnls_capped: Vec::new(),
    };
    for j in 0..rank {
        let u: Vec<f64> = xsamples.row(j).iter().copied().collect();
        let design = branch_design(&u, settings)?;
        if design.basis.has_coincident_knots() {
            out.coincident_knots.push(j);
        }
        let g_col = g.column(j).into_owned();
        let r_col = r.column(j).into_owned();
        let coeffs = match settings.constraint {
            Constraint::None => {
                let sol = stacked_lstsq(
                    &design.derivative,
                    &DMatrix::from_column_slice(s, 1, g_col.as_slice()),
                    &design.value,
                    &DMatrix::from_column_slice(s, 1, r_col.as_slice()),
                    settings.lambda,
                )?;
                if sol.rank_deficient {
                    out.rank_deficient.push(j);
                }
                sol.x.column(0).into_owned()
            }
            Constraint::MonotoneIncreasing => {
                let (a, b) = stack(
                    &design.derivative,
                    &DMatrix::from_column_slice(s, 1, g_col.as_slice()),
                    &design.value,
                    &DMatrix::from_column_slice(s, 1, r_col.as_slice()),
                    settings.lambda,
                )?;
                let mut free = vec![false; a.ncols()];
                free[0] = true;
                let sol = nnls_with_free(&a, &b.column(0).into_owned(), &free)?;
                if !sol.converged {
                    out.nnls_capped.push(j);
                }
                sol.x
            }
        };

        if settings.constraint == Constraint::MonotoneIncreasing && coeffs.rows(1, coeffs.len() - 1).iter().all(|&c| c == 0.0) {
            let (gp, gv) = leaky_relu_fallback(&u, LEAKY_RELU_SLOPE);
            out.g.set_column(j, &DVector::from_vec(gp));
            out.r.set_column(j, &DVector::from_vec(gv));
            out.fallbacks.push(j);
            out.branches.push(Branch::LeakyRelu { slope: LEAKY_RELU_SLOPE });
            continue;
        }

        out.g.set_column(j, &(&design.derivative * &coeffs));
        out.r.set_column(j, &(&design.value * &coeffs));
        let spline = SplineFunction::new(design.basis, coeffs.iter().copied().collect(), settings.representation)?;
        out.branches.push(Branch::Spline(spline));
    }
    Ok(out)
}

/// `sum_j ||G_j - B_j c_j||^2 + lambda ||R_j - B~_j c_j||^2` for given
/// coefficient vectors on the designs of `xsamples`.
pub fn projection_residual(
    g: &DMatrix<f64>,
    r: &DMatrix<f64>,
    xsamples: &DMatrix<f64>,
    coeffs: &[DVector<f64>],
    settings: &ProjectionSettings,
) -> Result<f64> {
    let mut total = 0.0;
    for (j, c) in coeffs.iter().enumerate() {
        let u: Vec<f64> = xsamples.row(j).iter().copied().collect();
        let d = branch_design(&u, settings)?;
        total += (g.column(j) - &d.derivative * c).norm_squared()
            + settings.lambda * (r.column(j) - &d.value * c).norm_squared();
    }
    Ok(total)
}
