use nalgebra::{DMatrix, RowDVector};
use serde::{Deserialize, Serialize};

use crate::decoupling::DecoupledModel;
use crate::error::{Error, Result};
use crate::solvers::lstsq;
use crate::tensor3::Tensor3;

/// Degree of the polynomial re-fit of the internal functions.
pub const REFIT_DEGREE: usize = 10;

/// `||J - J_hat||^2 / ||J||^2`.
pub fn error_tensor(j: &Tensor3, j_hat: &Tensor3) -> Result<f64> {
    let norm = j.frob_norm_sq();
    if norm == 0.0 {
        return Err(Error::Degenerate("reference tensor has zero norm".into()));
    }
    Ok(j.distance_sq(j_hat)? / norm)
}

/// Relative output error per row, in percent: the RMS of `truth - model`
/// divided by the RMS deviation of `truth` from its own mean, times 100.
/// `None` marks an output that is constant over the samples.
pub fn output_error(truth: &DMatrix<f64>, model: &DMatrix<f64>) -> Result<Vec<Option<f64>>> {
    if truth.shape() != model.shape() {
        return Err(Error::Shape(format!(
            "truth is {:?}, model output is {:?}",
            truth.shape(),
            model.shape()
        )));
    }
    if truth.ncols() < 2 {
        return Err(Error::Shape("output error needs at least two samples".into()));
    }
    Ok(truth
        .row_iter()
        .zip(model.row_iter())
        .map(|(t, m)| {
            let mean = t.mean();
            let den: f64 = t.iter().map(|v| (v - mean).powi(2)).sum();
            let num: f64 = t.iter().zip(m.iter()).map(|(a, b)| (a - b).powi(2)).sum();
            (den > 0.0).then(|| 100.0 * (num / den).sqrt())
        })
        .collect())
}

/// Least-squares polynomial in the variable `(u - center) / half_width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledPolynomial {
    pub center: f64,
    pub half_width: f64,
    /// Coefficients in ascending powers of the scaled variable.
    pub coeffs: Vec<f64>,
}

impl ScaledPolynomial {
    pub fn eval(&self, u: f64) -> f64 {
        let t = (u - self.center) / self.half_width;
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }
}

/// Fits a degree-`degree` polynomial to `(u, values)` by least squares after
/// mapping the range of `u` onto `[-1, 1]`.
pub fn poly_refit(u: &[f64], values: &[f64], degree: usize) -> Result<ScaledPolynomial> {
    if u.len() != values.len() {
        return Err(Error::Shape(format!("{} abscissae, {} values", u.len(), values.len())));
    }
    let mut distinct: Vec<f64> = u.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() <= degree {
        return Err(Error::Degenerate(format!(
            "{} distinct points cannot determine a degree-{degree} polynomial",
            distinct.len()
        )));
    }
    let (lo, hi) = (distinct[0], distinct[distinct.len() - 1]);
    let center = 0.5 * (lo + hi);
    let half_width = 0.5 * (hi - lo);
    let vander = DMatrix::from_fn(u.len(), degree + 1, |s, k| ((u[s] - center) / half_width).powi(k as i32));
    let sol = lstsq(&vander, &DMatrix::from_column_slice(values.len(), 1, values))?;
    Ok(ScaledPolynomial {
        center,
        half_width,
        coeffs: sol.x.column(0).iter().copied().collect(),
    })
}

/// Replaces every branch of `model` by its polynomial re-fit over the
/// branch inputs `W0 * x` and returns `W1 * p(W0 * x)`.
pub fn refit_predict(model: &DecoupledModel, x: &DMatrix<f64>, degree: usize) -> Result<DMatrix<f64>> {
    let u = &model.w0 * x;
    let g = model.branch_values(x)?;
    let mut refit = DMatrix::zeros(g.nrows(), g.ncols());
    for i in 0..g.nrows() {
        let ui: Vec<f64> = u.row(i).iter().copied().collect();
        let gi: Vec<f64> = g.row(i).iter().copied().collect();
        let poly = poly_refit(&ui, &gi, degree)?;
        refit.set_row(i, &RowDVector::from_iterator(ui.len(), ui.iter().map(|&v| poly.eval(v))));
    }
    Ok(&model.w1 * refit)
}
