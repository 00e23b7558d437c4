//! CMTF-BSD: alternating least squares on the coupled objective
//! `||J - [[W1, W0^T, G]]||^2 + lambda ||F - W1 R^T||^2`, with `G` and `R`
//! projected onto B-spline structure after every sweep.

mod config;
mod model;
mod projection;

pub use config::{CmtfConfig, Constraint, LambdaSchedule};
pub use model::{
    certify_branch, certify_monotone, Branch, Certification, DecoupledModel, CERTIFY_TOL,
    LEAKY_RELU_SLOPE,
};
pub use projection::{
    branch_design, bspline_projection, leaky_relu_fallback, projection_residual, BranchDesign,
    Projection, ProjectionSettings,
};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::{lstsq, stacked_lstsq};
use crate::sysgen::{seeded_rng, STREAM_INIT};
use crate::tensor3::{frob_norm_sq, khatri_rao, CpdFactors, Mode, Tensor3};

/// Value of the coupled objective split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub tensor_term: f64,
    pub coupling_term: f64,
    pub lambda: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.tensor_term + self.lambda * self.coupling_term
    }
}

/// `||J - [[W1, W0^T, G]]||^2` and `||F - W1 R^T||^2`.
pub fn objective(
    j: &Tensor3,
    f: &DMatrix<f64>,
    w1: &DMatrix<f64>,
    w0: &DMatrix<f64>,
    g: &DMatrix<f64>,
    r: &DMatrix<f64>,
    lambda: f64,
) -> Result<ObjectiveTerms> {
    let approx = CpdFactors::new(w1.clone(), w0.transpose(), g.clone())?.reconstruct();
    let tensor_term = j.distance_sq(&approx)?;
    if f.shape() != (w1.nrows(), r.nrows()) {
        return Err(Error::Shape(format!(
            "F is {:?}, W1 R^T is {}x{}",
            f.shape(),
            w1.nrows(),
            r.nrows()
        )));
    }
    let coupling_term = frob_norm_sq(&(f - w1 * r.transpose()));
    Ok(ObjectiveTerms {
        tensor_term,
        coupling_term,
        lambda,
    })
}

/// Scales column `i` of `W0^T` (row `i` of `W0`) to unit norm and column
/// `i` of `W1` by the removed norm, leaving `[[W1, W0^T, G]]` unchanged.
/// Returns the indices of zero rows, which are left untouched.
pub fn normalize_columns_w0t(w0: &mut DMatrix<f64>, w1: &mut DMatrix<f64>) -> Vec<usize> {
    let mut skipped = Vec::new();
    for i in 0..w0.nrows() {
        let beta = w0.row(i).norm();
        if beta == 0.0 || !beta.is_finite() {
            skipped.push(i);
            continue;
        }
        w0.row_mut(i).unscale_mut(beta);
        w1.column_mut(i).scale_mut(beta);
    }
    skipped
}

/// Precomputed transposed unfoldings of the data.
pub struct Unfoldings {
    /// `unfold_1(J)^T`, `(m S) x n`
    pub u1t: DMatrix<f64>,
    /// `unfold_2(J)^T`, `(n S) x m`
    pub u2t: DMatrix<f64>,
    /// `unfold_3(J)^T`, `(n m) x S`
    pub u3t: DMatrix<f64>,
    /// `F^T`, `S x n`
    pub ft: DMatrix<f64>,
}

impl Unfoldings {
    pub fn new(j: &Tensor3, f: &DMatrix<f64>) -> Self {
        Self {
            u1t: j.unfold(Mode::One).transpose(),
            u2t: j.unfold(Mode::Two).transpose(),
            u3t: j.unfold(Mode::Three).transpose(),
            ft: f.transpose(),
        }
    }
}

/// Individual ALS updates. Each returns the minimizer of its subproblem and
/// whether the least-squares system was rank deficient.
pub mod steps {
    use super::*;

    /// `argmin_W1 ||unfold_1(J) - W1 (G kr W0^T)^T||^2 + lambda ||F - W1 R^T||^2`
    pub fn update_w1(
        data: &Unfoldings,
        w0: &DMatrix<f64>,
        g: &DMatrix<f64>,
        r: &DMatrix<f64>,
        lambda: f64,
    ) -> Result<(DMatrix<f64>, bool)> {
        let kr = khatri_rao(g, &w0.transpose())?;
        let sol = stacked_lstsq(&kr, &data.u1t, r, &data.ft, lambda)?;
        Ok((sol.x.transpose(), sol.rank_deficient))
    }

    /// `argmin_W0 ||unfold_2(J) - W0^T (G kr W1)^T||^2`
    pub fn update_w0(data: &Unfoldings, w1: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
        let kr = khatri_rao(g, w1)?;
        let sol = lstsq(&kr, &data.u2t)?;
        Ok((sol.x, sol.rank_deficient))
    }

    /// `argmin_G ||unfold_3(J) - G (W0^T kr W1)^T||^2`
    pub fn update_g(data: &Unfoldings, w1: &DMatrix<f64>, w0: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
        let kr = khatri_rao(&w0.transpose(), w1)?;
        let sol = lstsq(&kr, &data.u3t)?;
        Ok((sol.x.transpose(), sol.rank_deficient))
    }

    /// `argmin_R ||F - W1 R^T||^2`. When `W1` has more columns than rows
    /// the minimizer is not unique; the one closest to `current` is returned.
    pub fn update_r(data: &Unfoldings, w1: &DMatrix<f64>, current: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
        let residual = data.ft.transpose() - w1 * current.transpose();
        let sol = lstsq(w1, &residual)?;
        Ok((current + sol.x.transpose(), sol.rank_deficient))
    }
}

/// One line of the per-iteration trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub tensor_term: f64,
    pub coupling_term: f64,
    pub lambda: f64,
}

/// Final iterate and bookkeeping of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitState {
    pub w1: DMatrix<f64>,
    pub w0: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
    /// True when the relative-change criterion fired before `max_iter`.
    pub converged: bool,
    /// Number of least-squares solves flagged rank deficient.
    pub rank_deficient_solves: usize,
    /// Number of branch projections replaced by the LeakyReLU fallback.
    pub fallback_events: usize,
    /// Distinct warning messages, in first-seen order.
    pub warnings: Vec<String>,
}

impl FitState {
    fn warn(&mut self, msg: String) {
        if !self.warnings.contains(&msg) {
            self.warnings.push(msg);
        }
    }

    /// Per-iteration trace as CSV: `iter,objective,tensor_term,coupling_term`.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,objective,tensor_term,coupling_term\n");
        for h in &self.history {
            out.push_str(&format!(
                "{},{:e},{:e},{:e}\n",
                h.iter, h.objective, h.tensor_term, h.coupling_term
            ));
        }
        out
    }

    /// `[[W1, W0^T, G]]` at the final iterate.
    pub fn reconstruction(&self) -> Tensor3 {
        CpdFactors::new(self.w1.clone(), self.w0.transpose(), self.g.clone())
            .expect("fit state factors share the rank")
            .reconstruct()
    }
}

/// Output of [`cmtf_bsd`].
#[derive(Debug, Clone)]
pub struct Fit {
    pub model: DecoupledModel,
    pub state: FitState,
}

fn check_finite(name: &str, m: &DMatrix<f64>, iter: usize) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{name} after iteration {iter}")))
    }
}

/// Runs CMTF-BSD on the Jacobian tensor `j` (`n x m x S`), zeroth-order
/// matrix `f` (`n x S`) and input samples (`m x S`).
///
/// Each iteration updates, in order: `W1` (coupled), `W0`, the column
/// normalization of `W0^T`, `G`, `R`, and finally projects `G` and `R` onto
/// B-splines fitted at `W0 * samples`. Iteration stops after `max_iter`
/// sweeps or once the objective changes by less than `rel_tol` relative to
/// its previous value.
pub fn cmtf_bsd(j: &Tensor3, f: &DMatrix<f64>, samples: &DMatrix<f64>, config: &CmtfConfig) -> Result<Fit> {
    config.validate()?;
    let (n, m, s) = j.dims();
    if f.shape() != (n, s) {
        return Err(Error::Shape(format!("F is {:?}, expected {:?}", f.shape(), (n, s))));
    }
    if samples.shape() != (m, s) {
        return Err(Error::Shape(format!(
            "samples are {:?}, expected {:?}",
            samples.shape(),
            (m, s)
        )));
    }
    let min_samples = config.dof + config.degree + 2;
    if s < min_samples {
        return Err(Error::Shape(format!(
            "{s} samples, need at least dof + degree + 2 = {min_samples}"
        )));
    }
    if !j.is_finite() || f.iter().any(|v| !v.is_finite()) || samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input data".into()));
    }

    let rank = config.rank;
    let mut rng = seeded_rng(config.seed, STREAM_INIT);
    let mut normal = |rows: usize, cols: usize, scale: f64| {
        DMatrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
    };
    let w0 = normal(rank, m, config.init_scale);
    let g = normal(s, rank, 1.0);
    let r = normal(s, rank, 1.0);

    let data = Unfoldings::new(j, f);
    let mut state = FitState {
        w1: DMatrix::zeros(n, rank),
        w0,
        g,
        r,
        iterations: 0,
        history: Vec::new(),
        converged: false,
        rank_deficient_solves: 0,
        fallback_events: 0,
        warnings: Vec::new(),
    };
    let mut branches = Vec::new();

    for iter in 0..config.max_iter {
        let lambda = config.lambda_at(iter);

        let (w1, deficient) = steps::update_w1(&data, &state.w0, &state.g, &state.r, lambda)?;
        state.w1 = w1;
        let mut deficient_solves = usize::from(deficient);

        let (w0, deficient) = steps::update_w0(&data, &state.w1, &state.g)?;
        state.w0 = w0;
        deficient_solves += usize::from(deficient);

        let skipped = normalize_columns_w0t(&mut state.w0, &mut state.w1);
        if !skipped.is_empty() {
            state.warn(format!("zero rows of W0 left unnormalized: {skipped:?}"));
        }

        let (g, deficient) = steps::update_g(&data, &state.w1, &state.w0)?;
        state.g = g;
        deficient_solves += usize::from(deficient);

        let (r, deficient) = steps::update_r(&data, &state.w1, &state.r)?;
        state.r = r;
        deficient_solves += usize::from(deficient);

        for (name, mat) in [("W1", &state.w1), ("W0", &state.w0), ("G", &state.g), ("R", &state.r)] {
            check_finite(name, mat, iter)?;
        }

        let xsamples = &state.w0 * samples;
        let settings = ProjectionSettings::from_config(config, lambda);
        let proj = bspline_projection(&state.g, &state.r, &xsamples, &settings)?;
        deficient_solves += proj.rank_deficient.len();
        state.fallback_events += proj.fallbacks.len();
        if !proj.coincident_knots.is_empty() {
            state.warn(format!("coincident knots in branches {:?}", proj.coincident_knots));
        }
        if !proj.nnls_capped.is_empty() {
            state.warn(format!("NNLS iteration cap reached in branches {:?}", proj.nnls_capped));
        }
        state.g = proj.g;
        state.r = proj.r;
        branches = proj.branches;
        check_finite("projected G", &state.g, iter)?;
        check_finite("projected R", &state.r, iter)?;

        if deficient_solves > 0 {
            state.rank_deficient_solves += deficient_solves;
            state.warn("rank-deficient least-squares subproblems (minimum-norm solutions used)".into());
        }

        let terms = objective(j, f, &state.w1, &state.w0, &state.g, &state.r, lambda)?;
        let total = terms.total();
        if !total.is_finite() {
            return Err(Error::NonFinite(format!("objective after iteration {iter}")));
        }
        let previous = state.history.last().map(|h| h.objective);
        state.history.push(IterationRecord {
            iter,
            objective: total,
            tensor_term: terms.tensor_term,
            coupling_term: terms.coupling_term,
            lambda,
        });
        state.iterations = iter + 1;

        if let Some(prev) = previous {
            let scale = prev.abs().max(f64::MIN_POSITIVE);
            if (prev - total).abs() <= config.rel_tol * scale {
                state.converged = true;
                break;
            }
        }
        if total == 0.0 {
            state.converged = true;
            break;
        }
    }

    let model = DecoupledModel::new(state.w1.clone(), state.w0.clone(), branches, config.clone())?;
    Ok(Fit { model, state })
}
