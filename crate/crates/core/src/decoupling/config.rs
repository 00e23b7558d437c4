use serde::{Deserialize, Serialize};

use crate::bspline::Representation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    None,
    MonotoneIncreasing,
}

impl std::str::FromStr for Constraint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Constraint::None),
            "monotone" | "monotone_increasing" | "monotone-increasing" => Ok(Constraint::MonotoneIncreasing),
            other => Err(Error::Config(format!("unknown constraint {other:?}"))),
        }
    }
}

/// How the coupling weight evolves across iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaSchedule {
    Fixed,
    /// Multiply by `factor` after every iteration, never exceeding `cap`.
    Geometric { factor: f64, cap: f64 },
}

/// Settings of one CMTF-BSD fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmtfConfig {
    pub rank: usize,
    /// Degree of the branch functions `g_i`. Under the `GPrime`
    /// representation the stored basis (for `g'`) has degree `degree - 1`.
    pub degree: usize,
    /// Number of B-spline basis functions per branch.
    pub dof: usize,
    pub lambda: f64,
    pub lambda_schedule: LambdaSchedule,
    pub representation: Representation,
    pub constraint: Constraint,
    pub max_iter: usize,
    /// Stop once the objective changes by less than this fraction in one
    /// iteration.
    pub rel_tol: f64,
    pub seed: u64,
    pub init_scale: f64,
}

impl CmtfConfig {
    pub fn new(rank: usize, degree: usize, dof: usize) -> Self {
        Self {
            rank,
            degree,
            dof,
            lambda: 0.1,
            lambda_schedule: LambdaSchedule::Fixed,
            representation: Representation::G,
            constraint: Constraint::None,
            max_iter: 200,
            rel_tol: 1e-8,
            seed: 0,
            init_scale: 1.0,
        }
    }

    /// Monotone-increasing fit on the derivative representation.
    pub fn monotone(rank: usize, degree: usize, dof: usize) -> Self {
        Self {
            representation: Representation::GPrime,
            constraint: Constraint::MonotoneIncreasing,
            ..Self::new(rank, degree, dof)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    /// Degree of the spline basis actually stored per branch.
    pub fn basis_degree(&self) -> usize {
        match self.representation {
            Representation::G => self.degree,
            Representation::GPrime => self.degree - 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config("rank must be positive".into()));
        }
        if self.degree < 1 {
            return Err(Error::Config("spline degree must be at least 1".into()));
        }
        if self.dof <= self.degree {
            return Err(Error::Config(format!(
                "degrees of freedom ({}) must exceed the degree ({})",
                self.dof, self.degree
            )));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be positive, got {}", self.lambda)));
        }
        if let LambdaSchedule::Geometric { factor, cap } = self.lambda_schedule {
            if !(factor > 0.0) || !(cap > 0.0) || !factor.is_finite() || !cap.is_finite() {
                return Err(Error::Config("geometric schedule needs positive factor and cap".into()));
            }
        }
        if self.constraint == Constraint::MonotoneIncreasing && self.representation != Representation::GPrime {
            return Err(Error::Config(
                "the monotone constraint needs the derivative (gprime) representation".into(),
            ));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be positive".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config("rel_tol must be positive".into()));
        }
        if !(self.init_scale > 0.0) || !self.init_scale.is_finite() {
            return Err(Error::Config("init_scale must be positive".into()));
        }
        Ok(())
    }

    /// Coupling weight after `iteration` completed iterations.
    pub fn lambda_at(&self, iteration: usize) -> f64 {
        match self.lambda_schedule {
            LambdaSchedule::Fixed => self.lambda,
            LambdaSchedule::Geometric { factor, cap } => {
                let mut l = self.lambda;
                for _ in 0..iteration {
                    l = (l * factor).min(cap);
                }
                l
            }
        }
    }
}
