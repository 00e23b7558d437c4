//! Synthetic decoupled systems with closed-form branch derivatives, seeded
//! input sampling and exact Jacobian-tensor construction.
//!
//! Random streams: every generator is a `ChaCha8Rng` seeded with the run
//! seed and a fixed stream id, so input samples, system matrices and fit
//! initialization drawn from the same seed never share random numbers.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor3::Tensor3;

pub const STREAM_SAMPLES: u64 = 0;
pub const STREAM_SYSTEM: u64 = 1;
pub const STREAM_INIT: u64 = 2;

/// Samples closer than this to a branch singularity are redrawn.
pub const SINGULARITY_GUARD: f64 = 1e-6;

pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Univariate functions with hand-coded derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnalyticFn {
    /// `sin(a u) + b`
    Sin { a: f64, b: f64 },
    /// `cos(a u) + b`
    Cos { a: f64, b: f64 },
    /// `sin(a u) + u / 2`
    SinPlusHalfU { a: f64 },
    /// `u^3 / 3 + u`
    CubicPlusLinear,
    /// `exp(u)`
    Exp,
    /// `1 / (1 - exp(-u))`, singular at zero
    InvOneMinusExp,
    /// `1 / (1 + exp(-u))`
    Logistic,
    /// `slope u + offset`
    Affine { slope: f64, offset: f64 },
}

impl AnalyticFn {
    pub fn value(&self, u: f64) -> f64 {
        match *self {
            AnalyticFn::Sin { a, b } => (a * u).sin() + b,
            AnalyticFn::Cos { a, b } => (a * u).cos() + b,
            AnalyticFn::SinPlusHalfU { a } => (a * u).sin() + 0.5 * u,
            AnalyticFn::CubicPlusLinear => u * u * u / 3.0 + u,
            AnalyticFn::Exp => u.exp(),
            AnalyticFn::InvOneMinusExp => 1.0 / (1.0 - (-u).exp()),
            AnalyticFn::Logistic => 1.0 / (1.0 + (-u).exp()),
            AnalyticFn::Affine { slope, offset } => slope * u + offset,
        }
    }

    pub fn derivative(&self, u: f64) -> f64 {
        match *self {
            AnalyticFn::Sin { a, .. } => a * (a * u).cos(),
            AnalyticFn::Cos { a, .. } => -a * (a * u).sin(),
            AnalyticFn::SinPlusHalfU { a } => a * (a * u).cos() + 0.5,
            AnalyticFn::CubicPlusLinear => u * u + 1.0,
            AnalyticFn::Exp => u.exp(),
            AnalyticFn::InvOneMinusExp => {
                let e = (-u).exp();
                -e / ((1.0 - e) * (1.0 - e))
            }
            AnalyticFn::Logistic => {
                let l = 1.0 / (1.0 + (-u).exp());
                l * (1.0 - l)
            }
            AnalyticFn::Affine { slope, .. } => slope,
        }
    }

    /// True when `u` is too close to a pole to evaluate reliably.
    pub fn near_singularity(&self, u: f64) -> bool {
        matches!(self, AnalyticFn::InvOneMinusExp) && u.abs() < SINGULARITY_GUARD
    }
}

/// `f(x) = W1 g(W0 x)` with analytic branches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSystem {
    pub w1: DMatrix<f64>,
    pub w0: DMatrix<f64>,
    pub branches: Vec<AnalyticFn>,
}

impl SyntheticSystem {
    pub fn new(w1: DMatrix<f64>, w0: DMatrix<f64>, branches: Vec<AnalyticFn>) -> Result<Self> {
        let r = branches.len();
        if r == 0 || w1.ncols() != r || w0.nrows() != r {
            return Err(Error::Shape(format!(
                "W1 is {:?}, W0 is {:?}, {} branches",
                w1.shape(),
                w0.shape(),
                r
            )));
        }
        Ok(Self { w1, w0, branches })
    }

    pub fn inputs(&self) -> usize {
        self.w0.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w1.nrows()
    }

    pub fn rank(&self) -> usize {
        self.branches.len()
    }

    fn check_inputs(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.inputs() {
            return Err(Error::Shape(format!(
                "system takes {} inputs, samples have {} rows",
                self.inputs(),
                x.nrows()
            )));
        }
        Ok(())
    }

    /// Projected inputs `U = W0 X` (`r x S`).
    pub fn latent(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_inputs(x)?;
        Ok(&self.w0 * x)
    }

    /// `S x r` matrix of branch values at the projected samples.
    pub fn branch_values(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let u = self.latent(x)?;
        self.map_latent(&u, |b, v| b.value(v))
    }

    /// `S x r` matrix of branch derivatives at the projected samples.
    pub fn branch_derivatives(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let u = self.latent(x)?;
        self.map_latent(&u, |b, v| b.derivative(v))
    }

    fn map_latent(&self, u: &DMatrix<f64>, f: impl Fn(&AnalyticFn, f64) -> f64) -> Result<DMatrix<f64>> {
        let (r, s) = u.shape();
        let mut out = DMatrix::zeros(s, r);
        for sample in 0..s {
            for (i, branch) in self.branches.iter().enumerate() {
                let v = f(branch, u[(i, sample)]);
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "branch {i} at sample {sample} (u = {})",
                        u[(i, sample)]
                    )));
                }
                out[(sample, i)] = v;
            }
        }
        Ok(out)
    }

    /// `f(x)` for a single input.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let f = self.zeroth_matrix(&DMatrix::from_column_slice(x.len(), 1, x))?;
        Ok(f.column(0).iter().copied().collect())
    }

    /// Jacobian tensor with frontal slice `s` equal to
    /// `W1 diag(g'(W0 x_s)) W0`.
    pub fn jacobian_tensor(&self, x: &DMatrix<f64>) -> Result<Tensor3> {
        let g = self.branch_derivatives(x)?;
        let slices: Vec<DMatrix<f64>> = (0..x.ncols())
            .map(|s| {
                let mut scaled = self.w1.clone();
                for i in 0..self.rank() {
                    scaled.column_mut(i).scale_mut(g[(s, i)]);
                }
                scaled * &self.w0
            })
            .collect();
        Tensor3::from_slices(&slices)
    }

    /// `n x S` matrix whose column `s` is `f(x_s)`.
    pub fn zeroth_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let r = self.branch_values(x)?;
        Ok(&self.w1 * r.transpose())
    }

    /// Whether any branch is near a singularity at input `x`.
    pub fn near_singularity(&self, x: &[f64]) -> bool {
        let u = &self.w0 * DMatrix::from_column_slice(x.len(), 1, x);
        self.branches
            .iter()
            .enumerate()
            .any(|(i, b)| b.near_singularity(u[(i, 0)]))
    }
}

/// Input samples stored as an `m x S` matrix, one sample per column.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub x: DMatrix<f64>,
    pub lo: f64,
    pub hi: f64,
    pub seed: u64,
    /// Samples redrawn because they hit a branch singularity.
    pub resampled: usize,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.x.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.ncols() == 0
    }
}

/// `S` i.i.d. points uniform on `[lo, hi)^m`, drawn sample by sample
/// (coordinates of one sample are consecutive draws).
pub fn sample_uniform(m: usize, s: usize, lo: f64, hi: f64, seed: u64) -> Result<SampleSet> {
    sample_uniform_where(m, s, lo, hi, seed, |_| true)
}

/// Like [`sample_uniform`] but redraws any sample near a singularity of
/// `system`.
pub fn sample_for_system(system: &SyntheticSystem, s: usize, lo: f64, hi: f64, seed: u64) -> Result<SampleSet> {
    sample_uniform_where(system.inputs(), s, lo, hi, seed, |x| !system.near_singularity(x))
}

fn sample_uniform_where(
    m: usize,
    s: usize,
    lo: f64,
    hi: f64,
    seed: u64,
    accept: impl Fn(&[f64]) -> bool,
) -> Result<SampleSet> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!("invalid sampling bounds [{lo}, {hi})")));
    }
    let mut rng = seeded_rng(seed, STREAM_SAMPLES);
    let mut x = DMatrix::zeros(m, s);
    let mut resampled = 0;
    let mut point = vec![0.0; m];
    for col in 0..s {
        loop {
            for v in point.iter_mut() {
                *v = rng.gen_range(lo..hi);
            }
            if accept(&point) {
                break;
            }
            resampled += 1;
        }
        x.column_mut(col).copy_from_slice(&point);
    }
    Ok(SampleSet {
        x,
        lo,
        hi,
        seed,
        resampled,
    })
}

/// The trigonometric test system with two inputs, two outputs and three
/// branches.
pub fn builtin_trig() -> SyntheticSystem {
    let w1 = DMatrix::from_row_slice(2, 3, &[-1.7, -2.3, 2.5, 0.5, -0.5, 0.2]);
    let w0 = DMatrix::from_row_slice(3, 2, &[2.1, -1.0, 0.4, -1.8, -1.6, -0.2]);
    let branches = vec![
        AnalyticFn::Sin { a: 1.0, b: 2.0 },
        AnalyticFn::Cos { a: 2.0, b: -1.5 },
        AnalyticFn::SinPlusHalfU { a: 2.0 },
    ];
    SyntheticSystem { w1, w0, branches }
}

/// Three-branch system with branches `u^3/3 + u`, `exp(u)` and
/// `1/(1 - exp(-u))`; `W0` then `W1` (row-major) are drawn from U(-2, 2).
pub fn builtin_mono(seed: u64) -> SyntheticSystem {
    builtin_mono_with(seed, AnalyticFn::InvOneMinusExp)
}

/// [`builtin_mono`] with a different third branch.
pub fn builtin_mono_with(seed: u64, third: AnalyticFn) -> SyntheticSystem {
    let mut rng = seeded_rng(seed, STREAM_SYSTEM);
    let mut draw = |rows, cols| {
        let v: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
        DMatrix::from_row_slice(rows, cols, &v)
    };
    let w0 = draw(3, 3);
    let w1 = draw(3, 3);
    SyntheticSystem {
        w1,
        w0,
        branches: vec![
            AnalyticFn::CubicPlusLinear,
            AnalyticFn::Exp,
            third,
        ],
    }
}
