use std::fs;
use std::path::Path;
use std::time::Instant;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::metrics::{error_tensor, output_error, refit_predict, REFIT_DEGREE};
use super::plot::{boxplot_svg, BoxSeries};
use super::records::{results_csv, timings_csv, RunRecord, RunStatus};
use crate::bspline::Representation;
use crate::decoupling::{cmtf_bsd, CmtfConfig, Constraint};
use crate::error::{Error, Result};
use crate::sysgen::{builtin_mono, builtin_trig, sample_for_system, SyntheticSystem};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    /// Fixed trigonometric system, sweep over degree and df.
    Trig,
    /// Random monotone-branch systems, with and without the constraint.
    Mono,
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trig" => Ok(ExperimentKind::Trig),
            "mono" => Ok(ExperimentKind::Mono),
            other => Err(Error::Config(format!("unknown experiment {other:?} (trig or mono)"))),
        }
    }
}

impl std::fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExperimentKind::Trig => "trig",
            ExperimentKind::Mono => "mono",
        })
    }
}

/// How runs are scheduled. Results are identical either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is on, otherwise
    /// runs sequentially.
    Parallel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub degrees: Vec<usize>,
    pub dofs: Vec<usize>,
    pub runs: usize,
    pub samples: usize,
    pub lo: f64,
    pub hi: f64,
    pub lambda: f64,
    pub max_iter: usize,
    /// Run `i` uses seed `base_seed + i` for its samples, system and
    /// initialization.
    pub base_seed: u64,
}

impl ExperimentSpec {
    /// Degrees 1 to 3, df 4 to 28 in steps of 2, 30 runs of 100 samples
    /// from U(-1.5, 1.5).
    pub fn trig() -> Self {
        Self {
            kind: ExperimentKind::Trig,
            degrees: vec![1, 2, 3],
            dofs: (4..=28).step_by(2).collect(),
            runs: 30,
            samples: 100,
            lo: -1.5,
            hi: 1.5,
            lambda: 0.1,
            max_iter: 200,
            base_seed: 0,
        }
    }

    /// Degree 4, df 8 to 20 in steps of 2, 30 runs of 100 samples from
    /// U(-1.5, 1.5), each run fitted with and without the constraint.
    pub fn mono() -> Self {
        Self {
            kind: ExperimentKind::Mono,
            degrees: vec![4],
            dofs: (8..=20).step_by(2).collect(),
            ..Self::trig()
        }
    }

    pub fn for_kind(kind: ExperimentKind) -> Self {
        match kind {
            ExperimentKind::Trig => Self::trig(),
            ExperimentKind::Mono => Self::mono(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.degrees.is_empty() || self.dofs.is_empty() {
            return Err(Error::Config("degree and df grids must be nonempty".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if !(self.lo < self.hi) {
            return Err(Error::Config(format!("empty sampling box [{}, {}]", self.lo, self.hi)));
        }
        if self.kind == ExperimentKind::Mono && self.degrees.contains(&0) {
            return Err(Error::Config("the derivative representation needs degree >= 1".into()));
        }
        for &d in &self.degrees {
            self.fit_config(d, self.dofs[0], Constraint::None, 0).validate()?;
        }
        Ok(())
    }

    fn fit_config(&self, degree: usize, df: usize, constraint: Constraint, seed: u64) -> CmtfConfig {
        let mut c = CmtfConfig::new(3, degree, df)
            .with_lambda(self.lambda)
            .with_max_iter(self.max_iter)
            .with_seed(seed);
        if self.kind == ExperimentKind::Mono {
            c.representation = Representation::GPrime;
            c.constraint = constraint;
        }
        c
    }

    fn jobs(&self) -> Vec<Job> {
        let constraints: &[Constraint] = match self.kind {
            ExperimentKind::Trig => &[Constraint::None],
            ExperimentKind::Mono => &[Constraint::None, Constraint::MonotoneIncreasing],
        };
        let mut jobs = Vec::new();
        for &degree in &self.degrees {
            for &df in &self.dofs {
                for &constraint in constraints {
                    for run_index in 0..self.runs {
                        jobs.push(Job {
                            degree,
                            df,
                            constraint,
                            run_index,
                        });
                    }
                }
            }
        }
        jobs
    }

    fn system(&self, seed: u64) -> SyntheticSystem {
        match self.kind {
            ExperimentKind::Trig => builtin_trig(),
            ExperimentKind::Mono => builtin_mono(seed),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Job {
    degree: usize,
    df: usize,
    constraint: Constraint,
    run_index: usize,
}

fn execute(spec: &ExperimentSpec, job: Job) -> RunRecord {
    let seed = spec.base_seed.wrapping_add(job.run_index as u64);
    let mut record = RunRecord {
        run_index: job.run_index,
        seed,
        degree: job.degree,
        df: job.df,
        constraint: job.constraint,
        error_j: None,
        e_spline: Vec::new(),
        e_poly: Vec::new(),
        certified: Vec::new(),
        iterations: 0,
        converged: false,
        fallbacks: 0,
        resampled: 0,
        status: RunStatus::Ok,
        wall_ms: 0.0,
    };
    let start = Instant::now();
    if let Err(e) = fill(spec, job, seed, &mut record) {
        record.status = RunStatus::Failed(e.to_string());
    }
    record.wall_ms = start.elapsed().as_secs_f64() * 1e3;
    record
}

fn fill(spec: &ExperimentSpec, job: Job, seed: u64, record: &mut RunRecord) -> Result<()> {
    let system = spec.system(seed);
    let samples = sample_for_system(&system, spec.samples, spec.lo, spec.hi, seed)?;
    record.resampled = samples.resampled;
    let j = system.jacobian_tensor(&samples.x)?;
    let f = system.zeroth_matrix(&samples.x)?;
    let config = spec.fit_config(job.degree, job.df, job.constraint, seed);
    let fit = cmtf_bsd(&j, &f, &samples.x, &config)?;

    record.iterations = fit.state.iterations;
    record.converged = fit.state.converged;
    record.fallbacks = fit.state.fallback_events;
    record.certified = fit.model.certify().iter().map(|c| c.is_certified()).collect();
    record.error_j = Some(error_tensor(&j, &fit.state.reconstruction())?);
    record.e_spline = output_error(&f, &fit.model.predict(&samples.x)?)?;
    record.e_poly = match refit_predict(&fit.model, &samples.x, REFIT_DEGREE) {
        Ok(pred) => output_error(&f, &pred)?,
        Err(_) => vec![None; f.nrows()],
    };
    Ok(())
}

/// Runs every (degree, df, constraint, run) job of `spec`. Records come
/// back in grid order regardless of `execution`. Failed fits are recorded,
/// not propagated.
pub fn run_experiment(spec: &ExperimentSpec, execution: Execution) -> Result<Vec<RunRecord>> {
    spec.validate()?;
    let jobs = spec.jobs();
    let records = match execution {
        Execution::Sequential => jobs.into_iter().map(|job| execute(spec, job)).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel => jobs.into_par_iter().map(|job| execute(spec, job)).collect(),
        #[cfg(not(feature = "parallel"))]
        Execution::Parallel => jobs.into_iter().map(|job| execute(spec, job)).collect(),
    };
    Ok(records)
}

pub fn run_trig_experiment(spec: &ExperimentSpec, execution: Execution) -> Result<Vec<RunRecord>> {
    if spec.kind != ExperimentKind::Trig {
        return Err(Error::Config("expected a trig experiment spec".into()));
    }
    run_experiment(spec, execution)
}

pub fn run_mono_experiment(spec: &ExperimentSpec, execution: Execution) -> Result<Vec<RunRecord>> {
    if spec.kind != ExperimentKind::Mono {
        return Err(Error::Config("expected a mono experiment spec".into()));
    }
    run_experiment(spec, execution)
}

/// Median of the finite values (mean of the middle pair for even counts).
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Per-cell medians and counts.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub degree: usize,
    pub df: usize,
    pub constraint: Constraint,
    pub runs: usize,
    pub failed: usize,
    pub median_error_j: Option<f64>,
    pub median_e_spline: Vec<Option<f64>>,
    pub median_e_poly: Vec<Option<f64>>,
    /// Runs whose branches are all certified monotone.
    pub certified_runs: usize,
}

fn column(records: &[&RunRecord], pick: impl Fn(&RunRecord) -> Option<f64>) -> Vec<f64> {
    records.iter().filter_map(|r| pick(r)).collect()
}

/// Groups records by (degree, df, constraint) in first-seen order.
pub fn summarize(records: &[RunRecord]) -> Vec<CellSummary> {
    let mut keys: Vec<(usize, usize, Constraint)> = Vec::new();
    for r in records {
        let key = (r.degree, r.df, r.constraint);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(degree, df, constraint)| {
            let cell: Vec<&RunRecord> = records
                .iter()
                .filter(|r| (r.degree, r.df, r.constraint) == (degree, df, constraint))
                .collect();
            let outputs = cell.iter().map(|r| r.e_spline.len()).max().unwrap_or(0);
            let per_output = |pick: fn(&RunRecord) -> &Vec<Option<f64>>| {
                (0..outputs)
                    .map(|i| median(&column(&cell, |r| pick(r).get(i).copied().flatten())))
                    .collect()
            };
            CellSummary {
                degree,
                df,
                constraint,
                runs: cell.len(),
                failed: cell.iter().filter(|r| r.status != RunStatus::Ok).count(),
                median_error_j: median(&column(&cell, |r| r.error_j)),
                median_e_spline: per_output(|r| &r.e_spline),
                median_e_poly: per_output(|r| &r.e_poly),
                certified_runs: cell.iter().filter(|r| r.all_certified()).count(),
            }
        })
        .collect()
}

fn summary_csv(cells: &[CellSummary]) -> String {
    let fmt = |v: &Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_else(|| "na".into());
    let list = |v: &[Option<f64>]| v.iter().map(fmt).collect::<Vec<_>>().join(";");
    let mut out = String::from(
        "degree,df,constraint,runs,failed,median_error_j,median_e_spline,median_e_poly,certified_runs\n",
    );
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            c.degree,
            c.df,
            if c.constraint == Constraint::None { "none" } else { "monotone" },
            c.runs,
            c.failed,
            fmt(&c.median_error_j),
            list(&c.median_e_spline),
            list(&c.median_e_poly),
            c.certified_runs
        ));
    }
    out
}

/// Table of runs with all branches certified, one column per df and one
/// row per constraint mode.
pub fn certification_table(records: &[RunRecord]) -> String {
    let cells = summarize(records);
    let mut dofs: Vec<usize> = cells.iter().map(|c| c.df).collect();
    dofs.dedup();
    dofs.sort_unstable();
    dofs.dedup();
    let mut out = String::from("mode");
    for df in &dofs {
        out.push_str(&format!(",df={df}"));
    }
    out.push('\n');
    for (name, constraint) in [("unconstrained", Constraint::None), ("monotone", Constraint::MonotoneIncreasing)] {
        if !cells.iter().any(|c| c.constraint == constraint) {
            continue;
        }
        out.push_str(name);
        for &df in &dofs {
            let (hits, runs) = cells
                .iter()
                .filter(|c| c.df == df && c.constraint == constraint)
                .fold((0, 0), |(h, n), c| (h + c.certified_runs, n + c.runs));
            out.push_str(&format!(",{hits}/{runs}"));
        }
        out.push('\n');
    }
    out
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::write(dir.join(name), contents)?;
    Ok(())
}

/// Writes `results.csv`, `timings.csv`, `summary.csv`, `certification.csv`
/// (mono) and, when `plots` is set, SVG boxplots into `dir`.
pub fn write_outputs(dir: &Path, spec: &ExperimentSpec, records: &[RunRecord], plots: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    write(dir, "results.csv", &results_csv(records)?)?;
    write(dir, "timings.csv", &timings_csv(records))?;
    write(dir, "summary.csv", &summary_csv(&summarize(records)))?;
    if spec.kind == ExperimentKind::Mono {
        write(dir, "certification.csv", &certification_table(records))?;
    }
    if !plots {
        return Ok(());
    }
    let categories: Vec<String> = spec.dofs.iter().map(|d| d.to_string()).collect();
    let groups: Vec<(String, usize, Constraint)> = match spec.kind {
        ExperimentKind::Trig => spec.degrees.iter().map(|&d| (format!("d={d}"), d, Constraint::None)).collect(),
        ExperimentKind::Mono => vec![
            ("unconstrained".into(), spec.degrees[0], Constraint::None),
            ("monotone".into(), spec.degrees[0], Constraint::MonotoneIncreasing),
        ],
    };
    let series = |pick: &dyn Fn(&RunRecord) -> Option<f64>| -> Vec<BoxSeries> {
        groups
            .iter()
            .map(|(label, degree, constraint)| BoxSeries {
                label: label.clone(),
                values: spec
                    .dofs
                    .iter()
                    .map(|&df| {
                        records
                            .iter()
                            .filter(|r| r.degree == *degree && r.df == df && r.constraint == *constraint)
                            .filter_map(pick)
                            .collect()
                    })
                    .collect(),
            })
            .collect()
    };
    write(
        dir,
        "error_j.svg",
        &boxplot_svg("Error(J)", "relative error", &categories, &series(&|r| r.error_j), None, true),
    )?;
    if spec.kind == ExperimentKind::Trig {
        let outputs = records.iter().map(|r| r.e_spline.len()).max().unwrap_or(0);
        for i in 0..outputs {
            let svg = boxplot_svg(
                &format!("output {} error (polynomial re-fit)", i + 1),
                "e [%]",
                &categories,
                &series(&|r| r.e_poly.get(i).copied().flatten()),
                Some(1.0),
                true,
            );
            write(dir, &format!("e{}.svg", i + 1), &svg)?;
            let svg = boxplot_svg(
                &format!("output {} error (spline model)", i + 1),
                "e [%]",
                &categories,
                &series(&|r| r.e_spline.get(i).copied().flatten()),
                Some(1.0),
                true,
            );
            write(dir, &format!("e{}_spline.svg", i + 1), &svg)?;
        }
    }
    Ok(())
}
