use serde::{Deserialize, Serialize};

use crate::decoupling::Constraint;
use crate::error::{Error, Result};

/// Outcome of one fit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    Failed(String),
}

/// Metrics of one execution of one grid cell.
///
/// Output errors are percentages; `None` marks an undefined value (failed
/// run or constant output).
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_index: usize,
    pub seed: u64,
    pub degree: usize,
    pub df: usize,
    pub constraint: Constraint,
    pub error_j: Option<f64>,
    /// `e_i` of the fitted spline model.
    pub e_spline: Vec<Option<f64>>,
    /// `e_i` after the degree-10 polynomial re-fit of every branch.
    pub e_poly: Vec<Option<f64>>,
    /// Per-branch monotonicity certificate.
    pub certified: Vec<bool>,
    pub iterations: usize,
    pub converged: bool,
    pub fallbacks: usize,
    /// Samples redrawn because they fell next to a pole.
    pub resampled: usize,
    pub status: RunStatus,
    /// Wall time of the fit; kept out of the results file so that reruns
    /// produce identical bytes.
    pub wall_ms: f64,
}

impl RunRecord {
    pub fn all_certified(&self) -> bool {
        self.status == RunStatus::Ok && !self.certified.is_empty() && self.certified.iter().all(|&c| c)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    run_index: usize,
    seed: u64,
    degree: usize,
    df: usize,
    constraint: String,
    error_j: String,
    e_spline: String,
    e_poly: String,
    certified: String,
    all_certified: bool,
    iterations: usize,
    converged: bool,
    fallbacks: usize,
    resampled: usize,
    status: String,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

fn fmt_item(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_else(|| "na".into())
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() || s == "na" {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::Parse(format!("bad number {s:?} in results file")))
}

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(";")
}

fn split(s: &str) -> impl Iterator<Item = &str> {
    s.split(';').filter(|_| !s.is_empty())
}

fn constraint_name(c: Constraint) -> &'static str {
    match c {
        Constraint::None => "none",
        Constraint::MonotoneIncreasing => "monotone",
    }
}

impl From<&RunRecord> for Row {
    fn from(r: &RunRecord) -> Self {
        Row {
            run_index: r.run_index,
            seed: r.seed,
            degree: r.degree,
            df: r.df,
            constraint: constraint_name(r.constraint).into(),
            error_j: fmt_opt(r.error_j),
            e_spline: join(&r.e_spline, |v| fmt_item(*v)),
            e_poly: join(&r.e_poly, |v| fmt_item(*v)),
            certified: join(&r.certified, |&c| u8::from(c).to_string()),
            all_certified: r.all_certified(),
            iterations: r.iterations,
            converged: r.converged,
            fallbacks: r.fallbacks,
            resampled: r.resampled,
            status: match &r.status {
                RunStatus::Ok => "ok".into(),
                RunStatus::Failed(msg) => format!("failed: {msg}"),
            },
        }
    }
}

impl TryFrom<Row> for RunRecord {
    type Error = Error;

    fn try_from(row: Row) -> Result<Self> {
        let opts = |s: &str| split(s).map(parse_opt).collect::<Result<Vec<_>>>();
        Ok(RunRecord {
            run_index: row.run_index,
            seed: row.seed,
            degree: row.degree,
            df: row.df,
            constraint: row.constraint.parse()?,
            error_j: parse_opt(&row.error_j)?,
            e_spline: opts(&row.e_spline)?,
            e_poly: opts(&row.e_poly)?,
            certified: split(&row.certified)
                .map(|c| match c {
                    "1" => Ok(true),
                    "0" => Ok(false),
                    other => Err(Error::Parse(format!("bad certificate flag {other:?}"))),
                })
                .collect::<Result<_>>()?,
            iterations: row.iterations,
            converged: row.converged,
            fallbacks: row.fallbacks,
            resampled: row.resampled,
            status: match row.status.as_str() {
                "ok" => RunStatus::Ok,
                s => RunStatus::Failed(s.strip_prefix("failed: ").unwrap_or(s).to_string()),
            },
            wall_ms: 0.0,
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(format!("results csv: {e}"))
}

/// Results file: one header row, one record per line. List-valued columns
/// (`e_spline`, `e_poly`, `certified`) separate entries with `;`. An
/// undefined value is an empty field, or `na` inside a list.
pub fn results_csv(records: &[RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(Row::from(r)).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

/// Parses [`results_csv`] output. Wall times are not stored and come back
/// as zero.
pub fn parse_results_csv(text: &str) -> Result<Vec<RunRecord>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    rd.deserialize::<Row>()
        .map(|row| row.map_err(csv_err).and_then(RunRecord::try_from))
        .collect()
}

/// `run_index,seed,degree,df,constraint,wall_ms`
pub fn timings_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("run_index,seed,degree,df,constraint,wall_ms\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{:.3}\n",
            r.run_index,
            r.seed,
            r.degree,
            r.df,
            constraint_name(r.constraint),
            r.wall_ms
        ));
    }
    out
}
