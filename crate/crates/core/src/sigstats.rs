//! Repeated end-to-end runs and per-base-function significance statistics.

use std::fmt::Write as _;
use std::io;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::exprlib::format_number;
use crate::featlib::{build_library, LibraryError, LibraryMatrix, LibrarySpec, Scaling};
use crate::rng::run_seed;
use crate::sparsesolve::{solve_multi, AlternativeError, SolveDiagnostics, SolverSettings};
use crate::synthgen::{Dataset, GeneratorConfig, Scenario, SynthError};

/// Fraction of failed runs above which an ensemble is rejected.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("{failed} of {total} runs failed (first: run {first_run}: {first_message})")]
    TooManyFailures { failed: usize, total: usize, first_run: usize, first_message: String },
    #[error("statistics need at least 2 runs, have {0}")]
    InsufficientRuns(usize),
    #[error("significance level must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// What each repeated run regenerates.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Redraw {
    /// Covariates, probabilities and choices.
    #[default]
    Full,
    /// Covariates fixed from run 0; only the choice draws change.
    ChoicesOnly,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("synthgen: {0}")]
    Synth(#[from] SynthError),
    #[error("featlib: {0}")]
    Library(#[from] LibraryError),
    #[error("sparsesolve: {}", join_errors(.0))]
    Solve(Vec<AlternativeError>),
}

fn join_errors(errors: &[AlternativeError]) -> String {
    errors.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// One experiment: data generation, library, solver and the alternatives to
/// fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub scenario: Scenario,
    pub rows: usize,
    pub replicates: u32,
    pub library: LibrarySpec,
    pub scaling: Scaling,
    pub solver: SolverSettings,
    /// Zero-based alternative indices to solve.
    pub alternatives: Vec<usize>,
    pub redraw: Redraw,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let config = self.generator_config(0);
        config.validate().map_err(|e| StatsError::InvalidPlan(e.to_string()))?;
        self.solver.validate().map_err(|e| StatsError::InvalidPlan(e.to_string()))?;
        if self.library.column_count() == 0 {
            return Err(StatsError::InvalidPlan("library is empty".into()));
        }
        if self.alternatives.is_empty() {
            return Err(StatsError::InvalidPlan("no alternatives selected".into()));
        }
        let mut seen = self.alternatives.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.alternatives.len() || seen.iter().any(|&a| a >= 2) {
            return Err(StatsError::InvalidPlan(format!(
                "alternatives must be distinct indices below 2, got {:?}",
                self.alternatives
            )));
        }
        Ok(())
    }

    fn generator_config(&self, seed: u64) -> GeneratorConfig {
        GeneratorConfig { scenario: self.scenario, rows: self.rows, replicates: self.replicates, seed }
    }

    /// Dataset of run `run` under master seed `master`.
    pub fn dataset(&self, master: u64, run: usize) -> std::result::Result<Dataset, SynthError> {
        let seed = run_seed(master, run);
        let covariate_seed = match self.redraw {
            Redraw::Full => seed,
            Redraw::ChoicesOnly => run_seed(master, 0),
        };
        Dataset::generate(&self.generator_config(covariate_seed), seed)
    }

    pub fn library(&self, dataset: &Dataset) -> std::result::Result<LibraryMatrix, LibraryError> {
        build_library(&self.library, &dataset.covariates, self.scaling)
    }

    /// Solves the selected alternatives and returns coefficients in
    /// original (unscaled) units, one column per selected alternative.
    pub fn solve(
        &self,
        library: &LibraryMatrix,
        dataset: &Dataset,
    ) -> std::result::Result<(DMatrix<f64>, Vec<SolveDiagnostics>), RunError> {
        let shares = dataset.observed.shares();
        if let Some(&a) = self.alternatives.iter().find(|&&a| a >= shares.ncols()) {
            return Err(RunError::Solve(vec![AlternativeError {
                alternative: a,
                source: crate::sparsesolve::SolveError::DimensionMismatch { expected: shares.ncols(), got: a + 1 },
            }]));
        }
        let observed = shares.select_columns(&self.alternatives);
        let solved = solve_multi(library, &observed, &self.solver).map_err(|errs| {
            RunError::Solve(
                errs.into_iter()
                    .map(|e| AlternativeError { alternative: self.alternatives[e.alternative], ..e })
                    .collect(),
            )
        })?;
        let mut coefficients = solved.values().clone();
        for mut col in coefficients.column_iter_mut() {
            let original = library.to_original_units(col.as_slice());
            col.copy_from_slice(&original);
        }
        let diagnostics = solved.outcomes().iter().map(|o| o.diagnostics()).collect();
        Ok((coefficients, diagnostics))
    }

    pub fn run(&self, master: u64, run: usize) -> std::result::Result<RunRecord, RunError> {
        let dataset = self.dataset(master, run)?;
        let library = self.library(&dataset)?;
        let (coefficients, diagnostics) = self.solve(&library, &dataset)?;
        Ok(RunRecord {
            run,
            seed: run_seed(master, run),
            names: library.names().to_vec(),
            labels: library.labels().to_vec(),
            coefficients,
            diagnostics,
        })
    }
}

/// Coefficients from one successful run (k × selected alternatives).
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub names: Vec<String>,
    pub labels: Vec<String>,
    pub coefficients: DMatrix<f64>,
    pub diagnostics: Vec<SolveDiagnostics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub run: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunEnsemble {
    pub master_seed: Option<u64>,
    pub names: Vec<String>,
    pub labels: Vec<String>,
    /// Zero-based alternative index of each coefficient column.
    pub alternatives: Vec<usize>,
    pub runs: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
}

impl RunEnsemble {
    /// Assembles an ensemble from externally produced runs (e.g. coefficient
    /// files), checking that they describe the same library.
    pub fn from_runs(runs: Vec<RunRecord>, alternatives: Vec<usize>) -> Result<Self> {
        let first = runs.first().ok_or(StatsError::InsufficientRuns(0))?;
        let (names, labels) = (first.names.clone(), first.labels.clone());
        for r in &runs {
            if r.names != names || r.labels != labels {
                return Err(StatsError::Format(format!("run {} uses a different library", r.run)));
            }
            if r.coefficients.shape() != (names.len(), alternatives.len()) {
                return Err(StatsError::Format(format!("run {} has the wrong coefficient shape", r.run)));
            }
        }
        Ok(RunEnsemble { master_seed: None, names, labels, alternatives, runs, failures: Vec::new() })
    }

    pub fn n_runs(&self) -> usize {
        self.runs.len()
    }

    pub fn run_seeds(&self) -> Vec<u64> {
        self.runs.iter().map(|r| r.seed).collect()
    }

    /// k × n_runs coefficients of the `position`-th solved alternative.
    pub fn coefficients(&self, position: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.names.len(), self.runs.len(), |j, r| self.runs[r].coefficients[(j, position)])
    }
}

pub fn run_repeated(plan: &ExperimentPlan, n_runs: usize, master_seed: u64) -> Result<RunEnsemble> {
    run_repeated_with_jobs(plan, n_runs, master_seed, None)
}

/// As [`run_repeated`], with at most `jobs` runs in flight.
pub fn run_repeated_with_jobs(
    plan: &ExperimentPlan,
    n_runs: usize,
    master_seed: u64,
    jobs: Option<usize>,
) -> Result<RunEnsemble> {
    if n_runs == 0 {
        return Err(StatsError::InvalidPlan("n_runs must be at least 1".into()));
    }
    plan.validate()?;
    let work = || -> Vec<std::result::Result<RunRecord, RunError>> {
        (0..n_runs).into_par_iter().map(|run| plan.run(master_seed, run)).collect()
    };
    let results = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| StatsError::InvalidPlan(e.to_string()))?
            .install(work),
        None => work(),
    };
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (run, result) in results.into_iter().enumerate() {
        match result {
            Ok(r) => runs.push(r),
            Err(e) => {
                log::warn!("run {run} failed: {e}");
                failures.push(RunFailure { run, seed: run_seed(master_seed, run), message: e.to_string() });
            }
        }
    }
    if failures.len() as f64 > MAX_FAILURE_FRACTION * n_runs as f64 || runs.is_empty() {
        let first = &failures[0];
        return Err(StatsError::TooManyFailures {
            failed: failures.len(),
            total: n_runs,
            first_run: first.run,
            first_message: first.message.clone(),
        });
    }
    let names = runs[0].names.clone();
    let labels = runs[0].labels.clone();
    Ok(RunEnsemble {
        master_seed: Some(master_seed),
        names,
        labels,
        alternatives: plan.alternatives.clone(),
        runs,
        failures,
    })
}

/// Two-sided `2 · Pr(T_df > |t|)` through `I_x(df/2, 1/2)`, `x = df/(df + t²)`.
pub fn student_t_sf(t: f64, df: u32) -> f64 {
    assert!(df >= 1, "degrees of freedom must be at least 1");
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    if t == 0.0 {
        return 1.0;
    }
    let df = f64::from(df);
    let x = df / (df + t * t);
    statrs::function::beta::beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatRow {
    /// Name as emitted, e.g. `f10`, or `p2:f10` when several alternatives
    /// are tabulated.
    pub base_function: String,
    pub mean: f64,
    pub sd: f64,
    pub t: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatTable {
    pub n_runs: usize,
    /// Library order, grouped by alternative.
    pub rows: Vec<StatRow>,
    pub labels: Vec<String>,
    pub alternatives: Vec<usize>,
}

fn qualified_name(name: &str, alternative: usize, several: bool) -> String {
    if several {
        format!("p{}:{name}", alternative + 1)
    } else {
        name.to_string()
    }
}

/// Mean, sd, t and p of each (base function, alternative) over the runs.
pub fn t_statistics(ensemble: &RunEnsemble) -> Result<StatTable> {
    let n = ensemble.n_runs();
    if n < 2 {
        return Err(StatsError::InsufficientRuns(n));
    }
    let several = ensemble.alternatives.len() > 1;
    let mut rows = Vec::new();
    for (position, &alternative) in ensemble.alternatives.iter().enumerate() {
        let c = ensemble.coefficients(position);
        for (j, name) in ensemble.names.iter().enumerate() {
            let values: Vec<f64> = c.row(j).iter().copied().collect();
            let (mean, sd, t, p) = summarize(&values);
            rows.push(StatRow { base_function: qualified_name(name, alternative, several), mean, sd, t, p });
        }
    }
    Ok(StatTable { n_runs: n, rows, labels: ensemble.labels.clone(), alternatives: ensemble.alternatives.clone() })
}

fn summarize(values: &[f64]) -> (f64, f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    let (t, p) = if sd > 0.0 {
        let t = mean / (sd / n.sqrt());
        (t, student_t_sf(t, values.len() as u32 - 1))
    } else if mean == 0.0 {
        (0.0, 1.0)
    } else {
        (f64::INFINITY.copysign(mean), 0.0)
    };
    (mean, sd, t, p)
}

impl StatTable {
    fn k(&self) -> usize {
        self.labels.len()
    }

    /// Rows of the `position`-th alternative.
    pub fn alternative_rows(&self, position: usize) -> &[StatRow] {
        &self.rows[position * self.k()..(position + 1) * self.k()]
    }

    /// Library indices of one alternative by |t| descending, ties in library
    /// order.
    pub fn ranked(&self, position: usize) -> Vec<usize> {
        let rows = self.alternative_rows(position);
        let mut idx: Vec<usize> = (0..rows.len()).collect();
        idx.sort_by(|&a, &b| rows[b].t.abs().total_cmp(&rows[a].t.abs()).then(a.cmp(&b)));
        idx
    }

    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["base_function", "mean_coeff", "sd", "t_value", "p_value"])?;
        for r in &self.rows {
            w.write_record([
                r.base_function.clone(),
                format_float(r.mean),
                format_float(r.sd),
                format_float(r.t),
                format_float(r.p),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parses the rows written by [`StatTable::write_csv`].
    pub fn read_csv_rows<R: io::Read>(reader: R) -> Result<Vec<StatRow>> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != ["base_function", "mean_coeff", "sd", "t_value", "p_value"] {
            return Err(StatsError::Format(format!("unexpected header {header:?}")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| StatsError::Format(format!("`{s}`: {e}")));
        r.records()
            .map(|rec| {
                let rec = rec?;
                Ok(StatRow {
                    base_function: rec[0].to_string(),
                    mean: num(&rec[1])?,
                    sd: num(&rec[2])?,
                    t: num(&rec[3])?,
                    p: num(&rec[4])?,
                })
            })
            .collect()
    }

    /// Aligned Markdown table, one block per alternative.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        for (position, &alternative) in self.alternatives.iter().enumerate() {
            if self.alternatives.len() > 1 {
                let _ = writeln!(out, "### P{}\n", alternative + 1);
            }
            let cells: Vec<[String; 4]> = self
                .alternative_rows(position)
                .iter()
                .map(|r| {
                    let name = r.base_function.rsplit(':').next().unwrap_or(&r.base_function).to_string();
                    [name, format!("{:.9}", r.mean), format!("{:.6}", r.t), format_p(r.p)]
                })
                .collect();
            let header = ["Base Functions", "Mean-Coeff.", "t-value", "P-value"];
            let widths: Vec<usize> =
                (0..4).map(|c| cells.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0)).collect();
            let line = |row: [&str; 4]| {
                let mut s = String::from("|");
                for (c, cell) in row.iter().enumerate() {
                    if c == 0 {
                        let _ = write!(s, " {cell:<w$} |", w = widths[c]);
                    } else {
                        let _ = write!(s, " {cell:>w$} |", w = widths[c]);
                    }
                }
                s
            };
            let _ = writeln!(out, "{}", line(header));
            let rule: Vec<String> = widths
                .iter()
                .enumerate()
                .map(
                    |(c, w)| {
                        if c == 0 {
                            format!(":{}", "-".repeat(*w + 1))
                        } else {
                            format!("{}:", "-".repeat(*w + 1))
                        }
                    },
                )
                .collect();
            let _ = writeln!(out, "|{}|", rule.join("|"));
            for r in &cells {
                let _ = writeln!(out, "{}", line([&r[0], &r[1], &r[2], &r[3]]));
            }
            let _ = writeln!(
                out,
                "\nn = {} runs, two-sided Student t with {} degrees of freedom.",
                self.n_runs,
                self.n_runs - 1
            );
            if position + 1 < self.alternatives.len() {
                out.push('\n');
            }
        }
        out
    }
}

/// Shortest round-trip representation.
fn format_float(v: f64) -> String {
    format!("{v}")
}

fn format_p(p: f64) -> String {
    if p != 0.0 && p < 1e-3 {
        format!("{p:.2E}")
    } else {
        format!("{p:.6}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Survivor {
    pub index: usize,
    pub base_function: String,
    pub label: String,
    pub mean: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrunedAlternative {
    pub alternative: usize,
    pub survivors: Vec<Survivor>,
    /// `Σ mean_j · f_j` over the survivors, parseable by the expression
    /// parser; `0` when nothing survives.
    pub expression: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrunedModel {
    pub alpha: f64,
    pub alternatives: Vec<PrunedAlternative>,
}

impl PrunedModel {
    /// Set when some alternative keeps no base function at all.
    pub fn red_flag(&self) -> bool {
        self.alternatives.iter().any(|a| a.survivors.is_empty())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for a in &self.alternatives {
            let _ = writeln!(out, "P{} = {}", a.alternative + 1, a.expression);
        }
        if self.red_flag() {
            let _ = writeln!(
                out,
                "# red flag: no base function is significant at alpha = {} for {}",
                format_number(self.alpha),
                self.alternatives
                    .iter()
                    .filter(|a| a.survivors.is_empty())
                    .map(|a| format!("P{}", a.alternative + 1))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
        }
        out
    }
}

/// Keeps base functions with `p < alpha`, in library order.
pub fn prune_by_pvalue(stats: &StatTable, alpha: f64) -> Result<PrunedModel> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::InvalidAlpha(alpha));
    }
    let alternatives = stats
        .alternatives
        .iter()
        .enumerate()
        .map(|(position, &alternative)| {
            let survivors: Vec<Survivor> = stats
                .alternative_rows(position)
                .iter()
                .enumerate()
                .filter(|(_, r)| r.p < alpha)
                .map(|(index, r)| Survivor {
                    index,
                    base_function: r.base_function.clone(),
                    label: stats.labels[index].clone(),
                    mean: r.mean,
                    p: r.p,
                })
                .collect();
            let expression = closed_form(&survivors);
            PrunedAlternative { alternative, survivors, expression }
        })
        .collect();
    Ok(PrunedModel { alpha, alternatives })
}

fn closed_form(survivors: &[Survivor]) -> String {
    if survivors.is_empty() {
        return "0".to_string();
    }
    let mut s = String::new();
    for (i, sv) in survivors.iter().enumerate() {
        let magnitude = format_number(sv.mean.abs());
        match (i, sv.mean < 0.0) {
            (0, false) => {}
            (0, true) => s.push('-'),
            (_, false) => s.push_str(" + "),
            (_, true) => s.push_str(" - "),
        }
        let _ = write!(s, "{magnitude} * ({})", sv.label);
    }
    s
}
