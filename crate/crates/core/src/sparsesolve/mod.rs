//! Minimum-L1 coefficients inside a residual ball:
//!
//! ```text
//! minimize ‖ζ‖₁  subject to  ‖Fζ − o‖₂ ≤ π
//! ```
//!
//! Columns are equilibrated to unit norm internally, so the solvers work on
//! the equivalent weighted problem `min Σ w_j/‖F_j‖ |y_j|, ‖Gy − o‖ ≤ π` with
//! `G = F diag(1/‖F_j‖)`. The change of variables is exact; only the
//! conditioning differs.

mod admm;
mod barrier;
mod certificate;
mod lasso;
mod problem;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::featlib::LibraryMatrix;

pub use certificate::{verify_optimality, verify_optimality_weighted, Certificate, CERTIFICATE_TOLERANCE};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolveError {
    #[error("infeasible: π = {pi} is below the least-squares residual {min_feasible_pi} of the full library")]
    Infeasible { pi: f64, min_feasible_pi: f64 },
    #[error("column {index} (`{label}`) has non-finite entries")]
    NonFiniteColumn { index: usize, label: String },
    #[error("observation vector has {got} rows, library has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("observation row {0} is not finite")]
    NonFiniteObservation(usize),
    #[error("invalid solver settings: {0}")]
    InvalidSettings(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    BallConstrained,
    LassoPath,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualNorm {
    #[default]
    L2,
}

/// What to do when π is below the least-squares floor of the library.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasiblePolicy {
    /// Report [`SolveError::Infeasible`].
    #[default]
    Error,
    /// Solve with radius `floor + π`, treating π as slack above the floor.
    Relax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub pi: f64,
    pub max_iterations: usize,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub rho: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub method: Method,
    pub norm: ResidualNorm,
    pub infeasible: InfeasiblePolicy,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            pi: 0.001,
            max_iterations: 20_000,
            eps_abs: 1e-9,
            eps_rel: 1e-8,
            rho: 1.0,
            rho_min: 1e-4,
            rho_max: 1e4,
            method: Method::BallConstrained,
            norm: ResidualNorm::L2,
            infeasible: InfeasiblePolicy::Error,
        }
    }
}

impl SolverSettings {
    pub fn with_pi(pi: f64) -> Self {
        SolverSettings { pi, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |m: &str| Err(SolveError::InvalidSettings(m.into()));
        if !(self.pi >= 0.0) || !self.pi.is_finite() {
            return bad("π must be a finite value ≥ 0");
        }
        if !(self.eps_abs > 0.0 && self.eps_rel > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if !(self.rho_min > 0.0 && self.rho_min <= self.rho && self.rho <= self.rho_max) {
            return bad("need 0 < rho_min ≤ rho ≤ rho_max");
        }
        Ok(())
    }
}

/// Result of one solve, coefficients in the units of the library's stored
/// columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveOutcome {
    pub coefficients: Vec<f64>,
    pub objective: f64,
    pub residual_norm: f64,
    /// Radius actually enforced (differs from π only under `Relax`).
    pub pi_effective: f64,
    pub min_feasible_pi: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub converged: bool,
    pub polished: bool,
    /// Newton steps of the barrier refinement (0 when splitting converged).
    pub barrier_steps: usize,
}

impl SolveOutcome {
    pub fn feasibility_slack(&self) -> f64 {
        self.pi_effective - self.residual_norm
    }

    /// Indices with `|ζ_j| > 1e-8 · max(1, max |ζ|)`.
    pub fn support(&self) -> Vec<usize> {
        active_set(&self.coefficients)
    }

    pub fn diagnostics(&self) -> SolveDiagnostics {
        SolveDiagnostics {
            iterations: self.iterations,
            primal_residual: self.primal_residual,
            dual_residual: self.dual_residual,
            objective: self.objective,
            residual_norm: self.residual_norm,
            pi_effective: self.pi_effective,
            min_feasible_pi: self.min_feasible_pi,
            feasibility_slack: self.feasibility_slack(),
            converged: self.converged,
            polished: self.polished,
            barrier_steps: self.barrier_steps,
            support_size: self.support().len(),
        }
    }
}

/// One structured log record per solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    pub residual_norm: f64,
    pub pi_effective: f64,
    pub min_feasible_pi: f64,
    pub feasibility_slack: f64,
    pub converged: bool,
    pub polished: bool,
    pub barrier_steps: usize,
    pub support_size: usize,
}

pub fn activity_threshold(coefficients: &[f64]) -> f64 {
    let max = coefficients.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    1e-8 * max.max(1.0)
}

pub(crate) fn active_set(coefficients: &[f64]) -> Vec<usize> {
    let thr = activity_threshold(coefficients);
    (0..coefficients.len()).filter(|&j| coefficients[j].abs() > thr).collect()
}

/// k × A coefficients, one independently solved column per alternative.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    values: DMatrix<f64>,
    outcomes: Vec<SolveOutcome>,
}

impl CoefficientMatrix {
    pub fn from_outcomes(outcomes: Vec<SolveOutcome>) -> Self {
        let k = outcomes.first().map_or(0, |o| o.coefficients.len());
        let values = DMatrix::from_fn(k, outcomes.len(), |j, a| outcomes[a].coefficients[j]);
        CoefficientMatrix { values, outcomes }
    }

    /// Plain coefficients without solver metadata.
    pub fn from_values(values: DMatrix<f64>) -> Self {
        CoefficientMatrix { values, outcomes: Vec::new() }
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn alternatives(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, alternative: usize) -> Vec<f64> {
        self.values.column(alternative).iter().copied().collect()
    }

    pub fn outcomes(&self) -> &[SolveOutcome] {
        &self.outcomes
    }

    pub fn residual_norms(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.residual_norm).collect()
    }

    pub fn iterations(&self) -> Vec<usize> {
        self.outcomes.iter().map(|o| o.iterations).collect()
    }

    pub fn converged(&self) -> Vec<bool> {
        self.outcomes.iter().map(|o| o.converged).collect()
    }
}

pub fn solve_one(
    library: &LibraryMatrix,
    observed: &[f64],
    settings: &SolverSettings,
) -> Result<SolveOutcome, SolveError> {
    let weights = vec![1.0; library.cols()];
    solve_weighted(library, observed, &weights, settings)
}

/// Minimizes `Σ weights_j |ζ_j|` over the residual ball.
pub fn solve_weighted(
    library: &LibraryMatrix,
    observed: &[f64],
    weights: &[f64],
    settings: &SolverSettings,
) -> Result<SolveOutcome, SolveError> {
    settings.validate()?;
    let problem = problem::Problem::new(library.values(), library.labels(), observed, weights)?;
    let radius = problem.effective_radius(settings)?;
    let (scaled, barrier_steps) = match settings.method {
        Method::BallConstrained => {
            let split = admm::solve(&problem, radius, settings);
            if split.converged {
                (split, 0)
            } else {
                log::debug!("splitting stopped after {} iterations; refining with barrier", split.iterations);
                match barrier::solve(&problem, radius) {
                    Some(b)
                        if b.converged
                            || problem.objective(&b.y)
                                < problem.objective(&problem.restore(split.y.clone(), radius)) =>
                    {
                        let steps = b.iterations;
                        (problem::Scaled { iterations: split.iterations, ..b }, steps)
                    }
                    _ => (split, 0),
                }
            }
        }
        Method::LassoPath => (lasso::solve(&problem, radius, settings), 0),
    };
    let mut outcome = problem.finish(scaled, radius, weights, settings.method == Method::BallConstrained);
    outcome.barrier_steps = barrier_steps;
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("alternative {alternative}: {source}")]
pub struct AlternativeError {
    pub alternative: usize,
    pub source: SolveError,
}

/// Solves every column of `observed` (J × A) independently.
pub fn solve_multi(
    library: &LibraryMatrix,
    observed: &DMatrix<f64>,
    settings: &SolverSettings,
) -> Result<CoefficientMatrix, Vec<AlternativeError>> {
    let mut outcomes = Vec::with_capacity(observed.ncols());
    let mut errors = Vec::new();
    for a in 0..observed.ncols() {
        let o: Vec<f64> = observed.column(a).iter().copied().collect();
        match solve_one(library, &o, settings) {
            Ok(out) => outcomes.push(out),
            Err(source) => errors.push(AlternativeError { alternative: a, source }),
        }
    }
    if errors.is_empty() {
        Ok(CoefficientMatrix::from_outcomes(outcomes))
    } else {
        Err(errors)
    }
}
