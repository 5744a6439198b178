//! First-order optimality audit.
//!
//! At an optimum of `min Σ w_j |ζ_j|` over `‖Fζ − o‖ ≤ π` there is a
//! multiplier `μ ≥ 0` with `μ F_jᵀ(o − Fζ) = w_j sign(ζ_j)` on the active set
//! and `|μ F_jᵀ(o − Fζ)| ≤ w_j` elsewhere. The audit fits `μ` by least
//! squares on the active set and reports how far each condition is off, in
//! units of the weights.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{active_set, activity_threshold};
use crate::featlib::LibraryMatrix;

/// Worst violation accepted as a pass.
pub const CERTIFICATE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    /// Largest of the three component violations.
    pub worst_violation: f64,
    /// `max |(Fᵀν)_j / w_j − sign ζ_j|` over the active set.
    pub stationarity: f64,
    /// `max (|(Fᵀν)_j| / w_j − 1)₊` over the inactive set.
    pub dual_feasibility: f64,
    /// `(‖Fζ − o‖ − π)₊`, relative to `max(π, 1e-12)`.
    pub feasibility: f64,
    pub residual_norm: f64,
    /// Fitted multiplier; `ν = μ (o − Fζ)`.
    pub multiplier: f64,
    pub active: Vec<usize>,
    pub passed: bool,
}

pub fn verify_optimality(library: &LibraryMatrix, observed: &[f64], coefficients: &[f64], pi: f64) -> Certificate {
    let weights = vec![1.0; coefficients.len()];
    verify_optimality_weighted(library.values(), observed, coefficients, &weights, pi)
}

pub fn verify_optimality_weighted(
    f: &DMatrix<f64>,
    observed: &[f64],
    coefficients: &[f64],
    weights: &[f64],
    pi: f64,
) -> Certificate {
    assert_eq!(f.ncols(), coefficients.len(), "coefficient count must match library columns");
    assert_eq!(f.nrows(), observed.len(), "observation count must match library rows");
    assert_eq!(weights.len(), coefficients.len(), "one weight per coefficient");
    let zeta = DVector::from_column_slice(coefficients);
    let o = DVector::from_column_slice(observed);
    let r = &o - f * &zeta;
    let residual_norm = r.norm();
    let feasibility = (residual_norm - pi).max(0.0) / pi.max(1e-12);
    let active = active_set(coefficients);
    let thr = activity_threshold(coefficients);
    let sign = |j: usize| if coefficients[j].abs() > thr { coefficients[j].signum() } else { 0.0 };

    let h = f.tr_mul(&r).component_div(&DVector::from_column_slice(weights));
    let on_boundary = residual_norm >= pi * (1.0 - 1e-4);
    let (multiplier, g) = if active.is_empty() || !on_boundary {
        // an interior point can only be optimal at ζ = 0, where ν = 0 works
        (0.0, DVector::zeros(coefficients.len()))
    } else if residual_norm <= 1e-12 * (1.0 + o.norm()) {
        // residual too small to carry a direction: least-squares ν from the active set
        let nu = interpolating_dual(f, &active, weights, &sign);
        let g = f.tr_mul(&nu).component_div(&DVector::from_column_slice(weights));
        (f64::NAN, g)
    } else {
        let num: f64 = active.iter().map(|&j| sign(j) * h[j]).sum();
        let den: f64 = active.iter().map(|&j| h[j] * h[j]).sum();
        let mu = if den > 0.0 { (num / den).max(0.0) } else { 0.0 };
        (mu, &h * mu)
    };

    let stationarity = active.iter().map(|&j| (g[j] - sign(j)).abs()).fold(0.0, f64::max);
    let dual_feasibility = (0..coefficients.len())
        .filter(|j| !active.contains(j))
        .map(|j| (g[j].abs() - 1.0).max(0.0))
        .fold(0.0, f64::max);
    let worst_violation = stationarity.max(dual_feasibility).max(feasibility);
    Certificate {
        worst_violation,
        stationarity,
        dual_feasibility,
        feasibility,
        residual_norm,
        multiplier,
        active,
        passed: worst_violation <= CERTIFICATE_TOLERANCE,
    }
}

/// Minimum-norm `ν` with `F_Sᵀ ν = w_S ∘ sign(ζ_S)`.
fn interpolating_dual(
    f: &DMatrix<f64>,
    active: &[usize],
    weights: &[f64],
    sign: &impl Fn(usize) -> f64,
) -> DVector<f64> {
    let fs = f.select_columns(active);
    let target = DVector::from_iterator(active.len(), active.iter().map(|&j| weights[j] * sign(j)));
    let svd = fs.transpose().svd(true, true);
    svd.solve(&target, 1e-12).unwrap_or_else(|_| DVector::zeros(f.nrows()))
}
