use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{InfeasiblePolicy, SolveError, SolveOutcome, SolverSettings};

/// Equilibrated problem data shared by both methods.
pub(crate) struct Problem<'a> {
    raw: &'a DMatrix<f64>,
    /// Unit-norm columns (zero columns stay zero).
    pub g: DMatrix<f64>,
    pub o: DVector<f64>,
    /// Original column norms (1 for zero columns).
    pub norms: Vec<f64>,
    /// Per-coordinate L1 cost in equilibrated coordinates.
    pub cost: DVector<f64>,
    pub floor: f64,
    /// Minimum-norm least-squares point in equilibrated coordinates.
    pub ls_point: DVector<f64>,
}

/// Solution in equilibrated coordinates as produced by a method.
pub(crate) struct Scaled {
    pub y: DVector<f64>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub converged: bool,
}

impl<'a> Problem<'a> {
    pub fn new(
        raw: &'a DMatrix<f64>,
        labels: &[String],
        observed: &[f64],
        weights: &[f64],
    ) -> Result<Self, SolveError> {
        let (rows, k) = raw.shape();
        if observed.len() != rows {
            return Err(SolveError::DimensionMismatch { expected: rows, got: observed.len() });
        }
        if weights.len() != k || weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(SolveError::InvalidSettings(format!(
                "need {k} positive finite weights, got {}",
                weights.len()
            )));
        }
        if let Some(i) = observed.iter().position(|v| !v.is_finite()) {
            return Err(SolveError::NonFiniteObservation(i));
        }
        for j in 0..k {
            if raw.column(j).iter().any(|v| !v.is_finite()) {
                let label = labels.get(j).cloned().unwrap_or_else(|| format!("c{j}"));
                return Err(SolveError::NonFiniteColumn { index: j, label });
            }
        }
        let norms: Vec<f64> = (0..k)
            .map(|j| {
                let n = column_norm(raw, j);
                if n > 0.0 {
                    n
                } else {
                    1.0
                }
            })
            .collect();
        let mut g = raw.clone();
        for (j, n) in norms.iter().enumerate() {
            g.column_mut(j).unscale_mut(*n);
        }
        let cost = DVector::from_fn(k, |j, _| weights[j] / norms[j]);
        let o = DVector::from_column_slice(observed);
        let (floor, ls_point) = least_squares(&g, &o);
        Ok(Problem { raw, g, o, norms, cost, floor, ls_point })
    }

    pub fn k(&self) -> usize {
        self.g.ncols()
    }

    pub fn effective_radius(&self, settings: &SolverSettings) -> Result<f64, SolveError> {
        let tol = 1e-10 * self.o.norm() + 1e-14;
        match settings.infeasible {
            InfeasiblePolicy::Relax => Ok(self.floor + settings.pi),
            InfeasiblePolicy::Error if settings.pi + tol < self.floor => {
                Err(SolveError::Infeasible { pi: settings.pi, min_feasible_pi: self.floor })
            }
            InfeasiblePolicy::Error => Ok(settings.pi.max(self.floor)),
        }
    }

    pub fn objective(&self, y: &DVector<f64>) -> f64 {
        y.iter().zip(self.cost.iter()).map(|(v, c)| v.abs() * c).sum()
    }

    pub fn residual(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.o - &self.g * y
    }

    pub fn finish(&self, scaled: Scaled, radius: f64, weights: &[f64], polish: bool) -> SolveOutcome {
        let Scaled { y, iterations, primal_residual, dual_residual, converged } = scaled;
        let restored = self.restore(y, radius);
        let mut best = restored;
        let mut polished = false;
        let mut certified = false;
        if let Some((p, cert)) = polish.then(|| self.polish(&best, radius)).flatten() {
            if self.residual(&p).norm() <= radius * (1.0 + 1e-9) + 1e-14
                && (cert || self.objective(&p) <= self.objective(&best))
            {
                best = p;
                polished = true;
                certified = cert;
            }
        }
        let coefficients: Vec<f64> = best.iter().zip(&self.norms).map(|(v, n)| v / n).collect();
        let zeta = DVector::from_column_slice(&coefficients);
        let residual_norm = (self.raw * &zeta - &self.o).norm();
        let objective = coefficients.iter().zip(weights).map(|(c, w)| c.abs() * w).sum();
        let feasible = residual_norm <= radius * (1.0 + 1e-6) + 1e-13 * (1.0 + self.o.norm());
        SolveOutcome {
            coefficients,
            objective,
            residual_norm,
            pi_effective: radius,
            min_feasible_pi: self.floor,
            iterations,
            primal_residual,
            dual_residual,
            converged: feasible && (converged || certified),
            polished,
            barrier_steps: 0,
        }
    }

    /// Moves an infeasible iterate along the segment towards the
    /// least-squares point until it lies inside the ball.
    pub fn restore(&self, y: DVector<f64>, radius: f64) -> DVector<f64> {
        let r = self.residual(&y);
        if r.norm() <= radius {
            return y;
        }
        let target = radius * (1.0 - 1e-12);
        let d = self.residual(&self.ls_point) - &r;
        let a = d.norm_squared();
        let b = 2.0 * r.dot(&d);
        let c = r.norm_squared() - target * target;
        let theta = if a <= 0.0 {
            1.0
        } else {
            let disc = (b * b - 4.0 * a * c).max(0.0);
            ((-b - disc.sqrt()) / (2.0 * a)).clamp(0.0, 1.0)
        };
        let theta = if theta <= 0.0 { 1.0 } else { theta };
        &y + (&self.ls_point - &y) * theta
    }

    /// Active-set refinement from the support and signs of `y`: closed-form
    /// minimizer of the signed cost over the residual ellipsoid restricted to
    /// the support, adjusted until the optimality conditions hold.
    /// Returns the point and whether the conditions were certified.
    fn polish(&self, y: &DVector<f64>, radius: f64) -> Option<(DVector<f64>, bool)> {
        let k = self.k();
        let max = y.amax();
        if max == 0.0 {
            return None;
        }
        let mut support: Vec<(usize, f64)> =
            (0..k).filter(|&j| y[j].abs() > 1e-9 * max).map(|j| (j, y[j].signum())).collect();
        for _ in 0..50 {
            if support.is_empty() || support.len() > self.g.nrows() {
                return None;
            }
            let on_support = self.solve_on_support(&support, radius)?;
            let (beta, tau) = on_support;
            let flipped: Vec<usize> = support
                .iter()
                .zip(beta.iter())
                .enumerate()
                .filter(|(_, ((_, s), b))| b.signum() != *s || **b == 0.0)
                .map(|(i, _)| i)
                .collect();
            if !flipped.is_empty() {
                let mut i = 0;
                support.retain(|_| {
                    let keep = !flipped.contains(&i);
                    i += 1;
                    keep
                });
                continue;
            }
            let mut full = DVector::zeros(k);
            for ((j, _), b) in support.iter().zip(beta.iter()) {
                full[*j] = *b;
            }
            if tau == 0.0 {
                return Some((full, false));
            }
            let r = self.residual(&full);
            let grad = self.g.tr_mul(&r);
            let in_support = |j: usize| support.iter().any(|(s, _)| *s == j);
            let worst = (0..k)
                .filter(|&j| !in_support(j))
                .map(|j| (j, grad[j].abs() / tau / self.cost[j] - 1.0))
                .filter(|(_, v)| *v > 1e-9)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            match worst {
                None => return Some((full, true)),
                Some((j, _)) => support.push((j, grad[j].signum())),
            }
        }
        None
    }

    fn solve_on_support(&self, support: &[(usize, f64)], radius: f64) -> Option<(DVector<f64>, f64)> {
        let cols: Vec<usize> = support.iter().map(|(j, _)| *j).collect();
        let gs = self.g.select_columns(&cols);
        let h = gs.tr_mul(&gs);
        let chol = Cholesky::new(h)?;
        let beta_ls = chol.solve(&gs.tr_mul(&self.o));
        let r_ls = &self.o - &gs * &beta_ls;
        let q = DVector::from_iterator(support.len(), support.iter().map(|(j, s)| self.cost[*j] * s));
        let hq = chol.solve(&q);
        let qhq = q.dot(&hq);
        let slack = radius * radius - r_ls.norm_squared();
        if slack < 0.0 || !(qhq > 0.0) {
            return None;
        }
        let tau = (slack / qhq).sqrt();
        let beta = beta_ls - hq * tau;
        beta.iter().all(|b| b.is_finite()).then_some((beta, tau))
    }
}

fn column_norm(m: &DMatrix<f64>, j: usize) -> f64 {
    // scaled accumulation; raw columns can reach 1e43 and square past f64
    let col = m.column(j);
    let amax = col.amax();
    if amax == 0.0 {
        return 0.0;
    }
    amax * col.iter().map(|v| (v / amax).powi(2)).sum::<f64>().sqrt()
}

/// Least-squares floor `min ‖Gy − o‖` and the minimum-norm minimizer, with
/// numerical rank decided at `σ_max · max(J, k) · ε`.
fn least_squares(g: &DMatrix<f64>, o: &DVector<f64>) -> (f64, DVector<f64>) {
    let svd = g.clone().svd(true, true);
    let sigma_max = svd.singular_values.max();
    let tol = sigma_max * (g.nrows().max(g.ncols()) as f64) * f64::EPSILON;
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let mut coeffs = u.tr_mul(o);
    let mut projection = DVector::zeros(o.len());
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > tol {
            projection += u.column(i) * coeffs[i];
            coeffs[i] /= s;
        } else {
            coeffs[i] = 0.0;
        }
    }
    let point = v_t.tr_mul(&coeffs);
    let floor = (o - projection).norm();
    (floor, point)
}

/// (I + GᵀG)⁻¹ applied through whichever Cholesky factor is smaller.
pub(crate) enum Regularized {
    Tall(Cholesky<f64, Dyn>),
    Wide(Cholesky<f64, Dyn>),
}

impl Regularized {
    pub fn new(g: &DMatrix<f64>) -> Self {
        let (rows, k) = g.shape();
        if k <= rows {
            let m = g.tr_mul(g) + DMatrix::identity(k, k);
            Regularized::Tall(Cholesky::new(m).expect("I + GᵀG is positive definite"))
        } else {
            let m = g * g.transpose() + DMatrix::identity(rows, rows);
            Regularized::Wide(Cholesky::new(m).expect("I + GGᵀ is positive definite"))
        }
    }

    pub fn solve(&self, g: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
        match self {
            Regularized::Tall(c) => c.solve(rhs),
            Regularized::Wide(c) => {
                // Woodbury: (I + GᵀG)⁻¹ = I − Gᵀ (I + GGᵀ)⁻¹ G
                let t = c.solve(&(g * rhs));
                rhs - g.tr_mul(&t)
            }
        }
    }
}
