//! Penalized fallback: coordinate descent on
//! `½‖Gy − o‖² + λ Σ cost_j |y_j|` along a decreasing λ sequence, then
//! bisection on λ until the residual lands in `[0.99 π, π]`.

use nalgebra::DVector;

use super::problem::{Problem, Scaled};
use super::SolverSettings;

const PATH_FACTOR: f64 = 0.7;
const MAX_BISECTIONS: usize = 200;

pub(crate) fn solve(problem: &Problem<'_>, radius: f64, settings: &SolverSettings) -> Scaled {
    let k = problem.k();
    let o = &problem.o;
    if o.norm() <= radius {
        return Scaled {
            y: DVector::zeros(k),
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            converged: true,
        };
    }
    let correlations = problem.g.tr_mul(o);
    let lambda_max = (0..k).map(|j| correlations[j].abs() / problem.cost[j]).fold(0.0f64, f64::max);
    let mut cd = Descent::new(problem, settings.max_iterations);
    let lo_limit = lambda_max * 1e-14;

    // walk down the path until the residual constraint is met
    let mut upper = lambda_max; // residual > radius here
    let mut lambda = lambda_max;
    let lower = loop {
        lambda *= PATH_FACTOR;
        if lambda < lo_limit {
            return cd.finish(false);
        }
        let res = cd.run(lambda);
        if res <= radius {
            break lambda;
        }
        upper = lambda;
    };
    if cd.residual_norm() >= 0.99 * radius {
        return cd.finish(true);
    }

    // bisection in log λ; the residual grows with λ
    let (mut lo, mut hi) = (lower, upper);
    let mut best = cd.y.clone();
    for _ in 0..MAX_BISECTIONS {
        let mid = (lo * hi).sqrt();
        let res = cd.run(mid);
        if res <= radius {
            best = cd.y.clone();
            if res >= 0.99 * radius {
                return cd.finish(true);
            }
            lo = mid;
        } else {
            hi = mid;
        }
    }
    cd.y = best;
    cd.finish(false)
}

struct Descent<'p, 'a> {
    problem: &'p Problem<'a>,
    y: DVector<f64>,
    r: DVector<f64>,
    sweeps: usize,
    max_sweeps: usize,
    last_change: f64,
}

impl<'p, 'a> Descent<'p, 'a> {
    fn new(problem: &'p Problem<'a>, max_sweeps: usize) -> Self {
        let k = problem.k();
        Descent { problem, y: DVector::zeros(k), r: problem.o.clone(), sweeps: 0, max_sweeps, last_change: 0.0 }
    }

    /// Runs sweeps to convergence at `lambda` (warm-started) and returns the
    /// residual norm.
    fn run(&mut self, lambda: f64) -> f64 {
        let g = &self.problem.g;
        for _ in 0..self.max_sweeps {
            self.sweeps += 1;
            let mut max_change = 0.0f64;
            for j in 0..g.ncols() {
                let col = g.column(j);
                let sq = col.norm_squared();
                if sq == 0.0 {
                    continue;
                }
                let old = self.y[j];
                let rho = col.dot(&self.r) + old * sq;
                let t = lambda * self.problem.cost[j];
                let new = if rho > t {
                    (rho - t) / sq
                } else if rho < -t {
                    (rho + t) / sq
                } else {
                    0.0
                };
                if new != old {
                    self.r.axpy(old - new, &col, 1.0);
                    self.y[j] = new;
                    max_change = max_change.max((new - old).abs());
                }
            }
            self.last_change = max_change;
            if max_change <= 1e-13 * (1.0 + self.y.amax()) {
                break;
            }
        }
        // refresh to shed accumulated drift
        self.r = self.problem.residual(&self.y);
        self.r.norm()
    }

    fn residual_norm(&self) -> f64 {
        self.r.norm()
    }

    fn finish(self, converged: bool) -> Scaled {
        Scaled { y: self.y, iterations: self.sweeps, primal_residual: 0.0, dual_residual: self.last_change, converged }
    }
}
