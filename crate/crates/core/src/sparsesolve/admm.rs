//! Operator splitting for the ball-constrained problem.
//!
//! With `x = y` carrying the weighted L1 term and `z = Gy` the ball
//! indicator, each iteration is
//!
//! ```text
//! y ← (I + GᵀG)⁻¹ (x − u + Gᵀ(z − v))
//! x ← soft(α y + (1−α) x + u, cost / ρ)
//! z ← Π_ball(α Gy + (1−α) z + v)
//! u, v ← scaled dual updates
//! ```
//!
//! ρ rescales only the duals, never the linear system, so adaptive
//! balancing needs no refactorization.

use nalgebra::DVector;

use super::problem::{Problem, Regularized, Scaled};
use super::SolverSettings;

const RELAXATION: f64 = 1.6;
const BALANCE: f64 = 5.0;
const RHO_INTERVAL: usize = 25;

pub(crate) fn solve(problem: &Problem<'_>, radius: f64, settings: &SolverSettings) -> Scaled {
    let g = &problem.g;
    let o = &problem.o;
    let (rows, k) = g.shape();
    if o.norm() <= radius {
        return Scaled {
            y: DVector::zeros(k),
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            converged: true,
        };
    }
    let lin = Regularized::new(g);
    let project = |w: DVector<f64>| -> DVector<f64> {
        let d = &w - o;
        let n = d.norm();
        if n <= radius {
            w
        } else {
            o + d * (radius / n)
        }
    };

    let mut rho = settings.rho;
    let mut x = DVector::zeros(k);
    let mut z = project(DVector::zeros(rows));
    let mut u = DVector::zeros(k);
    let mut v = DVector::zeros(rows);
    let mut primal = f64::INFINITY;
    let mut dual = f64::INFINITY;
    let sqrt_pri = ((k + rows) as f64).sqrt();
    let sqrt_dual = (k as f64).sqrt();

    for it in 1..=settings.max_iterations {
        let rhs = &x - &u + g.tr_mul(&(&z - &v));
        let y = lin.solve(g, &rhs);
        let gy = g * &y;

        let x_hat = &y * RELAXATION + &x * (1.0 - RELAXATION);
        let z_hat = &gy * RELAXATION + &z * (1.0 - RELAXATION);
        let x_new = soft_threshold(&(&x_hat + &u), &problem.cost, rho);
        let z_new = project(&z_hat + &v);
        u += &x_hat - &x_new;
        v += &z_hat - &z_new;

        primal = ((&y - &x_new).norm_squared() + (&gy - &z_new).norm_squared()).sqrt();
        dual = rho * (&x_new - &x + g.tr_mul(&(&z_new - &z))).norm();
        let eps_pri = sqrt_pri * settings.eps_abs
            + settings.eps_rel
                * (y.norm_squared() + gy.norm_squared())
                    .sqrt()
                    .max((x_new.norm_squared() + z_new.norm_squared()).sqrt());
        let eps_dual = sqrt_dual * settings.eps_abs + settings.eps_rel * rho * (&u + g.tr_mul(&v)).norm();
        x = x_new;
        z = z_new;
        if primal <= eps_pri && dual <= eps_dual {
            return Scaled { y: x, iterations: it, primal_residual: primal, dual_residual: dual, converged: true };
        }

        if it % RHO_INTERVAL == 0 {
            // normalized residual balance; only the scaled duals change
            let pri_scale = (y.norm_squared() + gy.norm_squared())
                .sqrt()
                .max((x.norm_squared() + z.norm_squared()).sqrt())
                .max(1e-300);
            let dual_scale = (rho * (&u + g.tr_mul(&v)).norm()).max(1e-300);
            let ratio = ((primal / pri_scale) / (dual / dual_scale).max(1e-300)).sqrt();
            if ratio > BALANCE || ratio < 1.0 / BALANCE {
                let new_rho = (rho * ratio).clamp(settings.rho_min, settings.rho_max);
                let f = rho / new_rho;
                u *= f;
                v *= f;
                rho = new_rho;
            }
        }
    }
    Scaled { y: x, iterations: settings.max_iterations, primal_residual: primal, dual_residual: dual, converged: false }
}

fn soft_threshold(w: &DVector<f64>, cost: &DVector<f64>, rho: f64) -> DVector<f64> {
    w.zip_map(cost, |v, c| {
        let t = c / rho;
        if v > t {
            v - t
        } else if v < -t {
            v + t
        } else {
            0.0
        }
    })
}
