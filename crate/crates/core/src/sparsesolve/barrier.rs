//! Log-barrier Newton method for the same problem, used when the splitting
//! iterations stop short on badly conditioned libraries.
//!
//! With `t ≥ |y|` the barrier objective is
//!
//! ```text
//! φ(y, t) = τ cᵀt − Σ log(t − y) − Σ log(t + y) − log(r² − ‖Gy − o‖²)
//! ```
//!
//! For fixed `y` the minimizing `t` has a closed form, so the method is
//! Newton on the reduced function of `y` alone (a k × k solve per step).

use nalgebra::{Cholesky, DMatrix, DVector};

use super::problem::{Problem, Scaled};

const TAU_GROWTH: f64 = 12.0;
const MAX_NEWTON: usize = 60;
const MAX_OUTER: usize = 40;
const GAP_REL: f64 = 1e-10;
const MAX_CG: usize = 50;
const CENTERED: f64 = 1e-6;

struct Point {
    y: DVector<f64>,
    t: DVector<f64>,
}

pub(crate) fn solve(problem: &Problem<'_>, radius: f64) -> Option<Scaled> {
    let k = problem.k();
    let g = &problem.g;
    let o = &problem.o;
    let c = &problem.cost;
    let r2 = radius * radius;
    let y0 = problem.ls_point.clone();
    if r2 - problem.residual(&y0).norm_squared() <= 0.0 {
        return None;
    }
    let mut p = Point { t: y0.map(|v| v.abs() + 1.0), y: y0 };
    let gram = g.tr_mul(g);
    let m = 2 * k + 1;
    let objective = |p: &Point| c.dot(&p.t);
    let mut tau = m as f64 / objective(&p).max(1e-300);
    let mut newton_steps = 0;
    let mut gap = f64::INFINITY;
    let mut decrement = f64::INFINITY;

    for _ in 0..MAX_OUTER {
        p.t = center(&p.y, c, tau);
        for _ in 0..MAX_NEWTON {
            newton_steps += 1;
            let e = g * &p.y - o;
            let s = r2 - e.norm_squared();
            let a = &p.t - &p.y;
            let b = &p.t + &p.y;
            let grad_ball = g.tr_mul(&e);
            let gy = a.map(|v| 1.0 / v) - b.map(|v| 1.0 / v) + &grad_ball * (2.0 / s);
            let gt = DVector::from_fn(k, |j, _| tau * c[j] - 1.0 / a[j] - 1.0 / b[j]);
            let d1 = DVector::from_fn(k, |j, _| 1.0 / (a[j] * a[j]) + 1.0 / (b[j] * b[j]));
            let d2 = DVector::from_fn(k, |j, _| 1.0 / (b[j] * b[j]) - 1.0 / (a[j] * a[j]));

            let rhs = -(&gy - d2.component_mul(&gt).component_div(&d1));
            let mut system = &gram * (2.0 / s);
            system.ger(4.0 / (s * s), &grad_ball, &grad_ball, 1.0);
            for j in 0..k {
                system[(j, j)] += 4.0 / (a[j] * a[j] + b[j] * b[j]);
            }
            let dy = solve_spd(system, &rhs)?;
            let dt = -(&gt + d2.component_mul(&dy)).component_div(&d1);
            decrement = -(gy.dot(&dy) + gt.dot(&dt));
            if !decrement.is_finite() {
                return None;
            }
            if decrement <= 1e-12 {
                break;
            }

            let phi = |q: &Point| -> f64 {
                let e = g * &q.y - o;
                let s = r2 - e.norm_squared();
                let mut v = tau * objective(q) - s.ln();
                for j in 0..k {
                    v -= (q.t[j] - q.y[j]).ln() + (q.t[j] + q.y[j]).ln();
                }
                v
            };
            let current = phi(&p);
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let y = &p.y + &dy * step;
                let q = Point { t: center(&y, c, tau), y };
                let e = g * &q.y - o;
                if r2 - e.norm_squared() > 0.0 {
                    let v = phi(&q);
                    if v.is_finite() && v <= current - 0.25 * step * decrement {
                        accepted = Some(q);
                        break;
                    }
                }
                step *= 0.5;
            }
            match accepted {
                Some(q) => p = q,
                // no measurable progress at working precision
                None => break,
            }
            if decrement <= 1e-9 {
                break;
            }
        }
        gap = m as f64 / tau;
        if gap <= GAP_REL * (1.0 + objective(&p)) {
            break;
        }
        tau *= TAU_GROWTH;
    }
    // the gap bound m/τ only holds near the central path
    let converged = gap <= 1e-8 * (1.0 + objective(&p)) && decrement <= CENTERED;
    Some(Scaled { y: p.y, iterations: newton_steps, primal_residual: 0.0, dual_residual: gap, converged })
}

/// `argmin_t τ c t − log(t − y) − log(t + y)`, coordinatewise.
fn center(y: &DVector<f64>, c: &DVector<f64>, tau: f64) -> DVector<f64> {
    y.zip_map(c, |v, cj| {
        let q = tau * cj;
        let qy = q * v;
        // (1 + sqrt(1 + q²y²)) / q, written to stay finite for tiny q
        if qy.abs() < 1e-8 {
            (2.0 + 0.5 * qy * qy) / q
        } else {
            (1.0 + (1.0 + qy * qy).sqrt()) / q
        }
    })
}

/// Solves `M x = rhs` by Cholesky of the Jacobi-equilibrated matrix. When
/// that is numerically singular, a diagonal shift makes it factorable and the
/// shifted factor preconditions conjugate gradients on the unshifted system.
fn solve_spd(mut m: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let n = m.nrows();
    let d: Vec<f64> = (0..n).map(|j| 1.0 / m[(j, j)].max(1e-300).sqrt()).collect();
    for j in 0..n {
        for i in 0..n {
            m[(i, j)] *= d[i] * d[j];
        }
    }
    let b = DVector::from_fn(n, |i, _| rhs[i] * d[i]);
    let mut shift = 0.0;
    for _ in 0..10 {
        if let Some(ch) = Cholesky::new(m.clone()) {
            let mut x = ch.solve(&b);
            if shift > 0.0 {
                for j in 0..n {
                    m[(j, j)] -= shift;
                }
                refine(&m, &ch, &b, &mut x);
            }
            return Some(DVector::from_fn(n, |i, _| x[i] * d[i]));
        }
        let next = if shift == 0.0 { 1e-14 } else { shift * 10.0 };
        for j in 0..n {
            m[(j, j)] += next - shift;
        }
        shift = next;
    }
    None
}

fn refine(m: &DMatrix<f64>, pre: &Cholesky<f64, nalgebra::Dyn>, b: &DVector<f64>, x: &mut DVector<f64>) {
    let target = 1e-13 * b.norm();
    let mut r = b - m * &*x;
    let mut z = pre.solve(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for _ in 0..MAX_CG {
        if r.norm() <= target {
            break;
        }
        let ap = m * &p;
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        z = pre.solve(&r);
        let next = r.dot(&z);
        p = &z + &p * (next / rz);
        rz = next;
    }
}
