//! Shared test oracles and fixtures.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use sparse_choice::rng::{Domain, Stream};

/// Standard-normal matrix from a seeded stream (Box-Muller).
pub fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut s = Stream::new(seed, Domain::Run, 1);
    DMatrix::from_fn(rows, cols, |_, _| normal(&mut s))
}

pub fn normal(s: &mut Stream) -> f64 {
    let u1 = s.next_f64().max(1e-300);
    let u2 = s.next_f64();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

pub struct Solution {
    pub objective: f64,
    pub zeta: Vec<f64>,
}

/// Exhaustive minimum of `‖ζ‖₁` over `‖Fζ − o‖₂ ≤ π`.
///
/// Some minimizer has linearly independent support columns and lies on the
/// ball boundary (unless 0 is feasible). For a fixed support S and sign
/// pattern s it is the minimizer of `sᵀβ` over the ellipsoid
/// `‖F_S β − o‖ ≤ π`, which has the closed form
/// `β = β_LS − τ H⁻¹ s`, `τ = sqrt((π² − ‖r_LS‖²) / sᵀH⁻¹s)`, `H = F_SᵀF_S`.
/// Candidates whose signs disagree with s are discarded.
pub fn brute_force_l1(f: &DMatrix<f64>, o: &[f64], pi: f64, max_support: usize) -> Option<Solution> {
    brute_force_weighted(f, o, &vec![1.0; f.ncols()], pi, max_support)
}

/// Same enumeration for `Σ w_j |ζ_j|`; the signed cost becomes `w_S ∘ s`.
pub fn brute_force_weighted(f: &DMatrix<f64>, o: &[f64], w: &[f64], pi: f64, max_support: usize) -> Option<Solution> {
    let (rows, k) = f.shape();
    let o = DVector::from_column_slice(o);
    if o.norm() <= pi {
        return Some(Solution { objective: 0.0, zeta: vec![0.0; k] });
    }
    let mut best: Option<Solution> = None;
    for mask in 1u32..(1 << k) {
        let cols: Vec<usize> = (0..k).filter(|j| mask >> j & 1 == 1).collect();
        if cols.len() > rows || cols.len() > max_support {
            continue;
        }
        let fs = f.select_columns(&cols);
        let h = fs.tr_mul(&fs);
        let eig = h.clone().symmetric_eigenvalues();
        if eig.min() <= 1e-10 * eig.max() {
            continue;
        }
        let hinv = h.try_inverse()?;
        let beta_ls = &hinv * fs.tr_mul(&o);
        let r_ls = &o - &fs * &beta_ls;
        let slack = pi * pi - r_ls.norm_squared();
        if slack < -1e-12 * (1.0 + o.norm_squared()) {
            continue;
        }
        let slack = slack.max(0.0);
        let n = cols.len();
        for signs in 0u32..(1 << n) {
            let s = DVector::from_fn(n, |i, _| if signs >> i & 1 == 1 { -1.0 } else { 1.0 });
            let ws = DVector::from_fn(n, |i, _| w[cols[i]] * s[i]);
            let hs = &hinv * &ws;
            let tau = (slack / ws.dot(&hs)).sqrt();
            let beta = &beta_ls - hs * tau;
            if beta.iter().zip(s.iter()).any(|(b, si)| b * si <= 0.0) {
                continue;
            }
            let objective: f64 = beta.iter().zip(&cols).map(|(b, &j)| w[j] * b.abs()).sum();
            if best.as_ref().map_or(true, |b| objective < b.objective) {
                let mut zeta = vec![0.0; k];
                for (i, &j) in cols.iter().enumerate() {
                    zeta[j] = beta[i];
                }
                best = Some(Solution { objective, zeta });
            }
        }
    }
    best
}

/// Planted sparse instance: `J × k` Gaussian library, `s` nonzeros with
/// magnitude in [1, 3], `o = Fζ*`.
pub struct Planted {
    pub f: DMatrix<f64>,
    pub zeta: Vec<f64>,
    pub o: Vec<f64>,
}

pub fn planted(rows: usize, k: usize, s: usize, seed: u64) -> Planted {
    let f = gaussian(rows, k, seed);
    let mut stream = Stream::new(seed, Domain::Run, 2);
    let mut zeta = vec![0.0; k];
    let mut placed = 0;
    while placed < s {
        let j = (stream.next_f64() * k as f64) as usize;
        if zeta[j] == 0.0 {
            let sign = if stream.next_f64() < 0.5 { -1.0 } else { 1.0 };
            zeta[j] = sign * stream.uniform(1.0, 3.0);
            placed += 1;
        }
    }
    let o = (&f * DVector::from_column_slice(&zeta)).iter().copied().collect();
    Planted { f, zeta, o }
}

pub fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}
