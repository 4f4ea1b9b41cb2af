//! Penalty and proximal bounds derived from local Lipschitz constants.

use rayon::prelude::*;
use serde::Serialize;

use crate::energies::{gradient, EnergyKind};
use crate::smallmat::{quartic_unique_positive, Spd};

/// `C^L(B)`, the positive root of `x² + Bx − 1 = 0`.
pub fn c_l(b: f64) -> f64 {
    // −B/2 + √(4 + B²)/2 without cancellation
    2.0 / (b + (4.0 + b * b).sqrt())
}

/// `C^LG(B)`, the positive root of `x⁴ + Bx³ − 1 = 0`.
pub fn c_lg(b: f64) -> f64 {
    quartic_unique_positive(1.0, b, -1.0).expect("coefficients satisfy the sign conditions")
}

/// Upper bound on `F` (so that `F² ≤ ε_m^{-1/4}`).
pub fn f_cap() -> f64 {
    f64::EPSILON.powf(-1.0 / 8.0)
}

/// Local Lipschitz constant of `∇f` given the gradient bound `B`, capped.
pub fn lipschitz_f(kind: EnergyKind, dim: usize, b: f64) -> f64 {
    let sd = (dim as f64).sqrt();
    let f = match kind {
        EnergyKind::SymmetricDirichlet => 1.0 + 3.0 * sd / c_lg(b).powi(4),
        _ => 1.0 + sd / c_l(b).powi(2),
    };
    f.min(f_cap())
}

/// `½(−(w − 2ε) + √((w − 2ε)² + 16γw²F²))`
pub fn mu_min(w: f64, epsilon: f64, gamma: f64, f: f64) -> f64 {
    let a = w - 2.0 * epsilon;
    0.5 * (-a + (a * a + 16.0 * gamma * w * w * f * f).sqrt())
}

/// `4γw²B²/μ + 2ε`
pub fn proximal_weight(w: f64, b: f64, mu: f64, gamma: f64, epsilon: f64) -> f64 {
    4.0 * gamma * w * w * b * b / mu + 2.0 * epsilon
}

/// `√(5(1 + ‖∇f(P)‖²))`
pub fn gradient_bound(grad_norm: f64) -> f64 {
    (5.0 * (1.0 + grad_norm * grad_norm)).sqrt()
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ConvergenceConstants {
    pub b: Vec<f64>,
    pub f: Vec<f64>,
    pub c_l: Vec<f64>,
    pub c_lg: Vec<f64>,
    pub mu_min: Vec<f64>,
}

impl ConvergenceConstants {
    /// Constants for the current `P` iterates.
    pub fn compute<const D: usize>(
        kind: EnergyKind,
        weights: &[f64],
        p: &[Spd<D>],
        gamma: f64,
        epsilon: f64,
    ) -> Self {
        let rows: Vec<[f64; 5]> = p
            .par_iter()
            .zip(weights.par_iter())
            .map(|(p, &w)| {
                let g = gradient(kind, p.matrix()).map_or(f64::INFINITY, |g| g.norm());
                let b = gradient_bound(g);
                let cl = c_l(b);
                let clg = c_lg(b);
                debug_assert!(cl <= clg * (1.0 + 1e-12) && clg <= 1.0 + 1e-12);
                let f = lipschitz_f(kind, D, b);
                [b, f, cl, clg, mu_min(w, epsilon, gamma, f)]
            })
            .collect();
        let col = |k: usize| rows.iter().map(|r| r[k]).collect();
        Self {
            b: col(0),
            f: col(1),
            c_l: col(2),
            c_lg: col(3),
            mu_min: col(4),
        }
    }
}
