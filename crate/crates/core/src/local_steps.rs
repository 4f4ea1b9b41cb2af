//! Closed-form per-element sub-solvers of the ADMM iteration.

use rayon::prelude::*;

use crate::energies::EnergyKind;
use crate::error::{invalid, Result};
use crate::smallmat::{
    det, inverse, polar_flip_aware, quartic_unique_positive, sqrt_eps, sqrt_spd, svd, sym_eig,
    symm, Mat, Rotation, Spd, Vector,
};

/// Relative size below which a Procrustes optimum is treated as non-unique.
const TIE_TOL: f64 = 1e-14;

/// Rotation maximizing `tr(Uᵀ Q)` over SO(d).
///
/// When the optimum is not unique (for example `Q = 0`), `prev` is returned
/// if it attains the optimal value, otherwise the identity for `Q = 0` or an
/// arbitrary optimal rotation.
pub fn procrustes<const D: usize>(q: &Mat<D>, prev: Option<&Rotation<D>>) -> Rotation<D> {
    let fallback = || prev.copied().unwrap_or_else(Rotation::identity);
    let scale = q.norm();
    if !(scale > 0.0) || !scale.is_finite() {
        return fallback();
    }
    if D == 2 {
        // tr(UᵀQ) = c (Q00 + Q11) + s (Q10 − Q01) for U = [[c, −s], [s, c]]
        let a = q[(0, 0)] + q[(1, 1)];
        let b = q[(1, 0)] - q[(0, 1)];
        let r = a.hypot(b);
        if r <= TIE_TOL * scale {
            return fallback();
        }
        let (c, s) = (a / r, b / r);
        let u = Mat::<D>::from_fn(|i, j| match (i, j) {
            (0, 0) | (1, 1) => c,
            (0, 1) => -s,
            _ => s,
        });
        return Rotation::from_matrix_unchecked(u);
    }
    let dec = svd(q);
    let sign = if det(&(dec.u * dec.v.transpose())) < 0.0 { -1.0 } else { 1.0 };
    let mut d = Vector::<D>::repeat(1.0);
    d[D - 1] = sign;
    let u = dec.u * Mat::from_diagonal(&d) * dec.v.transpose();
    let sig = dec.sigma;
    let optimum = sig[0] + sig[1] + sign * sig[2];
    let gap = sig[1] + sign * sig[2];
    if gap <= TIE_TOL * sig[0] {
        if let Some(p) = prev {
            if p.dot(q) >= optimum - 1e-12 * scale {
                return *p;
            }
        }
    }
    Rotation::from_matrix_unchecked(u)
}

/// Proximal rotation update: Procrustes of `(J + Λ)P + (h/μ) U_prev`.
pub fn u_step<const D: usize>(
    j: &Mat<D>,
    lambda: &Mat<D>,
    p: &Spd<D>,
    u_prev: &Rotation<D>,
    mu: f64,
    h: f64,
) -> Rotation<D> {
    let q = (j + lambda) * p.matrix() + u_prev.matrix() * (h / mu);
    procrustes(&q, Some(u_prev))
}

/// `w ∇f(P) + μ P − μ Q`, the optimality residual of the P-step.
pub fn p_step_residual<const D: usize>(kind: EnergyKind, p: &Mat<D>, q: &Mat<D>, w: f64, mu: f64) -> f64 {
    let Some(inv) = inverse(p) else {
        return f64::INFINITY;
    };
    let grad = match kind {
        EnergyKind::SymmetricDirichlet => p - inv * inv * inv,
        _ => p - inv,
    };
    (grad * w + p * mu - q * mu).norm()
}

/// Tolerance the P-step residual must meet.
pub fn p_step_tolerance<const D: usize>(q: &Mat<D>, mu: f64) -> f64 {
    1e-8 * (1.0 + mu * q.norm())
}

/// Solves `w ∇f(P) + μ P = μ Q` for the unique SPD `P`.
///
/// `Q` is the symmetric target `symm(Uᵀ(J + Λ))`.
pub fn p_step<const D: usize>(kind: EnergyKind, q: &Mat<D>, w: f64, mu: f64) -> Result<Spd<D>> {
    if !(w > 0.0 && mu > 0.0) {
        return Err(invalid(format!("P-step needs w > 0 and μ > 0 (got w = {w}, μ = {mu})")));
    }
    let q = symm(q);
    match kind {
        EnergyKind::SymmetricGradient => p_step_sg(&q, w, mu),
        EnergyKind::SymmetricDirichlet => p_step_eigen(&q, |qj| {
            quartic_unique_positive(w + mu, -mu * qj, -w)
        }),
        EnergyKind::Arap => Err(invalid("the ARAP energy has no P-step")),
    }
}

fn p_step_sg<const D: usize>(q: &Mat<D>, w: f64, mu: f64) -> Result<Spd<D>> {
    let c = 4.0 * w * (w + mu);
    let eye = Mat::<D>::identity();
    let q2 = q * q;
    let root = if q.norm_squared() < sqrt_eps() {
        // √(cI + μ²Q²) ≈ √c I + μ²Q² / (2√c)
        let sc = c.sqrt();
        Some(eye * sc + q2 * (mu * mu / (2.0 * sc)))
    } else {
        sqrt_spd(&(q2 * (mu * mu) + eye * c)).ok().map(Spd::into_inner)
    };
    if let Some(root) = root {
        let p = symm(&((q * mu + root) / (2.0 * (w + mu))));
        let floored = floor_if_tiny(p);
        let ok = floored.as_ref().is_some_and(|p| {
            p_step_residual(EnergyKind::SymmetricGradient, p, q, w, mu) <= p_step_tolerance(q, mu)
        });
        if ok {
            return Ok(Spd::from_matrix_unchecked(floored.expect("checked")));
        }
    }
    // per-eigenvalue root of (w+μ)p² − μ q p − w = 0 without cancellation
    p_step_eigen(q, |qj| {
        let s = ((mu * qj).powi(2) + c).sqrt();
        Ok(if qj >= 0.0 {
            (mu * qj + s) / (2.0 * (w + mu))
        } else {
            2.0 * w / (s - mu * qj)
        })
    })
}

/// Positive-definite check; eigenvalues are raised to `√ε_m` when the
/// determinant or trace has collapsed below it.
fn floor_if_tiny<const D: usize>(p: Mat<D>) -> Option<Mat<D>> {
    let (vals, vecs) = sym_eig(&p).ok()?;
    if !(vals[0] > 0.0) {
        return None;
    }
    if det(&p) < sqrt_eps() || p.trace() < sqrt_eps() {
        if vals[0] >= sqrt_eps() {
            return Some(p);
        }
        let v = vals.map(|l| l.max(sqrt_eps()));
        return Some(symm(&(vecs * Mat::from_diagonal(&v) * vecs.transpose())));
    }
    Some(p)
}

fn p_step_eigen<const D: usize>(
    q: &Mat<D>,
    scalar: impl Fn(f64) -> Result<f64>,
) -> Result<Spd<D>> {
    let (qv, vecs) = sym_eig(q)?;
    let mut lam = Vector::<D>::zeros();
    for k in 0..D {
        lam[k] = scalar(qv[k])?;
    }
    let tiny = lam.iter().product::<f64>() < sqrt_eps() || lam.sum() < sqrt_eps();
    if tiny {
        lam = lam.map(|l| l.max(sqrt_eps()));
    }
    Ok(Spd::from_matrix_unchecked(symm(
        &(vecs * Mat::from_diagonal(&lam) * vecs.transpose()),
    )))
}

/// Flip-aware polar decomposition of every initial Jacobian.
pub fn polar_init<const D: usize>(
    jacobians: &[Mat<D>],
    kind: EnergyKind,
) -> (Vec<Rotation<D>>, Vec<Spd<D>>) {
    let floor = kind.init_floor();
    jacobians
        .par_iter()
        .map(|j| polar_flip_aware(j, floor))
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rot2(t: f64) -> Mat<2> {
        let (s, c) = t.sin_cos();
        Mat::<2>::new(c, -s, s, c)
    }

    #[test]
    fn p_step_examples() {
        let i2 = Mat::<2>::identity();
        let sg = EnergyKind::SymmetricGradient;
        let sd = EnergyKind::SymmetricDirichlet;
        assert!((*p_step(sg, &i2, 1.0, 1.0).unwrap() - i2).norm() < 1e-14);
        let p = p_step(sg, &Mat::<2>::zeros(), 1.0, 1.0).unwrap();
        assert!((*p - i2 * 0.5f64.sqrt()).norm() < 1e-14);
        for (w, mu) in [(1.0, 1.0), (0.2, 30.0)] {
            assert!((*p_step(sd, &i2, w, mu).unwrap() - i2).norm() < 1e-12);
        }
        let p = p_step(sd, &Mat::<2>::new(2.0, 0.0, 0.0, 1.0), 1.0, 1.0).unwrap();
        assert!((p[(0, 0)] - 1.2537).abs() < 1e-4);
        assert!((p[(1, 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn p_step_extreme_inputs() {
        let sg = EnergyKind::SymmetricGradient;
        for q in [
            Mat::<2>::new(-1e6, 0.0, 0.0, 3.0),
            Mat::<2>::new(1e-10, 0.0, 0.0, -1e-10),
            Mat::<2>::new(-5.0, 1.0, 1.0, -5.0),
        ] {
            for (w, mu) in [(1.0, 1.0), (1e-3, 1e6), (1e3, 1e-3)] {
                for kind in [sg, EnergyKind::SymmetricDirichlet] {
                    let p = p_step(kind, &q, w, mu).unwrap();
                    let min = p.min_eigenvalue();
                    assert!(min >= sqrt_eps() * (1.0 - 1e-12) || min > 0.0);
                    // the floor overrides exact optimality when the true
                    // solution has an eigenvalue below √ε_m
                    if min > 1.01 * sqrt_eps() {
                        let r = p_step_residual(kind, &p, &q, w, mu);
                        assert!(r <= p_step_tolerance(&q, mu), "{kind} {q} {w} {mu}: {r}");
                    }
                }
            }
        }
    }

    #[test]
    fn procrustes_examples() {
        assert_eq!(*procrustes(&Mat::<2>::identity(), None), Mat::<2>::identity());
        let r90 = Mat::<2>::new(0.0, -1.0, 1.0, 0.0);
        assert!((*procrustes(&r90, None) - r90).norm() < 1e-15);
        assert_eq!(*procrustes(&Mat::<2>::new(3.0, 0.0, 0.0, 2.0), None), Mat::<2>::identity());
        let prev = Rotation::from_matrix_unchecked(rot2(0.3));
        assert_eq!(procrustes(&Mat::<2>::zeros(), Some(&prev)), prev);
        assert_eq!(procrustes(&Mat::<3>::zeros(), None), Rotation::identity());
    }

    #[test]
    fn procrustes_flip_in_3d() {
        let q = Mat::<3>::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        let u = procrustes(&q, None);
        assert!((det(&u) - 1.0).abs() < 1e-12);
        // best value is 1: two of the three diagonal entries can be kept
        assert!((u.dot(&q) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn u_step_recovers_rotation() {
        let r = rot2(1.1);
        let u = u_step(
            &r,
            &Mat::<2>::zeros(),
            &Spd::identity(),
            &Rotation::identity(),
            1.0,
            0.0,
        );
        assert!((*u - r).norm() < 1e-14);
    }

    #[test]
    fn procrustes_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let q = Mat::<3>::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let a = Mat::<3>::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let r = procrustes(&a, None);
            let lhs = procrustes(&(*r * q), None);
            let rhs = *r * *procrustes(&q, None);
            assert!((*lhs - rhs).norm() < 1e-10);
        }
    }

    #[test]
    fn polar_init_examples() {
        let (u, p) = polar_init(&[Mat::<2>::new(2.0, 0.0, 0.0, 1.0)], EnergyKind::SymmetricGradient);
        assert!((*u[0] - Mat::<2>::identity()).norm() < 1e-14);
        assert!((*p[0] - Mat::<2>::new(2.0, 0.0, 0.0, 1.0)).norm() < 1e-14);
        let eps = f64::EPSILON.powf(0.25);
        let (u, p) = polar_init(&[Mat::<2>::new(1.0, 0.0, 0.0, -1.0)], EnergyKind::SymmetricGradient);
        assert!((det(&u[0]) - 1.0).abs() < 1e-14);
        assert!((*p[0] - Mat::<2>::identity() * eps).norm() < 1e-18);
        let (u, p) = polar_init(&[Mat::<3>::zeros()], EnergyKind::SymmetricDirichlet);
        assert!((det(&u[0]) - 1.0).abs() < 1e-14);
        assert!((*p[0] - Mat::<3>::identity() * f64::EPSILON.powf(0.125)).norm() < 1e-16);
    }
}
