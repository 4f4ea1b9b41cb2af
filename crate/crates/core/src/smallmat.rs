//! Dense kernels for 2×2 and 3×3 matrices.
//!
//! Everything here is a pure function on stack-allocated values: symmetric
//! eigendecomposition, SVD, flip-aware polar decomposition, the SPD matrix
//! square root and the scalar quartic used by the symmetric Dirichlet
//! proximal step. The dimension is a const generic restricted at runtime to
//! `D ∈ {2, 3}`.
//!
//! 2×2 kernels are closed form. 3×3 eigen/singular decompositions use cyclic
//! (two-sided, respectively one-sided) Jacobi sweeps with a fixed sweep cap,
//! which stays accurate for clustered eigenvalues where the analytic cubic
//! does not.

use std::ops::Deref;

use nalgebra::{SMatrix, SVector};

use crate::error::{invalid, Result};

pub type Mat<const D: usize> = SMatrix<f64, D, D>;
pub type Vector<const D: usize> = SVector<f64, D>;

/// `√ε_m`, the switch-over threshold used by the guarded closed forms.
pub fn sqrt_eps() -> f64 {
    f64::EPSILON.sqrt()
}

const MAX_JACOBI_SWEEPS: usize = 60;

#[inline]
pub(crate) fn assert_dim<const D: usize>() {
    assert!(D == 2 || D == 3, "only 2×2 and 3×3 kernels are supported (got {D})");
}

pub fn det<const D: usize>(m: &Mat<D>) -> f64 {
    match D {
        2 => m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
        3 => {
            m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
                - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
                + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
        }
        _ => unreachable!("unsupported dimension {D}"),
    }
}

/// Inverse through the adjugate. `None` for singular or non-finite input.
pub fn inverse<const D: usize>(m: &Mat<D>) -> Option<Mat<D>> {
    let d = det(m);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    let adj = match D {
        2 => Mat::<D>::from_fn(|r, c| match (r, c) {
            (0, 0) => m[(1, 1)],
            (0, 1) => -m[(0, 1)],
            (1, 0) => -m[(1, 0)],
            _ => m[(0, 0)],
        }),
        3 => Mat::<D>::from_fn(|r, c| {
            // adj(m)[r][c] is the (c, r) cofactor
            let (r0, r1) = others(c);
            let (c0, c1) = others(r);
            let minor = m[(r0, c0)] * m[(r1, c1)] - m[(r0, c1)] * m[(r1, c0)];
            if (r + c) % 2 == 0 {
                minor
            } else {
                -minor
            }
        }),
        _ => unreachable!("unsupported dimension {D}"),
    };
    let inv = adj / d;
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}

fn others(i: usize) -> (usize, usize) {
    match i {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

/// `½(X + Xᵀ)`
pub fn symm<const D: usize>(m: &Mat<D>) -> Mat<D> {
    (m + m.transpose()) * 0.5
}

fn is_finite<const D: usize>(m: &Mat<D>) -> bool {
    m.iter().all(|v| v.is_finite())
}

fn check_symmetric<const D: usize>(s: &Mat<D>, rel_tol: f64) -> Result<()> {
    if !is_finite(s) {
        return Err(invalid("matrix has non-finite entries"));
    }
    let asym = (s - s.transpose()).norm();
    if asym > rel_tol * s.norm() {
        return Err(invalid(format!(
            "matrix is not symmetric (‖S − Sᵀ‖ = {asym:e}, ‖S‖ = {:e})",
            s.norm()
        )));
    }
    Ok(())
}

/// A proper rotation, `RᵀR = I` and `det R = +1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation<const D: usize>(Mat<D>);

impl<const D: usize> Rotation<D> {
    pub fn identity() -> Self {
        Self(Mat::identity())
    }

    /// Wraps `m` without checking; callers guarantee the invariant.
    pub fn from_matrix_unchecked(m: Mat<D>) -> Self {
        Self(m)
    }

    pub fn try_from_matrix(m: Mat<D>) -> Result<Self> {
        let ortho = (m.transpose() * m - Mat::<D>::identity()).norm();
        let d = det(&m);
        if !(ortho <= 1e-10) || !((d - 1.0).abs() <= 1e-10) {
            return Err(invalid(format!(
                "not a rotation: ‖RᵀR − I‖ = {ortho:e}, det = {d}"
            )));
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Mat<D> {
        &self.0
    }

    pub fn into_inner(self) -> Mat<D> {
        self.0
    }
}

impl<const D: usize> Deref for Rotation<D> {
    type Target = Mat<D>;
    fn deref(&self) -> &Mat<D> {
        &self.0
    }
}

/// A symmetric positive definite matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spd<const D: usize>(Mat<D>);

impl<const D: usize> Spd<D> {
    pub fn identity() -> Self {
        Self(Mat::identity())
    }

    pub fn from_matrix_unchecked(m: Mat<D>) -> Self {
        Self(m)
    }

    pub fn try_from_matrix(m: Mat<D>) -> Result<Self> {
        check_symmetric(&m, 1e-12)?;
        let (vals, _) = sym_eig(&m)?;
        if !(vals[0] > 0.0) {
            return Err(invalid(format!(
                "matrix is not positive definite (smallest eigenvalue {:e})",
                vals[0]
            )));
        }
        Ok(Self(symm(&m)))
    }

    pub fn matrix(&self) -> &Mat<D> {
        &self.0
    }

    pub fn into_inner(self) -> Mat<D> {
        self.0
    }

    pub fn min_eigenvalue(&self) -> f64 {
        sym_eig(&self.0).map(|(v, _)| v[0]).unwrap_or(f64::NAN)
    }
}

impl<const D: usize> Deref for Spd<D> {
    type Target = Mat<D>;
    fn deref(&self) -> &Mat<D> {
        &self.0
    }
}

/// Rotation `(c, s, t)` zeroing the off-diagonal of `[[app, apq], [apq, aqq]]`.
fn jacobi_rotation(app: f64, apq: f64, aqq: f64) -> (f64, f64, f64) {
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    (c, t * c, t)
}

/// Symmetric eigendecomposition `S = V diag(λ) Vᵀ` with eigenvalues ascending.
pub fn sym_eig<const D: usize>(s: &Mat<D>) -> Result<(Vector<D>, Mat<D>)> {
    assert_dim::<D>();
    check_symmetric(s, 1e-10)?;
    let s = symm(s);
    let (vals, vecs) = if D == 2 { eig2(&s) } else { eig_jacobi(&s) };
    Ok(sort_ascending(vals, vecs))
}

fn eig2<const D: usize>(s: &Mat<D>) -> (Vector<D>, Mat<D>) {
    let (a, b, c) = (s[(0, 0)], s[(0, 1)], s[(1, 1)]);
    if b == 0.0 {
        return (Vector::<D>::from_fn(|i, _| if i == 0 { a } else { c }), Mat::identity());
    }
    let (cs, sn, t) = jacobi_rotation(a, b, c);
    let vals = Vector::<D>::from_fn(|i, _| if i == 0 { a - t * b } else { c + t * b });
    let vecs = Mat::<D>::from_fn(|r, col| match (r, col) {
        (0, 0) => cs,
        (1, 0) => -sn,
        (0, 1) => sn,
        _ => cs,
    });
    (vals, vecs)
}

fn eig_jacobi<const D: usize>(s: &Mat<D>) -> (Vector<D>, Mat<D>) {
    let mut a = *s;
    let mut v = Mat::<D>::identity();
    let scale = a.norm();
    if scale == 0.0 {
        return (Vector::zeros(), v);
    }
    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut off = 0.0;
        for p in 0..D {
            for q in p + 1..D {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        if off.sqrt() <= 1e-3 * f64::EPSILON * scale {
            break;
        }
        for p in 0..D {
            for q in p + 1..D {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let (c, sn, _) = jacobi_rotation(a[(p, p)], apq, a[(q, q)]);
                let mut j = Mat::<D>::identity();
                j[(p, p)] = c;
                j[(q, q)] = c;
                j[(p, q)] = sn;
                j[(q, p)] = -sn;
                a = j.transpose() * a * j;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                v *= j;
            }
        }
    }
    (a.diagonal(), v)
}

fn sort_ascending<const D: usize>(vals: Vector<D>, vecs: Mat<D>) -> (Vector<D>, Mat<D>) {
    let mut order: [usize; 3] = [0, 1, 2];
    let order = &mut order[..D];
    order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
    (
        Vector::<D>::from_fn(|i, _| vals[order[i]]),
        Mat::<D>::from_fn(|r, c| vecs[(r, order[c])]),
    )
}

/// Singular value decomposition `A = U diag(σ) Vᵀ`.
#[derive(Clone, Copy, Debug)]
pub struct Svd<const D: usize> {
    pub u: Mat<D>,
    /// Non-negative, descending.
    pub sigma: Vector<D>,
    pub v: Mat<D>,
}

impl<const D: usize> Svd<D> {
    pub fn reconstruct(&self) -> Mat<D> {
        self.u * Mat::from_diagonal(&self.sigma) * self.v.transpose()
    }
}

pub fn svd<const D: usize>(a: &Mat<D>) -> Svd<D> {
    assert_dim::<D>();
    if D == 2 {
        svd2(a)
    } else {
        svd_jacobi(a)
    }
}

fn rot2<const D: usize>(angle: f64) -> Mat<D> {
    let (s, c) = angle.sin_cos();
    Mat::<D>::from_fn(|r, col| match (r, col) {
        (0, 0) | (1, 1) => c,
        (0, 1) => -s,
        _ => s,
    })
}

fn svd2<const D: usize>(a: &Mat<D>) -> Svd<D> {
    let e = 0.5 * (a[(0, 0)] + a[(1, 1)]);
    let f = 0.5 * (a[(0, 0)] - a[(1, 1)]);
    let g = 0.5 * (a[(1, 0)] + a[(0, 1)]);
    let h = 0.5 * (a[(1, 0)] - a[(0, 1)]);
    let q = e.hypot(h);
    let r = f.hypot(g);
    let a1 = g.atan2(f);
    let a2 = h.atan2(e);
    let theta = 0.5 * (a2 - a1);
    let phi = 0.5 * (a2 + a1);
    let mut u = rot2::<D>(phi);
    let v = rot2::<D>(-theta);
    let s1 = q + r;
    let mut s2 = q - r;
    if s2 < 0.0 {
        s2 = -s2;
        u[(0, 1)] = -u[(0, 1)];
        u[(1, 1)] = -u[(1, 1)];
    }
    Svd {
        u,
        sigma: Vector::<D>::from_fn(|i, _| if i == 0 { s1 } else { s2 }),
        v,
    }
}

/// One-sided (Hestenes) Jacobi SVD.
fn svd_jacobi<const D: usize>(a: &Mat<D>) -> Svd<D> {
    let mut b = *a;
    let mut v = Mat::<D>::identity();
    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..D {
            for q in p + 1..D {
                let alpha = b.column(p).norm_squared();
                let beta = b.column(q).norm_squared();
                let gamma = b.column(p).dot(&b.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta.abs() > 1e150 {
                    0.5 / zeta
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..D {
                    let (bp, bq) = (b[(i, p)], b[(i, q)]);
                    b[(i, p)] = c * bp - s * bq;
                    b[(i, q)] = s * bp + c * bq;
                    let (vp, vq) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let norms = Vector::<D>::from_fn(|j, _| b.column(j).norm());
    let mut order: [usize; 3] = [0, 1, 2];
    let order = &mut order[..D];
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));

    let sigma = Vector::<D>::from_fn(|i, _| norms[order[i]]);
    let v = Mat::<D>::from_fn(|r, c| v[(r, order[c])]);
    let mut u = Mat::<D>::zeros();
    let mut valid = [false; 3];
    for (j, &src) in order.iter().enumerate() {
        if sigma[j] > f64::MIN_POSITIVE {
            let col = b.column(src) / sigma[j];
            u.set_column(j, &col);
            valid[j] = true;
        }
    }
    complete_orthonormal(&mut u, &mut valid[..D]);
    Svd { u, sigma, v }
}

/// Fills the columns of `u` not flagged in `valid` so that `u` is orthogonal.
fn complete_orthonormal<const D: usize>(u: &mut Mat<D>, valid: &mut [bool]) {
    for j in 0..D {
        if valid[j] {
            continue;
        }
        let mut best = Vector::<D>::zeros();
        let mut best_norm = -1.0;
        for k in 0..D {
            let mut cand = Vector::<D>::zeros();
            cand[k] = 1.0;
            for (i, &ok) in valid.iter().enumerate() {
                if ok {
                    let ui = u.column(i).into_owned();
                    cand -= ui * ui.dot(&cand);
                }
            }
            let n = cand.norm();
            if n > best_norm {
                best_norm = n;
                best = cand / n;
            }
        }
        u.set_column(j, &best);
        valid[j] = true;
    }
}

/// Polar decomposition `A ≈ U P` that always returns a proper rotation and an
/// SPD factor.
///
/// With `A = R₁ Σ R₂ᵀ`, `U = R₁R₂ᵀ` and `P = R₂ Σ R₂ᵀ`. If `R₁R₂ᵀ` is a
/// reflection its last column is negated and `Σ` is replaced by
/// `eps_floor · I`. Singular values are floored at `eps_floor`.
pub fn polar_flip_aware<const D: usize>(a: &Mat<D>, eps_floor: f64) -> (Rotation<D>, Spd<D>) {
    let Svd { u: r1, sigma, v: r2 } = svd(a);
    let mut rot = r1 * r2.transpose();
    let mut sig = sigma;
    if det(&rot) < 0.0 {
        for i in 0..D {
            rot[(i, D - 1)] = -rot[(i, D - 1)];
        }
        sig = Vector::<D>::repeat(eps_floor);
    }
    for s in sig.iter_mut() {
        *s = s.max(eps_floor);
    }
    let p = r2 * Mat::from_diagonal(&sig) * r2.transpose();
    (Rotation(rot), Spd(symm(&p)))
}

fn is_positive_definite<const D: usize>(s: &Mat<D>) -> bool {
    let lead1 = s[(0, 0)];
    let lead2 = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)];
    match D {
        2 => lead1 > 0.0 && lead2 > 0.0,
        _ => lead1 > 0.0 && lead2 > 0.0 && det(s) > 0.0,
    }
}

/// Principal square root of an SPD matrix.
///
/// Uses the closed form (invariant-based for 3×3, `(S + √det I)/√(tr + 2√det)`
/// for 2×2) when its relative discriminant is at least `√ε_m`, otherwise
/// takes square roots of the eigenvalues.
pub fn sqrt_spd<const D: usize>(s: &Mat<D>) -> Result<Spd<D>> {
    assert_dim::<D>();
    check_symmetric(s, 1e-10)?;
    let s = symm(s);
    if !is_positive_definite(&s) {
        return Err(invalid("square root requested for a matrix that is not positive definite"));
    }
    let root = sqrt_closed_form(&s).unwrap_or_else(|| sqrt_eigen(&s));
    Ok(Spd(symm(&root)))
}

fn sqrt_eigen<const D: usize>(s: &Mat<D>) -> Mat<D> {
    let (vals, vecs) = if D == 2 { eig2(s) } else { eig_jacobi(s) };
    let roots = vals.map(|l| l.max(0.0).sqrt());
    vecs * Mat::from_diagonal(&roots) * vecs.transpose()
}

fn sqrt_closed_form<const D: usize>(s: &Mat<D>) -> Option<Mat<D>> {
    let tr = s.trace();
    let d = det(s);
    if D == 2 {
        let disc = 4.0 * d / (tr * tr);
        if !(disc >= sqrt_eps()) {
            return None;
        }
        let sd = d.sqrt();
        return Some((s + Mat::<D>::identity() * sd) / (tr + 2.0 * sd).sqrt());
    }

    // 3×3: invariants of S give the largest eigenvalue, from which the
    // invariants of √S follow; Cayley–Hamilton then yields √S.
    let i1 = tr;
    let i2 = 0.5 * (i1 * i1 - (s * s).trace());
    let i3 = d;
    let k = i1 * i1 - 3.0 * i2;
    if !(k / (i1 * i1) >= sqrt_eps()) {
        return None;
    }
    let l = i1 * (i1 * i1 - 4.5 * i2) + 13.5 * i3;
    let cos3 = (l / k.powf(1.5)).clamp(-1.0, 1.0);
    let phi = cos3.acos();
    let lambda_sq = (i1 + 2.0 * k.sqrt() * (phi / 3.0).cos()) / 3.0;
    let lambda = lambda_sq.sqrt();
    let iii_u = i3.sqrt();
    let i_u = lambda + (-lambda_sq + i1 + 2.0 * iii_u / lambda).max(0.0).sqrt();
    let ii_u = 0.5 * (i_u * i_u - i1);
    let denom = i_u * ii_u - iii_u;
    if !(denom > 0.0) {
        return None;
    }
    let root = (Mat::<D>::identity() * (i_u * iii_u) + s * (i_u * i_u - ii_u) - s * s) / denom;
    is_finite(&root).then_some(root)
}

/// Relative residual tolerance every quartic root meets.
pub const QUARTIC_TOL: f64 = 1e-10;

/// The unique positive root of `c4 λ⁴ + c3 λ³ + c0 = 0` for `c4 > 0`, `c0 < 0`.
///
/// A closed form (reciprocal substitution plus Ferrari factorization) gives
/// the starting point of a bracketed Newton iteration, which typically needs
/// one or two steps. The bracket comes from Cauchy bounds on the root modulus
/// so the iteration can always fall back to bisection. The residual relative
/// to `c4 λ⁴ + |c3| λ³ + |c0|` stays within [`QUARTIC_TOL`].
pub fn quartic_unique_positive(c4: f64, c3: f64, c0: f64) -> Result<f64> {
    if !(c4 > 0.0 && c4.is_finite()) || !(c0 < 0.0 && c0.is_finite()) || !c3.is_finite() {
        return Err(invalid(format!(
            "quartic needs c4 > 0 and c0 < 0 (got c4 = {c4}, c3 = {c3}, c0 = {c0})"
        )));
    }
    let f = |x: f64| ((c4 * x + c3) * x * x) * x + c0;
    let scale = |x: f64| c4 * x.powi(4) + c3.abs() * x.powi(3) + c0.abs();

    let big = c4.max(c3.abs());
    let lo = (c0.abs() / (c0.abs() + big)).max(f64::MIN_POSITIVE);
    let hi = 1.0 + c3.abs().max(c0.abs()) / c4;

    // the closed form is only a starting point; cancellation can cost digits
    let guess = quartic_closed_form(c4, c3, c0).filter(|x| *x > lo && *x < hi);
    let start = guess.unwrap_or(0.5 * (lo + hi));
    let x = newton_bracketed(f, |x| (4.0 * c4 * x + 3.0 * c3) * x * x, lo, hi, start);
    debug_assert!(f(x).abs() <= QUARTIC_TOL * scale(x));
    Ok(x)
}

fn newton_bracketed(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    start: f64,
) -> f64 {
    let mut x = start;
    for _ in 0..500 {
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dfx = df(x);
        let newton = x - fx / dfx;
        let next = if dfx > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - x).abs() <= 2.0 * f64::EPSILON * x.abs() || hi - lo <= 2.0 * f64::EPSILON * hi
        {
            return next;
        }
        x = next;
    }
    x
}

fn quartic_closed_form(c4: f64, c3: f64, c0: f64) -> Option<f64> {
    let a = c3 / c4;
    let c = c0 / c4;
    if a == 0.0 {
        return Some((-c).powf(0.25));
    }
    // y = 1/x turns x⁴ + a x³ + c into the depressed y⁴ + p y + q.
    let p = a / c;
    let q = 1.0 / c;
    // Resolvent cubic s³ − q s − p²/8 = 0 is strictly increasing in s.
    let pc = -q;
    let rc = -p * p / 8.0;
    let disc = rc * rc / 4.0 + pc * pc * pc / 27.0;
    let big_a = (-rc / 2.0 + disc.sqrt()).cbrt();
    let mut s = big_a - pc / (3.0 * big_a);
    if !(s > 0.0 && s.is_finite()) {
        s = -rc / pc;
    }
    for _ in 0..3 {
        let g = (s * s + pc) * s + rc;
        let dg = 3.0 * s * s + pc;
        s -= g / dg;
    }
    if !(s > 0.0) {
        return None;
    }
    let r = (2.0 * s).sqrt();
    let k = p / (2.0 * r);
    let quartic = |y: f64| y.powi(4) + p * y + q;
    let mut best: Option<(f64, f64)> = None;
    for (b, c) in [(-r, s + k), (r, s - k)] {
        for y in real_quadratic_roots(b, c) {
            if y > 0.0 {
                let res = quartic(y).abs();
                if best.is_none_or(|(_, r0)| res < r0) {
                    best = Some((y, res));
                }
            }
        }
    }
    best.map(|(y, _)| 1.0 / y)
}

/// Real roots of `y² + b y + c` (numerically stable form).
fn real_quadratic_roots(b: f64, c: f64) -> Vec<f64> {
    let disc = b * b - 4.0 * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let sq = disc.sqrt();
    let t = -0.5 * (b + b.signum() * sq);
    if t == 0.0 {
        return vec![0.0];
    }
    vec![t, c / t]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat<const D: usize>(rng: &mut ChaCha8Rng) -> Mat<D> {
        Mat::<D>::from_fn(|_, _| rng.random_range(-2.0..2.0))
    }

    fn random_spd<const D: usize>(rng: &mut ChaCha8Rng) -> Mat<D> {
        let a = random_mat::<D>(rng);
        let (_, q) = sym_eig(&symm(&a)).unwrap();
        let vals = Vector::<D>::from_fn(|_, _| rng.random_range(0.1..10.0));
        symm(&(q * Mat::from_diagonal(&vals) * q.transpose()))
    }

    #[test]
    fn eig_of_identity_and_diagonal() {
        let (vals, vecs) = sym_eig(&Mat::<2>::identity()).unwrap();
        assert_eq!(vals, Vector::<2>::new(1.0, 1.0));
        assert!((vecs.transpose() * vecs - Mat::<2>::identity()).norm() < 1e-15);

        let (vals, vecs) = sym_eig(&Mat::<2>::new(3.0, 0.0, 0.0, 1.0)).unwrap();
        assert_eq!(vals, Vector::<2>::new(1.0, 3.0));
        assert_eq!(vecs[(1, 0)].abs(), 1.0);
        assert_eq!(vecs[(0, 1)].abs(), 1.0);
    }

    fn check_eig<const D: usize>(rng: &mut ChaCha8Rng) {
        for _ in 0..100 {
            let s = symm(&random_mat::<D>(rng));
            let (vals, vecs) = sym_eig(&s).unwrap();
            let rec = vecs * Mat::from_diagonal(&vals) * vecs.transpose();
            assert!((rec - s).norm() <= 1e-12 * s.norm(), "{s}");
            assert!((vecs.transpose() * vecs - Mat::<D>::identity()).norm() <= 1e-12);
            for i in 1..D {
                assert!(vals[i - 1] <= vals[i]);
            }
        }
    }

    #[test]
    fn eig_reconstructs_random_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        check_eig::<2>(&mut rng);
        check_eig::<3>(&mut rng);
    }

    #[test]
    fn eig_rejects_non_symmetric() {
        assert!(sym_eig(&Mat::<2>::new(1.0, 2.0, 0.0, 1.0)).is_err());
        assert!(sym_eig(&Mat::<3>::new(1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0)).is_err());
    }

    #[test]
    fn eig_handles_repeated_eigenvalues() {
        let s = Mat::<3>::new(2.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 5.0);
        let (vals, _) = sym_eig(&s).unwrap();
        assert_eq!(vals, Vector::<3>::new(2.0, 2.0, 5.0));
    }

    #[test]
    fn svd_trivial_cases() {
        let s = svd(&Mat::<2>::identity());
        assert!((s.sigma - Vector::<2>::new(1.0, 1.0)).norm() < 1e-15);
        let s = svd(&Mat::<2>::new(2.0, 0.0, 0.0, -1.0));
        assert!((s.sigma - Vector::<2>::new(2.0, 1.0)).norm() < 1e-15);
        assert!((s.reconstruct() - Mat::<2>::new(2.0, 0.0, 0.0, -1.0)).norm() < 1e-15);
        let s = svd(&Mat::<3>::zeros());
        assert_eq!(s.sigma, Vector::<3>::zeros());
        assert!((s.u.transpose() * s.u - Mat::<3>::identity()).norm() < 1e-15);
    }

    fn check_svd<const D: usize>(a: &Mat<D>) {
        let s = svd(a);
        let scale = a.norm().max(f64::MIN_POSITIVE);
        assert!((s.reconstruct() - a).norm() <= 1e-12 * scale, "{a}");
        assert!((s.u.transpose() * s.u - Mat::<D>::identity()).norm() <= 1e-12);
        assert!((s.v.transpose() * s.v - Mat::<D>::identity()).norm() <= 1e-12);
        for i in 0..D {
            assert!(s.sigma[i] >= 0.0);
            if i > 0 {
                assert!(s.sigma[i - 1] >= s.sigma[i]);
            }
        }
    }

    #[test]
    fn svd_reconstructs_random_and_rank_deficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            check_svd(&random_mat::<2>(&mut rng));
            check_svd(&random_mat::<3>(&mut rng));
        }
        let u = Vector::<3>::new(1.0, 2.0, 3.0);
        let v = Vector::<3>::new(-1.0, 0.5, 2.0);
        check_svd(&(u * v.transpose()));
        check_svd(&Mat::<3>::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        check_svd(&Mat::<2>::new(1.0, 2.0, 2.0, 4.0));
    }

    #[test]
    fn polar_examples() {
        let (u, p) = polar_flip_aware(&Mat::<2>::new(2.0, 0.0, 0.0, 1.0), 1e-4);
        assert!((*u - Mat::<2>::identity()).norm() < 1e-14);
        assert!((*p - Mat::<2>::new(2.0, 0.0, 0.0, 1.0)).norm() < 1e-14);

        let r = rot2::<2>(30f64.to_radians());
        let (u, p) = polar_flip_aware(&r, 1e-4);
        assert!((*u - r).norm() < 1e-14);
        assert!((*p - Mat::<2>::identity()).norm() < 1e-14);

        let (u, p) = polar_flip_aware(&Mat::<2>::new(1.0, 0.0, 0.0, -1.0), 1e-4);
        assert!((det(&u) - 1.0).abs() < 1e-14);
        assert!((*p - Mat::<2>::identity() * 1e-4).norm() < 1e-18);
    }

    #[test]
    fn polar_invariants_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eps = 1e-3;
        for _ in 0..2000 {
            let a = random_mat::<3>(&mut rng);
            let (u, p) = polar_flip_aware(&a, eps);
            assert!((det(&u) - 1.0).abs() <= 1e-10);
            assert!(p.min_eigenvalue() >= eps * (1.0 - 1e-12));
            if det(&a) > 0.0 && svd(&a).sigma[2] > eps {
                assert!((*u * *p - a).norm() <= 1e-10 * a.norm());
            }
        }
    }

    #[test]
    fn sqrt_examples() {
        let r = sqrt_spd(&Mat::<2>::identity()).unwrap();
        assert!((*r - Mat::<2>::identity()).norm() < 1e-15);
        let r = sqrt_spd(&Mat::<2>::new(4.0, 0.0, 0.0, 9.0)).unwrap();
        assert!((*r - Mat::<2>::new(2.0, 0.0, 0.0, 3.0)).norm() < 1e-14);
        let r = sqrt_spd(&(Mat::<3>::identity() * 4.0)).unwrap();
        assert!((*r - Mat::<3>::identity() * 2.0).norm() < 1e-14);
        assert!(sqrt_spd(&Mat::<2>::new(1.0, 0.0, 0.0, -1.0)).is_err());
        assert!(sqrt_spd(&Mat::<3>::zeros()).is_err());
    }

    fn check_sqrt<const D: usize>(rng: &mut ChaCha8Rng) {
        for _ in 0..1000 {
            let s = random_spd::<D>(rng);
            let r = sqrt_spd(&s).unwrap();
            assert!((*r * *r - s).norm() <= 1e-10 * s.norm());
            assert!(r.min_eigenvalue() > 0.0);
        }
    }

    #[test]
    fn sqrt_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        check_sqrt::<2>(&mut rng);
        check_sqrt::<3>(&mut rng);
        // near-repeated eigenvalues take the eigen fallback
        let s = Mat::<3>::new(2.0, 1e-12, 0.0, 1e-12, 2.0, 0.0, 0.0, 0.0, 2.0 + 1e-13);
        let r = sqrt_spd(&s).unwrap();
        assert!((*r * *r - s).norm() <= 1e-10 * s.norm());
    }

    fn bisect_quartic(c4: f64, c3: f64, c0: f64) -> f64 {
        let f = |x: f64| c4 * x.powi(4) + c3 * x.powi(3) + c0;
        let mut hi = 1.0;
        while f(hi) < 0.0 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..2000 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn quartic_examples() {
        let root = quartic_unique_positive(2.0, -2.0, -1.0).unwrap();
        let oracle = bisect_quartic(2.0, -2.0, -1.0);
        assert!((root - oracle).abs() < 1e-12);
        assert!((root - 1.2537).abs() < 1e-4);
        assert!((quartic_unique_positive(1.0, 0.0, -1.0).unwrap() - 1.0).abs() < 1e-15);
        for (w, mu) in [(1.0, 1.0), (0.3, 7.0), (1e-3, 250.0)] {
            let root = quartic_unique_positive(w + mu, -mu, -w).unwrap();
            assert!((root - 1.0).abs() < 1e-12, "{w} {mu} {root}");
        }
        assert!(quartic_unique_positive(0.0, 1.0, -1.0).is_err());
        assert!(quartic_unique_positive(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn quartic_matches_bisection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let c4 = rng.random_range(0.1..10.0);
            let c3 = rng.random_range(-10.0..10.0);
            let c0 = -rng.random_range(0.1..10.0);
            let root = quartic_unique_positive(c4, c3, c0).unwrap();
            let oracle = bisect_quartic(c4, c3, c0);
            assert!((root - oracle).abs() <= 1e-10, "{c4} {c3} {c0}: {root} vs {oracle}");
        }
    }

    #[test]
    fn inverse_and_det() {
        let m = Mat::<3>::new(2.0, 1.0, 0.0, 0.5, 3.0, 1.0, 0.0, -1.0, 1.5);
        let inv = inverse(&m).unwrap();
        assert!((inv * m - Mat::<3>::identity()).norm() < 1e-14);
        assert!(inverse(&Mat::<2>::zeros()).is_none());
        assert!((det(&Mat::<2>::new(1.0, 2.0, 3.0, 4.0)) + 2.0).abs() < 1e-15);
    }
}
