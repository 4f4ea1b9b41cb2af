//! Per-element defining functions, their gradients and total-energy evaluation.

mod init;

pub use init::{conformal_init, farthest_boundary_pair, tutte_disk, tutte_volume};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::jacobian::GradientOperator;
use crate::local_steps::procrustes;
use crate::smallmat::{det, inverse, Mat, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnergyKind {
    /// `½‖X‖² − log det X`
    #[serde(rename = "sg", alias = "symmetric_gradient")]
    SymmetricGradient,
    /// `½(‖X‖² + ‖X⁻¹‖²)`
    #[serde(rename = "sd", alias = "symmetric_dirichlet")]
    SymmetricDirichlet,
    /// `½‖X − rot X‖²`, evaluation only.
    #[serde(rename = "arap")]
    Arap,
}

impl EnergyKind {
    /// Whether the ADMM solver has a closed-form P-step for this energy.
    pub fn is_solvable(self) -> bool {
        !matches!(self, Self::Arap)
    }

    pub fn short_name(self) -> &'static str {
        match self {
            Self::SymmetricGradient => "sg",
            Self::SymmetricDirichlet => "sd",
            Self::Arap => "arap",
        }
    }

    /// Singular-value floor used by the polar initialization.
    pub fn init_floor(self) -> f64 {
        match self {
            Self::SymmetricDirichlet => f64::EPSILON.powf(1.0 / 8.0),
            _ => f64::EPSILON.powf(0.25),
        }
    }
}

impl std::str::FromStr for EnergyKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sg" | "symmetric_gradient" | "symmetric-gradient" => Ok(Self::SymmetricGradient),
            "sd" | "symmetric_dirichlet" | "symmetric-dirichlet" => Ok(Self::SymmetricDirichlet),
            "arap" => Ok(Self::Arap),
            other => Err(invalid(format!("unknown energy {other:?} (expected sg, sd or arap)"))),
        }
    }
}

impl std::fmt::Display for EnergyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.short_name())
    }
}

fn positive_inverse<const D: usize>(x: &Mat<D>) -> Option<Mat<D>> {
    if det(x) > 0.0 {
        inverse(x)
    } else {
        None
    }
}

fn nonpositive_det<const D: usize>(x: &Mat<D>) -> crate::Error {
    invalid(format!("gradient undefined: det X = {} ≤ 0", det(x)))
}

/// `None` when `det X ≤ 0` (the barrier is active).
pub fn f_sg<const D: usize>(x: &Mat<D>) -> Option<f64> {
    let d = det(x);
    (d > 0.0).then(|| 0.5 * x.norm_squared() - d.ln())
}

pub fn grad_f_sg<const D: usize>(x: &Mat<D>) -> Result<Mat<D>> {
    let inv = positive_inverse(x).ok_or_else(|| nonpositive_det(x))?;
    Ok(x - inv.transpose())
}

/// `None` when `det X ≤ 0` (the barrier is active).
pub fn f_sd<const D: usize>(x: &Mat<D>) -> Option<f64> {
    let inv = positive_inverse(x)?;
    Some(0.5 * (x.norm_squared() + inv.norm_squared()))
}

pub fn grad_f_sd<const D: usize>(x: &Mat<D>) -> Result<Mat<D>> {
    let inv = positive_inverse(x).ok_or_else(|| nonpositive_det(x))?;
    let it = inv.transpose();
    Ok(x - it * inv * it)
}

pub fn f_arap<const D: usize>(x: &Mat<D>) -> f64 {
    let r = procrustes(x, None);
    0.5 * (x - r.matrix()).norm_squared()
}

/// Value of the defining function; `None` marks an active barrier.
pub fn value<const D: usize>(kind: EnergyKind, x: &Mat<D>) -> Option<f64> {
    match kind {
        EnergyKind::SymmetricGradient => f_sg(x),
        EnergyKind::SymmetricDirichlet => f_sd(x),
        EnergyKind::Arap => Some(f_arap(x)),
    }
}

pub fn gradient<const D: usize>(kind: EnergyKind, x: &Mat<D>) -> Result<Mat<D>> {
    match kind {
        EnergyKind::SymmetricGradient => grad_f_sg(x),
        EnergyKind::SymmetricDirichlet => grad_f_sd(x),
        EnergyKind::Arap => Err(invalid("the ARAP energy is evaluation-only")),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EnergyReport {
    /// Weighted sum over elements with positive determinant.
    pub total: f64,
    pub flips: usize,
    /// True when at least one element is flipped, i.e. the barrier makes the
    /// true energy infinite.
    pub barrier_active: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_element: Option<Vec<f64>>,
}

/// Number of elements with `det ≤ 0`.
pub fn count_flips<const D: usize>(jacobians: &[Mat<D>]) -> usize {
    jacobians.par_iter().filter(|j| !(det(*j) > 0.0)).count()
}

/// Evaluates the energy of a set of Jacobians with element weights `w`.
///
/// Flipped elements contribute nothing to `total` for the barrier energies
/// and are reported through `flips`; ARAP is summed over every element.
pub fn evaluate_jacobians<const D: usize>(
    kind: EnergyKind,
    weights: &[f64],
    jacobians: &[Mat<D>],
    keep_per_element: bool,
) -> EnergyReport {
    let per: Vec<(f64, bool)> = jacobians
        .par_iter()
        .zip(weights.par_iter())
        .map(|(j, &w)| {
            let flipped = !(det(j) > 0.0);
            let v = value(kind, j).map_or(0.0, |f| w * f);
            (v, flipped)
        })
        .collect();
    let total = per.iter().map(|p| p.0).sum();
    let flips = per.iter().filter(|p| p.1).count();
    EnergyReport {
        total,
        flips,
        barrier_active: flips > 0,
        per_element: keep_per_element.then(|| per.iter().map(|p| p.0).collect()),
    }
}

pub fn evaluate<const D: usize>(
    kind: EnergyKind,
    weights: &[f64],
    op: &GradientOperator<D>,
    w: &[Vector<D>],
) -> Result<EnergyReport> {
    let jac = op.apply(w)?;
    Ok(evaluate_jacobians(kind, weights, &jac, false))
}

/// `Σ w_i (det J_i − 1)² / Σ w_i`, a simple area-distortion summary.
pub fn area_distortion<const D: usize>(weights: &[f64], jacobians: &[Mat<D>]) -> f64 {
    let num: f64 = weights
        .iter()
        .zip(jacobians)
        .map(|(w, j)| w * (det(j) - 1.0).powi(2))
        .sum();
    num / weights.iter().sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smallmat::{sym_eig, symm};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sg_examples() {
        let i = Mat::<2>::identity();
        assert_eq!(f_sg(&i), Some(1.0));
        assert_eq!(grad_f_sg(&i).unwrap(), Mat::<2>::zeros());
        let x = i * 2.0;
        assert!((f_sg(&x).unwrap() - (4.0 - 4f64.ln())).abs() < 1e-15);
        assert!((grad_f_sg(&x).unwrap() - i * 1.5).norm() < 1e-15);
        assert_eq!(f_sg(&Mat::<2>::new(1.0, 0.0, 0.0, -1.0)), None);
        assert!(grad_f_sg(&Mat::<2>::zeros()).is_err());
    }

    #[test]
    fn sd_examples() {
        let i = Mat::<2>::identity();
        assert_eq!(f_sd(&i), Some(2.0));
        assert_eq!(grad_f_sd(&i).unwrap(), Mat::<2>::zeros());
        let x = Mat::<2>::new(2.0, 0.0, 0.0, 0.5);
        assert!((f_sd(&x).unwrap() - 4.25).abs() < 1e-15);
        assert!((grad_f_sd(&x).unwrap() - Mat::<2>::new(1.875, 0.0, 0.0, -7.5)).norm() < 1e-14);
    }

    #[test]
    fn arap_examples() {
        let (s, c) = 0.4f64.sin_cos();
        assert!(f_arap(&Mat::<2>::new(c, -s, s, c)) < 1e-30);
        assert!((f_arap(&(Mat::<2>::identity() * 2.0)) - 1.0).abs() < 1e-15);
        // brute force over rotation angles
        let x = Mat::<2>::new(1.0, 0.0, 0.0, -1.0);
        let best = (0..100_000)
            .map(|k| {
                let (s, c) = (k as f64 * std::f64::consts::TAU / 100_000.0).sin_cos();
                0.5 * (x - Mat::<2>::new(c, -s, s, c)).norm_squared()
            })
            .fold(f64::INFINITY, f64::min);
        assert!((f_arap(&x) - best).abs() < 1e-9);
    }

    fn random_spd<const D: usize>(rng: &mut ChaCha8Rng) -> Mat<D> {
        let a = Mat::<D>::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let (_, q) = sym_eig(&symm(&a)).unwrap();
        let l = Vector::<D>::from_fn(|_, _| rng.random_range(0.2..5.0));
        symm(&(q * Mat::from_diagonal(&l) * q.transpose()))
    }

    fn random_rotation<const D: usize>(rng: &mut ChaCha8Rng) -> Mat<D> {
        let a = Mat::<D>::from_fn(|_, _| rng.random_range(-1.0..1.0));
        *procrustes(&a, None).matrix()
    }

    #[test]
    fn rotation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x = random_spd::<3>(&mut rng);
            let u = random_rotation::<3>(&mut rng);
            for kind in [EnergyKind::SymmetricGradient, EnergyKind::SymmetricDirichlet] {
                let a = value(kind, &x).unwrap();
                let b = value(kind, &(u * x)).unwrap();
                assert!((a - b).abs() <= 1e-12 * a.abs());
            }
        }
    }

    #[test]
    fn convex_on_spd_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let a = random_spd::<2>(&mut rng);
            let b = random_spd::<2>(&mut rng);
            let t: f64 = rng.random_range(0.01..0.99);
            for kind in [EnergyKind::SymmetricGradient, EnergyKind::SymmetricDirichlet] {
                let mid = value(kind, &(a * t + b * (1.0 - t))).unwrap();
                let chord = t * value(kind, &a).unwrap() + (1.0 - t) * value(kind, &b).unwrap();
                assert!(mid <= chord + 1e-12);
            }
        }
    }

    #[test]
    fn evaluation_counts_flips() {
        let w = [1.0, 2.0];
        let jac = [Mat::<2>::identity(), Mat::<2>::new(1.0, 0.0, 0.0, -1.0)];
        let r = evaluate_jacobians(EnergyKind::SymmetricDirichlet, &w, &jac, true);
        assert_eq!(r.flips, 1);
        assert!(r.barrier_active);
        assert_eq!(r.total, 2.0);
        assert_eq!(r.per_element.unwrap(), vec![2.0, 0.0]);
        assert_eq!(area_distortion(&w, &jac), 8.0 / 3.0);
    }

    #[test]
    fn parse_kind() {
        assert_eq!("sg".parse::<EnergyKind>().unwrap(), EnergyKind::SymmetricGradient);
        assert_eq!("SD".parse::<EnergyKind>().unwrap(), EnergyKind::SymmetricDirichlet);
        assert!("foo".parse::<EnergyKind>().is_err());
        assert!(!EnergyKind::Arap.is_solvable());
    }
}
