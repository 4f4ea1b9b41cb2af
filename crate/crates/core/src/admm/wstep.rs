use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::jacobian::{GradientOperator, WeightedLaplacian};
use crate::mesh::HandleConstraints;
use crate::smallmat::{Mat, Vector};
use crate::sparse::PinnedCholesky;

/// Which path a constraint edit took.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintUpdate {
    /// Same pinned vertex set; only the right-hand side changed.
    RhsOnly,
    /// The pinned set changed; symbolic analysis and factorization redone.
    Refactorized,
}

impl ConstraintUpdate {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::RhsOnly => "rhs-only",
            Self::Refactorized => "refactorized",
        }
    }
}

/// Resolves user handles into the pins the global step eliminates.
///
/// Without handles the lowest referenced vertex is fixed at its current
/// position. Vertices no element touches are always held in place. Every
/// connected component must end up with a pin.
pub(crate) fn effective_pins<const D: usize>(
    handles: &HandleConstraints,
    w: &[Vector<D>],
    components: &[usize],
    referenced: &[bool],
) -> Result<Vec<(usize, Vector<D>)>> {
    let mut pins: BTreeMap<usize, Vector<D>> = handles
        .iter()
        .map(|(v, p)| (v, Vector::<D>::from_fn(|r, _| p[r])))
        .collect();
    if pins.is_empty() {
        if let Some(first) = referenced.iter().position(|&r| r) {
            pins.insert(first, w[first]);
        }
    }
    for (v, &r) in referenced.iter().enumerate() {
        if !r {
            pins.entry(v).or_insert(w[v]);
        }
    }
    let num_components = components.iter().copied().max().map_or(0, |c| c + 1);
    let mut pinned = vec![false; num_components];
    for &v in pins.keys() {
        pinned[components[v]] = true;
    }
    if let Some(c) = pinned.iter().position(|&p| !p) {
        let vertex = components.iter().position(|&cv| cv == c).unwrap_or(0);
        return Err(Error::UnpinnedComponent { component: c, vertex });
    }
    Ok(pins.into_iter().collect())
}

/// The eliminated global system `L_ff W_f = (Gᵀr)_f − L_fp W_p`.
#[derive(Debug)]
pub(crate) struct PinnedSystem<const D: usize> {
    pub laplacian: WeightedLaplacian,
    chol: PinnedCholesky,
    pins: Vec<(usize, Vector<D>)>,
    pinned_values: Vec<Vec<f64>>,
}

impl<const D: usize> PinnedSystem<D> {
    pub fn new(op: &GradientOperator<D>, mu: &[f64], pins: Vec<(usize, Vector<D>)>) -> Result<Self> {
        let laplacian = op.assemble_weighted_laplacian(mu)?;
        let ids: Vec<usize> = pins.iter().map(|p| p.0).collect();
        let mut chol = PinnedCholesky::new(&laplacian.matrix, &ids)?;
        chol.factorize(&laplacian.matrix)?;
        let pinned_values = split_values(&pins);
        Ok(Self {
            laplacian,
            chol,
            pins,
            pinned_values,
        })
    }

    pub fn pins(&self) -> &[(usize, Vector<D>)] {
        &self.pins
    }

    /// Numeric refactorization after a penalty change.
    pub fn set_mu(&mut self, op: &GradientOperator<D>, mu: &[f64]) -> Result<()> {
        self.laplacian = op.assemble_weighted_laplacian(mu)?;
        self.chol.factorize(&self.laplacian.matrix)
    }

    /// Swaps the pins, redoing the analysis only when the vertex set changes.
    pub fn set_pins(&mut self, pins: Vec<(usize, Vector<D>)>) -> Result<ConstraintUpdate> {
        let same = pins.len() == self.pins.len()
            && pins.iter().zip(&self.pins).all(|(a, b)| a.0 == b.0);
        let update = if same {
            ConstraintUpdate::RhsOnly
        } else {
            let ids: Vec<usize> = pins.iter().map(|p| p.0).collect();
            let mut chol = PinnedCholesky::new(&self.laplacian.matrix, &ids)?;
            chol.factorize(&self.laplacian.matrix)?;
            self.chol = chol;
            ConstraintUpdate::Refactorized
        };
        self.pinned_values = split_values(&pins);
        self.pins = pins;
        Ok(update)
    }

    /// Solves `L W = Gᵀ r` with the pinned rows fixed.
    pub fn solve(&self, op: &GradientOperator<D>, r: &[Mat<D>]) -> Result<Vec<Vector<D>>> {
        let b = op.apply_adjoint(r)?;
        let n = b.len();
        let rhs: Vec<Vec<f64>> = (0..D).map(|c| b.iter().map(|v| v[c]).collect()).collect();
        let cols = self.chol.solve(&self.laplacian.matrix, &rhs, &self.pinned_values)?;
        let mut w: Vec<Vector<D>> = (0..n).map(|i| Vector::<D>::from_fn(|c, _| cols[c][i])).collect();
        // exact pinned rows
        for (v, p) in &self.pins {
            w[*v] = *p;
        }
        Ok(w)
    }

    /// Relative residual `‖L_ff W_f − b_f‖ / ‖b_f‖` over the free rows.
    pub fn relative_residual(
        &self,
        op: &GradientOperator<D>,
        r: &[Mat<D>],
        w: &[Vector<D>],
    ) -> Result<f64> {
        let b = op.apply_adjoint(r)?;
        let mut pinned = vec![false; b.len()];
        for (v, _) in &self.pins {
            pinned[*v] = true;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for c in 0..D {
            let x: Vec<f64> = w.iter().map(|v| v[c]).collect();
            let lx = self.laplacian.matrix.mul_vec(&x);
            for i in (0..b.len()).filter(|&i| !pinned[i]) {
                num += (lx[i] - b[i][c]).powi(2);
                den += b[i][c].powi(2);
            }
        }
        Ok(if den > 0.0 { (num / den).sqrt() } else { num.sqrt() })
    }
}

fn split_values<const D: usize>(pins: &[(usize, Vector<D>)]) -> Vec<Vec<f64>> {
    (0..D).map(|c| pins.iter().map(|p| p.1[c]).collect()).collect()
}
