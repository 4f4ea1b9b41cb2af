//! Symmetric sparse matrices and a Cholesky solver with pinned unknowns.
//!
//! Pinned unknowns are eliminated: the solver factors the free–free block
//! `A_FF` and moves `A_FC x_C` to the right-hand side, so the reduced system
//! stays symmetric positive definite.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::sparse::linalg::cholesky::{factorize_symbolic_cholesky, LltRef, SymbolicCholesky};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMat};
use faer::{Conj, Par, Side};

use crate::error::{invalid, Error, Result};

/// Square symmetric matrix in CSC form with both triangles stored and row
/// indices sorted within each column.
#[derive(Clone, Debug, PartialEq)]
pub struct CscMatrix {
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CscMatrix {
    /// Sums duplicate entries in input order, so assembly is reproducible.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&t| (triplets[t].1, triplets[t].0));
        let mut col_ptr = vec![0; n + 1];
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for t in order {
            let (r, c, v) = triplets[t];
            assert!(r < n && c < n, "triplet ({r}, {c}) out of range for n = {n}");
            if last == Some((r, c)) {
                *values.last_mut().expect("entry exists") += v;
            } else {
                row_idx.push(r);
                values.push(v);
                col_ptr[c + 1] += 1;
                last = Some((r, c));
            }
        }
        for c in 0..n {
            col_ptr[c + 1] += col_ptr[c];
        }
        Self {
            col_ptr,
            row_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.col_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        let rows = &self.row_idx[self.col_ptr[col]..self.col_ptr[col + 1]];
        rows.binary_search(&row)
            .map(|p| self.values[self.col_ptr[col] + p])
            .unwrap_or(0.0)
    }

    /// Entries `(row, value)` of column `col`.
    pub fn column(&self, col: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.col_ptr[col]..self.col_ptr[col + 1];
        self.row_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim()];
        for (c, &xc) in x.iter().enumerate() {
            for (r, v) in self.column(c) {
                y[r] += v * xc;
            }
        }
        y
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.col_ptr == other.col_ptr && self.row_idx == other.row_idx
    }
}

/// Cholesky solver for `A x = b` with a fixed set of pinned unknowns.
///
/// Construction performs the symbolic analysis for the free block; call
/// [`PinnedCholesky::factorize`] whenever the numeric values of `A` change
/// (the sparsity pattern must stay the same).
pub struct PinnedCholesky {
    n: usize,
    pinned: Vec<usize>,
    free: Vec<usize>,
    /// Position of each unknown in `free`, `usize::MAX` when pinned.
    free_of: Vec<usize>,
    pattern_col_ptr: Vec<usize>,
    pattern_row_idx: Vec<usize>,
    reduced: SymbolicSparseColMat<usize>,
    /// For each stored entry of the reduced lower triangle, its slot in `A`.
    slot_map: Vec<usize>,
    symbolic: Option<SymbolicCholesky<usize>>,
    factor: Vec<f64>,
    factored: bool,
}

impl std::fmt::Debug for PinnedCholesky {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PinnedCholesky")
            .field("n", &self.n)
            .field("pinned", &self.pinned.len())
            .field("factored", &self.factored)
            .finish()
    }
}

impl PinnedCholesky {
    /// `pinned` must be sorted and free of duplicates.
    pub fn new(a: &CscMatrix, pinned: &[usize]) -> Result<Self> {
        let n = a.dim();
        if pinned.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("pinned indices must be sorted and unique"));
        }
        if let Some(&p) = pinned.iter().find(|&&p| p >= n) {
            return Err(invalid(format!("pinned index {p} out of range for {n} unknowns")));
        }
        let mut free_of = vec![0usize; n];
        for &p in pinned {
            free_of[p] = usize::MAX;
        }
        let mut free = Vec::with_capacity(n - pinned.len());
        for (i, slot) in free_of.iter_mut().enumerate() {
            if *slot != usize::MAX {
                *slot = free.len();
                free.push(i);
            }
        }
        let nf = free.len();
        let mut col_ptr = Vec::with_capacity(nf + 1);
        col_ptr.push(0);
        let mut row_idx = Vec::new();
        let mut slot_map = Vec::new();
        for &c in &free {
            for s in a.col_ptr[c]..a.col_ptr[c + 1] {
                let r = a.row_idx[s];
                let fr = free_of[r];
                if fr != usize::MAX && fr >= free_of[c] {
                    row_idx.push(fr);
                    slot_map.push(s);
                }
            }
            col_ptr.push(row_idx.len());
        }
        for (j, &c) in free.iter().enumerate() {
            if !row_idx[col_ptr[j]..col_ptr[j + 1]].contains(&j) {
                return Err(Error::Factorization(format!(
                    "unknown {c} has no diagonal entry; it is not coupled to the system"
                )));
            }
        }
        let reduced = SymbolicSparseColMat::new_checked(nf, nf, col_ptr, None, row_idx);
        let symbolic = if nf > 0 {
            Some(
                factorize_symbolic_cholesky(
                    reduced.as_ref(),
                    Side::Lower,
                    Default::default(),
                    Default::default(),
                )
                .map_err(|e| Error::Factorization(format!("symbolic analysis failed: {e:?}")))?,
            )
        } else {
            None
        };
        let factor_len = symbolic.as_ref().map_or(0, |s| s.len_val());
        Ok(Self {
            n,
            pinned: pinned.to_vec(),
            free,
            free_of,
            pattern_col_ptr: a.col_ptr.clone(),
            pattern_row_idx: a.row_idx.clone(),
            reduced,
            slot_map,
            symbolic,
            factor: vec![0.0; factor_len],
            factored: false,
        })
    }

    pub fn pinned(&self) -> &[usize] {
        &self.pinned
    }

    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    fn check_pattern(&self, a: &CscMatrix) -> Result<()> {
        if a.col_ptr != self.pattern_col_ptr || a.row_idx != self.pattern_row_idx {
            return Err(invalid("matrix pattern differs from the analysed pattern"));
        }
        Ok(())
    }

    /// Numeric factorization of the free block of `a`.
    pub fn factorize(&mut self, a: &CscMatrix) -> Result<()> {
        self.check_pattern(a)?;
        self.factored = false;
        let Some(symbolic) = self.symbolic.as_ref() else {
            self.factored = true;
            return Ok(());
        };
        let values: Vec<f64> = self.slot_map.iter().map(|&s| a.values[s]).collect();
        let mat = SparseColMatRef::new(self.reduced.as_ref(), &values);
        let mut buf = MemBuffer::new(
            symbolic.factorize_numeric_llt_scratch::<f64>(Par::Seq, Default::default()),
        );
        symbolic
            .factorize_numeric_llt(
                &mut self.factor,
                mat,
                Side::Lower,
                Default::default(),
                Par::Seq,
                MemStack::new(&mut buf),
                Default::default(),
            )
            .map_err(|e| {
                Error::Factorization(format!(
                    "reduced matrix is not positive definite ({e:?})"
                ))
            })?;
        self.factored = true;
        Ok(())
    }

    pub fn is_factored(&self) -> bool {
        self.factored
    }

    /// Solves for several right-hand sides at once.
    ///
    /// `rhs[k]` holds the full-length right-hand side of column `k` (entries
    /// at pinned rows are ignored) and `pinned_values[k]` the values of the
    /// pinned unknowns in the order of [`PinnedCholesky::pinned`].
    pub fn solve(
        &self,
        a: &CscMatrix,
        rhs: &[Vec<f64>],
        pinned_values: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>> {
        self.check_pattern(a)?;
        if !self.factored {
            return Err(Error::Factorization("solve called before factorize".into()));
        }
        if rhs.len() != pinned_values.len() {
            return Err(invalid("rhs and pinned values disagree on the number of columns"));
        }
        let k = rhs.len();
        let nf = self.free.len();
        let mut out = Vec::with_capacity(k);
        let mut reduced_rhs = faer::Mat::<f64>::zeros(nf, k);
        for (col, (b, pv)) in rhs.iter().zip(pinned_values).enumerate() {
            if b.len() != self.n {
                return Err(Error::ShapeMismatch {
                    expected: self.n,
                    actual: b.len(),
                });
            }
            if pv.len() != self.pinned.len() {
                return Err(Error::ShapeMismatch {
                    expected: self.pinned.len(),
                    actual: pv.len(),
                });
            }
            let mut x = vec![0.0; self.n];
            for (&p, &v) in self.pinned.iter().zip(pv) {
                x[p] = v;
            }
            for (j, &f) in self.free.iter().enumerate() {
                reduced_rhs[(j, col)] = b[f];
            }
            for (&p, &v) in self.pinned.iter().zip(pv) {
                if v == 0.0 {
                    continue;
                }
                for (r, a_rp) in a.column(p) {
                    let fr = self.free_of[r];
                    if fr != usize::MAX {
                        reduced_rhs[(fr, col)] -= a_rp * v;
                    }
                }
            }
            out.push(x);
        }
        if nf == 0 {
            return Ok(out);
        }
        let b_reduced = reduced_rhs.clone();
        let mut sol = reduced_rhs;
        self.solve_reduced(&mut sol);
        // one round of iterative refinement keeps the residual at round-off level
        let mut resid = b_reduced.clone();
        self.sub_reduced_product(a, &sol, &mut resid);
        let mut corr = resid;
        self.solve_reduced(&mut corr);
        for col in 0..k {
            for j in 0..nf {
                sol[(j, col)] += corr[(j, col)];
            }
        }
        for (col, x) in out.iter_mut().enumerate() {
            for (j, &f) in self.free.iter().enumerate() {
                x[f] = sol[(j, col)];
            }
        }
        Ok(out)
    }

    fn solve_reduced(&self, rhs: &mut faer::Mat<f64>) {
        let symbolic = self.symbolic.as_ref().expect("nonempty system");
        let mut buf = MemBuffer::new(symbolic.solve_in_place_scratch::<f64>(rhs.ncols(), Par::Seq));
        LltRef::new(symbolic, &self.factor).solve_in_place_with_conj(
            Conj::No,
            rhs.as_mut(),
            Par::Seq,
            MemStack::new(&mut buf),
        );
    }

    /// `out -= A_FF x` for every column of `x`.
    fn sub_reduced_product(&self, a: &CscMatrix, x: &faer::Mat<f64>, out: &mut faer::Mat<f64>) {
        for (j, &c) in self.free.iter().enumerate() {
            for (r, v) in a.column(c) {
                let fr = self.free_of[r];
                if fr == usize::MAX {
                    continue;
                }
                for col in 0..x.ncols() {
                    out[(fr, col)] -= v * x[(j, col)];
                }
            }
        }
    }

    /// `‖A_FF x_F + A_FC x_C − b_F‖` and `‖b_F − A_FC x_C‖` for a full solution `x`.
    pub fn residual(&self, a: &CscMatrix, x: &[f64], b: &[f64]) -> (f64, f64) {
        let ax = a.mul_vec(x);
        let mut res = 0.0;
        let mut rhs = 0.0;
        for &f in &self.free {
            res += (ax[f] - b[f]).powi(2);
            let mut pinned_part = 0.0;
            for (c, xc) in self.pinned.iter().map(|&p| (p, x[p])) {
                pinned_part += a.get(f, c) * xc;
            }
            rhs += (b[f] - pinned_part).powi(2);
        }
        (res.sqrt(), rhs.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Path-graph Laplacian plus a diagonal shift.
    fn path(n: usize, shift: f64) -> CscMatrix {
        let mut t = Vec::new();
        for i in 0..n - 1 {
            t.push((i, i, 1.0));
            t.push((i + 1, i + 1, 1.0));
            t.push((i, i + 1, -1.0));
            t.push((i + 1, i, -1.0));
        }
        for i in 0..n {
            t.push((i, i, shift));
        }
        CscMatrix::from_triplets(n, &t)
    }

    #[test]
    fn triplets_sum_duplicates() {
        let a = CscMatrix::from_triplets(2, &[(0, 0, 1.0), (1, 0, 2.0), (0, 0, 3.0)]);
        assert_eq!(a.get(0, 0), 4.0);
        assert_eq!(a.get(1, 0), 2.0);
        assert_eq!(a.get(1, 1), 0.0);
        assert_eq!(a.nnz(), 2);
    }

    #[test]
    fn pinned_path_is_linear_interpolation() {
        let n = 11;
        let a = path(n, 0.0);
        let mut s = PinnedCholesky::new(&a, &[0, n - 1]).unwrap();
        s.factorize(&a).unwrap();
        let x = s
            .solve(&a, &[vec![0.0; n]], &[vec![0.0, 10.0]])
            .unwrap()
            .remove(0);
        for (i, v) in x.iter().enumerate() {
            assert!((v - i as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_comparison() {
        let n = 6;
        let a = path(n, 0.5);
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut s = PinnedCholesky::new(&a, &[]).unwrap();
        s.factorize(&a).unwrap();
        let x = s.solve(&a, &[b.clone()], &[vec![]]).unwrap().remove(0);
        let dense = nalgebra::DMatrix::from_fn(n, n, |r, c| a.get(r, c));
        let xd = dense.cholesky().unwrap().solve(&nalgebra::DVector::from_vec(b));
        for i in 0..n {
            assert!((x[i] - xd[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn singular_free_block_is_reported() {
        let a = path(4, 0.0);
        let mut s = PinnedCholesky::new(&a, &[]).unwrap();
        // the unpinned Laplacian is only semidefinite; the factorization may
        // or may not detect that in floating point, but must not panic
        let _ = s.factorize(&a);
        let bad = CscMatrix::from_triplets(2, &[(0, 0, 1.0)]);
        assert!(PinnedCholesky::new(&bad, &[]).is_err());
    }

    #[test]
    fn all_pinned() {
        let a = path(3, 0.0);
        let mut s = PinnedCholesky::new(&a, &[0, 1, 2]).unwrap();
        s.factorize(&a).unwrap();
        let x = s.solve(&a, &[vec![0.0; 3]], &[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(x[0], vec![1.0, 2.0, 3.0]);
    }
}
