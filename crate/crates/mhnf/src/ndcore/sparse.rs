//! Compressed sparse row matrices.
//!
//! Storage invariants, enforced by every constructor and checked by
//! [`SparseMatrix::validate`]:
//!
//! - `row_ptr` has `rows + 1` non-decreasing entries, the last equal to
//!   `values.len()`;
//! - column indices are strictly increasing inside each row and `< cols`;
//! - no explicit zeros are stored.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

use super::kernels;
use super::DenseMatrix;

/// Magnitude below which sparse-product entries are treated as numerical
/// dust and dropped.
pub const PRUNE_THRESHOLD: f64 = 1e-12;

/// A CSR matrix of 64-bit floats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Matrix with no stored entries.
    pub fn empty(rows: usize, cols: usize) -> Self {
        SparseMatrix {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        SparseMatrix {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Builds from (row, col, value) triplets. Duplicate coordinates are
    /// summed; entries that end up exactly zero are dropped.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        for &(r, c, _) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::InvalidArgument {
                    op: "SparseMatrix::from_triplets",
                    msg: format!("entry ({r},{c}) outside {rows}x{cols}"),
                });
            }
        }
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (r, c));

        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values = Vec::with_capacity(sorted.len());
        let mut it = sorted.into_iter().peekable();
        while let Some((r, c, mut v)) = it.next() {
            while let Some(&(r2, c2, v2)) = it.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    it.next();
                } else {
                    break;
                }
            }
            if v != 0.0 {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
            }
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Assembles from per-row (cols, vals) pairs as produced by the kernels.
    pub(crate) fn from_row_parts(rows: usize, cols: usize, parts: Vec<(Vec<usize>, Vec<f64>)>) -> Self {
        debug_assert_eq!(parts.len(), rows);
        let nnz = parts.iter().map(|(c, _)| c.len()).sum();
        let mut row_ptr = Vec::with_capacity(rows + 1);
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for (c, v) in parts {
            col_idx.extend(c);
            values.extend(v);
            row_ptr.push(col_idx.len());
        }
        SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.col_idx[lo..hi], &self.values[lo..hi])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(i) => vals[i],
            Err(_) => 0.0,
        }
    }

    /// Iterates stored entries as ((row, col), value) in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| ((r, c), v))
        })
    }

    /// Checks every storage invariant; used by tests and the graph validator.
    pub fn validate(&self) -> Result<()> {
        if self.row_ptr.len() != self.rows + 1
            || *self.row_ptr.last().unwrap_or(&0) != self.values.len()
            || self.col_idx.len() != self.values.len()
        {
            return Err(Error::Graph("csr: inconsistent array lengths".into()));
        }
        if self.row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Graph("csr: row_ptr not monotone".into()));
        }
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            if cols.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Graph(format!("csr: row {r} columns not strictly increasing")));
            }
            if cols.iter().any(|&c| c >= self.cols) {
                return Err(Error::Graph(format!("csr: row {r} has column out of range")));
            }
            if vals.iter().any(|&v| v == 0.0 || !v.is_finite()) {
                return Err(Error::Graph(format!("csr: row {r} stores a zero or non-finite value")));
            }
        }
        Ok(())
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut counts = vec![0usize; self.cols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        let mut next = counts.clone();
        for ((r, c), v) in self.iter() {
            let slot = next[c];
            col_idx[slot] = r;
            values[slot] = v;
            next[c] += 1;
        }
        SparseMatrix {
            rows: self.cols,
            cols: self.rows,
            row_ptr: counts,
            col_idx,
            values,
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for ((r, c), v) in self.iter() {
            out.set(r, c, v);
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows)
            .map(|r| self.row(r).1.iter().sum())
            .collect()
    }

    /// out = self * b (dense result).
    pub fn spmm(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != b.rows() {
            return Err(Error::shape("spmm", self.shape(), b.shape()));
        }
        let mut out = DenseMatrix::zeros(self.rows, b.cols());
        kernels::spmm_into(
            &self.row_ptr,
            &self.col_idx,
            &self.values,
            b.values(),
            out.values_mut(),
            self.rows,
            b.cols(),
        );
        Ok(out)
    }

    /// out = self * b (sparse result); entries with |v| <= `threshold` are
    /// dropped.
    pub fn spspmm(&self, b: &SparseMatrix, threshold: f64) -> Result<SparseMatrix> {
        if self.cols != b.rows {
            return Err(Error::shape("spspmm", self.shape(), b.shape()));
        }
        let parts = kernels::spspmm_rows(
            &self.row_ptr,
            &self.col_idx,
            &self.values,
            &b.row_ptr,
            &b.col_idx,
            &b.values,
            self.rows,
            b.cols,
            threshold,
        );
        Ok(SparseMatrix::from_row_parts(self.rows, b.cols, parts))
    }

    /// Entrywise Σ_m w[m] · mats[m] over the union sparsity pattern; entries
    /// that come out exactly zero are dropped.
    pub fn weighted_sum(mats: &[&SparseMatrix], w: &[f64]) -> Result<SparseMatrix> {
        if mats.is_empty() {
            return Err(Error::InvalidArgument {
                op: "weighted_sum",
                msg: "empty relation list".into(),
            });
        }
        if mats.len() != w.len() {
            return Err(Error::InvalidArgument {
                op: "weighted_sum",
                msg: format!("{} matrices vs {} weights", mats.len(), w.len()),
            });
        }
        let (rows, cols) = mats[0].shape();
        for m in mats.iter().skip(1) {
            if m.shape() != (rows, cols) {
                return Err(Error::shape("weighted_sum", (rows, cols), m.shape()));
            }
        }

        let mut parts = Vec::with_capacity(rows);
        let mut scratch = vec![0.0; cols];
        let mut flags = vec![false; cols];
        let mut touched: Vec<usize> = Vec::new();
        for r in 0..rows {
            touched.clear();
            for (m, &wm) in mats.iter().zip(w) {
                let (mc, mv) = m.row(r);
                for (&c, &v) in mc.iter().zip(mv) {
                    if !flags[c] {
                        flags[c] = true;
                        touched.push(c);
                    }
                    scratch[c] += wm * v;
                }
            }
            touched.sort_unstable();
            let mut rc = Vec::with_capacity(touched.len());
            let mut rv = Vec::with_capacity(touched.len());
            for &c in &touched {
                let v = scratch[c];
                scratch[c] = 0.0;
                flags[c] = false;
                if v != 0.0 {
                    rc.push(c);
                    rv.push(v);
                }
            }
            parts.push((rc, rv));
        }
        Ok(SparseMatrix::from_row_parts(rows, cols, parts))
    }

    /// Softmax over each row's stored entries. Rows with at least one entry
    /// come out summing to one; empty rows stay empty; the sparsity pattern
    /// is preserved and every stored output is strictly positive.
    pub fn masked_row_softmax(&self) -> SparseMatrix {
        let mut out = self.clone();
        for r in 0..out.rows {
            let (lo, hi) = (out.row_ptr[r], out.row_ptr[r + 1]);
            if lo == hi {
                continue;
            }
            let row = &mut out.values[lo..hi];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        out
    }

    /// Scales each nonempty row by the reciprocal of its sum. Empty rows
    /// stay empty; rows with nonpositive sums are rejected upstream by
    /// [`crate::hetgraph::degree_inverse`].
    pub fn row_normalize(&self) -> SparseMatrix {
        let mut out = self.clone();
        for r in 0..out.rows {
            let (lo, hi) = (out.row_ptr[r], out.row_ptr[r + 1]);
            if lo == hi {
                continue;
            }
            let sum: f64 = out.values[lo..hi].iter().sum();
            if sum != 0.0 {
                for v in &mut out.values[lo..hi] {
                    *v /= sum;
                }
            }
        }
        out
    }

    /// Applies a symmetric permutation: out = P · self · Pᵀ where
    /// `perm[old] = new`.
    pub fn permute(&self, perm: &[usize]) -> Result<SparseMatrix> {
        if perm.len() != self.rows || self.rows != self.cols {
            return Err(Error::InvalidArgument {
                op: "permute",
                msg: "permutation length must equal matrix order".into(),
            });
        }
        let triplets: Vec<(usize, usize, f64)> = self
            .iter()
            .map(|((r, c), v)| (perm[r], perm[c], v))
            .collect();
        SparseMatrix::from_triplets(self.rows, self.cols, &triplets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    pub(crate) fn random_sparse(
        rows: usize,
        cols: usize,
        density: f64,
        rng: &mut impl Rng,
    ) -> SparseMatrix {
        let mut trips = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if rng.gen::<f64>() < density {
                    trips.push((r, c, rng.gen_range(-1.0..1.0)));
                }
            }
        }
        SparseMatrix::from_triplets(rows, cols, &trips).unwrap()
    }

    #[test]
    fn identity_spmm_is_noop() {
        let m = DenseMatrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let i = SparseMatrix::identity(3);
        assert_eq!(i.spmm(&m).unwrap(), m);
    }

    #[test]
    fn empty_spmm_is_zero() {
        let m = DenseMatrix::from_vec(3, 2, vec![1.0; 6]).unwrap();
        let e = SparseMatrix::empty(4, 3);
        let out = e.spmm(&m).unwrap();
        assert_eq!(out, DenseMatrix::zeros(4, 2));
    }

    #[test]
    fn spmm_matches_densify_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let a = random_sparse(6, 6, 0.3, &mut rng);
        let b = DenseMatrix::glorot_uniform(6, 2, &mut rng);
        let got = a.spmm(&b).unwrap();
        let want = a.to_dense().matmul(&b).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn spspmm_identity_and_permutations() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let a = random_sparse(5, 5, 0.4, &mut rng);
        let i = SparseMatrix::identity(5);
        assert_eq!(a.spspmm(&i, 0.0).unwrap(), a);

        // permutation x permutation composes
        let p = SparseMatrix::from_triplets(3, 3, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0)]).unwrap();
        let q = SparseMatrix::from_triplets(3, 3, &[(0, 2, 1.0), (1, 0, 1.0), (2, 1, 1.0)]).unwrap();
        let pq = p.spspmm(&q, 0.0).unwrap();
        let want = p.to_dense().matmul(&q.to_dense()).unwrap();
        assert!(pq.to_dense().max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn spspmm_matches_densify_oracle_exactly() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..10 {
            let a = random_sparse(8, 8, 0.35, &mut rng);
            let b = random_sparse(8, 8, 0.35, &mut rng);
            let got = a.spspmm(&b, PRUNE_THRESHOLD).unwrap();
            got.validate().unwrap();
            let want = a.to_dense().matmul(&b.to_dense()).unwrap();
            assert!(got.to_dense().max_abs_diff(&want) <= PRUNE_THRESHOLD);
        }
    }

    #[test]
    fn weighted_sum_one_hot_selects() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let mats: Vec<SparseMatrix> = (0..3).map(|_| random_sparse(5, 5, 0.3, &mut rng)).collect();
        let refs: Vec<&SparseMatrix> = mats.iter().collect();
        let got = SparseMatrix::weighted_sum(&refs, &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(got, mats[1]);
    }

    #[test]
    fn weighted_sum_zero_weights_is_empty() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mats: Vec<SparseMatrix> = (0..2).map(|_| random_sparse(4, 4, 0.5, &mut rng)).collect();
        let refs: Vec<&SparseMatrix> = mats.iter().collect();
        let got = SparseMatrix::weighted_sum(&refs, &[0.0, 0.0]).unwrap();
        assert_eq!(got.nnz(), 0);
    }

    #[test]
    fn weighted_sum_matches_dense_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let mats: Vec<SparseMatrix> = (0..3).map(|_| random_sparse(6, 6, 0.3, &mut rng)).collect();
        let refs: Vec<&SparseMatrix> = mats.iter().collect();
        let w = [0.2, 0.3, 0.5];
        let got = SparseMatrix::weighted_sum(&refs, &w).unwrap().to_dense();
        let mut want = DenseMatrix::zeros(6, 6);
        for (m, &wm) in mats.iter().zip(&w) {
            for ((r, c), v) in m.iter() {
                want.set(r, c, want.get(r, c) + wm * v);
            }
        }
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn weighted_sum_rejects_empty_list() {
        assert!(SparseMatrix::weighted_sum(&[], &[]).is_err());
    }

    #[test]
    fn masked_softmax_rows() {
        // single entry becomes 1.0
        let a = SparseMatrix::from_triplets(2, 3, &[(0, 1, 7.3)]).unwrap();
        let s = a.masked_row_softmax();
        assert_eq!(s.get(0, 1), 1.0);
        // empty row stays empty
        assert_eq!(s.row(1).0.len(), 0);

        // equal entries split evenly
        let b = SparseMatrix::from_triplets(1, 3, &[(0, 0, 4.2), (0, 1, 4.2), (0, 2, 4.2)]).unwrap();
        let sb = b.masked_row_softmax();
        for c in 0..3 {
            assert!((sb.get(0, c) - 1.0 / 3.0).abs() < 1e-15);
        }

        // [1, 2] -> [1/(1+e), e/(1+e)]
        let c = SparseMatrix::from_triplets(1, 2, &[(0, 0, 1.0), (0, 1, 2.0)]).unwrap();
        let sc = c.masked_row_softmax();
        let e = std::f64::consts::E;
        assert!((sc.get(0, 0) - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((sc.get(0, 1) - e / (1.0 + e)).abs() < 1e-12);
    }

    #[test]
    fn transpose_round_trip() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let a = random_sparse(7, 4, 0.4, &mut rng);
        let t = a.transpose();
        t.validate().unwrap();
        assert_eq!(t.shape(), (4, 7));
        assert_eq!(t.transpose(), a);
        for ((r, c), v) in a.iter() {
            assert_eq!(t.get(c, r), v);
        }
    }

    #[test]
    fn triplets_dedup_and_drop_zero() {
        let a =
            SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 1, 3.0), (1, 1, -3.0)])
                .unwrap();
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.nnz(), 1);
        a.validate().unwrap();
    }
}
