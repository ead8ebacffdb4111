//! Data-parallel kernels with sequential fallbacks.
//!
//! Every kernel has a `_seq` and (with the `parallel` feature) a `_par`
//! variant. The parallel variants split work by output row, and each row is
//! reduced in a fixed sequential order, so results are bitwise identical to
//! the sequential path regardless of thread count. The unsuffixed entry
//! points dispatch on problem size.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Below this many output elements the parallel dispatch stays sequential;
/// fork/join overhead dominates for small matrices.
const PAR_THRESHOLD: usize = 16 * 1024;

/// C = A * B with A (m x k), B (k x n), all row-major. `out` must be zeroed.
pub fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    #[cfg(feature = "parallel")]
    {
        if m * n >= PAR_THRESHOLD && m > 1 {
            matmul_into_par(a, b, out, m, k, n);
            return;
        }
    }
    matmul_into_seq(a, b, out, m, k, n);
}

pub fn matmul_into_seq(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        matmul_row(&a[i * k..(i + 1) * k], b, &mut out[i * n..(i + 1) * n], k, n);
    }
}

#[cfg(feature = "parallel")]
pub fn matmul_into_par(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.par_chunks_mut(n)
        .zip(a.par_chunks(k))
        .for_each(|(out_row, a_row)| matmul_row(a_row, b, out_row, k, n));
}

// ikj ordering: stream over B rows, accumulate into the output row.
#[inline]
fn matmul_row(a_row: &[f64], b: &[f64], out_row: &mut [f64], k: usize, n: usize) {
    for (kk, &aik) in a_row.iter().enumerate().take(k) {
        if aik == 0.0 {
            continue;
        }
        let b_row = &b[kk * n..(kk + 1) * n];
        for (o, &bv) in out_row.iter_mut().zip(b_row) {
            *o += aik * bv;
        }
    }
}

/// Sparse (CSR) times dense: out = A * B, with A given by its CSR arrays.
pub fn spmm_into(
    row_ptr: &[usize],
    col_idx: &[usize],
    values: &[f64],
    b: &[f64],
    out: &mut [f64],
    rows: usize,
    n: usize,
) {
    #[cfg(feature = "parallel")]
    {
        if rows * n >= PAR_THRESHOLD && rows > 1 {
            spmm_into_par(row_ptr, col_idx, values, b, out, rows, n);
            return;
        }
    }
    spmm_into_seq(row_ptr, col_idx, values, b, out, rows, n);
}

pub fn spmm_into_seq(
    row_ptr: &[usize],
    col_idx: &[usize],
    values: &[f64],
    b: &[f64],
    out: &mut [f64],
    rows: usize,
    n: usize,
) {
    for i in 0..rows {
        spmm_row(
            &col_idx[row_ptr[i]..row_ptr[i + 1]],
            &values[row_ptr[i]..row_ptr[i + 1]],
            b,
            &mut out[i * n..(i + 1) * n],
            n,
        );
    }
}

#[cfg(feature = "parallel")]
pub fn spmm_into_par(
    row_ptr: &[usize],
    col_idx: &[usize],
    values: &[f64],
    b: &[f64],
    out: &mut [f64],
    _rows: usize,
    n: usize,
) {
    out.par_chunks_mut(n).enumerate().for_each(|(i, out_row)| {
        spmm_row(
            &col_idx[row_ptr[i]..row_ptr[i + 1]],
            &values[row_ptr[i]..row_ptr[i + 1]],
            b,
            out_row,
            n,
        );
    });
}

#[inline]
fn spmm_row(cols: &[usize], vals: &[f64], b: &[f64], out_row: &mut [f64], n: usize) {
    for (&c, &v) in cols.iter().zip(vals) {
        let b_row = &b[c * n..(c + 1) * n];
        for (o, &bv) in out_row.iter_mut().zip(b_row) {
            *o += v * bv;
        }
    }
}

/// One output row of a CSR-CSR product, gathered through a caller-provided
/// dense accumulator. `scratch` and `flags` must be zeroed/false on entry and
/// are restored on return. Entries with |v| <= threshold are dropped.
/// Returns (cols, vals) sorted by column.
#[allow(clippy::too_many_arguments)]
pub fn spspmm_row(
    a_cols: &[usize],
    a_vals: &[f64],
    b_row_ptr: &[usize],
    b_col_idx: &[usize],
    b_values: &[f64],
    scratch: &mut [f64],
    flags: &mut [bool],
    touched: &mut Vec<usize>,
    threshold: f64,
) -> (Vec<usize>, Vec<f64>) {
    touched.clear();
    for (&k, &av) in a_cols.iter().zip(a_vals) {
        for idx in b_row_ptr[k]..b_row_ptr[k + 1] {
            let j = b_col_idx[idx];
            if !flags[j] {
                flags[j] = true;
                touched.push(j);
            }
            scratch[j] += av * b_values[idx];
        }
    }
    touched.sort_unstable();
    let mut cols = Vec::with_capacity(touched.len());
    let mut vals = Vec::with_capacity(touched.len());
    for &j in touched.iter() {
        let v = scratch[j];
        scratch[j] = 0.0;
        flags[j] = false;
        if v.abs() > threshold {
            cols.push(j);
            vals.push(v);
        }
    }
    (cols, vals)
}

/// Per-row CSR-CSR product over all rows; parallel over rows when enabled.
#[allow(clippy::too_many_arguments)]
pub fn spspmm_rows(
    a_row_ptr: &[usize],
    a_col_idx: &[usize],
    a_values: &[f64],
    b_row_ptr: &[usize],
    b_col_idx: &[usize],
    b_values: &[f64],
    rows: usize,
    b_cols: usize,
    threshold: f64,
) -> Vec<(Vec<usize>, Vec<f64>)> {
    let row = |i: usize, scratch: &mut Vec<f64>, flags: &mut Vec<bool>, touched: &mut Vec<usize>| {
        spspmm_row(
            &a_col_idx[a_row_ptr[i]..a_row_ptr[i + 1]],
            &a_values[a_row_ptr[i]..a_row_ptr[i + 1]],
            b_row_ptr,
            b_col_idx,
            b_values,
            scratch,
            flags,
            touched,
            threshold,
        )
    };

    #[cfg(feature = "parallel")]
    {
        if rows > 64 && a_values.len() >= 4096 {
            return (0..rows)
                .into_par_iter()
                .map_init(
                    || (vec![0.0; b_cols], vec![false; b_cols], Vec::new()),
                    |(scratch, flags, touched), i| row(i, scratch, flags, touched),
                )
                .collect();
        }
    }

    let mut scratch = vec![0.0; b_cols];
    let mut flags = vec![false; b_cols];
    let mut touched = Vec::new();
    (0..rows)
        .map(|i| row(i, &mut scratch, &mut flags, &mut touched))
        .collect()
}
