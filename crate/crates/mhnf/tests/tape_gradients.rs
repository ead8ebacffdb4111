//! Finite-difference checks for every tape operation.
//!
//! Each case builds a scalar function of one or more dense parameters on a
//! fresh tape, then compares tape gradients against central differences
//! (ε = 1e-5) at relative error < 1e-4.

use std::sync::Arc;

use mhnf::ndcore::{DenseMatrix, SparseMatrix, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Central-difference gradient of `f` w.r.t. every entry of every parameter,
/// compared against the tape gradient computed by `f` itself.
fn check_gradients(params: &[DenseMatrix], f: &dyn Fn(&mut Tape, &[mhnf::ndcore::NodeId]) -> mhnf::ndcore::NodeId) {
    // Tape gradients.
    let mut tape = Tape::new();
    let ids: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &ids);
    tape.backward(loss).unwrap();
    let grads: Vec<DenseMatrix> = ids
        .iter()
        .map(|&id| {
            tape.grad_dense(id)
                .cloned()
                .unwrap_or_else(|| DenseMatrix::zeros(tape.dense(id).rows(), tape.dense(id).cols()))
        })
        .collect();

    let eval = |params: &[DenseMatrix]| -> f64 {
        let mut tape = Tape::new();
        let ids: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&mut tape, &ids);
        tape.scalar(loss)
    };

    let mut worst = 0.0f64;
    for (pi, p) in params.iter().enumerate() {
        for i in 0..p.values().len() {
            let mut plus = params.to_vec();
            plus[pi].values_mut()[i] += EPS;
            let mut minus = params.to_vec();
            minus[pi].values_mut()[i] -= EPS;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * EPS);
            let an = grads[pi].values()[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            if rel > worst {
                worst = rel;
            }
            assert!(
                rel < TOL,
                "param {pi} entry {i}: fd={fd:.9e} tape={an:.9e} rel={rel:.3e}"
            );
        }
    }
    assert!(worst < TOL);
}

fn rand_dense(rows: usize, cols: usize, rng: &mut impl Rng) -> DenseMatrix {
    DenseMatrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .unwrap()
}

fn rand_sparse(rows: usize, cols: usize, density: f64, rng: &mut impl Rng) -> Arc<SparseMatrix> {
    let mut trips = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            if rng.gen::<f64>() < density {
                trips.push((r, c, rng.gen_range(0.1..1.0)));
            }
        }
    }
    Arc::new(SparseMatrix::from_triplets(rows, cols, &trips).unwrap())
}

#[test]
fn matmul_grads() {
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let a = rand_dense(3, 4, &mut rng);
    let b = rand_dense(4, 2, &mut rng);
    check_gradients(&[a, b], &|t, ids| {
        let c = t.matmul(ids[0], ids[1]).unwrap();
        let c = t.tanh(c);
        t.sum_all(c)
    });
}

#[test]
fn spmm_grads_wrt_dense() {
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let s = rand_sparse(5, 5, 0.4, &mut rng);
    let b = rand_dense(5, 3, &mut rng);
    check_gradients(&[b], &|t, ids| {
        let s_node = t.sparse_const(s.clone());
        let c = t.spmm(s_node, ids[0]).unwrap();
        let c = t.tanh(c);
        t.sum_all(c)
    });
}

#[test]
fn weighted_sum_and_masked_softmax_grads() {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let mats: Vec<_> = (0..3).map(|_| rand_sparse(6, 6, 0.3, &mut rng)).collect();
    let w = rand_dense(1, 3, &mut rng);
    let h = rand_dense(6, 2, &mut rng);
    let mats2 = mats.clone();
    check_gradients(&[w, h], &|t, ids| {
        let mix = t.weighted_sum_sparse(mats2.clone(), ids[0]).unwrap();
        let sm = t.masked_row_softmax(mix);
        let agg = t.spmm(sm, ids[1]).unwrap();
        let agg = t.tanh(agg);
        t.sum_all(agg)
    });
}

#[test]
fn spspmm_chain_grads() {
    // Gradient must flow through a two-hop product into both mixing vectors.
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    let mats: Vec<_> = (0..2).map(|_| rand_sparse(6, 6, 0.4, &mut rng)).collect();
    let w1 = rand_dense(1, 2, &mut rng);
    let w2 = rand_dense(1, 2, &mut rng);
    let h = rand_dense(6, 2, &mut rng);
    let mats2 = mats.clone();
    check_gradients(&[w1, w2, h], &|t, ids| {
        let m1 = t.weighted_sum_sparse(mats2.clone(), ids[0]).unwrap();
        let m1 = t.masked_row_softmax(m1);
        let m2 = t.weighted_sum_sparse(mats2.clone(), ids[1]).unwrap();
        let m2 = t.masked_row_softmax(m2);
        let a2 = t.spspmm(m1, m2, 0.0).unwrap();
        let a2 = t.row_normalize(a2);
        let agg = t.spmm(a2, ids[2]).unwrap();
        let agg = t.tanh(agg);
        t.sum_all(agg)
    });
}

#[test]
fn row_normalize_grads() {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let mats: Vec<_> = (0..2).map(|_| rand_sparse(5, 5, 0.5, &mut rng)).collect();
    let w = rand_dense(1, 2, &mut rng);
    let h = rand_dense(5, 2, &mut rng);
    let mats2 = mats.clone();
    check_gradients(&[w, h], &|t, ids| {
        let mix = t.weighted_sum_sparse(mats2.clone(), ids[0]).unwrap();
        let sm = t.masked_row_softmax(mix);
        let nm = t.row_normalize(sm);
        let agg = t.spmm(nm, ids[1]).unwrap();
        t.sum_all(agg)
    });
}

#[test]
fn activation_grads() {
    let mut rng = ChaCha12Rng::seed_from_u64(6);
    let a = rand_dense(4, 3, &mut rng);
    check_gradients(&[a.clone()], &|t, ids| {
        let x = t.relu(ids[0]);
        t.sum_all(x)
    });
    check_gradients(&[a.clone()], &|t, ids| {
        let x = t.leaky_relu(ids[0], 0.01);
        let x = t.tanh(x);
        t.sum_all(x)
    });
    check_gradients(&[a.clone()], &|t, ids| {
        let x = t.exp(ids[0]).unwrap();
        t.sum_all(x)
    });
    // log needs positive inputs
    let pos = a.map(|v| v.abs() + 0.5);
    check_gradients(&[pos], &|t, ids| {
        let x = t.log(ids[0]).unwrap();
        t.sum_all(x)
    });
}

#[test]
fn row_softmax_and_mix_grads() {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let scores = rand_dense(5, 3, &mut rng);
    let z0 = rand_dense(5, 4, &mut rng);
    let z1 = rand_dense(5, 4, &mut rng);
    let z2 = rand_dense(5, 4, &mut rng);
    check_gradients(&[scores, z0, z1, z2], &|t, ids| {
        let betas = t.row_softmax(ids[0]);
        let fused = t.weighted_mix(betas, &[ids[1], ids[2], ids[3]]).unwrap();
        let fused = t.tanh(fused);
        t.sum_all(fused)
    });
}

#[test]
fn concat_and_slice_grads() {
    let mut rng = ChaCha12Rng::seed_from_u64(8);
    let a = rand_dense(3, 2, &mut rng);
    let b = rand_dense(3, 1, &mut rng);
    let c = rand_dense(2, 2, &mut rng);
    check_gradients(&[a.clone(), b], &|t, ids| {
        let cat = t.concat_cols(&[ids[0], ids[1]]).unwrap();
        let cat = t.tanh(cat);
        t.sum_all(cat)
    });
    check_gradients(&[a, c], &|t, ids| {
        let cat = t.concat_rows(&[ids[0], ids[1]]).unwrap();
        let cut = t.slice_rows(cat, 1, 3).unwrap();
        let cut = t.tanh(cut);
        t.sum_all(cut)
    });
}

#[test]
fn bias_broadcast_and_cross_entropy_grads() {
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let z = rand_dense(6, 4, &mut rng);
    let w = rand_dense(4, 3, &mut rng);
    let bias = rand_dense(1, 3, &mut rng);
    let labels = vec![0, 1, 2, 0, 1, 2];
    let mask = vec![0, 2, 3, 5];
    check_gradients(&[z, w, bias], &|t, ids| {
        let logits = t.matmul(ids[0], ids[1]).unwrap();
        let logits = t.add_row_broadcast(logits, ids[2]).unwrap();
        t.cross_entropy(logits, &labels, &mask).unwrap()
    });
}

#[test]
fn add_grads() {
    let mut rng = ChaCha12Rng::seed_from_u64(10);
    let a = rand_dense(3, 3, &mut rng);
    let b = rand_dense(3, 3, &mut rng);
    check_gradients(&[a, b], &|t, ids| {
        let s = t.add(ids[0], ids[1]).unwrap();
        let s = t.tanh(s);
        t.sum_all(s)
    });
}

#[test]
fn sum_of_param_grad_is_ones() {
    let w = DenseMatrix::from_vec(2, 2, vec![0.3, -0.2, 0.8, -0.9]).unwrap();
    let mut tape = Tape::new();
    let id = tape.param(w);
    let loss = tape.sum_all(id);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad_dense(id).unwrap().values(), &[1.0; 4]);
}

#[test]
fn relu_of_negative_has_zero_grad() {
    let w = DenseMatrix::from_vec(1, 3, vec![-1.0, -2.0, -0.5]).unwrap();
    let mut tape = Tape::new();
    let id = tape.param(w);
    let r = tape.relu(id);
    let loss = tape.sum_all(r);
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad_dense(id).unwrap().values(), &[0.0; 3]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::new();
    let id = tape.param(DenseMatrix::zeros(2, 2));
    assert!(tape.backward(id).is_err());
}

#[test]
fn cross_entropy_values() {
    // perfect prediction → ~0 loss; uniform logits → ln C
    let mut tape = Tape::new();
    let confident = DenseMatrix::from_vec(2, 3, vec![30.0, -30.0, -30.0, -30.0, 30.0, -30.0]).unwrap();
    let id = tape.param(confident);
    let loss = tape.cross_entropy(id, &[0, 1], &[0, 1]).unwrap();
    assert!(tape.scalar(loss) < 1e-9);

    let mut tape = Tape::new();
    let uniform = DenseMatrix::zeros(3, 4);
    let id = tape.param(uniform);
    let loss = tape.cross_entropy(id, &[0, 1, 2], &[0, 1, 2]).unwrap();
    assert!((tape.scalar(loss) - 4.0f64.ln()).abs() < 1e-12);

    // per-row scalar oracle on a random case
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let logits = rand_dense(5, 3, &mut rng);
    let labels = vec![2, 0, 1, 1, 0];
    let mask = vec![0, 1, 2, 3, 4];
    let mut tape = Tape::new();
    let id = tape.param(logits.clone());
    let loss = tape.cross_entropy(id, &labels, &mask).unwrap();
    let mut want = 0.0;
    for r in 0..5 {
        let row = logits.row(r);
        let denom: f64 = row.iter().map(|v| v.exp()).sum();
        want -= (row[labels[r]].exp() / denom).ln();
    }
    want /= 5.0;
    assert!((tape.scalar(loss) - want).abs() < 1e-12);
}

#[test]
fn cross_entropy_rejects_empty_mask() {
    let mut tape = Tape::new();
    let id = tape.param(DenseMatrix::zeros(2, 2));
    assert!(tape.cross_entropy(id, &[0, 1], &[]).is_err());
}
