//! Downstream evaluation: classification F1 (head and KNN protocols),
//! k-means clustering scored by NMI/ARI, and embedding export.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::DenseMatrix;
use crate::rng;

/// One run's downstream scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub macro_f1_knn: f64,
    pub micro_f1_knn: f64,
    pub nmi: f64,
    pub ari: f64,
}

impl Metrics {
    pub fn fields(&self) -> [(&'static str, f64); 6] {
        [
            ("macro_f1", self.macro_f1),
            ("micro_f1", self.micro_f1),
            ("macro_f1_knn", self.macro_f1_knn),
            ("micro_f1_knn", self.micro_f1_knn),
            ("nmi", self.nmi),
            ("ari", self.ari),
        ]
    }
}

/// Row-wise argmax with ties resolved to the lowest class index.
pub fn predict_argmax(logits: &DenseMatrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Cross-entropy of `logits` against `labels` over `mask` rows, value-level.
pub fn ce_from_logits(logits: &DenseMatrix, labels: &[usize], mask: &[usize]) -> f64 {
    let mut total = 0.0;
    for &r in mask {
        let row = logits.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        total += lse - row[labels[r]];
    }
    total / mask.len() as f64
}

/// (macro, micro) F1. Classes absent from both `pred` and `truth` do not
/// enter the macro mean; a class present in truth but never predicted
/// contributes zero.
pub fn f1_scores(pred: &[usize], truth: &[usize]) -> Result<(f64, f64)> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(Error::InvalidArgument {
            op: "f1_scores",
            msg: format!("{} predictions vs {} labels", pred.len(), truth.len()),
        });
    }
    let n_classes = pred.iter().chain(truth).max().unwrap() + 1;
    let mut tp = vec![0usize; n_classes];
    let mut fp = vec![0usize; n_classes];
    let mut fn_ = vec![0usize; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }

    let mut macro_sum = 0.0;
    let mut macro_classes = 0usize;
    for c in 0..n_classes {
        if tp[c] + fp[c] + fn_[c] == 0 {
            continue; // absent from both pred and truth
        }
        macro_classes += 1;
        let denom = 2 * tp[c] + fp[c] + fn_[c];
        if denom > 0 {
            macro_sum += 2.0 * tp[c] as f64 / denom as f64;
        }
    }
    let macro_f1 = macro_sum / macro_classes as f64;

    let (tp_sum, fp_sum, fn_sum) = (
        tp.iter().sum::<usize>() as f64,
        fp.iter().sum::<usize>() as f64,
        fn_.iter().sum::<usize>() as f64,
    );
    let micro_f1 = if tp_sum == 0.0 {
        0.0
    } else {
        2.0 * tp_sum / (2.0 * tp_sum + fp_sum + fn_sum)
    };
    Ok((macro_f1, micro_f1))
}

/// K-nearest-neighbor prediction by Euclidean distance: majority vote among
/// the k nearest training rows, vote ties to the smallest class index,
/// distance ties to the earliest training row.
pub fn knn_protocol(
    train_z: &DenseMatrix,
    train_y: &[usize],
    test_z: &DenseMatrix,
    k: usize,
) -> Result<Vec<usize>> {
    if train_z.rows() == 0 {
        return Err(Error::InvalidArgument {
            op: "knn_protocol",
            msg: "empty training set".into(),
        });
    }
    if k == 0 || k > train_z.rows() {
        return Err(Error::InvalidArgument {
            op: "knn_protocol",
            msg: format!("k={k} for {} training rows", train_z.rows()),
        });
    }
    if train_z.cols() != test_z.cols() || train_y.len() != train_z.rows() {
        return Err(Error::shape("knn_protocol", train_z.shape(), test_z.shape()));
    }

    let mut preds = Vec::with_capacity(test_z.rows());
    for t in 0..test_z.rows() {
        let q = test_z.row(t);
        let mut dist: Vec<(f64, usize)> = (0..train_z.rows())
            .map(|i| {
                let d = train_z
                    .row(i)
                    .iter()
                    .zip(q)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                (d, i)
            })
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for &(_, i) in dist.iter().take(k) {
            *votes.entry(train_y[i]).or_insert(0) += 1;
        }
        // Ascending class order + strict comparison keeps the smallest
        // class index on vote ties.
        let mut best = (usize::MAX, 0usize);
        for (&class, &count) in &votes {
            if count > best.1 {
                best = (class, count);
            }
        }
        preds.push(best.0);
    }
    Ok(preds)
}

/// Lloyd's algorithm with k-means++ seeding; returns the assignment of the
/// best-inertia restart (ties to the earliest restart).
pub fn kmeans(z: &DenseMatrix, k: usize, seed: u64, restarts: usize) -> Result<Vec<usize>> {
    if k == 0 || k > z.rows() {
        return Err(Error::InvalidArgument {
            op: "kmeans",
            msg: format!("k={k} for {} rows", z.rows()),
        });
    }
    let mut rng = rng::stream(seed, "kmeans");
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let (assign, inertia) = kmeans_once(z, k, &mut rng);
        if best.as_ref().map_or(true, |(bi, _)| inertia < *bi) {
            best = Some((inertia, assign));
        }
    }
    Ok(best.unwrap().1)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_once(z: &DenseMatrix, k: usize, rng: &mut impl Rng) -> (Vec<usize>, f64) {
    let n = z.rows();
    let d = z.cols();

    // k-means++ seeding.
    let mut centroids = DenseMatrix::zeros(k, d);
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).copy_from_slice(z.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(z.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        };
        centroids.row_mut(c).copy_from_slice(z.row(next));
        for i in 0..n {
            let nd = sq_dist(z.row(i), centroids.row(c));
            if nd < d2[i] {
                d2[i] = nd;
            }
        }
    }

    let mut assign = vec![0usize; n];
    for _iter in 0..100 {
        let mut changed = false;
        for i in 0..n {
            let mut best_c = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dd = sq_dist(z.row(i), centroids.row(c));
                if dd < best_d {
                    best_d = dd;
                    best_c = c;
                }
            }
            if assign[i] != best_c {
                assign[i] = best_c;
                changed = true;
            }
        }

        let mut sums = DenseMatrix::zeros(k, d);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            counts[assign[i]] += 1;
            for (s, &v) in sums.row_mut(assign[i]).iter_mut().zip(z.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Reseed an empty cluster at the point farthest from its
                // current centroid (ties to the lowest index).
                let mut far = (0usize, -1.0);
                for i in 0..n {
                    let dd = sq_dist(z.row(i), centroids.row(assign[i]));
                    if dd > far.1 {
                        far = (i, dd);
                    }
                }
                centroids.row_mut(c).copy_from_slice(z.row(far.0));
                changed = true;
            } else {
                let inv = 1.0 / counts[c] as f64;
                for (cv, &s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *cv = s * inv;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let inertia = (0..n).map(|i| sq_dist(z.row(i), centroids.row(assign[i]))).sum();
    (assign, inertia)
}

type Contingency = (
    BTreeMap<(usize, usize), usize>,
    BTreeMap<usize, usize>,
    BTreeMap<usize, usize>,
);

fn contingency(a: &[usize], b: &[usize]) -> Contingency {
    let mut joint = BTreeMap::new();
    let mut ca = BTreeMap::new();
    let mut cb = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0) += 1;
        *ca.entry(x).or_insert(0) += 1;
        *cb.entry(y).or_insert(0) += 1;
    }
    (joint, ca, cb)
}

fn entropy(counts: &BTreeMap<usize, usize>, n: f64) -> f64 {
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Normalized mutual information with arithmetic-mean normalization.
/// Two trivial single-cluster partitions score 1; if exactly one side is
/// degenerate the score is 0.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::InvalidArgument {
            op: "nmi",
            msg: "partitions must be non-empty and equal length".into(),
        });
    }
    let n = a.len() as f64;
    let (joint, ca, cb) = contingency(a, b);
    let ha = entropy(&ca, n);
    let hb = entropy(&cb, n);
    let mean_h = 0.5 * (ha + hb);
    if mean_h == 0.0 {
        return Ok(1.0); // both single-cluster: identical partitions
    }
    if ha == 0.0 || hb == 0.0 {
        return Ok(0.0); // one side carries no information
    }
    let mut mi = 0.0;
    for (&(x, y), &c) in &joint {
        let pxy = c as f64 / n;
        let px = ca[&x] as f64 / n;
        let py = cb[&y] as f64 / n;
        mi += pxy * (pxy / (px * py)).ln();
    }
    Ok((mi / mean_h).clamp(0.0, 1.0))
}

fn comb2(n: usize) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// Adjusted Rand index from the contingency table; degenerate cases where
/// the expected index equals the maximum index score 1.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::InvalidArgument {
            op: "ari",
            msg: "partitions must be non-empty and equal length".into(),
        });
    }
    let (joint, ca, cb) = contingency(a, b);
    let sum_joint: f64 = joint.values().map(|&c| comb2(c)).sum();
    let sum_a: f64 = ca.values().map(|&c| comb2(c)).sum();
    let sum_b: f64 = cb.values().map(|&c| comb2(c)).sum();
    let total = comb2(a.len());
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < 1e-15 {
        return Ok(1.0);
    }
    Ok((sum_joint - expected) / (max_index - expected))
}

/// Mean silhouette coefficient of a labeled embedding (positive values mean
/// classes form separated clusters).
pub fn silhouette(z: &DenseMatrix, labels: &[usize]) -> Result<f64> {
    if z.rows() != labels.len() || z.rows() < 2 {
        return Err(Error::InvalidArgument {
            op: "silhouette",
            msg: "need at least two labeled rows".into(),
        });
    }
    let n = z.rows();
    let n_classes = labels.iter().max().unwrap() + 1;
    let mut total = 0.0;
    let mut counted = 0usize;
    for i in 0..n {
        let mut sums = vec![0.0; n_classes];
        let mut counts = vec![0usize; n_classes];
        for j in 0..n {
            if i == j {
                continue;
            }
            sums[labels[j]] += sq_dist(z.row(i), z.row(j)).sqrt();
            counts[labels[j]] += 1;
        }
        if counts[labels[i]] == 0 {
            continue; // singleton class
        }
        let a = sums[labels[i]] / counts[labels[i]] as f64;
        let mut b = f64::INFINITY;
        for c in 0..n_classes {
            if c != labels[i] && counts[c] > 0 {
                b = b.min(sums[c] / counts[c] as f64);
            }
        }
        if b.is_finite() {
            total += (b - a) / a.max(b);
            counted += 1;
        }
    }
    Ok(total / counted.max(1) as f64)
}

/// Projects rows onto the top-2 principal axes of their covariance.
pub fn pca2d(z: &DenseMatrix) -> Result<DenseMatrix> {
    let (n, d) = z.shape();
    if n == 0 {
        return Err(Error::InvalidArgument {
            op: "pca2d",
            msg: "empty input".into(),
        });
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(z.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut centered = z.clone();
    for r in 0..n {
        for (v, &m) in centered.row_mut(r).iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    if d == 1 {
        let mut out = DenseMatrix::zeros(n, 2);
        for r in 0..n {
            out.set(r, 0, centered.get(r, 0));
        }
        return Ok(out);
    }

    let denom = (n.max(2) - 1) as f64;
    let cov = centered.transpose().matmul(&centered)?.scale(1.0 / denom);
    let (eigvals, eigvecs) = jacobi_eigen(&cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eigvals[j].total_cmp(&eigvals[i]).then(i.cmp(&j)));

    let mut proj = DenseMatrix::zeros(d, 2);
    for (axis, &e) in order.iter().take(2).enumerate() {
        // Fix the sign so the largest-magnitude coordinate is positive.
        let col: Vec<f64> = (0..d).map(|r| eigvecs.get(r, e)).collect();
        let lead = col
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap();
        let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            proj.set(r, axis, sign * col[r]);
        }
    }
    centered.matmul(&proj)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix; returns
/// (eigenvalues, column eigenvectors).
pub(crate) fn jacobi_eigen(a: &DenseMatrix) -> (Vec<f64>, DenseMatrix) {
    let d = a.rows();
    let mut m = a.clone();
    let mut v = DenseMatrix::identity(d);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..d {
            for q in p + 1..d {
                off += m.get(p, q).abs();
            }
        }
        if off < 1e-13 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = m.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..d {
                    let mip = m.get(i, p);
                    let miq = m.get(i, q);
                    m.set(i, p, c * mip - s * miq);
                    m.set(i, q, s * mip + c * miq);
                }
                for i in 0..d {
                    let mpi = m.get(p, i);
                    let mqi = m.get(q, i);
                    m.set(p, i, c * mpi - s * mqi);
                    m.set(q, i, s * mpi + c * mqi);
                }
                for i in 0..d {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, c * vip - s * viq);
                    v.set(i, q, s * vip + c * viq);
                }
            }
        }
    }
    ((0..d).map(|i| m.get(i, i)).collect(), v)
}

/// Writes `id\tlabel\tcoord...` rows.
pub fn export_embeddings(path: &Path, z: &DenseMatrix, ids: &[usize], labels: &[usize]) -> Result<()> {
    if ids.len() != z.rows() || labels.len() != z.rows() {
        return Err(Error::InvalidArgument {
            op: "export_embeddings",
            msg: "ids, labels and rows must align".into(),
        });
    }
    let mut out = std::fs::File::create(path)?;
    for r in 0..z.rows() {
        let coords: Vec<String> = z.row(r).iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}\t{}\t{}", ids[r], labels[r], coords.join("\t"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn perfect_predictions_score_one() {
        let y = vec![0, 1, 2, 1, 0];
        let (ma, mi) = f1_scores(&y, &y).unwrap();
        assert_eq!((ma, mi), (1.0, 1.0));
    }

    #[test]
    fn binary_all_one_class_hand_oracle() {
        // pred all 0, truth half/half: micro = 0.5, macro = mean(2/3, 0) = 1/3
        let pred = vec![0, 0, 0, 0];
        let truth = vec![0, 0, 1, 1];
        let (ma, mi) = f1_scores(&pred, &truth).unwrap();
        assert!((mi - 0.5).abs() < 1e-12);
        assert!((ma - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn knn_exact_match_and_constant_label() {
        let train = DenseMatrix::from_vec(3, 2, vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0]).unwrap();
        let y = vec![0, 1, 2];
        let test = DenseMatrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(knn_protocol(&train, &y, &test, 1).unwrap(), vec![1]);

        let y_const = vec![7, 7, 7];
        assert_eq!(knn_protocol(&train, &y_const, &test, 3).unwrap(), vec![7]);
    }

    #[test]
    fn knn_matches_exhaustive_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(20);
        let train = DenseMatrix::glorot_uniform(20, 2, &mut rng);
        let y: Vec<usize> = (0..20).map(|_| rng.gen_range(0..3)).collect();
        let test = DenseMatrix::glorot_uniform(7, 2, &mut rng);
        let k = 5;
        let got = knn_protocol(&train, &y, &test, k).unwrap();

        for t in 0..test.rows() {
            let mut d: Vec<(f64, usize)> = (0..20)
                .map(|i| {
                    (
                        train
                            .row(i)
                            .iter()
                            .zip(test.row(t))
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>(),
                        i,
                    )
                })
                .collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut counts = [0usize; 3];
            for &(_, i) in d.iter().take(k) {
                counts[y[i]] += 1;
            }
            let mut want = 0;
            for c in 1..3 {
                if counts[c] > counts[want] {
                    want = c;
                }
            }
            assert_eq!(got[t], want);
        }
    }

    #[test]
    fn knn_rejects_empty_or_oversized_k() {
        let train = DenseMatrix::zeros(0, 2);
        let test = DenseMatrix::zeros(1, 2);
        assert!(knn_protocol(&train, &[], &test, 1).is_err());
        let train = DenseMatrix::zeros(2, 2);
        assert!(knn_protocol(&train, &[0, 1], &test, 3).is_err());
    }

    #[test]
    fn kmeans_k_equals_rows_gives_singleton_clusters() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let z = DenseMatrix::glorot_uniform(6, 2, &mut rng);
        let assign = kmeans(&z, 6, 3, 5).unwrap();
        let mut sorted = assign.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 6);
    }

    #[test]
    fn kmeans_separates_two_blobs() {
        let mut rng = ChaCha12Rng::seed_from_u64(22);
        let mut rows = Vec::new();
        for _ in 0..15 {
            rows.push(vec![rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)]);
        }
        for _ in 0..15 {
            rows.push(vec![10.0 + rng.gen_range(-0.1..0.1), 10.0 + rng.gen_range(-0.1..0.1)]);
        }
        let z = DenseMatrix::from_rows(&rows).unwrap();
        let assign = kmeans(&z, 2, 9, 10).unwrap();
        for i in 1..15 {
            assert_eq!(assign[i], assign[0]);
        }
        for i in 16..30 {
            assert_eq!(assign[i], assign[15]);
        }
        assert_ne!(assign[0], assign[15]);
    }

    #[test]
    fn kmeans_beats_random_assignments() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let z = DenseMatrix::glorot_uniform(30, 3, &mut rng);
        let assign = kmeans(&z, 3, 7, 10).unwrap();
        let inertia = |assign: &[usize]| {
            let mut cent = DenseMatrix::zeros(3, 3);
            let mut counts = [0usize; 3];
            for (i, &c) in assign.iter().enumerate() {
                counts[c] += 1;
                for (s, &v) in cent.row_mut(c).iter_mut().zip(z.row(i)) {
                    *s += v;
                }
            }
            for c in 0..3 {
                if counts[c] > 0 {
                    for v in cent.row_mut(c) {
                        *v /= counts[c] as f64;
                    }
                }
            }
            (0..30).map(|i| sq_dist(z.row(i), cent.row(assign[i]))).sum::<f64>()
        };
        let ours = inertia(&assign);
        for _ in 0..100 {
            let random: Vec<usize> = (0..30).map(|_| rng.gen_range(0..3)).collect();
            assert!(ours <= inertia(&random) + 1e-9);
        }
    }

    #[test]
    fn kmeans_is_deterministic_per_seed() {
        let mut rng = ChaCha12Rng::seed_from_u64(24);
        let z = DenseMatrix::glorot_uniform(25, 4, &mut rng);
        assert_eq!(kmeans(&z, 4, 11, 10).unwrap(), kmeans(&z, 4, 11, 10).unwrap());
    }

    #[test]
    fn nmi_known_values() {
        assert_eq!(nmi(&[0, 0, 1, 1], &[1, 1, 0, 0]).unwrap(), 1.0);
        // all-singletons vs one-cluster: one side has zero entropy
        assert_eq!(nmi(&[0, 1, 2, 3], &[0, 0, 0, 0]).unwrap(), 0.0);
        // both single-cluster
        assert_eq!(nmi(&[5, 5, 5], &[2, 2, 2]).unwrap(), 1.0);
    }

    #[test]
    fn ari_known_values() {
        assert_eq!(ari(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(ari(&[0, 0, 1, 1], &[3, 3, 9, 9]).unwrap(), 1.0);
    }

    /// Brute-force ARI oracle: count agreeing/disagreeing pairs directly.
    fn ari_pair_oracle(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let (mut n11, mut n00, mut n10, mut n01) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for i in 0..n {
            for j in i + 1..n {
                let same_a = a[i] == a[j];
                let same_b = b[i] == b[j];
                match (same_a, same_b) {
                    (true, true) => n11 += 1.0,
                    (false, false) => n00 += 1.0,
                    (true, false) => n10 += 1.0,
                    (false, true) => n01 += 1.0,
                }
            }
        }
        let total = n11 + n00 + n10 + n01;
        let expected = (n11 + n10) * (n11 + n01) / total;
        let max_index = 0.5 * ((n11 + n10) + (n11 + n01));
        if (max_index - expected).abs() < 1e-15 {
            return 1.0;
        }
        (n11 - expected) / (max_index - expected)
    }

    /// NMI oracle straight from the definition over observed label pairs.
    fn nmi_count_oracle(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len() as f64;
        let mut joint: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut pa: BTreeMap<usize, f64> = BTreeMap::new();
        let mut pb: BTreeMap<usize, f64> = BTreeMap::new();
        for (&x, &y) in a.iter().zip(b) {
            *joint.entry((x, y)).or_insert(0.0) += 1.0 / n;
            *pa.entry(x).or_insert(0.0) += 1.0 / n;
            *pb.entry(y).or_insert(0.0) += 1.0 / n;
        }
        let ha: f64 = pa.values().map(|p| -p * p.ln()).sum();
        let hb: f64 = pb.values().map(|p| -p * p.ln()).sum();
        if ha + hb == 0.0 {
            return 1.0;
        }
        if ha == 0.0 || hb == 0.0 {
            return 0.0;
        }
        let mi: f64 = joint
            .iter()
            .map(|(&(x, y), &pxy)| pxy * (pxy / (pa[&x] * pb[&y])).ln())
            .sum();
        mi / (0.5 * (ha + hb))
    }

    #[test]
    fn nmi_and_ari_match_oracles_on_random_pairs() {
        let mut rng = ChaCha12Rng::seed_from_u64(25);
        for _ in 0..200 {
            let n = rng.gen_range(2..60);
            let ka = rng.gen_range(1..6);
            let kb = rng.gen_range(1..6);
            let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..ka)).collect();
            let b: Vec<usize> = (0..n).map(|_| rng.gen_range(0..kb)).collect();
            assert!((nmi(&a, &b).unwrap() - nmi_count_oracle(&a, &b).clamp(0.0, 1.0)).abs() < 1e-12);
            assert!((ari(&a, &b).unwrap() - ari_pair_oracle(&a, &b)).abs() < 1e-12);
        }
    }

    #[test]
    fn nmi_ari_invariant_under_relabeling() {
        let mut rng = ChaCha12Rng::seed_from_u64(26);
        let a: Vec<usize> = (0..50).map(|_| rng.gen_range(0..4)).collect();
        let b: Vec<usize> = (0..50).map(|_| rng.gen_range(0..3)).collect();
        let remap = [7usize, 2, 9, 0];
        let a2: Vec<usize> = a.iter().map(|&x| remap[x]).collect();
        assert!((nmi(&a, &b).unwrap() - nmi(&a2, &b).unwrap()).abs() < 1e-12);
        assert!((ari(&a, &b).unwrap() - ari(&a2, &b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn pca_preserves_isotropic_2d_distances() {
        let mut rng = ChaCha12Rng::seed_from_u64(27);
        let z = DenseMatrix::glorot_uniform(12, 2, &mut rng);
        let p = pca2d(&z).unwrap();
        for i in 0..12 {
            for j in i + 1..12 {
                let dz = sq_dist(z.row(i), z.row(j)).sqrt();
                let dp = sq_dist(p.row(i), p.row(j)).sqrt();
                assert!((dz - dp).abs() < 1e-9, "{dz} vs {dp}");
            }
        }
    }

    #[test]
    fn pca_rank_one_second_component_vanishes() {
        let mut rows = Vec::new();
        for i in 0..10 {
            let t = i as f64;
            rows.push(vec![t, 2.0 * t, -t]);
        }
        let z = DenseMatrix::from_rows(&rows).unwrap();
        let p = pca2d(&z).unwrap();
        let var2: f64 = (0..10).map(|r| p.get(r, 1) * p.get(r, 1)).sum();
        assert!(var2 < 1e-18, "second component variance {var2}");
    }

    #[test]
    fn pca_matches_eigen_identities() {
        let mut rng = ChaCha12Rng::seed_from_u64(28);
        let z = DenseMatrix::glorot_uniform(10, 5, &mut rng);
        let p = pca2d(&z).unwrap();

        let n = 10.0;
        let mut mean = vec![0.0; 5];
        for r in 0..10 {
            for (m, &v) in mean.iter_mut().zip(z.row(r)) {
                *m += v / n;
            }
        }
        let mut centered = z.clone();
        for r in 0..10 {
            for (v, &m) in centered.row_mut(r).iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        let cov = centered.transpose().matmul(&centered).unwrap().scale(1.0 / 9.0);
        let (vals, vecs) = jacobi_eigen(&cov);

        // Eigen residuals ‖Cv − λv‖ vanish.
        for e in 0..5 {
            for r in 0..5 {
                let mut cv = 0.0;
                for c in 0..5 {
                    cv += cov.get(r, c) * vecs.get(c, e);
                }
                assert!((cv - vals[e] * vecs.get(r, e)).abs() < 1e-9);
            }
        }

        // Projected variance equals the top-2 eigenvalue mass.
        let mut sorted = vals.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let captured: f64 = (0..10).map(|r| sq_dist(p.row(r), &[0.0, 0.0])).sum();
        assert!((captured / 9.0 - (sorted[0] + sorted[1])).abs() < 1e-9);
    }

    #[test]
    fn silhouette_positive_for_separated_blobs() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..8 {
            rows.push(vec![i as f64 * 0.01, 0.0]);
            labels.push(0);
            rows.push(vec![5.0 + i as f64 * 0.01, 5.0]);
            labels.push(1);
        }
        let z = DenseMatrix::from_rows(&rows).unwrap();
        assert!(silhouette(&z, &labels).unwrap() > 0.9);
    }
}
