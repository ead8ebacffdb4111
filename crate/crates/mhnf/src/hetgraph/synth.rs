//! Planted-signal synthetic graphs for desk-scale validation.

use std::collections::BTreeMap;

use rand::Rng;

use crate::ndcore::DenseMatrix;
use crate::rng;

use super::{GraphSpec, HetGraph};

/// Builds a three-type graph with one class-bearing relation.
///
/// - Type `T` (`classes * n_per_type` nodes) is the labeled target type.
///   Each T node gets a feature vector `one_hot(class) + N(0, noise^2)`.
/// - Type `U` holds "hubs", partitioned by class. Relation `signal` connects
///   every T node to a deterministic round-robin hub of its own class plus
///   one random same-class hub, so same-class nodes meet at two graph hops
///   (T–U–T) and hubs never mix classes.
/// - Type `V` is structureless: relation `noise` connects every T node to
///   two uniformly random V nodes. V is kept small so every V node fans in
///   from many classes at once — its neighborhood carries no class signal.
///
/// Reverse relations (`signal_rev`, `noise_rev`) are added by the builder.
/// Identical `(seed, n_per_type, classes, noise)` always produce identical
/// graphs.
pub fn synth_planted(seed: u64, n_per_type: usize, classes: usize, noise: f64) -> HetGraph {
    assert!(classes >= 2, "synth_planted requires at least 2 classes");
    assert!(n_per_type >= 3, "synth_planted requires at least 3 nodes per class");

    let hubs_per_class = (n_per_type / 3).max(1);
    let n_t = classes * n_per_type;
    let n_u = classes * hubs_per_class;
    let n_v = (n_per_type / 10).max(4);

    let mut rng = rng::stream(seed, "synth");

    let mut signal = Vec::with_capacity(2 * n_t);
    let mut noise_edges = Vec::with_capacity(2 * n_t);
    let mut labels = Vec::with_capacity(n_t);
    let mut features = DenseMatrix::zeros(n_t, classes);

    for c in 0..classes {
        for j in 0..n_per_type {
            let t = c * n_per_type + j;
            labels.push((t, c));

            let primary = c * hubs_per_class + (j % hubs_per_class);
            signal.push((t, primary));
            if hubs_per_class > 1 {
                let mut extra = primary;
                while extra == primary {
                    extra = c * hubs_per_class + rng.gen_range(0..hubs_per_class);
                }
                signal.push((t, extra));
            }

            let v1 = rng.gen_range(0..n_v);
            noise_edges.push((t, v1));
            if n_v > 1 {
                let mut v2 = v1;
                while v2 == v1 {
                    v2 = rng.gen_range(0..n_v);
                }
                noise_edges.push((t, v2));
            }

            let row = features.row_mut(t);
            row[c] = 1.0;
            if noise > 0.0 {
                for v in row.iter_mut() {
                    // Box-Muller, one sample per coordinate.
                    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    let u2: f64 = rng.gen_range(0.0..1.0);
                    *v += noise
                        * (-2.0 * u1.ln()).sqrt()
                        * (2.0 * std::f64::consts::PI * u2).cos();
                }
            }
        }
    }

    let mut feature_map = BTreeMap::new();
    feature_map.insert("T".to_string(), features);

    HetGraph::build(GraphSpec {
        types: vec![
            ("T".into(), n_t),
            ("U".into(), n_u),
            ("V".into(), n_v),
        ],
        relations: vec![
            ("signal".into(), "T".into(), "U".into(), signal),
            ("noise".into(), "T".into(), "V".into(), noise_edges),
        ],
        features: feature_map,
        labels,
        target: "T".into(),
    })
    .expect("planted construction is valid by design")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_identical_graphs() {
        let a = synth_planted(9, 12, 3, 0.2);
        let b = synth_planted(9, 12, 3, 0.2);
        assert_eq!(a.fingerprint(), b.fingerprint());
        for (ra, rb) in a.relations().iter().zip(b.relations()) {
            assert_eq!(*ra.matrix, *rb.matrix);
        }
        assert_eq!(a.features(0).unwrap(), b.features(0).unwrap());
        let c = synth_planted(10, 12, 3, 0.2);
        assert_ne!(
            a.relations()[0].matrix.iter().collect::<Vec<_>>(),
            c.relations()[0].matrix.iter().collect::<Vec<_>>()
        );
    }

    #[test]
    fn noiseless_graph_has_shared_hubs_and_pure_two_hop_structure() {
        let g = synth_planted(3, 9, 3, 0.0);
        let sig = &g.relations()[g.relation_index("signal").unwrap()].matrix;
        let labels = g.label_vector();
        let t_count = g.types().count(0);

        // Every T node shares at least one signal hub with another
        // same-class T node, and never with a different-class one.
        let sig_rev = sig.transpose();
        for t in 0..t_count {
            let (hubs, _) = sig.row(t);
            let mut sibling = false;
            for &h in hubs {
                let (members, _) = sig_rev.row(h);
                for &m in members {
                    if m != t {
                        assert_eq!(labels[m], labels[t], "hub mixes classes");
                        sibling = true;
                    }
                }
            }
            assert!(sibling, "node {t} has no same-class hub sibling");
        }

        // With exact one-hot features, 2-hop T-U-T aggregation reproduces
        // the class one-hot exactly: classes are linearly separable.
        let two_hop = sig.spspmm(&sig_rev, 0.0).unwrap();
        let feats = g.features(0).unwrap();
        for t in 0..t_count {
            let (cohort, _) = two_hop.row(t);
            for &other in cohort {
                assert_eq!(feats.row(other), feats.row(t));
            }
        }
    }

    #[test]
    fn shapes_follow_parameters() {
        let g = synth_planted(1, 15, 3, 0.1);
        assert_eq!(g.types().count(0), 45); // T
        assert_eq!(g.types().count(1), 15); // U: 3 * (15/3)
        assert_eq!(g.types().count(2), 4); // V: max(4, 15/10)
        assert_eq!(g.relation_names(), vec!["signal", "noise", "signal_rev", "noise_rev"]);
        assert_eq!(g.n_classes(), 3);
        assert!(g.features(1).is_none() && g.features(2).is_none());
    }
}
