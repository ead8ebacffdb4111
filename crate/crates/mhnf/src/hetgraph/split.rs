//! Stratified train/val/test splits over labeled target nodes.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

use super::HetGraph;

/// Disjoint index sets over labeled target-type nodes (target-local ids).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LabeledSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Stratified split: each class is shuffled independently and divided so
/// per-class proportions stay within one node of the requested ratios, with
/// at least one node of every class per subset.
pub fn split_nodes(graph: &HetGraph, train_ratio: f64, val_ratio: f64, seed: u64) -> Result<LabeledSplit> {
    if train_ratio <= 0.0 || val_ratio <= 0.0 {
        return Err(Error::InvalidArgument {
            op: "split_nodes",
            msg: "ratios must be positive".into(),
        });
    }
    if train_ratio + val_ratio >= 1.0 {
        return Err(Error::InvalidArgument {
            op: "split_nodes",
            msg: format!("train + val must be < 1, got {}", train_ratio + val_ratio),
        });
    }

    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); graph.n_classes()];
    for (&local, &class) in graph.labels() {
        per_class[class].push(local);
    }
    for (c, members) in per_class.iter().enumerate() {
        if members.len() < 3 {
            return Err(Error::InvalidArgument {
                op: "split_nodes",
                msg: format!("class {c} has {} labeled nodes; need at least 3 to stratify", members.len()),
            });
        }
    }

    let mut rng = rng::stream(seed, "split");
    let mut split = LabeledSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for members in &mut per_class {
        members.shuffle(&mut rng);
        let n = members.len();
        let mut n_train = ((n as f64) * train_ratio).round() as usize;
        let mut n_val = ((n as f64) * val_ratio).round() as usize;
        n_train = n_train.clamp(1, n - 2);
        n_val = n_val.clamp(1, n - n_train - 1);
        split.train.extend(&members[..n_train]);
        split.val.extend(&members[n_train..n_train + n_val]);
        split.test.extend(&members[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hetgraph::{GraphSpec, HetGraph};
    use std::collections::BTreeMap;

    fn labeled_graph(per_class: &[usize]) -> HetGraph {
        let n: usize = per_class.iter().sum();
        let mut labels = Vec::new();
        let mut id = 0;
        for (c, &k) in per_class.iter().enumerate() {
            for _ in 0..k {
                labels.push((id, c));
                id += 1;
            }
        }
        HetGraph::build(GraphSpec {
            types: vec![("T".into(), n), ("U".into(), 2)],
            relations: vec![("R".into(), "T".into(), "U".into(), (0..n).map(|i| (i, i % 2)).collect())],
            features: BTreeMap::new(),
            labels,
            target: "T".into(),
        })
        .unwrap()
    }

    #[test]
    fn counts_match_requested_ratios() {
        let g = labeled_graph(&[50, 50]);
        let s = split_nodes(&g, 0.2, 0.1, 7).unwrap();
        assert_eq!(s.train.len(), 20);
        assert_eq!(s.val.len(), 10);
        assert_eq!(s.test.len(), 70);
    }

    #[test]
    fn same_seed_same_split() {
        let g = labeled_graph(&[40, 30, 30]);
        let a = split_nodes(&g, 0.3, 0.1, 42).unwrap();
        let b = split_nodes(&g, 0.3, 0.1, 42).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.val, b.val);
        assert_eq!(a.test, b.test);
        let c = split_nodes(&g, 0.3, 0.1, 43).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn splits_are_disjoint_and_cover() {
        let g = labeled_graph(&[33, 41, 26]);
        let s = split_nodes(&g, 0.25, 0.15, 3).unwrap();
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.val)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort_unstable();
        let expect: Vec<usize> = (0..100).collect();
        assert_eq!(all, expect);
    }

    #[test]
    fn per_class_proportions_within_one_node() {
        let g = labeled_graph(&[37, 23, 40]);
        let s = split_nodes(&g, 0.2, 0.1, 11).unwrap();
        let labels = g.label_vector();
        for c in 0..3 {
            let n_c = labels.iter().filter(|&&l| l == c).count() as f64;
            let train_c = s.train.iter().filter(|&&i| labels[i] == c).count() as f64;
            let val_c = s.val.iter().filter(|&&i| labels[i] == c).count() as f64;
            assert!((train_c - 0.2 * n_c).abs() <= 1.0, "class {c}: {train_c} vs {}", 0.2 * n_c);
            assert!((val_c - 0.1 * n_c).abs() <= 1.0);
        }
    }

    #[test]
    fn tiny_class_is_an_error() {
        let g = labeled_graph(&[10, 2]);
        assert!(split_nodes(&g, 0.2, 0.1, 0).is_err());
    }

    #[test]
    fn bad_ratios_are_errors() {
        let g = labeled_graph(&[10, 10]);
        assert!(split_nodes(&g, 0.0, 0.1, 0).is_err());
        assert!(split_nodes(&g, 0.7, 0.4, 0).is_err());
    }
}
