//! Heterogeneous graph data model.
//!
//! All relation matrices live in one global index space of size `N_total`:
//! node types occupy contiguous, non-overlapping global id ranges, and a
//! relation from type A to type B stores its edges inside the (A, B) block
//! of an `N_total x N_total` CSR matrix. Mixing and chaining relations with
//! different type signatures is then plain matrix algebra.
//!
//! Every relation between distinct types carries its reverse (the exact
//! transpose), materialized at construction.

mod load;
mod split;
mod synth;

pub use load::{load_graph, save_graph};
pub use split::{split_nodes, LabeledSplit};
pub use synth::synth_planted;

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ndcore::{DenseMatrix, SparseMatrix};

/// Node types with their global index layout.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeTypeTable {
    names: Vec<String>,
    counts: Vec<usize>,
    offsets: Vec<usize>,
}

impl NodeTypeTable {
    pub fn new(entries: &[(String, usize)]) -> Result<Self> {
        let mut names = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        let mut offsets = Vec::with_capacity(entries.len());
        let mut offset = 0;
        for (name, count) in entries {
            if names.contains(name) {
                return Err(Error::Graph(format!("duplicate node type '{name}'")));
            }
            if *count == 0 {
                return Err(Error::Graph(format!("node type '{name}' has zero nodes")));
            }
            names.push(name.clone());
            counts.push(*count);
            offsets.push(offset);
            offset += count;
        }
        if names.is_empty() {
            return Err(Error::Graph("no node types declared".into()));
        }
        Ok(NodeTypeTable {
            names,
            counts,
            offsets,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn total(&self) -> usize {
        self.offsets.last().map_or(0, |o| o + self.counts.last().unwrap())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, ty: usize) -> &str {
        &self.names[ty]
    }

    pub fn count(&self, ty: usize) -> usize {
        self.counts[ty]
    }

    pub fn offset(&self, ty: usize) -> usize {
        self.offsets[ty]
    }

    pub fn global_id(&self, ty: usize, local: usize) -> usize {
        self.offsets[ty] + local
    }

    /// Maps a global id back to (type, local id).
    pub fn locate(&self, global: usize) -> (usize, usize) {
        let ty = match self.offsets.binary_search(&global) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        (ty, global - self.offsets[ty])
    }
}

/// A typed edge set: `name` connects `src`-type nodes to `dst`-type nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationSpec {
    pub name: String,
    pub src: usize,
    pub dst: usize,
}

/// One relation: its spec, its global-index adjacency, and (for reverses)
/// which declared relation it transposes.
#[derive(Clone, Debug)]
pub struct Relation {
    pub spec: RelationSpec,
    pub matrix: Arc<SparseMatrix>,
    pub reverse_of: Option<usize>,
}

/// The heterogeneous graph: types, relations, per-type features, and labels
/// on the target type.
#[derive(Clone, Debug)]
pub struct HetGraph {
    types: NodeTypeTable,
    relations: Vec<Relation>,
    features: Vec<Option<DenseMatrix>>,
    labels: BTreeMap<usize, usize>,
    target_type: usize,
    n_classes: usize,
}

/// Declarative input for [`HetGraph::build`]: node types, declared relations
/// as local-id edge lists, optional per-type features, and labels.
#[derive(Clone, Debug, Default)]
pub struct GraphSpec {
    pub types: Vec<(String, usize)>,
    /// (name, src type, dst type, edges as (src local, dst local))
    pub relations: Vec<(String, String, String, Vec<(usize, usize)>)>,
    /// type name → feature matrix (row i = local node i)
    pub features: BTreeMap<String, DenseMatrix>,
    /// (target-local id, class)
    pub labels: Vec<(usize, usize)>,
    pub target: String,
}

/// The reverse of relation `name` from `src` to `dst`: type initial
/// concatenations flip ("PA" → "AP"); anything else gets a `_rev` suffix.
pub fn reverse_name(name: &str, src: &str, dst: &str) -> String {
    if name == format!("{src}{dst}") {
        format!("{dst}{src}")
    } else {
        format!("{name}_rev")
    }
}

impl HetGraph {
    /// Validates and assembles a graph, materializing reverse relations.
    pub fn build(spec: GraphSpec) -> Result<HetGraph> {
        let types = NodeTypeTable::new(&spec.types)?;
        let n = types.total();

        let mut relations: Vec<Relation> = Vec::new();
        for (name, src_name, dst_name, edges) in &spec.relations {
            let src = types
                .index_of(src_name)
                .ok_or_else(|| Error::Graph(format!("relation '{name}': unknown type '{src_name}'")))?;
            let dst = types
                .index_of(dst_name)
                .ok_or_else(|| Error::Graph(format!("relation '{name}': unknown type '{dst_name}'")))?;
            if edges.is_empty() {
                return Err(Error::Graph(format!("relation '{name}' has zero edges")));
            }
            if relations.iter().any(|r| r.spec.name == *name) {
                return Err(Error::Graph(format!("duplicate relation name '{name}'")));
            }
            let mut triplets = Vec::with_capacity(edges.len());
            for &(s, d) in edges {
                if s >= types.count(src) {
                    return Err(Error::Graph(format!(
                        "relation '{name}': node id {s} out of range for type '{src_name}' (count {})",
                        types.count(src)
                    )));
                }
                if d >= types.count(dst) {
                    return Err(Error::Graph(format!(
                        "relation '{name}': node id {d} out of range for type '{dst_name}' (count {})",
                        types.count(dst)
                    )));
                }
                triplets.push((types.global_id(src, s), types.global_id(dst, d), 1.0));
            }
            // from_triplets sums duplicates; clamp back to unit weight.
            let mut matrix = SparseMatrix::from_triplets(n, n, &triplets)?;
            if matrix.values().iter().any(|&v| v != 1.0) {
                let deduped: Vec<(usize, usize, f64)> =
                    matrix.iter().map(|((r, c), _)| (r, c, 1.0)).collect();
                matrix = SparseMatrix::from_triplets(n, n, &deduped)?;
            }
            relations.push(Relation {
                spec: RelationSpec {
                    name: name.clone(),
                    src,
                    dst,
                },
                matrix: Arc::new(matrix),
                reverse_of: None,
            });
        }
        if relations.is_empty() {
            return Err(Error::Graph("no relations declared".into()));
        }

        // Materialize reverses for cross-type relations. A declared relation
        // may already occupy the reverse name, in which case it must be the
        // exact transpose.
        let declared = relations.len();
        for i in 0..declared {
            let (name, src, dst) = {
                let spec = &relations[i].spec;
                (spec.name.clone(), spec.src, spec.dst)
            };
            if src == dst {
                continue;
            }
            let rev = reverse_name(&name, types.name(src), types.name(dst));
            let transpose = relations[i].matrix.transpose();
            if let Some(existing) = relations.iter().position(|r| r.spec.name == rev) {
                if *relations[existing].matrix != transpose {
                    return Err(Error::Graph(format!(
                        "relation '{rev}' is declared but is not the transpose of '{name}'"
                    )));
                }
                continue;
            }
            relations.push(Relation {
                spec: RelationSpec {
                    name: rev,
                    src: dst,
                    dst: src,
                },
                matrix: Arc::new(transpose),
                reverse_of: Some(i),
            });
        }

        // Features.
        let mut features: Vec<Option<DenseMatrix>> = vec![None; types.len()];
        for (ty_name, feats) in &spec.features {
            let ty = types
                .index_of(ty_name)
                .ok_or_else(|| Error::Graph(format!("features for unknown type '{ty_name}'")))?;
            if feats.rows() != types.count(ty) {
                return Err(Error::Graph(format!(
                    "type '{ty_name}': {} feature rows for {} nodes",
                    feats.rows(),
                    types.count(ty)
                )));
            }
            features[ty] = Some(feats.clone());
        }

        // Labels.
        let target_type = types
            .index_of(&spec.target)
            .ok_or_else(|| Error::Graph(format!("unknown target type '{}'", spec.target)))?;
        if spec.labels.is_empty() {
            return Err(Error::Graph("no labels provided".into()));
        }
        let mut labels = BTreeMap::new();
        for &(local, class) in &spec.labels {
            if local >= types.count(target_type) {
                return Err(Error::Graph(format!(
                    "label for node id {local} out of range for target type '{}'",
                    spec.target
                )));
            }
            if labels.insert(local, class).is_some() {
                return Err(Error::Graph(format!("duplicate label for node id {local}")));
            }
        }
        let n_classes = labels.values().max().unwrap() + 1;
        for c in 0..n_classes {
            if !labels.values().any(|&v| v == c) {
                return Err(Error::Graph(format!(
                    "class indices not dense: class {c} of {n_classes} has no nodes"
                )));
            }
        }

        let graph = HetGraph {
            types,
            relations,
            features,
            labels,
            target_type,
            n_classes,
        };
        graph.validate()?;
        Ok(graph)
    }

    /// Re-checks structural invariants: CSR validity, block discipline, and
    /// transpose closure.
    pub fn validate(&self) -> Result<()> {
        let n = self.types.total();
        for rel in &self.relations {
            rel.matrix.validate()?;
            if rel.matrix.shape() != (n, n) {
                return Err(Error::Graph(format!(
                    "relation '{}' has shape {:?}, expected {n}x{n}",
                    rel.spec.name,
                    rel.matrix.shape()
                )));
            }
            let (src, dst) = (rel.spec.src, rel.spec.dst);
            let (r0, r1) = (
                self.types.offset(src),
                self.types.offset(src) + self.types.count(src),
            );
            let (c0, c1) = (
                self.types.offset(dst),
                self.types.offset(dst) + self.types.count(dst),
            );
            for ((r, c), _) in rel.matrix.iter() {
                if r < r0 || r >= r1 || c < c0 || c >= c1 {
                    return Err(Error::Graph(format!(
                        "relation '{}': entry ({r},{c}) outside its type block",
                        rel.spec.name
                    )));
                }
            }
        }
        // Transpose closure over cross-type relations.
        for rel in &self.relations {
            if rel.spec.src == rel.spec.dst {
                continue;
            }
            let rev = reverse_name(
                &rel.spec.name,
                self.types.name(rel.spec.src),
                self.types.name(rel.spec.dst),
            );
            let found = self
                .relations
                .iter()
                .find(|r| r.spec.name == rev)
                .or_else(|| {
                    // This relation may itself be the auto-added reverse.
                    rel.reverse_of.map(|i| &self.relations[i])
                });
            match found {
                Some(other) => {
                    if *other.matrix != rel.matrix.transpose() {
                        return Err(Error::Graph(format!(
                            "transpose closure violated for relation '{}'",
                            rel.spec.name
                        )));
                    }
                }
                None => {
                    return Err(Error::Graph(format!(
                        "relation '{}' has no reverse",
                        rel.spec.name
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn types(&self) -> &NodeTypeTable {
        &self.types
    }

    pub fn n_total(&self) -> usize {
        self.types.total()
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn relation_names(&self) -> Vec<&str> {
        self.relations.iter().map(|r| r.spec.name.as_str()).collect()
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r.spec.name == name)
    }

    pub fn relation_matrices(&self) -> Vec<Arc<SparseMatrix>> {
        self.relations.iter().map(|r| r.matrix.clone()).collect()
    }

    /// Relation names with their endpoint type names, in relation order.
    pub fn relation_infos(&self) -> Vec<crate::report::RelationInfo> {
        self.relations
            .iter()
            .map(|r| crate::report::RelationInfo {
                name: r.spec.name.clone(),
                src: self.types.name(r.spec.src).to_string(),
                dst: self.types.name(r.spec.dst).to_string(),
            })
            .collect()
    }

    pub fn features(&self, ty: usize) -> Option<&DenseMatrix> {
        self.features[ty].as_ref()
    }

    pub fn target_type(&self) -> usize {
        self.target_type
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Labels keyed by target-local node id.
    pub fn labels(&self) -> &BTreeMap<usize, usize> {
        &self.labels
    }

    /// Sorted target-local ids of labeled nodes.
    pub fn labeled_nodes(&self) -> Vec<usize> {
        self.labels.keys().copied().collect()
    }

    /// Label vector over all target-type nodes; unlabeled nodes get class 0
    /// and must be excluded via masks.
    pub fn label_vector(&self) -> Vec<usize> {
        let mut v = vec![0usize; self.types.count(self.target_type)];
        for (&local, &class) in &self.labels {
            v[local] = class;
        }
        v
    }

    /// A signature used to match checkpoints to datasets: type layout plus
    /// a content hash over edges, labels and features.
    pub fn fingerprint(&self) -> String {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |x: u64| {
            hash ^= x;
            hash = hash.wrapping_mul(0x1000_0000_01b3);
        };
        for rel in &self.relations {
            for ((r, c), v) in rel.matrix.iter() {
                mix(r as u64);
                mix(c as u64);
                mix(v.to_bits());
            }
        }
        for (&local, &class) in &self.labels {
            mix(local as u64);
            mix(class as u64);
        }
        for feats in self.features.iter().flatten() {
            for v in feats.values() {
                mix(v.to_bits());
            }
        }

        let mut parts: Vec<String> = Vec::new();
        for ty in 0..self.types.len() {
            parts.push(format!("{}:{}", self.types.name(ty), self.types.count(ty)));
        }
        for rel in &self.relations {
            parts.push(format!("{}:{}", rel.spec.name, rel.matrix.nnz()));
        }
        parts.push(format!("labels:{}", self.labels.len()));
        parts.push(format!("classes:{}", self.n_classes));
        parts.push(format!("hash:{hash:016x}"));
        parts.join(",")
    }
}

/// Per-row reciprocal row sums: 1/Σ_j a(i,j), and exactly 0 for empty rows.
/// Rows that sum to a negative value are rejected.
pub fn degree_inverse(a: &SparseMatrix) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(a.rows());
    for (r, sum) in a.row_sums().into_iter().enumerate() {
        if sum < 0.0 {
            return Err(Error::InvalidArgument {
                op: "degree_inverse",
                msg: format!("row {r} has negative sum {sum}"),
            });
        }
        out.push(if sum > 0.0 { 1.0 / sum } else { 0.0 });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_spec() -> GraphSpec {
        // ACM-shaped toy: papers/authors/subjects.
        GraphSpec {
            types: vec![("P".into(), 4), ("A".into(), 3), ("S".into(), 2)],
            relations: vec![
                (
                    "PA".into(),
                    "P".into(),
                    "A".into(),
                    vec![(0, 0), (0, 1), (1, 1), (2, 2), (3, 0)],
                ),
                (
                    "PS".into(),
                    "P".into(),
                    "S".into(),
                    vec![(0, 0), (1, 0), (2, 1), (3, 1)],
                ),
            ],
            features: BTreeMap::new(),
            labels: vec![(0, 0), (1, 0), (2, 1), (3, 1)],
            target: "P".into(),
        }
    }

    #[test]
    fn toy_graph_builds_with_reverses() {
        let g = HetGraph::build(toy_spec()).unwrap();
        assert_eq!(g.n_total(), 9);
        let names = g.relation_names();
        assert_eq!(names, vec!["PA", "PS", "AP", "SP"]);
        // transpose closure
        let pa = &g.relations()[g.relation_index("PA").unwrap()];
        let ap = &g.relations()[g.relation_index("AP").unwrap()];
        assert_eq!(*ap.matrix, pa.matrix.transpose());
        assert_eq!(ap.reverse_of, Some(0));
    }

    #[test]
    fn duplicate_edges_dedup_to_unit_weight() {
        let mut spec = toy_spec();
        spec.relations[0].3.push((0, 0));
        spec.relations[0].3.push((0, 0));
        let g = HetGraph::build(spec).unwrap();
        let pa = &g.relations()[0].matrix;
        assert_eq!(pa.get(0, 4), 1.0); // P0 -> A0 at global col 4
        assert_eq!(pa.nnz(), 5);
    }

    #[test]
    fn zero_edge_relation_is_an_error() {
        let mut spec = toy_spec();
        spec.relations[1].3.clear();
        let err = HetGraph::build(spec).unwrap_err().to_string();
        assert!(err.contains("zero edges"), "got: {err}");
    }

    #[test]
    fn out_of_range_edge_is_an_error() {
        let mut spec = toy_spec();
        spec.relations[0].3.push((0, 7)); // only 3 authors
        let err = HetGraph::build(spec).unwrap_err().to_string();
        assert!(err.contains("out of range"), "got: {err}");
    }

    #[test]
    fn sparse_labels_are_accepted() {
        let mut spec = toy_spec();
        spec.labels = vec![(0, 0), (2, 1)];
        let g = HetGraph::build(spec).unwrap();
        assert_eq!(g.labeled_nodes(), vec![0, 2]);
        assert_eq!(g.n_classes(), 2);
    }

    #[test]
    fn non_dense_classes_are_an_error() {
        let mut spec = toy_spec();
        spec.labels = vec![(0, 0), (1, 2)]; // class 1 missing
        assert!(HetGraph::build(spec).is_err());
    }

    #[test]
    fn degree_inverse_cases() {
        // row-stochastic input → all ones
        let m = SparseMatrix::from_triplets(2, 2, &[(0, 0, 0.3), (0, 1, 0.7), (1, 1, 1.0)]).unwrap();
        assert_eq!(degree_inverse(&m).unwrap(), vec![1.0, 1.0]);

        // empty row → 0
        let m = SparseMatrix::from_triplets(2, 2, &[(1, 0, 2.0)]).unwrap();
        assert_eq!(degree_inverse(&m).unwrap(), vec![0.0, 0.5]);

        // negative row sum → error
        let m = SparseMatrix::from_triplets(1, 2, &[(0, 0, -1.0)]).unwrap();
        assert!(degree_inverse(&m).is_err());
    }

    #[test]
    fn degree_inverse_matches_row_sum_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(13);
        let mut trips = Vec::new();
        for r in 0..8 {
            for c in 0..8 {
                if rng.gen::<f64>() < 0.4 {
                    trips.push((r, c, rng.gen_range(0.01..2.0)));
                }
            }
        }
        let m = SparseMatrix::from_triplets(8, 8, &trips).unwrap();
        let inv = degree_inverse(&m).unwrap();
        for r in 0..8 {
            let mut sum = 0.0;
            for c in 0..8 {
                sum += m.get(r, c);
            }
            if sum > 0.0 {
                assert!((inv[r] - 1.0 / sum).abs() < 1e-12);
            } else {
                assert_eq!(inv[r], 0.0);
            }
        }
    }

    #[test]
    fn locate_round_trips() {
        let t = NodeTypeTable::new(&[("a".into(), 3), ("b".into(), 2)]).unwrap();
        assert_eq!(t.locate(0), (0, 0));
        assert_eq!(t.locate(2), (0, 2));
        assert_eq!(t.locate(3), (1, 0));
        assert_eq!(t.locate(4), (1, 1));
    }
}
