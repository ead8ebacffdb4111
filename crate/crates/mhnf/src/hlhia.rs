//! Hop-level heterogeneous information aggregation.
//!
//! Projects per-type features into one shared d-dimensional space, then
//! aggregates degree-normalized neighborhoods per hop:
//!
//! `Z_l = relu(D_(l)^{-1} · A_(l) · h' · W)`
//!
//! with an extra hop-0 term `Z_0 = relu(h'·W)` so a node's own projected
//! attributes take part in hop-level attention (without it, isolated nodes
//! would have an all-zero representation).

use crate::error::Result;
use crate::hetgraph::HetGraph;
use crate::ndcore::{NodeId, Tape};

/// Projects every node into the shared space: featured types go through
/// their projection matrix, featureless types read their trainable
/// embedding table directly. `proj[ty]` is the per-type parameter node.
/// Returns the stacked `N_total x d` matrix.
pub fn project(tape: &mut Tape, graph: &HetGraph, proj: &[NodeId]) -> Result<NodeId> {
    let mut blocks = Vec::with_capacity(graph.types().len());
    for ty in 0..graph.types().len() {
        match graph.features(ty) {
            Some(feats) => {
                let f = tape.dense_const(feats.clone());
                blocks.push(tape.matmul(f, proj[ty])?);
            }
            None => blocks.push(proj[ty]),
        }
    }
    tape.concat_rows(&blocks)
}

/// One hop of Eq.-style aggregation over an already-transformed feature
/// matrix `hw = h'·W`: degree-normalize the hop adjacency, aggregate, ReLU.
/// Zero-degree rows come out all-zero.
pub fn aggregate_hop(tape: &mut Tape, hop_adjacency: NodeId, hw: NodeId) -> Result<NodeId> {
    let normalized = tape.row_normalize(hop_adjacency);
    let agg = tape.spmm(normalized, hw)?;
    Ok(tape.relu(agg))
}

/// All hop embeddings for one path: index 0 is the self term `relu(h'·W)`,
/// index l is the l-hop aggregation. Returns L+1 nodes.
pub fn aggregate_all(
    tape: &mut Tape,
    chained: &[NodeId],
    h_proj: NodeId,
    transform: NodeId,
) -> Result<Vec<NodeId>> {
    let hw = tape.matmul(h_proj, transform)?;
    let mut hops = Vec::with_capacity(chained.len() + 1);
    hops.push(tape.relu(hw));
    for &a_l in chained {
        hops.push(aggregate_hop(tape, a_l, hw)?);
    }
    Ok(hops)
}
