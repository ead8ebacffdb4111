//! Hierarchical semantic attention fusion.
//!
//! Both fusion levels share one mechanism: score each candidate matrix per
//! node with `leaky_relu(δᵀ tanh(W_aᵀ z_i))`, softmax the scores per node,
//! and take the per-node convex combination. Hop fusion runs it over a
//! path's L+1 hop embeddings; path fusion runs it over the C fused path
//! embeddings with shared attention parameters.

use crate::error::{Error, Result};
use crate::ndcore::{NodeId, Tape};

/// Per-node attention scores for K candidate embeddings: returns an
/// `N x K` matrix where column k is `leaky_relu(tanh(Z_k · W_a) · δ)`.
pub fn attention_scores(
    tape: &mut Tape,
    parts: &[NodeId],
    transform: NodeId,
    vector: NodeId,
    leaky_slope: f64,
) -> Result<NodeId> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument {
            op: "attention_scores",
            msg: "no candidates to score".into(),
        });
    }
    let mut cols = Vec::with_capacity(parts.len());
    for &z in parts {
        let zw = tape.matmul(z, transform)?;
        let t = tape.tanh(zw);
        let s = tape.matmul(t, vector)?;
        cols.push(tape.leaky_relu(s, leaky_slope));
    }
    tape.concat_cols(&cols)
}

/// Normalizes scores per node and fuses: returns (fused `N x d`, betas
/// `N x K`). Every row of betas sums to one and the fused row lies in the
/// convex hull of its candidates.
pub fn attention_fuse(tape: &mut Tape, parts: &[NodeId], scores: NodeId) -> Result<(NodeId, NodeId)> {
    let betas = tape.row_softmax(scores);
    let fused = tape.weighted_mix(betas, parts)?;
    Ok((fused, betas))
}

/// Hop-level fusion of one path's hop embeddings (Eq. 6–8 mechanics with
/// per-node attentions).
pub fn hop_fuse(
    tape: &mut Tape,
    hops: &[NodeId],
    transform: NodeId,
    vector: NodeId,
    leaky_slope: f64,
) -> Result<(NodeId, NodeId)> {
    let scores = attention_scores(tape, hops, transform, vector, leaky_slope)?;
    attention_fuse(tape, hops, scores)
}

/// Path-level fusion across hybrid paths with shared attention parameters.
pub fn path_fuse(
    tape: &mut Tape,
    paths: &[NodeId],
    transform: NodeId,
    vector: NodeId,
    leaky_slope: f64,
) -> Result<(NodeId, NodeId)> {
    let scores = attention_scores(tape, paths, transform, vector, leaky_slope)?;
    attention_fuse(tape, paths, scores)
}

/// Linear classification head: `Z·W + b`.
pub fn classify(tape: &mut Tape, z: NodeId, head_w: NodeId, head_b: NodeId) -> Result<NodeId> {
    let logits = tape.matmul(z, head_w)?;
    tape.add_row_broadcast(logits, head_b)
}
