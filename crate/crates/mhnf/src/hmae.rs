//! Hybrid metapath autonomous extraction.
//!
//! Every hop of a hybrid path mixes all single-relation adjacencies with a
//! learned weight vector, row-normalizes the mixture with a masked softmax,
//! and chains the per-hop mixtures by sparse multiplication:
//!
//! - one hop:  `mix_l = masked_row_softmax(Σ_m w[m] · A_m)`
//! - l hops:   `A_(l) = mix_1 · mix_2 · ... · mix_l`
//!
//! The per-hop mixtures and all chained products are recorded on the tape
//! so hop-level aggregation can read any interior hop, and gradients flow
//! back into the mixing weights.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::collections::BTreeSet;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ndcore::{NodeId, SparseMatrix, Tape};
use crate::report::{AttentionRecord, RankedPath, RelationInfo};

/// Tape nodes for one hybrid path: the per-hop one-hop mixtures and the
/// chained `A_(1..L)` products (both length L).
#[derive(Clone, Debug)]
pub struct PathHops {
    pub mixes: Vec<NodeId>,
    pub chained: Vec<NodeId>,
}

/// One-hop hybrid mixture: weighted relation sum followed by the masked row
/// softmax. Differentiable w.r.t. `weights` (a 1 x |M| dense node).
pub fn mix_hop(tape: &mut Tape, relations: Vec<Arc<SparseMatrix>>, weights: NodeId) -> Result<NodeId> {
    let mixed = tape.weighted_sum_sparse(relations, weights)?;
    Ok(tape.masked_row_softmax(mixed))
}

/// Chains one-hop mixtures into `A_(l) = Π_{i<=l} mix_i`, recording every
/// intermediate product. Entries below `threshold` are pruned.
pub fn chain_hops(tape: &mut Tape, mixes: &[NodeId], threshold: f64) -> Result<Vec<NodeId>> {
    if mixes.is_empty() {
        return Err(Error::InvalidArgument {
            op: "chain_hops",
            msg: "need at least one hop".into(),
        });
    }
    let mut chained = Vec::with_capacity(mixes.len());
    chained.push(mixes[0]);
    for &mix in &mixes[1..] {
        let prev = *chained.last().unwrap();
        chained.push(tape.spspmm(prev, mix, threshold)?);
    }
    Ok(chained)
}

/// Builds the hop chain for every hybrid path. `mixer[p][l]` supplies the
/// hop-(l+1) weight node of path p; paths are independent.
pub fn extract(
    tape: &mut Tape,
    relations: &[Arc<SparseMatrix>],
    mixer: &[Vec<NodeId>],
    threshold: f64,
) -> Result<Vec<PathHops>> {
    let mut paths = Vec::with_capacity(mixer.len());
    for hop_weights in mixer {
        let mut mixes = Vec::with_capacity(hop_weights.len());
        for &w in hop_weights {
            mixes.push(mix_hop(tape, relations.to_vec(), w)?);
        }
        let chained = chain_hops(tape, &mixes, threshold)?;
        paths.push(PathHops { mixes, chained });
    }
    Ok(paths)
}

#[derive(PartialEq)]
struct BeamEntry {
    score: f64,
    positions: Vec<usize>,
}

impl Eq for BeamEntry {}

impl Ord for BeamEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap on score; lexicographically smaller positions win ties.
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.positions.cmp(&self.positions))
    }
}

impl PartialOrd for BeamEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Exact best-first enumeration of sequences under a product of
/// independent per-hop distributions, via lazy heap expansion. `stop` is
/// called on every emitted (sequence, product); enumeration ends when it
/// returns true or the space is exhausted.
fn best_first_sequences(
    dists: &[Vec<f64>],
    mut stop: impl FnMut(&[usize], f64) -> bool,
) {
    // Sort each hop's relations by weight (descending, index ascending).
    let sorted: Vec<Vec<(usize, f64)>> = dists
        .iter()
        .map(|d| {
            let mut v: Vec<(usize, f64)> = d.iter().copied().enumerate().collect();
            v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            v
        })
        .collect();

    let score_of = |pos: &[usize]| -> f64 {
        pos.iter()
            .zip(&sorted)
            .map(|(&p, hop)| hop[p].1)
            .product()
    };

    let mut heap = BinaryHeap::new();
    let mut seen = BTreeSet::new();
    let start = vec![0usize; dists.len()];
    heap.push(BeamEntry {
        score: score_of(&start),
        positions: start.clone(),
    });
    seen.insert(start);

    while let Some(BeamEntry { score, positions }) = heap.pop() {
        let relations: Vec<usize> = positions.iter().zip(&sorted).map(|(&p, hop)| hop[p].0).collect();
        if stop(&relations, score) {
            return;
        }
        for l in 0..positions.len() {
            if positions[l] + 1 < sorted[l].len() {
                let mut next = positions.clone();
                next[l] += 1;
                if seen.insert(next.clone()) {
                    heap.push(BeamEntry {
                        score: score_of(&next),
                        positions: next,
                    });
                }
            }
        }
    }
}

/// The k best sequences by product weight, best first.
fn k_best_sequences(dists: &[Vec<f64>], k: usize) -> Vec<(Vec<usize>, f64)> {
    let mut out = Vec::with_capacity(k);
    best_first_sequences(dists, |seq, score| {
        out.push((seq.to_vec(), score));
        out.len() >= k
    });
    out
}

/// Ranks discrete relation sequences for every hybrid path.
///
/// A sequence picks one relation per hop; its mixer factor is the product
/// of the softmax-normalized mixing weights along the hops. The score
/// multiplies that by the path's attention mass on graph hops (1 − the
/// self-hop attention) and by the path attention, making sequences
/// comparable across hybrid paths — and is zeroed for sequences that do not
/// chain by node type (their composed adjacency is structurally empty, so
/// they denote no metapath). Returns the global top_k, best first; ties are
/// broken toward higher mixer factors, then lexicographically.
pub fn report_learned_paths(
    record: &AttentionRecord,
    relations: &[RelationInfo],
    top_k: usize,
) -> Vec<RankedPath> {
    let chains = |seq: &[usize]| -> bool {
        seq.windows(2).all(|w| relations[w[0]].dst == relations[w[1]].src)
    };
    // Enumerating exactly top_k by mixer weight could miss realizable
    // sequences hiding below unrealizable ones, so keep enumerating until
    // top_k realizable sequences are in hand (with a generous cap).
    let cap = (top_k * 256).max(4096);
    let mut all = Vec::new();
    for (p, path) in record.paths.iter().enumerate() {
        let hop_mass: f64 = path.hop_betas.iter().skip(1).sum();
        let mut emitted = 0usize;
        let mut realizable_count = 0usize;
        best_first_sequences(&path.relation_weights, |seq, mixer_score| {
            let realizable = chains(seq);
            all.push(RankedPath {
                path_id: p,
                relations: seq.iter().map(|&m| relations[m].name.clone()).collect(),
                score: if realizable {
                    mixer_score * hop_mass * path.path_beta
                } else {
                    0.0
                },
                mixer_score,
                hop_mass,
                path_beta: path.path_beta,
                realizable,
            });
            emitted += 1;
            if realizable {
                realizable_count += 1;
            }
            (realizable_count >= top_k && emitted >= top_k) || emitted >= cap
        });
    }
    all.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| b.mixer_score.total_cmp(&a.mixer_score))
            .then_with(|| a.path_id.cmp(&b.path_id))
            .then_with(|| a.relations.cmp(&b.relations))
    });
    all.truncate(top_k);
    all
}
