//! Model parameters and the end-to-end forward pass.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::HetGraph;
use crate::ndcore::{DenseMatrix, NodeId, Tape};
use crate::report::{AttentionRecord, PathAttention};
use crate::{hlhia, hmae, hsaf};

/// Architecture hyper-parameters needed to build the computation graph.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of hybrid paths (C).
    pub paths: usize,
    /// Maximum path length in hops (L).
    pub max_hops: usize,
    /// Embedding dimension (d).
    pub dim: usize,
    /// Attention hidden width (d_a).
    pub attn_dim: usize,
    /// Negative slope of the attention nonlinearity.
    pub leaky_slope: f64,
    /// Magnitude below which chained-adjacency entries are pruned.
    pub prune_threshold: f64,
    /// When set, mixing weights are frozen to one-hot relation choices
    /// (`frozen[path][hop] = relation index`) instead of being learned.
    pub frozen_mixing: Option<Vec<Vec<usize>>>,
}

impl ModelConfig {
    pub fn validate(&self, graph: &HetGraph) -> Result<()> {
        if self.paths == 0 || self.max_hops == 0 || self.dim == 0 || self.attn_dim == 0 {
            return Err(Error::Config(
                "paths, max_hops, dim and attn_dim must all be positive".into(),
            ));
        }
        if let Some(frozen) = &self.frozen_mixing {
            let n_rel = graph.relations().len();
            if frozen.len() != self.paths
                || frozen.iter().any(|hops| hops.len() != self.max_hops)
                || frozen.iter().flatten().any(|&m| m >= n_rel)
            {
                return Err(Error::Config(format!(
                    "frozen mixing must be {} paths x {} hops of relation indices < {n_rel}",
                    self.paths, self.max_hops
                )));
            }
        }
        Ok(())
    }
}

/// Every learnable tensor of the model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelParams {
    /// Relation-mixing weights, `[path][hop]`, each `1 x |M|`.
    pub mixer: Vec<Vec<DenseMatrix>>,
    /// Per-type projection (featured types, `in_dim x d`) or embedding
    /// table (featureless types, `count x d`).
    pub projections: Vec<DenseMatrix>,
    /// Per-path aggregation transform W, `d x d`.
    pub path_transform: Vec<DenseMatrix>,
    /// Per-path hop-attention transform, `d x d_a`.
    pub hop_attn_w: Vec<DenseMatrix>,
    /// Per-path hop-attention vector δ, `d_a x 1`.
    pub hop_attn_v: Vec<DenseMatrix>,
    /// Shared path-attention transform, `d x d_a`.
    pub path_attn_w: DenseMatrix,
    /// Shared path-attention vector δ, `d_a x 1`.
    pub path_attn_v: DenseMatrix,
    /// Classification head, `d x classes` and `1 x classes`.
    pub head_w: DenseMatrix,
    pub head_b: DenseMatrix,
}

impl ModelParams {
    /// Random initialization: Glorot-uniform transforms, N(0, 0.01)
    /// embedding tables, near-zero mixing weights (so the initial mixture
    /// is close to uniform over relations).
    pub fn init(graph: &HetGraph, cfg: &ModelConfig, rng: &mut impl Rng) -> ModelParams {
        let n_rel = graph.relations().len();
        let d = cfg.dim;

        let mixer = (0..cfg.paths)
            .map(|_| {
                (0..cfg.max_hops)
                    .map(|_| {
                        let vals = (0..n_rel).map(|_| rng.gen_range(-0.01..0.01)).collect();
                        DenseMatrix::from_vec(1, n_rel, vals).unwrap()
                    })
                    .collect()
            })
            .collect();

        let projections = (0..graph.types().len())
            .map(|ty| match graph.features(ty) {
                Some(f) => DenseMatrix::glorot_uniform(f.cols(), d, rng),
                None => DenseMatrix::gaussian(graph.types().count(ty), d, 0.01, rng),
            })
            .collect();

        ModelParams {
            mixer,
            projections,
            path_transform: (0..cfg.paths).map(|_| DenseMatrix::glorot_uniform(d, d, rng)).collect(),
            hop_attn_w: (0..cfg.paths)
                .map(|_| DenseMatrix::glorot_uniform(d, cfg.attn_dim, rng))
                .collect(),
            hop_attn_v: (0..cfg.paths)
                .map(|_| DenseMatrix::glorot_uniform(cfg.attn_dim, 1, rng))
                .collect(),
            path_attn_w: DenseMatrix::glorot_uniform(d, cfg.attn_dim, rng),
            path_attn_v: DenseMatrix::glorot_uniform(cfg.attn_dim, 1, rng),
            head_w: DenseMatrix::glorot_uniform(d, graph.n_classes(), rng),
            head_b: DenseMatrix::zeros(1, graph.n_classes()),
        }
    }

    /// Canonical (name, tensor) view; the order is the optimizer order.
    pub fn named(&self) -> Vec<(String, &DenseMatrix)> {
        let mut out = Vec::new();
        for (p, hops) in self.mixer.iter().enumerate() {
            for (l, w) in hops.iter().enumerate() {
                out.push((format!("mixer/p{p}/h{}", l + 1), w));
            }
        }
        for (ty, m) in self.projections.iter().enumerate() {
            out.push((format!("proj/t{ty}"), m));
        }
        for (p, m) in self.path_transform.iter().enumerate() {
            out.push((format!("agg_w/p{p}"), m));
        }
        for (p, m) in self.hop_attn_w.iter().enumerate() {
            out.push((format!("hop_attn_w/p{p}"), m));
        }
        for (p, m) in self.hop_attn_v.iter().enumerate() {
            out.push((format!("hop_attn_v/p{p}"), m));
        }
        out.push(("path_attn_w".into(), &self.path_attn_w));
        out.push(("path_attn_v".into(), &self.path_attn_v));
        out.push(("head_w".into(), &self.head_w));
        out.push(("head_b".into(), &self.head_b));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut DenseMatrix)> {
        let mut out: Vec<(String, &mut DenseMatrix)> = Vec::new();
        for (p, hops) in self.mixer.iter_mut().enumerate() {
            for (l, w) in hops.iter_mut().enumerate() {
                out.push((format!("mixer/p{p}/h{}", l + 1), w));
            }
        }
        for (ty, m) in self.projections.iter_mut().enumerate() {
            out.push((format!("proj/t{ty}"), m));
        }
        for (p, m) in self.path_transform.iter_mut().enumerate() {
            out.push((format!("agg_w/p{p}"), m));
        }
        for (p, m) in self.hop_attn_w.iter_mut().enumerate() {
            out.push((format!("hop_attn_w/p{p}"), m));
        }
        for (p, m) in self.hop_attn_v.iter_mut().enumerate() {
            out.push((format!("hop_attn_v/p{p}"), m));
        }
        out.push(("path_attn_w".into(), &mut self.path_attn_w));
        out.push(("path_attn_v".into(), &mut self.path_attn_v));
        out.push(("head_w".into(), &mut self.head_w));
        out.push(("head_b".into(), &mut self.head_b));
        out
    }

    /// Softmax-normalized mixing weights `[path][hop][relation]` for
    /// reports; one-hot under frozen mixing.
    pub fn mixer_softmax(&self, cfg: &ModelConfig) -> Vec<Vec<Vec<f64>>> {
        if let Some(frozen) = &cfg.frozen_mixing {
            let n_rel = self.mixer[0][0].cols();
            return frozen
                .iter()
                .map(|hops| {
                    hops.iter()
                        .map(|&m| {
                            let mut row = vec![0.0; n_rel];
                            row[m] = 1.0;
                            row
                        })
                        .collect()
                })
                .collect();
        }
        self.mixer
            .iter()
            .map(|hops| {
                hops.iter()
                    .map(|w| w.row_softmax().row(0).to_vec())
                    .collect()
            })
            .collect()
    }

    /// Raw mixing weights `[path][hop][relation]`.
    pub fn mixer_raw(&self) -> Vec<Vec<Vec<f64>>> {
        self.mixer
            .iter()
            .map(|hops| hops.iter().map(|w| w.row(0).to_vec()).collect())
            .collect()
    }
}

/// Tape handles produced by one forward pass.
pub struct ForwardPass {
    /// Parameter bindings in canonical order, for gradient extraction.
    pub param_nodes: Vec<(String, NodeId)>,
    pub h_proj: NodeId,
    /// Per-path hop chain (mixtures and chained adjacencies).
    pub paths: Vec<hmae::PathHops>,
    /// Per-path hop embeddings, `[C][L+1]`.
    pub hop_embeddings: Vec<Vec<NodeId>>,
    /// Per-path per-node hop attentions, each `N x (L+1)`.
    pub hop_betas: Vec<NodeId>,
    /// Per-path fused embeddings, each `N x d`.
    pub fused: Vec<NodeId>,
    /// Per-node path attentions, `N x C`.
    pub path_betas: NodeId,
    /// Final embeddings, `N x d`.
    pub z: NodeId,
    /// Target-type rows of `z`.
    pub z_target: NodeId,
    /// Head outputs over target rows, `n_target x classes`.
    pub logits: NodeId,
}

/// Runs the full computation graph on `tape`:
/// extract → project → aggregate → hop fusion → path fusion → head.
pub fn forward(
    tape: &mut Tape,
    graph: &HetGraph,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> Result<ForwardPass> {
    cfg.validate(graph)?;
    let relations = graph.relation_matrices();
    let n_rel = relations.len();

    // Bind parameters. Under frozen mixing the mixer rows become one-hot
    // constants and receive no gradient.
    let mut param_nodes = Vec::new();
    let mut mixer_nodes: Vec<Vec<NodeId>> = Vec::new();
    for (p, hops) in params.mixer.iter().enumerate() {
        let mut per_hop = Vec::new();
        for (l, w) in hops.iter().enumerate() {
            let id = match &cfg.frozen_mixing {
                Some(frozen) => {
                    let mut one_hot = DenseMatrix::zeros(1, n_rel);
                    one_hot.set(0, frozen[p][l], 1.0);
                    tape.dense_const(one_hot)
                }
                None => {
                    let id = tape.param(w.clone());
                    param_nodes.push((format!("mixer/p{p}/h{}", l + 1), id));
                    id
                }
            };
            per_hop.push(id);
        }
        mixer_nodes.push(per_hop);
    }
    let mut proj_nodes = Vec::new();
    for (ty, m) in params.projections.iter().enumerate() {
        let id = tape.param(m.clone());
        param_nodes.push((format!("proj/t{ty}"), id));
        proj_nodes.push(id);
    }
    let mut transform_nodes = Vec::new();
    for (p, m) in params.path_transform.iter().enumerate() {
        let id = tape.param(m.clone());
        param_nodes.push((format!("agg_w/p{p}"), id));
        transform_nodes.push(id);
    }
    let mut hop_attn_w_nodes = Vec::new();
    for (p, m) in params.hop_attn_w.iter().enumerate() {
        let id = tape.param(m.clone());
        param_nodes.push((format!("hop_attn_w/p{p}"), id));
        hop_attn_w_nodes.push(id);
    }
    let mut hop_attn_v_nodes = Vec::new();
    for (p, m) in params.hop_attn_v.iter().enumerate() {
        let id = tape.param(m.clone());
        param_nodes.push((format!("hop_attn_v/p{p}"), id));
        hop_attn_v_nodes.push(id);
    }
    let path_attn_w = tape.param(params.path_attn_w.clone());
    param_nodes.push(("path_attn_w".into(), path_attn_w));
    let path_attn_v = tape.param(params.path_attn_v.clone());
    param_nodes.push(("path_attn_v".into(), path_attn_v));
    let head_w = tape.param(params.head_w.clone());
    param_nodes.push(("head_w".into(), head_w));
    let head_b = tape.param(params.head_b.clone());
    param_nodes.push(("head_b".into(), head_b));

    // HMAE: hybrid hop chains per path.
    let paths = hmae::extract(tape, &relations, &mixer_nodes, cfg.prune_threshold)?;

    // HLHIA: shared projection, per-path hop aggregation.
    let h_proj = hlhia::project(tape, graph, &proj_nodes)?;
    let mut hop_embeddings = Vec::with_capacity(cfg.paths);
    for (p, path) in paths.iter().enumerate() {
        hop_embeddings.push(hlhia::aggregate_all(
            tape,
            &path.chained,
            h_proj,
            transform_nodes[p],
        )?);
    }

    // HSAF: hop-level then path-level attention fusion.
    let mut fused = Vec::with_capacity(cfg.paths);
    let mut hop_betas = Vec::with_capacity(cfg.paths);
    for p in 0..cfg.paths {
        let (f, b) = hsaf::hop_fuse(
            tape,
            &hop_embeddings[p],
            hop_attn_w_nodes[p],
            hop_attn_v_nodes[p],
            cfg.leaky_slope,
        )?;
        fused.push(f);
        hop_betas.push(b);
    }
    let (z, path_betas) = hsaf::path_fuse(tape, &fused, path_attn_w, path_attn_v, cfg.leaky_slope)?;

    let target = graph.target_type();
    let z_target = tape.slice_rows(
        z,
        graph.types().offset(target),
        graph.types().count(target),
    )?;
    let logits = hsaf::classify(tape, z_target, head_w, head_b)?;

    Ok(ForwardPass {
        param_nodes,
        h_proj,
        paths,
        hop_embeddings,
        hop_betas,
        fused,
        path_betas,
        z,
        z_target,
        logits,
    })
}

/// Detached values pulled out of a forward pass for evaluation and reports.
#[derive(Clone, Debug)]
pub struct ForwardArtifacts {
    pub z: DenseMatrix,
    pub z_target: DenseMatrix,
    pub logits: DenseMatrix,
    /// `[C][L+1]`, full `N x d` hop embeddings.
    pub hop_embeddings: Vec<Vec<DenseMatrix>>,
    pub fused: Vec<DenseMatrix>,
    /// `[C]`, per-node hop attentions `N x (L+1)`.
    pub hop_betas: Vec<DenseMatrix>,
    /// Per-node path attentions `N x C`.
    pub path_betas: DenseMatrix,
    pub attention: AttentionRecord,
}

/// Extracts values and the node-averaged attention record (means taken over
/// target-type rows, the rows the task reads).
pub fn collect_artifacts(
    tape: &Tape,
    pass: &ForwardPass,
    graph: &HetGraph,
    params: &ModelParams,
    cfg: &ModelConfig,
) -> ForwardArtifacts {
    let target = graph.target_type();
    let t0 = graph.types().offset(target);
    let t1 = t0 + graph.types().count(target);
    let col_mean_target = |m: &DenseMatrix| -> Vec<f64> {
        let mut sums = vec![0.0; m.cols()];
        for r in t0..t1 {
            for (s, &v) in sums.iter_mut().zip(m.row(r)) {
                *s += v;
            }
        }
        let n = (t1 - t0) as f64;
        sums.iter_mut().for_each(|s| *s /= n);
        sums
    };

    let hop_betas: Vec<DenseMatrix> = pass.hop_betas.iter().map(|&b| tape.dense(b).clone()).collect();
    let path_betas = tape.dense(pass.path_betas).clone();
    let relation_weights = params.mixer_softmax(cfg);
    let path_beta_means = col_mean_target(&path_betas);

    let attention = AttentionRecord {
        paths: (0..cfg.paths)
            .map(|p| PathAttention {
                hop_betas: col_mean_target(&hop_betas[p]),
                path_beta: path_beta_means[p],
                relation_weights: relation_weights[p].clone(),
            })
            .collect(),
    };

    ForwardArtifacts {
        z: tape.dense(pass.z).clone(),
        z_target: tape.dense(pass.z_target).clone(),
        logits: tape.dense(pass.logits).clone(),
        hop_embeddings: pass
            .hop_embeddings
            .iter()
            .map(|hops| hops.iter().map(|&h| tape.dense(h).clone()).collect())
            .collect(),
        fused: pass.fused.iter().map(|&f| tape.dense(f).clone()).collect(),
        hop_betas,
        path_betas,
        attention,
    }
}

/// Worst relative disagreement between tape gradients and central finite
/// differences, per parameter tensor.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub per_tensor: Vec<(String, f64)>,
    pub max_rel_err: f64,
}

/// Compares every parameter gradient of the full model against central
/// finite differences of the cross-entropy loss over all labeled nodes.
/// `eps` is the probe size (1e-5 is appropriate for f64).
pub fn gradient_check(
    graph: &HetGraph,
    cfg: &ModelConfig,
    params: &ModelParams,
    eps: f64,
) -> Result<GradCheckReport> {
    let labels = graph.label_vector();
    let mask = graph.labeled_nodes();

    let loss_of = |p: &ModelParams| -> Result<f64> {
        let mut tape = Tape::new();
        let pass = forward(&mut tape, graph, p, cfg)?;
        let loss = tape.cross_entropy(pass.logits, &labels, &mask)?;
        Ok(tape.scalar(loss))
    };

    // Analytic gradients.
    let mut tape = Tape::new();
    let pass = forward(&mut tape, graph, params, cfg)?;
    let loss = tape.cross_entropy(pass.logits, &labels, &mask)?;
    tape.backward(loss)?;
    let analytic: Vec<(String, DenseMatrix)> = pass
        .param_nodes
        .iter()
        .map(|(name, id)| {
            let g = tape
                .grad_dense(*id)
                .cloned()
                .unwrap_or_else(|| DenseMatrix::zeros(tape.dense(*id).rows(), tape.dense(*id).cols()));
            (name.clone(), g)
        })
        .collect();

    let mut per_tensor = Vec::with_capacity(analytic.len());
    let mut max_rel: f64 = 0.0;
    for (name, grad) in &analytic {
        let mut worst: f64 = 0.0;
        for idx in 0..grad.values().len() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            {
                let mut views = plus.named_mut();
                let slot = views.iter_mut().find(|(n, _)| n == name).unwrap();
                slot.1.values_mut()[idx] += eps;
            }
            {
                let mut views = minus.named_mut();
                let slot = views.iter_mut().find(|(n, _)| n == name).unwrap();
                slot.1.values_mut()[idx] -= eps;
            }
            let fd = (loss_of(&plus)? - loss_of(&minus)?) / (2.0 * eps);
            let an = grad.values()[idx];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        max_rel = max_rel.max(worst);
        per_tensor.push((name.clone(), worst));
    }
    Ok(GradCheckReport {
        per_tensor,
        max_rel_err: max_rel,
    })
}
