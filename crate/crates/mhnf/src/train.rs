//! End-to-end training: full-batch epochs with Adam, early stopping on
//! validation macro-F1, the seeded multi-run protocol, and checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{self, Metrics};
use crate::hetgraph::{split_nodes, HetGraph, LabeledSplit};
use crate::model::{collect_artifacts, forward, ForwardArtifacts, ModelConfig, ModelParams};
use crate::ndcore::{AdamState, DenseMatrix, Tape};
use crate::report::{
    aggregate_metrics, AttentionRecord, EpochPoint, RankedPath, RatioBlock, RunRecord, RunReport,
};
use crate::{hmae, rng};

/// Top-k sequences kept in per-run learned-path reports.
const REPORT_TOP_K: usize = 10;

/// Training hyper-parameters. Defaults: lr 0.05, weight decay 0.001,
/// C = 2 hybrid paths, max length L = 2, d = 64, 200 epochs with patience
/// 30, results averaged over 10 runs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    /// Number of hybrid paths (C).
    pub paths: usize,
    /// Maximum hybrid path length (L).
    pub max_hops: usize,
    /// Embedding dimension (d).
    pub dim: usize,
    /// Attention hidden width.
    pub attn_dim: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Seeded repetitions per training ratio.
    pub runs: usize,
    pub val_ratio: f64,
    pub knn_k: usize,
    pub kmeans_restarts: usize,
    pub leaky_slope: f64,
    pub prune_threshold: f64,
    /// Compute standalone per-hop clustering NMI during evaluation.
    pub per_hop_nmi: bool,
    /// Freeze mixing weights to one-hot relation picks (ablation mode).
    pub frozen_mixing: Option<Vec<Vec<usize>>>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            weight_decay: 0.001,
            paths: 2,
            max_hops: 2,
            dim: 64,
            attn_dim: 128,
            epochs: 200,
            patience: 30,
            seed: 0,
            runs: 10,
            val_ratio: 0.1,
            knn_k: 5,
            kmeans_restarts: 10,
            leaky_slope: 0.01,
            prune_threshold: 1e-12,
            per_hop_nmi: true,
            frozen_mixing: None,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            paths: self.paths,
            max_hops: self.max_hops,
            dim: self.dim,
            attn_dim: self.attn_dim,
            leaky_slope: self.leaky_slope,
            prune_threshold: self.prune_threshold,
            frozen_mixing: self.frozen_mixing.clone(),
        }
    }

    /// Hard validation plus advisory warnings (e.g. unusual path counts).
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.paths == 0
            || self.max_hops == 0
            || self.dim == 0
            || self.attn_dim == 0
            || self.epochs == 0
            || self.runs == 0
            || self.knn_k == 0
        {
            return Err(Error::Config(
                "paths, max_hops, dim, attn_dim, epochs, runs and knn_k must be positive".into(),
            ));
        }
        if self.lr <= 0.0 && self.lr != 0.0 {
            return Err(Error::Config("learning rate must be non-negative".into()));
        }
        if self.val_ratio <= 0.0 || self.val_ratio >= 1.0 {
            return Err(Error::Config("val_ratio must be in (0, 1)".into()));
        }
        let mut warnings = Vec::new();
        if self.paths > 5 {
            warnings.push(format!(
                "paths = {} is outside the usual range 1..=5; training cost grows linearly in C",
                self.paths
            ));
        }
        if self.max_hops > 8 {
            warnings.push(format!("max_hops = {} builds very long chains", self.max_hops));
        }
        Ok(warnings)
    }
}

/// Trained parameters plus everything recorded along the way.
pub struct FitOutcome {
    pub params: ModelParams,
    pub record: RunRecord,
    pub artifacts: ForwardArtifacts,
    pub split: LabeledSplit,
}

fn loss_on(
    tape: &mut Tape,
    graph: &HetGraph,
    params: &ModelParams,
    mcfg: &ModelConfig,
    labels: &[usize],
    mask: &[usize],
) -> Result<(crate::model::ForwardPass, crate::ndcore::NodeId)> {
    let pass = forward(tape, graph, params, mcfg)?;
    let loss = tape.cross_entropy(pass.logits, labels, mask)?;
    Ok((pass, loss))
}

/// Full-batch training with early stopping; restores the parameters of the
/// best validation epoch. Deterministic for a fixed config and graph.
pub fn fit(graph: &HetGraph, split: &LabeledSplit, cfg: &TrainConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    let mcfg = cfg.model_config();
    mcfg.validate(graph)?;
    let labels = graph.label_vector();

    let mut init_rng = rng::stream(cfg.seed, "init");
    let mut params = ModelParams::init(graph, &mcfg, &mut init_rng);

    // Frozen mixer rows never reach the tape, so they are excluded from the
    // optimizer as well.
    let frozen = cfg.frozen_mixing.is_some();
    let active = |name: &str| !(frozen && name.starts_with("mixer/"));
    let shapes: Vec<(usize, usize)> = params
        .named()
        .iter()
        .filter(|(n, _)| active(n))
        .map(|(_, m)| m.shape())
        .collect();
    let mut adam = AdamState::new(cfg.lr, cfg.weight_decay, &shapes);

    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut stall = 0usize;
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut tape = Tape::new();
        let (pass, loss) = loss_on(&mut tape, graph, &params, &mcfg, &labels, &split.train)?;
        let train_loss = tape.scalar(loss);
        if !train_loss.is_finite() {
            return Err(Error::Train(format!(
                "loss diverged to {train_loss} at epoch {epoch}"
            )));
        }

        // Validation read-outs for the parameters used in this forward.
        let logits = tape.dense(pass.logits);
        let val_loss = eval::ce_from_logits(logits, &labels, &split.val);
        let preds = eval::predict_argmax(logits);
        let val_pred: Vec<usize> = split.val.iter().map(|&i| preds[i]).collect();
        let val_true: Vec<usize> = split.val.iter().map(|&i| labels[i]).collect();
        let (val_macro, _) = eval::f1_scores(&val_pred, &val_true)?;
        curve.push(EpochPoint {
            epoch,
            train_loss,
            val_loss,
            val_macro_f1: val_macro,
        });

        // Snapshot on ties so the returned parameters are the most refined
        // among equally-best validation epochs; the stall counter still
        // demands strict improvement.
        let strictly_better = best.as_ref().map_or(true, |(b, _, _)| val_macro > *b);
        if best.as_ref().map_or(true, |(b, _, _)| val_macro >= *b) {
            best = Some((val_macro, epoch, params.clone()));
        }
        if strictly_better {
            stall = 0;
        } else {
            stall += 1;
            if stall > cfg.patience {
                break;
            }
        }

        tape.backward(loss)?;
        let grads: Vec<DenseMatrix> = pass
            .param_nodes
            .iter()
            .filter(|(n, _)| active(n))
            .map(|(_, id)| {
                tape.grad_dense(*id)
                    .cloned()
                    .unwrap_or_else(|| DenseMatrix::zeros(tape.dense(*id).rows(), tape.dense(*id).cols()))
            })
            .collect();
        let mut views = params.named_mut();
        let mut active_params: Vec<&mut DenseMatrix> = views
            .iter_mut()
            .filter(|(n, _)| active(n))
            .map(|(_, m)| &mut **m)
            .collect();
        let grad_refs: Vec<&DenseMatrix> = grads.iter().collect();
        adam.step(&mut active_params, &grad_refs)?;

        // Catch runaway parameters before the next forward overflows.
        let runaway = active_params
            .iter()
            .any(|p| p.values().iter().any(|v| !v.is_finite() || v.abs() > 1e40));
        if runaway {
            return Err(Error::Train(format!(
                "parameters diverged at epoch {epoch}"
            )));
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    params = best_params;

    let (metrics, artifacts, per_hop_nmi) = evaluate(graph, &params, cfg, split)?;
    let learned_paths =
        hmae::report_learned_paths(&artifacts.attention, &graph.relation_infos(), REPORT_TOP_K);

    let record = RunRecord {
        run_seed: cfg.seed,
        metrics,
        attention: artifacts.attention.clone(),
        mixer_raw: params.mixer_raw(),
        learned_paths,
        per_hop_nmi,
        curve,
        best_epoch,
    };

    Ok(FitOutcome {
        params,
        record,
        artifacts,
        split: split.clone(),
    })
}

/// Deterministic evaluation of trained parameters on a split: head F1 on
/// the test set, KNN F1 over frozen embeddings, k-means NMI/ARI over all
/// labeled target embeddings, and optional standalone per-hop clustering
/// NMI. Also used verbatim for checkpoint verification.
pub fn evaluate(
    graph: &HetGraph,
    params: &ModelParams,
    cfg: &TrainConfig,
    split: &LabeledSplit,
) -> Result<(Metrics, ForwardArtifacts, Option<Vec<Vec<f64>>>)> {
    let mcfg = cfg.model_config();
    let labels = graph.label_vector();

    let mut tape = Tape::new();
    let pass = forward(&mut tape, graph, params, &mcfg)?;
    let artifacts = collect_artifacts(&tape, &pass, graph, params, &mcfg);
    artifacts.attention.check_normalized(1e-6)?;

    let preds = eval::predict_argmax(&artifacts.logits);
    let test_pred: Vec<usize> = split.test.iter().map(|&i| preds[i]).collect();
    let test_true: Vec<usize> = split.test.iter().map(|&i| labels[i]).collect();
    let (macro_f1, micro_f1) = eval::f1_scores(&test_pred, &test_true)?;

    let train_z = artifacts.z_target.select_rows(&split.train);
    let train_y: Vec<usize> = split.train.iter().map(|&i| labels[i]).collect();
    let test_z = artifacts.z_target.select_rows(&split.test);
    let k = cfg.knn_k.min(split.train.len());
    let knn_pred = eval::knn_protocol(&train_z, &train_y, &test_z, k)?;
    let (macro_f1_knn, micro_f1_knn) = eval::f1_scores(&knn_pred, &test_true)?;

    let labeled = graph.labeled_nodes();
    let labeled_z = artifacts.z_target.select_rows(&labeled);
    let labeled_y: Vec<usize> = labeled.iter().map(|&i| labels[i]).collect();
    let assign = eval::kmeans(&labeled_z, graph.n_classes(), cfg.seed, cfg.kmeans_restarts)?;
    let nmi = eval::nmi(&assign, &labeled_y)?;
    let ari = eval::ari(&assign, &labeled_y)?;

    let metrics = Metrics {
        macro_f1,
        micro_f1,
        macro_f1_knn,
        micro_f1_knn,
        nmi,
        ari,
    };

    let per_hop_nmi = if cfg.per_hop_nmi {
        let target_offset = graph.types().offset(graph.target_type());
        let mut by_path = Vec::with_capacity(mcfg.paths);
        for (p, hops) in artifacts.hop_embeddings.iter().enumerate() {
            let mut by_hop = Vec::with_capacity(hops.len());
            for (l, z) in hops.iter().enumerate() {
                let rows: Vec<usize> = labeled.iter().map(|&i| target_offset + i).collect();
                let hop_z = z.select_rows(&rows);
                let seed = rng::derive_seed(cfg.seed, &format!("kmeans/p{p}/h{l}"));
                let assign = eval::kmeans(&hop_z, graph.n_classes(), seed, cfg.kmeans_restarts)?;
                by_hop.push(eval::nmi(&assign, &labeled_y)?);
            }
            by_path.push(by_hop);
        }
        Some(by_path)
    } else {
        None
    };

    Ok((metrics, artifacts, per_hop_nmi))
}

/// Outcome of [`run_protocol`]: the aggregated report plus the first run's
/// trained state (the one that gets checkpointed).
pub struct ProtocolOutcome {
    pub report: RunReport,
    pub primary: FitOutcome,
    pub primary_ratio: f64,
}

/// The evaluation protocol: for every training ratio, `cfg.runs` seeded
/// runs (split, init, and clustering seeds all derived from the base seed),
/// aggregated as mean ± std. Runs execute in parallel when the `parallel`
/// feature is on; results are merged in run order either way.
pub fn run_protocol(graph: &HetGraph, cfg: &TrainConfig, ratios: &[f64]) -> Result<ProtocolOutcome> {
    if ratios.is_empty() {
        return Err(Error::Config("no training ratios given".into()));
    }
    cfg.validate()?;

    let mut blocks = Vec::with_capacity(ratios.len());
    let mut primary: Option<FitOutcome> = None;

    for (ri, &ratio) in ratios.iter().enumerate() {
        let one_run = |run: usize| -> Result<FitOutcome> {
            let run_seed = rng::derive_seed(cfg.seed, &format!("run/{ri}/{run}"));
            let mut run_cfg = cfg.clone();
            run_cfg.seed = run_seed;
            let split = split_nodes(graph, ratio, cfg.val_ratio, run_seed)?;
            fit(graph, &split, &run_cfg)
        };

        #[cfg(feature = "parallel")]
        let outcomes: Vec<FitOutcome> = (0..cfg.runs)
            .into_par_iter()
            .map(one_run)
            .collect::<Result<Vec<_>>>()?;
        #[cfg(not(feature = "parallel"))]
        let outcomes: Vec<FitOutcome> = (0..cfg.runs).map(one_run).collect::<Result<Vec<_>>>()?;

        let run_metrics: Vec<Metrics> = outcomes.iter().map(|o| o.record.metrics).collect();
        let (mean, std) = aggregate_metrics(&run_metrics);
        let mut records = Vec::with_capacity(outcomes.len());
        for (i, outcome) in outcomes.into_iter().enumerate() {
            if ri == 0 && i == 0 {
                primary = Some(FitOutcome {
                    params: outcome.params.clone(),
                    record: outcome.record.clone(),
                    artifacts: outcome.artifacts.clone(),
                    split: outcome.split.clone(),
                });
            }
            records.push(outcome.record);
        }
        blocks.push(RatioBlock {
            train_ratio: ratio,
            runs: records,
            mean,
            std,
        });
    }

    Ok(ProtocolOutcome {
        report: RunReport {
            config: cfg.clone(),
            relation_names: graph.relation_names().iter().map(|s| s.to_string()).collect(),
            ratios: blocks,
        },
        primary: primary.expect("at least one ratio and run"),
        primary_ratio: ratios[0],
    })
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// A reloadable trained model: parameters, the exact configuration and
/// seeds that produced them, and the metrics recorded at train time.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub train_ratio: f64,
    /// Derived seed of the checkpointed run; evaluation reuses it so the
    /// split and clustering streams reproduce exactly.
    pub run_seed: u64,
    pub graph_fingerprint: String,
    pub relations: Vec<crate::report::RelationInfo>,
    pub params: ModelParams,
    pub metrics: Metrics,
    pub attention: AttentionRecord,
    pub per_hop_nmi: Option<Vec<Vec<f64>>>,
    pub learned_paths: Vec<RankedPath>,
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let json = serde_json::to_string(ckpt)?;
    std::fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("corrupt checkpoint: {e}")))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
            ckpt.version
        )));
    }
    Ok(ckpt)
}

/// Recomputes the checkpointed run's metrics from scratch. The result is
/// bitwise-identical to `ckpt.metrics` for the dataset the checkpoint was
/// trained on.
pub fn eval_checkpoint(graph: &HetGraph, ckpt: &Checkpoint) -> Result<(Metrics, ForwardArtifacts)> {
    if graph.fingerprint() != ckpt.graph_fingerprint {
        return Err(Error::Checkpoint(format!(
            "dataset does not match checkpoint (checkpoint: {}, dataset: {})",
            ckpt.graph_fingerprint,
            graph.fingerprint()
        )));
    }
    let mut cfg = ckpt.config.clone();
    cfg.seed = ckpt.run_seed;
    let split = split_nodes(graph, ckpt.train_ratio, cfg.val_ratio, ckpt.run_seed)?;
    let (metrics, artifacts, _) = evaluate(graph, &ckpt.params, &cfg, &split)?;
    Ok((metrics, artifacts))
}
