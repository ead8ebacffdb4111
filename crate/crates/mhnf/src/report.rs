//! Run artifacts: attention records, ranked-path reports, and the
//! aggregated multi-run report.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Metrics;

/// Learned attention read-outs for one hybrid path: node-averaged hop
/// attentions (index 0 is the self term), the node-averaged path attention,
/// and the softmax-normalized per-hop relation weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathAttention {
    pub hop_betas: Vec<f64>,
    pub path_beta: f64,
    pub relation_weights: Vec<Vec<f64>>,
}

/// Attention artifacts for every hybrid path of a trained model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub paths: Vec<PathAttention>,
}

impl AttentionRecord {
    /// Verifies normalization: hop attentions sum to 1 per path, path
    /// attentions sum to 1, relation weights sum to 1 per hop.
    pub fn check_normalized(&self, tol: f64) -> Result<()> {
        let mut path_sum = 0.0;
        for (p, path) in self.paths.iter().enumerate() {
            let hops: f64 = path.hop_betas.iter().sum();
            if (hops - 1.0).abs() > tol {
                return Err(Error::InvalidArgument {
                    op: "attention_record",
                    msg: format!("path {p}: hop attentions sum to {hops}"),
                });
            }
            path_sum += path.path_beta;
            for (l, w) in path.relation_weights.iter().enumerate() {
                let s: f64 = w.iter().sum();
                if (s - 1.0).abs() > tol {
                    return Err(Error::InvalidArgument {
                        op: "attention_record",
                        msg: format!("path {p} hop {}: relation weights sum to {s}", l + 1),
                    });
                }
            }
        }
        if (path_sum - 1.0).abs() > tol {
            return Err(Error::InvalidArgument {
                op: "attention_record",
                msg: format!("path attentions sum to {path_sum}"),
            });
        }
        Ok(())
    }

    /// JSON object keyed by path id:
    /// `{"0": {"hop_betas": [...], "path_beta": x, "relation_weights": [...]}}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = BTreeMap::new();
        for (p, path) in self.paths.iter().enumerate() {
            map.insert(p.to_string(), serde_json::json!(path));
        }
        serde_json::json!(map)
    }
}

/// Name and endpoint types of one relation, as needed by the learned-path
/// report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationInfo {
    pub name: String,
    pub src: String,
    pub dst: String,
}

/// One discrete relation sequence inside a hybrid path, with its report
/// score (mixer product x hop mass x path attention; zero when the
/// sequence is not a typed chain and therefore composes to nothing).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankedPath {
    pub path_id: usize,
    pub relations: Vec<String>,
    pub score: f64,
    pub mixer_score: f64,
    pub hop_mass: f64,
    pub path_beta: f64,
    /// Whether consecutive relations chain by type (dst of one = src of
    /// the next), i.e. the sequence is a realizable metapath.
    pub realizable: bool,
}

/// Loss/metric trace for one epoch.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochPoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_macro_f1: f64,
}

/// Everything a single seeded run produced.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_seed: u64,
    pub metrics: Metrics,
    pub attention: AttentionRecord,
    /// Raw (unnormalized) mixing weights, `[path][hop][relation]`.
    pub mixer_raw: Vec<Vec<Vec<f64>>>,
    pub learned_paths: Vec<RankedPath>,
    /// Standalone clustering NMI per path per hop (hop 0 first).
    pub per_hop_nmi: Option<Vec<Vec<f64>>>,
    pub curve: Vec<EpochPoint>,
    pub best_epoch: usize,
}

/// All runs at one training ratio, with mean/std aggregates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RatioBlock {
    pub train_ratio: f64,
    pub runs: Vec<RunRecord>,
    pub mean: Metrics,
    pub std: Metrics,
}

/// The full protocol output across training ratios.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub config: crate::train::TrainConfig,
    pub relation_names: Vec<String>,
    pub ratios: Vec<RatioBlock>,
}

impl RunReport {
    /// The spec'd metrics JSON: `{ratio: {metric: {mean, std}}}` with stable
    /// key order.
    pub fn metrics_json(&self) -> serde_json::Value {
        let mut by_ratio = BTreeMap::new();
        for block in &self.ratios {
            let mut metrics = BTreeMap::new();
            for ((name, mean), (_, std)) in block.mean.fields().iter().zip(block.std.fields().iter()) {
                metrics.insert(
                    name.to_string(),
                    serde_json::json!({ "mean": mean, "std": std }),
                );
            }
            by_ratio.insert(format!("{}", block.train_ratio), serde_json::json!(metrics));
        }
        serde_json::json!(by_ratio)
    }
}

/// Mean and population standard deviation over runs, field by field.
pub fn aggregate_metrics(runs: &[Metrics]) -> (Metrics, Metrics) {
    let n = runs.len().max(1) as f64;
    let mut mean = Metrics::default();
    let mut std = Metrics::default();
    let get = |m: &Metrics, i: usize| m.fields()[i].1;
    let set = |m: &mut Metrics, i: usize, v: f64| match i {
        0 => m.macro_f1 = v,
        1 => m.micro_f1 = v,
        2 => m.macro_f1_knn = v,
        3 => m.micro_f1_knn = v,
        4 => m.nmi = v,
        _ => m.ari = v,
    };
    for i in 0..6 {
        let mu = runs.iter().map(|m| get(m, i)).sum::<f64>() / n;
        let var = runs.iter().map(|m| (get(m, i) - mu).powi(2)).sum::<f64>() / n;
        set(&mut mean, i, mu);
        set(&mut std, i, var.sqrt());
    }
    (mean, std)
}

/// Text table of ranked sequences, one row per entry.
pub fn render_ranked_paths(paths: &[RankedPath]) -> String {
    let mut out = String::new();
    out.push_str("rank  path  score      mixer      hop_mass  path_beta  relations\n");
    for (i, p) in paths.iter().enumerate() {
        out.push_str(&format!(
            "{:<5} {:<5} {:<10.6} {:<10.6} {:<9.4} {:<10.4} {}\n",
            i + 1,
            p.path_id,
            p.score,
            p.mixer_score,
            p.hop_mass,
            p.path_beta,
            p.relations.join(" -> ")
        ));
    }
    out
}

/// Text rendering of hop/path attentions with bar charts.
pub fn render_attention(record: &AttentionRecord, relation_names: &[String]) -> String {
    let bar = |v: f64| {
        let filled = (v.clamp(0.0, 1.0) * 30.0).round() as usize;
        format!("{}{}", "#".repeat(filled), ".".repeat(30 - filled))
    };
    let mut out = String::new();
    for (p, path) in record.paths.iter().enumerate() {
        out.push_str(&format!("path {p}  (attention {:.4})\n", path.path_beta));
        out.push_str(&format!("  path |{}|\n", bar(path.path_beta)));
        for (l, beta) in path.hop_betas.iter().enumerate() {
            let label = if l == 0 { "self".to_string() } else { format!("hop{l}") };
            out.push_str(&format!("  {label:<5}|{}| {beta:.4}\n", bar(*beta)));
        }
        for (l, weights) in path.relation_weights.iter().enumerate() {
            let pretty: Vec<String> = weights
                .iter()
                .enumerate()
                .map(|(m, w)| format!("{}={:.3}", relation_names.get(m).map_or("?", |s| s.as_str()), w))
                .collect();
            out.push_str(&format!("  hop{} weights: {}\n", l + 1, pretty.join(" ")));
        }
    }
    out
}
