//! Command implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};

use mhnf::eval::{export_embeddings, pca2d};
use mhnf::hetgraph::{load_graph, save_graph, synth_planted};
use mhnf::hmae;
use mhnf::report::{render_attention, render_ranked_paths, RankedPath};
use mhnf::train::{
    eval_checkpoint, load_checkpoint, run_protocol, save_checkpoint, Checkpoint, ProtocolOutcome,
    CHECKPOINT_VERSION,
};
use mhnf::{HetGraph, TrainConfig};

use crate::{DataArgs, EvalArgs, InspectArgs, Overrides, SweepArgs, SynthArgs, TrainArgs};

fn resolve_graph(data: &DataArgs, seed: u64) -> Result<HetGraph> {
    match (&data.data, &data.synth) {
        (Some(dir), None) => Ok(load_graph(dir)?),
        (None, Some(name)) => {
            if name != "planted" {
                bail!("unknown synthetic generator '{name}' (available: planted)");
            }
            if data.synth_classes < 2 || data.synth_n < 3 {
                bail!("planted generator needs at least 2 classes and 3 nodes per class");
            }
            Ok(synth_planted(
                seed,
                data.synth_n,
                data.synth_classes,
                data.synth_noise,
            ))
        }
        (None, None) => bail!("exactly one data source required: pass --data DIR or --synth planted"),
        (Some(_), Some(_)) => bail!("--data and --synth are mutually exclusive"),
    }
}

fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read config file {}", path.display()))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .with_context(|| format!("{}:{}: expected key=value", path.display(), lineno + 1))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// CLI flags override config-file entries, which override defaults.
fn build_config(overrides: &Overrides) -> Result<TrainConfig> {
    let file = match &overrides.config {
        Some(path) => parse_config_file(path)?,
        None => BTreeMap::new(),
    };
    let known = [
        "lr",
        "weight_decay",
        "paths",
        "max_hops",
        "dim",
        "attn_dim",
        "epochs",
        "patience",
        "seed",
        "runs",
        "val_ratio",
        "knn_k",
        "per_hop_nmi",
    ];
    for key in file.keys() {
        if !known.contains(&key.as_str()) {
            bail!("unknown config key '{key}'");
        }
    }
    fn pick<T: std::str::FromStr>(
        cli: Option<T>,
        file: &BTreeMap<String, String>,
        key: &str,
        default: T,
    ) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = cli {
            return Ok(v);
        }
        match file.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|e| anyhow::anyhow!("config key '{key}': {e}")),
            None => Ok(default),
        }
    }

    let d = TrainConfig::default();
    let mut cfg = TrainConfig {
        lr: pick(overrides.lr, &file, "lr", d.lr)?,
        weight_decay: pick(overrides.weight_decay, &file, "weight_decay", d.weight_decay)?,
        paths: pick(overrides.paths, &file, "paths", d.paths)?,
        max_hops: pick(overrides.max_hops, &file, "max_hops", d.max_hops)?,
        dim: pick(overrides.dim, &file, "dim", d.dim)?,
        attn_dim: pick(overrides.attn_dim, &file, "attn_dim", d.attn_dim)?,
        epochs: pick(overrides.epochs, &file, "epochs", d.epochs)?,
        patience: pick(overrides.patience, &file, "patience", d.patience)?,
        seed: pick(overrides.seed, &file, "seed", d.seed)?,
        runs: pick(overrides.runs, &file, "runs", d.runs)?,
        val_ratio: pick(overrides.val_ratio, &file, "val_ratio", d.val_ratio)?,
        knn_k: pick(overrides.knn_k, &file, "knn_k", d.knn_k)?,
        ..d
    };
    if overrides.no_per_hop_nmi {
        cfg.per_hop_nmi = false;
    } else if let Some(raw) = file.get("per_hop_nmi") {
        cfg.per_hop_nmi = raw
            .parse()
            .map_err(|e| anyhow::anyhow!("config key 'per_hop_nmi': {e}"))?;
    }
    Ok(cfg)
}

fn parse_frozen_mixing(spec: &str, graph: &HetGraph, cfg: &TrainConfig) -> Result<Vec<Vec<usize>>> {
    let mut frozen = Vec::new();
    for group in spec.split(';') {
        let mut hops = Vec::new();
        for name in group.split(',') {
            let name = name.trim();
            let idx = graph
                .relation_index(name)
                .with_context(|| format!("unknown relation '{name}' in --frozen-mixing"))?;
            hops.push(idx);
        }
        frozen.push(hops);
    }
    if frozen.len() != cfg.paths || frozen.iter().any(|h| h.len() != cfg.max_hops) {
        bail!(
            "--frozen-mixing needs {} path groups of {} relations each",
            cfg.paths,
            cfg.max_hops
        );
    }
    Ok(frozen)
}

fn parse_ratios(raw: &str) -> Result<Vec<f64>> {
    let ratios: Result<Vec<f64>> = raw
        .split(',')
        .map(|s| {
            let v: f64 = s.trim().parse().with_context(|| format!("bad ratio '{s}'"))?;
            if v <= 0.0 || v >= 1.0 {
                bail!("ratio {v} outside (0, 1)");
            }
            Ok(v)
        })
        .collect();
    ratios
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, format!("{}\n", serde_json::to_string_pretty(value)?))?;
    Ok(())
}

fn checkpoint_from(outcome: &ProtocolOutcome, graph: &HetGraph, cfg: &TrainConfig) -> Checkpoint {
    let primary = &outcome.primary;
    Checkpoint {
        version: CHECKPOINT_VERSION,
        config: cfg.clone(),
        train_ratio: outcome.primary_ratio,
        run_seed: primary.record.run_seed,
        graph_fingerprint: graph.fingerprint(),
        relations: graph.relation_infos(),
        params: primary.params.clone(),
        metrics: primary.record.metrics,
        attention: primary.record.attention.clone(),
        per_hop_nmi: primary.record.per_hop_nmi.clone(),
        learned_paths: primary.record.learned_paths.clone(),
    }
}

fn print_metric_summary(report: &mhnf::RunReport) {
    for block in &report.ratios {
        println!("train ratio {:.2} ({} runs):", block.train_ratio, block.runs.len());
        for ((name, mean), (_, std)) in block.mean.fields().iter().zip(block.std.fields().iter()) {
            println!("  {name:<14} {mean:.4} ± {std:.4}");
        }
    }
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = build_config(&args.overrides)?;
    let ratios = parse_ratios(&args.ratios)?;
    let graph = resolve_graph(&args.data, cfg.seed)?;
    if let Some(spec) = &args.overrides.frozen_mixing {
        cfg.frozen_mixing = Some(parse_frozen_mixing(spec, &graph, &cfg)?);
    }
    for warning in cfg.validate()? {
        eprintln!("warning: {warning}");
    }

    fs::create_dir_all(&args.out)?;
    let outcome = run_protocol(&graph, &cfg, &ratios)?;

    // Checkpoint of the first run at the first ratio.
    let ckpt = checkpoint_from(&outcome, &graph, &cfg);
    save_checkpoint(&args.out.join("checkpoint.json"), &ckpt)?;

    // Reports.
    write_json(
        &args.out.join("report.json"),
        &serde_json::to_value(&outcome.report)?,
    )?;
    write_json(&args.out.join("metrics.json"), &outcome.report.metrics_json())?;
    write_json(
        &args.out.join("attention.json"),
        &outcome.primary.record.attention.to_json(),
    )?;
    write_json(
        &args.out.join("learned_paths.json"),
        &serde_json::to_value(&outcome.primary.record.learned_paths)?,
    )?;
    fs::write(
        args.out.join("learned_paths.txt"),
        render_ranked_paths(&outcome.primary.record.learned_paths),
    )?;

    // Embeddings of labeled target nodes: raw and 2-D projection.
    let labeled = graph.labeled_nodes();
    let labels: Vec<usize> = {
        let lv = graph.label_vector();
        labeled.iter().map(|&i| lv[i]).collect()
    };
    let z = outcome.primary.artifacts.z_target.select_rows(&labeled);
    export_embeddings(&args.out.join("embeddings.tsv"), &z, &labeled, &labels)?;
    let z2 = pca2d(&z)?;
    export_embeddings(&args.out.join("embeddings_2d.tsv"), &z2, &labeled, &labels)?;

    print_metric_summary(&outcome.report);
    println!("artifacts written to {}", args.out.display());
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    // Synthetic datasets regenerate from the checkpoint's seed: evaluation
    // takes no randomness of its own.
    let graph = resolve_graph(&args.data, ckpt.config.seed)?;
    let (metrics, _) = eval_checkpoint(&graph, &ckpt)?;

    println!("recomputed metrics:");
    for (name, value) in metrics.fields() {
        println!("  {name:<14} {value:.6}");
    }
    if metrics != ckpt.metrics {
        bail!(
            "metrics do not reproduce the checkpoint (stored: {:?}, recomputed: {:?})",
            ckpt.metrics,
            metrics
        );
    }
    println!("metrics match the checkpoint bitwise");

    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        write_json(&out.join("metrics_eval.json"), &serde_json::to_value(metrics)?)?;
    }
    Ok(())
}

pub fn inspect(args: InspectArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;

    // Global ranking across paths, then per-path tables.
    let names: Vec<String> = ckpt.relations.iter().map(|r| r.name.clone()).collect();
    let global = hmae::report_learned_paths(&ckpt.attention, &ckpt.relations, args.top_k);
    println!("top learned hybrid paths (all paths):");
    print!("{}", render_ranked_paths(&global));

    for (p, path) in ckpt.attention.paths.iter().enumerate() {
        let single = mhnf::AttentionRecord {
            paths: vec![mhnf::report::PathAttention {
                hop_betas: path.hop_betas.clone(),
                path_beta: 1.0,
                relation_weights: path.relation_weights.clone(),
            }],
        };
        let mut rows: Vec<RankedPath> =
            hmae::report_learned_paths(&single, &ckpt.relations, args.top_k);
        for row in &mut rows {
            row.path_id = p;
            row.path_beta = path.path_beta;
        }
        println!("\npath {p} (top {}):", args.top_k);
        print!("{}", render_ranked_paths(&rows));
    }

    println!("\nattention weights:");
    print!("{}", render_attention(&ckpt.attention, &names));

    if args.per_hop_nmi {
        match &ckpt.per_hop_nmi {
            Some(by_path) => {
                println!("\nstandalone per-hop clustering NMI:");
                for (p, hops) in by_path.iter().enumerate() {
                    let cells: Vec<String> = hops
                        .iter()
                        .enumerate()
                        .map(|(l, v)| {
                            let label = if l == 0 { "self".into() } else { format!("hop{l}") };
                            format!("{label}={v:.4}")
                        })
                        .collect();
                    println!("  path {p}: {}", cells.join("  "));
                }
            }
            None => bail!(
                "checkpoint holds no per-hop analysis; re-train without --no-per-hop-nmi"
            ),
        }
    }
    Ok(())
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let base = build_config(&args.overrides)?;
    let graph = resolve_graph(&args.data, base.seed)?;

    let parse_grid = |raw: &Option<String>, what: &str| -> Result<Option<Vec<usize>>> {
        match raw {
            None => Ok(None),
            Some(s) => {
                let vals: Result<Vec<usize>> = s
                    .split(',')
                    .map(|v| {
                        let n: usize = v.trim().parse().with_context(|| format!("bad {what} '{v}'"))?;
                        if n == 0 {
                            bail!("{what} must be positive");
                        }
                        Ok(n)
                    })
                    .collect();
                Ok(Some(vals?))
            }
        }
    };
    let dims = parse_grid(&args.grid_dim, "dimension")?;
    let hops = parse_grid(&args.grid_hops, "path length")?;
    if dims.is_none() && hops.is_none() {
        bail!("empty grid: pass --grid-dim and/or --grid-hops");
    }
    let dims = dims.unwrap_or_else(|| vec![base.dim]);
    let hops = hops.unwrap_or_else(|| vec![base.max_hops]);

    fs::create_dir_all(&args.out)?;
    let mut tsv = String::from(
        "dim\tmax_hops\tmacro_f1_mean\tmacro_f1_std\tmicro_f1_mean\tmicro_f1_std\t\
         macro_f1_knn_mean\tmacro_f1_knn_std\tmicro_f1_knn_mean\tmicro_f1_knn_std\t\
         nmi_mean\tnmi_std\tari_mean\tari_std\n",
    );
    for &dim in &dims {
        for &max_hops in &hops {
            let mut cfg = base.clone();
            cfg.dim = dim;
            cfg.max_hops = max_hops;
            let outcome = run_protocol(&graph, &cfg, &[args.ratio])?;
            let block = &outcome.report.ratios[0];
            let mut row = format!("{dim}\t{max_hops}");
            for ((_, mean), (_, std)) in block.mean.fields().iter().zip(block.std.fields().iter()) {
                row.push_str(&format!("\t{mean}\t{std}"));
            }
            tsv.push_str(&row);
            tsv.push('\n');
            println!(
                "d={dim} L={max_hops}: macro-F1 {:.4} ± {:.4}",
                block.mean.macro_f1, block.std.macro_f1
            );
        }
    }
    let path = args.out.join("sweep.tsv");
    fs::write(&path, tsv)?;
    println!("curve data written to {}", path.display());
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<()> {
    if args.synth_classes < 2 || args.synth_n < 3 {
        bail!("planted generator needs at least 2 classes and 3 nodes per class");
    }
    let graph = synth_planted(args.seed, args.synth_n, args.synth_classes, args.synth_noise);
    save_graph(&args.out, &graph)?;
    println!(
        "planted dataset written to {} ({} nodes, {} relations, {} classes)",
        args.out.display(),
        graph.n_total(),
        graph.relations().len(),
        graph.n_classes()
    );
    Ok(())
}
