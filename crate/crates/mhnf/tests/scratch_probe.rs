//! Temporary diagnostic: watch mixing-weight gradients during training.
//! Run with: cargo test -p mhnf --test scratch_probe -- --nocapture --ignored

use mhnf::hetgraph::{split_nodes, synth_planted};
use mhnf::model::{forward, ModelParams};
use mhnf::ndcore::{AdamState, DenseMatrix, Tape};
use mhnf::rng;
use mhnf::train::TrainConfig;

#[test]
#[ignore]
fn mixer_gradient_trajectory() {
    let cfg = TrainConfig {
        dim: 32,
        attn_dim: 16,
        seed: 42,
        ..Default::default()
    };
    let graph = synth_planted(7, 150, 3, 0.1);
    let sig = graph.relation_index("signal").unwrap();
    let noi = graph.relation_index("noise").unwrap();
    let split = split_nodes(&graph, 0.2, 0.1, cfg.seed).unwrap();
    let labels = graph.label_vector();
    let mcfg = cfg.model_config();

    let mut init_rng = rng::stream(cfg.seed, "init");
    let mut params = ModelParams::init(&graph, &mcfg, &mut init_rng);
    let shapes: Vec<(usize, usize)> = params.named().iter().map(|(_, m)| m.shape()).collect();
    let mut adam = AdamState::new(cfg.lr, cfg.weight_decay, &shapes);

    for epoch in 0..60 {
        let mut tape = Tape::new();
        let pass = forward(&mut tape, &graph, &params, &mcfg).unwrap();
        let loss = tape.cross_entropy(pass.logits, &labels, &split.train).unwrap();
        let train_loss = tape.scalar(loss);
        tape.backward(loss).unwrap();

        // dominant-path hop-1 mixer stats
        let (name0, id0) = pass
            .param_nodes
            .iter()
            .find(|(n, _)| n == "mixer/p0/h1")
            .unwrap();
        let g = tape.grad_dense(*id0).cloned().unwrap_or_else(|| DenseMatrix::zeros(1, 4));
        let w = &params.mixer[0][0];
        let sm = w.row_softmax();
        println!(
            "epoch {epoch:>3} loss {train_loss:>10.6} | {name0}: raw sig {:+.4} noi {:+.4} | sm sig {:.4} noi {:.4} | grad sig {:+.3e} noi {:+.3e}",
            w.get(0, sig),
            w.get(0, noi),
            sm.get(0, sig),
            sm.get(0, noi),
            g.get(0, sig),
            g.get(0, noi),
        );

        let grads: Vec<DenseMatrix> = pass
            .param_nodes
            .iter()
            .map(|(_, id)| {
                tape.grad_dense(*id)
                    .cloned()
                    .unwrap_or_else(|| DenseMatrix::zeros(tape.dense(*id).rows(), tape.dense(*id).cols()))
            })
            .collect();
        let mut views = params.named_mut();
        let mut ps: Vec<&mut DenseMatrix> = views.iter_mut().map(|(_, m)| &mut **m).collect();
        let gr: Vec<&DenseMatrix> = grads.iter().collect();
        adam.step(&mut ps, &gr).unwrap();
    }
}
