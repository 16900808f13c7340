//! Transfer a binary-trained encoder to ternary queries: train on two-element
//! systems, then rank third-element completions against known three-element
//! systems. Ternary positives whose elements are not all in the binary
//! network stay in the denominators (two in-network members) or are skipped
//! with a count (fewer than two).
//!
//! Run with: `cargo run --release -p glassrec --example binary_to_ternary`

use glassrec::dataset::{
    generate_synthetic, synthetic_embeddings, AlloyRecord, Label, SyntheticSpec,
};
use glassrec::graph::build_network;
use glassrec::model::{Architecture, ModelConfig};
use glassrec::scoring::{ScorerConfig, ScorerKind};
use glassrec::training::{train_trial, Task, TaskData, TrainConfig};

fn main() -> glassrec::Result<()> {
    // The binary training network.
    let spec = SyntheticSpec {
        nodes: 16,
        communities: 2,
        p_in: 0.9,
        p_out: 0.05,
        arity: 2,
        seed: 1,
    };
    let (mut symbols, records) = generate_synthetic(&spec)?;
    // Two extra elements that exist in the embedding table but never appear
    // in a binary positive — they exercise the partial/skip bookkeeping.
    symbols.push("X90".to_string());
    symbols.push("X91".to_string());
    let table = synthetic_embeddings(&symbols, 12, 9, "eng")?;

    // Ternary evaluation set: exactly the triangles of the binary graph,
    // plus positives reaching outside the network.
    let binary_net = build_network(&records, &table)?;
    let mut ternary: Vec<AlloyRecord> = binary_net
        .triangles()
        .iter()
        .map(|t| {
            let names = t
                .nodes()
                .iter()
                .map(|&n| binary_net.symbol_of(n).to_string())
                .collect();
            AlloyRecord::new(names, Label::Positive)
        })
        .collect::<glassrec::Result<_>>()?;
    let in_net = binary_net.symbol_of(0).to_string();
    let in_net2 = binary_net.symbol_of(1).to_string();
    ternary.push(AlloyRecord::new(
        vec![in_net.clone(), in_net2, "X90".into()],
        Label::Positive,
    )?); // two members in-network: unreachable, stays in denominators
    ternary.push(AlloyRecord::new(
        vec![in_net, "X90".into(), "X91".into()],
        Label::Positive,
    )?); // one member in-network: skipped, only counted

    let data = TaskData::new(Task::BinaryToTernary, &records, &table, Some(&ternary))?;
    let eval = data.ternary_eval.as_ref().expect("b2t builds a transfer set");
    println!(
        "binary network: {} nodes, {} positives; transfer set: {} rankable triples, {} partially covered pairs, {} skipped",
        data.net.len(),
        data.net.positives().len(),
        eval.triples.len(),
        eval.partial_by_pair.len(),
        eval.skipped
    );

    let mut model_cfg = ModelConfig::new(Architecture::Gcn, table.dim());
    model_cfg.hidden_dim = 24;
    model_cfg.layers = 2;
    model_cfg.dropout = 0.1;
    let scorer_cfg = ScorerConfig::new(ScorerKind::Pd);
    let cfg = TrainConfig {
        epochs: 100,
        patience: 20,
        ..TrainConfig::default()
    };

    // Folds early-stop on held-out *binary* recall, but the reported metrics
    // come from ranking ternary triples.
    let trial = train_trial(&data, &model_cfg, &scorer_cfg, &cfg)?;
    println!("\nfold  ternary recall@{0}  ndcg@{0}  skipped positives", cfg.k);
    for fold in &trial.folds {
        println!(
            "{:>4}  {:>16.3}  {:>7.3}  {:>17}",
            fold.fold, fold.recall, fold.ndcg, fold.skipped_positives
        );
    }
    let baseline = trial.folds.iter().map(|f| f.global_baseline).sum::<f64>()
        / trial.folds.len() as f64;
    println!(
        "\nmean ternary recall@{}: {:.3} +/- {:.3}  (random baseline over all triples {:.3})",
        cfg.k, trial.recall_mean, trial.recall_std, baseline
    );
    Ok(())
}
