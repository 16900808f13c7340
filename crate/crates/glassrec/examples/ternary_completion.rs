//! Both ternary query modes on one trained model: given an element, rank
//! completing pairs; given a pair, rank third elements. The encoder is
//! trained once on a ternary planted-community network — the two modes only
//! differ in how candidates are enumerated.
//!
//! Run with: `cargo run --release -p glassrec --example ternary_completion`

use std::collections::BTreeSet;

use glassrec::dataset::{generate_synthetic, synthetic_embeddings, SyntheticSpec};
use glassrec::graph::QueryMode;
use glassrec::model::{Architecture, ModelConfig};
use glassrec::scoring::{ScorerConfig, ScorerKind};
use glassrec::training::{train_final, train_trial, Task, TaskData, TrainConfig};

fn main() -> glassrec::Result<()> {
    // Ternary positives: triangles drawn inside two planted communities.
    let spec = SyntheticSpec {
        nodes: 14,
        communities: 2,
        p_in: 0.7,
        p_out: 0.01,
        arity: 3,
        seed: 3,
    };
    let (symbols, records) = generate_synthetic(&spec)?;
    let table = synthetic_embeddings(&symbols, 12, 5, "eng")?;

    let mut model_cfg = ModelConfig::new(Architecture::Ngcf, table.dim());
    model_cfg.hidden_dim = 24;
    model_cfg.layers = 2;
    model_cfg.dropout = 0.1;
    let scorer_cfg = ScorerConfig::new(ScorerKind::Pd);
    let cfg = TrainConfig {
        epochs: 80,
        patience: 15,
        k: 5,
        ..TrainConfig::default()
    };

    // Cross-validate under each task to see how the two query styles score.
    for task in [Task::TernaryPairForElement, Task::TernaryThirdForPair] {
        let data = TaskData::new(task, &records, &table, None)?;
        let trial = train_trial(&data, &model_cfg, &scorer_cfg, &cfg)?;
        println!(
            "{:<10} recall@{} {:.3} +/- {:.3} | ndcg@{} {:.3} +/- {:.3}",
            task.to_string(),
            cfg.k,
            trial.recall_mean,
            trial.recall_std,
            cfg.k,
            trial.ndcg_mean,
            trial.ndcg_std
        );
    }

    // One final model serves both query modes: representations depend on the
    // ternary network, not on how candidates will be enumerated.
    let data = TaskData::new(Task::TernaryThirdForPair, &records, &table, None)?;
    let model = train_final(&data, &model_cfg, &scorer_cfg, &cfg, 40)?;
    let h = model.embed(&data)?;
    let exclude: BTreeSet<_> = data.net.positives().iter().copied().collect();

    let element = 0usize;
    let candidates =
        data.net
            .enumerate_candidates(QueryMode::PairForElement, &[element], &exclude)?;
    let ranked = model.scorer.rank_candidates(&h, &model.params, &candidates)?;
    println!(
        "\ncompleting pairs for element {} (top 5 of {}):",
        data.net.symbol_of(element),
        candidates.len()
    );
    for (entity, score) in ranked.iter().take(5) {
        println!("  {:<18} score {:.4}", data.net.entity_label(*entity), score);
    }

    let pair = [0usize, 1];
    let candidates = data
        .net
        .enumerate_candidates(QueryMode::ThirdForPair, &pair, &exclude)?;
    let ranked = model.scorer.rank_candidates(&h, &model.params, &candidates)?;
    println!(
        "\nthird elements for the pair {}-{} (top 5 of {}):",
        data.net.symbol_of(pair[0]),
        data.net.symbol_of(pair[1]),
        candidates.len()
    );
    for (entity, score) in ranked.iter().take(5) {
        println!("  {:<18} score {:.4}", data.net.entity_label(*entity), score);
    }
    Ok(())
}
