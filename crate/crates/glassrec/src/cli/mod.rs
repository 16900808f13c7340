//! Command-line front end: one thin binary driving the library.
//!
//! Subcommands: `train`, `recommend`, `evaluate`, `gridsearch`, `cluster`,
//! `pca`, and `synth`. Every run writes UTF-8 text artifacts (CSV, Newick,
//! JSON manifests) under `--out`; manifests record input digests so reruns
//! can be verified byte for byte. Exit codes: 0 success, 1 internal error,
//! 2 input error, 3 query error.
//!
//! All hyperparameters are plain flags with an optional `--config` TOML file
//! carrying the same keys; flags win over the file, the file wins over the
//! defaults.

pub mod artifacts;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use crate::analysis::{cosine_distance_matrix, pca_project, ward_cluster};
use crate::dataset::{
    generate_synthetic, load_alloys, load_embeddings, save_alloys, save_embeddings,
    synthetic_embeddings, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::graph::{Entity, MaterialNetwork, QueryMode};
use crate::model::{Architecture, GraphOps, ModelConfig};
use crate::scoring::{ScorerConfig, ScorerKind};
use crate::tensor::Tensor;
use crate::training::{
    aggregate_fold_means, aggregate_pooled, grid_search, run_trials, train_final, train_trial,
    Task, TaskData, TrainConfig, TrainGrid,
};

use artifacts::{
    exclusion_set, load_checkpoint, pair_matrix_csv, prepare_output_dir, ranked_csv,
    report_csv_header, save_checkpoint, sha256_of, triple_matrix_csv, warn_if_k_saturates,
    write_json, write_text, LoadedCheckpoint,
};

#[derive(Parser)]
#[command(
    name = "glassrec",
    version,
    about = "Graph-learning recommender for glass-forming alloy systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cross-validate on one dataset, then train and checkpoint a final model.
    Train(TrainArgs),
    /// Rank candidate systems for queries against a trained checkpoint.
    Recommend(RecommendArgs),
    /// Multi-trial, multi-language evaluation with aggregate tables.
    Evaluate(EvaluateArgs),
    /// Exhaustive hyperparameter grid search.
    Gridsearch(GridsearchArgs),
    /// Ward-linkage dendrogram over element embeddings.
    Cluster(ClusterArgs),
    /// Principal-component projection of element embeddings.
    Pca(PcaArgs),
    /// Generate a planted-community synthetic dataset.
    Synth(SynthArgs),
}

/// Hyperparameters shared by the training-flavoured subcommands. Every flag
/// is optional; unset values fall back to `--config`, then to the defaults.
#[derive(Args, Debug, Clone, Default)]
struct HyperArgs {
    /// Recommendation task: b2b, t2t-pair, t2t-third, or b2t.
    #[arg(long)]
    task: Option<String>,
    /// Encoder architecture: gcn, ngcf, or transgnn.
    #[arg(long)]
    architecture: Option<String>,
    /// Scoring head: pd or hdm.
    #[arg(long)]
    scorer: Option<String>,
    /// Hidden width of the encoder layers.
    #[arg(long)]
    hidden: Option<usize>,
    /// Attention heads per TransGNN layer.
    #[arg(long)]
    heads: Option<usize>,
    /// Number of stacked encoder layers (1-3).
    #[arg(long)]
    layers: Option<usize>,
    /// Dropout rate in [0, 1).
    #[arg(long)]
    dropout: Option<f64>,
    /// Hidden width of the HDM scoring head.
    #[arg(long)]
    scorer_hidden: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// L2 regularisation coefficient.
    #[arg(long)]
    lambda: Option<f64>,
    /// Maximum training epochs per fold.
    #[arg(long)]
    epochs: Option<usize>,
    /// Early-stopping patience, in epochs without improvement.
    #[arg(long)]
    patience: Option<usize>,
    /// Cross-validation fold count.
    #[arg(long)]
    folds: Option<usize>,
    /// Ranking cutoff K for recall and NDCG.
    #[arg(long)]
    k: Option<usize>,
    /// Master random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// TOML file with the same keys as the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// `--config` file schema: every hyperparameter flag, all optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    task: Option<String>,
    architecture: Option<String>,
    scorer: Option<String>,
    hidden: Option<usize>,
    heads: Option<usize>,
    layers: Option<usize>,
    dropout: Option<f64>,
    scorer_hidden: Option<usize>,
    learning_rate: Option<f64>,
    lambda: Option<f64>,
    epochs: Option<usize>,
    patience: Option<usize>,
    folds: Option<usize>,
    k: Option<usize>,
    seed: Option<u64>,
}

/// Fully resolved run settings.
#[derive(Debug, Clone)]
struct Settings {
    task: Task,
    architecture: Architecture,
    hidden: usize,
    heads: usize,
    layers: usize,
    dropout: f64,
    scorer: ScorerKind,
    scorer_hidden: usize,
    train: TrainConfig,
}

impl Settings {
    fn resolve(args: &HyperArgs) -> Result<Settings> {
        let file: FileConfig = match &args.config {
            None => FileConfig::default(),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::io(path.display().to_string(), e))?;
                toml::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
        };
        let defaults = TrainConfig::default();
        let pick = |flag: &Option<String>, file: Option<String>, fallback: &str| -> String {
            flag.clone().or(file).unwrap_or_else(|| fallback.to_string())
        };
        let settings = Settings {
            task: pick(&args.task, file.task, "b2b").parse()?,
            architecture: pick(&args.architecture, file.architecture, "gcn").parse()?,
            hidden: args.hidden.or(file.hidden).unwrap_or(64),
            heads: args.heads.or(file.heads).unwrap_or(4),
            layers: args.layers.or(file.layers).unwrap_or(2),
            dropout: args.dropout.or(file.dropout).unwrap_or(0.1),
            scorer: pick(&args.scorer, file.scorer, "pd").parse()?,
            scorer_hidden: args.scorer_hidden.or(file.scorer_hidden).unwrap_or(32),
            train: TrainConfig {
                learning_rate: args
                    .learning_rate
                    .or(file.learning_rate)
                    .unwrap_or(defaults.learning_rate),
                lambda_l2: args.lambda.or(file.lambda).unwrap_or(defaults.lambda_l2),
                epochs: args.epochs.or(file.epochs).unwrap_or(defaults.epochs),
                patience: args.patience.or(file.patience).unwrap_or(defaults.patience),
                folds: args.folds.or(file.folds).unwrap_or(defaults.folds),
                k: args.k.or(file.k).unwrap_or(defaults.k),
                seed: args.seed.or(file.seed).unwrap_or(defaults.seed),
            },
        };
        settings.train.validate()?;
        Ok(settings)
    }

    fn model_config(&self, input_dim: usize) -> ModelConfig {
        let mut cfg = ModelConfig::new(self.architecture, input_dim);
        cfg.hidden_dim = self.hidden;
        cfg.num_heads = self.heads;
        cfg.layers = self.layers;
        cfg.dropout = self.dropout;
        cfg
    }

    fn scorer_config(&self) -> ScorerConfig {
        let mut cfg = ScorerConfig::new(self.scorer);
        cfg.hidden = self.scorer_hidden;
        cfg
    }

    /// The protocol block every manifest records.
    fn manifest_json(&self) -> serde_json::Value {
        json!({
            "task": self.task.to_string(),
            "architecture": self.architecture.to_string(),
            "scorer": self.scorer.to_string(),
            "hidden": self.hidden,
            "heads": self.heads,
            "layers": self.layers,
            "dropout": self.dropout,
            "scorer_hidden": self.scorer_hidden,
            "learning_rate": self.train.learning_rate,
            "lambda": self.train.lambda_l2,
            "epochs": self.train.epochs,
            "patience": self.train.patience,
            "folds": self.train.folds,
            "k": self.train.k,
            "seed": self.train.seed,
        })
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Element embedding table (TSV, one element per row).
    #[arg(long)]
    embeddings: PathBuf,
    /// Labelled alloy systems (CSV, header `elements,label`).
    #[arg(long)]
    alloys: PathBuf,
    /// Ternary systems for b2t transfer evaluation.
    #[arg(long)]
    eval_alloys: Option<PathBuf>,
    /// Expected embedding width; inferred from the file when omitted.
    #[arg(long)]
    dim: Option<usize>,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Output directory for the checkpoint, report, and manifest.
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Also export the trained network's positive systems as CSV.
    #[arg(long)]
    export_network: bool,
}

#[derive(Args)]
struct RecommendArgs {
    /// Trained model checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Query: one element (`Zr`) or a pair (`Ag-Mg`); repeatable.
    #[arg(long = "query")]
    queries: Vec<String>,
    /// Ranking cutoff; defaults to the checkpoint's K.
    #[arg(long)]
    k: Option<usize>,
    /// Output directory; rankings go to standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Export the full min-max-normalised score matrix over all entities.
    #[arg(long)]
    full_matrix: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Embedding tables, one per language; repeatable.
    #[arg(long = "embeddings", required = true)]
    embeddings: Vec<PathBuf>,
    /// Labelled alloy systems (CSV).
    #[arg(long)]
    alloys: PathBuf,
    /// Ternary systems for b2t transfer evaluation.
    #[arg(long)]
    eval_alloys: Option<PathBuf>,
    /// Expected embedding width; inferred when omitted.
    #[arg(long)]
    dim: Option<usize>,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Number of trials; trial t uses seed t.
    #[arg(long, default_value_t = 30)]
    trials: usize,
    /// Comma-separated explicit trial seeds (overrides --trials).
    #[arg(long)]
    seeds: Option<String>,
    /// Worker threads for parallel trials.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct GridsearchArgs {
    /// Element embedding table (TSV).
    #[arg(long)]
    embeddings: PathBuf,
    /// Labelled alloy systems (CSV).
    #[arg(long)]
    alloys: PathBuf,
    /// Ternary systems for b2t transfer evaluation.
    #[arg(long)]
    eval_alloys: Option<PathBuf>,
    /// Expected embedding width; inferred when omitted.
    #[arg(long)]
    dim: Option<usize>,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Comma-separated L2 coefficients (default 0.01,0.001,0.0001).
    #[arg(long)]
    lambdas: Option<String>,
    /// Comma-separated learning rates (default 1e-6 through 1e-1).
    #[arg(long)]
    learning_rates: Option<String>,
    /// Comma-separated dropout rates (default 0.0 through 0.8).
    #[arg(long)]
    dropouts: Option<String>,
    /// Comma-separated layer counts (default 1,2,3).
    #[arg(long)]
    layer_counts: Option<String>,
    /// Worker threads for parallel grid points.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ClusterArgs {
    /// Element embedding table (TSV).
    #[arg(long)]
    embeddings: PathBuf,
    /// Expected embedding width; inferred when omitted.
    #[arg(long)]
    dim: Option<usize>,
    /// Cluster the embedding dimensions instead of the elements.
    #[arg(long)]
    features: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct PcaArgs {
    /// Element embedding table (TSV).
    #[arg(long)]
    embeddings: PathBuf,
    /// Expected embedding width; inferred when omitted.
    #[arg(long)]
    dim: Option<usize>,
    /// Number of principal components to keep.
    #[arg(long, default_value_t = 2)]
    components: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of element nodes.
    #[arg(long, default_value_t = 30)]
    nodes: usize,
    /// Number of planted communities.
    #[arg(long, default_value_t = 2)]
    communities: usize,
    /// Probability of an intra-community positive.
    #[arg(long, default_value_t = 0.9)]
    p_in: f64,
    /// Probability of an inter-community positive.
    #[arg(long, default_value_t = 0.05)]
    p_out: f64,
    /// System arity: 2 for binary, 3 for ternary.
    #[arg(long, default_value_t = 2)]
    arity: usize,
    /// Embedding width of the synthetic table.
    #[arg(long, default_value_t = 100)]
    dim: usize,
    /// Random seed for both the graph and the embeddings.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Language tag baked into the embedding file name.
    #[arg(long, default_value = "eng")]
    language: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

/// Binary entry point. Maps module errors onto the exit-code contract and
/// prints them to standard error.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version also arrive here; clap reports exit 0 for
            // those and 2 for genuine parse errors.
            let _ = e.print();
            return ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(2));
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => cmd_train(args),
        Command::Recommend(args) => cmd_recommend(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Gridsearch(args) => cmd_gridsearch(args),
        Command::Cluster(args) => cmd_cluster(args),
        Command::Pca(args) => cmd_pca(args),
        Command::Synth(args) => cmd_synth(args),
    }
}

/// Comma-separated list of values, e.g. `--seeds 0,1,2`.
fn parse_list<T: FromStr>(spec: &str, flag: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        out.push(
            part.parse::<T>()
                .map_err(|_| Error::Config(format!("{flag}: cannot parse '{part}'")))?,
        );
    }
    if out.is_empty() {
        return Err(Error::Config(format!("{flag}: empty list")));
    }
    Ok(out)
}

/// Parse a `-`-joined query string into network nodes, checking the arity
/// the task expects.
fn parse_query(net: &MaterialNetwork, task: Task, raw: &str) -> Result<Vec<usize>> {
    let parts: Vec<&str> = raw
        .split('-')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect();
    let want = match task.query_mode() {
        QueryMode::ThirdForPair => 2,
        _ => 1,
    };
    if parts.len() != want {
        return Err(Error::Query(format!(
            "task {task} expects {} per query, got '{raw}'",
            if want == 1 {
                "a single element"
            } else {
                "an element pair like Ag-Mg"
            }
        )));
    }
    parts
        .iter()
        .map(|p| {
            net.node_of(p).ok_or_else(|| {
                Error::Query(format!("element {p} is not part of the trained network"))
            })
        })
        .collect()
}

fn sanitize(raw: &str) -> String {
    raw.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Path + SHA-256 manifest entry for one input file.
fn input_entry(path: &Path) -> Result<serde_json::Value> {
    Ok(json!({
        "path": path.display().to_string(),
        "sha256": sha256_of(path)?,
    }))
}

/// Load embeddings, alloys, and the optional transfer set into a task.
fn load_task_data(
    task: Task,
    embeddings: &Path,
    dim: Option<usize>,
    alloys: &Path,
    eval_alloys: Option<&Path>,
) -> Result<TaskData> {
    let table = load_embeddings(embeddings, dim)?;
    let records = load_alloys(alloys, &table)?;
    let transfer = match eval_alloys {
        None => None,
        Some(path) => Some(load_alloys(path, &table)?),
    };
    TaskData::new(task, &records, &table, transfer.as_deref())
}

fn fold_report_rows(
    report: &mut String,
    settings: &Settings,
    language: &str,
    seed: u64,
    folds: &[crate::training::FoldSummary],
) {
    for fold in folds {
        report.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            settings.task,
            settings.architecture,
            settings.scorer,
            language,
            seed,
            fold.fold,
            fold.recall,
            fold.ndcg
        ));
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let settings = Settings::resolve(&args.hyper)?;
    prepare_output_dir(&args.out, args.force)?;
    let data = load_task_data(
        settings.task,
        &args.embeddings,
        args.dim,
        &args.alloys,
        args.eval_alloys.as_deref(),
    )?;
    warn_if_k_saturates(settings.task, data.net.len(), settings.train.k);
    if data.dropped_negatives > 0 {
        eprintln!(
            "warning: dropped {} labelled negatives with out-of-network elements",
            data.dropped_negatives
        );
    }
    let model_cfg = settings.model_config(data.features.last_dim());
    let scorer_cfg = settings.scorer_config();
    let trial = train_trial(&data, &model_cfg, &scorer_cfg, &settings.train)?;

    // The deployable model trains on every positive, for the rounded mean
    // of the folds' best epochs.
    let mean_best = trial.folds.iter().map(|f| f.best_epoch as f64).sum::<f64>()
        / trial.folds.len() as f64;
    let final_epochs = mean_best.round() as usize;
    let model = train_final(&data, &model_cfg, &scorer_cfg, &settings.train, final_epochs)?;

    let ckpt_path = args.out.join("model.ckpt");
    save_checkpoint(
        &ckpt_path,
        settings.task,
        &model_cfg,
        &scorer_cfg,
        settings.train.k,
        &data.language,
        &data.net,
        &data.features,
        &model.params,
    )?;

    let mut report = report_csv_header(settings.train.k);
    fold_report_rows(
        &mut report,
        &settings,
        &data.language,
        settings.train.seed,
        &trial.folds,
    );
    write_text(args.out.join("report.csv"), &report)?;

    let mut artifact_map = json!({
        "checkpoint": { "path": "model.ckpt", "sha256": sha256_of(&ckpt_path)? },
        "report": "report.csv",
    });
    if args.export_network {
        write_text(args.out.join("network.csv"), &data.net.positives_csv())?;
        artifact_map["network"] = json!("network.csv");
    }
    let mut inputs = json!({
        "embeddings": input_entry(&args.embeddings)?,
        "alloys": input_entry(&args.alloys)?,
    });
    if let Some(path) = &args.eval_alloys {
        inputs["eval_alloys"] = input_entry(path)?;
    }
    let transfer_json = data.ternary_eval.as_ref().map(|eval| {
        json!({
            "triples": eval.triples.len(),
            "partial_pairs": eval.partial_by_pair.len(),
            "skipped_positives": eval.skipped,
        })
    });
    let mut manifest = json!({
        "command": "train",
        "inputs": inputs,
        "protocol": settings.manifest_json(),
        "network": {
            "language": data.language,
            "nodes": data.net.len(),
            "positives": data.net.positives().len(),
            "dropped_negatives": data.dropped_negatives,
        },
        "results": {
            "folds": serde_json::to_value(&trial.folds)
                .map_err(|e| Error::Contract(format!("could not serialise folds: {e}")))?,
            "recall_mean": trial.recall_mean,
            "recall_std": trial.recall_std,
            "ndcg_mean": trial.ndcg_mean,
            "ndcg_std": trial.ndcg_std,
            "final_epochs": final_epochs,
        },
        "artifacts": artifact_map,
    });
    if let Some(t) = transfer_json {
        manifest["network"]["transfer"] = t;
    }
    write_json(args.out.join("manifest.json"), &manifest)?;

    println!(
        "trained {} {}-{} on language {} ({} nodes, {} positives)",
        settings.task,
        settings.architecture,
        settings.scorer,
        data.language,
        data.net.len(),
        data.net.positives().len()
    );
    println!(
        "cv recall@{0}: {1:.4} +/- {2:.4} | ndcg@{0}: {3:.4} +/- {4:.4}",
        settings.train.k, trial.recall_mean, trial.recall_std, trial.ndcg_mean, trial.ndcg_std
    );
    println!(
        "final model ({final_epochs} epochs) -> {}",
        ckpt_path.display()
    );
    Ok(())
}

fn full_matrix_csv(ckpt: &LoadedCheckpoint, h: &Tensor) -> Result<String> {
    let net = &ckpt.net;
    let n = net.len();
    let score =
        |e: &Entity| -> Result<f64> { ckpt.model.scorer.score(h, &ckpt.model.params, e) };
    if ckpt.task.train_arity() == 2 {
        let mut scores = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let s = score(&Entity::pair(i, j)?)?;
                scores[i][j] = s;
                scores[j][i] = s;
            }
        }
        Ok(pair_matrix_csv(net.symbols(), &scores))
    } else {
        let mut scored = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let e = Entity::triple(i, j, k)?;
                    let s = score(&e)?;
                    scored.push((e, s));
                }
            }
        }
        Ok(triple_matrix_csv(net, &scored))
    }
}

fn cmd_recommend(args: RecommendArgs) -> Result<()> {
    if args.queries.is_empty() && !args.full_matrix {
        return Err(Error::Config(
            "nothing to do: pass at least one --query or --full-matrix".into(),
        ));
    }
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let k = args.k.unwrap_or(ckpt.k);
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if let Some(out) = &args.out {
        prepare_output_dir(out, args.force)?;
    }
    let ops = GraphOps::from_network(&ckpt.net);
    let h = ckpt
        .model
        .encoder
        .embed(&ckpt.model.params, &ckpt.features, &ops)?;
    let exclude = exclusion_set(ckpt.task, &ckpt.net);

    let mut query_files = Vec::new();
    for raw in &args.queries {
        let nodes = parse_query(&ckpt.net, ckpt.task, raw)?;
        let candidates = ckpt
            .net
            .enumerate_candidates(ckpt.task.query_mode(), &nodes, &exclude)?;
        if candidates.is_empty() {
            return Err(Error::Query(format!(
                "query '{raw}' leaves no candidates to rank"
            )));
        }
        if k > candidates.len() {
            eprintln!(
                "warning: k = {k} exceeds the {} candidates for query '{raw}'; returning all of them",
                candidates.len()
            );
        }
        let ranked = ckpt
            .model
            .scorer
            .rank_candidates(&h, &ckpt.model.params, &candidates)?;
        let rows: Vec<(String, f64)> = ranked
            .iter()
            .take(k)
            .map(|(e, s)| (ckpt.net.entity_label(*e), *s))
            .collect();
        let csv = ranked_csv(&rows);
        match &args.out {
            Some(out) => {
                let file = format!("query_{}.csv", sanitize(raw));
                write_text(out.join(&file), &csv)?;
                query_files.push(json!({ "query": raw, "file": file }));
            }
            None => {
                println!("# query: {raw}");
                print!("{csv}");
            }
        }
    }

    let mut matrix_written = false;
    if args.full_matrix {
        let csv = full_matrix_csv(&ckpt, &h)?;
        match &args.out {
            Some(out) => {
                write_text(out.join("matrix.csv"), &csv)?;
                matrix_written = true;
            }
            None => {
                println!("# full score matrix (min-max normalised)");
                print!("{csv}");
            }
        }
    }

    if let Some(out) = &args.out {
        let mut artifact_map = json!({ "queries": query_files });
        if matrix_written {
            artifact_map["matrix"] = json!("matrix.csv");
        }
        let manifest = json!({
            "command": "recommend",
            "inputs": { "checkpoint": input_entry(&args.checkpoint)? },
            "task": ckpt.task.to_string(),
            "k": k,
            "queries": args.queries,
            "artifacts": artifact_map,
        });
        write_json(out.join("manifest.json"), &manifest)?;
        println!(
            "wrote {} ranking(s){} under {}",
            args.queries.len(),
            if matrix_written { " and matrix.csv" } else { "" },
            out.display()
        );
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let settings = Settings::resolve(&args.hyper)?;
    let seeds: Vec<u64> = match &args.seeds {
        Some(spec) => parse_list(spec, "--seeds")?,
        None => (0..args.trials as u64).collect(),
    };
    if seeds.is_empty() {
        return Err(Error::Config("need at least one trial seed".into()));
    }
    prepare_output_dir(&args.out, args.force)?;

    let mut report = report_csv_header(settings.train.k);
    let mut summary = String::from("language,aggregation,recall_mean,recall_std,ndcg_mean,ndcg_std\n");
    let mut language_blocks = Vec::new();
    let mut embedding_inputs = Vec::new();

    for path in &args.embeddings {
        let table = load_embeddings(path, args.dim)?;
        let records = load_alloys(&args.alloys, &table)?;
        let transfer = match &args.eval_alloys {
            None => None,
            Some(p) => Some(load_alloys(p, &table)?),
        };
        let data = TaskData::new(settings.task, &records, &table, transfer.as_deref())?;
        warn_if_k_saturates(settings.task, data.net.len(), settings.train.k);
        let model_cfg = settings.model_config(table.dim());
        let scorer_cfg = settings.scorer_config();
        let trials = run_trials(
            &data,
            &model_cfg,
            &scorer_cfg,
            &settings.train,
            &seeds,
            args.jobs,
        )?;
        for trial in &trials {
            fold_report_rows(&mut report, &settings, &data.language, trial.seed, &trial.folds);
        }
        let (fm_recall, fm_ndcg) = aggregate_fold_means(&trials);
        let (pool_recall, pool_ndcg) = aggregate_pooled(&trials);
        summary.push_str(&format!(
            "{},fold-means,{},{},{},{}\n",
            data.language, fm_recall.mean, fm_recall.std, fm_ndcg.mean, fm_ndcg.std
        ));
        summary.push_str(&format!(
            "{},pooled,{},{},{},{}\n",
            data.language, pool_recall.mean, pool_recall.std, pool_ndcg.mean, pool_ndcg.std
        ));
        language_blocks.push(json!({
            "language": data.language,
            "trials": trials.len(),
            "recall_mean": fm_recall.mean,
            "recall_std": fm_recall.std,
            "ndcg_mean": fm_ndcg.mean,
            "ndcg_std": fm_ndcg.std,
        }));
        embedding_inputs.push(input_entry(path)?);
        println!(
            "{}: recall@{1} {2:.4} +/- {3:.4} | ndcg@{1} {4:.4} +/- {5:.4} ({6} trials)",
            data.language,
            settings.train.k,
            fm_recall.mean,
            fm_recall.std,
            fm_ndcg.mean,
            fm_ndcg.std,
            trials.len()
        );
    }

    write_text(args.out.join("report.csv"), &report)?;
    write_text(args.out.join("summary.csv"), &summary)?;
    let mut inputs = json!({
        "embeddings": embedding_inputs,
        "alloys": input_entry(&args.alloys)?,
    });
    if let Some(path) = &args.eval_alloys {
        inputs["eval_alloys"] = input_entry(path)?;
    }
    let manifest = json!({
        "command": "evaluate",
        "inputs": inputs,
        "protocol": settings.manifest_json(),
        "seeds": seeds,
        "languages": language_blocks,
        "artifacts": { "report": "report.csv", "summary": "summary.csv" },
    });
    write_json(args.out.join("manifest.json"), &manifest)?;
    Ok(())
}

fn cmd_gridsearch(args: GridsearchArgs) -> Result<()> {
    let settings = Settings::resolve(&args.hyper)?;
    let mut grid = TrainGrid::default();
    if let Some(s) = &args.lambdas {
        grid.lambdas = parse_list(s, "--lambdas")?;
    }
    if let Some(s) = &args.learning_rates {
        grid.learning_rates = parse_list(s, "--learning-rates")?;
    }
    if let Some(s) = &args.dropouts {
        grid.dropouts = parse_list(s, "--dropouts")?;
    }
    if let Some(s) = &args.layer_counts {
        grid.layer_counts = parse_list(s, "--layer-counts")?;
    }
    prepare_output_dir(&args.out, args.force)?;
    let data = load_task_data(
        settings.task,
        &args.embeddings,
        args.dim,
        &args.alloys,
        args.eval_alloys.as_deref(),
    )?;
    let model_cfg = settings.model_config(data.features.last_dim());
    let scorer_cfg = settings.scorer_config();
    let outcome = grid_search(
        &data,
        &model_cfg,
        &scorer_cfg,
        &settings.train,
        &grid,
        args.jobs,
    )?;

    let k = settings.train.k;
    let mut csv = format!("lambda,learning_rate,dropout,layers,recall@{k},ndcg@{k}\n");
    for p in &outcome.points {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.config.lambda, p.config.learning_rate, p.config.dropout, p.config.layers,
            p.recall, p.ndcg
        ));
    }
    write_text(args.out.join("grid.csv"), &csv)?;

    let best = &outcome.points[outcome.best];
    let best_json = json!({
        "index": outcome.best,
        "lambda": best.config.lambda,
        "learning_rate": best.config.learning_rate,
        "dropout": best.config.dropout,
        "layers": best.config.layers,
        "recall": best.recall,
        "ndcg": best.ndcg,
    });
    write_json(args.out.join("best.json"), &best_json)?;

    let mut inputs = json!({
        "embeddings": input_entry(&args.embeddings)?,
        "alloys": input_entry(&args.alloys)?,
    });
    if let Some(path) = &args.eval_alloys {
        inputs["eval_alloys"] = input_entry(path)?;
    }
    let manifest = json!({
        "command": "gridsearch",
        "inputs": inputs,
        "protocol": settings.manifest_json(),
        "grid": {
            "lambdas": grid.lambdas,
            "learning_rates": grid.learning_rates,
            "dropouts": grid.dropouts,
            "layer_counts": grid.layer_counts,
            "points": outcome.points.len(),
        },
        "best": best_json,
        "artifacts": { "grid": "grid.csv", "best": "best.json" },
    });
    write_json(args.out.join("manifest.json"), &manifest)?;

    println!(
        "searched {} grid points; best: lambda {} lr {} dropout {} layers {} (recall@{k} {:.4}, ndcg@{k} {:.4})",
        outcome.points.len(),
        best.config.lambda,
        best.config.learning_rate,
        best.config.dropout,
        best.config.layers,
        best.recall,
        best.ndcg
    );
    Ok(())
}

fn cmd_cluster(args: ClusterArgs) -> Result<()> {
    let table = load_embeddings(&args.embeddings, args.dim)?;
    prepare_output_dir(&args.out, args.force)?;
    let (labels, matrix) = if args.features {
        table.feature_view()
    } else {
        (table.symbols().to_vec(), table.to_tensor())
    };
    let distances = cosine_distance_matrix(&labels, &matrix)?;
    let dendrogram = ward_cluster(&distances)?;
    let mut newick = dendrogram.to_newick(&labels)?;
    newick.push('\n');
    write_text(args.out.join("dendrogram.newick"), &newick)?;

    let mut merges = String::from("step,left,right,height,size\n");
    for (step, m) in dendrogram.merges().iter().enumerate() {
        merges.push_str(&format!(
            "{},{},{},{},{}\n",
            step, m.left, m.right, m.height, m.size
        ));
    }
    write_text(args.out.join("merges.csv"), &merges)?;

    let manifest = json!({
        "command": "cluster",
        "inputs": { "embeddings": input_entry(&args.embeddings)? },
        "mode": if args.features { "features" } else { "elements" },
        "language": table.language(),
        "leaves": labels.len(),
        "artifacts": { "dendrogram": "dendrogram.newick", "merges": "merges.csv" },
    });
    write_json(args.out.join("manifest.json"), &manifest)?;

    println!(
        "clustered {} {} through {} merges (top height {})",
        labels.len(),
        if args.features { "features" } else { "elements" },
        dendrogram.merges().len(),
        dendrogram
            .merges()
            .last()
            .map(|m| m.height)
            .unwrap_or(0.0)
    );
    Ok(())
}

fn cmd_pca(args: PcaArgs) -> Result<()> {
    let table = load_embeddings(&args.embeddings, args.dim)?;
    prepare_output_dir(&args.out, args.force)?;
    let projection = pca_project(&table.to_tensor(), args.components)?;

    let mut csv = String::from("element");
    for c in 0..args.components {
        csv.push_str(&format!(",pc{}", c + 1));
    }
    csv.push('\n');
    for (i, sym) in table.symbols().iter().enumerate() {
        csv.push_str(sym);
        for c in 0..args.components {
            csv.push_str(&format!(",{}", projection.coords.at(i, c)));
        }
        csv.push('\n');
    }
    write_text(args.out.join("projection.csv"), &csv)?;

    let mut ev = String::from("component,ratio\n");
    for (c, ratio) in projection.explained.iter().enumerate() {
        ev.push_str(&format!("pc{},{}\n", c + 1, ratio));
    }
    write_text(args.out.join("explained_variance.csv"), &ev)?;

    let manifest = json!({
        "command": "pca",
        "inputs": { "embeddings": input_entry(&args.embeddings)? },
        "language": table.language(),
        "elements": table.len(),
        "components": args.components,
        "explained": projection.explained,
        "artifacts": {
            "projection": "projection.csv",
            "explained_variance": "explained_variance.csv",
        },
    });
    write_json(args.out.join("manifest.json"), &manifest)?;

    println!(
        "projected {} elements onto {} components (explained variance {:.4})",
        table.len(),
        args.components,
        projection.explained.iter().sum::<f64>()
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        nodes: args.nodes,
        communities: args.communities,
        p_in: args.p_in,
        p_out: args.p_out,
        arity: args.arity,
        seed: args.seed,
    };
    let (symbols, records) = generate_synthetic(&spec)?;
    let table = synthetic_embeddings(&symbols, args.dim, args.seed, &args.language)?;
    prepare_output_dir(&args.out, args.force)?;

    let alloys_path = args.out.join("alloys.csv");
    save_alloys(&records, &alloys_path)?;
    let embeddings_file = format!("elements.{}.tsv", args.language);
    let embeddings_path = args.out.join(&embeddings_file);
    save_embeddings(&table, &embeddings_path)?;

    let manifest = json!({
        "command": "synth",
        "parameters": {
            "nodes": args.nodes,
            "communities": args.communities,
            "p_in": args.p_in,
            "p_out": args.p_out,
            "arity": args.arity,
            "dim": args.dim,
            "seed": args.seed,
            "language": args.language,
        },
        "positives": records.len(),
        "artifacts": {
            "alloys": { "path": "alloys.csv", "sha256": sha256_of(&alloys_path)? },
            "embeddings": {
                "path": embeddings_file,
                "sha256": sha256_of(&embeddings_path)?,
            },
        },
    });
    write_json(args.out.join("manifest.json"), &manifest)?;

    println!(
        "synthesised {} nodes and {} positive {}-element systems -> {}",
        args.nodes,
        records.len(),
        args.arity,
        args.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests_support::{record, table_of};
    use crate::dataset::Label;
    use crate::graph::build_network;

    #[test]
    fn settings_defaults() {
        let settings = Settings::resolve(&HyperArgs::default()).unwrap();
        assert_eq!(settings.task, Task::BinaryToBinary);
        assert_eq!(settings.architecture, Architecture::Gcn);
        assert_eq!(settings.scorer, ScorerKind::Pd);
        assert_eq!(settings.hidden, 64);
        assert_eq!(settings.heads, 4);
        assert_eq!(settings.layers, 2);
        assert_eq!(settings.dropout, 0.1);
        assert_eq!(settings.scorer_hidden, 32);
        assert_eq!(settings.train.learning_rate, 0.01);
        assert_eq!(settings.train.lambda_l2, 0.0001);
        assert_eq!(settings.train.epochs, 500);
        assert_eq!(settings.train.patience, 50);
        assert_eq!(settings.train.folds, 5);
        assert_eq!(settings.train.k, 10);
        assert_eq!(settings.train.seed, 0);
    }

    #[test]
    fn config_file_fills_gaps_and_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "architecture = \"ngcf\"\nlearning_rate = 0.5\nk = 7\n",
        )
        .unwrap();
        let args = HyperArgs {
            learning_rate: Some(0.25),
            config: Some(path),
            ..HyperArgs::default()
        };
        let settings = Settings::resolve(&args).unwrap();
        assert_eq!(settings.architecture, Architecture::Ngcf);
        // The flag beats the file.
        assert_eq!(settings.train.learning_rate, 0.25);
        assert_eq!(settings.train.k, 7);
        // Untouched keys keep their defaults.
        assert_eq!(settings.train.folds, 5);
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "learning_rte = 0.5\n").unwrap();
        let args = HyperArgs {
            config: Some(path),
            ..HyperArgs::default()
        };
        let err = Settings::resolve(&args).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("learning_rte"), "got: {err}");
    }

    #[test]
    fn bad_flag_values_are_config_errors() {
        let args = HyperArgs {
            task: Some("b2x".into()),
            ..HyperArgs::default()
        };
        assert_eq!(Settings::resolve(&args).unwrap_err().exit_code(), 2);

        let args = HyperArgs {
            learning_rate: Some(-1.0),
            ..HyperArgs::default()
        };
        assert_eq!(Settings::resolve(&args).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn list_parsing() {
        assert_eq!(
            parse_list::<u64>("0, 1,2", "--seeds").unwrap(),
            vec![0, 1, 2]
        );
        assert_eq!(
            parse_list::<f64>("0.1,0.2", "--dropouts").unwrap(),
            vec![0.1, 0.2]
        );
        assert!(parse_list::<u64>("a", "--seeds").is_err());
        assert!(parse_list::<u64>(" , ", "--seeds").is_err());
    }

    fn pair_net() -> MaterialNetwork {
        let table = table_of(&["Ag", "Cu", "Mg"], 4);
        let records = vec![
            record(&["Ag", "Cu"], Label::Positive),
            record(&["Cu", "Mg"], Label::Positive),
        ];
        build_network(&records, &table).unwrap()
    }

    #[test]
    fn query_parsing_checks_arity_and_membership() {
        let net = pair_net();
        assert_eq!(
            parse_query(&net, Task::BinaryToBinary, "Cu").unwrap(),
            vec![1]
        );
        // Unknown symbol is a query error (exit 3) naming the symbol.
        let err = parse_query(&net, Task::BinaryToBinary, "Zr").unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("Zr"), "got: {err}");
        // Pair query against a single-element task.
        let err = parse_query(&net, Task::BinaryToBinary, "Ag-Cu").unwrap_err();
        assert_eq!(err.exit_code(), 3);
        // Pair-for-third task takes two elements.
        assert_eq!(
            parse_query(&net, Task::TernaryThirdForPair, "Ag-Mg").unwrap(),
            vec![0, 2]
        );
        let err = parse_query(&net, Task::TernaryThirdForPair, "Ag").unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn filenames_are_sanitised() {
        assert_eq!(sanitize("Ag-Mg"), "Ag-Mg");
        assert_eq!(sanitize("a/b c"), "a_b_c");
    }
}
