//! Pairwise-ranking training and evaluation: BPR loss with L2 regularisation,
//! Adam updates, stratified cross-validation with early stopping, transfer
//! evaluation from binary to ternary systems, hyperparameter grid search,
//! and multi-seed trial aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_negative_pool, stratified_folds, AlloyRecord, EmbeddingTable, Label};
use crate::error::{Error, Result};
use crate::graph::{build_network, Entity, MaterialNetwork, QueryMode};
use crate::metrics::{dcg_at_k, ideal_dcg, ndcg_at_k, recall_at_k};
use crate::model::{Encoder, GraphOps, ModelConfig, ParamSet};
use crate::scoring::{Scorer, ScorerConfig};
use crate::tensor::{GradientTape, Tensor, TensorId};

/// Additive constant inside the BPR logarithm, guarding against log(0) when
/// the ranking probability saturates.
pub const BPR_EPSILON: f64 = 1e-10;

/// RNG stream offset for the final full-data training run, kept clear of the
/// per-fold streams (fold `f` uses streams `2f` and `2f + 1`).
const FINAL_STREAM_BASE: u64 = 1 << 30;

/// Deterministic stream-split generator: one seed, many independent streams.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// What is recommended from what.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    /// Binary systems in, partner element out.
    #[serde(rename = "b2b")]
    BinaryToBinary,
    /// Ternary systems in, completing pair for one element out.
    #[serde(rename = "t2t-pair")]
    TernaryPairForElement,
    /// Ternary systems in, third element for a pair out.
    #[serde(rename = "t2t-third")]
    TernaryThirdForPair,
    /// Train on binary systems, evaluate third-element completion against
    /// known ternary systems.
    #[serde(rename = "b2t")]
    BinaryToTernary,
}

impl Task {
    /// Arity of the systems the model is trained on.
    pub fn train_arity(&self) -> usize {
        match self {
            Task::BinaryToBinary | Task::BinaryToTernary => 2,
            Task::TernaryPairForElement | Task::TernaryThirdForPair => 3,
        }
    }

    /// How evaluation queries enumerate candidates for this task.
    pub fn query_mode(&self) -> QueryMode {
        match self {
            Task::BinaryToBinary => QueryMode::PartnerForElement,
            Task::TernaryPairForElement => QueryMode::PairForElement,
            Task::TernaryThirdForPair | Task::BinaryToTernary => QueryMode::ThirdForPair,
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::BinaryToBinary => "b2b",
            Task::TernaryPairForElement => "t2t-pair",
            Task::TernaryThirdForPair => "t2t-third",
            Task::BinaryToTernary => "b2t",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "b2b" => Ok(Task::BinaryToBinary),
            "t2t-pair" => Ok(Task::TernaryPairForElement),
            "t2t-third" => Ok(Task::TernaryThirdForPair),
            "b2t" => Ok(Task::BinaryToTernary),
            other => Err(Error::Config(format!(
                "unknown task '{other}' (expected b2b, t2t-pair, t2t-third, or b2t)"
            ))),
        }
    }
}

/// Optimisation and protocol hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lambda_l2: f64,
    pub epochs: usize,
    pub patience: usize,
    pub folds: usize,
    pub k: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            lambda_l2: 0.0001,
            epochs: 500,
            patience: 50,
            folds: 5,
            k: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.lambda_l2 < 0.0 {
            return Err(Error::Config("lambda must be nonnegative".into()));
        }
        if self.folds == 0 {
            return Err(Error::Config("need at least one fold".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Ternary positives mapped onto a binary network for transfer evaluation.
#[derive(Debug, Clone)]
pub struct TernaryEval {
    /// Fully in-network triples, ascending, deduplicated.
    pub triples: Vec<Entity>,
    /// Positives with exactly two in-network members: keyed by that pair,
    /// they stay in recall denominators but can never be ranked.
    pub partial_by_pair: BTreeMap<(usize, usize), usize>,
    /// Positives with at most one in-network member, dropped entirely.
    pub skipped: usize,
}

/// Everything needed to train and evaluate one task on one embedding table.
#[derive(Debug)]
pub struct TaskData {
    pub task: Task,
    pub net: MaterialNetwork,
    pub features: Tensor,
    pub ops: GraphOps,
    /// Negative-sampling pool (training arity), ascending.
    pub pool: Vec<Entity>,
    /// Labelled negatives that referenced elements outside the network.
    pub dropped_negatives: usize,
    /// Transfer-evaluation positives (BinaryToTernary only).
    pub ternary_eval: Option<TernaryEval>,
    pub language: String,
}

impl TaskData {
    /// Assemble a task from labelled records. `transfer` supplies the
    /// ternary systems for [`Task::BinaryToTernary`] and must be `None`
    /// otherwise.
    pub fn new(
        task: Task,
        records: &[AlloyRecord],
        table: &EmbeddingTable,
        transfer: Option<&[AlloyRecord]>,
    ) -> Result<TaskData> {
        let net = build_network(records, table)?;
        if net.arity() != task.train_arity() {
            return Err(Error::Config(format!(
                "task {task} trains on {}-element systems but the records hold {}-element ones",
                task.train_arity(),
                net.arity()
            )));
        }
        match (task, transfer) {
            (Task::BinaryToTernary, None) => {
                return Err(Error::Config(
                    "task b2t needs a ternary evaluation set (pass --eval-alloys)".into(),
                ))
            }
            (Task::BinaryToTernary, Some(_)) => {}
            (_, Some(_)) => {
                return Err(Error::Config(format!(
                    "task {task} does not take a separate evaluation set"
                )))
            }
            (_, None) => {}
        }

        // Explicit negatives join the sampling pool when every member maps
        // onto a network node; the rest are counted and dropped.
        let mut explicit = Vec::new();
        let mut dropped = 0usize;
        for record in records {
            if record.label != Label::Negative {
                continue;
            }
            let nodes: Option<Vec<usize>> = record
                .elements
                .iter()
                .map(|s| net.node_of(s))
                .collect();
            match nodes {
                Some(nodes) => explicit.push(Entity::from_nodes(&nodes)?),
                None => dropped += 1,
            }
        }
        let pool = build_negative_pool(net.positives(), net.len(), &explicit)?;

        let ternary_eval = match transfer {
            None => None,
            Some(records) => {
                let mut triples = BTreeSet::new();
                let mut partial: BTreeMap<(usize, usize), usize> = BTreeMap::new();
                let mut skipped = 0usize;
                for record in records.iter().filter(|r| r.label == Label::Positive) {
                    if record.elements.len() != 3 {
                        return Err(Error::Config(format!(
                            "transfer evaluation records must be ternary, got {}",
                            record.system_label()
                        )));
                    }
                    let mapped: Vec<usize> = record
                        .elements
                        .iter()
                        .filter_map(|s| net.node_of(s))
                        .collect();
                    match mapped.len() {
                        3 => {
                            triples.insert(Entity::from_nodes(&mapped)?);
                        }
                        2 => {
                            let key = (mapped[0].min(mapped[1]), mapped[0].max(mapped[1]));
                            *partial.entry(key).or_insert(0) += 1;
                        }
                        _ => skipped += 1,
                    }
                }
                if triples.is_empty() && partial.is_empty() {
                    return Err(Error::Config(
                        "no transfer-evaluation positive has two or more elements in the training network".into(),
                    ));
                }
                Some(TernaryEval {
                    triples: triples.into_iter().collect(),
                    partial_by_pair: partial,
                    skipped,
                })
            }
        };

        let features = net.node_features(table);
        let ops = GraphOps::from_network(&net);
        Ok(TaskData {
            task,
            net,
            features,
            ops,
            pool,
            dropped_negatives: dropped,
            ternary_eval,
            language: table.language().to_string(),
        })
    }
}

/// Bayesian personalised ranking loss over paired positive/negative score
/// batches: `-sum log(sigmoid(s_pos - s_neg) + eps) + lambda * sum ||theta||^2`.
pub fn bpr_loss(
    tape: &mut GradientTape,
    pos_scores: TensorId,
    neg_scores: TensorId,
    params: &[TensorId],
    lambda: f64,
) -> Result<TensorId> {
    if tape.value(pos_scores).shape() != tape.value(neg_scores).shape() {
        return Err(Error::Contract(format!(
            "positive and negative score batches differ in shape: {:?} vs {:?}",
            tape.value(pos_scores).shape(),
            tape.value(neg_scores).shape()
        )));
    }
    let diff = tape.sub(pos_scores, neg_scores)?;
    let prob = tape.sigmoid(diff);
    let guarded = tape.add_scalar(prob, BPR_EPSILON);
    let log_prob = tape.log(guarded);
    let total = tape.sum(log_prob);
    let rank_loss = tape.mul_scalar(total, -1.0);
    if lambda == 0.0 || params.is_empty() {
        return Ok(rank_loss);
    }
    let mut reg: Option<TensorId> = None;
    for &p in params {
        let sq = tape.sum_sq(p);
        reg = Some(match reg {
            None => sq,
            Some(acc) => tape.add(acc, sq)?,
        });
    }
    let penalty = tape.mul_scalar(reg.expect("params nonempty"), lambda);
    tape.add(rank_loss, penalty)
}

/// Adam optimiser with bias correction (beta1 = 0.9, beta2 = 0.999,
/// eps = 1e-8), one state slot per parameter.
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step_count: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, params: &ParamSet) -> Adam {
        let sizes: Vec<usize> = params.iter().map(|(_, t)| t.numel()).collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moment: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            second_moment: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    /// Apply one update. `gradients[i]` must align with parameter `i` in
    /// construction order.
    pub fn step(&mut self, params: &mut ParamSet, gradients: &[Vec<f64>]) -> Result<()> {
        if gradients.len() != self.first_moment.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                gradients.len(),
                self.first_moment.len()
            )));
        }
        self.step_count += 1;
        let correction1 = 1.0 - self.beta1.powi(self.step_count as i32);
        let correction2 = 1.0 - self.beta2.powi(self.step_count as i32);
        for (index, (tensor, grad)) in params.values_mut().zip(gradients).enumerate() {
            let m = &mut self.first_moment[index];
            let v = &mut self.second_moment[index];
            if grad.len() != m.len() {
                return Err(Error::Contract(format!(
                    "gradient {index} has {} entries, parameter has {}",
                    grad.len(),
                    m.len()
                )));
            }
            let theta = tensor.data_mut();
            for e in 0..grad.len() {
                let g = grad[e];
                m[e] = self.beta1 * m[e] + (1.0 - self.beta1) * g;
                v[e] = self.beta2 * v[e] + (1.0 - self.beta2) * g * g;
                let m_hat = m[e] / correction1;
                let v_hat = v[e] / correction2;
                theta[e] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Macro-averaged retrieval quality over one set of queries.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EvalOutcome {
    pub recall: f64,
    pub ndcg: f64,
    pub queries: usize,
    /// Queries dropped because every candidate was excluded.
    pub skipped_queries: usize,
    /// Transfer positives dropped for having too few in-network members.
    pub skipped_positives: usize,
    /// Mean over queries of `min(1, k / |candidates|)`: the expected recall
    /// of a uniformly random ranking of each query's own candidate list.
    pub per_query_baseline: f64,
}

/// Queries implied by a set of held-out positives, in ascending order.
fn held_out_queries(task: Task, test: &[Entity]) -> Vec<Vec<usize>> {
    match task.query_mode() {
        QueryMode::PartnerForElement | QueryMode::PairForElement => {
            let mut elements = BTreeSet::new();
            for e in test {
                elements.extend(e.nodes());
            }
            elements.into_iter().map(|q| vec![q]).collect()
        }
        QueryMode::ThirdForPair => {
            let mut pairs = BTreeSet::new();
            for e in test {
                let n = e.nodes();
                for a in 0..n.len() {
                    for b in (a + 1)..n.len() {
                        pairs.insert((n[a], n[b]));
                    }
                }
            }
            pairs.into_iter().map(|(a, b)| vec![a, b]).collect()
        }
    }
}

/// Rank every candidate for every query implied by the held-out positives
/// and macro-average recall and NDCG at `k`. Training positives are excluded
/// from the candidate lists; held-out positives containing the query are the
/// relevant set.
pub fn evaluate_held_out(
    scorer: &Scorer,
    params: &ParamSet,
    h: &Tensor,
    net: &MaterialNetwork,
    task: Task,
    train: &BTreeSet<Entity>,
    test: &[Entity],
    k: usize,
) -> Result<EvalOutcome> {
    if test.is_empty() {
        return Err(Error::Contract("no held-out positives to evaluate".into()));
    }
    let mode = task.query_mode();
    let mut recall_sum = 0.0;
    let mut ndcg_sum = 0.0;
    let mut baseline_sum = 0.0;
    let mut queries = 0usize;
    let mut skipped = 0usize;
    for query in held_out_queries(task, test) {
        let relevant: BTreeSet<Entity> = test
            .iter()
            .filter(|e| query.iter().all(|&q| e.contains(q)))
            .copied()
            .collect();
        debug_assert!(!relevant.is_empty(), "queries come from test entities");
        let candidates = net.enumerate_candidates(mode, &query, train)?;
        if candidates.is_empty() {
            skipped += 1;
            continue;
        }
        let ranked: Vec<Entity> = scorer
            .rank_candidates(h, params, &candidates)?
            .into_iter()
            .map(|(e, _)| e)
            .collect();
        recall_sum += recall_at_k(&ranked, &relevant, k)?;
        ndcg_sum += ndcg_at_k(&ranked, &relevant, k)?;
        baseline_sum += (k as f64 / candidates.len() as f64).min(1.0);
        queries += 1;
    }
    if queries == 0 {
        return Err(Error::Contract(
            "every evaluation query had an empty candidate list".into(),
        ));
    }
    Ok(EvalOutcome {
        recall: recall_sum / queries as f64,
        ndcg: ndcg_sum / queries as f64,
        queries,
        skipped_queries: skipped,
        skipped_positives: 0,
        per_query_baseline: baseline_sum / queries as f64,
    })
}

/// Transfer evaluation: a binary-trained model ranks third-element
/// completions for every pair occurring in the known ternary systems.
/// Positives whose third element lies outside the binary network cannot be
/// ranked but stay in the recall denominator.
pub fn evaluate_ternary_transfer(
    scorer: &Scorer,
    params: &ParamSet,
    h: &Tensor,
    net: &MaterialNetwork,
    eval: &TernaryEval,
    k: usize,
) -> Result<EvalOutcome> {
    let mut query_pairs: BTreeSet<(usize, usize)> = eval.partial_by_pair.keys().copied().collect();
    for triple in &eval.triples {
        let n = triple.nodes();
        for a in 0..3 {
            for b in (a + 1)..3 {
                query_pairs.insert((n[a], n[b]));
            }
        }
    }
    if query_pairs.is_empty() {
        return Err(Error::Contract(
            "transfer evaluation has no query pairs".into(),
        ));
    }
    let none = BTreeSet::new();
    let mut recall_sum = 0.0;
    let mut ndcg_sum = 0.0;
    let mut baseline_sum = 0.0;
    let mut queries = 0usize;
    let mut skipped = 0usize;
    for (a, b) in query_pairs {
        let reachable: BTreeSet<Entity> = eval
            .triples
            .iter()
            .filter(|e| e.contains(a) && e.contains(b))
            .copied()
            .collect();
        let unreachable = eval.partial_by_pair.get(&(a, b)).copied().unwrap_or(0);
        let total_relevant = reachable.len() + unreachable;
        let candidates = net.enumerate_candidates(QueryMode::ThirdForPair, &[a, b], &none)?;
        if candidates.is_empty() {
            skipped += 1;
            continue;
        }
        let ranked: Vec<Entity> = scorer
            .rank_candidates(h, params, &candidates)?
            .into_iter()
            .map(|(e, _)| e)
            .collect();
        let hits = ranked
            .iter()
            .take(k)
            .filter(|e| reachable.contains(e))
            .count();
        recall_sum += hits as f64 / total_relevant.min(k) as f64;
        ndcg_sum += if reachable.is_empty() {
            0.0
        } else {
            dcg_at_k(&ranked, &reachable, k) / ideal_dcg(total_relevant, k)
        };
        baseline_sum += (k as f64 / candidates.len() as f64).min(1.0);
        queries += 1;
    }
    if queries == 0 {
        return Err(Error::Contract(
            "every transfer query had an empty candidate list".into(),
        ));
    }
    Ok(EvalOutcome {
        recall: recall_sum / queries as f64,
        ndcg: ndcg_sum / queries as f64,
        queries,
        skipped_queries: skipped,
        skipped_positives: eval.skipped,
        per_query_baseline: baseline_sum / queries as f64,
    })
}

/// Expected recall at `k` of a uniformly random ranking over the task's full
/// candidate entity space (all same-arity entities over the network's nodes,
/// minus the training positives the evaluator excludes).
pub fn global_random_baseline(task: Task, node_count: usize, train_count: usize, k: usize) -> f64 {
    let n = node_count;
    let space = match task {
        Task::BinaryToBinary => n * (n - 1) / 2 - train_count,
        Task::TernaryPairForElement | Task::TernaryThirdForPair => {
            n * (n - 1) * (n - 2) / 6 - train_count
        }
        // Transfer evaluation excludes nothing: training entities are pairs,
        // the candidate space is all triples.
        Task::BinaryToTernary => n * (n - 1) * (n - 2) / 6,
    };
    if space == 0 {
        return 1.0;
    }
    (k as f64 / space as f64).min(1.0)
}

/// Per-fold result of cross-validated training.
#[derive(Debug, Clone, Serialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub best_epoch: usize,
    pub queries: usize,
    pub skipped_queries: usize,
    pub skipped_positives: usize,
    pub per_query_baseline: f64,
    pub global_baseline: f64,
}

/// Outcome of training on one fold: the summary plus the best parameter
/// snapshot and the per-epoch training losses.
pub struct FoldOutcome {
    pub summary: FoldSummary,
    pub params: ParamSet,
    pub losses: Vec<f64>,
}

/// Train on `train_set`, early-stopping on the fold's held-out recall, and
/// report the metrics of the best epoch. For [`Task::BinaryToTernary`] the
/// stopping signal is still the held-out binary recall, but the reported
/// metrics come from the ternary transfer evaluation.
#[allow(clippy::too_many_arguments)]
pub fn train_fold(
    data: &TaskData,
    model_cfg: &ModelConfig,
    scorer_cfg: &ScorerConfig,
    cfg: &TrainConfig,
    fold: usize,
    train_set: &[Entity],
    test_set: &[Entity],
) -> Result<FoldOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Contract("cannot train on an empty fold".into()));
    }
    let mut init_rng = rng_for(cfg.seed, 2 * fold as u64);
    let mut train_rng = rng_for(cfg.seed, 2 * fold as u64 + 1);
    let mut params = ParamSet::new();
    let encoder = Encoder::new(model_cfg.clone(), &mut params, &mut init_rng)?;
    let scorer = Scorer::new(scorer_cfg, model_cfg.hidden_dim, &mut params, &mut init_rng)?;
    let train_excl: BTreeSet<Entity> = train_set.iter().copied().collect();

    let evaluate = |params: &ParamSet| -> Result<(f64, EvalOutcome)> {
        let h = encoder.embed(params, &data.features, &data.ops)?;
        match (&data.task, &data.ternary_eval) {
            (Task::BinaryToTernary, Some(eval)) => {
                // Early-stop on the binary held-out signal but report the
                // ternary transfer quality.
                let stop = evaluate_held_out(
                    &scorer,
                    params,
                    &h,
                    &data.net,
                    Task::BinaryToBinary,
                    &train_excl,
                    test_set,
                    cfg.k,
                )?;
                let report =
                    evaluate_ternary_transfer(&scorer, params, &h, &data.net, eval, cfg.k)?;
                Ok((stop.recall, report))
            }
            _ => {
                let report = evaluate_held_out(
                    &scorer, params, &h, &data.net, data.task, &train_excl, test_set, cfg.k,
                )?;
                Ok((report.recall, report))
            }
        }
    };

    let (mut best_stop, mut best_report) = evaluate(&params)?;
    let mut best_params = params.clone();
    let mut best_epoch = 0usize;
    let mut stale = 0usize;
    let mut losses = Vec::new();
    let mut adam = Adam::new(cfg.learning_rate, &params);

    for epoch in 1..=cfg.epochs {
        // Fresh uniformly-sampled negative per positive, every epoch.
        let negatives: Vec<Entity> = train_set
            .iter()
            .map(|_| data.pool[train_rng.gen_range(0..data.pool.len())])
            .collect();

        let mut tape = GradientTape::new();
        let binding = params.bind(&mut tape);
        let h = encoder.forward(
            &mut tape,
            &binding,
            &data.features,
            &data.ops,
            true,
            &mut train_rng,
        )?;
        let pos = scorer.batch_scores(&mut tape, &binding, h, train_set)?;
        let neg = scorer.batch_scores(&mut tape, &binding, h, &negatives)?;
        let loss = bpr_loss(&mut tape, pos, neg, binding.ids(), cfg.lambda_l2)?;
        losses.push(tape.value(loss).data()[0]);
        tape.backward(loss)?;
        let gradients: Vec<Vec<f64>> = binding
            .ids()
            .iter()
            .map(|&id| tape.grad(id).map(<[f64]>::to_vec))
            .collect::<Result<_>>()?;
        adam.step(&mut params, &gradients)?;

        let (stop, report) = evaluate(&params)?;
        if stop > best_stop {
            best_stop = stop;
            best_report = report;
            best_params = params.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }

    let global_baseline =
        global_random_baseline(data.task, data.net.len(), train_set.len(), cfg.k);
    Ok(FoldOutcome {
        summary: FoldSummary {
            fold,
            recall: best_report.recall,
            ndcg: best_report.ndcg,
            best_epoch,
            queries: best_report.queries,
            skipped_queries: best_report.skipped_queries,
            skipped_positives: best_report.skipped_positives,
            per_query_baseline: best_report.per_query_baseline,
            global_baseline,
        },
        params: best_params,
        losses,
    })
}

/// Result of one full cross-validated trial (one seed).
#[derive(Debug, Clone, Serialize)]
pub struct TrialResult {
    pub seed: u64,
    pub folds: Vec<FoldSummary>,
    pub recall_mean: f64,
    pub recall_std: f64,
    pub ndcg_mean: f64,
    pub ndcg_std: f64,
}

/// Stratified k-fold cross-validation with one seed: train and evaluate
/// every fold, then average.
pub fn train_trial(
    data: &TaskData,
    model_cfg: &ModelConfig,
    scorer_cfg: &ScorerConfig,
    cfg: &TrainConfig,
) -> Result<TrialResult> {
    let split = stratified_folds(data.net.positives(), cfg.folds, cfg.seed)?;
    let mut folds = Vec::with_capacity(cfg.folds);
    for fold in 0..split.fold_count() {
        let train_set = split.train(fold);
        let test_set = split.test(fold);
        let outcome = train_fold(
            data, model_cfg, scorer_cfg, cfg, fold, &train_set, test_set,
        )?;
        folds.push(outcome.summary);
    }
    let recalls: Vec<f64> = folds.iter().map(|f| f.recall).collect();
    let ndcgs: Vec<f64> = folds.iter().map(|f| f.ndcg).collect();
    let (recall_mean, recall_std) = mean_std(&recalls);
    let (ndcg_mean, ndcg_std) = mean_std(&ndcgs);
    Ok(TrialResult {
        seed: cfg.seed,
        folds,
        recall_mean,
        recall_std,
        ndcg_mean,
        ndcg_std,
    })
}

/// A ready-to-score model: encoder recipe, scorer, and trained weights.
pub struct TrainedModel {
    pub encoder: Encoder,
    pub scorer: Scorer,
    pub params: ParamSet,
}

impl TrainedModel {
    /// Rebuild a model skeleton (deterministic parameter layout) and then
    /// replace the weights, e.g. from a checkpoint.
    pub fn from_parts(
        model_cfg: &ModelConfig,
        scorer_cfg: &ScorerConfig,
        params: ParamSet,
    ) -> Result<TrainedModel> {
        let mut layout = ParamSet::new();
        let mut rng = rng_for(0, 0);
        let encoder = Encoder::new(model_cfg.clone(), &mut layout, &mut rng)?;
        let scorer = Scorer::new(scorer_cfg, model_cfg.hidden_dim, &mut layout, &mut rng)?;
        if layout.len() != params.len() {
            return Err(Error::Contract(format!(
                "parameter set holds {} tensors but the configuration needs {}",
                params.len(),
                layout.len()
            )));
        }
        for ((want_name, want), (got_name, got)) in layout.iter().zip(params.iter()) {
            if want_name != got_name || want.shape() != got.shape() {
                return Err(Error::Contract(format!(
                    "parameter mismatch: expected {want_name} {:?}, found {got_name} {:?}",
                    want.shape(),
                    got.shape()
                )));
            }
        }
        Ok(TrainedModel {
            encoder,
            scorer,
            params,
        })
    }

    pub fn embed(&self, data: &TaskData) -> Result<Tensor> {
        self.encoder.embed(&self.params, &data.features, &data.ops)
    }
}

/// Train a final model on every positive for a fixed number of epochs
/// (canonically the rounded mean of the per-fold best epochs).
pub fn train_final(
    data: &TaskData,
    model_cfg: &ModelConfig,
    scorer_cfg: &ScorerConfig,
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<TrainedModel> {
    let mut init_rng = rng_for(cfg.seed, FINAL_STREAM_BASE);
    let mut train_rng = rng_for(cfg.seed, FINAL_STREAM_BASE + 1);
    let mut params = ParamSet::new();
    let encoder = Encoder::new(model_cfg.clone(), &mut params, &mut init_rng)?;
    let scorer = Scorer::new(scorer_cfg, model_cfg.hidden_dim, &mut params, &mut init_rng)?;
    let train_set: Vec<Entity> = data.net.positives().to_vec();
    let mut adam = Adam::new(cfg.learning_rate, &params);
    for _epoch in 1..=epochs {
        let negatives: Vec<Entity> = train_set
            .iter()
            .map(|_| data.pool[train_rng.gen_range(0..data.pool.len())])
            .collect();
        let mut tape = GradientTape::new();
        let binding = params.bind(&mut tape);
        let h = encoder.forward(
            &mut tape,
            &binding,
            &data.features,
            &data.ops,
            true,
            &mut train_rng,
        )?;
        let pos = scorer.batch_scores(&mut tape, &binding, h, &train_set)?;
        let neg = scorer.batch_scores(&mut tape, &binding, h, &negatives)?;
        let loss = bpr_loss(&mut tape, pos, neg, binding.ids(), cfg.lambda_l2)?;
        tape.backward(loss)?;
        let gradients: Vec<Vec<f64>> = binding
            .ids()
            .iter()
            .map(|&id| tape.grad(id).map(<[f64]>::to_vec))
            .collect::<Result<_>>()?;
        adam.step(&mut params, &gradients)?;
    }
    Ok(TrainedModel {
        encoder,
        scorer,
        params,
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
}

/// Aggregate across trials of per-trial fold means.
pub fn aggregate_fold_means(trials: &[TrialResult]) -> (Aggregate, Aggregate) {
    let recalls: Vec<f64> = trials.iter().map(|t| t.recall_mean).collect();
    let ndcgs: Vec<f64> = trials.iter().map(|t| t.ndcg_mean).collect();
    let (rm, rs) = mean_std(&recalls);
    let (nm, ns) = mean_std(&ndcgs);
    (
        Aggregate { mean: rm, std: rs },
        Aggregate { mean: nm, std: ns },
    )
}

/// Aggregate across every individual fold of every trial.
pub fn aggregate_pooled(trials: &[TrialResult]) -> (Aggregate, Aggregate) {
    let recalls: Vec<f64> = trials
        .iter()
        .flat_map(|t| t.folds.iter().map(|f| f.recall))
        .collect();
    let ndcgs: Vec<f64> = trials
        .iter()
        .flat_map(|t| t.folds.iter().map(|f| f.ndcg))
        .collect();
    let (rm, rs) = mean_std(&recalls);
    let (nm, ns) = mean_std(&ndcgs);
    (
        Aggregate { mean: rm, std: rs },
        Aggregate { mean: nm, std: ns },
    )
}

/// Run one cross-validated trial per seed. `jobs > 1` fans trials out over a
/// thread pool; results keep seed order either way.
pub fn run_trials(
    data: &TaskData,
    model_cfg: &ModelConfig,
    scorer_cfg: &ScorerConfig,
    cfg: &TrainConfig,
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<TrialResult>> {
    let run = |&seed: &u64| -> Result<TrialResult> {
        let mut trial_cfg = cfg.clone();
        trial_cfg.seed = seed;
        train_trial(data, model_cfg, scorer_cfg, &trial_cfg)
    };
    if jobs <= 1 {
        return seeds.iter().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("could not build a {jobs}-thread pool: {e}")))?;
    pool.install(|| {
        use rayon::prelude::*;
        seeds.par_iter().map(run).collect()
    })
}

/// One hyperparameter combination of the search grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPointConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub dropout: f64,
    pub layers: usize,
}

/// Axes of the hyperparameter search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainGrid {
    pub lambdas: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub dropouts: Vec<f64>,
    pub layer_counts: Vec<usize>,
}

impl Default for TrainGrid {
    /// The canonical 486-point grid: 3 regularisation strengths, learning
    /// rates over six decades, nine dropout rates, and one to three layers.
    fn default() -> Self {
        TrainGrid {
            lambdas: vec![0.01, 0.001, 0.0001],
            learning_rates: vec![1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
            dropouts: (0..9).map(|i| i as f64 / 10.0).collect(),
            layer_counts: vec![1, 2, 3],
        }
    }
}

impl TrainGrid {
    /// All combinations in deterministic nested order:
    /// lambda, then learning rate, then dropout, then layer count.
    pub fn combinations(&self) -> Vec<GridPointConfig> {
        let mut out =
            Vec::with_capacity(self.lambdas.len() * self.learning_rates.len());
        for &lambda in &self.lambdas {
            for &learning_rate in &self.learning_rates {
                for &dropout in &self.dropouts {
                    for &layers in &self.layer_counts {
                        out.push(GridPointConfig {
                            lambda,
                            learning_rate,
                            dropout,
                            layers,
                        });
                    }
                }
            }
        }
        out
    }
}

/// Cross-validated quality of one grid point.
#[derive(Debug, Clone, Serialize)]
pub struct GridPointResult {
    pub config: GridPointConfig,
    pub recall: f64,
    pub ndcg: f64,
    pub folds: Vec<FoldSummary>,
}

/// Every grid point's result plus the index of the winner.
#[derive(Debug, Clone, Serialize)]
pub struct GridOutcome {
    pub points: Vec<GridPointResult>,
    pub best: usize,
}

/// Pick the winning grid point: highest mean recall, ties broken by mean
/// NDCG, remaining ties by grid order.
pub fn pick_best(points: &[GridPointResult]) -> usize {
    let mut best = 0usize;
    for (i, p) in points.iter().enumerate().skip(1) {
        let b = &points[best];
        if p.recall > b.recall || (p.recall == b.recall && p.ndcg > b.ndcg) {
            best = i;
        }
    }
    best
}

/// Exhaustive hyperparameter search: one cross-validated trial per grid
/// point (all with the same seed), optionally fanned out over `jobs`
/// threads. Point order and the reported winner are deterministic.
pub fn grid_search(
    data: &TaskData,
    model_cfg: &ModelConfig,
    scorer_cfg: &ScorerConfig,
    cfg: &TrainConfig,
    grid: &TrainGrid,
    jobs: usize,
) -> Result<GridOutcome> {
    let configs = grid.combinations();
    if configs.is_empty() {
        return Err(Error::Config("the hyperparameter grid is empty".into()));
    }
    let run = |point: &GridPointConfig| -> Result<GridPointResult> {
        let mut m = model_cfg.clone();
        m.dropout = point.dropout;
        m.layers = point.layers;
        let mut t = cfg.clone();
        t.learning_rate = point.learning_rate;
        t.lambda_l2 = point.lambda;
        let trial = train_trial(data, &m, scorer_cfg, &t)?;
        Ok(GridPointResult {
            config: *point,
            recall: trial.recall_mean,
            ndcg: trial.ndcg_mean,
            folds: trial.folds,
        })
    };
    let points: Vec<GridPointResult> = if jobs <= 1 {
        configs.iter().map(run).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("could not build a {jobs}-thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            configs.par_iter().map(run).collect::<Result<_>>()
        })?
    };
    let best = pick_best(&points);
    Ok(GridOutcome { points, best })
}
