//! Compatibility scoring on top of learned node representations: plain
//! pairwise-dot scores and a learned head over Hadamard products. Both are
//! permutation invariant by construction because entity members are put in
//! canonical (ascending) order before any arithmetic.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Entity;
use crate::model::{ParamBinding, ParamId, ParamSet};
use crate::tensor::{GradientTape, Tensor, TensorId};

/// Which scoring function sits on top of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    /// Pairwise dot products; a triple scores the sum of its three pair
    /// scores.
    Pd,
    /// A two-layer perceptron over the (summed) Hadamard product of the
    /// member representations.
    Hdm,
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScorerKind::Pd => "pd",
            ScorerKind::Hdm => "hdm",
        })
    }
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pd" => Ok(ScorerKind::Pd),
            "hdm" => Ok(ScorerKind::Hdm),
            other => Err(Error::Config(format!(
                "unknown scorer '{other}' (expected pd or hdm)"
            ))),
        }
    }
}

/// Scorer hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    /// Hidden width of the learned head (HDM only).
    pub hidden: usize,
}

impl ScorerConfig {
    pub fn new(kind: ScorerKind) -> Self {
        ScorerConfig { kind, hidden: 32 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == ScorerKind::Hdm && self.hidden == 0 {
            return Err(Error::Config("scorer hidden width must be positive".into()));
        }
        Ok(())
    }
}

struct HdmHead {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// A configured scorer. HDM allocates its head weights into the shared
/// [`ParamSet`], directly after the encoder parameters, so one optimizer
/// step updates encoder and head together.
pub struct Scorer {
    kind: ScorerKind,
    head: Option<HdmHead>,
}

impl Scorer {
    pub fn new(
        config: &ScorerConfig,
        rep_dim: usize,
        params: &mut ParamSet,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let head = match config.kind {
            ScorerKind::Pd => None,
            ScorerKind::Hdm => Some(HdmHead {
                w1: params.xavier("head.w1", rep_dim, config.hidden, rng),
                b1: params.zeros("head.b1", vec![config.hidden]),
                w2: params.xavier("head.w2", config.hidden, 1, rng),
                b2: params.zeros("head.b2", vec![1]),
            }),
        };
        Ok(Scorer {
            kind: config.kind,
            head,
        })
    }

    pub fn kind(&self) -> ScorerKind {
        self.kind
    }

    /// Score one entity from representation values (no tape).
    pub fn score(&self, h: &Tensor, params: &ParamSet, entity: &Entity) -> Result<f64> {
        let nodes = entity.nodes();
        for &n in &nodes {
            if n >= h.rows() {
                return Err(Error::Contract(format!(
                    "entity member {n} is outside the {}-row representation",
                    h.rows()
                )));
            }
        }
        // Entity members are stored ascending, which fixes the evaluation
        // order below and makes every permutation of the same members score
        // bit-for-bit identically.
        match self.kind {
            ScorerKind::Pd => Ok(match nodes.as_slice() {
                [i, j] => dot(h.row(*i), h.row(*j)),
                [i, j, k] => {
                    dot(h.row(*i), h.row(*j))
                        + dot(h.row(*i), h.row(*k))
                        + dot(h.row(*j), h.row(*k))
                }
                _ => unreachable!("entities are pairs or triples"),
            }),
            ScorerKind::Hdm => {
                let mixed = match nodes.as_slice() {
                    [i, j] => hadamard(h.row(*i), h.row(*j)),
                    [i, j, k] => {
                        let mut m = hadamard(h.row(*i), h.row(*j));
                        let ik = hadamard(h.row(*i), h.row(*k));
                        let jk = hadamard(h.row(*j), h.row(*k));
                        for d in 0..m.len() {
                            m[d] = m[d] + ik[d] + jk[d];
                        }
                        m
                    }
                    _ => unreachable!("entities are pairs or triples"),
                };
                Ok(self.head_value(params, &mixed))
            }
        }
    }

    /// The learned head on a single mixed vector, computed with the same
    /// accumulation order the tape's matmul uses.
    fn head_value(&self, params: &ParamSet, mixed: &[f64]) -> f64 {
        let head = self.head.as_ref().expect("hdm scorer has a head");
        let w1 = params.tensor(head.w1);
        let b1 = params.tensor(head.b1);
        let w2 = params.tensor(head.w2);
        let b2 = params.tensor(head.b2);
        let hidden = w1.last_dim();
        let mut z = vec![0.0; hidden];
        for (d, &m) in mixed.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let row = w1.row(d);
            for (j, zj) in z.iter_mut().enumerate() {
                *zj += m * row[j];
            }
        }
        let mut out = 0.0;
        for j in 0..hidden {
            let a = (z[j] + b1.data()[j]).max(0.0);
            out += a * w2.data()[j];
        }
        out + b2.data()[0]
    }

    /// Score a batch of entities on the tape, returning a `[B]` tensor.
    /// Produces the same values as [`Scorer::score`] and lets gradients flow
    /// back into the representation (and HDM head weights).
    pub fn batch_scores(
        &self,
        tape: &mut GradientTape,
        binding: &ParamBinding,
        h: TensorId,
        entities: &[Entity],
    ) -> Result<TensorId> {
        if entities.is_empty() {
            return Err(Error::Contract("cannot score an empty batch".into()));
        }
        let arity = entities[0].arity();
        if entities.iter().any(|e| e.arity() != arity) {
            return Err(Error::Contract(
                "cannot mix pairs and triples in one score batch".into(),
            ));
        }
        let rows = h.pick(tape, entities)?;
        match self.kind {
            ScorerKind::Pd => {
                let mut total: Option<TensorId> = None;
                for (a, b) in member_pairs(arity) {
                    let prod = tape.mul(rows[a], rows[b])?;
                    let partial = tape.row_sum(prod)?;
                    total = Some(match total {
                        None => partial,
                        Some(t) => tape.add(t, partial)?,
                    });
                }
                Ok(total.expect("at least one member pair"))
            }
            ScorerKind::Hdm => {
                let mut mixed: Option<TensorId> = None;
                for (a, b) in member_pairs(arity) {
                    let prod = tape.mul(rows[a], rows[b])?;
                    mixed = Some(match mixed {
                        None => prod,
                        Some(m) => tape.add(m, prod)?,
                    });
                }
                let mixed = mixed.expect("at least one member pair");
                let head = self.head.as_ref().expect("hdm scorer has a head");
                let lin = tape.matmul(mixed, binding.id(head.w1))?;
                let lin = tape.add_row(lin, binding.id(head.b1))?;
                let act = tape.relu(lin);
                let out = tape.matmul(act, binding.id(head.w2))?;
                let out = tape.add_row(out, binding.id(head.b2))?;
                tape.row_sum(out) // [B, 1] -> [B]
            }
        }
    }

    /// Rank candidate entities by descending score. Ties break toward the
    /// lexicographically smaller entity, so rankings are deterministic.
    pub fn rank_candidates(
        &self,
        h: &Tensor,
        params: &ParamSet,
        candidates: &[Entity],
    ) -> Result<Vec<(Entity, f64)>> {
        let scored: Result<Vec<(Entity, f64)>> = candidates
            .iter()
            .map(|e| self.score(h, params, e).map(|s| (e.clone(), s)))
            .collect();
        Ok(rank_scored(scored?))
    }
}

/// Sort scored entities into ranking order: descending score, ascending
/// entity on ties.
pub fn rank_scored(mut scored: Vec<(Entity, f64)>) -> Vec<(Entity, f64)> {
    scored.sort_by(|(ea, sa), (eb, sb)| sb.total_cmp(sa).then_with(|| ea.cmp(eb)));
    scored
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn hadamard(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

/// Index pairs over entity members: one pair for pairs, three for triples.
fn member_pairs(arity: usize) -> Vec<(usize, usize)> {
    match arity {
        2 => vec![(0, 1)],
        3 => vec![(0, 1), (0, 2), (1, 2)],
        _ => unreachable!("entities are pairs or triples"),
    }
}

/// Helper trait: gather the member rows of a batch of entities from the
/// representation as `arity` tensors of shape `[B, dim]`.
trait PickRows {
    fn pick(self, tape: &mut GradientTape, entities: &[Entity]) -> Result<Vec<TensorId>>;
}

impl PickRows for TensorId {
    fn pick(self, tape: &mut GradientTape, entities: &[Entity]) -> Result<Vec<TensorId>> {
        let arity = entities[0].arity();
        let mut out = Vec::with_capacity(arity);
        for position in 0..arity {
            let indices: Vec<usize> = entities.iter().map(|e| e.nodes()[position]).collect();
            out.push(tape.select_rows(self, &indices)?);
        }
        Ok(out)
    }
}
