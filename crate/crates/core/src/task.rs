//! Few-shot episodes: support/query splits, corrupted negatives and
//! evaluation candidate pools.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationKey};

/// Seeded stream driving every sampling decision of one episode.
pub type EpisodeRng = ChaCha8Rng;

/// Independent stream `index` derived from a master seed.
pub fn episode_rng(seed: u64, index: u64) -> EpisodeRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A (head, tail) pair of a task relation. The relation itself lives on the
/// task because it may be absent from the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pair {
    pub head: EntityId,
    pub tail: EntityId,
}

impl Pair {
    pub fn new(head: EntityId, tail: EntityId) -> Self {
        Self { head, tail }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum QueryNegatives {
    /// Corrupted pairs per query (training).
    Triples(Vec<Vec<Pair>>),
    /// Candidate tails per query (evaluation).
    Candidates(Vec<Vec<EntityId>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FewShotTask {
    pub id: usize,
    pub relation: String,
    pub support: Vec<Pair>,
    /// `n` negatives per support pair, grouped by support pair.
    pub support_negatives: Vec<Pair>,
    pub queries: Vec<Pair>,
    pub query_negatives: QueryNegatives,
}

impl FewShotTask {
    pub fn shots(&self) -> usize {
        self.support.len()
    }

    pub fn target_key(&self) -> RelationKey {
        RelationKey::forward(self.relation.clone())
    }
}

/// Known true pairs of `relation`: those given plus any already stored in
/// the graph under that name.
pub fn known_positives(kg: &KnowledgeGraph, relation: &str, given: &[Pair]) -> HashSet<Pair> {
    let mut set: HashSet<Pair> = given.iter().copied().collect();
    if let Some(r) = kg.relation_id(&RelationKey::forward(relation)) {
        set.extend(
            kg.triples()
                .iter()
                .filter(|t| t.relation == r)
                .map(|t| Pair::new(t.head, t.tail)),
        );
    }
    set
}

/// Entities within two hops of any endpoint of `pairs`, in id order.
pub fn local_pool(kg: &KnowledgeGraph, pairs: &[Pair]) -> Result<Vec<EntityId>> {
    let mut pool = BTreeSet::new();
    for p in pairs {
        for e in [p.head, p.tail] {
            pool.extend(kg.bfs_ball(e, 2)?.into_keys());
        }
    }
    Ok(pool.into_iter().collect())
}

/// Replaces the head or the tail (fair coin) of `pair` by a pool entity so
/// that the result is not a known positive. Falls back to the other side
/// when the chosen side has no valid replacement.
pub fn corrupt_triple(
    pair: Pair,
    pool: &[EntityId],
    positives: &HashSet<Pair>,
    rng: &mut EpisodeRng,
) -> Result<Pair> {
    let corrupt_head = rng.random_bool(0.5);
    let options = |head_side: bool| -> Vec<Pair> {
        pool.iter()
            .map(|&e| {
                if head_side {
                    Pair::new(e, pair.tail)
                } else {
                    Pair::new(pair.head, e)
                }
            })
            .filter(|c| *c != pair && !positives.contains(c))
            .collect()
    };
    let mut choices = options(corrupt_head);
    if choices.is_empty() {
        choices = options(!corrupt_head);
    }
    choices.choose(rng).copied().ok_or_else(|| {
        Error::PoolExhausted(format!(
            "no corruption of ({}, {}) avoids the known positives",
            pair.head.0, pair.tail.0
        ))
    })
}

/// Corrupts with the local pool first and the whole entity set second.
fn corrupt_with_fallback(
    kg: &KnowledgeGraph,
    pair: Pair,
    local: &[EntityId],
    positives: &HashSet<Pair>,
    rng: &mut EpisodeRng,
) -> Result<Pair> {
    match corrupt_triple(pair, local, positives, rng) {
        Err(Error::PoolExhausted(_)) => {
            let all: Vec<EntityId> = kg.entities().collect();
            corrupt_triple(pair, &all, positives, rng)
        }
        other => other,
    }
}

/// `n_cand` distinct tails from `pool` that neither equal the true tail nor
/// form a known positive with the query head.
pub fn build_eval_candidates(
    query: Pair,
    pool: &[EntityId],
    positives: &HashSet<Pair>,
    n_cand: usize,
    rng: &mut EpisodeRng,
) -> Result<Vec<EntityId>> {
    let mut valid: Vec<EntityId> = pool
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|&e| e != query.tail && !positives.contains(&Pair::new(query.head, e)))
        .collect();
    if valid.len() < n_cand {
        return Err(Error::PoolExhausted(format!(
            "{} candidates requested, {} available",
            n_cand,
            valid.len()
        )));
    }
    valid.shuffle(rng);
    valid.truncate(n_cand);
    Ok(valid)
}

#[derive(Clone, Copy, Debug)]
pub struct SamplerConfig {
    pub shots: usize,
    /// Negatives per support pair.
    pub negatives: usize,
    /// Upper bound on queries per episode; `None` keeps all remaining pairs.
    pub max_queries: Option<usize>,
}

/// Shuffles the relation's pairs, takes the first `shots` as support and
/// the rest as queries, and attaches corrupted negatives (one per query).
pub fn sample_task(
    kg: &KnowledgeGraph,
    id: usize,
    relation: &str,
    pairs: &[Pair],
    cfg: &SamplerConfig,
    rng: &mut EpisodeRng,
) -> Result<FewShotTask> {
    if cfg.shots == 0 {
        return Err(Error::InvalidArgument(
            "shot count must be at least 1".into(),
        ));
    }
    if pairs.len() < cfg.shots + 1 {
        return Err(Error::InvalidArgument(format!(
            "relation `{relation}` has {} pairs, {} needed for {}-shot episodes",
            pairs.len(),
            cfg.shots + 1,
            cfg.shots
        )));
    }
    let mut order = pairs.to_vec();
    order.shuffle(rng);
    let support = order[..cfg.shots].to_vec();
    let mut queries = order[cfg.shots..].to_vec();
    if let Some(m) = cfg.max_queries {
        queries.truncate(m.max(1));
    }
    let positives = known_positives(kg, relation, pairs);
    let local = local_pool(kg, &order)?;
    let mut support_negatives = Vec::with_capacity(cfg.shots * cfg.negatives);
    for &p in &support {
        for _ in 0..cfg.negatives {
            support_negatives.push(corrupt_with_fallback(kg, p, &local, &positives, rng)?);
        }
    }
    let query_negatives = queries
        .iter()
        .map(|&q| Ok(vec![corrupt_with_fallback(kg, q, &local, &positives, rng)?]))
        .collect::<Result<_>>()?;
    Ok(FewShotTask {
        id,
        relation: relation.to_owned(),
        support,
        support_negatives,
        queries,
        query_negatives: QueryNegatives::Triples(query_negatives),
    })
}

/// Name-level triple as stored in task files.
pub type NamedTriple = (String, String, String);

/// One record of a task file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub relation: String,
    pub support: Vec<NamedTriple>,
    pub queries: Vec<NamedTriple>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<Vec<String>>>,
}

impl TaskRecord {
    fn check_relation(&self) -> Result<()> {
        for t in self.support.iter().chain(&self.queries) {
            if t.1 != self.relation {
                return Err(Error::InvalidArgument(format!(
                    "task `{}` contains a triple of relation `{}`",
                    self.relation, t.1
                )));
            }
        }
        Ok(())
    }

    fn resolve_pairs(kg: &KnowledgeGraph, ts: &[NamedTriple]) -> Result<Vec<Pair>> {
        ts.iter()
            .map(|(h, _, t)| Ok(Pair::new(kg.require_entity(h)?, kg.require_entity(t)?)))
            .collect()
    }

    /// Every pair of the record (support first), resolved against `kg`.
    pub fn pairs(&self, kg: &KnowledgeGraph) -> Result<Vec<Pair>> {
        self.check_relation()?;
        let mut v = Self::resolve_pairs(kg, &self.support)?;
        v.extend(Self::resolve_pairs(kg, &self.queries)?);
        Ok(v)
    }

    /// Builds an evaluation task using the first `shots` support triples.
    /// Support negatives are drawn from `rng`; candidates come from the
    /// record when present and are sampled from the graph otherwise.
    pub fn to_eval_task(
        &self,
        kg: &KnowledgeGraph,
        id: usize,
        shots: usize,
        negatives: usize,
        n_candidates: usize,
        rng: &mut EpisodeRng,
    ) -> Result<FewShotTask> {
        self.check_relation()?;
        if shots == 0 || shots > self.support.len() {
            return Err(Error::InvalidArgument(format!(
                "task `{}` offers {} support triples, {shots} requested",
                self.relation,
                self.support.len()
            )));
        }
        if self.queries.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "task `{}` has no queries",
                self.relation
            )));
        }
        let support = Self::resolve_pairs(kg, &self.support[..shots])?;
        let queries = Self::resolve_pairs(kg, &self.queries)?;
        let all: Vec<Pair> = Self::resolve_pairs(kg, &self.support)?
            .into_iter()
            .chain(queries.iter().copied())
            .collect();
        let positives = known_positives(kg, &self.relation, &all);
        let local = local_pool(kg, &support)?;
        let mut support_negatives = Vec::new();
        for &p in &support {
            for _ in 0..negatives {
                support_negatives.push(corrupt_with_fallback(kg, p, &local, &positives, rng)?);
            }
        }
        let candidates = match &self.candidates {
            Some(c) => {
                if c.len() != queries.len() {
                    return Err(Error::InvalidArgument(format!(
                        "task `{}` lists candidates for {} of {} queries",
                        self.relation,
                        c.len(),
                        queries.len()
                    )));
                }
                c.iter()
                    .map(|list| list.iter().map(|n| kg.require_entity(n)).collect())
                    .collect::<Result<Vec<Vec<_>>>>()?
            }
            None => {
                let pool: Vec<EntityId> = kg.entities().collect();
                queries
                    .iter()
                    .map(|&q| build_eval_candidates(q, &pool, &positives, n_candidates, rng))
                    .collect::<Result<_>>()?
            }
        };
        Ok(FewShotTask {
            id,
            relation: self.relation.clone(),
            support,
            support_negatives,
            queries,
            query_negatives: QueryNegatives::Candidates(candidates),
        })
    }
}

pub fn read_task_file(path: impl AsRef<Path>) -> Result<Vec<TaskRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_task_file(path: impl AsRef<Path>, records: &[TaskRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(records).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
