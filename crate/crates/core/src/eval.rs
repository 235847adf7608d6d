//! Ranking evaluation: every query's true tail is ranked against its
//! candidate tails; MRR and Hit@N are aggregated overall and per task.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diff::{Noise, Tape, Tensor};
use crate::error::{Error, Result};
use crate::kg::{enclosing_subgraph_excluding, EntityId, KnowledgeGraph};
use crate::model::{GsNp, MaskMode};
use crate::np::{sample_hypothesis, HypothesisSample, HypothesisSource};
use crate::task::{episode_rng, FewShotTask, Pair, QueryNegatives};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub hop_k: usize,
    pub seed: u64,
    /// Prior samples whose scores are averaged.
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingResult {
    pub task: usize,
    pub relation: String,
    pub query: Pair,
    pub rank: usize,
    /// True tail first, then the candidates in order.
    pub scores: Vec<f64>,
}

/// `1 + #(strictly greater) + ⌊#ties / 2⌋`.
pub fn mid_rank(true_score: f64, others: &[f64]) -> usize {
    let greater = others.iter().filter(|&&s| s > true_score).count();
    let ties = others.iter().filter(|&&s| s == true_score).count();
    1 + greater + ties / 2
}

impl RankingResult {
    pub fn from_scores(task: &FewShotTask, query: Pair, scores: Vec<f64>) -> Result<Self> {
        let (first, rest) = scores
            .split_first()
            .ok_or_else(|| Error::InvalidArgument("no score for the true tail".into()))?;
        Ok(Self {
            task: task.id,
            relation: task.relation.clone(),
            query,
            rank: mid_rank(*first, rest),
            scores,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: usize,
    pub relation: String,
    pub mrr: f64,
    pub hit1: f64,
    pub hit5: f64,
    pub hit10: f64,
    pub n_queries: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mrr: f64,
    pub hit1: f64,
    pub hit5: f64,
    pub hit10: f64,
    pub n_queries: usize,
    pub per_task: Vec<TaskMetrics>,
}

struct Sums {
    rr: f64,
    hits: [usize; 3],
    n: usize,
}

impl Sums {
    fn new() -> Self {
        Self {
            rr: 0.0,
            hits: [0; 3],
            n: 0,
        }
    }

    fn add(&mut self, rank: usize) {
        self.rr += 1.0 / rank as f64;
        for (h, n) in self.hits.iter_mut().zip([1, 5, 10]) {
            if rank <= n {
                *h += 1;
            }
        }
        self.n += 1;
    }

    fn ratio(&self, k: usize) -> f64 {
        self.hits[k] as f64 / self.n as f64
    }
}

pub fn compute_metrics(results: &[RankingResult]) -> Result<MetricsReport> {
    if results.is_empty() {
        return Err(Error::InvalidArgument(
            "no ranking results to aggregate".into(),
        ));
    }
    let mut all = Sums::new();
    let mut per: Vec<(usize, String, Sums)> = Vec::new();
    for r in results {
        if r.rank == 0 {
            return Err(Error::InvalidArgument("ranks are 1-based".into()));
        }
        all.add(r.rank);
        match per.iter_mut().find(|(t, _, _)| *t == r.task) {
            Some((_, _, s)) => s.add(r.rank),
            None => {
                let mut s = Sums::new();
                s.add(r.rank);
                per.push((r.task, r.relation.clone(), s));
            }
        }
    }
    let per_task = per
        .into_iter()
        .map(|(task, relation, s)| TaskMetrics {
            task,
            relation,
            mrr: s.rr / s.n as f64,
            hit1: s.ratio(0),
            hit5: s.ratio(1),
            hit10: s.ratio(2),
            n_queries: s.n,
        })
        .collect();
    Ok(MetricsReport {
        mrr: all.rr / all.n as f64,
        hit1: all.ratio(0),
        hit5: all.ratio(1),
        hit10: all.ratio(2),
        n_queries: all.n,
        per_task,
    })
}

impl MetricsReport {
    /// Tab-separated rows, per task then overall, for diffing runs.
    pub fn table(&self) -> String {
        let mut out = String::from("task\trelation\tn\tmrr\thit1\thit5\thit10\n");
        for t in &self.per_task {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\n",
                t.task, t.relation, t.n_queries, t.mrr, t.hit1, t.hit5, t.hit10
            ));
        }
        out.push_str(&format!(
            "all\t-\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\n",
            self.n_queries, self.mrr, self.hit1, self.hit5, self.hit10
        ));
        out
    }
}

/// Anything that can score a task's queries against their candidates.
pub trait Scorer: Sync {
    /// Per query: the true tail's score followed by each candidate's.
    fn score_task(&self, task: &FewShotTask) -> Result<Vec<Vec<f64>>>;
}

fn candidates(task: &FewShotTask) -> Result<&[Vec<EntityId>]> {
    match &task.query_negatives {
        QueryNegatives::Candidates(c) if c.len() == task.queries.len() => Ok(c),
        QueryNegatives::Candidates(_) => Err(Error::InvalidArgument(format!(
            "task `{}` has mismatched candidate lists",
            task.relation
        ))),
        QueryNegatives::Triples(_) => Err(Error::InvalidArgument(format!(
            "task `{}` carries no candidate pools",
            task.relation
        ))),
    }
}

pub fn rank_task(scorer: &dyn Scorer, task: &FewShotTask) -> Result<Vec<RankingResult>> {
    let cands = candidates(task)?;
    let scores = scorer.score_task(task)?;
    if scores.len() != task.queries.len() {
        return Err(Error::InvalidArgument(
            "scorer returned the wrong number of queries".into(),
        ));
    }
    task.queries
        .iter()
        .zip(scores)
        .zip(cands)
        .map(|((&q, s), c)| {
            if s.len() != c.len() + 1 {
                return Err(Error::InvalidArgument(
                    "scorer returned the wrong number of candidates".into(),
                ));
            }
            RankingResult::from_scores(task, q, s)
        })
        .collect()
}

pub fn evaluate_split(scorer: &dyn Scorer, tasks: &[FewShotTask]) -> Result<MetricsReport> {
    let mut results = Vec::new();
    for t in tasks {
        results.extend(rank_task(scorer, t)?);
    }
    compute_metrics(&results)
}

/// Scores with a trained model: per task, prior samples from the support
/// set, then every candidate subgraph masked by its expected mask.
pub struct ModelScorer<'a> {
    pub model: &'a GsNp,
    pub graph: &'a KnowledgeGraph,
    pub cfg: EvalConfig,
}

impl<'a> ModelScorer<'a> {
    pub fn new(model: &'a GsNp, graph: &'a KnowledgeGraph, cfg: EvalConfig) -> Self {
        Self { model, graph, cfg }
    }

    /// Prior hypothesis samples of `task` (noise seeded by the task id) and
    /// the number of encoder runs spent.
    pub fn prior_samples(&self, task: &FewShotTask) -> Result<(Vec<Tensor>, usize)> {
        let view = self.model.view(self.graph);
        let target = task.target_key();
        let k = self.cfg.hop_k;
        let extract =
            |p: &Pair| enclosing_subgraph_excluding(self.graph, p.head, p.tail, k, Some(&target));
        let pos = task
            .support
            .iter()
            .map(extract)
            .collect::<Result<Vec<_>>>()?;
        let neg = task
            .support_negatives
            .iter()
            .map(extract)
            .collect::<Result<Vec<_>>>()?;
        let items: Vec<_> = pos
            .iter()
            .map(|s| (s, true))
            .chain(neg.iter().map(|s| (s, false)))
            .collect();
        let mut tape = Tape::new();
        let prior = self
            .model
            .hypothesis(&mut tape, &view, &items, HypothesisSource::Prior)?;
        let mut noise = Noise::from_rng(episode_rng(self.cfg.seed, task.id as u64));
        let zs = (0..self.cfg.samples.max(1))
            .map(|_| {
                let z = sample_hypothesis(&mut tape, &prior, &mut noise)?.z;
                Ok(tape.value(z).clone())
            })
            .collect::<Result<_>>()?;
        Ok((zs, tape.encoder_invocations()))
    }

    /// Mean score of `(head, tail)` over the hypothesis samples, with the
    /// encoder runs spent.
    pub fn score_pair(
        &self,
        task: &FewShotTask,
        pair: Pair,
        zs: &[Tensor],
    ) -> Result<(f64, usize)> {
        let view = self.model.view(self.graph);
        let sub = enclosing_subgraph_excluding(
            self.graph,
            pair.head,
            pair.tail,
            self.cfg.hop_k,
            Some(&task.target_key()),
        )?;
        let mut tape = Tape::new();
        let mut total = 0.0;
        for z in zs {
            let sample = HypothesisSample {
                z: tape.leaf(z.clone()),
                epsilon: Vec::new(),
            };
            let sq = self
                .model
                .score_query(&mut tape, &view, &sub, &sample, MaskMode::Expected)?;
            total += tape.value(sq.score).item();
        }
        Ok((total / zs.len() as f64, tape.encoder_invocations()))
    }

    /// Ranks one query's true tail among `candidates`.
    pub fn rank_query(
        &self,
        task: &FewShotTask,
        query: Pair,
        candidates: &[EntityId],
        zs: &[Tensor],
    ) -> Result<(RankingResult, usize)> {
        let tails: Vec<EntityId> = std::iter::once(query.tail)
            .chain(candidates.iter().copied())
            .collect();
        let scored = tails
            .par_iter()
            .map(|&t| self.score_pair(task, Pair::new(query.head, t), zs))
            .collect::<Result<Vec<_>>>()?;
        let calls = scored.iter().map(|s| s.1).sum();
        let scores = scored.into_iter().map(|s| s.0).collect();
        Ok((RankingResult::from_scores(task, query, scores)?, calls))
    }

    /// Scores of every query with the total encoder runs of the task.
    pub fn score_task_traced(&self, task: &FewShotTask) -> Result<(Vec<Vec<f64>>, usize)> {
        let cands = candidates(task)?;
        let (zs, mut calls) = self.prior_samples(task)?;
        let ranked = task
            .queries
            .par_iter()
            .zip(cands)
            .map(|(&q, c)| self.rank_query(task, q, c, &zs))
            .collect::<Result<Vec<_>>>()?;
        let mut scores = Vec::with_capacity(ranked.len());
        for (r, c) in ranked {
            calls += c;
            scores.push(r.scores);
        }
        Ok((scores, calls))
    }
}

impl Scorer for ModelScorer<'_> {
    fn score_task(&self, task: &FewShotTask) -> Result<Vec<Vec<f64>>> {
        Ok(self.score_task_traced(task)?.0)
    }
}
