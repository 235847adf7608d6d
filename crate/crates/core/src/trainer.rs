//! Training objective and the episodic loop.
//!
//! Per episode: prior from labeled support subgraphs, posterior from support
//! plus labeled queries, `T` posterior samples each masking and scoring every
//! query and its negative. The loss is the margin ranking term averaged over
//! samples plus the weighted Gaussian KL and edge-mask KL.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::{AdamConfig, Noise, Tape, Var};
use crate::error::{Error, Result};
use crate::eval::{evaluate_split, EvalConfig, MetricsReport, ModelScorer};
use crate::gnn::{GraphView, SubgraphEmbedding};
use crate::kg::{enclosing_subgraph_excluding, EnclosingSubgraph, KnowledgeGraph, RelationKey};
use crate::model::{GsNp, MaskMode, ModelDims, ModelState};
use crate::np::{encode_hypothesis, sample_hypothesis, HypothesisDistribution, HypothesisSource};
use crate::task::{episode_rng, sample_task, FewShotTask, Pair, QueryNegatives, SamplerConfig};

use rand::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub margin: f64,
    pub tau: f64,
    pub k_shot: usize,
    pub neg_size: usize,
    pub mc_samples: usize,
    pub temperature: f64,
    pub w_z: f64,
    pub w_mask: f64,
    pub max_episodes: usize,
    pub seed: u64,
    pub hop_k: usize,
    pub d_edge: usize,
    pub d_z: usize,
    pub layers: usize,
    pub val_every: usize,
    pub patience: usize,
    /// 0 keeps every non-support pair as a query.
    pub queries_per_episode: usize,
    pub eval_samples: usize,
    pub n_candidates: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            margin: 1.0,
            tau: 0.7,
            k_shot: 3,
            neg_size: 1,
            mc_samples: 1,
            temperature: 1.0,
            w_z: 1.0,
            w_mask: 1.0,
            max_episodes: 1000,
            seed: 0,
            hop_k: 2,
            d_edge: 128,
            d_z: 100,
            layers: 3,
            val_every: 50,
            patience: 10,
            queries_per_episode: 0,
            eval_samples: 1,
            n_candidates: 50,
        }
    }
}

impl TrainConfig {
    pub fn keys() -> Vec<String> {
        match toml::Value::try_from(Self::default()) {
            Ok(toml::Value::Table(t)) => t.keys().cloned().collect(),
            _ => unreachable!("config serializes to a table"),
        }
    }

    /// Parses a flat TOML document, rejecting unknown keys (all of them are
    /// listed) and invalid values.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_owned()))?;
        let known: BTreeSet<String> = Self::keys().into_iter().collect();
        let unknown: Vec<&str> = table
            .keys()
            .filter(|k| !known.contains(*k))
            .map(String::as_str)
            .collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!(
                "unknown keys: {}",
                unknown.join(", ")
            )));
        }
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_owned()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Applies a `key=value` override with the value in TOML syntax (bare
    /// strings are not needed since every key is numeric).
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
        let mut table = match toml::Value::try_from(&*self) {
            Ok(toml::Value::Table(t)) => t,
            _ => unreachable!("config serializes to a table"),
        };
        let k = k.trim();
        if !table.contains_key(k) {
            return Err(Error::Config(format!("unknown keys: {k}")));
        }
        let value: toml::Table = format!("v = {}", v.trim())
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("{k}: {}", e.message())))?;
        table.insert(k.to_owned(), value["v"].clone());
        *self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{k}: {}", e.message())))?;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.margin > 0.0) {
            bad.push("margin");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            bad.push("tau");
        }
        if !(self.lr > 0.0) {
            bad.push("lr");
        }
        if !(self.temperature > 0.0) {
            bad.push("temperature");
        }
        for (name, v) in [
            ("k_shot", self.k_shot),
            ("mc_samples", self.mc_samples),
            ("d_edge", self.d_edge),
            ("d_z", self.d_z),
            ("layers", self.layers),
            ("val_every", self.val_every),
            ("eval_samples", self.eval_samples),
            ("hop_k", self.hop_k),
        ] {
            if v == 0 {
                bad.push(name);
            }
        }
        if !(self.w_z >= 0.0) {
            bad.push("w_z");
        }
        if !(self.w_mask >= 0.0) {
            bad.push("w_mask");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid values for: {}",
                bad.join(", ")
            )))
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d_edge: self.d_edge,
            d_z: self.d_z,
            layers: self.layers,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            shots: self.k_shot,
            negatives: self.neg_size,
            max_queries: (self.queries_per_episode > 0).then_some(self.queries_per_episode),
        }
    }

    pub fn eval(&self) -> EvalConfig {
        EvalConfig {
            hop_k: self.hop_k,
            seed: self.seed,
            samples: self.eval_samples,
        }
    }
}

/// Closed-form `KL(q ‖ p)` between the diagonal Gaussians.
pub fn gaussian_kl(
    tape: &mut Tape,
    q: &HypothesisDistribution,
    p: &HypothesisDistribution,
) -> Result<Var> {
    tape.gaussian_kl(q.mu, q.sigma, p.mu, p.sigma)
}

/// Bernoulli KL of every edge probability against `tau`, summed.
pub fn mask_kl(tape: &mut Tape, probs: Var, tau: f64) -> Result<Var> {
    tape.bernoulli_kl(probs, tau)
}

/// `Σ max(0, γ + s⁻ − s⁺)` over aligned pairs.
pub fn margin_ranking_loss(tape: &mut Tape, pos: &[Var], neg: &[Var], gamma: f64) -> Result<Var> {
    if pos.is_empty() || pos.len() != neg.len() {
        return Err(Error::InvalidArgument(format!(
            "margin ranking needs aligned nonempty pairs, got {} and {}",
            pos.len(),
            neg.len()
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "margin must be positive, got {gamma}"
        )));
    }
    let terms = pos
        .iter()
        .zip(neg)
        .map(|(&p, &n)| {
            let d = tape.sub(n, p)?;
            let d = tape.add_scalar(d, gamma);
            Ok(tape.relu(d))
        })
        .collect::<Result<Vec<_>>>()?;
    tape.sum_n(&terms)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub ranking: f64,
    pub kl_z: f64,
    pub kl_mask: f64,
    pub relation: String,
    pub shots: usize,
    pub support_edges: usize,
    /// Edges of all scored query subgraphs, the `n` of the dropped mask-KL
    /// constant.
    pub query_edges: usize,
    pub encoder_invocations: usize,
}

/// A recorded episode forward pass.
pub struct EpisodeGraph {
    pub tape: Tape,
    pub loss: Var,
    pub report: LossReport,
}

fn extract(
    kg: &KnowledgeGraph,
    pairs: &[Pair],
    k: usize,
    target: &RelationKey,
) -> Result<Vec<EnclosingSubgraph>> {
    pairs
        .iter()
        .map(|p| enclosing_subgraph_excluding(kg, p.head, p.tail, k, Some(target)))
        .collect()
}

/// Builds the full training objective of one episode on a fresh tape.
/// All randomness comes from `noise`.
pub fn episode_forward(
    model: &GsNp,
    view: &GraphView<'_>,
    task: &FewShotTask,
    cfg: &TrainConfig,
    noise: &mut Noise,
) -> Result<EpisodeGraph> {
    let negs = match &task.query_negatives {
        QueryNegatives::Triples(n) => n,
        QueryNegatives::Candidates(_) => {
            return Err(Error::InvalidArgument(
                "training episodes need corrupted query negatives".into(),
            ))
        }
    };
    let target = task.target_key();
    let kg = view.kg;
    let support = extract(kg, &task.support, cfg.hop_k, &target)?;
    let support_neg = extract(kg, &task.support_negatives, cfg.hop_k, &target)?;
    let mut scored_pos = Vec::new();
    let mut scored_neg = Vec::new();
    for (q, ns) in task.queries.iter().zip(negs) {
        for n in ns {
            scored_pos.push(*q);
            scored_neg.push(*n);
        }
    }
    let pos_subs = extract(kg, &scored_pos, cfg.hop_k, &target)?;
    let neg_subs = extract(kg, &scored_neg, cfg.hop_k, &target)?;

    // Each subgraph is encoded once; the posterior reuses the support
    // embeddings of the prior.
    let mut tape = Tape::new();
    let labeled: Vec<(&EnclosingSubgraph, bool)> = support
        .iter()
        .map(|s| (s, true))
        .chain(support_neg.iter().map(|s| (s, false)))
        .chain(pos_subs.iter().map(|s| (s, true)))
        .chain(neg_subs.iter().map(|s| (s, false)))
        .collect();
    let embs = labeled
        .iter()
        .map(|(s, _)| model.embed(&mut tape, view, s))
        .collect::<Result<Vec<_>>>()?;
    let items: Vec<(&SubgraphEmbedding, bool)> = embs
        .iter()
        .zip(&labeled)
        .map(|(e, &(_, y))| (e, y))
        .collect();
    let n_support = support.len() + support_neg.len();
    let prior = encode_hypothesis(
        &mut tape,
        &model.store,
        &model.np,
        &items[..n_support],
        HypothesisSource::Prior,
    )?;
    let posterior = encode_hypothesis(
        &mut tape,
        &model.store,
        &model.np,
        &items,
        HypothesisSource::Posterior,
    )?;
    let kl_z = gaussian_kl(&mut tape, &posterior, &prior)?;

    let samples = cfg.mc_samples;
    let mut rankings = Vec::with_capacity(samples);
    let mut mask_terms = Vec::new();
    for _ in 0..samples {
        let z = sample_hypothesis(&mut tape, &posterior, noise)?;
        let mut pos_scores = Vec::with_capacity(pos_subs.len());
        let mut neg_scores = Vec::with_capacity(neg_subs.len());
        for (i, sub) in pos_subs.iter().chain(&neg_subs).enumerate() {
            let mode = MaskMode::Sampled {
                temperature: cfg.temperature,
                noise: &mut *noise,
            };
            let sq = model.score_query(&mut tape, view, sub, &z, mode)?;
            if i < pos_subs.len() {
                pos_scores.push(sq.score);
            } else {
                neg_scores.push(sq.score);
            }
            mask_terms.push(mask_kl(&mut tape, sq.probs.probs, cfg.tau)?);
        }
        rankings.push(margin_ranking_loss(
            &mut tape,
            &pos_scores,
            &neg_scores,
            cfg.margin,
        )?);
    }
    let inv_t = 1.0 / samples as f64;
    let ranking = tape.sum_n(&rankings)?;
    let ranking = tape.scale(ranking, inv_t);
    let kl_mask = tape.sum_n(&mask_terms)?;
    let kl_mask = tape.scale(kl_mask, inv_t);
    let wz = tape.scale(kl_z, cfg.w_z);
    let wm = tape.scale(kl_mask, cfg.w_mask);
    let loss = tape.sum_n(&[ranking, wz, wm])?;

    let edges = |subs: &[EnclosingSubgraph]| subs.iter().map(|s| s.num_edges()).sum::<usize>();
    let query_edges = edges(&pos_subs) + edges(&neg_subs);
    let report = LossReport {
        total: tape.value(loss).item(),
        ranking: tape.value(ranking).item(),
        kl_z: tape.value(kl_z).item(),
        kl_mask: tape.value(kl_mask).item(),
        relation: task.relation.clone(),
        shots: task.shots(),
        support_edges: edges(&support) + edges(&support_neg),
        query_edges,
        encoder_invocations: tape.encoder_invocations(),
    };
    Ok(EpisodeGraph { tape, loss, report })
}

/// Forward pass only.
pub fn episode_loss(
    model: &GsNp,
    view: &GraphView<'_>,
    task: &FewShotTask,
    cfg: &TrainConfig,
    noise: &mut Noise,
) -> Result<LossReport> {
    Ok(episode_forward(model, view, task, cfg, noise)?.report)
}

/// One relation's training pool.
#[derive(Clone, Debug)]
pub struct RelationPool {
    pub relation: String,
    pub pairs: Vec<Pair>,
}

pub struct TrainingData<'a> {
    /// Background graph with inverse edges.
    pub graph: &'a KnowledgeGraph,
    /// Relation keys given initial features; must cover every relation
    /// that evaluation graphs will present.
    pub vocabulary: Vec<RelationKey>,
    pub relations: Vec<RelationPool>,
    /// Validation graph (with inverse edges) and its tasks.
    pub valid: Option<(&'a KnowledgeGraph, Vec<FewShotTask>)>,
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub episode: usize,
    pub ranking: f64,
    pub kl_z: f64,
    pub kl_mask: f64,
    pub val_mrr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub episode: usize,
    pub val_mrr: Option<f64>,
    pub config: TrainConfig,
    pub model: ModelState,
}

pub const CHECKPOINT_FORMAT: &str = "gsnp-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn new(model: &GsNp, config: &TrainConfig, episode: usize, val_mrr: Option<f64>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            episode,
            val_mrr,
            config: config.clone(),
            model: model.state(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "{} is {} v{}, expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION}",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        Ok(ck)
    }

    pub fn into_model(self) -> Result<(GsNp, TrainConfig)> {
        Ok((GsNp::from_state(self.model)?, self.config))
    }
}

pub struct TrainOutcome {
    /// Model with the best validation MRR (the final one without validation).
    pub best: Checkpoint,
    pub last: GsNp,
    pub history: Vec<ValidationRecord>,
    pub episodes: usize,
    pub stopped_early: bool,
}

/// Relation keys of the given graphs, first occurrence order.
pub fn relation_vocabulary(graphs: &[&KnowledgeGraph]) -> Vec<RelationKey> {
    let mut seen = BTreeSet::new();
    graphs
        .iter()
        .flat_map(|g| g.relation_keys())
        .filter(|k| seen.insert((*k).clone()))
        .cloned()
        .collect()
}

fn validate(
    model: &GsNp,
    data: &TrainingData<'_>,
    cfg: &TrainConfig,
) -> Result<Option<MetricsReport>> {
    match &data.valid {
        Some((kg, tasks)) if !tasks.is_empty() => {
            let scorer = ModelScorer::new(model, kg, cfg.eval());
            Ok(Some(evaluate_split(&scorer, tasks)?))
        }
        _ => Ok(None),
    }
}

/// Runs one optimizer step on `task` and returns its report.
pub fn train_step(
    model: &mut GsNp,
    graph: &KnowledgeGraph,
    task: &FewShotTask,
    cfg: &TrainConfig,
    noise: &mut Noise,
    episode: usize,
) -> Result<LossReport> {
    let view = model.view(graph);
    let ep = episode_forward(model, &view, task, cfg, noise)?;
    let r = &ep.report;
    if ![r.total, r.ranking, r.kl_z, r.kl_mask]
        .iter()
        .all(|v| v.is_finite())
    {
        return Err(Error::NonFinite {
            episode,
            relation: task.relation.clone(),
            detail: format!(
                "ranking {} kl_z {} kl_mask {}",
                r.ranking, r.kl_z, r.kl_mask
            ),
        });
    }
    let grads = ep.tape.backward(ep.loss)?.params(&ep.tape);
    if grads.iter().any(|(_, g)| g.iter().any(|x| !x.is_finite())) {
        return Err(Error::NonFinite {
            episode,
            relation: task.relation.clone(),
            detail: "non-finite gradient".into(),
        });
    }
    model.store.adam_step(&grads, &cfg.adam())?;
    Ok(ep.report)
}

/// Samples relation and task for `episode` deterministically from the seed.
pub fn sample_episode(
    data: &TrainingData<'_>,
    eligible: &[usize],
    cfg: &TrainConfig,
    episode: usize,
) -> Result<FewShotTask> {
    let mut rng = episode_rng(cfg.seed, 2 * episode as u64);
    let pool = &data.relations[eligible[rng.random_range(0..eligible.len())]];
    sample_task(
        data.graph,
        episode,
        &pool.relation,
        &pool.pairs,
        &cfg.sampler(),
        &mut rng,
    )
}

pub fn episode_noise(cfg: &TrainConfig, episode: usize) -> Noise {
    Noise::from_rng(episode_rng(cfg.seed, 2 * episode as u64 + 1))
}

/// Episodic training with periodic validation and early stopping on MRR.
/// `on_record` sees every validation record as it is produced.
pub fn train(
    data: &TrainingData<'_>,
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&ValidationRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let eligible: Vec<usize> = data
        .relations
        .iter()
        .enumerate()
        .filter(|(_, r)| r.pairs.len() > cfg.k_shot)
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no training relation has more than {} pairs",
            cfg.k_shot
        )));
    }
    let mut model = GsNp::new(cfg.dims(), &data.vocabulary, cfg.seed)?;
    let mut history = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut since_best = 0;
    let mut acc = [0.0; 3];
    let mut acc_n = 0usize;
    let mut stopped_early = false;
    let mut episodes = 0;
    for episode in 0..cfg.max_episodes {
        let task = sample_episode(data, &eligible, cfg, episode)?;
        let mut noise = episode_noise(cfg, episode);
        let r = train_step(&mut model, data.graph, &task, cfg, &mut noise, episode)?;
        episodes = episode + 1;
        acc[0] += r.ranking;
        acc[1] += r.kl_z;
        acc[2] += r.kl_mask;
        acc_n += 1;
        let last = episodes == cfg.max_episodes;
        if episodes % cfg.val_every != 0 && !last {
            continue;
        }
        let metrics = validate(&model, data, cfg)?;
        let n = acc_n as f64;
        let record = ValidationRecord {
            episode: episodes,
            ranking: acc[0] / n,
            kl_z: acc[1] / n,
            kl_mask: acc[2] / n,
            val_mrr: metrics.as_ref().map(|m| m.mrr),
        };
        acc = [0.0; 3];
        acc_n = 0;
        on_record(&record)?;
        history.push(record);
        // Ties replace the kept checkpoint (later models have seen more
        // episodes) but only a strict gain resets the patience counter.
        let prev = best
            .as_ref()
            .and_then(|b| b.val_mrr)
            .unwrap_or(f64::NEG_INFINITY);
        let (improved, tied) = match metrics.as_ref() {
            Some(m) => (m.mrr > prev, m.mrr == prev),
            None => (true, false),
        };
        if improved || tied || best.is_none() {
            best = Some(Checkpoint::new(
                &model,
                cfg,
                episodes,
                metrics.map(|m| m.mrr),
            ));
        }
        if improved {
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience && cfg.patience > 0 {
                stopped_early = true;
                break;
            }
        }
    }
    let best = best.unwrap_or_else(|| Checkpoint::new(&model, cfg, episodes, None));
    Ok(TrainOutcome {
        best,
        last: model,
        history,
        episodes,
        stopped_early,
    })
}
