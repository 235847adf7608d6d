//! Dataset bundles on disk and the two ways of producing them: an
//! inductive split of a raw triple file, and a planted-rule generator.
//!
//! Bundle layout:
//! ```text
//! bg.tsv              background graph seen during training
//! ind_test.tsv        triples touching held-out entities
//! tasks/train.json    training relations with their pairs
//! tasks/valid.json    validation tasks with candidates
//! tasks/test.json     test tasks with candidates
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{
    add_inverse_edges, enclosing_subgraph, load_triples, merge_graphs, write_triples, EntityId,
    GraphBuilder, KnowledgeGraph, RelationKey, TripleFormat,
};
use crate::task::{
    build_eval_candidates, known_positives, read_task_file, write_task_file, FewShotTask, Pair,
    TaskRecord,
};
use crate::trainer::{
    relation_vocabulary, train, RelationPool, TrainConfig, TrainOutcome, TrainingData,
    ValidationRecord,
};

#[derive(Clone, Debug)]
pub struct Bundle {
    pub bg: KnowledgeGraph,
    pub ind_test: KnowledgeGraph,
    pub train: Vec<TaskRecord>,
    pub valid: Vec<TaskRecord>,
    pub test: Vec<TaskRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!(
                "unknown split `{s}` (expected train, valid or test)"
            ))),
        }
    }
}

impl Bundle {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let bg = load_triples(dir.join("bg.tsv"), TripleFormat::Tsv)?;
        let ind_path = dir.join("ind_test.tsv");
        let ind_test = match fs::metadata(&ind_path) {
            Ok(m) if m.len() > 0 => load_triples(&ind_path, TripleFormat::Tsv)?,
            _ => KnowledgeGraph::from_triples([]),
        };
        let tasks = |name: &str| -> Result<Vec<TaskRecord>> {
            let p = dir.join("tasks").join(format!("{name}.json"));
            if p.exists() {
                read_task_file(p)
            } else {
                Ok(Vec::new())
            }
        };
        Ok(Self {
            bg,
            ind_test,
            train: tasks("train")?,
            valid: tasks("valid")?,
            test: tasks("test")?,
        })
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let tasks = dir.join("tasks");
        fs::create_dir_all(&tasks).map_err(|e| Error::io(&tasks, e))?;
        write_triples(&self.bg, dir.join("bg.tsv"))?;
        write_triples(&self.ind_test, dir.join("ind_test.tsv"))?;
        write_task_file(tasks.join("train.json"), &self.train)?;
        write_task_file(tasks.join("valid.json"), &self.valid)?;
        write_task_file(tasks.join("test.json"), &self.test)
    }

    pub fn records(&self, split: Split) -> &[TaskRecord] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    /// Background graph with inverse edges.
    pub fn training_graph(&self) -> Result<KnowledgeGraph> {
        add_inverse_edges(&self.bg)
    }

    /// Background plus held-out triples, with inverse edges, including any
    /// entity that only occurs in task files.
    pub fn eval_graph(&self) -> Result<KnowledgeGraph> {
        let merged = merge_graphs(&self.bg, &self.ind_test);
        let mut b = GraphBuilder::new();
        for t in merged.triples() {
            b.add_keyed(
                merged.entity_name(t.head),
                merged.relation_key(t.relation),
                merged.entity_name(t.tail),
            );
        }
        for rec in self.valid.iter().chain(&self.test) {
            for (h, _, t) in rec.support.iter().chain(&rec.queries) {
                b.entity(h);
                b.entity(t);
            }
        }
        add_inverse_edges(&b.build())
    }

    /// Training pools resolved against the training graph. Pairs whose
    /// entities are missing from it are skipped.
    pub fn training_pools(&self, graph: &KnowledgeGraph) -> Vec<RelationPool> {
        self.train
            .iter()
            .map(|rec| RelationPool {
                relation: rec.relation.clone(),
                pairs: rec
                    .support
                    .iter()
                    .chain(&rec.queries)
                    .filter_map(|(h, _, t)| {
                        Some(Pair::new(graph.entity_id(h)?, graph.entity_id(t)?))
                    })
                    .collect(),
            })
            .collect()
    }

    /// Evaluation tasks of a split with `shots` support pairs each.
    pub fn eval_tasks(
        &self,
        split: Split,
        graph: &KnowledgeGraph,
        shots: usize,
        negatives: usize,
        n_candidates: usize,
        seed: u64,
    ) -> Result<Vec<FewShotTask>> {
        self.records(split)
            .iter()
            .enumerate()
            .map(|(i, rec)| {
                let mut rng = crate::task::episode_rng(seed ^ 0x5eed_e7a1, i as u64);
                rec.to_eval_task(graph, i, shots, negatives, n_candidates, &mut rng)
            })
            .collect()
    }
}

impl Bundle {
    /// Trains on the bundle's training relations, validating on its
    /// validation tasks when there are any.
    pub fn train(
        &self,
        cfg: &TrainConfig,
        on_record: impl FnMut(&ValidationRecord) -> Result<()>,
    ) -> Result<TrainOutcome> {
        cfg.validate()?;
        let graph = self.training_graph()?;
        let eval_graph = self.eval_graph()?;
        let valid = self.eval_tasks(
            Split::Valid,
            &eval_graph,
            cfg.k_shot,
            cfg.neg_size,
            cfg.n_candidates,
            cfg.seed,
        )?;
        let data = TrainingData {
            graph: &graph,
            vocabulary: relation_vocabulary(&[&graph, &eval_graph]),
            relations: self.training_pools(&graph),
            valid: (!valid.is_empty()).then_some((&eval_graph, valid)),
        };
        train(&data, cfg, on_record)
    }
}

/// One row of the dataset statistics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub name: String,
    pub relations: usize,
    pub entities: usize,
    pub edges: usize,
    pub tasks: usize,
}

impl fmt::Display for StatsRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<10}{:>8}{:>10}{:>10}{:>8}",
            self.name, self.relations, self.entities, self.edges, self.tasks
        )
    }
}

pub fn stats_header() -> String {
    format!(
        "{:<10}{:>8}{:>10}{:>10}{:>8}",
        "graph", "#rels", "#ents", "#edges", "#tasks"
    )
}

impl Bundle {
    pub fn stats(&self) -> Vec<StatsRow> {
        let row = |name: &str, g: &KnowledgeGraph, tasks: usize| {
            let s = g.stats();
            StatsRow {
                name: name.into(),
                relations: s.relations,
                entities: s.entities,
                edges: s.edges,
                tasks,
            }
        };
        vec![
            row("ind-bg", &self.bg, self.train.len()),
            row(
                "ind-test",
                &self.ind_test,
                self.valid.len() + self.test.len(),
            ),
        ]
    }
}

pub const CHAIN_FIRST: &str = "chain_a";
pub const CHAIN_SECOND: &str = "chain_b";
pub const TARGET: &str = "target";
const DISTRACTOR_RELATIONS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub entities: usize,
    pub pairs: usize,
    pub distractors: usize,
    pub train_pairs: usize,
    pub candidates: usize,
    /// Support triples listed per evaluation task.
    pub support: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            entities: 60,
            pairs: 20,
            distractors: 40,
            train_pairs: 12,
            candidates: 10,
            support: 5,
            seed: 0,
        }
    }
}

/// A planted pair with its connecting middle entity.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlantedChain {
    pub head: String,
    pub middle: String,
    pub tail: String,
}

#[derive(Clone, Debug)]
pub struct SynthBundle {
    pub bundle: Bundle,
    pub chains: Vec<PlantedChain>,
}

fn named(h: &str, r: &str, t: &str) -> (String, String, String) {
    (h.to_owned(), r.to_owned(), t.to_owned())
}

/// Generates a graph where `target(h, t)` holds exactly when
/// `chain_a(h, m)` and `chain_b(m, t)` for some `m`, plus distractor edges
/// under other relations. The target relation only appears in task files.
pub fn synth(spec: &SynthSpec) -> Result<SynthBundle> {
    let held_out = spec.pairs.saturating_sub(spec.train_pairs);
    let mut bad = Vec::new();
    if spec.pairs == 0 || 3 * spec.pairs > spec.entities {
        bad.push(format!(
            "{} pairs need {} distinct entities",
            spec.pairs,
            3 * spec.pairs
        ));
    }
    if spec.train_pairs <= spec.support {
        bad.push(format!(
            "{} training pairs cannot supply {} support triples plus queries",
            spec.train_pairs, spec.support
        ));
    }
    if held_out < 2 {
        bad.push(format!("{held_out} held-out pairs, at least 2 needed"));
    }
    if spec.candidates + 1 > spec.entities {
        bad.push(format!(
            "{} candidates exceed the entity count",
            spec.candidates
        ));
    }
    let max_distractors =
        spec.entities * spec.entities.saturating_sub(1) * DISTRACTOR_RELATIONS / 2;
    if spec.distractors > max_distractors {
        bad.push(format!("{} distractors do not fit", spec.distractors));
    }
    if !bad.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "degenerate synth spec: {}",
            bad.join("; ")
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = spec.entities.to_string().len();
    let mut names: Vec<String> = (0..spec.entities)
        .map(|i| format!("e{i:0width$}"))
        .collect();
    names.shuffle(&mut rng);
    let chains: Vec<PlantedChain> = (0..spec.pairs)
        .map(|i| PlantedChain {
            head: names[3 * i].clone(),
            middle: names[3 * i + 1].clone(),
            tail: names[3 * i + 2].clone(),
        })
        .collect();
    names.sort();

    let mut triples: Vec<(String, String, String)> = Vec::new();
    let mut seen = HashSet::new();
    for c in &chains {
        for t in [
            named(&c.head, CHAIN_FIRST, &c.middle),
            named(&c.middle, CHAIN_SECOND, &c.tail),
        ] {
            seen.insert(t.clone());
            triples.push(t);
        }
    }
    let mut placed = 0;
    while placed < spec.distractors {
        let a = rng.random_range(0..spec.entities);
        let b = rng.random_range(0..spec.entities);
        if a == b {
            continue;
        }
        let r = format!("noise_{}", rng.random_range(0..DISTRACTOR_RELATIONS));
        let t = named(&names[a], &r, &names[b]);
        if seen.insert(t.clone()) {
            triples.push(t);
            placed += 1;
        }
    }

    let (train, rest) = chains.split_at(spec.train_pairs);
    let (valid, test) = rest.split_at(held_out / 2);
    let removed: HashSet<&str> = rest
        .iter()
        .flat_map(|c| [c.head.as_str(), c.middle.as_str(), c.tail.as_str()])
        .collect();
    let mut bg = GraphBuilder::new();
    let mut ind = GraphBuilder::new();
    for (h, r, t) in &triples {
        if removed.contains(h.as_str()) || removed.contains(t.as_str()) {
            ind.add(h, r, t);
        } else {
            bg.add(h, r, t);
        }
    }
    let bg = bg.build();
    let ind_test = ind.build();

    let pair_triple = |c: &PlantedChain| named(&c.head, TARGET, &c.tail);
    let support: Vec<_> = train[..spec.support].iter().map(pair_triple).collect();
    let train_record = TaskRecord {
        relation: TARGET.into(),
        support: support.clone(),
        queries: train[spec.support..].iter().map(pair_triple).collect(),
        candidates: None,
    };

    let merged = merge_graphs(&bg, &ind_test);
    let all_pairs: Vec<Pair> = chains
        .iter()
        .map(|c| {
            Ok(Pair::new(
                merged.require_entity(&c.head)?,
                merged.require_entity(&c.tail)?,
            ))
        })
        .collect::<Result<_>>()?;
    let positives = known_positives(&merged, TARGET, &all_pairs);
    let pool: Vec<EntityId> = merged.entities().collect();
    let mut eval_record = |held: &[PlantedChain]| -> Result<TaskRecord> {
        let mut candidates = Vec::new();
        for c in held {
            let q = Pair::new(
                merged.require_entity(&c.head)?,
                merged.require_entity(&c.tail)?,
            );
            let cands = build_eval_candidates(q, &pool, &positives, spec.candidates, &mut rng)?;
            candidates.push(
                cands
                    .iter()
                    .map(|&e| merged.entity_name(e).to_owned())
                    .collect(),
            );
        }
        Ok(TaskRecord {
            relation: TARGET.into(),
            support: support.clone(),
            queries: held.iter().map(pair_triple).collect(),
            candidates: Some(candidates),
        })
    };
    let valid_record = eval_record(valid)?;
    let test_record = eval_record(test)?;

    let out = SynthBundle {
        bundle: Bundle {
            bg,
            ind_test,
            train: vec![train_record],
            valid: vec![valid_record],
            test: vec![test_record],
        },
        chains,
    };
    audit_chains(&out, 2)?;
    Ok(out)
}

/// The planted edges (both directions) of a chain, as `(head, relation
/// key, tail)` names.
pub fn chain_edges(c: &PlantedChain) -> Vec<(String, String, String)> {
    vec![
        named(&c.head, CHAIN_FIRST, &c.middle),
        named(&c.middle, CHAIN_SECOND, &c.tail),
        named(
            &c.middle,
            &RelationKey::inverse_of(CHAIN_FIRST).to_string(),
            &c.head,
        ),
        named(
            &c.tail,
            &RelationKey::inverse_of(CHAIN_SECOND).to_string(),
            &c.middle,
        ),
    ]
}

/// Checks that every planted pair's enclosing subgraph in the evaluation
/// graph contains its chain.
pub fn audit_chains(s: &SynthBundle, k: usize) -> Result<()> {
    let g = s.bundle.eval_graph()?;
    for c in &s.chains {
        let sub = enclosing_subgraph(
            &g,
            g.require_entity(&c.head)?,
            g.require_entity(&c.tail)?,
            k,
        )?;
        let present: HashSet<(String, String, String)> = sub
            .edges
            .iter()
            .map(|e| {
                named(
                    g.entity_name(e.head),
                    &g.relation_key(e.relation).to_string(),
                    g.entity_name(e.tail),
                )
            })
            .collect();
        if !chain_edges(c).iter().all(|e| present.contains(e)) {
            return Err(Error::InvalidArgument(format!(
                "planted chain {} -> {} -> {} missing from its subgraph",
                c.head, c.middle, c.tail
            )));
        }
    }
    Ok(())
}

/// Relation names per split.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    #[serde(default)]
    pub train: Vec<String>,
    #[serde(default)]
    pub valid: Vec<String>,
    #[serde(default)]
    pub test: Vec<String>,
}

impl SplitSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Clone, Debug)]
pub struct PrepareOptions {
    /// Support triples listed per evaluation task.
    pub support: usize,
    /// Fraction of each evaluation task's remaining triples kept as queries.
    pub query_fraction: f64,
    pub candidates: usize,
    pub seed: u64,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            support: 5,
            query_fraction: 1.0,
            candidates: 50,
            seed: 0,
        }
    }
}

/// Inductive split: task relations leave the background; entities of
/// validation and test triples, with their one-hop neighbors, are removed
/// from it and their triples form the held-out graph.
pub fn prepare(raw: &KnowledgeGraph, split: &SplitSpec, opts: &PrepareOptions) -> Result<Bundle> {
    if !(opts.query_fraction > 0.0 && opts.query_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "query fraction must lie in (0, 1], got {}",
            opts.query_fraction
        )));
    }
    let mut by_relation: BTreeMap<String, Vec<(String, String)>> = BTreeMap::new();
    let task_names: Vec<&String> = split
        .train
        .iter()
        .chain(&split.valid)
        .chain(&split.test)
        .collect();
    for name in &task_names {
        if raw
            .relation_id(&RelationKey::forward(name.as_str()))
            .is_none()
        {
            return Err(Error::UnknownRelation((*name).clone()));
        }
        by_relation.insert((*name).clone(), Vec::new());
    }
    let mut others = Vec::new();
    for t in raw.triples() {
        let key = raw.relation_key(t.relation);
        let (h, r, tl) = (
            raw.entity_name(t.head),
            key.name.as_str(),
            raw.entity_name(t.tail),
        );
        match by_relation.get_mut(r) {
            Some(v) => v.push((h.to_owned(), tl.to_owned())),
            None => others.push((h, r, tl)),
        }
    }

    let mut held: BTreeSet<&str> = BTreeSet::new();
    for name in split.valid.iter().chain(&split.test) {
        for (h, t) in &by_relation[name] {
            held.insert(h);
            held.insert(t);
        }
    }
    let mut removed = held.clone();
    for &(h, _, t) in &others {
        if held.contains(h) {
            removed.insert(t);
        }
        if held.contains(t) {
            removed.insert(h);
        }
    }
    let mut bg = GraphBuilder::new();
    let mut ind = GraphBuilder::new();
    for &(h, r, t) in &others {
        if removed.contains(h) || removed.contains(t) {
            ind.add(h, r, t);
        } else {
            bg.add(h, r, t);
        }
    }
    let bg = bg.build();
    let ind_test = ind.build();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let train = split
        .train
        .iter()
        .map(|name| {
            let mut pairs: Vec<_> = by_relation[name]
                .iter()
                .filter(|(h, t)| !removed.contains(h.as_str()) && !removed.contains(t.as_str()))
                .cloned()
                .collect();
            pairs.shuffle(&mut rng);
            let cut = opts.support.min(pairs.len());
            TaskRecord {
                relation: name.clone(),
                support: pairs[..cut]
                    .iter()
                    .map(|(h, t)| named(h, name, t))
                    .collect(),
                queries: pairs[cut..]
                    .iter()
                    .map(|(h, t)| named(h, name, t))
                    .collect(),
                candidates: None,
            }
        })
        .collect();

    let mut merged = GraphBuilder::new();
    for t in bg
        .triples()
        .iter()
        .map(|t| (&bg, t))
        .chain(ind_test.triples().iter().map(|t| (&ind_test, t)))
    {
        let (g, t) = t;
        merged.add_keyed(
            g.entity_name(t.head),
            g.relation_key(t.relation),
            g.entity_name(t.tail),
        );
    }
    for name in split.valid.iter().chain(&split.test) {
        for (h, t) in &by_relation[name] {
            merged.entity(h);
            merged.entity(t);
        }
    }
    let merged = merged.build();
    let pool: Vec<EntityId> = merged.entities().collect();
    let mut eval_records = |names: &[String]| -> Result<Vec<TaskRecord>> {
        names
            .iter()
            .map(|name| {
                let mut pairs = by_relation[name].clone();
                pairs.shuffle(&mut rng);
                let cut = opts.support.min(pairs.len().saturating_sub(1));
                let rest = &pairs[cut..];
                let keep =
                    ((rest.len() as f64 * opts.query_fraction).ceil() as usize).min(rest.len());
                let queries = &rest[..keep];
                let resolved: Vec<Pair> = pairs
                    .iter()
                    .map(|(h, t)| {
                        Ok(Pair::new(
                            merged.require_entity(h)?,
                            merged.require_entity(t)?,
                        ))
                    })
                    .collect::<Result<_>>()?;
                let positives = known_positives(&merged, name, &resolved);
                let candidates = queries
                    .iter()
                    .map(|(h, t)| {
                        let q = Pair::new(merged.require_entity(h)?, merged.require_entity(t)?);
                        let c =
                            build_eval_candidates(q, &pool, &positives, opts.candidates, &mut rng)?;
                        Ok(c.iter()
                            .map(|&e| merged.entity_name(e).to_owned())
                            .collect())
                    })
                    .collect::<Result<Vec<Vec<String>>>>()?;
                Ok(TaskRecord {
                    relation: name.clone(),
                    support: pairs[..cut]
                        .iter()
                        .map(|(h, t)| named(h, name, t))
                        .collect(),
                    queries: queries.iter().map(|(h, t)| named(h, name, t)).collect(),
                    candidates: Some(candidates),
                })
            })
            .collect()
    };
    let valid = eval_records(&split.valid)?;
    let test = eval_records(&split.test)?;
    Ok(Bundle {
        bg,
        ind_test,
        train,
        valid,
        test,
    })
}
