//! Knowledge-graph storage, triple-file loading and enclosing-subgraph
//! extraction.
//!
//! A [`KnowledgeGraph`] is built once (through [`GraphBuilder`], a loader, or
//! one of the graph transforms) and is read-only afterwards. Entity and
//! relation names are interned in first-appearance order, so ids are a pure
//! function of the input order.
//!
//! Neighborhoods are measured on the undirected view of the graph. Direction
//! survives in the edge labels once [`add_inverse_edges`] has paired every
//! relation with a synthetic inverse.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

/// Relation identity across graphs: the surface name plus whether this is
/// the synthetic inverse of that name.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationKey {
    pub name: String,
    pub inverse: bool,
}

impl RelationKey {
    pub fn forward(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            inverse: false,
        }
    }

    pub fn inverse_of(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            inverse: true,
        }
    }
}

impl fmt::Display for RelationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.inverse {
            write!(f, "{}_inv", self.name)
        } else {
            f.write_str(&self.name)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TripleFormat {
    /// `head\trelation\ttail`
    Tsv,
    /// Any run of whitespace separates the three fields.
    Whitespace,
}

#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    entity_names: Vec<String>,
    entity_ids: HashMap<String, EntityId>,
    relations: Vec<RelationKey>,
    relation_ids: HashMap<RelationKey, RelationId>,
    triples: Vec<Triple>,
    triple_set: HashSet<Triple>,
    incidence: Vec<Vec<u32>>,
}

/// Incremental constructor for [`KnowledgeGraph`]. Duplicate triples are
/// dropped.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    graph: KnowledgeGraph,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity(&mut self, name: &str) -> EntityId {
        let g = &mut self.graph;
        if let Some(&id) = g.entity_ids.get(name) {
            return id;
        }
        let id = EntityId(g.entity_names.len() as u32);
        g.entity_names.push(name.to_owned());
        g.entity_ids.insert(name.to_owned(), id);
        g.incidence.push(Vec::new());
        id
    }

    pub fn relation(&mut self, key: &RelationKey) -> RelationId {
        let g = &mut self.graph;
        if let Some(&id) = g.relation_ids.get(key) {
            return id;
        }
        let id = RelationId(g.relations.len() as u32);
        g.relations.push(key.clone());
        g.relation_ids.insert(key.clone(), id);
        id
    }

    /// Adds a triple by names; returns `false` if it was already present.
    pub fn add(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        self.add_keyed(head, &RelationKey::forward(relation), tail)
    }

    pub fn add_keyed(&mut self, head: &str, relation: &RelationKey, tail: &str) -> bool {
        let h = self.entity(head);
        let r = self.relation(relation);
        let t = self.entity(tail);
        self.add_ids(Triple::new(h, r, t))
    }

    fn add_ids(&mut self, triple: Triple) -> bool {
        let g = &mut self.graph;
        if !g.triple_set.insert(triple) {
            return false;
        }
        let idx = g.triples.len() as u32;
        g.triples.push(triple);
        g.incidence[triple.head.index()].push(idx);
        g.incidence[triple.tail.index()].push(idx);
        true
    }

    pub fn build(self) -> KnowledgeGraph {
        self.graph
    }
}

impl KnowledgeGraph {
    pub fn from_triples<'a>(
        triples: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>,
    ) -> Self {
        let mut b = GraphBuilder::new();
        for (h, r, t) in triples {
            b.add(h, r, t);
        }
        b.build()
    }

    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> + '_ {
        (0..self.entity_names.len() as u32).map(EntityId)
    }

    pub fn relation_keys(&self) -> &[RelationKey] {
        &self.relations
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.triple_set.contains(triple)
    }

    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        self.entity_ids.get(name).copied()
    }

    pub fn require_entity(&self, name: &str) -> Result<EntityId> {
        self.entity_id(name)
            .ok_or_else(|| Error::UnknownEntity(name.to_owned()))
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entity_names[id.index()]
    }

    pub fn relation_id(&self, key: &RelationKey) -> Option<RelationId> {
        self.relation_ids.get(key).copied()
    }

    pub fn relation_key(&self, id: RelationId) -> &RelationKey {
        &self.relations[id.index()]
    }

    pub fn has_inverses(&self) -> bool {
        self.relations.iter().any(|k| k.inverse)
    }

    /// Triples incident to `v`; a self-loop is listed twice.
    pub fn incident(&self, v: EntityId) -> impl Iterator<Item = &Triple> + '_ {
        self.incidence[v.index()]
            .iter()
            .map(move |&i| &self.triples[i as usize])
    }

    pub fn degree(&self, v: EntityId) -> usize {
        self.incidence[v.index()].len()
    }

    fn check_entity(&self, v: EntityId) -> Result<()> {
        if v.index() < self.entity_names.len() {
            Ok(())
        } else {
            Err(Error::UnknownEntity(format!("#{}", v.0)))
        }
    }

    /// Undirected BFS distances from `v`, truncated at `k` hops.
    pub fn bfs_ball(&self, v: EntityId, k: usize) -> Result<HashMap<EntityId, usize>> {
        self.check_entity(v)?;
        let mut dist = HashMap::from([(v, 0usize)]);
        let mut queue = VecDeque::from([v]);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            if d == k {
                continue;
            }
            for t in self.incident(u) {
                let w = if t.head == u { t.tail } else { t.head };
                if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(w) {
                    e.insert(d + 1);
                    queue.push_back(w);
                }
            }
        }
        Ok(dist)
    }

    /// Indices (ascending) of triples whose endpoints both lie within the
    /// undirected `k`-ball around `v`.
    fn k_hop_indices(&self, v: EntityId, k: usize) -> Result<Vec<u32>> {
        let ball = self.bfs_ball(v, k)?;
        let mut out: Vec<u32> = ball
            .keys()
            .flat_map(|&u| self.incidence[u.index()].iter().copied())
            .filter(|&i| {
                let t = &self.triples[i as usize];
                ball.contains_key(&t.head) && ball.contains_key(&t.tail)
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            relations: self.num_relations(),
            entities: self.num_entities(),
            edges: self.num_triples(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub relations: usize,
    pub entities: usize,
    pub edges: usize,
}

pub fn load_triples(path: impl AsRef<Path>, format: TripleFormat) -> Result<KnowledgeGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut b = GraphBuilder::new();
    let mut seen = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = match format {
            TripleFormat::Tsv => line.trim_end_matches('\r').split('\t').collect(),
            TripleFormat::Whitespace => line.split_whitespace().collect(),
        };
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                path: path.to_owned(),
                line: lineno + 1,
                msg: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        b.add(fields[0], fields[1], fields[2]);
        seen += 1;
    }
    if seen == 0 {
        return Err(Error::EmptyGraph(path.to_owned()));
    }
    Ok(b.build())
}

/// Writes triples in the tab-separated format read by [`load_triples`].
pub fn write_triples(kg: &KnowledgeGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for t in kg.triples() {
        let key = kg.relation_key(t.relation);
        if key.inverse {
            continue;
        }
        out.push_str(kg.entity_name(t.head));
        out.push('\t');
        out.push_str(&key.name);
        out.push('\t');
        out.push_str(kg.entity_name(t.tail));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Union of two graphs under name-based identity. Entities and relations of
/// `bg` keep their ids; names first seen in `test` are appended.
pub fn merge_graphs(bg: &KnowledgeGraph, test: &KnowledgeGraph) -> KnowledgeGraph {
    let mut b = GraphBuilder::new();
    for g in [bg, test] {
        for name in &g.entity_names {
            b.entity(name);
        }
        for key in &g.relations {
            b.relation(key);
        }
    }
    for g in [bg, test] {
        for t in &g.triples {
            b.add_keyed(
                g.entity_name(t.head),
                g.relation_key(t.relation),
                g.entity_name(t.tail),
            );
        }
    }
    b.build()
}

/// Adds `(t, r_inv, h)` for every `(h, r, t)`. Each forward relation gets a
/// distinct inverse id, so the relation count doubles.
pub fn add_inverse_edges(kg: &KnowledgeGraph) -> Result<KnowledgeGraph> {
    if kg.has_inverses() {
        return Err(Error::InversesPresent);
    }
    let mut b = GraphBuilder::new();
    for name in &kg.entity_names {
        b.entity(name);
    }
    for key in &kg.relations {
        b.relation(key);
    }
    let inverse: Vec<RelationId> = kg
        .relations
        .iter()
        .map(|key| b.relation(&RelationKey::inverse_of(key.name.clone())))
        .collect();
    for t in &kg.triples {
        b.add_ids(*t);
        b.add_ids(Triple::new(t.tail, inverse[t.relation.index()], t.head));
    }
    Ok(b.build())
}

/// All triples whose two endpoints are within undirected distance `k` of `v`.
pub fn k_hop_neighbors(kg: &KnowledgeGraph, v: EntityId, k: usize) -> Result<HashSet<Triple>> {
    Ok(kg
        .k_hop_indices(v, k)?
        .into_iter()
        .map(|i| kg.triples[i as usize])
        .collect())
}

/// The intersection graph of the `k`-hop neighbor triples of a head and a
/// tail entity.
///
/// `nodes[head_local]` is the head and `nodes[tail_local]` the tail; the two
/// coincide when head == tail. Edges are kept in ascending graph-triple order
/// so that extraction is deterministic.
#[derive(Clone, Debug, PartialEq)]
pub struct EnclosingSubgraph {
    pub nodes: Vec<EntityId>,
    pub edges: Vec<Triple>,
    /// Local `(head, tail)` node indices of every edge.
    pub endpoints: Vec<(usize, usize)>,
    pub head: EntityId,
    pub tail: EntityId,
    pub head_local: usize,
    pub tail_local: usize,
    pub hop_k: usize,
    pub empty: bool,
}

impl EnclosingSubgraph {
    /// Builds a subgraph from an explicit edge list; edge order is kept.
    pub fn from_edges(head: EntityId, tail: EntityId, hop_k: usize, edges: Vec<Triple>) -> Self {
        let mut nodes = vec![head];
        if tail != head {
            nodes.push(tail);
        }
        let mut local: HashMap<EntityId, usize> =
            nodes.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        let mut endpoints = Vec::with_capacity(edges.len());
        for t in &edges {
            let mut slot = |e: EntityId| {
                *local.entry(e).or_insert_with(|| {
                    nodes.push(e);
                    nodes.len() - 1
                })
            };
            let a = slot(t.head);
            let b = slot(t.tail);
            endpoints.push((a, b));
        }
        let empty = edges.is_empty();
        Self {
            head_local: 0,
            tail_local: if tail == head { 0 } else { 1 },
            nodes,
            edges,
            endpoints,
            head,
            tail,
            hop_k,
            empty,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }
}

pub fn enclosing_subgraph(
    kg: &KnowledgeGraph,
    h: EntityId,
    t: EntityId,
    k: usize,
) -> Result<EnclosingSubgraph> {
    enclosing_subgraph_excluding(kg, h, t, k, None)
}

/// Like [`enclosing_subgraph`], but drops the target triple `(h, target, t)`
/// (and its inverse, when present) if the target relation exists in `kg`.
pub fn enclosing_subgraph_excluding(
    kg: &KnowledgeGraph,
    h: EntityId,
    t: EntityId,
    k: usize,
    target: Option<&RelationKey>,
) -> Result<EnclosingSubgraph> {
    kg.check_entity(h)?;
    kg.check_entity(t)?;
    let ball_h = kg.bfs_ball(h, k)?;
    let ball_t = kg.bfs_ball(t, k)?;
    let inside = |e: &EntityId| ball_h.contains_key(e) && ball_t.contains_key(e);

    let mut excluded = Vec::new();
    if let Some(key) = target {
        if let Some(r) = kg.relation_id(key) {
            excluded.push(Triple::new(h, r, t));
        }
        let inv = RelationKey {
            name: key.name.clone(),
            inverse: !key.inverse,
        };
        if let Some(r) = kg.relation_id(&inv) {
            excluded.push(Triple::new(t, r, h));
        }
    }

    let small = if ball_h.len() <= ball_t.len() {
        &ball_h
    } else {
        &ball_t
    };
    let mut idx: Vec<u32> = small
        .keys()
        .filter(|e| inside(e))
        .flat_map(|&u| kg.incidence[u.index()].iter().copied())
        .filter(|&i| {
            let tr = &kg.triples[i as usize];
            inside(&tr.head) && inside(&tr.tail) && !excluded.contains(tr)
        })
        .collect();
    idx.sort_unstable();
    idx.dedup();
    let edges = idx.into_iter().map(|i| kg.triples[i as usize]).collect();
    Ok(EnclosingSubgraph::from_edges(h, t, k, edges))
}
