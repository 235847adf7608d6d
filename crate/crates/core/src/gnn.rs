//! Relation message passing over an enclosing subgraph.
//!
//! Only edges carry features. Each layer sums the (masked) edge states
//! around every node, tags the head and tail nodes with two indicator
//! entries, and recomputes each edge state from its two endpoint states and
//! its own state. The subgraph embedding is the column-wise max over final
//! edge states followed by the head and tail aggregates.

use std::collections::HashMap;

use rand::Rng;

use crate::diff::{Linear, ParamGroup, ParamId, ParameterStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::kg::{EnclosingSubgraph, KnowledgeGraph, RelationKey};

/// Learnable initial edge feature per relation (forward and inverse).
#[derive(Clone, Debug)]
pub struct RelationTable {
    keys: Vec<RelationKey>,
    rows: HashMap<RelationKey, usize>,
    param: ParamId,
    dim: usize,
}

impl RelationTable {
    pub fn register(
        store: &mut ParameterStore,
        keys: &[RelationKey],
        dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let data = (0..keys.len() * dim)
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect();
        let param = store.register(
            "relation_table",
            ParamGroup::Encoder,
            Tensor::new(keys.len(), dim, data)?,
        )?;
        let rows = keys
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect::<HashMap<_, _>>();
        if rows.len() != keys.len() {
            return Err(Error::InvalidArgument("duplicate relation keys".into()));
        }
        Ok(Self {
            keys: keys.to_vec(),
            rows,
            param,
            dim,
        })
    }

    pub fn keys(&self) -> &[RelationKey] {
        &self.keys
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn param(&self) -> ParamId {
        self.param
    }

    pub fn row(&self, key: &RelationKey) -> Option<usize> {
        self.rows.get(key).copied()
    }

    /// Resolves every relation id of `kg` to a table row up front.
    pub fn bind<'a>(&self, kg: &'a KnowledgeGraph) -> GraphView<'a> {
        GraphView {
            kg,
            rows: kg.relation_keys().iter().map(|k| self.row(k)).collect(),
        }
    }
}

/// A graph paired with its relation-id → table-row mapping.
#[derive(Clone, Debug)]
pub struct GraphView<'a> {
    pub kg: &'a KnowledgeGraph,
    rows: Vec<Option<usize>>,
}

impl GraphView<'_> {
    fn edge_rows(&self, sub: &EnclosingSubgraph) -> Result<Vec<usize>> {
        sub.edges
            .iter()
            .map(|e| {
                self.rows[e.relation.index()].ok_or_else(|| {
                    Error::UnknownRelation(self.kg.relation_key(e.relation).to_string())
                })
            })
            .collect()
    }
}

/// Parameters of the message-passing stack.
#[derive(Clone, Debug)]
pub struct GnnEncoder {
    pub table: RelationTable,
    pub layers: Vec<Linear>,
}

impl GnnEncoder {
    pub fn register(
        store: &mut ParameterStore,
        relations: &[RelationKey],
        d_edge: usize,
        layers: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::InvalidArgument("at least one GNN layer".into()));
        }
        let table = RelationTable::register(store, relations, d_edge, rng)?;
        let fan_in = 2 * (d_edge + 2) + d_edge;
        let layers = (0..layers)
            .map(|l| {
                Linear::register(
                    store,
                    &format!("gnn.layer{l}"),
                    ParamGroup::Encoder,
                    fan_in,
                    d_edge,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self { table, layers })
    }

    pub fn d_edge(&self) -> usize {
        self.table.dim
    }

    /// Width of [`SubgraphEmbedding::vector`].
    pub fn embedding_dim(&self) -> usize {
        3 * self.table.dim
    }
}

/// Per-layer states of one subgraph.
#[derive(Clone, Debug)]
pub struct LayerStates {
    /// `E × d_edge`, one row per subgraph edge.
    pub edges: Var,
    /// `N × d_edge` summed incident edge states; absent before the first
    /// layer has run.
    pub nodes: Option<Var>,
    /// `N × (d_edge + 2)`: `nodes` with head and tail indicators appended.
    pub flagged: Option<Var>,
    /// `N × 2` indicator columns.
    pub flags: Tensor,
}

#[derive(Clone, Debug)]
pub struct SubgraphEmbedding {
    /// `1 × 3·d_edge`: edge max-pool, head aggregate, tail aggregate.
    pub vector: Var,
    pub head: crate::kg::EntityId,
    pub tail: crate::kg::EntityId,
    pub num_edges: usize,
}

fn flags(sub: &EnclosingSubgraph) -> Tensor {
    let n = sub.num_nodes();
    let mut t = Tensor::zeros(n, 2);
    t.data_mut()[sub.head_local * 2] = 1.0;
    t.data_mut()[sub.tail_local * 2 + 1] = 1.0;
    t
}

pub fn init_edge_features(
    tape: &mut Tape,
    store: &ParameterStore,
    table: &RelationTable,
    view: &GraphView<'_>,
    sub: &EnclosingSubgraph,
) -> Result<LayerStates> {
    let rows = view.edge_rows(sub)?;
    let t = tape.param(store, table.param);
    let edges = tape.gather_rows(t, &rows)?;
    Ok(LayerStates {
        edges,
        nodes: None,
        flagged: None,
        flags: flags(sub),
    })
}

fn masked(tape: &mut Tape, edges: Var, mask: Option<Var>) -> Result<Var> {
    match mask {
        Some(m) => tape.mul_rows(edges, m),
        None => Ok(edges),
    }
}

/// Sums each row of `edges` into both of its endpoints (twice for a
/// self-loop).
fn aggregate_nodes(tape: &mut Tape, sub: &EnclosingSubgraph, edges: Var) -> Result<Var> {
    let n = sub.num_nodes();
    let heads: Vec<usize> = sub.endpoints.iter().map(|e| e.0).collect();
    let tails: Vec<usize> = sub.endpoints.iter().map(|e| e.1).collect();
    let at_head = tape.scatter_rows(edges, &heads, n)?;
    let at_tail = tape.scatter_rows(edges, &tails, n)?;
    tape.add(at_head, at_tail)
}

/// One round of relation message passing. `mask`, when given, is an
/// `E × 1` column scaling every edge's contribution.
pub fn message_passing_layer(
    tape: &mut Tape,
    store: &ParameterStore,
    layer: &Linear,
    sub: &EnclosingSubgraph,
    states: &LayerStates,
    mask: Option<Var>,
) -> Result<LayerStates> {
    let (e, d) = tape.shape(states.edges);
    if e != sub.num_edges() || 2 * (d + 2) + d != layer.fan_in {
        return Err(Error::Shape {
            op: "message_passing_layer",
            left: (e, d),
            right: (sub.num_edges(), layer.fan_in),
        });
    }
    let edges = masked(tape, states.edges, mask)?;
    let nodes = aggregate_nodes(tape, sub, edges)?;
    let fl = tape.leaf(states.flags.clone());
    let flagged = tape.hcat(&[nodes, fl])?;
    let heads: Vec<usize> = sub.endpoints.iter().map(|e| e.0).collect();
    let tails: Vec<usize> = sub.endpoints.iter().map(|e| e.1).collect();
    let from = tape.gather_rows(flagged, &heads)?;
    let to = tape.gather_rows(flagged, &tails)?;
    let input = tape.hcat(&[from, to, edges])?;
    let next = layer.forward(tape, store, input)?;
    Ok(LayerStates {
        edges: tape.relu(next),
        nodes: Some(nodes),
        flagged: Some(flagged),
        flags: states.flags.clone(),
    })
}

/// Runs every layer and pools the result. An edgeless subgraph embeds to
/// the zero vector.
pub fn encode_subgraph(
    tape: &mut Tape,
    store: &ParameterStore,
    encoder: &GnnEncoder,
    view: &GraphView<'_>,
    sub: &EnclosingSubgraph,
    mask: Option<Var>,
) -> Result<SubgraphEmbedding> {
    tape.count_encoder_invocation();
    let dim = encoder.embedding_dim();
    let embedding = |vector| SubgraphEmbedding {
        vector,
        head: sub.head,
        tail: sub.tail,
        num_edges: sub.num_edges(),
    };
    if let Some(m) = mask {
        if tape.shape(m) != (sub.num_edges(), 1) {
            return Err(Error::Shape {
                op: "encode_subgraph mask",
                left: tape.shape(m),
                right: (sub.num_edges(), 1),
            });
        }
    }
    if sub.num_edges() == 0 {
        return Ok(embedding(tape.leaf(Tensor::zeros(1, dim))));
    }
    let mut states = init_edge_features(tape, store, &encoder.table, view, sub)?;
    for layer in &encoder.layers {
        states = message_passing_layer(tape, store, layer, sub, &states, mask)?;
    }
    let last = masked(tape, states.edges, mask)?;
    let pooled = tape.col_max(last)?;
    let nodes = aggregate_nodes(tape, sub, last)?;
    let ends = tape.gather_rows(nodes, &[sub.head_local, sub.tail_local])?;
    let h = tape.gather_rows(ends, &[0])?;
    let t = tape.gather_rows(ends, &[1])?;
    Ok(embedding(tape.hcat(&[pooled, h, t])?))
}
