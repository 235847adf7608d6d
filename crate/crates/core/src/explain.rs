//! Explanatory subgraphs: the query subgraph's edge probabilities under the
//! task's noise-free prior hypothesis, split into kept and dropped edges.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::Tape;
use crate::error::{Error, Result};
use crate::kg::{enclosing_subgraph_excluding, EnclosingSubgraph, KnowledgeGraph};
use crate::model::GsNp;
use crate::np::{mean_hypothesis, HypothesisSource};
use crate::task::{FewShotTask, NamedTriple, Pair};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedEdge {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub p: f64,
}

/// How edges are selected.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Selection {
    /// Keep edges with probability at least the threshold.
    Threshold(f64),
    /// Keep the `k` most probable edges (ties broken by edge order).
    TopK(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub query: NamedTriple,
    pub kept: Vec<WeightedEdge>,
    pub dropped: Vec<WeightedEdge>,
    /// Threshold used, or the smallest kept probability under top-k.
    pub threshold: f64,
    pub task_id: usize,
    pub seed: u64,
    /// Set when the query subgraph has no edges.
    pub empty: bool,
}

/// Query subgraph and its per-edge probabilities under the prior mean.
pub fn edge_probabilities(
    model: &GsNp,
    graph: &KnowledgeGraph,
    task: &FewShotTask,
    query: Pair,
    hop_k: usize,
) -> Result<(EnclosingSubgraph, Vec<f64>)> {
    let view = model.view(graph);
    let target = task.target_key();
    let extract =
        |p: &Pair| enclosing_subgraph_excluding(graph, p.head, p.tail, hop_k, Some(&target));
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
    let prior = model.hypothesis(&mut tape, &view, &items, HypothesisSource::Prior)?;
    let z = mean_hypothesis(&prior, model.dims.d_z);
    let sub = extract(&query)?;
    let probs = model.edge_probs(&mut tape, &view, &sub, &z)?;
    let p = tape.value(probs.probs).data().to_vec();
    Ok((sub, p))
}

/// Splits the subgraph edges by `selection`.
pub fn partition(
    graph: &KnowledgeGraph,
    sub: &EnclosingSubgraph,
    probs: &[f64],
    selection: Selection,
) -> Result<(Vec<WeightedEdge>, Vec<WeightedEdge>, f64)> {
    if probs.len() != sub.num_edges() {
        return Err(Error::Shape {
            op: "partition",
            left: (probs.len(), 1),
            right: (sub.num_edges(), 1),
        });
    }
    let keep: Vec<bool> = match selection {
        Selection::Threshold(t) => {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "threshold must lie in (0, 1), got {t}"
                )));
            }
            probs.iter().map(|&p| p >= t).collect()
        }
        Selection::TopK(k) => {
            let mut order: Vec<usize> = (0..probs.len()).collect();
            order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
            let mut keep = vec![false; probs.len()];
            for &i in order.iter().take(k) {
                keep[i] = true;
            }
            keep
        }
    };
    let threshold = match selection {
        Selection::Threshold(t) => t,
        Selection::TopK(_) => probs
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(&p, _)| p)
            .fold(1.0, f64::min),
    };
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for ((e, &p), k) in sub.edges.iter().zip(probs).zip(keep) {
        let w = WeightedEdge {
            head: graph.entity_name(e.head).to_owned(),
            relation: graph.relation_key(e.relation).to_string(),
            tail: graph.entity_name(e.tail).to_owned(),
            p,
        };
        if k {
            kept.push(w);
        } else {
            dropped.push(w);
        }
    }
    Ok((kept, dropped, threshold))
}

pub fn extract_explanation(
    model: &GsNp,
    graph: &KnowledgeGraph,
    task: &FewShotTask,
    query: Pair,
    selection: Selection,
    hop_k: usize,
    seed: u64,
) -> Result<Explanation> {
    let (sub, probs) = edge_probabilities(model, graph, task, query, hop_k)?;
    let (kept, dropped, threshold) = partition(graph, &sub, &probs, selection)?;
    Ok(Explanation {
        query: (
            graph.entity_name(query.head).to_owned(),
            task.relation.clone(),
            graph.entity_name(query.tail).to_owned(),
        ),
        kept,
        dropped,
        threshold,
        task_id: task.id,
        seed,
        empty: sub.empty,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Dot,
    Json,
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Graphviz rendering: head and tail boxed, kept edges solid, dropped
/// edges dashed, every edge labeled with its relation and probability.
pub fn to_dot(exp: &Explanation) -> String {
    let (h, r, t) = &exp.query;
    let mut out = String::new();
    let _ = writeln!(out, "digraph explanation {{");
    let _ = writeln!(out, "  label={};", quote(&format!("{h} {r} {t}")));
    let _ = writeln!(out, "  {} [shape=box, style=bold];", quote(h));
    if t != h {
        let _ = writeln!(out, "  {} [shape=box, style=bold];", quote(t));
    }
    for (edges, style) in [(&exp.kept, "solid"), (&exp.dropped, "dashed")] {
        for e in edges {
            let _ = writeln!(
                out,
                "  {} -> {} [label={}, style={style}];",
                quote(&e.head),
                quote(&e.tail),
                quote(&format!("{} {:.3}", e.relation, e.p))
            );
        }
    }
    out.push_str("}\n");
    out
}

pub fn to_json(exp: &Explanation) -> String {
    let mut s = serde_json::to_string_pretty(exp).expect("explanations always serialize");
    s.push('\n');
    s
}

pub fn from_json(text: &str) -> std::result::Result<Explanation, serde_json::Error> {
    serde_json::from_str(text)
}

pub fn export_explanation(
    exp: &Explanation,
    format: ExportFormat,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        ExportFormat::Dot => to_dot(exp),
        ExportFormat::Json => to_json(exp),
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
