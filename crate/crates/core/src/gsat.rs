//! Hypothesis-conditioned stochastic edge masking and query scoring.

use rand::Rng;

use crate::diff::{gumbel_sigmoid, Linear, Mlp, Noise, ParamGroup, ParameterStore, Tape, Var};
use crate::error::{Error, Result};
use crate::gnn::{encode_subgraph, GnnEncoder, GraphView, LayerStates, SubgraphEmbedding};
use crate::kg::EnclosingSubgraph;
use crate::np::HypothesisSample;

/// Logits are clamped to this magnitude before Gumbel sampling.
pub const LOGIT_CLAMP: f64 = 30.0;

#[derive(Clone, Copy, Debug)]
pub struct GsatPredictor {
    /// Maps `z` into edge-feature space for fusion.
    pub fuse_proj: Linear,
    /// Per-edge existence logit.
    pub edge_mlp: Mlp,
    /// Maps the masked subgraph embedding into hypothesis space.
    pub head: Linear,
}

impl GsatPredictor {
    pub fn register(
        store: &mut ParameterStore,
        d_edge: usize,
        embedding_dim: usize,
        d_z: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let psi = ParamGroup::Extractor;
        Ok(Self {
            fuse_proj: Linear::register(store, "gsat.fuse_proj", psi, d_z, d_edge, rng)?,
            edge_mlp: Mlp::register(store, "gsat.edge_mlp", psi, (d_edge, d_edge, 1), rng)?,
            head: Linear::register(
                store,
                "gsat.head",
                ParamGroup::Predictor,
                embedding_dim,
                d_z,
                rng,
            )?,
        })
    }
}

/// Per-edge existence probabilities, `E × 1`, with their logits.
#[derive(Clone, Copy, Debug)]
pub struct EdgeProbs {
    pub logits: Var,
    pub probs: Var,
}

impl EdgeProbs {
    /// Wraps given probabilities; logits are recovered through the tape.
    pub fn from_probs(tape: &mut Tape, probs: Var) -> Self {
        let logits = tape.logit(probs);
        Self { logits, probs }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EdgeMask {
    pub probs: Var,
    pub soft: Var,
    /// `None` when the mask is the expectation rather than a sample.
    pub temperature: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct MaskedSubgraph<'a> {
    pub base: &'a EnclosingSubgraph,
    pub mask: EdgeMask,
}

/// `sigmoid(mlp(e_r + proj(z)))` for every edge state row.
pub fn fuse_hypothesis(
    tape: &mut Tape,
    store: &ParameterStore,
    gsat: &GsatPredictor,
    edge_states: &LayerStates,
    z: &HypothesisSample,
) -> Result<EdgeProbs> {
    let proj = gsat.fuse_proj.forward(tape, store, z.z)?;
    let fused = tape.add_bias(edge_states.edges, proj)?;
    let logits = gsat.edge_mlp.forward(tape, store, fused)?;
    let probs = tape.sigmoid(logits);
    Ok(EdgeProbs { logits, probs })
}

/// Binary-concrete sample per edge from clamped logits.
pub fn sample_mask(
    tape: &mut Tape,
    probs: &EdgeProbs,
    temperature: f64,
    noise: &mut Noise,
) -> Result<EdgeMask> {
    let logits = tape.clamp(probs.logits, -LOGIT_CLAMP, LOGIT_CLAMP);
    let soft = gumbel_sigmoid(tape, logits, temperature, noise)?;
    Ok(EdgeMask {
        probs: probs.probs,
        soft,
        temperature: Some(temperature),
    })
}

/// The noise-free mask: each edge weighted by its probability.
pub fn expected_mask(probs: &EdgeProbs) -> EdgeMask {
    EdgeMask {
        probs: probs.probs,
        soft: probs.probs,
        temperature: None,
    }
}

pub fn apply_mask<'a>(
    tape: &Tape,
    sub: &'a EnclosingSubgraph,
    mask: EdgeMask,
) -> Result<MaskedSubgraph<'a>> {
    for v in [mask.probs, mask.soft] {
        if tape.shape(v) != (sub.num_edges(), 1) {
            return Err(Error::Shape {
                op: "apply_mask",
                left: tape.shape(v),
                right: (sub.num_edges(), 1),
            });
        }
    }
    Ok(MaskedSubgraph { base: sub, mask })
}

pub fn encode_masked(
    tape: &mut Tape,
    store: &ParameterStore,
    encoder: &GnnEncoder,
    view: &GraphView<'_>,
    masked: &MaskedSubgraph<'_>,
) -> Result<SubgraphEmbedding> {
    encode_subgraph(
        tape,
        store,
        encoder,
        view,
        masked.base,
        Some(masked.mask.soft),
    )
}

/// Cosine between the projected embedding and `z`, in `[-1, 1]`.
pub fn score_embedding(
    tape: &mut Tape,
    store: &ParameterStore,
    gsat: &GsatPredictor,
    emb: &SubgraphEmbedding,
    z: &HypothesisSample,
) -> Result<Var> {
    let h = gsat.head.forward(tape, store, emb.vector)?;
    tape.cosine(h, z.z)
}

pub fn score(
    tape: &mut Tape,
    store: &ParameterStore,
    encoder: &GnnEncoder,
    gsat: &GsatPredictor,
    view: &GraphView<'_>,
    masked: &MaskedSubgraph<'_>,
    z: &HypothesisSample,
) -> Result<Var> {
    let emb = encode_masked(tape, store, encoder, view, masked)?;
    score_embedding(tape, store, gsat, &emb, z)
}
