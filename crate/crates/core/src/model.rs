//! The assembled model: encoder, hypothesis extractor and predictor sharing
//! one parameter store, plus the forward passes the trainer, evaluator and
//! explainer have in common.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Noise, ParameterStore, Tape, Var};
use crate::error::{Error, Result};
use crate::gnn::{encode_subgraph, init_edge_features, GnnEncoder, GraphView, SubgraphEmbedding};
use crate::gsat::{
    apply_mask, expected_mask, fuse_hypothesis, sample_mask, score, EdgeProbs, GsatPredictor,
};
use crate::kg::{EnclosingSubgraph, KnowledgeGraph, RelationKey};
use crate::np::{
    encode_hypothesis, HypothesisDistribution, HypothesisSample, HypothesisSource, NpEncoder,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d_edge: usize,
    pub d_z: usize,
    pub layers: usize,
}

#[derive(Clone, Debug)]
pub struct GsNp {
    pub dims: ModelDims,
    pub store: ParameterStore,
    pub encoder: GnnEncoder,
    pub np: NpEncoder,
    pub gsat: GsatPredictor,
}

/// How query subgraphs are masked before scoring.
pub enum MaskMode<'n> {
    /// Binary-concrete sample at the given temperature.
    Sampled {
        temperature: f64,
        noise: &'n mut Noise,
    },
    /// Each edge weighted by its probability, no noise.
    Expected,
}

#[derive(Clone, Copy, Debug)]
pub struct ScoredQuery {
    pub score: Var,
    pub probs: EdgeProbs,
}

/// Serializable parameters and the information needed to rebuild handles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub dims: ModelDims,
    pub relations: Vec<RelationKey>,
    pub store: ParameterStore,
}

impl GsNp {
    /// Fresh model over the given relation vocabulary (forward and inverse
    /// keys), initialized from `seed`.
    pub fn new(dims: ModelDims, relations: &[RelationKey], seed: u64) -> Result<Self> {
        if dims.d_edge == 0 || dims.d_z == 0 || dims.layers == 0 {
            return Err(Error::Config(format!(
                "model dimensions must be positive: {dims:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let encoder =
            GnnEncoder::register(&mut store, relations, dims.d_edge, dims.layers, &mut rng)?;
        let emb = encoder.embedding_dim();
        let np = NpEncoder::register(&mut store, emb, dims.d_z, &mut rng)?;
        let gsat = GsatPredictor::register(&mut store, dims.d_edge, emb, dims.d_z, &mut rng)?;
        Ok(Self {
            dims,
            store,
            encoder,
            np,
            gsat,
        })
    }

    pub fn relations(&self) -> &[RelationKey] {
        self.encoder.table.keys()
    }

    pub fn view<'a>(&self, kg: &'a KnowledgeGraph) -> GraphView<'a> {
        self.encoder.table.bind(kg)
    }

    pub fn state(&self) -> ModelState {
        ModelState {
            dims: self.dims,
            relations: self.relations().to_vec(),
            store: self.store.clone(),
        }
    }

    /// Rebuilds a model from saved state, checking that every parameter
    /// matches the architecture by name and shape.
    pub fn from_state(mut state: ModelState) -> Result<Self> {
        state.store.reindex()?;
        let mut model = Self::new(state.dims, &state.relations, 0)?;
        if model.store.len() != state.store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                model.store.len(),
                state.store.len()
            )));
        }
        for ((_, want), (_, got)) in model.store.iter().zip(state.store.iter()) {
            if want.name != got.name || want.value.shape() != got.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` {:?} does not match `{}` {:?}",
                    got.name,
                    got.value.shape(),
                    want.name,
                    want.value.shape()
                )));
            }
        }
        model.store = state.store;
        Ok(model)
    }

    pub fn embed(
        &self,
        tape: &mut Tape,
        view: &GraphView<'_>,
        sub: &EnclosingSubgraph,
    ) -> Result<SubgraphEmbedding> {
        encode_subgraph(tape, &self.store, &self.encoder, view, sub, None)
    }

    /// Encodes labeled subgraphs and maps them to a hypothesis distribution.
    pub fn hypothesis(
        &self,
        tape: &mut Tape,
        view: &GraphView<'_>,
        items: &[(&EnclosingSubgraph, bool)],
        source: HypothesisSource,
    ) -> Result<HypothesisDistribution> {
        let embs = items
            .iter()
            .map(|(s, _)| self.embed(tape, view, s))
            .collect::<Result<Vec<_>>>()?;
        let labeled: Vec<(&SubgraphEmbedding, bool)> =
            embs.iter().zip(items).map(|(e, &(_, y))| (e, y)).collect();
        encode_hypothesis(tape, &self.store, &self.np, &labeled, source)
    }

    /// Edge existence probabilities of `sub` under hypothesis `z`. Uses the
    /// initial relation features, so it does not run the encoder.
    pub fn edge_probs(
        &self,
        tape: &mut Tape,
        view: &GraphView<'_>,
        sub: &EnclosingSubgraph,
        z: &HypothesisSample,
    ) -> Result<EdgeProbs> {
        let states = init_edge_features(tape, &self.store, &self.encoder.table, view, sub)?;
        fuse_hypothesis(tape, &self.store, &self.gsat, &states, z)
    }

    /// Masks `sub` under `z` and scores it against `z`.
    pub fn score_query(
        &self,
        tape: &mut Tape,
        view: &GraphView<'_>,
        sub: &EnclosingSubgraph,
        z: &HypothesisSample,
        mode: MaskMode<'_>,
    ) -> Result<ScoredQuery> {
        let probs = self.edge_probs(tape, view, sub, z)?;
        let mask = match mode {
            MaskMode::Sampled { temperature, noise } => {
                sample_mask(tape, &probs, temperature, noise)?
            }
            MaskMode::Expected => expected_mask(&probs),
        };
        let masked = apply_mask(tape, sub, mask)?;
        let s = score(
            tape,
            &self.store,
            &self.encoder,
            &self.gsat,
            view,
            &masked,
            z,
        )?;
        Ok(ScoredQuery { score: s, probs })
    }
}
