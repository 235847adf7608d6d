//! Neural-process hypothesis extractor: labeled subgraph embeddings are
//! mapped to context vectors, averaged, and turned into a diagonal Gaussian
//! over the latent hypothesis.

use rand::Rng;

use crate::diff::{gaussian_reparam, Mlp, Noise, ParamGroup, ParameterStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::gnn::SubgraphEmbedding;

/// Lower bound of every standard deviation.
pub const SIGMA_FLOOR: f64 = 0.1;

/// Bound on the pre-sigmoid standard deviation logit. Past about 37 the
/// sigmoid rounds to 1 and the deviation would reach its open upper bound.
const SIGMA_LOGIT_CLAMP: f64 = 30.0;

#[derive(Clone, Copy, Debug)]
pub struct NpEncoder {
    pub context: Mlp,
    pub latent: Mlp,
    pub mu: Mlp,
    pub sigma: Mlp,
    pub d_z: usize,
}

impl NpEncoder {
    pub fn register(
        store: &mut ParameterStore,
        embedding_dim: usize,
        d_z: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let g = ParamGroup::Encoder;
        Ok(Self {
            context: Mlp::register(store, "np.context", g, (embedding_dim + 1, d_z, d_z), rng)?,
            latent: Mlp::register(store, "np.latent", g, (d_z, d_z, d_z), rng)?,
            mu: Mlp::register(store, "np.mu", g, (d_z, d_z, d_z), rng)?,
            sigma: Mlp::register(store, "np.sigma", g, (d_z, d_z, d_z), rng)?,
            d_z,
        })
    }
}

/// `1 × d_z` context vector of one labeled example.
#[derive(Clone, Copy, Debug)]
pub struct ContextRepr(pub Var);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HypothesisSource {
    /// Conditioned on the support set only.
    Prior,
    /// Conditioned on support and labeled queries.
    Posterior,
}

#[derive(Clone, Copy, Debug)]
pub struct HypothesisDistribution {
    pub mu: Var,
    pub sigma: Var,
    pub source: HypothesisSource,
}

#[derive(Clone, Debug)]
pub struct HypothesisSample {
    pub z: Var,
    pub epsilon: Vec<f64>,
}

/// Context vectors for a batch of labeled embeddings, one row each.
fn context_rows(
    tape: &mut Tape,
    store: &ParameterStore,
    np: &NpEncoder,
    items: &[(&SubgraphEmbedding, bool)],
) -> Result<Var> {
    let rows: Vec<Var> = items.iter().map(|(e, _)| e.vector).collect();
    let x = tape.vcat(&rows)?;
    let labels = Tensor::column(
        items
            .iter()
            .map(|&(_, y)| if y { 1.0 } else { 0.0 })
            .collect(),
    );
    let y = tape.leaf(labels);
    let input = tape.hcat(&[x, y])?;
    np.context.forward(tape, store, input)
}

pub fn context_repr(
    tape: &mut Tape,
    store: &ParameterStore,
    np: &NpEncoder,
    emb: &SubgraphEmbedding,
    label: bool,
) -> Result<ContextRepr> {
    Ok(ContextRepr(context_rows(tape, store, np, &[(emb, label)])?))
}

/// Mean of the context vectors in list order.
pub fn aggregate(tape: &mut Tape, cs: &[ContextRepr]) -> Result<Var> {
    if cs.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot aggregate an empty context".into(),
        ));
    }
    let rows: Vec<Var> = cs.iter().map(|c| c.0).collect();
    let stacked = tape.vcat(&rows)?;
    tape.mean_rows(stacked)
}

pub fn distribution_params(
    tape: &mut Tape,
    store: &ParameterStore,
    np: &NpEncoder,
    zbar: Var,
    source: HypothesisSource,
) -> Result<HypothesisDistribution> {
    if tape.shape(zbar) != (1, np.d_z) {
        return Err(Error::Shape {
            op: "distribution_params",
            left: tape.shape(zbar),
            right: (1, np.d_z),
        });
    }
    let chi = np.latent.forward(tape, store, zbar)?;
    let chi = tape.relu(chi);
    let mu = np.mu.forward(tape, store, chi)?;
    let raw = np.sigma.forward(tape, store, chi)?;
    let raw = tape.clamp(raw, -SIGMA_LOGIT_CLAMP, SIGMA_LOGIT_CLAMP);
    let s = tape.sigmoid(raw);
    let s = tape.scale(s, 1.0 - SIGMA_FLOOR);
    let sigma = tape.add_scalar(s, SIGMA_FLOOR);
    Ok(HypothesisDistribution { mu, sigma, source })
}

pub fn sample_hypothesis(
    tape: &mut Tape,
    dist: &HypothesisDistribution,
    noise: &mut Noise,
) -> Result<HypothesisSample> {
    let (z, epsilon) = gaussian_reparam(tape, dist.mu, dist.sigma, noise)?;
    Ok(HypothesisSample { z, epsilon })
}

/// The mean as a sample with zero noise.
pub fn mean_hypothesis(dist: &HypothesisDistribution, d_z: usize) -> HypothesisSample {
    HypothesisSample {
        z: dist.mu,
        epsilon: vec![0.0; d_z],
    }
}

/// Context encoding, aggregation and distribution heads in one pass.
pub fn encode_hypothesis(
    tape: &mut Tape,
    store: &ParameterStore,
    np: &NpEncoder,
    items: &[(&SubgraphEmbedding, bool)],
    source: HypothesisSource,
) -> Result<HypothesisDistribution> {
    if items.is_empty() {
        return Err(Error::InvalidArgument(
            "hypothesis needs at least one labeled example".into(),
        ));
    }
    let cs = context_rows(tape, store, np, items)?;
    let zbar = tape.mean_rows(cs)?;
    distribution_params(tape, store, np, zbar, source)
}
