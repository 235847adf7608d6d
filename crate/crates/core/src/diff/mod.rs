//! Reverse-mode differentiation over dense `f64` matrices, the parameter
//! store with its Adam optimizer, and the reparameterized samplers.

pub mod gradcheck;
mod noise;
mod params;
mod tape;
mod tensor;

pub use noise::{gaussian_reparam, gumbel_sigmoid, Noise};
pub use params::{AdamConfig, ParamGroup, ParamId, Parameter, ParameterStore};
pub use tape::{
    bernoulli_kl_value, cosine_value, gaussian_kl_value, sigmoid, Gradients, Tape, Var,
};
pub use tensor::Tensor;

use rand::Rng;

use crate::error::Result;

/// A dense layer `x · W + b` whose weights live in a [`ParameterStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn register(
        store: &mut ParameterStore,
        name: &str,
        group: ParamGroup,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.register_uniform(
            &format!("{name}.weight"),
            group,
            fan_in,
            fan_out,
            fan_in,
            rng,
        )?;
        let bias =
            store.register_uniform(&format!("{name}.bias"), group, 1, fan_out, fan_in, rng)?;
        Ok(Self {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        tape.linear(x, w, b)
    }
}

/// Single-hidden-layer perceptron with relu between the two maps and a
/// linear output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    pub fn register(
        store: &mut ParameterStore,
        name: &str,
        group: ParamGroup,
        dims: (usize, usize, usize),
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (input, hidden, output) = dims;
        Ok(Self {
            hidden: Linear::register(store, &format!("{name}.0"), group, input, hidden, rng)?,
            output: Linear::register(store, &format!("{name}.1"), group, hidden, output, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParameterStore, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, store, x)?;
        let h = tape.relu(h);
        self.output.forward(tape, store, h)
    }
}
