use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Owner partition of a parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    /// GNN and hypothesis-extractor networks (θ).
    Encoder,
    /// Prediction head (φ).
    Predictor,
    /// Edge-existence extractor (ψ).
    Extractor,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
    /// Adam first moment.
    pub m: Vec<f64>,
    /// Adam second moment.
    pub v: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    #[serde(skip)]
    index: BTreeMap<String, ParamId>,
    step: u64,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, group: ParamGroup, value: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParameter(name.to_owned()));
        }
        let id = ParamId(self.params.len());
        let n = value.len();
        self.params.push(Parameter {
            name: name.to_owned(),
            group,
            value,
            m: vec![0.0; n],
            v: vec![0.0; n],
        });
        self.index.insert(name.to_owned(), id);
        Ok(id)
    }

    /// Registers a `rows × cols` parameter drawn uniformly from
    /// `[-1/√fan_in, 1/√fan_in]`.
    pub fn register_uniform(
        &mut self,
        name: &str,
        group: ParamGroup,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        self.register(name, group, Tensor::new(rows, cols, data)?)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Rebuilds the name index after deserialization.
    pub(crate) fn reindex(&mut self) -> Result<()> {
        self.index.clear();
        for i in 0..self.params.len() {
            let name = self.params[i].name.clone();
            if self.index.insert(name.clone(), ParamId(i)).is_some() {
                return Err(Error::DuplicateParameter(name));
            }
            let p = &self.params[i];
            if p.m.len() != p.value.len() || p.v.len() != p.value.len() {
                return Err(Error::Checkpoint(format!(
                    "optimizer state of `{name}` does not match its shape"
                )));
            }
        }
        Ok(())
    }

    /// One bias-corrected Adam update. Parameters absent from `grads` keep
    /// their values but still see their moments decay.
    pub fn adam_step(&mut self, grads: &[(ParamId, Vec<f64>)], cfg: &AdamConfig) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (id, g) in grads {
            let p = &mut self.params[id.0];
            if g.len() != p.value.len() {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: p.value.shape(),
                    right: (1, g.len()),
                });
            }
            for (k, &gk) in g.iter().enumerate() {
                p.m[k] = cfg.beta1 * p.m[k] + (1.0 - cfg.beta1) * gk;
                p.v[k] = cfg.beta2 * p.v[k] + (1.0 - cfg.beta2) * gk * gk;
                let m_hat = p.m[k] / bc1;
                let v_hat = p.v[k] / bc2;
                p.value.data_mut()[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}
