//! Random draws for the stochastic layers, with record/replay so a forward
//! pass can be repeated under frozen noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Source {
    Rng(ChaCha8Rng),
    Replay { draws: Vec<f64>, pos: usize },
    Zero,
}

#[derive(Clone, Debug)]
pub struct Noise {
    source: Source,
    record: Option<Vec<f64>>,
}

impl Noise {
    pub fn seeded(seed: u64) -> Self {
        Self::from_rng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn from_rng(rng: ChaCha8Rng) -> Self {
        Self {
            source: Source::Rng(rng),
            record: None,
        }
    }

    /// Every draw is exactly zero: `ε = 0` for Gaussians, `g1 = g2 = 0` for
    /// Gumbels.
    pub fn zero() -> Self {
        Self {
            source: Source::Zero,
            record: None,
        }
    }

    /// Replays a sequence previously captured with [`Noise::recording`].
    pub fn replay(draws: Vec<f64>) -> Self {
        Self {
            source: Source::Replay { draws, pos: 0 },
            record: None,
        }
    }

    pub fn recording(mut self) -> Self {
        self.record = Some(Vec::new());
        self
    }

    pub fn take_record(&mut self) -> Vec<f64> {
        self.record.take().unwrap_or_default()
    }

    fn draw(&mut self, sample: impl FnOnce(&mut ChaCha8Rng) -> f64) -> f64 {
        let x = match &mut self.source {
            Source::Rng(rng) => sample(rng),
            Source::Replay { draws, pos } => {
                let x = *draws
                    .get(*pos)
                    .expect("noise replay ran past the recorded draws");
                *pos += 1;
                x
            }
            Source::Zero => 0.0,
        };
        if let Some(rec) = &mut self.record {
            rec.push(x);
        }
        x
    }

    pub fn normal(&mut self) -> f64 {
        self.draw(|rng| StandardNormal.sample(rng))
    }

    pub fn gumbel(&mut self) -> f64 {
        self.draw(|rng| Gumbel::new(0.0, 1.0).expect("unit gumbel").sample(rng))
    }

    pub fn uniform(&mut self) -> f64 {
        self.draw(|rng| rng.random::<f64>())
    }
}

/// Binary-concrete relaxation of a Bernoulli with the given logits:
/// `sigmoid((logit + g1 − g2) / temperature)` with independent standard
/// Gumbel draws per entry.
pub fn gumbel_sigmoid(
    tape: &mut Tape,
    logit: Var,
    temperature: f64,
    noise: &mut Noise,
) -> Result<Var> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let (r, c) = tape.shape(logit);
    let g: Vec<f64> = (0..r * c)
        .map(|_| noise.gumbel() - noise.gumbel())
        .collect();
    let g = tape.leaf(Tensor::new(r, c, g)?);
    let shifted = tape.add(logit, g)?;
    let scaled = tape.scale(shifted, 1.0 / temperature);
    Ok(tape.sigmoid(scaled))
}

/// `mu + sigma ⊙ ε` with `ε ~ N(0, 1)`; returns the sample and the `ε` used.
pub fn gaussian_reparam(
    tape: &mut Tape,
    mu: Var,
    sigma: Var,
    noise: &mut Noise,
) -> Result<(Var, Vec<f64>)> {
    let shape = tape.shape(mu);
    if tape.shape(sigma) != shape {
        return Err(Error::Shape {
            op: "gaussian_reparam",
            left: shape,
            right: tape.shape(sigma),
        });
    }
    if tape.value(sigma).data().iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument(
            "reparameterization needs strictly positive sigma".into(),
        ));
    }
    let eps: Vec<f64> = (0..shape.0 * shape.1).map(|_| noise.normal()).collect();
    let e = tape.leaf(Tensor::new(shape.0, shape.1, eps.clone())?);
    let spread = tape.mul(sigma, e)?;
    Ok((tape.add(mu, spread)?, eps))
}
