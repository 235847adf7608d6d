//! Central finite-difference checking of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Default finite-difference step.
pub const STEP: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps entries whose true
/// gradient is ~0 from dominating through rounding noise.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
}

/// Compares the tape gradient of `f` at `inputs` with central differences.
/// `f` must build a scalar loss from the leaves it is handed and must be
/// deterministic.
pub fn check<F>(inputs: &[Tensor], step: f64, floor: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    let mut work = inputs.to_vec();
    for (i, x) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[i])
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; x.len()]);
        for k in 0..x.len() {
            let orig = x.data()[k];
            work[i].data_mut()[k] = orig + step;
            let up = eval(&work)?;
            work[i].data_mut()[k] = orig - step;
            let down = eval(&work)?;
            work[i].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(analytic[k], numeric, floor);
            report.checked += 1;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((i, k, analytic[k], numeric));
            }
        }
    }
    Ok(report)
}
