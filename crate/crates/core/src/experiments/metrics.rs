use serde::{Deserialize, Serialize};

use super::stream::EvalSet;
use crate::error::{Error, Result};
use crate::models::Learner;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean of `‖f - f̄‖²` over the set.
    pub mse: f64,
    /// Fraction of argmax matches; present only for one-hot targets.
    pub accuracy: Option<f64>,
}

fn is_one_hot(t: &[f64]) -> bool {
    t.len() >= 2
        && t.iter().filter(|v| **v == 1.0).count() == 1
        && t.iter().all(|v| *v == 0.0 || *v == 1.0)
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| {
            if x > best.1 {
                (i, x)
            } else {
                best
            }
        })
        .0
}

pub fn evaluate(learner: &Learner, set: &EvalSet) -> Result<Metrics> {
    if set.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let classify = set.targets.iter().all(|t| is_one_hot(t));
    let mut sq = 0.0;
    let mut hits = 0usize;
    for (u, t) in set.inputs.iter().zip(&set.targets) {
        let f = learner.forward(u)?;
        if f.len() != t.len() {
            return Err(Error::DimensionMismatch {
                expected: f.len(),
                got: t.len(),
            });
        }
        sq += f.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        if classify && argmax(&f) == argmax(t) {
            hits += 1;
        }
    }
    let n = set.len() as f64;
    Ok(Metrics {
        mse: sq / n,
        accuracy: classify.then(|| hits as f64 / n),
    })
}
