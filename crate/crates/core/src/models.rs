//! Learnable functions whose parameters each follow the weight dynamics.
//!
//! Loss is `V = ½‖f(u) - f̄‖²`; the impulse magnitude for parameter `w` is
//! `ζ_w = ∂V/∂w` at the current weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{weight_value, DynamicsEngine, WeightState};
use crate::error::{Error, Result};

/// Architecture plus parameter layout. Weights live outside, as a flat slice.
pub trait Model {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn param_count(&self) -> usize;
    fn param_names(&self) -> Vec<String>;
    fn forward_with(&self, params: &[f64], u: &[f64]) -> Result<Vec<f64>>;
    /// `∂V/∂w` for every parameter, in layout order.
    fn gradients_with(&self, params: &[f64], u: &[f64], target: &[f64]) -> Result<Gradients>;
}

/// `ζ` per scalar parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// `f = y u + b` on scalar input; parameters `[y, b]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LinearUnit;

impl Model for LinearUnit {
    fn input_dim(&self) -> usize {
        1
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn param_count(&self) -> usize {
        2
    }

    fn param_names(&self) -> Vec<String> {
        vec!["y".into(), "b".into()]
    }

    fn forward_with(&self, params: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_dim(2, params.len())?;
        check_dim(1, u.len())?;
        Ok(vec![params[0] * u[0] + params[1]])
    }

    fn gradients_with(&self, params: &[f64], u: &[f64], target: &[f64]) -> Result<Gradients> {
        check_dim(1, target.len())?;
        let residual = self.forward_with(params, u)?[0] - target[0];
        Ok(Gradients(vec![residual * u[0], residual]))
    }
}

/// One hidden rectifier layer and an identity output layer.
///
/// Layout: `W1` row-major (`units × inputs`), `b1`, `W2` row-major
/// (`outputs × units`), `b2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub inputs: usize,
    pub units: usize,
    pub outputs: usize,
}

impl Mlp {
    pub fn new(inputs: usize, units: usize, outputs: usize) -> Result<Self> {
        if inputs == 0 || units == 0 || outputs == 0 {
            return Err(Error::invalid("MLP layer sizes must be positive"));
        }
        Ok(Mlp {
            inputs,
            units,
            outputs,
        })
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = self.units * self.inputs;
        let b1 = w1 + self.units;
        let w2 = b1 + self.outputs * self.units;
        (w1, b1, w2)
    }

    /// Uniform draws on `[-0.5, 0.5]` from a seeded ChaCha stream.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..self.param_count())
            .map(|_| rng.gen_range(-0.5..=0.5))
            .collect()
    }

    fn hidden(&self, params: &[f64], u: &[f64], pre: &mut [f64]) {
        let (w1_end, _, _) = self.offsets();
        let (w1, b1) = (&params[..w1_end], &params[w1_end..w1_end + self.units]);
        for (i, p) in pre.iter_mut().enumerate() {
            let row = &w1[i * self.inputs..(i + 1) * self.inputs];
            *p = b1[i] + row.iter().zip(u).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    fn output(&self, params: &[f64], pre: &[f64], out: &mut [f64]) {
        let (_, b1_end, w2_end) = self.offsets();
        let (w2, b2) = (&params[b1_end..w2_end], &params[w2_end..]);
        for (o, f) in out.iter_mut().enumerate() {
            let row = &w2[o * self.units..(o + 1) * self.units];
            *f = b2[o] + row.iter().zip(pre).map(|(w, h)| w * relu(*h)).sum::<f64>();
        }
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

impl Model for Mlp {
    fn input_dim(&self) -> usize {
        self.inputs
    }

    fn output_dim(&self) -> usize {
        self.outputs
    }

    fn param_count(&self) -> usize {
        self.units * (self.inputs + 1) + self.outputs * (self.units + 1)
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.param_count());
        for i in 0..self.units {
            for j in 0..self.inputs {
                names.push(format!("W1[{i},{j}]"));
            }
        }
        names.extend((0..self.units).map(|i| format!("b1[{i}]")));
        for o in 0..self.outputs {
            for i in 0..self.units {
                names.push(format!("W2[{o},{i}]"));
            }
        }
        names.extend((0..self.outputs).map(|o| format!("b2[{o}]")));
        names
    }

    fn forward_with(&self, params: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.param_count(), params.len())?;
        check_dim(self.inputs, u.len())?;
        let mut pre = vec![0.0; self.units];
        self.hidden(params, u, &mut pre);
        let mut out = vec![0.0; self.outputs];
        self.output(params, &pre, &mut out);
        Ok(out)
    }

    fn gradients_with(&self, params: &[f64], u: &[f64], target: &[f64]) -> Result<Gradients> {
        check_dim(self.param_count(), params.len())?;
        check_dim(self.inputs, u.len())?;
        check_dim(self.outputs, target.len())?;
        let mut pre = vec![0.0; self.units];
        self.hidden(params, u, &mut pre);
        let mut out = vec![0.0; self.outputs];
        self.output(params, &pre, &mut out);

        let (w1_end, b1_end, w2_end) = self.offsets();
        let mut grad = vec![0.0; self.param_count()];
        let residual: Vec<f64> = out.iter().zip(target).map(|(f, t)| f - t).collect();
        let mut back = vec![0.0; self.units];
        for (o, r) in residual.iter().enumerate() {
            grad[w2_end + o] = *r;
            for i in 0..self.units {
                let k = b1_end + o * self.units + i;
                grad[k] = r * relu(pre[i]);
                back[i] += params[k] * r;
            }
        }
        for i in 0..self.units {
            // Derivative of the rectifier at exactly 0 is taken as 0.
            let d = if pre[i] > 0.0 { back[i] } else { 0.0 };
            grad[w1_end + i] = d;
            for (j, x) in u.iter().enumerate() {
                grad[i * self.inputs + j] = d * x;
            }
        }
        Ok(Gradients(grad))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    Mlp {
        inputs: usize,
        units: usize,
        outputs: usize,
    },
}

impl Architecture {
    fn with<T>(&self, f: impl FnOnce(&dyn Model) -> T) -> T {
        match *self {
            Architecture::Linear => f(&LinearUnit),
            Architecture::Mlp {
                inputs,
                units,
                outputs,
            } => f(&Mlp {
                inputs,
                units,
                outputs,
            }),
        }
    }
}

impl Model for Architecture {
    fn input_dim(&self) -> usize {
        self.with(|m| m.input_dim())
    }

    fn output_dim(&self) -> usize {
        self.with(|m| m.output_dim())
    }

    fn param_count(&self) -> usize {
        self.with(|m| m.param_count())
    }

    fn param_names(&self) -> Vec<String> {
        self.with(|m| m.param_names())
    }

    fn forward_with(&self, params: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.with(|m| m.forward_with(params, u))
    }

    fn gradients_with(&self, params: &[f64], u: &[f64], target: &[f64]) -> Result<Gradients> {
        self.with(|m| m.gradients_with(params, u, target))
    }
}

/// Where the gradient is taken relative to the step that carries its impulse.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientPoint {
    /// Weights at the step start `Kτ`.
    #[default]
    StepStart,
    /// Weights propagated freely to the impulse time `Kτ + τ/2`.
    MidStep,
}

/// A model whose every parameter carries its own [`WeightState`].
#[derive(Clone, Debug)]
pub struct Learner {
    arch: Architecture,
    states: Vec<WeightState>,
}

impl Learner {
    /// Each parameter starts at rest at the given value.
    pub fn new(arch: Architecture, engine: &DynamicsEngine, initial: &[f64]) -> Result<Self> {
        check_dim(arch.param_count(), initial.len())?;
        let states = initial.iter().map(|&w| engine.state_at(w)).collect();
        Ok(Learner { arch, states })
    }

    /// Full initial state vectors, one per parameter.
    pub fn with_states(
        arch: Architecture,
        engine: &DynamicsEngine,
        states: &[Vec<f64>],
    ) -> Result<Self> {
        check_dim(arch.param_count(), states.len())?;
        let states = states
            .iter()
            .map(|s| engine.state_from(s))
            .collect::<Result<_>>()?;
        Ok(Learner { arch, states })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn states(&self) -> &[WeightState] {
        &self.states
    }

    pub fn params(&self) -> Vec<f64> {
        self.states.iter().map(weight_value).collect()
    }

    pub fn forward(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.arch.forward_with(&self.params(), u)
    }

    pub fn gradients(&self, u: &[f64], target: &[f64]) -> Result<Gradients> {
        self.arch.gradients_with(&self.params(), u, target)
    }

    pub fn any_divergent(&self) -> bool {
        self.states.iter().any(WeightState::is_divergent)
    }

    /// One step of length τ. With `Some((u, f̄))` every weight receives its
    /// impulse `ζ`; with `None` all weights evolve freely.
    pub fn advance(
        &mut self,
        engine: &DynamicsEngine,
        example: Option<(&[f64], &[f64])>,
        point: GradientPoint,
    ) -> Result<()> {
        match example {
            Some((u, target)) => {
                let params: Vec<f64> = match point {
                    GradientPoint::StepStart => self.params(),
                    GradientPoint::MidStep => self
                        .states
                        .iter()
                        .map(|s| engine.mid_step_value(s))
                        .collect(),
                };
                let grads = self.arch.gradients_with(&params, u, target)?;
                for (state, zeta) in self.states.iter_mut().zip(grads.0) {
                    engine.step(state, Some(zeta));
                }
            }
            None => {
                for state in &mut self.states {
                    engine.step(state, None);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rootspace::PolyCoeffs;

    #[test]
    fn linear_examples() {
        let m = LinearUnit;
        assert_eq!(m.forward_with(&[2.0, -1.0], &[0.5]).unwrap(), vec![0.0]);
        assert_eq!(m.forward_with(&[0.0, 0.0], &[3.7]).unwrap(), vec![0.0]);
        assert_eq!(
            m.gradients_with(&[2.0, -1.0], &[1.0], &[1.0]).unwrap().0,
            vec![0.0, 0.0]
        );
        assert_eq!(
            m.gradients_with(&[1.0, 0.0], &[0.5], &[0.0]).unwrap().0,
            vec![0.25, 0.5]
        );
        assert!(m.forward_with(&[1.0, 0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mlp_zero_weights_give_zero_output() {
        let m = Mlp::new(3, 5, 2).unwrap();
        assert_eq!(m.param_count(), 5 * 4 + 2 * 6);
        assert_eq!(m.param_names().len(), m.param_count());
        let out = m
            .forward_with(&vec![0.0; m.param_count()], &[1.0, -2.0, 0.3])
            .unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn mlp_forward_by_hand() {
        // One input, two units, one output.
        let m = Mlp::new(1, 2, 1).unwrap();
        // W1 = [1, -1], b1 = [0, 0.5], W2 = [2, 3], b2 = [0.1]
        let p = [1.0, -1.0, 0.0, 0.5, 2.0, 3.0, 0.1];
        // u = 1: pre = [1, -0.5] → h = [1, 0] → f = 2.1
        assert_eq!(m.forward_with(&p, &[1.0]).unwrap(), vec![2.1]);
        let g = m.gradients_with(&p, &[1.0], &[2.0]).unwrap().0;
        let r = 2.1 - 2.0;
        let want = [2.0 * r, 0.0, 2.0 * r, 0.0, r, 0.0, r];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let m = Mlp::new(2, 20, 2).unwrap();
        let a = m.init_params(7);
        assert_eq!(a, m.init_params(7));
        assert_ne!(a, m.init_params(8));
        assert!(a.iter().all(|w| (-0.5..=0.5).contains(w)));
    }

    fn engine() -> DynamicsEngine {
        DynamicsEngine::from_poly(&PolyCoeffs::new(vec![4.0, 5.0]).unwrap(), 0.01, -1.0).unwrap()
    }

    #[test]
    fn unsupervised_advance_of_zero_model_is_identity() {
        let e = engine();
        let arch = Architecture::Mlp {
            inputs: 2,
            units: 3,
            outputs: 2,
        };
        let mut l = Learner::new(arch, &e, &vec![0.0; arch.param_count()]).unwrap();
        l.advance(&e, None, GradientPoint::StepStart).unwrap();
        assert!(l.params().iter().all(|w| *w == 0.0));
    }

    #[test]
    fn target_equal_to_output_is_free_evolution() {
        let e = engine();
        let mut a = Learner::new(Architecture::Linear, &e, &[1.5, -0.5]).unwrap();
        let mut b = a.clone();
        let f = a.forward(&[0.3]).unwrap();
        a.advance(&e, Some((&[0.3], &f)), GradientPoint::StepStart)
            .unwrap();
        b.advance(&e, None, GradientPoint::StepStart).unwrap();
        assert_eq!(a.params(), b.params());
    }
}
