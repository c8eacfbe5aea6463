//! JSON experiment description.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::stream::{self, EvalSet, SweepTarget, TrainingStream, TrajectoryKind, Traversal};
use crate::dynamics::{DynamicsEngine, DEFAULT_DIVERGENCE_THRESHOLD};
use crate::error::{Error, Result};
use crate::models::{Architecture, GradientPoint, Learner, Mlp, Model};
use crate::operator_params::{
    design_roots, poly_roots, DesignSpec, OperatorOrder, OperatorParams, DEFAULT_FRACTIONS,
};
use crate::rootspace::{characteristic_poly, RootSet};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    pub operator: OperatorSpec,
    pub tau: f64,
    pub model: ModelSpec,
    pub stream: StreamSpec,
    pub phases: Vec<PhaseSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub divergence_threshold: f64,
    #[serde(default)]
    pub abort_on_divergence: bool,
    #[serde(default)]
    pub gradient_at: GradientPoint,
    #[serde(default)]
    pub evaluation: Vec<EvalSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_threshold() -> f64 {
    DEFAULT_DIVERGENCE_THRESHOLD
}

/// A root given as a real number or as `[re, im]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RootValue {
    Real(f64),
    Complex([f64; 2]),
}

impl RootValue {
    pub fn value(self) -> Complex64 {
        match self {
            RootValue::Real(re) => Complex64::new(re, 0.0),
            RootValue::Complex([re, im]) => Complex64::new(re, im),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    Params {
        order: usize,
        theta: f64,
        alphas: Vec<f64>,
        gamma: f64,
        mu: f64,
    },
    Roots {
        roots: Vec<RootValue>,
        #[serde(default)]
        eta: Option<f64>,
        #[serde(default)]
        kappa: Option<f64>,
    },
    Design {
        theta: f64,
        a: f64,
        #[serde(default = "default_fractions")]
        fractions: [f64; 3],
        #[serde(default)]
        eta: Option<f64>,
        #[serde(default)]
        kappa: Option<f64>,
    },
}

fn default_fractions() -> [f64; 3] {
    DEFAULT_FRACTIONS
}

/// κ from exactly one of `eta` (sign rule by operator order) or `kappa`.
fn resolve_gain(roots: &RootSet, eta: Option<f64>, kappa: Option<f64>) -> Result<f64> {
    let gain = match (eta, kappa) {
        (Some(eta), None) => {
            OperatorOrder::from_degree(roots.degree())
                .map_err(|_| {
                    Error::Config(format!(
                        "eta needs 2 or 4 roots to fix the gain sign; give kappa for degree {}",
                        roots.degree()
                    ))
                })?
                .forcing_sign()
                * eta
        }
        (None, Some(kappa)) => kappa,
        _ => return Err(Error::Config("give exactly one of eta or kappa".into())),
    };
    if !gain.is_finite() {
        return Err(Error::Config("gain must be finite".into()));
    }
    Ok(gain)
}

impl OperatorSpec {
    /// Roots of the characteristic polynomial the operator realizes.
    pub fn roots(&self, tau: f64) -> Result<RootSet> {
        match self {
            OperatorSpec::Params {
                order,
                theta,
                alphas,
                gamma,
                mu,
            } => {
                let p = OperatorParams::new(*order, *theta, alphas.clone(), *gamma, *mu, tau)?;
                poly_roots(&p.poly()?)
            }
            OperatorSpec::Roots { roots, .. } => {
                let values: Vec<Complex64> = roots.iter().map(|r| r.value()).collect();
                RootSet::from_values(&values)
            }
            OperatorSpec::Design {
                theta,
                a,
                fractions,
                ..
            } => Ok(design_roots(
                &DesignSpec {
                    a: *a,
                    fractions: *fractions,
                },
                *theta,
            )?
            .roots),
        }
    }

    pub fn build(&self, tau: f64) -> Result<DynamicsEngine> {
        match self {
            OperatorSpec::Params {
                order,
                theta,
                alphas,
                gamma,
                mu,
            } => {
                let p = OperatorParams::new(*order, *theta, alphas.clone(), *gamma, *mu, tau)?;
                crate::dynamics::build_engine(&p)
            }
            OperatorSpec::Roots { roots, eta, kappa } => {
                let values: Vec<Complex64> = roots.iter().map(|r| r.value()).collect();
                let set = RootSet::from_values(&values)?;
                let gain = resolve_gain(&set, *eta, *kappa)?;
                DynamicsEngine::from_poly(&characteristic_poly(&set)?, tau, gain)
            }
            OperatorSpec::Design {
                theta,
                a,
                fractions,
                eta,
                kappa,
            } => {
                let design = design_roots(
                    &DesignSpec {
                        a: *a,
                        fractions: *fractions,
                    },
                    *theta,
                )?;
                let gain = resolve_gain(&design.roots, *eta, *kappa)?;
                DynamicsEngine::from_poly(&characteristic_poly(&design.roots)?, tau, gain)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// Initial state per weight: value first, then derivatives; missing
    /// entries are zero.
    Linear {
        #[serde(default)]
        y: Vec<f64>,
        #[serde(default)]
        b: Vec<f64>,
    },
    Mlp {
        units: usize,
    },
}

impl ModelSpec {
    pub fn build(
        &self,
        engine: &DynamicsEngine,
        stream: &TrainingStream,
        seed: u64,
    ) -> Result<Learner> {
        match self {
            ModelSpec::Linear { y, b } => {
                if stream.input_dim() != 1 || stream.output_dim() != 1 {
                    return Err(Error::Config(format!(
                        "linear unit needs scalar inputs and targets, stream has {} → {}",
                        stream.input_dim(),
                        stream.output_dim()
                    )));
                }
                let n = engine.dim();
                let pad = |v: &[f64], name: &str| -> Result<Vec<f64>> {
                    if v.len() > n {
                        return Err(Error::Config(format!(
                            "initial state for `{name}` has {} entries, state dimension is {n}",
                            v.len()
                        )));
                    }
                    let mut s = v.to_vec();
                    s.resize(n, 0.0);
                    Ok(s)
                };
                Learner::with_states(Architecture::Linear, engine, &[pad(y, "y")?, pad(b, "b")?])
            }
            ModelSpec::Mlp { units } => {
                let outputs = stream.output_dim();
                if outputs == 0 {
                    return Err(Error::Config("MLP needs a stream with targets".into()));
                }
                let mlp = Mlp::new(stream.input_dim(), *units, outputs)?;
                let arch = Architecture::Mlp {
                    inputs: mlp.inputs,
                    units: mlp.units,
                    outputs: mlp.outputs,
                };
                debug_assert_eq!(arch.param_count(), mlp.param_count());
                Learner::new(arch, engine, &mlp.init_params(seed))
            }
        }
    }
}

fn forward_backward() -> Traversal {
    Traversal::ForwardBackward
}

fn looped() -> Traversal {
    Traversal::Loop
}

fn one() -> usize {
    1
}

fn hundred() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StreamSpec {
    IntervalSweep {
        a: f64,
        b: f64,
        points: usize,
        target: SweepTarget,
        /// Defaults to every point.
        #[serde(default)]
        supervised: Option<usize>,
        #[serde(default = "forward_backward")]
        traversal: Traversal,
        #[serde(default = "one")]
        passes_per_iteration: usize,
    },
    Trajectory {
        shape: TrajectoryKind,
        #[serde(default = "hundred")]
        steps: usize,
        #[serde(default = "looped")]
        traversal: Traversal,
        #[serde(default = "one")]
        passes_per_iteration: usize,
    },
    Csv {
        path: PathBuf,
        #[serde(default = "looped")]
        traversal: Traversal,
        #[serde(default = "one")]
        passes_per_iteration: usize,
    },
}

impl StreamSpec {
    pub fn build(&self) -> Result<TrainingStream> {
        match self {
            StreamSpec::IntervalSweep {
                a,
                b,
                points,
                target,
                supervised,
                traversal,
                passes_per_iteration,
            } => stream::interval_sweep(*a, *b, *points, *target, supervised.unwrap_or(*points))?
                .with_traversal(*traversal)
                .with_passes_per_iteration(*passes_per_iteration),
            StreamSpec::Trajectory {
                shape,
                steps,
                traversal,
                passes_per_iteration,
            } => stream::trajectory_2d(*shape, *steps)?
                .with_traversal(*traversal)
                .with_passes_per_iteration(*passes_per_iteration),
            StreamSpec::Csv {
                path,
                traversal,
                passes_per_iteration,
            } => stream::ingest_csv(path)?
                .with_traversal(*traversal)
                .with_passes_per_iteration(*passes_per_iteration),
        }
    }
}

fn enabled() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSpec {
    pub iterations: u64,
    /// Step size for this phase; the top-level τ when absent.
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default = "enabled")]
    pub supervision: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    pub name: String,
    pub set: EvalSetSpec,
}

fn half() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvalSetSpec {
    /// Every labeled point of the training stream.
    Training,
    Grid {
        #[serde(default = "half")]
        half_width: f64,
        #[serde(default = "hundred")]
        count: usize,
    },
    Trajectory {
        shape: TrajectoryKind,
        #[serde(default = "hundred")]
        steps: usize,
    },
    Csv {
        path: PathBuf,
    },
}

impl EvalSetSpec {
    pub fn build(&self, training: &TrainingStream) -> Result<EvalSet> {
        match self {
            EvalSetSpec::Training => Ok(training.labeled_set()),
            EvalSetSpec::Grid { half_width, count } => stream::grid_set(*half_width, *count),
            EvalSetSpec::Trajectory { shape, steps } => {
                Ok(stream::trajectory_2d(*shape, *steps)?.labeled_set())
            }
            EvalSetSpec::Csv { path } => Ok(stream::ingest_csv(path)?.labeled_set()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Record weights every this many steps; 0 records only phase ends.
    #[serde(default = "one_u64")]
    pub trace_every: u64,
    /// Evaluate every this many iterations; 0 evaluates only at phase ends.
    #[serde(default)]
    pub metrics_every: u64,
}

fn one_u64() -> u64 {
    1
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            trace_every: 1,
            metrics_every: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut config = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            config.resolve_paths(dir);
        }
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Makes relative CSV paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let StreamSpec::Csv { path, .. } = &mut self.stream {
            fix(path);
        }
        for e in &mut self.evaluation {
            if let EvalSetSpec::Csv { path } = &mut e.set {
                fix(path);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be positive, got {v}")))
            }
        };
        positive(self.tau, "tau")?;
        positive(self.divergence_threshold, "divergence_threshold")?;
        for (i, p) in self.phases.iter().enumerate() {
            if let Some(t) = p.tau {
                positive(t, &format!("phases[{i}].tau"))?;
            }
        }
        if let ModelSpec::Mlp { units: 0 } = self.model {
            return Err(Error::Config("mlp.units must be positive".into()));
        }
        let mut names: Vec<&str> = self.evaluation.iter().map(|e| e.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("evaluation set names must be unique".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const F1: &str = r#"{
        "version": 1,
        "operator": {"kind": "params", "order": 1, "theta": 5, "alphas": [1, 1], "gamma": -1, "mu": 1},
        "tau": 0.01,
        "model": {"kind": "linear"},
        "stream": {"kind": "interval_sweep", "a": -1, "b": 1, "points": 20,
                   "target": {"kind": "affine", "m": 2, "q": -1}},
        "phases": [{"iterations": 40}]
    }"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_json(F1).unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.divergence_threshold, 1e6);
        assert_eq!(c.gradient_at, GradientPoint::StepStart);
        assert!(c.phases[0].supervision);
        let engine = c.operator.build(c.tau).unwrap();
        assert_eq!(engine.kappa(), -1.0);
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let typo = F1.replace("\"tau\": 0.01", "\"tau\": 0.01, \"sead\": 3");
        let err = ExperimentConfig::from_json(&typo).unwrap_err();
        assert!(err.to_string().contains("sead"), "{err}");
        let nested = F1.replace("\"gamma\": -1", "\"gamma\": -1, \"gama\": 1");
        assert!(ExperimentConfig::from_json(&nested).is_err());
        let version = F1.replace("\"version\": 1", "\"version\": 2");
        assert!(ExperimentConfig::from_json(&version).is_err());
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = ExperimentConfig::from_json("{\n  \"version\": 1,\n  oops\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert!(msg.contains("column"), "{msg}");
    }

    #[test]
    fn gain_sign_follows_order() {
        let roots = OperatorSpec::Roots {
            roots: vec![RootValue::Real(-1.0), RootValue::Real(-4.0)],
            eta: Some(0.5),
            kappa: None,
        };
        assert_eq!(roots.build(0.1).unwrap().kappa(), 0.5);
        let design = OperatorSpec::Design {
            theta: 1.0,
            a: 1e8,
            fractions: DEFAULT_FRACTIONS,
            eta: Some(0.001),
            kappa: None,
        };
        assert_eq!(design.build(0.01).unwrap().kappa(), -0.001);
        let both = OperatorSpec::Roots {
            roots: vec![
                RootValue::Complex([-1.0, 1.0]),
                RootValue::Complex([-1.0, -1.0]),
            ],
            eta: Some(1.0),
            kappa: Some(1.0),
        };
        assert!(both.build(0.1).is_err());
    }
}
