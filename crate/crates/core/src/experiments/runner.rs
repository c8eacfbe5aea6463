use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::metrics::{evaluate, Metrics};
use super::stream::{EvalSet, TrainingStream};
use crate::dynamics::{weight_value, DynamicsEngine};
use crate::error::Result;
use crate::models::{GradientPoint, Learner, Model};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    /// Index into [`TraceLog::weight_names`].
    pub weight: usize,
    pub value: f64,
    pub divergent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub phase: usize,
    /// Iterations completed within the phase.
    pub iteration: u64,
    pub t: f64,
    pub set: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: usize,
    pub iterations: u64,
    pub tau: f64,
    pub supervision: bool,
    pub t_end: f64,
    /// Per weight, mean over the steps of the phase's last iteration.
    pub last_iteration_mean: Vec<f64>,
    pub final_values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub weight: String,
    pub t: f64,
    pub phase: usize,
    /// 0-based iteration within the phase during which the flag was raised.
    pub iteration: u64,
    pub step: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceLog {
    pub weight_names: Vec<String>,
    pub rows: Vec<TraceRow>,
    pub metrics: Vec<MetricsRecord>,
    pub phases: Vec<PhaseSummary>,
    pub divergence: Option<Divergence>,
    pub aborted: bool,
}

impl TraceLog {
    pub fn weight_index(&self, name: &str) -> Option<usize> {
        self.weight_names.iter().position(|n| n == name)
    }

    /// `(t, value)` samples of one weight.
    pub fn series(&self, weight: usize) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.weight == weight)
            .map(|r| (r.t, r.value))
            .collect()
    }

    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }
}

/// Steps one model through a stream, phase by phase.
pub struct Runner<'a> {
    config: &'a ExperimentConfig,
    stream: TrainingStream,
    eval_sets: Vec<(String, EvalSet)>,
    engine: DynamicsEngine,
    learner: Learner,
    log: TraceLog,
    t: f64,
    step: u64,
    pass: u64,
}

impl<'a> Runner<'a> {
    pub fn new(config: &'a ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let engine = config
            .operator
            .build(config.tau)?
            .with_threshold(config.divergence_threshold)?;
        let stream = config.stream.build()?;
        let learner = config.model.build(&engine, &stream, config.seed)?;
        let eval_sets = config
            .evaluation
            .iter()
            .map(|e| Ok((e.name.clone(), e.set.build(&stream)?)))
            .collect::<Result<Vec<_>>>()?;
        let log = TraceLog {
            weight_names: learner.arch().param_names(),
            ..TraceLog::default()
        };
        Ok(Runner {
            config,
            stream,
            eval_sets,
            engine,
            learner,
            log,
            t: 0.0,
            step: 0,
            pass: 0,
        })
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn stream(&self) -> &TrainingStream {
        &self.stream
    }

    fn record(&mut self) {
        let t = self.t;
        for (i, s) in self.learner.states().iter().enumerate() {
            self.log.rows.push(TraceRow {
                t,
                weight: i,
                value: weight_value(s),
                divergent: s.is_divergent(),
            });
        }
    }

    fn snapshot(&mut self, phase: usize, iteration: u64) -> Result<()> {
        for (name, set) in &self.eval_sets {
            let metrics = evaluate(&self.learner, set)?;
            self.log.metrics.push(MetricsRecord {
                phase,
                iteration,
                t: self.t,
                set: name.clone(),
                metrics,
            });
        }
        Ok(())
    }

    pub fn run(mut self) -> Result<TraceLog> {
        let every = self.config.output.trace_every;
        let metrics_every = self.config.output.metrics_every;
        let point = self.config.gradient_at;
        self.record();
        if self.learner.any_divergent() {
            self.flag_divergence(0, 0);
        }

        for (phase_idx, phase) in self.config.phases.iter().enumerate() {
            let tau = phase.tau.unwrap_or(self.config.tau);
            let engine = if tau == self.engine.tau() {
                self.engine.clone()
            } else {
                self.engine.retimed(tau)?
            };
            let n = self.learner.states().len();
            let mut last_sum = vec![0.0; n];
            let mut last_count = 0usize;

            for iteration in 0..phase.iterations {
                let last = iteration + 1 == phase.iterations;
                let ppi = self.stream.passes_per_iteration() as u64;
                for p in 0..ppi {
                    let indices = self.stream.pass_indices(self.pass + p);
                    for i in indices {
                        let point_ref = &self.stream.points()[i];
                        let example =
                            match (&point_ref.target, phase.supervision && point_ref.supervised) {
                                (Some(target), true) => {
                                    Some((point_ref.input.as_slice(), target.as_slice()))
                                }
                                _ => None,
                            };
                        self.learner.advance(&engine, example, point)?;
                        self.t += tau;
                        self.step += 1;
                        if every > 0 && self.step % every == 0 {
                            self.record();
                        }
                        if last {
                            for (acc, s) in last_sum.iter_mut().zip(self.learner.states()) {
                                *acc += weight_value(s);
                            }
                            last_count += 1;
                        }
                        if self.log.divergence.is_none() && self.learner.any_divergent() {
                            self.flag_divergence(phase_idx, iteration);
                            if self.config.abort_on_divergence {
                                self.log.aborted = true;
                                return self.finish(
                                    phase_idx,
                                    iteration + 1,
                                    tau,
                                    phase.supervision,
                                    last_sum,
                                    last_count,
                                );
                            }
                        }
                    }
                }
                self.pass += ppi;
                if metrics_every > 0 && (iteration + 1) % metrics_every == 0 && !last {
                    self.snapshot(phase_idx, iteration + 1)?;
                }
            }
            if every == 0 || self.step % every != 0 {
                self.record();
            }
            self.snapshot(phase_idx, phase.iterations)?;
            self.push_summary(
                phase_idx,
                phase.iterations,
                tau,
                phase.supervision,
                last_sum,
                last_count,
            );
        }
        Ok(self.log)
    }

    fn flag_divergence(&mut self, phase: usize, iteration: u64) {
        let idx = self
            .learner
            .states()
            .iter()
            .position(|s| s.is_divergent())
            .expect("some state is divergent");
        log::warn!(
            "weight {} diverged at t = {}",
            self.log.weight_names[idx],
            self.t
        );
        self.log.divergence = Some(Divergence {
            weight: self.log.weight_names[idx].clone(),
            t: self.t,
            phase,
            iteration,
            step: self.step,
        });
    }

    fn push_summary(
        &mut self,
        phase: usize,
        iterations: u64,
        tau: f64,
        supervision: bool,
        sum: Vec<f64>,
        count: usize,
    ) {
        let last_iteration_mean = if count == 0 {
            self.learner.params()
        } else {
            sum.iter().map(|s| s / count as f64).collect()
        };
        self.log.phases.push(PhaseSummary {
            phase,
            iterations,
            tau,
            supervision,
            t_end: self.t,
            last_iteration_mean,
            final_values: self.learner.params(),
        });
    }

    fn finish(
        mut self,
        phase: usize,
        iterations: u64,
        tau: f64,
        supervision: bool,
        sum: Vec<f64>,
        count: usize,
    ) -> Result<TraceLog> {
        self.record();
        self.push_summary(phase, iterations, tau, supervision, sum, count);
        Ok(self.log)
    }
}

/// Builds everything a config describes and runs it to completion.
pub fn run_experiment(config: &ExperimentConfig) -> Result<TraceLog> {
    Runner::new(config)?.run()
}

/// Runs a model on an explicit stream with one engine, recording every step.
/// Lower-level than [`run_experiment`]; used by tests and tools.
pub fn run_stream(
    learner: &mut Learner,
    engine: &DynamicsEngine,
    stream: &TrainingStream,
    iterations: u64,
    point: GradientPoint,
) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![learner.params()];
    for it in 0..iterations {
        for i in stream.iteration_indices(it) {
            let p = &stream.points()[i];
            let example = match (&p.target, p.supervised) {
                (Some(t), true) => Some((p.input.as_slice(), t.as_slice())),
                _ => None,
            };
            learner.advance(engine, example, point)?;
            out.push(learner.params());
        }
    }
    Ok(out)
}
