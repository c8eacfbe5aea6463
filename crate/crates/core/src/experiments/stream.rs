//! Training streams: base points, traversal order and evaluation sets.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasePoint {
    pub input: Vec<f64>,
    /// Known target, used for evaluation even when the point is unsupervised.
    pub target: Option<Vec<f64>>,
    pub supervised: bool,
}

/// One example as seen by the learner.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingEvent {
    pub index: u64,
    pub time: f64,
    pub input: Vec<f64>,
    /// Present iff the event carries supervision.
    pub target: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Traversal {
    /// `a → b`, then `b → a`, without repeating the turnaround point.
    ForwardBackward,
    /// `a → b` on every pass.
    Loop,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingStream {
    points: Vec<BasePoint>,
    input_dim: usize,
    output_dim: usize,
    traversal: Traversal,
    passes_per_iteration: usize,
}

impl TrainingStream {
    pub fn new(
        points: Vec<BasePoint>,
        input_dim: usize,
        output_dim: usize,
        traversal: Traversal,
    ) -> Result<Self> {
        for (i, p) in points.iter().enumerate() {
            if p.input.len() != input_dim {
                return Err(Error::invalid(format!(
                    "point {i}: input dimension {} != {input_dim}",
                    p.input.len()
                )));
            }
            match &p.target {
                Some(t) if t.len() != output_dim => {
                    return Err(Error::invalid(format!(
                        "point {i}: target dimension {} != {output_dim}",
                        t.len()
                    )))
                }
                None if p.supervised => {
                    return Err(Error::invalid(format!(
                        "point {i} is supervised but has no target"
                    )))
                }
                _ => {}
            }
        }
        Ok(TrainingStream {
            points,
            input_dim,
            output_dim,
            traversal,
            passes_per_iteration: 1,
        })
    }

    pub fn with_traversal(mut self, traversal: Traversal) -> Self {
        self.traversal = traversal;
        self
    }

    pub fn with_passes_per_iteration(mut self, passes: usize) -> Result<Self> {
        if passes == 0 {
            return Err(Error::invalid("passes per iteration must be at least 1"));
        }
        self.passes_per_iteration = passes;
        Ok(self)
    }

    pub fn points(&self) -> &[BasePoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn traversal(&self) -> Traversal {
        self.traversal
    }

    pub fn passes_per_iteration(&self) -> usize {
        self.passes_per_iteration
    }

    pub fn supervision_mask(&self) -> Vec<bool> {
        self.points.iter().map(|p| p.supervised).collect()
    }

    pub fn supervised_count(&self) -> usize {
        self.points.iter().filter(|p| p.supervised).count()
    }

    /// Base-point indices visited by pass number `pass` (0-based, counted
    /// from the start of the run).
    pub fn pass_indices(&self, pass: u64) -> Vec<usize> {
        let l = self.points.len();
        match self.traversal {
            Traversal::Loop => (0..l).collect(),
            Traversal::ForwardBackward if l <= 1 || pass == 0 => (0..l).collect(),
            Traversal::ForwardBackward if pass % 2 == 1 => (0..l - 1).rev().collect(),
            Traversal::ForwardBackward => (1..l).collect(),
        }
    }

    /// Indices visited by iteration `iteration` (0-based).
    pub fn iteration_indices(&self, iteration: u64) -> Vec<usize> {
        let ppi = self.passes_per_iteration as u64;
        (iteration * ppi..(iteration + 1) * ppi)
            .flat_map(|p| self.pass_indices(p))
            .collect()
    }

    /// The first `iterations` iterations as timed events, `t_k = k τ`.
    pub fn events(&self, iterations: u64, tau: f64) -> Vec<TrainingEvent> {
        (0..iterations)
            .flat_map(|it| self.iteration_indices(it))
            .enumerate()
            .map(|(k, i)| {
                let p = &self.points[i];
                TrainingEvent {
                    index: k as u64,
                    time: k as f64 * tau,
                    input: p.input.clone(),
                    target: if p.supervised { p.target.clone() } else { None },
                }
            })
            .collect()
    }

    /// Every point that has a target, supervised or not.
    pub fn labeled_set(&self) -> EvalSet {
        let (inputs, targets) = self
            .points
            .iter()
            .filter_map(|p| p.target.as_ref().map(|t| (p.input.clone(), t.clone())))
            .unzip();
        EvalSet { inputs, targets }
    }
}

/// Target rule for one-dimensional sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepTarget {
    /// `f̄ = m u + q`.
    Affine { m: f64, q: f64 },
    /// One-hot `[1, 0]` inside `[low, high]`, `[0, 1]` outside.
    Band { low: f64, high: f64 },
}

impl SweepTarget {
    pub fn output_dim(&self) -> usize {
        match self {
            SweepTarget::Affine { .. } => 1,
            SweepTarget::Band { .. } => 2,
        }
    }

    pub fn eval(&self, u: f64) -> Vec<f64> {
        match *self {
            SweepTarget::Affine { m, q } => vec![m * u + q],
            SweepTarget::Band { low, high } => one_hot((low..=high).contains(&u)),
        }
    }
}

fn one_hot(truth: bool) -> Vec<f64> {
    if truth {
        vec![1.0, 0.0]
    } else {
        vec![0.0, 1.0]
    }
}

/// Indices `⌊i l / count⌋`, `i = 0..count`.
pub fn strided_mask(l: usize, count: usize) -> Result<Vec<bool>> {
    if count > l {
        return Err(Error::invalid(format!(
            "cannot supervise {count} of {l} points"
        )));
    }
    let mut mask = vec![false; l];
    for i in 0..count {
        mask[i * l / count] = true;
    }
    Ok(mask)
}

/// `l` equally spaced points on `[a, b]`, forward-backward traversal.
pub fn interval_sweep(
    a: f64,
    b: f64,
    l: usize,
    target: SweepTarget,
    supervised_count: usize,
) -> Result<TrainingStream> {
    if l < 2 {
        return Err(Error::invalid(format!(
            "sweep needs at least 2 points, got {l}"
        )));
    }
    if !(a < b) {
        return Err(Error::invalid(format!(
            "sweep interval [{a}, {b}] is empty"
        )));
    }
    let mask = strided_mask(l, supervised_count)?;
    let step = (b - a) / (l - 1) as f64;
    let points = mask
        .into_iter()
        .enumerate()
        .map(|(i, supervised)| {
            let u = if i == l - 1 { b } else { a + i as f64 * step };
            BasePoint {
                input: vec![u],
                target: Some(target.eval(u)),
                supervised,
            }
        })
        .collect();
    TrainingStream::new(points, 1, target.output_dim(), Traversal::ForwardBackward)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Spiral,
    Flower,
}

impl TrajectoryKind {
    pub fn point(self, t: f64) -> [f64; 2] {
        match self {
            TrajectoryKind::Spiral => [t / 100.0 * t.cos(), t / 100.0 * t.sin()],
            TrajectoryKind::Flower => [(10.0 * t).cos() * t.cos(), (10.0 * t).cos() * t.sin()],
        }
    }
}

/// Class "true" is the diamond `|x| + |y| ≤ 0.5`.
pub fn diamond_label(p: [f64; 2]) -> bool {
    p[0].abs() + p[1].abs() <= 0.5
}

/// Points at `t = 1..=steps`, all supervised, one-hot diamond labels.
pub fn trajectory_2d(kind: TrajectoryKind, steps: usize) -> Result<TrainingStream> {
    if steps == 0 {
        return Err(Error::invalid("trajectory needs at least one step"));
    }
    let points = (1..=steps)
        .map(|t| {
            let p = kind.point(t as f64);
            BasePoint {
                input: p.to_vec(),
                target: Some(one_hot(diamond_label(p))),
                supervised: true,
            }
        })
        .collect();
    TrainingStream::new(points, 2, 2, Traversal::Loop)
}

/// Labeled inputs for metrics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalSet {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl EvalSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// `side × side` grid over `[-h, h]²` with diamond labels.
///
/// Cell centers put 20 of 100 points exactly on the class boundary, where
/// rounding decides the label. Shifting the lattice by `(0.1, 0.2)` of a cell
/// keeps every point off the boundary and gives an exact 50/50 split.
pub fn grid_set(half_width: f64, count: usize) -> Result<EvalSet> {
    let side = (count as f64).sqrt().round() as usize;
    if side == 0 || side * side != count {
        return Err(Error::invalid(format!(
            "grid count {count} is not a perfect square"
        )));
    }
    if !(half_width > 0.0) {
        return Err(Error::invalid("grid half-width must be positive"));
    }
    let step = 2.0 * half_width / side as f64;
    let mut set = EvalSet::default();
    let mut positives = 0;
    for i in 0..side {
        for j in 0..side {
            let p = [
                -half_width + (i as f64 + 0.6) * step,
                -half_width + (j as f64 + 0.7) * step,
            ];
            let truth = diamond_label(p);
            positives += truth as usize;
            set.inputs.push(p.to_vec());
            set.targets.push(one_hot(truth));
        }
    }
    if 2 * positives != count {
        return Err(Error::invalid(format!(
            "grid of {count} points splits {positives}/{} instead of evenly",
            count - positives
        )));
    }
    Ok(set)
}

/// Reads a feature stream.
///
/// The first line is `dim=<d>,labeled=<0|1>`. Each following row holds `d`
/// floats, plus an integer class in column `d + 1` when labeled; an empty
/// label cell marks an unsupervised row. Classes become one-hot targets of
/// width `max label + 1`.
pub fn ingest_csv(path: &Path) -> Result<TrainingStream> {
    let file = std::fs::File::open(path)?;
    read_stream_csv(file)
}

pub fn read_stream_csv(reader: impl Read) -> Result<TrainingStream> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Err(Error::EmptyStream),
        Some(r) => r.map_err(|e| csv_error(1, e))?,
    };
    let (dim, labeled) = parse_header(&header)?;

    let mut rows: Vec<(Vec<f64>, Option<usize>)> = Vec::new();
    for record in records {
        let record = record.map_err(|e| csv_error(0, e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let expected = dim + labeled as usize;
        if record.len() != expected {
            return Err(Error::Parse {
                line,
                message: format!("expected {expected} columns, found {}", record.len()),
            });
        }
        let input = (0..dim)
            .map(|c| {
                record[c].parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("column {}: `{}` is not a number", c + 1, &record[c]),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let label = if labeled && !record[dim].is_empty() {
            Some(record[dim].parse::<usize>().map_err(|_| Error::Parse {
                line,
                message: format!("label `{}` is not a non-negative integer", &record[dim]),
            })?)
        } else {
            None
        };
        rows.push((input, label));
    }
    if rows.is_empty() {
        return Err(Error::EmptyStream);
    }
    let classes = rows.iter().filter_map(|r| r.1).max().map_or(0, |m| m + 1);
    let points = rows
        .into_iter()
        .map(|(input, label)| {
            let target = label.map(|c| {
                let mut t = vec![0.0; classes];
                t[c] = 1.0;
                t
            });
            BasePoint {
                supervised: target.is_some(),
                input,
                target,
            }
        })
        .collect();
    TrainingStream::new(points, dim, classes, Traversal::Loop)
}

fn csv_error(line: usize, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(line);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

fn parse_header(header: &csv::StringRecord) -> Result<(usize, bool)> {
    let bad = |msg: String| Error::Parse {
        line: 1,
        message: msg,
    };
    let mut dim = None;
    let mut labeled = None;
    for field in header.iter() {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| bad(format!("header field `{field}` is not key=value")))?;
        match key.trim() {
            "dim" => {
                dim = Some(
                    value
                        .trim()
                        .parse::<usize>()
                        .ok()
                        .filter(|d| *d > 0)
                        .ok_or_else(|| bad(format!("dim `{value}` is not a positive integer")))?,
                )
            }
            "labeled" => {
                labeled = Some(match value.trim() {
                    "0" => false,
                    "1" => true,
                    other => return Err(bad(format!("labeled must be 0 or 1, got `{other}`"))),
                })
            }
            other => return Err(bad(format!("unknown header key `{other}`"))),
        }
    }
    Ok((
        dim.ok_or_else(|| bad("header lacks dim=".into()))?,
        labeled.ok_or_else(|| bad("header lacks labeled=".into()))?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_examples() {
        let s = interval_sweep(-1.0, 1.0, 3, SweepTarget::Affine { m: 2.0, q: -1.0 }, 3).unwrap();
        let inputs: Vec<f64> = s.points().iter().map(|p| p.input[0]).collect();
        assert_eq!(inputs, vec![-1.0, 0.0, 1.0]);
        let targets: Vec<f64> = s
            .points()
            .iter()
            .map(|p| p.target.as_ref().unwrap()[0])
            .collect();
        assert_eq!(targets, vec![-3.0, -1.0, 1.0]);
        assert!(s.supervision_mask().iter().all(|m| *m));

        let s =
            interval_sweep(-1.0, 1.0, 100, SweepTarget::Affine { m: 2.0, q: -1.0 }, 10).unwrap();
        let sup: Vec<usize> = (0..100).filter(|&i| s.points()[i].supervised).collect();
        assert_eq!(sup, (0..10).map(|i| 10 * i).collect::<Vec<_>>());

        assert!(interval_sweep(-1.0, 1.0, 1, SweepTarget::Affine { m: 1.0, q: 0.0 }, 1).is_err());
        assert!(interval_sweep(1.0, 1.0, 5, SweepTarget::Affine { m: 1.0, q: 0.0 }, 1).is_err());
    }

    #[test]
    fn forward_backward_does_not_repeat_turnarounds() {
        let s = interval_sweep(0.0, 1.0, 4, SweepTarget::Affine { m: 1.0, q: 0.0 }, 4).unwrap();
        let order: Vec<usize> = (0..4).flat_map(|p| s.pass_indices(p)).collect();
        assert_eq!(order, vec![0, 1, 2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        let s = s.with_passes_per_iteration(2).unwrap();
        assert_eq!(s.iteration_indices(1), vec![1, 2, 3, 2, 1, 0]);
        let looped = s.clone().with_traversal(Traversal::Loop);
        assert_eq!(looped.iteration_indices(3), vec![0, 1, 2, 3, 0, 1, 2, 3]);
    }

    #[test]
    fn events_are_tau_spaced_and_gated() {
        let s = interval_sweep(-1.0, 1.0, 4, SweepTarget::Affine { m: 2.0, q: -1.0 }, 2).unwrap();
        let ev = s.events(2, 0.5);
        assert_eq!(ev.len(), 7);
        for (k, e) in ev.iter().enumerate() {
            assert_eq!(e.time, k as f64 * 0.5);
            assert_eq!(e.target.is_some(), s.points()[idx(&s, k)].supervised);
        }
    }

    fn idx(s: &TrainingStream, k: usize) -> usize {
        (0..2).flat_map(|p| s.pass_indices(p)).nth(k).unwrap()
    }

    #[test]
    fn band_targets() {
        let t = SweepTarget::Band {
            low: -0.5,
            high: 0.5,
        };
        assert_eq!(t.eval(0.0), vec![1.0, 0.0]);
        assert_eq!(t.eval(0.5), vec![1.0, 0.0]);
        assert_eq!(t.eval(-0.9), vec![0.0, 1.0]);
    }

    #[test]
    fn trajectory_examples() {
        let s = trajectory_2d(TrajectoryKind::Spiral, 100).unwrap();
        let p = &s.points()[0].input;
        assert!((p[0] - 0.0054030).abs() < 5e-8 && (p[1] - 0.0084147).abs() < 5e-8);
        let truths = s
            .points()
            .iter()
            .filter(|p| p.target.as_ref().unwrap()[0] == 1.0)
            .count();
        assert_eq!(truths, 40);

        let s = trajectory_2d(TrajectoryKind::Flower, 100).unwrap();
        let p = &s.points()[0].input;
        let c10 = 10f64.cos();
        assert_eq!(p[0], c10 * 1f64.cos());
        assert_eq!(p[1], c10 * 1f64.sin());
        let truths = s
            .points()
            .iter()
            .filter(|p| p.target.as_ref().unwrap()[0] == 1.0)
            .count();
        assert_eq!(truths, 26);

        assert!(diamond_label([0.2, 0.2]));
        assert!(trajectory_2d(TrajectoryKind::Spiral, 0).is_err());
    }

    #[test]
    fn grid_examples() {
        let g = grid_set(0.5, 100).unwrap();
        assert_eq!(g.len(), 100);
        assert_eq!(g.targets.iter().filter(|t| t[0] == 1.0).count(), 50);
        assert!(diamond_label([0.0, 0.0]));
        assert!(!diamond_label([0.5, 0.5]));
        for p in &g.inputs {
            assert!((p[0].abs() + p[1].abs() - 0.5).abs() > 1e-3);
        }
        assert!(grid_set(0.5, 99).is_err());
    }

    #[test]
    fn csv_examples() {
        let s = read_stream_csv("dim=2,labeled=1\n0.1,0.2,1\n0.3,0.4,\n".as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.supervised_count(), 1);
        assert_eq!(s.points()[0].target, Some(vec![0.0, 1.0]));
        assert!(matches!(
            read_stream_csv("".as_bytes()),
            Err(Error::EmptyStream)
        ));
        assert!(matches!(
            read_stream_csv("dim=1,labeled=0\n".as_bytes()),
            Err(Error::EmptyStream)
        ));

        let row: Vec<String> = (0..40).map(|i| format!("{}", i as f64 * 0.1)).collect();
        let text = format!("dim=40,labeled=0\n{}\n", row.join(","));
        let s = read_stream_csv(text.as_bytes()).unwrap();
        assert_eq!(s.input_dim(), 40);
        assert_eq!(s.supervised_count(), 0);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        match read_stream_csv("dim=2,labeled=0\n1,2\n3\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match read_stream_csv("dim=2,labeled=0\n1,2\n3,x\n".as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("column 2"));
            }
            other => panic!("{other:?}"),
        }
        match read_stream_csv("dim=1,labeled=1\n0.5,-1\n".as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            read_stream_csv("dims=2\n1,2\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
