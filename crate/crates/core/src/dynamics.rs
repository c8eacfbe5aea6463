//! Exact discretization of the impulse-driven weight dynamics.
//!
//! Each weight obeys a linear ODE with characteristic polynomial `p(s)`. In
//! companion form `x' = A x + B u` with `B = [0, .., 0, -1]`, an impulse of
//! weight `κζ` at mid-step gives
//!
//! ```text
//! x[K+1] = e^{Aτ} x[K] - e^{Aτ/2} B κ ζ
//! ```
//!
//! The minus sign cancels the `-1` in `B`, so that a single impulse produces
//! the weight trajectory `κ ζ g(t - t_k)` with `g` the impulse response of
//! `1/p(s)`.

use nalgebra::{DMatrix, DVector};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::operator_params::OperatorParams;
use crate::rootspace::{characteristic_poly, PolyCoeffs, RootSet};

/// Default `|state|∞` above which a weight is declared divergent.
pub const DEFAULT_DIVERGENCE_THRESHOLD: f64 = 1e6;

pub type StateVec = SmallVec<[f64; 4]>;

// Padé(13) numerator coefficients and the 1-norm bound θ13 from Higham (2005).
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371920351148152;

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `e^M` by scaling and squaring with the degree-13 diagonal Padé approximant.
pub fn matrix_exponential(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("matrix exponential of a non-finite matrix"));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let norm = one_norm(m);
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = m * 2f64.powi(-s);
    let b = &PADE13;
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &id * b[1];
    let u = &a * inner_u;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &id * b[0];
    let lu = (&v - &u).lu();
    let mut r = lu
        .solve(&(&v + &u))
        .ok_or_else(|| Error::numeric("singular Padé denominator"))?;
    for _ in 0..s {
        r = &r * &r;
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!(
            "matrix exponential overflowed (1-norm {norm:e})"
        )));
    }
    Ok(r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompanionSystem {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl CompanionSystem {
    pub fn new(poly: &PolyCoeffs) -> Self {
        let n = poly.degree();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n.saturating_sub(1) {
            a[(i, i + 1)] = 1.0;
        }
        for (j, beta) in poly.beta().iter().enumerate() {
            a[(n - 1, j)] = -beta;
        }
        let mut b = DVector::zeros(n);
        b[n - 1] = -1.0;
        CompanionSystem { a, b }
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }
}

/// Precomputed one-step propagators for a fixed `(A, τ, κ)`.
#[derive(Clone, Debug)]
pub struct DynamicsEngine {
    system: CompanionSystem,
    tau: f64,
    kappa: f64,
    e: DMatrix<f64>,
    h_half: DVector<f64>,
    /// First row of `e^{Aτ/2}`: maps a state to the free weight value half a
    /// step later.
    half_row: Vec<f64>,
    threshold: f64,
}

/// Engine for an operator given by its physical parameters.
pub fn build_engine(params: &OperatorParams) -> Result<DynamicsEngine> {
    params.validate()?;
    DynamicsEngine::from_poly(&params.poly()?, params.tau, params.gain())
}

impl DynamicsEngine {
    pub fn from_poly(poly: &PolyCoeffs, tau: f64, kappa: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::invalid(format!("τ must be positive, got {tau}")));
        }
        if !kappa.is_finite() {
            return Err(Error::invalid("κ must be finite"));
        }
        let system = CompanionSystem::new(poly);
        let e = matrix_exponential(&(system.a() * tau))?;
        let half = matrix_exponential(&(system.a() * (tau / 2.0)))?;
        let h_half = &half * system.b();
        let half_row = half.row(0).iter().copied().collect();
        Ok(DynamicsEngine {
            system,
            tau,
            kappa,
            e,
            h_half,
            half_row,
            threshold: DEFAULT_DIVERGENCE_THRESHOLD,
        })
    }

    pub fn from_roots(roots: &RootSet, tau: f64, kappa: f64) -> Result<Self> {
        Self::from_poly(&characteristic_poly(roots)?, tau, kappa)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0) {
            return Err(Error::invalid(format!(
                "divergence threshold must be positive, got {threshold}"
            )));
        }
        self.threshold = threshold;
        Ok(self)
    }

    /// Same system and gain at a different step size.
    pub fn retimed(&self, tau: f64) -> Result<Self> {
        let poly = PolyCoeffs::new(
            (0..self.dim())
                .map(|j| -self.system.a[(self.dim() - 1, j)])
                .collect(),
        )?;
        Self::from_poly(&poly, tau, self.kappa)?.with_threshold(self.threshold)
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn system(&self) -> &CompanionSystem {
        &self.system
    }

    /// `e^{Aτ}`.
    pub fn propagator(&self) -> &DMatrix<f64> {
        &self.e
    }

    /// `e^{Aτ/2} B`.
    pub fn half_input(&self) -> &DVector<f64> {
        &self.h_half
    }

    /// A state at rest at `weight`.
    pub fn state_at(&self, weight: f64) -> WeightState {
        let mut state = StateVec::from_elem(0.0, self.dim());
        state[0] = weight;
        WeightState::from_state(state, self.threshold)
    }

    pub fn state_from(&self, values: &[f64]) -> Result<WeightState> {
        if values.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: values.len(),
            });
        }
        Ok(WeightState::from_state(
            values.iter().copied().collect(),
            self.threshold,
        ))
    }

    /// Advances one step of length τ; `zeta` is the gradient magnitude of a
    /// supervision arriving at the step start, `None` for free evolution.
    pub fn step(&self, ws: &mut WeightState, zeta: Option<f64>) {
        if ws.divergent {
            return;
        }
        debug_assert_eq!(ws.state.len(), self.dim());
        let n = self.dim();
        let drive = zeta.map(|z| -self.kappa * z).unwrap_or(0.0);
        let mut next = StateVec::from_elem(0.0, n);
        for (i, out) in next.iter_mut().enumerate() {
            let mut acc = drive * self.h_half[i];
            for j in 0..n {
                acc += self.e[(i, j)] * ws.state[j];
            }
            *out = acc;
        }
        let bad = next
            .iter()
            .any(|v| !v.is_finite() || v.abs() > ws.threshold);
        if bad {
            ws.divergent = true;
            // Keep the last finite state; clamp non-finite entries out.
            if next.iter().all(|v| v.is_finite()) {
                ws.state = next;
            }
        } else {
            ws.state = next;
        }
    }

    /// Weight value half a step ahead under free evolution.
    pub fn mid_step_value(&self, ws: &WeightState) -> f64 {
        self.half_row
            .iter()
            .zip(&ws.state)
            .map(|(r, x)| r * x)
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightState {
    state: StateVec,
    divergent: bool,
    threshold: f64,
}

impl WeightState {
    fn from_state(state: StateVec, threshold: f64) -> Self {
        let divergent = state.iter().any(|v| !v.is_finite() || v.abs() > threshold);
        WeightState {
            state,
            divergent,
            threshold,
        }
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn is_divergent(&self) -> bool {
        self.divergent
    }

    /// Scales every component; used for linearity checks.
    pub fn scaled(&self, c: f64) -> Self {
        Self::from_state(self.state.iter().map(|v| v * c).collect(), self.threshold)
    }
}

/// Current weight, the first state component.
pub fn weight_value(ws: &WeightState) -> f64 {
    ws.state[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    #[test]
    fn exponential_examples() {
        let z = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(matrix_exponential(&z).unwrap(), DMatrix::identity(3, 3));

        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -4.0]));
        let e = matrix_exponential(&d).unwrap();
        assert_relative_eq!(e[(0, 0)], (-1f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(e[(1, 1)], (-4f64).exp(), max_relative = 1e-14);
        assert_eq!(e[(0, 1)], 0.0);

        let nil = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = matrix_exponential(&nil).unwrap();
        assert!(max_abs_diff(&e, &DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0])) < 1e-15);
    }

    #[test]
    fn exponential_of_large_norm_matrix() {
        // Rotation generator scaled well beyond θ13.
        let w = 40.0;
        let m = DMatrix::from_row_slice(2, 2, &[0.0, w, -w, 0.0]);
        let e = matrix_exponential(&m).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[w.cos(), w.sin(), -w.sin(), w.cos()]);
        assert!(max_abs_diff(&e, &want) < 1e-12);
    }

    #[test]
    fn exponential_overflow_is_numeric_error() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1000.0, 1.0]));
        assert!(matrix_exponential(&m).unwrap_err().is_numeric());
    }

    #[test]
    fn companion_layout() {
        let sys = CompanionSystem::new(&PolyCoeffs::new(vec![4.0, 5.0]).unwrap());
        assert_eq!(
            sys.a(),
            &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -4.0, -5.0])
        );
        assert_eq!(sys.b().as_slice(), &[0.0, -1.0]);
    }

    #[test]
    fn engine_examples() {
        let p = OperatorParams::new(1, 5.0, vec![1.0, 1.0], -1.0, 1.0, 0.01).unwrap();
        let engine = build_engine(&p).unwrap();
        assert_eq!(engine.kappa(), -1.0);
        assert_eq!(
            engine.system().a(),
            &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -4.0, -5.0])
        );

        let tiny = DynamicsEngine::from_poly(&PolyCoeffs::new(vec![4.0, 5.0]).unwrap(), 1e-9, 1.0)
            .unwrap();
        assert!(max_abs_diff(tiny.propagator(), &DMatrix::identity(2, 2)) < 1e-8);
    }

    #[test]
    fn free_and_zero_steps() {
        let engine = DynamicsEngine::from_poly(
            &PolyCoeffs::new(vec![9.0, 24.0, 22.0, 8.0]).unwrap(),
            0.05,
            0.3,
        )
        .unwrap();
        let mut zero = engine.state_at(0.0);
        engine.step(&mut zero, None);
        assert!(zero.state().iter().all(|v| *v == 0.0));

        let mut a = engine.state_from(&[1.0, -0.5, 0.2, 0.1]).unwrap();
        let mut b = a.clone();
        engine.step(&mut a, None);
        engine.step(&mut b, Some(0.0));
        assert_eq!(a, b);
    }

    #[test]
    fn single_impulse_traces_scaled_response() {
        let roots = RootSet::from_real(&[-1.0, -4.0]).unwrap();
        let (tau, kappa, zeta) = (0.01, -1.0, 0.7);
        let engine = DynamicsEngine::from_roots(&roots, tau, kappa).unwrap();
        let g = crate::rootspace::partial_fraction_coefficients(&roots).unwrap();
        let mut ws = engine.state_at(0.0);
        engine.step(&mut ws, Some(zeta));
        for k in 1..300 {
            let want = kappa * zeta * g.eval(k as f64 * tau - tau / 2.0).unwrap();
            assert!((weight_value(&ws) - want).abs() < 1e-12, "k = {k}");
            engine.step(&mut ws, None);
        }
    }

    #[test]
    fn mid_step_value_is_half_step_free_evolution() {
        let poly = PolyCoeffs::new(vec![4.0, 5.0]).unwrap();
        let engine = DynamicsEngine::from_poly(&poly, 0.2, 1.0).unwrap();
        let half = DynamicsEngine::from_poly(&poly, 0.1, 1.0).unwrap();
        let ws = engine.state_from(&[1.0, 2.0]).unwrap();
        let mut h = ws.clone();
        half.step(&mut h, None);
        assert_relative_eq!(
            engine.mid_step_value(&ws),
            weight_value(&h),
            max_relative = 1e-14
        );
    }

    #[test]
    fn divergence_freezes_state() {
        // Unstable: roots +1, -2.
        let poly = PolyCoeffs::new(vec![-2.0, 1.0]).unwrap();
        let engine = DynamicsEngine::from_poly(&poly, 0.5, 1.0)
            .unwrap()
            .with_threshold(100.0)
            .unwrap();
        let mut ws = engine.state_at(1.0);
        let mut steps = 0;
        while !ws.is_divergent() {
            engine.step(&mut ws, None);
            steps += 1;
            assert!(steps < 100);
        }
        let frozen = ws.clone();
        engine.step(&mut ws, Some(1.0));
        assert_eq!(ws, frozen);
        assert!(weight_value(&ws).is_finite());
    }

    #[test]
    fn retimed_engine_matches_fresh_build() {
        let poly = PolyCoeffs::new(vec![9.0, 24.0, 22.0, 8.0]).unwrap();
        let a = DynamicsEngine::from_poly(&poly, 0.01, -0.5)
            .unwrap()
            .retimed(1.0)
            .unwrap();
        let b = DynamicsEngine::from_poly(&poly, 1.0, -0.5).unwrap();
        assert_eq!(a.propagator(), b.propagator());
        assert_eq!(a.kappa(), b.kappa());
    }
}
