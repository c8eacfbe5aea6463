//! Physical operator parameters and their characteristic polynomials.
//!
//! A first-order operator `T = α0 + α1 D` produces the monic quadratic
//! `s² + θ s + β`; a second-order operator `T = α0 + α1 D + α2 D²` produces a
//! monic quartic with `β3 = 2θ`. This module maps parameters to coefficients,
//! coefficients to roots, and designed roots back to parameters.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rootspace::{characteristic_poly, PolyCoeffs, Root, RootSet};

/// Durand–Kerner iteration cap.
pub const ROOT_MAX_ITERATIONS: usize = 500;
/// Durand–Kerner step-size convergence threshold (relative).
pub const ROOT_CONVERGENCE: f64 = 1e-12;

/// Default fractions of θ for the three fast roots of a designed quartic.
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.60, 0.65, 0.75];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorOrder {
    First,
    Second,
}

impl OperatorOrder {
    pub fn from_usize(order: usize) -> Result<Self> {
        match order {
            1 => Ok(OperatorOrder::First),
            2 => Ok(OperatorOrder::Second),
            other => Err(Error::Unsupported(format!(
                "operator order {other}; only orders 1 and 2 have an α parameterization"
            ))),
        }
    }

    /// Order implied by a characteristic polynomial of the given degree.
    pub fn from_degree(degree: usize) -> Result<Self> {
        match degree {
            2 => Ok(OperatorOrder::First),
            4 => Ok(OperatorOrder::Second),
            other => Err(Error::Unsupported(format!(
                "characteristic degree {other}; expected 2 or 4"
            ))),
        }
    }

    pub fn as_usize(self) -> usize {
        match self {
            OperatorOrder::First => 1,
            OperatorOrder::Second => 2,
        }
    }

    pub fn state_dim(self) -> usize {
        2 * self.as_usize()
    }

    /// Sign in front of the impulse sum: `+` for odd operator orders and `-`
    /// for even ones.
    pub fn forcing_sign(self) -> f64 {
        match self {
            OperatorOrder::First => 1.0,
            OperatorOrder::Second => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorParams {
    pub order: OperatorOrder,
    /// Dissipation rate θ.
    pub theta: f64,
    /// `α0 ..= α_order`.
    pub alphas: Vec<f64>,
    /// Sign of the potential term, ±1.
    pub gamma: f64,
    /// Mass μ.
    pub mu: f64,
    /// Sampling step τ.
    pub tau: f64,
}

impl OperatorParams {
    pub fn new(
        order: usize,
        theta: f64,
        alphas: Vec<f64>,
        gamma: f64,
        mu: f64,
        tau: f64,
    ) -> Result<Self> {
        let params = OperatorParams {
            order: OperatorOrder::from_usize(order)?,
            theta,
            alphas,
            gamma,
            mu,
            tau,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.order.as_usize() + 1;
        if self.alphas.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: self.alphas.len(),
            });
        }
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::invalid(format!(
                "θ must be positive, got {}",
                self.theta
            )));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid(format!(
                "μ must be positive, got {}",
                self.mu
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!(
                "τ must be positive, got {}",
                self.tau
            )));
        }
        if self.gamma != 1.0 && self.gamma != -1.0 {
            return Err(Error::invalid(format!(
                "γ must be -1 or +1, got {}",
                self.gamma
            )));
        }
        if self.alphas.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid("α coefficients must be finite"));
        }
        if self.leading_alpha() == 0.0 {
            return Err(Error::invalid("leading α must be nonzero"));
        }
        Ok(())
    }

    pub fn leading_alpha(&self) -> f64 {
        *self.alphas.last().expect("validated length")
    }

    pub fn poly(&self) -> Result<PolyCoeffs> {
        match self.order {
            OperatorOrder::First => betas_first(self.theta, self.alphas[0], self.alphas[1]),
            OperatorOrder::Second => {
                betas_fourth(self.theta, self.alphas[0], self.alphas[1], self.alphas[2])
            }
        }
    }

    /// Signed impulse gain κ such that `y = y° + κ Σ ζ_k g(t - t_k)`.
    pub fn gain(&self) -> f64 {
        let a = self.leading_alpha();
        self.order.forcing_sign() * self.gamma / (self.mu * a * a)
    }
}

/// `s² + θ s + β` with `β = (α0 α1 θ - α0²) / α1²`.
pub fn betas_first(theta: f64, alpha0: f64, alpha1: f64) -> Result<PolyCoeffs> {
    if alpha1 == 0.0 {
        return Err(Error::invalid("α1 must be nonzero"));
    }
    let beta = (alpha0 * alpha1 * theta - alpha0 * alpha0) / (alpha1 * alpha1);
    PolyCoeffs::new(vec![beta, theta])
}

/// Quartic coefficients `β0..β3` of the second-order operator.
pub fn betas_fourth(theta: f64, alpha0: f64, alpha1: f64, alpha2: f64) -> Result<PolyCoeffs> {
    if alpha2 == 0.0 {
        return Err(Error::invalid("α2 must be nonzero"));
    }
    let (t, a0, a1, a2) = (theta, alpha0, alpha1, alpha2);
    let a2sq = a2 * a2;
    let b0 = (a0 * a2 * t * t - a0 * a1 * t + a0 * a0) / a2sq;
    let b1 = (a1 * a2 * t * t + (2.0 * a0 * a2 - a1 * a1) * t) / a2sq;
    let b2 = (a2sq * t * t + a1 * a2 * t + 2.0 * a0 * a2 - a1 * a1) / a2sq;
    PolyCoeffs::new(vec![b0, b1, b2, 2.0 * t])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub name: String,
    pub satisfied: bool,
    pub margin: f64,
}

impl Condition {
    fn new(name: &str, margin: f64) -> Self {
        Condition {
            name: name.to_string(),
            satisfied: margin > 0.0,
            margin,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub stable: bool,
    pub conditions: Vec<Condition>,
}

impl StabilityReport {
    /// Smallest margin over all conditions.
    pub fn min_margin(&self) -> f64 {
        self.conditions
            .iter()
            .map(|c| c.margin)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Routh–Hurwitz conditions for monic polynomials of degree 2 or 4.
pub fn routh_hurwitz(poly: &PolyCoeffs) -> Result<StabilityReport> {
    let b = poly.beta();
    let conditions = match b.len() {
        2 => vec![
            Condition::new("beta0 > 0", b[0]),
            Condition::new("beta1 > 0", b[1]),
        ],
        4 => vec![
            Condition::new("beta0 > 0", b[0]),
            Condition::new("beta1 > 0", b[1]),
            Condition::new("beta2 > 0", b[2]),
            Condition::new("beta3 > 0", b[3]),
            Condition::new("beta3*beta2 > beta1", b[3] * b[2] - b[1]),
            Condition::new(
                "beta3*beta2*beta1 > beta1^2 + beta3^2*beta0",
                b[3] * b[2] * b[1] - b[1] * b[1] - b[3] * b[3] * b[0],
            ),
        ],
        d => {
            return Err(Error::Unsupported(format!(
                "Routh-Hurwitz check for degree {d}; expected 2 or 4"
            )))
        }
    };
    Ok(StabilityReport {
        stable: conditions.iter().all(|c| c.satisfied),
        conditions,
    })
}

/// All roots of a monic polynomial by Durand–Kerner iteration, clustered into
/// a [`RootSet`].
pub fn poly_roots(poly: &PolyCoeffs) -> Result<RootSet> {
    let n = poly.degree();
    let beta = poly.beta();
    let estimates = if n == 1 {
        vec![Complex64::new(-beta[0], 0.0)]
    } else {
        durand_kerner(beta)?
    };
    let roots = polish(poly, RootSet::from_values(&estimates)?)?;
    let bound = 1e-8 * poly.norm();
    for r in roots.roots() {
        let residual = poly.eval(r.value).norm();
        if residual >= bound.max(f64::MIN_POSITIVE) {
            return Err(Error::NoConvergence {
                iterations: ROOT_MAX_ITERATIONS,
                residual,
            });
        }
    }
    Ok(roots)
}

/// Newton refinement of each cluster on `p^(m-1)`, where a root of
/// multiplicity `m` is simple.
fn polish(poly: &PolyCoeffs, roots: RootSet) -> Result<RootSet> {
    let full = poly.full();
    let refined: Vec<Root> = roots
        .roots()
        .iter()
        .map(|r| {
            let d = derivative(&full, r.multiplicity - 1);
            let dd = derivative(&d, 1);
            let mut z = r.value;
            for _ in 0..8 {
                let slope = eval_real(&dd, z);
                if slope.norm() == 0.0 {
                    break;
                }
                let step = eval_real(&d, z) / slope;
                if !(step.norm() < 1e-3 * (1.0 + z.norm())) {
                    break;
                }
                z -= step;
                if step.norm() <= 1e-16 * (1.0 + z.norm()) {
                    break;
                }
            }
            Root::new(z, r.multiplicity)
        })
        .collect();
    RootSet::new(refined).or(Ok(roots))
}

fn derivative(coeffs: &[f64], order: usize) -> Vec<f64> {
    let mut c = coeffs.to_vec();
    for _ in 0..order {
        c = c
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, v)| k as f64 * v)
            .collect();
    }
    c
}

fn eval_real(coeffs: &[f64], s: Complex64) -> Complex64 {
    coeffs
        .iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * s + c)
}

fn durand_kerner(beta: &[f64]) -> Result<Vec<Complex64>> {
    let n = beta.len();
    let radius = 1.0 + beta.iter().map(|b| b.abs()).fold(0.0, f64::max);
    // Points on a circle with an irrational twist so no guess is real or
    // symmetric under conjugation.
    let mut z: Vec<Complex64> = (0..n)
        .map(|k| {
            Complex64::from_polar(
                radius,
                2.0 * std::f64::consts::PI * k as f64 / n as f64 + 0.4,
            )
        })
        .collect();
    let eval = |s: Complex64| crate::poly::eval_monic(beta, s);
    let mut converged = false;
    for _ in 0..ROOT_MAX_ITERATIONS {
        let mut max_step: f64 = 0.0;
        for k in 0..n {
            let denom: Complex64 = (0..n).filter(|&j| j != k).map(|j| z[k] - z[j]).product();
            if denom.norm() == 0.0 {
                // Coincident estimates; nudge apart and keep iterating.
                z[k] += Complex64::new(1e-8 * radius, 1e-8 * radius);
                max_step = f64::INFINITY;
                continue;
            }
            let step = eval(z[k]) / denom;
            z[k] -= step;
            max_step = max_step.max(step.norm() / (1.0 + z[k].norm()));
        }
        if z.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::numeric("root iteration produced non-finite values"));
        }
        if max_step <= ROOT_CONVERGENCE {
            converged = true;
            break;
        }
    }
    if !converged {
        // Multiple roots converge only linearly and stall near sqrt(eps); the
        // caller's residual check decides whether the estimates are usable.
        log::debug!("Durand-Kerner hit the iteration cap; deferring to residual check");
    }
    Ok(z)
}

/// `θ` and the candidate ratios `ν = α0/α1` reproducing two real roots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderFit {
    pub theta: f64,
    pub nu: Vec<f64>,
}

pub fn roots_to_params_first(roots: &RootSet) -> Result<FirstOrderFit> {
    if roots.degree() != 2 {
        return Err(Error::invalid(format!(
            "first-order operators have 2 roots, got {}",
            roots.degree()
        )));
    }
    if roots.roots().iter().any(|r| !r.is_real()) {
        return Err(Error::invalid(
            "first-order parameter recovery needs real roots",
        ));
    }
    let beta = characteristic_poly(roots)?;
    let (b, theta) = (beta.beta()[0], beta.beta()[1]);
    // ν² - θν + β = 0; its discriminant is (λ1 - λ2)² ≥ 0.
    let disc = (theta * theta - 4.0 * b).max(0.0).sqrt();
    let mut nu = vec![(theta - disc) / 2.0, (theta + disc) / 2.0];
    nu.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    Ok(FirstOrderFit { theta, nu })
}

/// One real positive solution of the second-order recovery.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderBranch {
    /// `α0 / α2`.
    pub nu0: f64,
    /// `α1 / α2`.
    pub nu1: f64,
    /// `α1` with `α0 = α2 = 1` normalization, `(ν0 θ² + ν0² - β0) / (ν0 θ)`.
    pub alpha1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderFit {
    pub theta: f64,
    pub branches: Vec<SecondOrderBranch>,
}

/// Residual of the constraint `β1 = β3 β2 / 2 - β3³ / 8` that every quartic
/// produced by a second-order operator satisfies, relative to the terms.
pub fn beta1_relation_residual(poly: &PolyCoeffs) -> Result<f64> {
    let b = poly.beta();
    if b.len() != 4 {
        return Err(Error::invalid("β1 relation applies to quartics"));
    }
    let predicted = b[3] * b[2] / 2.0 - b[3].powi(3) / 8.0;
    let scale = 1f64
        .max(b[1].abs())
        .max((b[3] * b[2] / 2.0).abs())
        .max((b[3].powi(3) / 8.0).abs());
    Ok((b[1] - predicted).abs() / scale)
}

/// Recovers `(θ, ν0, ν1)` branches realizing a quartic root set.
pub fn roots_to_params_second(roots: &RootSet) -> Result<SecondOrderFit> {
    if roots.degree() != 4 {
        return Err(Error::invalid(format!(
            "second-order operators have 4 roots, got {}",
            roots.degree()
        )));
    }
    let poly = characteristic_poly(roots)?;
    let b = poly.beta().to_vec();
    let theta = b[3] / 2.0;
    if theta <= 0.0 {
        return Err(Error::Infeasible(format!(
            "θ = -Σλ/2 = {theta} is not positive"
        )));
    }
    let residual = beta1_relation_residual(&poly)?;
    if residual > 1e-8 {
        return Err(Error::Infeasible(format!(
            "roots violate β1 = β3β2/2 - β3³/8 (relative residual {residual:e}); no (θ, α0, α1, α2) realizes them"
        )));
    }
    let (b0, b1) = (b[0], b[1]);
    let t = theta;
    let quartic = PolyCoeffs::new(vec![
        2.0 * t * b1 + b1 * b1 / (t * t) - 4.0 * b0,
        -2.0 * t.powi(3) - 4.0 * b1,
        5.0 * t * t + 2.0 * b1 / t,
        -4.0 * t,
    ])?;
    let nu1_roots = poly_roots(&quartic)?;
    let mut branches = Vec::new();
    for r in nu1_roots.roots() {
        if !r.is_real() {
            continue;
        }
        let nu1 = r.value.re;
        let nu0 = (b1 + nu1 * nu1 * t - nu1 * t * t) / (2.0 * t);
        if !(nu1 > 0.0 && nu0 > 0.0) {
            continue;
        }
        let alpha1 = (nu0 * t * t + nu0 * nu0 - b0) / (nu0 * t);
        let check = betas_fourth(t, nu0, nu1, 1.0)?;
        let mismatch = check
            .beta()
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs() / (1.0 + y.abs()))
            .fold(0.0, f64::max);
        if mismatch > 1e-6 {
            log::debug!("dropping branch ν1 = {nu1}: coefficient mismatch {mismatch:e}");
            continue;
        }
        branches.push(SecondOrderBranch { nu0, nu1, alpha1 });
    }
    if branches.is_empty() {
        return Err(Error::Infeasible(
            "no real branch with ν0 > 0 and ν1 > 0".to_string(),
        ));
    }
    branches.sort_by(|a, b| a.nu1.total_cmp(&b.nu1));
    Ok(SecondOrderFit { theta, branches })
}

/// Memory span and fast-root fractions for a designed quartic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    /// Memory span `a`; the slow root is `-1/a`.
    pub a: f64,
    /// The remaining roots as fractions of θ.
    pub fractions: [f64; 3],
}

impl DesignSpec {
    pub fn new(a: f64) -> Self {
        DesignSpec {
            a,
            fractions: DEFAULT_FRACTIONS,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    pub roots: RootSet,
    pub warnings: Vec<String>,
}

/// `λ1 = -1/a`, `λ_{2,3,4} = -f_j θ`.
pub fn design_roots(spec: &DesignSpec, theta: f64) -> Result<Design> {
    if !(spec.a > 0.0 && spec.a.is_finite()) {
        return Err(Error::invalid(format!(
            "memory span a must be positive, got {}",
            spec.a
        )));
    }
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::invalid(format!("θ must be positive, got {theta}")));
    }
    if spec.fractions.iter().any(|f| !(*f > 0.0 && f.is_finite())) {
        return Err(Error::invalid("root fractions must be positive"));
    }
    let memory = -1.0 / spec.a;
    let mut values = vec![memory];
    values.extend(spec.fractions.iter().map(|f| -f * theta));
    let roots = RootSet::from_real(&values)?;

    let mut warnings = Vec::new();
    let sum_gap = (-roots.sum() - 2.0 * theta).abs();
    if sum_gap > 1e-6 {
        warnings.push(format!(
            "-Σλ = {} differs from 2θ = {} by {sum_gap:e}",
            -roots.sum(),
            2.0 * theta
        ));
    }
    let fastest_slow = spec
        .fractions
        .iter()
        .fold(f64::INFINITY, |m, f| m.min(f * theta));
    if memory.abs() >= fastest_slow {
        warnings.push(format!(
            "memory root {memory} is not small compared with the fast roots (min {fastest_slow})"
        ));
    }
    if roots.degree() != 4 {
        warnings.push("design roots coincide and were merged".to_string());
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Design { roots, warnings })
}
