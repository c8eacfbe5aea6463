//! Impulse-response and homogeneous-solution synthesis from the roots of a
//! characteristic polynomial.
//!
//! A linear constant-coefficient ODE `p(D) y = u` with monic characteristic
//! polynomial `p(s) = Π (s - λ_j)^{r_j}` has transfer function `G(s) = 1/p(s)`.
//! Its impulse response is recovered from the partial-fraction expansion
//!
//! ```text
//! 1/p(s) = Σ_j Σ_{i=1..r_j} c_ji / (s - λ_j)^i
//! g(t)   = Σ_j Σ_i c_ji t^{i-1}/(i-1)! e^{λ_j t}
//! ```
//!
//! and the homogeneous solution `y°(t) = Σ_j Σ_i K_ji t^{i-1} e^{λ_j t}` from a
//! confluent Vandermonde system built on the initial conditions.
//!
//! Conjugate root pairs are evaluated in real form, so every evaluation returns
//! a plain `f64`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{binomial, convolve, eval_complex, factorial, linear_power};

/// Relative tolerance used to merge numerically coincident roots.
pub const CLUSTER_RELATIVE_TOLERANCE: f64 = 1e-6;

/// Merge radius for a collection of root values: `1e-6 * (1 + max |λ|)`.
pub fn clustering_tolerance<'a>(values: impl IntoIterator<Item = &'a Complex64>) -> f64 {
    let max_abs = values.into_iter().map(|z| z.norm()).fold(0.0, f64::max);
    CLUSTER_RELATIVE_TOLERANCE * (1.0 + max_abs)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Root {
    pub value: Complex64,
    pub multiplicity: usize,
}

impl Root {
    pub fn new(value: Complex64, multiplicity: usize) -> Self {
        Root {
            value,
            multiplicity,
        }
    }

    pub fn real(value: f64, multiplicity: usize) -> Self {
        Root::new(Complex64::new(value, 0.0), multiplicity)
    }

    pub fn is_real(&self) -> bool {
        self.value.im == 0.0
    }
}

/// Distinct roots of a real characteristic polynomial, with multiplicities.
///
/// Construction snaps near-real values onto the real axis and pairs every
/// non-real root with its exact conjugate, so downstream arithmetic can rely
/// on exact symmetry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootSet {
    roots: Vec<Root>,
}

impl RootSet {
    /// Builds a root set from distinct values with explicit multiplicities.
    pub fn new(roots: Vec<Root>) -> Result<Self> {
        if roots.is_empty() {
            return Err(Error::invalid("root set must contain at least one root"));
        }
        for r in &roots {
            if r.multiplicity == 0 {
                return Err(Error::invalid("root multiplicity must be at least 1"));
            }
            if !r.value.re.is_finite() || !r.value.im.is_finite() {
                return Err(Error::invalid(format!("non-finite root {}", r.value)));
            }
        }
        let tol = clustering_tolerance(roots.iter().map(|r| &r.value));
        for (a, ra) in roots.iter().enumerate() {
            for rb in &roots[a + 1..] {
                if (ra.value - rb.value).norm() <= tol {
                    return Err(Error::invalid(format!(
                        "roots {} and {} are closer than the clustering tolerance {tol:e}; merge them into one root with higher multiplicity",
                        ra.value, rb.value
                    )));
                }
            }
        }
        Self::symmetrize(roots, tol)
    }

    /// Builds a root set from a flat list of values, merging values that lie
    /// within the clustering tolerance into one root with multiplicity.
    pub fn from_values(values: &[Complex64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("root set must contain at least one root"));
        }
        if values
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::invalid("non-finite root value"));
        }
        let tol = clustering_tolerance(values);
        // (sum of members, count)
        let mut clusters: Vec<(Complex64, usize)> = Vec::new();
        for &z in values {
            let hit = clusters
                .iter_mut()
                .find(|(sum, count)| (*sum / *count as f64 - z).norm() <= tol);
            match hit {
                Some((sum, count)) => {
                    *sum += z;
                    *count += 1;
                }
                None => clusters.push((z, 1)),
            }
        }
        let roots = clusters
            .into_iter()
            .map(|(sum, count)| Root::new(sum / count as f64, count))
            .collect();
        Self::symmetrize(roots, tol)
    }

    pub fn from_real(values: &[f64]) -> Result<Self> {
        let values: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        Self::from_values(&values)
    }

    fn symmetrize(mut roots: Vec<Root>, tol: f64) -> Result<Self> {
        for r in roots.iter_mut() {
            if r.value.im.abs() <= tol {
                r.value.im = 0.0;
            }
        }
        let mut paired = vec![false; roots.len()];
        for a in 0..roots.len() {
            if roots[a].is_real() || paired[a] || roots[a].value.im < 0.0 {
                continue;
            }
            let target = roots[a].value.conj();
            let partner = (0..roots.len()).find(|&b| {
                b != a
                    && !paired[b]
                    && roots[b].value.im < 0.0
                    && (roots[b].value - target).norm() <= tol
            });
            match partner {
                Some(b) if roots[b].multiplicity == roots[a].multiplicity => {
                    roots[b].value = target;
                    paired[a] = true;
                    paired[b] = true;
                }
                Some(_) => {
                    return Err(Error::NotConjugateSymmetric(format!(
                        "root {} and its conjugate have different multiplicities",
                        roots[a].value
                    )))
                }
                None => {
                    return Err(Error::NotConjugateSymmetric(format!(
                        "root {} has no conjugate partner",
                        roots[a].value
                    )))
                }
            }
        }
        if let Some(a) = (0..roots.len()).find(|&a| !roots[a].is_real() && !paired[a]) {
            return Err(Error::NotConjugateSymmetric(format!(
                "root {} has no conjugate partner",
                roots[a].value
            )));
        }
        Ok(RootSet { roots })
    }

    pub fn roots(&self) -> &[Root] {
        &self.roots
    }

    /// Total degree `n = Σ r_j`.
    pub fn degree(&self) -> usize {
        self.roots.iter().map(|r| r.multiplicity).sum()
    }

    pub fn has_repeated(&self) -> bool {
        self.roots.iter().any(|r| r.multiplicity > 1)
    }

    /// Largest real part over all roots.
    pub fn max_real(&self) -> f64 {
        self.roots
            .iter()
            .map(|r| r.value.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Smallest `|Re λ|`, which sets the slowest decay rate.
    pub fn min_abs_real(&self) -> f64 {
        self.roots
            .iter()
            .map(|r| r.value.re.abs())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn is_stable(&self) -> bool {
        self.max_real() < 0.0
    }

    /// Flat list of values, each repeated by its multiplicity.
    pub fn values(&self) -> Vec<Complex64> {
        self.roots
            .iter()
            .flat_map(|r| std::iter::repeat(r.value).take(r.multiplicity))
            .collect()
    }

    /// Sum of all roots counted with multiplicity (always real).
    pub fn sum(&self) -> f64 {
        self.roots
            .iter()
            .map(|r| r.value.re * r.multiplicity as f64)
            .sum()
    }

    /// Saturation horizon `40 / min |Re λ|`, the window over which the
    /// impulse response is worth sampling.
    pub fn saturation_time(&self) -> f64 {
        40.0 / self.min_abs_real()
    }
}

/// Monic characteristic polynomial coefficients `β_0 .. β_{n-1}` (`β_n = 1`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyCoeffs(Vec<f64>);

impl PolyCoeffs {
    pub fn new(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::invalid("polynomial degree must be at least 1"));
        }
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("polynomial coefficients must be finite"));
        }
        Ok(PolyCoeffs(beta))
    }

    pub fn degree(&self) -> usize {
        self.0.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.0
    }

    /// Ascending coefficients including the implicit leading 1.
    pub fn full(&self) -> Vec<f64> {
        let mut v = self.0.clone();
        v.push(1.0);
        v
    }

    pub fn eval(&self, s: Complex64) -> Complex64 {
        crate::poly::eval_monic(&self.0, s)
    }

    /// Euclidean norm of the full coefficient vector.
    pub fn norm(&self) -> f64 {
        (1.0 + self.0.iter().map(|b| b * b).sum::<f64>()).sqrt()
    }
}

/// Expands `Π (s - λ_j)^{r_j}` into real monic coefficients.
pub fn characteristic_poly(roots: &RootSet) -> Result<PolyCoeffs> {
    let product = roots
        .roots()
        .iter()
        .fold(vec![Complex64::new(1.0, 0.0)], |acc, r| {
            convolve(&acc, &linear_power(r.value, r.multiplicity))
        });
    let scale = product.iter().map(|c| c.re.abs()).fold(1.0, f64::max);
    if let Some(c) = product.iter().find(|c| c.im.abs() >= 1e-12 * scale) {
        return Err(Error::NotConjugateSymmetric(format!(
            "expanded coefficient {c} has imaginary part"
        )));
    }
    let n = product.len() - 1;
    PolyCoeffs::new(product[..n].iter().map(|c| c.re).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientKind {
    /// Partial-fraction residues `c_ji`; basis `t^{i-1}/(i-1)! e^{λ t}`.
    ImpulseResponse,
    /// Initial-condition coefficients `K_ji`; basis `t^{i-1} e^{λ t}`.
    Homogeneous,
}

/// Coefficients attached to a root set, one per `(root j, power i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientSet {
    kind: CoefficientKind,
    roots: RootSet,
    /// `coeffs[j][i - 1]`.
    coeffs: Vec<Vec<Complex64>>,
}

impl CoefficientSet {
    pub fn kind(&self) -> CoefficientKind {
        self.kind
    }

    pub fn roots(&self) -> &RootSet {
        &self.roots
    }

    /// `c_ji` (or `K_ji`) with `i` counted from 1.
    pub fn get(&self, j: usize, i: usize) -> Complex64 {
        self.coeffs[j][i - 1]
    }

    pub fn by_root(&self) -> &[Vec<Complex64>] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().flatten().all(|c| c.norm() == 0.0)
    }

    fn basis_scale(&self, i: usize) -> f64 {
        match self.kind {
            CoefficientKind::ImpulseResponse => 1.0 / factorial(i - 1),
            CoefficientKind::Homogeneous => 1.0,
        }
    }

    /// Real-form evaluation. Conjugate pairs contribute
    /// `2 t^{i-1} e^{αt} (Re c cos βt - Im c sin βt)` from the upper member only.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if t < 0.0 || t.is_nan() {
            return Err(Error::invalid(format!(
                "solution is evaluated causally; got t = {t}"
            )));
        }
        Ok(self.eval_unchecked(t))
    }

    pub(crate) fn eval_unchecked(&self, t: f64) -> f64 {
        let mut total = 0.0;
        for (root, cs) in self.roots.roots().iter().zip(&self.coeffs) {
            let lambda = root.value;
            if lambda.im < 0.0 {
                continue;
            }
            let envelope = (lambda.re * t).exp();
            let (sin, cos) = (lambda.im * t).sin_cos();
            let weight = if lambda.im > 0.0 { 2.0 } else { 1.0 };
            let mut t_pow = 1.0;
            for (idx, c) in cs.iter().enumerate() {
                let i = idx + 1;
                let term = c.re * cos - c.im * sin;
                total += weight * self.basis_scale(i) * t_pow * envelope * term;
                t_pow *= t;
            }
        }
        total
    }

    /// Full complex sum over every root, including both members of each
    /// conjugate pair, at a complex time. The imaginary part of the result at
    /// real `t` measures how well conjugate symmetry holds.
    pub fn eval_complex(&self, z: Complex64) -> Complex64 {
        let mut total = Complex64::new(0.0, 0.0);
        for (root, cs) in self.roots.roots().iter().zip(&self.coeffs) {
            let e = (root.value * z).exp();
            let mut z_pow = Complex64::new(1.0, 0.0);
            for (idx, c) in cs.iter().enumerate() {
                total += c * self.basis_scale(idx + 1) * z_pow * e;
                z_pow *= z;
            }
        }
        total
    }
}

fn solve_complex(
    matrix: DMatrix<Complex64>,
    rhs: DVector<Complex64>,
    what: &str,
) -> Result<Vec<Complex64>> {
    let n = rhs.len();
    let check = matrix.clone();
    let solution = matrix
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::numeric(format!("{what}: singular linear system")))?;
    if solution
        .iter()
        .any(|z| !z.re.is_finite() || !z.im.is_finite())
    {
        return Err(Error::numeric(format!("{what}: non-finite solution")));
    }
    let residual = (&check * &solution - &rhs).norm();
    let scale = check.norm() * solution.norm() + rhs.norm();
    if residual > 1e-8 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::numeric(format!(
            "{what}: ill-conditioned system (residual {residual:e})"
        )));
    }
    debug_assert_eq!(solution.len(), n);
    Ok(solution.iter().copied().collect())
}

fn split_by_root(roots: &RootSet, flat: Vec<Complex64>) -> Vec<Vec<Complex64>> {
    let mut it = flat.into_iter();
    roots
        .roots()
        .iter()
        .map(|r| it.by_ref().take(r.multiplicity).collect())
        .collect()
}

/// Partial-fraction coefficients of `1/Π (s - λ_j)^{r_j}`.
///
/// Near `λ_j`, `1/p(s) = ε^{-r_j} h_j(ε)` with `ε = s - λ_j` and
/// `h_j = Π_{k≠j} (d_k + ε)^{-r_k}`, `d_k = λ_j - λ_k`. The coefficient of
/// `1/(s - λ_j)^i` is the Taylor coefficient `[ε^{r_j - i}] h_j`, a product of
/// binomial series. Unlike a global solve this stays accurate for high
/// degrees and clustered roots.
pub fn partial_fraction_coefficients(roots: &RootSet) -> Result<CoefficientSet> {
    let one = Complex64::new(1.0, 0.0);
    let mut coeffs = Vec::with_capacity(roots.roots().len());
    for (j, root) in roots.roots().iter().enumerate() {
        let r = root.multiplicity;
        let mut h = vec![Complex64::new(0.0, 0.0); r];
        h[0] = one;
        for (k, other) in roots.roots().iter().enumerate() {
            if k == j {
                continue;
            }
            let d = root.value - other.value;
            if d.norm() == 0.0 {
                return Err(Error::numeric("partial fractions: coincident roots"));
            }
            let m = other.multiplicity;
            // (d + ε)^{-m} = d^{-m} Σ_q C(m+q-1, q) (-ε/d)^q
            let lead = d.powi(-(m as i32));
            let series: Vec<Complex64> = (0..r)
                .map(|q| lead * binomial(m + q - 1, q) * (-d).powi(-(q as i32)))
                .collect();
            let mut prod = convolve(&h, &series);
            prod.truncate(r);
            h = prod;
        }
        let cs: Vec<Complex64> = (1..=r).map(|i| h[r - i]).collect();
        if cs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::numeric("partial fractions: non-finite coefficient"));
        }
        coeffs.push(cs);
    }
    Ok(CoefficientSet {
        kind: CoefficientKind::ImpulseResponse,
        roots: roots.clone(),
        coeffs,
    })
}

/// Same coefficients from one global linear system.
///
/// Column `(j, i)` holds the ascending coefficients of
/// `(s - λ_j)^{r_j - i} Π_{k≠j} (s - λ_k)^{r_k}`; matching powers of `s`
/// against the constant polynomial 1 gives `n` equations in `n` unknowns.
/// Conditioning degrades quickly with degree; kept as an independent route.
pub fn partial_fraction_coefficients_linear(roots: &RootSet) -> Result<CoefficientSet> {
    let n = roots.degree();
    let factors: Vec<Vec<Complex64>> = roots
        .roots()
        .iter()
        .map(|r| linear_power(r.value, r.multiplicity))
        .collect();
    let mut columns = Vec::with_capacity(n);
    for (j, root) in roots.roots().iter().enumerate() {
        let others = factors
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != j)
            .fold(vec![Complex64::new(1.0, 0.0)], |acc, (_, f)| {
                convolve(&acc, f)
            });
        for i in 1..=root.multiplicity {
            let mut col = convolve(&linear_power(root.value, root.multiplicity - i), &others);
            col.resize(n, Complex64::new(0.0, 0.0));
            columns.push(col);
        }
    }
    let matrix = DMatrix::from_fn(n, n, |row, col| columns[col][row]);
    let mut rhs = DVector::from_element(n, Complex64::new(0.0, 0.0));
    rhs[0] = Complex64::new(1.0, 0.0);
    let flat = solve_complex(matrix, rhs, "partial fractions")?;
    Ok(CoefficientSet {
        kind: CoefficientKind::ImpulseResponse,
        roots: roots.clone(),
        coeffs: split_by_root(roots, flat),
    })
}

/// Left-hand side of the partial-fraction identity at `s`; equals 1 when the
/// coefficients are right.
pub fn reconstruction_residual(coeffs: &CoefficientSet, s: Complex64) -> f64 {
    let roots = coeffs.roots().roots();
    let mut total = Complex64::new(0.0, 0.0);
    for (j, root) in roots.iter().enumerate() {
        let others: Complex64 = roots
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != j)
            .map(|(_, r)| (s - r.value).powu(r.multiplicity as u32))
            .product();
        for i in 1..=root.multiplicity {
            let own = eval_complex(&linear_power(root.value, root.multiplicity - i), s);
            total += coeffs.get(j, i) * own * others;
        }
    }
    (total - 1.0).norm()
}

/// Initial conditions `[y(0), y'(0), ..., y^{(n-1)}(0)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialConditions(Vec<f64>);

impl InitialConditions {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("initial conditions must be finite"));
        }
        Ok(InitialConditions(values))
    }

    pub fn zeros(n: usize) -> Self {
        InitialConditions(vec![0.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Coefficients `K_ji` of the homogeneous solution matching `ic`.
///
/// Row `v` of the confluent Vandermonde matrix holds the `v`-th derivative at
/// zero of each basis function `t^{i-1} e^{λ_j t}`, which is
/// `C(v, i-1) (i-1)! λ_j^{v-i+1}` for `v ≥ i-1` and zero otherwise.
pub fn homogeneous_coefficients(roots: &RootSet, ic: &InitialConditions) -> Result<CoefficientSet> {
    let n = roots.degree();
    if ic.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: ic.len(),
        });
    }
    let mut columns: Vec<(Complex64, usize)> = Vec::with_capacity(n);
    for r in roots.roots() {
        for i in 1..=r.multiplicity {
            columns.push((r.value, i));
        }
    }
    let matrix = DMatrix::from_fn(n, n, |v, col| {
        let (lambda, i) = columns[col];
        let p = i - 1;
        if v < p {
            Complex64::new(0.0, 0.0)
        } else {
            lambda.powu((v - p) as u32) * (binomial(v, p) * factorial(p))
        }
    });
    let rhs = DVector::from_iterator(n, ic.values().iter().map(|&y| Complex64::new(y, 0.0)));
    let flat = if ic.values().iter().all(|&y| y == 0.0) {
        vec![Complex64::new(0.0, 0.0); n]
    } else {
        solve_complex(matrix, rhs, "initial-condition system")?
    };
    Ok(CoefficientSet {
        kind: CoefficientKind::Homogeneous,
        roots: roots.clone(),
        coeffs: split_by_root(roots, flat),
    })
}

pub fn impulse_response_eval(coeffs: &CoefficientSet, t: f64) -> Result<f64> {
    if coeffs.kind() != CoefficientKind::ImpulseResponse {
        return Err(Error::invalid("expected impulse-response coefficients"));
    }
    coeffs.eval(t)
}

pub fn homogeneous_eval(coeffs: &CoefficientSet, t: f64) -> Result<f64> {
    if coeffs.kind() != CoefficientKind::Homogeneous {
        return Err(Error::invalid("expected homogeneous-solution coefficients"));
    }
    coeffs.eval(t)
}

/// A Dirac impulse of the given magnitude; the magnitude already carries the
/// signed gain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Impulse {
    pub time: f64,
    pub magnitude: f64,
}

/// `y(t) = y°(t) + Σ_{h_k ≤ t} m_k g(t - h_k)`, precomputed for repeated
/// evaluation.
#[derive(Clone, Debug)]
pub struct ClosedFormResponse {
    impulse: CoefficientSet,
    homogeneous: CoefficientSet,
    impulses: Vec<Impulse>,
}

impl ClosedFormResponse {
    pub fn new(roots: &RootSet, ic: &InitialConditions, impulses: Vec<Impulse>) -> Result<Self> {
        if impulses.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(Error::invalid("impulse times must be strictly increasing"));
        }
        if impulses
            .iter()
            .any(|i| !i.time.is_finite() || !i.magnitude.is_finite())
        {
            return Err(Error::invalid(
                "impulse times and magnitudes must be finite",
            ));
        }
        Ok(ClosedFormResponse {
            impulse: partial_fraction_coefficients(roots)?,
            homogeneous: homogeneous_coefficients(roots, ic)?,
            impulses,
        })
    }

    pub fn impulse_response(&self) -> &CoefficientSet {
        &self.impulse
    }

    pub fn homogeneous(&self) -> &CoefficientSet {
        &self.homogeneous
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        let mut y = self.homogeneous.eval(t)?;
        for imp in self.impulses.iter().take_while(|imp| imp.time <= t) {
            y += imp.magnitude * self.impulse.eval_unchecked(t - imp.time);
        }
        Ok(y)
    }
}

/// One-shot form of [`ClosedFormResponse::eval`].
pub fn closed_form_response(
    roots: &RootSet,
    ic: &InitialConditions,
    impulses: &[Impulse],
    t: f64,
) -> Result<f64> {
    ClosedFormResponse::new(roots, ic, impulses.to_vec())?.eval(t)
}
