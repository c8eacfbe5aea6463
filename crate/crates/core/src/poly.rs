//! Dense polynomial helpers over complex and real coefficients.
//!
//! Coefficients are stored in ascending power order: `c[0] + c[1] s + ...`.

use num_complex::Complex64;

/// Multiplies two ascending-order polynomials.
pub fn convolve(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![Complex64::new(0.0, 0.0); a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Expands `(s - root)^power`.
pub fn linear_power(root: Complex64, power: usize) -> Vec<Complex64> {
    let factor = [-root, Complex64::new(1.0, 0.0)];
    (0..power).fold(vec![Complex64::new(1.0, 0.0)], |acc, _| {
        convolve(&acc, &factor)
    })
}

/// Horner evaluation of an ascending-order complex polynomial.
pub fn eval_complex(coeffs: &[Complex64], s: Complex64) -> Complex64 {
    coeffs
        .iter()
        .rev()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * s + c)
}

/// Evaluates the monic polynomial `s^n + beta[n-1] s^(n-1) + ... + beta[0]`.
pub fn eval_monic(beta: &[f64], s: Complex64) -> Complex64 {
    beta.iter()
        .rev()
        .fold(Complex64::new(1.0, 0.0), |acc, &c| acc * s + c)
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}
