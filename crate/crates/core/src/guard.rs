//! Privacy calculus: spectral thresholds, lift magnitudes, sketch dimensions
//! and composition. All logarithms are natural.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{smallest_singular_value, DenseMatrix};

/// Default constant `c` in the low-rank lift `w = c·k·ln(k/δ)/ε`.
pub const DEFAULT_LIFT_CONSTANT: f64 = 16.0;
/// Default constant in the product sketch dimension `⌈c·ln(2/β)/α²⌉`.
pub const DEFAULT_MATMULT_CONSTANT: f64 = 8.0;
/// Default constant in the regression sketch dimension `⌈c·d·ln(1/β)/α⌉`.
pub const DEFAULT_LINREG_CONSTANT: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrivacyBudget {
    eps: f64,
    delta: f64,
}

impl PrivacyBudget {
    pub fn new(eps: f64, delta: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::ParameterDomain(format!(
                "eps must be positive and finite, got {eps}"
            )));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::ParameterDomain(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(Self { eps, delta })
    }

    #[inline]
    pub fn eps(&self) -> f64 {
        self.eps
    }

    #[inline]
    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// `(ε/2, δ/2)`.
    pub fn halved(&self) -> Self {
        Self {
            eps: self.eps / 2.0,
            delta: self.delta / 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccuracySpec {
    alpha: f64,
    beta: f64,
}

impl AccuracySpec {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::ParameterDomain(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(Error::ParameterDomain(format!("beta must lie in (0, 1), got {beta}")));
        }
        Ok(Self { alpha, beta })
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[inline]
    pub fn beta(&self) -> f64 {
        self.beta
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GuardReport {
    pub required_sigma_min: f64,
    pub observed_sigma_min: f64,
    pub passed: bool,
}

impl GuardReport {
    /// Converts a failed report into [`Error::GuardFailed`].
    pub fn into_result(self) -> Result<Self> {
        if self.passed {
            Ok(self)
        } else {
            Err(Error::GuardFailed {
                required: self.required_sigma_min,
                observed: self.observed_sigma_min,
            })
        }
    }
}

fn positive_log(x: f64, what: &str) -> Result<f64> {
    let l = x.ln();
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::ParameterDomain(format!("ln({what}) = ln({x}) is not positive")));
    }
    Ok(l)
}

fn check_count(r: usize, what: &str) -> Result<f64> {
    if r == 0 {
        return Err(Error::ParameterDomain(format!("{what} must be >= 1")));
    }
    Ok(r as f64)
}

/// `4·√(r·ln(2/δ))·ln(r/δ)/ε`: singular-value floor for releasing `Ωv` columns.
pub fn sigma_min_psg1(budget: &PrivacyBudget, r: usize) -> Result<f64> {
    let r = check_count(r, "r")?;
    let l2 = positive_log(2.0 / budget.delta, "2/delta")?;
    let lr = positive_log(r / budget.delta, "r/delta")?;
    Ok(4.0 * (r * l2).sqrt() * lr / budget.eps)
}

/// `4·r·ln(r/δ)/ε`: singular-value floor for releasing `ΩᵀΩv` columns.
pub fn sigma_min_psg2(budget: &PrivacyBudget, r: usize) -> Result<f64> {
    let r = check_count(r, "r")?;
    let lr = positive_log(r / budget.delta, "r/delta")?;
    Ok(4.0 * r * lr / budget.eps)
}

/// Identity-lift magnitude `w = 16·k·ln(k/δ)/ε` for the low-rank mechanism.
pub fn lra_lift_w(budget: &PrivacyBudget, k: usize) -> Result<f64> {
    lra_lift_w_with(budget, k, DEFAULT_LIFT_CONSTANT)
}

/// [`lra_lift_w`] with an explicit constant.
pub fn lra_lift_w_with(budget: &PrivacyBudget, k: usize, c: f64) -> Result<f64> {
    let kf = check_count(k, "k")?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::ParameterDomain(format!(
            "lift constant must be positive, got {c}"
        )));
    }
    let lk = positive_log(kf / budget.delta, "k/delta")?;
    Ok(c * kf * lk / budget.eps)
}

/// Identity-lift magnitude `s = √(16·r·ln(2/δ))/ε · ln(16·r/δ)` for the product and regression mechanisms.
pub fn lift_scale_s(budget: &PrivacyBudget, r: usize) -> Result<f64> {
    let r = check_count(r, "r")?;
    lift_scale_s_real(budget, r)
}

pub(crate) fn lift_scale_s_real(budget: &PrivacyBudget, r: f64) -> Result<f64> {
    let l2 = positive_log(2.0 / budget.delta, "2/delta")?;
    let l16 = positive_log(16.0 * r / budget.delta, "16r/delta")?;
    Ok((16.0 * r * l2).sqrt() / budget.eps * l16)
}

/// `⌈8·ln(2/β)/α²⌉`, so that `2·exp(−r·α²/8) ≤ β`.
pub fn matmult_sketch_dim(acc: &AccuracySpec) -> usize {
    matmult_sketch_dim_with(acc, DEFAULT_MATMULT_CONSTANT)
}

pub fn matmult_sketch_dim_with(acc: &AccuracySpec, c: f64) -> usize {
    (c * (2.0 / acc.beta).ln() / (acc.alpha * acc.alpha)).ceil().max(1.0) as usize
}

/// `⌈16·d·ln(1/β)/α⌉`.
pub fn linreg_sketch_dim(acc: &AccuracySpec, d: usize) -> Result<usize> {
    linreg_sketch_dim_with(acc, d, DEFAULT_LINREG_CONSTANT, 1)
}

/// Regression sketch dimension with an explicit constant and a planned query
/// count `queries`, which replaces `ln(1/β)` by `ln(queries/β)`.
pub fn linreg_sketch_dim_with(acc: &AccuracySpec, d: usize, c: f64, queries: usize) -> Result<usize> {
    let d = check_count(d, "d")?;
    let q = check_count(queries, "planned queries")?;
    Ok((c * d * (q / acc.beta).ln() / acc.alpha).ceil().max(1.0) as usize)
}

/// Advanced composition of `ell` releases of an `(ε₀, δ₀)` mechanism with slack `δ′`:
/// `(√(2ℓ·ln(1/δ′))·ε₀ + 2ℓ·ε₀², ℓ·δ₀ + δ′)`.
pub fn compose(eps0: f64, delta0: f64, ell: usize, delta_prime: f64) -> Result<PrivacyBudget> {
    if !(eps0 > 0.0 && eps0.is_finite()) || delta0 < 0.0 || !(delta_prime > 0.0 && delta_prime < 1.0) || ell == 0 {
        return Err(Error::ParameterDomain(format!(
            "compose needs eps0 > 0, delta0 >= 0, 0 < delta' < 1, ell >= 1 (got {eps0}, {delta0}, {ell}, {delta_prime})"
        )));
    }
    let l = ell as f64;
    let delta = l * delta0 + delta_prime;
    if delta >= 1.0 {
        return Err(Error::BudgetExhausted(delta));
    }
    let eps = (2.0 * l * (1.0 / delta_prime).ln()).sqrt() * eps0 + 2.0 * l * eps0 * eps0;
    PrivacyBudget::new(eps, delta)
}

/// Compares the smallest singular value of `m` against `required`.
pub fn verify_spectral_guard(m: &DenseMatrix, required: f64) -> Result<GuardReport> {
    let observed = smallest_singular_value(m)?;
    Ok(GuardReport {
        required_sigma_min: required,
        observed_sigma_min: observed,
        passed: observed >= required,
    })
}

/// `[w·I_n | A]` for an `n x d` matrix `A`.
pub fn identity_lift(a: &DenseMatrix, w: f64) -> DenseMatrix {
    let n = a.rows();
    DenseMatrix::identity(n).scale(w).hstack(a).expect("row counts agree")
}

/// The column lift `(s·e_c ∈ ℝ^d, 0^{n+d}, A_{:c})` applied to every column of `A` (`n x d`),
/// giving a `2(n+d) x d` matrix.
pub fn column_lift(a: &DenseMatrix, s: f64, d: usize) -> Result<DenseMatrix> {
    let (n, cols) = a.shape();
    if cols > d {
        return Err(Error::Contract(format!("column_lift: {cols} columns exceed d = {d}")));
    }
    let mut out = DenseMatrix::zeros(2 * (n + d), cols);
    for c in 0..cols {
        out[(c, c)] = s;
        for i in 0..n {
            out[(d + n + d + i, c)] = a[(i, c)];
        }
    }
    Ok(out)
}
