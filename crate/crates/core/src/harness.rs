//! Exact oracles, error metrics and Monte-Carlo checks.
//!
//! Every randomized check takes explicit seeds, runs its trials through
//! [`crate::par::map_trials`] and reduces in seed order, so reports are
//! reproducible bit for bit.

use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::guard::{sigma_min_psg1, AccuracySpec, PrivacyBudget};
use crate::lra::{LraConfig, LraState};
use crate::matprod::{MatProdConfig, MatProdState, Operand};
use crate::numerics::{
    frobenius_norm, householder_qr, matmul, norm2, spectral_norm, svd, sym_eigen, t_matmul, DenseMatrix, RANK_TOL,
};
use crate::par::map_trials;
use crate::regress::{ridge_solution, RegressConfig, RegressState};
use crate::rng::{gaussian_matrix, NormalStream};
use crate::sketch::{GaussianSketcher, OmegaStorage};

/// Three-sigma binomial band for an event of probability `p` over `trials`.
pub fn binomial_slack(p: f64, trials: usize) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    3.0 * (p * (1.0 - p) / trials as f64).sqrt()
}

/// Outcome of one bound or Monte-Carlo check.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub check: String,
    pub trials: usize,
    pub violations: usize,
    /// Allowed violation rate before slack.
    pub allowed: f64,
    /// Slack added to `allowed` (three binomial standard deviations, or 0).
    pub slack: f64,
    pub pass: bool,
    pub seeds: Vec<u64>,
    pub observed_lhs: Vec<f64>,
    pub bound_rhs: Vec<f64>,
    /// Aggregate statistic for mean-type checks.
    pub statistic: Option<f64>,
    pub target: Option<f64>,
    /// Expected to fail; included to show the check can fail.
    pub negative_control: bool,
    pub detail: Value,
}

impl BoundReport {
    /// Counts `lhs > rhs` and compares the rate with `allowed` (+ 3σ if `with_slack`).
    pub fn from_pairs(
        check: &str,
        seeds: Vec<u64>,
        lhs: Vec<f64>,
        rhs: Vec<f64>,
        allowed: f64,
        with_slack: bool,
    ) -> Self {
        let trials = lhs.len();
        let violations = lhs
            .iter()
            .zip(&rhs)
            .filter(|(l, r)| l.partial_cmp(r).is_none_or(|o| o.is_gt()))
            .count();
        let slack = if with_slack {
            binomial_slack(allowed, trials)
        } else {
            0.0
        };
        let rate = if trials == 0 {
            0.0
        } else {
            violations as f64 / trials as f64
        };
        Self {
            check: check.to_string(),
            trials,
            violations,
            allowed,
            slack,
            pass: trials > 0 && rate <= allowed + slack,
            seeds,
            observed_lhs: lhs,
            bound_rhs: rhs,
            statistic: None,
            target: None,
            negative_control: false,
            detail: Value::Null,
        }
    }

    /// Rate check from counts alone (large-sample checks keep no per-trial vectors).
    pub fn from_counts(check: &str, seeds: Vec<u64>, trials: usize, violations: usize, allowed: f64) -> Self {
        let slack = binomial_slack(allowed, trials);
        Self {
            check: check.to_string(),
            trials,
            violations,
            allowed,
            slack,
            pass: trials > 0 && (violations as f64 / trials as f64) <= allowed + slack,
            seeds,
            observed_lhs: Vec::new(),
            bound_rhs: Vec::new(),
            statistic: None,
            target: None,
            negative_control: false,
            detail: Value::Null,
        }
    }

    pub fn violation_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.violations as f64 / self.trials as f64
        }
    }

    pub fn as_negative_control(mut self) -> Self {
        self.negative_control = true;
        self.check.push_str("_negative_control");
        self
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    /// JSON record `{check, trials, violations, allowed, pass, seeds, ...}`.
    pub fn to_json(&self) -> Value {
        json!({
            "check": self.check,
            "trials": self.trials,
            "violations": self.violations,
            "allowed": self.allowed,
            "slack": self.slack,
            "pass": self.pass,
            "seeds": self.seeds,
            "statistic": self.statistic,
            "target": self.target,
            "negative_control": self.negative_control,
            "detail": self.detail,
        })
    }

    /// One human-readable line.
    pub fn summary(&self) -> String {
        let mut line = format!(
            "{} {}: {}/{} violations (allowed {:.4} + {:.4})",
            if self.pass { "PASS" } else { "FAIL" },
            self.check,
            self.violations,
            self.trials,
            self.allowed,
            self.slack
        );
        if let (Some(s), Some(t)) = (self.statistic, self.target) {
            line.push_str(&format!(", statistic {s:.6} vs target {t:.6}"));
        }
        line
    }
}

// ---------------------------------------------------------------------------
// exact oracles

/// Best rank-`k` approximation by SVD truncation.
pub fn exact_truncated_svd(a: &DenseMatrix, k: usize) -> Result<DenseMatrix> {
    if k > a.rows().min(a.cols()) {
        return Err(Error::Contract(format!(
            "rank {k} exceeds min dimension of {:?}",
            a.shape()
        )));
    }
    Ok(svd(a)?.reconstruct(Some(k)))
}

/// Minimum-norm least-squares solution through the pseudo-inverse.
pub fn exact_lsq(a: &DenseMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.rows() {
        return Err(Error::Contract(format!(
            "target length {} != rows {}",
            b.len(),
            a.rows()
        )));
    }
    let dec = svd(a)?;
    let rank = dec.numerical_rank(RANK_TOL);
    let mut x = vec![0.0; a.cols()];
    for t in 0..rank {
        let ub: f64 = (0..a.rows()).map(|i| dec.u[(i, t)] * b[i]).sum();
        let coef = ub / dec.sigma[t];
        for (j, xj) in x.iter_mut().enumerate() {
            *xj += coef * dec.vt[(t, j)];
        }
    }
    Ok(x)
}

/// `AᵀB` for operands sharing their row count.
pub fn exact_product(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    t_matmul(a, b)
}

fn residual_norm(a: &DenseMatrix, x: &[f64], b: &[f64]) -> Result<f64> {
    let ax = a.mat_vec(x)?;
    Ok(norm2(&ax.iter().zip(b).map(|(p, q)| p - q).collect::<Vec<_>>()))
}

/// Random matrix with orthonormal columns.
pub fn random_orthonormal(rows: usize, cols: usize, seed: u64, stream: u64) -> DenseMatrix {
    let (q, _) = householder_qr(&gaussian_matrix(rows, cols, seed, stream)).expect("rows >= cols");
    q
}

/// Rank-`rank` signal with singular values `top·decay^j` plus i.i.d. Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LowRankFamily {
    pub n: usize,
    pub d: usize,
    pub rank: usize,
    pub top: f64,
    pub decay: f64,
    pub noise: f64,
}

impl LowRankFamily {
    pub fn sample(&self, seed: u64) -> DenseMatrix {
        let u = random_orthonormal(self.n, self.rank, seed, 101);
        let v = random_orthonormal(self.d, self.rank, seed, 102);
        let sig: Vec<f64> = (0..self.rank).map(|j| self.top * self.decay.powi(j as i32)).collect();
        let us = DenseMatrix::from_fn(self.n, self.rank, |i, j| u[(i, j)] * sig[j]);
        let mut a = matmul(&us, &v.transpose()).expect("shapes agree");
        if self.noise > 0.0 {
            a.add_scaled_assign(self.noise, &gaussian_matrix(self.n, self.d, seed, 103))
                .expect("shapes agree");
        }
        a
    }
}

/// Two-pass randomized range finder with `k + p` probes, truncated to rank `k`.
pub fn halko_two_pass(a: &DenseMatrix, k: usize, p: usize, seed: u64) -> Result<DenseMatrix> {
    let omega = gaussian_matrix(a.cols(), k + p, seed, 201);
    let y = matmul(a, &omega)?;
    let q = crate::numerics::orthonormal_range(&y)?.basis;
    let b = t_matmul(&q, a)?;
    let bk = exact_truncated_svd(&b, k.min(b.rows()))?;
    matmul(&q, &bk)
}

// ---------------------------------------------------------------------------
// error metrics shared by the CLI and the checks

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LraErrors {
    pub frobenius: f64,
    pub spectral: f64,
    pub optimal_frobenius: f64,
    pub sigma_k_plus_1: f64,
    pub frobenius_bound: f64,
    pub spectral_bound: f64,
}

/// `(1 + k/(p−1))^{1/2}·tail_F + 2k/ε·√((n+d)·ln(k/δ)/p)`.
pub fn lra_frobenius_rhs(n: usize, d: usize, k: usize, p: usize, budget: &PrivacyBudget, tail_f: f64) -> f64 {
    let (kf, pf, nd) = (k as f64, p as f64, (n + d) as f64);
    (1.0 + kf / (pf - 1.0)).sqrt() * tail_f + 2.0 * kf / budget.eps() * (nd * (kf / budget.delta()).ln() / pf).sqrt()
}

/// `(1 + k/(p−1))^{1/2}·σ_{k+1} + e·√(k+p)·tail_F/p + 2√(k(n+d)·ln(k/δ))/ε`.
pub fn lra_spectral_rhs(
    n: usize,
    d: usize,
    k: usize,
    p: usize,
    budget: &PrivacyBudget,
    sigma_k1: f64,
    tail_f: f64,
) -> f64 {
    let (kf, pf, nd) = (k as f64, p as f64, (n + d) as f64);
    (1.0 + kf / (pf - 1.0)).sqrt() * sigma_k1
        + std::f64::consts::E * (kf + pf).sqrt() * tail_f / pf
        + 2.0 * (kf * nd * (kf / budget.delta()).ln()).sqrt() / budget.eps()
}

pub fn lra_errors(
    a: &DenseMatrix,
    approx: &DenseMatrix,
    k: usize,
    p: usize,
    budget: &PrivacyBudget,
) -> Result<LraErrors> {
    let sigma = svd(a)?.sigma;
    let tail_f = sigma.iter().skip(k).map(|s| s * s).sum::<f64>().sqrt();
    let sigma_k1 = sigma.get(k).copied().unwrap_or(0.0);
    let diff = a.sub(approx)?;
    let (n, d) = a.shape();
    Ok(LraErrors {
        frobenius: frobenius_norm(&diff),
        spectral: spectral_norm(&diff)?,
        optimal_frobenius: tail_f,
        sigma_k_plus_1: sigma_k1,
        frobenius_bound: lra_frobenius_rhs(n, d, k, p, budget, tail_f),
        spectral_bound: lra_spectral_rhs(n, d, k, p, budget, sigma_k1, tail_f),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProductErrors {
    pub frobenius: f64,
    /// `α‖A‖_F‖B‖_F + s²√n·α`.
    pub bound: f64,
}

pub fn matprod_errors(
    a: &DenseMatrix,
    b: &DenseMatrix,
    c: &DenseMatrix,
    alpha: f64,
    additive: f64,
) -> Result<ProductErrors> {
    let exact = exact_product(a, b)?;
    Ok(ProductErrors {
        frobenius: frobenius_norm(&exact.sub(c)?),
        bound: alpha * frobenius_norm(a) * frobenius_norm(b) + additive,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegressErrors {
    pub residual: f64,
    pub optimum: f64,
    /// `(1+α)·optimum + τ`.
    pub bound: f64,
}

pub fn regress_errors(a: &DenseMatrix, b: &[f64], x: &[f64], alpha: f64, tau: f64) -> Result<RegressErrors> {
    let x_opt = exact_lsq(a, b)?;
    let optimum = residual_norm(a, &x_opt, b)?;
    Ok(RegressErrors {
        residual: residual_norm(a, x, b)?,
        optimum,
        bound: (1.0 + alpha) * optimum + tau,
    })
}

// ---------------------------------------------------------------------------
// random-matrix lemmas

fn trial_seeds(base: u64, trials: usize) -> Vec<u64> {
    (0..trials as u64).map(|t| base.wrapping_add(t)).collect()
}

/// Mean of `‖G†‖_F²` over `k x (k+p)` Gaussian matrices; passes within 5% of `k/(p−1)`.
pub fn mc_pseudoinverse_frobenius(k: usize, p: usize, trials: usize, seed: u64) -> Result<BoundReport> {
    if p < 2 || k == 0 {
        return Err(Error::ParameterDomain(format!(
            "need k >= 1 and p >= 2, got k={k}, p={p}"
        )));
    }
    let seeds = trial_seeds(seed, trials);
    let vals: Vec<f64> = map_trials(&seeds, |s| {
        let g = gaussian_matrix(k, k + p, s, 301);
        svd(&g)
            .map(|d| d.sigma.iter().map(|x| 1.0 / (x * x)).sum())
            .unwrap_or(f64::INFINITY)
    });
    let mean = vals.iter().sum::<f64>() / trials as f64;
    let target = k as f64 / (p as f64 - 1.0);
    let rel = (mean / target - 1.0).abs();
    let mut rep = BoundReport::from_counts("pseudoinverse_frobenius_mean", seeds, trials, 0, 0.0);
    rep.statistic = Some(mean);
    rep.target = Some(target);
    rep.pass = rel <= 0.05;
    rep.violations = usize::from(!rep.pass);
    Ok(rep.with_detail(json!({
        "k": k, "p": p, "relative_gap": rel,
        "root_mean": mean.sqrt(), "root_target": target.sqrt(),
    })))
}

/// Mean of `‖G†‖₂ = 1/σ_min(G)`; passes when below `e·√(k+p)/p`.
pub fn mc_pseudoinverse_spectral(k: usize, p: usize, trials: usize, seed: u64) -> Result<BoundReport> {
    if p < 1 || k == 0 {
        return Err(Error::ParameterDomain(format!(
            "need k >= 1 and p >= 1, got k={k}, p={p}"
        )));
    }
    let seeds = trial_seeds(seed, trials);
    let vals: Vec<f64> = map_trials(&seeds, |s| {
        let g = gaussian_matrix(k, k + p, s, 302);
        svd(&g).map(|d| 1.0 / d.sigma[k - 1]).unwrap_or(f64::INFINITY)
    });
    let mean = vals.iter().sum::<f64>() / trials as f64;
    let bound = std::f64::consts::E * ((k + p) as f64).sqrt() / p as f64;
    let mut rep = BoundReport::from_counts("pseudoinverse_spectral_mean", seeds, trials, 0, 0.0);
    rep.statistic = Some(mean);
    rep.target = Some(bound);
    rep.pass = mean <= bound;
    rep.violations = usize::from(!rep.pass);
    Ok(rep.with_detail(json!({ "k": k, "p": p })))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::ParameterDomain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Rate of `‖Ωx‖²/r ∉ (1 − α, 1 + α)·‖x‖²` over fresh `r x dim` sketchers,
/// against `2·exp(−α²r/8)`. `scale` multiplies the probe vector.
pub fn mc_jl(dim: usize, r: usize, alpha: f64, trials: usize, seed: u64, scale: f64) -> Result<BoundReport> {
    check_alpha(alpha)?;
    let x: Vec<f64> = NormalStream::data(seed, 401)
        .unit_vector(dim)
        .iter()
        .map(|v| v * scale)
        .collect();
    let x2 = norm2(&x).powi(2);
    let seeds = trial_seeds(seed, trials);
    let fails: Vec<bool> = map_trials(&seeds, |s| {
        let sk = GaussianSketcher::with_storage(s, r, dim, OmegaStorage::Regenerate).expect("valid dims");
        let y = sk.psg1(&x).expect("length matches");
        let ratio = norm2(&y).powi(2) / r as f64 / x2;
        !(ratio > 1.0 - alpha && ratio < 1.0 + alpha)
    });
    let violations = fails.iter().filter(|&&f| f).count();
    let allowed = (2.0 * (-alpha * alpha * r as f64 / 8.0).exp()).min(1.0);
    Ok(
        BoundReport::from_counts("jl_norm_preservation", seeds, trials, violations, allowed)
            .with_detail(json!({ "dim": dim, "r": r, "alpha": alpha, "scale": scale })),
    )
}

/// Rate of `|⟨Ωu, Ωv⟩/r − ⟨u, v⟩| > α` for fixed unit `u`, `v`, against `2·exp(−rα²/8)`.
pub fn mc_inner_product(dim: usize, r: usize, alpha: f64, trials: usize, seed: u64) -> Result<BoundReport> {
    check_alpha(alpha)?;
    let mut g = NormalStream::data(seed, 402);
    let u = g.unit_vector(dim);
    let v = g.unit_vector(dim);
    let uv = crate::numerics::dot(&u, &v);
    let seeds = trial_seeds(seed, trials);
    let fails: Vec<bool> = map_trials(&seeds, |s| {
        let sk = GaussianSketcher::with_storage(s, r, dim, OmegaStorage::Regenerate).expect("valid dims");
        let (pu, pv) = (sk.psg1(&u).expect("len"), sk.psg1(&v).expect("len"));
        (crate::numerics::dot(&pu, &pv) / r as f64 - uv).abs() > alpha
    });
    let violations = fails.iter().filter(|&&f| f).count();
    let allowed = (2.0 * (-alpha * alpha * r as f64 / 8.0).exp()).min(1.0);
    Ok(
        BoundReport::from_counts("inner_product_preservation", seeds, trials, violations, allowed)
            .with_detail(json!({ "dim": dim, "r": r, "alpha": alpha })),
    )
}

/// Rate of `‖UᵀΩᵀΩU/r − I‖₂ > α` for a fixed `dim x d` orthonormal `U`, against `β`.
pub fn mc_subspace_embedding(
    d: usize,
    dim: usize,
    r: usize,
    alpha: f64,
    beta: f64,
    trials: usize,
    seed: u64,
) -> Result<BoundReport> {
    check_alpha(alpha)?;
    let u = random_orthonormal(dim, d, seed, 403);
    let seeds = trial_seeds(seed, trials);
    let devs: Vec<f64> = map_trials(&seeds, |s| {
        let sk = GaussianSketcher::with_storage(s, r, dim, OmegaStorage::Regenerate).expect("valid dims");
        let om = sk.omega();
        let proj = matmul(&om, &u).expect("shapes");
        let mut gram = t_matmul(&proj, &proj).expect("shapes").scale(1.0 / r as f64);
        for i in 0..d {
            gram[(i, i)] -= 1.0;
        }
        sym_eigen(&gram).map(|e| e.values[0].abs()).unwrap_or(f64::INFINITY)
    });
    let rhs = vec![alpha; trials];
    Ok(
        BoundReport::from_pairs("subspace_embedding", seeds, devs, rhs, beta, true)
            .with_detail(json!({ "d": d, "dim": dim, "r": r, "alpha": alpha, "beta": beta })),
    )
}

// ---------------------------------------------------------------------------
// density-ratio privacy check

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensityCheck {
    pub n: usize,
    pub r: usize,
    pub budget: PrivacyBudget,
    pub samples: usize,
    pub seed: u64,
    /// Spectrum of `A` spans `margin·σ_min·[1, 1.5]`.
    pub margin: f64,
    /// Refuse inputs whose spectrum is below the threshold.
    pub enforce_guard: bool,
    /// Use `Ã = A` instead of a rank-one neighbour.
    pub identical: bool,
}

impl DensityCheck {
    pub fn new(n: usize, r: usize, budget: PrivacyBudget, samples: usize, seed: u64) -> Self {
        Self {
            n,
            r,
            budget,
            samples,
            seed,
            margin: 1.1,
            enforce_guard: true,
            identical: false,
        }
    }
}

/// `(S⁻¹, ln det S)` for a symmetric positive-definite `S`.
fn spd_inverse_logdet(s: &DenseMatrix) -> Result<(DenseMatrix, f64)> {
    let eig = sym_eigen(s)?;
    if eig.values.iter().any(|&l| l <= 0.0) {
        return Err(Error::NumericFailure("covariance is not positive definite".into()));
    }
    let n = s.rows();
    let logdet = eig.values.iter().map(|l| l.ln()).sum();
    let inv = DenseMatrix::from_fn(n, n, |i, j| {
        (0..n)
            .map(|t| eig.vectors[(i, t)] * eig.vectors[(j, t)] / eig.values[t])
            .sum()
    });
    Ok((inv, logdet))
}

fn quad(m: &DenseMatrix, x: &[f64]) -> f64 {
    crate::numerics::dot(x, &m.mat_vec(x).expect("square"))
}

/// Samples `x = Aᵀy`, `y ~ N(0, I)`, i.e. `x ~ N(0, AᵀA)`, and counts
/// `|ln p_A(x) − ln p_Ã(x)| > ε₀` with `ε₀ = ε/√(4r·ln(2/δ))`, against `δ₀ = δ/(2r)`.
/// `Ã = A + e₀vᵀ` for a random unit `v`.
pub fn dp_density_ratio_check(cfg: &DensityCheck) -> Result<BoundReport> {
    let n = cfg.n;
    if n == 0 || n > 8 {
        return Err(Error::ParameterDomain(format!(
            "density check supports 1 <= n <= 8, got {n}"
        )));
    }
    let threshold = sigma_min_psg1(&cfg.budget, cfg.r)?;
    let sig: Vec<f64> = (0..n)
        .map(|j| cfg.margin * threshold * (1.0 + 0.5 * j as f64 / (n.max(2) - 1) as f64))
        .collect();
    let u = random_orthonormal(n, n, cfg.seed, 501);
    let v = random_orthonormal(n, n, cfg.seed, 502);
    let a = matmul(&DenseMatrix::from_fn(n, n, |i, j| u[(i, j)] * sig[j]), &v.transpose())?;
    let mut a_nb = a.clone();
    if !cfg.identical {
        let dir = NormalStream::data(cfg.seed, 503).unit_vector(n);
        for (j, x) in dir.iter().enumerate() {
            a_nb[(0, j)] += x;
        }
    }
    let smin_a = crate::numerics::smallest_singular_value(&a)?;
    let smin_b = crate::numerics::smallest_singular_value(&a_nb)?;
    if cfg.enforce_guard && smin_a.min(smin_b) < threshold {
        return Err(Error::GuardFailed {
            required: threshold,
            observed: smin_a.min(smin_b),
        });
    }
    let (inv_a, ld_a) = spd_inverse_logdet(&t_matmul(&a, &a)?)?;
    let (inv_b, ld_b) = spd_inverse_logdet(&t_matmul(&a_nb, &a_nb)?)?;
    let eps0 = cfg.budget.eps() / (4.0 * cfg.r as f64 * (2.0 / cfg.budget.delta()).ln()).sqrt();
    let delta0 = cfg.budget.delta() / (2.0 * cfg.r as f64);

    const CHUNK: usize = 10_000;
    let chunks = cfg.samples.div_ceil(CHUNK);
    let seeds = trial_seeds(cfg.seed.wrapping_mul(1_000_003), chunks);
    let counts: Vec<(usize, f64)> = map_trials(&seeds, |s| {
        let idx = s.wrapping_sub(seeds[0]) as usize;
        let len = CHUNK.min(cfg.samples - idx * CHUNK);
        let mut g = NormalStream::data(s, 504);
        let mut bad = 0;
        let mut worst = 0.0_f64;
        for _ in 0..len {
            let y = g.normals(n);
            let x = a.t_mat_vec(&y).expect("square");
            let loss = 0.5 * (ld_b - ld_a) + 0.5 * (quad(&inv_b, &x) - quad(&inv_a, &x));
            worst = worst.max(loss.abs());
            if loss.abs() > eps0 {
                bad += 1;
            }
        }
        (bad, worst)
    });
    let violations = counts.iter().map(|c| c.0).sum();
    let worst = counts.iter().fold(0.0_f64, |m, c| m.max(c.1));
    Ok(
        BoundReport::from_counts("psg1_density_ratio", seeds, cfg.samples, violations, delta0).with_detail(json!({
            "n": n, "r": cfg.r, "eps": cfg.budget.eps(), "delta": cfg.budget.delta(),
            "eps0": eps0, "delta0": delta0, "threshold": threshold, "margin": cfg.margin,
            "sigma_min_a": smin_a, "sigma_min_neighbour": smin_b, "max_abs_log_ratio": worst,
        })),
    )
}

// ---------------------------------------------------------------------------
// mechanism bound checks

/// Per-seed low-rank errors for the general path on `family`.
pub fn lra_trials(
    family: &LowRankFamily,
    k: usize,
    p: usize,
    budget: &PrivacyBudget,
    seeds: &[u64],
) -> Result<Vec<LraErrors>> {
    map_trials(seeds, |seed| {
        let a = family.sample(seed);
        let cfg = LraConfig::new(family.n, family.d, k, *budget, seed).with_oversample(p);
        let mut st = LraState::new(cfg)?;
        st.ingest_matrix(&a)?;
        let approx = st.finalize()?.reconstruct();
        lra_errors(&a, &approx, k, p, budget)
    })
    .into_iter()
    .collect()
}

/// Frobenius and spectral bound reports (≥ 90% of seeds, no slack).
pub fn bound_check_lra(
    family: &LowRankFamily,
    k: usize,
    p: usize,
    budget: &PrivacyBudget,
    seeds: &[u64],
) -> Result<(BoundReport, BoundReport)> {
    let errs = lra_trials(family, k, p, budget, seeds)?;
    let detail = json!({ "family": family, "k": k, "p": p, "budget": budget });
    let frob = BoundReport::from_pairs(
        "lra_frobenius_bound",
        seeds.to_vec(),
        errs.iter().map(|e| e.frobenius).collect(),
        errs.iter().map(|e| e.frobenius_bound).collect(),
        0.10,
        false,
    )
    .with_detail(detail.clone());
    let spec = BoundReport::from_pairs(
        "lra_spectral_bound",
        seeds.to_vec(),
        errs.iter().map(|e| e.spectral).collect(),
        errs.iter().map(|e| e.spectral_bound).collect(),
        0.10,
        false,
    )
    .with_detail(detail);
    Ok((frob, spec))
}

/// With `w = 0` (guard bypassed) the mechanism is a single-pass range finder;
/// its mean Frobenius error over the seeds must be within `factor` of the
/// two-pass range finder truncated to rank `k`.
pub fn lra_without_lift_vs_two_pass(
    family: &LowRankFamily,
    k: usize,
    p: usize,
    seeds: &[u64],
    factor: f64,
) -> Result<BoundReport> {
    let budget = PrivacyBudget::new(1.0, 0.01)?;
    let pairs: Vec<Result<(f64, f64)>> = map_trials(seeds, |seed| {
        let a = family.sample(seed);
        let cfg = LraConfig::new(family.n, family.d, k, budget, seed)
            .with_oversample(p)
            .with_unguarded_w(0.0);
        let mut st = LraState::new(cfg)?;
        st.ingest_matrix(&a)?;
        let mech = frobenius_norm(&a.sub(&st.finalize()?.reconstruct())?);
        let oracle = frobenius_norm(&a.sub(&halko_two_pass(&a, k, p, seed)?)?);
        Ok((mech, oracle))
    });
    let pairs: Vec<(f64, f64)> = pairs.into_iter().collect::<Result<_>>()?;
    let lhs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let rhs: Vec<f64> = pairs.iter().map(|p| factor * p.1).collect();
    let mean_mech = lhs.iter().sum::<f64>() / lhs.len() as f64;
    let mean_oracle = pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64;
    let ratio = mean_mech / mean_oracle;
    let per_seed_max = pairs.iter().map(|p| p.0 / p.1).fold(0.0_f64, f64::max);
    // the comparison is on the mean, so the per-seed pairs are informational
    let mut rep = BoundReport::from_pairs("lra_unlifted_vs_two_pass", seeds.to_vec(), lhs, rhs, 0.0, false);
    rep.statistic = Some(ratio);
    rep.target = Some(factor);
    rep.pass = ratio <= factor;
    rep.violations = usize::from(!rep.pass);
    Ok(rep.with_detail(json!({
        "family": family, "k": k, "p": p, "mean_mechanism": mean_mech,
        "mean_two_pass": mean_oracle, "max_per_seed_ratio": per_seed_max,
    })))
}

/// Parameters of a product check: Gaussian operands scaled by `scale`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProductCase {
    pub n: usize,
    pub d1: usize,
    pub d2: usize,
    pub budget: PrivacyBudget,
    pub acc: AccuracySpec,
    pub scale: f64,
}

impl ProductCase {
    pub fn operands(&self, seed: u64) -> (DenseMatrix, DenseMatrix) {
        (
            gaussian_matrix(self.n, self.d1, seed, 601).scale(self.scale),
            gaussian_matrix(self.n, self.d2, seed, 602).scale(self.scale),
        )
    }

    fn run(&self, a: &DenseMatrix, b: &DenseMatrix, seed: u64) -> Result<(DenseMatrix, f64)> {
        let mut st = MatProdState::new(MatProdConfig::new(
            self.n,
            self.d1,
            self.d2,
            self.budget,
            self.acc,
            seed,
        ))?;
        for i in 0..self.n {
            st.ingest_row(Operand::A, i, a.row(i))?;
            st.ingest_row(Operand::B, i, b.row(i))?;
        }
        Ok((st.product_query()?, st.additive_term()))
    }
}

/// `‖AᵀB − C‖_F ≤ rhs_factor·(α‖A‖_F‖B‖_F + s²√n·α)` with frequency ≥ 1 − β − slack.
pub fn bound_check_matprod(case: &ProductCase, seeds: &[u64], rhs_factor: f64) -> Result<BoundReport> {
    let errs: Vec<Result<ProductErrors>> = map_trials(seeds, |seed| {
        let (a, b) = case.operands(seed);
        let (c, add) = case.run(&a, &b, seed)?;
        matprod_errors(&a, &b, &c, case.acc.alpha(), add)
    });
    let errs: Vec<ProductErrors> = errs.into_iter().collect::<Result<_>>()?;
    Ok(BoundReport::from_pairs(
        "matprod_bound",
        seeds.to_vec(),
        errs.iter().map(|e| e.frobenius).collect(),
        errs.iter().map(|e| rhs_factor * e.bound).collect(),
        case.acc.beta(),
        true,
    )
    .with_detail(json!({ "case": case, "rhs_factor": rhs_factor })))
}

/// Mean of `C` over `trials` fresh sketchers for one fixed pair `(A, B)`;
/// passes when every entry is within three standard errors of `AᵀB`.
pub fn mc_matprod_unbiased(case: &ProductCase, trials: usize, seed: u64) -> Result<BoundReport> {
    let (a, b) = case.operands(seed);
    let exact = exact_product(&a, &b)?;
    let seeds = trial_seeds(seed.wrapping_mul(7919).wrapping_add(1), trials);
    let cs: Vec<Result<Vec<f64>>> = map_trials(&seeds, |s| case.run(&a, &b, s).map(|(c, _)| c.into_data()));
    let cs: Vec<Vec<f64>> = cs.into_iter().collect::<Result<_>>()?;
    let m = case.d1 * case.d2;
    let t = trials as f64;
    let mut zs = Vec::with_capacity(m);
    let mut lhs = Vec::with_capacity(m);
    let mut rhs = Vec::with_capacity(m);
    for e in 0..m {
        let mean = cs.iter().map(|c| c[e]).sum::<f64>() / t;
        let var = cs.iter().map(|c| (c[e] - mean).powi(2)).sum::<f64>() / (t - 1.0);
        let se = (var / t).sqrt();
        let gap = (mean - exact.data()[e]).abs();
        zs.push(gap / se);
        lhs.push(gap);
        rhs.push(3.0 * se);
    }
    let max_z = zs.iter().fold(0.0_f64, |acc, z| acc.max(*z));
    let mut rep = BoundReport::from_pairs("matprod_unbiased", vec![seed], lhs, rhs, 0.0, false);
    rep.statistic = Some(max_z);
    rep.target = Some(3.0);
    Ok(rep.with_detail(json!({ "case": case, "sketchers": trials })))
}

/// Parameters of a regression check: `A = scale·G`, `b = A·x₀ + noise·g`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RegressCase {
    pub n: usize,
    pub d: usize,
    pub budget: PrivacyBudget,
    pub acc: AccuracySpec,
    pub scale: f64,
    pub noise: f64,
}

impl RegressCase {
    pub fn data(&self, seed: u64) -> (DenseMatrix, Vec<f64>) {
        let a = gaussian_matrix(self.n, self.d, seed, 701).scale(self.scale);
        let x0 = NormalStream::data(seed, 702).normals(self.d);
        let noise = NormalStream::data(seed, 703).normals(self.n);
        let b = a
            .mat_vec(&x0)
            .expect("shapes")
            .iter()
            .zip(&noise)
            .map(|(p, e)| p + self.noise * e)
            .collect();
        (a, b)
    }
}

/// `‖Ax − b‖ ≤ (1+α)·min + τ` with frequency ≥ 1 − β − slack. The negative
/// control variant drops `τ` and the `α` allowance.
pub fn bound_check_regress(case: &RegressCase, seeds: &[u64], negative: bool) -> Result<BoundReport> {
    let errs: Vec<Result<RegressErrors>> = map_trials(seeds, |seed| {
        let (a, b) = case.data(seed);
        let mut st = RegressState::new(RegressConfig::new(case.n, case.d, case.budget, case.acc, seed))?;
        for i in 0..case.n {
            st.ingest_row(i, a.row(i))?;
        }
        let x = st.query(&b)?.x;
        let (alpha, tau) = if negative {
            (0.0, 0.0)
        } else {
            (case.acc.alpha(), st.additive_term())
        };
        regress_errors(&a, &b, &x, alpha, tau)
    });
    let errs: Vec<RegressErrors> = errs.into_iter().collect::<Result<_>>()?;
    let rep = BoundReport::from_pairs(
        "regress_bound",
        seeds.to_vec(),
        errs.iter().map(|e| e.residual).collect(),
        errs.iter().map(|e| e.bound).collect(),
        case.acc.beta(),
        true,
    )
    .with_detail(json!({ "case": case }));
    Ok(if negative { rep.as_negative_control() } else { rep })
}

/// Relative gap between exact least squares on the lifted design and the
/// closed-form ridge solution with `λ = s²`, maximised over the seeds.
pub fn ridge_equivalence(case: &RegressCase, seeds: &[u64]) -> Result<BoundReport> {
    let gaps: Vec<Result<f64>> = map_trials(seeds, |seed| {
        let (a, b) = case.data(seed);
        let st = RegressState::new(RegressConfig::new(case.n, case.d, case.budget, case.acc, seed))?;
        let lifted = st.lifted(&a)?;
        let mut b_hat = vec![0.0; lifted.rows()];
        let start = 2 * case.d + case.n;
        b_hat[start..start + case.n].copy_from_slice(&b);
        let x_lifted = exact_lsq(&lifted, &b_hat)?;
        let x_ridge = ridge_solution(&a, &b, st.s() * st.s())?;
        let diff: Vec<f64> = x_lifted.iter().zip(&x_ridge).map(|(p, q)| p - q).collect();
        Ok(norm2(&diff) / norm2(&x_ridge).max(f64::MIN_POSITIVE))
    });
    let gaps: Vec<f64> = gaps.into_iter().collect::<Result<_>>()?;
    let n = gaps.len();
    Ok(
        BoundReport::from_pairs("ridge_equivalence", seeds.to_vec(), gaps, vec![1e-8; n], 0.0, false)
            .with_detail(json!({ "case": case })),
    )
}

// ---------------------------------------------------------------------------
// suite

/// One suite entry: a report and whether it is supposed to fail.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteEntry {
    pub report: BoundReport,
    pub expect_fail: bool,
}

impl SuiteEntry {
    /// Positive checks must pass, negative controls must fail.
    pub fn ok(&self) -> bool {
        self.report.pass != self.expect_fail
    }
}

/// Privacy and accuracy parameters used by the built-in product check.
pub fn default_product_case() -> Result<ProductCase> {
    Ok(ProductCase {
        n: 100,
        d1: 20,
        d2: 20,
        budget: PrivacyBudget::new(1.0, 0.01)?,
        acc: AccuracySpec::new(0.5, 0.2)?,
        scale: 1e3,
    })
}

/// Parameters used by the built-in regression check.
pub fn default_regress_case() -> Result<RegressCase> {
    Ok(RegressCase {
        n: 200,
        d: 10,
        budget: PrivacyBudget::new(1.0, 0.01)?,
        acc: AccuracySpec::new(0.5, 0.2)?,
        scale: 1e3,
        noise: 1e3,
    })
}

/// Every lemma and product/regression bound with its negative control.
/// `quick` shrinks trial counts; the low-rank theorem bounds live in the
/// acceptance tests because they are not met at desk scale.
pub fn run_suite(quick: bool, seed: u64) -> Result<Vec<SuiteEntry>> {
    let pick = |q: usize, full: usize| if quick { q } else { full };
    let budget = PrivacyBudget::new(1.0, 0.01)?;
    let mut out = Vec::new();
    let mut push = |report: BoundReport, expect_fail: bool| out.push(SuiteEntry { report, expect_fail });

    push(mc_pseudoinverse_frobenius(10, 11, pick(2000, 10_000), seed)?, false);
    push(mc_pseudoinverse_spectral(5, 6, pick(1000, 10_000), seed)?, false);
    push(mc_jl(64, 800, 0.2, pick(500, 5000), seed, 1.0)?, false);
    push(mc_inner_product(64, 800, 0.2, pick(500, 5000), seed)?, false);

    let mut dp = DensityCheck::new(6, 4, budget, pick(20_000, 100_000), seed);
    push(dp_density_ratio_check(&dp)?, false);
    dp.margin = 0.05;
    dp.enforce_guard = false;
    push(dp_density_ratio_check(&dp)?.as_negative_control(), true);

    let product = default_product_case()?;
    let seeds = trial_seeds(seed, pick(20, 100));
    push(bound_check_matprod(&product, &seeds, 1.0)?, false);
    push(bound_check_matprod(&product, &seeds, 0.1)?.as_negative_control(), true);
    let small = ProductCase {
        n: 20,
        d1: 3,
        d2: 3,
        ..product
    };
    push(mc_matprod_unbiased(&small, pick(2000, 10_000), seed)?, false);

    let regress = default_regress_case()?;
    push(bound_check_regress(&regress, &seeds, false)?, false);
    push(bound_check_regress(&regress, &seeds, true)?, true);
    push(ridge_equivalence(&regress, &seeds[..seeds.len().min(10)])?, false);

    // cheap at full size, and the 1.5x ratio is calibrated there
    let family = LowRankFamily {
        n: 200,
        d: 200,
        rank: 5,
        top: 1e5,
        decay: 0.8,
        noise: 100.0,
    };
    push(
        lra_without_lift_vs_two_pass(&family, 5, 6, &trial_seeds(seed, 20), 1.5)?,
        false,
    );
    Ok(out)
}
