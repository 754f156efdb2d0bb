//! Single-pass private rank-`k` approximation.
//!
//! Rows of `A` are streamed once through the identity-lifted sketch
//! `Y1 = w·Ω1 + A·Ω2`. For a general (non-symmetric) `A` the same pass also
//! accumulates `Y2 = Aᵀ·Ω1 + w·Ω2`, which is the other half of the sketch of
//! the symmetric embedding `[[wI, A], [Aᵀ, wI]]`.
//!
//! At finalisation the dominant `k`-dimensional range of each sketch gives
//! `Ψ`, and the core matrix is recovered from the *same* Ω by least squares
//! after removing the known `w·Ω1` contribution:
//!
//! ```text
//! symmetric:      B (Ψᵀ Ω2) = Ψᵀ (Y1 − w Ω1)
//! non-symmetric:  C (Ψ2ᵀ Ω2) = Ψ1ᵀ (Y1 − w Ω1)   and   Cᵀ (Ψ1ᵀ Ω1) = Ψ2ᵀ (Y2 − w Ω2)
//! ```
//!
//! The two non-symmetric estimates of `C` are averaged and the result is
//! published through the eigenpairs of `[[0, C], [Cᵀ, 0]]`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::guard::{
    lra_lift_w_with, sigma_min_psg1, sigma_min_psg2, GuardReport, PrivacyBudget, DEFAULT_LIFT_CONSTANT,
};
use crate::numerics::{
    axpy, dominant_range, matmul, minres_solve, sym_eigen, t_matmul, DenseMatrix, MINRES_DEFAULT_TOL,
};
use crate::sketch::GaussianSketcher;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LraConfig {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub p: usize,
    pub budget: PrivacyBudget,
    pub seed: u64,
    pub symmetric: bool,
    /// Compute `w` at `(ε/2, δ/2)`.
    pub halve_budget: bool,
    /// Constant `c` in `w = c·k·ln(k/δ)/ε`.
    pub lift_constant: f64,
    /// Replaces the computed `w`; subject to the guard unless `enforce_guard` is off.
    pub w_override: Option<f64>,
    pub enforce_guard: bool,
}

impl LraConfig {
    /// General `n x d` input, oversampling `k + 1`, halved budget.
    pub fn new(n: usize, d: usize, k: usize, budget: PrivacyBudget, seed: u64) -> Self {
        Self {
            n,
            d,
            k,
            p: k + 1,
            budget,
            seed,
            symmetric: false,
            halve_budget: true,
            lift_constant: DEFAULT_LIFT_CONSTANT,
            w_override: None,
            enforce_guard: true,
        }
    }

    /// Symmetric `n x n` input.
    pub fn symmetric(n: usize, k: usize, budget: PrivacyBudget, seed: u64) -> Self {
        Self {
            symmetric: true,
            ..Self::new(n, n, k, budget, seed)
        }
    }

    pub fn with_oversample(mut self, p: usize) -> Self {
        self.p = p;
        self
    }

    pub fn with_halve_budget(mut self, on: bool) -> Self {
        self.halve_budget = on;
        self
    }

    pub fn with_lift_constant(mut self, c: f64) -> Self {
        self.lift_constant = c;
        self
    }

    /// Test hook: fixed `w` with the guard bypassed.
    pub fn with_unguarded_w(mut self, w: f64) -> Self {
        self.w_override = Some(w);
        self.enforce_guard = false;
        self
    }

    /// Sketch width `ℓ = k + p`.
    pub fn width(&self) -> usize {
        self.k + self.p
    }

    pub fn effective_budget(&self) -> PrivacyBudget {
        if self.halve_budget {
            self.budget.halved()
        } else {
            self.budget
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Configuration("k must be >= 1".into()));
        }
        if self.p < 2 {
            return Err(Error::Configuration(format!(
                "oversampling p must be >= 2, got {}",
                self.p
            )));
        }
        if self.n == 0 || self.d == 0 {
            return Err(Error::Configuration("matrix dimensions must be positive".into()));
        }
        if self.symmetric && self.n != self.d {
            return Err(Error::Configuration(format!(
                "symmetric path needs a square matrix, got {}x{}",
                self.n, self.d
            )));
        }
        if self.width() > self.n.min(self.d) {
            return Err(Error::Configuration(format!(
                "k + p = {} exceeds min(n, d) = {}",
                self.width(),
                self.n.min(self.d)
            )));
        }
        if let Some(w) = self.w_override {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Configuration(format!(
                    "w override must be finite and >= 0, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Retained entries: Ω (`(n+d)·ℓ`) plus `Y1` (`n·ℓ`) plus `Y2` (`d·ℓ`, general path only).
pub fn lra_space_formula(n: usize, d: usize, width: usize, symmetric: bool) -> usize {
    if symmetric {
        2 * n * width + n * width
    } else {
        (n + d) * width + (n + d) * width
    }
}

/// Published eigenpairs.
#[derive(Debug, Clone, Serialize)]
pub struct LowRankFactor {
    /// `n x q` (symmetric) or `(n+d) x q` (embedding of a general matrix).
    #[serde(skip)]
    pub u_hat: DenseMatrix,
    /// Eigenvalues, descending in magnitude.
    pub lambda: Vec<f64>,
    pub symmetric: bool,
    pub n: usize,
    pub d: usize,
    /// Fewer than `k` numerically non-zero components (per side) were recovered.
    pub reduced_rank: bool,
}

impl LowRankFactor {
    /// Dense approximation of `A`: `ÛΛÛᵀ`, or its top-right `n x d` block for a general matrix.
    pub fn reconstruct(&self) -> DenseMatrix {
        let q = self.lambda.len();
        if self.symmetric {
            let n = self.n;
            let mut out = DenseMatrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let mut acc = 0.0;
                    for t in 0..q {
                        acc += self.u_hat[(i, t)] * self.lambda[t] * self.u_hat[(j, t)];
                    }
                    out[(i, j)] = acc;
                    out[(j, i)] = acc;
                }
            }
            out
        } else {
            let (n, d) = (self.n, self.d);
            DenseMatrix::from_fn(n, d, |i, j| {
                (0..q)
                    .map(|t| self.u_hat[(i, t)] * self.lambda[t] * self.u_hat[(n + j, t)])
                    .sum()
            })
        }
    }
}

/// Streaming state of the mechanism.
#[derive(Debug, Clone)]
pub struct LraState {
    config: LraConfig,
    w: f64,
    guard: GuardReport,
    sketcher: GaussianSketcher,
    y1: DenseMatrix,
    y2: Option<DenseMatrix>,
    seen: Vec<bool>,
    rows_seen: usize,
}

impl LraState {
    pub fn new(config: LraConfig) -> Result<Self> {
        config.validate()?;
        let width = config.width();
        let eff = config.effective_budget();
        let w = match config.w_override {
            Some(w) => w,
            None => lra_lift_w_with(&eff, config.k, config.lift_constant)?,
        };
        // σ_min of [wI | A] is at least w, so w itself is checked against the floor at r = k + p
        let required = sigma_min_psg2(&eff, width)?.max(sigma_min_psg1(&eff, width)?);
        let guard = GuardReport {
            required_sigma_min: required,
            observed_sigma_min: w,
            passed: w >= required,
        };
        if config.enforce_guard {
            guard.into_result()?;
        }
        let (n, d) = (config.n, config.d);
        let sketcher = GaussianSketcher::new(config.seed, width, n + d)?;
        let y2 = if config.symmetric {
            None
        } else {
            Some(omega_block(&sketcher, n, d).scale(w))
        };
        Ok(Self {
            w,
            guard,
            sketcher,
            y1: DenseMatrix::zeros(n, width),
            y2,
            seen: vec![false; n],
            rows_seen: 0,
            config,
        })
    }

    pub fn config(&self) -> &LraConfig {
        &self.config
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn guard(&self) -> &GuardReport {
        &self.guard
    }

    pub fn rows_seen(&self) -> usize {
        self.rows_seen
    }

    pub fn sketcher(&self) -> &GaussianSketcher {
        &self.sketcher
    }

    pub fn y1(&self) -> &DenseMatrix {
        &self.y1
    }

    pub fn y2(&self) -> Option<&DenseMatrix> {
        self.y2.as_ref()
    }

    /// `Ω1` as an `n x ℓ` matrix (rows hitting the identity block).
    pub fn omega1(&self) -> DenseMatrix {
        omega_block(&self.sketcher, 0, self.config.n)
    }

    /// `Ω2` as a `d x ℓ` matrix (rows hitting `A`).
    pub fn omega2(&self) -> DenseMatrix {
        omega_block(&self.sketcher, self.config.n, self.config.d)
    }

    /// Entries currently held: Ω, `Y1` and `Y2`.
    pub fn space_entries(&self) -> usize {
        self.sketcher.stored_entries()
            + self.y1.rows() * self.y1.cols()
            + self.y2.as_ref().map_or(0, |y| y.rows() * y.cols())
    }

    /// Streams row `i` of `A`. Each row may be ingested once.
    pub fn ingest_row(&mut self, i: usize, row: &[f64]) -> Result<()> {
        let (n, d) = (self.config.n, self.config.d);
        if i >= n {
            return Err(Error::Contract(format!("row index {i} out of range (n = {n})")));
        }
        if self.seen[i] {
            return Err(Error::OnePassViolation(i));
        }
        if row.len() != d {
            return Err(Error::Contract(format!("row {i} has length {} != {d}", row.len())));
        }
        let mut lifted = vec![0.0; n + d];
        lifted[i] = self.w;
        lifted[n..].copy_from_slice(row);
        let y = self.sketcher.psg1(&lifted)?;
        self.y1.row_mut(i).copy_from_slice(&y);
        if let Some(y2) = self.y2.as_mut() {
            let om1 = self.sketcher.column(i);
            for (j, &a) in row.iter().enumerate() {
                if a != 0.0 {
                    axpy(a, &om1, y2.row_mut(j));
                }
            }
        }
        self.seen[i] = true;
        self.rows_seen += 1;
        Ok(())
    }

    /// Streams every row of a dense matrix in order.
    pub fn ingest_matrix(&mut self, a: &DenseMatrix) -> Result<()> {
        if a.shape() != (self.config.n, self.config.d) {
            return Err(Error::Contract(format!(
                "matrix is {:?}, configured for {}x{}",
                a.shape(),
                self.config.n,
                self.config.d
            )));
        }
        for i in 0..a.rows() {
            self.ingest_row(i, a.row(i))?;
        }
        Ok(())
    }

    pub fn finalize(&self) -> Result<LowRankFactor> {
        if self.rows_seen != self.config.n {
            return Err(Error::Contract(format!(
                "finalize after {} of {} rows",
                self.rows_seen, self.config.n
            )));
        }
        if self.config.symmetric {
            self.finalize_symmetric()
        } else {
            self.finalize_general()
        }
    }

    fn finalize_symmetric(&self) -> Result<LowRankFactor> {
        let k = self.config.k;
        let om1 = self.omega1();
        let om2 = self.omega2();
        let psi = dominant_range(&self.y1, k)?.basis;
        let coeff = t_matmul(&psi, &om2)?;
        let residual = self.y1.sub(&om1.scale(self.w))?;
        let rhs = t_matmul(&psi, &residual)?;
        let b = minres_solve(&coeff, &rhs, MINRES_DEFAULT_TOL)?.solution;
        let eig = sym_eigen(&b)?;
        let (lambda, ubar, reduced) = keep_nonzero(eig.values, eig.vectors, k);
        Ok(LowRankFactor {
            u_hat: matmul(&psi, &ubar)?,
            lambda,
            symmetric: true,
            n: self.config.n,
            d: self.config.d,
            reduced_rank: reduced,
        })
    }

    fn finalize_general(&self) -> Result<LowRankFactor> {
        let (n, d, k) = (self.config.n, self.config.d, self.config.k);
        let y2 = self.y2.as_ref().expect("general path keeps Y2");
        let om1 = self.omega1();
        let om2 = self.omega2();
        let psi1 = dominant_range(&self.y1, k)?.basis;
        let psi2 = dominant_range(y2, k)?.basis;
        let (k1, k2) = (psi1.cols(), psi2.cols());

        let rhs_top = t_matmul(&psi1, &self.y1.sub(&om1.scale(self.w))?)?;
        let c_top = minres_solve(&t_matmul(&psi2, &om2)?, &rhs_top, MINRES_DEFAULT_TOL)?.solution;
        let rhs_bot = t_matmul(&psi2, &y2.sub(&om2.scale(self.w))?)?;
        let c_bot = minres_solve(&t_matmul(&psi1, &om1)?, &rhs_bot, MINRES_DEFAULT_TOL)?.solution;
        let c = c_top.add(&c_bot.transpose())?.scale(0.5);

        let q = k1 + k2;
        let embed = DenseMatrix::from_fn(q, q, |i, j| match (i < k1, j < k1) {
            (true, false) => c[(i, j - k1)],
            (false, true) => c[(j, i - k1)],
            _ => 0.0,
        });
        let eig = sym_eigen(&embed)?;
        let (lambda, ubar, reduced) = keep_nonzero(eig.values, eig.vectors, 2 * k);
        let mut u_hat = DenseMatrix::zeros(n + d, lambda.len());
        let top = matmul(&psi1, &ubar.rows_range(0, k1))?;
        let bottom = matmul(&psi2, &ubar.rows_range(k1, q))?;
        for t in 0..lambda.len() {
            for i in 0..n {
                u_hat[(i, t)] = top[(i, t)];
            }
            for j in 0..d {
                u_hat[(n + j, t)] = bottom[(j, t)];
            }
        }
        Ok(LowRankFactor {
            u_hat,
            lambda,
            symmetric: false,
            n,
            d,
            reduced_rank: reduced || k1 < k || k2 < k,
        })
    }
}

/// Rows `start..start+len` of Ωᵀ, i.e. an `len x ℓ` block.
fn omega_block(sk: &GaussianSketcher, start: usize, len: usize) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(len, sk.r());
    for i in 0..len {
        out.row_mut(i).copy_from_slice(&sk.column(start + i));
    }
    out
}

/// Keeps the leading `want` eigenpairs (already sorted by magnitude) and drops
/// numerically zero ones; the flag reports a shortfall against `want`.
fn keep_nonzero(values: Vec<f64>, vectors: DenseMatrix, want: usize) -> (Vec<f64>, DenseMatrix, bool) {
    let top = values.first().map_or(0.0, |v| v.abs());
    let keep = values
        .iter()
        .take(want)
        .take_while(|v| v.abs() > 1e-12 * top && top > 0.0)
        .count();
    (values[..keep].to_vec(), vectors.columns(0, keep), keep < want)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guard::lra_lift_w;
    use crate::numerics::{frobenius_norm, svd};
    use crate::rng::gaussian_matrix;

    fn budget() -> PrivacyBudget {
        PrivacyBudget::new(1.0, 0.01).unwrap()
    }

    fn rel(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        frobenius_norm(&a.sub(b).unwrap()) / frobenius_norm(b).max(f64::MIN_POSITIVE)
    }

    /// Random rank-`k` matrix with singular values `scale·(1, 0.8, 0.64, …)`.
    fn planted(n: usize, d: usize, k: usize, scale: f64, seed: u64) -> DenseMatrix {
        let u = svd(&gaussian_matrix(n, k, seed, 1)).unwrap().u;
        let v = svd(&gaussian_matrix(d, k, seed, 2)).unwrap().u;
        let sig: Vec<f64> = (0..k).map(|j| scale * 0.8f64.powi(j as i32)).collect();
        matmul(
            &matmul(&u, &DenseMatrix::from_diag(k, k, &sig)).unwrap(),
            &v.transpose(),
        )
        .unwrap()
    }

    fn symmetric_planted(n: usize, k: usize, scale: f64, seed: u64) -> DenseMatrix {
        let u = svd(&gaussian_matrix(n, k, seed, 3)).unwrap().u;
        let sig: Vec<f64> = (0..k).map(|j| scale * (if j % 2 == 0 { 1.0 } else { -0.7 })).collect();
        let m = matmul(
            &matmul(&u, &DenseMatrix::from_diag(k, k, &sig)).unwrap(),
            &u.transpose(),
        )
        .unwrap();
        DenseMatrix::from_fn(n, n, |i, j| if i <= j { m[(i, j)] } else { m[(j, i)] })
    }

    #[test]
    fn dimension_bookkeeping() {
        let st = LraState::new(LraConfig::symmetric(30, 3, budget(), 1).with_oversample(4)).unwrap();
        assert_eq!(st.sketcher().omega().shape(), (7, 60));
        assert_eq!(st.omega1().shape(), (30, 7));
        assert_eq!(st.y1().shape(), (30, 7));
        assert!(st.y2().is_none());
        assert_eq!(st.space_entries(), lra_space_formula(30, 30, 7, true));

        let st = LraState::new(LraConfig::new(20, 12, 2, budget(), 1)).unwrap();
        assert_eq!(st.y2().unwrap().shape(), (12, 5));
        assert_eq!(st.space_entries(), lra_space_formula(20, 12, 5, false));
    }

    #[test]
    fn lift_delegates_to_guard() {
        let st = LraState::new(LraConfig::new(40, 40, 5, budget(), 2)).unwrap();
        assert_eq!(st.w(), lra_lift_w(&budget().halved(), 5).unwrap());
        let st = LraState::new(LraConfig::new(40, 40, 5, budget(), 2).with_halve_budget(false)).unwrap();
        assert_eq!(st.w(), lra_lift_w(&budget(), 5).unwrap());
        assert!(st.guard().passed);
    }

    #[test]
    fn configuration_errors() {
        let bad = |c: LraConfig| matches!(LraState::new(c), Err(Error::Configuration(_)));
        assert!(bad(LraConfig::new(10, 10, 0, budget(), 0)));
        assert!(bad(LraConfig::new(10, 10, 2, budget(), 0).with_oversample(1)));
        assert!(bad(LraConfig::new(10, 6, 3, budget(), 0)));
        let mut c = LraConfig::symmetric(10, 2, budget(), 0);
        c.d = 9;
        assert!(bad(c));
    }

    #[test]
    fn small_override_is_refused_by_guard() {
        let mut c = LraConfig::new(20, 20, 2, budget(), 0);
        c.w_override = Some(1.0);
        assert!(matches!(LraState::new(c), Err(Error::GuardFailed { .. })));
        let c = LraConfig::new(20, 20, 2, budget(), 0).with_unguarded_w(1.0);
        let st = LraState::new(c).unwrap();
        assert!(!st.guard().passed);
    }

    #[test]
    fn one_pass_contract() {
        let mut st = LraState::new(LraConfig::new(10, 10, 2, budget(), 0)).unwrap();
        st.ingest_row(3, &[0.0; 10]).unwrap();
        assert!(matches!(st.ingest_row(3, &[0.0; 10]), Err(Error::OnePassViolation(3))));
        assert!(matches!(st.ingest_row(10, &[0.0; 10]), Err(Error::Contract(_))));
        assert!(matches!(st.ingest_row(4, &[0.0; 9]), Err(Error::Contract(_))));
        assert!(matches!(st.finalize(), Err(Error::Contract(_))));
        assert_eq!(st.rows_seen(), 1);
    }

    #[test]
    fn zero_row_sketches_identity_block() {
        let mut st = LraState::new(LraConfig::new(10, 10, 2, budget(), 5)).unwrap();
        st.ingest_row(4, &[0.0; 10]).unwrap();
        let expect = st.omega1().scale(st.w());
        assert_eq!(st.y1().row(4), expect.row(4));
    }

    #[test]
    fn streamed_sketches_match_batch() {
        let (n, d) = (25, 18);
        let a = gaussian_matrix(n, d, 7, 0);
        let mut st = LraState::new(LraConfig::new(n, d, 3, budget(), 9)).unwrap();
        st.ingest_matrix(&a).unwrap();
        let w = st.w();
        let (om1, om2) = (st.omega1(), st.omega2());
        let y1 = om1.scale(w).add(&matmul(&a, &om2).unwrap()).unwrap();
        let y2 = t_matmul(&a, &om1).unwrap().add(&om2.scale(w)).unwrap();
        assert!(rel(st.y1(), &y1) < 1e-12);
        assert!(rel(st.y2().unwrap(), &y2) < 1e-12);
        // same thing through the dense lifted matrix
        let lifted = crate::guard::identity_lift(&a, w);
        let batch = matmul(&lifted, &st.sketcher().omega().transpose()).unwrap();
        assert!(rel(st.y1(), &batch) < 1e-12);
    }

    #[test]
    fn null_matrix_publishes_nothing() {
        for seed in 0..100 {
            let mut st = LraState::new(LraConfig::new(12, 12, 2, budget(), seed)).unwrap();
            st.ingest_matrix(&DenseMatrix::zeros(12, 12)).unwrap();
            let f = st.finalize().unwrap();
            assert!(f.lambda.iter().all(|l| l.abs() <= 1e-9 * st.w()));
            assert!(f.reconstruct().max_abs() <= 1e-9 * st.w());
        }
    }

    #[test]
    fn exact_rank_recovery_general() {
        let (n, d, k) = (60, 45, 3);
        for seed in 0..20 {
            let a = planted(n, d, k, 1e7, seed);
            let mut st = LraState::new(LraConfig::new(n, d, k, budget(), seed)).unwrap();
            st.ingest_matrix(&a).unwrap();
            let f = st.finalize().unwrap();
            assert!(rel(&f.reconstruct(), &a) <= 0.05, "seed {seed}");
        }
    }

    #[test]
    fn exact_rank_recovery_symmetric() {
        let (n, k) = (50, 3);
        for seed in 0..20 {
            let a = symmetric_planted(n, k, 1e7, seed);
            let mut st = LraState::new(LraConfig::symmetric(n, k, budget(), seed)).unwrap();
            st.ingest_matrix(&a).unwrap();
            let f = st.finalize().unwrap();
            let m = f.reconstruct();
            assert!(rel(&m, &a) <= 0.05, "seed {seed}");
            assert_eq!(m, m.transpose());
            assert!(f.lambda.windows(2).all(|w| w[0].abs() >= w[1].abs()));
            // some eigenvalues are negative by construction
            assert!(f.lambda.iter().any(|&l| l < 0.0));
        }
    }

    #[test]
    fn reconstruction_rank_and_orthonormality() {
        let (n, d, k) = (40, 30, 4);
        let a = gaussian_matrix(n, d, 3, 0).scale(1e4);
        let mut st = LraState::new(LraConfig::new(n, d, k, budget(), 3)).unwrap();
        st.ingest_matrix(&a).unwrap();
        let f = st.finalize().unwrap();
        let s = svd(&f.reconstruct()).unwrap().sigma;
        assert!(s[k] <= 1e-9 * s[0]);
        let g = t_matmul(&f.u_hat, &f.u_hat).unwrap();
        assert!(frobenius_norm(&g.sub(&DenseMatrix::identity(g.rows())).unwrap()) < 1e-9);
    }

    #[test]
    fn zero_eigenvalues_reconstruct_to_zero() {
        let f = LowRankFactor {
            u_hat: gaussian_matrix(5, 2, 1, 0),
            lambda: vec![0.0, 0.0],
            symmetric: true,
            n: 5,
            d: 5,
            reduced_rank: true,
        };
        assert_eq!(f.reconstruct(), DenseMatrix::zeros(5, 5));
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let a = gaussian_matrix(30, 20, 1, 0).scale(100.0);
        let run = || {
            let mut st = LraState::new(LraConfig::new(30, 20, 3, budget(), 77)).unwrap();
            st.ingest_matrix(&a).unwrap();
            st.finalize().unwrap().reconstruct()
        };
        assert_eq!(run(), run());
    }
}
