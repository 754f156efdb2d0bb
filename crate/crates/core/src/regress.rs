//! Private least squares from a lifted sketch of the design matrix.
//!
//! The design matrix is sketched exactly as one operand of the product
//! mechanism (lift `s·e_c`, shared Ω). A query vector `b` is lifted to
//! `(0^d, 0^{n+d}, b)`, sketched with the regenerated Ω, and the sketched
//! problem `min ‖Ya·x − Yb‖` is solved. Because the lift contributes `s²I` to
//! the Gram matrix, the answer approximates the ridge solution
//! `(AᵀA + s²I)⁻¹Aᵀb`, not ordinary least squares.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::guard::{
    compose, lift_scale_s, linreg_sketch_dim_with, sigma_min_psg1, AccuracySpec, GuardReport, PrivacyBudget,
    DEFAULT_LINREG_CONSTANT,
};
use crate::matprod::LiftLayout;
use crate::numerics::{dot, minres_solve, sym_eigen, t_matmul, DenseMatrix, MINRES_DEFAULT_TOL};
use crate::sketch::{GaussianSketcher, OmegaStorage, Sketch, SketchKind};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressConfig {
    pub n: usize,
    pub d: usize,
    pub budget: PrivacyBudget,
    pub acc: AccuracySpec,
    pub seed: u64,
    /// Constant `c` in `r = ⌈c·d·ln(q/β)/α⌉`.
    pub dim_constant: f64,
    /// Planned number of queries `q`; `1` gives `ln(1/β)`.
    pub planned_queries: usize,
    /// Queries beyond this count are refused.
    pub query_ceiling: Option<usize>,
}

impl RegressConfig {
    pub fn new(n: usize, d: usize, budget: PrivacyBudget, acc: AccuracySpec, seed: u64) -> Self {
        Self {
            n,
            d,
            budget,
            acc,
            seed,
            dim_constant: DEFAULT_LINREG_CONSTANT,
            planned_queries: 1,
            query_ceiling: None,
        }
    }
}

/// Retained entries `r·d`.
pub fn regress_space_formula(r: usize, d: usize) -> usize {
    r * d
}

#[derive(Debug, Clone, Serialize)]
pub struct RegressAnswer {
    pub x: Vec<f64>,
    /// `‖Ya·x − Yb‖` in the sketched space.
    pub sketch_residual: f64,
    pub iterations: usize,
}

#[derive(Debug)]
pub struct RegressState {
    config: RegressConfig,
    r: usize,
    s: f64,
    guard: GuardReport,
    layout: LiftLayout,
    sketcher: GaussianSketcher,
    ya: Sketch,
    answered: AtomicUsize,
}

impl RegressState {
    pub fn new(config: RegressConfig) -> Result<Self> {
        let (n, d) = (config.n, config.d);
        if n == 0 || d == 0 {
            return Err(Error::Configuration(format!(
                "dimensions must be positive, got n={n}, d={d}"
            )));
        }
        let r = linreg_sketch_dim_with(&config.acc, d, config.dim_constant, config.planned_queries)?;
        let s = lift_scale_s(&config.budget, r)?;
        let required = sigma_min_psg1(&config.budget, r)?;
        let guard = GuardReport {
            required_sigma_min: required,
            observed_sigma_min: s,
            passed: s >= required,
        }
        .into_result()?;
        let layout = LiftLayout { n, d };
        let sketcher = GaussianSketcher::with_storage(config.seed, r, layout.width(), OmegaStorage::Regenerate)?;
        let mut ya = Sketch::zeros(SketchKind::Psg1, &sketcher, d);
        for c in 0..d {
            ya.add_to_column(c, s, &sketcher.column(layout.lift_index(c)));
        }
        Ok(Self {
            config,
            r,
            s,
            guard,
            layout,
            sketcher,
            ya,
            answered: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &RegressConfig {
        &self.config
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn guard(&self) -> &GuardReport {
        &self.guard
    }

    pub fn sketcher(&self) -> &GaussianSketcher {
        &self.sketcher
    }

    pub fn sketch(&self) -> &Sketch {
        &self.ya
    }

    pub fn space_entries(&self) -> usize {
        self.ya.entries() + self.sketcher.stored_entries()
    }

    /// The `2(n+d) x d` lifted design matrix.
    pub fn lifted(&self, a: &DenseMatrix) -> Result<DenseMatrix> {
        crate::guard::column_lift(a, self.s, self.layout.d)
    }

    pub fn ingest_column(&mut self, c: usize, col: &[f64]) -> Result<()> {
        let n = self.config.n;
        if c >= self.config.d {
            return Err(Error::Contract(format!(
                "column index {c} out of range (d = {})",
                self.config.d
            )));
        }
        let delta = self.sketch_data(col)?;
        self.ya.add_to_column(c, 1.0, &delta);
        debug_assert_eq!(col.len(), n);
        Ok(())
    }

    /// Turnstile update with row `i` of the design matrix.
    pub fn ingest_row(&mut self, i: usize, row: &[f64]) -> Result<()> {
        if i >= self.config.n {
            return Err(Error::Contract(format!(
                "row index {i} out of range (n = {})",
                self.config.n
            )));
        }
        if row.len() != self.config.d {
            return Err(Error::Contract(format!(
                "row has length {} != d = {}",
                row.len(),
                self.config.d
            )));
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::Contract("non-finite row entry".into()));
        }
        let omega_col = self.sketcher.column(self.layout.data_index(i)).into_owned();
        for (c, &x) in row.iter().enumerate() {
            if x != 0.0 {
                self.ya.add_to_column(c, x, &omega_col);
            }
        }
        Ok(())
    }

    pub fn ingest_matrix(&mut self, a: &DenseMatrix) -> Result<()> {
        if a.shape() != (self.config.n, self.config.d) {
            return Err(Error::Contract(format!(
                "design matrix is {:?}, expected {}x{}",
                a.shape(),
                self.config.n,
                self.config.d
            )));
        }
        for c in 0..self.config.d {
            self.ingest_column(c, &a.column(c))?;
        }
        Ok(())
    }

    /// `Ω·(0^d, 0^{n+d}, v)`.
    fn sketch_data(&self, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.config.n;
        if v.len() != n {
            return Err(Error::Contract(format!("vector has length {} != n = {n}", v.len())));
        }
        let mut lifted = vec![0.0; self.layout.width()];
        let start = self.layout.data_index(0);
        lifted[start..start + n].copy_from_slice(v);
        self.sketcher.psg1(&lifted)
    }

    /// Minimiser of `‖Ya·x − Yb‖` for the lifted, sketched target `b`.
    pub fn query(&self, b: &[f64]) -> Result<RegressAnswer> {
        let yb = self.sketch_data(b)?;
        let reserved = self.answered.fetch_add(1, Ordering::SeqCst);
        if let Some(cap) = self.config.query_ceiling {
            if reserved >= cap {
                self.answered.fetch_sub(1, Ordering::SeqCst);
                return Err(Error::QueryCeiling(cap));
            }
        }
        let coeff = self.ya.data().transpose();
        let rhs = DenseMatrix::new(1, yb.len(), yb)?;
        let sol = minres_solve(&coeff, &rhs, MINRES_DEFAULT_TOL)?;
        Ok(RegressAnswer {
            x: sol.solution.row(0).to_vec(),
            sketch_residual: sol.residual,
            iterations: sol.iterations,
        })
    }

    pub fn queries_answered(&self) -> usize {
        self.answered.load(Ordering::SeqCst)
    }

    /// Budget consumed by the answered queries under advanced composition with slack `delta_prime`.
    pub fn composed_budget(&self, delta_prime: f64) -> Result<PrivacyBudget> {
        let ell = self.queries_answered().max(1);
        compose(self.config.budget.eps(), self.config.budget.delta(), ell, delta_prime)
    }

    /// Additive error allowance `τ = s²·√n·α`.
    pub fn additive_term(&self) -> f64 {
        self.s * self.s * (self.config.n as f64).sqrt() * self.config.acc.alpha()
    }
}

/// `(AᵀA + λI)⁻¹ Aᵀ b` through the eigen-decomposition of `AᵀA`.
pub fn ridge_solution(a: &DenseMatrix, b: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let gram = t_matmul(a, a)?;
    let atb = a.t_mat_vec(b)?;
    let eig = sym_eigen(&gram)?;
    let d = a.cols();
    let mut x = vec![0.0; d];
    for t in 0..d {
        let v = eig.vectors.column(t);
        let coef = dot(&v, &atb) / (eig.values[t] + lambda);
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi += coef * vi;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guard::linreg_sketch_dim;
    use crate::numerics::{matmul, norm2};
    use crate::rng::{gaussian_matrix, NormalStream};

    fn config(n: usize, d: usize, seed: u64) -> RegressConfig {
        RegressConfig::new(
            n,
            d,
            PrivacyBudget::new(1.0, 0.01).unwrap(),
            AccuracySpec::new(0.5, 0.2).unwrap(),
            seed,
        )
    }

    #[test]
    fn parameters_delegate_to_guard() {
        let st = RegressState::new(config(40, 10, 1)).unwrap();
        assert_eq!(st.r(), linreg_sketch_dim(&st.config().acc, 10).unwrap());
        assert_eq!(st.s(), lift_scale_s(&st.config().budget, st.r()).unwrap());
        assert_eq!(st.sketch().data().shape(), (st.r(), 10));
        assert_eq!(st.space_entries(), regress_space_formula(st.r(), 10));
    }

    #[test]
    fn planned_queries_inflate_dimension() {
        let mut c = config(40, 4, 1);
        let base = RegressState::new(c.clone()).unwrap().r();
        c.planned_queries = 20;
        assert!(RegressState::new(c).unwrap().r() > base);
    }

    #[test]
    fn zero_column_is_pure_lift() {
        let mut st = RegressState::new(config(8, 2, 2)).unwrap();
        st.ingest_column(1, &[0.0; 8]).unwrap();
        let expect: Vec<f64> = st.sketcher().column(1).iter().map(|x| st.s() * x).collect();
        assert_eq!(st.sketch().data().column(1), expect);
    }

    #[test]
    fn streamed_equals_batch_and_turnstile_cancels() {
        let (n, d) = (12, 3);
        let a = gaussian_matrix(n, d, 3, 0);
        let mut st = RegressState::new(config(n, d, 4)).unwrap();
        st.ingest_matrix(&a).unwrap();
        let batch = matmul(&st.sketcher().omega(), &st.lifted(&a).unwrap()).unwrap();
        let diff = st.sketch().data().sub(&batch).unwrap();
        assert!(crate::numerics::frobenius_norm(&diff) <= 1e-12 * crate::numerics::frobenius_norm(&batch));

        let before = st.sketch().data().clone();
        let col = a.column(0);
        let neg: Vec<f64> = col.iter().map(|x| -x).collect();
        st.ingest_column(0, &col).unwrap();
        st.ingest_column(0, &neg).unwrap();
        assert!(
            crate::numerics::frobenius_norm(&st.sketch().data().sub(&before).unwrap())
                <= 1e-10 * crate::numerics::frobenius_norm(&before)
        );
    }

    #[test]
    fn null_target_gives_zero() {
        for seed in 0..100 {
            let mut st = RegressState::new(config(20, 3, seed)).unwrap();
            st.ingest_matrix(&gaussian_matrix(20, 3, seed, 0)).unwrap();
            let ans = st.query(&[0.0; 20]).unwrap();
            assert!(norm2(&ans.x) <= 1e-12);
        }
    }

    #[test]
    fn consistent_system_within_additive_band() {
        let (n, d) = (60, 4);
        for seed in 0..10 {
            let a = gaussian_matrix(n, d, seed, 0).scale(1e5);
            let x0 = NormalStream::data(seed, 1).normals(d);
            let b = a.mat_vec(&x0).unwrap();
            let mut st = RegressState::new(config(n, d, seed)).unwrap();
            st.ingest_matrix(&a).unwrap();
            let x = st.query(&b).unwrap().x;
            let res: Vec<f64> = a.mat_vec(&x).unwrap().iter().zip(&b).map(|(p, q)| p - q).collect();
            assert!(norm2(&res) <= st.additive_term());
        }
    }

    #[test]
    fn query_ceiling_and_composition() {
        let mut c = config(10, 2, 0);
        c.query_ceiling = Some(2);
        let mut st = RegressState::new(c).unwrap();
        st.ingest_matrix(&gaussian_matrix(10, 2, 0, 0)).unwrap();
        let b = vec![1.0; 10];
        st.query(&b).unwrap();
        st.query(&b).unwrap();
        assert!(matches!(st.query(&b), Err(Error::QueryCeiling(2))));
        assert_eq!(st.queries_answered(), 2);
        let composed = st.composed_budget(1e-6).unwrap();
        let expect = compose(1.0, 0.01, 2, 1e-6).unwrap();
        assert_eq!(composed, expect);
    }

    #[test]
    fn ridge_matches_lifted_least_squares() {
        let (n, d) = (15, 3);
        let a = gaussian_matrix(n, d, 1, 0);
        let b = NormalStream::data(1, 5).normals(n);
        let s = 0.7;
        let x = ridge_solution(&a, &b, s * s).unwrap();
        // lifted normal equations: (AᵀA + s²I) x = Aᵀb
        let mut lhs = t_matmul(&a, &a).unwrap();
        for i in 0..d {
            lhs[(i, i)] += s * s;
        }
        let got = lhs.mat_vec(&x).unwrap();
        let want = a.t_mat_vec(&b).unwrap();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12 * norm2(&want));
        }
    }

    #[test]
    fn length_errors() {
        let mut st = RegressState::new(config(6, 2, 0)).unwrap();
        assert!(matches!(st.query(&[0.0; 5]), Err(Error::Contract(_))));
        assert!(matches!(st.ingest_column(2, &[0.0; 6]), Err(Error::Contract(_))));
        assert!(matches!(st.ingest_row(0, &[0.0; 3]), Err(Error::Contract(_))));
    }
}
