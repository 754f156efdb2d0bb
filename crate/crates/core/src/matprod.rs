//! Private approximate matrix product `AᵀB`.
//!
//! Column `a` of `A` (`n x d1`) is lifted to `(s·e_a, 0^{n+d}, A_{:a})` with
//! `d = max(d1, d2)` and sketched by one shared Ω of shape `r x 2(n+d)`; the
//! same for `B`. The lift parts enter the sketches when the state is created,
//! so every snapshot of the state is a sketch of a lifted matrix, and
//! ingestion afterwards is purely additive in the data block.
//!
//! The query is `YaᵀYb / r − s²·Ĩ`, where `Ĩ` is the `d1 x d2` partial identity
//! removing the expected lift cross-term.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::guard::{
    lift_scale_s, matmult_sketch_dim_with, sigma_min_psg1, AccuracySpec, GuardReport, PrivacyBudget,
    DEFAULT_MATMULT_CONSTANT,
};
use crate::numerics::{t_matmul, DenseMatrix};
use crate::sketch::{GaussianSketcher, OmegaStorage, Sketch, SketchKind};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatProdConfig {
    pub n: usize,
    pub d1: usize,
    pub d2: usize,
    pub budget: PrivacyBudget,
    pub acc: AccuracySpec,
    pub seed: u64,
    /// Constant `c` in `r = ⌈c·ln(2/β)/α²⌉`.
    pub dim_constant: f64,
    /// Replaces the computed lift scale; still checked against the guard.
    pub s_override: Option<f64>,
}

impl MatProdConfig {
    pub fn new(n: usize, d1: usize, d2: usize, budget: PrivacyBudget, acc: AccuracySpec, seed: u64) -> Self {
        Self {
            n,
            d1,
            d2,
            budget,
            acc,
            seed,
            dim_constant: DEFAULT_MATMULT_CONSTANT,
            s_override: None,
        }
    }
}

/// Which operand a column or row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operand {
    A,
    B,
}

/// Column layout of a lifted vector of length `2(n+d)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LiftLayout {
    pub n: usize,
    pub d: usize,
}

impl LiftLayout {
    pub fn width(&self) -> usize {
        2 * (self.n + self.d)
    }

    /// Ω column hit by the identity part of column `c`.
    pub fn lift_index(&self, c: usize) -> usize {
        c
    }

    /// Ω column hit by entry `i` of a data column.
    pub fn data_index(&self, i: usize) -> usize {
        2 * self.d + self.n + i
    }
}

#[derive(Debug, Clone)]
pub struct MatProdState {
    config: MatProdConfig,
    r: usize,
    s: f64,
    guard: GuardReport,
    layout: LiftLayout,
    sketcher: GaussianSketcher,
    ya: Sketch,
    yb: Sketch,
}

/// Retained entries `r·(d1 + d2)`.
pub fn matprod_space_formula(r: usize, d1: usize, d2: usize) -> usize {
    r * (d1 + d2)
}

impl MatProdState {
    pub fn new(config: MatProdConfig) -> Result<Self> {
        let (n, d1, d2) = (config.n, config.d1, config.d2);
        if n == 0 || d1 == 0 || d2 == 0 {
            return Err(Error::Configuration(format!(
                "dimensions must be positive, got n={n}, d1={d1}, d2={d2}"
            )));
        }
        let r = matmult_sketch_dim_with(&config.acc, config.dim_constant);
        let s = match config.s_override {
            Some(s) => s,
            None => lift_scale_s(&config.budget, r)?,
        };
        // ÂᵀÂ = s²I + AᵀA, so σ_min(Â) ≥ s
        let guard = GuardReport {
            required_sigma_min: sigma_min_psg1(&config.budget, r)?,
            observed_sigma_min: s,
            passed: s >= sigma_min_psg1(&config.budget, r)?,
        }
        .into_result()?;
        let layout = LiftLayout { n, d: d1.max(d2) };
        let sketcher = GaussianSketcher::with_storage(config.seed, r, layout.width(), OmegaStorage::Regenerate)?;
        let mut ya = Sketch::zeros(SketchKind::Psg1, &sketcher, d1);
        let mut yb = Sketch::zeros(SketchKind::Psg1, &sketcher, d2);
        for c in 0..d1.max(d2) {
            let col = sketcher.column(layout.lift_index(c));
            if c < d1 {
                ya.add_to_column(c, s, &col);
            }
            if c < d2 {
                yb.add_to_column(c, s, &col);
            }
        }
        Ok(Self {
            config,
            r,
            s,
            guard,
            layout,
            sketcher,
            ya,
            yb,
        })
    }

    pub fn config(&self) -> &MatProdConfig {
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

    pub fn sketch(&self, which: Operand) -> &Sketch {
        match which {
            Operand::A => &self.ya,
            Operand::B => &self.yb,
        }
    }

    /// Entries held: both sketches (Ω is regenerated, not stored).
    pub fn space_entries(&self) -> usize {
        self.ya.entries() + self.yb.entries() + self.sketcher.stored_entries()
    }

    /// The `2(n+d) x d_x` lifted operand, for guard and oracle checks.
    pub fn lifted(&self, m: &DenseMatrix) -> Result<DenseMatrix> {
        crate::guard::column_lift(m, self.s, self.layout.d)
    }

    fn target(&mut self, which: Operand) -> (&mut Sketch, usize) {
        match which {
            Operand::A => (&mut self.ya, self.config.d1),
            Operand::B => (&mut self.yb, self.config.d2),
        }
    }

    /// Adds a data column (length `n`) to column `c` of one operand's sketch.
    pub fn ingest_column(&mut self, which: Operand, c: usize, col: &[f64]) -> Result<()> {
        let n = self.config.n;
        if col.len() != n {
            return Err(Error::Contract(format!("column has length {} != n = {n}", col.len())));
        }
        if col.iter().any(|x| !x.is_finite()) {
            return Err(Error::Contract("non-finite column entry".into()));
        }
        let layout = self.layout;
        let delta = {
            let mut lifted = vec![0.0; layout.width()];
            lifted[layout.data_index(0)..layout.data_index(0) + n].copy_from_slice(col);
            self.sketcher.psg1(&lifted)?
        };
        let (sk, cols) = self.target(which);
        if c >= cols {
            return Err(Error::Contract(format!(
                "column index {c} out of range ({cols} columns)"
            )));
        }
        sk.add_to_column(c, 1.0, &delta);
        Ok(())
    }

    pub fn ingest_a_column(&mut self, a: usize, col: &[f64]) -> Result<()> {
        self.ingest_column(Operand::A, a, col)
    }

    pub fn ingest_b_column(&mut self, b: usize, col: &[f64]) -> Result<()> {
        self.ingest_column(Operand::B, b, col)
    }

    /// Turnstile update with row `i` of one operand (every entry `(i, c)` at once).
    pub fn ingest_row(&mut self, which: Operand, i: usize, row: &[f64]) -> Result<()> {
        let n = self.config.n;
        if i >= n {
            return Err(Error::Contract(format!("row index {i} out of range (n = {n})")));
        }
        let omega_col = self.sketcher.column(self.layout.data_index(i)).into_owned();
        let (sk, cols) = self.target(which);
        if row.len() != cols {
            return Err(Error::Contract(format!("row has length {} != {cols}", row.len())));
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::Contract("non-finite row entry".into()));
        }
        for (c, &x) in row.iter().enumerate() {
            if x != 0.0 {
                sk.add_to_column(c, x, &omega_col);
            }
        }
        Ok(())
    }

    /// Streams all columns of `m` into one operand.
    pub fn ingest_matrix(&mut self, which: Operand, m: &DenseMatrix) -> Result<()> {
        let cols = match which {
            Operand::A => self.config.d1,
            Operand::B => self.config.d2,
        };
        if m.shape() != (self.config.n, cols) {
            return Err(Error::Contract(format!(
                "operand is {:?}, expected {}x{cols}",
                m.shape(),
                self.config.n
            )));
        }
        for c in 0..cols {
            self.ingest_column(which, c, &m.column(c))?;
        }
        Ok(())
    }

    /// Combines two shards built from the same configuration; the lift is kept once.
    pub fn merge(&self, other: &MatProdState) -> Result<MatProdState> {
        if self.config != other.config {
            return Err(Error::Contract("merge requires identical configurations".into()));
        }
        let mut out = self.clone();
        out.ya = Sketch::merge(&self.ya, &other.ya)?;
        out.yb = Sketch::merge(&self.yb, &other.yb)?;
        for c in 0..self.layout.d {
            let col = self.sketcher.column(self.layout.lift_index(c));
            if c < self.config.d1 {
                out.ya.add_to_column(c, -self.s, &col);
            }
            if c < self.config.d2 {
                out.yb.add_to_column(c, -self.s, &col);
            }
        }
        Ok(out)
    }

    /// `YaᵀYb / r − s²·Ĩ`, an estimate of `AᵀB`.
    pub fn product_query(&self) -> Result<DenseMatrix> {
        let mut c = t_matmul(self.ya.data(), self.yb.data())?.scale(1.0 / self.r as f64);
        let s2 = self.s * self.s;
        for i in 0..self.config.d1.min(self.config.d2) {
            c[(i, i)] -= s2;
        }
        Ok(c)
    }

    /// Additive error allowance `s²·√n·α`.
    pub fn additive_term(&self) -> f64 {
        self.s * self.s * (self.config.n as f64).sqrt() * self.config.acc.alpha()
    }
}
