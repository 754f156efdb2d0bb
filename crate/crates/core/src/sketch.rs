//! Seeded Gaussian sketching matrices and the additive sketches built from them.

use crate::error::{Error, Result};
use crate::numerics::{axpy, dot, DenseMatrix};
use crate::rng::NormalStream;

/// Largest Ω (in entries) that is materialised in memory.
pub const MAX_STORED_ENTRIES: usize = 1 << 27;

/// Moment checks look at no more than this many entries.
const MOMENT_SAMPLE_CAP: usize = 1 << 22;

/// Whether Ω lives in memory or is regenerated column by column from the seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmegaStorage {
    Stored,
    Regenerate,
}

/// FNV-1a over the little-endian bytes of `(seed: u64, r: u32, m: u32)`.
pub fn fingerprint(seed: u64, r: usize, m: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    feed(&seed.to_le_bytes());
    feed(&(r as u32).to_le_bytes());
    feed(&(m as u32).to_le_bytes());
    h
}

/// An `r x m` matrix Ω of i.i.d. standard normals, determined by `(seed, r, m)`.
///
/// Column `j` is the first `r` normals of ChaCha20 stream `j` under the seed, so
/// stored and regenerated sketchers agree bit for bit.
#[derive(Debug, Clone)]
pub struct GaussianSketcher {
    seed: u64,
    r: usize,
    m: usize,
    storage: OmegaStorage,
    /// Column-major Ω when stored.
    columns: Option<Vec<f64>>,
    fingerprint: u64,
}

impl GaussianSketcher {
    /// Stored Ω.
    pub fn new(seed: u64, r: usize, m: usize) -> Result<Self> {
        Self::with_storage(seed, r, m, OmegaStorage::Stored)
    }

    pub fn with_storage(seed: u64, r: usize, m: usize, storage: OmegaStorage) -> Result<Self> {
        if r == 0 || m == 0 {
            return Err(Error::Contract(format!("sketcher needs r, m >= 1 (got r={r}, m={m})")));
        }
        if r > u32::MAX as usize || m > u32::MAX as usize {
            return Err(Error::Capacity(format!("r={r} or m={m} exceeds u32")));
        }
        let entries = r
            .checked_mul(m)
            .ok_or_else(|| Error::Capacity(format!("r*m overflows for r={r}, m={m}")))?;
        if storage == OmegaStorage::Stored && entries > MAX_STORED_ENTRIES {
            return Err(Error::Capacity(format!(
                "stored sketcher needs {entries} entries > {MAX_STORED_ENTRIES}"
            )));
        }
        let columns = match storage {
            OmegaStorage::Stored => {
                let mut data = Vec::with_capacity(entries);
                for j in 0..m {
                    data.extend(generate_column(seed, j, r));
                }
                Some(data)
            }
            OmegaStorage::Regenerate => None,
        };
        let sk = Self {
            seed,
            r,
            m,
            storage,
            columns,
            fingerprint: fingerprint(seed, r, m),
        };
        sk.moment_check()?;
        Ok(sk)
    }

    /// `|mean| <= 5/sqrt(N)` and `|var - 1| <= 10/sqrt(N)` over the first `N` entries (column order).
    fn moment_check(&self) -> Result<()> {
        let cols = (MOMENT_SAMPLE_CAP / self.r).clamp(1, self.m);
        let mut sum = 0.0;
        let mut sq = 0.0;
        for j in 0..cols {
            for &x in self.column(j).iter() {
                sum += x;
                sq += x * x;
            }
        }
        let n = (cols * self.r) as f64;
        let mean = sum / n;
        let var = sq / n - mean * mean;
        if mean.abs() > 5.0 / n.sqrt() || (var - 1.0).abs() > 10.0 / n.sqrt() {
            return Err(Error::NumericFailure(format!(
                "sketcher moment check failed: mean {mean:e}, variance {var}"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    pub fn r(&self) -> usize {
        self.r
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn storage(&self) -> OmegaStorage {
        self.storage
    }

    #[inline]
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Entries of Ω held in memory.
    pub fn stored_entries(&self) -> usize {
        self.columns.as_ref().map_or(0, Vec::len)
    }

    /// Column `j` of Ω.
    pub fn column(&self, j: usize) -> std::borrow::Cow<'_, [f64]> {
        assert!(j < self.m, "column {j} out of range (m={})", self.m);
        match &self.columns {
            Some(data) => std::borrow::Cow::Borrowed(&data[j * self.r..(j + 1) * self.r]),
            None => std::borrow::Cow::Owned(generate_column(self.seed, j, self.r)),
        }
    }

    /// Ω as a dense `r x m` matrix.
    pub fn omega(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.r, self.m);
        for j in 0..self.m {
            out.set_column(j, &self.column(j));
        }
        out
    }

    fn check_len(&self, v: &[f64], want: usize, what: &str) -> Result<()> {
        if v.len() != want {
            return Err(Error::Contract(format!("{what}: length {} != {want}", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Contract(format!("{what}: non-finite input")));
        }
        Ok(())
    }

    /// `Ω v`. Zero coordinates of `v` are skipped, so sparse lifted vectors are cheap.
    pub fn psg1(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v, self.m, "psg1")?;
        let mut y = vec![0.0; self.r];
        for (j, &vj) in v.iter().enumerate() {
            if vj != 0.0 {
                axpy(vj, &self.column(j), &mut y);
            }
        }
        Ok(y)
    }

    /// `Ωᵀ y` for `y` of length `r`.
    pub fn apply_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_len(y, self.r, "apply_transpose")?;
        Ok((0..self.m).map(|j| dot(&self.column(j), y)).collect())
    }

    /// `Ωᵀ Ω v`, computed as `apply_transpose(psg1(v))`.
    pub fn psg2(&self, v: &[f64]) -> Result<Vec<f64>> {
        let y = self.psg1(v)?;
        self.apply_transpose(&y)
    }

    /// `Ω X` for an `m x c` matrix, column by column through [`psg1`](Self::psg1).
    pub fn sketch_matrix(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.rows() != self.m {
            return Err(Error::Contract(format!(
                "sketch_matrix: {} rows != m = {}",
                x.rows(),
                self.m
            )));
        }
        let mut out = DenseMatrix::zeros(self.r, x.cols());
        for c in 0..x.cols() {
            out.set_column(c, &self.psg1(&x.column(c))?);
        }
        Ok(out)
    }
}

fn generate_column(seed: u64, j: usize, r: usize) -> Vec<f64> {
    NormalStream::new(seed, j as u64).normals(r)
}

/// Which generator fills a sketch's columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SketchKind {
    /// Columns are `Ω v` (length `r`).
    Psg1,
    /// Columns are `ΩᵀΩ v` (length `m`).
    Psg2,
}

impl SketchKind {
    fn code(self) -> u8 {
        match self {
            SketchKind::Psg1 => 1,
            SketchKind::Psg2 => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            1 => Ok(SketchKind::Psg1),
            2 => Ok(SketchKind::Psg2),
            other => Err(Error::Format(format!("unknown sketch kind {other}"))),
        }
    }
}

/// A column sketch with turnstile (additive) updates.
#[derive(Debug, Clone, PartialEq)]
pub struct Sketch {
    kind: SketchKind,
    seed: u64,
    r: usize,
    m: usize,
    fingerprint: u64,
    data: DenseMatrix,
}

impl Sketch {
    /// All-zero sketch with `c` columns bound to `sketcher`.
    pub fn zeros(kind: SketchKind, sketcher: &GaussianSketcher, c: usize) -> Self {
        let rows = match kind {
            SketchKind::Psg1 => sketcher.r(),
            SketchKind::Psg2 => sketcher.m(),
        };
        Self {
            kind,
            seed: sketcher.seed(),
            r: sketcher.r(),
            m: sketcher.m(),
            fingerprint: sketcher.fingerprint(),
            data: DenseMatrix::zeros(rows, c),
        }
    }

    #[inline]
    pub fn kind(&self) -> SketchKind {
        self.kind
    }

    #[inline]
    pub fn col_count(&self) -> usize {
        self.data.cols()
    }

    #[inline]
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    #[inline]
    pub fn data(&self) -> &DenseMatrix {
        &self.data
    }

    /// Entries held by the sketch.
    pub fn entries(&self) -> usize {
        self.data.rows() * self.data.cols()
    }

    fn check_sketcher(&self, sketcher: &GaussianSketcher) -> Result<()> {
        if sketcher.fingerprint() != self.fingerprint {
            return Err(Error::Contract(format!(
                "sketcher fingerprint {:016x} != sketch fingerprint {:016x}",
                sketcher.fingerprint(),
                self.fingerprint
            )));
        }
        Ok(())
    }

    /// Column `col` += `Ω v` (psg1) or `ΩᵀΩ v` (psg2).
    pub fn update_column(&mut self, sketcher: &GaussianSketcher, col: usize, v: &[f64]) -> Result<()> {
        self.check_sketcher(sketcher)?;
        if col >= self.col_count() {
            return Err(Error::Contract(format!(
                "column {col} out of range ({} columns)",
                self.col_count()
            )));
        }
        let delta = match self.kind {
            SketchKind::Psg1 => sketcher.psg1(v)?,
            SketchKind::Psg2 => sketcher.psg2(v)?,
        };
        self.add_to_column(col, 1.0, &delta);
        Ok(())
    }

    /// Column `col` += `alpha * delta` for an already-sketched increment.
    pub(crate) fn add_to_column(&mut self, col: usize, alpha: f64, delta: &[f64]) {
        let cols = self.data.cols();
        let data = self.data.data_mut();
        for (i, &x) in delta.iter().enumerate() {
            data[i * cols + col] += alpha * x;
        }
    }

    /// Entrywise sum of two sketches over the same sketcher and kind.
    pub fn merge(a: &Sketch, b: &Sketch) -> Result<Sketch> {
        if a.kind != b.kind || a.fingerprint != b.fingerprint || a.data.shape() != b.data.shape() {
            return Err(Error::Contract(
                "merge requires equal kinds, fingerprints and shapes".into(),
            ));
        }
        Ok(Sketch {
            data: a.data.add(&b.data)?,
            ..a.clone()
        })
    }

    /// Binary encoding: `DPSK`, version, kind, r, m, c, seed, fingerprint, row-major LE f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.entries());
        out.extend_from_slice(SKETCH_MAGIC);
        out.extend_from_slice(&SKETCH_VERSION.to_le_bytes());
        out.push(self.kind.code());
        out.extend_from_slice(&(self.r as u32).to_le_bytes());
        out.extend_from_slice(&(self.m as u32).to_le_bytes());
        out.extend_from_slice(&(self.col_count() as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        for x in self.data.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Sketch> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "sketch truncated: {} bytes < {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if &bytes[0..4] != SKETCH_MAGIC {
            return Err(Error::Format("bad sketch magic".into()));
        }
        let mut cur = Cursor { bytes, pos: 4 };
        let version = u16::from_le_bytes(cur.take());
        if version != SKETCH_VERSION {
            return Err(Error::Format(format!("unsupported sketch version {version}")));
        }
        let kind = SketchKind::from_code(cur.take::<1>()[0])?;
        let r = u32::from_le_bytes(cur.take()) as usize;
        let m = u32::from_le_bytes(cur.take()) as usize;
        let c = u32::from_le_bytes(cur.take()) as usize;
        let seed = u64::from_le_bytes(cur.take());
        let fp = u64::from_le_bytes(cur.take());
        if fp != fingerprint(seed, r, m) {
            return Err(Error::Format("sketch fingerprint does not match (seed, r, m)".into()));
        }
        let rows = match kind {
            SketchKind::Psg1 => r,
            SketchKind::Psg2 => m,
        };
        let want = rows
            .checked_mul(c)
            .and_then(|e| e.checked_mul(8))
            .ok_or_else(|| Error::Format("sketch dimensions overflow".into()))?;
        let body = &bytes[HEADER_LEN..];
        if body.len() != want {
            return Err(Error::Format(format!(
                "sketch body has {} bytes, expected {want}",
                body.len()
            )));
        }
        let values: Vec<f64> = body
            .chunks_exact(8)
            .map(|ch| f64::from_le_bytes(ch.try_into().expect("8-byte chunk")))
            .collect();
        let data = DenseMatrix::new(rows, c, values).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Sketch {
            kind,
            seed,
            r,
            m,
            fingerprint: fp,
            data,
        })
    }
}

const SKETCH_MAGIC: &[u8; 4] = b"DPSK";
const SKETCH_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 4 + 4 + 8 + 8;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out: [u8; N] = self.bytes[self.pos..self.pos + N].try_into().expect("header bounds");
        self.pos += N;
        out
    }
}
