//! Dimension bookkeeping, block-diagonal panel processors and seeded sampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result, WaxError};
use crate::linalg;
use crate::matrix::{CMatrix, C64};

/// System dimensions.
///
/// `m` antennas grouped into panels of `n`, each panel producing `l` outputs,
/// `k` users and `t` CPU inputs. The panel count `m / n` must be integral.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub m: usize,
    pub k: usize,
    pub l: usize,
    pub n: usize,
    pub t: usize,
}

impl Dims {
    pub fn new(m: usize, k: usize, l: usize, n: usize, t: usize) -> Result<Self> {
        for (name, v) in [("M", m), ("K", k), ("L", l), ("N", n), ("T", t)] {
            if v == 0 {
                return dim_err(format!("{name} must be positive"));
            }
        }
        if !m.is_multiple_of(n) {
            return dim_err(format!("M={m} is not a multiple of N={n}"));
        }
        Ok(Self { m, k, l, n, t })
    }

    /// Panel layout with as many antennas per panel as outputs (N = L).
    pub fn square(m: usize, k: usize, l: usize, t: usize) -> Result<Self> {
        Self::new(m, k, l, l, t)
    }

    /// Panel count `M / N`.
    pub fn p(&self) -> usize {
        self.m / self.n
    }

    pub fn is_square(&self) -> bool {
        self.n == self.l
    }

    pub fn with_t(self, t: usize) -> Self {
        Self { t, ..self }
    }

    pub(crate) fn require_square(&self) -> Result<()> {
        if !self.is_square() {
            return dim_err(format!(
                "operation needs the N = L panel layout, got N={} L={}",
                self.n, self.l
            ));
        }
        Ok(())
    }

    /// `T > max(M(K−L)/K, K−1)`, the existence condition for generic matrices.
    pub fn admits_wax(&self) -> bool {
        admits_wax(self.m, self.k, self.l, self.t)
    }

    /// Smallest `T` satisfying [`Dims::admits_wax`] for the current M, K, L.
    pub fn t_opt(&self) -> usize {
        t_opt(self.m, self.k, self.l)
    }
}

pub fn admits_wax(m: usize, k: usize, l: usize, t: usize) -> bool {
    let lhs = (t as i128) * (k as i128);
    let rhs = (m as i128) * (k as i128 - l as i128);
    lhs > rhs && t >= k
}

pub fn t_opt(m: usize, k: usize, l: usize) -> usize {
    let num = (m as i128) * (k as i128 - l as i128);
    let first = num.div_euclid(k as i128) + 1;
    first.max(k as i128).max(1) as usize
}

/// Block-diagonal matrix stored as its diagonal blocks, all of one shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CMatrix>", into = "Vec<CMatrix>")]
pub struct BlockDiag {
    blocks: Vec<CMatrix>,
}

impl BlockDiag {
    pub fn new(blocks: Vec<CMatrix>) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return dim_err("block-diagonal matrix needs at least one block");
        };
        let shape = first.shape();
        if blocks.iter().any(|b| b.shape() != shape) {
            return dim_err("all diagonal blocks must share one shape");
        }
        Ok(Self { blocks })
    }

    pub fn identity(p: usize, l: usize) -> Self {
        Self {
            blocks: vec![CMatrix::identity(l); p],
        }
    }

    pub fn blocks(&self) -> &[CMatrix] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<CMatrix> {
        self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Shape of each block.
    pub fn block_shape(&self) -> (usize, usize) {
        self.blocks[0].shape()
    }

    /// Shape of the dense expansion.
    pub fn shape(&self) -> (usize, usize) {
        let (r, c) = self.block_shape();
        (r * self.len(), c * self.len())
    }

    /// Places block p at rows `[p·r, (p+1)·r)` and columns `[p·c, (p+1)·c)`.
    pub fn to_dense(&self) -> CMatrix {
        let (r, c) = self.block_shape();
        let (rows, cols) = self.shape();
        let mut out = CMatrix::zeros(rows, cols);
        for (p, b) in self.blocks.iter().enumerate() {
            for i in 0..r {
                for j in 0..c {
                    out.set(p * r + i, p * c + j, b.get(i, j));
                }
            }
        }
        out
    }

    pub fn scale(&self, c: C64) -> Self {
        Self {
            blocks: self.blocks.iter().map(|b| b.scale(c)).collect(),
        }
    }
}

impl TryFrom<Vec<CMatrix>> for BlockDiag {
    type Error = WaxError;

    fn try_from(blocks: Vec<CMatrix>) -> Result<Self> {
        Self::new(blocks)
    }
}

impl From<BlockDiag> for Vec<CMatrix> {
    fn from(b: BlockDiag) -> Self {
        b.blocks
    }
}

/// Seed plus sub-stream index for the ChaCha8 generator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
    pub stream: u64,
}

impl RngSpec {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Independent child spec, stable for a given `(self, index)`.
    pub fn child(&self, index: u64) -> RngSpec {
        RngSpec {
            seed: splitmix64(
                self.seed ^ splitmix64(self.stream.wrapping_add(0x5851_f42d_4c95_7f2d)),
            ),
            stream: index,
        }
    }
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn complex_normal(rng: &mut impl Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// IID CN(0, 1) entries, filled row-major from the given stream.
pub fn sample_gaussian(rng: RngSpec, rows: usize, cols: usize) -> Result<CMatrix> {
    if rows == 0 || cols == 0 {
        return dim_err(format!("cannot sample a {rows}x{cols} matrix"));
    }
    let mut g = rng.rng();
    let data: Vec<C64> = (0..rows * cols).map(|_| complex_normal(&mut g)).collect();
    CMatrix::from_row_major(rows, cols, &data)
}

/// Count of singular values above `rel_tol · σ_max`.
///
/// `rel_tol` defaults to `max(rows, cols) · 2⁻⁵²`.
pub fn numeric_rank(m: &CMatrix, rel_tol: Option<f64>) -> Result<usize> {
    if m.is_empty() {
        return Err(WaxError::InvalidInput("rank of an empty matrix".into()));
    }
    m.ensure_finite("rank input")?;
    let tol = rel_tol.unwrap_or_else(|| linalg::default_rank_tol(m.rows(), m.cols()));
    let s = linalg::singular_values(m)?;
    Ok(linalg::rank_from_singular_values(&s, tol))
}
